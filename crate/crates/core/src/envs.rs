//! Toy universes: environment transitions, observation emission, rewards, and
//! offline transition datasets.
//!
//! Three environments are provided. `LinearGaussianWorld` is a clipped linear
//! system with process noise and pure-noise distractor observation dims.
//! `Gridworld` is a small discrete navigation task with sparse reward.
//! `LogisticMap` is the scalar chaotic map used for divergence diagnostics.

use crate::error::{Error, Result};
use crate::rng::Rng;
use std::io::Write;

/// Episode length used when rolling behavior policies for offline datasets.
/// Periodic resets keep random-walk states inside a stationary range.
pub const DATASET_EPISODE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum WorldState {
    Vector(Vec<f64>),
    Cell(usize),
}

impl WorldState {
    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            WorldState::Vector(v) => Some(v),
            WorldState::Cell(_) => None,
        }
    }

    pub fn as_cell(&self) -> Option<usize> {
        match self {
            WorldState::Cell(c) => Some(*c),
            WorldState::Vector(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Continuous(Vec<f64>),
    Discrete(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpec {
    Box { dim: usize, lo: f64, hi: f64 },
    Discrete { n: usize },
}

impl ActionSpec {
    pub fn dim(&self) -> usize {
        match self {
            ActionSpec::Box { dim, .. } => *dim,
            ActionSpec::Discrete { .. } => 1,
        }
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> Action {
        match self {
            ActionSpec::Box { dim, lo, hi } => {
                Action::Continuous((0..*dim).map(|_| rng.uniform_in(*lo, *hi)).collect())
            }
            ActionSpec::Discrete { n } => Action::Discrete(rng.index(*n)),
        }
    }

    pub fn clip(&self, action: &Action) -> Action {
        match (self, action) {
            (ActionSpec::Box { lo, hi, .. }, Action::Continuous(a)) => {
                Action::Continuous(a.iter().map(|v| v.clamp(*lo, *hi)).collect())
            }
            _ => action.clone(),
        }
    }
}

/// Goal state plus a tolerance radius for terminal checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub state: WorldState,
    pub tolerance: f64,
}

/// Geometric discount schedule; gamma_k = rate^k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiscountSchedule {
    Geometric { rate: f64 },
}

impl DiscountSchedule {
    pub fn geometric(rate: f64) -> Result<Self> {
        if !(0.0 < rate && rate < 1.0) {
            return Err(Error::InvalidParam(format!(
                "discount rate must lie in (0,1), got {rate}"
            )));
        }
        Ok(DiscountSchedule::Geometric { rate })
    }

    pub fn factor(&self, k: usize) -> f64 {
        match self {
            DiscountSchedule::Geometric { rate } => rate.powi(k as i32),
        }
    }

    pub fn rate(&self) -> f64 {
        match self {
            DiscountSchedule::Geometric { rate } => *rate,
        }
    }
}

/// One (observation, action, next observation) sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTriple {
    pub obs: Vec<f64>,
    pub action: Action,
    pub obs_next: Vec<f64>,
}

pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn action_spec(&self) -> ActionSpec;
    fn goal(&self) -> &Goal;
    fn initial_state(&self, rng: &mut Rng) -> WorldState;

    /// Reward of being in state `s` under goal `g`: negative squared distance
    /// for continuous states, indicator for grid cells.
    fn reward(&self, goal: &Goal, s: &WorldState) -> f64 {
        match (&goal.state, s) {
            (WorldState::Vector(g), WorldState::Vector(v)) => {
                -g.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            (WorldState::Cell(g), WorldState::Cell(c)) if g == c => 1.0,
            (WorldState::Cell(_), WorldState::Cell(_)) => 0.0,
            _ => 0.0,
        }
    }

    fn is_terminal(&self, goal: &Goal, s: &WorldState) -> bool {
        match (&goal.state, s) {
            (WorldState::Cell(g), WorldState::Cell(c)) => g == c,
            (WorldState::Vector(g), WorldState::Vector(v)) if goal.tolerance > 0.0 => {
                let d2: f64 = g.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() <= goal.tolerance
            }
            _ => false,
        }
    }

    /// Advance one step. Actions outside declared bounds are clipped. The
    /// returned reward is `reward(self.goal(), s_next)`.
    fn step(&self, s: &WorldState, a: &Action, rng: &mut Rng) -> (WorldState, f64);

    fn observe(&self, s: &WorldState, rng: &mut Rng) -> Vec<f64>;

    /// Per-step divergence of two trajectories separated by `perturbation` at
    /// t = 0. Only the logistic map defines this.
    fn rollout_error_growth(
        &self,
        _horizon: usize,
        _perturbation: f64,
        _seed: u64,
    ) -> Result<Vec<f64>> {
        Err(Error::UnsupportedEnv)
    }
}

// ---------------------------------------------------------------------------
// LinearGaussianWorld
// ---------------------------------------------------------------------------

/// s' = A s + B a + noise, clipped to a box; observations append distractor
/// dims of pure Gaussian noise to the state.
#[derive(Debug, Clone)]
pub struct LinearGaussianWorld {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Row-major state_dim x state_dim.
    pub a_matrix: Vec<f64>,
    /// Row-major state_dim x action_dim.
    pub b_matrix: Vec<f64>,
    pub process_noise: f64,
    pub n_distractors: usize,
    pub distractor_std: f64,
    pub action_lo: f64,
    pub action_hi: f64,
    /// States are clipped coordinatewise to [-state_bound, state_bound].
    pub state_bound: f64,
    /// Initial states are uniform in [-init_range, init_range]^state_dim.
    pub init_range: f64,
    pub goal: Goal,
}

impl LinearGaussianWorld {
    pub fn identity(dim: usize) -> Vec<f64> {
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = 1.0;
        }
        m
    }

    pub fn scaled_identity(dim: usize, k: f64) -> Vec<f64> {
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = k;
        }
        m
    }

    /// A = I, B = 0.5 I, sigma_p = 0.02, 4 distractors with sigma_d = 0.5,
    /// goal at the origin.
    pub fn default_world() -> Self {
        LinearGaussianWorld {
            state_dim: 2,
            action_dim: 2,
            a_matrix: Self::identity(2),
            b_matrix: Self::scaled_identity(2, 0.5),
            process_noise: 0.02,
            n_distractors: 4,
            distractor_std: 0.5,
            action_lo: -1.0,
            action_hi: 1.0,
            state_bound: 3.0,
            init_range: 1.0,
            goal: Goal {
                state: WorldState::Vector(vec![0.0, 0.0]),
                tolerance: 0.0,
            },
        }
    }

    /// Noiseless, distractor-free variant with A = I, B = I: the planning
    /// sanity world where belief can equal state.
    pub fn plain(dim: usize, action_lo: f64, action_hi: f64) -> Self {
        LinearGaussianWorld {
            state_dim: dim,
            action_dim: dim,
            a_matrix: Self::identity(dim),
            b_matrix: Self::identity(dim),
            process_noise: 0.0,
            n_distractors: 0,
            distractor_std: 0.0,
            action_lo,
            action_hi,
            state_bound: f64::INFINITY,
            init_range: 1.0,
            goal: Goal {
                state: WorldState::Vector(vec![0.0; dim]),
                tolerance: 0.0,
            },
        }
    }

    pub fn signal_dim(&self) -> usize {
        self.state_dim
    }

    fn dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut next = vec![0.0; self.state_dim];
        for i in 0..self.state_dim {
            let mut v = 0.0;
            for j in 0..self.state_dim {
                v += self.a_matrix[i * self.state_dim + j] * s[j];
            }
            for j in 0..self.action_dim {
                v += self.b_matrix[i * self.action_dim + j] * a[j];
            }
            next[i] = v;
        }
        next
    }
}

impl Environment for LinearGaussianWorld {
    fn obs_dim(&self) -> usize {
        self.state_dim + self.n_distractors
    }

    fn action_spec(&self) -> ActionSpec {
        ActionSpec::Box {
            dim: self.action_dim,
            lo: self.action_lo,
            hi: self.action_hi,
        }
    }

    fn goal(&self) -> &Goal {
        &self.goal
    }

    fn initial_state(&self, rng: &mut Rng) -> WorldState {
        WorldState::Vector(
            (0..self.state_dim)
                .map(|_| rng.uniform_in(-self.init_range, self.init_range))
                .collect(),
        )
    }

    fn step(&self, s: &WorldState, a: &Action, rng: &mut Rng) -> (WorldState, f64) {
        let sv = s.as_vector().expect("continuous state");
        let clipped = self.action_spec().clip(a);
        let av = match &clipped {
            Action::Continuous(v) => v.clone(),
            Action::Discrete(_) => vec![0.0; self.action_dim],
        };
        let mut next = self.dynamics(sv, &av);
        for v in next.iter_mut() {
            if self.process_noise > 0.0 {
                *v += rng.normal_scaled(0.0, self.process_noise);
            }
            if self.state_bound.is_finite() {
                *v = v.clamp(-self.state_bound, self.state_bound);
            }
        }
        let next = WorldState::Vector(next);
        let r = self.reward(&self.goal, &next);
        (next, r)
    }

    fn observe(&self, s: &WorldState, rng: &mut Rng) -> Vec<f64> {
        let sv = s.as_vector().expect("continuous state");
        let mut o = sv.to_vec();
        for _ in 0..self.n_distractors {
            o.push(rng.normal_scaled(0.0, self.distractor_std));
        }
        o
    }
}

// ---------------------------------------------------------------------------
// Gridworld
// ---------------------------------------------------------------------------

/// width x height cells, four move actions, optional slip. Observation is a
/// one-hot vector over cells. Reward 1 on reaching the goal cell (terminal),
/// 0 elsewhere.
#[derive(Debug, Clone)]
pub struct Gridworld {
    pub width: usize,
    pub height: usize,
    pub slip: f64,
    pub goal_cell: usize,
    goal: Goal,
}

pub const GRID_ACTIONS: usize = 4; // up, down, left, right

impl Gridworld {
    pub fn new(width: usize, height: usize, slip: f64, goal_cell: usize) -> Result<Self> {
        if width == 0 || height == 0 || goal_cell >= width * height {
            return Err(Error::InvalidParam("bad gridworld geometry".into()));
        }
        if !(0.0..=1.0).contains(&slip) {
            return Err(Error::InvalidParam("slip must lie in [0,1]".into()));
        }
        Ok(Gridworld {
            width,
            height,
            slip,
            goal_cell,
            goal: Goal {
                state: WorldState::Cell(goal_cell),
                tolerance: 0.0,
            },
        })
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_of(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    pub fn apply_move(&self, cell: usize, action: usize) -> usize {
        let (row, col) = self.row_col(cell);
        let (nr, nc) = match action {
            0 => (row.saturating_sub(1), col),
            1 => ((row + 1).min(self.height - 1), col),
            2 => (row, col.saturating_sub(1)),
            3 => (row, (col + 1).min(self.width - 1)),
            _ => (row, col),
        };
        self.cell_of(nr, nc)
    }
}

impl Environment for Gridworld {
    fn obs_dim(&self) -> usize {
        self.n_cells()
    }

    fn action_spec(&self) -> ActionSpec {
        ActionSpec::Discrete { n: GRID_ACTIONS }
    }

    fn goal(&self) -> &Goal {
        &self.goal
    }

    fn initial_state(&self, rng: &mut Rng) -> WorldState {
        // Uniform over non-goal cells.
        loop {
            let c = rng.index(self.n_cells());
            if c != self.goal_cell {
                return WorldState::Cell(c);
            }
        }
    }

    fn step(&self, s: &WorldState, a: &Action, rng: &mut Rng) -> (WorldState, f64) {
        let cell = s.as_cell().expect("grid state");
        let intended = match a {
            Action::Discrete(k) => *k % GRID_ACTIONS,
            Action::Continuous(_) => 0,
        };
        let executed = if self.slip > 0.0 && rng.uniform() < self.slip {
            rng.index(GRID_ACTIONS)
        } else {
            intended
        };
        let next = WorldState::Cell(self.apply_move(cell, executed));
        let r = self.reward(&self.goal, &next);
        (next, r)
    }

    fn observe(&self, s: &WorldState, _rng: &mut Rng) -> Vec<f64> {
        let cell = s.as_cell().expect("grid state");
        let mut o = vec![0.0; self.n_cells()];
        o[cell] = 1.0;
        o
    }
}

// ---------------------------------------------------------------------------
// LogisticMap
// ---------------------------------------------------------------------------

/// x' = r x (1 - x) on [0, 1]. Action-free; used for the chaos diagnostic.
#[derive(Debug, Clone)]
pub struct LogisticMap {
    pub r: f64,
    goal: Goal,
}

impl LogisticMap {
    pub fn new(r: f64) -> Result<Self> {
        if !(0.0 < r && r <= 4.0) {
            return Err(Error::InvalidParam(format!(
                "logistic parameter must lie in (0,4], got {r}"
            )));
        }
        Ok(LogisticMap {
            r,
            goal: Goal {
                state: WorldState::Vector(vec![0.0]),
                tolerance: 0.0,
            },
        })
    }

    pub fn iterate(&self, x: f64) -> f64 {
        self.r * x * (1.0 - x)
    }

    /// 20-bin occupancy histogram of a trajectory of `steps` iterates.
    pub fn occupancy_histogram(&self, x0: f64, steps: usize, bins: usize) -> Vec<f64> {
        let mut hist = vec![0.0; bins];
        let mut x = x0;
        for _ in 0..steps {
            x = self.iterate(x);
            let b = ((x * bins as f64) as usize).min(bins - 1);
            hist[b] += 1.0;
        }
        let total: f64 = hist.iter().sum();
        if total > 0.0 {
            for h in hist.iter_mut() {
                *h /= total;
            }
        }
        hist
    }
}

impl Environment for LogisticMap {
    fn obs_dim(&self) -> usize {
        1
    }

    fn action_spec(&self) -> ActionSpec {
        ActionSpec::Box {
            dim: 0,
            lo: 0.0,
            hi: 0.0,
        }
    }

    fn goal(&self) -> &Goal {
        &self.goal
    }

    fn initial_state(&self, rng: &mut Rng) -> WorldState {
        WorldState::Vector(vec![rng.uniform_in(0.05, 0.95)])
    }

    fn step(&self, s: &WorldState, _a: &Action, _rng: &mut Rng) -> (WorldState, f64) {
        let x = s.as_vector().expect("scalar state")[0];
        let next = WorldState::Vector(vec![self.iterate(x)]);
        let r = self.reward(&self.goal, &next);
        (next, r)
    }

    fn observe(&self, s: &WorldState, _rng: &mut Rng) -> Vec<f64> {
        vec![s.as_vector().expect("scalar state")[0]]
    }

    fn rollout_error_growth(
        &self,
        horizon: usize,
        perturbation: f64,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if horizon == 0 {
            return Err(Error::InvalidParam("horizon must be >= 1".into()));
        }
        if perturbation < 0.0 {
            return Err(Error::InvalidParam("perturbation must be >= 0".into()));
        }
        let mut rng = Rng::new(seed).child("rollout-error");
        let x0 = rng.uniform_in(0.05, 0.95);
        let y0 = (x0 + perturbation).min(1.0);
        let (mut x, mut y) = (x0, y0);
        let mut divergence = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            x = self.iterate(x);
            y = self.iterate(y);
            divergence.push((x - y).abs());
        }
        Ok(divergence)
    }
}

// ---------------------------------------------------------------------------
// Behavior policies and dataset generation
// ---------------------------------------------------------------------------

/// Wrapper that counts `step` and `observe` calls; used to prove that dream
/// training never touches the true environment.
pub struct InstrumentedEnv<'a> {
    inner: &'a dyn Environment,
    steps: std::cell::Cell<u64>,
    observations: std::cell::Cell<u64>,
}

impl<'a> InstrumentedEnv<'a> {
    pub fn new(inner: &'a dyn Environment) -> Self {
        InstrumentedEnv {
            inner,
            steps: std::cell::Cell::new(0),
            observations: std::cell::Cell::new(0),
        }
    }

    pub fn step_calls(&self) -> u64 {
        self.steps.get()
    }

    pub fn observe_calls(&self) -> u64 {
        self.observations.get()
    }
}

impl Environment for InstrumentedEnv<'_> {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn action_spec(&self) -> ActionSpec {
        self.inner.action_spec()
    }

    fn goal(&self) -> &Goal {
        self.inner.goal()
    }

    fn initial_state(&self, rng: &mut Rng) -> WorldState {
        self.inner.initial_state(rng)
    }

    fn reward(&self, goal: &Goal, s: &WorldState) -> f64 {
        self.inner.reward(goal, s)
    }

    fn is_terminal(&self, goal: &Goal, s: &WorldState) -> bool {
        self.inner.is_terminal(goal, s)
    }

    fn step(&self, s: &WorldState, a: &Action, rng: &mut Rng) -> (WorldState, f64) {
        self.steps.set(self.steps.get() + 1);
        self.inner.step(s, a, rng)
    }

    fn observe(&self, s: &WorldState, rng: &mut Rng) -> Vec<f64> {
        self.observations.set(self.observations.get() + 1);
        self.inner.observe(s, rng)
    }
}

pub trait BehaviorPolicy {
    fn act(&self, obs: &[f64], spec: &ActionSpec, rng: &mut Rng) -> Action;
}

/// Default offline-data policy: uniform over the action space.
pub struct UniformRandomPolicy;

impl BehaviorPolicy for UniformRandomPolicy {
    fn act(&self, _obs: &[f64], spec: &ActionSpec, rng: &mut Rng) -> Action {
        spec.sample_uniform(rng)
    }
}

/// Roll the behavior policy to gather exactly `n` transition triples,
/// resetting every [`DATASET_EPISODE_LEN`] steps and on terminal states.
pub fn generate_dataset(
    env: &dyn Environment,
    behavior: &dyn BehaviorPolicy,
    n: usize,
    seed: u64,
) -> Result<Vec<TransitionTriple>> {
    if n == 0 {
        return Err(Error::InvalidParam("dataset size must be >= 1".into()));
    }
    let root = Rng::new(seed);
    let mut rng = root.child("dataset");
    let spec = env.action_spec();
    let goal = env.goal().clone();
    let mut triples = Vec::with_capacity(n);
    let mut state = env.initial_state(&mut rng);
    let mut obs = env.observe(&state, &mut rng);
    let mut steps_in_episode = 0usize;
    while triples.len() < n {
        let action = behavior.act(&obs, &spec, &mut rng);
        let (next_state, _r) = env.step(&state, &action, &mut rng);
        let next_obs = env.observe(&next_state, &mut rng);
        triples.push(TransitionTriple {
            obs: obs.clone(),
            action: action.clone(),
            obs_next: next_obs.clone(),
        });
        steps_in_episode += 1;
        if steps_in_episode >= DATASET_EPISODE_LEN || env.is_terminal(&goal, &next_state) {
            state = env.initial_state(&mut rng);
            obs = env.observe(&state, &mut rng);
            steps_in_episode = 0;
        } else {
            state = next_state;
            obs = next_obs;
        }
    }
    Ok(triples)
}

fn action_components(a: &Action) -> Vec<f64> {
    match a {
        Action::Continuous(v) => v.clone(),
        Action::Discrete(k) => vec![*k as f64],
    }
}

/// Dataset CSV: header `o_0..o_{Do-1},a_0..a_{Da-1},op_0..op_{Do-1}`, one
/// triple per line, 17-significant-digit decimals.
pub fn write_dataset_csv<W: Write>(
    mut w: W,
    triples: &[TransitionTriple],
    obs_dim: usize,
    action_dim: usize,
) -> Result<()> {
    let mut header = Vec::new();
    for i in 0..obs_dim {
        header.push(format!("o_{i}"));
    }
    for i in 0..action_dim {
        header.push(format!("a_{i}"));
    }
    for i in 0..obs_dim {
        header.push(format!("op_{i}"));
    }
    writeln!(w, "{}", header.join(","))?;
    for t in triples {
        let mut row: Vec<String> = Vec::with_capacity(2 * obs_dim + action_dim);
        row.extend(t.obs.iter().map(|v| format!("{v:.16e}")));
        row.extend(
            action_components(&t.action)
                .iter()
                .map(|v| format!("{v:.16e}")),
        );
        row.extend(t.obs_next.iter().map(|v| format!("{v:.16e}")));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_dataset_csv(text: &str, discrete_actions: bool) -> Result<Vec<TransitionTriple>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidParam("empty dataset file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let obs_dim = cols.iter().filter(|c| c.starts_with("o_")).count();
    let action_dim = cols.iter().filter(|c| c.starts_with("a_")).count();
    let mut triples = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::InvalidParam(format!("bad dataset value `{v}`")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != 2 * obs_dim + action_dim {
            return Err(Error::InvalidParam("dataset row width mismatch".into()));
        }
        let action = if discrete_actions {
            Action::Discrete(vals[obs_dim] as usize)
        } else {
            Action::Continuous(vals[obs_dim..obs_dim + action_dim].to_vec())
        };
        triples.push(TransitionTriple {
            obs: vals[..obs_dim].to_vec(),
            action,
            obs_next: vals[obs_dim + action_dim..].to_vec(),
        });
    }
    Ok(triples)
}
