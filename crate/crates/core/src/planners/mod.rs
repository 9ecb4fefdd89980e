//! Value estimation, sampling-based trajectory optimizers, receding-horizon
//! execution, and policy training inside the learned world model.

mod cem;
mod dream;
mod mppi;

pub use cem::{plan_cem, CemPlanner};
pub use dream::{train_policy_in_dream, DreamTrainConfig, DreamTrainStats};
pub use mppi::{mppi_weights, plan_mppi, MppiPlanner};

use crate::envs::{Action, DiscountSchedule, Environment, Goal, WorldState};
use crate::error::{Error, Result};
use crate::models::{Belief, EncoderModel, WorldModelStack};
use crate::rng::Rng;
use std::time::Instant;

/// Sampling-planner configuration. The discount applies to the exhaustive
/// discrete search; CEM/MPPI minimize the undiscounted cost sum over the
/// horizon.
#[derive(Debug, Clone)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    /// MPPI temperature.
    pub lambda: f64,
    pub action_dim: usize,
    pub action_lo: f64,
    pub action_hi: f64,
    pub gamma: f64,
    pub mppi_noise_std: f64,
    pub cem_init_std: f64,
    /// Per-iteration sharpening of the sampling noise. CEM caps its refit
    /// std by init * decay^iter (long horizons dilute per-dimension elite
    /// selection); MPPI anneals its perturbation std by the same factor.
    pub std_decay: f64,
}

impl PlannerConfig {
    /// Defaults: horizon 12, population 256, elites 25, iterations 8,
    /// lambda 1.0, gamma 0.97.
    pub fn new(action_dim: usize, action_lo: f64, action_hi: f64) -> Self {
        PlannerConfig {
            horizon: 12,
            population: 256,
            elites: 25,
            iterations: 8,
            lambda: 1.0,
            action_dim,
            action_lo,
            action_hi,
            gamma: 0.97,
            mppi_noise_std: 0.5 * (action_hi - action_lo) / 4.0,
            cem_init_std: (action_hi - action_lo) / 2.0,
            std_decay: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParam("planner horizon must be >= 1".into()));
        }
        if self.population == 0 || self.elites == 0 || self.elites > self.population {
            return Err(Error::InvalidParam("need 1 <= elites <= population".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParam("iterations must be >= 1".into()));
        }
        if self.lambda <= 0.0 {
            return Err(Error::InvalidParam("lambda must be positive".into()));
        }
        if self.action_dim == 0 || self.action_lo >= self.action_hi {
            return Err(Error::InvalidParam("bad action box".into()));
        }
        if !(0.0 < self.std_decay && self.std_decay <= 1.0) {
            return Err(Error::InvalidParam("std_decay must lie in (0,1]".into()));
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::InvalidParam("gamma must lie in (0,1)".into()));
        }
        Ok(())
    }

    pub fn mid_action(&self) -> f64 {
        0.5 * (self.action_lo + self.action_hi)
    }
}

/// Squared distance between a predicted belief and the encoded goal.
#[derive(Debug, Clone)]
pub struct CostFunction {
    pub goal_belief: Belief,
}

impl CostFunction {
    pub fn new(goal_belief: Belief) -> Self {
        CostFunction { goal_belief }
    }

    pub fn encoded_goal(encoder: &EncoderModel, goal_obs: &[f64]) -> Result<Self> {
        Ok(CostFunction {
            goal_belief: encoder.encode(goal_obs)?,
        })
    }

    pub fn cost(&self, belief: &[f64]) -> f64 {
        self.goal_belief
            .iter()
            .zip(belief)
            .map(|(g, s)| (g - s) * (g - s))
            .sum()
    }
}

/// Reward evaluable on beliefs; mirrors the planner cost so MPC and dream
/// training optimize comparable objectives.
#[derive(Debug, Clone)]
pub enum BeliefReward {
    /// r(s) = -||s - goal||^2
    NegSquaredDistance { goal: Belief },
    /// r(s) = 1 when ||s - goal|| <= tol, else 0; terminal on success.
    GoalIndicator { goal: Belief, tol: f64 },
    /// factor * base, factor > 0; terminal structure unchanged.
    Scaled {
        base: Box<BeliefReward>,
        factor: f64,
    },
}

impl BeliefReward {
    pub fn reward(&self, belief: &[f64]) -> f64 {
        match self {
            BeliefReward::NegSquaredDistance { goal } => -goal
                .iter()
                .zip(belief)
                .map(|(g, s)| (g - s) * (g - s))
                .sum::<f64>(),
            BeliefReward::GoalIndicator { goal, tol } => {
                let d2: f64 = goal
                    .iter()
                    .zip(belief)
                    .map(|(g, s)| (g - s) * (g - s))
                    .sum();
                if d2.sqrt() <= *tol {
                    1.0
                } else {
                    0.0
                }
            }
            BeliefReward::Scaled { base, factor } => factor * base.reward(belief),
        }
    }

    pub fn is_terminal(&self, belief: &[f64]) -> bool {
        match self {
            BeliefReward::GoalIndicator { .. } => self.reward(belief) > 0.0,
            BeliefReward::Scaled { base, .. } => base.is_terminal(belief),
            BeliefReward::NegSquaredDistance { .. } => false,
        }
    }
}

/// An action sequence with its predicted belief trajectory and bookkeeping.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub actions: Vec<Vec<f64>>,
    pub predicted_beliefs: Vec<Belief>,
    pub total_cost: f64,
    /// Best sampled cost seen up to each optimizer iteration.
    pub iter_best_costs: Vec<f64>,
    /// Final proposal-distribution mean (diagnostic).
    pub proposal_mean: Vec<Vec<f64>>,
}

/// Roll an action sequence through (h, f) from an already-encoded belief and
/// sum the per-step cost C(g, f(s_k, a_k)).
pub(crate) fn rollout_cost(
    stack: &WorldModelStack,
    start: &Belief,
    actions: &[Vec<f64>],
    cost: &CostFunction,
) -> Result<(f64, Vec<Belief>)> {
    let mut beliefs = Vec::with_capacity(actions.len());
    let mut total = 0.0;
    let mut s = start.clone();
    for a in actions {
        s = stack.model.predict(&s, &Action::Continuous(a.clone()))?;
        total += cost.cost(&s);
        beliefs.push(s.clone());
    }
    Ok((total, beliefs))
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Policy {
    /// a ~ N(W^T s + b, diag(sigma^2)), clipped to the action box.
    LinearGaussian {
        /// Row-major [belief_dim, action_dim].
        weights: Vec<f64>,
        bias: Vec<f64>,
        sigma: Vec<f64>,
        belief_dim: usize,
        action_dim: usize,
        lo: f64,
        hi: f64,
    },
    /// Categorical over discrete actions from per-state logits; the state
    /// index is the argmax of the (one-hot) belief.
    TabularSoftmax { logits: Vec<Vec<f64>> },
}

impl Policy {
    pub fn zero_linear_gaussian(
        belief_dim: usize,
        action_dim: usize,
        lo: f64,
        hi: f64,
        sigma: f64,
    ) -> Self {
        Policy::LinearGaussian {
            weights: vec![0.0; belief_dim * action_dim],
            bias: vec![0.0; action_dim],
            sigma: vec![sigma; action_dim],
            belief_dim,
            action_dim,
            lo,
            hi,
        }
    }

    pub fn uniform_tabular(n_states: usize, n_actions: usize) -> Self {
        Policy::TabularSoftmax {
            logits: vec![vec![0.0; n_actions]; n_states],
        }
    }

    pub fn mean_action(&self, belief: &[f64]) -> Vec<f64> {
        match self {
            Policy::LinearGaussian {
                weights,
                bias,
                belief_dim,
                action_dim,
                ..
            } => {
                let mut a = bias.clone();
                for i in 0..*belief_dim {
                    let si = belief[i];
                    if si == 0.0 {
                        continue;
                    }
                    for j in 0..*action_dim {
                        a[j] += si * weights[i * action_dim + j];
                    }
                }
                a
            }
            Policy::TabularSoftmax { .. } => vec![],
        }
    }

    fn state_index(belief: &[f64]) -> usize {
        belief
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Sample an action; continuous samples are clipped to the box.
    pub fn sample(&self, belief: &[f64], rng: &mut Rng) -> Action {
        match self {
            Policy::LinearGaussian { sigma, lo, hi, .. } => {
                let mean = self.mean_action(belief);
                Action::Continuous(
                    mean.iter()
                        .zip(sigma)
                        .map(|(m, s)| (m + s * rng.normal()).clamp(*lo, *hi))
                        .collect(),
                )
            }
            Policy::TabularSoftmax { logits } => {
                let row = &logits[Self::state_index(belief)];
                let probs = softmax(row);
                let u = rng.uniform();
                let mut acc = 0.0;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(k);
                    }
                }
                Action::Discrete(probs.len() - 1)
            }
        }
    }

    /// Deterministic greedy action.
    pub fn mode(&self, belief: &[f64]) -> Action {
        match self {
            Policy::LinearGaussian { lo, hi, .. } => Action::Continuous(
                self.mean_action(belief)
                    .iter()
                    .map(|v| v.clamp(*lo, *hi))
                    .collect(),
            ),
            Policy::TabularSoftmax { logits } => {
                let row = &logits[Self::state_index(belief)];
                Action::Discrete(
                    row.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(i, _)| i)
                        .unwrap(),
                )
            }
        }
    }

    pub fn set_sigma(&mut self, value: f64) {
        if let Policy::LinearGaussian { sigma, .. } = self {
            for s in sigma.iter_mut() {
                *s = value;
            }
        }
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

// ---------------------------------------------------------------------------
// Value estimation and policy evaluation
// ---------------------------------------------------------------------------

pub enum TransitionSource<'a> {
    /// Roll in the true environment. The optional encoder maps observations
    /// to the beliefs the policy acts on; without one the policy sees raw
    /// observations. The optional goal overrides the environment default.
    Env {
        env: &'a dyn Environment,
        goal: Option<&'a Goal>,
        encoder: Option<&'a EncoderModel>,
    },
    /// Roll entirely inside the world model with a belief-space reward.
    Dream {
        stack: &'a WorldModelStack,
        reward: &'a BeliefReward,
    },
}

pub enum StartPoint {
    State(WorldState),
    Belief(Belief),
}

/// Monte-Carlo estimate of the discounted cumulative reward from a start
/// point: mean over `n_rollouts` of sum_k gamma_k r(g, s_k), truncated at
/// `horizon`, stopping at terminal states. The start state's reward enters at
/// discount 1.
pub fn value_estimate(
    policy: &Policy,
    source: &TransitionSource,
    start: &StartPoint,
    schedule: &DiscountSchedule,
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::InvalidParam("horizon must be >= 1".into()));
    }
    if n_rollouts == 0 {
        return Err(Error::InvalidParam("n_rollouts must be >= 1".into()));
    }
    let root = Rng::new(seed);
    let mut total = 0.0;
    for rollout in 0..n_rollouts {
        let mut rng = root.child_indexed("value-rollout", rollout as u64);
        total += match source {
            TransitionSource::Env { env, goal, encoder } => {
                let s0 = match start {
                    StartPoint::State(s) => s.clone(),
                    StartPoint::Belief(_) => {
                        return Err(Error::InvalidParam(
                            "environment source needs a state start".into(),
                        ))
                    }
                };
                let g = goal.cloned().unwrap_or_else(|| env.goal().clone());
                env_return(policy, *env, *encoder, &g, s0, schedule, horizon, &mut rng)?
            }
            TransitionSource::Dream { stack, reward } => {
                let s0 = match start {
                    StartPoint::Belief(b) => b.clone(),
                    StartPoint::State(_) => {
                        return Err(Error::InvalidParam(
                            "dream source needs a belief start".into(),
                        ))
                    }
                };
                dream_return(policy, stack, reward, s0, schedule, horizon, &mut rng)?
            }
        };
    }
    Ok(total / n_rollouts as f64)
}

#[allow(clippy::too_many_arguments)]
fn env_return(
    policy: &Policy,
    env: &dyn Environment,
    encoder: Option<&EncoderModel>,
    goal: &Goal,
    mut state: WorldState,
    schedule: &DiscountSchedule,
    horizon: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut ret = 0.0;
    for k in 0..horizon {
        ret += schedule.factor(k) * env.reward(goal, &state);
        if env.is_terminal(goal, &state) {
            break;
        }
        let obs = env.observe(&state, rng);
        let belief = match encoder {
            Some(h) => h.encode(&obs)?,
            None => obs,
        };
        let action = policy.sample(&belief, rng);
        let (next, _) = env.step(&state, &action, rng);
        state = next;
    }
    Ok(ret)
}

fn dream_return(
    policy: &Policy,
    stack: &WorldModelStack,
    reward: &BeliefReward,
    mut belief: Belief,
    schedule: &DiscountSchedule,
    horizon: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut ret = 0.0;
    for k in 0..horizon {
        ret += schedule.factor(k) * reward.reward(&belief);
        if reward.is_terminal(&belief) {
            break;
        }
        let action = policy.sample(&belief, rng);
        belief = stack.model.predict(&belief, &action)?;
    }
    Ok(ret)
}

/// Monte-Carlo mean discounted return under true dynamics, initial states
/// drawn from the environment.
pub fn evaluate_policy(
    env: &dyn Environment,
    encoder: Option<&EncoderModel>,
    policy: &Policy,
    episodes: usize,
    horizon: usize,
    schedule: &DiscountSchedule,
    seed: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InvalidParam("episodes must be >= 1".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidParam("horizon must be >= 1".into()));
    }
    let root = Rng::new(seed);
    let goal = env.goal().clone();
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut rng = root.child_indexed("eval-episode", ep as u64);
        let s0 = env.initial_state(&mut rng);
        total += env_return(policy, env, encoder, &goal, s0, schedule, horizon, &mut rng)?;
    }
    Ok(total / episodes as f64)
}

// ---------------------------------------------------------------------------
// Receding-horizon execution
// ---------------------------------------------------------------------------

pub trait Planner {
    fn plan(
        &mut self,
        stack: &WorldModelStack,
        obs: &[f64],
        cost: &CostFunction,
        rng: &mut Rng,
    ) -> Result<PlanResult>;

    fn reset(&mut self) {}
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub states: Vec<WorldState>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub plan_ms: Vec<f64>,
    pub final_distance: Option<f64>,
}

/// Observe, plan, execute only the first planned action, replan: the
/// receding-horizon loop against the true environment.
pub fn mpc_execute(
    env: &dyn Environment,
    stack: &WorldModelStack,
    planner: &mut dyn Planner,
    cost: &CostFunction,
    steps: usize,
    seed: u64,
) -> Result<TrajectoryRecord> {
    if steps == 0 {
        return Err(Error::InvalidParam("steps must be >= 1".into()));
    }
    let root = Rng::new(seed);
    let mut env_rng = root.child("mpc-env");
    let mut plan_rng = root.child("mpc-plan");
    let mut state = env.initial_state(&mut env_rng);
    let mut record = TrajectoryRecord {
        states: vec![state.clone()],
        observations: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        plan_ms: Vec::new(),
        final_distance: None,
    };
    for _ in 0..steps {
        let obs = env.observe(&state, &mut env_rng);
        let started = Instant::now();
        let plan = planner.plan(stack, &obs, cost, &mut plan_rng)?;
        record.plan_ms.push(started.elapsed().as_secs_f64() * 1e3);
        let action = Action::Continuous(plan.actions[0].clone());
        let (next, reward) = env.step(&state, &action, &mut env_rng);
        record.observations.push(obs);
        record.actions.push(plan.actions[0].clone());
        record.rewards.push(reward);
        record.states.push(next.clone());
        state = next;
    }
    if let (WorldState::Vector(s), WorldState::Vector(g)) = (&state, &env.goal().state) {
        record.final_distance = Some(
            s.iter()
                .zip(g)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        );
    }
    Ok(record)
}

/// Exhaustive discrete-action search: enumerate every action sequence of the
/// given horizon through the world model and return the argmax first action
/// and its discounted value. Terminal beliefs stop reward accumulation.
pub fn plan_exhaustive_discrete(
    stack: &WorldModelStack,
    obs: &[f64],
    reward: &BeliefReward,
    n_actions: usize,
    horizon: usize,
    gamma: f64,
) -> Result<(usize, f64)> {
    if horizon == 0 || n_actions == 0 {
        return Err(Error::InvalidParam("bad exhaustive search config".into()));
    }
    let start = stack.encoder.encode(obs)?;
    let n_seq = n_actions.pow(horizon as u32);
    let mut best: Option<(usize, f64)> = None;
    for seq_id in 0..n_seq {
        let mut code = seq_id;
        let mut belief = start.clone();
        let mut value = 0.0;
        let mut first = 0usize;
        for k in 0..horizon {
            let a = code % n_actions;
            code /= n_actions;
            if k == 0 {
                first = a;
            }
            belief = stack.model.predict(&belief, &Action::Discrete(a))?;
            value += gamma.powi(k as i32 + 1) * reward.reward(&belief);
            if reward.is_terminal(&belief) {
                break;
            }
        }
        match best {
            Some((_, bv)) if bv >= value => {}
            _ => best = Some((first, value)),
        }
    }
    let (first, value) = best.unwrap();
    Ok((first, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ActionSpec, Gridworld, InstrumentedEnv, LinearGaussianWorld, GRID_ACTIONS};
    use crate::models::{
        gridworld_tabular_stack, make_degenerate_pair, EncoderModel, WorldModelFn,
    };
    use crate::stats::rank_sum_p_two_sided;

    struct FixedRewardEnv {
        reward: f64,
        goal: Goal,
    }

    impl FixedRewardEnv {
        fn new(reward: f64) -> Self {
            FixedRewardEnv {
                reward,
                goal: Goal {
                    state: WorldState::Vector(vec![f64::INFINITY]),
                    tolerance: 0.0,
                },
            }
        }
    }

    impl Environment for FixedRewardEnv {
        fn obs_dim(&self) -> usize {
            1
        }
        fn action_spec(&self) -> ActionSpec {
            ActionSpec::Box {
                dim: 1,
                lo: -1.0,
                hi: 1.0,
            }
        }
        fn goal(&self) -> &Goal {
            &self.goal
        }
        fn initial_state(&self, _rng: &mut Rng) -> WorldState {
            WorldState::Vector(vec![0.0])
        }
        fn reward(&self, _goal: &Goal, _s: &WorldState) -> f64 {
            self.reward
        }
        fn is_terminal(&self, _goal: &Goal, _s: &WorldState) -> bool {
            false
        }
        fn step(&self, s: &WorldState, _a: &Action, _rng: &mut Rng) -> (WorldState, f64) {
            (s.clone(), self.reward)
        }
        fn observe(&self, _s: &WorldState, _rng: &mut Rng) -> Vec<f64> {
            vec![0.0]
        }
    }

    fn linear_world_1d() -> (LinearGaussianWorld, WorldModelStack) {
        let env = LinearGaussianWorld::plain(1, -3.0, 3.0);
        let stack = WorldModelStack::new(
            EncoderModel::signal_projection(1, 1),
            WorldModelFn::from_linear_dynamics(&env.a_matrix, &env.b_matrix, 1, 1),
            None,
        );
        (env, stack)
    }

    fn one_step_cfg() -> PlannerConfig {
        let mut cfg = PlannerConfig::new(1, -3.0, 3.0);
        cfg.horizon = 1;
        cfg
    }

    // Breadth-first distances to the goal over slip-free grid moves.
    fn bfs_distances(grid: &Gridworld) -> Vec<usize> {
        let n = grid.n_cells();
        let mut dist = vec![usize::MAX; n];
        dist[grid.goal_cell] = 0;
        let mut queue = std::collections::VecDeque::from([grid.goal_cell]);
        while let Some(cell) = queue.pop_front() {
            for a in 0..GRID_ACTIONS {
                // Predecessors: cells that move into `cell` under action a.
                for c in 0..n {
                    if grid.apply_move(c, a) == cell && dist[c] == usize::MAX {
                        dist[c] = dist[cell] + 1;
                        queue.push_back(c);
                    }
                }
            }
        }
        dist
    }

    fn bfs_optimal_first_actions(grid: &Gridworld, cell: usize, dist: &[usize]) -> Vec<usize> {
        (0..GRID_ACTIONS)
            .filter(|&a| {
                let next = grid.apply_move(cell, a);
                next != cell && dist[next] + 1 == dist[cell]
            })
            .collect()
    }

    #[test]
    fn value_estimate_geometric_series() {
        let env = FixedRewardEnv::new(1.0);
        let policy = Policy::zero_linear_gaussian(1, 1, -1.0, 1.0, 0.1);
        let schedule = DiscountSchedule::geometric(0.5).unwrap();
        let v = value_estimate(
            &policy,
            &TransitionSource::Env {
                env: &env,
                goal: None,
                encoder: None,
            },
            &StartPoint::State(WorldState::Vector(vec![0.0])),
            &schedule,
            60,
            3,
            0,
        )
        .unwrap();
        assert!((v - 2.0).abs() < 1e-9, "v = {v}");
    }

    #[test]
    fn value_estimate_zero_reward() {
        let env = FixedRewardEnv::new(0.0);
        let policy = Policy::zero_linear_gaussian(1, 1, -1.0, 1.0, 0.1);
        let schedule = DiscountSchedule::geometric(0.9).unwrap();
        let v = value_estimate(
            &policy,
            &TransitionSource::Env {
                env: &env,
                goal: None,
                encoder: None,
            },
            &StartPoint::State(WorldState::Vector(vec![0.0])),
            &schedule,
            30,
            2,
            1,
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    fn optimal_grid_policy(grid: &Gridworld) -> Policy {
        let dist = bfs_distances(grid);
        let mut logits = vec![vec![0.0; GRID_ACTIONS]; grid.n_cells()];
        for cell in 0..grid.n_cells() {
            if cell == grid.goal_cell {
                continue;
            }
            let best = bfs_optimal_first_actions(grid, cell, &dist)[0];
            logits[cell][best] = 100.0;
        }
        Policy::TabularSoftmax { logits }
    }

    #[test]
    fn value_estimate_gridworld_shortest_path() {
        let grid = Gridworld::new(3, 3, 0.0, 8).unwrap();
        let policy = optimal_grid_policy(&grid);
        let schedule = DiscountSchedule::geometric(0.9).unwrap();
        let v = value_estimate(
            &policy,
            &TransitionSource::Env {
                env: &grid,
                goal: None,
                encoder: None,
            },
            &StartPoint::State(WorldState::Cell(0)),
            &schedule,
            50,
            1,
            0,
        )
        .unwrap();
        // Distance 4, single reward discounted at arrival: 0.9^4 = 0.6561.
        assert!((v - 0.6561).abs() < 1e-12, "v = {v}");
    }

    #[test]
    fn cem_recovers_analytic_one_step_optimum() {
        let (_env, stack) = linear_world_1d();
        let cost = CostFunction::new(vec![0.0]);
        let plan = plan_cem(&stack, &[2.0], &cost, &one_step_cfg(), 7).unwrap();
        assert!(
            (plan.actions[0][0] + 2.0).abs() < 0.05,
            "action {}",
            plan.actions[0][0]
        );
    }

    #[test]
    fn cem_at_goal_stays_near_zero_action() {
        let (_env, stack) = linear_world_1d();
        let cost = CostFunction::new(vec![0.0]);
        let plan = plan_cem(&stack, &[0.0], &cost, &one_step_cfg(), 8).unwrap();
        assert!(plan.total_cost < 0.0025, "cost {}", plan.total_cost);
        assert!(plan.actions[0][0].abs() < 0.05);
    }

    #[test]
    fn cem_without_selection_pressure_keeps_mean_near_init() {
        let (_env, stack) = linear_world_1d();
        let cost = CostFunction::new(vec![0.0]);
        let mut cfg = one_step_cfg();
        cfg.population = 64;
        cfg.elites = 64; // no selection pressure
        let plan = plan_cem(&stack, &[2.0], &cost, &cfg, 9).unwrap();
        assert!(
            plan.proposal_mean[0][0].abs() < 1.5,
            "mean drifted to {}",
            plan.proposal_mean[0][0]
        );
        // Contrast: with selection the proposal mean moves to the optimum.
        cfg.elites = 8;
        let selected = plan_cem(&stack, &[2.0], &cost, &cfg, 9).unwrap();
        assert!(
            (selected.proposal_mean[0][0] + 2.0).abs() < 0.3,
            "selected mean {}",
            selected.proposal_mean[0][0]
        );
    }

    #[test]
    fn cem_best_cost_is_monotone_across_iterations() {
        let (_env, stack) = linear_world_1d();
        let cost = CostFunction::new(vec![0.0]);
        let mut cfg = PlannerConfig::new(1, -3.0, 3.0);
        cfg.horizon = 4;
        let plan = plan_cem(&stack, &[2.0], &cost, &cfg, 11).unwrap();
        for pair in plan.iter_best_costs.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15);
        }
    }

    #[test]
    fn cem_rejects_invalid_config() {
        let mut cfg = one_step_cfg();
        cfg.elites = cfg.population + 1;
        assert!(CemPlanner::new(cfg).is_err());
        let mut cfg = one_step_cfg();
        cfg.horizon = 0;
        assert!(CemPlanner::new(cfg).is_err());
    }

    #[test]
    fn mppi_recovers_analytic_one_step_optimum() {
        let (_env, stack) = linear_world_1d();
        let cost = CostFunction::new(vec![0.0]);
        let mut cfg = one_step_cfg();
        cfg.mppi_noise_std = 1.0;
        cfg.lambda = 0.3;
        let plan = plan_mppi(&stack, &[2.0], &cost, &cfg, 13).unwrap();
        assert!(
            (plan.actions[0][0] + 2.0).abs() < 0.1,
            "action {}",
            plan.actions[0][0]
        );
    }

    #[test]
    fn mppi_huge_temperature_returns_proposal_mean() {
        let (_env, stack) = linear_world_1d();
        let cost = CostFunction::new(vec![0.0]);
        let mut cfg = one_step_cfg();
        cfg.lambda = 1e6;
        cfg.iterations = 1;
        cfg.mppi_noise_std = 1.0;
        let plan = plan_mppi(&stack, &[2.0], &cost, &cfg, 17).unwrap();
        assert!(
            plan.actions[0][0].abs() < 0.3,
            "action {}",
            plan.actions[0][0]
        );
    }

    #[test]
    fn mppi_zero_noise_returns_nominal_unchanged() {
        let (_env, stack) = linear_world_1d();
        let cost = CostFunction::new(vec![0.0]);
        let mut cfg = one_step_cfg();
        cfg.mppi_noise_std = 0.0;
        let plan = plan_mppi(&stack, &[2.0], &cost, &cfg, 19).unwrap();
        assert_eq!(plan.actions[0][0], 0.0); // nominal starts at the midpoint
    }

    #[test]
    fn mppi_rejects_nonpositive_lambda() {
        let mut cfg = one_step_cfg();
        cfg.lambda = 0.0;
        assert!(MppiPlanner::new(cfg).is_err());
        assert!(mppi_weights(&[1.0, 2.0], -1.0).is_err());
    }

    #[test]
    fn mppi_weights_sum_to_one_and_shift_invariant() {
        let costs = vec![3.0, 1.0, 2.0, 10.0];
        let w = mppi_weights(&costs, 0.7).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = costs.iter().map(|c| c + 5.0).collect();
        let w2 = mppi_weights(&shifted, 0.7).unwrap();
        for (a, b) in w.iter().zip(&w2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exhaustive_search_matches_bfs_on_all_start_cells() {
        let grid = Gridworld::new(3, 3, 0.0, 8).unwrap();
        let stack = gridworld_tabular_stack(&grid);
        let dist = bfs_distances(&grid);
        let goal_obs = {
            let mut v = vec![0.0; 9];
            v[8] = 1.0;
            v
        };
        let reward = BeliefReward::GoalIndicator {
            goal: goal_obs,
            tol: 0.5,
        };
        for cell in 0..9 {
            if cell == grid.goal_cell {
                continue;
            }
            let mut obs = vec![0.0; 9];
            obs[cell] = 1.0;
            let (first, _) =
                plan_exhaustive_discrete(&stack, &obs, &reward, GRID_ACTIONS, 4, 0.9).unwrap();
            let optimal = bfs_optimal_first_actions(&grid, cell, &dist);
            assert!(
                optimal.contains(&first),
                "cell {cell}: planner chose {first}, optimal set {optimal:?}"
            );
        }
    }

    #[test]
    fn exhaustive_argmax_invariant_to_positive_cost_scaling() {
        let grid = Gridworld::new(3, 3, 0.0, 8).unwrap();
        let stack = gridworld_tabular_stack(&grid);
        let goal_obs = {
            let mut v = vec![0.0; 9];
            v[8] = 1.0;
            v
        };
        let base = BeliefReward::GoalIndicator {
            goal: goal_obs,
            tol: 0.5,
        };
        for factor in [0.1, 1.0, 7.5, 1000.0] {
            let scaled = BeliefReward::Scaled {
                base: Box::new(base.clone()),
                factor,
            };
            for cell in 0..8 {
                let mut obs = vec![0.0; 9];
                obs[cell] = 1.0;
                let (first_base, _) =
                    plan_exhaustive_discrete(&stack, &obs, &base, GRID_ACTIONS, 3, 0.9).unwrap();
                let (first_scaled, _) =
                    plan_exhaustive_discrete(&stack, &obs, &scaled, GRID_ACTIONS, 3, 0.9).unwrap();
                assert_eq!(first_base, first_scaled, "cell {cell} factor {factor}");
            }
        }
    }

    #[test]
    fn mpc_starting_at_goal_stays_there() {
        let (mut env, stack) = linear_world_1d();
        env.init_range = 0.0; // start exactly at the goal
        let cost = CostFunction::new(vec![0.0]);
        let mut cfg = PlannerConfig::new(1, -3.0, 3.0);
        cfg.horizon = 3;
        cfg.population = 64;
        cfg.iterations = 4;
        cfg.elites = 8;
        let mut planner = CemPlanner::new(cfg).unwrap();
        let record = mpc_execute(&env, &stack, &mut planner, &cost, 10, 3).unwrap();
        for s in &record.states {
            let v = s.as_vector().unwrap();
            assert!(v[0].abs() < 0.1, "drifted to {}", v[0]);
        }
    }

    #[test]
    fn mpc_with_true_dynamics_contracts_to_goal() {
        let env = LinearGaussianWorld::plain(2, -1.0, 1.0);
        let stack = WorldModelStack::new(
            EncoderModel::signal_projection(2, 2),
            WorldModelFn::from_linear_dynamics(&env.a_matrix, &env.b_matrix, 2, 2),
            None,
        );
        let cost = CostFunction::new(vec![0.0, 0.0]);
        let mut cfg = PlannerConfig::new(2, -1.0, 1.0);
        cfg.horizon = 8;
        cfg.population = 128;
        cfg.iterations = 6;
        cfg.elites = 16;
        let mut planner = CemPlanner::new(cfg).unwrap();
        let record = mpc_execute(&env, &stack, &mut planner, &cost, 20, 5).unwrap();
        assert!(
            record.final_distance.unwrap() < 0.1,
            "final distance {}",
            record.final_distance.unwrap()
        );
    }

    #[test]
    fn collapsed_model_mpc_is_indistinguishable_from_random_actions() {
        let env = LinearGaussianWorld::plain(2, -1.0, 1.0);
        let (h, f) = make_degenerate_pair(vec![0.0, 0.0]);
        let collapsed = WorldModelStack::new(h, f, None);
        let cost = CostFunction::new(vec![0.0, 0.0]);
        let mut cfg = PlannerConfig::new(2, -1.0, 1.0);
        cfg.horizon = 4;
        cfg.population = 32;
        cfg.iterations = 2;
        cfg.elites = 4;
        let n_seeds = 12;
        let mut collapsed_dists = Vec::new();
        let mut random_dists = Vec::new();
        for seed in 0..n_seeds {
            let mut planner = CemPlanner::new(cfg.clone()).unwrap();
            let record = mpc_execute(&env, &collapsed, &mut planner, &cost, 20, seed).unwrap();
            collapsed_dists.push(record.final_distance.unwrap());

            // Random baseline: the same proposal distribution, no planning.
            let root = Rng::new(seed + 500);
            let mut env_rng = root.child("env");
            let mut act_rng = root.child("act");
            let mut state = env.initial_state(&mut env_rng);
            for _ in 0..20 {
                let a = Action::Continuous(vec![
                    (cfg.cem_init_std * act_rng.normal()).clamp(-1.0, 1.0),
                    (cfg.cem_init_std * act_rng.normal()).clamp(-1.0, 1.0),
                ]);
                state = env.step(&state, &a, &mut env_rng).0;
            }
            let v = state.as_vector().unwrap();
            random_dists.push((v[0] * v[0] + v[1] * v[1]).sqrt());
        }
        let p = rank_sum_p_two_sided(&collapsed_dists, &random_dists);
        assert!(
            p >= 0.05,
            "p = {p}, collapsed-model planning looks informed"
        );
    }

    #[test]
    fn dream_training_learns_gridworld_shortest_path() {
        let grid = Gridworld::new(3, 3, 0.0, 8).unwrap();
        let stack = gridworld_tabular_stack(&grid);
        let goal_obs = {
            let mut v = vec![0.0; 9];
            v[8] = 1.0;
            v
        };
        let reward = BeliefReward::GoalIndicator {
            goal: goal_obs,
            tol: 0.5,
        };
        let starts: Vec<Belief> = (0..8)
            .map(|c| {
                let mut v = vec![0.0; 9];
                v[c] = 1.0;
                v
            })
            .collect();
        let schedule = DiscountSchedule::geometric(0.9).unwrap();
        let cfg = DreamTrainConfig {
            iterations: 600,
            rollouts_per_iter: 64,
            horizon: 8,
            learning_rate: 0.2,
            sigma_init: 0.0,
            sigma_final: 0.0,
        };
        let policy0 = Policy::uniform_tabular(9, GRID_ACTIONS);
        let watched = InstrumentedEnv::new(&grid);
        let (policy, stats) =
            train_policy_in_dream(&stack, policy0, &reward, &starts, &schedule, &cfg, 21).unwrap();
        assert_eq!(watched.step_calls() + watched.observe_calls(), 0);
        assert!(stats.mean_return_per_iter.len() == 600);

        // Greedy evaluation in the true environment from the far corner.
        let mut rng = Rng::new(0);
        let mut state = WorldState::Cell(0);
        let mut steps = 0;
        while state != WorldState::Cell(8) {
            let obs = grid.observe(&state, &mut rng);
            let a = policy.mode(&obs);
            state = grid.step(&state, &a, &mut rng).0;
            steps += 1;
            assert!(steps <= 8, "policy wanders");
        }
        assert_eq!(steps, 4); // shortest path from corner to corner
    }

    #[test]
    fn dream_training_zero_learning_rate_is_identity() {
        let grid = Gridworld::new(3, 3, 0.0, 8).unwrap();
        let stack = gridworld_tabular_stack(&grid);
        let reward = BeliefReward::GoalIndicator {
            goal: {
                let mut v = vec![0.0; 9];
                v[8] = 1.0;
                v
            },
            tol: 0.5,
        };
        let starts = vec![{
            let mut v = vec![0.0; 9];
            v[0] = 1.0;
            v
        }];
        let schedule = DiscountSchedule::geometric(0.9).unwrap();
        let cfg = DreamTrainConfig {
            iterations: 20,
            rollouts_per_iter: 8,
            horizon: 6,
            learning_rate: 0.0,
            sigma_init: 0.0,
            sigma_final: 0.0,
        };
        let policy0 = Policy::uniform_tabular(9, GRID_ACTIONS);
        let (policy, _) =
            train_policy_in_dream(&stack, policy0, &reward, &starts, &schedule, &cfg, 2).unwrap();
        match policy {
            Policy::TabularSoftmax { logits } => {
                assert!(logits.iter().flatten().all(|&l| l == 0.0));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn dream_training_rejects_bad_horizon() {
        let grid = Gridworld::new(3, 3, 0.0, 8).unwrap();
        let stack = gridworld_tabular_stack(&grid);
        let reward = BeliefReward::GoalIndicator {
            goal: vec![0.0; 9],
            tol: 0.5,
        };
        let cfg = DreamTrainConfig {
            horizon: 0,
            ..DreamTrainConfig::default()
        };
        let res = train_policy_in_dream(
            &stack,
            Policy::uniform_tabular(9, GRID_ACTIONS),
            &reward,
            &[vec![0.0; 9]],
            &DiscountSchedule::geometric(0.9).unwrap(),
            &cfg,
            0,
        );
        assert!(res.is_err());
    }

    #[test]
    fn evaluate_policy_random_worse_than_oracle_mpc() {
        let env = LinearGaussianWorld::plain(2, -1.0, 1.0);
        let schedule = DiscountSchedule::geometric(0.97).unwrap();
        let random = Policy::zero_linear_gaussian(2, 2, -1.0, 1.0, 0.5);
        let random_return = evaluate_policy(&env, None, &random, 30, 20, &schedule, 77).unwrap();

        let stack = WorldModelStack::new(
            EncoderModel::signal_projection(2, 2),
            WorldModelFn::from_linear_dynamics(&env.a_matrix, &env.b_matrix, 2, 2),
            None,
        );
        let cost = CostFunction::new(vec![0.0, 0.0]);
        let mut cfg = PlannerConfig::new(2, -1.0, 1.0);
        cfg.horizon = 8;
        cfg.population = 64;
        cfg.iterations = 4;
        cfg.elites = 8;
        let mut oracle_total = 0.0;
        for seed in 0..5u64 {
            let mut planner = CemPlanner::new(cfg.clone()).unwrap();
            let record = mpc_execute(&env, &stack, &mut planner, &cost, 20, seed).unwrap();
            oracle_total += record
                .states
                .iter()
                .enumerate()
                .map(|(k, s)| schedule.factor(k) * env.reward(env.goal(), s))
                .sum::<f64>();
        }
        let oracle_return = oracle_total / 5.0;
        assert!(
            oracle_return > random_return,
            "oracle {oracle_return} vs random {random_return}"
        );
    }

    #[test]
    fn evaluate_policy_horizon_one_is_single_step_reward_mean() {
        let env = FixedRewardEnv::new(0.25);
        let policy = Policy::zero_linear_gaussian(1, 1, -1.0, 1.0, 0.1);
        let schedule = DiscountSchedule::geometric(0.9).unwrap();
        let v = evaluate_policy(&env, None, &policy, 10, 1, &schedule, 5).unwrap();
        assert_eq!(v, 0.25);
    }

    #[test]
    fn evaluate_policy_optimal_gridworld_exact_return() {
        let grid = Gridworld::new(3, 3, 0.0, 4).unwrap(); // goal at center
        let policy = optimal_grid_policy(&grid);
        let schedule = DiscountSchedule::geometric(0.9).unwrap();
        // All non-goal starts have distance 1 or 2 from the center.
        let v = evaluate_policy(&grid, None, &policy, 64, 20, &schedule, 9).unwrap();
        assert!(v > 0.0);
        // Every episode return must be exactly gamma^d for its start.
        let dist = bfs_distances(&grid);
        let root = Rng::new(9);
        let mut expected = 0.0;
        for ep in 0..64u64 {
            let mut rng = root.child_indexed("eval-episode", ep);
            let s0 = grid.initial_state(&mut rng);
            expected += 0.9f64.powi(dist[s0.as_cell().unwrap()] as i32);
        }
        expected /= 64.0;
        assert!((v - expected).abs() < 1e-12);
    }
}
