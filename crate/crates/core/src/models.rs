//! Encoder h, world model f, and decoder g in parametric (small feed-forward),
//! tabular, constant, and isometry forms.
//!
//! The constant and tabular families realize the degenerate and witness
//! constructions used by the collapse analysis; the isometry pair realizes the
//! exact-roundtrip case of the surrogate bound. Parametric models are small
//! tanh networks trained through the `numerics` tape.

use crate::envs::{Action, Gridworld, TransitionTriple, GRID_ACTIONS};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tape, Tensor, Var, VarSet};
use crate::rng::Rng;
use std::collections::HashMap;

/// Latent world-state vector produced by an encoder.
pub type Belief = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

/// Feed-forward architecture: `dims` lists layer widths input-first; hidden
/// layers use `activation`, the output layer is linear. `dims = [in, out]`
/// is a plain affine map.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>, activation: Activation) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        MlpSpec { dims, activation }
    }

    pub fn affine(input: usize, output: usize) -> Self {
        MlpSpec {
            dims: vec![input, output],
            activation: Activation::Tanh,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Weights uniform in +-sqrt(1/fan_in), biases zero.
    pub fn init_params(&self, rng: &mut Rng) -> ParamSet {
        let mut params = ParamSet::new();
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.uniform_in(-bound, bound))
                .collect();
            params
                .insert(
                    &format!("w{l}"),
                    Tensor::matrix(fan_in, fan_out, w).unwrap(),
                )
                .unwrap();
            params
                .insert(&format!("b{l}"), Tensor::vector(vec![0.0; fan_out]))
                .unwrap();
        }
        params
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
                context: "mlp input",
            });
        }
        let mut h = x.to_vec();
        for l in 0..self.n_layers() {
            let w = params
                .get(&format!("w{l}"))
                .ok_or_else(|| Error::InvalidParam(format!("missing w{l}")))?;
            let b = params
                .get(&format!("b{l}"))
                .ok_or_else(|| Error::InvalidParam(format!("missing b{l}")))?;
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let mut out = b.data().to_vec();
            for i in 0..fan_in {
                let hi = h[i];
                if hi == 0.0 {
                    continue;
                }
                let row = &w.data()[i * fan_out..(i + 1) * fan_out];
                for j in 0..fan_out {
                    out[j] += hi * row[j];
                }
            }
            if l + 1 < self.n_layers() {
                for v in out.iter_mut() {
                    *v = match self.activation {
                        Activation::Tanh => v.tanh(),
                        Activation::Relu => v.max(0.0),
                    };
                }
            }
            h = out;
        }
        Ok(h)
    }

    /// Batched tape forward; `input` is a [batch, in] matrix node, parameters
    /// are looked up as `{prefix}w{l}` / `{prefix}b{l}`.
    pub fn forward_batch_tape(
        &self,
        tape: &mut Tape,
        vars: &VarSet,
        prefix: &str,
        input: Var,
    ) -> Result<Var> {
        let mut h = input;
        for l in 0..self.n_layers() {
            let w = vars
                .get(&format!("{prefix}w{l}"))
                .ok_or_else(|| Error::InvalidParam(format!("missing {prefix}w{l}")))?;
            let b = vars
                .get(&format!("{prefix}b{l}"))
                .ok_or_else(|| Error::InvalidParam(format!("missing {prefix}b{l}")))?;
            let wx = tape.matmul(h, w)?;
            h = tape.add_bias(wx, b)?;
            if l + 1 < self.n_layers() {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h)?,
                    Activation::Relu => tape.relu(h)?,
                };
            }
        }
        Ok(h)
    }
}

/// Copy `params` into a new set with every name prefixed.
pub fn prefixed(params: &ParamSet, prefix: &str) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, t) in params.iter() {
        out.insert(&format!("{prefix}{name}"), t.clone()).unwrap();
    }
    out
}

/// Extract the sub-set whose names start with `prefix`, stripping it.
pub fn strip_prefix(params: &ParamSet, prefix: &str) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, t) in params.iter() {
        if let Some(rest) = name.strip_prefix(prefix) {
            out.insert(rest, t.clone()).unwrap();
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tabular maps with bit-exact keys
// ---------------------------------------------------------------------------

pub fn value_key(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ActionKey {
    Discrete(usize),
    Continuous(Vec<u64>),
}

impl ActionKey {
    pub fn of(a: &Action) -> Self {
        match a {
            Action::Discrete(k) => ActionKey::Discrete(*k),
            Action::Continuous(v) => ActionKey::Continuous(value_key(v)),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TabularEncoder {
    map: HashMap<Vec<u64>, Belief>,
    pub fallback: Option<Belief>,
    pub out_dim: usize,
}

impl TabularEncoder {
    pub fn new(out_dim: usize, fallback: Option<Belief>) -> Self {
        TabularEncoder {
            map: HashMap::new(),
            fallback,
            out_dim,
        }
    }

    pub fn set(&mut self, obs: &[f64], belief: Belief) {
        self.map.insert(value_key(obs), belief);
    }

    pub fn encode(&self, obs: &[f64]) -> Result<Belief> {
        if let Some(b) = self.map.get(&value_key(obs)) {
            return Ok(b.clone());
        }
        self.fallback
            .clone()
            .ok_or_else(|| Error::InvalidParam("observation not in tabular encoder".into()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TabularWorldModel {
    map: HashMap<(Vec<u64>, ActionKey), Belief>,
    pub fallback: Option<Belief>,
    pub dim: usize,
}

impl TabularWorldModel {
    pub fn new(dim: usize, fallback: Option<Belief>) -> Self {
        TabularWorldModel {
            map: HashMap::new(),
            fallback,
            dim,
        }
    }

    pub fn set(&mut self, belief: &[f64], action: &Action, next: Belief) {
        self.map
            .insert((value_key(belief), ActionKey::of(action)), next);
    }

    pub fn predict(&self, belief: &[f64], action: &Action) -> Result<Belief> {
        if let Some(b) = self.map.get(&(value_key(belief), ActionKey::of(action))) {
            return Ok(b.clone());
        }
        self.fallback.clone().ok_or_else(|| {
            Error::InvalidParam("(belief, action) not in tabular world model".into())
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TabularDecoder {
    map: HashMap<Vec<u64>, Vec<f64>>,
    pub fallback: Option<Vec<f64>>,
    pub out_dim: usize,
}

impl TabularDecoder {
    pub fn new(out_dim: usize, fallback: Option<Vec<f64>>) -> Self {
        TabularDecoder {
            map: HashMap::new(),
            fallback,
            out_dim,
        }
    }

    pub fn set(&mut self, belief: &[f64], obs: Vec<f64>) {
        self.map.insert(value_key(belief), obs);
    }

    pub fn decode(&self, belief: &[f64]) -> Result<Vec<f64>> {
        if let Some(o) = self.map.get(&value_key(belief)) {
            return Ok(o.clone());
        }
        self.fallback
            .clone()
            .ok_or_else(|| Error::InvalidParam("belief not in tabular decoder".into()))
    }

    /// Search explicit entries for a belief decoding exactly to `target`.
    pub fn preimage(&self, target: &[f64]) -> Option<Belief> {
        let tkey = value_key(target);
        // Deterministic scan order: smallest key wins.
        let mut best: Option<(&Vec<u64>, &Vec<f64>)> = None;
        for (k, v) in &self.map {
            if value_key(v) == tkey {
                match best {
                    Some((bk, _)) if bk <= k => {}
                    _ => best = Some((k, v)),
                }
            }
        }
        best.map(|(k, _)| k.iter().map(|b| f64::from_bits(*b)).collect())
    }
}

// ---------------------------------------------------------------------------
// Model families
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum EncoderModel {
    Parametric {
        spec: MlpSpec,
        params: ParamSet,
    },
    Tabular(TabularEncoder),
    Constant(Belief),
    /// encode(o) = Q^T o for a column-orthonormal Q; the exact left inverse of
    /// the isometry decoder, nonexpansive by construction.
    IsometryLeftInverse {
        q: Tensor,
    },
}

impl EncoderModel {
    pub fn parametric(spec: MlpSpec, rng: &mut Rng) -> Self {
        let params = spec.init_params(rng);
        EncoderModel::Parametric { spec, params }
    }

    /// Affine encoder selecting the first `signal_dim` coordinates.
    pub fn signal_projection(obs_dim: usize, signal_dim: usize) -> Self {
        let spec = MlpSpec::affine(obs_dim, signal_dim);
        let mut params = ParamSet::new();
        let mut w = vec![0.0; obs_dim * signal_dim];
        for i in 0..signal_dim.min(obs_dim) {
            w[i * signal_dim + i] = 1.0;
        }
        params
            .insert("w0", Tensor::matrix(obs_dim, signal_dim, w).unwrap())
            .unwrap();
        params
            .insert("b0", Tensor::vector(vec![0.0; signal_dim]))
            .unwrap();
        EncoderModel::Parametric { spec, params }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            EncoderModel::Parametric { spec, .. } => spec.output_dim(),
            EncoderModel::Tabular(t) => t.out_dim,
            EncoderModel::Constant(c) => c.len(),
            EncoderModel::IsometryLeftInverse { q } => q.shape()[1],
        }
    }

    pub fn encode(&self, obs: &[f64]) -> Result<Belief> {
        match self {
            EncoderModel::Parametric { spec, params } => spec.forward(params, obs),
            EncoderModel::Tabular(t) => t.encode(obs),
            EncoderModel::Constant(c) => Ok(c.clone()),
            EncoderModel::IsometryLeftInverse { q } => {
                let (rows, cols) = (q.shape()[0], q.shape()[1]);
                if obs.len() != rows {
                    return Err(Error::DimensionMismatch {
                        expected: rows,
                        got: obs.len(),
                        context: "isometry encoder input",
                    });
                }
                let mut s = vec![0.0; cols];
                for j in 0..cols {
                    let mut acc = 0.0;
                    for i in 0..rows {
                        acc += q.data()[i * cols + j] * obs[i];
                    }
                    s[j] = acc;
                }
                Ok(s)
            }
        }
    }

    /// True when the family guarantees ||h(u) - h(v)|| <= ||u - v||.
    pub fn is_certified_nonexpansive(&self) -> bool {
        matches!(
            self,
            EncoderModel::IsometryLeftInverse { .. } | EncoderModel::Constant(_)
        )
    }
}

#[derive(Debug, Clone)]
pub enum WorldModelFn {
    /// MLP over the concatenation [belief | action]; deterministic transition.
    Parametric {
        spec: MlpSpec,
        params: ParamSet,
    },
    Tabular(TabularWorldModel),
    Constant(Belief),
}

impl WorldModelFn {
    pub fn parametric(spec: MlpSpec, rng: &mut Rng) -> Self {
        let params = spec.init_params(rng);
        WorldModelFn::Parametric { spec, params }
    }

    /// Affine transition s' = A s + B a built from row-major dynamics
    /// matrices.
    pub fn from_linear_dynamics(
        a_matrix: &[f64],
        b_matrix: &[f64],
        state_dim: usize,
        action_dim: usize,
    ) -> Self {
        let spec = MlpSpec::affine(state_dim + action_dim, state_dim);
        let mut w = vec![0.0; (state_dim + action_dim) * state_dim];
        for j in 0..state_dim {
            for i in 0..state_dim {
                w[i * state_dim + j] = a_matrix[j * state_dim + i];
            }
            for i in 0..action_dim {
                w[(state_dim + i) * state_dim + j] = b_matrix[j * action_dim + i];
            }
        }
        let mut params = ParamSet::new();
        params
            .insert(
                "w0",
                Tensor::matrix(state_dim + action_dim, state_dim, w).unwrap(),
            )
            .unwrap();
        params
            .insert("b0", Tensor::vector(vec![0.0; state_dim]))
            .unwrap();
        WorldModelFn::Parametric { spec, params }
    }

    /// Identity on the belief, ignoring the action.
    pub fn identity_on_belief(dim: usize, action_dim: usize) -> Self {
        let zero_b = vec![0.0; dim * action_dim];
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        WorldModelFn::from_linear_dynamics(&eye, &zero_b, dim, action_dim)
    }

    pub fn dim(&self) -> usize {
        match self {
            WorldModelFn::Parametric { spec, .. } => spec.output_dim(),
            WorldModelFn::Tabular(t) => t.dim,
            WorldModelFn::Constant(c) => c.len(),
        }
    }

    pub fn predict(&self, belief: &[f64], action: &Action) -> Result<Belief> {
        match self {
            WorldModelFn::Parametric { spec, params } => {
                let a = match action {
                    Action::Continuous(a) => a.clone(),
                    Action::Discrete(_) => {
                        return Err(Error::InvalidParam(
                            "parametric world model expects continuous actions".into(),
                        ))
                    }
                };
                let mut input = belief.to_vec();
                input.extend_from_slice(&a);
                spec.forward(params, &input)
            }
            WorldModelFn::Tabular(t) => t.predict(belief, action),
            WorldModelFn::Constant(c) => Ok(c.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum DecoderModel {
    Parametric {
        spec: MlpSpec,
        params: ParamSet,
    },
    Tabular(TabularDecoder),
    /// decode(s) = Q s for a column-orthonormal Q.
    Isometry {
        q: Tensor,
    },
}

impl DecoderModel {
    pub fn parametric(spec: MlpSpec, rng: &mut Rng) -> Self {
        let params = spec.init_params(rng);
        DecoderModel::Parametric { spec, params }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            DecoderModel::Parametric { spec, .. } => spec.output_dim(),
            DecoderModel::Tabular(t) => t.out_dim,
            DecoderModel::Isometry { q } => q.shape()[0],
        }
    }

    pub fn decode(&self, belief: &[f64]) -> Result<Vec<f64>> {
        match self {
            DecoderModel::Parametric { spec, params } => spec.forward(params, belief),
            DecoderModel::Tabular(t) => t.decode(belief),
            DecoderModel::Isometry { q } => {
                let (rows, cols) = (q.shape()[0], q.shape()[1]);
                if belief.len() != cols {
                    return Err(Error::DimensionMismatch {
                        expected: cols,
                        got: belief.len(),
                        context: "isometry decoder input",
                    });
                }
                let mut o = vec![0.0; rows];
                for i in 0..rows {
                    let row = &q.data()[i * cols..(i + 1) * cols];
                    o[i] = row.iter().zip(belief).map(|(a, b)| a * b).sum();
                }
                Ok(o)
            }
        }
    }

    /// A belief decoding exactly to `target`, when the family exposes one.
    pub fn preimage(&self, target: &[f64]) -> Result<Belief> {
        match self {
            DecoderModel::Tabular(t) => t
                .preimage(target)
                .ok_or_else(|| Error::NotInImage(format!("{target:?}"))),
            DecoderModel::Isometry { q } => {
                let cols = q.shape()[1];
                let enc = EncoderModel::IsometryLeftInverse { q: q.clone() };
                let s = enc.encode(target)?;
                let back = self.decode(&s)?;
                let err: f64 = back
                    .iter()
                    .zip(target)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if err <= 1e-9 {
                    Ok(s)
                } else {
                    Err(Error::NotInImage(format!(
                        "target is {err:.3e} away from the rank-{cols} image"
                    )))
                }
            }
            DecoderModel::Parametric { .. } => Err(Error::NotInImage(
                "parametric decoders expose no exact preimages".into(),
            )),
        }
    }
}

/// The encoder / world-model / decoder bundle used by losses and planners.
#[derive(Debug, Clone)]
pub struct WorldModelStack {
    pub encoder: EncoderModel,
    pub model: WorldModelFn,
    pub decoder: Option<DecoderModel>,
}

impl WorldModelStack {
    pub fn new(encoder: EncoderModel, model: WorldModelFn, decoder: Option<DecoderModel>) -> Self {
        WorldModelStack {
            encoder,
            model,
            decoder,
        }
    }

    pub fn belief_dim(&self) -> usize {
        self.encoder.out_dim()
    }
}

// ---------------------------------------------------------------------------
// Constructions
// ---------------------------------------------------------------------------

/// Constant encoder and constant transition pinned at `c`: the global
/// minimizer of the latent reconstruction loss.
pub fn make_degenerate_pair(c: Belief) -> (EncoderModel, WorldModelFn) {
    (EncoderModel::Constant(c.clone()), WorldModelFn::Constant(c))
}

/// Tabular pair equal to the given degenerate `(h', f')` everywhere except on
/// two triples with distinct next-observations, which it fits exactly through
/// the fixed decoder.
pub fn make_witness_pair(
    h_prime: &EncoderModel,
    f_prime: &WorldModelFn,
    g_fixed: &DecoderModel,
    first: &TransitionTriple,
    second: &TransitionTriple,
) -> Result<(EncoderModel, WorldModelFn)> {
    let c = match (h_prime, f_prime) {
        (EncoderModel::Constant(hc), WorldModelFn::Constant(fc)) if hc == fc => hc.clone(),
        _ => {
            return Err(Error::InvalidParam(
                "witness construction starts from a constant (degenerate) pair".into(),
            ))
        }
    };
    if first.obs_next == second.obs_next {
        return Err(Error::InvalidParam(
            "witness requires distinct next-observations".into(),
        ));
    }
    let target_1 = g_fixed.preimage(&first.obs_next)?;
    let target_2 = g_fixed.preimage(&second.obs_next)?;

    let same_current = first.obs == second.obs;
    if same_current && first.action == second.action {
        return Err(Error::InvalidParam(
            "identical (observation, action) with conflicting targets cannot be fit exactly".into(),
        ));
    }
    // Intermediate beliefs distinct from the collapse constant so the
    // transition overrides never shadow f'(c, .).
    let mut s_hat_1 = c.clone();
    s_hat_1[0] += 1.0;
    let mut s_hat_2 = c.clone();
    s_hat_2[0] += 2.0;
    if same_current {
        s_hat_2 = s_hat_1.clone();
    }

    let mut h = TabularEncoder::new(c.len(), Some(c.clone()));
    h.set(&first.obs, s_hat_1.clone());
    h.set(&second.obs, s_hat_2.clone());

    let mut f = TabularWorldModel::new(c.len(), Some(c));
    f.set(&s_hat_1, &first.action, target_1);
    f.set(&s_hat_2, &second.action, target_2);

    Ok((EncoderModel::Tabular(h), WorldModelFn::Tabular(f)))
}

/// Random column-orthonormal matrix via modified Gram-Schmidt with one
/// re-orthogonalization pass.
fn random_orthonormal_columns(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while columns.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
        for _pass in 0..2 {
            for u in &columns {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= dot * ui;
                }
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue; // degenerate draw; resample
        }
        for vi in v.iter_mut() {
            *vi /= norm;
        }
        columns.push(v);
    }
    let mut data = vec![0.0; rows * cols];
    for (j, col) in columns.iter().enumerate() {
        for i in 0..rows {
            data[i * cols + j] = col[i];
        }
    }
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Column-orthonormal decoder Q with encoder Q^T: exact roundtrip on the
/// latent space and a nonexpansive encoder.
pub fn make_isometry_autoencoder(
    d_s: usize,
    d_o: usize,
    seed: u64,
) -> Result<(EncoderModel, DecoderModel)> {
    if d_s > d_o {
        return Err(Error::InvalidParam(format!(
            "isometry needs latent dim <= observation dim, got {d_s} > {d_o}"
        )));
    }
    if d_s == 0 {
        return Err(Error::InvalidParam("latent dim must be >= 1".into()));
    }
    let mut rng = Rng::new(seed).child("isometry");
    let q = random_orthonormal_columns(d_o, d_s, &mut rng);
    Ok((
        EncoderModel::IsometryLeftInverse { q: q.clone() },
        DecoderModel::Isometry { q },
    ))
}

/// Exact tabular mirror of a slip-free gridworld: one-hot beliefs, the true
/// move table as the transition, identity decoding.
pub fn gridworld_tabular_stack(grid: &Gridworld) -> WorldModelStack {
    let n = grid.n_cells();
    let one_hot = |cell: usize| -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[cell] = 1.0;
        v
    };
    let mut enc = TabularEncoder::new(n, None);
    let mut dec = TabularDecoder::new(n, None);
    let mut wm = TabularWorldModel::new(n, None);
    for cell in 0..n {
        let obs = one_hot(cell);
        enc.set(&obs, obs.clone());
        dec.set(&obs, obs.clone());
        for action in 0..GRID_ACTIONS {
            let next = one_hot(grid.apply_move(cell, action));
            wm.set(&obs, &Action::Discrete(action), next);
        }
    }
    WorldModelStack::new(
        EncoderModel::Tabular(enc),
        WorldModelFn::Tabular(wm),
        Some(DecoderModel::Tabular(dec)),
    )
}
