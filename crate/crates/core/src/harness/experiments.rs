//! Experiment bodies: GLP training under either objective, the bound check,
//! the codec bench, closed-loop planning, the MPC-vs-dream comparison, and
//! the gradient-check suite.

use super::config::{
    BoundSection, CodecSection, EnvConfig, ExperimentConfig, ModelConfig, PlannerSection,
    TrainSection,
};
use crate::codec::{build_codec, verify_distinguishability, CodecMode, CodecSpec};
use crate::envs::{
    generate_dataset, Action, DiscountSchedule, Environment, Goal, InstrumentedEnv,
    LinearGaussianWorld, TransitionTriple, UniformRandomPolicy, WorldState,
};
use crate::error::{Error, Result};
use crate::losses::{
    collapse_diagnostics, generative_loss, latent_loss, roundtrip_epsilon, surrogate_bound_report,
};
use crate::models::{
    make_degenerate_pair, make_isometry_autoencoder, prefixed, strip_prefix, Activation, Belief,
    DecoderModel, EncoderModel, MlpSpec, WorldModelFn, WorldModelStack,
};
use crate::numerics::{check_gradient, grad, AdamState, ParamSet, Tape, Tensor, Var, VarSet};
use crate::planners::{
    evaluate_policy, mpc_execute, train_policy_in_dream, BeliefReward, CemPlanner, CostFunction,
    DreamTrainConfig, MppiPlanner, Planner, PlannerConfig, Policy, TrajectoryRecord,
};
use crate::rng::Rng;
use crate::stats::{mean, normalized_score, rank_sum_p_two_sided};
use std::time::Instant;

pub fn build_env(cfg: &EnvConfig) -> LinearGaussianWorld {
    LinearGaussianWorld {
        state_dim: cfg.state_dim,
        action_dim: cfg.action_dim,
        a_matrix: LinearGaussianWorld::identity(cfg.state_dim),
        b_matrix: LinearGaussianWorld::scaled_identity(cfg.state_dim, cfg.b_scale),
        process_noise: cfg.process_noise,
        n_distractors: cfg.n_distractors,
        distractor_std: cfg.distractor_std,
        action_lo: -cfg.action_bound,
        action_hi: cfg.action_bound,
        state_bound: cfg.state_bound,
        init_range: cfg.init_range,
        goal: Goal {
            state: WorldState::Vector(vec![0.0; cfg.state_dim]),
            tolerance: 0.0,
        },
    }
}

/// Observation of the goal state with distractor dims at zero.
pub fn goal_observation(env: &LinearGaussianWorld) -> Vec<f64> {
    let mut obs = match &env.goal.state {
        WorldState::Vector(v) => v.clone(),
        WorldState::Cell(_) => unreachable!("continuous world"),
    };
    obs.resize(obs.len() + env.n_distractors, 0.0);
    obs
}

/// Oracle stack: encoder projects the signal coordinates, the transition is
/// the true dynamics.
pub fn oracle_stack(env: &LinearGaussianWorld) -> WorldModelStack {
    WorldModelStack::new(
        EncoderModel::signal_projection(env.obs_dim(), env.state_dim),
        WorldModelFn::from_linear_dynamics(
            &env.a_matrix,
            &env.b_matrix,
            env.state_dim,
            env.action_dim,
        ),
        None,
    )
}

// ---------------------------------------------------------------------------
// GLP training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Latent,
    Generative,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Latent => "latent",
            Objective::Generative => "generative",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub step: usize,
    pub latent_loss: f64,
    pub gen_loss: f64,
    pub roundtrip_eps: f64,
    pub mean_std: f64,
    pub effective_rank: f64,
}

#[derive(Debug)]
pub struct GlpTrainOutcome {
    pub stack: WorldModelStack,
    pub init_mean_std: f64,
    pub final_mean_std: f64,
    pub decoder_mse: f64,
    pub baseline_mse: f64,
    pub rows: Vec<TrainLogRow>,
}

fn batch_matrix(
    dataset: &[TransitionTriple],
    indices: &[usize],
    select: impl Fn(&TransitionTriple) -> &[f64],
    cols: usize,
) -> Tensor {
    let mut data = Vec::with_capacity(indices.len() * cols);
    for &i in indices {
        data.extend_from_slice(select(&dataset[i]));
    }
    Tensor::matrix(indices.len(), cols, data).unwrap()
}

fn action_slice(t: &TransitionTriple) -> &[f64] {
    match &t.action {
        Action::Continuous(a) => a,
        Action::Discrete(_) => panic!("continuous dataset expected"),
    }
}

/// Hinge-on-std anti-collapse penalty: mean_j relu(1 - std_j(beliefs)).
/// Off by default (weight 0); composed from supported tape primitives.
fn std_hinge_penalty(tape: &mut Tape, beliefs: Var, batch: usize, dim: usize) -> Result<Var> {
    let ones_row = tape.constant(Tensor::matrix(1, batch, vec![1.0 / batch as f64; batch])?)?;
    let col_mean = tape.matmul(ones_row, beliefs)?; // [1, dim]
    let ones_col = tape.constant(Tensor::matrix(batch, 1, vec![1.0; batch])?)?;
    let mean_mat = tape.matmul(ones_col, col_mean)?; // [batch, dim]
    let centered = tape.sub(beliefs, mean_mat)?;
    let sq = tape.square(centered)?;
    let scale_row = tape.constant(Tensor::matrix(1, batch, vec![1.0 / batch as f64; batch])?)?;
    let var = tape.matmul(scale_row, sq)?; // [1, dim]
    let eps = tape.constant(Tensor::matrix(1, dim, vec![1e-8; dim])?)?;
    let var_eps = tape.add(var, eps)?;
    let log_var = tape.log(var_eps)?;
    let half_log = tape.scale(log_var, 0.5)?;
    let std = tape.exp(half_log)?;
    let target = tape.constant(Tensor::matrix(1, dim, vec![1.0; dim])?)?;
    let deficit = tape.sub(target, std)?;
    let hinge = tape.relu(deficit)?;
    tape.mean(hinge)
}

struct GlpSpecs {
    h: MlpSpec,
    f: MlpSpec,
    g: MlpSpec,
}

fn glp_specs(obs_dim: usize, action_dim: usize, model: &ModelConfig) -> GlpSpecs {
    let hidden = vec![model.hidden_width; model.hidden_layers];
    let mut h_dims = vec![obs_dim];
    h_dims.extend(&hidden);
    h_dims.push(model.latent_dim);
    let mut f_dims = vec![model.latent_dim + action_dim];
    f_dims.extend(&hidden);
    f_dims.push(model.latent_dim);
    let mut g_dims = vec![model.latent_dim];
    g_dims.extend(&hidden);
    g_dims.push(obs_dim);
    GlpSpecs {
        h: MlpSpec::new(h_dims, Activation::Tanh),
        f: MlpSpec::new(f_dims, Activation::Tanh),
        g: MlpSpec::new(g_dims, Activation::Tanh),
    }
}

fn stack_views(
    specs: &GlpSpecs,
    params: &ParamSet,
    probe_params: Option<&ParamSet>,
) -> WorldModelStack {
    let encoder = EncoderModel::Parametric {
        spec: specs.h.clone(),
        params: strip_prefix(params, "h."),
    };
    let model = WorldModelFn::Parametric {
        spec: specs.f.clone(),
        params: strip_prefix(params, "f."),
    };
    let decoder_params = match probe_params {
        Some(p) => p.clone(),
        None => strip_prefix(params, "g."),
    };
    let decoder = DecoderModel::Parametric {
        spec: specs.g.clone(),
        params: decoder_params,
    };
    WorldModelStack::new(encoder, model, Some(decoder))
}

fn predicted_beliefs(stack: &WorldModelStack, triples: &[TransitionTriple]) -> Result<Vec<Belief>> {
    triples
        .iter()
        .map(|t| {
            let s = stack.encoder.encode(&t.obs)?;
            stack.model.predict(&s, &t.action)
        })
        .collect()
}

/// Mean squared observation residual of the decoder pipeline and the
/// constant-predictor baseline over the same triples.
pub fn decoder_mse_vs_baseline(
    stack: &WorldModelStack,
    triples: &[TransitionTriple],
) -> Result<(f64, f64)> {
    let decoder = stack
        .decoder
        .as_ref()
        .ok_or_else(|| Error::InvalidParam("stack has no decoder".into()))?;
    let obs_dim = triples[0].obs_next.len();
    let mut mean_next = vec![0.0; obs_dim];
    for t in triples {
        for (m, v) in mean_next.iter_mut().zip(&t.obs_next) {
            *m += v;
        }
    }
    for m in mean_next.iter_mut() {
        *m /= triples.len() as f64;
    }
    let mut model_mse = 0.0;
    let mut baseline_mse = 0.0;
    for t in triples {
        let s = stack.encoder.encode(&t.obs)?;
        let s_next = stack.model.predict(&s, &t.action)?;
        let o_pred = decoder.decode(&s_next)?;
        model_mse += t
            .obs_next
            .iter()
            .zip(&o_pred)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        baseline_mse += t
            .obs_next
            .iter()
            .zip(&mean_next)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok((
        model_mse / triples.len() as f64,
        baseline_mse / triples.len() as f64,
    ))
}

/// Train an encoder/world-model(/decoder) pipeline on the dataset with the
/// chosen objective. Under the latent objective the decoder is a probe: it is
/// trained on detached latents and never feeds gradients into (h, f).
pub fn train_glp(
    dataset: &[TransitionTriple],
    obs_dim: usize,
    action_dim: usize,
    model_cfg: &ModelConfig,
    train_cfg: &TrainSection,
    objective: Objective,
    seed: u64,
) -> Result<GlpTrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let specs = glp_specs(obs_dim, action_dim, model_cfg);
    let root = Rng::new(seed);
    let mut init_rng = root.child("init");

    let mut params = prefixed(&specs.h.init_params(&mut init_rng), "h.");
    params.absorb(prefixed(&specs.f.init_params(&mut init_rng), "f."))?;
    let mut probe_params: Option<ParamSet> = None;
    match objective {
        Objective::Generative => {
            params.absorb(prefixed(&specs.g.init_params(&mut init_rng), "g."))?;
        }
        Objective::Latent => {
            probe_params = Some(specs.g.init_params(&mut init_rng));
        }
    }

    let mut adam = AdamState::new(&params);
    let mut probe_adam = probe_params.as_ref().map(AdamState::new);

    let probe_count = train_cfg.probe_size.min(dataset.len());
    let probe_triples = &dataset[..probe_count];
    let probe_obs: Vec<Vec<f64>> = probe_triples.iter().map(|t| t.obs.clone()).collect();

    let init_stack = stack_views(&specs, &params, probe_params.as_ref());
    let init_report = collapse_diagnostics(&init_stack.encoder, &probe_obs)?;
    let init_mean_std = init_report.mean_std();

    let mut rows = Vec::new();
    let mut batch_rng = root.child("batches");
    let reg_weight = train_cfg.regularizer_weight;
    let batch = train_cfg.batch_size;
    let latent_dim = model_cfg.latent_dim;

    for step in 0..train_cfg.steps {
        let frac = if train_cfg.steps > 1 {
            step as f64 / (train_cfg.steps - 1) as f64
        } else {
            0.0
        };
        // Hold the learning rate for most of the run, then decay
        // geometrically to lr_final so the optimizer settles instead of
        // jittering around the optimum.
        const LR_HOLD_FRACTION: f64 = 0.85;
        adam.lr = if frac <= LR_HOLD_FRACTION {
            train_cfg.lr
        } else {
            let tail = (frac - LR_HOLD_FRACTION) / (1.0 - LR_HOLD_FRACTION);
            train_cfg.lr * (train_cfg.lr_final / train_cfg.lr).powf(tail)
        };
        if let Some(pa) = probe_adam.as_mut() {
            pa.lr = adam.lr;
        }

        let indices: Vec<usize> = (0..batch).map(|_| batch_rng.index(dataset.len())).collect();
        let o = batch_matrix(dataset, &indices, |t| &t.obs, obs_dim);
        let a = batch_matrix(dataset, &indices, action_slice, action_dim);
        let op = batch_matrix(dataset, &indices, |t| &t.obs_next, obs_dim);

        let (o_c, a_c, op_c) = (o.clone(), a.clone(), op.clone());
        let specs_ref = &specs;
        let grads = grad(
            move |tape, vars| {
                let o_in = tape.constant(o_c.clone())?;
                let a_in = tape.constant(a_c.clone())?;
                let op_in = tape.constant(op_c.clone())?;
                let s = specs_ref.h.forward_batch_tape(tape, vars, "h.", o_in)?;
                let sa = tape.concat_cols(s, a_in)?;
                let s_pred = specs_ref.f.forward_batch_tape(tape, vars, "f.", sa)?;
                let mut loss = match objective {
                    Objective::Latent => {
                        let s_target = specs_ref.h.forward_batch_tape(tape, vars, "h.", op_in)?;
                        tape.mse(s_pred, s_target)?
                    }
                    Objective::Generative => {
                        let recon = specs_ref.g.forward_batch_tape(tape, vars, "g.", s_pred)?;
                        tape.mse(recon, op_in)?
                    }
                };
                if reg_weight > 0.0 {
                    let penalty = std_hinge_penalty(tape, s, batch, latent_dim)?;
                    let weighted = tape.scale(penalty, reg_weight)?;
                    loss = tape.add(loss, weighted)?;
                }
                Ok(loss)
            },
            &params,
        )?;
        adam.step(&mut params, &grads)?;

        // Probe decoder for the latent arm: reconstruct from detached
        // predicted latents so (h, f) receive no generative signal.
        if let (Some(pp), Some(pa)) = (probe_params.as_mut(), probe_adam.as_mut()) {
            let view = stack_views(&specs, &params, Some(&*pp));
            let mut latents = Vec::with_capacity(batch * latent_dim);
            for &i in &indices {
                let s = view.encoder.encode(&dataset[i].obs)?;
                let s_next = view.model.predict(&s, &dataset[i].action)?;
                latents.extend(s_next);
            }
            let latent_mat = Tensor::matrix(batch, latent_dim, latents)?;
            let op_c = op.clone();
            let g_spec = &specs.g;
            let probe_grads = grad(
                move |tape, vars| {
                    let z = tape.constant(latent_mat.clone())?;
                    let target = tape.constant(op_c.clone())?;
                    let recon = g_spec.forward_batch_tape(tape, vars, "", z)?;
                    tape.mse(recon, target)
                },
                pp,
            )?;
            pa.step(pp, &probe_grads)?;
        }

        if step % train_cfg.log_every == 0 || step + 1 == train_cfg.steps {
            let stack = stack_views(&specs, &params, probe_params.as_ref());
            let lat = latent_loss(&stack.encoder, &stack.model, probe_triples)?;
            let gen = generative_loss(
                &stack.encoder,
                &stack.model,
                stack.decoder.as_ref().unwrap(),
                probe_triples,
            )?;
            let preds = predicted_beliefs(&stack, probe_triples)?;
            let eps = roundtrip_epsilon(&stack.encoder, stack.decoder.as_ref().unwrap(), &preds)?;
            let diag = collapse_diagnostics(&stack.encoder, &probe_obs)?;
            rows.push(TrainLogRow {
                step,
                latent_loss: lat.value,
                gen_loss: gen.value,
                roundtrip_eps: eps,
                mean_std: diag.mean_std(),
                effective_rank: diag.effective_rank,
            });
        }
    }

    let stack = stack_views(&specs, &params, probe_params.as_ref());
    let final_report = collapse_diagnostics(&stack.encoder, &probe_obs)?;
    let (decoder_mse, baseline_mse) = decoder_mse_vs_baseline(&stack, dataset)?;
    Ok(GlpTrainOutcome {
        stack,
        init_mean_std,
        final_mean_std: final_report.mean_std(),
        decoder_mse,
        baseline_mse,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Collapse demo
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct CollapseSeedOutcome {
    pub seed: u64,
    pub latent: GlpTrainOutcome,
    pub generative: GlpTrainOutcome,
}

impl CollapseSeedOutcome {
    pub fn latent_collapsed(&self) -> bool {
        self.latent.final_mean_std < 0.01 * self.latent.init_mean_std
    }

    pub fn generative_healthy(&self) -> bool {
        self.generative.decoder_mse <= 0.5 * self.generative.baseline_mse
            && self.generative.final_mean_std >= 0.1 * self.generative.init_mean_std
    }
}

pub fn run_collapse_seed(cfg: &ExperimentConfig, seed: u64) -> Result<CollapseSeedOutcome> {
    let env = build_env(&cfg.env);
    let dataset = generate_dataset(&env, &UniformRandomPolicy, cfg.train.dataset_size, seed)?;
    let latent = train_glp(
        &dataset,
        env.obs_dim(),
        env.action_dim,
        &cfg.model,
        &cfg.train,
        Objective::Latent,
        seed,
    )?;
    let generative = train_glp(
        &dataset,
        env.obs_dim(),
        env.action_dim,
        &cfg.model,
        &cfg.train,
        Objective::Generative,
        seed,
    )?;
    Ok(CollapseSeedOutcome {
        seed,
        latent,
        generative,
    })
}

// ---------------------------------------------------------------------------
// Bound check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BoundBatchRow {
    pub case: &'static str,
    pub batch: usize,
    pub latent_loss: f64,
    pub gen_loss: f64,
    pub roundtrip_eps: f64,
    pub gap: f64,
    pub bound_satisfied: bool,
}

#[derive(Debug)]
pub struct BoundCheckOutcome {
    pub rows: Vec<BoundBatchRow>,
    pub max_equality_gap: f64,
    pub all_bounds_hold: bool,
}

pub fn run_bound_check(bound: &BoundSection, seed: u64) -> Result<BoundCheckOutcome> {
    let action_dim = 2usize;
    let (h, g) = make_isometry_autoencoder(bound.latent_dim, bound.obs_dim, seed)?;
    let q = match &g {
        DecoderModel::Isometry { q } => q.clone(),
        _ => unreachable!(),
    };
    let root = Rng::new(seed);
    let mut rows = Vec::new();
    let mut max_equality_gap: f64 = 0.0;
    let mut all_bounds_hold = true;

    // Equality case: linear f, data generated inside the decoder image.
    let f_lin = {
        let mut rng = root.child("f-affine");
        let spec = MlpSpec::affine(bound.latent_dim + action_dim, bound.latent_dim);
        let params = spec.init_params(&mut rng);
        WorldModelFn::Parametric { spec, params }
    };
    let mut rng = root.child("equality-data");
    for b in 0..bound.batches {
        let batch: Vec<TransitionTriple> = (0..bound.batch_size)
            .map(|_| {
                let u: Vec<f64> = (0..bound.latent_dim).map(|_| rng.normal()).collect();
                let u_next: Vec<f64> = (0..bound.latent_dim).map(|_| rng.normal()).collect();
                let decode = |s: &[f64]| -> Vec<f64> {
                    let (rows_q, cols_q) = (q.shape()[0], q.shape()[1]);
                    let mut o = vec![0.0; rows_q];
                    for i in 0..rows_q {
                        for j in 0..cols_q {
                            o[i] += q.data()[i * cols_q + j] * s[j];
                        }
                    }
                    o
                };
                TransitionTriple {
                    obs: decode(&u),
                    action: Action::Continuous((0..action_dim).map(|_| rng.normal()).collect()),
                    obs_next: decode(&u_next),
                }
            })
            .collect();
        let report = surrogate_bound_report(&h, &f_lin, &g, &batch)?;
        let equality_gap = (report.latent_loss - report.gen_loss).abs();
        max_equality_gap = max_equality_gap.max(equality_gap);
        all_bounds_hold &= report.bound_satisfied;
        rows.push(BoundBatchRow {
            case: "equality",
            batch: b,
            latent_loss: report.latent_loss,
            gen_loss: report.gen_loss,
            roundtrip_eps: report.roundtrip_epsilon,
            gap: report.gap,
            bound_satisfied: report.bound_satisfied,
        });
    }

    // Bound case: arbitrary nonlinear f, triples not confined to the image.
    let f_mlp = {
        let mut rng = root.child("f-mlp");
        let spec = MlpSpec::new(
            vec![bound.latent_dim + action_dim, 32, 32, bound.latent_dim],
            Activation::Tanh,
        );
        let params = spec.init_params(&mut rng);
        WorldModelFn::Parametric { spec, params }
    };
    let mut rng = root.child("bound-data");
    for b in 0..bound.batches {
        let batch: Vec<TransitionTriple> = (0..bound.batch_size)
            .map(|_| TransitionTriple {
                obs: (0..bound.obs_dim).map(|_| rng.normal() * 2.0).collect(),
                action: Action::Continuous((0..action_dim).map(|_| rng.normal()).collect()),
                obs_next: (0..bound.obs_dim).map(|_| rng.normal() * 2.0).collect(),
            })
            .collect();
        let report = surrogate_bound_report(&h, &f_mlp, &g, &batch)?;
        all_bounds_hold &= report.bound_satisfied;
        rows.push(BoundBatchRow {
            case: "bound",
            batch: b,
            latent_loss: report.latent_loss,
            gen_loss: report.gen_loss,
            roundtrip_eps: report.roundtrip_epsilon,
            gap: report.gap,
            bound_satisfied: report.bound_satisfied,
        });
    }

    Ok(BoundCheckOutcome {
        rows,
        max_equality_gap,
        all_bounds_hold,
    })
}

// ---------------------------------------------------------------------------
// Codec bench
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CodecBenchRow {
    pub spec: CodecSpec,
    pub trials: usize,
    pub violations: u64,
}

pub fn run_codec_bench(codec: &CodecSection, seed: u64) -> Result<Vec<CodecBenchRow>> {
    let mut rows = Vec::new();
    for &t in &codec.t_list {
        for &d in &codec.d_list {
            for &eps in &codec.eps_tilde_list {
                for mode in [CodecMode::ScaleUp, CodecMode::ScaleOut] {
                    let m = match mode {
                        CodecMode::ScaleUp => None,
                        CodecMode::ScaleOut => Some(codec.m),
                    };
                    let spec = build_codec(mode, t, d, codec.k_tilde, eps, m)?;
                    let violations = verify_distinguishability(&spec, codec.trials, seed)?;
                    rows.push(CodecBenchRow {
                        spec,
                        trials: codec.trials,
                        violations,
                    });
                }
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Closed-loop planning
// ---------------------------------------------------------------------------

pub fn make_planner(
    cfg: &PlannerSection,
    action_dim: usize,
    bound: f64,
) -> Result<Box<dyn Planner>> {
    let mut planner_cfg = PlannerConfig::new(action_dim, -bound, bound);
    planner_cfg.horizon = cfg.horizon;
    planner_cfg.population = cfg.population;
    planner_cfg.elites = cfg.elites;
    planner_cfg.iterations = cfg.iterations;
    planner_cfg.lambda = cfg.lambda;
    planner_cfg.gamma = cfg.gamma;
    planner_cfg.mppi_noise_std = cfg.mppi_noise_std;
    Ok(match cfg.kind.as_str() {
        "mppi" => Box::new(MppiPlanner::new(planner_cfg)?),
        _ => Box::new(CemPlanner::new(planner_cfg)?),
    })
}

#[derive(Debug)]
pub struct PlanSeedOutcome {
    pub seed: u64,
    pub record: TrajectoryRecord,
    pub final_distance: f64,
    pub mean_plan_ms: f64,
}

pub fn run_plan_seed(cfg: &ExperimentConfig, seed: u64) -> Result<PlanSeedOutcome> {
    let env = build_env(&cfg.env);
    let stack = oracle_stack(&env);
    let cost = CostFunction::encoded_goal(&stack.encoder, &goal_observation(&env))?;
    let mut planner = make_planner(&cfg.planner, env.action_dim, cfg.env.action_bound)?;
    let record = mpc_execute(
        &env,
        &stack,
        planner.as_mut(),
        &cost,
        cfg.planner.steps,
        seed,
    )?;
    let final_distance = record.final_distance.unwrap_or(f64::NAN);
    let mean_plan_ms = mean(&record.plan_ms);
    Ok(PlanSeedOutcome {
        seed,
        record,
        final_distance,
        mean_plan_ms,
    })
}

/// Discounted return along an MPC trajectory, state rewards from step 0.
pub fn trajectory_return(
    env: &dyn Environment,
    record: &TrajectoryRecord,
    schedule: &DiscountSchedule,
) -> f64 {
    let goal = env.goal();
    record
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| schedule.factor(k) * env.reward(goal, s))
        .sum()
}

// ---------------------------------------------------------------------------
// Dream training vs MPC
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DreamSeedRow {
    pub seed: u64,
    pub oracle_return: f64,
    pub dream_return: f64,
    pub random_return: f64,
    pub collapsed_return: f64,
}

#[derive(Debug)]
pub struct DreamTrainOutcome {
    pub rows: Vec<DreamSeedRow>,
    pub mean_oracle: f64,
    pub mean_dream: f64,
    pub mean_random: f64,
    pub mean_collapsed: f64,
    pub normalized_dream_score: f64,
    pub collapsed_vs_random_p: f64,
    pub env_calls_during_training: u64,
    pub mean_mpc_decision_ms: f64,
    pub mean_policy_decision_ms: f64,
}

pub fn run_dream_train(cfg: &ExperimentConfig) -> Result<DreamTrainOutcome> {
    let env = build_env(&cfg.env);
    let goal_obs = goal_observation(&env);
    let schedule = DiscountSchedule::geometric(cfg.planner.gamma)?;

    // One generative-trained world model, fixed seed, shared across the
    // policy seeds.
    let wm_seed = cfg.seeds.first().copied().unwrap_or(0) ^ 0x57a9_1e55;
    let dataset = generate_dataset(&env, &UniformRandomPolicy, cfg.train.dataset_size, wm_seed)?;
    let trained = train_glp(
        &dataset,
        env.obs_dim(),
        env.action_dim,
        &cfg.model,
        &cfg.train,
        Objective::Generative,
        wm_seed,
    )?;
    let stack = trained.stack;

    let start_count = cfg.dream.start_beliefs.min(dataset.len());
    let start_beliefs: Vec<Belief> = dataset[..start_count]
        .iter()
        .map(|t| stack.encoder.encode(&t.obs))
        .collect::<Result<_>>()?;
    let goal_belief = stack.encoder.encode(&goal_obs)?;
    let reward = BeliefReward::NegSquaredDistance {
        goal: goal_belief.clone(),
    };

    let dream_cfg = DreamTrainConfig {
        iterations: cfg.dream.iterations,
        rollouts_per_iter: cfg.dream.rollouts,
        horizon: cfg.dream.horizon,
        learning_rate: cfg.dream.lr,
        sigma_init: cfg.dream.sigma_init,
        sigma_final: cfg.dream.sigma_final,
    };

    let oracle = oracle_stack(&env);
    let oracle_cost = CostFunction::encoded_goal(&oracle.encoder, &goal_obs)?;

    let collapsed_belief = vec![0.0; cfg.model.latent_dim];
    let (col_h, col_f) = make_degenerate_pair(collapsed_belief.clone());
    let collapsed_stack = WorldModelStack::new(col_h, col_f, None);
    let collapsed_reward = BeliefReward::NegSquaredDistance {
        goal: goal_belief.clone(),
    };
    let collapsed_starts = vec![collapsed_belief; 1];

    let mut rows = Vec::new();
    let mut env_calls_during_training = 0u64;
    let mut mpc_ms_total = 0.0;
    let mut policy_ms_total = 0.0;

    for &seed in &cfg.seeds {
        // Oracle MPC return.
        let mut planner = make_planner(&cfg.planner, env.action_dim, cfg.env.action_bound)?;
        let record = mpc_execute(
            &env,
            &oracle,
            planner.as_mut(),
            &oracle_cost,
            cfg.dream.eval_horizon,
            seed,
        )?;
        let oracle_return = trajectory_return(&env, &record, &schedule);
        mpc_ms_total += mean(&record.plan_ms);

        // Dream-trained policy; the instrumented wrapper proves the true
        // environment is untouched while training runs.
        let watched = InstrumentedEnv::new(&env);
        let policy0 = Policy::zero_linear_gaussian(
            cfg.model.latent_dim,
            env.action_dim,
            -cfg.env.action_bound,
            cfg.env.action_bound,
            cfg.dream.sigma_init,
        );
        let (dream_policy, _stats) = train_policy_in_dream(
            &stack,
            policy0,
            &reward,
            &start_beliefs,
            &schedule,
            &dream_cfg,
            seed,
        )?;
        env_calls_during_training += watched.step_calls() + watched.observe_calls();

        let started = Instant::now();
        let mut decision_count = 0u32;
        for b in start_beliefs.iter().take(50) {
            let _ = dream_policy.sample(b, &mut Rng::new(seed));
            decision_count += 1;
        }
        policy_ms_total += started.elapsed().as_secs_f64() * 1e3 / decision_count as f64;

        let dream_return = evaluate_policy(
            &env,
            Some(&stack.encoder),
            &dream_policy,
            cfg.dream.eval_episodes,
            cfg.dream.eval_horizon,
            &schedule,
            seed ^ 0xe7a1,
        )?;

        // Random baseline: an untrained policy of the same family, deployed
        // at the same exploration level the training procedure ends with so
        // the comparison isolates parameter quality.
        let mut random_policy = Policy::zero_linear_gaussian(
            cfg.model.latent_dim,
            env.action_dim,
            -cfg.env.action_bound,
            cfg.env.action_bound,
            cfg.dream.sigma_init,
        );
        random_policy.set_sigma(cfg.dream.sigma_final);
        let random_return = evaluate_policy(
            &env,
            Some(&stack.encoder),
            &random_policy,
            cfg.dream.eval_episodes,
            cfg.dream.eval_horizon,
            &schedule,
            (seed + 1000) ^ 0xe7a1,
        )?;

        // Same training procedure inside the collapsed world model.
        let collapsed_policy0 = Policy::zero_linear_gaussian(
            cfg.model.latent_dim,
            env.action_dim,
            -cfg.env.action_bound,
            cfg.env.action_bound,
            cfg.dream.sigma_init,
        );
        let (collapsed_policy, _) = train_policy_in_dream(
            &collapsed_stack,
            collapsed_policy0,
            &collapsed_reward,
            &collapsed_starts,
            &schedule,
            &dream_cfg,
            seed,
        )?;
        let collapsed_return = evaluate_policy(
            &env,
            Some(&stack.encoder),
            &collapsed_policy,
            cfg.dream.eval_episodes,
            cfg.dream.eval_horizon,
            &schedule,
            (seed + 2000) ^ 0xe7a1,
        )?;

        rows.push(DreamSeedRow {
            seed,
            oracle_return,
            dream_return,
            random_return,
            collapsed_return,
        });
    }

    let oracle_returns: Vec<f64> = rows.iter().map(|r| r.oracle_return).collect();
    let dream_returns: Vec<f64> = rows.iter().map(|r| r.dream_return).collect();
    let random_returns: Vec<f64> = rows.iter().map(|r| r.random_return).collect();
    let collapsed_returns: Vec<f64> = rows.iter().map(|r| r.collapsed_return).collect();

    let mean_oracle = mean(&oracle_returns);
    let mean_dream = mean(&dream_returns);
    let mean_random = mean(&random_returns);
    let mean_collapsed = mean(&collapsed_returns);

    Ok(DreamTrainOutcome {
        normalized_dream_score: normalized_score(mean_dream, mean_random, mean_oracle),
        collapsed_vs_random_p: rank_sum_p_two_sided(&collapsed_returns, &random_returns),
        mean_oracle,
        mean_dream,
        mean_random,
        mean_collapsed,
        env_calls_during_training,
        mean_mpc_decision_ms: mpc_ms_total / cfg.seeds.len() as f64,
        mean_policy_decision_ms: policy_ms_total / cfg.seeds.len() as f64,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Gradient-check suite
// ---------------------------------------------------------------------------

/// Max relative error over `n_compositions` randomized primitive compositions
/// plus gradient checks through each small model family.
pub fn gradient_check_suite(n_compositions: usize, seed: u64) -> Result<f64> {
    let root = Rng::new(seed);
    let mut worst: f64 = 0.0;

    for i in 0..n_compositions {
        let mut rng = root.child_indexed("composition", i as u64);
        let (params, plan) = random_composition(&mut rng);
        let plan_ref = &plan;
        let err = check_gradient(
            move |tape, vars| apply_plan(tape, vars, plan_ref),
            &params,
            1e-5,
        )?;
        worst = worst.max(err);
    }

    // Model families at audit-friendly sizes.
    let mut rng = root.child("families");
    let h_spec = MlpSpec::new(vec![4, 8, 3], Activation::Tanh);
    let f_spec = MlpSpec::new(vec![5, 8, 3], Activation::Tanh);
    let g_spec = MlpSpec::new(vec![3, 8, 4], Activation::Tanh);

    let mut params = prefixed(&h_spec.init_params(&mut rng), "h.");
    params.absorb(prefixed(&f_spec.init_params(&mut rng), "f."))?;
    params.absorb(prefixed(&g_spec.init_params(&mut rng), "g."))?;

    let o = Tensor::matrix(6, 4, (0..24).map(|_| rng.uniform_in(-1.0, 1.0)).collect())?;
    let a = Tensor::matrix(6, 2, (0..12).map(|_| rng.uniform_in(-1.0, 1.0)).collect())?;
    let op = Tensor::matrix(6, 4, (0..24).map(|_| rng.uniform_in(-1.0, 1.0)).collect())?;

    // Latent pipeline.
    let (oc, ac, opc) = (o.clone(), a.clone(), op.clone());
    let (h2, f2) = (h_spec.clone(), f_spec.clone());
    let err = check_gradient(
        move |tape, vars| {
            let o_in = tape.constant(oc.clone())?;
            let a_in = tape.constant(ac.clone())?;
            let op_in = tape.constant(opc.clone())?;
            let s = h2.forward_batch_tape(tape, vars, "h.", o_in)?;
            let sa = tape.concat_cols(s, a_in)?;
            let pred = f2.forward_batch_tape(tape, vars, "f.", sa)?;
            let target = h2.forward_batch_tape(tape, vars, "h.", op_in)?;
            tape.mse(pred, target)
        },
        &params,
        1e-5,
    )?;
    worst = worst.max(err);

    // Generative pipeline.
    let (oc, ac, opc) = (o.clone(), a.clone(), op.clone());
    let (h2, f2, g2) = (h_spec.clone(), f_spec.clone(), g_spec.clone());
    let err = check_gradient(
        move |tape, vars| {
            let o_in = tape.constant(oc.clone())?;
            let a_in = tape.constant(ac.clone())?;
            let op_in = tape.constant(opc.clone())?;
            let s = h2.forward_batch_tape(tape, vars, "h.", o_in)?;
            let sa = tape.concat_cols(s, a_in)?;
            let pred = f2.forward_batch_tape(tape, vars, "f.", sa)?;
            let recon = g2.forward_batch_tape(tape, vars, "g.", pred)?;
            tape.mse(recon, op_in)
        },
        &params,
        1e-5,
    )?;
    worst = worst.max(err);

    Ok(worst)
}

#[derive(Debug, Clone)]
enum PlanOp {
    Tanh,
    Square,
    Scale(f64),
    AddConst(Tensor),
    MulConst(Tensor),
    Relu,
    ExpOfTanh,
    LogOfSquarePlusOne,
    AddParam(usize),
}

fn apply_plan(tape: &mut Tape, vars: &VarSet, plan: &[PlanOp]) -> Result<Var> {
    let mut current = vars.vars()[0];
    for op in plan {
        current = match op {
            PlanOp::Tanh => tape.tanh(current)?,
            PlanOp::Square => tape.square(current)?,
            PlanOp::Scale(k) => tape.scale(current, *k)?,
            PlanOp::AddConst(t) => {
                let c = tape.constant(t.clone())?;
                tape.add(current, c)?
            }
            PlanOp::MulConst(t) => {
                let c = tape.constant(t.clone())?;
                tape.mul(current, c)?
            }
            PlanOp::Relu => tape.relu(current)?,
            PlanOp::ExpOfTanh => {
                let t = tape.tanh(current)?;
                tape.exp(t)?
            }
            PlanOp::LogOfSquarePlusOne => {
                let sq = tape.square(current)?;
                let shape = tape.value(sq).shape().to_vec();
                let n = tape.value(sq).numel();
                let ones = tape.constant(Tensor::new(shape, vec![1.0; n])?)?;
                let shifted = tape.add(sq, ones)?;
                tape.log(shifted)?
            }
            PlanOp::AddParam(idx) => tape.add(current, vars.vars()[*idx])?,
        };
    }
    tape.mean(current)
}

/// Random primitive composition with known-safe domains. Relu is only placed
/// where the running values keep a margin from its kink, so finite
/// differences stay valid.
fn random_composition(rng: &mut Rng) -> (ParamSet, Vec<PlanOp>) {
    let shape: Vec<usize> = match rng.index(3) {
        0 => vec![],
        1 => vec![2 + rng.index(3)],
        _ => vec![2 + rng.index(2), 2 + rng.index(2)],
    };
    let numel: usize = shape.iter().product::<usize>().max(1);
    let n_params = 1 + rng.index(2);
    let mut params = ParamSet::new();
    for p in 0..n_params {
        let data: Vec<f64> = (0..numel).map(|_| rng.uniform_in(-1.5, 1.5)).collect();
        params
            .insert(&format!("p{p}"), Tensor::new(shape.clone(), data).unwrap())
            .unwrap();
    }

    let mut values: Vec<f64> = params.get("p0").unwrap().data().to_vec();
    let mut plan = Vec::new();
    let n_ops = 2 + rng.index(4);
    for _ in 0..n_ops {
        let choice = rng.index(8);
        let op = match choice {
            0 => {
                values = values.iter().map(|v| v.tanh()).collect();
                PlanOp::Tanh
            }
            1 => {
                values = values.iter().map(|v| v * v).collect();
                PlanOp::Square
            }
            2 => {
                let k = rng.uniform_in(-0.9, 0.9);
                values = values.iter().map(|v| k * v).collect();
                PlanOp::Scale(k)
            }
            3 => {
                let data: Vec<f64> = (0..numel).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                values = values.iter().zip(&data).map(|(v, c)| v + c).collect();
                PlanOp::AddConst(Tensor::new(shape.clone(), data).unwrap())
            }
            4 => {
                let data: Vec<f64> = (0..numel).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                values = values.iter().zip(&data).map(|(v, c)| v * c).collect();
                PlanOp::MulConst(Tensor::new(shape.clone(), data).unwrap())
            }
            5 => {
                if values.iter().any(|v| v.abs() < 1e-3) {
                    values = values.iter().map(|v| v.tanh()).collect();
                    PlanOp::Tanh
                } else {
                    values = values.iter().map(|v| v.max(0.0)).collect();
                    PlanOp::Relu
                }
            }
            6 => {
                values = values.iter().map(|v| v.tanh().exp()).collect();
                PlanOp::ExpOfTanh
            }
            _ => {
                if n_params > 1 && rng.uniform() < 0.5 {
                    let idx = 1 + rng.index(n_params - 1);
                    let other = params.get(&format!("p{idx}")).unwrap().data().to_vec();
                    values = values.iter().zip(&other).map(|(v, o)| v + o).collect();
                    PlanOp::AddParam(idx)
                } else {
                    values = values.iter().map(|v| (v * v + 1.0).ln()).collect();
                    PlanOp::LogOfSquarePlusOne
                }
            }
        };
        plan.push(op);
    }
    (params, plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::with_kind(super::super::ExperimentKind::CollapseDemo);
        cfg.model.latent_dim = 4;
        cfg.model.hidden_width = 8;
        cfg.train.steps = 120;
        cfg.train.batch_size = 16;
        cfg.train.dataset_size = 512;
        cfg.train.probe_size = 128;
        cfg.train.log_every = 40;
        cfg
    }

    #[test]
    fn std_hinge_regularizer_slows_collapse() {
        let cfg = tiny_cfg();
        let env = build_env(&cfg.env);
        let dataset = generate_dataset(&env, &UniformRandomPolicy, 512, 3).unwrap();
        let plain = train_glp(
            &dataset,
            env.obs_dim(),
            env.action_dim,
            &cfg.model,
            &cfg.train,
            Objective::Latent,
            5,
        )
        .unwrap();
        let mut reg_cfg = cfg.train.clone();
        reg_cfg.regularizer_weight = 10.0;
        let regularized = train_glp(
            &dataset,
            env.obs_dim(),
            env.action_dim,
            &cfg.model,
            &reg_cfg,
            Objective::Latent,
            5,
        )
        .unwrap();
        assert!(
            regularized.final_mean_std > 2.0 * plain.final_mean_std,
            "regularizer had no effect: {} vs {}",
            regularized.final_mean_std,
            plain.final_mean_std
        );
    }

    #[test]
    fn training_logs_cover_first_and_last_steps() {
        let cfg = tiny_cfg();
        let env = build_env(&cfg.env);
        let dataset = generate_dataset(&env, &UniformRandomPolicy, 512, 4).unwrap();
        let out = train_glp(
            &dataset,
            env.obs_dim(),
            env.action_dim,
            &cfg.model,
            &cfg.train,
            Objective::Generative,
            6,
        )
        .unwrap();
        assert_eq!(out.rows.first().unwrap().step, 0);
        assert_eq!(out.rows.last().unwrap().step, cfg.train.steps - 1);
        assert!(out.baseline_mse > 0.0);
        assert!(out.decoder_mse.is_finite());
    }

    #[test]
    fn make_planner_rejects_bad_sections() {
        let mut section = PlannerSection::default();
        section.elites = section.population + 1;
        assert!(make_planner(&section, 2, 1.0).is_err());
    }

    #[test]
    fn gradient_suite_stays_tight_across_seeds() {
        for seed in [0u64, 1, 2] {
            let err = gradient_check_suite(10, seed).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
