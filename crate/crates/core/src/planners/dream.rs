//! Policy-gradient training on rollouts generated entirely by the world
//! model. The true environment is never queried: rollouts start from
//! pre-encoded beliefs and evolve through f alone.

use super::{softmax, BeliefReward, Policy};
use crate::envs::{Action, DiscountSchedule};
use crate::error::{Error, Result};
use crate::models::{Belief, WorldModelStack};
use crate::numerics::{AdamState, ParamSet, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct DreamTrainConfig {
    pub iterations: usize,
    pub rollouts_per_iter: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    /// Gaussian exploration std, annealed linearly across iterations.
    pub sigma_init: f64,
    pub sigma_final: f64,
}

impl Default for DreamTrainConfig {
    fn default() -> Self {
        DreamTrainConfig {
            iterations: 3000,
            rollouts_per_iter: 48,
            horizon: 6,
            learning_rate: 0.05,
            sigma_init: 0.4,
            sigma_final: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DreamTrainStats {
    /// Mean discounted dream return per training iteration.
    pub mean_return_per_iter: Vec<f64>,
}

struct StepRecord {
    belief: Belief,
    /// Pre-clip Gaussian sample (continuous) or chosen index (discrete).
    raw_action: Vec<f64>,
    discrete_action: usize,
    /// gamma^{t+1} r(s_{t+1})
    discounted_reward: f64,
}

/// Score-function (likelihood-ratio) policy gradient with a mean-return
/// baseline, on trajectories rolled out entirely inside the world model.
pub fn train_policy_in_dream(
    stack: &WorldModelStack,
    mut policy: Policy,
    reward: &BeliefReward,
    start_beliefs: &[Belief],
    schedule: &DiscountSchedule,
    cfg: &DreamTrainConfig,
    seed: u64,
) -> Result<(Policy, DreamTrainStats)> {
    if cfg.horizon == 0 {
        return Err(Error::InvalidParam("dream horizon must be >= 1".into()));
    }
    if cfg.rollouts_per_iter == 0 || cfg.iterations == 0 {
        return Err(Error::InvalidParam(
            "dream training needs iterations and rollouts".into(),
        ));
    }
    if start_beliefs.is_empty() {
        return Err(Error::InvalidParam("need at least one start belief".into()));
    }
    let root = Rng::new(seed);
    let mut stats = DreamTrainStats {
        mean_return_per_iter: Vec::with_capacity(cfg.iterations),
    };
    let mut params = policy_params(&policy);
    let mut adam = AdamState::new(&params);
    adam.lr = cfg.learning_rate;

    for iter in 0..cfg.iterations {
        let frac = if cfg.iterations > 1 {
            iter as f64 / (cfg.iterations - 1) as f64
        } else {
            0.0
        };
        policy.set_sigma(cfg.sigma_init + frac * (cfg.sigma_final - cfg.sigma_init));
        adam.lr = cfg.learning_rate * 0.1f64.powf(frac);

        let mut rng = root.child_indexed("dream-iter", iter as u64);
        let mut trajectories: Vec<Vec<StepRecord>> = Vec::with_capacity(cfg.rollouts_per_iter);
        for _ in 0..cfg.rollouts_per_iter {
            let mut belief = start_beliefs[rng.index(start_beliefs.len())].clone();
            let mut steps = Vec::with_capacity(cfg.horizon);
            for t in 0..cfg.horizon {
                let (raw, discrete, executed) = sample_with_raw(&policy, &belief, &mut rng);
                let next = stack.model.predict(&belief, &executed)?;
                let r = reward.reward(&next);
                steps.push(StepRecord {
                    belief,
                    raw_action: raw,
                    discrete_action: discrete,
                    discounted_reward: schedule.factor(t + 1) * r,
                });
                let terminal = reward.is_terminal(&next);
                belief = next;
                if terminal {
                    break;
                }
            }
            trajectories.push(steps);
        }

        // Reward-to-go from each step.
        let returns_to_go: Vec<Vec<f64>> = trajectories
            .iter()
            .map(|traj| {
                let mut g = vec![0.0; traj.len()];
                let mut acc = 0.0;
                for t in (0..traj.len()).rev() {
                    acc += traj[t].discounted_reward;
                    g[t] = acc;
                }
                g
            })
            .collect();
        stats.mean_return_per_iter.push(
            returns_to_go
                .iter()
                .map(|g| g.first().copied().unwrap_or(0.0))
                .sum::<f64>()
                / cfg.rollouts_per_iter as f64,
        );

        // Per-step mean-return baseline over the rollouts still alive at t.
        let max_len = returns_to_go.iter().map(Vec::len).max().unwrap_or(0);
        let mut baseline = vec![0.0; max_len];
        let mut alive = vec![0usize; max_len];
        for g in &returns_to_go {
            for (t, v) in g.iter().enumerate() {
                baseline[t] += v;
                alive[t] += 1;
            }
        }
        for (b, a) in baseline.iter_mut().zip(&alive) {
            if *a > 0 {
                *b /= *a as f64;
            }
        }

        // Scale-normalize the advantages: the latent reward magnitudes vary
        // across world models by orders of magnitude.
        let mut adv_sq = 0.0;
        let mut adv_n = 0usize;
        for (gs, traj) in returns_to_go.iter().zip(&trajectories) {
            for (t, _) in traj.iter().enumerate() {
                let a = gs[t] - baseline[t];
                adv_sq += a * a;
                adv_n += 1;
            }
        }
        let adv_std = (adv_sq / adv_n.max(1) as f64).sqrt();

        // No spread in returns means no learning signal (a reward-blind
        // world model, or a fully converged deterministic one); normalizing
        // would only amplify float rounding dust into drift.
        let return_scale = baseline.first().map(|b| b.abs()).unwrap_or(0.0);
        if adv_std <= 1e-9 * return_scale.max(1.0) {
            continue;
        }

        // Ascent step on the likelihood-ratio gradient, normalized by the
        // adaptive-moment optimizer for stable step sizes.
        let mut descent = policy_gradient(
            &policy,
            &trajectories,
            &returns_to_go,
            &baseline,
            adv_std,
            cfg.rollouts_per_iter,
        );
        negate_in_place(&mut descent);
        adam.step(&mut params, &descent)?;
        write_back(&mut policy, &params);
    }

    Ok((policy, stats))
}

fn negate_in_place(grads: &mut ParamSet) {
    let names: Vec<String> = grads.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        for v in grads.get_mut(&name).unwrap().data_mut() {
            *v = -*v;
        }
    }
}

fn policy_params(policy: &Policy) -> ParamSet {
    let mut params = ParamSet::new();
    match policy {
        Policy::LinearGaussian {
            weights,
            bias,
            belief_dim,
            action_dim,
            ..
        } => {
            params
                .insert(
                    "w",
                    Tensor::matrix(*belief_dim, *action_dim, weights.clone()).unwrap(),
                )
                .unwrap();
            params.insert("b", Tensor::vector(bias.clone())).unwrap();
        }
        Policy::TabularSoftmax { logits } => {
            let rows = logits.len();
            let cols = logits[0].len();
            let flat: Vec<f64> = logits.iter().flatten().copied().collect();
            params
                .insert("logits", Tensor::matrix(rows, cols, flat).unwrap())
                .unwrap();
        }
    }
    params
}

fn write_back(policy: &mut Policy, params: &ParamSet) {
    match policy {
        Policy::LinearGaussian { weights, bias, .. } => {
            weights.copy_from_slice(params.get("w").unwrap().data());
            bias.copy_from_slice(params.get("b").unwrap().data());
        }
        Policy::TabularSoftmax { logits } => {
            let flat = params.get("logits").unwrap().data();
            let cols = logits[0].len();
            for (i, row) in logits.iter_mut().enumerate() {
                row.copy_from_slice(&flat[i * cols..(i + 1) * cols]);
            }
        }
    }
}

fn sample_with_raw(policy: &Policy, belief: &[f64], rng: &mut Rng) -> (Vec<f64>, usize, Action) {
    match policy {
        Policy::LinearGaussian { sigma, lo, hi, .. } => {
            let mean = policy.mean_action(belief);
            let raw: Vec<f64> = mean
                .iter()
                .zip(sigma)
                .map(|(m, s)| m + s * rng.normal())
                .collect();
            let clipped = Action::Continuous(raw.iter().map(|v| v.clamp(*lo, *hi)).collect());
            (raw, 0, clipped)
        }
        Policy::TabularSoftmax { logits } => {
            let state = belief
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let probs = softmax(&logits[state]);
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut choice = probs.len() - 1;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    choice = k;
                    break;
                }
            }
            (vec![], choice, Action::Discrete(choice))
        }
    }
}

/// Mean over rollouts of sum_t grad log pi(a_t | s_t) * (G_t - b_t); the
/// ascent direction.
fn policy_gradient(
    policy: &Policy,
    trajectories: &[Vec<StepRecord>],
    returns_to_go: &[Vec<f64>],
    baseline: &[f64],
    adv_std: f64,
    n_rollouts: usize,
) -> ParamSet {
    let mut grads = policy_params(policy);
    let names: Vec<String> = grads.iter().map(|(n, _)| n.to_string()).collect();
    for name in &names {
        for v in grads.get_mut(name).unwrap().data_mut() {
            *v = 0.0;
        }
    }
    let scale = 1.0 / (n_rollouts as f64 * adv_std);
    match policy {
        Policy::LinearGaussian {
            weights,
            bias,
            sigma,
            belief_dim,
            action_dim,
            ..
        } => {
            let (bd, ad) = (*belief_dim, *action_dim);
            for (traj, gs) in trajectories.iter().zip(returns_to_go) {
                for (t, step) in traj.iter().enumerate() {
                    let adv = gs[t] - baseline[t];
                    if adv == 0.0 {
                        continue;
                    }
                    let mut mean = bias.clone();
                    for i in 0..bd {
                        let si = step.belief[i];
                        if si == 0.0 {
                            continue;
                        }
                        for j in 0..ad {
                            mean[j] += si * weights[i * ad + j];
                        }
                    }
                    for j in 0..ad {
                        let score = (step.raw_action[j] - mean[j]) / (sigma[j] * sigma[j]);
                        let g = score * adv * scale;
                        grads.get_mut("b").unwrap().data_mut()[j] += g;
                        let gw = grads.get_mut("w").unwrap().data_mut();
                        for i in 0..bd {
                            gw[i * ad + j] += step.belief[i] * g;
                        }
                    }
                }
            }
        }
        Policy::TabularSoftmax { logits } => {
            let n_actions = logits[0].len();
            for (traj, gs) in trajectories.iter().zip(returns_to_go) {
                for (t, step) in traj.iter().enumerate() {
                    let adv = gs[t] - baseline[t];
                    if adv == 0.0 {
                        continue;
                    }
                    let state = step
                        .belief
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    let probs = softmax(&logits[state]);
                    let gl = grads.get_mut("logits").unwrap().data_mut();
                    for k in 0..n_actions {
                        let indicator = if k == step.discrete_action { 1.0 } else { 0.0 };
                        gl[state * n_actions + k] += scale * adv * (indicator - probs[k]);
                    }
                }
            }
        }
    }
    grads
}
