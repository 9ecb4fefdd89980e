//! Cross-entropy method over action sequences.

use super::{rollout_cost, CostFunction, PlanResult, Planner, PlannerConfig};
use crate::error::Result;
use crate::models::WorldModelStack;
use crate::rng::Rng;

const STD_FLOOR: f64 = 1e-6;

/// Stateful CEM planner. Within a receding-horizon loop both the proposal
/// mean and the sampling std are warm-started from the previous solution
/// (shifted one step), so replanning precision compounds; the std keeps a
/// small exploration floor and resets fully via `reset`.
#[derive(Debug, Clone)]
pub struct CemPlanner {
    pub cfg: PlannerConfig,
    warm_mean: Option<Vec<Vec<f64>>>,
    warm_std: Option<Vec<Vec<f64>>>,
}

impl CemPlanner {
    pub fn new(cfg: PlannerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(CemPlanner {
            cfg,
            warm_mean: None,
            warm_std: None,
        })
    }

    fn exploration_floor(&self) -> f64 {
        0.02 * (self.cfg.action_hi - self.cfg.action_lo)
    }
}

impl Planner for CemPlanner {
    fn plan(
        &mut self,
        stack: &WorldModelStack,
        obs: &[f64],
        cost: &CostFunction,
        rng: &mut Rng,
    ) -> Result<PlanResult> {
        let floor = self.exploration_floor();
        let cfg = &self.cfg;
        let start = stack.encoder.encode(obs)?;
        let (h, a_dim) = (cfg.horizon, cfg.action_dim);
        let mut mean = self
            .warm_mean
            .take()
            .unwrap_or_else(|| vec![vec![cfg.mid_action(); a_dim]; h]);
        let mut std = self
            .warm_std
            .take()
            .unwrap_or_else(|| vec![vec![cfg.cem_init_std; a_dim]; h]);
        let std_start = std.clone();

        let mut best_seq: Option<Vec<Vec<f64>>> = None;
        let mut best_cost = f64::INFINITY;
        let mut iter_best_costs = Vec::with_capacity(cfg.iterations);

        for iter in 0..cfg.iterations {
            let mut scored: Vec<(f64, Vec<Vec<f64>>)> = Vec::with_capacity(cfg.population + 2);
            while scored.len() < cfg.population {
                let seq: Vec<Vec<f64>> = (0..h)
                    .map(|k| {
                        (0..a_dim)
                            .map(|j| {
                                (mean[k][j] + std[k][j] * rng.normal())
                                    .clamp(cfg.action_lo, cfg.action_hi)
                            })
                            .collect()
                    })
                    .collect();
                let (c, _) = rollout_cost(stack, &start, &seq, cost)?;
                scored.push((c, seq));
            }
            // Elite retention plus the current proposal mean: the best found
            // so far never regresses on a deterministic model, and the mean
            // beats every noisy sample near convergence. Both enter after the
            // samples so that cost ties (a degenerate, signal-free model)
            // resolve to an ordinary random sample.
            if let Some(seq) = &best_seq {
                scored.push((rollout_cost(stack, &start, seq, cost)?.0, seq.clone()));
            }
            let mean_seq: Vec<Vec<f64>> = mean
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|v| v.clamp(cfg.action_lo, cfg.action_hi))
                        .collect()
                })
                .collect();
            scored.push((rollout_cost(stack, &start, &mean_seq, cost)?.0, mean_seq));
            scored.sort_by(|a, b| a.0.total_cmp(&b.0));
            if scored[0].0 < best_cost {
                best_cost = scored[0].0;
                best_seq = Some(scored[0].1.clone());
            }
            iter_best_costs.push(best_cost);

            let elites = &scored[..cfg.elites];
            let decay = cfg.std_decay.powi(iter as i32 + 1);
            for k in 0..h {
                for j in 0..a_dim {
                    let m: f64 =
                        elites.iter().map(|(_, s)| s[k][j]).sum::<f64>() / cfg.elites as f64;
                    let var: f64 = elites
                        .iter()
                        .map(|(_, s)| (s[k][j] - m) * (s[k][j] - m))
                        .sum::<f64>()
                        / cfg.elites as f64;
                    mean[k][j] = m;
                    std[k][j] = var.sqrt().min(std_start[k][j] * decay).max(STD_FLOOR);
                }
            }
        }

        let actions = best_seq.expect("population is nonempty");
        let (total_cost, predicted_beliefs) = rollout_cost(stack, &start, &actions, cost)?;

        let mid = cfg.mid_action();
        let init_std = cfg.cem_init_std;
        let mut shifted_mean = actions[1..].to_vec();
        shifted_mean.push(vec![mid; a_dim]);
        let mut shifted_std: Vec<Vec<f64>> = std[1..]
            .iter()
            .map(|row| row.iter().map(|s| s.max(floor).min(init_std)).collect())
            .collect();
        shifted_std.push(vec![init_std; a_dim]);
        self.warm_mean = Some(shifted_mean);
        self.warm_std = Some(shifted_std);

        Ok(PlanResult {
            actions,
            predicted_beliefs,
            total_cost,
            iter_best_costs,
            proposal_mean: mean,
        })
    }

    fn reset(&mut self) {
        self.warm_mean = None;
        self.warm_std = None;
    }
}

/// One-shot CEM plan from a fresh planner.
pub fn plan_cem(
    stack: &WorldModelStack,
    obs: &[f64],
    cost: &CostFunction,
    cfg: &PlannerConfig,
    seed: u64,
) -> Result<PlanResult> {
    let mut planner = CemPlanner::new(cfg.clone())?;
    let mut rng = Rng::new(seed).child("cem");
    planner.plan(stack, obs, cost, &mut rng)
}
