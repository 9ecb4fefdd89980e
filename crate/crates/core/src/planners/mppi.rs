//! Path-integral planner: noise-perturbed rollouts around a nominal plan,
//! exponentially cost-weighted averaging, and warm-started replanning.

use super::{rollout_cost, CostFunction, PlanResult, Planner, PlannerConfig};
use crate::error::{Error, Result};
use crate::models::WorldModelStack;
use crate::rng::Rng;

/// Normalized weights proportional to exp(-(cost - min_cost) / lambda).
/// Subtracting the minimum makes the weights invariant to shifting every cost
/// by a constant.
pub fn mppi_weights(costs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if lambda <= 0.0 {
        return Err(Error::InvalidParam("lambda must be positive".into()));
    }
    if costs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let unnorm: Vec<f64> = costs.iter().map(|c| (-(c - min) / lambda).exp()).collect();
    let sum: f64 = unnorm.iter().sum();
    Ok(unnorm.iter().map(|w| w / sum).collect())
}

#[derive(Debug, Clone)]
pub struct MppiPlanner {
    pub cfg: PlannerConfig,
    nominal: Option<Vec<Vec<f64>>>,
}

impl MppiPlanner {
    pub fn new(cfg: PlannerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MppiPlanner { cfg, nominal: None })
    }
}

impl Planner for MppiPlanner {
    fn plan(
        &mut self,
        stack: &WorldModelStack,
        obs: &[f64],
        cost: &CostFunction,
        rng: &mut Rng,
    ) -> Result<PlanResult> {
        let cfg = &self.cfg;
        let start = stack.encoder.encode(obs)?;
        let (h, a_dim) = (cfg.horizon, cfg.action_dim);
        let mut nominal = self
            .nominal
            .take()
            .unwrap_or_else(|| vec![vec![cfg.mid_action(); a_dim]; h]);

        let mut iter_best_costs = Vec::with_capacity(cfg.iterations);
        let mut best_cost = f64::INFINITY;
        for iter in 0..cfg.iterations {
            // Anneal the perturbation noise so iterated averaging settles
            // instead of jittering at the sampling-noise scale.
            let noise = cfg.mppi_noise_std * cfg.std_decay.powi(iter as i32);
            let mut candidates: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.population);
            let mut costs: Vec<f64> = Vec::with_capacity(cfg.population);
            for _ in 0..cfg.population {
                let cand: Vec<Vec<f64>> = nominal
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|&u| {
                                (u + noise * rng.normal()).clamp(cfg.action_lo, cfg.action_hi)
                            })
                            .collect()
                    })
                    .collect();
                let (c, _) = rollout_cost(stack, &start, &cand, cost)?;
                candidates.push(cand);
                costs.push(c);
            }
            best_cost = best_cost.min(costs.iter().cloned().fold(f64::INFINITY, f64::min));
            iter_best_costs.push(best_cost);

            let weights = mppi_weights(&costs, cfg.lambda)?;
            let mut averaged = vec![vec![0.0; a_dim]; h];
            for (cand, w) in candidates.iter().zip(&weights) {
                for k in 0..h {
                    for j in 0..a_dim {
                        averaged[k][j] += w * cand[k][j];
                    }
                }
            }
            nominal = averaged;
        }

        let (total_cost, predicted_beliefs) = rollout_cost(stack, &start, &nominal, cost)?;

        // Warm start the next decision: shift the plan one step left.
        let mut shifted = nominal[1..].to_vec();
        shifted.push(vec![cfg.mid_action(); a_dim]);
        self.nominal = Some(shifted);

        Ok(PlanResult {
            actions: nominal.clone(),
            predicted_beliefs,
            total_cost,
            iter_best_costs,
            proposal_mean: nominal,
        })
    }

    fn reset(&mut self) {
        self.nominal = None;
    }
}

/// One-shot MPPI plan from a fresh planner.
pub fn plan_mppi(
    stack: &WorldModelStack,
    obs: &[f64],
    cost: &CostFunction,
    cfg: &PlannerConfig,
    seed: u64,
) -> Result<PlanResult> {
    let mut planner = MppiPlanner::new(cfg.clone())?;
    let mut rng = Rng::new(seed).child("mppi");
    planner.plan(stack, obs, cost, &mut rng)
}
