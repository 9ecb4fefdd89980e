//! Adaptive-moment optimizer with bias correction.

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: ParamSet,
    second_moment: ParamSet,
}

impl AdamState {
    /// Defaults: lr 1e-3, decays (0.9, 0.999), epsilon 1e-8.
    pub fn new(params: &ParamSet) -> Self {
        AdamState::with_hyperparams(params, 1e-3, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(
        params: &ParamSet,
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        let mut m = ParamSet::new();
        let mut v = ParamSet::new();
        for (name, t) in params.iter() {
            m.insert(name, Tensor::zeros_like(t)).unwrap();
            v.insert(name, Tensor::zeros_like(t)).unwrap();
        }
        AdamState {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first_moment: m,
            second_moment: v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first_moment.get(name)
    }

    /// One bias-corrected update. Gradient shapes must mirror the parameters.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        if !params.shapes_mirror(grads) {
            return Err(Error::ShapeMismatch(
                "gradient set does not mirror parameter set".into(),
            ));
        }
        if !params.shapes_mirror(&self.first_moment) {
            return Err(Error::ShapeMismatch(
                "optimizer state does not mirror parameter set".into(),
            ));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        for name in &names {
            let g = grads.get(name).unwrap().data().to_vec();
            let m = self.first_moment.get_mut(name).unwrap().data_mut();
            for (mi, gi) in m.iter_mut().zip(&g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let m = self.first_moment.get(name).unwrap().data().to_vec();
            let v = self.second_moment.get_mut(name).unwrap().data_mut();
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let v = self.second_moment.get(name).unwrap().data().to_vec();
            let p = params.get_mut(name).unwrap().data_mut();
            for i in 0..p.len() {
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
