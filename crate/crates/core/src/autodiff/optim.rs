use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::{Error, Result};

fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::BadParams(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    Ok(())
}

/// `p - lr * g` on snapshots.
pub fn sgd_step(params: &ParamSet, grads: &ParamSet, lr: f64) -> Result<ParamSet> {
    check_lr(lr)?;
    if !params.same_layout(grads) {
        return Err(Error::shape("sgd_step", "gradient layout differs from parameters"));
    }
    let g = grads.flatten();
    let p: Vec<f64> = params.flatten().iter().zip(&g).map(|(p, g)| p - lr * g).collect();
    params.unflatten(&p)
}

/// `p - lr * g` on tensors; differentiable when the inputs are on a tape.
pub fn sgd_tensors(params: &[Tensor], grads: &[Tensor], lr: f64) -> Result<Vec<Tensor>> {
    check_lr(lr)?;
    if params.len() != grads.len() {
        return Err(Error::shape(
            "sgd_tensors",
            format!("{} params vs {} grads", params.len(), grads.len()),
        ));
    }
    params.iter().zip(grads).map(|(p, g)| p.sub(&g.scale(lr))).collect()
}

/// Adam moments over the flattened parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(numel: usize) -> Self {
        Self {
            m: vec![0.0; numel],
            v: vec![0.0; numel],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update with flattened gradient `grad`.
    pub fn step_flat(&mut self, params: &ParamSet, grad: &[f64], lr: f64) -> Result<ParamSet> {
        check_lr(lr)?;
        let n = params.numel();
        if grad.len() != n || self.m.len() != n {
            return Err(Error::shape(
                "adam_step",
                format!("params {n}, grads {}, state {}", grad.len(), self.m.len()),
            ));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let mut p = params.flatten();
        for i in 0..n {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        params.unflatten(&p)
    }
}

/// Functional Adam step: returns the advanced state and updated parameters.
pub fn adam_step(state: &AdamState, params: &ParamSet, grads: &ParamSet, lr: f64) -> Result<(AdamState, ParamSet)> {
    if !params.same_layout(grads) {
        return Err(Error::shape("adam_step", "gradient layout differs from parameters"));
    }
    let mut state = state.clone();
    let p = state.step_flat(params, &grads.flatten(), lr)?;
    Ok((state, p))
}
