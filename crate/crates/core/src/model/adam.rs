use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent f64 methods when std is linked
use num_traits::Float;

use super::ParamSet;
use crate::error::{Error, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for every parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &ParamSet<F>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<F>> = params
            .params()
            .iter()
            .map(|p| alloc::vec![F::zero(); p.data.len()])
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of `params` in place. Non-finite gradients
/// are rejected before anything is modified.
pub fn adam_step<F: Real>(
    params: &mut ParamSet<F>,
    grads: &ParamSet<F>,
    state: &mut OptimizerState<F>,
) -> Result<()> {
    params.check_compatible(grads)?;
    if state.m.len() != params.params().len()
        || state
            .m
            .iter()
            .zip(params.params())
            .any(|(m, p)| m.len() != p.data.len())
    {
        return Err(Error::Shape(
            "optimizer state does not match parameters".into(),
        ));
    }
    grads.check_finite()?;
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
    let (one_b1, one_b2) = (F::of(1.0 - c.beta1), F::of(1.0 - c.beta2));
    let step_size = F::of(c.learning_rate / bc1);
    let inv_bc2 = F::of(1.0 / bc2);
    let eps = F::of(c.epsilon);
    for ((p, g), (m, v)) in params
        .params_mut()
        .iter_mut()
        .zip(grads.params())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = b1 * m[i] + one_b1 * gi;
            v[i] = b2 * v[i] + one_b2 * gi * gi;
            p.data[i] -= step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}
