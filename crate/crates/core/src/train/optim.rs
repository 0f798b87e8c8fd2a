use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moments per parameter path.
#[derive(Clone, Debug)]
pub struct OptimizerState<S: Scalar> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<S>>,
    pub v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One AdamW update at learning rate `lr`: decay `p ← p·(1 − lr·λ)`, then
/// `p ← p − lr·m̂/(√v̂ + ε)` with bias-corrected moments.
pub fn optimizer_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &ParamStore<S>,
    state: &mut OptimizerState<S>,
    lr: f64,
) -> Result<()> {
    for (path, p) in params.iter() {
        let g = grads.get(path).map_err(|_| Error::MissingGrad(path.to_string()))?;
        if g.shape() != p.shape() {
            return Err(invalid("optimizer_step", format!("gradient shape {:?} for `{path}` {:?}", g.shape(), p.shape())));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let decay = S::of(1.0 - lr * c.weight_decay);
    let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
    let (ob1, ob2) = (S::of(1.0 - c.beta1), S::of(1.0 - c.beta2));
    for (path, p) in params.iter_mut() {
        let g = grads.get(path)?;
        let m = state.m.entry(path.to_string()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        let v = state.v.entry(path.to_string()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = b1 * md[i] + ob1 * gi;
            vd[i] = b2 * vd[i] + ob2 * gi * gi;
            let mhat = md[i].as_f64() / bc1;
            let vhat = vd[i].as_f64() / bc2;
            pd[i] = pd[i] * decay - S::of(lr * mhat / (vhat.sqrt() + c.eps));
        }
    }
    Ok(())
}

/// Linear warm-up from 0 to `base_lr` over `warmup` steps, then cosine decay
/// to 0 at `total`.
pub fn lr_schedule(step: usize, total: usize, warmup: usize, base_lr: f64) -> Result<f64> {
    if warmup > total {
        return Err(invalid("lr_schedule", format!("warmup {warmup} exceeds total {total}")));
    }
    if step > total {
        return Err(invalid("lr_schedule", format!("step {step} beyond total {total}")));
    }
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    if total == warmup {
        return Ok(base_lr);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}
