use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Result};
use crate::nn::{Ctx, Mode, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    BatchNorm,
    LayerNorm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormSpec {
    pub kind: NormKind,
    pub num_features: usize,
    pub eps: f64,
    /// Weight of the new batch statistic in the running average.
    pub momentum: f64,
}

impl NormSpec {
    pub fn batch(num_features: usize) -> Self {
        Self {
            kind: NormKind::BatchNorm,
            num_features,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn layer(num_features: usize) -> Self {
        Self {
            kind: NormKind::LayerNorm,
            ..Self::batch(num_features)
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.num_features
    }

    /// `gamma = 1`, `beta = 0`; batch norm also gets running mean 0 / var 1
    /// buffers.
    pub fn init<S: Scalar>(&self, prefix: &str, params: &mut ParamStore<S>, buffers: &mut ParamStore<S>) -> Result<()> {
        let c = self.num_features;
        params.insert(format!("{prefix}.weight"), Tensor::ones([c]))?;
        params.insert(format!("{prefix}.bias"), Tensor::zeros([c]))?;
        if self.kind == NormKind::BatchNorm {
            buffers.insert(format!("{prefix}.running_mean"), Tensor::zeros([c]))?;
            buffers.insert(format!("{prefix}.running_var"), Tensor::ones([c]))?;
        }
        Ok(())
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ctx: &mut Ctx<S>, prefix: &str, x: Var) -> Result<Var> {
        match self.kind {
            NormKind::BatchNorm => batchnorm_forward(g, ctx, prefix, self, x),
            NormKind::LayerNorm => layernorm_forward(g, ctx, prefix, self, x),
        }
    }
}

/// Batch norm on `N×C×…`, statistics over every axis except channels.
///
/// Train mode normalizes with batch statistics and records them for the
/// running update; eval mode reads `{prefix}.running_mean/var`, falling back
/// to mean 0 / var 1 when no buffers are attached.
pub fn batchnorm_forward<S: Scalar>(
    g: &mut Graph<S>,
    ctx: &mut Ctx<S>,
    prefix: &str,
    spec: &NormSpec,
    x: Var,
) -> Result<Var> {
    let shape = g.shape(x);
    if shape.len() < 2 || shape[1] != spec.num_features {
        return Err(invalid(
            "batch_norm",
            format!("input {shape:?} does not have {} features", spec.num_features),
        ));
    }
    let gamma = ctx.param(&format!("{prefix}.weight"))?;
    let beta = ctx.param(&format!("{prefix}.bias"))?;
    match ctx.mode {
        Mode::Train => {
            let (y, stats) = g.batch_norm(x, gamma, beta, None, spec.eps)?;
            if let Some(stats) = stats {
                ctx.record_bn(prefix, stats);
            }
            Ok(y)
        }
        Mode::Eval => {
            let c = spec.num_features;
            let mean = ctx
                .buffer(&format!("{prefix}.running_mean"))
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![S::zero(); c]);
            let var = ctx
                .buffer(&format!("{prefix}.running_var"))
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![S::one(); c]);
            Ok(g.batch_norm(x, gamma, beta, Some((&mean, &var)), spec.eps)?.0)
        }
    }
}

/// Layer norm over the last axis (channels of a token sequence).
pub fn layernorm_forward<S: Scalar>(
    g: &mut Graph<S>,
    ctx: &Ctx<S>,
    prefix: &str,
    spec: &NormSpec,
    x: Var,
) -> Result<Var> {
    if g.shape(x).last() != Some(&spec.num_features) {
        return Err(invalid(
            "layer_norm",
            format!("input {:?} does not end in {} features", g.shape(x), spec.num_features),
        ));
    }
    let gamma = ctx.param(&format!("{prefix}.weight"))?;
    let beta = ctx.param(&format!("{prefix}.bias"))?;
    g.layer_norm(x, gamma, beta, spec.eps)
}

/// Fold recorded batch statistics into running buffers:
/// `running ← (1 − momentum)·running + momentum·batch`.
pub fn apply_running_update<S: Scalar>(
    buffers: &mut ParamStore<S>,
    prefix: &str,
    mean: &[S],
    var: &[S],
    momentum: f64,
) -> Result<()> {
    let m = S::of(momentum);
    let keep = S::one() - m;
    for (name, batch) in [("running_mean", mean), ("running_var", var)] {
        let buf = buffers.get_mut(&format!("{prefix}.{name}"))?;
        for (r, &b) in buf.data_mut().iter_mut().zip(batch) {
            *r = keep * *r + m * b;
        }
    }
    Ok(())
}
