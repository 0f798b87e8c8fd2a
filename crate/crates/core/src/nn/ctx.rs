use std::collections::HashMap;

use crate::autodiff::{BatchNormStats, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: parameters bound as tape leaves, read-only running
/// statistics, the drop-path generator, and batch-norm statistic updates
/// collected during a training forward.
pub struct Ctx<'a, S> {
    vars: HashMap<String, Var>,
    buffers: Option<&'a ParamStore<S>>,
    pub mode: Mode,
    pub rng: Rng,
    bn_updates: Vec<(String, BatchNormStats<S>)>,
}

impl<'a, S: Scalar> Ctx<'a, S> {
    /// Bind every entry of `params` as a trainable leaf on `g`.
    pub fn bind(g: &mut Graph<S>, params: &ParamStore<S>, mode: Mode, rng: Rng) -> Self {
        let vars = params
            .iter()
            .map(|(k, t)| (k.to_string(), g.param(t.clone())))
            .collect();
        Self::from_vars(vars, mode, rng)
    }

    /// Use leaves already placed on the tape (gradient checks create their
    /// own).
    pub fn from_vars(vars: HashMap<String, Var>, mode: Mode, rng: Rng) -> Self {
        Self {
            vars,
            buffers: None,
            mode,
            rng,
            bn_updates: Vec::new(),
        }
    }

    pub fn with_buffers(mut self, buffers: &'a ParamStore<S>) -> Self {
        self.buffers = Some(buffers);
        self
    }

    pub fn param(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| Error::MissingParam(path.to_string()))
    }

    pub fn has_param(&self, path: &str) -> bool {
        self.vars.contains_key(path)
    }

    pub fn buffer(&self, path: &str) -> Option<&Tensor<S>> {
        self.buffers.and_then(|b| b.get(path).ok())
    }

    pub fn vars(&self) -> &HashMap<String, Var> {
        &self.vars
    }

    pub(crate) fn record_bn(&mut self, prefix: &str, stats: BatchNormStats<S>) {
        self.bn_updates.push((prefix.to_string(), stats));
    }

    pub fn take_bn_updates(&mut self) -> Vec<(String, BatchNormStats<S>)> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Gradients of every bound parameter after a backward pass. Parameters
    /// the loss never reached get zero gradients.
    pub fn grads(&self, g: &Graph<S>) -> ParamStore<S> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let grad = g
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(g.shape(v).to_vec()));
                (k.clone(), grad)
            })
            .collect()
    }
}
