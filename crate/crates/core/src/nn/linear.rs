use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::nn::{Ctx, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Linear map over the last (channel) axis of a token tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearSpec {
    pub in_features: usize,
    pub out_features: usize,
    pub bias: bool,
}

impl LinearSpec {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            bias: true,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + if self.bias { self.out_features } else { 0 }
    }

    /// Multiply-accumulates over `tokens` rows.
    pub fn macs(&self, tokens: usize) -> usize {
        tokens * self.in_features * self.out_features
    }

    /// Fan-in uniform weight; the bias is drawn from the same range unless
    /// `zero_bias`.
    pub fn init<S: Scalar>(&self, prefix: &str, store: &mut ParamStore<S>, rng: &mut Rng, zero_bias: bool) -> Result<()> {
        let bound = (1.0 / self.in_features as f64).sqrt();
        store.insert(
            format!("{prefix}.weight"),
            Tensor::uniform([self.out_features, self.in_features], -bound, bound, rng),
        )?;
        if self.bias {
            let b = if zero_bias {
                Tensor::zeros([self.out_features])
            } else {
                Tensor::uniform([self.out_features], -bound, bound, rng)
            };
            store.insert(format!("{prefix}.bias"), b)?;
        }
        Ok(())
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ctx: &Ctx<S>, prefix: &str, x: Var) -> Result<Var> {
        let w = ctx.param(&format!("{prefix}.weight"))?;
        let b = if self.bias {
            Some(ctx.param(&format!("{prefix}.bias"))?)
        } else {
            None
        };
        g.linear(x, w, b)
    }
}
