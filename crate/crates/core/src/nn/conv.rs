use crate::autodiff::{out_extent, ConvParams, Graph, Var};
use crate::error::{invalid, Result};
use crate::nn::{Ctx, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// A grouped 3-D convolution over `N×C×T×H×W`. Images use `kt = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: [1; 3],
            padding: [0; 3],
            groups: 1,
            bias: true,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, [1; 3])
    }

    /// Depthwise with "same" zero padding; `kernel` must be odd on every axis.
    pub fn depthwise_same(channels: usize, kernel: [usize; 3]) -> Result<Self> {
        if kernel.iter().any(|k| k % 2 == 0) {
            return Err(invalid("conv", format!("same padding needs odd kernels, got {kernel:?}")));
        }
        Ok(Self {
            padding: kernel.map(|k| k / 2),
            groups: channels,
            ..Self::new(channels, channels, kernel)
        })
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.groups;
        if g == 0 || self.in_channels % g != 0 || self.out_channels % g != 0 {
            return Err(invalid(
                "conv",
                format!(
                    "groups {g} must divide in_channels {} and out_channels {}",
                    self.in_channels, self.out_channels
                ),
            ));
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(invalid("conv", "kernel and stride must be positive"));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let [kt, kh, kw] = self.kernel;
        vec![self.out_channels, self.in_channels / self.groups, kt, kh, kw]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel.iter().product::<usize>()
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + if self.bias { self.out_channels } else { 0 }
    }

    /// Output `(T, H, W)` for an input extent, or `None` if any axis collapses.
    pub fn out_dims(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut o = [0; 3];
        for a in 0..3 {
            o[a] = out_extent(input[a], self.kernel[a], self.stride[a], self.padding[a])?;
        }
        Some(o)
    }

    /// Multiply-accumulates on an input extent: `fan_in · C_out · T'H'W'`.
    pub fn macs(&self, input: [usize; 3]) -> Option<usize> {
        self.out_dims(input)
            .map(|o| self.fan_in() * self.out_channels * o.iter().product::<usize>())
    }

    pub fn params(&self) -> ConvParams {
        ConvParams {
            stride: self.stride,
            padding: self.padding,
            groups: self.groups,
        }
    }

    /// Fan-in uniform init `±√(1/fan_in)` for weight and bias.
    pub fn init<S: Scalar>(&self, prefix: &str, store: &mut ParamStore<S>, rng: &mut Rng) -> Result<()> {
        let bound = (1.0 / self.fan_in() as f64).sqrt();
        store.insert(format!("{prefix}.weight"), Tensor::uniform(self.weight_shape(), -bound, bound, rng))?;
        if self.bias {
            store.insert(format!("{prefix}.bias"), Tensor::uniform([self.out_channels], -bound, bound, rng))?;
        }
        Ok(())
    }

    /// Run the convolution with parameters `{prefix}.weight` / `{prefix}.bias`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ctx: &Ctx<S>, prefix: &str, x: Var) -> Result<Var> {
        let w = ctx.param(&format!("{prefix}.weight"))?;
        let b = if self.bias {
            Some(ctx.param(&format!("{prefix}.bias"))?)
        } else {
            None
        };
        conv_forward(g, x, self, w, b)
    }
}

/// Grouped cross-correlation with zero padding.
pub fn conv_forward<S: Scalar>(g: &mut Graph<S>, x: Var, spec: &ConvSpec, w: Var, b: Option<Var>) -> Result<Var> {
    spec.validate()?;
    let xs = g.shape(x);
    if xs.len() != 5 || xs[1] != spec.in_channels {
        return Err(invalid(
            "conv",
            format!("input {:?} does not have {} channels", xs, spec.in_channels),
        ));
    }
    g.conv(x, w, b, spec.params())
}
