use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Result};
use crate::nn::Mode;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Stochastic depth on a residual branch `x` of shape `[N, …]`.
///
/// In train mode each sample's branch is zeroed with probability `rate` and
/// survivors are scaled by `1/(1 − rate)`. Eval mode and `rate == 0` are the
/// identity.
pub fn drop_path<S: Scalar>(g: &mut Graph<S>, x: Var, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid("drop_path", format!("rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let shape = g.shape(x).to_vec();
    let n = shape[0];
    let per = shape[1..].iter().product::<usize>();
    let scale = S::of(1.0 / (1.0 - rate));
    let keep: Vec<bool> = (0..n).map(|_| !rng.bernoulli(rate)).collect();
    let mask = Tensor::from_fn(shape, |i| if keep[i / per] { scale } else { S::zero() });
    let m = g.constant(mask);
    g.mul(x, m)
}
