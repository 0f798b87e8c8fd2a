//! Direct, loop-based reference for local MHRA: every output token is an
//! explicit sum over its `t×h×w` neighbourhood weighted by the learned
//! relative-position affinity, instead of a depthwise convolution. Used by
//! the equivalence suite as an independent route to the same numbers.
//!
//! Orientation: `a_n[d + r]` weights the neighbour at offset `d = j − i`
//! from the anchor `i`, where `r = kernel / 2`. Neighbours outside the grid
//! contribute nothing.

use crate::block::BlockConfig;
use crate::error::{invalid, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// `R_n(V)_i = Σ_{j ∈ Ω_i} a_n^{i−j} V_j` per channel, `V` of shape
/// `N×C×T×H×W`, affinity `[heads, kt, kh, kw]`.
pub fn local_aggregate(v: &Tensor<f64>, affinity: &Tensor<f64>, cfg: &BlockConfig) -> Result<Tensor<f64>> {
    let s = v.shape();
    let (n, c, t, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let [kt, kh, kw] = cfg.local_kernel;
    if affinity.shape() != [cfg.local_heads(), kt, kh, kw] || c != cfg.channels {
        return Err(invalid("local_aggregate", "affinity / channel layout mismatch"));
    }
    let (rt, rh, rw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    let l = t * h * w;
    let coords: Vec<[isize; 3]> = (0..l)
        .map(|i| [(i / (h * w)) as isize, ((i / w) % h) as isize, (i % w) as isize])
        .collect();
    let mut out = vec![0.0; v.numel()];
    for ch in 0..c {
        let head = ch / cfg.local_head_dim;
        // Dense L×L affinity for this head: A[i][j] = a_n at offset j − i.
        let mut a = vec![0.0; l * l];
        for (i, ci) in coords.iter().enumerate() {
            for (j, cj) in coords.iter().enumerate() {
                let d = [cj[0] - ci[0], cj[1] - ci[1], cj[2] - ci[2]];
                if d[0].abs() <= rt && d[1].abs() <= rh && d[2].abs() <= rw {
                    let (ut, uh, uw) = ((d[0] + rt) as usize, (d[1] + rh) as usize, (d[2] + rw) as usize);
                    a[i * l + j] = affinity.data()[((head * kt + ut) * kh + uh) * kw + uw];
                }
            }
        }
        for b in 0..n {
            let base = (b * c + ch) * l;
            let vc = &v.data()[base..base + l];
            for i in 0..l {
                out[base + i] = (0..l).map(|j| a[i * l + j] * vc[j]).sum();
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}

fn pointwise(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (n, c, l) = (s[0], s[1], s[2] * s[3] * s[4]);
    let co = w.shape()[0];
    let mut out = vec![0.0; n * co * l];
    for bi in 0..n {
        for o in 0..co {
            for p in 0..l {
                let mut acc = b.data()[o];
                for i in 0..c {
                    acc += w.data()[o * c + i] * x.data()[(bi * c + i) * l + p];
                }
                out[(bi * co + o) * l + p] = acc;
            }
        }
    }
    let mut shape = s.to_vec();
    shape[1] = co;
    Tensor::new(shape, out).expect("pointwise")
}

/// Eval-mode batch norm with the stored running statistics (mean 0 / var 1
/// when absent).
fn bn_eval(x: &Tensor<f64>, params: &ParamStore<f64>, buffers: &ParamStore<f64>, prefix: &str, eps: f64) -> Result<Tensor<f64>> {
    let s = x.shape();
    let (c, sp) = (s[1], s[2] * s[3] * s[4]);
    let gamma = params.get(&format!("{prefix}.weight"))?;
    let beta = params.get(&format!("{prefix}.bias"))?;
    let mean = buffers.get(&format!("{prefix}.running_mean")).map(|t| t.data().to_vec()).unwrap_or(vec![0.0; c]);
    let var = buffers.get(&format!("{prefix}.running_var")).map(|t| t.data().to_vec()).unwrap_or(vec![1.0; c]);
    Ok(Tensor::from_fn(s.to_vec(), |i| {
        let ch = (i / sp) % c;
        gamma.data()[ch] * (x.data()[i] - mean[ch]) / (var[ch] + eps).sqrt() + beta.data()[ch]
    }))
}

/// Full local MHRA (eval mode) through the literal gather: `U·BN(A·BN(V·x))`.
pub fn local_mhra_literal(
    x: &Tensor<f64>,
    cfg: &BlockConfig,
    params: &ParamStore<f64>,
    buffers: &ParamStore<f64>,
    prefix: &str,
) -> Result<Tensor<f64>> {
    let c = cfg.channels;
    let pw = |name: &str| -> Result<(Tensor<f64>, Tensor<f64>)> {
        Ok((
            params.get(&format!("{prefix}.{name}.weight"))?.reshape([c, c])?,
            params.get(&format!("{prefix}.{name}.bias"))?.clone(),
        ))
    };
    let (w1, b1) = pw("pw1")?;
    let (w2, b2) = pw("pw2")?;
    let v = pointwise(x, &w1, &b1);
    let v = bn_eval(&v, params, buffers, &format!("{prefix}.bn1"), 1e-5)?;
    let r = local_aggregate(&v, params.get(&format!("{prefix}.affinity"))?, cfg)?;
    let r = bn_eval(&r, params, buffers, &format!("{prefix}.bn2"), 1e-5)?;
    Ok(pointwise(&r, &w2, &b2))
}
