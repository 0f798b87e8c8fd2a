//! Batch-norm and layer-norm kernels. Both use the population (biased)
//! variance.

use crate::tensor::{Scalar, Tensor};

pub(crate) struct NormSaved<S> {
    pub xhat: Vec<S>,
    /// One entry per normalized group (channel for BN, token for LN).
    pub inv_std: Vec<S>,
}

pub(crate) struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

/// Per-channel statistics over every axis except axis 1.
pub(crate) fn channel_stats<S: Scalar>(x: &Tensor<S>) -> BatchStats<S> {
    let (n, c, sp) = bn_dims(x.shape());
    let m = S::of((n * sp) as f64);
    let xs = x.data();
    let mut mean = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];
    for ch in 0..c {
        let mut s = S::zero();
        for b in 0..n {
            let o = (b * c + ch) * sp;
            s += xs[o..o + sp].iter().copied().sum::<S>();
        }
        let mu = s / m;
        let mut v = S::zero();
        for b in 0..n {
            let o = (b * c + ch) * sp;
            v += xs[o..o + sp].iter().map(|&t| (t - mu) * (t - mu)).sum::<S>();
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    BatchStats { mean, var }
}

pub(crate) fn bn_dims(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}

pub(crate) fn batchnorm_forward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    mean: &[S],
    var: &[S],
    eps: f64,
) -> (Tensor<S>, NormSaved<S>) {
    let (n, c, sp) = bn_dims(x.shape());
    let inv_std: Vec<S> = var.iter().map(|&v| (v + S::of(eps)).sqrt().recip()).collect();
    let mut xhat = vec![S::zero(); x.numel()];
    let mut y = vec![S::zero(); x.numel()];
    let (xs, gs, bs) = (x.data(), gamma.data(), beta.data());
    for b in 0..n {
        for ch in 0..c {
            let o = (b * c + ch) * sp;
            for i in o..o + sp {
                let h = (xs[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = gs[ch] * h + bs[ch];
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), y).expect("bn"),
        NormSaved { xhat, inv_std },
    )
}

/// Returns `(dx, dgamma, dbeta)`. In training mode the batch statistics depend
/// on `x`; in eval mode they are constants.
pub(crate) fn batchnorm_backward<S: Scalar>(
    dy: &Tensor<S>,
    gamma: &Tensor<S>,
    saved: &NormSaved<S>,
    train: bool,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (n, c, sp) = bn_dims(dy.shape());
    let m = S::of((n * sp) as f64);
    let (dys, gs) = (dy.data(), gamma.data());
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let o = (b * c + ch) * sp;
            for i in o..o + sp {
                dgamma[ch] += dys[i] * saved.xhat[i];
                dbeta[ch] += dys[i];
            }
        }
    }
    let mut dx = vec![S::zero(); dy.numel()];
    for b in 0..n {
        for ch in 0..c {
            let o = (b * c + ch) * sp;
            let k = gs[ch] * saved.inv_std[ch];
            for i in o..o + sp {
                dx[i] = if train {
                    k * (dys[i] - dbeta[ch] / m - saved.xhat[i] * dgamma[ch] / m)
                } else {
                    k * dys[i]
                };
            }
        }
    }
    (
        Tensor::new(dy.shape().to_vec(), dx).expect("bn dx"),
        Tensor::new(vec![c], dgamma).expect("bn dgamma"),
        Tensor::new(vec![c], dbeta).expect("bn dbeta"),
    )
}

pub(crate) fn layernorm_forward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: f64,
) -> (Tensor<S>, NormSaved<S>) {
    let c = *x.shape().last().expect("layernorm on rank-0 tensor");
    let cs = S::of(c as f64);
    let rows = x.numel() / c;
    let (gs, bs) = (gamma.data(), beta.data());
    let mut xhat = vec![S::zero(); x.numel()];
    let mut y = vec![S::zero(); x.numel()];
    let mut inv_std = Vec::with_capacity(rows);
    for (r, row) in x.data().chunks(c).enumerate() {
        let mu = row.iter().copied().sum::<S>() / cs;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / cs;
        let is = (var + S::of(eps)).sqrt().recip();
        inv_std.push(is);
        for (j, &v) in row.iter().enumerate() {
            let h = (v - mu) * is;
            xhat[r * c + j] = h;
            y[r * c + j] = gs[j] * h + bs[j];
        }
    }
    (
        Tensor::new(x.shape().to_vec(), y).expect("ln"),
        NormSaved { xhat, inv_std },
    )
}

pub(crate) fn layernorm_backward<S: Scalar>(
    dy: &Tensor<S>,
    gamma: &Tensor<S>,
    saved: &NormSaved<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let c = *dy.shape().last().expect("rank");
    let cs = S::of(c as f64);
    let gs = gamma.data();
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    let mut dx = vec![S::zero(); dy.numel()];
    for (r, drow) in dy.data().chunks(c).enumerate() {
        let xh = &saved.xhat[r * c..(r + 1) * c];
        let mut s1 = S::zero();
        let mut s2 = S::zero();
        for j in 0..c {
            dgamma[j] += drow[j] * xh[j];
            dbeta[j] += drow[j];
            let dxh = drow[j] * gs[j];
            s1 += dxh;
            s2 += dxh * xh[j];
        }
        let is = saved.inv_std[r];
        for j in 0..c {
            let dxh = drow[j] * gs[j];
            dx[r * c + j] = is * (dxh - s1 / cs - xh[j] * s2 / cs);
        }
    }
    (
        Tensor::new(dy.shape().to_vec(), dx).expect("ln dx"),
        Tensor::new(vec![c], dgamma).expect("ln dgamma"),
        Tensor::new(vec![c], dbeta).expect("ln dbeta"),
    )
}
