//! Matrix products, per-token linear maps and softmax kernels.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Batched matmul layout after promoting rank-2 operands to batch 1.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub a_batch: usize,
    pub b_batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub rank3: bool,
}

impl MatmulDims {
    pub(crate) fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        let split = |s: &[usize]| match s.len() {
            2 => Some((1, s[0], s[1])),
            3 => Some((s[0], s[1], s[2])),
            _ => None,
        };
        let (ab, m, k) = split(a).ok_or_else(mismatch)?;
        let (bb, k2, n) = split(b).ok_or_else(mismatch)?;
        if k != k2 || (ab != bb && ab != 1 && bb != 1) {
            return Err(mismatch());
        }
        Ok(Self {
            batch: ab.max(bb),
            a_batch: ab,
            b_batch: bb,
            m,
            k,
            n,
            rank3: a.len() == 3 || b.len() == 3,
        })
    }

    pub(crate) fn out_shape(&self) -> Vec<usize> {
        if self.rank3 {
            vec![self.batch, self.m, self.n]
        } else {
            vec![self.m, self.n]
        }
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
fn gemm_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
fn gemm_nt_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<S>();
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
fn gemm_tn_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (cv, &bv) in c[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub(crate) fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, d: &MatmulDims) -> Tensor<S> {
    let mut c = vec![S::zero(); d.batch * d.m * d.n];
    for bi in 0..d.batch {
        let ao = if d.a_batch == 1 { 0 } else { bi * d.m * d.k };
        let bo = if d.b_batch == 1 { 0 } else { bi * d.k * d.n };
        gemm_acc(
            &a.data()[ao..ao + d.m * d.k],
            &b.data()[bo..bo + d.k * d.n],
            &mut c[bi * d.m * d.n..(bi + 1) * d.m * d.n],
            d.m,
            d.k,
            d.n,
        );
    }
    Tensor::new(d.out_shape(), c).expect("matmul")
}

/// `dA = dC·Bᵀ`, `dB = Aᵀ·dC`, summed over broadcast batches.
pub(crate) fn matmul_backward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    dc: &Tensor<S>,
    d: &MatmulDims,
) -> (Tensor<S>, Tensor<S>) {
    let mut da = vec![S::zero(); a.numel()];
    let mut db = vec![S::zero(); b.numel()];
    for bi in 0..d.batch {
        let ao = if d.a_batch == 1 { 0 } else { bi * d.m * d.k };
        let bo = if d.b_batch == 1 { 0 } else { bi * d.k * d.n };
        let dco = bi * d.m * d.n;
        let dcs = &dc.data()[dco..dco + d.m * d.n];
        gemm_nt_acc(dcs, &b.data()[bo..bo + d.k * d.n], &mut da[ao..ao + d.m * d.k], d.m, d.n, d.k);
        gemm_tn_acc(&a.data()[ao..ao + d.m * d.k], dcs, &mut db[bo..bo + d.k * d.n], d.m, d.k, d.n);
    }
    (
        Tensor::new(a.shape().to_vec(), da).expect("da"),
        Tensor::new(b.shape().to_vec(), db).expect("db"),
    )
}

/// `y = x·wᵀ + b` over the last axis; `w` is `[out, in]`.
pub(crate) fn linear<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: Option<&Tensor<S>>) -> Tensor<S> {
    let (cout, cin) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / cin;
    let mut y = vec![S::zero(); rows * cout];
    gemm_nt_acc(x.data(), w.data(), &mut y, rows, cin, cout);
    if let Some(b) = b {
        for row in y.chunks_mut(cout) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank") = cout;
    Tensor::new(shape, y).expect("linear")
}

pub(crate) fn linear_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (cout, cin) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / cin;
    let mut dx = vec![S::zero(); x.numel()];
    gemm_acc(dy.data(), w.data(), &mut dx, rows, cout, cin);
    let mut dw = vec![S::zero(); w.numel()];
    gemm_tn_acc(dy.data(), x.data(), &mut dw, rows, cout, cin);
    let mut db = vec![S::zero(); cout];
    for row in dy.data().chunks(cout) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dx"),
        Tensor::new(w.shape().to_vec(), dw).expect("dw"),
        Tensor::new(vec![cout], db).expect("db"),
    )
}

/// Softmax over the last axis, shifted by the row max.
pub(crate) fn softmax<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let c = *x.shape().last().expect("rank");
    let mut y = x.data().to_vec();
    for row in y.chunks_mut(c) {
        let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut s = S::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        let inv = s.recip();
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Tensor::new(x.shape().to_vec(), y).expect("softmax")
}

pub(crate) fn softmax_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let c = *y.shape().last().expect("rank");
    let mut dx = vec![S::zero(); y.numel()];
    for ((yr, dyr), dxr) in y.data().chunks(c).zip(dy.data().chunks(c)).zip(dx.chunks_mut(c)) {
        let dot: S = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = yv * (g - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), dx).expect("softmax dx")
}
