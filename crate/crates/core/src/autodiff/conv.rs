//! Grouped 3-D cross-correlation kernels on `N×C×T×H×W` tensors.

use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Stride, zero padding and group count of a convolution. Kernel extents come
/// from the weight tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        Self {
            stride: [1; 3],
            padding: [0; 3],
            groups: 1,
        }
    }
}

/// Output extent along one axis: `floor((in + 2p - k) / s) + 1`, or `None`
/// when the padded input is shorter than the kernel.
pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    groups: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    pub(crate) fn new(x: &[usize], w: &[usize], p: &ConvParams) -> Result<Self> {
        if x.len() != 5 || w.len() != 5 {
            return Err(invalid(
                "conv",
                format!("expected rank-5 input and weight, got {x:?} and {w:?}"),
            ));
        }
        let (n, cin) = (x[0], x[1]);
        let cout = w[0];
        let g = p.groups;
        if g == 0 || cin % g != 0 || cout % g != 0 {
            return Err(invalid(
                "conv",
                format!("groups {g} must divide in_channels {cin} and out_channels {cout}"),
            ));
        }
        if w[1] != cin / g {
            return Err(Error::ShapeMismatch {
                op: "conv",
                lhs: x.to_vec(),
                rhs: w.to_vec(),
            });
        }
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = out_extent(x[2 + a], w[2 + a], p.stride[a], p.padding[a]).ok_or_else(|| {
                invalid(
                    "conv",
                    format!(
                        "axis {a}: input {} with padding {} is smaller than kernel {}",
                        x[2 + a],
                        p.padding[a],
                        w[2 + a]
                    ),
                )
            })?;
        }
        Ok(Self {
            n,
            cin,
            cout,
            groups: g,
            input: [x[2], x[3], x[4]],
            kernel: [w[2], w[3], w[4]],
            output,
            stride: p.stride,
            pad: p.padding,
        })
    }

    pub(crate) fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.output[0], self.output[1], self.output[2]]
    }

    /// Visits every contiguous run of output positions along W that a single
    /// weight tap touches. The callback gets
    /// `(weight_index, output_start, input_start, len)`; input positions
    /// advance by `stride[2]` per output step.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [it, ih, iw] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [ot, oh, ow] = self.output;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.pad;
        let cin_g = self.cin / self.groups;
        let cout_g = self.cout / self.groups;
        let in_sp = it * ih * iw;
        let out_sp = ot * oh * ow;
        // Valid output W range per kw tap.
        let w_ranges: Vec<(usize, usize)> = (0..kw)
            .map(|dw| {
                let lo = (pw.saturating_sub(dw)).div_ceil(sw);
                let hi = if iw + pw > dw {
                    ((iw + pw - dw - 1) / sw + 1).min(ow)
                } else {
                    0
                };
                (lo, hi.max(lo))
            })
            .collect();
        for n in 0..self.n {
            for oc in 0..self.cout {
                let g = oc / cout_g;
                let y_base = (n * self.cout + oc) * out_sp;
                for icg in 0..cin_g {
                    let ic = g * cin_g + icg;
                    let x_base = (n * self.cin + ic) * in_sp;
                    let w_base = (oc * cin_g + icg) * kt * kh * kw;
                    for dt in 0..kt {
                        for o_t in 0..ot {
                            let Some(i_t) = (o_t * st + dt).checked_sub(pt).filter(|&v| v < it) else {
                                continue;
                            };
                            for dh in 0..kh {
                                for o_h in 0..oh {
                                    let Some(i_h) =
                                        (o_h * sh + dh).checked_sub(ph).filter(|&v| v < ih)
                                    else {
                                        continue;
                                    };
                                    for (dw, &(lo, hi)) in w_ranges.iter().enumerate() {
                                        if lo >= hi {
                                            continue;
                                        }
                                        let w_idx = w_base + (dt * kh + dh) * kw + dw;
                                        let y0 = y_base + (o_t * oh + o_h) * ow + lo;
                                        let x0 = x_base + (i_t * ih + i_h) * iw + lo * sw + dw - pw;
                                        f(w_idx, y0, x0, hi - lo);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: Option<&Tensor<S>>,
    geo: &Geometry,
) -> Tensor<S> {
    let out_shape = geo.out_shape();
    let mut y = vec![S::zero(); out_shape.iter().product()];
    let (xs, ws) = (x.data(), w.data());
    let sw = geo.stride[2];
    geo.for_each_run(|wi, y0, x0, len| {
        let wv = ws[wi];
        let yr = &mut y[y0..y0 + len];
        if sw == 1 {
            for (yv, &xv) in yr.iter_mut().zip(&xs[x0..x0 + len]) {
                *yv += wv * xv;
            }
        } else {
            for (i, yv) in yr.iter_mut().enumerate() {
                *yv += wv * xs[x0 + i * sw];
            }
        }
    });
    if let Some(b) = b {
        let sp: usize = geo.output.iter().product();
        for (i, chunk) in y.chunks_mut(sp).enumerate() {
            let bv = b.data()[i % geo.cout];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::new(out_shape, y).expect("conv output shape")
}

/// Gradients with respect to input, weight and bias.
pub(crate) fn backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
    geo: &Geometry,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let mut dx = vec![S::zero(); x.numel()];
    let mut dw = vec![S::zero(); w.numel()];
    let (xs, ws, dys) = (x.data(), w.data(), dy.data());
    let sw = geo.stride[2];
    geo.for_each_run(|wi, y0, x0, len| {
        let wv = ws[wi];
        let mut acc = S::zero();
        for i in 0..len {
            let g = dys[y0 + i];
            let xi = x0 + i * sw;
            dx[xi] += wv * g;
            acc += g * xs[xi];
        }
        dw[wi] += acc;
    });
    let sp: usize = geo.output.iter().product();
    let mut db = vec![S::zero(); geo.cout];
    for (i, chunk) in dys.chunks(sp).enumerate() {
        db[i % geo.cout] += chunk.iter().copied().sum::<S>();
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dx"),
        Tensor::new(w.shape().to_vec(), dw).expect("dw"),
        Tensor::new(vec![geo.cout], db).expect("db"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extent_formula() {
        assert_eq!(out_extent(224, 4, 4, 0), Some(56));
        assert_eq!(out_extent(5, 3, 1, 1), Some(5));
        assert_eq!(out_extent(7, 2, 2, 0), Some(3));
        assert_eq!(out_extent(1, 3, 1, 0), None);
        assert_eq!(out_extent(16, 3, 2, 1), Some(8));
    }

    #[test]
    fn geometry_rejects_bad_groups() {
        let p = ConvParams {
            groups: 3,
            ..Default::default()
        };
        assert!(Geometry::new(&[1, 4, 1, 4, 4], &[4, 1, 1, 1, 1], &p).is_err());
    }
}
