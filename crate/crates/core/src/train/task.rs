use std::f64::consts::PI;

use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Two-class stripe images (or clips).
///
/// Sample `i` has label `i % 2` and its own generator seeded from
/// `seed` and `i`. With frequency `f ~ U[1, 3]` cycles per image and phase
/// `φ ~ U[0, 2π)`, every channel and frame holds
///
/// ```text
/// x[h, w] = sin(2π·f·u/size + φ) + 0.3·ε,   ε ~ N(0, 1)
/// ```
///
/// where `u = h` for class 0 (horizontal stripes) and `u = w` for class 1
/// (vertical stripes).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticTask {
    pub seed: u64,
    pub size: usize,
    pub frames: usize,
    pub channels: usize,
    pub noise: f64,
    /// Number of distinct training samples.
    pub samples: usize,
}

impl SyntheticTask {
    pub const CLASSES: usize = 2;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            size: 32,
            frames: 1,
            channels: 3,
            noise: 0.3,
            samples: 512,
        }
    }

    pub fn label(&self, index: usize) -> usize {
        index % Self::CLASSES
    }

    /// `C×T×S×S` sample and its label.
    pub fn sample<S: Scalar>(&self, index: usize) -> (Tensor<S>, usize) {
        let label = self.label(index);
        let mut rng = Rng::seed(self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let freq = rng.uniform_range(1.0, 3.0);
        let phase = rng.uniform_range(0.0, 2.0 * PI);
        let s = self.size;
        let n = self.channels * self.frames * s * s;
        let mut data = Vec::with_capacity(n);
        for _ in 0..self.channels * self.frames {
            for h in 0..s {
                for w in 0..s {
                    let u = if label == 0 { h } else { w };
                    let v = (2.0 * PI * freq * u as f64 / s as f64 + phase).sin() + self.noise * rng.normal();
                    data.push(S::of(v));
                }
            }
        }
        let t = Tensor::new(vec![self.channels, self.frames, s, s], data).expect("sample shape");
        (t, label)
    }

    /// Stack samples `indices` into an `N×C×T×S×S` batch.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> (Tensor<S>, Vec<usize>) {
        let s = self.size;
        let mut data = Vec::with_capacity(indices.len() * self.channels * self.frames * s * s);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (x, y) = self.sample::<S>(i);
            data.extend_from_slice(x.data());
            labels.push(y);
        }
        let t = Tensor::new(vec![indices.len(), self.channels, self.frames, s, s], data).expect("batch shape");
        (t, labels)
    }
}
