//! Central finite-difference checking of tape gradients.

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Default perturbation for 64-bit central differences.
pub const STEP: f64 = 1e-5;
/// Default acceptance bound on the relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub name: String,
    pub max_rel_err: f64,
    /// `(input index, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Magnitude below which gradients are compared absolutely. Central
/// differences of an exactly-zero gradient (a bias in front of a softmax or
/// a batch norm) leave round-off of order `ulp(f)/h`.
pub const FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compare the analytic gradient of a scalar function with central
/// differences at step `h`.
///
/// `f` receives a fresh tape and one leaf per input and must return a scalar.
/// When `max_per_input` is set, at most that many entries of each input are
/// probed, drawn with `rng`.
pub fn check<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    f: F,
    h: f64,
    max_per_input: Option<usize>,
    rng: &mut Rng,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(invalid("gradcheck", format!("{name}: function must return a scalar")));
    }
    g.backward(out)?;

    let mut report = GradcheckReport {
        name: name.to_string(),
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (ii, (input, var)) in inputs.iter().zip(&vars).enumerate() {
        let zeros = Tensor::zeros(input.shape().to_vec());
        let analytic = g.grad(*var).unwrap_or(&zeros);
        let mut entries: Vec<usize> = (0..input.numel()).collect();
        if let Some(k) = max_per_input {
            if entries.len() > k {
                rng.shuffle(&mut entries);
                entries.truncate(k);
                entries.sort_unstable();
            }
        }
        for e in entries {
            let orig = input.data()[e];
            probe[ii].data_mut()[e] = orig + h;
            let plus = eval(&probe)?;
            probe[ii].data_mut()[e] = orig - h;
            let minus = eval(&probe)?;
            probe[ii].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.data()[e], numeric);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (ii, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Reduce an arbitrary-shaped output to a scalar with fixed random weights,
/// so that every output element contributes a distinct, nonzero gradient.
pub fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = Rng::seed(seed);
    let w = Tensor::uniform(g.shape(out).to_vec(), 0.5, 1.5, &mut rng);
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}
