use crate::autodiff::Graph;
use crate::block::reference::local_mhra_literal;
use crate::block::{global_mhra, init_block, local_mhra, window_mhra, BlockConfig, BlockType};
use crate::checks::Outcome;
use crate::error::Result;
use crate::hourglass::{plan_shrink, recover_tokens, shrink_tokens};
use crate::model::inflate_weight;
use crate::nn::{ConvSpec, Ctx, Mode, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Kernel sizes swept by the local equivalence check.
pub const LOCAL_KERNELS: [usize; 5] = [1, 3, 5, 7, 9];
pub const LOCAL_TOL: f64 = 1e-10;
pub const INFLATE_TOL: f64 = 1e-6;

fn init(cfg: &BlockConfig, rng: &mut Rng) -> Result<(ParamStore<f64>, ParamStore<f64>)> {
    let mut params = ParamStore::new();
    let mut buffers = ParamStore::new();
    init_block(cfg, "b", &mut params, &mut buffers, rng)?;
    for (p, t) in params.iter_mut() {
        if p.contains("norm") || p.contains(".bn") {
            for v in t.data_mut() {
                *v += rng.uniform_range(-0.2, 0.2);
            }
        }
    }
    for (p, t) in buffers.iter_mut() {
        let (lo, hi) = if p.ends_with("running_var") { (0.5, 1.5) } else { (-0.3, 0.3) };
        *t = Tensor::uniform(t.shape().to_vec(), lo, hi, rng);
    }
    Ok((params, buffers))
}

/// Depthwise-conv local MHRA against the explicit neighbourhood sum, eval
/// mode, random `1×8×1×6×6` input.
pub fn local_equivalence(kernel: usize, rng: &mut Rng) -> Result<f64> {
    let mut cfg = BlockConfig::new(BlockType::Local, 8, 8);
    cfg.local_kernel = [1, kernel, kernel];
    let (params, buffers) = init(&cfg, rng)?;
    let x = Tensor::<f64>::uniform([1, 8, 1, 6, 6], -1.0, 1.0, rng);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut ctx = Ctx::bind(&mut g, &params, Mode::Eval, Rng::seed(0)).with_buffers(&buffers);
    let y = local_mhra(&mut g, &mut ctx, "b.mhra", &cfg, xv)?;
    let literal = local_mhra_literal(&x, &cfg, &params, &buffers, "b.mhra")?;
    Ok(g.value(y).max_abs_diff(&literal))
}

/// Whether a window covering the whole map reproduces global attention bit
/// for bit.
pub fn window_global_identity(rng: &mut Rng) -> Result<bool> {
    let cfg = BlockConfig::new(BlockType::Global, 8, 4);
    let (params, buffers) = init(&cfg, rng)?;
    let x = Tensor::<f64>::uniform([2, 8, 1, 5, 7], -1.0, 1.0, rng);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let ctx = Ctx::bind(&mut g, &params, Mode::Eval, Rng::seed(0)).with_buffers(&buffers);
    let (gy, _) = global_mhra(&mut g, &ctx, "b.norm1", "b.mhra", &cfg, xv, None)?;
    let wcfg = cfg.clone().with_window([5, 7]);
    let wy = window_mhra(&mut g, &ctx, "b.norm1", "b.mhra", &wcfg, xv, [5, 7])?;
    let (a, b) = (g.value(gy), g.value(wy));
    Ok(a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

/// Shrinking at ratio 1 followed by recovery returns the tokens untouched.
pub fn shrink_identity(rng: &mut Rng) -> Result<bool> {
    let grid = [1, 4, 5];
    let t = Tensor::<f64>::uniform([3, 20, 8], -1.0, 1.0, rng);
    let a = Tensor::<f64>::from_fn([3, 20], |_| rng.uniform());
    let plans = plan_shrink(&a, grid, 1.0)?;
    let mut g = Graph::new();
    let tv = g.constant(t.clone());
    let av = g.constant(a);
    let s = shrink_tokens(&mut g, tv, av, &plans)?;
    let r = recover_tokens(&mut g, s, &plans)?;
    let out = g.value(r);
    Ok(plans.iter().all(|p| p.is_identity())
        && out.shape() == t.shape()
        && out.data().iter().zip(t.data()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

/// Largest deviation between an inflated depthwise conv on a static clip
/// (interior frames) and the 2-D conv on one frame.
pub fn inflation_interior(rng: &mut Rng) -> Result<f64> {
    let c = 4;
    let spec2 = ConvSpec::depthwise_same(c, [1, 3, 3])?;
    let spec3 = ConvSpec::depthwise_same(c, [3, 3, 3])?;
    let w2 = Tensor::<f64>::uniform(spec2.weight_shape(), -1.0, 1.0, rng);
    let b = Tensor::<f64>::uniform([c], -1.0, 1.0, rng);
    let w3 = inflate_weight(&w2, 3)?;
    let frame = Tensor::<f64>::uniform([1, c, 1, 6, 6], -1.0, 1.0, rng);
    let t = 5;
    let clip = Tensor::from_fn([1, c, t, 6, 6], |i| {
        let (ch, r) = (i / (t * 36), i % 36);
        frame.data()[ch * 36 + r]
    });
    let mut g = Graph::new();
    let (fv, cv) = (g.constant(frame), g.constant(clip));
    let (w2v, w3v, bv) = (g.constant(w2), g.constant(w3), g.constant(b));
    let y2 = g.conv(fv, w2v, Some(bv), spec2.params())?;
    let y3 = g.conv(cv, w3v, Some(bv), spec3.params())?;
    let (y2, y3) = (g.value(y2), g.value(y3));
    let mut worst = 0.0f64;
    for ch in 0..c {
        for f in 1..t - 1 {
            for p in 0..36 {
                let d = y3.data()[(ch * t + f) * 36 + p] - y2.data()[ch * 36 + p];
                worst = worst.max(d.abs());
            }
        }
    }
    Ok(worst)
}

/// Local↔literal for every kernel size, window = global, shrink identity and
/// inflation on interior frames.
pub fn equivcheck_suite(seed: u64) -> Vec<Outcome> {
    let mut rng = Rng::seed(seed);
    let mut out = Vec::new();
    for k in LOCAL_KERNELS {
        let label = format!("local_mhra conv vs literal gather, {k}x{k}");
        out.push(match local_equivalence(k, &mut rng) {
            Ok(d) => Outcome::new(label, d <= LOCAL_TOL, format!("max |diff| {d:.3e} (limit {LOCAL_TOL:e})")),
            Err(e) => Outcome::from_error(label, e),
        });
    }
    let label = "window == full extent is bit-identical to global";
    out.push(match window_global_identity(&mut rng) {
        Ok(b) => Outcome::new(label, b, if b { "bit-identical" } else { "outputs differ" }),
        Err(e) => Outcome::from_error(label, e),
    });
    let label = "shrink ratio 1 then recover is the identity";
    out.push(match shrink_identity(&mut rng) {
        Ok(b) => Outcome::new(label, b, if b { "bit-identical" } else { "tokens changed" }),
        Err(e) => Outcome::from_error(label, e),
    });
    let label = "inflated DWConv matches 2-D on interior frames";
    out.push(match inflation_interior(&mut rng) {
        Ok(d) => Outcome::new(label, d <= INFLATE_TOL, format!("max |diff| {d:.3e} (limit {INFLATE_TOL:e})")),
        Err(e) => Outcome::from_error(label, e),
    });
    out
}
