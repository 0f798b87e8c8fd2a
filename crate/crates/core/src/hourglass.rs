//! Hourglass blocks: a learnable score token ranks visual tokens, the least
//! important ones are fused into a single representative, attention and FFN
//! run on the reduced set, and the representative is replicated back.

use crate::autodiff::{Graph, Var};
use crate::block::{dpe, ffn, from_tokens, to_tokens, BlockConfig, BlockType, Grid};
use crate::error::{invalid, Result};
use crate::nn::norm::layernorm_forward;
use crate::nn::{drop_path, Ctx, LinearSpec, NormSpec};
use crate::tensor::{Scalar, Tensor};

/// Shrink settings shared by every hourglass block of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HourglassConfig {
    /// Fraction of visual tokens kept, in `(0, 1]`.
    pub ratio: f64,
    /// Whether the first hourglass block of a stage already shrinks (with no
    /// running importance yet) or only computes the importance.
    pub shrink_first: bool,
}

impl Default for HourglassConfig {
    fn default() -> Self {
        Self {
            ratio: 0.5,
            shrink_first: true,
        }
    }
}

impl HourglassConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(invalid("hourglass", format!("shrink ratio {} outside (0, 1]", self.ratio)));
        }
        Ok(())
    }

    /// Number of visual tokens kept out of `l`, at least one.
    pub fn kept(&self, l: usize) -> usize {
        ((self.ratio * l as f64).floor() as usize).clamp(1, l.max(1))
    }
}

/// The score token `[N, 1, C]` and the running importance `[N, L]` carried
/// between consecutive hourglass blocks of one stage.
#[derive(Clone, Copy, Debug)]
pub struct ScoreToken {
    pub token: Var,
    pub prev: Option<Var>,
}

impl ScoreToken {
    /// Broadcast a learnable `[C]` (or `[1, 1, C]`) vector over a batch.
    pub fn new<S: Scalar>(g: &mut Graph<S>, param: Var, batch: usize) -> Result<Self> {
        let c = g.value(param).numel();
        let p = g.reshape(param, &[1, 1, c])?;
        let token = g.index_select(p, 0, &vec![0; batch])?;
        Ok(Self { token, prev: None })
    }

    /// Forget the running importance (stage boundary: `L` changes).
    pub fn reset(&mut self) {
        self.prev = None;
    }
}

/// How one sample's `L` visual tokens are reduced to `M` and restored.
#[derive(Clone, Debug, PartialEq)]
pub struct ShrinkPlan {
    pub importance: Vec<f64>,
    /// Ascending.
    pub kept: Vec<usize>,
    /// Ascending.
    pub discarded: Vec<usize>,
    /// `A_d / Σ A_discarded`, aligned with `discarded`.
    pub fused_weights: Vec<f64>,
    pub original_len: usize,
    pub grid: Grid,
}

impl ShrinkPlan {
    /// Keep the `kept` most important tokens; ties go to the lower index.
    pub fn new(importance: &[f64], kept: usize, grid: Grid) -> Result<Self> {
        let l = importance.len();
        if l == 0 {
            return Err(invalid("shrink_tokens", "empty token sequence"));
        }
        if l != grid.iter().product::<usize>() {
            return Err(invalid("shrink_tokens", format!("{l} scores for grid {grid:?}")));
        }
        let k = kept.clamp(1, l);
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
        let mut keep = order[..k].to_vec();
        let mut drop = order[k..].to_vec();
        keep.sort_unstable();
        drop.sort_unstable();
        let total: f64 = drop.iter().map(|&d| importance[d]).sum();
        let fused_weights = drop
            .iter()
            .map(|&d| {
                if total > 0.0 {
                    importance[d] / total
                } else {
                    1.0 / drop.len() as f64
                }
            })
            .collect();
        Ok(Self {
            importance: importance.to_vec(),
            kept: keep,
            discarded: drop,
            fused_weights,
            original_len: l,
            grid,
        })
    }

    /// The plan that changes nothing.
    pub fn identity(grid: Grid) -> Self {
        let l = grid.iter().product();
        Self {
            importance: vec![1.0 / l as f64; l],
            kept: (0..l).collect(),
            discarded: Vec::new(),
            fused_weights: Vec::new(),
            original_len: l,
            grid,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.discarded.is_empty()
    }

    /// Tokens after shrinking: the kept ones plus one representative when
    /// anything was discarded.
    pub fn reduced_len(&self) -> usize {
        self.kept.len() + usize::from(!self.discarded.is_empty())
    }
}

fn check_plans(op: &'static str, plans: &[ShrinkPlan], n: usize, l: usize) -> Result<usize> {
    if plans.len() != n {
        return Err(invalid(op, format!("{} plans for a batch of {n}", plans.len())));
    }
    let m = plans[0].reduced_len();
    for p in plans {
        if p.original_len != l || p.reduced_len() != m {
            return Err(invalid(op, "plans disagree with the token layout"));
        }
    }
    Ok(m)
}

/// Head-averaged attention of the score token's query over the keys of the
/// visual tokens `t: [N, L, C]` (already after DPE), using the block's
/// `norm1` LN and `q`/`k` projections. Folds in the running importance and
/// stores the result back in `score.prev`. Returns `[N, L]`.
pub fn compute_importance<S: Scalar>(
    g: &mut Graph<S>,
    ctx: &Ctx<S>,
    prefix: &str,
    cfg: &BlockConfig,
    t: Var,
    score: &mut ScoreToken,
) -> Result<Var> {
    let s = g.shape(t).to_vec();
    let (n, l, c) = (s[0], s[1], s[2]);
    if l == 0 {
        return Err(invalid("compute_importance", "empty token sequence"));
    }
    let (nh, hd) = (cfg.heads(), cfg.head_dim);
    let seq = g.concat(&[score.token, t], 1)?;
    let normed = layernorm_forward(g, ctx, &format!("{prefix}.norm1"), &NormSpec::layer(c), seq)?;
    let sn = g.slice(normed, 1, 0, 1)?;
    let tn = g.slice(normed, 1, 1, l)?;
    let lin = LinearSpec::new(c, c);
    let q = lin.forward(g, ctx, &format!("{prefix}.mhra.q"), sn)?;
    let q = g.reshape(q, &[n * nh, 1, hd])?;
    let k = lin.forward(g, ctx, &format!("{prefix}.mhra.k"), tn)?;
    let k = g.reshape(k, &[n, l, nh, hd])?;
    let k = g.permute(k, &[0, 2, 3, 1])?;
    let k = g.reshape(k, &[n * nh, hd, l])?;
    let mut logits = g.matmul(q, k)?;
    if cfg.qk_scale {
        logits = g.mul_scalar(logits, S::of(1.0 / (hd as f64).sqrt()));
    }
    let rows = g.softmax(logits)?;
    let rows = g.reshape(rows, &[n, nh, l])?;
    let mut a = g.mean_axis(rows, 1)?;
    if let Some(prev) = score.prev {
        if g.shape(prev) != [n, l] {
            return Err(invalid("compute_importance", "running importance from a different resolution"));
        }
        let sum = g.add(a, prev)?;
        a = g.mul_scalar(sum, S::of(0.5));
    }
    score.prev = Some(a);
    Ok(a)
}

/// Per-sample plans from an importance tensor `[N, L]`.
pub fn plan_shrink<S: Scalar>(importance: &Tensor<S>, grid: Grid, ratio: f64) -> Result<Vec<ShrinkPlan>> {
    let s = importance.shape();
    if s.len() != 2 {
        return Err(invalid("shrink_tokens", format!("importance must be [N, L], got {s:?}")));
    }
    let l = s[1];
    let cfg = HourglassConfig { ratio, shrink_first: true };
    cfg.validate()?;
    (0..s[0])
        .map(|b| {
            let row: Vec<f64> = importance.data()[b * l..(b + 1) * l].iter().map(|v| v.as_f64()).collect();
            ShrinkPlan::new(&row, cfg.kept(l), grid)
        })
        .collect()
}

/// `t: [N, L, C] → [N, M, C]`: kept tokens in index order followed by the
/// importance-weighted fusion of the discarded ones. The fusion weights are
/// taken from `importance` on the tape, so gradients reach the scores; the
/// selection itself is fixed by `plans`.
pub fn shrink_tokens<S: Scalar>(g: &mut Graph<S>, t: Var, importance: Var, plans: &[ShrinkPlan]) -> Result<Var> {
    let s = g.shape(t).to_vec();
    let (n, l, c) = (s[0], s[1], s[2]);
    let m = check_plans("shrink_tokens", plans, n, l)?;
    if plans[0].is_identity() {
        return Ok(t);
    }
    let k = plans[0].kept.len();
    let d = l - k;
    let flat = g.reshape(t, &[n * l, c])?;
    let kept_idx: Vec<usize> = plans
        .iter()
        .enumerate()
        .flat_map(|(b, p)| p.kept.iter().map(move |&i| b * l + i))
        .collect();
    let drop_idx: Vec<usize> = plans
        .iter()
        .enumerate()
        .flat_map(|(b, p)| p.discarded.iter().map(move |&i| b * l + i))
        .collect();
    let kept = g.index_select(flat, 0, &kept_idx)?;
    let kept = g.reshape(kept, &[n, k, c])?;
    let dropped = g.index_select(flat, 0, &drop_idx)?;
    let dropped = g.reshape(dropped, &[n, d, c])?;

    let a = g.reshape(importance, &[n * l])?;
    let a = g.index_select(a, 0, &drop_idx)?;
    let a = g.reshape(a, &[n, 1, d])?;
    let total = g.sum_axis(a, 2)?;
    let total = g.reshape(total, &[n, 1, 1])?;
    let ones = g.constant(Tensor::ones([n, 1, d]));
    let total = g.matmul(total, ones)?;
    let inv = g.recip(total);
    let w = g.mul(a, inv)?;
    let rep = g.matmul(w, dropped)?;
    let out = g.concat(&[kept, rep], 1)?;
    debug_assert_eq!(g.shape(out)[1], m);
    Ok(out)
}

/// `y: [N, M, C] → [N, L, C]`: kept positions take their processed token,
/// every discarded position a copy of the processed representative.
pub fn recover_tokens<S: Scalar>(g: &mut Graph<S>, y: Var, plans: &[ShrinkPlan]) -> Result<Var> {
    let s = g.shape(y).to_vec();
    if s.len() != 3 || plans.len() != s[0] {
        return Err(invalid("recover_tokens", format!("{s:?} does not match {} plans", plans.len())));
    }
    let (n, m, c) = (s[0], s[1], s[2]);
    let l = plans[0].original_len;
    if check_plans("recover_tokens", plans, n, l)? != m {
        return Err(invalid("recover_tokens", format!("expected {} reduced tokens, got {m}", plans[0].reduced_len())));
    }
    if plans[0].is_identity() {
        return Ok(y);
    }
    let mut idx = vec![0; n * l];
    for (b, p) in plans.iter().enumerate() {
        for i in 0..l {
            idx[b * l + i] = b * m + m - 1;
        }
        for (j, &i) in p.kept.iter().enumerate() {
            idx[b * l + i] = b * m + j;
        }
    }
    let flat = g.reshape(y, &[n * m, c])?;
    let out = g.index_select(flat, 0, &idx)?;
    g.reshape(out, &[n, l, c])
}

/// Result of one hourglass block.
pub struct HourglassOutput {
    pub x: Var,
    pub plans: Vec<ShrinkPlan>,
    /// Importance `[N, L]`, absent when nothing is shrunk at ratio 1.
    pub importance: Option<Var>,
}

/// DPE → importance → shrink → `[LN → MHRA → +]`, `[LN → FFN → +]` over the
/// score token and the reduced tokens → recover. The score token joins the
/// attention but skips DPE, shrinking and recovery; it is updated in place.
///
/// `first_in_stage` marks the first hourglass block after a stage boundary.
/// `frozen` replaces the computed selection (gradient checks hold it fixed).
#[allow(clippy::too_many_arguments)]
pub fn h_block_forward<S: Scalar>(
    g: &mut Graph<S>,
    ctx: &mut Ctx<S>,
    prefix: &str,
    cfg: &BlockConfig,
    hg: &HourglassConfig,
    x: Var,
    score: &mut ScoreToken,
    first_in_stage: bool,
    frozen: Option<&[ShrinkPlan]>,
) -> Result<HourglassOutput> {
    if cfg.block_type != BlockType::Hourglass {
        return Err(invalid("h_block_forward", format!("{:?} block", cfg.block_type)));
    }
    cfg.validate()?;
    hg.validate()?;
    if first_in_stage {
        score.reset();
    }
    let x = dpe(g, ctx, prefix, cfg, x)?;
    let (t, grid) = to_tokens(g, x)?;
    let (n, c) = (g.shape(t)[0], g.shape(t)[2]);
    if g.shape(score.token) != [n, 1, c] {
        return Err(invalid("h_block_forward", "score token does not match the batch"));
    }

    let (importance, plans) = if hg.ratio >= 1.0 && frozen.is_none() {
        (None, vec![ShrinkPlan::identity(grid); n])
    } else {
        let a = compute_importance(g, ctx, prefix, cfg, t, score)?;
        let plans = match frozen {
            Some(p) => p.to_vec(),
            None if first_in_stage && !hg.shrink_first => vec![ShrinkPlan::identity(grid); n],
            None => plan_shrink(g.value(a), grid, hg.ratio)?,
        };
        (Some(a), plans)
    };
    let reduced = match importance {
        Some(a) => shrink_tokens(g, t, a, &plans)?,
        None => t,
    };
    let m = g.shape(reduced)[1];

    let rate = cfg.drop_path_rate;
    let ln = NormSpec::layer(c);
    let seq = g.concat(&[score.token, reduced], 1)?;
    let h = layernorm_forward(g, ctx, &format!("{prefix}.norm1"), &ln, seq)?;
    let h = crate::block::attention(g, ctx, &format!("{prefix}.mhra"), cfg, h)?.out;
    let h = drop_path(g, h, rate, ctx.mode, &mut ctx.rng)?;
    let y = g.add(seq, h)?;
    let h = layernorm_forward(g, ctx, &format!("{prefix}.norm2"), &ln, y)?;
    let h = ffn(g, ctx, &format!("{prefix}.ffn"), cfg, h)?;
    let h = drop_path(g, h, rate, ctx.mode, &mut ctx.rng)?;
    let z = g.add(y, h)?;

    score.token = g.slice(z, 1, 0, 1)?;
    let body = g.slice(z, 1, 1, m)?;
    let restored = recover_tokens(g, body, &plans)?;
    Ok(HourglassOutput {
        x: from_tokens(g, restored, grid)?,
        plans,
        importance,
    })
}
