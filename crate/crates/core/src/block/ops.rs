//! DPE, local/global/window MHRA and FFN.

use crate::autodiff::{Graph, Var};
use crate::block::{BlockConfig, BlockType};
use crate::error::{invalid, Result};
use crate::nn::norm::layernorm_forward;
use crate::nn::{conv::conv_forward, ConvSpec, Ctx, LinearSpec, NormSpec, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Spatiotemporal extent `(T, H, W)` of a token grid.
pub type Grid = [usize; 3];

/// `N×C×T×H×W → N×L×C` with `L = T·H·W` in `(t, h, w)` order.
pub fn to_tokens<S: Scalar>(g: &mut Graph<S>, x: Var) -> Result<(Var, Grid)> {
    let s = g.shape(x).to_vec();
    if s.len() != 5 {
        return Err(invalid("to_tokens", format!("expected N×C×T×H×W, got {s:?}")));
    }
    let grid = [s[2], s[3], s[4]];
    let p = g.permute(x, &[0, 2, 3, 4, 1])?;
    let t = g.reshape(p, &[s[0], s[2] * s[3] * s[4], s[1]])?;
    Ok((t, grid))
}

/// Inverse of [`to_tokens`].
pub fn from_tokens<S: Scalar>(g: &mut Graph<S>, t: Var, grid: Grid) -> Result<Var> {
    let s = g.shape(t).to_vec();
    let [tt, h, w] = grid;
    if s.len() != 3 || s[1] != tt * h * w {
        return Err(invalid("from_tokens", format!("{s:?} does not hold a {grid:?} grid")));
    }
    let r = g.reshape(t, &[s[0], tt, h, w, s[2]])?;
    g.permute(r, &[0, 4, 1, 2, 3])
}

// ---- initialization ---------------------------------------------------

pub(crate) fn init_attention<S: Scalar>(c: usize, prefix: &str, params: &mut ParamStore<S>, rng: &mut Rng) -> Result<()> {
    for name in ["q", "k", "v", "proj"] {
        LinearSpec::new(c, c).init(&format!("{prefix}.{name}"), params, rng, false)?;
    }
    Ok(())
}

/// Create every parameter (and BN buffer) of one block under `prefix`.
pub fn init_block<S: Scalar>(
    cfg: &BlockConfig,
    prefix: &str,
    params: &mut ParamStore<S>,
    buffers: &mut ParamStore<S>,
    rng: &mut Rng,
) -> Result<()> {
    cfg.validate()?;
    let c = cfg.channels;
    cfg.dpe_spec()?.init(&format!("{prefix}.dpe"), params, rng)?;
    let norm = cfg.norm_spec();
    norm.init(&format!("{prefix}.norm1"), params, buffers)?;
    match cfg.block_type {
        BlockType::Local => {
            let m = format!("{prefix}.mhra");
            ConvSpec::pointwise(c, c).init(&format!("{m}.pw1"), params, rng)?;
            NormSpec::batch(c).init(&format!("{m}.bn1"), params, buffers)?;
            let [kt, kh, kw] = cfg.local_kernel;
            let bound = (1.0 / (kt * kh * kw) as f64).sqrt();
            params.insert(
                format!("{m}.affinity"),
                Tensor::uniform([cfg.local_heads(), kt, kh, kw], -bound, bound, rng),
            )?;
            NormSpec::batch(c).init(&format!("{m}.bn2"), params, buffers)?;
            ConvSpec::pointwise(c, c).init(&format!("{m}.pw2"), params, rng)?;
        }
        _ => init_attention(c, &format!("{prefix}.mhra"), params, rng)?,
    }
    norm.init(&format!("{prefix}.norm2"), params, buffers)?;
    let (fc1, fc2) = cfg.ffn_specs();
    fc1.init(&format!("{prefix}.ffn.fc1"), params, rng, false)?;
    fc2.init(&format!("{prefix}.ffn.fc2"), params, rng, false)?;
    Ok(())
}

// ---- DPE --------------------------------------------------------------

/// `x + DWConv(x)` with odd kernel and "same" zero padding.
pub fn dpe<S: Scalar>(g: &mut Graph<S>, ctx: &Ctx<S>, prefix: &str, cfg: &BlockConfig, x: Var) -> Result<Var> {
    let spec = cfg.dpe_spec()?;
    let branch = spec.forward(g, ctx, &format!("{prefix}.dpe"), x)?;
    g.add(x, branch)
}

// ---- local MHRA -------------------------------------------------------

/// Expand per-head affinity kernels `[heads, kt, kh, kw]` into a depthwise
/// weight `[C, 1, kt, kh, kw]`; channel `c` uses head `c / local_head_dim`.
pub fn affinity_weight<S: Scalar>(g: &mut Graph<S>, cfg: &BlockConfig, affinity: Var) -> Result<Var> {
    let idx: Vec<usize> = (0..cfg.channels).map(|c| c / cfg.local_head_dim).collect();
    let per_channel = g.index_select(affinity, 0, &idx)?;
    let [kt, kh, kw] = cfg.local_kernel;
    g.reshape(per_channel, &[cfg.channels, 1, kt, kh, kw])
}

/// PWConv → BN → per-head DWConv with the learned affinity → BN → PWConv.
pub fn local_mhra<S: Scalar>(g: &mut Graph<S>, ctx: &mut Ctx<S>, prefix: &str, cfg: &BlockConfig, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let [kt, kh, kw] = cfg.local_kernel;
    // A radius beyond the extent reaches past the padding on both sides.
    if kt / 2 > s[2] || kh / 2 > s[3] || kw / 2 > s[4] {
        return Err(invalid(
            "local_mhra",
            format!("kernel {:?} has a radius beyond the extent of {s:?}", cfg.local_kernel),
        ));
    }
    let c = cfg.channels;
    let pw = ConvSpec::pointwise(c, c);
    let bn = NormSpec::batch(c);
    let v = pw.forward(g, ctx, &format!("{prefix}.pw1"), x)?;
    let v = bn.forward(g, ctx, &format!("{prefix}.bn1"), v)?;
    let a = ctx.param(&format!("{prefix}.affinity"))?;
    let w = affinity_weight(g, cfg, a)?;
    let r = conv_forward(g, v, &cfg.affinity_spec()?, w, None)?;
    let r = bn.forward(g, ctx, &format!("{prefix}.bn2"), r)?;
    pw.forward(g, ctx, &format!("{prefix}.pw2"), r)
}

// ---- global / window MHRA ---------------------------------------------

/// Attention output together with the `[B·heads, L, L]` affinity rows.
pub struct Attention {
    pub out: Var,
    pub probs: Var,
}

/// Multi-head attention over already-normalized tokens `[B, L, C]`.
pub fn attention<S: Scalar>(g: &mut Graph<S>, ctx: &Ctx<S>, prefix: &str, cfg: &BlockConfig, t: Var) -> Result<Attention> {
    let s = g.shape(t).to_vec();
    let (b, l, c) = (s[0], s[1], s[2]);
    if l == 0 {
        return Err(invalid("global_mhra", "empty token sequence"));
    }
    let (nh, hd) = (cfg.heads(), cfg.head_dim);
    let lin = LinearSpec::new(c, c);
    let split = |g: &mut Graph<S>, name: &str| -> Result<Var> {
        let p = lin.forward(g, ctx, &format!("{prefix}.{name}"), t)?;
        let p = g.reshape(p, &[b, l, nh, hd])?;
        let p = g.permute(p, &[0, 2, 1, 3])?;
        g.reshape(p, &[b * nh, l, hd])
    };
    let q = split(g, "q")?;
    let k = split(g, "k")?;
    let v = split(g, "v")?;
    let kt = g.transpose_last(k)?;
    let mut logits = g.matmul(q, kt)?;
    if cfg.qk_scale {
        logits = g.mul_scalar(logits, S::of(1.0 / (hd as f64).sqrt()));
    }
    let probs = g.softmax(logits)?;
    let o = g.matmul(probs, v)?;
    let o = g.reshape(o, &[b, nh, l, hd])?;
    let o = g.permute(o, &[0, 2, 1, 3])?;
    let o = g.reshape(o, &[b, l, c])?;
    let out = lin.forward(g, ctx, &format!("{prefix}.proj"), o)?;
    Ok(Attention { out, probs })
}

/// LN then attention over all `T·H·W` tokens of an `N×C×T×H×W` input, with
/// optional extra tokens (`[N, E, C]`) prepended to the sequence. Returns
/// the output map and the updated extra tokens.
///
/// `norm_prefix` names the LN parameters; `prefix` the Q/K/V/U projections.
pub fn global_mhra<S: Scalar>(
    g: &mut Graph<S>,
    ctx: &Ctx<S>,
    norm_prefix: &str,
    prefix: &str,
    cfg: &BlockConfig,
    x: Var,
    extra: Option<Var>,
) -> Result<(Var, Option<Var>)> {
    let (t, grid) = to_tokens(g, x)?;
    let ln = NormSpec::layer(cfg.channels);
    let (seq, n_extra) = match extra {
        Some(e) => {
            let n = g.shape(e)[1];
            (g.concat(&[e, t], 1)?, n)
        }
        None => (t, 0),
    };
    let normed = layernorm_forward(g, ctx, norm_prefix, &ln, seq)?;
    let att = attention(g, ctx, prefix, cfg, normed)?;
    let l = grid.iter().product::<usize>();
    let (body, extra_out) = if n_extra > 0 {
        (
            g.slice(att.out, 1, n_extra, l)?,
            Some(g.slice(att.out, 1, 0, n_extra)?),
        )
    } else {
        (att.out, None)
    };
    Ok((from_tokens(g, body, grid)?, extra_out))
}

/// Attention inside non-overlapping `wh×ww` windows of already-normalized
/// tokens `[N, L, C]` laid out on `grid`. `T` is never partitioned. `H`/`W`
/// are zero-padded up to multiples of the window and cropped afterwards; a
/// window larger than the map is clamped to the full extent. When a single
/// window covers the whole map this is exactly [`attention`].
pub fn window_attention<S: Scalar>(
    g: &mut Graph<S>,
    ctx: &Ctx<S>,
    prefix: &str,
    cfg: &BlockConfig,
    t: Var,
    grid: Grid,
    window: [usize; 2],
) -> Result<Var> {
    let [tt, h, w] = grid;
    let (wh, ww) = (window[0].min(h), window[1].min(w));
    if wh == 0 || ww == 0 {
        return Err(invalid("window_mhra", "window extents must be positive"));
    }
    if wh == h && ww == w {
        return Ok(attention(g, ctx, prefix, cfg, t)?.out);
    }
    let s = g.shape(t).to_vec();
    let (n, c) = (s[0], s[2]);
    let (hp, wp) = (h.div_ceil(wh) * wh, w.div_ceil(ww) * ww);
    let mut x = g.reshape(t, &[n, tt, h, w, c])?;
    if hp > h {
        let z = g.constant(Tensor::zeros([n, tt, hp - h, w, c]));
        x = g.concat(&[x, z], 2)?;
    }
    if wp > w {
        let z = g.constant(Tensor::zeros([n, tt, hp, wp - w, c]));
        x = g.concat(&[x, z], 3)?;
    }
    let (nh, nw) = (hp / wh, wp / ww);
    let x = g.reshape(x, &[n, tt, nh, wh, nw, ww, c])?;
    let x = g.permute(x, &[0, 2, 4, 1, 3, 5, 6])?;
    let x = g.reshape(x, &[n * nh * nw, tt * wh * ww, c])?;
    let y = attention(g, ctx, prefix, cfg, x)?.out;
    let y = g.reshape(y, &[n, nh, nw, tt, wh, ww, c])?;
    let y = g.permute(y, &[0, 3, 1, 4, 2, 5, 6])?;
    let mut y = g.reshape(y, &[n, tt, hp, wp, c])?;
    if hp > h {
        y = g.slice(y, 2, 0, h)?;
    }
    if wp > w {
        y = g.slice(y, 3, 0, w)?;
    }
    g.reshape(y, &[n, tt * h * w, c])
}

/// LN then windowed attention on an `N×C×T×H×W` map.
pub fn window_mhra<S: Scalar>(
    g: &mut Graph<S>,
    ctx: &Ctx<S>,
    norm_prefix: &str,
    prefix: &str,
    cfg: &BlockConfig,
    x: Var,
    window: [usize; 2],
) -> Result<Var> {
    let (t, grid) = to_tokens(g, x)?;
    let normed = layernorm_forward(g, ctx, norm_prefix, &NormSpec::layer(cfg.channels), t)?;
    let y = window_attention(g, ctx, prefix, cfg, normed, grid, window)?;
    from_tokens(g, y, grid)
}

// ---- FFN --------------------------------------------------------------

/// Per-token `Linear(C→rC) → GELU → Linear(rC→C)` over the last axis.
pub fn ffn<S: Scalar>(g: &mut Graph<S>, ctx: &Ctx<S>, prefix: &str, cfg: &BlockConfig, t: Var) -> Result<Var> {
    let (fc1, fc2) = cfg.ffn_specs();
    let h = fc1.forward(g, ctx, &format!("{prefix}.fc1"), t)?;
    let h = g.gelu(h);
    fc2.forward(g, ctx, &format!("{prefix}.fc2"), h)
}
