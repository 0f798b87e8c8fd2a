use crate::autodiff::{Graph, Var};
use crate::block::ops::{dpe, ffn, from_tokens, local_mhra, to_tokens, window_attention, attention};
use crate::block::{BlockConfig, BlockType};
use crate::error::{invalid, Result};
use crate::nn::{drop_path, Ctx, NormSpec};
use crate::tensor::Scalar;

/// Which sub-modules of a block run. Disabling one leaves its residual as the
/// identity, which is how the structural ablations are expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockParts {
    pub dpe: bool,
    pub mhra: bool,
    pub ffn: bool,
}

impl Default for BlockParts {
    fn default() -> Self {
        Self {
            dpe: true,
            mhra: true,
            ffn: true,
        }
    }
}

/// One block on an `N×C×T×H×W` input:
///
/// ```text
/// X = DPE(X_in) + X_in
/// Y = DropPath(MHRA(Norm(X))) + X
/// Z = DropPath(FFN(Norm(Y))) + Y
/// ```
///
/// Norm is BN on the map for local blocks and LN on tokens otherwise.
/// Hourglass blocks carry a score token and live in [`crate::hourglass`].
pub fn uniformer_block<S: Scalar>(g: &mut Graph<S>, ctx: &mut Ctx<S>, prefix: &str, cfg: &BlockConfig, x: Var) -> Result<Var> {
    uniformer_block_with(g, ctx, prefix, cfg, x, BlockParts::default())
}

pub fn uniformer_block_with<S: Scalar>(
    g: &mut Graph<S>,
    ctx: &mut Ctx<S>,
    prefix: &str,
    cfg: &BlockConfig,
    x: Var,
    parts: BlockParts,
) -> Result<Var> {
    cfg.validate()?;
    if g.shape(x).len() != 5 || g.shape(x)[1] != cfg.channels {
        return Err(invalid(
            "uniformer_block",
            format!("input {:?} does not have {} channels", g.shape(x), cfg.channels),
        ));
    }
    let x = if parts.dpe { dpe(g, ctx, prefix, cfg, x)? } else { x };
    let rate = cfg.drop_path_rate;
    match cfg.block_type {
        BlockType::Local => {
            let bn = NormSpec::batch(cfg.channels);
            let y = if parts.mhra {
                let h = bn.forward(g, ctx, &format!("{prefix}.norm1"), x)?;
                let h = local_mhra(g, ctx, &format!("{prefix}.mhra"), cfg, h)?;
                let h = drop_path(g, h, rate, ctx.mode, &mut ctx.rng)?;
                g.add(x, h)?
            } else {
                x
            };
            if !parts.ffn {
                return Ok(y);
            }
            let h = bn.forward(g, ctx, &format!("{prefix}.norm2"), y)?;
            let (t, grid) = to_tokens(g, h)?;
            let t = ffn(g, ctx, &format!("{prefix}.ffn"), cfg, t)?;
            let h = from_tokens(g, t, grid)?;
            let h = drop_path(g, h, rate, ctx.mode, &mut ctx.rng)?;
            g.add(y, h)
        }
        BlockType::Global | BlockType::Window => {
            let ln = NormSpec::layer(cfg.channels);
            let (t, grid) = to_tokens(g, x)?;
            let y = if parts.mhra {
                let h = ln.forward(g, ctx, &format!("{prefix}.norm1"), t)?;
                let mhra = format!("{prefix}.mhra");
                let h = match cfg.window {
                    Some(w) => window_attention(g, ctx, &mhra, cfg, h, grid, w)?,
                    None => attention(g, ctx, &mhra, cfg, h)?.out,
                };
                let h = drop_path(g, h, rate, ctx.mode, &mut ctx.rng)?;
                g.add(t, h)?
            } else {
                t
            };
            let z = if parts.ffn {
                let h = ln.forward(g, ctx, &format!("{prefix}.norm2"), y)?;
                let h = ffn(g, ctx, &format!("{prefix}.ffn"), cfg, h)?;
                let h = drop_path(g, h, rate, ctx.mode, &mut ctx.rng)?;
                g.add(y, h)?
            } else {
                y
            };
            from_tokens(g, z, grid)
        }
        BlockType::Hourglass => Err(invalid(
            "uniformer_block",
            "hourglass blocks need a score token; use hourglass::h_block_forward",
        )),
    }
}
