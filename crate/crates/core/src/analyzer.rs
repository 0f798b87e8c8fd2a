//! Closed-form parameter and MAC accounting, without running any tensors.
//!
//! One MAC is reported as one FLOP. Softmax, normalization, activations and
//! residual additions count zero.

use std::fmt::Write as _;

use crate::block::{BlockConfig, BlockType, Grid};
use crate::error::Result;
use crate::model::{InputSpec, ModelConfig};
use crate::nn::{ConvSpec, LinearSpec};

pub const CONVENTION: &str = "1 MAC = 1 FLOP; softmax, norms, GELU and residual adds count 0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv,
    Linear,
    /// Token-to-token products inside attention (`QKᵀ` and `A·V`).
    MatMul,
    Norm,
    /// Free-standing learnable tensors (score tokens).
    Param,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub path: String,
    pub kind: OpKind,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub model: String,
    pub input: InputSpec,
    pub convention: &'static str,
    /// Attention heads per stage (0 for stages without attention).
    pub heads: Vec<usize>,
    pub rows: Vec<CostRow>,
}

/// Parameter and MAC totals of a group of rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RollUp {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    pub matmul_macs: u64,
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn matmul_macs(&self) -> u64 {
        self.rows.iter().filter(|r| r.kind == OpKind::MatMul).map(|r| r.macs).sum()
    }

    fn roll(&self, name: String, pred: impl Fn(&CostRow) -> bool) -> RollUp {
        let mut r = RollUp {
            name,
            params: 0,
            macs: 0,
            matmul_macs: 0,
        };
        for row in self.rows.iter().filter(|row| pred(row)) {
            r.params += row.params;
            r.macs += row.macs;
            if row.kind == OpKind::MatMul {
                r.matmul_macs += row.macs;
            }
        }
        r
    }

    /// Totals for `stages.{i}` (0-based).
    pub fn stage(&self, i: usize) -> RollUp {
        let p = format!("stages.{i}.");
        self.roll(format!("stage{}", i + 1), |r| r.path.starts_with(&p))
    }

    /// Four stage roll-ups followed by one for the classifier end.
    pub fn by_stage(&self) -> Vec<RollUp> {
        let mut out: Vec<RollUp> = (0..self.heads.len()).map(|i| self.stage(i)).collect();
        out.push(self.roll("head".into(), |r| !r.path.starts_with("stages.")));
        out
    }

    /// Roll-up per block (`stages.{i}.blocks.{j}`) and per stem.
    pub fn by_block(&self) -> Vec<RollUp> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            let key = block_key(&r.path);
            if names.last() != Some(&key) && !names.contains(&key) {
                names.push(key);
            }
        }
        names
            .into_iter()
            .map(|n| {
                let k = n.clone();
                self.roll(n, |r| block_key(&r.path) == k)
            })
            .collect()
    }

    pub fn to_text(&self, per_stage: bool) -> String {
        let total = self.total_macs();
        let mut s = String::new();
        let i = self.input;
        let _ = writeln!(s, "model: {}", self.model);
        let _ = writeln!(s, "input: {}x{}x{}x{}", i.channels, i.frames, i.height, i.width);
        let _ = writeln!(s, "convention: {}", self.convention);
        let _ = writeln!(s, "heads per stage: {:?}", self.heads);
        let _ = writeln!(s, "{:<40} {:>14} {:>16} {:>8}", "path", "params", "macs", "pct");
        let lines: Vec<(String, u64, u64)> = if per_stage {
            self.by_stage().into_iter().map(|r| (r.name, r.params, r.macs)).collect()
        } else {
            self.rows.iter().map(|r| (r.path.clone(), r.params, r.macs)).collect()
        };
        for (name, p, m) in lines {
            let _ = writeln!(s, "{:<40} {:>14} {:>16} {:>7.2}%", name, p, m, pct(m, total));
        }
        let _ = writeln!(
            s,
            "{:<40} {:>14} {:>16} {:>7.2}%",
            "total",
            self.total_params(),
            total,
            100.0
        );
        let _ = writeln!(
            s,
            "params {:.3}M, {:.3} GFLOPs",
            self.total_params() as f64 / 1e6,
            total as f64 / 1e9
        );
        s
    }

    /// `path,params,macs,pct_total`, one line per operator (or per stage).
    pub fn to_csv(&self, per_stage: bool) -> String {
        let total = self.total_macs();
        let mut s = String::from("path,params,macs,pct_total\n");
        let lines: Vec<(String, u64, u64)> = if per_stage {
            self.by_stage().into_iter().map(|r| (r.name, r.params, r.macs)).collect()
        } else {
            self.rows.iter().map(|r| (r.path.clone(), r.params, r.macs)).collect()
        };
        for (name, p, m) in lines {
            let _ = writeln!(s, "{name},{p},{m},{:.6}", pct(m, total));
        }
        s
    }
}

fn pct(m: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * m as f64 / total as f64
    }
}

fn block_key(path: &str) -> String {
    let parts: Vec<&str> = path.split('.').collect();
    match parts.as_slice() {
        ["stages", i, "blocks", j, ..] => format!("stages.{i}.blocks.{j}"),
        ["stages", i, "stem", ..] => format!("stages.{i}.stem"),
        ["stages", i, ..] => format!("stages.{i}"),
        [first, ..] => first.to_string(),
        [] => String::new(),
    }
}

struct Walker {
    rows: Vec<CostRow>,
}

impl Walker {
    fn push(&mut self, path: String, kind: OpKind, params: usize, macs: usize) {
        self.rows.push(CostRow {
            path,
            kind,
            params: params as u64,
            macs: macs as u64,
        });
    }

    fn conv(&mut self, path: String, spec: &ConvSpec, out: Option<Grid>) {
        let macs = out.map_or(0, |o| spec.fan_in() * spec.out_channels * o.iter().product::<usize>());
        self.push(path, OpKind::Conv, spec.param_count(), macs);
    }

    fn linear(&mut self, path: String, spec: &LinearSpec, tokens: usize) {
        let macs = spec.macs(tokens);
        self.push(path, OpKind::Linear, spec.param_count(), macs);
    }

    fn norm(&mut self, path: String, c: usize) {
        self.push(path, OpKind::Norm, 2 * c, 0);
    }

    /// Q, K, V and output projections over `tokens`, plus the `2·L²·C`
    /// attention products summed over `groups` independent sequences of
    /// `seq` tokens.
    fn attention(&mut self, p: &str, c: usize, tokens: usize, groups: usize, seq: usize) {
        let lin = LinearSpec::new(c, c);
        for n in ["q", "k", "v"] {
            self.linear(format!("{p}.mhra.{n}"), &lin, tokens);
        }
        self.push(format!("{p}.mhra.attn"), OpKind::MatMul, 0, groups * 2 * seq * seq * c);
        self.linear(format!("{p}.mhra.proj"), &lin, tokens);
    }

    fn block(&mut self, p: &str, b: &BlockConfig, grid: Option<Grid>, ratio: f64, importance: bool, shrink: bool) {
        let c = b.channels;
        let l = grid.map_or(0, |g| g.iter().product::<usize>());
        let dpe = b.dpe_spec().expect("validated kernel");
        self.conv(format!("{p}.dpe"), &dpe, grid);
        self.norm(format!("{p}.norm1"), c);
        let mut ffn_tokens = l;
        match b.block_type {
            BlockType::Local => {
                let pw = ConvSpec::pointwise(c, c);
                self.conv(format!("{p}.mhra.pw1"), &pw, grid);
                self.norm(format!("{p}.mhra.bn1"), c);
                let dw = b.affinity_spec().expect("validated kernel");
                let k: usize = b.local_kernel.iter().product();
                let macs = grid.map_or(0, |_| k * c * l);
                self.push(format!("{p}.mhra.affinity"), OpKind::Conv, b.local_heads() * k, macs);
                debug_assert_eq!(dw.fan_in(), k);
                self.norm(format!("{p}.mhra.bn2"), c);
                self.conv(format!("{p}.mhra.pw2"), &pw, grid);
            }
            BlockType::Global => self.attention(p, c, l, 1, l),
            BlockType::Window => {
                let [t, h, w] = grid.unwrap_or([0; 3]);
                let win = b.window.expect("validated window");
                let (wh, ww) = (win[0].min(h).max(1), win[1].min(w).max(1));
                if wh == h && ww == w {
                    self.attention(p, c, l, 1, l);
                } else {
                    let (nh, nw) = (h.div_ceil(wh), w.div_ceil(ww));
                    let padded = t * nh * wh * nw * ww;
                    self.attention(p, c, padded, nh * nw, t * wh * ww);
                }
            }
            BlockType::Hourglass => {
                let kept = ((ratio * l as f64).floor() as usize).clamp(1, l.max(1));
                let m = if shrink && kept < l { kept + 1 } else { l };
                if importance {
                    // Score query C², keys over all tokens C²·L, logits C·L.
                    let macs = grid.map_or(0, |_| c * c * l + c * c + c * l);
                    self.push(format!("{p}.mhra.importance"), OpKind::Linear, 0, macs);
                }
                let s = if grid.is_some() { m + 1 } else { 0 };
                self.attention(p, c, s, 1, s);
                ffn_tokens = s;
            }
        }
        self.norm(format!("{p}.norm2"), c);
        let (fc1, fc2) = b.ffn_specs();
        self.linear(format!("{p}.ffn.fc1"), &fc1, ffn_tokens);
        self.linear(format!("{p}.ffn.fc2"), &fc2, ffn_tokens);
    }
}

fn walk(cfg: &ModelConfig, grids: Option<&[Grid]>) -> Vec<CostRow> {
    let mut w = Walker { rows: Vec::new() };
    let blocks = cfg.block_configs();
    let ratio = cfg.shrink_ratio;
    for (i, stage) in cfg.stages.iter().enumerate() {
        let p = format!("stages.{i}");
        let grid = grids.map(|g| g[i]);
        w.conv(format!("{p}.stem.conv"), &cfg.stem(i), grid);
        w.norm(format!("{p}.stem.norm"), stage.channels);
        if stage.has(BlockType::Hourglass) {
            w.push(format!("{p}.score_token"), OpKind::Param, stage.channels, 0);
        }
        let mut first = true;
        for (j, b) in blocks[i].iter().enumerate() {
            let (importance, shrink) = if b.block_type == BlockType::Hourglass {
                let shrink = ratio < 1.0 && (!first || cfg.shrink_first);
                let r = (ratio < 1.0, shrink);
                first = false;
                r
            } else {
                (false, false)
            };
            w.block(&format!("{p}.blocks.{j}"), b, grid, ratio, importance, shrink);
        }
    }
    let c = cfg.stages[3].channels;
    w.norm("norm".into(), c);
    let tokens = usize::from(grids.is_some());
    w.linear("head".into(), &LinearSpec::new(c, cfg.num_classes), tokens);
    if cfg.aux_head {
        if let Some(last) = cfg.last_hourglass_stage() {
            let sc = cfg.stages[last].channels;
            w.linear("aux_head".into(), &LinearSpec::new(sc, cfg.num_classes), tokens);
        }
    }
    w.rows
}

fn heads(cfg: &ModelConfig) -> Vec<usize> {
    cfg.stages
        .iter()
        .map(|s| {
            if s.types.iter().any(|t| t.is_attention()) {
                s.channels / cfg.head_dim
            } else {
                0
            }
        })
        .collect()
}

/// Total learnable parameters of the model `config` describes.
pub fn count_params(config: &ModelConfig) -> u64 {
    walk(config, None).iter().map(|r| r.params).sum()
}

/// Per-operator cost of one forward pass on a single `C×T×H×W` input.
pub fn count_macs(config: &ModelConfig, input: InputSpec) -> Result<CostReport> {
    let grids = config.stage_grids_for(input)?;
    Ok(CostReport {
        model: config.name.clone(),
        input,
        convention: CONVENTION,
        heads: heads(config),
        rows: walk(config, Some(&grids)),
    })
}

/// [`count_macs`] at each `(height, width)`, other input axes unchanged.
pub fn resolution_sweep(config: &ModelConfig, resolutions: &[[usize; 2]]) -> Result<Vec<CostReport>> {
    resolutions
        .iter()
        .map(|&[h, w]| {
            count_macs(
                config,
                InputSpec {
                    height: h,
                    width: w,
                    ..config.input
                },
            )
        })
        .collect()
}

/// One line per resolution: totals plus per-stage MACs and MatMul MACs.
pub fn sweep_csv(reports: &[CostReport]) -> String {
    let mut s = String::from("height,width,params,total_macs,matmul_macs");
    for i in 1..=4 {
        let _ = write!(s, ",stage{i}_macs");
    }
    for i in 1..=4 {
        let _ = write!(s, ",stage{i}_matmul_macs");
    }
    s.push('\n');
    for r in reports {
        let _ = write!(
            s,
            "{},{},{},{},{}",
            r.input.height,
            r.input.width,
            r.total_params(),
            r.total_macs(),
            r.matmul_macs()
        );
        let stages: Vec<RollUp> = (0..r.heads.len()).map(|i| r.stage(i)).collect();
        for st in &stages {
            let _ = write!(s, ",{}", st.macs);
        }
        for st in &stages {
            let _ = write!(s, ",{}", st.matmul_macs);
        }
        s.push('\n');
    }
    s
}
