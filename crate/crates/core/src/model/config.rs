use serde::{Deserialize, Serialize};

use crate::block::{BlockConfig, BlockType, Grid};
use crate::error::{Error, Result};
use crate::hourglass::HourglassConfig;
use crate::nn::ConvSpec;

/// Input clip `C×T×H×W`; `frames == 1` is an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl InputSpec {
    pub fn image(size: usize) -> Self {
        Self {
            channels: 3,
            frames: 1,
            height: size,
            width: size,
        }
    }

    pub fn is_video(&self) -> bool {
        self.frames > 1
    }

    pub fn grid(&self) -> Grid {
        [self.frames, self.height, self.width]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub depth: usize,
    pub channels: usize,
    /// One entry per block.
    pub types: Vec<BlockType>,
    /// Used by window blocks.
    pub window: Option<[usize; 2]>,
}

impl StageConfig {
    pub fn uniform(depth: usize, channels: usize, block_type: BlockType) -> Self {
        Self {
            depth,
            channels,
            types: vec![block_type; depth],
            window: None,
        }
    }

    pub fn has(&self, t: BlockType) -> bool {
        self.types.contains(&t)
    }

    /// Compact type string, e.g. `WWWG`.
    pub fn type_string(&self) -> String {
        self.types.iter().map(|t| t.letter()).collect()
    }
}

/// A stage re-typed into hybrid groups, with any warning raised on the way.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridStage {
    pub stage: StageConfig,
    pub warning: Option<String>,
}

/// `[W, W, W, G]` repeated over the stage; blocks left over after the last
/// full group are window blocks, and a stage shallower than one group is
/// all-window.
pub fn build_hybrid_stage3(base: &StageConfig, window: [usize; 2]) -> HybridStage {
    let d = base.depth;
    let types = (0..d)
        .map(|i| {
            if i % 4 == 3 && i < d / 4 * 4 {
                BlockType::Global
            } else {
                BlockType::Window
            }
        })
        .collect();
    let warning = if d < 4 {
        Some(format!("depth {d} holds no full hybrid group; all blocks use windows"))
    } else if d % 4 != 0 {
        Some(format!("depth {d} leaves {} trailing window blocks", d % 4))
    } else {
        None
    };
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    HybridStage {
        stage: StageConfig {
            types,
            window: Some(window),
            ..base.clone()
        },
        warning,
    }
}

/// Per-stage block types of the stage-type ablations.
pub fn stage_type_presets(name: &str) -> Result<[BlockType; 4]> {
    match name.to_ascii_uppercase().as_str() {
        "LLLL" | "LLGG" | "LLLG" | "LGGG" | "GGGG" => {
            let mut out = [BlockType::Local; 4];
            for (o, c) in out.iter_mut().zip(name.chars()) {
                *o = BlockType::from_letter(c).expect("letters checked above");
            }
            Ok(out)
        }
        _ => Err(Error::Config(format!(
            "unknown stage-type preset `{name}` (expected LLLL, LLGG, LLLG, LGGG or GGGG)"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub stages: Vec<StageConfig>,
    pub head_dim: usize,
    pub local_head_dim: usize,
    pub local_kernel: [usize; 3],
    pub dpe_kernel: [usize; 3],
    pub ffn_ratio: usize,
    pub drop_path_max: f64,
    pub shrink_ratio: f64,
    pub shrink_first: bool,
    /// Classifier on the final score token of hourglass models.
    pub aux_head: bool,
    pub num_classes: usize,
    pub input: InputSpec,
    pub qk_scale: bool,
    /// Temporal extent of the first stem; above 1 it also strides time by 2.
    pub stem_temporal: usize,
}

pub const PRESETS: [&str; 5] = ["S", "B", "L", "XS", "XXS"];

impl ModelConfig {
    /// Four stages typed `LLGG` with the image defaults.
    pub fn new(name: &str, depths: [usize; 4], channels: [usize; 4], head_dim: usize) -> Self {
        let types = [BlockType::Local, BlockType::Local, BlockType::Global, BlockType::Global];
        Self {
            name: name.to_string(),
            stages: (0..4).map(|i| StageConfig::uniform(depths[i], channels[i], types[i])).collect(),
            head_dim,
            local_head_dim: 1,
            local_kernel: [1, 5, 5],
            dpe_kernel: [1, 3, 3],
            ffn_ratio: 4,
            drop_path_max: 0.0,
            shrink_ratio: 1.0,
            shrink_first: true,
            aux_head: false,
            num_classes: 1000,
            input: InputSpec::image(224),
            qk_scale: true,
            stem_temporal: 1,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = match name.to_ascii_uppercase().as_str() {
            "S" => Self::new("S", [3, 4, 8, 3], [64, 128, 320, 512], 64).with_drop_path(0.1),
            "B" => Self::new("B", [5, 8, 20, 7], [64, 128, 320, 512], 64).with_drop_path(0.3),
            "L" => Self::new("L", [5, 10, 24, 7], [128, 192, 448, 640], 64).with_drop_path(0.4),
            "XS" => Self::new("XS", [3, 5, 9, 3], [64, 128, 256, 512], 32).lightweight(),
            "XXS" => Self::new("XXS", [2, 5, 8, 2], [56, 112, 224, 448], 28).lightweight(),
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset `{name}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        cfg.name = format!("uniformer-{}", name.to_ascii_lowercase());
        Ok(cfg)
    }

    fn lightweight(mut self) -> Self {
        self.ffn_ratio = 3;
        self.shrink_ratio = 0.5;
        self.aux_head = true;
        self.input = InputSpec::image(160);
        self.with_stage_types([BlockType::Local, BlockType::Local, BlockType::Hourglass, BlockType::Hourglass])
    }

    pub fn with_drop_path(mut self, rate: f64) -> Self {
        self.drop_path_max = rate;
        self
    }

    pub fn with_stage_types(mut self, types: [BlockType; 4]) -> Self {
        for (s, t) in self.stages.iter_mut().zip(types) {
            s.types = vec![t; s.depth];
        }
        self
    }

    /// Switch to a `frames`-frame clip with 3-D local (5×5×5) and DPE (3×3×3)
    /// kernels and the temporally strided stem.
    pub fn video(mut self, frames: usize) -> Self {
        self.input.frames = frames;
        self.local_kernel = [5, 5, 5];
        self.dpe_kernel = [3, 3, 3];
        self.stem_temporal = 3;
        self
    }

    pub fn with_input(mut self, input: InputSpec) -> Self {
        self.input = input;
        self
    }

    /// Whether any convolution has a temporal extent.
    pub fn is_video(&self) -> bool {
        self.stem_temporal > 1 || self.local_kernel[0] > 1 || self.dpe_kernel[0] > 1
    }

    pub fn has_hourglass(&self) -> bool {
        self.stages.iter().any(|s| s.has(BlockType::Hourglass))
    }

    pub fn hourglass(&self) -> HourglassConfig {
        HourglassConfig {
            ratio: self.shrink_ratio,
            shrink_first: self.shrink_first,
        }
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.depth).sum()
    }

    /// Downsampling convolution in front of stage `i`.
    pub fn stem(&self, i: usize) -> ConvSpec {
        let cin = if i == 0 {
            self.input.channels
        } else {
            self.stages[i - 1].channels
        };
        let cout = self.stages[i].channels;
        if i == 0 {
            let kt = self.stem_temporal;
            let st = if kt > 1 { 2 } else { 1 };
            ConvSpec::new(cin, cout, [kt, 4, 4])
                .with_stride([st, 4, 4])
                .with_padding([kt / 2, 0, 0])
        } else {
            ConvSpec::new(cin, cout, [1, 2, 2]).with_stride([1, 2, 2])
        }
    }

    /// Drop-path rate of every block, rising linearly from 0 at the first
    /// block to `drop_path_max` at the last.
    pub fn drop_path_rates(&self) -> Vec<f64> {
        let n = self.total_blocks();
        (0..n)
            .map(|k| {
                if n > 1 {
                    self.drop_path_max * k as f64 / (n - 1) as f64
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Block configurations, indexed `[stage][block]`.
    pub fn block_configs(&self) -> Vec<Vec<BlockConfig>> {
        let rates = self.drop_path_rates();
        let mut k = 0;
        self.stages
            .iter()
            .map(|s| {
                s.types
                    .iter()
                    .map(|&t| {
                        let mut b = BlockConfig::new(t, s.channels, self.head_dim);
                        b.local_head_dim = self.local_head_dim;
                        b.local_kernel = self.local_kernel;
                        b.dpe_kernel = self.dpe_kernel;
                        b.ffn_ratio = self.ffn_ratio;
                        b.qk_scale = self.qk_scale;
                        b.drop_path_rate = rates[k];
                        if t == BlockType::Window {
                            b.window = Some(s.window.unwrap_or([14, 14]));
                        }
                        k += 1;
                        b
                    })
                    .collect()
            })
            .collect()
    }

    /// Token grid `(T, H, W)` of each stage for this config's input.
    pub fn stage_grids(&self) -> Result<Vec<Grid>> {
        self.stage_grids_for(self.input)
    }

    pub fn stage_grids_for(&self, input: InputSpec) -> Result<Vec<Grid>> {
        let mut grid = input.grid();
        let mut out = Vec::with_capacity(self.stages.len());
        for i in 0..self.stages.len() {
            grid = self.stem(i).out_dims(grid).ok_or_else(|| Error::Stage {
                stage: i + 1,
                msg: format!("resolution {grid:?} collapses below 1 under the stem"),
            })?;
            out.push(grid);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.stages.len() != 4 {
            return err(format!("expected 4 stages, got {}", self.stages.len()));
        }
        if self.num_classes == 0 {
            return err("num_classes must be positive".into());
        }
        if self.stem_temporal == 0 || self.stem_temporal % 2 == 0 {
            return err(format!("stem_temporal {} must be odd", self.stem_temporal));
        }
        if self.input.channels == 0 {
            return err("input channels must be positive".into());
        }
        if !(0.0..1.0).contains(&self.drop_path_max) {
            return err(format!("drop_path_max {} outside [0, 1)", self.drop_path_max));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let stage_err = |msg: String| Err(Error::Stage { stage: i + 1, msg });
            if s.depth == 0 || s.channels == 0 {
                return stage_err("depth and channels must be positive".into());
            }
            if s.types.len() != s.depth {
                return stage_err(format!("{} block types for depth {}", s.types.len(), s.depth));
            }
            if s.channels % self.head_dim != 0 {
                return stage_err(format!("head_dim {} does not divide {} channels", self.head_dim, s.channels));
            }
            if let Some(w) = s.window {
                if w.contains(&0) {
                    return stage_err("window extents must be positive".into());
                }
            }
        }
        self.hourglass().validate()?;
        if self.aux_head && !self.has_hourglass() {
            return err("aux_head needs hourglass blocks".into());
        }
        for stage in self.block_configs() {
            for b in stage {
                b.validate()?;
            }
        }
        self.stage_grids()?;
        Ok(())
    }

    /// Index of the last stage holding hourglass blocks.
    pub fn last_hourglass_stage(&self) -> Option<usize> {
        self.stages.iter().rposition(|s| s.has(BlockType::Hourglass))
    }
}
