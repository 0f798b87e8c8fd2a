use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvSpec, LinearSpec, NormSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockType {
    /// Learned relative-position affinity (PWConv → DWConv → PWConv).
    Local,
    /// Content-based attention over all `T·H·W` tokens.
    Global,
    /// Global attention restricted to non-overlapping `wh×ww` windows.
    Window,
    /// Global attention on a shrunken token set, guided by a score token.
    Hourglass,
}

impl BlockType {
    pub fn letter(self) -> char {
        match self {
            BlockType::Local => 'L',
            BlockType::Global => 'G',
            BlockType::Window => 'W',
            BlockType::Hourglass => 'H',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'L' => Some(BlockType::Local),
            'G' => Some(BlockType::Global),
            'W' => Some(BlockType::Window),
            'H' => Some(BlockType::Hourglass),
            _ => None,
        }
    }

    /// Blocks that normalize with LN over tokens rather than BN over maps.
    pub fn is_attention(self) -> bool {
        !matches!(self, BlockType::Local)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub block_type: BlockType,
    pub channels: usize,
    /// Channels per attention head; heads = `channels / head_dim`.
    pub head_dim: usize,
    /// Channels sharing one local affinity kernel. 1 gives one kernel per
    /// channel.
    pub local_head_dim: usize,
    /// `(t, h, w)`, odd on every axis.
    pub local_kernel: [usize; 3],
    pub dpe_kernel: [usize; 3],
    pub ffn_ratio: usize,
    /// `(wh, ww)`, set iff `block_type == Window`.
    pub window: Option<[usize; 2]>,
    pub drop_path_rate: f64,
    /// Scale attention logits by `1/√head_dim`; `false` gives the unscaled
    /// `QᵀK` form.
    pub qk_scale: bool,
}

impl BlockConfig {
    pub fn new(block_type: BlockType, channels: usize, head_dim: usize) -> Self {
        Self {
            block_type,
            channels,
            head_dim,
            local_head_dim: 1,
            local_kernel: [1, 5, 5],
            dpe_kernel: [1, 3, 3],
            ffn_ratio: 4,
            window: None,
            drop_path_rate: 0.0,
            qk_scale: true,
        }
    }

    pub fn with_window(mut self, window: [usize; 2]) -> Self {
        self.block_type = BlockType::Window;
        self.window = Some(window);
        self
    }

    pub fn heads(&self) -> usize {
        self.channels / self.head_dim
    }

    pub fn local_heads(&self) -> usize {
        self.channels / self.local_head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        let err = |m: String| Err(Error::Config(m));
        if c == 0 || self.head_dim == 0 || c % self.head_dim != 0 {
            return err(format!("head_dim {} must divide channels {c}", self.head_dim));
        }
        if self.local_head_dim == 0 || c % self.local_head_dim != 0 {
            return err(format!("local_head_dim {} must divide channels {c}", self.local_head_dim));
        }
        for (name, k) in [("local_kernel", self.local_kernel), ("dpe_kernel", self.dpe_kernel)] {
            if k.iter().any(|&v| v % 2 == 0) {
                return err(format!("{name} {k:?} must be odd on every axis"));
            }
        }
        if self.ffn_ratio == 0 {
            return err("ffn_ratio must be positive".into());
        }
        match (self.block_type, self.window) {
            (BlockType::Window, None) => return err("window block needs a window size".into()),
            (BlockType::Window, Some(w)) if w.contains(&0) => return err("window extents must be positive".into()),
            (t, Some(_)) if t != BlockType::Window => {
                return err(format!("window set on a {t:?} block"));
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return err(format!("drop_path_rate {} outside [0, 1)", self.drop_path_rate));
        }
        Ok(())
    }

    pub fn dpe_spec(&self) -> Result<ConvSpec> {
        ConvSpec::depthwise_same(self.channels, self.dpe_kernel)
    }

    /// Depthwise stage of local MHRA; its weight is expanded from the
    /// per-head affinity kernels, so it carries no bias.
    pub fn affinity_spec(&self) -> Result<ConvSpec> {
        Ok(ConvSpec::depthwise_same(self.channels, self.local_kernel)?.without_bias())
    }

    pub fn norm_spec(&self) -> NormSpec {
        if self.block_type.is_attention() {
            NormSpec::layer(self.channels)
        } else {
            NormSpec::batch(self.channels)
        }
    }

    pub fn ffn_specs(&self) -> (LinearSpec, LinearSpec) {
        let hidden = self.channels * self.ffn_ratio;
        (
            LinearSpec::new(self.channels, hidden),
            LinearSpec::new(hidden, self.channels),
        )
    }
}
