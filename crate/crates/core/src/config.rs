//! TOML configuration files.
//!
//! ```toml
//! [model]
//! preset = "S"            # S | B | L | XS | XXS | custom
//! stage_types = "LLGG"    # optional shorthand, one letter per stage
//! num_classes = 1000
//!
//! [[model.stages]]        # optional; entry i overrides stage i
//! depth = 3
//! channels = 64
//! type = "L"              # L | G | W | H | hybrid | one letter per block
//! window = [14, 14]
//!
//! [input]
//! channels = 3
//! frames = 1
//! height = 224
//! width = 224
//!
//! [attention]
//! qk_scale = true
//! ```
//!
//! A preset supplies every value; keys present in the file override it.
//! `custom` starts from nothing and needs four complete stages plus
//! `head_dim`. Input with more than one frame switches to 3-D kernels unless
//! they are given explicitly. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::block::BlockType;
use crate::error::{Error, Result};
use crate::model::{build_hybrid_stage3, InputSpec, ModelConfig, StageConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub stage_types: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageSection>,
    pub head_dim: Option<usize>,
    pub local_head_dim: Option<usize>,
    pub local_kernel: Option<[usize; 3]>,
    pub dpe_kernel: Option<[usize; 3]>,
    pub stem_temporal: Option<usize>,
    pub ffn_ratio: Option<usize>,
    pub drop_path_max: Option<f64>,
    pub shrink_ratio: Option<f64>,
    pub shrink_first: Option<bool>,
    pub aux_head: Option<bool>,
    pub num_classes: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub depth: Option<usize>,
    pub channels: Option<usize>,
    #[serde(rename = "type")]
    pub stage_type: Option<String>,
    pub window: Option<[usize; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub channels: Option<usize>,
    pub frames: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionSection {
    pub qk_scale: Option<bool>,
}

fn parse_types(spec: &str, depth: usize, window: Option<[usize; 2]>, stage: usize) -> Result<StageConfig> {
    let base = StageConfig::uniform(depth, 1, BlockType::Local);
    if spec.eq_ignore_ascii_case("hybrid") {
        return Ok(build_hybrid_stage3(&base, window.unwrap_or([14, 14])).stage);
    }
    let letters: Vec<BlockType> = spec
        .chars()
        .map(|c| {
            BlockType::from_letter(c).ok_or_else(|| Error::Stage {
                stage,
                msg: format!("unknown block type `{c}` in `{spec}`"),
            })
        })
        .collect::<Result<_>>()?;
    let types = match letters.len() {
        1 => vec![letters[0]; depth],
        n if n == depth => letters,
        n => {
            return Err(Error::Stage {
                stage,
                msg: format!("type `{spec}` has {n} letters for depth {depth}"),
            })
        }
    };
    Ok(StageConfig { types, window, ..base })
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Read a config file; a missing `.toml` extension is filled in.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = resolve_path(path.as_ref());
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Expand the preset and apply every override, then validate.
    pub fn resolve(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let preset = m.preset.as_deref().unwrap_or("custom");
        let mut cfg = if preset.eq_ignore_ascii_case("custom") {
            if m.stages.len() != 4 {
                return Err(Error::Config("custom models need exactly 4 [[model.stages]] entries".into()));
            }
            let head_dim = m.head_dim.ok_or_else(|| Error::Config("custom models need model.head_dim".into()))?;
            let mut depths = [0; 4];
            let mut channels = [0; 4];
            for (i, s) in m.stages.iter().enumerate() {
                let missing = |k: &str| Error::Stage {
                    stage: i + 1,
                    msg: format!("custom stage needs `{k}`"),
                };
                depths[i] = s.depth.ok_or_else(|| missing("depth"))?;
                channels[i] = s.channels.ok_or_else(|| missing("channels"))?;
            }
            ModelConfig::new("custom", depths, channels, head_dim)
        } else {
            ModelConfig::preset(preset)?
        };
        if m.stages.len() > 4 {
            return Err(Error::Config(format!("{} stages given, the model has 4", m.stages.len())));
        }
        if let Some(st) = &m.stage_types {
            if st.chars().count() != 4 {
                return Err(Error::Config(format!("stage_types `{st}` must have 4 letters")));
            }
            for (i, c) in st.chars().enumerate() {
                let t = BlockType::from_letter(c).ok_or_else(|| Error::Config(format!("unknown block type `{c}`")))?;
                cfg.stages[i].types = vec![t; cfg.stages[i].depth];
            }
        }
        for (i, s) in m.stages.iter().enumerate() {
            let stage = &mut cfg.stages[i];
            let old_depth = stage.depth;
            if let Some(d) = s.depth {
                stage.depth = d;
            }
            if let Some(c) = s.channels {
                stage.channels = c;
            }
            if s.window.is_some() {
                stage.window = s.window;
            }
            match &s.stage_type {
                Some(t) => {
                    let parsed = parse_types(t, stage.depth, stage.window, i + 1)?;
                    stage.types = parsed.types;
                    stage.window = parsed.window;
                }
                None if stage.depth != old_depth => {
                    let t = stage.types.first().copied().unwrap_or(BlockType::Local);
                    stage.types = vec![t; stage.depth];
                }
                None => {}
            }
        }
        if let Some(v) = &m.name {
            cfg.name = v.clone();
        }
        if let Some(v) = m.head_dim {
            cfg.head_dim = v;
        }
        if let Some(v) = m.local_head_dim {
            cfg.local_head_dim = v;
        }
        if let Some(v) = m.ffn_ratio {
            cfg.ffn_ratio = v;
        }
        if let Some(v) = m.drop_path_max {
            cfg.drop_path_max = v;
        }
        if let Some(v) = m.shrink_ratio {
            cfg.shrink_ratio = v;
        }
        if let Some(v) = m.shrink_first {
            cfg.shrink_first = v;
        }
        if let Some(v) = m.aux_head {
            cfg.aux_head = v;
        }
        if let Some(v) = m.num_classes {
            cfg.num_classes = v;
        }
        if let Some(i) = &self.input {
            let mut inp: InputSpec = cfg.input;
            inp.channels = i.channels.unwrap_or(inp.channels);
            inp.frames = i.frames.unwrap_or(inp.frames);
            inp.height = i.height.unwrap_or(inp.height);
            inp.width = i.width.unwrap_or(inp.width);
            if inp.is_video() && !cfg.is_video() {
                cfg = cfg.video(inp.frames);
            }
            cfg.input = inp;
        }
        if let Some(v) = m.local_kernel {
            cfg.local_kernel = v;
        }
        if let Some(v) = m.dpe_kernel {
            cfg.dpe_kernel = v;
        }
        if let Some(v) = m.stem_temporal {
            cfg.stem_temporal = v;
        }
        if let Some(a) = &self.attention {
            if let Some(v) = a.qk_scale {
                cfg.qk_scale = v;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// A fully explicit `custom` file describing `cfg`.
    pub fn from_model(cfg: &ModelConfig) -> Self {
        Self {
            model: ModelSection {
                preset: Some("custom".into()),
                name: Some(cfg.name.clone()),
                stage_types: None,
                stages: cfg
                    .stages
                    .iter()
                    .map(|s| StageSection {
                        depth: Some(s.depth),
                        channels: Some(s.channels),
                        stage_type: Some(s.type_string()),
                        window: s.window,
                    })
                    .collect(),
                head_dim: Some(cfg.head_dim),
                local_head_dim: Some(cfg.local_head_dim),
                local_kernel: Some(cfg.local_kernel),
                dpe_kernel: Some(cfg.dpe_kernel),
                stem_temporal: Some(cfg.stem_temporal),
                ffn_ratio: Some(cfg.ffn_ratio),
                drop_path_max: Some(cfg.drop_path_max),
                shrink_ratio: Some(cfg.shrink_ratio),
                shrink_first: Some(cfg.shrink_first),
                aux_head: Some(cfg.aux_head),
                num_classes: Some(cfg.num_classes),
            },
            input: Some(InputSection {
                channels: Some(cfg.input.channels),
                frames: Some(cfg.input.frames),
                height: Some(cfg.input.height),
                width: Some(cfg.input.width),
            }),
            attention: Some(AttentionSection {
                qk_scale: Some(cfg.qk_scale),
            }),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `path` itself if it exists, otherwise `path.toml` when that exists.
pub fn resolve_path(path: &Path) -> PathBuf {
    if !path.exists() && path.extension().is_none() {
        let with = path.with_extension("toml");
        if with.exists() {
            return with;
        }
    }
    path.to_path_buf()
}

/// Load and resolve in one step.
pub fn load_model_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    ConfigFile::load(path)?.resolve()
}
