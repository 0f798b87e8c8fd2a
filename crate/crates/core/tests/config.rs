use std::path::PathBuf;

use uniformer::block::BlockType::{self, Global as G, Hourglass as H, Local as L, Window as W};
use uniformer::config::{load_model_config, resolve_path, ConfigFile};
use uniformer::model::{InputSpec, ModelConfig};
use uniformer::Error;

fn preset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name)
}

fn types(cfg: &ModelConfig, stage: usize) -> &[BlockType] {
    &cfg.stages[stage].types
}

#[test]
fn every_shipped_preset_resolves() {
    let dir = preset("");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            load_model_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 10, "{n}");
}

#[test]
fn preset_files_match_built_in_presets() {
    for (file, name) in [("uniformer_s", "S"), ("uniformer_b", "B"), ("uniformer_l", "L"), ("uniformer_xxs", "XXS")] {
        let cfg = load_model_config(preset(file)).unwrap();
        let builtin = ModelConfig::preset(name).unwrap();
        assert_eq!(cfg.stages, builtin.stages, "{file}");
        assert_eq!(cfg.head_dim, builtin.head_dim, "{file}");
    }
}

#[test]
fn extension_is_optional() {
    let bare = preset("uniformer_s");
    assert_eq!(resolve_path(&bare), preset("uniformer_s.toml"));
    assert_eq!(load_model_config(&bare).unwrap(), load_model_config(preset("uniformer_s.toml")).unwrap());
}

#[test]
fn video_input_switches_to_3d_kernels() {
    let cfg = load_model_config(preset("uniformer_s_video")).unwrap();
    assert_eq!(cfg.input.frames, 16);
    assert_eq!(cfg.num_classes, 400);
    assert_eq!(cfg.local_kernel, [5, 5, 5]);
    assert_eq!(cfg.dpe_kernel, [3, 3, 3]);
    assert!(cfg.is_video());

    let explicit = ConfigFile::parse(
        "[model]\npreset = \"S\"\nlocal_kernel = [3, 5, 5]\n[input]\nframes = 8\n",
    )
    .unwrap()
    .resolve()
    .unwrap();
    assert_eq!(explicit.local_kernel, [3, 5, 5]);
    assert_eq!(explicit.dpe_kernel, [3, 3, 3]);
}

#[test]
fn hybrid_stage_from_file() {
    let cfg = load_model_config(preset("uniformer_s_hybrid")).unwrap();
    assert_eq!(types(&cfg, 2), &[W, W, W, G, W, W, W, G]);
    assert_eq!(cfg.stages[2].window, Some([14, 14]));
    assert_eq!(types(&cfg, 0), &[L; 3]);
}

#[test]
fn stage_types_shorthand_and_per_block_letters() {
    let cfg = ConfigFile::parse("[model]\npreset = \"S\"\nstage_types = \"LLHH\"\n").unwrap().resolve().unwrap();
    assert_eq!(types(&cfg, 2), &[H; 8]);
    assert_eq!(types(&cfg, 3), &[H; 3]);

    let text = "[model]\npreset = \"S\"\n[[model.stages]]\ntype = \"LGL\"\n";
    let cfg = ConfigFile::parse(text).unwrap().resolve().unwrap();
    assert_eq!(types(&cfg, 0), &[L, G, L]);

    let bad = ConfigFile::parse("[model]\npreset = \"S\"\n[[model.stages]]\ntype = \"LG\"\n").unwrap().resolve();
    assert!(matches!(bad, Err(Error::Stage { stage: 1, .. })), "{bad:?}");
    assert!(ConfigFile::parse("[model]\npreset = \"S\"\nstage_types = \"LLQQ\"\n").unwrap().resolve().is_err());
}

#[test]
fn custom_model_needs_complete_stages() {
    let cfg = load_model_config(preset("tiny_llhh")).unwrap();
    assert_eq!(cfg.stages.iter().map(|s| s.channels).collect::<Vec<_>>(), vec![16, 32, 64, 128]);
    assert_eq!(cfg.input, InputSpec::image(32));
    assert_eq!(cfg.shrink_ratio, 0.5);
    assert!(cfg.aux_head);

    let missing_head = "[model]\npreset = \"custom\"\n".to_string() + &"[[model.stages]]\ndepth = 1\nchannels = 8\n".repeat(4);
    assert!(ConfigFile::parse(&missing_head).unwrap().resolve().is_err());
    let three = "[model]\nhead_dim = 8\n".to_string() + &"[[model.stages]]\ndepth = 1\nchannels = 8\n".repeat(3);
    assert!(ConfigFile::parse(&three).unwrap().resolve().is_err());
    let no_depth = "[model]\nhead_dim = 8\n".to_string() + &"[[model.stages]]\nchannels = 8\n".repeat(4);
    assert!(matches!(ConfigFile::parse(&no_depth).unwrap().resolve(), Err(Error::Stage { stage: 1, .. })));
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ConfigFile::parse("[model]\npreset = \"S\"\nheads = 4\n").is_err());
    assert!(ConfigFile::parse("[model]\npreset = \"S\"\n[input]\nfps = 30\n").is_err());
    assert!(ConfigFile::parse("[model]\npreset = \"S\"\n[optimizer]\nlr = 1\n").is_err());
}

#[test]
fn invalid_values_fail_validation() {
    assert!(ConfigFile::parse("[model]\npreset = \"Q\"\n").unwrap().resolve().is_err());
    assert!(ConfigFile::parse("[model]\npreset = \"S\"\nhead_dim = 7\n").unwrap().resolve().is_err());
    assert!(ConfigFile::parse("[model]\npreset = \"S\"\nshrink_ratio = 0.0\n").unwrap().resolve().is_err());
}

#[test]
fn serialised_config_round_trips() {
    for name in ["S", "XXS"] {
        let cfg = ModelConfig::preset(name).unwrap();
        let text = ConfigFile::from_model(&cfg).to_toml().unwrap();
        let back = ConfigFile::parse(&text).unwrap().resolve().unwrap();
        assert_eq!(back.stages, cfg.stages);
        assert_eq!(back.input, cfg.input);
        assert_eq!(back.shrink_ratio, cfg.shrink_ratio);
    }
}

#[test]
fn load_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let msg = load_model_config(&missing).unwrap_err().to_string();
    assert!(msg.contains("nope.toml"), "{msg}");

    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "[model\n").unwrap();
    assert!(load_model_config(&broken).is_err());
}
