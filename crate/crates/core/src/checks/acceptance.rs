use std::time::{Duration, Instant};

use crate::analyzer::{count_macs, count_params};
use crate::block::BlockType;
use crate::checkpoint;
use crate::checks::{all_passed, equivcheck_suite, fmt_duration, format_outcomes, gradcheck_suite, Outcome};
use crate::gradcheck::TOLERANCE;
use crate::model::{build_hybrid_stage3, build_model, InputSpec, Model, ModelConfig, PRESETS};
use crate::rng::Rng;
use crate::train::{tiny_config, train, SyntheticTask, TrainConfig};

/// One acceptance criterion: an id, a title, a time budget and the checks.
pub struct Criterion {
    pub id: &'static str,
    pub title: &'static str,
    pub budget: Duration,
    run: fn() -> Vec<Outcome>,
}

#[derive(Clone, Debug)]
pub struct CriterionReport {
    pub id: &'static str,
    pub title: &'static str,
    pub outcomes: Vec<Outcome>,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl CriterionReport {
    pub fn within_budget(&self) -> bool {
        self.elapsed <= self.budget
    }

    pub fn passed(&self) -> bool {
        all_passed(&self.outcomes) && self.within_budget()
    }

    /// `PASS  id  title  (elapsed / budget)` followed by the sub-checks.
    pub fn render(&self) -> String {
        format!(
            "{}  {:<13} {}  ({} / budget {})\n{}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            fmt_duration(self.elapsed),
            fmt_duration(self.budget),
            format_outcomes(&self.outcomes)
        )
    }
}

pub fn run_criterion(c: &Criterion) -> CriterionReport {
    let start = Instant::now();
    let outcomes = (c.run)();
    CriterionReport {
        id: c.id,
        title: c.title,
        outcomes,
        elapsed: start.elapsed(),
        budget: c.budget,
    }
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion {
            id: "params",
            title: "parameter counts S/B/L/XXS/XS within 2%",
            budget: Duration::from_secs(1),
            run: params,
        },
        Criterion {
            id: "flops",
            title: "FLOPs at 224² for S/B/L and 16-frame S within 5%",
            budget: Duration::from_secs(1),
            run: flops,
        },
        Criterion {
            id: "light-flops",
            title: "lightweight FLOPs within 5%, ratio-0.5 saving 26±3 pp",
            budget: Duration::from_secs(1),
            run: light_flops,
        },
        Criterion {
            id: "resolution",
            title: "Stage-3 attention share at 1008² and ×16 / ×4 scaling",
            budget: Duration::from_secs(1),
            run: resolution,
        },
        Criterion {
            id: "equivalence",
            title: "structural equivalence suite",
            budget: Duration::from_secs(30),
            run: equivalence,
        },
        Criterion {
            id: "gradients",
            title: "finite-difference suite, max relative error < 1e-4",
            budget: Duration::from_secs(120),
            run: gradients,
        },
        Criterion {
            id: "trainability",
            title: "tiny LLGG ≥ 95%, tiny hourglass ≥ 90%, deterministic traces",
            budget: Duration::from_secs(600),
            run: trainability,
        },
        Criterion {
            id: "determinism",
            title: "seeded builds and bit-exact checkpoint round trips",
            budget: Duration::from_secs(120),
            run: determinism,
        },
    ]
}

fn preset(name: &str) -> ModelConfig {
    ModelConfig::preset(name).expect("built-in preset")
}

fn params() -> Vec<Outcome> {
    [("S", 21.5e6), ("B", 50.3e6), ("L", 100e6), ("XXS", 10.2e6), ("XS", 16.5e6)]
        .into_iter()
        .map(|(name, target)| Outcome::within(format!("{name} params (M)"), count_params(&preset(name)) as f64 / 1e6, target / 1e6, 0.02))
        .collect()
}

fn gflops(cfg: &ModelConfig, input: InputSpec) -> Result<f64, crate::Error> {
    Ok(count_macs(cfg, input)?.total_macs() as f64 / 1e9)
}

fn flop_outcome(label: String, cfg: &ModelConfig, input: InputSpec, target: f64) -> Outcome {
    match gflops(cfg, input) {
        Ok(v) => Outcome::within(label, v, target, 0.05),
        Err(e) => Outcome::from_error(label, e),
    }
}

fn flops() -> Vec<Outcome> {
    let mut out: Vec<Outcome> = [("S", 3.6), ("B", 8.3), ("L", 12.6)]
        .into_iter()
        .map(|(name, target)| flop_outcome(format!("{name} @224² (GFLOPs)"), &preset(name), InputSpec::image(224), target))
        .collect();
    let mut video = preset("S").video(16);
    video.num_classes = 400;
    out.push(flop_outcome("S 16x224² video (GFLOPs)".into(), &video, video.input, 41.8));
    out
}

fn light_flops() -> Vec<Outcome> {
    let xxs = preset("XXS");
    let mut full = xxs.clone();
    full.shrink_ratio = 1.0;
    let mut out = vec![
        flop_outcome("XXS @128² (GFLOPs)".into(), &xxs, InputSpec::image(128), 0.43),
        flop_outcome("XXS @160² (GFLOPs)".into(), &xxs, InputSpec::image(160), 0.67),
        flop_outcome("XXS @160² ratio 1.0 (GFLOPs)".into(), &full, InputSpec::image(160), 0.91),
    ];
    let label = "ratio 0.5 saving vs 1.0 (pp)";
    out.push(match (gflops(&xxs, InputSpec::image(160)), gflops(&full, InputSpec::image(160))) {
        (Ok(half), Ok(one)) => {
            let saving = 100.0 * (1.0 - half / one);
            Outcome::new(label, (saving - 26.0).abs() <= 3.0, format!("{saving:.2} vs 26 (limit ±3 pp)"))
        }
        (Err(e), _) | (_, Err(e)) => Outcome::from_error(label, e),
    });
    out
}

fn resolution() -> Vec<Outcome> {
    let mut out = Vec::new();
    let s = preset("S");
    let label = "S @1008²: Stage-3 attention MatMul share";
    out.push(match count_macs(&s, InputSpec::image(1008)) {
        Ok(r) => {
            let share = r.stage(2).matmul_macs as f64 / r.total_macs() as f64;
            Outcome::new(label, share > 0.5, format!("{:.2}% (must exceed 50%)", 100.0 * share))
        }
        Err(e) => Outcome::from_error(label, e),
    });

    let attn = |cfg: &ModelConfig, res: usize| -> Result<u64, crate::Error> {
        let r = count_macs(cfg, InputSpec::image(res))?;
        Ok(r.rows
            .iter()
            .find(|row| row.path == "stages.2.blocks.0.mhra.attn")
            .map_or(0, |row| row.macs))
    };
    let mut ratio = |label: &str, cfg: &ModelConfig, lo: usize, want: u64| {
        out.push(match (attn(cfg, lo), attn(cfg, 2 * lo)) {
            (Ok(a), Ok(b)) => Outcome::new(
                label,
                a > 0 && b == want * a,
                format!("{a} -> {b} MACs (exactly ×{want}: {})", a > 0 && b == want * a),
            ),
            (Err(e), _) | (_, Err(e)) => Outcome::from_error(label, e),
        });
    };
    ratio("global attention MatMul, 224² -> 448²", &s, 224, 16);
    let mut hybrid = s.clone();
    hybrid.stages[2] = build_hybrid_stage3(&s.stages[2], [14, 14]).stage;
    assert_eq!(hybrid.stages[2].types[0], BlockType::Window);
    ratio("14x14 window attention MatMul, 448² -> 896²", &hybrid, 448, 4);
    out
}

fn equivalence() -> Vec<Outcome> {
    equivcheck_suite(0)
}

fn gradients() -> Vec<Outcome> {
    match gradcheck_suite(7) {
        Ok(reports) => reports
            .into_iter()
            .map(|r| {
                let detail = format!("max rel err {:.2e} over {} entries", r.max_rel_err, r.checked);
                Outcome::new(r.name.clone(), r.passed(TOLERANCE), detail)
            })
            .collect(),
        Err(e) => vec![Outcome::from_error("gradcheck suite", e)],
    }
}

fn trainability() -> Vec<Outcome> {
    let task = SyntheticTask::new(0);
    let cfg = TrainConfig::default();
    let run = |types: [BlockType; 4], tc: &TrainConfig| {
        let mut model: Model<f32> = build_model(&tiny_config(types), &mut Rng::seed(0))?;
        train(&mut model, &task, tc, &mut Rng::seed(1))
    };
    let llgg = [BlockType::Local, BlockType::Local, BlockType::Global, BlockType::Global];
    let llhh = [BlockType::Local, BlockType::Local, BlockType::Hourglass, BlockType::Hourglass];
    let mut out = Vec::new();
    for (label, types, bound) in [("tiny LLGG train accuracy", llgg, 0.95), ("tiny LLHH (ratio 0.5) train accuracy", llhh, 0.90)] {
        out.push(match run(types, &cfg) {
            Ok(r) => Outcome::new(
                label,
                r.final_train_acc >= bound,
                format!("{:.4} after {} steps (need ≥ {bound})", r.final_train_acc, cfg.steps),
            ),
            Err(e) => Outcome::from_error(label, e),
        });
    }
    let short = TrainConfig {
        steps: 60,
        eval_interval: 10,
        warmup: 10,
        ..cfg
    };
    let label = "identical seeds give identical traces";
    out.push(match (run(llhh, &short), run(llhh, &short)) {
        (Ok(a), Ok(b)) => {
            let same = a.to_csv() == b.to_csv()
                && a.trace.iter().zip(&b.trace).all(|(x, y)| x.loss.to_bits() == y.loss.to_bits());
            Outcome::new(label, same, format!("{} rows compared", a.trace.len()))
        }
        (Err(e), _) | (_, Err(e)) => Outcome::from_error(label, e),
    });
    out
}

fn determinism() -> Vec<Outcome> {
    let mut out = Vec::new();
    for name in ["S", "XXS"] {
        let label = format!("{name} build is seed-deterministic");
        let cfg = preset(name);
        out.push(match (build_model::<f32>(&cfg, &mut Rng::seed(11)), build_model::<f32>(&cfg, &mut Rng::seed(11))) {
            (Ok(a), Ok(b)) => {
                let same = a.params.len() == b.params.len()
                    && a.params.iter().zip(b.params.iter()).all(|((pa, ta), (pb, tb))| {
                        pa == pb && ta.shape() == tb.shape() && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
                    });
                Outcome::new(label, same, format!("{} tensors", a.params.len()))
            }
            (Err(e), _) | (_, Err(e)) => Outcome::from_error(label, e),
        });
    }
    for name in PRESETS {
        let label = format!("{name} checkpoint round trip");
        let res = (|| -> Result<(bool, usize), crate::Error> {
            let model: Model<f32> = build_model(&preset(name), &mut Rng::seed(3))?;
            let bytes = checkpoint::to_bytes(&model.params)?;
            let back = checkpoint::from_bytes(&bytes)?;
            let same = back.len() == model.params.len()
                && back.iter().zip(model.params.iter()).all(|((pa, ta), (pb, tb))| {
                    pa == pb && ta.shape() == tb.shape() && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
                })
                && checkpoint::to_bytes(&back)? == bytes;
            Ok((same, bytes.len()))
        })();
        out.push(match res {
            Ok((same, n)) => Outcome::new(label, same, format!("{n} bytes")),
            Err(e) => Outcome::from_error(label, e),
        });
    }
    out
}
