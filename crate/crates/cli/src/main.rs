//! `uniformer`: build, analyze and verify UniFormer backbones.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use uniformer::analyzer::{count_macs, resolution_sweep, sweep_csv};
use uniformer::checks::{self, all_passed, format_outcomes};
use uniformer::config::{load_model_config, ConfigFile};
use uniformer::model::{build_model, InputSpec, Model};
use uniformer::train::{train, SyntheticTask, TrainConfig};
use uniformer::{checkpoint, gradcheck, Rng};

#[derive(Parser)]
#[command(name = "uniformer", version, about = "Build, analyze and verify UniFormer backbones")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct a model and write its parameters to a checkpoint.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter and MAC report for one input size.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// `CxTxHxW`; defaults to the config's input.
        #[arg(long)]
        input: Option<String>,
        #[arg(long)]
        per_stage: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// MAC reports across input resolutions.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated sizes, each `N` (square) or `HxW`.
        #[arg(long)]
        resolutions: String,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Finite-difference check of every op and block.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = gradcheck::TOLERANCE)]
        tol: f64,
    },
    /// Structural equivalence checks.
    Equivcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on the synthetic stripe task.
    TrainToy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run every acceptance criterion and print a pass/fail table.
    Reproduce {
        /// Run only the criteria with these ids.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
}

/// Outcome of a subcommand that ran to completion.
enum Status {
    Ok,
    ChecksFailed,
}

fn parse_input(s: &str) -> anyhow::Result<InputSpec> {
    let v: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad --input `{s}` (expected CxTxHxW)"))?;
    let [channels, frames, height, width] = v[..] else {
        bail!("bad --input `{s}` (expected CxTxHxW)");
    };
    Ok(InputSpec {
        channels,
        frames,
        height,
        width,
    })
}

fn parse_resolutions(s: &str) -> anyhow::Result<Vec<[usize; 2]>> {
    s.split(',')
        .map(|r| {
            let parts: Vec<&str> = r.trim().split(['x', 'X']).collect();
            let n = |p: &str| p.trim().parse::<usize>().with_context(|| format!("bad resolution `{r}`"));
            match parts[..] {
                [a] => Ok([n(a)?, n(a)?]),
                [h, w] => Ok([n(h)?, n(w)?]),
                _ => bail!("bad resolution `{r}` (expected N or HxW)"),
            }
        })
        .collect()
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cmd: Command) -> anyhow::Result<Status> {
    match cmd {
        Command::Build { config, seed, out } => {
            let cfg = load_model_config(&config)?;
            let model: Model<f32> = build_model(&cfg, &mut Rng::seed(seed))?;
            checkpoint::save(&model.params, &out)?;
            let mut side = out.clone().into_os_string();
            side.push(".toml");
            write(Path::new(&side), &ConfigFile::from_model(&cfg).to_toml()?)?;
            println!(
                "{}: {} tensors, {} parameters -> {}",
                cfg.name,
                model.params.len(),
                model.param_count(),
                out.display()
            );
        }
        Command::Analyze {
            config,
            input,
            per_stage,
            csv,
        } => {
            let cfg = load_model_config(&config)?;
            let input = match input {
                Some(s) => parse_input(&s)?,
                None => cfg.input,
            };
            if input.channels != cfg.input.channels {
                bail!("input has {} channels, the model expects {}", input.channels, cfg.input.channels);
            }
            let report = count_macs(&cfg, input)?;
            print!("{}", report.to_text(per_stage));
            if let Some(path) = csv {
                write(&path, &report.to_csv(per_stage))?;
            }
        }
        Command::Sweep {
            config,
            resolutions,
            csv,
        } => {
            let cfg = load_model_config(&config)?;
            let reports = resolution_sweep(&cfg, &parse_resolutions(&resolutions)?)?;
            let table = sweep_csv(&reports);
            print!("{table}");
            if let Some(path) = csv {
                write(&path, &table)?;
            }
        }
        Command::Gradcheck { seed, tol } => {
            let reports = checks::gradcheck_suite(seed)?;
            let mut ok = true;
            for r in &reports {
                let pass = r.passed(tol);
                ok &= pass;
                println!(
                    "{}  {:<32} max rel err {:.3e} over {} entries",
                    if pass { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_rel_err,
                    r.checked
                );
            }
            println!("{} of {} checks passed (tol {tol:e})", reports.iter().filter(|r| r.passed(tol)).count(), reports.len());
            if !ok {
                return Ok(Status::ChecksFailed);
            }
        }
        Command::Equivcheck { seed } => {
            let outcomes = checks::equivcheck_suite(seed);
            print!("{}", format_outcomes(&outcomes));
            if !all_passed(&outcomes) {
                return Ok(Status::ChecksFailed);
            }
        }
        Command::TrainToy {
            config,
            steps,
            seed,
            metrics,
        } => {
            let cfg = load_model_config(&config)?;
            let inp = cfg.input;
            if inp.height != inp.width {
                bail!("the stripe task needs square inputs, got {}x{}", inp.height, inp.width);
            }
            let task = SyntheticTask {
                size: inp.height,
                frames: inp.frames,
                channels: inp.channels,
                ..SyntheticTask::new(seed)
            };
            let tc = TrainConfig {
                steps,
                warmup: TrainConfig::default().warmup.min(steps / 10),
                ..TrainConfig::default()
            };
            let mut model: Model<f32> = build_model(&cfg, &mut Rng::seed(seed))?;
            let start = Instant::now();
            let report = train(&mut model, &task, &tc, &mut Rng::seed(seed.wrapping_add(1)))?;
            print!("{}", report.to_csv());
            println!(
                "{}: final train accuracy {:.4} after {steps} steps ({:.1}s)",
                cfg.name,
                report.final_train_acc,
                start.elapsed().as_secs_f64()
            );
            if let Some(path) = metrics {
                write(&path, &report.to_csv())?;
            }
        }
        Command::Reproduce { only } => {
            let mut ok = true;
            let mut rows = Vec::new();
            for c in checks::criteria() {
                if !only.is_empty() && !only.iter().any(|o| o == c.id) {
                    continue;
                }
                let r = checks::run_criterion(&c);
                print!("{}", r.render());
                ok &= r.passed();
                rows.push((r.id, r.passed()));
            }
            if rows.is_empty() {
                bail!("no criterion matches {only:?}");
            }
            println!("\nsummary");
            for (id, pass) in &rows {
                println!("  {}  {id}", if *pass { "PASS" } else { "FAIL" });
            }
            if !ok {
                return Ok(Status::ChecksFailed);
            }
        }
    }
    Ok(Status::Ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ChecksFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
