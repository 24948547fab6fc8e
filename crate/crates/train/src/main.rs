use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mohsa_core::oracle::{self, CheckReport, SweepSpec};
use mohsa_core::{cost_report, parse_policy, CostReport, ModelConfig, OverlapTargets};
use mohsa_train::checkpoint::Checkpoint;
use mohsa_train::data::{load_cifar10, SyntheticSpec};
use mohsa_train::error::TrainError;
use mohsa_train::train::{load_data, train_on};
use mohsa_train::{evaluate, load_model_config, render_curves, Split, TrainConfig};

#[derive(Parser)]
#[command(name = "mohsa", version, about = "Overlapped-head attention ViTs: schedules, costs, checks and training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the per-layer overlap dimensions of a schedule policy.
    Schedule {
        /// e.g. "inc-0 (2)", "dec-1(1)", "fixed 1", "fixed half".
        policy: String,
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = 16)]
        head_dim: usize,
    },
    /// Parameter and multiply-accumulate counts of a model.
    Count {
        /// Config file or preset (vit-tiny, vit-small, vit-micro, tiny-test).
        #[arg(long)]
        model: String,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        targets: Option<String>,
        /// Input size for the MAC count (defaults to the model's).
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Train a model.
    Train {
        /// Model config; overrides the `model` key of the training config.
        #[arg(long)]
        model: Option<String>,
        #[arg(long = "train")]
        train_cfg: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// CIFAR-10 directory or SYNTHETIC.
        #[arg(long)]
        data: String,
        #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
        split: EvalSplit,
        /// Evaluate only the first N samples.
        #[arg(long, default_value_t = 0)]
        limit: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        /// Synthetic data: seed, sample count and noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
    /// Analytic gradients against central differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Scale::Tiny)]
        scale: Scale,
    },
    /// Core forward passes against the scalar-loop references.
    Oracle {
        #[arg(long, value_enum, default_value_t = Scale::Small)]
        sweep: Scale,
    },
    /// Render accuracy curves from metrics files as SVG.
    Plot {
        #[arg(long, num_args = 1.., required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Tiny,
    Small,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<u8, TrainError> {
    match cmd {
        Command::Schedule {
            policy,
            depth,
            head_dim,
        } => {
            let p = parse_policy(&policy).map_err(mohsa_core::Error::from)?;
            let s = p.build(depth, head_dim).map_err(mohsa_core::Error::from)?;
            println!("{s}");
            Ok(0)
        }
        Command::Count {
            model,
            classes,
            policy,
            targets,
            image_size,
        } => {
            let mut cfg = load_model_config(&model)?;
            if let Some(c) = classes {
                cfg.num_classes = c;
            }
            if let Some(p) = policy {
                cfg.policy = parse_policy(&p).map_err(mohsa_core::Error::from)?;
            }
            if let Some(t) = targets {
                cfg.targets = t.parse::<OverlapTargets>()?;
            }
            let report = cost_report(&cfg, image_size.unwrap_or(cfg.image_size))?;
            print_count(&cfg, &report);
            Ok(0)
        }
        Command::Train {
            model,
            train_cfg,
            output,
        } => {
            let mut tc = TrainConfig::from_file(&train_cfg)?;
            if let Some(o) = output {
                tc.output = o;
            }
            let model_spec = match (model, &tc.model) {
                (Some(m), _) => m,
                (None, Some(p)) => p.display().to_string(),
                (None, None) => {
                    return Err(TrainError::Config(
                        "no model config: pass --model or set `model` in the training config".into(),
                    ))
                }
            };
            let cfg = load_model_config(&model_spec)?;
            let data = load_data(&tc, &cfg)?;
            eprintln!(
                "training {} parameters on {} samples ({} validation), policy {}, schedule {}",
                mohsa_core::count_params(&cfg)?,
                data.train.len(),
                data.val.len(),
                cfg.policy,
                cfg.schedule()?
            );
            println!("{}", mohsa_train::metrics::CSV_HEADER);
            let out = train_on(&tc, &cfg, &data, &mut |r| println!("{}", r.csv_row()))?;
            eprintln!(
                "wrote {}, {} and {}",
                out.metrics_path.display(),
                out.final_checkpoint.display(),
                out.best_checkpoint.display()
            );
            Ok(0)
        }
        Command::Eval {
            ckpt,
            data,
            split,
            limit,
            batch_size,
            seed,
            samples,
            noise,
        } => {
            let ck = Checkpoint::<f32>::load(&ckpt)?;
            let set = if data.eq_ignore_ascii_case("synthetic") {
                let spec = SyntheticSpec::new(ck.model.num_classes, ck.model.image_size, noise);
                let stream = match split {
                    EvalSplit::Train => 0,
                    EvalSplit::Test => 1,
                };
                spec.generate(seed, samples, stream)?
            } else {
                let c = load_cifar10(Path::new(&data))?;
                match split {
                    EvalSplit::Train => c.train,
                    EvalSplit::Test => c.test,
                }
            }
            .truncated(limit);
            let split = match split {
                EvalSplit::Train => Split::Train,
                EvalSplit::Test => Split::Val,
            };
            let rec = evaluate(&ck, &set, split, batch_size)?;
            println!(
                "epoch {}  samples {}  loss {:.6}  acc {:.4}",
                rec.epoch,
                set.len(),
                rec.loss,
                rec.acc
            );
            println!("{}", mohsa_train::metrics::CSV_HEADER);
            println!("{}", rec.csv_row());
            Ok(0)
        }
        Command::Gradcheck { scale } => {
            let spec = match scale {
                Scale::Tiny | Scale::Small => SweepSpec::small(),
            };
            let mut reports = vec![oracle::run_layer_gradcheck(&spec)?];
            for policy in ["fixed 0", "inc-1 (1)", "fixed half"] {
                let cfg = ModelConfig::tiny_test().with_policy(parse_policy(policy).map_err(mohsa_core::Error::from)?);
                reports.push(oracle::run_vit_gradcheck(&cfg, 2, 11)?);
            }
            Ok(print_reports(&reports))
        }
        Command::Oracle { sweep } => {
            let spec = match sweep {
                Scale::Tiny | Scale::Small => SweepSpec::small(),
            };
            let reports = vec![
                oracle::run_oracle_sweep(&spec)?,
                oracle::run_degeneracy_check(50, 2024)?,
            ];
            Ok(print_reports(&reports))
        }
        Command::Plot { csv, out } => {
            let mut runs = Vec::with_capacity(csv.len());
            for path in &csv {
                let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
                runs.push((run_name(path), text));
            }
            let svg = render_curves(&runs)?;
            std::fs::write(&out, svg).map_err(|e| TrainError::io(&out, e))?;
            println!("wrote {} ({} runs)", out.display(), runs.len());
            Ok(0)
        }
    }
}

/// `runs/a/metrics.csv` is named `a`; any other file by its stem.
fn run_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    if stem == "metrics" {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            return dir.to_string();
        }
    }
    stem.to_string()
}

fn print_count(cfg: &ModelConfig, r: &CostReport) {
    println!(
        "model: dim {} heads {} depth {} patch {} image {} classes {} policy {} targets {}",
        cfg.dim, cfg.heads, cfg.depth, cfg.patch_size, cfg.image_size, cfg.num_classes, cfg.policy, cfg.targets
    );
    if let Ok(s) = cfg.schedule() {
        println!("schedule: {s}");
    }
    println!("{r}");
    println!();
    println!("{}", CostReport::CSV_HEADER);
    println!("{}", r.csv_row());
}

fn print_reports(reports: &[CheckReport]) -> u8 {
    let mut ok = true;
    for r in reports {
        println!("{r}\n");
        ok &= r.passed();
    }
    println!("{}", if ok { "ALL PASS" } else { "FAILURES PRESENT" });
    if ok {
        0
    } else {
        4
    }
}
