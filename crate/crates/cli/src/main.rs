//! `diet` experiment runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use diet_core::data::IndexedDataset;
use diet_core::harness::report::correlation_report;
use diet_core::harness::sweep::{parse_grid_seeded, sweep_with, SweepRun};
use diet_core::harness::{build_datasets, MetricsFormat, RunArtifact, TrainConfig, Trainer};
use diet_core::probe::probe_accuracy;

#[derive(Parser)]
#[command(
    name = "diet",
    version,
    about = "Train and evaluate index-as-target encoders on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for MetricsFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => MetricsFormat::Csv,
            Format::Jsonl => MetricsFormat::Jsonl,
        }
    }
}

#[derive(clap::Args)]
struct Output {
    /// Directory receiving one sub-directory per run.
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory name (defaults to the config file stem).
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Train every point of a grid file.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Override the base seed (a seed axis still wins).
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Fit a linear probe on a checkpoint's encoder.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labelled dataset file to fit the probe on.
        #[arg(long)]
        data: PathBuf,
        /// Held-out dataset file (default: the checkpoint config's held-out split).
        #[arg(long)]
        test: Option<PathBuf>,
        /// Override the config's probe iterations.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Loss/accuracy rank correlation over a directory of runs.
    Report {
        #[arg(long)]
        runs: PathBuf,
    },
    /// Write a config's training and held-out datasets to disk.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<TrainConfig> {
    let mut cfg =
        TrainConfig::load(path).with_context(|| format!("reading config {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains `cfg` and writes config, metrics, run record and final checkpoint
/// into `dir`.
fn train_into(
    name: &str,
    cfg: TrainConfig,
    dir: &Path,
    format: MetricsFormat,
) -> diet_core::Result<RunArtifact> {
    let mut t = Trainer::new(cfg)?;
    t.run_to_end()?;
    std::fs::create_dir_all(dir)?;
    let ckpt = dir.join("checkpoint.dietck");
    t.save_checkpoint(&ckpt)?;
    let mut artifact = t.into_artifact(name);
    artifact.checkpoint = Some(ckpt);
    artifact.write_dir(dir, format)?;
    Ok(artifact)
}

fn summary(a: &RunArtifact) -> serde_json::Value {
    serde_json::json!({
        "name": a.name,
        "final_loss": a.final_loss(),
        "probe_top1": a.final_probe(),
        "epochs": a.metrics.len(),
    })
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            name,
            output,
        } => {
            let cfg = load_config(&config, seed)?;
            let name = match name {
                Some(n) => n,
                None => config
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "run".into()),
            };
            let dir = output.out_dir.join(&name);
            let artifact = train_into(&name, cfg, &dir, output.format.into())?;
            println!("{}", summary(&artifact));
        }
        Command::Sweep {
            grid,
            workers,
            seed,
            output,
        } => {
            let text = std::fs::read_to_string(&grid)
                .with_context(|| format!("reading grid {}", grid.display()))?;
            let runs = parse_grid_seeded(&text, seed)?;
            let format = output.format.into();
            let out_dir = output.out_dir.clone();
            let results = sweep_with(&runs, workers, |r: &SweepRun| {
                train_into(&r.name, r.config.clone(), &out_dir.join(&r.name), format)
            });
            let mut failed = 0;
            for (r, res) in runs.iter().zip(results) {
                match res {
                    Ok(a) => println!("{}", summary(&a)),
                    Err(e) => {
                        failed += 1;
                        let dir = out_dir.join(&r.name);
                        std::fs::create_dir_all(&dir)?;
                        std::fs::write(dir.join("error.txt"), format!("{e}\n"))?;
                        println!(
                            "{}",
                            serde_json::json!({ "name": r.name, "error": e.to_string() })
                        );
                    }
                }
            }
            if failed > 0 {
                eprintln!("{failed} of {} runs failed", runs.len());
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Probe {
            checkpoint,
            data,
            test,
            epochs,
        } => {
            let t = Trainer::load_checkpoint(&checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let train = IndexedDataset::load(&data)
                .with_context(|| format!("loading {}", data.display()))?;
            let test = match test {
                Some(p) => {
                    IndexedDataset::load(&p).with_context(|| format!("loading {}", p.display()))?
                }
                None => build_datasets(t.config())?.1,
            };
            if train.dim() != t.encoder().input_dim() || test.dim() != t.encoder().input_dim() {
                bail!(
                    "dataset dimension {} / {} does not match encoder input {}",
                    train.dim(),
                    test.dim(),
                    t.encoder().input_dim()
                );
            }
            let mut pcfg = t.config().probe_config(false);
            if let Some(e) = epochs {
                pcfg.epochs = e;
            }
            let acc = probe_accuracy(t.encoder(), &train, &test, &pcfg)?;
            println!(
                "{}",
                serde_json::json!({ "probe_top1": acc, "n_train": train.len(), "n_test": test.len() })
            );
        }
        Command::Report { runs } => {
            let mut artifacts = Vec::new();
            let mut dirs: Vec<PathBuf> = std::fs::read_dir(&runs)
                .with_context(|| format!("listing {}", runs.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("run.json").is_file())
                .collect();
            dirs.sort();
            for d in dirs {
                artifacts.push(RunArtifact::read_dir(&d)?);
            }
            let report = correlation_report(&artifacts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Generate { config, out_dir } => {
            let cfg = load_config(&config, None)?;
            let (train, test) = build_datasets(&cfg)?;
            std::fs::create_dir_all(&out_dir)?;
            let (tp, hp) = (out_dir.join("train.dietds"), out_dir.join("test.dietds"));
            train.save(&tp)?;
            test.save(&hp)?;
            println!("{}", serde_json::json!({ "train": tp, "test": hp }));
        }
    }
    Ok(ExitCode::SUCCESS)
}
