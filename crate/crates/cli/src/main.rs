//! `ltpll`: dataset generation, training, checkpoint re-scoring, the
//! distribution-error bound, and config sweeps.
//!
//! Experiments are declared in JSON config files; flags override config
//! fields (flag > file > default). Exit codes: 0 success, 2 config error,
//! 3 runtime abort (non-finite loss), 4 I/O.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ltpll_core::datagen;
use ltpll_core::error::Error;
use ltpll_core::eval::{prop1_bound, BoundInputs};
use ltpll_core::experiment::{
    dump_weights_csv, evaluate_checkpoint, generator_hash, prepare_dir, run_sweep,
    train_on_dataset, Checkpoint, ExperimentConfig, SweepConfig,
};
use ltpll_core::rebalance::InferenceOffset;

#[derive(Parser)]
#[command(name = "ltpll", version, about = "Desk-scale long-tailed partial label learning lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a dataset: train.jsonl, meta.json (harness sidecar), test.jsonl.
    Gen {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: <out_dir>/data-<genhash>-s<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train on a generated dataset; writes metrics.csv and checkpoint.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory produced by `gen`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (default: <out_dir>/run-<hash>-s<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        /// Also dump final confidence weights as weights.csv.
        #[arg(long)]
        dump_weights: bool,
    },
    /// Re-score a checkpoint against a test file; prints a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test split JSONL ({"id","x","y"} records).
        #[arg(long)]
        test: PathBuf,
        /// Inference offset: the mode's default, raw logits, or adjusted.
        #[arg(long, value_enum, default_value = "auto")]
        offset: OffsetArg,
    },
    /// Evaluate the class-distribution estimation error bound.
    Bound {
        #[arg(long = "N")]
        n: usize,
        #[arg(long = "C")]
        c: usize,
        #[arg(long = "dH")]
        d_h: usize,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        delta: f64,
    },
    /// Expand a config matrix into child runs plus a summary CSV.
    Sweep {
        /// Sweep JSON: {"base": <experiment config>, "axes": [{"path", "values"}]}.
        #[arg(long)]
        config: PathBuf,
        /// Root for child run directories (default: the base config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OffsetArg {
    Auto,
    Raw,
    Adjusted,
}

impl From<OffsetArg> for InferenceOffset {
    fn from(o: OffsetArg) -> Self {
        match o {
            OffsetArg::Auto => InferenceOffset::Auto,
            OffsetArg::Raw => InferenceOffset::Raw,
            OffsetArg::Adjusted => InferenceOffset::Adjusted,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Validation(_) => 2,
        Error::NonFinite { .. } | Error::Structural(_) | Error::Contract(_) => 3,
        Error::Io(_) | Error::Json(_) => 4,
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(path)?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Gen {
            config,
            seed,
            out,
            force,
        } => {
            let cfg = load_config(&config, seed)?.resolve()?;
            let dir = match out {
                Some(dir) => dir,
                None => Path::new(&cfg.out_dir).join(format!(
                    "data-{}-s{}",
                    generator_hash(&cfg.generator)?,
                    cfg.seed
                )),
            };
            prepare_dir(&dir, force)?;
            let (ds, test) = datagen::synth_dataset(&cfg.generator)?;
            datagen::write_dataset(&ds, &test, &dir)?;
            println!(
                "{}",
                serde_json::json!({
                    "dir": dir,
                    "samples": ds.num_samples(),
                    "classes": ds.num_classes(),
                    "counts": ds.counts(),
                    "eta": ds.eta(),
                })
            );
            Ok(())
        }
        Cmd::Train {
            config,
            data,
            seed,
            out,
            force,
            dump_weights,
        } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(out) = out {
                cfg.out_dir = out.to_string_lossy().into_owned();
            }
            let (ds, test) = datagen::load_dataset(&data)?;
            let artifacts = train_on_dataset(&cfg, ds, test, force)?;
            if dump_weights {
                dump_weights_csv(
                    artifacts.state.weights(),
                    &artifacts.run_dir.join("weights.csv"),
                )?;
            }
            let last = artifacts.final_log();
            println!(
                "{}",
                serde_json::json!({
                    "run_dir": artifacts.run_dir,
                    "epochs": artifacts.config.train.epochs,
                    "balanced_top1": last.balanced_top1,
                    "train_loss": last.train_loss,
                    "l2_proto": last.l2_proto,
                    "l2_pred": last.l2_pred,
                })
            );
            Ok(())
        }
        Cmd::Eval {
            checkpoint,
            test,
            offset,
        } => {
            let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(&checkpoint)?)
                .map_err(|e| Error::Config(format!("{}: {e}", checkpoint.display())))?;
            let test = datagen::load_test_jsonl(&test)?;
            let report = evaluate_checkpoint(&ck, &test, Some(offset.into()))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Cmd::Bound {
            n,
            c,
            d_h,
            eta,
            delta,
        } => {
            let inputs = BoundInputs {
                n,
                c,
                d_h,
                eta,
                delta,
            };
            let epsilon = prop1_bound(&inputs)?;
            println!(
                "{}",
                serde_json::json!({ "inputs": inputs, "epsilon": epsilon })
            );
            Ok(())
        }
        Cmd::Sweep { config, out, force } => {
            let text = fs::read_to_string(&config)?;
            let sweep: SweepConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from(&sweep.base.out_dir));
            let rows = run_sweep(&sweep, &out_dir, force)?;
            for row in &rows {
                println!(
                    "{}",
                    serde_json::json!({
                        "label": row.label,
                        "run_dir": row.run_dir,
                        "balanced_top1": row.balanced_top1,
                    })
                );
            }
            println!(
                "{}",
                serde_json::json!({
                    "summary": out_dir.join("sweep_summary.csv"),
                    "runs": rows.len(),
                })
            );
            Ok(())
        }
    }
}
