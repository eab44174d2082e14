//! Command-line entry point for the latent-domain adaptation engine.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 numerical failure
//! during training, 3 gradient check failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mda_engine::data::{generate, save_jsonl};
use mda_engine::gradcheck::run_gradcheck;
use mda_engine::harness::{
    blobs2x1_spec, blobs_collapse_spec, run_compare, run_eval, run_train, ExperimentConfig, Mode,
};
use mda_engine::Error;

#[derive(Parser)]
#[command(name = "mda", about = "latent-domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark as train/eval JSONL files
    Generate {
        /// benchmark name: blobs2x1 or blobs_collapse
        #[arg(long, default_value = "blobs2x1")]
        benchmark: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// output directory for train.jsonl and eval.jsonl
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a JSON experiment config
    Train {
        #[arg(long)]
        config: PathBuf,
        /// override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// override the config mode
        #[arg(long)]
        mode: Option<String>,
        /// override the fraction of source samples with revealed domains
        #[arg(long)]
        domain_label_frac: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and emit metrics plus assignment histograms
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        domain_label_frac: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient verification of the full model
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Compare two arms of runs by their final target accuracy
    Compare {
        /// run-record CSVs for arm A (comma separated)
        #[arg(long, value_delimiter = ',')]
        a: Vec<PathBuf>,
        /// run-record CSVs for arm B (comma separated)
        #[arg(long, value_delimiter = ',')]
        b: Vec<PathBuf>,
    },
}

fn apply_overrides(
    cfg: &mut ExperimentConfig,
    seed: Option<u64>,
    mode: Option<String>,
    frac: Option<f64>,
) -> Result<(), Error> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = Mode::parse(&m)?;
    }
    if let Some(f) = frac {
        cfg.domain_label_frac = f;
    }
    cfg.validate()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { benchmark, seed, out } => {
            let spec = match benchmark.as_str() {
                "blobs2x1" => blobs2x1_spec(seed),
                "blobs_collapse" => blobs_collapse_spec(seed),
                other => return Err(Error::Usage(format!("unknown benchmark {}", other))),
            };
            std::fs::create_dir_all(&out)?;
            let (train, eval) = generate(&spec)?;
            save_jsonl(&train, &out.join("train.jsonl"))?;
            save_jsonl(&eval, &out.join("eval.jsonl"))?;
            println!(
                "wrote {} train and {} eval samples to {}",
                train.samples.len(),
                eval.samples.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            seed,
            mode,
            domain_label_frac,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply_overrides(&mut cfg, seed, mode, domain_label_frac)?;
            let summary = run_train(&cfg, &out)?;
            let last = summary.final_row();
            println!(
                "step {} target_acc {:.4} src_purity {:.4} tgt_purity {:.4}",
                last.step, last.target_acc, last.src_purity, last.tgt_purity
            );
            println!("metrics: {}", summary.csv_path.display());
            println!("checkpoint: {}", summary.checkpoint_path.display());
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            seed,
            mode,
            domain_label_frac,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply_overrides(&mut cfg, seed, mode, domain_label_frac)?;
            let row = run_eval(&cfg, &checkpoint, &out)?;
            println!(
                "target_acc {:.4} src_purity {:.4} tgt_purity {:.4}",
                row.target_acc, row.src_purity, row.tgt_purity
            );
            Ok(())
        }
        Command::Gradcheck { seed, trials } => {
            let report = run_gradcheck(seed, trials)?;
            println!(
                "gradcheck: {} trials, max rel err {:.3e}, {}",
                report.trials.len(),
                report.max_rel_err,
                if report.pass { "pass" } else { "FAIL" }
            );
            if let Some(worst) = report.worst_trial() {
                println!(
                    "worst trial: b={} c={} domains={} at {}",
                    worst.batch, worst.channels, worst.num_domains, worst.worst
                );
            }
            if !report.pass {
                std::process::exit(3);
            }
            Ok(())
        }
        Command::Compare { a, b } => {
            if a.is_empty() || b.is_empty() {
                return Err(Error::Usage("compare needs at least one CSV per arm".into()));
            }
            let cmp = run_compare(&a, &b)?;
            println!(
                "p*(A>B) {:.4} ties {:.4} mean_a {:.4} mean_b {:.4}",
                cmp.p_star_a_over_b, cmp.tie_fraction, cmp.mean_a, cmp.mean_b
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            match e {
                Error::NonFinite(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
