//! Thin CLI over the library's train / eval / report pipeline. All real work
//! lives in `bdn::experiment`; this file only parses flags and maps errors
//! onto exit codes (0 success, 2 config problem, 3 data/format problem).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bdn::experiment::{
    load_experiment_config, run_eval, run_report, run_train, EvalMode, EvalOptions, ReportOptions,
};
use bdn::uncertainty::Measure;

#[derive(Parser)]
#[command(
    name = "bdn",
    version,
    about = "Train small networks with Bernoulli weight masks, run Monte-Carlo \
             inference, and evaluate the predictive uncertainty."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a JSON experiment config.
    Train {
        /// Config file: {"network", "data", "train": {...}, "out_dir"}.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a checkpoint over a dataset; writes predictions + uncertainty.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset spec: idx:<images>:<labels> |
        /// digits:<train|test>[:count[:seed]] |
        /// gaussians:<classes>:<per-class>:<dim>:<separation>:<seed>
        #[arg(long)]
        data: String,
        /// "standard" (one maskless pass) or "mc".
        #[arg(long, default_value = "mc")]
        mode: EvalMode,
        /// Monte-Carlo passes (ignored with --mode standard).
        #[arg(long, default_value_t = 100)]
        passes: usize,
        /// Override the checkpoint's shared keep probability.
        #[arg(long)]
        keep_prob: Option<f64>,
        /// Override the checkpoint's mask base seed.
        #[arg(long)]
        mask_seed: Option<u64>,
        /// Rotate each input by an angle drawn uniformly from "lo,hi" degrees.
        #[arg(long, value_parser = parse_angle_range, allow_hyphen_values = true)]
        rotate: Option<(f64, f64)>,
        /// Replace dark pixels with uniform noise in [0, scale].
        #[arg(long)]
        background: Option<f64>,
        /// Seed for the rotate/background transforms.
        #[arg(long, default_value_t = 0)]
        ood_seed: u64,
        /// Also dump every pass probability as CSV (large!).
        #[arg(long)]
        probs_csv: bool,
        /// Output directory; defaults to the directory the checkpoint
        /// layout lives in.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn eval outputs into metric curves, tables, charts and a summary.
    Report {
        /// Output directory of earlier train/eval runs.
        #[arg(long)]
        from: PathBuf,
        /// Add accuracy-vs-referral-fraction curves with a random baseline.
        #[arg(long)]
        referral: bool,
        /// Add error-vs-pass-count curves (needs mask-trained eval runs).
        #[arg(long)]
        convergence: bool,
        /// Compare uncertainty on correct vs incorrect predictions.
        #[arg(long)]
        ks: bool,
        /// Uncertainty measure: "mi" or "entropy".
        #[arg(long, default_value = "mi")]
        measure: Measure,
        /// Number of threshold grid points.
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
}

fn parse_angle_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected \"lo,hi\" (degrees)")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("bad low angle: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("bad high angle: {e}"))?;
    Ok((lo, hi))
}

/// `<dir>/checkpoints/model.ckpt` implies the run lives in `<dir>`.
fn infer_out_dir(ckpt: &Path) -> PathBuf {
    match ckpt.parent() {
        Some(p) if p.file_name().is_some_and(|n| n == "checkpoints") => {
            p.parent().unwrap_or(Path::new(".")).to_path_buf()
        }
        _ => PathBuf::from("out"),
    }
}

fn run(cli: Cli) -> bdn::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let config = load_experiment_config(&config)?;
            let out = run_train(&config)?;
            for s in &out.stats {
                println!(
                    "epoch {:>3}  objective {:.6}  accuracy {:.4}",
                    s.epoch, s.mean_objective, s.train_accuracy
                );
            }
            println!("checkpoint: {}", out.checkpoint.display());
            println!("log: {}", out.log.display());
        }
        Command::Eval {
            ckpt,
            data,
            mode,
            passes,
            keep_prob,
            mask_seed,
            rotate,
            background,
            ood_seed,
            probs_csv,
            out,
        } => {
            let out_dir = out.unwrap_or_else(|| infer_out_dir(&ckpt));
            let options = EvalOptions {
                mode,
                passes,
                keep_prob,
                mask_seed,
                rotate,
                background,
                ood_seed,
                write_probs_csv: probs_csv,
                ..EvalOptions::new(ckpt, &data, out_dir)
            };
            let out = run_eval(&options)?;
            println!(
                "{}: {} samples, {} passes, error rate {:.4}",
                out.metadata.tag, out.metadata.samples, out.metadata.passes, out.metadata.error_rate
            );
            println!("predictions: {}", out.metadata.predictions.display());
            println!("metadata: {}", out.metadata_path.display());
        }
        Command::Report { from, referral, convergence, ks, measure, grid } => {
            let options = ReportOptions { referral, convergence, ks, measure, grid, ..ReportOptions::new(from) };
            let out = run_report(&options)?;
            for path in &out.written {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
