//! `pcagan`: generate Gaussian datasets, train and score pcaGAN/rcGAN, and
//! run the `M`, `K` and `d` sweeps.
//!
//! Exit status: 0 on success, 2 for usage or config errors, 3 when a run
//! diverged (partial outputs are still written), 1 for anything else.
//! Errors are also printed to stderr as one JSON object.

use clap::{Args, Parser, Subcommand};
use pcagan::datakit::{self, DatasetHandle};
use pcagan::evaluation::{evaluate, EvalSettings};
use pcagan::experiment::{build_config, run_sweep, ExperimentConfig, Profile, SweepAxis, SweepSpec};
use pcagan::gaussian_world::PosteriorOperator;
use pcagan::netcore::Checkpoint;
use pcagan::trainer::train;
use pcagan::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pcagan",
    version,
    about = "pcaGAN and rcGAN on Gaussian linear inverse problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file for `data.dim`.
    GenData(Common),
    /// Train one model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Existing dataset; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train over a list of `M`, `K` or `d` values and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_axis)]
        sweep: SweepAxis,
        /// Comma-separated axis values; the profile's list when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Keep rows already in results.csv and run only the missing points.
        #[arg(long)]
        resume: bool,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override such as `train.lazy_period=10`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, env = "PCAGAN_OUT", default_value = "pcagan-out")]
    out: PathBuf,
    #[arg(long, default_value = "desk", value_parser = parse_profile)]
    profile: Profile,
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Common {
    fn config(&self) -> pcagan::Result<ExperimentConfig> {
        let text = match &self.config {
            Some(p) => Some(
                std::fs::read_to_string(p)
                    .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", p.display())))?,
            ),
            None => None,
        };
        build_config(self.profile, text.as_deref(), &self.overrides)
    }
}

enum Outcome {
    Done,
    Diverged,
}

fn dataset(cfg: &ExperimentConfig, path: Option<&Path>) -> pcagan::Result<DatasetHandle> {
    match path {
        Some(p) => {
            let prior = cfg.data.prior(cfg.data.dim)?;
            datakit::load_expecting(p, &prior)
        }
        None => cfg.data.dataset(cfg.data.dim, cfg.train.seed),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> pcagan::Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn run(cli: Cli) -> pcagan::Result<Outcome> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = common.config()?;
            let data = cfg.data.dataset(cfg.data.dim, cfg.train.seed)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("dataset.bin");
            datakit::save(&data, &path)?;
            println!("{}", path.display());
            Ok(Outcome::Done)
        }
        Command::Train { common, data } => {
            let cfg = common.config()?;
            let data = dataset(&cfg, data.as_deref())?;
            let mut outcome = train(&cfg.train, &data)?;
            let out = &common.out;
            std::fs::create_dir_all(out)?;
            outcome.best.save(&out.join("best.ckpt.json"))?;
            outcome.last.save(&out.join("last.ckpt.json"))?;
            outcome.record.checkpoint_path = Some(out.join("best.ckpt.json").display().to_string());
            outcome.record.write_csv(&out.join("record.csv"))?;
            outcome.record.write_json(&out.join("record.json"))?;
            write_json(&out.join("audit.json"), &outcome.audit)?;
            println!(
                "best epoch {} validation W2 {:.6e}",
                outcome.record.best_epoch, outcome.record.best_val_w2
            );
            Ok(if outcome.record.diverged() {
                Outcome::Diverged
            } else {
                Outcome::Done
            })
        }
        Command::Eval {
            common,
            checkpoint,
            data,
        } => {
            let cfg = common.config()?;
            let data = dataset(&cfg, data.as_deref())?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            if ckpt.dim != data.dim() {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint is for d = {} but the data has d = {}",
                    ckpt.dim,
                    data.dim()
                )));
            }
            let generator = ckpt.generator()?;
            let posterior = PosteriorOperator::new(&data.prior, &data.mm)?;
            let n = cfg.eval.test_pairs.unwrap_or(data.test.len()).min(data.test.len());
            let settings = EvalSettings {
                k: cfg.train.k.unwrap_or(data.dim()),
                n_samples: cfg.eval.samples_per_dim * data.dim(),
                rem_samples: cfg.eval.rem_samples,
                seed: cfg.train.seed,
            };
            let report = evaluate(&generator, &posterior, &data.test[..n], &settings)?;
            std::fs::create_dir_all(&common.out)?;
            std::fs::write(common.out.join("eval_report.json"), report.to_json())?;
            report.write_per_y_csv(&common.out.join("w2_per_y.csv"))?;
            println!(
                "mean W2 {:.6e}  W2/d {:.6e}",
                report.mean_w2,
                report.mean_w2 / data.dim() as f64
            );
            Ok(Outcome::Done)
        }
        Command::Sweep {
            common,
            sweep,
            values,
            seeds,
            jobs,
            resume,
        } => {
            let cfg = common.config()?;
            let values = if values.is_empty() {
                common.profile.default_values(sweep)
            } else {
                values
            };
            let spec = SweepSpec {
                axis: sweep,
                values,
                seeds,
                config: cfg,
            };
            let summary = run_sweep(&spec, Some(common.profile), &common.out, jobs, resume)?;
            println!(
                "{} rows ({} run now) -> {}",
                summary.rows.len(),
                summary.ran,
                summary.results_path.display()
            );
            Ok(if summary.diverged > 0 {
                Outcome::Diverged
            } else {
                Outcome::Done
            })
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Json(_) => 2,
        Error::Diverged { .. } => 3,
        _ => 1,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::NumericalFailure(_) => "numerical_failure",
        Error::Diverged { .. } => "diverged",
        Error::VersionMismatch { .. } => "version_mismatch",
        Error::HashMismatch { .. } => "hash_mismatch",
        Error::Checksum { .. } => "checksum",
        Error::Truncated { .. } => "truncated",
        Error::Malformed { .. } => "malformed",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": "diverged", "message": "at least one run diverged"})
            );
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": kind(&e), "message": e.to_string()}));
            ExitCode::from(exit_code(&e))
        }
    }
}
