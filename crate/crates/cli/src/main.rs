//! `mmcl` command-line interface.
//!
//! Exit codes: 0 success, 1 config or checkpoint error, 2 data error,
//! 3 numeric failure.

mod commands;
mod exit;
mod variant;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mmcl::data::mmf::Dtype;
use mmcl::data::SyntheticSpec;
use mmcl::eval::{BinaryRule, ProbeConfig};

use commands::{AblateArgs, InspectWhat};
use exit::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "mmcl",
    version,
    about = "Train, evaluate and inspect multimodal collaborative learning models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    /// positive iff > 0
    Positive,
    /// as `positive`, dropping samples labelled exactly 0
    NonZero,
    /// positive iff >= --threshold
    AtLeast,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write `model.ckpt` and `report.json` under --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Score the final model on this dataset instead of the training set.
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on a dataset and write a metrics JSON file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "positive")]
        rule: Rule,
        #[arg(long, default_value_t = 9.0)]
        threshold: f64,
        /// Also run the information-gain protocol (classification only).
        #[arg(long)]
        info_gain: bool,
    },
    /// Train and score ablation variants; writes ablation.json and ablation.csv.
    Ablate {
        /// Variant names: full, no-csd, no-cce, no-csm, fvs-major, fvs-mean,
        /// common-only, specific-only, `modality MASK`, or all.
        #[arg(long, num_args = 1.., required = true)]
        variant: Vec<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Held-out fraction when --valid is not given.
        #[arg(long, default_value_t = 0.2)]
        valid_fraction: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dump per-sample actions, decoupling weights or pooled features as CSV.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        what: InspectWhat,
        /// Restrict to these sample ids (repeatable).
        #[arg(long)]
        sample: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every primitive and of the full loss.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the per-check table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset (manifest, MMF files, spec and mask).
    Synth {
        /// Synthetic spec JSON; without it a three-segment regression set is built.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 9)]
        length: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "f64")]
        dtype: Precision,
        #[arg(long)]
        out: PathBuf,
    },
    /// Information-gain rates between modality-specific feature families.
    Infogain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        probe_epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            valid,
            out,
            seed,
        } => {
            let r = commands::cmd_train(&config, &data, valid.as_deref(), &out, seed)?;
            let last = r.history.last().map(|e| e.train_error).unwrap_or(f64::NAN);
            eprintln!(
                "trained {} epochs, final train error {last:.4}, wrote {}",
                r.history.len(),
                out.display()
            );
        }
        Command::Eval {
            model,
            data,
            out,
            rule,
            threshold,
            info_gain,
        } => {
            let rule = match rule {
                Rule::Positive => BinaryRule::Positive,
                Rule::NonZero => BinaryRule::NonZero,
                Rule::AtLeast => BinaryRule::AtLeast { threshold },
            };
            commands::cmd_eval(&model, &data, &out, rule, info_gain)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Ablate {
            variant,
            config,
            data,
            valid,
            valid_fraction,
            out,
            seed,
        } => {
            let variants = variant::parse_variants(&variant).map_err(CliError::config)?;
            let args = AblateArgs {
                config: &config,
                data: &data,
                valid: valid.as_deref(),
                valid_fraction,
                out: &out,
                seed,
                variants: &variants,
            };
            let r = commands::cmd_ablate(&args)?;
            for row in &r.rows {
                let score = row.metrics.mae.or(row.metrics.accuracy).unwrap_or(f64::NAN);
                eprintln!("{:<16} {score:.4}", row.variant);
            }
        }
        Command::Inspect {
            model,
            data,
            what,
            sample,
            out,
        } => {
            let files = commands::cmd_inspect(&model, &data, what, &sample, &out)?;
            eprintln!("wrote {} files under {}", files.len(), out.display());
        }
        Command::Gradcheck { points, seed, out } => {
            let rows = commands::cmd_gradcheck(points, seed)?;
            for r in &rows {
                println!(
                    "{:<28} {:.3e}  ({} checked, {} excluded)",
                    r.name, r.max_relative_error, r.checked, r.excluded
                );
            }
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&rows)
                    .map_err(|e| CliError::data(e.to_string()))?;
                std::fs::write(&path, text + "\n")
                    .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            }
            if !commands::gradcheck_passed(&rows) {
                return Err(commands::gradcheck_failure(&rows));
            }
        }
        Command::Synth {
            spec,
            n,
            length,
            dim,
            seed,
            dtype,
            out,
        } => {
            let mut spec = match spec {
                Some(p) => commands::read_spec(&p)?,
                None => SyntheticSpec::segmented(n, length, dim, 0),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let dtype = match dtype {
                Precision::F32 => Dtype::F32,
                Precision::F64 => Dtype::F64,
            };
            let manifest = commands::cmd_synth(spec, &out, dtype)?;
            eprintln!("wrote {}", manifest.display());
        }
        Command::Infogain {
            model,
            data,
            out,
            probe_epochs,
            seed,
        } => {
            let probe = ProbeConfig {
                epochs: probe_epochs,
                seed,
                ..ProbeConfig::default()
            };
            commands::cmd_infogain(&model, &data, &out, &probe)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
