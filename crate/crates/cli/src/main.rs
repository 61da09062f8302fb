//! `biasvec` — build, apply, and evaluate checkpoint-delta bias vectors.
//!
//! Exit codes: 0 success, 2 usage/input problems, 3 checkpoint mismatch,
//! 4 evaluation failure.

use std::path::PathBuf;
use std::process::ExitCode;

use biasvec::commands;
use biasvec::datasets::BiasType;
use biasvec_core::seat::{Ddof, DenomMode};
use biasvec_core::train::Pooling;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "biasvec", version, about = "Checkpoint-delta bias vectors: construction, application, and SEAT evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolingArg {
    Mean,
    Cls,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Pooling {
        match p {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::Cls => Pooling::Cls,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DenomModeArg {
    /// Deviation of s(w,A,B) over the targets X∪Y (conventional WEAT).
    Standard,
    /// Deviation of s(t,X,Y) over the attributes A∪B.
    SwappedRoles,
}

impl From<DenomModeArg> for DenomMode {
    fn from(m: DenomModeArg) -> DenomMode {
        match m {
            DenomModeArg::Standard => DenomMode::Standard,
            DenomModeArg::SwappedRoles => DenomMode::SwappedRoles,
        }
    }
}

#[derive(Debug, Args)]
struct EvalOptions {
    /// Sentence-embedding pooling.
    #[arg(long, value_enum, default_value = "mean")]
    pooling: PoolingArg,
    /// Effect-size denominator convention.
    #[arg(long, value_enum, default_value = "standard")]
    denom_mode: DenomModeArg,
    /// Degrees-of-freedom correction for the denominator deviation.
    #[arg(long, default_value = "1", value_parser = parse_ddof)]
    ddof: u8,
}

impl EvalOptions {
    fn effect_options(&self) -> biasvec_core::seat::EffectOptions {
        let ddof = if self.ddof == 0 { Ddof::Zero } else { Ddof::One };
        commands::effect_options(self.denom_mode.into(), ddof)
    }
}

fn parse_ddof(s: &str) -> Result<u8, String> {
    match s {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(format!("ddof must be 0 or 1, got {s:?}")),
    }
}

fn parse_bias_types(s: &str) -> Result<Vec<BiasType>, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(BiasType::ALL.to_vec());
    }
    s.split(',')
        .map(|part| {
            BiasType::parse(part.trim())
                .ok_or_else(|| format!("unknown bias type {part:?} (race, profession, gender, religion, or all)"))
        })
        .collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|part| {
            part.trim().parse::<f64>().map_err(|e| format!("bad number {part:?}: {e}"))
        })
        .collect()
}

fn parse_u64_list(s: &str) -> Result<Vec<u64>, String> {
    s.split(',')
        .map(|part| part.trim().parse::<u64>().map_err(|e| format!("bad seed {part:?}: {e}")))
        .collect()
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a fresh base model on a plain-text corpus (one sentence per line).
    TrainBase {
        #[arg(long)]
        corpus: PathBuf,
        /// JSON run configuration (encoder dims + optimizer settings).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "0")]
        seed: u64,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Continually train toward bias on realized stereotype sentences.
    TrainBias {
        /// Stereotype record file (intrasentence export or flat array).
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated categories, or "all".
        #[arg(long, default_value = "all")]
        bias_types: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "0")]
        seed: u64,
        /// Base checkpoint to continue from; omitted = fresh init.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a bias vector: biased minus base, minus excluded layers.
    MakeVector {
        #[arg(long)]
        org: PathBuf,
        #[arg(long)]
        biased: PathBuf,
        /// Case-insensitive glob over tensor names; repeatable. Defaults
        /// to the layer-norm exclusion set.
        #[arg(long = "exclude-pattern")]
        exclude_patterns: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a bias vector: out = org − lambda · vector.
    Apply {
        #[arg(long)]
        org: PathBuf,
        #[arg(long)]
        vector: PathBuf,
        /// Scaling factor; scientific notation and negative values accepted.
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on SEAT tests, writing per-test d, p, and significance.
    EvalSeat {
        #[arg(long)]
        model: PathBuf,
        /// SEAT test definition file.
        #[arg(long)]
        tests: PathBuf,
        #[command(flatten)]
        eval: EvalOptions,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Sweep λ over seed-specific vectors; writes rows.csv, summary.csv,
    /// and optionally an SVG chart.
    Sweep {
        #[arg(long)]
        org: PathBuf,
        /// Vector file; repeat for multiple seeds.
        #[arg(long = "vector", required = true)]
        vectors: Vec<PathBuf>,
        /// Comma-separated λ values (scientific notation accepted).
        #[arg(long, allow_hyphen_values = true)]
        lambdas: String,
        /// Comma-separated seeds, one per --vector (default: recorded
        /// vector seeds).
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        tests: PathBuf,
        /// Plain-text corpus for the representation-collapse loss probe.
        #[arg(long)]
        neutral_corpus: PathBuf,
        #[command(flatten)]
        eval: EvalOptions,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also render summary.svg of mean |d| vs log10(λ).
        #[arg(long)]
        plot: bool,
    },
}

fn run(cli: Cli) -> Result<(), commands::CliError> {
    match cli.command {
        Command::TrainBase { corpus, config, seed, out } => {
            commands::cmd_train_base(&corpus, config.as_deref(), seed, &out)
        }
        Command::TrainBias { corpus, bias_types, config, seed, base, out } => {
            let types = parse_bias_types(&bias_types).map_err(commands::CliError::Usage)?;
            commands::cmd_train_bias(&corpus, &types, config.as_deref(), seed, base.as_deref(), &out)
        }
        Command::MakeVector { org, biased, exclude_patterns, out } => {
            commands::cmd_make_vector(&org, &biased, &exclude_patterns, &out)
        }
        Command::Apply { org, vector, lambda, out } => {
            commands::cmd_apply(&org, &vector, lambda, &out)
        }
        Command::EvalSeat { model, tests, eval, out_csv } => {
            commands::cmd_eval_seat(&model, &tests, eval.pooling.into(), &eval.effect_options(), &out_csv)
        }
        Command::Sweep {
            org,
            vectors,
            lambdas,
            seeds,
            tests,
            neutral_corpus,
            eval,
            out_dir,
            plot,
        } => {
            let lambdas = parse_f64_list(&lambdas).map_err(commands::CliError::Usage)?;
            let seeds = seeds
                .as_deref()
                .map(parse_u64_list)
                .transpose()
                .map_err(commands::CliError::Usage)?;
            commands::cmd_sweep(
                &org,
                &vectors,
                &lambdas,
                seeds.as_deref(),
                &tests,
                &neutral_corpus,
                eval.pooling.into(),
                &eval.effect_options(),
                &out_dir,
                plot,
            )
        }
    }
}

fn main() -> ExitCode {
    // clap exits with code 2 on usage errors, matching the contract
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
