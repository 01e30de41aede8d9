mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use biozbp::dataset::{DatasetError, RawFormat, Target};
use biozbp::demod::DemodError;
use biozbp::eval::EvalError;
use biozbp::featsel::{FeatselError, SelectionMethod};
use biozbp::pipeline::PipelineError;
use biozbp::preprocess::PreprocessError;
use biozbp::regress::{ModelKind, RegressError};
use biozbp::synth::SynthError;

#[derive(Parser, Debug)]
#[command(name = "biozbp", version, about = "Cuff-less blood pressure estimation from brain bio-impedance and ECG")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// TOML configuration or a manifest written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Raw recording format.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    #[arg(long, global = true, value_enum)]
    pub target: Option<TargetArg>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Bin,
}

impl FormatArg {
    pub fn raw(self) -> RawFormat {
        match self {
            FormatArg::Csv => RawFormat::Csv,
            FormatArg::Bin => RawFormat::Bin,
        }
    }

    pub fn ext(self) -> &'static str {
        match self {
            FormatArg::Csv => "csv",
            FormatArg::Bin => "bin",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    Sbp,
    Dbp,
    Both,
}

impl TargetArg {
    pub fn targets(self) -> Vec<Target> {
        match self {
            TargetArg::Sbp => vec![Target::Sbp],
            TargetArg::Dbp => vec![Target::Dbp],
            TargetArg::Both => vec![Target::Sbp, Target::Dbp],
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cohort of raw recordings with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Demodulate one raw recording into impedance and ECG series.
    Demod {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Band-pass and detrend demodulated series.
    Preprocess {
        /// Directory written by `demod`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Raw recordings plus labels to a feature table.
    Extract {
        /// Directory of `<subject>_<trial>.<format>` recordings.
        #[arg(long)]
        raw_dir: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank features and write the top-k projection.
    Select {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        method: Option<SelectionMethod>,
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated k values for an error-versus-k sweep.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a regressor on a feature table.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate a regressor on a feature table.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: Option<ModelKind>,
        /// Rank and keep the top k features before cross-validation.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        method: Option<SelectionMethod>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render saved evaluation reports as text tables.
    Report {
        /// Directory holding `report_*.json` files.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Raw data (or a synthetic cohort) to evaluation reports.
    Pipeline {
        #[arg(long)]
        raw_dir: Option<PathBuf>,
        #[arg(long, requires = "raw_dir")]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Stage name and exit code for the innermost library error in the chain.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return (e.stage(), code_for(e.stage()));
        }
        let stage = if cause.is::<DatasetError>() {
            "dataset-io"
        } else if cause.is::<SynthError>() {
            "synthgen"
        } else if cause.is::<DemodError>() {
            "demod"
        } else if cause.is::<PreprocessError>() {
            "preprocess"
        } else if cause.is::<FeatselError>() {
            "featsel"
        } else if cause.is::<RegressError>() {
            "regress"
        } else if cause.is::<EvalError>() {
            "eval"
        } else if cause.is::<manifest::ConfigError>() {
            "config"
        } else {
            continue;
        };
        return (stage, code_for(stage));
    }
    ("io", 12)
}

fn code_for(stage: &str) -> u8 {
    match stage {
        "config" => 3,
        "dataset-io" => 4,
        "synthgen" => 5,
        "demod" => 6,
        "preprocess" => 7,
        "features" => 8,
        "featsel" => 9,
        "regress" => 10,
        "eval" => 11,
        _ => 12,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[stage=config]: {e}");
            return ExitCode::from(3);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (stage, code) = classify(&err);
            eprintln!("error[stage={stage}]: {err:#}");
            ExitCode::from(code)
        }
    }
}
