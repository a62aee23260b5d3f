//! `pedagogue`: teaching runs, learner benchmarks, size sweeps and reports.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::CliError;

#[derive(Parser, Debug)]
#[command(name = "pedagogue", version, about = "Optimal teaching data for Gaussian phonetic categories")]
#[command(args_override_self = true)]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = "PEDAGOGUE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample teaching datasets with the Metropolis teacher.
    Teach(TeachArgs),
    /// Draw adult-directed data from the category model.
    Ads(AdsArgs),
    /// Benchmark learners on ADS, teaching and transfer conditions.
    Bench(BenchArgs),
    /// DPGMM benchmark across dataset sizes.
    Sweep(SweepArgs),
    /// Articulation, variance, triangle and KS reports plus an SVG chart.
    Report(ReportArgs),
    /// Run the small-instance oracle checks.
    Validate(ValidateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Teach(_) => "teach",
            Command::Ads(_) => "ads",
            Command::Bench(_) => "bench",
            Command::Sweep(_) => "sweep",
            Command::Report(_) => "report",
            Command::Validate(_) => "validate",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct ModelArgs {
    /// Category model CSV, or `builtin` for the embedded vowel table.
    #[arg(long, default_value = "builtin")]
    model: String,
    /// Override the CRP concentration.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum UpdateArg {
    All,
    Single,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TeachArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    chains: usize,
    #[arg(long, default_value_t = 500)]
    burn: usize,
    #[arg(long, default_value_t = 20)]
    thin: usize,
    /// Kept samples per chain.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Proposal noise scale (Hz).
    #[arg(long, default_value_t = 40.0)]
    proposal_sd: f64,
    /// Read `--proposal-sd` as a variance rather than a standard deviation.
    #[arg(long)]
    noise_is_variance: bool,
    /// Tune the proposal scale on a pilot run before burn-in.
    #[arg(long)]
    autotune: bool,
    #[arg(long, default_value_t = 0.23)]
    target_rate: f64,
    /// Pilot iterations for `--autotune`.
    #[arg(long, default_value_t = 1000)]
    pilot: usize,
    #[arg(long, value_enum, default_value_t = UpdateArg::All)]
    update: UpdateArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out/teach")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct AdsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    per_phoneme: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out/ads")]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TransferArg {
    Frozen,
    Joint,
}

#[derive(Args, Debug, Clone, Serialize)]
struct LearnerArgs {
    /// DPGMM Gibbs sweeps.
    #[arg(long, default_value_t = 500)]
    sweeps: usize,
    #[arg(long, default_value_t = 5)]
    splitmerge_every: usize,
    #[arg(long, default_value_t = 5)]
    splitmerge_scans: usize,
    /// How a fitted DPGMM labels held-out data.
    #[arg(long, value_enum, default_value_t = TransferArg::Frozen)]
    transfer: TransferArg,
    /// Sweeps over held-out points with `--transfer joint`.
    #[arg(long, default_value_t = 20)]
    joint_sweeps: usize,
    #[arg(long, default_value_t = 3)]
    em_restarts: usize,
    /// Record per-job wall time (makes the CSV run-dependent).
    #[arg(long)]
    wall_times: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
struct BenchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Teaching CSV from `teach`; required for teaching and transfer.
    #[arg(long)]
    teaching: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "dpgmm,gmm,logit,svm")]
    learners: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "ads,teaching,transfer")]
    conditions: Vec<String>,
    /// `f1f2f3`, `f1f2`, or both comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "f1f2f3")]
    formants: Vec<String>,
    #[arg(long, default_value_t = 500)]
    sets: usize,
    #[arg(long, default_value_t = 500)]
    per_phoneme: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    learner: LearnerArgs,
    #[arg(long, default_value = "out/bench")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long)]
    teaching: Option<PathBuf>,
    /// Examples per phoneme.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64,128,256,512,1024,2048")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "ads,teaching,transfer")]
    conditions: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "f1f2f3")]
    formants: Vec<String>,
    #[arg(long, default_value_t = 128)]
    sets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    learner: LearnerArgs,
    #[arg(long, default_value = "out/sweep")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ReportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Teaching CSV from `teach`.
    #[arg(long)]
    teaching: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "f1f2f3,f1f2")]
    formants: Vec<String>,
    /// Benchmark CSV; adds KS tests between ARI distributions.
    #[arg(long)]
    bench: Option<PathBuf>,
    /// Seed of the ADS draw the teaching marginals are tested against.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_svg: bool,
    #[arg(long, default_value = "out/report")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// DPGMM sweeps for the posterior check.
    #[arg(long, default_value_t = 100_000)]
    sweeps: usize,
}

fn run() -> Result<(), CliError> {
    let argv = config::expand_args(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return Err(CliError::silent(code));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let name = cli.command.name();
    match &cli.command {
        Command::Teach(a) => commands::teach(name, a),
        Command::Ads(a) => commands::ads(name, a),
        Command::Bench(a) => commands::bench(name, a),
        Command::Sweep(a) => commands::sweep(name, a),
        Command::Report(a) => commands::report(name, a),
        Command::Validate(a) => commands::validate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code)
        }
    }
}
