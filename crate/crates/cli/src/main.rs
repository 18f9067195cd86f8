mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vppe::{KernelFamily, TrendBasis};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "vppe", version, about = "Vecchia-approximated parallel partial Gaussian-process emulators")]
struct Cli {
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a Gaussian-process "simulator" on a Latin hypercube and split it in half.
    Gen(GenArgs),
    /// Fit an emulator to a design and output CSV.
    Fit(FitArgs),
    /// Predict at new inputs with a fitted model.
    Predict(PredictArgs),
    /// Turn a k-column output into a scalar output with the output coordinate as an extra input.
    Reshape(ReshapeArgs),
    /// Sweep training sizes and conditioning sizes on synthetic data.
    Bench(BenchArgs),
    /// Compare analytic likelihood gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Total number of runs; half become training runs.
    #[arg(long)]
    pub n: usize,
    /// Input dimension; must match the number of ranges.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.8,1.2,0.3")]
    pub ranges: Vec<f64>,
    #[arg(long, default_value = "matern32")]
    pub family: KernelFamily,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Vecchia,
    Exact,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Restrict both files to these rows (CSV with an `index` column).
    #[arg(long)]
    pub rows: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "vecchia")]
    pub method: MethodArg,
    /// Conditioning set size for the Vecchia method.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub m: u64,
    #[arg(long, default_value = "matern52")]
    pub family: KernelFamily,
    #[arg(long, default_value = "constant")]
    pub trend: TrendBasis,
    /// Nugget ratio; the starting value with `--estimate-nugget`.
    #[arg(long, default_value_t = 0.0)]
    pub nugget: f64,
    #[arg(long)]
    pub estimate_nugget: bool,
    /// Use a flat prior instead of the jointly robust prior.
    #[arg(long)]
    pub flat_prior: bool,
    #[arg(long, default_value_t = 2)]
    pub rounds: usize,
    /// Share of output columns used for range estimation.
    #[arg(long, default_value_t = 1.0)]
    pub output_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the fit even when no optimizer seed converged.
    #[arg(long)]
    pub allow_unconverged: bool,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Also write the final conditioning plan as JSON.
    #[arg(long)]
    pub dump_plan: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long)]
    pub design: PathBuf,
    /// True outputs at the prediction inputs; enables RMSE reporting.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Predict from this many nearest training points instead of all of them.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub m_pred: Option<u64>,
    /// With `--m-pred`, also run full prediction and report both.
    #[arg(long)]
    pub compare_full: bool,
    #[arg(long, default_value = "predictions.csv")]
    pub out: PathBuf,
    /// Write the predictive variances `σ̂² c**` here.
    #[arg(long)]
    pub variance: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReshapeModeArg {
    Full,
    Sampled,
}

#[derive(Args, Debug)]
pub struct ReshapeArgs {
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// One coordinate per output column (CSV with one column). Defaults to an even grid on [0, 1].
    #[arg(long)]
    pub coords: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub mode: ReshapeModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_design: PathBuf,
    #[arg(long)]
    pub out_output: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Training sizes; each uses as many test runs.
    #[arg(long, value_delimiter = ',')]
    pub ns: Vec<usize>,
    /// Conditioning sizes for the Vecchia method.
    #[arg(long, value_delimiter = ',', default_value = "30")]
    pub ms: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "vecchia,exact")]
    pub methods: Vec<MethodArg>,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.8,1.2,0.3")]
    pub ranges: Vec<f64>,
    #[arg(long, default_value = "matern32")]
    pub family: KernelFamily,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 100)]
    pub n_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exit with a numerical error when the largest relative error exceeds this.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vppe: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = commands::configure_threads(cli.threads)?;
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Fit(a) => commands::fit(&a, exec),
        Command::Predict(a) => commands::predict(&a, exec),
        Command::Reshape(a) => commands::reshape(&a),
        Command::Bench(a) => commands::bench(&a, exec),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    }
}
