use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "nbmf", version, about = "NBMF / NMF image factorization experiments")]
struct Cli {
    /// Worker threads for per-column solves (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Factorize a dataset into a model directory
    Factorize(FactorizeArgs),
    /// Classify held-out images with a trained model
    Classify(ClassifyArgs),
    /// Write a planted synthetic dataset
    GenSynthetic(GenSyntheticArgs),
    /// Minimize a QUBO given as i,j,coefficient CSV
    SolveQubo(SolveQuboArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Nbmf,
    Nmf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Exhaustive,
    Sa,
    Pt,
}

#[derive(Debug, Clone, Args)]
pub struct AnnealArgs {
    /// QUBO backend
    #[arg(long, value_enum, default_value_t = BackendArg::Sa)]
    pub backend: BackendArg,

    /// Sweeps per annealing run
    #[arg(long, default_value_t = 1000)]
    pub sweeps: usize,

    /// Independent annealing restarts
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,

    /// Replicas for parallel tempering
    #[arg(long, default_value_t = 8)]
    pub replicas: usize,

    #[arg(long, default_value_t = 0.1)]
    pub beta_initial: f64,

    #[arg(long, default_value_t = 50.0)]
    pub beta_final: f64,
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Nbmf)]
    pub method: MethodArg,

    /// Dataset CSV file or directory of P5 PGM images
    #[arg(long)]
    pub input: PathBuf,

    /// Model output directory
    #[arg(long)]
    pub out: PathBuf,

    /// Number of basis images
    #[arg(long, default_value_t = 60)]
    pub k: usize,

    /// Regularization weight for the W-update (NBMF only)
    #[arg(long, default_value_t = 1e-6, allow_negative_numbers = true)]
    pub alpha: f64,

    /// Convergence threshold on the Frobenius change of W
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,

    /// Outer iteration cap (defaults: 500 for NBMF, 5000 for NMF)
    #[arg(long)]
    pub max_iters: Option<usize>,

    /// RNG seed; chosen at random and recorded in the manifest when absent
    #[arg(long)]
    pub seed: Option<u64>,

    #[command(flatten)]
    pub anneal: AnnealArgs,

    /// Manifest path (default: <out>/manifest.json)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Model directory written by `factorize`
    #[arg(long)]
    pub model: PathBuf,

    /// Test dataset CSV file or PGM directory
    #[arg(long)]
    pub test: PathBuf,

    #[arg(long, default_value_t = 3)]
    pub neighbors: usize,

    #[arg(long)]
    pub seed: Option<u64>,

    #[command(flatten)]
    pub anneal: AnnealArgs,

    /// Prediction report CSV
    #[arg(long)]
    pub report: PathBuf,

    /// Manifest path (default: <report>.manifest.json)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Pixels per image
    #[arg(long, default_value_t = 64)]
    pub n: usize,

    /// Training images (plain mode)
    #[arg(long, default_value_t = 30)]
    pub m: usize,

    /// Planted basis size
    #[arg(long, default_value_t = 8)]
    pub k: usize,

    /// Bernoulli density of the planted codes
    #[arg(long, default_value_t = 0.5)]
    pub density: f64,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Dataset CSV output
    #[arg(long)]
    pub out: PathBuf,

    /// Held-out dataset CSV sharing the planted basis
    #[arg(long, requires = "test_m")]
    pub test_out: Option<PathBuf>,

    /// Held-out images (plain mode) or held-out images per class (class mode)
    #[arg(long)]
    pub test_m: Option<usize>,

    /// Switch to class mode: this many distinct planted codes
    #[arg(long)]
    pub classes: Option<usize>,

    /// Training images per class (class mode)
    #[arg(long, default_value_t = 5)]
    pub per_class: usize,

    /// Uniform pixel noise amplitude (class mode)
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,

    /// Manifest path (default: <out>.manifest.json)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveQuboArgs {
    /// QUBO CSV (i,j,coefficient; j == i rows are linear terms)
    #[arg(long)]
    pub input: PathBuf,

    #[arg(long)]
    pub seed: Option<u64>,

    #[command(flatten)]
    pub anneal: AnnealArgs,

    /// Also print the exhaustive optimum and the gap (k <= 20)
    #[arg(long)]
    pub oracle: bool,

    /// Manifest path (default: <input>.manifest.json)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: {e}");
            process::exit(2);
        }
    }
    let result = match cli.command {
        Command::Factorize(args) => commands::cmd_factorize(&args),
        Command::Classify(args) => commands::cmd_classify(&args),
        Command::GenSynthetic(args) => commands::cmd_gen_synthetic(&args),
        Command::SolveQubo(args) => commands::cmd_solve_qubo(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        process::exit(1);
    }
}
