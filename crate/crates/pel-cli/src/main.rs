//! Command-line front end: train single runs, sweep the fusion weight,
//! benchmark label-noise robustness, verify gradients, and generate data.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
//! 4 gradient-check failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pel::config::{parse_config, ConfigError, RunConfig};
use pel::data::{generate, save_csv, DataError};
use pel::gradcheck::{run_gradcheck, DEFAULT_SEEDS};
use pel::trainer::{evaluate, run_beta_sweep, train, TrainError};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_GRADCHECK: u8 = 4;

#[derive(Parser)]
#[command(
    name = "pel",
    about = "Prototype-enhanced soft-target training on synthetic ultra-fine-grained data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value config file; all keys default to the reference
    /// hyperparameters when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override a config key, e.g. --set beta=8. Applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Optional output directory for the per-group CSV report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Test hook: add this value to one analytic gradient entry so the
    /// detector must fail.
    #[arg(long, hide = true)]
    inject_grad_error: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics plus checkpoints.
    Train(RunArgs),
    /// Train once per beta in `sweep_betas` and tabulate test accuracy.
    SweepBeta(RunArgs),
    /// Run the noise-rate x strategy benchmark grid.
    BenchNoise(RunArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic dataset pair as CSV.
    GenData(RunArgs),
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Diverged(String),
    GradcheckFailed,
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::GradcheckFailed => EXIT_GRADCHECK,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Diverged(m) | CliError::Other(m) => m.clone(),
            CliError::GradcheckFailed => "gradient check failed".to_string(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::InvalidConfig { .. } => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidSpec { .. } | DataError::InvalidRate(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let cfg = parse_config(args.config.as_deref(), &args.set)?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_train(args: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    ensure_out_dir(&args.out)?;
    let (train_set, test_set) = generate(&cfg.data)?;
    let out = train(&cfg.train, &train_set, &test_set)?;
    out.metrics.write_csv(&args.out.join("metrics.csv"))?;
    out.model
        .save_binary(&args.out.join("model.bin"))
        .map_err(|e| CliError::Other(e.to_string()))?;
    out.bank
        .save_text(&args.out.join("bank.txt"))
        .map_err(|e| CliError::Other(e.to_string()))?;
    let test_acc = evaluate(&out.model, &test_set)?;
    println!(
        "strategy={} epochs={} train_n={} test_n={} final_test_accuracy={:.4}",
        cfg.train.strategy,
        cfg.train.epochs,
        train_set.len(),
        test_set.len(),
        test_acc
    );
    println!("wrote {}", args.out.join("metrics.csv").display());
    Ok(())
}

fn cmd_sweep_beta(args: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    ensure_out_dir(&args.out)?;
    let (train_set, test_set) = generate(&cfg.data)?;
    let rows = run_beta_sweep(&cfg.train, &cfg.bench.sweep_betas, &train_set, &test_set)?;
    let mut csv = String::from("beta,test_accuracy,status\n");
    println!("{:>8}  {:>13}  status", "beta", "test_accuracy");
    for row in &rows {
        match &row.outcome {
            Ok(acc) => {
                csv.push_str(&format!("{},{acc:.16e},ok\n", row.beta));
                println!("{:>8}  {:>13.4}  ok", row.beta, acc);
            }
            Err(e) => {
                csv.push_str(&format!("{},,error: {}\n", row.beta, e.to_string().replace(',', ";")));
                println!("{:>8}  {:>13}  error: {e}", row.beta, "-");
            }
        }
    }
    std::fs::write(args.out.join("beta_sweep.csv"), csv)?;
    println!("wrote {}", args.out.join("beta_sweep.csv").display());
    Ok(())
}

fn cmd_bench_noise(args: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    ensure_out_dir(&args.out)?;
    let grid = pel::bench::run_noise_benchmark(&cfg.train, &cfg.data, &cfg.bench);
    grid.write_csv(&args.out.join("noise_grid.csv"))?;
    println!(
        "{:>10}  {:>16}  {:>8}  {:>8}  status",
        "noise_rate", "strategy", "mean", "stddev"
    );
    for cell in &grid.cells {
        match &cell.error {
            None => println!(
                "{:>10}  {:>16}  {:>8.4}  {:>8.4}  ok",
                cell.rate,
                cell.strategy,
                cell.mean(),
                cell.stddev()
            ),
            Some(e) => println!(
                "{:>10}  {:>16}  {:>8}  {:>8}  error: {e}",
                cell.rate, cell.strategy, "-", "-"
            ),
        }
    }
    println!("wrote {}", args.out.join("noise_grid.csv").display());
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let report = run_gradcheck(&DEFAULT_SEEDS, args.inject_grad_error)
        .map_err(|e| CliError::Other(e.to_string()))?;
    print!("{}", report.render());
    if let Some(dir) = &args.out {
        ensure_out_dir(dir)?;
        std::fs::write(dir.join("gradcheck.csv"), report.to_csv_string())?;
        println!("wrote {}", dir.join("gradcheck.csv").display());
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::GradcheckFailed)
    }
}

fn cmd_gen_data(args: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    ensure_out_dir(&args.out)?;
    let (train_set, test_set) = generate(&cfg.data)?;
    save_csv(&train_set, &args.out.join("train.csv"))?;
    save_csv(&test_set, &args.out.join("test.csv"))?;
    println!(
        "wrote {} ({} rows) and {} ({} rows)",
        args.out.join("train.csv").display(),
        train_set.len(),
        args.out.join("test.csv").display(),
        test_set.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::SweepBeta(args) => cmd_sweep_beta(args),
        Command::BenchNoise(args) => cmd_bench_noise(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::GenData(args) => cmd_gen_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
