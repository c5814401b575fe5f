use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flens::cli::{self, CliError, ExperimentSpec, Overrides};
use flens::RegConvention;

#[derive(Parser)]
#[command(
    name = "flens",
    version,
    about = "Federated second-order optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Convention {
    Half,
    Full,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec file.
    #[arg(long)]
    spec: PathBuf,
    /// Output prefix; overrides `output.prefix`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Regularizer convention; overrides `objective.reg_convention`.
    #[arg(long, value_enum)]
    reg_convention: Option<Convention>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every algorithm in the spec and write per-round CSVs.
    Run(SpecArgs),
    /// FLeNS final gap across sketch sizes and seeds.
    SweepSketch(SpecArgs),
    /// Median wall time per round for each algorithm and sketch size.
    BenchTime(SpecArgs),
    /// Solve for the reference optimum and write it as JSON.
    Oracle(SpecArgs),
    /// Generate a synthetic logistic dataset in LIBSVM format.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse a LIBSVM file and report its shape and label counts.
    ParseCheck {
        path: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
    },
}

fn load(args: &SpecArgs) -> Result<ExperimentSpec, CliError> {
    let mut spec = cli::load_spec(&args.spec)?;
    let overrides = Overrides {
        output_prefix: args.out.clone(),
        seed: args.seed,
        reg_convention: args.reg_convention.map(|c| match c {
            Convention::Half => RegConvention::Half,
            Convention::Full => RegConvention::Full,
        }),
    };
    cli::apply_overrides(&mut spec, &overrides);
    Ok(spec)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => {
            let report = cli::cmd_run(&load(&args)?)?;
            for p in &report.csv {
                println!("{}", p.display());
            }
            println!("{}", report.sidecar.display());
        }
        Command::SweepSketch(args) => {
            println!("{}", cli::cmd_sweep_sketch(&load(&args)?)?.display())
        }
        Command::BenchTime(args) => println!("{}", cli::cmd_bench_time(&load(&args)?)?.display()),
        Command::Oracle(args) => {
            let (path, cached) = cli::cmd_oracle(&load(&args)?)?;
            println!(
                "{}{}",
                path.display(),
                if cached { " (cached)" } else { "" }
            );
        }
        Command::GenData {
            n,
            dim,
            seed,
            noise,
            out,
        } => {
            let d = cli::gen_data(n, dim, seed, noise, &out)?;
            println!(
                "wrote {} rows x {} features to {}",
                d.rows(),
                d.dim(),
                out.display()
            );
        }
        Command::ParseCheck { path, dim } => {
            let s = cli::parse_check(&path, dim)?;
            println!(
                "rows={} dim={} positives={} negatives={}",
                s.rows, s.dim, s.positives, s.negatives
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flens: {e}");
            ExitCode::FAILURE
        }
    }
}
