use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prfl_core::harness::sweep::{compare_sweep, run_sweep};
use prfl_core::harness::{execute, output_dir, RunConfig};
use prfl_core::orchestrator::Variant;
use prfl_core::Error;

/// Invalid or unreadable configuration.
const EXIT_CONFIG: u8 = 2;
/// The simulation broke one of its own invariants.
const EXIT_INVARIANT: u8 = 3;
/// Anything else, e.g. the output directory is not writable.
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(
    name = "prfl",
    version,
    about = "Asynchronous federated learning simulator with pruning and recovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write metrics.csv and summary.json.
    Run(RunArgs),
    /// Check a configuration and print it with every default filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run several configurations and print a time-to-accuracy table.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed in the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the file's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the algorithm variant in the file.
    #[arg(long)]
    variant: Option<Variant>,
    /// Validate and print the resolved configuration without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// One or more configuration files.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Run every listed variant for each config (comma separated).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Overrides the master seed of every run.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
    /// Accuracy thresholds in [0, 1]; repeatable.
    #[arg(long = "threshold", default_values_t = [0.6, 0.7])]
    thresholds: Vec<f64>,
    /// Simulated time at which to read off accuracy.
    #[arg(long)]
    cutoff: f64,
    /// Validate and list the runs without executing them.
    #[arg(long)]
    dry_run: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::MissingOutputs(_) => EXIT_OTHER,
        _ => EXIT_INVARIANT,
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig, u8> {
    let mut cfg = RunConfig::load(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        EXIT_CONFIG
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_config(cfg: &RunConfig) -> Result<(), u8> {
    match cfg.to_toml_string() {
        Ok(s) => {
            print!("{s}");
            Ok(())
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(EXIT_CONFIG)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), u8> {
    let mut cfg = load(&args.config, args.seed)?;
    if let Some(out) = args.out {
        cfg.output = Some(out);
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if args.dry_run {
        return print_config(&cfg);
    }
    let dir = output_dir(&cfg);
    let (_, summary) = execute(&cfg, &dir).map_err(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })?;
    println!(
        "{} seed {}: {} rounds, t = {:.1} s, final accuracy {:.4}, written to {}",
        summary.variant,
        summary.seed,
        summary.rounds,
        summary.final_time,
        summary.final_acc,
        dir.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), u8> {
    let variants: Vec<Variant> = args
        .variants
        .iter()
        .map(|v| v.parse())
        .collect::<Result<_, _>>()
        .map_err(|e: Error| {
            eprintln!("error: {e}");
            EXIT_CONFIG
        })?;
    let mut configs = Vec::new();
    for path in &args.config {
        let cfg = load(path, args.seed)?;
        if variants.is_empty() {
            configs.push(cfg);
        } else {
            configs.extend(variants.iter().map(|v| RunConfig {
                variant: *v,
                ..cfg.clone()
            }));
        }
    }
    if args.dry_run {
        for (label, c) in prfl_core::harness::sweep::labels(&configs).iter().zip(&configs) {
            if let Err(e) = c.validate() {
                eprintln!("error: {label}: {e}");
                return Err(EXIT_CONFIG);
            }
            println!("{label}\t{}", args.out.join(label).display());
        }
        return Ok(());
    }
    let fail = |e: Error| {
        eprintln!("error: {e}");
        exit_code(&e)
    };
    let runs = run_sweep(&configs, &args.out).map_err(fail)?;
    let table = compare_sweep(&runs, &args.thresholds, args.cutoff).map_err(fail)?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { config } => load(&config, None).and_then(|c| print_config(&c)),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
