use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adacl_core::hpo::run_hpo_benchmark;
use adacl_core::orchestrator::{run_experiment, run_fixed_baseline, ExperimentConfig, Mode};
use adacl_core::report::{
    compute_aggregates, read_results, render_plots, write_bundle, write_results, ResultsBundle,
    RunMeta,
};
use adacl_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Adaptive continual-learning experiments.
#[derive(Debug, Parser)]
#[command(name = "adacl", version, about)]
struct Cli {
    /// Log verbosity; overrides ADACL_LOG.
    #[arg(long, global = true, value_enum)]
    log_level: Option<LogLevel>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

impl LogLevel {
    fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an adaptive experiment.
    Run(RunArgs),
    /// Run the fixed-hyperparameter baseline.
    Baseline(RunArgs),
    /// Compare TPE with random search on a synthetic quadratic.
    HpoBench(BenchArgs),
    /// Regenerate aggregates and plots from an existing output directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if absent.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Run only this seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Trials evaluated concurrently; anything above 1 is not reproducible.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Number of paired seeds.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Trials per search.
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory written by `run` or `baseline`.
    #[arg(long)]
    out: PathBuf,
}

fn init_logging(flag: Option<LogLevel>) {
    let mut builder = env_logger::Builder::new();
    builder.filter_level(log::LevelFilter::Warn);
    match flag {
        Some(level) => {
            builder.filter_level(level.filter());
        }
        None => {
            if let Ok(v) = std::env::var("ADACL_LOG") {
                match LogLevel::from_str(&v, true) {
                    Ok(level) => {
                        builder.filter_level(level.filter());
                    }
                    Err(_) => {
                        eprintln!("ignoring ADACL_LOG={v}: expected error, warn, info or debug")
                    }
                }
            }
        }
    }
    builder.target(env_logger::Target::Stderr).init();
}

fn print_summary(bundle: &ResultsBundle) {
    let fmt = |mean: f64, std: Option<f64>| match std {
        Some(s) => format!("{mean:.2} ± {s:.2}"),
        None => format!("{mean:.2}"),
    };
    let a = &bundle.aggregate;
    println!("{} ({} seeds)", bundle.label, bundle.seeds.len());
    println!("  ACC {}", fmt(a.acc.mean, a.acc.std));
    match &a.bwt {
        Some(b) => println!("  BWT {}", fmt(b.mean, b.std)),
        None => println!("  BWT n/a"),
    }
    println!("  memory {}", fmt(a.memory_total.mean, a.memory_total.std));
}

fn load_config(args: &RunArgs, expected: Mode) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_path(&args.config).map_err(|e| match e {
        Error::Io { path, source } => {
            Error::Config(format!("cannot read config {}: {source}", path.display()))
        }
        other => other,
    })?;
    if cfg.mode != expected {
        let hint = match expected {
            Mode::Adaptive => "`run` needs mode \"adaptive\"; use `baseline` for fixed configs",
            Mode::Fixed => "`baseline` needs mode \"fixed\"; use `run` for adaptive configs",
        };
        return Err(Error::Config(hint.into()));
    }
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_out(out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })
}

fn run(args: &RunArgs, mode: Mode) -> Result<(), Error> {
    let cfg = load_config(args, mode)?;
    create_out(&args.out)?;
    let runs = match mode {
        Mode::Adaptive => run_experiment(&cfg, Some(&args.out))?,
        Mode::Fixed => run_fixed_baseline(&cfg, Some(&args.out))?,
    };
    let meta = RunMeta::for_runs(cfg.workers, &runs);
    let bundle = ResultsBundle::new(cfg, runs)?;
    write_results(&bundle, &meta, &args.out)?;
    render_plots(&[&bundle], &args.out)?;
    print_summary(&bundle);
    println!("results written to {}", args.out.display());
    Ok(())
}

fn hpo_bench(args: &BenchArgs) -> Result<(), Error> {
    if args.seeds == 0 || args.trials == 0 {
        return Err(Error::Config(
            "--seeds and --trials must be positive".into(),
        ));
    }
    let seeds: Vec<u64> = (args.seed..args.seed + args.seeds).collect();
    let outcomes = run_hpo_benchmark(&seeds, args.trials);
    println!(
        "{:>6}  {:>12}  {:>12}  winner",
        "seed", "tpe best", "random best"
    );
    for o in &outcomes {
        println!(
            "{:>6}  {:>12.6}  {:>12.6}  {}",
            o.seed,
            o.tpe_best,
            o.random_best,
            if o.tpe_wins() { "tpe" } else { "random" }
        );
    }
    let wins = outcomes.iter().filter(|o| o.tpe_wins()).count();
    println!("TPE <= random in {wins}/{} seeds", outcomes.len());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<(), Error> {
    let mut bundle = read_results(&args.out).map_err(|e| match e {
        Error::Io { path, source } => {
            Error::Config(format!("no results in {}: {source}", path.display()))
        }
        other => other,
    })?;
    let fresh = compute_aggregates(&bundle.seeds)?;
    if fresh != bundle.aggregate {
        log::warn!("stored aggregates differ from the per-seed data; rewriting them");
        bundle.aggregate = fresh;
        write_bundle(&bundle, &args.out)?;
    }
    render_plots(&[&bundle], &args.out)?;
    print_summary(&bundle);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_configuration() {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.log_level);
    let result = match &cli.command {
        Command::Run(args) => run(args, Mode::Adaptive),
        Command::Baseline(args) => run(args, Mode::Fixed),
        Command::HpoBench(args) => hpo_bench(args),
        Command::Report(args) => report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
