mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use rebel_core::config::{RunConfig, TeacherMode};
use rebel_core::feedback::FeedbackHub;
use rebel_core::trainer::{evaluate_checkpoint, run_experiment};
use rebel_core::{bilevel, Error};

#[derive(Debug, Parser)]
#[command(name = "rebel", version, about = "Preference-based RL with agent-preference regularisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lambda=0` or `--set lambda=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; defaults to a fresh directory under $REBEL_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full training loop with a scripted teacher.
    Train(RunArgs),
    /// Evaluate a saved policy checkpoint on the true reward.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact checks of the bilevel reformulation on a gridworld.
    Verify {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run directories into per-metric CSVs and an SVG curve.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "true_return_mean")]
        metric: String,
        /// Reference line; computed from the run's environment when omitted.
        #[arg(long)]
        oracle: Option<f64>,
    },
    /// Train with a human teacher labelling through the local web API.
    Serve(RunArgs),
}

enum Failure {
    Validation(String),
    Runtime(String),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        config.apply_override(o)?;
    }
    Ok(config)
}

fn out_root() -> PathBuf {
    std::env::var_os("REBEL_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn fresh_dir(prefix: &str) -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    out_root().join(format!("{prefix}-{secs}-{}", std::process::id()))
}

fn prepare_run(args: &RunArgs, prefix: &str) -> Result<(RunConfig, PathBuf), Failure> {
    let mut config = load_config(&args.config)?;
    if let Some(seeds) = &args.seeds {
        config.train.seeds = seeds.clone();
    }
    config.validate()?;
    let out = args.out.clone().unwrap_or_else(|| fresh_dir(prefix));
    Ok((config, out))
}

fn report_run(rows: &[Vec<rebel_core::trainer::LogRow>], out: &Path) {
    for seed_rows in rows {
        if let Some(last) = seed_rows.last() {
            println!(
                "seed {}: iter {} true_return {:.4} feedback {}",
                last.seed, last.iter, last.true_return_mean, last.feedback_total
            );
        }
    }
    println!("results in {}", out.display());
}

fn train(args: &RunArgs) -> Result<(), Failure> {
    let (config, out) = prepare_run(args, "train")?;
    if config.teacher.mode == TeacherMode::Human {
        return Err(Failure::Validation("teacher.mode=human needs `rebel serve`".into()));
    }
    let outcome = run_experiment(&config, &out, None)?;
    report_run(&outcome.rows, &out);
    Ok(())
}

fn serve(args: &RunArgs) -> Result<(), Failure> {
    let (mut config, out) = prepare_run(args, "serve")?;
    config.teacher.mode = TeacherMode::Human;
    let hub = Arc::new(FeedbackHub::new());
    let server = rebel_service::spawn(&config.service.host, config.service.port, Arc::clone(&hub))?;
    eprintln!("feedback API listening on http://{}", server.addr);
    let result = run_experiment(&config, &out, Some(hub));
    server.stop()?;
    report_run(&result?.rows, &out);
    Ok(())
}

fn eval(config: &ConfigArgs, checkpoint: &Path, seed: u64) -> Result<(), Failure> {
    let config = load_config(config)?;
    config.validate()?;
    let stats = evaluate_checkpoint(&config, checkpoint, seed)?;
    println!("true_return_mean {}", stats.true_return_mean);
    println!("true_return_std {}", stats.true_return_std);
    if let Some(best) = config.env.build()?.optimal_return() {
        println!("optimal_return {best}");
    }
    Ok(())
}

fn verify(config: &ConfigArgs, out: Option<&Path>) -> Result<(), Failure> {
    let config = load_config(config)?;
    config.validate()?;
    let report = bilevel::run_verification(&config.env.grid_spec(), &config.verify)?;
    let text = report.to_text();
    print!("{text}");
    let out = out.map_or_else(|| out_root().join("verify"), Path::to_path_buf);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("report.txt"), &text)?;
    std::fs::write(out.join("sweep.csv"), report.sweep_csv())?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(args) => train(&args),
        Command::Serve(args) => serve(&args),
        Command::Eval { config, checkpoint, seed } => eval(&config, &checkpoint, seed),
        Command::Verify { config, out } => verify(&config, out.as_deref()),
        Command::Plot {
            runs,
            out,
            metric,
            oracle,
        } => {
            let out = out.unwrap_or_else(|| out_root().join("plots"));
            let written = plot::plot(&runs, &out, &metric, oracle)?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed");
            ExitCode::from(3)
        }
    }
}
