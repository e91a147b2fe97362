use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use sculpture_core::commands::{
    cmd_diagnose, cmd_meta_train_with, cmd_sweep, DiagnoseOptions, InputSource, ThetaSource,
};
use sculpture_core::config::RunConfig;
use sculpture_core::{par, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "sculpture", version, about = "Meta-learned conditioning of parameterized quantum circuits")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `paths.out_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, value_name = "INT")]
    threads: Option<usize>,
    /// Config override, e.g. `--set meta.steps=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "K=V")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the parameter generator to minimise log κ of the metric.
    MetaTrain {
        /// Number of meta-steps (same as `--set meta.steps=N`).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Spectral diagnostics of generated parameters on held-out inputs.
    Diagnose {
        /// `checkpoint`, `zero`, or comma-separated angles.
        #[arg(long, default_value = "checkpoint")]
        theta: String,
        /// `test` (held-out split) or `zero` (one all-zero input). Defaults
        /// to `zero` when θ is given explicitly.
        #[arg(long)]
        inputs: Option<String>,
        /// Write the metric of this input row to metric_dump.{csv,json}.
        #[arg(long, value_name = "INDEX")]
        dump_metric: Option<usize>,
        /// Generator checkpoint (overrides `paths.checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the downstream classifier over a grid of λ values.
    Sweep {
        /// Comma-separated λ values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Generator checkpoint (overrides `paths.checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_numerical() => EXIT_NUMERICAL,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Every `--set` value in command-line order. clap keeps only the
/// subcommand-level occurrences of a global flag when both levels use it.
fn ordered_overrides(args: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        if a == "--" {
            break;
        }
        if a == "--set" {
            out.extend(iter.next().cloned());
        } else if let Some(v) = a.strip_prefix("--set=") {
            out.push(v.to_string());
        }
    }
    out
}

fn build_config(global: &GlobalArgs, overrides: &[String], command: &Command) -> Result<RunConfig, Failure> {
    let base = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut config = base.with_overrides(overrides)?;
    if let Some(out) = &global.out {
        config.paths.out_dir = out.clone();
    }
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    match command {
        Command::MetaTrain { steps } => {
            if let Some(s) = steps {
                config.meta.steps = *s;
            }
        }
        Command::Diagnose { checkpoint, .. } => {
            if checkpoint.is_some() {
                config.paths.checkpoint = checkpoint.clone();
            }
        }
        Command::Sweep {
            grid,
            seeds,
            epochs,
            checkpoint,
        } => {
            if let Some(g) = grid {
                config.downstream.lambda_grid = g.clone();
            }
            if let Some(s) = seeds {
                config.downstream.seeds = s.clone();
            }
            if let Some(e) = epochs {
                config.downstream.epochs = *e;
            }
            if checkpoint.is_some() {
                config.paths.checkpoint = checkpoint.clone();
            }
        }
    }
    config.validate()?;
    Ok(config)
}

fn diagnose_options(theta: &str, inputs: Option<&str>, dump_metric: Option<usize>) -> Result<DiagnoseOptions, Failure> {
    let theta = match theta {
        "checkpoint" => ThetaSource::Checkpoint,
        "zero" => ThetaSource::Zero,
        list => ThetaSource::Explicit(
            list.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| Failure::Usage(format!("--theta: {e}")))?,
        ),
    };
    let inputs = match inputs {
        Some("test") => InputSource::TestSplit,
        Some("zero") => InputSource::Zero,
        Some(other) => return Err(Failure::Usage(format!("--inputs: unknown source `{other}`"))),
        None if theta == ThetaSource::Checkpoint => InputSource::TestSplit,
        None => InputSource::Zero,
    };
    Ok(DiagnoseOptions {
        theta,
        inputs,
        dump_metric,
    })
}

fn run(cli: Cli, overrides: &[String]) -> Result<(), Failure> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        if !par::init_threads(n) {
            log::warn!("--threads {n} ignored: thread pool already set up or parallelism disabled");
        }
    }
    let config = build_config(&cli.global, overrides, &cli.command)?;
    info!("config hash {}", config.hash());
    match &cli.command {
        Command::MetaTrain { .. } => {
            let report = cmd_meta_train_with(&config, |row| {
                info!(
                    "step {:>4}  log κ {:.4}  λ_min {:.4}  λ_max {:.4}  |∇φ| {:.4}",
                    row.step,
                    row.summary.log_kappa,
                    row.summary.lambda_min,
                    row.summary.lambda_max,
                    row.grad_norm
                );
            })?;
            println!("trace: {}", report.trace_path.display());
            println!("checkpoint: {}", report.checkpoint_path.display());
            match report.final_summary() {
                Some(s) => println!(
                    "final: log_kappa={} kappa={} lambda_min={} lambda_max={} entropy={} d_eff={} volume={} pac_surrogate={} degenerate={}",
                    s.log_kappa, s.kappa, s.lambda_min, s.lambda_max, s.entropy, s.effective_dim, s.volume, s.pac_surrogate, s.degenerate
                ),
                None => println!("final: no steps run"),
            }
        }
        Command::Diagnose {
            theta,
            inputs,
            dump_metric,
            ..
        } => {
            let options = diagnose_options(theta, inputs.as_deref(), *dump_metric)?;
            let report = cmd_diagnose(&config, &options)?;
            let n = report.rows.len();
            let mut lk: Vec<f64> = report.rows.iter().map(|r| r.summary.log_kappa).collect();
            lk.sort_by(f64::total_cmp);
            println!("inputs: {n}");
            println!("median log_kappa: {}", lk[n / 2]);
            println!("fraction log_kappa < 0.25: {}", report.fraction_below(0.25));
            println!("log-kappa table: {}", report.logkappa_path.display());
            println!("theta marginals: {}", report.marginals_path.display());
            if let Some((csv, json)) = &report.dump_paths {
                println!("metric dump: {} {}", csv.display(), json.display());
            }
        }
        Command::Sweep { .. } => {
            let report = cmd_sweep(&config)?;
            let t = &report.table;
            let acc = t.mean_final(|r| r.final_accuracy());
            let loss = t.mean_final(|r| r.final_loss());
            for (j, l) in t.grid.iter().enumerate() {
                println!("lambda={l} mean_final_loss={} mean_final_accuracy={}", loss[j], acc[j]);
            }
            println!("final table: {}", report.final_path.display());
            for p in &report.heatmap_paths {
                println!("heatmap: {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, &ordered_overrides(&args[1..])) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
