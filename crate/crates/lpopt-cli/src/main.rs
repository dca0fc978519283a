//! `lpopt`: run quantized-training experiments, mantissa sweeps, bound
//! evaluations, and the inequality certification suite.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error,
//! 4 precondition violation.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{build_cli_config, echo_config, parse_bound_params, BoundParams, CliConfig, OutputFormat};
use lpopt::problems::make_synthetic_dataset;
use lpopt::theory::{
    adam_bound, adam_rate_grid, check_lemma_suite, flat_json, muon_bound, muon_rate_grid,
};
use lpopt::trainloop::{
    records_to_csv, records_to_jsonl, run_training, sweep, ComponentSet, RunResult,
};
use lpopt::Error as LpoptError;

#[derive(Parser)]
#[command(name = "lpopt", version, about = "Low-precision adaptive-optimization lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Shorthand for --override run.seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Repeatable key=value override applied after the file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training configuration and write run.csv + summary.txt.
    Run(RunArgs),
    /// Run one training configuration per mantissa length.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated mantissa lengths, e.g. 4,8,16,24,32,52.
        #[arg(long, value_delimiter = ',')]
        mantissas: Vec<u32>,
        /// Components to sweep: any of the letters w, g, m, v.
        #[arg(long, default_value = "wgmv")]
        components: String,
    },
    /// Evaluate a convergence-bound right-hand side.
    Bounds {
        /// Bound-parameter file (theorem = adam | muon plus inputs).
        #[arg(long, conflicts_with = "grid")]
        params: Option<PathBuf>,
        /// Evaluate the theorem's rate schedule on a T grid instead.
        #[arg(long, value_parser = ["adam", "muon"])]
        grid: Option<String>,
    },
    /// Run the inequality certification suite.
    Lemmas {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate the configured problem's dataset as a binary fixture.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Output file path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

enum AppError {
    Config(String),
    Runtime(String),
    Precondition(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Runtime(_) => 3,
            AppError::Precondition(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Config(m) | AppError::Runtime(m) | AppError::Precondition(m) => m,
        }
    }
}

impl From<config::ConfigError> for AppError {
    fn from(e: config::ConfigError) -> AppError {
        AppError::Config(e.to_string())
    }
}

impl From<LpoptError> for AppError {
    fn from(e: LpoptError) -> AppError {
        match &e {
            LpoptError::Config(_) => AppError::Config(e.to_string()),
            LpoptError::PreconditionViolated { .. } => AppError::Precondition(e.to_string()),
            _ => AppError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> AppError {
        AppError::Runtime(e.to_string())
    }
}

fn load_config(args: &RunArgs) -> Result<CliConfig, AppError> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    Ok(build_cli_config(&text, &args.config.display().to_string(), &overrides)?)
}

fn records_file_name(format: OutputFormat, stem: &str) -> String {
    match format {
        OutputFormat::Csv => format!("{stem}.csv"),
        OutputFormat::Jsonl => format!("{stem}.jsonl"),
    }
}

fn render_records(format: OutputFormat, result: &RunResult) -> String {
    match format {
        OutputFormat::Csv => records_to_csv(&result.records),
        OutputFormat::Jsonl => records_to_jsonl(&result.records),
    }
}

fn summary_text(cfg: &CliConfig, result: &RunResult) -> String {
    let mut out = String::new();
    out.push_str(&format!("tail_grad_norm = {}\n", result.tail_grad_norm));
    out.push_str(&format!("final_loss = {}\n", result.aux.f_final));
    out.push_str(&format!("final_checksum = {:016x}\n", result.final_checksum));
    out.push_str("config:\n");
    for line in echo_config(cfg).lines() {
        out.push_str(&format!("  {line}\n"));
    }
    out
}

fn cmd_run(args: &RunArgs) -> Result<(), AppError> {
    let cfg = load_config(args)?;
    let result = run_training(&cfg.train)?;
    fs::create_dir_all(&args.out)?;
    let records_name = records_file_name(cfg.format, "run");
    fs::write(args.out.join(&records_name), render_records(cfg.format, &result))?;
    fs::write(args.out.join("summary.txt"), summary_text(&cfg, &result))?;
    println!(
        "wrote {} ({} rows); tail_grad_norm = {}",
        args.out.join(&records_name).display(),
        result.records.len(),
        result.tail_grad_norm
    );
    Ok(())
}

fn mean_qerr(result: &RunResult, pick: impl Fn(&lpopt::trainloop::TrainRecord) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = result.records.iter().filter_map(&pick).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

const PLOT_STUB: &str = r#"#!/usr/bin/env python3
"""Plot sweep_summary.csv (matplotlib required; data files stand alone)."""
import csv
import sys

path = sys.argv[1] if len(sys.argv) > 1 else "sweep_summary.csv"
rows = list(csv.DictReader(open(path)))
ms = [int(r["M"]) for r in rows]
tails = [float(r["tail_grad_norm"]) for r in rows]

import matplotlib.pyplot as plt
plt.semilogy(ms, tails, marker="o")
plt.xlabel("mantissa bits M")
plt.ylabel("tail gradient norm (last 100 iterations)")
plt.tight_layout()
plt.savefig("sweep_tails.png", dpi=150)
print("wrote sweep_tails.png")
"#;

fn cmd_sweep(args: &RunArgs, mantissas: &[u32], components: &str) -> Result<(), AppError> {
    if mantissas.is_empty() {
        return Err(AppError::Config("sweep needs a nonempty --mantissas list".into()));
    }
    let cfg = load_config(args)?;
    let set = ComponentSet::parse(components)?;
    let results = sweep(&cfg.train, mantissas, set)?;
    fs::create_dir_all(&args.out)?;
    let mut summary = String::from("M,tail_grad_norm,mean_qerr_W,mean_qerr_G,mean_qerr_M,mean_qerr_V\n");
    for (result, &m) in results.iter().zip(mantissas) {
        let name = records_file_name(cfg.format, &format!("run_M{m}"));
        fs::write(args.out.join(&name), render_records(cfg.format, result))?;
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        summary.push_str(&format!(
            "{m},{},{},{},{},{}\n",
            result.tail_grad_norm,
            fmt(mean_qerr(result, |r| r.qerr_w)),
            fmt(mean_qerr(result, |r| r.qerr_g)),
            fmt(mean_qerr(result, |r| r.qerr_m)),
            fmt(mean_qerr(result, |r| r.qerr_v)),
        ));
        println!("M={m}: tail_grad_norm = {}", result.tail_grad_norm);
    }
    fs::write(args.out.join("sweep_summary.csv"), summary)?;
    fs::write(args.out.join("plot_sweep.py"), PLOT_STUB)?;
    Ok(())
}

fn cmd_bounds(params: Option<&Path>, grid: Option<&str>) -> Result<(), AppError> {
    match (params, grid) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
            match parse_bound_params(&text, &path.display().to_string())? {
                BoundParams::Adam(input) => {
                    let report = adam_bound(&input)?;
                    println!("{}", flat_json(&report.to_pairs()));
                }
                BoundParams::Muon(input) => {
                    let report = muon_bound(&input)?;
                    println!("{}", flat_json(&report.to_pairs()));
                }
            }
            Ok(())
        }
        (None, Some(which)) => {
            let ts = [100usize, 1_000, 10_000, 100_000, 1_000_000];
            let rows = if which == "adam" {
                println!("T,total,total*sqrt(T)/ln(T)");
                adam_rate_grid(&ts)?
            } else {
                println!("T,total,total*T^(1/4)");
                muon_rate_grid(&ts)?
            };
            for row in rows {
                println!("{},{},{}", row.iters, row.total, row.scaled);
            }
            Ok(())
        }
        _ => Err(AppError::Config("bounds needs exactly one of --params or --grid".into())),
    }
}

fn cmd_lemmas(seed: u64, trials: usize) -> Result<(), AppError> {
    let report = check_lemma_suite(seed, trials)?;
    println!("lemma suite: seed {seed}, {trials} trials per lemma");
    for lemma in &report.lemmas {
        println!(
            "  {:<20} max LHS/RHS = {:.6} over {} trials",
            lemma.name, lemma.max_ratio, lemma.trials
        );
    }
    println!("no violations");
    Ok(())
}

fn cmd_dataset_gen(config: &Path, out: &Path, overrides: &[String]) -> Result<(), AppError> {
    let text = fs::read_to_string(config)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", config.display())))?;
    let cfg = build_cli_config(&text, &config.display().to_string(), overrides)?;
    let dataset = make_synthetic_dataset(&cfg.train.problem)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(out)?;
    lpopt::binfmt::write_dataset(&mut file, &dataset)?;
    println!(
        "wrote {} ({} samples, {} features, {} classes)",
        out.display(),
        dataset.labels.len(),
        dataset.features.cols(),
        dataset.num_classes
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep {
            run,
            mantissas,
            components,
        } => cmd_sweep(run, mantissas, components),
        Command::Bounds { params, grid } => cmd_bounds(params.as_deref(), grid.as_deref()),
        Command::Lemmas { seed, trials } => cmd_lemmas(*seed, *trials),
        Command::Dataset {
            command: DatasetCommand::Gen { config, out, overrides },
        } => cmd_dataset_gen(config, out, overrides),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
