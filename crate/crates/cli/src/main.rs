use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vbtta_core::experiment::{emit_report, generate_synthetic, read_report, run_experiment, ExperimentConfig};
use vbtta_core::{Error, Rng};

/// Variational Bayesian test-time augmentation benchmarks.
#[derive(Parser)]
#[command(name = "vbtta", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic splits for the first seed and write them as CSV.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the benchmark and write metrics, weights, ELBO and plots.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a directory written by `run`.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } => Failure::Config(e),
            _ => Failure::Runtime(e),
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Failure::Config(e),
        other => Failure::from(other),
    })
}

fn write_split(name: &str, data: &vbtta_core::predictor::Dataset, out: &mut String) {
    for (x, labels) in data.inputs.iter().zip(&data.labels) {
        let _ = write!(out, "{name}");
        for v in x {
            let _ = write!(out, ",{v:?}");
        }
        let joined: Vec<String> = labels.iter().map(|y| format!("{y:?}")).collect();
        let _ = writeln!(out, ",{}", joined.join(";"));
    }
}

fn gen(config: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load(config)?;
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let data = generate_synthetic(&cfg, &mut Rng::new(cfg.seed).split(0).split_named("data", 0))?;
    let path = dir.join("dataset.csv");
    let mut text = String::from("split");
    for j in 0..cfg.dim {
        let _ = write!(text, ",x{j}");
    }
    text.push_str(",labels\n");
    for (name, split) in [("train", &data.train), ("calibration", &data.calibration), ("test", &data.test)] {
        write_split(name, split, &mut text);
    }
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(Error::Io {
        path: dir.display().to_string(),
        source: e,
    }))?;
    std::fs::write(&path, text).map_err(|e| Failure::Runtime(Error::Io {
        path: path.display().to_string(),
        source: e,
    }))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = load(config)?;
    let report = run_experiment(&cfg).map_err(Failure::Runtime)?;
    for path in emit_report(&report, out).map_err(Failure::Runtime)? {
        println!("wrote {}", path.display());
    }
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &vbtta_core::experiment::RunReport) {
    let metric = if report.metric.is_empty() { "metric" } else { &report.metric };
    println!("{:<20} {:>6} {:>12} {:>12}", "strategy", "step", metric, "std");
    for r in &report.rows {
        println!("{:<20} {:>6} {:>12.6} {:>12.6}", r.strategy, r.step, r.mean, r.std);
    }
    if let Some(last) = report.weights.last() {
        let w: Vec<String> = report.weight_labels.iter().zip(last).map(|(k, v)| format!("{k}={v:.4}")).collect();
        println!("final weights: {}", w.join(" "));
    }
    if let (Some(first), Some(last)) = (report.negative_elbo.first(), report.negative_elbo.last()) {
        println!("negative ELBO: {first:.6} -> {last:.6} over {} steps", report.negative_elbo.len());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { config, out } => gen(&config, out),
        Command::Run { config, out } => run(&config, &out),
        Command::Report { input } => read_report(&input).map(|r| print_summary(&r)).map_err(Failure::Runtime),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
