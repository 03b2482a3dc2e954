//! `cilab`: deterministic experiment driver for the spectral laboratory.
//!
//! Usage: `cilab <kind> --config <file> [--out <dir>] [--threads <n>]
//! [--strict] [--plots]`. Exit codes: 0 all checks pass, 1 a check failed,
//! 2 configuration error, 3 resource or resolution limit.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cilab::config::{parse_config, Kind};
use cilab::experiments::{is_resource_error, run_experiment};

#[derive(Parser, Debug)]
#[command(name = "cilab", version, about = "spectral-laboratory experiment driver")]
struct Cli {
    /// Experiment kind: blocks-verify | ideal-step | diffusive-step |
    /// gte-step | eigen-ball | dynamo-run
    kind: String,

    /// Path to the INI experiment configuration
    #[arg(long)]
    config: PathBuf,

    /// Output directory for CSV artifacts (default: ./out/<kind>)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker thread budget; recorded in the run metadata. All kernels are
    /// single-threaded so results never depend on this value. Falls back to
    /// the CILAB_THREADS environment variable.
    #[arg(long)]
    threads: Option<usize>,

    /// Harden soft gates (condition ratios must be at most 1/2)
    #[arg(long)]
    strict: bool,

    /// Also emit one SVG per plottable CSV
    #[arg(long)]
    plots: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let kind = match Kind::parse(&cli.kind) {
        Some(k) => k,
        None => {
            eprintln!(
                "config error: unknown experiment kind '{}' (expected one of \
                 blocks-verify, ideal-step, diffusive-step, gte-step, eigen-ball, dynamo-run)",
                cli.kind
            );
            return ExitCode::from(2);
        }
    };
    let threads = cli.threads.or_else(|| {
        std::env::var("CILAB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match parse_config(&text, kind) {
        Ok(c) => c,
        Err(errors) => {
            for e in &errors {
                eprintln!("config error: {e}");
            }
            return ExitCode::from(2);
        }
    };
    let out = cli
        .out
        .unwrap_or_else(|| PathBuf::from("out").join(kind.as_str()));
    if let Some(n) = threads {
        println!("threads: {n} requested (kernels are single-threaded; output is identical)");
    }

    match run_experiment(&cfg, &out, cli.plots, cli.strict) {
        Ok(artifact) => {
            for c in &artifact.checks {
                let status = if c.pass { "PASS" } else { "FAIL" };
                println!(
                    "{status} {} {} (measured {}, required {})",
                    c.id, c.description, c.measured, c.threshold
                );
            }
            let overall = artifact.passed();
            println!(
                "{}: {} of {} checks passed; artifacts in {}",
                if overall { "PASS" } else { "FAIL" },
                artifact.checks.iter().filter(|c| c.pass).count(),
                artifact.checks.len(),
                artifact.dir.display()
            );
            ExitCode::from(if overall { 0 } else { 1 })
        }
        Err(e) if is_resource_error(&e) => {
            eprintln!("resource limit: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
