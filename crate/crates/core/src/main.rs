use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fbflow::io::{run, Command, RunConfig, Status};

#[derive(Parser)]
#[command(name = "fbflow", version, about = "Orbit-chart solver for free-boundary problems with a Neumann law")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the structural assumptions on sampled points.
    Validate(Args),
    /// Integrate the orbits and build the chart.
    Flow(Args),
    /// Solve for the pair `(u, χ)`.
    Solve(Args),
    /// Solve and evaluate the continuity criterion per column.
    CheckContinuity(Args),
    /// Every stage, every artifact.
    All(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid size as `NWxNS`, e.g. `65x65`.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Integration and complementarity tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or("expected NWxNS")?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok((n(a)?, n(b)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Validate(a) => (Command::Validate, a),
        Cmd::Flow(a) => (Command::Flow, a),
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::CheckContinuity(a) => (Command::CheckContinuity, a),
        Cmd::All(a) => (Command::All, a),
    };
    let config_error = |e: &dyn std::fmt::Display| {
        eprintln!("config error: {e}");
        ExitCode::from(Status::ConfigError.exit_code() as u8)
    };
    let mut cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    if let Some((nw, ns)) = args.grid {
        cfg.grid.n_w = nw;
        cfg.grid.n_s = ns;
    }
    if let Some(t) = args.tol {
        cfg.set_tolerance(t);
    }
    // re-check ranges after overrides
    let cfg = match serde_json::to_string(&cfg).map_err(|e| e.to_string()).and_then(|t| RunConfig::from_json(&t).map_err(|e| e.to_string())) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    let out = args
        .out
        .or_else(|| cfg.outputs.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let resolved = match cfg.resolve() {
        Ok(r) => r,
        Err(e) => return config_error(&e),
    };
    let report = match run(resolved, command, &out) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
        Format::Text => {
            println!("status: {:?}", report.status);
            if let Some(e) = &report.error {
                println!("error: {e}");
            }
            if let Some(v) = &report.validation {
                for c in v.checks.iter().filter(|c| c.status == fbflow::geometry::CheckStatus::Fail) {
                    println!("assumption {} failed: {}", c.id, c.description);
                }
            }
            if let Some(s) = &report.solver {
                println!(
                    "solver: converged={} iterations={} u_max={:.6e} clamped_columns={}",
                    s.converged,
                    s.iterations,
                    s.u_max,
                    s.clamped_columns.len()
                );
            }
            for c in &report.checks {
                println!("{} {}: {:.3e} (threshold {:.1e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
            }
            if let Some(a) = &report.analysis {
                println!("continuity criterion holds on all columns: {}", a.criterion_holds);
            }
            println!("artifacts in {}", out.display());
        }
    }
    ExitCode::from(report.exit_code() as u8)
}
