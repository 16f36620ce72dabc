use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ConfigError, Resolved, RunConfig};
use crate::analysis::{analyze, AnalysisError, AnalysisReport};
use crate::geometry::{validate, Label, ValidationReport};
use crate::solver::{assemble, outer_fixed_point, residuals, DiscreteSystem, ResidualReport, SolutionPair, SolverError};
use crate::transform::{build_grid, coefficients, CurvilinearGrid, TransformError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Validate,
    Flow,
    Solve,
    CheckContinuity,
    All,
}

impl Command {
    fn reaches(self, stage: Command) -> bool {
        self as u8 >= stage as u8
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    ConfigError,
    ValidationFailed,
    SolverFailed,
    AnalysisFailed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::ConfigError => 2,
            Status::ValidationFailed => 3,
            Status::SolverFailed => 4,
            Status::AnalysisFailed => 5,
        }
    }
}

/// One pass/fail entry with its measured value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSummary {
    pub converged: bool,
    pub iterations: usize,
    pub total_sweeps: usize,
    pub theta_tol: f64,
    pub complementarity: f64,
    pub truncated: f64,
    pub u_max: f64,
    pub clamped_columns: Vec<usize>,
    pub mixed_columns: Vec<usize>,
    /// `‖Δχ‖∞` never grows after the third iteration.
    pub delta_chi_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub version: &'static str,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: Command,
    pub status: Status,
    pub error: Option<String>,
    pub config: RunConfig,
    pub h: f64,
    pub w_range: (f64, f64),
    pub validation: Option<ValidationReport>,
    pub solver: Option<SolverSummary>,
    pub residuals: Option<ResidualReport>,
    pub analysis: Option<AnalysisReport>,
    pub checks: Vec<CheckEntry>,
    pub artifacts: Vec<Artifact>,
    pub provenance: Provenance,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }
}

/// Writes `bytes` under a temporary name, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let err = |source| RunError::Write {
        path: path.to_path_buf(),
        source,
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.partial"));
    fs::write(&tmp, bytes).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

struct Sink {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Sink {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.artifacts.push(Artifact {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let text = serde_json::to_string_pretty(value).expect("reports serialize");
        self.put(name, text.as_bytes())
    }
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Gamma2 => "gamma2",
        Label::Gamma3 => "gamma3",
        Label::Neutral => "neutral",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:?}")).unwrap_or_default()
}

pub fn orbits_csv(grid: &CurvilinearGrid) -> String {
    let mut s = String::from(
        "w,alpha_minus,alpha_plus,exit_minus_x1,exit_minus_x2,exit_minus_label,exit_plus_x1,exit_plus_x2,exit_plus_label,flux,alpha_plus_prime\n",
    );
    for c in &grid.columns {
        let (m, p) = (&c.orbit.exit_minus, &c.orbit.exit_plus);
        let _ = writeln!(
            s,
            "{:?},{:?},{:?},{:?},{:?},{},{:?},{:?},{},{:?},{}",
            c.w,
            c.alpha_minus,
            c.alpha_plus,
            m.point[0],
            m.point[1],
            label_name(m.label),
            p.point[0],
            p.point[1],
            label_name(p.label),
            c.flux,
            opt(c.alpha_plus_prime)
        );
    }
    s
}

pub fn grid_csv(grid: &CurvilinearGrid) -> String {
    let mut s = String::from("i,j,w,s,t,x1,x2,y,tag\n");
    for i in 0..grid.n_w {
        for j in 0..grid.n_s {
            let n = &grid.nodes[grid.index(i, j)];
            let tag = serde_json::to_value(n.tag).expect("tag serializes");
            let _ = writeln!(s, "{i},{j},{:?},{:?},{:?},{:?},{:?},{:?},{}", n.w, n.s, n.t, n.x[0], n.x[1], n.y, tag.as_str().unwrap_or(""));
        }
    }
    s
}

pub fn solution_csv(grid: &CurvilinearGrid, pair: &SolutionPair) -> String {
    let mut s = String::from("w,s,t,x1,x2,u,chi\n");
    for (k, n) in grid.nodes.iter().enumerate() {
        let _ = writeln!(s, "{:?},{:?},{:?},{:?},{:?},{:?},{:?}", n.w, n.s, n.t, n.x[0], n.x[1], pair.u[k], pair.chi[k]);
    }
    s
}

pub fn trace_csv(pair: &SolutionPair) -> String {
    let mut s = String::from("iteration,sweeps,lcp_residual,lcp_converged,delta_chi,delta_u,u_max,theta_tol,clamped_columns\n");
    for r in &pair.trace {
        let _ = writeln!(
            s,
            "{},{},{:?},{},{:?},{:?},{:?},{:?},{}",
            r.iteration, r.sweeps, r.lcp_residual, r.lcp_converged, r.delta_chi, r.delta_u, r.u_max, r.theta_tol, r.clamped_columns
        );
    }
    s
}

pub fn free_boundary_csv(report: &AnalysisReport) -> String {
    let mut s = String::from("w,Phi_h,x1,x2,exit_on_gamma3,lhs,rhs,margin\n");
    for c in &report.columns {
        let v = c.verdict.as_ref();
        let _ = writeln!(
            s,
            "{:?},{},{:?},{:?},{},{},{},{}",
            c.w,
            opt(c.phi),
            c.trace[0],
            c.trace[1],
            c.exit_on_gamma3,
            opt(v.map(|v| v.lhs)),
            opt(v.map(|v| v.rhs)),
            opt(v.map(|v| v.margin))
        );
    }
    s
}

fn summarize(pair: &SolutionPair) -> SolverSummary {
    let dc: Vec<f64> = pair.trace.iter().map(|r| r.delta_chi).collect();
    SolverSummary {
        converged: pair.converged,
        iterations: pair.trace.len(),
        total_sweeps: pair.trace.iter().map(|r| r.sweeps).sum(),
        theta_tol: pair.theta_tol,
        complementarity: pair.complementarity,
        truncated: pair.truncated,
        u_max: pair.u.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        clamped_columns: pair.clamped_columns.clone(),
        mixed_columns: pair.mixed_columns.clone(),
        delta_chi_monotone: dc.iter().skip(3).zip(dc.iter().skip(4)).all(|(a, b)| b <= a),
    }
}

fn solver_checks(pair: &SolutionPair, res: &ResidualReport) -> Vec<CheckEntry> {
    let umax = pair.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let umin = pair.u.iter().copied().fold(0.0, f64::min);
    let chi_out = pair.chi.iter().map(|c| (c - c.clamp(0.0, 1.0)).abs()).fold(0.0, f64::max);
    vec![
        CheckEntry {
            name: "u_nonnegative",
            passed: umin >= 0.0,
            value: umin,
            threshold: 0.0,
        },
        CheckEntry {
            name: "chi_in_unit_interval",
            passed: chi_out == 0.0,
            value: chi_out,
            threshold: 0.0,
        },
        CheckEntry {
            name: "complementarity",
            passed: pair.complementarity <= 1e-8 * umax,
            value: pair.complementarity,
            threshold: 1e-8 * umax,
        },
        CheckEntry {
            name: "weak_residual",
            passed: res.equation_max <= 1e-7,
            value: res.equation_max,
            threshold: 1e-7,
        },
        CheckEntry {
            name: "sign_condition",
            passed: res.sign_min >= -1e-8,
            value: res.sign_min,
            threshold: -1e-8,
        },
    ]
}

fn analysis_checks(a: &AnalysisReport) -> Vec<CheckEntry> {
    vec![
        CheckEntry {
            name: "support_is_interval",
            passed: a.profile.support_violations.is_empty(),
            value: a.profile.support_violations.len() as f64,
            threshold: 0.0,
        },
        CheckEntry {
            name: "support_matches_profile",
            passed: a.profile.support_count_mismatch <= 1,
            value: a.profile.support_count_mismatch as f64,
            threshold: 1.0,
        },
        CheckEntry {
            name: "chi_nonincreasing",
            passed: a.monotonicity.max_forward_increase <= 0.0,
            value: a.monotonicity.max_forward_increase,
            threshold: 0.0,
        },
        CheckEntry {
            name: "chi_bump_integrals",
            passed: a.monotonicity.min_bump_integral >= -1e-8,
            value: a.monotonicity.min_bump_integral,
            threshold: -1e-8,
        },
        CheckEntry {
            name: "margin_without_clamp",
            passed: a.clamp_conflicts.is_empty(),
            value: a.clamp_conflicts.len() as f64,
            threshold: 0.0,
        },
    ]
}

/// Everything computed by the solve stage.
pub struct Solved {
    pub grid: CurvilinearGrid,
    pub system: DiscreteSystem,
    pub pair: SolutionPair,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Write(#[from] RunError),
}

/// Runs the pipeline up to `command` and writes artifacts into `out`.
/// Only `run_report.json` carries timing and hashes.
pub fn run(resolved: Resolved, command: Command, out: &Path) -> Result<RunReport, RunError> {
    let start = Instant::now();
    fs::create_dir_all(out).map_err(|source| RunError::Write {
        path: out.to_path_buf(),
        source,
    })?;
    let config_json = serde_json::to_vec(&resolved.config).expect("config serializes");
    let mut report = RunReport {
        command,
        status: Status::Ok,
        error: None,
        config: resolved.config.clone(),
        h: resolved.h,
        w_range: resolved.w_range,
        validation: None,
        solver: None,
        residuals: None,
        analysis: None,
        checks: Vec::new(),
        artifacts: Vec::new(),
        provenance: Provenance {
            config_hash: sha256_hex(&config_json),
            version: env!("CARGO_PKG_VERSION"),
            wall_time_s: 0.0,
        },
    };
    let mut sink = Sink {
        dir: out.to_path_buf(),
        artifacts: Vec::new(),
    };
    if let Err(e) = stages(&resolved, command, &mut report, &mut sink) {
        if let PipelineError::Write(w) = e {
            return Err(w);
        }
        report.status = match e {
            PipelineError::Analysis(_) => Status::AnalysisFailed,
            _ => Status::SolverFailed,
        };
        report.error = Some(e.to_string());
    }
    report.artifacts = sink.artifacts;
    report.provenance.wall_time_s = start.elapsed().as_secs_f64();
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&out.join("run_report.json"), text.as_bytes())?;
    Ok(report)
}

fn stages(r: &Resolved, command: Command, report: &mut RunReport, sink: &mut Sink) -> Result<(), PipelineError> {
    let cfg = &r.config;
    let pd = &r.problem;
    let v = validate(pd, cfg.validation.interior_samples, cfg.validation.boundary_samples);
    let passed = v.passed();
    report.validation = Some(v);
    if !passed {
        report.status = Status::ValidationFailed;
        return Ok(());
    }
    if !command.reaches(Command::Flow) {
        return Ok(());
    }
    let outputs = &cfg.outputs;
    let write_all = command == Command::All;
    let grid = build_grid(pd, r.h, r.w_range, cfg.grid.n_w, cfg.grid.n_s, cfg.grid.t_low_mode, &cfg.flow_options())?;
    if command == Command::Flow || write_all {
        if outputs.orbits {
            sink.put("orbits.csv", orbits_csv(&grid).as_bytes())?;
        }
        if outputs.grid {
            sink.put("grid.csv", grid_csv(&grid).as_bytes())?;
        }
    }
    if !command.reaches(Command::Solve) {
        return Ok(());
    }
    let coeffs = coefficients(&grid, pd)?;
    let sys = assemble(&grid, &coeffs)?;
    let pair = outer_fixed_point(pd, &grid, &sys, &cfg.solver)?;
    let res = residuals(&pair, &sys, &grid);
    report.solver = Some(summarize(&pair));
    report.checks.extend(solver_checks(&pair, &res));
    if command == Command::Solve || write_all {
        if outputs.solution {
            sink.put("solution.csv", solution_csv(&grid, &pair).as_bytes())?;
        }
        if outputs.trace {
            sink.put("trace.csv", trace_csv(&pair).as_bytes())?;
        }
        sink.json("residuals.json", &res)?;
    }
    report.residuals = Some(res);
    if !pair.converged {
        report.status = Status::SolverFailed;
        report.error = Some(format!("outer iteration did not converge in {} steps", pair.trace.len()));
        return Ok(());
    }
    if !command.reaches(Command::CheckContinuity) {
        return Ok(());
    }
    let a = analyze(&grid, pd, &sys, &pair, cfg.analysis.bumps)?;
    report.checks.extend(analysis_checks(&a));
    if outputs.free_boundary {
        sink.put("free_boundary.csv", free_boundary_csv(&a).as_bytes())?;
    }
    sink.json("analysis.json", &a)?;
    if report.checks.iter().any(|c| !c.passed) {
        report.status = Status::AnalysisFailed;
    }
    report.analysis = Some(a);
    Ok(())
}

/// Convenience for callers that want the solved state without artifacts.
pub fn solve(r: &Resolved) -> Result<Solved, PipelineError> {
    let cfg = &r.config;
    let pd = &r.problem;
    let grid = build_grid(pd, r.h, r.w_range, cfg.grid.n_w, cfg.grid.n_s, cfg.grid.t_low_mode, &cfg.flow_options())?;
    let system = assemble(&grid, &coefficients(&grid, pd)?)?;
    let pair = outer_fixed_point(pd, &grid, &system, &cfg.solver)?;
    Ok(Solved { grid, system, pair })
}
