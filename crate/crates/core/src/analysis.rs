//! Free-boundary extraction and audits of the computed pair.

use serde::Serialize;

use crate::expr::ExprError;
use crate::geometry::Point;
use crate::problem::ProblemData;
use crate::solver::{dry_formula, DiscreteSystem, SolutionPair, SolverError};
use crate::transform::{CurvilinearGrid, NodeTag};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("column {0} has no support (free boundary at the sentinel)")]
    Sentinel(usize),
    #[error("column {0} does not exit through the Neumann part")]
    NotOnGamma3(usize),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeBoundaryProfile {
    pub theta_tol: f64,
    /// Flow time of the free boundary per column; `None` when `u ≤ θ_tol`
    /// on the whole column.
    pub phi: Vec<Option<f64>>,
    /// Nodes below a column's crossing with `u ≤ θ_tol` that are not
    /// Dirichlet nodes: the support is not an interval there.
    pub support_violations: Vec<usize>,
    /// Largest per-column difference between `#{u > θ_tol}` and `#{t < Φ}`.
    pub support_count_mismatch: usize,
}

impl FreeBoundaryProfile {
    /// `Φ`, with the lower chart limit standing in for dry columns.
    pub fn value_or_sentinel(&self, grid: &CurvilinearGrid, i_w: usize) -> f64 {
        self.phi[i_w].unwrap_or(grid.columns[i_w].t_low)
    }

    /// Physical point of the free boundary on a column.
    pub fn trace_point(&self, grid: &CurvilinearGrid, i_w: usize) -> Point {
        grid.columns[i_w].orbit.position(self.value_or_sentinel(grid, i_w))
    }
}

/// Per column, the last crossing of `u` through `θ_tol` scanning from the
/// top, located by linear interpolation.
pub fn extract_profile(grid: &CurvilinearGrid, u: &[f64], theta: f64) -> FreeBoundaryProfile {
    let mut phi = Vec::with_capacity(grid.n_w);
    let mut violations = Vec::new();
    let mut mismatch = 0;
    for i in 0..grid.n_w {
        let col = grid.column_nodes(i);
        let uc: Vec<f64> = (0..grid.n_s).map(|j| u[grid.index(i, j)]).collect();
        let top = (0..grid.n_s).rev().find(|&j| uc[j] > theta);
        let p = top.map(|j| {
            if j + 1 == grid.n_s {
                col[j].t
            } else {
                let f = (uc[j] - theta) / (uc[j] - uc[j + 1]);
                col[j].t + f * (col[j + 1].t - col[j].t)
            }
        });
        if let Some(j) = top {
            for jj in 0..j {
                if uc[jj] <= theta && col[jj].tag != NodeTag::Dirichlet {
                    violations.push(grid.index(i, jj));
                }
            }
        }
        let above = uc.iter().filter(|v| **v > theta).count();
        let below = p.map_or(0, |p| col.iter().filter(|n| n.t < p).count());
        mismatch = mismatch.max(above.abs_diff(below));
        phi.push(p);
    }
    FreeBoundaryProfile {
        theta_tol: theta,
        phi,
        support_violations: violations,
        support_count_mismatch: mismatch,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    /// Largest increase of `χ` between consecutive nodes of a column.
    pub max_forward_increase: f64,
    /// Smallest `∫ χ ∂t ξ` over the bump family (nonnegative when `χ` is
    /// nonincreasing in `t`).
    pub min_bump_integral: f64,
    pub bumps: usize,
}

fn bump_primitive(x: f64) -> f64 {
    let x = x.clamp(-1.0, 1.0);
    x - 2.0 * x.powi(3) / 3.0 + x.powi(5) / 5.0
}

fn bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - x * x).powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub t: f64,
    pub w: f64,
    pub rt: f64,
    pub rw: f64,
}

/// Deterministic family of bumps whose supports lie inside the chart.
pub fn bump_family(grid: &CurvilinearGrid, count: usize) -> Vec<Bump> {
    let (w0, w1) = grid.w_range;
    let rw = 0.15 * (w1 - w0);
    let span = grid
        .columns
        .iter()
        .map(|c| c.alpha_plus - c.t_low)
        .fold(f64::INFINITY, f64::min);
    let rt = 0.15 * span;
    let mut out = Vec::with_capacity(count);
    let (g1, g2) = (0.754_877_666_246_692_7, 0.569_840_290_998_053_2);
    let mut k = 0usize;
    while out.len() < count && k < 100 * count.max(1) {
        k += 1;
        let a = (0.5 + g1 * k as f64).fract();
        let b = (0.5 + g2 * k as f64).fract();
        let w = w0 + rw + a * (w1 - w0 - 2.0 * rw);
        // keep the t-support inside every column it meets
        let cols: Vec<_> = grid.columns.iter().filter(|c| (c.w - w).abs() <= rw + grid.dw()).collect();
        let lo = cols.iter().map(|c| c.t_low).fold(f64::NEG_INFINITY, f64::max);
        let hi = cols.iter().map(|c| c.alpha_plus).fold(f64::INFINITY, f64::min);
        if hi - lo <= 2.0 * rt {
            continue;
        }
        out.push(Bump {
            t: lo + rt + b * (hi - lo - 2.0 * rt),
            w,
            rt,
            rw,
        });
    }
    out
}

/// `∫∫ I(χ)·∂t ξ dt dw`, evaluated as `-∫∫ ∂t I(χ)·ξ`: exact along each
/// `w`-line, 3-point Gauss across `w`.
pub fn bump_integral(grid: &CurvilinearGrid, chi: &[f64], b: &Bump) -> f64 {
    const G3: [(f64, f64); 3] = [
        (0.112_701_665_379_258_3, 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.887_298_334_620_741_7, 5.0 / 18.0),
    ];
    let dw = grid.dw();
    let mut total = 0.0;
    for i in 0..grid.n_w - 1 {
        let (wa, wb) = (grid.columns[i].w, grid.columns[i + 1].w);
        let (lo, hi) = (wa.max(b.w - b.rw), wb.min(b.w + b.rw));
        if hi <= lo {
            continue;
        }
        for &(g, wt) in &G3 {
            let w = lo + g * (hi - lo);
            let eta = (w - wa) / dw;
            let bw = bump((w - b.w) / b.rw);
            let mut line = 0.0;
            for j in 0..grid.n_s - 1 {
                let at = |jj: usize| {
                    let (k0, k1) = (grid.index(i, jj), grid.index(i + 1, jj));
                    (
                        (1.0 - eta) * grid.nodes[k0].t + eta * grid.nodes[k1].t,
                        (1.0 - eta) * chi[k0] + eta * chi[k1],
                    )
                };
                let ((t0, c0), (t1, c1)) = (at(j), at(j + 1));
                let slope = (c1 - c0) / (t1 - t0);
                let xi = b.rt * (bump_primitive((t1 - b.t) / b.rt) - bump_primitive((t0 - b.t) / b.rt));
                line -= slope * xi;
            }
            total += wt * (hi - lo) * bw * line;
        }
    }
    total
}

pub fn check_monotonicity(grid: &CurvilinearGrid, chi: &[f64], bumps: usize) -> MonotonicityReport {
    let mut inc: f64 = 0.0;
    for i in 0..grid.n_w {
        for j in 0..grid.n_s - 1 {
            inc = inc.max(chi[grid.index(i, j + 1)] - chi[grid.index(i, j)]);
        }
    }
    let family = bump_family(grid, bumps);
    let min = family
        .iter()
        .map(|b| bump_integral(grid, chi, b))
        .fold(f64::INFINITY, f64::min);
    MonotonicityReport {
        max_forward_increase: inc,
        min_bump_integral: min,
        bumps: family.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DryLawReport {
    /// `max |χ - formula|` on checked nodes.
    pub max_mismatch: f64,
    /// Largest row residual of the assembled system at the formula values,
    /// relative to the row's absolute contributions.
    pub max_residual: f64,
    /// `max_residual / h²`.
    pub c_estimate: f64,
    pub nodes_checked: usize,
    /// Largest `χ` on dry nodes of columns without Neumann exit.
    pub branch1_max_chi: f64,
    pub grid_spacing: f64,
}

/// Checks the explicit dry-region law on nodes at least two cells past the
/// free boundary, including the Neumann rows.
pub fn dry_region_chi_law(
    grid: &CurvilinearGrid,
    pd: &ProblemData,
    sys: &DiscreteSystem,
    pair: &SolutionPair,
) -> Result<DryLawReport, AnalysisError> {
    let n_s = grid.n_s;
    // index position of Φ per column
    let jphi: Vec<f64> = (0..grid.n_w)
        .map(|i| match pair.phi[i] {
            Some(p) => {
                let c = &grid.columns[i];
                (p - c.t_low) / (c.alpha_plus - c.t_low) * (n_s - 1) as f64
            }
            None => 0.0,
        })
        .collect();
    let mut formula = vec![0.0; sys.len()];
    for i in 0..grid.n_w {
        if grid.columns[i].exit_on_gamma3 {
            for j in 0..n_s {
                let k = grid.index(i, j);
                formula[k] = dry_formula(grid, pd, i, grid.nodes[k].y.abs())?;
            }
        }
    }
    let (mut mismatch, mut resid, mut checked, mut b1) = (0.0f64, 0.0f64, 0, 0.0f64);
    for i in 0..grid.n_w {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(grid.n_w - 1);
        let first = (lo..=hi).map(|ii| jphi[ii].ceil() as usize + 2).max().unwrap_or(n_s);
        for j in first..n_s {
            let k = grid.index(i, j);
            if !grid.columns[i].exit_on_gamma3 {
                b1 = b1.max(pair.chi[k]);
                continue;
            }
            if sys.tags[k] == NodeTag::Dirichlet {
                continue;
            }
            mismatch = mismatch.max((pair.chi[k] - formula[k]).abs());
            let x = grid.nodes[k].x;
            let m = sys.boundary_weight[k];
            let bterm = if m > 0.0 { m * pd.boundary_law(x, pd.datum(x)?)? } else { 0.0 };
            let r = sys.load_row(k, &formula) - bterm;
            let norm = sys.apply(&sys.load_abs, k, &formula) + bterm.abs();
            if norm > 0.0 {
                resid = resid.max(r.abs() / norm);
            }
            checked += 1;
        }
    }
    let h = grid.spacing();
    Ok(DryLawReport {
        max_mismatch: mismatch,
        max_residual: resid,
        c_estimate: resid / (h * h),
        nodes_checked: checked,
        branch1_max_chi: b1,
        grid_spacing: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuityVerdict {
    pub column: usize,
    pub w: f64,
    pub phi: f64,
    /// `|Y(α₊)|·β(x, φ(x))/(H·ν)` at the exit.
    pub lhs: f64,
    /// `|Y|` at the free boundary.
    pub rhs: f64,
    /// `Y` at the free boundary with its sign, for the literal reading.
    pub rhs_signed: f64,
    pub holds: bool,
    pub margin: f64,
}

pub fn continuity_criterion(
    grid: &CurvilinearGrid,
    pd: &ProblemData,
    profile: &[Option<f64>],
    i_w: usize,
) -> Result<ContinuityVerdict, AnalysisError> {
    let c = &grid.columns[i_w];
    if !c.exit_on_gamma3 {
        return Err(AnalysisError::NotOnGamma3(i_w));
    }
    let phi = profile[i_w].ok_or(AnalysisError::Sentinel(i_w))?;
    let top = &grid.nodes[grid.index(i_w, grid.n_s - 1)];
    let b = pd.boundary_law(top.x, pd.datum(top.x)?)?;
    let lhs = top.y.abs() * b / c.flux;
    let y = c.orbit.jacobian_closed(pd, phi).map_err(|e| match e {
        crate::flow::FlowError::Expr(e) => AnalysisError::Expr(e),
        _ => AnalysisError::NotOnGamma3(i_w),
    })?;
    let rhs = y.abs();
    Ok(ContinuityVerdict {
        column: i_w,
        w: c.w,
        phi,
        lhs,
        rhs,
        rhs_signed: y,
        holds: lhs < rhs,
        margin: rhs - lhs,
    })
}

/// One resolution's input to [`modulus_report`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolutionProfile {
    pub dw: f64,
    pub phi: Vec<Option<f64>>,
    /// Columns where the continuity criterion holds.
    pub holds: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusReport {
    /// `max |ΔΦ|/Δw` per resolution, over adjacent columns that both hold.
    pub max_normalized_jump: Vec<f64>,
    /// Largest over smallest of the above.
    pub spread: f64,
    /// Jumps stay within a factor 2 across resolutions.
    pub continuity_witness: bool,
}

pub fn modulus_report(profiles: &[ResolutionProfile]) -> ModulusReport {
    let jumps: Vec<f64> = profiles
        .iter()
        .map(|p| {
            (0..p.phi.len().saturating_sub(1))
                .filter(|&i| p.holds[i] && p.holds[i + 1])
                .filter_map(|i| Some((p.phi[i + 1]? - p.phi[i]?).abs() / p.dw))
                .fold(0.0, f64::max)
        })
        .collect();
    let max = jumps.iter().copied().fold(0.0, f64::max);
    let min = jumps.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if max == 0.0 { 1.0 } else { max / min };
    ModulusReport {
        max_normalized_jump: jumps,
        spread,
        continuity_witness: profiles.len() >= 2 && spread <= 2.0,
    }
}

/// Continuity verdict of one column, or why it has none.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnVerdict {
    pub column: usize,
    pub w: f64,
    pub phi: Option<f64>,
    pub trace: Point,
    pub exit_on_gamma3: bool,
    pub clamped: bool,
    pub verdict: Option<ContinuityVerdict>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub profile: FreeBoundaryProfile,
    pub monotonicity: MonotonicityReport,
    /// `None` when no column exits through the Neumann part.
    pub dry_law: Option<DryLawReport>,
    pub columns: Vec<ColumnVerdict>,
    /// Criterion holds on every column that has a verdict.
    pub criterion_holds: bool,
    pub min_margin: Option<f64>,
    /// Columns where the sign-carrying reading `lhs < Y` holds.
    pub signed_reading_holds: usize,
    /// Columns with positive margin that were nevertheless clamped (must be empty).
    pub clamp_conflicts: Vec<usize>,
}

/// Runs every audit on a computed pair.
pub fn analyze(
    grid: &CurvilinearGrid,
    pd: &ProblemData,
    sys: &DiscreteSystem,
    pair: &SolutionPair,
    bumps: usize,
) -> Result<AnalysisReport, AnalysisError> {
    let profile = extract_profile(grid, &pair.u, pair.theta_tol);
    let monotonicity = check_monotonicity(grid, &pair.chi, bumps);
    let dry_law = if grid.columns.iter().any(|c| c.exit_on_gamma3) {
        Some(dry_region_chi_law(grid, pd, sys, pair)?)
    } else {
        None
    };
    let mut columns = Vec::with_capacity(grid.n_w);
    for (i, c) in grid.columns.iter().enumerate() {
        let (verdict, skipped) = match continuity_criterion(grid, pd, &pair.phi, i) {
            Ok(v) => (Some(v), None),
            Err(e @ (AnalysisError::Sentinel(_) | AnalysisError::NotOnGamma3(_))) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        columns.push(ColumnVerdict {
            column: i,
            w: c.w,
            phi: pair.phi[i],
            trace: c.orbit.position(pair.phi[i].unwrap_or(c.t_low)),
            exit_on_gamma3: c.exit_on_gamma3,
            clamped: pair.clamped_columns.contains(&i),
            verdict,
            skipped,
        });
    }
    let verdicts: Vec<&ContinuityVerdict> = columns.iter().filter_map(|c| c.verdict.as_ref()).collect();
    let clamp_conflicts = columns
        .iter()
        .filter(|c| c.clamped && c.verdict.is_some_and(|v| v.margin > 0.0))
        .map(|c| c.column)
        .collect();
    Ok(AnalysisReport {
        profile,
        monotonicity,
        dry_law,
        criterion_holds: verdicts.iter().all(|v| v.holds),
        min_margin: verdicts.iter().map(|v| v.margin).reduce(f64::min),
        signed_reading_holds: verdicts.iter().filter(|v| v.lhs < v.rhs_signed).count(),
        clamp_conflicts,
        columns,
    })
}
