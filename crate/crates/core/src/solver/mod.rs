//! Discrete transformed problem and the `(u, χ)` fixed point.
//!
//! Bilinear elements on the logical `(s, w)` rectangle, with the flow-time
//! coordinate `t` interpolated isoparametrically. For a fixed `χ` the
//! unknown `u ≥ 0` solves a linear complementarity problem by projected SOR;
//! `χ` is then rebuilt column by column from the support of `u`.

mod residual;

pub use residual::{residuals, ResidualReport};

use serde::{Deserialize, Serialize};

use crate::analysis::extract_profile;
use crate::expr::ExprError;
use crate::problem::ProblemData;
use crate::transform::{CurvilinearGrid, NodeTag, TLowMode, TransformedCoefficients};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("cell ({i}, {j}) is degenerate (dt/ds = {dt:.3e})")]
    DegenerateCell { i: usize, j: usize, dt: f64 },
    #[error("operator has a non-positive diagonal at free node {0}")]
    NotElliptic(usize),
    #[error("solving requires the full chart; the grid starts at t = 0")]
    ZeroMode,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Damping of the outer `χ` update.
    pub omega: f64,
    /// Projected SOR relaxation.
    pub relaxation: f64,
    pub max_outer: usize,
    /// Sweep cap per complementarity solve, as a multiple of the node count.
    pub sweep_factor: usize,
    pub lcp_tol: f64,
    pub outer_tol: f64,
    /// Support threshold `max(theta_floor, theta_rel·h²·‖u‖∞)`.
    pub theta_rel: f64,
    pub theta_floor: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            omega: 0.5,
            relaxation: 1.5,
            max_outer: 200,
            sweep_factor: 20,
            lcp_tol: 1e-10,
            outer_tol: 1e-8,
            theta_rel: 1e-3,
            theta_floor: 1e-10,
        }
    }
}

/// 3×3 stencil offset `(di, dj)` → slot.
pub(crate) fn slot(di: isize, dj: isize) -> usize {
    ((di + 1) * 3 + (dj + 1)) as usize
}

#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub n_w: usize,
    pub n_s: usize,
    /// Stiffness rows as 3×3 stencils over `(Δi_w, Δj_s)`.
    pub stiffness: Vec<[f64; 9]>,
    /// `load[k][o]`: derivative of the load of row `k` with respect to `χ`
    /// at the neighbour in slot `o`.
    pub load: Vec<[f64; 9]>,
    /// `∫ |N_o·h·∂tφ_k|`, the magnitude scale of the load.
    pub load_abs: Vec<[f64; 9]>,
    /// `∫ N_o·∂t(h)·φ_k`, used by the sign check.
    pub source: Vec<[f64; 9]>,
    /// Lumped boundary weight `∫ φ_k dw · |Y(α₊)|/(H·ν)` on Neumann nodes.
    pub boundary_weight: Vec<f64>,
    pub tags: Vec<NodeTag>,
}

impl DiscreteSystem {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn is_free(&self, k: usize) -> bool {
        self.tags[k] != NodeTag::Dirichlet
    }

    /// Neighbour of `k` in slot `o`, if it exists.
    pub(crate) fn neighbour(&self, k: usize, o: usize) -> Option<usize> {
        let (i, j) = ((k / self.n_s) as isize, (k % self.n_s) as isize);
        let (di, dj) = (o as isize / 3 - 1, o as isize % 3 - 1);
        let (ni, nj) = (i + di, j + dj);
        if ni < 0 || nj < 0 || ni >= self.n_w as isize || nj >= self.n_s as isize {
            None
        } else {
            Some(ni as usize * self.n_s + nj as usize)
        }
    }

    pub fn apply(&self, st: &[[f64; 9]], k: usize, v: &[f64]) -> f64 {
        (0..9)
            .filter_map(|o| self.neighbour(k, o).map(|n| st[k][o] * v[n]))
            .sum()
    }

    /// `(K u)_k`
    pub fn stiffness_times(&self, k: usize, u: &[f64]) -> f64 {
        self.apply(&self.stiffness, k, u)
    }

    /// `∫ I(χ)·I(h)·∂tφ_k`
    pub fn load_row(&self, k: usize, chi: &[f64]) -> f64 {
        self.apply(&self.load, k, chi)
    }
}

const GAUSS2: [(f64, f64); 2] = [(0.211_324_865_405_187_1, 0.5), (0.788_675_134_594_812_9, 0.5)];

/// Corner order: `(ξ, η) ∈ {(0,0), (1,0), (0,1), (1,1)}`, `ξ` along `s`, `η` along `w`.
fn shape(xi: f64, eta: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let n = [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), (1.0 - xi) * eta, xi * eta];
    let dxi = [-(1.0 - eta), 1.0 - eta, -eta, eta];
    let deta = [-(1.0 - xi), -xi, 1.0 - xi, xi];
    (n, dxi, deta)
}

pub fn assemble(grid: &CurvilinearGrid, coeffs: &TransformedCoefficients) -> Result<DiscreteSystem, SolverError> {
    let (n_w, n_s) = (grid.n_w, grid.n_s);
    let n = n_w * n_s;
    let dw = grid.dw();
    let mut stiffness = vec![[0.0; 9]; n];
    let mut load = vec![[0.0; 9]; n];
    let mut load_abs = vec![[0.0; 9]; n];
    let mut source = vec![[0.0; 9]; n];
    for i in 0..n_w - 1 {
        for j in 0..n_s - 1 {
            let ids = [grid.index(i, j), grid.index(i, j + 1), grid.index(i + 1, j), grid.index(i + 1, j + 1)];
            let off = [(0isize, 0isize), (0, 1), (1, 0), (1, 1)];
            let t: [f64; 4] = ids.map(|k| grid.nodes[k].t);
            let hn: [f64; 4] = ids.map(|k| coeffs.h[k]);
            let jac = |xi: f64, eta: f64| {
                let (nn, dxi, deta) = shape(xi, eta);
                let t_xi: f64 = (0..4).map(|a| dxi[a] * t[a]).sum();
                let t_eta: f64 = (0..4).map(|a| deta[a] * t[a]).sum();
                (nn, dxi, deta, t_xi, t_eta)
            };
            // diffusion: tensor Gauss
            for &(xi, wx) in &GAUSS2 {
                for &(eta, we) in &GAUSS2 {
                    let (nn, dxi, deta, t_xi, t_eta) = jac(xi, eta);
                    if t_xi <= 0.0 {
                        return Err(SolverError::DegenerateCell { i, j, dt: t_xi });
                    }
                    let det = t_xi * dw * wx * we;
                    let gt: [f64; 4] = std::array::from_fn(|a| dxi[a] / t_xi);
                    let gw: [f64; 4] = std::array::from_fn(|a| (deta[a] - gt[a] * t_eta) / dw);
                    let mut am = [[0.0; 2]; 2];
                    for a in 0..4 {
                        for (r, row) in am.iter_mut().enumerate() {
                            for (c, v) in row.iter_mut().enumerate() {
                                *v += nn[a] * coeffs.a[ids[a]][r][c];
                            }
                        }
                    }
                    for a in 0..4 {
                        for b in 0..4 {
                            let o = slot(off[b].0 - off[a].0, off[b].1 - off[a].1);
                            let ga = [gt[a], gw[a]];
                            let gb = [gt[b], gw[b]];
                            let mut e = 0.0;
                            for r in 0..2 {
                                for c in 0..2 {
                                    e += ga[r] * am[r][c] * gb[c];
                                }
                            }
                            stiffness[ids[a]][o] += e * det;
                        }
                    }
                }
            }
            // transport terms: Gauss along t, nodal across w so that every
            // evaluation lies on one orbit
            for &(xi, wx) in &GAUSS2 {
                for eta in [0.0, 1.0] {
                    let (nn, dxi, _, t_xi, _) = jac(xi, eta);
                    let det = t_xi * dw * wx * 0.5;
                    let gt: [f64; 4] = std::array::from_fn(|a| dxi[a] / t_xi);
                    let ht: f64 = (0..4).map(|a| gt[a] * hn[a]).sum();
                    for a in 0..4 {
                        for b in 0..4 {
                            let o = slot(off[b].0 - off[a].0, off[b].1 - off[a].1);
                            // χh is interpolated as a product, so χh constant
                            // along a column cancels exactly
                            let l = nn[b] * hn[b] * gt[a] * det;
                            load[ids[a]][o] += l;
                            load_abs[ids[a]][o] += l.abs();
                            source[ids[a]][o] += nn[b] * ht * nn[a] * det;
                        }
                    }
                }
            }
        }
    }

    let mut boundary_weight = vec![0.0; n];
    let top = n_s - 1;
    for i in 0..n_w - 1 {
        if let (Some(g0), Some(g1)) = (coeffs.boundary_weight[i], coeffs.boundary_weight[i + 1]) {
            boundary_weight[grid.index(i, top)] += 0.5 * dw * g0;
            boundary_weight[grid.index(i + 1, top)] += 0.5 * dw * g1;
        }
    }
    let tags: Vec<NodeTag> = grid.nodes.iter().map(|nd| nd.tag).collect();
    for (k, tag) in tags.iter().enumerate() {
        if *tag != NodeTag::Neumann {
            boundary_weight[k] = 0.0;
        }
        if *tag != NodeTag::Dirichlet && stiffness[k][4] <= 0.0 {
            return Err(SolverError::NotElliptic(k));
        }
    }
    Ok(DiscreteSystem {
        n_w,
        n_s,
        stiffness,
        load,
        load_abs,
        source,
        boundary_weight,
        tags,
    })
}

/// Boundary values at the top nodes: `(φ, x)`.
fn top_data(grid: &CurvilinearGrid, pd: &ProblemData) -> Result<Vec<f64>, SolverError> {
    grid.nodes
        .iter()
        .map(|n| if n.tag == NodeTag::Neumann { pd.datum(n.x) } else { Ok(0.0) })
        .collect::<Result<_, _>>()
        .map_err(SolverError::from)
}

/// Boundary flux `m_k·g_k·β(x, φ - u_k)` per node.
pub fn boundary_flux(sys: &DiscreteSystem, grid: &CurvilinearGrid, pd: &ProblemData, u: &[f64]) -> Result<Vec<f64>, SolverError> {
    let phi = top_data(grid, pd)?;
    (0..sys.len())
        .map(|k| {
            let m = sys.boundary_weight[k];
            if m == 0.0 {
                Ok(0.0)
            } else {
                Ok(m * pd.boundary_law(grid.nodes[k].x, phi[k] - u[k])?)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LcpOutcome {
    pub u: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// `max |min(u, Mu + q)|` (projected) or `max |Mu + q|` over free nodes,
    /// relative to the scale.
    pub residual: f64,
}

/// Projected SOR for `u ≥ 0`, `Mu + q ≥ 0`, `u·(Mu + q) = 0` with the
/// boundary law linearised about `u_prev`.
pub fn solve_lcp(
    sys: &DiscreteSystem,
    grid: &CurvilinearGrid,
    pd: &ProblemData,
    chi: &[f64],
    u_prev: &[f64],
    params: &SolverParams,
) -> Result<LcpOutcome, SolverError> {
    sor(sys, grid, pd, chi, u_prev, params, true, None)
}

/// The same system without the sign constraint: `Mu + q = 0` on free nodes,
/// solved by conjugate gradients with SOR as fallback.
pub fn solve_linear(
    sys: &DiscreteSystem,
    grid: &CurvilinearGrid,
    pd: &ProblemData,
    chi: &[f64],
    u_prev: &[f64],
    params: &SolverParams,
) -> Result<LcpOutcome, SolverError> {
    sor(sys, grid, pd, chi, u_prev, params, false, None)
}

/// Linear solve on the nodes marked in `wet`, with `u = 0` held elsewhere.
pub fn solve_wet(
    sys: &DiscreteSystem,
    grid: &CurvilinearGrid,
    pd: &ProblemData,
    chi: &[f64],
    u_prev: &[f64],
    params: &SolverParams,
    wet: &[bool],
) -> Result<LcpOutcome, SolverError> {
    sor(sys, grid, pd, chi, u_prev, params, false, Some(wet))
}

fn sor(
    sys: &DiscreteSystem,
    grid: &CurvilinearGrid,
    pd: &ProblemData,
    chi: &[f64],
    u_prev: &[f64],
    params: &SolverParams,
    project: bool,
    active: Option<&[bool]>,
) -> Result<LcpOutcome, SolverError> {
    let n = sys.len();
    let phi = top_data(grid, pd)?;
    let mut q = vec![0.0; n];
    let mut d = vec![0.0; n];
    for k in 0..n {
        q[k] = sys.load_row(k, chi);
        let m = sys.boundary_weight[k];
        if m > 0.0 {
            let x = grid.nodes[k].x;
            let z = phi[k] - u_prev[k];
            let b = m * pd.boundary_law(x, z)?;
            let dz = m * pd.boundary_law_dz(x, z)?.max(0.0);
            d[k] = dz;
            q[k] -= b + dz * u_prev[k];
        }
    }
    let diag: Vec<f64> = (0..n).map(|k| sys.stiffness[k][4] + d[k]).collect();
    let nbr: Vec<[usize; 9]> = (0..n)
        .map(|k| std::array::from_fn(|o| sys.neighbour(k, o).unwrap_or(k)))
        .collect();
    let coef: Vec<[f64; 9]> = (0..n)
        .map(|k| std::array::from_fn(|o| if sys.neighbour(k, o).is_some() { sys.stiffness[k][o] } else { 0.0 }))
        .collect();
    let is_free = |k: usize| sys.is_free(k) && active.is_none_or(|a| a[k]);
    let free: Vec<usize> = (0..n).filter(|&k| is_free(k)).collect();
    let lower = if project { 0.0 } else { f64::NEG_INFINITY };
    let mut u: Vec<f64> = (0..n).map(|k| if is_free(k) { u_prev[k].max(lower) } else { 0.0 }).collect();
    let row = |u: &[f64], k: usize| -> f64 {
        let mut r = q[k] + d[k] * u[k];
        for o in 0..9 {
            r += coef[k][o] * u[nbr[k][o]];
        }
        r
    };
    let qmax = free.iter().map(|&k| q[k].abs()).fold(0.0, f64::max);
    let dmax = free.iter().map(|&k| diag[k]).fold(0.0, f64::max);
    let measure = |u: &[f64]| -> (f64, f64) {
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = qmax.max(dmax * umax).max(1e-300);
        let r = free
            .iter()
            .map(|&k| {
                let r = row(u, k);
                if project {
                    u[k].min(r).abs()
                } else {
                    r.abs()
                }
            })
            .fold(0.0, f64::max);
        (r, scale)
    };
    let cap = params.sweep_factor * n;
    let omega = params.relaxation;
    let mut sweeps = 0;
    let (mut res, mut scale) = measure(&u);
    if !project {
        // symmetric positive definite: Jacobi-preconditioned conjugate gradients
        let apply = |p: &[f64], k: usize| -> f64 {
            let mut r = d[k] * p[k];
            for o in 0..9 {
                r += coef[k][o] * p[nbr[k][o]];
            }
            r
        };
        let mut r = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut ap = vec![0.0; n];
        for &k in &free {
            r[k] = -row(&u, k);
            z[k] = r[k] / diag[k];
            p[k] = z[k];
        }
        let mut rz: f64 = free.iter().map(|&k| r[k] * z[k]).sum();
        while res > params.lcp_tol * scale && sweeps < cap && rz > f64::MIN_POSITIVE {
            for &k in &free {
                ap[k] = apply(&p, k);
            }
            let pap: f64 = free.iter().map(|&k| p[k] * ap[k]).sum();
            let alpha = rz / pap;
            if !(pap > 0.0 && alpha.is_finite()) {
                break;
            }
            let mut rmax: f64 = 0.0;
            for &k in &free {
                u[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
                z[k] = r[k] / diag[k];
                rmax = rmax.max(r[k].abs());
            }
            sweeps += 1;
            let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rmax <= 0.5 * params.lcp_tol * qmax.max(dmax * umax) || sweeps % 50 == 0 {
                (res, scale) = measure(&u);
            }
            let rz_new: f64 = free.iter().map(|&k| r[k] * z[k]).sum();
            let beta = if rz_new > 0.0 { rz_new / rz } else { 0.0 };
            rz = rz_new;
            for &k in &free {
                p[k] = z[k] + beta * p[k];
            }
        }
        (res, scale) = measure(&u);
    }
    while res > params.lcp_tol * scale && sweeps < cap {
        for _ in 0..10 {
            for &k in &free {
                let r = row(&u, k);
                u[k] = (u[k] - omega * r / diag[k]).max(lower);
            }
            sweeps += 1;
        }
        (res, scale) = measure(&u);
    }
    Ok(LcpOutcome {
        u,
        sweeps,
        converged: res <= params.lcp_tol * scale,
        residual: res / scale,
    })
}

/// Support threshold for a solution with sup-norm `umax` on a grid of spacing `h`.
pub fn theta_tol(params: &SolverParams, h: f64, umax: f64) -> f64 {
    params.theta_floor.max(params.theta_rel * h * h * umax)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub chi: Vec<f64>,
    /// Columns where the dry-region ratio exceeded 1 and was clamped.
    pub clamped_columns: Vec<usize>,
    /// Columns whose exit touches both the Dirichlet and Neumann parts.
    pub mixed_columns: Vec<usize>,
    /// Highest node index kept at `χ = 1` per column (`None` if none).
    pub wet_top: Vec<Option<usize>>,
}

/// Ratio `|Y(α₊)|/|Y(t)|·β(x, φ(x))/(H·ν)` of a column with Neumann exit.
pub fn dry_formula(grid: &CurvilinearGrid, pd: &ProblemData, i_w: usize, y_abs: f64) -> Result<f64, SolverError> {
    let c = &grid.columns[i_w];
    let top = &grid.nodes[grid.index(i_w, grid.n_s - 1)];
    let x = top.x;
    let b = pd.boundary_law(x, pd.datum(x)?)?;
    Ok(top.y.abs() / y_abs * b / c.flux)
}

/// Rebuilds `χ` from the free boundary `phi` (flow time per column, `None`
/// for a dry column): `1` up to the last node below `Φ`, the dry ratio above,
/// and on the first node past `Φ` the two mixed by the crossing fraction.
pub fn reconstruct_chi(grid: &CurvilinearGrid, pd: &ProblemData, phi: &[Option<f64>]) -> Result<Reconstruction, SolverError> {
    let mut chi = vec![0.0; grid.nodes.len()];
    let mut clamped = Vec::new();
    let mut mixed = Vec::new();
    let mut wet_top = Vec::with_capacity(grid.n_w);
    for i in 0..grid.n_w {
        let c = &grid.columns[i];
        let col = grid.column_nodes(i);
        let k_star = (0..grid.n_s)
            .rev()
            .find(|&j| phi[i].is_some_and(|p| col[j].t <= p));
        wet_top.push(k_star);
        if c.exit_on_gamma3 && c.exit_on_gamma2 {
            mixed.push(i);
        }
        let mut did_clamp = false;
        for j in 0..grid.n_s {
            let k = grid.index(i, j);
            chi[k] = if k_star.is_some_and(|ks| j <= ks) {
                1.0
            } else if c.exit_on_gamma3 {
                let v = dry_formula(grid, pd, i, col[j].y.abs())?;
                if !(0.0..=1.0).contains(&v) {
                    did_clamp = true;
                }
                v.clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        if did_clamp {
            clamped.push(i);
        }
    }
    Ok(Reconstruction {
        chi,
        clamped_columns: clamped,
        mixed_columns: mixed,
        wet_top,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub sweeps: usize,
    pub lcp_residual: f64,
    pub lcp_converged: bool,
    pub delta_chi: f64,
    pub delta_u: f64,
    pub u_max: f64,
    pub theta_tol: f64,
    pub clamped_columns: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionPair {
    pub u: Vec<f64>,
    pub chi: Vec<f64>,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
    pub theta_tol: f64,
    /// Free boundary per column (`None`: no support).
    pub phi: Vec<Option<f64>>,
    pub clamped_columns: Vec<usize>,
    pub mixed_columns: Vec<usize>,
    pub complementarity: f64,
    /// Largest value zeroed below `θ_tol` outside the wet set.
    pub truncated: f64,
    /// `max |χ − χ_blend|` between the returned `χ` and the blended one
    /// used in the last solve.
    pub closure: f64,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Free-boundary update of one column from the unconstrained solution `v`.
///
/// With a free boundary strictly inside the column, `v` on the first fully
/// dry node should vanish; its value divided by the wet-side slope gives a
/// Newton step for `Φ`. Otherwise the last crossing of `θ` is used.
fn update_boundary(grid: &CurvilinearGrid, v: &[f64], i: usize, old: Option<f64>, crossing: Option<f64>) -> Option<f64> {
    let col = grid.column_nodes(i);
    let n_s = grid.n_s;
    let (Some(p), Some(_)) = (old, crossing) else {
        return crossing;
    };
    let Some(ks) = (0..n_s).rev().find(|&j| col[j].t <= p) else {
        return crossing;
    };
    if ks < 1 || ks + 2 >= n_s {
        return crossing;
    }
    let at = |j: usize| v[grid.index(i, j)];
    let slope = (at(ks) - at(ks - 1)) / (col[ks].t - col[ks - 1].t);
    if slope >= 0.0 {
        return crossing;
    }
    let cell = col[ks + 1].t - col[ks].t;
    let step = (-at(ks + 2) / slope).clamp(-2.0 * cell, 2.0 * cell);
    Some((p + step).clamp(col[0].t, col[n_s - 1].t))
}

/// Anderson mixing of the free-boundary vector. The history restarts
/// whenever the set of columns with a free boundary changes.
struct Anderson {
    depth: usize,
    xs: Vec<Vec<f64>>,
    fs: Vec<Vec<f64>>,
    pattern: Vec<bool>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            xs: Vec::new(),
            fs: Vec::new(),
            pattern: Vec::new(),
        }
    }

    fn step(&mut self, grid: &CurvilinearGrid, old: &[Option<f64>], target: &[Option<f64>], omega: f64) -> Vec<Option<f64>> {
        let pattern: Vec<bool> = old.iter().zip(target).map(|(a, b)| a.is_some() && b.is_some()).collect();
        if pattern != self.pattern {
            self.xs.clear();
            self.fs.clear();
            self.pattern = pattern;
        }
        let idx: Vec<usize> = (0..old.len()).filter(|&i| self.pattern[i]).collect();
        let x: Vec<f64> = idx.iter().map(|&i| old[i].unwrap_or_default()).collect();
        let f: Vec<f64> = idx.iter().map(|&i| target[i].unwrap_or_default() - old[i].unwrap_or_default()).collect();
        let mut next: Vec<f64> = x.iter().zip(&f).map(|(x, f)| x + omega * f).collect();
        if let Some(last) = self.xs.len().checked_sub(1).filter(|_| !idx.is_empty()) {
            let m = self.xs.len();
            let n = idx.len();
            let dx = nalgebra::DMatrix::from_fn(n, m, |r, c| {
                let a = if c == last { &x } else { &self.xs[c + 1] };
                a[r] - self.xs[c][r]
            });
            let df = nalgebra::DMatrix::from_fn(n, m, |r, c| {
                let a = if c == last { &f } else { &self.fs[c + 1] };
                a[r] - self.fs[c][r]
            });
            let rhs = nalgebra::DVector::from_column_slice(&f);
            if let Ok(gamma) = df.clone().svd(true, true).solve(&rhs, 1e-12) {
                let corr = (dx + df * omega) * gamma;
                for (v, c) in next.iter_mut().zip(corr.iter()) {
                    *v -= c;
                }
            }
        }
        self.xs.push(x);
        self.fs.push(f);
        if self.xs.len() > self.depth {
            self.xs.remove(0);
            self.fs.remove(0);
        }
        let mut out: Vec<Option<f64>> = target.to_vec();
        for (r, &i) in idx.iter().enumerate() {
            let col = grid.column_nodes(i);
            out[i] = Some(next[r].clamp(col[0].t, col[grid.n_s - 1].t));
        }
        out
    }
}

/// Moves `χ` on the first node past each free boundary towards 1 by the
/// fraction of the cell that `Φ` covers, so that `χ` depends continuously
/// on `Φ`.
fn blend_interface(grid: &CurvilinearGrid, phi: &[Option<f64>], wet_top: &[Option<usize>], chi: &mut [f64]) {
    for i in 0..grid.n_w {
        let (Some(ks), Some(p)) = (wet_top[i], phi[i]) else {
            continue;
        };
        if ks + 1 >= grid.n_s {
            continue;
        }
        let col = grid.column_nodes(i);
        let f = ((p - col[ks].t) / (col[ks + 1].t - col[ks].t)).clamp(0.0, 1.0);
        let k = grid.index(i, ks + 1);
        chi[k] = f + (1.0 - f) * chi[k];
    }
}

/// Damped fixed point starting from `χ ≡ 1`.
///
/// Each outer step solves the system without the sign constraint, moves the
/// free boundary of every column (see [`update_boundary`]) with damping `ω`
/// and rebuilds `χ`, blending the first node past `Φ`. A last linear solve
/// holds `u = 0` above the blended node of each column. The returned `χ` is
/// rebuilt from the support of `u`, so `u > θ_tol` implies `χ = 1` exactly.
pub fn outer_fixed_point(
    pd: &ProblemData,
    grid: &CurvilinearGrid,
    sys: &DiscreteSystem,
    params: &SolverParams,
) -> Result<SolutionPair, SolverError> {
    if grid.t_low_mode == TLowMode::Zero {
        return Err(SolverError::ZeroMode);
    }
    let n = sys.len();
    let mut chi = vec![1.0; n];
    let mut phi: Vec<Option<f64>> = grid.columns.iter().map(|c| Some(c.alpha_plus)).collect();
    let mut v = vec![0.0; n];
    let mut trace = Vec::new();
    let spacing = grid.spacing();
    let mut converged = false;
    let mut mixer = Anderson::new(5);
    for it in 1..=params.max_outer {
        let lin = solve_linear(sys, grid, pd, &chi, &v, params)?;
        let vmax = sup(&lin.u);
        let theta = theta_tol(params, spacing, vmax);
        let crossing = extract_profile(grid, &lin.u, theta).phi;
        let target: Vec<Option<f64>> = (0..grid.n_w)
            .map(|i| update_boundary(grid, &lin.u, i, phi[i], crossing[i]))
            .collect();
        phi = mixer.step(grid, &phi, &target, params.omega);
        let mut rec = reconstruct_chi(grid, pd, &phi)?;
        blend_interface(grid, &phi, &rec.wet_top, &mut rec.chi);
        let dchi = max_diff(&chi, &rec.chi);
        let du = max_diff(&v, &lin.u);
        trace.push(TraceRow {
            iteration: it,
            sweeps: lin.sweeps,
            lcp_residual: lin.residual,
            lcp_converged: lin.converged,
            delta_chi: dchi,
            delta_u: du,
            u_max: vmax,
            theta_tol: theta,
            clamped_columns: rec.clamped_columns.len(),
        });
        chi = rec.chi;
        v = lin.u;
        if dchi <= params.outer_tol && du <= params.outer_tol * vmax && lin.converged {
            converged = true;
            break;
        }
    }

    // Final solve with u = 0 held above the blended node of every column,
    // relinearising β.
    let tops = reconstruct_chi(grid, pd, &phi)?.wet_top;
    let wet: Vec<bool> = (0..sys.len())
        .map(|k| tops[k / grid.n_s].is_some_and(|ks| k % grid.n_s <= ks + 1))
        .collect();
    let mut v = v;
    for _ in 0..50 {
        let out = solve_wet(sys, grid, pd, &chi, &v, params, &wet)?;
        let du = max_diff(&v, &out.u);
        converged &= out.converged;
        v = out.u;
        if du <= params.outer_tol * sup(&v) || !out.converged {
            break;
        }
    }
    let umax = sup(&v);
    let theta = theta_tol(params, spacing, umax);
    let profile = extract_profile(grid, &v, theta);
    let rec = reconstruct_chi(grid, pd, &profile.phi)?;
    let closure = max_diff(&chi, &rec.chi);
    let mut truncated = 0.0f64;
    let mut negative = 0.0f64;
    let mut u = v;
    for (x, c) in u.iter_mut().zip(&rec.chi) {
        if *c < 1.0 && *x <= theta {
            truncated = truncated.max(x.abs());
            *x = 0.0;
        } else if *x < 0.0 {
            negative = negative.max(-*x);
            *x = 0.0;
        }
    }
    let complementarity = u.iter().zip(&rec.chi).fold(0.0f64, |m, (a, c)| m.max((a * (1.0 - c)).abs()));
    Ok(SolutionPair {
        u,
        chi: rec.chi,
        converged: converged && negative <= theta,
        trace,
        theta_tol: theta,
        phi: profile.phi,
        clamped_columns: rec.clamped_columns,
        mixed_columns: rec.mixed_columns,
        complementarity,
        truncated,
        closure,
    })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
