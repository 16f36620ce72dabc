//! The problem pulled back to flow coordinates `(t, w)` on a logically
//! rectangular grid: `t(w, s) = t_low(w) + s·(α₊(w) − t_low(w))`.
//!
//! Nodes are stored column by column, `k = i_w·n_s + j_s`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expr::ExprError;
use crate::flow::{alpha_plus_prime, integrate_orbit, inverse_chart, Exit, FlowError, FlowOptions, Orbit};
use crate::geometry::{dot, Label, Location, Point};
use crate::problem::ProblemData;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("grid needs at least 3 nodes per direction, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("abscissa {0} is not on the line x2 = {1} inside the domain")]
    WRange(f64, f64),
    #[error("column w = {w} leaves the domain tangentially")]
    Tangential { w: f64 },
    #[error("chart degenerate at node {node} (|Y| = {y:.3e})")]
    Degenerate { node: usize, y: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Lower limit of the flow-time coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TLowMode {
    /// The whole orbit, `t ≥ α₋(w)`.
    AlphaMinus,
    /// Only the part above the start line, `t ≥ 0`.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeTag {
    Interior,
    /// `u = 0` is imposed.
    Dirichlet,
    /// Carries the boundary law.
    Neumann,
    /// No-flux: neutral boundary or an artificial cut of the chart.
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridNode {
    pub w: f64,
    pub s: f64,
    pub t: f64,
    pub x: Point,
    /// `∂X/∂w`
    pub q: Point,
    /// Jacobian determinant of the chart (negative).
    pub y: f64,
    pub tag: NodeTag,
}

#[derive(Debug, Clone)]
pub struct Column {
    pub w: f64,
    pub t_low: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub exit: Exit,
    /// Exit point touches a Neumann arc.
    pub exit_on_gamma3: bool,
    /// Exit point touches a Dirichlet arc.
    pub exit_on_gamma2: bool,
    pub alpha_plus_prime: Option<f64>,
    /// `H·ν` at the exit.
    pub flux: f64,
    pub orbit: Orbit,
}

#[derive(Debug, Clone)]
pub struct CurvilinearGrid {
    pub h: f64,
    pub w_range: (f64, f64),
    pub n_w: usize,
    pub n_s: usize,
    pub t_low_mode: TLowMode,
    pub columns: Vec<Column>,
    pub nodes: Vec<GridNode>,
}

impl CurvilinearGrid {
    pub fn index(&self, i_w: usize, j_s: usize) -> usize {
        i_w * self.n_s + j_s
    }

    pub fn dw(&self) -> f64 {
        (self.w_range.1 - self.w_range.0) / (self.n_w - 1) as f64
    }

    pub fn ds(&self) -> f64 {
        1.0 / (self.n_s - 1) as f64
    }

    /// Largest cell extent in `(t, w)`.
    pub fn spacing(&self) -> f64 {
        let dt = self
            .columns
            .iter()
            .map(|c| (c.alpha_plus - c.t_low) * self.ds())
            .fold(0.0, f64::max);
        dt.max(self.dw())
    }

    pub fn column_nodes(&self, i_w: usize) -> &[GridNode] {
        &self.nodes[i_w * self.n_s..(i_w + 1) * self.n_s]
    }

    /// Field on the grid from a field on the domain.
    pub fn pullback(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|n| f(n.x)).collect()
    }

    /// Value at a physical point of a nodal field, through the inverse chart
    /// and bilinear interpolation in `(w, s)`.
    pub fn pushforward(&self, pd: &ProblemData, values: &[f64], p: Point, opts: &FlowOptions) -> Result<f64, TransformError> {
        let (t, w) = self.locate(pd, p, opts)?;
        Ok(self.interpolate(values, t, w))
    }

    /// `(t, w)` of a physical point, by Newton from the nearest node.
    pub fn locate(&self, pd: &ProblemData, p: Point, opts: &FlowOptions) -> Result<(f64, f64), TransformError> {
        let start = self
            .nodes
            .iter()
            .min_by(|a, b| {
                let da = (a.x[0] - p[0]).hypot(a.x[1] - p[1]);
                let db = (b.x[0] - p[0]).hypot(b.x[1] - p[1]);
                da.total_cmp(&db)
            })
            .expect("grid has nodes");
        Ok(inverse_chart(pd, self.h, p, (start.t, start.w), opts)?)
    }

    /// Bilinear interpolation in logical coordinates.
    pub fn interpolate(&self, values: &[f64], t: f64, w: f64) -> f64 {
        let fw = ((w - self.w_range.0) / self.dw()).clamp(0.0, (self.n_w - 1) as f64);
        let i = (fw.floor() as usize).min(self.n_w - 2);
        let a = fw - i as f64;
        let s_of = |c: &Column| ((t - c.t_low) / (c.alpha_plus - c.t_low)).clamp(0.0, 1.0);
        // s varies with w through the column limits; interpolate the limits too
        let (c0, c1) = (&self.columns[i], &self.columns[i + 1]);
        let t_low = (1.0 - a) * c0.t_low + a * c1.t_low;
        let t_up = (1.0 - a) * c0.alpha_plus + a * c1.alpha_plus;
        let s = if t_up > t_low {
            ((t - t_low) / (t_up - t_low)).clamp(0.0, 1.0)
        } else {
            s_of(c0)
        };
        let fs = s * (self.n_s - 1) as f64;
        let j = (fs.floor() as usize).min(self.n_s - 2);
        let b = fs - j as f64;
        let v = |ii: usize, jj: usize| values[self.index(ii, jj)];
        (1.0 - a) * ((1.0 - b) * v(i, j) + b * v(i, j + 1)) + a * ((1.0 - b) * v(i + 1, j) + b * v(i + 1, j + 1))
    }
}

fn tag_node(pd: &ProblemData, x: Point, j_s: usize, n_s: usize, side: bool) -> NodeTag {
    let on_face = j_s == 0 || j_s + 1 == n_s || side;
    if !on_face {
        return NodeTag::Interior;
    }
    let tol = 1e-9 * pd.domain.diameter();
    let labels = pd.domain.labels_near(x, tol);
    if labels.is_empty() {
        // a cut through the interior of the domain
        return NodeTag::Natural;
    }
    if labels.contains(&Label::Gamma2) {
        NodeTag::Dirichlet
    } else if labels.contains(&Label::Gamma3) && j_s + 1 == n_s {
        NodeTag::Neumann
    } else {
        NodeTag::Natural
    }
}

/// Integrates one orbit per column and places `n_s` nodes along each.
pub fn build_grid(
    pd: &ProblemData,
    h: f64,
    w_range: (f64, f64),
    n_w: usize,
    n_s: usize,
    mode: TLowMode,
    opts: &FlowOptions,
) -> Result<CurvilinearGrid, TransformError> {
    if n_w < 3 || n_s < 3 {
        return Err(TransformError::TooSmall(n_w, n_s));
    }
    let ws: Vec<f64> = (0..n_w)
        .map(|i| w_range.0 + (w_range.1 - w_range.0) * i as f64 / (n_w - 1) as f64)
        .collect();
    let chords = pd.domain.horizontal_chords(h);
    let slack = 1e-9 * pd.domain.diameter();
    if !chords.is_empty()
        && !chords
            .iter()
            .any(|&(a, b)| a - slack <= w_range.0 && w_range.1 <= b + slack)
    {
        return Err(TransformError::WRange(w_range.0, h));
    }
    for &w in &ws {
        if pd.domain.contains([w, h]) == Location::Outside {
            return Err(TransformError::WRange(w, h));
        }
    }
    let tol = 1e-9 * pd.domain.diameter();

    let per_column: Vec<(Column, Vec<GridNode>)> = ws
        .par_iter()
        .enumerate()
        .map(|(i, &w)| -> Result<_, TransformError> {
            let orbit = integrate_orbit(pd, w, h, opts)?;
            let exit = orbit.exit_plus;
            if exit.grazing {
                return Err(TransformError::Tangential { w });
            }
            let labels = pd.domain.labels_near(orbit.position(orbit.alpha_plus), tol);
            let exit_on_gamma3 = labels.contains(&Label::Gamma3);
            let exit_on_gamma2 = labels.contains(&Label::Gamma2);
            let t_low = match mode {
                TLowMode::AlphaMinus => orbit.alpha_minus,
                TLowMode::Zero => 0.0,
            };
            let alpha_prime = if exit_on_gamma3 && exit.label == Label::Gamma3 {
                Some(alpha_plus_prime(pd, &orbit)?)
            } else {
                None
            };
            let side = i == 0 || i + 1 == n_w;
            let mut nodes = Vec::with_capacity(n_s);
            for j in 0..n_s {
                let s = j as f64 / (n_s - 1) as f64;
                let t = if j + 1 == n_s {
                    orbit.alpha_plus
                } else {
                    t_low + s * (orbit.alpha_plus - t_low)
                };
                let st = orbit.state(t);
                let y = orbit.jacobian_closed(pd, t)?;
                let x = [st[0], st[1]];
                nodes.push(GridNode {
                    w,
                    s,
                    t,
                    x,
                    q: [st[2], st[3]],
                    y,
                    tag: tag_node(pd, x, j, n_s, side),
                });
            }
            let column = Column {
                w,
                t_low,
                alpha_minus: orbit.alpha_minus,
                alpha_plus: orbit.alpha_plus,
                exit,
                exit_on_gamma3,
                exit_on_gamma2,
                alpha_plus_prime: alpha_prime,
                flux: exit.flux,
                orbit,
            };
            Ok((column, nodes))
        })
        .collect::<Result<_, _>>()?;

    let mut columns = Vec::with_capacity(n_w);
    let mut nodes = Vec::with_capacity(n_w * n_s);
    for (c, ns) in per_column {
        columns.push(c);
        nodes.extend(ns);
    }
    for (k, n) in nodes.iter().enumerate() {
        if !(n.y < 0.0 && n.y.is_finite()) || n.y.abs() < 1e-14 {
            return Err(TransformError::Degenerate { node: k, y: n.y });
        }
    }
    Ok(CurvilinearGrid {
        h,
        w_range,
        n_w,
        n_s,
        t_low_mode: mode,
        columns,
        nodes,
    })
}

#[derive(Debug, Clone)]
pub struct TransformedCoefficients {
    /// `|Y|·Pᵀ a(X) P` in `(t, w)` ordering, per node.
    pub a: Vec<[[f64; 2]; 2]>,
    /// `|Y|` per node.
    pub h: Vec<f64>,
    /// Unit drift direction in `(t, w)`.
    pub e_t: [f64; 2],
    /// Boundary weight per column; `None` when the column does not exit
    /// through the Neumann part.
    pub mu: Vec<Option<f64>>,
    /// `|Y(α₊)|/(H·ν)` at the exit, the weight of the boundary law per `dw`.
    pub boundary_weight: Vec<Option<f64>>,
    /// Smallest eigenvalue of `sym(a)` over all nodes.
    pub min_ellipticity: f64,
    /// Smallest `|Y|·σ_min(P)²` over all nodes; `min_ellipticity` is at least
    /// the physical ellipticity constant times this.
    pub min_metric: f64,
}

impl TransformedCoefficients {
    /// Transformed boundary law `λ = μ(w)·β(T_h(t, w), z)` at a top node.
    pub fn boundary_law(&self, pd: &ProblemData, grid: &CurvilinearGrid, i_w: usize, z: f64) -> Option<Result<f64, ExprError>> {
        let mu = self.mu[i_w]?;
        let x = grid.nodes[grid.index(i_w, grid.n_s - 1)].x;
        Some(pd.boundary_law(x, z).map(|b| mu * b))
    }
}

/// `P = (ᵗJ)⁻¹` with `J = [H | ∂X/∂w]`.
pub fn chart_p(hx: Point, q: Point, y: f64) -> [[f64; 2]; 2] {
    [[q[1] / y, -hx[1] / y], [-q[0] / y, hx[0] / y]]
}

fn sym_min_eig(a: [[f64; 2]; 2]) -> f64 {
    let off = 0.5 * (a[0][1] + a[1][0]);
    0.5 * (a[0][0] + a[1][1]) - (0.5 * (a[0][0] - a[1][1])).hypot(off)
}

pub fn coefficients(grid: &CurvilinearGrid, pd: &ProblemData) -> Result<TransformedCoefficients, TransformError> {
    let mut a = Vec::with_capacity(grid.nodes.len());
    let mut hw = Vec::with_capacity(grid.nodes.len());
    let mut min_ell = f64::INFINITY;
    let mut min_metric = f64::INFINITY;
    for (k, n) in grid.nodes.iter().enumerate() {
        if n.y.abs() < 1e-14 {
            return Err(TransformError::Degenerate { node: k, y: n.y });
        }
        let hx = pd.drift(n.x)?;
        let ax = pd.diffusion(n.x)?;
        let p = chart_p(hx, n.q, n.y);
        let yabs = n.y.abs();
        let mut at = [[0.0; 2]; 2];
        for (i, row) in at.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for r in 0..2 {
                    for c in 0..2 {
                        acc += p[r][i] * ax[r][c] * p[c][j];
                    }
                }
                *v = yabs * acc;
            }
        }
        min_ell = min_ell.min(sym_min_eig(at));
        let ptp = [
            [p[0][0] * p[0][0] + p[1][0] * p[1][0], p[0][0] * p[0][1] + p[1][0] * p[1][1]],
            [p[0][0] * p[0][1] + p[1][0] * p[1][1], p[0][1] * p[0][1] + p[1][1] * p[1][1]],
        ];
        min_metric = min_metric.min(yabs * sym_min_eig(ptp));
        a.push(at);
        hw.push(yabs);
    }
    let mut mu = Vec::with_capacity(grid.n_w);
    let mut weight = Vec::with_capacity(grid.n_w);
    for (i, c) in grid.columns.iter().enumerate() {
        match c.alpha_plus_prime {
            Some(ap) => {
                let top = grid.nodes[grid.index(i, grid.n_s - 1)];
                let nu = pd
                    .domain
                    .normal(c.exit.arc, c.exit.s)
                    .map_err(|_| TransformError::Tangential { w: c.w })?;
                let hn = dot(pd.drift(top.x)?, nu);
                if hn <= 0.0 {
                    return Err(TransformError::Tangential { w: c.w });
                }
                let g = top.y.abs() / hn;
                weight.push(Some(g));
                mu.push(Some(g / (1.0 + ap * ap).sqrt()));
            }
            None => {
                weight.push(None);
                mu.push(None);
            }
        }
    }
    Ok(TransformedCoefficients {
        a,
        h: hw,
        e_t: [1.0, 0.0],
        mu,
        boundary_weight: weight,
        min_ellipticity: min_ell,
        min_metric,
    })
}
