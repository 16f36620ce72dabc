//! Orbits of `X' = H(X)` started on the line `x2 = h`, their exit times,
//! the chart `(t, w) ↦ X(t, w)` and its Jacobian.
//!
//! Every orbit carries the state `(X, ∂X/∂w, ∫ div H)`, so the sensitivity and
//! the divergence integral share the trajectory's step sequence.
//!
//! ```
//! use fbflow::flow::{integrate_orbit, FlowOptions};
//! use fbflow::geometry::{Domain, Label};
//! use fbflow::problem::{FieldSources, ProblemData};
//!
//! let d = Domain::rectangle((0.0, 1.0), (0.25, 1.0),
//!     [Label::Gamma2, Label::Neutral, Label::Gamma3, Label::Neutral]).unwrap();
//! let pd = ProblemData::new(d, &FieldSources {
//!     h1: "0", h2: "x2", a: [["1", "0"], ["0", "1"]], beta: "z", phi: "0.5",
//! }).unwrap();
//! let orbit = integrate_orbit(&pd, 0.3, 0.5, &FlowOptions::default()).unwrap();
//! assert!((orbit.alpha_plus - 2f64.ln()).abs() < 1e-9);
//! ```

mod rk;

use serde::Serialize;

use crate::expr::ExprError;
use crate::geometry::{dot, norm, GraphAxis, Label, Location, Point};
use crate::problem::ProblemData;
use rk::{attempt, step_factor, RkError, Step};

/// `[x1, x2, ∂x1/∂w, ∂x2/∂w, ∫ div H dt]`
pub type State = [f64; 5];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("start point ({w}, {h}) is outside the domain")]
    OutsideDomain { w: f64, h: f64 },
    #[error("step size underflow on orbit w = {w} at t = {t} (near-tangential exit?)")]
    StepUnderflow { w: f64, t: f64 },
    #[error("orbit w = {w} did not leave the domain")]
    NoExit { w: f64 },
    #[error("orbit w = {w} exits through {label:?}, not Gamma3")]
    NotOnGamma3 { w: f64, label: Label },
    #[error("orbit w = {w} grazes the boundary at its exit (H·nu = {flux:.3e})")]
    Grazing { w: f64, flux: f64 },
    #[error("boundary at the exit of orbit w = {w} is not a graph over x1")]
    NotGraphOverX1 { w: f64 },
    #[error("chart inversion did not converge for ({0}, {1})")]
    InverseChart(f64, f64),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

impl From<RkError<ExprError>> for FlowError {
    fn from(e: RkError<ExprError>) -> Self {
        match e {
            RkError::Rhs(e) => FlowError::Expr(e),
            RkError::Underflow(t) | RkError::StepLimit(t) => FlowError::StepUnderflow { w: f64::NAN, t },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { rtol: 1e-10, atol: 1e-12 }
    }
}

/// Where an orbit leaves the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exit {
    pub t: f64,
    pub point: Point,
    pub arc: usize,
    pub s: f64,
    pub label: Label,
    /// `±H·ν` at the exit, signed by the direction of integration.
    pub flux: f64,
    /// True when `|H·ν|` is negligible against `|H|`.
    pub grazing: bool,
    /// Half-width of the uncertainty interval of `t`.
    pub uncertainty: f64,
}

#[derive(Debug, Clone)]
pub struct Orbit {
    pub w: f64,
    pub h: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub exit_minus: Exit,
    pub exit_plus: Exit,
    /// Steps sorted by increasing time.
    steps: Vec<Step<5>>,
    initial: State,
}

impl Orbit {
    /// Full state at time `t`, clamped to `[α₋, α₊]`.
    pub fn state(&self, t: f64) -> State {
        if self.steps.is_empty() {
            return self.initial;
        }
        let t = t.clamp(self.alpha_minus, self.alpha_plus);
        let i = self
            .steps
            .partition_point(|s| s.t0.max(s.t1()) < t)
            .min(self.steps.len() - 1);
        self.steps[i].eval(t)
    }

    pub fn position(&self, t: f64) -> Point {
        let y = self.state(t);
        [y[0], y[1]]
    }

    /// `∂X/∂w` at time `t`.
    pub fn sensitivity(&self, t: f64) -> Point {
        let y = self.state(t);
        [y[2], y[3]]
    }

    pub fn divergence_integral(&self, t: f64) -> f64 {
        self.state(t)[4]
    }

    /// `Y = -H2(w, h)·exp(∫₀ᵗ div H)`.
    pub fn jacobian_closed(&self, pd: &ProblemData, t: f64) -> Result<f64, FlowError> {
        let h2 = pd.drift([self.w, self.h])?[1];
        Ok(-h2 * self.divergence_integral(t).exp())
    }

    /// `det[H(X) | ∂X/∂w]`.
    pub fn jacobian_direct(&self, pd: &ProblemData, t: f64) -> Result<f64, FlowError> {
        let y = self.state(t);
        let hx = field(pd, [y[0], y[1]])?;
        Ok(hx[0] * y[3] - hx[1] * y[2])
    }

    /// Step boundaries `(t, state)` in increasing time, endpoints included.
    pub fn nodes(&self) -> Vec<(f64, State)> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        if let Some(first) = self.steps.first() {
            let (t, y) = if first.h >= 0.0 {
                (first.t0, first.y0())
            } else {
                (first.t1(), first.y1())
            };
            out.push((t, y));
        } else {
            out.push((0.0, self.initial));
        }
        for s in &self.steps {
            let (t, y) = if s.h >= 0.0 { (s.t1(), s.y1()) } else { (s.t0, s.y0()) };
            out.push((t, y));
        }
        out
    }
}

/// `H` evaluated with the collar rule: inside the bounding box enlarged by
/// `0.05·diam` the expression is used as is; farther out it is frozen at the
/// nearest boundary point.
fn collar_point(pd: &ProblemData, x: Point) -> Point {
    let [lo, hi] = pd.domain.bbox();
    let m = 0.05 * pd.domain.diameter();
    if x[0] >= lo[0] - m && x[0] <= hi[0] + m && x[1] >= lo[1] - m && x[1] <= hi[1] + m {
        x
    } else {
        pd.domain.nearest(x).point
    }
}

fn field(pd: &ProblemData, x: Point) -> Result<Point, ExprError> {
    pd.drift(collar_point(pd, x))
}

fn rhs(pd: &ProblemData, dir: f64, y: &State) -> Result<State, ExprError> {
    let x = collar_point(pd, [y[0], y[1]]);
    let h = pd.drift(x)?;
    let j = pd.drift_jacobian(x)?;
    Ok([
        dir * h[0],
        dir * h[1],
        dir * (j[0][0] * y[2] + j[0][1] * y[3]),
        dir * (j[1][0] * y[2] + j[1][1] * y[3]),
        dir * (j[0][0] + j[1][1]),
    ])
}

fn initial_state(w: f64, h: f64) -> State {
    [w, h, 1.0, 0.0, 0.0]
}

fn max_step(pd: &ProblemData, y: &State) -> Result<f64, ExprError> {
    let hx = field(pd, [y[0], y[1]])?;
    Ok(0.05 * pd.domain.diameter() / norm(hx).max(1e-300))
}

/// Integrates in direction `dir` (in `τ = dir·t`) until the orbit leaves the
/// closed domain. Returns the steps (in `τ`) and the exit.
fn run_until_exit(
    pd: &ProblemData,
    w: f64,
    h: f64,
    dir: f64,
    opts: &FlowOptions,
) -> Result<(Vec<Step<5>>, Exit), FlowError> {
    let y0 = initial_state(w, h);
    let mut f = |_t: f64, y: &State| rhs(pd, dir, y);

    if pd.domain.contains([w, h]) == Location::Boundary {
        let hx = field(pd, [w, h])?;
        let (arc, flux) = exit_arc(pd, [w, h], dir, hx);
        // tangential starts slide along the boundary
        if flux > 1e-8 * norm(hx) {
            let (s, point, _) = pd.domain.arcs()[arc].nearest([w, h]);
            let exit = Exit {
                t: 0.0,
                point,
                arc,
                s,
                label: pd.domain.arcs()[arc].label,
                flux,
                grazing: false,
                uncertainty: 0.0,
            };
            return Ok((Vec::new(), exit));
        }
    }

    let mut steps: Vec<Step<5>> = Vec::new();
    let (mut t, mut y) = (0.0, y0);
    let mut k1 = f(t, &y)?;
    let mut hstep = 1e-2 * max_step(pd, &y)?;
    for _ in 0..1_000_000 {
        let cap = max_step(pd, &y)?;
        hstep = hstep.min(cap);
        let a = attempt(&mut f, t, &y, &k1, hstep, opts.rtol, opts.atol)?;
        if a.err > 1.0 {
            hstep *= step_factor(a.err);
            if hstep < 1e-14 * (1.0 + t.abs()) {
                return Err(FlowError::StepUnderflow { w, t: dir * t });
            }
            continue;
        }
        let end = [a.y1[0], a.y1[1]];
        if pd.domain.contains(end) == Location::Outside {
            let (exit_step, exit) = locate_exit(pd, &mut f, &a.step, &k1, dir, opts)?;
            steps.push(exit_step);
            return Ok((steps, exit));
        }
        t += hstep;
        y = a.y1;
        k1 = a.k7;
        steps.push(a.step);
        hstep *= step_factor(a.err);
    }
    Err(FlowError::NoExit { w })
}

/// Among the arcs touching `p`, the one crossed most transversally in
/// direction `dir`, with its flux `dir·H·ν`.
fn exit_arc(pd: &ProblemData, p: Point, dir: f64, hx: Point) -> (usize, f64) {
    let near = pd.domain.nearest(p);
    let tol = near.distance + 1e-9 * pd.domain.diameter();
    let mut best = (near.arc, f64::NEG_INFINITY);
    for (i, arc) in pd.domain.arcs().iter().enumerate() {
        let (s, _, d) = arc.nearest(p);
        if d > tol {
            continue;
        }
        if let Ok(nu) = pd.domain.normal(i, s) {
            let flux = dir * dot(hx, nu);
            if flux > best.1 {
                best = (i, flux);
            }
        }
    }
    best
}

/// Finds the exit inside one accepted step: bisection of the dense output on
/// "outside", then secant polishing of the signed distance to the exit arc
/// using fresh single steps from the step start.
fn locate_exit(
    pd: &ProblemData,
    f: &mut impl FnMut(f64, &State) -> Result<State, ExprError>,
    step: &Step<5>,
    k1: &State,
    dir: f64,
    opts: &FlowOptions,
) -> Result<(Step<5>, Exit), FlowError> {
    let outside = |th: f64| {
        let y = step.eval_theta(th);
        pd.domain.contains([y[0], y[1]]) == Location::Outside
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-14 {
        let m = 0.5 * (lo + hi);
        if outside(m) {
            hi = m;
        } else {
            lo = m;
        }
    }
    let y_star = step.eval_theta(hi);
    let p_star = [y_star[0], y_star[1]];
    let (arc, _) = exit_arc(pd, p_star, dir, field(pd, p_star)?);
    let y0 = step.y0();
    let t0 = step.t0;
    let mut g = |tau: f64| -> Result<(f64, Step<5>), FlowError> {
        let a = attempt(f, t0, &y0, k1, tau, opts.rtol, opts.atol)?;
        Ok((pd.domain.signed_distance_to_arc(arc, [a.y1[0], a.y1[1]]), a.step))
    };
    let h = step.h;
    let mut x1 = hi * h;
    let (mut g1, s1) = g(x1)?;
    let mut x0 = (x1 - 1e-4 * h).max(0.0);
    let (mut g0, _) = g(x0)?;
    let mut best = (g1.abs(), x1, s1);
    for _ in 0..30 {
        if g1 == g0 || best.0 <= 1e-15 * pd.domain.diameter() {
            break;
        }
        let x2 = (x1 - g1 * (x1 - x0) / (g1 - g0)).clamp(0.0, h);
        let (g2, s2) = g(x2)?;
        x0 = x1;
        g0 = g1;
        x1 = x2;
        g1 = g2;
        if g1.abs() < best.0 {
            best = (g1.abs(), x1, s2);
        }
    }
    let (_, tau, exit_step) = best;
    let y = exit_step.y1();
    let p = [y[0], y[1]];
    let (s, q, _) = pd.domain.arcs()[arc].nearest(p);
    let hx = field(pd, p)?;
    let nu = pd.domain.normal(arc, s).map_err(|_| FlowError::Grazing { w: f64::NAN, flux: 0.0 })?;
    let flux = dir * dot(hx, nu);
    let hn = norm(hx);
    let tol = pd.domain.band() + opts.rtol * pd.domain.diameter();
    let uncertainty = (tol / flux.abs().max(1e-300)).min((tol * pd.domain.diameter()).sqrt() / hn.max(1e-300));
    Ok((
        exit_step,
        Exit {
            t: dir * (t0 + tau),
            point: q,
            arc,
            s,
            label: pd.domain.arcs()[arc].label,
            flux,
            grazing: flux <= 1e-8 * hn,
            uncertainty,
        },
    ))
}

/// Integrates the orbit through `(w, h)` in both directions until it leaves
/// the closed domain, together with `∂X/∂w` and `∫ div H`.
pub fn integrate_orbit(pd: &ProblemData, w: f64, h: f64, opts: &FlowOptions) -> Result<Orbit, FlowError> {
    if pd.domain.contains([w, h]) == Location::Outside {
        return Err(FlowError::OutsideDomain { w, h });
    }
    let with_w = |e: FlowError| match e {
        FlowError::StepUnderflow { t, .. } => FlowError::StepUnderflow { w, t },
        FlowError::Grazing { flux, .. } => FlowError::Grazing { w, flux },
        e => e,
    };
    let (fwd, exit_plus) = run_until_exit(pd, w, h, 1.0, opts).map_err(with_w)?;
    let (bwd, exit_minus) = run_until_exit(pd, w, h, -1.0, opts).map_err(with_w)?;
    // backward steps were taken in τ = -t; flip them into t
    let mut steps: Vec<Step<5>> = bwd.into_iter().rev().map(flip).collect();
    steps.extend(fwd);
    Ok(Orbit {
        w,
        h,
        alpha_minus: exit_minus.t,
        alpha_plus: exit_plus.t,
        exit_minus,
        exit_plus,
        steps,
        initial: initial_state(w, h),
    })
}

fn flip(s: Step<5>) -> Step<5> {
    // The backward right-hand side is -F, so in t = -τ the interpolant is the
    // same polynomial; only the time axis changes sign.
    s.reflect_time()
}

impl Step<5> {
    fn reflect_time(self) -> Self {
        let mut s = self;
        s.t0 = -s.t0;
        s.h = -s.h;
        s
    }
}

/// Flows the full state from `(w, h)` for time `t` without exit detection.
pub fn flow_state(pd: &ProblemData, w: f64, h: f64, t: f64, opts: &FlowOptions) -> Result<State, FlowError> {
    let y0 = initial_state(w, h);
    let cap = max_step(pd, &y0)?;
    let mut f = |_t: f64, y: &State| rhs(pd, 1.0, y);
    Ok(rk::integrate(&mut f, 0.0, y0, t, opts.rtol, opts.atol, cap)?)
}

/// Flows a point for time `t` (either sign) without exit detection.
pub fn flow_point(pd: &ProblemData, p: Point, t: f64, opts: &FlowOptions) -> Result<Point, FlowError> {
    let y = flow_state(pd, p[0], p[1], t, opts)?;
    Ok([y[0], y[1]])
}

/// Solves `X(t, w) = p` for `(t, w)` by Newton on the two chart equations.
pub fn inverse_chart(
    pd: &ProblemData,
    h: f64,
    p: Point,
    guess: (f64, f64),
    opts: &FlowOptions,
) -> Result<(f64, f64), FlowError> {
    let (mut t, mut w) = guess;
    let scale = pd.domain.diameter();
    for _ in 0..50 {
        let y = flow_state(pd, w, h, t, opts)?;
        let hx = field(pd, [y[0], y[1]])?;
        let r = [y[0] - p[0], y[1] - p[1]];
        if norm(r) <= 1e-13 * scale {
            return Ok((t, w));
        }
        // J = [H | q]
        let det = hx[0] * y[3] - hx[1] * y[2];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dt = (y[3] * r[0] - y[2] * r[1]) / det;
        let dw = (-hx[1] * r[0] + hx[0] * r[1]) / det;
        t -= dt;
        w -= dw;
    }
    Err(FlowError::InverseChart(p[0], p[1]))
}

/// `dσ/dx` of the exit arc as a graph over the given axis.
fn exit_slope(pd: &ProblemData, exit: &Exit) -> Result<(GraphAxis, f64, Point), FlowError> {
    let grazing = |_| FlowError::Grazing { w: f64::NAN, flux: 0.0 };
    let axis = pd.domain.local_graph_axis(exit.arc, exit.s).map_err(grazing)?;
    let tau = pd.domain.tangent(exit.arc, exit.s).map_err(grazing)?;
    let nu = pd.domain.normal(exit.arc, exit.s).map_err(grazing)?;
    let slope = match axis {
        GraphAxis::OverX1 => tau[1] / tau[0],
        GraphAxis::OverX2 => tau[0] / tau[1],
    };
    Ok((axis, slope, nu))
}

fn check_gamma3_exit(orbit: &Orbit) -> Result<(), FlowError> {
    let e = &orbit.exit_plus;
    if e.label != Label::Gamma3 {
        return Err(FlowError::NotOnGamma3 { w: orbit.w, label: e.label });
    }
    if e.grazing {
        return Err(FlowError::Grazing { w: orbit.w, flux: e.flux });
    }
    Ok(())
}

/// `α₊'(w)` by implicit differentiation of the exit condition.
pub fn alpha_plus_prime(pd: &ProblemData, orbit: &Orbit) -> Result<f64, FlowError> {
    check_gamma3_exit(orbit)?;
    let e = &orbit.exit_plus;
    let (axis, sp, _) = exit_slope(pd, e).map_err(|_| FlowError::Grazing { w: orbit.w, flux: e.flux })?;
    let q = orbit.sensitivity(orbit.alpha_plus);
    let hx = field(pd, orbit.position(orbit.alpha_plus))?;
    Ok(match axis {
        GraphAxis::OverX1 => (sp * q[0] - q[1]) / (hx[1] - sp * hx[0]),
        GraphAxis::OverX2 => (sp * q[1] - q[0]) / (hx[0] - sp * hx[1]),
    })
}

/// `θ'(w)` for `θ(w) = X1(α₊(w), w)`, exit arc a graph over `x1`.
pub fn theta_prime(pd: &ProblemData, orbit: &Orbit) -> Result<f64, FlowError> {
    check_gamma3_exit(orbit)?;
    let e = &orbit.exit_plus;
    let (axis, sp, nu) = exit_slope(pd, e).map_err(|_| FlowError::Grazing { w: orbit.w, flux: e.flux })?;
    if axis != GraphAxis::OverX1 {
        return Err(FlowError::NotGraphOverX1 { w: orbit.w });
    }
    let p = orbit.position(orbit.alpha_plus);
    let hx = field(pd, p)?;
    let y = orbit.jacobian_closed(pd, orbit.alpha_plus)?;
    Ok(y.abs() / (1.0 + sp * sp).sqrt() / dot(hx, nu))
}

/// Orbits of one chart, one per abscissa.
#[derive(Debug, Clone)]
pub struct FlowChart {
    pub h: f64,
    pub w_range: (f64, f64),
    pub orbits: Vec<Orbit>,
}

impl FlowChart {
    /// Integrates `n_w` uniformly spaced orbits (endpoints included) in parallel.
    pub fn build(
        pd: &ProblemData,
        h: f64,
        w_range: (f64, f64),
        n_w: usize,
        opts: &FlowOptions,
    ) -> Result<FlowChart, FlowError> {
        use rayon::prelude::*;
        let n = n_w.max(2);
        let orbits = (0..n)
            .into_par_iter()
            .map(|i| {
                let w = w_range.0 + (w_range.1 - w_range.0) * i as f64 / (n - 1) as f64;
                integrate_orbit(pd, w, h, opts)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FlowChart { h, w_range, orbits })
    }
}

#[cfg(test)]
mod tests;
