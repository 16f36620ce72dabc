use serde::{Deserialize, Serialize};

use crate::expr::{Bindings, Expr, ExprError, Var};

pub type Point = [f64; 2];

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

pub(crate) fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Which part of the boundary an arc belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    /// Homogeneous Dirichlet part.
    Gamma2,
    /// Neumann part carrying the boundary law.
    Gamma3,
    /// Remaining boundary, treated as no-flux.
    Neutral,
}

#[derive(Debug, Clone)]
pub enum ArcShape {
    Segment {
        from: Point,
        to: Point,
    },
    /// Angles in radians; the arc runs from `start_angle` to `end_angle`,
    /// counter-clockwise when `end_angle > start_angle`.
    Circular {
        center: Point,
        radius: f64,
        start_angle: f64,
        end_angle: f64,
    },
    /// `s ↦ (x1(s), x2(s))` for `s ∈ [0, 1]`.
    Curve(Box<CurveExprs>),
}

#[derive(Debug, Clone)]
pub struct CurveExprs {
    pub x1: Expr,
    pub x2: Expr,
    dx1: Expr,
    dx2: Expr,
    ddx1: Expr,
    ddx2: Expr,
}

impl CurveExprs {
    pub fn new(x1: Expr, x2: Expr) -> Self {
        let dx1 = x1.derive(Var::S);
        let dx2 = x2.derive(Var::S);
        CurveExprs {
            ddx1: dx1.derive(Var::S),
            ddx2: dx2.derive(Var::S),
            x1,
            x2,
            dx1,
            dx2,
        }
    }
}

/// One parametric piece of the boundary, parameter `s ∈ [0, 1]`.
#[derive(Debug, Clone)]
pub struct BoundaryArc {
    pub shape: ArcShape,
    pub label: Label,
}

fn eval_s(e: &Expr, s: f64) -> f64 {
    // Curves are checked at construction; a failure here means the
    // parameter strayed far outside [0, 1].
    e.eval(&Bindings::param(s)).unwrap_or(f64::NAN)
}

impl BoundaryArc {
    pub fn segment(from: Point, to: Point, label: Label) -> Self {
        BoundaryArc {
            shape: ArcShape::Segment { from, to },
            label,
        }
    }

    pub fn circular(center: Point, radius: f64, start_angle: f64, end_angle: f64, label: Label) -> Self {
        BoundaryArc {
            shape: ArcShape::Circular {
                center,
                radius,
                start_angle,
                end_angle,
            },
            label,
        }
    }

    pub fn curve(x1: Expr, x2: Expr, label: Label) -> Result<Self, ExprError> {
        for s in [0.0, 0.5, 1.0] {
            x1.eval(&Bindings::param(s))?;
            x2.eval(&Bindings::param(s))?;
        }
        Ok(BoundaryArc {
            shape: ArcShape::Curve(Box::new(CurveExprs::new(x1, x2))),
            label,
        })
    }

    pub fn point(&self, s: f64) -> Point {
        match &self.shape {
            ArcShape::Segment { from, to } => lerp(*from, *to, s),
            ArcShape::Circular {
                center,
                radius,
                start_angle,
                end_angle,
            } => {
                let th = start_angle + s * (end_angle - start_angle);
                [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            }
            ArcShape::Curve(c) => [eval_s(&c.x1, s), eval_s(&c.x2, s)],
        }
    }

    /// Derivative of the parametrization (not normalized).
    pub fn derivative(&self, s: f64) -> Point {
        match &self.shape {
            ArcShape::Segment { from, to } => sub(*to, *from),
            ArcShape::Circular {
                radius,
                start_angle,
                end_angle,
                ..
            } => {
                let span = end_angle - start_angle;
                let th = start_angle + s * span;
                [-radius * span * th.sin(), radius * span * th.cos()]
            }
            ArcShape::Curve(c) => [eval_s(&c.dx1, s), eval_s(&c.dx2, s)],
        }
    }

    fn second_derivative(&self, s: f64) -> Point {
        match &self.shape {
            ArcShape::Segment { .. } => [0.0, 0.0],
            ArcShape::Circular {
                radius,
                start_angle,
                end_angle,
                ..
            } => {
                let span = end_angle - start_angle;
                let th = start_angle + s * span;
                [-radius * span * span * th.cos(), -radius * span * span * th.sin()]
            }
            ArcShape::Curve(c) => [eval_s(&c.ddx1, s), eval_s(&c.ddx2, s)],
        }
    }

    /// Closest point on the arc: `(s, point, distance)`.
    pub fn nearest(&self, p: Point) -> (f64, Point, f64) {
        let s = match &self.shape {
            ArcShape::Segment { from, to } => {
                let d = sub(*to, *from);
                let len2 = dot(d, d);
                if len2 == 0.0 {
                    0.0
                } else {
                    (dot(sub(p, *from), d) / len2).clamp(0.0, 1.0)
                }
            }
            ArcShape::Circular {
                center,
                start_angle,
                end_angle,
                ..
            } => {
                let rel = sub(p, *center);
                let (lo, hi) = (start_angle.min(*end_angle), start_angle.max(*end_angle));
                let mut th = rel[1].atan2(rel[0]);
                let two_pi = std::f64::consts::TAU;
                while th < lo {
                    th += two_pi;
                }
                while th >= lo + two_pi {
                    th -= two_pi;
                }
                if th <= hi {
                    (th - start_angle) / (end_angle - start_angle)
                } else {
                    let d0 = norm(sub(p, self.point(0.0)));
                    let d1 = norm(sub(p, self.point(1.0)));
                    if d0 <= d1 {
                        0.0
                    } else {
                        1.0
                    }
                }
            }
            ArcShape::Curve(_) => self.nearest_param_numeric(p),
        };
        let q = self.point(s);
        (s, q, norm(sub(p, q)))
    }

    fn nearest_param_numeric(&self, p: Point) -> f64 {
        const SAMPLES: usize = 64;
        let dist2 = |s: f64| {
            let d = sub(self.point(s), p);
            dot(d, d)
        };
        let mut best = 0.0;
        let mut best_d = f64::INFINITY;
        for k in 0..=SAMPLES {
            let s = k as f64 / SAMPLES as f64;
            let d = dist2(s);
            if d < best_d {
                best_d = d;
                best = s;
            }
        }
        // Newton on g(s) = (P(s) - p)·P'(s), kept inside the bracketing cell
        let (lo, hi) = (
            (best - 1.0 / SAMPLES as f64).max(0.0),
            (best + 1.0 / SAMPLES as f64).min(1.0),
        );
        let mut s = best;
        for _ in 0..50 {
            let r = sub(self.point(s), p);
            let d1 = self.derivative(s);
            let d2 = self.second_derivative(s);
            let g = dot(r, d1);
            let dg = dot(d1, d1) + dot(r, d2);
            if dg <= 0.0 {
                break;
            }
            let next = (s - g / dg).clamp(lo, hi);
            if (next - s).abs() < 1e-15 {
                s = next;
                break;
            }
            s = next;
        }
        if dist2(s) <= best_d {
            s
        } else {
            best
        }
    }

    /// Parameters where the arc meets the horizontal line `x2 = y`, found by
    /// sign changes of `x2(s) - y` treating zero as "above".
    pub(crate) fn level_crossings(&self, y: f64, out: &mut Vec<f64>) {
        match &self.shape {
            ArcShape::Segment { from, to } => {
                if (from[1] >= y) != (to[1] >= y) {
                    out.push((y - from[1]) / (to[1] - from[1]));
                }
            }
            _ => {
                const SAMPLES: usize = 64;
                let f = |s: f64| self.point(s)[1] - y;
                let mut s0 = 0.0;
                let mut f0 = f(0.0);
                for k in 1..=SAMPLES {
                    let s1 = k as f64 / SAMPLES as f64;
                    let f1 = f(s1);
                    if (f0 >= 0.0) != (f1 >= 0.0) {
                        let (mut a, mut b) = (s0, s1);
                        let above_a = f0 >= 0.0;
                        for _ in 0..60 {
                            let m = 0.5 * (a + b);
                            if (f(m) >= 0.0) == above_a {
                                a = m;
                            } else {
                                b = m;
                            }
                        }
                        out.push(0.5 * (a + b));
                    }
                    s0 = s1;
                    f0 = f1;
                }
            }
        }
    }
}
