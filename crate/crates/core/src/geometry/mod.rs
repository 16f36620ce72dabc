//! Boundary representation of the physical domain.
//!
//! The domain is one positively oriented closed loop of parametric arcs.
//! Each arc is labelled Dirichlet (`Gamma2`), Neumann (`Gamma3`) or neutral;
//! the Neumann arcs must form one connected run.

mod arc;
mod validate;

pub use arc::{ArcShape, BoundaryArc, CurveExprs, Label, Point};
pub(crate) use arc::{dot, lerp, norm, sub};
pub use validate::{validate, AssumptionCheck, CheckStatus, ValidationConstants, ValidationReport};

/// Relative width of the boundary band used by [`Domain::contains`].
pub const BAND_REL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("domain needs at least one arc")]
    Empty,
    #[error("arcs {0} and {1} do not join (gap {2:.3e})")]
    Gap(usize, usize, f64),
    #[error("arc {arc} has a vanishing tangent at s = {s}")]
    DegenerateTangent { arc: usize, s: f64 },
    #[error("boundary is not positively oriented (signed area {0:.3e})")]
    Orientation(f64),
    #[error("no Gamma2 arc")]
    NoGamma2,
    #[error("Gamma3 must be one nonempty connected run of arcs, found {0} runs")]
    Gamma3Runs(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Inside,
    Outside,
    Boundary,
}

/// Which coordinate the Neumann boundary is locally a graph over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphAxis {
    /// `x2 = σ(x1)` near the point.
    OverX1,
    /// `x1 = σ(x2)` near the point.
    OverX2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub arc: usize,
    pub s: f64,
    pub point: Point,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub arc: usize,
    pub s: f64,
    pub point: Point,
    /// Position along the probed segment, in `[0, 1]`.
    pub param: f64,
}

/// Junction between consecutive arcs whose tangent directions disagree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub after_arc: usize,
    pub point: Point,
    /// Angle between the incoming and outgoing tangents, radians.
    pub angle: f64,
}

#[derive(Debug, Clone)]
pub struct Domain {
    arcs: Vec<BoundaryArc>,
    bbox: [Point; 2],
    diameter: f64,
    corners: Vec<Corner>,
}

const SAMPLES_PER_CURVED_ARC: usize = 256;

impl Domain {
    pub fn new(arcs: Vec<BoundaryArc>) -> Result<Self, GeometryError> {
        if arcs.is_empty() {
            return Err(GeometryError::Empty);
        }
        let n = arcs.len();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut area = 0.0;
        for (i, arc) in arcs.iter().enumerate() {
            let samples = match arc.shape {
                ArcShape::Segment { .. } => 1,
                _ => SAMPLES_PER_CURVED_ARC,
            };
            for k in 0..=samples {
                let s = k as f64 / samples as f64;
                let p = arc.point(s);
                for d in 0..2 {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d]);
                }
                if norm(arc.derivative(s)) <= 1e-12 {
                    return Err(GeometryError::DegenerateTangent { arc: i, s });
                }
                if k < samples {
                    let q = arc.point((k + 1) as f64 / samples as f64);
                    area += 0.5 * (p[0] * q[1] - q[0] * p[1]);
                }
            }
        }
        let diameter = norm(sub(hi, lo));
        let mut corners = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            let end = arcs[i].point(1.0);
            let start = arcs[j].point(0.0);
            let gap = norm(sub(end, start));
            if gap > 1e-9 * diameter.max(1.0) {
                return Err(GeometryError::Gap(i, j, gap));
            }
            let t0 = arcs[i].derivative(1.0);
            let t1 = arcs[j].derivative(0.0);
            let cos = (dot(t0, t1) / (norm(t0) * norm(t1))).clamp(-1.0, 1.0);
            let angle = cos.acos();
            if angle > 1e-9 {
                corners.push(Corner {
                    after_arc: i,
                    point: end,
                    angle,
                });
            }
        }
        if area <= 0.0 {
            return Err(GeometryError::Orientation(area));
        }
        if !arcs.iter().any(|a| a.label == Label::Gamma2) {
            return Err(GeometryError::NoGamma2);
        }
        let runs = (0..n)
            .filter(|&i| arcs[i].label == Label::Gamma3 && arcs[(i + n - 1) % n].label != Label::Gamma3)
            .count();
        let all_gamma3 = arcs.iter().all(|a| a.label == Label::Gamma3);
        if runs != 1 || all_gamma3 {
            return Err(GeometryError::Gamma3Runs(runs));
        }
        Ok(Domain {
            arcs,
            bbox: [lo, hi],
            diameter,
            corners,
        })
    }

    /// Axis-aligned rectangle `[x1a, x1b] × [x2a, x2b]`, counter-clockwise from
    /// the bottom-left corner with labels `[bottom, right, top, left]`.
    pub fn rectangle(x1: (f64, f64), x2: (f64, f64), labels: [Label; 4]) -> Result<Self, GeometryError> {
        let (a, b, c, d) = ([x1.0, x2.0], [x1.1, x2.0], [x1.1, x2.1], [x1.0, x2.1]);
        Domain::new(vec![
            BoundaryArc::segment(a, b, labels[0]),
            BoundaryArc::segment(b, c, labels[1]),
            BoundaryArc::segment(c, d, labels[2]),
            BoundaryArc::segment(d, a, labels[3]),
        ])
    }

    pub fn arcs(&self) -> &[BoundaryArc] {
        &self.arcs
    }

    pub fn bbox(&self) -> [Point; 2] {
        self.bbox
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn band(&self) -> f64 {
        BAND_REL * self.diameter
    }

    /// Junctions where the boundary fails to be C¹.
    pub fn corners(&self) -> &[Corner] {
        &self.corners
    }

    pub fn has_neutral_part(&self) -> bool {
        self.arcs.iter().any(|a| a.label == Label::Neutral)
    }

    pub fn nearest(&self, p: Point) -> BoundaryPoint {
        let mut best = BoundaryPoint {
            arc: 0,
            s: 0.0,
            point: p,
            distance: f64::INFINITY,
        };
        for (i, arc) in self.arcs.iter().enumerate() {
            let (s, q, d) = arc.nearest(p);
            if d < best.distance {
                best = BoundaryPoint {
                    arc: i,
                    s,
                    point: q,
                    distance: d,
                };
            }
        }
        best
    }

    /// Classifies a point; the boundary band has width `1e-10·diameter`.
    pub fn contains(&self, p: Point) -> Location {
        self.contains_with_band(p, self.band())
    }

    pub fn contains_with_band(&self, p: Point, band: f64) -> Location {
        let [lo, hi] = self.bbox;
        if p[0] < lo[0] - band || p[0] > hi[0] + band || p[1] < lo[1] - band || p[1] > hi[1] + band {
            return Location::Outside;
        }
        if self.nearest(p).distance <= band {
            return Location::Boundary;
        }
        if self.ray_parity(p) {
            Location::Inside
        } else {
            Location::Outside
        }
    }

    fn ray_parity(&self, p: Point) -> bool {
        let mut crossings = Vec::new();
        let mut inside = false;
        for arc in &self.arcs {
            crossings.clear();
            arc.level_crossings(p[1], &mut crossings);
            for &s in &crossings {
                if arc.point(s)[0] > p[0] {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Unit tangent in the direction of increasing `s`.
    pub fn tangent(&self, arc: usize, s: f64) -> Result<Point, GeometryError> {
        let d = self.arcs[arc].derivative(s);
        let n = norm(d);
        if n <= 1e-12 {
            return Err(GeometryError::DegenerateTangent { arc, s });
        }
        Ok([d[0] / n, d[1] / n])
    }

    /// Outward unit normal; the loop is counter-clockwise so outward is the
    /// tangent rotated clockwise.
    pub fn normal(&self, arc: usize, s: f64) -> Result<Point, GeometryError> {
        let t = self.tangent(arc, s)?;
        Ok([t[1], -t[0]])
    }

    /// Signed distance to one arc, positive outside. Past the arc's ends the
    /// arc is continued by its end tangent line.
    pub fn signed_distance_to_arc(&self, arc: usize, p: Point) -> f64 {
        let (s, q, _) = self.arcs[arc].nearest(p);
        match self.normal(arc, s) {
            Ok(nu) => dot(sub(p, q), nu),
            Err(_) => f64::NAN,
        }
    }

    /// First point where the segment `p → q` leaves the open domain.
    pub fn first_crossing(&self, p: Point, q: Point) -> Option<Crossing> {
        self.first_leaving(p, q, |loc| loc != Location::Inside)
    }

    /// First point where the segment `p → q` lands strictly outside the
    /// closed domain. Used by orbits that start or slide along the boundary.
    pub fn first_exit(&self, p: Point, q: Point) -> Option<Crossing> {
        self.first_leaving(p, q, |loc| loc == Location::Outside)
    }

    fn first_leaving(&self, p: Point, q: Point, left: impl Fn(Location) -> bool) -> Option<Crossing> {
        const PROBES: usize = 64;
        let mut lo = 0.0;
        let mut hi = None;
        for k in 1..=PROBES {
            let t = k as f64 / PROBES as f64;
            if left(self.contains(lerp(p, q, t))) {
                hi = Some(t);
                break;
            }
            lo = t;
        }
        let mut hi = hi?;
        while hi - lo > 1e-12 {
            let m = 0.5 * (lo + hi);
            if left(self.contains(lerp(p, q, m))) {
                hi = m;
            } else {
                lo = m;
            }
        }
        let b = self.nearest(lerp(p, q, hi));
        Some(Crossing {
            arc: b.arc,
            s: b.s,
            point: b.point,
            param: hi,
        })
    }

    pub fn local_graph_axis(&self, arc: usize, s: f64) -> Result<GraphAxis, GeometryError> {
        let nu = self.normal(arc, s)?;
        Ok(if nu[1].abs() >= nu[0].abs() {
            GraphAxis::OverX1
        } else {
            GraphAxis::OverX2
        })
    }

    /// Labels of every arc within `tol` of `p`.
    pub fn labels_near(&self, p: Point, tol: f64) -> Vec<Label> {
        self.arcs
            .iter()
            .filter(|a| a.nearest(p).2 <= tol)
            .map(|a| a.label)
            .collect()
    }

    /// Intervals of `x1` where the horizontal line `x2 = y` is inside.
    pub fn horizontal_chords(&self, y: f64) -> Vec<(f64, f64)> {
        let mut xs = Vec::new();
        let mut buf = Vec::new();
        for arc in &self.arcs {
            buf.clear();
            arc.level_crossings(y, &mut buf);
            xs.extend(buf.iter().map(|&s| arc.point(s)[0]));
        }
        xs.sort_by(f64::total_cmp);
        xs.chunks_exact(2).map(|c| (c[0], c[1])).collect()
    }

    /// Points spread along arcs with the given label, with arc references.
    pub fn boundary_samples(&self, label: Label, count: usize) -> Vec<BoundaryPoint> {
        let arcs: Vec<usize> = (0..self.arcs.len()).filter(|&i| self.arcs[i].label == label).collect();
        if arcs.is_empty() || count == 0 {
            return Vec::new();
        }
        let per = count.div_ceil(arcs.len()).max(1);
        let mut out = Vec::with_capacity(per * arcs.len());
        for &i in &arcs {
            for k in 0..per {
                // open arcs: endpoints belong to the neighbours
                let s = (k as f64 + 0.5) / per as f64;
                out.push(BoundaryPoint {
                    arc: i,
                    s,
                    point: self.arcs[i].point(s),
                    distance: 0.0,
                });
            }
        }
        out
    }
}
