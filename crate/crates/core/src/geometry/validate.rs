use serde::Serialize;

use super::{Label, Point};
use crate::expr::Bindings;
use crate::geometry::Location;
use crate::problem::ProblemData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Qualitative assumption that sampling can only make plausible.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub description: &'static str,
    pub status: CheckStatus,
    /// Smallest observed slack (negative when violated); NaN when the check has no margin.
    pub worst_margin: f64,
    pub witness: Option<Point>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationConstants {
    /// Ellipticity lower bound.
    pub lambda: f64,
    /// Entry bound `|a_ij| ≤ Λ`.
    pub big_lambda: f64,
    pub h_lower: f64,
    pub h_upper: f64,
    pub min_div_h: f64,
    pub min_h_dot_nu: f64,
    /// Bound in `div(a(x)(x - y)) ≤ c0`.
    pub c0: f64,
    pub interior_samples: usize,
    pub boundary_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    pub constants: ValidationConstants,
    /// True when part of the boundary is neither Dirichlet nor Neumann; that
    /// part is handled as no-flux.
    pub natural_boundary: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

struct Tracker {
    worst: f64,
    witness: Option<Point>,
    error: Option<(Point, String)>,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            worst: f64::INFINITY,
            witness: None,
            error: None,
        }
    }

    fn see(&mut self, p: Point, margin: Result<f64, crate::expr::ExprError>) {
        match margin {
            Ok(m) => {
                if m < self.worst {
                    self.worst = m;
                    self.witness = Some(p);
                }
            }
            Err(e) => {
                if self.error.is_none() {
                    self.error = Some((p, e.to_string()));
                }
            }
        }
    }

    fn finish(self, id: &'static str, description: &'static str, ok: impl Fn(f64) -> bool) -> AssumptionCheck {
        if let Some((p, msg)) = self.error {
            return AssumptionCheck {
                id,
                description,
                status: CheckStatus::Fail,
                worst_margin: f64::NAN,
                witness: Some(p),
                note: Some(msg),
            };
        }
        let pass = self.witness.is_none() || ok(self.worst);
        AssumptionCheck {
            id,
            description,
            status: if pass { CheckStatus::Pass } else { CheckStatus::Fail },
            worst_margin: if self.witness.is_some() { self.worst } else { f64::NAN },
            witness: self.witness,
            note: None,
        }
    }
}

fn interior_lattice(pd: &ProblemData, n: usize) -> Vec<Point> {
    let [lo, hi] = pd.domain.bbox();
    let mut pts = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let p = [
                lo[0] + (i as f64 + 0.5) / n as f64 * (hi[0] - lo[0]),
                lo[1] + (j as f64 + 0.5) / n as f64 * (hi[1] - lo[1]),
            ];
            if pd.domain.contains(p) == Location::Inside {
                pts.push(p);
            }
        }
    }
    pts
}

fn sym_min_eig(a: [[f64; 2]; 2]) -> f64 {
    let off = 0.5 * (a[0][1] + a[1][0]);
    let mean = 0.5 * (a[0][0] + a[1][1]);
    let half = 0.5 * (a[0][0] - a[1][1]);
    mean - half.hypot(off)
}

/// Samples the structural assumptions on the problem data.
///
/// `samples` is the interior lattice density per axis; the boundary is
/// sampled at `boundary_samples` points along the Neumann arcs.
pub fn validate(pd: &ProblemData, samples: usize, boundary_samples: usize) -> ValidationReport {
    let interior = interior_lattice(pd, samples);
    let gamma3 = pd.domain.boundary_samples(Label::Gamma3, boundary_samples);
    let mut consts = ValidationConstants {
        interior_samples: interior.len(),
        boundary_samples: gamma3.len(),
        ..Default::default()
    };
    let mut checks = Vec::new();

    // entry bound and ellipticity
    let mut entries = Tracker::new();
    let mut ellip = Tracker::new();
    let mut big_lambda: f64 = 0.0;
    for &p in &interior {
        match pd.diffusion(p) {
            Ok(a) => {
                let m = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
                big_lambda = big_lambda.max(m);
                entries.see(p, Ok(-m));
                ellip.see(p, Ok(sym_min_eig(a)));
            }
            Err(e) => {
                entries.see(p, Err(e.clone()));
                ellip.see(p, Err(e));
            }
        }
    }
    consts.big_lambda = big_lambda;
    consts.lambda = ellip.worst;
    checks.push(entries.finish("a_bounded", "|a_ij| bounded", |m| m.is_finite()));
    checks.push(ellip.finish("a_elliptic", "a uniformly elliptic", |m| m > 0.0));

    // bounds on H, sampled in the interior and on Γ3
    let mut h1 = Tracker::new();
    let mut h2 = Tracker::new();
    let mut h_upper: f64 = 0.0;
    let h_points: Vec<Point> = interior.iter().copied().chain(gamma3.iter().map(|b| b.point)).collect();
    for &p in &h_points {
        match pd.drift(p) {
            Ok(h) => {
                h_upper = h_upper.max(h[0].abs()).max(h[1]);
                h1.see(p, Ok(-h[0].abs()));
                h2.see(p, Ok(h[1]));
            }
            Err(e) => {
                h1.see(p, Err(e.clone()));
                h2.see(p, Err(e));
            }
        }
    }
    consts.h_upper = h_upper;
    consts.h_lower = h2.worst;
    checks.push(h1.finish("h1_bounded", "|H1| bounded", |m| m.is_finite()));
    checks.push(h2.finish("h2_positive", "H2 bounded below by a positive constant", |m| m > 0.0));

    // div H >= 0
    let mut div = Tracker::new();
    for &p in &interior {
        div.see(p, pd.divergence(p));
    }
    consts.min_div_h = div.worst;
    checks.push(div.finish("div_h_nonnegative", "div H >= 0", |m| m >= -1e-12));

    // H·ν > 0 on Γ3
    let mut flux = Tracker::new();
    for b in &gamma3 {
        let nu = pd.domain.normal(b.arc, b.s);
        let m = match nu {
            Ok(nu) => pd.drift(b.point).map(|h| h[0] * nu[0] + h[1] * nu[1]),
            Err(_) => Ok(f64::NEG_INFINITY),
        };
        flux.see(b.point, m);
    }
    consts.min_h_dot_nu = flux.worst;
    checks.push(flux.finish("outward_flux", "H·nu > 0 on Gamma3", |m| m > 0.0));

    // boundary law along Γ3
    let phi_scale = gamma3
        .iter()
        .filter_map(|b| pd.datum(b.point).ok())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let zmax = 2.0 * phi_scale;
    const NZ: usize = 65;
    let stride = (gamma3.len() / 64).max(1);
    let mut cont = Tracker::new();
    let mut zero = Tracker::new();
    let mut mono = Tracker::new();
    for b in gamma3.iter().step_by(stride) {
        let p = b.point;
        zero.see(p, pd.boundary_law(p, 0.0).map(|v| -v.abs()));
        let mut prev: Option<f64> = None;
        for k in 0..NZ {
            let z = -zmax + 2.0 * zmax * k as f64 / (NZ - 1) as f64;
            match pd.boundary_law(p, z) {
                Ok(v) => {
                    cont.see(p, Ok(0.0));
                    if let Some(pv) = prev {
                        mono.see(p, Ok(v - pv));
                    }
                    prev = Some(v);
                }
                Err(e) => cont.see(p, Err(e)),
            }
        }
    }
    checks.push(cont.finish("beta_continuous", "beta(x, .) continuous (finite on samples)", |_| true));
    checks.push(zero.finish("beta_zero", "beta(x, 0) = 0", |m| m >= -1e-14));
    checks.push(mono.finish("beta_monotone", "beta(x, .) non-decreasing", |m| m >= -1e-12 * phi_scale));

    // regularity is not decidable by sampling
    let smooth_note = |what: &str| Some(format!("{what} is given by smooth expressions; regularity assumed, not proved"));
    checks.push(AssumptionCheck {
        id: "h_regular",
        description: "H locally C^{1,1}",
        status: CheckStatus::Sampled,
        worst_margin: f64::NAN,
        witness: None,
        note: smooth_note("H"),
    });
    checks.push(AssumptionCheck {
        id: "a_regular",
        description: "a locally Holder continuous up to Gamma3",
        status: CheckStatus::Sampled,
        worst_margin: f64::NAN,
        witness: None,
        note: smooth_note("a"),
    });

    // div(a(x)(x - y)) <= c0 over sampled pairs
    let xs: Vec<Point> = interior.iter().step_by((interior.len() / 256).max(1)).copied().collect();
    let mut ys = xs.clone();
    ys.extend(
        pd.domain
            .boundary_samples(Label::Gamma2, 64)
            .into_iter()
            .chain(pd.domain.boundary_samples(Label::Gamma3, 64))
            .chain(pd.domain.boundary_samples(Label::Neutral, 64))
            .map(|b| b.point),
    );
    let mut c0 = Tracker::new();
    for &x in &xs {
        let b = Bindings::xy(x[0], x[1]);
        let coef = (|| -> Result<([f64; 2], f64), crate::expr::ExprError> {
            let mut c = [0.0; 2];
            for (j, cj) in c.iter_mut().enumerate() {
                *cj = pd.da[0][j].eval(&b)? + pd.da[1][j].eval(&b)?;
            }
            let trace = pd.a[0][0].eval(&b)? + pd.a[1][1].eval(&b)?;
            Ok((c, trace))
        })();
        match coef {
            Ok((c, trace)) => {
                for &y in &ys {
                    let v = c[0] * (x[0] - y[0]) + c[1] * (x[1] - y[1]) + trace;
                    // track the maximum as the most negative "margin"
                    c0.see(x, Ok(-v));
                }
            }
            Err(e) => c0.see(x, Err(e)),
        }
    }
    consts.c0 = -c0.worst;
    let mut c0_check = c0.finish("a_divergence_bound", "div(a(x)(x - y)) <= c0", |m| m.is_finite());
    c0_check.note = Some(format!("c0 = {}", consts.c0));
    checks.push(c0_check);

    let corners_on_gamma3: Vec<_> = pd
        .domain
        .corners()
        .iter()
        .filter(|c| {
            let n = pd.domain.arcs().len();
            pd.domain.arcs()[c.after_arc].label == Label::Gamma3
                && pd.domain.arcs()[(c.after_arc + 1) % n].label == Label::Gamma3
        })
        .collect();
    checks.push(AssumptionCheck {
        id: "gamma3_regular",
        description: "Gamma3 locally C^{1,alpha}",
        status: if corners_on_gamma3.is_empty() {
            CheckStatus::Sampled
        } else {
            CheckStatus::Fail
        },
        worst_margin: f64::NAN,
        witness: corners_on_gamma3.first().map(|c| c.point),
        note: Some(format!("{} corner(s) inside Gamma3", corners_on_gamma3.len())),
    });
    checks.push(AssumptionCheck {
        id: "C1",
        description: "boundary of class C^1",
        status: CheckStatus::Sampled,
        worst_margin: f64::NAN,
        witness: pd.domain.corners().first().map(|c| c.point),
        note: Some(format!(
            "{} corner(s); corners are accepted and recorded",
            pd.domain.corners().len()
        )),
    });

    ValidationReport {
        checks,
        constants: consts,
        natural_boundary: pd.domain.has_neutral_part(),
    }
}
