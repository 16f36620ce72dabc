use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::expr::{parse, ExprError};
use crate::flow::FlowOptions;
use crate::geometry::{BoundaryArc, Domain, GeometryError, Label, Point};
use crate::problem::{FieldSources, ProblemData, ProblemError};
use crate::solver::SolverParams;
use crate::transform::TLowMode;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{field}: {message}")]
    Range { field: &'static str, message: String },
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("geometry curve: {0}")]
    Curve(#[from] ExprError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ArcSpec {
    Segment {
        from: Point,
        to: Point,
        label: Label,
    },
    Circle {
        center: Point,
        radius: f64,
        start_angle: f64,
        end_angle: f64,
        label: Label,
    },
    /// Parametric curve in `s ∈ [0, 1]`.
    Curve { x1: String, x2: String, label: Label },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    /// Labels `[bottom, right, top, left]`.
    Rectangle {
        x1: (f64, f64),
        x2: (f64, f64),
        labels: [Label; 4],
    },
    Arcs(Vec<ArcSpec>),
}

impl GeometrySpec {
    pub fn domain(&self) -> Result<Domain, ConfigError> {
        match self {
            GeometrySpec::Rectangle { x1, x2, labels } => Ok(Domain::rectangle(*x1, *x2, *labels)?),
            GeometrySpec::Arcs(arcs) => {
                let arcs = arcs
                    .iter()
                    .map(|a| match a {
                        ArcSpec::Segment { from, to, label } => Ok(BoundaryArc::segment(*from, *to, *label)),
                        ArcSpec::Circle {
                            center,
                            radius,
                            start_angle,
                            end_angle,
                            label,
                        } => Ok(BoundaryArc::circular(*center, *radius, *start_angle, *end_angle, *label)),
                        ArcSpec::Curve { x1, x2, label } => Ok(BoundaryArc::curve(parse(x1)?, parse(x2)?, *label)?),
                    })
                    .collect::<Result<Vec<_>, ConfigError>>()?;
                Ok(Domain::new(arcs)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct FieldsSpec {
    pub H1: String,
    pub H2: String,
    #[serde(default = "one")]
    pub a11: String,
    #[serde(default = "zero")]
    pub a12: String,
    #[serde(default = "zero")]
    pub a21: String,
    #[serde(default = "one")]
    pub a22: String,
    pub beta: String,
    pub phi: String,
}

fn one() -> String {
    "1".into()
}

fn zero() -> String {
    "0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSpec {
    /// Level of the starting line; defaults to the middle of the bounding box.
    pub h: Option<f64>,
    /// Defaults to the widest chord of the domain at `h`.
    pub w_range: Option<(f64, f64)>,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec {
            h: None,
            w_range: None,
            rtol: 1e-10,
            atol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_w: usize,
    pub n_s: usize,
    pub t_low_mode: TLowMode,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_w: 65,
            n_s: 65,
            t_low_mode: TLowMode::AlphaMinus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSpec {
    /// Interior lattice is `interior_samples × interior_samples`.
    pub interior_samples: usize,
    pub boundary_samples: usize,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        ValidationSpec {
            interior_samples: 64,
            boundary_samples: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    pub bumps: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec { bumps: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub directory: Option<String>,
    pub orbits: bool,
    pub grid: bool,
    pub solution: bool,
    pub trace: bool,
    pub free_boundary: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            directory: None,
            orbits: true,
            grid: true,
            solution: true,
            trace: true,
            free_boundary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySpec,
    pub fields: FieldsSpec,
    #[serde(default)]
    pub flow: FlowSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub validation: ValidationSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
}

/// A config with its derived problem data; `h` and `w_range` are resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub problem: ProblemData,
    pub h: f64,
    pub w_range: (f64, f64),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let mut path = e.path().to_string();
            let message = e.inner().to_string();
            // name the missing key in the path itself
            if let Some(rest) = message.strip_prefix("missing field `") {
                if let Some(name) = rest.split('`').next() {
                    path = if path == "." { name.to_string() } else { format!("{path}.{name}") };
                }
            }
            ConfigError::Schema { path, message }
        })?;
        cfg.check_ranges()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RunConfig::from_json(&text)
    }

    fn check_ranges(&self) -> Result<(), ConfigError> {
        let range = |ok: bool, field: &'static str, message: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Range {
                    field,
                    message: message.to_string(),
                })
            }
        };
        let s = &self.solver;
        range(s.omega > 0.0 && s.omega <= 1.0, "solver.omega", "must lie in (0, 1]")?;
        range(s.relaxation > 0.0 && s.relaxation < 2.0, "solver.relaxation", "must lie in (0, 2)")?;
        range(s.max_outer >= 1, "solver.max_outer", "must be at least 1")?;
        range(s.sweep_factor >= 1, "solver.sweep_factor", "must be at least 1")?;
        range(s.lcp_tol > 0.0, "solver.lcp_tol", "must be positive")?;
        range(s.outer_tol > 0.0, "solver.outer_tol", "must be positive")?;
        range(s.theta_rel >= 0.0, "solver.theta_rel", "must be nonnegative")?;
        range(s.theta_floor > 0.0, "solver.theta_floor", "must be positive")?;
        range(self.grid.n_w >= 3, "grid.n_w", "must be at least 3")?;
        range(self.grid.n_s >= 3, "grid.n_s", "must be at least 3")?;
        range(self.flow.rtol > 0.0, "flow.rtol", "must be positive")?;
        range(self.flow.atol > 0.0, "flow.atol", "must be positive")?;
        if let Some((a, b)) = self.flow.w_range {
            range(a < b, "flow.w_range", "must be increasing")?;
        }
        range(self.validation.interior_samples >= 2, "validation.interior_samples", "must be at least 2")?;
        range(self.validation.boundary_samples >= 1, "validation.boundary_samples", "must be at least 1")?;
        Ok(())
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            rtol: self.flow.rtol,
            atol: self.flow.atol,
        }
    }

    /// Overrides the integration and complementarity tolerances.
    pub fn set_tolerance(&mut self, tol: f64) {
        self.flow.rtol = tol;
        self.solver.lcp_tol = tol;
    }

    pub fn resolve(self) -> Result<Resolved, ConfigError> {
        let f = &self.fields;
        let problem = ProblemData::new(
            self.geometry.domain()?,
            &FieldSources {
                h1: &f.H1,
                h2: &f.H2,
                a: [[&f.a11, &f.a12], [&f.a21, &f.a22]],
                beta: &f.beta,
                phi: &f.phi,
            },
        )?;
        let [lo, hi] = problem.domain.bbox();
        let h = self.flow.h.unwrap_or(0.5 * (lo[1] + hi[1]));
        let w_range = match self.flow.w_range {
            Some(r) => r,
            None => problem
                .domain
                .horizontal_chords(h)
                .into_iter()
                .max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
                .ok_or(ConfigError::Range {
                    field: "flow.h",
                    message: format!("the line x2 = {h} misses the domain"),
                })?,
        };
        Ok(Resolved {
            config: self,
            problem,
            h,
            w_range,
        })
    }
}
