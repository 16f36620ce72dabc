//! Configuration files, the staged pipeline and its artifacts.

mod config;
mod run;

pub use config::{
    AnalysisSpec, ArcSpec, ConfigError, FieldsSpec, FlowSpec, GeometrySpec, GridSpec, OutputSpec, Resolved, RunConfig,
    ValidationSpec,
};
pub use run::{
    free_boundary_csv, grid_csv, orbits_csv, run, sha256_hex, solution_csv, solve, trace_csv, write_atomic, Artifact,
    CheckEntry, Command, PipelineError, Provenance, RunError, RunReport, Solved, SolverSummary, Status,
};
