//! Experiment orchestration: declarative run configuration, the append-only
//! run registry, the full experiment matrix, and report/audit generation.

pub mod config;
pub mod matrix;
pub mod registry;
pub mod report;

pub use config::{
    size_label, split_seed, CollectSection, ConfigError, DiffusionSection, EvalSection,
    ExpertSection, RunConfig,
};
pub use matrix::{run_matrix, write_atomic, TARGETS};
pub use registry::{RegistryError, RunRecord, RunRegistry, Status};
pub use report::{
    aggregate, audit, cell_key, normalize_metrics, registry_provenance, render_table, report,
    AuditReport, PlotSeries, ResultsTable, INVERTED, METRICS,
};
