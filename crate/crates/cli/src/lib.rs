//! Pipeline driver behind the `riskgrid` binary: configuration, the
//! synthetic-city generator front end, stage orchestration and figures.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod svg;

pub use config::{ModelKind, Overrides, PipelineConfig, Resolved};
pub use error::{PipelineError, Stage};
pub use pipeline::{RunReport, FileEntry};
