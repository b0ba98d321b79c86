use std::fmt;

use riskgrid_core::Error;

/// Pipeline stage, used to tag error messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Generate,
    Ingest,
    Grid,
    Features,
    Weights,
    Moran,
    Fit,
    Eval,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Generate => "generate",
            Stage::Ingest => "ingest",
            Stage::Grid => "grid",
            Stage::Features => "features",
            Stage::Weights => "weights",
            Stage::Moran => "moran",
            Stage::Fit => "fit",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
    pub numeric: bool,
}

impl PipelineError {
    pub fn input(stage: Stage, message: impl Into<String>) -> Self {
        PipelineError { stage, message: message.into(), numeric: false }
    }

    pub fn core(stage: Stage, e: Error) -> Self {
        PipelineError { stage, numeric: e.is_numeric(), message: e.to_string() }
    }

    /// 1 for input problems, 2 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        if self.numeric {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage.as_str(), self.message)
    }
}

impl std::error::Error for PipelineError {}

/// Attach a stage to core results.
pub trait StageExt<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T> StageExt<T> for riskgrid_core::Result<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::core(stage, e))
    }
}
