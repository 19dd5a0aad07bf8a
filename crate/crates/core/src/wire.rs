//! Request and response bodies of the HTTP service.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::SimError;
use crate::jobs::AnalysisKind;
use crate::presets::{LatticeMapping, Preset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub config: RunConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub kind: AnalysisKind,
    pub config: RunConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobResponse {
    pub files: Vec<OutputFile>,
}

impl JobResponse {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.name == name).map(|f| f.contents.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetEntry {
    #[serde(flatten)]
    pub preset: Preset,
    /// Lattice parameters for spacing `σ` and one nucleon mass unit.
    pub lattice: LatticeMapping,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetsResponse {
    pub presets: Vec<PresetEntry>,
    pub formulas: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    InvalidConfig,
    NumericalGuard,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
    #[serde(default)]
    pub guard: Option<String>,
    #[serde(default)]
    pub step: Option<usize>,
}

impl From<&SimError> for ErrorBody {
    fn from(e: &SimError) -> Self {
        let (kind, guard, step) = match e {
            SimError::Engine(engine) => match engine.guard() {
                "unsupported" | "dimension" => (ErrorKind::InvalidConfig, None, None),
                name => (ErrorKind::NumericalGuard, Some(name.to_string()), engine.step()),
            },
            _ => (ErrorKind::InvalidConfig, None, None),
        };
        ErrorBody {
            kind,
            message: e.to_string(),
            guard,
            step,
        }
    }
}
