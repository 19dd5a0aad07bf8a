use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("grid must have 1 to 3 axes, got {0}")]
    Axes(usize),
    #[error("spacing has {spacing} entries but the grid has {dims} axes")]
    SpacingLength { dims: usize, spacing: usize },
    #[error("every axis needs at least one site")]
    EmptyAxis,
    #[error("lattice spacings must be finite and positive")]
    Spacing,
    #[error("at least one particle is required")]
    NoParticles,
    #[error("particle masses must be finite and positive")]
    Mass,
    #[error("particles can move on 1..={available} axes, got {requested}")]
    ParticleAxes { requested: usize, available: usize },
    #[error("configuration space exceeds {limit} states")]
    TooLarge { limit: usize },
    #[error("external potential must give one finite value per particle site")]
    ExternalPotential,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state vector has zero norm")]
    ZeroState,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel parameter `{name}` must be finite and positive, got {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("smearing width must be finite and non-negative, got {0}")]
    Width(f64),
    #[error("time step must be finite and positive, got {0}")]
    TimeStep(f64),
    #[error("field has {found} values but the grid has {expected} sites")]
    FieldLength { expected: usize, found: usize },
    #[error("kernel matrix must be symmetric positive definite")]
    NotPositive,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("step-size guard tripped at step {step}: increment/state L1 ratio {ratio:.3e} exceeds 0.1")]
    StepGuard { step: usize, ratio: f64 },
    #[error("state norm collapsed to {norm:.3e} at step {step}")]
    NormCollapse { step: usize, norm: f64 },
    #[error("non-finite values in the state at step {step}")]
    NonFinite { step: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("density matrix trace {trace:.6} is not normalized")]
    NonNormalized { trace: f64 },
    #[error("{0}")]
    Unsupported(String),
}

impl EngineError {
    /// Name of the guard for error reports.
    pub fn guard(&self) -> &'static str {
        match self {
            EngineError::StepGuard { .. } => "step_size",
            EngineError::NormCollapse { .. } => "norm_collapse",
            EngineError::NonFinite { .. } => "non_finite",
            EngineError::DimensionMismatch { .. } => "dimension",
            EngineError::NonNormalized { .. } => "normalization",
            EngineError::Unsupported(_) => "unsupported",
        }
    }

    /// Step index where the guard fired, when there is one.
    pub fn step(&self) -> Option<usize> {
        match self {
            EngineError::StepGuard { step, .. }
            | EngineError::NormCollapse { step, .. }
            | EngineError::NonFinite { step } => Some(*step),
            _ => None,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            EngineError::StepGuard { ratio, .. } => EngineError::StepGuard { step, ratio },
            EngineError::NormCollapse { norm, .. } => EngineError::NormCollapse { step, norm },
            EngineError::NonFinite { .. } => EngineError::NonFinite { step },
            other => other,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Anything that can go wrong between a config file and a finished run.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("analysis failed: {0}")]
    Analysis(String),
}

impl From<LatticeError> for SimError {
    fn from(e: LatticeError) -> Self {
        SimError::Model(ModelError::Lattice(e))
    }
}

impl From<KernelError> for SimError {
    fn from(e: KernelError) -> Self {
        SimError::Model(ModelError::Kernel(e))
    }
}
