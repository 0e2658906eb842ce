use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh request: {0}")]
    Mesh(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("levels are not nested: coarse level {coarse}, fine level {fine}")]
    NotNested { coarse: u32, fine: u32 },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("CG did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("singular SAV step: scalar denominator {denominator:.3e}")]
    SingularStep { denominator: f64 },

    #[error("dense system is singular")]
    SingularDense,

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {sample}: {source}")]
    AtSample {
        sample: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("common-path check failed for sample {sample}: {detail}")]
    CommonPath { sample: u64, detail: String },

    #[error("invalid experiment plan: {0}")]
    Plan(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{0} self check(s) failed")]
    CheckFailed(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn at_sample(self, sample: u64) -> Self {
        Error::AtSample {
            sample,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Mesh(_) => "mesh",
            Error::Shape(_) => "shape",
            Error::NotNested { .. } => "not_nested",
            Error::NonFinite(_) => "non_finite",
            Error::Solver { .. } => "solver",
            Error::SingularStep { .. } => "singular_step",
            Error::SingularDense => "singular_dense",
            Error::AtStep { source, .. } | Error::AtSample { source, .. } => source.kind(),
            Error::CommonPath { .. } => "common_path",
            Error::Plan(_) => "plan",
            Error::Config(_) => "config",
            Error::CheckFailed(_) => "check",
            Error::Io(_) => "io",
        }
    }
}
