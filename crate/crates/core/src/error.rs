use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("wavelength {wavelength} is outside the dispersion table span [{min}, {max}]")]
    OutOfRange { wavelength: f64, min: f64, max: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate target: the target field has zero energy")]
    DegenerateTarget,

    #[error("degenerate input: the input field has zero energy")]
    DegenerateInput,

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("geometry mismatch\n  config:     {config}\n  checkpoint: {checkpoint}")]
    GeometryMismatch { config: String, checkpoint: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
