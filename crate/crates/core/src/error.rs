use thiserror::Error;

/// Failures from the coupling-network solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("singular network at {freq_hz} Hz (pivot {pivot:e} S)")]
    Singular { freq_hz: f64, pivot: f64 },
    #[error("closed form is only defined for a floating wearable termination, got {0}")]
    UnsupportedClosedForm(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SourceError {
    #[error("invalid source: {0}")]
    Invalid(String),
    #[error("dense rate {dense_rate} Hz is below 10x the highest synthesized frequency {max_freq} Hz")]
    AliasingRisk { dense_rate: f64, max_freq: f64 },
    #[error("distance {0} m outside the supported range [0.01, 100] m")]
    DistanceOutOfRange(f64),
    #[error(transparent)]
    Coupling(#[from] CircuitError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontendError {
    #[error("invalid front-end configuration: {0}")]
    InvalidConfig(String),
    #[error("dense rate {dense_rate} Hz is not an integer multiple of fs {fs} Hz")]
    ResampleContract { dense_rate: f64, fs: f64 },
    #[error("dense rate {dense_rate} Hz must be at least 10x the filter cutoff {cutoff} Hz")]
    DenseRateTooLow { dense_rate: f64, cutoff: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("FFT size {0} is not a power of two >= 128")]
    InvalidN(usize),
    #[error("capture holds {have} samples, need at least {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("noise-floor estimate needs at least 64 bins, frame has {0}")]
    TooFewBins(usize),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("calibration failed: dominant peak prominence {prominence_db:.1} dB < 20 dB")]
    CalibrationFailed { prominence_db: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("tolerance {tol_hz} Hz is finer than one bin ({bin_hz} Hz)")]
    ToleranceTooFine { tol_hz: f64, bin_hz: f64 },
    #[error("peak at {freq_hz} Hz lies outside [0, fs/2]")]
    PeakOutOfRange { freq_hz: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandsError {
    #[error("invalid band parameter: {0}")]
    Invalid(String),
}

/// Coarse error classes, used for distinct process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Parse,
    Schema,
    Numeric,
    Io,
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Bands(#[from] BandsError),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Error::Schema(message.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. } => ErrorClass::Parse,
            Error::Schema(_) => ErrorClass::Schema,
            Error::Io(_) => ErrorClass::Io,
            Error::Context { source, .. } => source.class(),
            _ => ErrorClass::Numeric,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
