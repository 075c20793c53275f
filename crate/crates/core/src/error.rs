use thiserror::Error;

/// Errors raised by the solvers and the verification harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("time {time} is not a grid time (dt = {dt})")]
    GridAlignment { time: f64, dt: f64 },

    #[error("step beyond the path horizon: t + h = {requested} > {horizon}")]
    Horizon { requested: f64, horizon: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "CFL condition violated: h*|G_gamma|/dx^2 = {ratio:.4} outside [{lower:.3}, {upper:.3}]; \
         try dx >= {suggested_dx:.5}"
    )]
    Cfl {
        ratio: f64,
        lower: f64,
        upper: f64,
        suggested_dx: f64,
    },

    #[error("non-finite value {value} at {location}")]
    NonFinite { value: f64, location: String },

    #[error("stability failure at level {level}: sup norm {norm:.3e} exceeds bound {bound:.3e}")]
    Stability { level: usize, norm: f64, bound: f64 },

    #[error("time level {level} (t = {time:.6}): {source}")]
    AtLevel {
        level: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown {kind} '{name}'; valid names: {valid}")]
    Resolution {
        kind: &'static str,
        name: String,
        valid: String,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::Stability { .. } => 3,
            Error::AtLevel { source, .. } => source.exit_code(),
            Error::Io(_) => 1,
            _ => 2,
        }
    }

    /// True when the error is a configuration issue rather than a scheme failure.
    pub fn is_configuration(&self) -> bool {
        self.exit_code() == 2
    }

    pub(crate) fn at_level(self, level: usize, time: f64) -> Self {
        Error::AtLevel {
            level,
            time,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
