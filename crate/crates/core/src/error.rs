use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the admissible parameter region.
    #[error("domain error: {0}")]
    Domain(String),

    /// A quadrature or acceleration step could not reach the requested accuracy.
    #[error("accuracy not reached: requested {requested:e}, achieved {achieved:e}")]
    Accuracy { requested: f64, achieved: f64 },

    /// A kernel computation overflowed, typically because the coupling is supercritical.
    #[error("divergence: {0}")]
    Divergence(String),

    /// An object was used before it was ready (for example an uncalibrated profile).
    #[error("state error: {0}")]
    State(String),

    /// A dense linear algebra routine failed.
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    /// A sweep entry failed; the offending point is attached.
    #[error("evaluation at (t={t}, x={x}, y={y}) failed: {source}")]
    Evaluation {
        t: f64,
        x: f64,
        y: f64,
        #[source]
        source: Box<Error>,
    },

    /// A serialized kernel could not be decoded.
    #[error("malformed kernel data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
