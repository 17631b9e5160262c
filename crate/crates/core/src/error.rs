use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument or query lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter document or object violates its invariants.
    #[error("invalid parameter: {0}")]
    Validation(String),

    /// Target price is not attainable inside the volatility bracket.
    #[error("no implied volatility in [{lo}, {hi}]: price {price} violates the {bound} bound {bound_price}")]
    NoSolution {
        price: f64,
        lo: f64,
        hi: f64,
        bound: &'static str,
        bound_price: f64,
    },

    /// The supremum defining a conjugate was found on the edge of its search window.
    #[error("inconclusive supremum at zeta={zeta}, z2={z2}: maximizer on the search boundary [{lo}, {hi}]")]
    InconclusiveSup { zeta: f64, z2: f64, lo: f64, hi: f64 },

    #[error("time stepping unstable at step {step} (increment grew {growth:.1}x); retry with a larger nt")]
    Instability { step: usize, growth: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("simulation produced a non-finite value at step {step} of path {path}")]
    Simulation { step: usize, path: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parameter not identifiable: {0}")]
    Unidentifiable(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            line,
            message: e.to_string(),
        }
    }
}
