use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max |M - M^dagger| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue = {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("matrix is not unitary (max |U^dagger U - I| = {deviation:e})")]
    NotUnitary { deviation: f64 },

    #[error("trace is {trace}, expected 1")]
    BadTrace { trace: f64 },

    #[error("vector norm is {norm}, expected 1")]
    NotNormalized { norm: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("state is not pure (purity tr(rho^2) = {purity})")]
    NotPure { purity: f64 },

    #[error("invalid instance specification: {0}")]
    InvalidInstance(String),

    #[error("{what} requires {requested} qubits, cap is {cap}")]
    QubitCapExceeded {
        what: &'static str,
        requested: usize,
        cap: usize,
    },

    #[error("unknown register {0}")]
    UnknownRegister(String),

    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
