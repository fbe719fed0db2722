//! Error type shared by all modules.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix handed to `vee` (or a group constructor) does not have the
    /// required algebraic structure.
    #[error("algebra/group structure violated: {0}")]
    Structure(String),

    /// Logarithm requested within the cut locus guard band (rotation angle
    /// within 1e-6 of pi). Derivatives are singular there.
    #[error("log branch singular: {0}")]
    Branch(String),

    /// SO(3)/SE(3) elements of different kinds were combined.
    #[error("group kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: &'static str, got: &'static str },

    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// A model was paired with a trajectory it did not produce.
    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    /// Non-finite value where a finite one is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// EM responsibilities collapsed below mass 1e-6 after all restarts.
    #[error("degenerate EM cluster: {0}")]
    DegenerateCluster(String),

    /// Tensor quadrature refused: the node budget grows as nodes^dim.
    #[error("quadrature budget exceeded: {0}")]
    QuadratureOverflow(String),

    /// Spectral coefficients from different bases were combined.
    #[error("Fourier basis mismatch: {0}")]
    BasisMismatch(String),

    /// The Riccati value matrix lost positive semidefiniteness; Q/R scaling
    /// is bad or the linearization blew up.
    #[error("Riccati recursion blew up: {0}")]
    RiccatiBlowup(String),

    /// Armijo backtracking exhausted its halvings without sufficient decrease.
    #[error("line search failed after {halvings} halvings")]
    LineSearchFailure { halvings: usize },

    /// Empty candidate grid for kernel tuning.
    #[error("empty kernel parameter grid")]
    EmptyGrid,

    /// File output failed.
    #[error("io error writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
