use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the library.
///
/// Variants fall in two families: input validation problems (bad files,
/// inconsistent meshes, preconditions) and numerical failures (factorization
/// breakdown, divergence). [`Error::is_numerical`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate tetrahedra (|V0| < 1e-18 m^3): {0:?}")]
    DegenerateTets(Vec<usize>),

    #[error("mesh has {0} connected components; exactly one is required")]
    Disconnected(usize),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("plastic deformation gradient is not positive definite (tet {tet}, min eigenvalue {min_eigenvalue:e})")]
    NotSpd { tet: usize, min_eigenvalue: f64 },

    #[error("invalid material parameters: {0}")]
    InvalidMaterial(String),

    #[error("right-hand side is not in the range of the matrix: |proj_N b| = {projection:e}, |b| = {norm:e}")]
    Inconsistent { projection: f64, norm: f64 },

    #[error("supplied vector is not in the nullspace: |A psi_{index}| = {residual:e} > tol {tolerance:e}")]
    NotNullspace {
        index: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape-matching covariance has det <= 0 ({0:e}); mirrored configuration")]
    Mirror(f64),

    #[error("not an equilibrium: |f_net| = {residual:e} > tol {tolerance:e}")]
    NotEquilibrium { residual: f64, tolerance: f64 },

    #[error("optimization diverging: {0}")]
    Diverged(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization(_)
                | Error::Inconsistent { .. }
                | Error::NotEquilibrium { .. }
                | Error::Diverged(_)
                | Error::NotSpd { .. }
                | Error::Mirror(_)
        )
    }

    /// Attaches a tet index to a [`Error::NotSpd`].
    pub fn at_tet(self, tet: usize) -> Self {
        match self {
            Error::NotSpd { min_eigenvalue, .. } => Error::NotSpd { tet, min_eigenvalue },
            e => e,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
