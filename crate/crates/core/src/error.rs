use thiserror::Error;

use crate::linsolve::SolveError;

/// Errors raised while building meshes, spaces, operators and multiscale solutions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {0}, expected 2 or 3")]
    InvalidDimension(usize),

    #[error("subdivision count must be at least 1")]
    ZeroSubdivisions,

    #[error("{kind} index {index} out of range ({len} entities)")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("meshes are not nested: {0}")]
    NotNested(String),

    #[error("coefficient is not resolved by the mesh: {0}")]
    UnresolvedCoefficient(String),

    #[error("incompatible spaces: {0}")]
    IncompatibleSpaces(String),

    #[error("patch anchored at cell {cell} has no free degrees of freedom")]
    EmptyPatch { cell: usize },

    #[error("local problem for {entity} {index} failed: {source}")]
    LocalSolve {
        entity: &'static str,
        index: usize,
        #[source]
        source: SolveError,
    },

    #[error(transparent)]
    Solve(#[from] SolveError),

    #[error("reference solution has zero energy")]
    ZeroReferenceEnergy,

    #[error("rate fit needs at least two positive samples, got {0}")]
    DegenerateFit(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("experiment row j={level}, m={layers} failed: {source}")]
    Experiment {
        level: u32,
        layers: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
