use thiserror::Error;

/// Errors raised anywhere in the expansion / surrogate / optimization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("duplicate fingerprint: coordinates identical to entry {existing}")]
    DuplicateFingerprint { existing: usize },

    #[error("non-finite value in fingerprint component {component}")]
    NonFiniteFingerprint { component: usize },

    #[error("non-finite energy {energy} for fingerprint {index}")]
    NonFiniteEnergy { index: usize, energy: f64 },

    #[error("index {index} out of range for set of size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate lattice: vectors {a:?}, {b:?}, {c:?} are (nearly) coplanar")]
    DegenerateLattice {
        a: [f64; 3],
        b: [f64; 3],
        c: [f64; 3],
    },

    #[error(
        "could not place {n_atoms} atoms with minimum separation {min_sep} Å after {attempts} attempts; \
         try a smaller min_sep or a larger reference volume"
    )]
    PlacementFailed {
        n_atoms: usize,
        min_sep: f64,
        attempts: usize,
    },

    #[error("unphysical overlap: atoms {i} and {j} are {distance} Å apart")]
    Overlap { i: usize, j: usize, distance: f64 },

    #[error(
        "covariance matrix not positive definite at nugget {nugget:e}; \
         closest input pair is ({i}, {j}) at distance {distance:e}"
    )]
    NotPositiveDefinite {
        nugget: f64,
        i: usize,
        j: usize,
        distance: f64,
    },

    #[error("requested {requested} principal components but the data has rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error(
        "expansion stalled: {rejections} consecutive rejections (threshold {threshold:e} \
         is above the achievable perturbation spread)"
    )]
    ExpansionStalled { rejections: usize, threshold: f64 },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
