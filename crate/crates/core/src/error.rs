use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain descriptor: {0}")]
    Descriptor(String),

    #[error("mesh invariant violated: {}", .0.join("; "))]
    InvalidMesh(Vec<String>),

    #[error("stiffness matrix is singular or indefinite at pivot {pivot} (value {value:e})")]
    Singular { pivot: usize, value: f64 },

    #[error("field belongs to a different mesh")]
    MeshMismatch,

    #[error("boundary grid mismatch: expected {expected} samples, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("trace has non-zero mean (relative mean {relative:.3e} exceeds {tolerance:.3e})")]
    MeanViolation { relative: f64, tolerance: f64 },

    #[error("too few boundary nodes: {got} (need at least {need})")]
    TooFewNodes { got: usize, need: usize },

    #[error(
        "requested {requested} Fourier modes but the boundary grid resolves at most {available}"
    )]
    UnresolvedModes { requested: usize, available: usize },

    #[error(
        "indeterminate classification: near-kernel dimension {kernel_dim} of {dimension}, \
         low-mode kernel {low_mode_kernel}, |Lambda 1| = {lambda1_norm:.6e}"
    )]
    Indeterminate {
        kernel_dim: usize,
        dimension: usize,
        low_mode_kernel: usize,
        lambda1_norm: f64,
    },

    #[error("eigenvalue tail is not monotone at pair {index}")]
    NonMonotoneSpectrum { index: usize },

    #[error("criterion not satisfied: residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    Criterion { residual: f64, tolerance: f64 },

    #[error(
        "isolated criterion has no solution: degenerate direction with non-zero left-hand side"
    )]
    NoSolution,

    #[error("algebra closure violated for {part}: residual {residual:.3e} exceeds {limit:.3e}")]
    ClosureViolation {
        part: &'static str,
        residual: f64,
        limit: f64,
    },

    #[error("generators do not separate boundary points {first} and {second}")]
    SeparationFailure { first: usize, second: usize },

    #[error("seam is empty although holes were detected")]
    EmptySeam,

    #[error("expected 2 components after removing the seam, found {0}")]
    Topology(usize),

    #[error("metric fit needs more independent harmonic functions (rank {rank})")]
    NeedsMoreGenerators { rank: usize },

    #[error("spectrum does not fit the annulus model (relative residual {residual:.3e})")]
    NotAnnulus { residual: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
