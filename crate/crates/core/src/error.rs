use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum SfmError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("vector norm {norm:e} is at or below {eps:e} ({what})")]
    NearZeroNorm { what: &'static str, norm: f64, eps: f64 },

    #[error("rank-deficient basis: column {column} has relative diagonal {ratio:e}")]
    RankDeficient { column: usize, ratio: f64 },

    #[error("basis is not orthonormal: ||A^T A - I||_max = {deviation:e}")]
    NotOrthonormal { deviation: f64 },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("antipodal identities (angle {angle} rad): no canonical geodesic")]
    Antipodal { angle: f64 },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("target angle {angle} rad for sample {sample} leaves the monotone range [0, pi]")]
    MarginOutOfRange { sample: usize, angle: f64 },

    #[error("metric needs at least 2 classes, found {found}")]
    TooFewClasses { found: usize },

    #[error("Calinski-Harabasz score is infinite: within-cluster dispersion is zero")]
    InfiniteCh,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid container: {0}")]
    Container(String),

    #[error("corpus validation failed:\n  {}", .0.join("\n  "))]
    Corpus(Vec<String>),

    #[error("synthetic generation failed: {0}")]
    Synth(String),
}

pub type Result<T, E = SfmError> = std::result::Result<T, E>;

impl SfmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SfmError::Io {
            path: path.into(),
            source,
        }
    }
}
