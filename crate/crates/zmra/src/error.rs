use thiserror::Error;

/// Errors shared across the toolkit. Variant names follow the operation
/// contracts; most are precondition violations that callers can avoid by
/// querying the grid first.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("interval already at the finest scale of its axis")]
    FinestScale,
    #[error("requested parent is above the coarsest scale")]
    CoarsestScale,
    #[error("dilation parameter {0} admits no rectangles on this grid")]
    LambdaOutOfRange(i32),
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("kernel evaluated on the singular diagonal")]
    DiagonalPoint,
    #[error("frequency cutoff {0} exceeds the grid Nyquist range")]
    CutoffTooLarge(i64),
    #[error("rectangles do not share the required scales")]
    ScaleMismatch,
    #[error("quadrature excluded {excluded} of {total} cell triples (diagonal dominated)")]
    DiagonalDominated { excluded: usize, total: usize },
    #[error("complexity bucket k={0:?} is empty on this grid")]
    EmptyComplexityBucket([u32; 3]),
    #[error("shift complexity {0:?} exceeds the grid resolution")]
    ComplexityExceedsGrid([u32; 3]),
    #[error("tri-parameter shift violates a structural constraint: {0}")]
    ConstraintViolated(String),
    #[error("emitted coefficient violates its normalization bound by {0:.3e}")]
    NormalizationOverflow(f64),
    #[error("stopping-time selection cannot reach sparseness gamma={gamma}: |E(S)|/|S|={achieved}")]
    GammaUnachievable { gamma: f64, achieved: f64 },
    #[error("open-set family budget exceeded ({0} members)")]
    FamilyTooLarge(usize),
    #[error("rectangle is not the common Zygmund ancestor of the pair")]
    NotAncestor,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("unknown fixture `{0}`")]
    FixtureUnknown(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
