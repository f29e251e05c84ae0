use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix A is not symmetric: |A[{row}][{col}] - A[{col}][{row}]| = {defect:e}")]
    Asymmetry { row: usize, col: usize, defect: f64 },
    #[error("matrix E is not skew-symmetric: |E[{row}][{col}] + E[{col}][{row}]| = {defect:e}")]
    Skew { row: usize, col: usize, defect: f64 },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("grid does not resolve the carrier: dx = {dx}, need dx <= {max_dx}")]
    UnderResolved { dx: f64, max_dx: f64 },
    #[error("envelope not localized: boundary magnitude {boundary:e} exceeds {tolerance:e}")]
    EnvelopeNotLocalized { boundary: f64, tolerance: f64 },
    #[error("degenerate spectrum at k = {k}: gap {gap:e} between branches {a} and {b}")]
    DegenerateSpectrum { k: f64, gap: f64, a: usize, b: usize },
    #[error("ill-conditioned diagonalizer at k = {k}: cond = {cond:e}")]
    IllConditioned { k: f64, cond: f64 },
    #[error("wavenumber {k} outside the covered range [{min}, {max}]")]
    OutOfGrid { k: f64, min: f64, max: f64 },
    #[error("k0 = {k0} lies within {steps} grid steps of the branch jump at {jump}")]
    TooCloseToJump { k0: f64, jump: f64, steps: usize },
    #[error("grid mismatch between fields")]
    GridMismatch,
    #[error("blow-up detected at t = {t}: sup-norm {sup:e} exceeds cap {cap:e}")]
    BlowupDetected { t: f64, sup: f64, cap: f64 },
    #[error("step budget exceeded: {needed} steps requested, budget {budget}")]
    StepBudgetExceeded { needed: usize, budget: usize },
    #[error("resonant divisor {divisor:e} at {witness}")]
    ResonantDivisor { divisor: f64, witness: String },
    #[error("missing derivatives: {0}")]
    MissingDerivatives(String),
    #[error("step too large: dT/2 self-test relative difference {rel:e}")]
    StepTooLarge { rel: f64 },
    #[error("sample mismatch: {0}")]
    SampleMismatch(String),
    #[error("time {t} outside envelope range [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },
    #[error("branches {n} and {j} have equal group velocity {velocity}")]
    EqualGroupVelocities { n: usize, j: usize, velocity: f64 },
    #[error("envelope not localized at the left boundary: {boundary:e}")]
    NonLocalizedEnvelope { boundary: f64 },
    #[error("envelope-shift fit failed: relative residual {residual:.3}")]
    FitFailed { residual: f64 },
    #[error("packets never overlap within the horizon")]
    NoCollision,
    #[error("order fit needs positive values, got ({eps}, {error})")]
    NonPositiveValue { eps: f64, error: f64 },
    #[error("order fit needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("non-resonance audit failed: {0}")]
    AuditFailed(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
