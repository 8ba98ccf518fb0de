use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval ({lo}, {hi})")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("x = {x} lies outside every branch domain")]
    OutOfDomain { x: f64 },
    #[error("|df| = {deriv:e} at x = {x} is inside the critical guard")]
    NearCritical { x: f64, deriv: f64 },
    #[error("preimage became empty at word position {position}")]
    EmptyPreimage { position: usize },
    #[error("no orientation-reversing fixed point with slope below -1 at a = {a}")]
    NoAlpha { a: f64 },
    #[error("base interval A is empty")]
    Degenerate,
    #[error("x = {x} is not in any basic element")]
    NotInW { x: f64 },
    #[error("base is not a union of branch-image cylinders: {0}")]
    NotMarkov(String),
    #[error("(H2) coding did not contract below {tol:e}: width {width:e} after {iterations} iterations")]
    NoConvergence { tol: f64, width: f64, iterations: usize },
    #[error("power iteration stopped after {iterations} iterations at residual {residual:e}")]
    OperatorNoConvergence { iterations: usize, residual: f64 },
    #[error("(H4) tail is not exponential: fitted lambda1 = {lambda1}")]
    TailNotExponential { lambda1: f64 },
    #[error("(H5) distortion is not contracting: fitted lambda2 = {lambda2}")]
    DistortionUnbounded { lambda2: f64 },
    #[error("critical orbit did not enter A within {cap} iterates")]
    CapExceeded { cap: usize },
    #[error("F^{k}(0) = {x} lies in no regular interval")]
    OrbitEscapes { k: usize, x: f64 },
    #[error("depth {depth} is infeasible for an alphabet of {alphabet} symbols")]
    DepthInfeasible { depth: usize, alphabet: usize },
    #[error("cylinder {word:?} has zero weight")]
    ZeroWeightCylinder { word: Vec<usize> },
    #[error("(P2)/(P3) no sign change of P_G(phi - c tau) on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },
    #[error("Q partial sums do not converge")]
    QDiverges,
    #[error("no independent entropy route for map kind {0}")]
    EntropyUnavailable(String),
    #[error("(P3) t = {t} is outside the admissible range ({t0}, {t1}); rerun with force to override")]
    OutsideRange { t: f64, t0: f64, t1: f64 },
    #[error("{condition} failed: {detail}")]
    ConditionFailed { condition: &'static str, detail: String },
    #[error("invalid constants: {0}")]
    InvalidConstants(String),
    #[error("no correlation lag exceeds the noise level")]
    AllNoise,
    #[error("block-sum variance is degenerate (gamma = {gamma:e}, growth ratio = {growth})")]
    DegenerateVariance { gamma: f64, growth: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a numerical (H)/(P) condition, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidInterval { .. }
                | Error::InvalidParameter(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
