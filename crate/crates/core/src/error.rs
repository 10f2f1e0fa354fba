use thiserror::Error;

/// Every failure the library can report.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("representation singularity: pitch {pitch} rad is too close to +-pi/2")]
    RepresentationSingularity { pitch: f64 },

    #[error("grasp matrix is rank deficient (numerical rank {rank} < 6)")]
    RankDeficient { rank: usize },

    #[error("aggregate load-distribution inertia is not invertible")]
    SingularJStar,

    #[error("agent {agent} is at a kinematic singularity (det(J J^T) = {det:e})")]
    KinematicSingularity { agent: usize, det: f64 },

    #[error("model kind `{kind}` does not support {what}")]
    UnsupportedModel { kind: String, what: String },

    #[error("initial condition outside the performance funnel on axis {axis}: |e(0)| = {error} >= rho(0) = {bound}")]
    InitialConditionViolation { axis: usize, error: f64, bound: f64 },

    #[error("funnel violation on {funnel} axis {axis} at t = {t}: |e| = {error} >= rho = {bound}")]
    FunnelViolation {
        funnel: &'static str,
        axis: usize,
        t: f64,
        error: f64,
        bound: f64,
    },

    #[error("bound chain is not finite at `{stage}`")]
    InfeasibleBounds { stage: String },

    #[error("no feasible gains: {binding}")]
    NoFeasibleGains { binding: String },

    #[error("desired pitch bound {theta_bar} plus funnel width {theta_star} must stay below pi/2")]
    PitchBoundViolation { theta_bar: f64, theta_star: f64 },

    #[error("malformed telemetry: {0}")]
    MalformedTelemetry(String),

    #[error("invalid configuration at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
