use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QhjError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate solution: {0}")]
    DegenerateSolution(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("forbidden region: {0}")]
    ForbiddenRegion(String),

    /// The azimuthal constant would need β² = m_l² − ¼ < 0.
    #[error("purely quantum motion: m_l = {m_l} gives beta^2 = m_l^2 - 1/4 = {beta_sq} < 0, no classical correspondent")]
    PurelyQuantum { m_l: i32, beta_sq: f64 },

    #[error("unbound state: {0}")]
    Unbound(String),

    #[error("integration stalled at t = {t}: {reason}")]
    Stall { t: f64, reason: String },

    #[error("indeterminate classification: {0}")]
    Indeterminate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl QhjError {
    /// Short machine-readable tag used on the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            QhjError::Domain(_) => "domain",
            QhjError::DegenerateSolution(_) => "degenerate-solution",
            QhjError::Consistency(_) => "consistency",
            QhjError::Evaluation(_) => "evaluation",
            QhjError::ForbiddenRegion(_) => "forbidden-region",
            QhjError::PurelyQuantum { .. } => "purely-quantum",
            QhjError::Unbound(_) => "unbound",
            QhjError::Stall { .. } => "integration-stall",
            QhjError::Indeterminate(_) => "indeterminate",
            QhjError::Config(_) => "config",
            QhjError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for QhjError {
    fn from(e: std::io::Error) -> Self {
        QhjError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QhjError>;
