use thiserror::Error;

/// A single failed configuration check, tagged with the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("angle {0} deg is outside the open interval (-90, 90)")]
    InvalidAngle(f64),

    #[error("invalid configuration: {}", join_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("insufficient secondary data: K = {k} < N = {n}")]
    InsufficientSecondary { k: usize, n: usize },

    #[error("matrix is not positive definite ({0})")]
    Singular(&'static str),

    #[error("ill-conditioned steering geometry (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("metric not supported for detector {0}")]
    UnsupportedMetric(String),
}

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config(vec![ConfigIssue::new(field, message)])
    }

    /// True for errors caused by user-supplied parameters rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidAngle(_)
                | Error::InsufficientSecondary { .. }
                | Error::UnsupportedMetric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
