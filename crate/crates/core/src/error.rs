use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum NmaError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("network is disconnected; components: {}", format_components(.components))]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate proportion pool (median absolute deviation is zero)")]
    DegeneratePool,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("fitted probability at boundary for study {study}: {prob}")]
    BoundaryProbability { study: String, prob: f64 },

    #[error("sampler diagnostic failure: {0}")]
    Diagnostic(String),

    #[error("Bayes factor for study {study} exceeds estimable range (BF10 >= {lower_bound:.4e})")]
    BeyondEstimableRange { study: String, lower_bound: f64 },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NmaError {
    /// True for errors raised by MCMC convergence checks.
    pub fn is_diagnostic(&self) -> bool {
        matches!(self, NmaError::Diagnostic(_))
    }
}

fn format_components(components: &[Vec<usize>]) -> String {
    components
        .iter()
        .map(|c| {
            let items: Vec<String> = c.iter().map(|t| t.to_string()).collect();
            format!("{{{}}}", items.join(","))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub type Result<T> = std::result::Result<T, NmaError>;
