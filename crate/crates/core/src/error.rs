use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate population: total wealth is zero")]
    DegeneratePopulation,

    #[error("{0} requires positive wealth")]
    NonPositiveWealth(&'static str),

    #[error("unsupported summary for this operation: {0}")]
    UnsupportedSummary(String),

    #[error("unsupported survey design: {0}")]
    UnsupportedDesign(String),

    #[error("inconsistent evidence for household {household}: {constraint}")]
    InconsistentEvidence { household: String, constraint: String },

    #[error("conditional infeasibility on component {component}: {detail}")]
    ConditionalInfeasibility { component: usize, detail: String },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("rank deficient design; unidentified columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error(
        "pattern {pattern} has {size} households but needs at least {needed}; \
         aggregate patterns (e.g. the 4-component model) or enlarge the sample"
    )]
    InsufficientGroup { pattern: usize, size: usize, needed: usize },

    #[error("chain failure at sweep {sweep} (household {household}): {source}")]
    Chain {
        sweep: usize,
        household: String,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}{}: {path}: {message}", .id.as_ref().map(|i| format!(" (record {i})")).unwrap_or_default())]
    Parse {
        line: usize,
        id: Option<String>,
        path: String,
        message: String,
    },

    #[error("hash mismatch: {0}")]
    HashMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors that signal evidence which cannot hold simultaneously.
    pub fn is_infeasibility(&self) -> bool {
        match self {
            Error::InconsistentEvidence { .. } | Error::ConditionalInfeasibility { .. } => true,
            Error::Chain { source, .. } => source.is_infeasibility(),
            _ => false,
        }
    }

    /// True for schema and validation failures of user-supplied input.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::Parse { .. } | Error::Json(_))
    }

    /// Process exit status for the command-line tool: 3 for invalid input,
    /// 4 for infeasible evidence, 6 for hash mismatches and 5 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            3
        } else if self.is_infeasibility() {
            4
        } else if matches!(self, Error::HashMismatch(_)) {
            6
        } else {
            5
        }
    }
}
