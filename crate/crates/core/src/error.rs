use std::fmt;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite loss ({0})")]
    NonFiniteLoss(LossBreakdown),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("ensemble member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite reward at candidate {candidate}, member {member}, step {step}")]
    NonFiniteReward {
        candidate: usize,
        member: usize,
        step: usize,
    },

    #[error("planning aborted at iteration {iteration}: {source}")]
    PlanAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
        partial: Vec<crate::planner::IterationStats>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset is empty or has no episode long enough for training")]
    EmptyDataset,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Per-term values reported alongside a non-finite loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub observation_nll: f64,
    pub reward_nll: f64,
    pub complexity: f64,
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "observation nll {}, reward nll {}, complexity {}",
            self.observation_nll, self.reward_nll, self.complexity
        )
    }
}
