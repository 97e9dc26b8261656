use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: String,
        reason: &'static str,
    },

    #[error("round budget exceeded: {needed} rounds needed, {budget} allowed")]
    BudgetExceeded { needed: u64, budget: u64 },

    #[error("schedule did not terminate within {0} iterations")]
    ScheduleTooLong(usize),

    #[error("push-sum count is ambiguous after {rounds} rounds")]
    CountAmbiguous { rounds: u64 },

    #[error("min/max dissemination did not converge within {rounds} rounds")]
    SpreadNotConverged { rounds: u64 },

    #[error("{unsettled} tokens still unsettled after {phases} phases")]
    TokensUnsettled { unsettled: usize, phases: u64 },

    #[error("node holds {held} tokens, cap is {cap}")]
    TokenCapExceeded { held: usize, cap: usize },

    #[error("buffer weights differ: {0} vs {1}")]
    WeightMismatch(u64, u64),

    #[error("query on an empty buffer")]
    EmptyBuffer,

    #[error("malformed buffer encoding: {0}")]
    Decode(&'static str),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, value: impl ToString, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value: value.to_string(),
            reason,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
