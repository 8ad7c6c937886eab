//! Validation errors for generator and sweep configuration.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("n_core must be at least depth + 1 (got n_core={n_core}, depth={depth})")]
    CoreBudgetTooSmall { n_core: usize, depth: usize },

    #[error("depth must be at least 1")]
    DepthTooSmall,

    #[error("core size must be at least 2 (got {0})")]
    CoreSizeTooSmall(usize),

    #[error("trials must be at least 1")]
    NoTrials,

    #[error("call cap multiplier must be at least 1")]
    CapMultiplierTooSmall,

    #[error("half_and_half requires an even irrelevant count (got {0})")]
    OddHalfAndHalf(usize),

    #[error("connectivity must be nonempty when any irrelevant count is positive")]
    EmptyConnectivity,
}
