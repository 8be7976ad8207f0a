pub mod agent;
pub mod baselines;
pub mod env;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod partition;
pub mod scheduler;
pub mod shift_oracle;

pub use agent::{Agent, AgentConfig, Event, Mdbe};
pub use baselines::BinningUcb;
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dyadic-tree.md")]
    mod dyadic_tree {}
    #[doc = include_str!("../../../book/src/replays.md")]
    mod replays {}
    #[doc = include_str!("../../../book/src/evictions.md")]
    mod evictions {}
    #[doc = include_str!("../../../book/src/agent.md")]
    mod agent {}
    #[doc = include_str!("../../../book/src/shifts.md")]
    mod shifts {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
