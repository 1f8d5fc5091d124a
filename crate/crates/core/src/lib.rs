pub mod agents;
pub mod envs;
pub mod error;
pub mod exact;
pub mod harness;
pub mod mdp;
pub mod neural;
pub mod rates;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/exact.md")]
    struct Exact;
    #[doc = include_str!("../../../book/src/networks.md")]
    struct Networks;
    #[doc = include_str!("../../../book/src/rates.md")]
    struct Rates;
    #[doc = include_str!("../../../book/src/agents.md")]
    struct Agents;
    #[doc = include_str!("../../../book/src/harness.md")]
    struct Harness;
}
