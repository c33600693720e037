//! Energy-aware resource scheduling for virtualized network-function chains.
//!
//! The crate bundles a deterministic simulator of NF chains under five
//! resource knobs (cores, DVFS frequency, LLC share, DMA ring size, batch
//! size), SLA-driven reward functions, a small MLP substrate, a DDPG agent
//! trained through an actor/learner pipeline with prioritized replay, and the
//! baseline schedulers it is compared against.

pub mod baselines;
pub mod ddpg;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod simenv;
pub mod sla;

pub use error::{Error, Result};
