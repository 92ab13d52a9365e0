//! COOPO: cyclic offline-online policy optimization.
//!
//! The training loop alternates two phases over `K` cycles. The offline
//! phase fits Q and V by TD regression on a fixed dataset and re-anchors
//! the actor with advantage-weighted updates under a KL penalty. The
//! online phase fine-tunes the same actor with clipped-ratio policy
//! gradients on freshly collected rollouts while the offline Q stays
//! frozen. Interfaces at each phase boundary are plain parameter
//! handoffs, so a single cycle degenerates to ordinary
//! offline-to-online training and `K > 1` re-anchors the actor to the
//! dataset between rounds of interaction.
//!
//! Everything runs at desk scale on two environment families: tabular
//! MDPs small enough for exact dynamic programming, and a continuous
//! point-mass task. The [`oracle`] module evaluates policies exactly on
//! the tabular family and certifies the quantities the algorithm is
//! organized around: the advantage-weighted closed form, its
//! per-state expected-advantage identity, a per-cycle performance
//! difference bound, and a geometric-contraction envelope over cycles.
//! `coopo verify` runs those certifications from the command line.

pub mod config;
pub mod cycle;
pub mod data;
pub mod envs;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod offline;
pub mod online;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod value;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book;
