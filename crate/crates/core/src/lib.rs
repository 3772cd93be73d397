//! Influence of individual training nodes on the demographic bias of a
//! graph node classifier, estimated without retraining, plus the retraining
//! oracles and the deletion-based debiasing built on top of it.

pub mod config;
pub mod datagen;
pub mod debias;
pub mod error;
pub mod graph;
pub mod influence;
pub mod model;
pub mod oracle;
pub mod pdd;

pub use config::{AuditConfig, SeedTree};
pub use error::{Error, Result};
pub use graph::Graph;
pub use model::{Parameters, Predictions};

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
