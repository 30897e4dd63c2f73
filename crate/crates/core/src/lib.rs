//! Black-box audit harness for chat moderation filters.

pub mod datasets;
pub mod durations;
pub mod metrics;
pub mod mock;
pub mod model;
pub mod probes;
pub mod reconcile;
pub mod transport;
pub mod wire;

pub use model::*;
pub use reconcile::{reconcile, Conflict, ConflictKind, OutcomeRecord, Reconciliation, ReconcileError};
