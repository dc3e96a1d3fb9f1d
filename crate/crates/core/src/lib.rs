//! Hierarchical goal-space exploration of Lenia: differentiable substrate,
//! simulator, per-node VAEs, the growing hierarchy, the exploration loop,
//! evaluation and run persistence.

pub mod analysis;
pub mod error;
pub mod holmes;
pub mod imgep;
pub mod lenia;
pub mod ndiff;
pub mod runstore;
pub mod vae;

pub use error::{Error, Result};
pub use holmes::{Hierarchy, NodeKey};
pub use imgep::{Explorer, Guidance, RunConfig, Variant};
pub use lenia::{Observation, SystemParams};
pub use runstore::{RunDir, RunManifest, RunSnapshot, RunStatus};
