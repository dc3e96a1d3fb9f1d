//! Run persistence and the state shared with run observers.

mod live;
mod rundir;
mod types;

pub use live::{control_channel, ControlHandle, ControlMessage, RunSnapshot, ScoreRejection, SnapshotCell};
pub use rundir::RunDir;
pub use types::{
    GuidanceRecord, HistoryEntry, RunManifest, RunStatus, ScoreSource, ScoreSubmission,
    SCHEMA_VERSION,
};
