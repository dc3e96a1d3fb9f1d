use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::PatternCategory;
use crate::error::{Error, Result};
use crate::holmes::NodeKey;
use crate::imgep::RunConfig;
use crate::lenia::SystemParams;

/// Schema version carried by every persisted and served document.
pub const SCHEMA_VERSION: u32 = 1;

/// One exploration step as written to `history/NNNNNN.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub index: usize,
    pub theta: SystemParams,
    /// Leaf goal at insertion time.
    pub goal: Vec<f32>,
    pub leaf: NodeKey,
    pub path: Vec<NodeKey>,
    /// `false` for the initial random iterations.
    pub goal_directed: bool,
    pub goal_space: Option<NodeKey>,
    pub target_goal: Option<Vec<f32>>,
    /// Entry whose parameters were mutated to produce this one.
    pub source_entry: Option<usize>,
    pub category: PatternCategory,
    /// File stem of the `.png` / `.f32` observation files.
    pub observation: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    PausedAwaitingScores,
    Finished,
}

impl RunStatus {
    /// Legal moves: running <-> paused, running -> finished.
    pub fn can_become(self, next: RunStatus) -> bool {
        matches!(
            (self, next),
            (RunStatus::Running, RunStatus::PausedAwaitingScores)
                | (RunStatus::PausedAwaitingScores, RunStatus::Running)
                | (RunStatus::Running, RunStatus::Finished)
        ) || self == next
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub v: u32,
    pub run_id: String,
    pub config: RunConfig,
    /// Completed exploration steps.
    pub step: usize,
    pub tree_version: u64,
    pub status: RunStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Human,
    Heuristic,
}

/// Scores proposed for the current leaves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSubmission {
    pub scores: BTreeMap<NodeKey, f64>,
    #[serde(default)]
    pub submitter: String,
    #[serde(default)]
    pub timestamp: Option<String>,
}

impl ScoreSubmission {
    /// Keys must be current leaves, values finite and non-negative, at least
    /// one entry.
    pub fn validate(&self, leaves: &[NodeKey]) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::InvalidArgument("empty score submission".into()));
        }
        for (k, &s) in &self.scores {
            if !leaves.contains(k) {
                return Err(Error::InvalidArgument(format!("{k} is not a current leaf")));
            }
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidArgument(format!("score {s} for {k} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// One line of the guidance trail in `scores.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRecord {
    pub step: usize,
    pub timestamp: String,
    pub source: ScoreSource,
    pub submitter: String,
    pub scores: BTreeMap<NodeKey, f64>,
}
