//! State shared between the exploration loop (single writer) and readers
//! such as the HTTP service.

use std::collections::BTreeMap;
use std::sync::{mpsc, Arc, RwLock};

use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::holmes::{Hierarchy, NodeKey, TreeSnapshot};

use super::{GuidanceRecord, RunDir, RunManifest, ScoreSubmission};

/// Immutable view of a run at one point between mutations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    /// Increments on every publish.
    pub version: u64,
    pub manifest: RunManifest,
    pub tree: TreeSnapshot,
    /// Per node: `(history entry, goal)` in insertion order.
    pub members: BTreeMap<NodeKey, Vec<(usize, Vec<f32>)>>,
    pub guidance: Vec<GuidanceRecord>,
    /// Scores currently steering goal-space selection.
    pub active_scores: Option<BTreeMap<NodeKey, f64>>,
}

impl RunSnapshot {
    pub fn build(
        version: u64,
        manifest: RunManifest,
        hierarchy: &Hierarchy,
        guidance: Vec<GuidanceRecord>,
        active_scores: Option<BTreeMap<NodeKey, f64>>,
    ) -> Self {
        Self {
            version,
            manifest,
            tree: hierarchy.snapshot(),
            members: hierarchy
                .nodes()
                .iter()
                .map(|(k, n)| {
                    let m = n.members.iter().map(|m| (m.entry, m.goal.clone())).collect();
                    (k.clone(), m)
                })
                .collect(),
            guidance,
            active_scores,
        }
    }

    /// Offline view of a run directory: the hierarchy of the latest
    /// checkpoint (a fresh root without one) and the guidance trail up to it.
    pub fn from_run_dir(dir: &RunDir) -> Result<Self> {
        let manifest = dir.read_manifest()?;
        let (upto, hierarchy) = match dir.latest_checkpoint()? {
            Some((step, path)) => (step, Hierarchy::load(&path.join("hierarchy"))?),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(manifest.config.seed);
                (0, Hierarchy::new(manifest.config.holmes_config(), &mut rng)?)
            }
        };
        let mut guidance = dir.read_guidance()?;
        guidance.retain(|r| r.step <= upto);
        let leaves = hierarchy.leaves();
        let active_scores = guidance
            .last()
            .filter(|r| r.scores.keys().all(|k| leaves.contains(k)))
            .map(|r| r.scores.clone());
        Ok(Self::build(0, manifest, &hierarchy, guidance, active_scores))
    }

    pub fn leaves(&self) -> Vec<NodeKey> {
        self.tree
            .nodes
            .iter()
            .filter(|n| n.leaf)
            .map(|n| n.key.clone())
            .collect()
    }
}

/// Publish/read cell: readers clone an `Arc` and never see a partial update.
#[derive(Clone, Debug, Default)]
pub struct SnapshotCell {
    inner: Arc<RwLock<Option<Arc<RunSnapshot>>>>,
}

impl SnapshotCell {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, snapshot: RunSnapshot) {
        *self.inner.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(snapshot));
    }

    pub fn load(&self) -> Option<Arc<RunSnapshot>> {
        self.inner.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Messages from readers to the exploration loop.
#[derive(Debug)]
pub enum ControlMessage {
    Pause,
    /// Accepted only while paused; the reply arrives after the scores are
    /// logged and exploration has resumed.
    Scores {
        submission: ScoreSubmission,
        reply: mpsc::Sender<std::result::Result<(), ScoreRejection>>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum ScoreRejection {
    NotPaused,
    Invalid(String),
}

impl std::fmt::Display for ScoreRejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NotPaused => f.write_str("exploration is not awaiting scores"),
            Self::Invalid(d) => f.write_str(d),
        }
    }
}

/// Sending side handed to readers.
#[derive(Clone, Debug)]
pub struct ControlHandle {
    tx: mpsc::Sender<ControlMessage>,
}

pub fn control_channel() -> (ControlHandle, mpsc::Receiver<ControlMessage>) {
    let (tx, rx) = mpsc::channel();
    (ControlHandle { tx }, rx)
}

impl ControlHandle {
    /// `false` when the loop has exited.
    pub fn pause(&self) -> bool {
        self.tx.send(ControlMessage::Pause).is_ok()
    }

    /// Queues a submission; the returned receiver yields the verdict.
    pub fn submit(
        &self,
        submission: ScoreSubmission,
    ) -> Option<mpsc::Receiver<std::result::Result<(), ScoreRejection>>> {
        let (reply, rx) = mpsc::channel();
        self.tx
            .send(ControlMessage::Scores { submission, reply })
            .ok()
            .map(|_| rx)
    }
}
