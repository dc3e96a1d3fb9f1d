use std::collections::BTreeMap;
use std::path::Path;
use std::sync::mpsc::{Receiver, TryRecvError};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{categorize, PatternCategory};
use crate::error::{Error, Result};
use crate::holmes::{Hierarchy, Member, NodeKey, SplitOutcome};
use crate::lenia::{rollout, sample_random_params, Observation, SystemParams};
use crate::runstore::{
    ControlMessage, GuidanceRecord, HistoryEntry, RunDir, RunManifest, RunSnapshot, RunStatus,
    ScoreRejection, ScoreSource, SnapshotCell, SCHEMA_VERSION,
};

use super::policy::{sample_goal, sample_goal_space, sample_parameters, score_leaves_by_category, LeafScores};
use super::{Guidance, RunConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ExploreEvent {
    Split {
        step: usize,
        key: NodeKey,
        outcome: SplitOutcome,
    },
    Train {
        step: usize,
        /// Last-epoch mean loss per trained leaf.
        final_loss: BTreeMap<NodeKey, f64>,
    },
}

#[derive(Serialize, Deserialize)]
struct ExplorerState {
    v: u32,
    step: usize,
    rng: ChaCha8Rng,
    active_scores: Option<LeafScores>,
    tree_version: u64,
    events: Vec<ExploreEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub category_counts: BTreeMap<PatternCategory, usize>,
    pub leaves: Vec<NodeKey>,
    pub splits: usize,
}

/// The exploration loop over one run directory.
pub struct Explorer {
    config: RunConfig,
    dir: RunDir,
    hierarchy: Hierarchy,
    rng: ChaCha8Rng,
    thetas: Vec<SystemParams>,
    observations: Vec<Observation>,
    categories: Vec<PatternCategory>,
    step: usize,
    active_scores: Option<LeafScores>,
    status: RunStatus,
    tree_version: u64,
    snapshot_version: u64,
    guidance_log: Vec<GuidanceRecord>,
    events: Vec<ExploreEvent>,
    control: Option<Receiver<ControlMessage>>,
    snapshots: Option<SnapshotCell>,
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339()
}

impl Explorer {
    /// Starts a fresh run in `out`, overwriting any previous history there.
    pub fn create(config: RunConfig, out: &Path) -> Result<Self> {
        config.validate()?;
        let dir = RunDir::create(out, &config)?;
        dir.write_guidance(&[])?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let hierarchy = Hierarchy::new(config.holmes_config(), &mut rng)?;
        let this = Self {
            config,
            dir,
            hierarchy,
            rng,
            thetas: Vec::new(),
            observations: Vec::new(),
            categories: Vec::new(),
            step: 0,
            active_scores: None,
            status: RunStatus::Running,
            tree_version: 0,
            snapshot_version: 0,
            guidance_log: Vec::new(),
            events: Vec::new(),
            control: None,
            snapshots: None,
        };
        this.write_manifest()?;
        this.dir.write_tree(&this.hierarchy.snapshot())?;
        Ok(this)
    }

    /// Reopens `out` at its latest checkpoint, or from scratch without one.
    pub fn resume(out: &Path) -> Result<Self> {
        let dir = RunDir::open(out)?;
        let config = dir.config()?;
        config.validate()?;
        let Some((step, ckpt)) = dir.latest_checkpoint()? else {
            return Self::create(config, out);
        };
        let state: ExplorerState = dir.read_json_at(&ckpt.join("state.json"))?;
        if state.step != step {
            return Err(Error::InvalidArgument(format!(
                "checkpoint {} records step {}",
                ckpt.display(),
                state.step
            )));
        }
        let hierarchy = Hierarchy::load(&ckpt.join("hierarchy"))?;
        let mut thetas = Vec::with_capacity(step);
        let mut observations = Vec::with_capacity(step);
        let mut categories = Vec::with_capacity(step);
        for i in 0..step {
            let e = dir.read_entry(i)?;
            thetas.push(e.theta);
            categories.push(e.category);
            observations.push(dir.read_observation(i)?);
        }
        let mut guidance_log = dir.read_guidance()?;
        guidance_log.retain(|r| r.step <= step);
        dir.write_guidance(&guidance_log)?;
        let this = Self {
            config,
            dir,
            hierarchy,
            rng: state.rng,
            thetas,
            observations,
            categories,
            step,
            active_scores: state.active_scores,
            status: RunStatus::Running,
            tree_version: state.tree_version,
            snapshot_version: 0,
            guidance_log,
            events: state.events,
            control: None,
            snapshots: None,
        };
        this.write_manifest()?;
        Ok(this)
    }

    /// Enables pause requests and score submissions from `rx`.
    pub fn with_control(mut self, rx: Receiver<ControlMessage>) -> Self {
        self.control = Some(rx);
        self
    }

    /// Publishes a snapshot to `cell` after every step.
    pub fn with_snapshots(mut self, cell: SnapshotCell) -> Self {
        self.snapshots = Some(cell);
        self.publish();
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn categories(&self) -> &[PatternCategory] {
        &self.categories
    }

    pub fn thetas(&self) -> &[SystemParams] {
        &self.thetas
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn events(&self) -> &[ExploreEvent] {
        &self.events
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn run_dir(&self) -> &RunDir {
        &self.dir
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            v: SCHEMA_VERSION,
            run_id: format!("{}-{}-seed{}", self.config.variant, self.config.guidance, self.config.seed),
            config: self.config.clone(),
            step: self.step,
            tree_version: self.tree_version,
            status: self.status,
        }
    }

    fn write_manifest(&self) -> Result<()> {
        self.dir.write_manifest(&self.manifest())
    }

    fn set_status(&mut self, next: RunStatus) -> Result<()> {
        debug_assert!(self.status.can_become(next), "{:?} -> {next:?}", self.status);
        self.status = next;
        self.write_manifest()?;
        self.publish();
        Ok(())
    }

    fn publish(&mut self) {
        if let Some(cell) = &self.snapshots {
            self.snapshot_version += 1;
            cell.publish(RunSnapshot::build(
                self.snapshot_version,
                self.manifest(),
                &self.hierarchy,
                self.guidance_log.clone(),
                self.active_scores.as_ref().map(|s| s.scores.clone()),
            ));
        }
    }

    /// Runs to the configured budget and marks the run finished.
    pub fn run(&mut self) -> Result<RunSummary> {
        self.run_until(self.config.n_total)?;
        if self.dir.latest_checkpoint()?.map(|(s, _)| s) != Some(self.step) {
            self.checkpoint()?;
        }
        self.set_status(RunStatus::Finished)?;
        self.dir.write_tree(&self.hierarchy.snapshot())?;
        Ok(self.summary())
    }

    pub fn summary(&self) -> RunSummary {
        let mut category_counts: BTreeMap<PatternCategory, usize> =
            PatternCategory::ALL.iter().map(|&c| (c, 0)).collect();
        for c in &self.categories {
            *category_counts.entry(*c).or_default() += 1;
        }
        RunSummary {
            steps: self.step,
            category_counts,
            leaves: self.hierarchy.leaves(),
            splits: self
                .events
                .iter()
                .filter(|e| matches!(e, ExploreEvent::Split { outcome: SplitOutcome::Split { .. }, .. }))
                .count(),
        }
    }

    /// Executes steps until `stop` rollouts exist (capped by the budget).
    pub fn run_until(&mut self, stop: usize) -> Result<()> {
        let stop = stop.min(self.config.n_total);
        while self.step < stop {
            self.poll_control()?;
            self.explore_step()?;
        }
        Ok(())
    }

    fn poll_control(&mut self) -> Result<()> {
        loop {
            let msg = match &self.control {
                None => return Ok(()),
                Some(rx) => match rx.try_recv() {
                    Ok(m) => m,
                    Err(TryRecvError::Empty) => return Ok(()),
                    Err(TryRecvError::Disconnected) => {
                        self.control = None;
                        return Ok(());
                    }
                },
            };
            match msg {
                ControlMessage::Pause => self.await_scores()?,
                ControlMessage::Scores { reply, .. } => {
                    let _ = reply.send(Err(ScoreRejection::NotPaused));
                }
            }
        }
    }

    /// Blocks until a valid submission for the current leaves arrives.
    fn await_scores(&mut self) -> Result<()> {
        self.set_status(RunStatus::PausedAwaitingScores)?;
        loop {
            let rx = self.control.as_ref().ok_or(Error::GuidanceClosed)?;
            let msg = rx.recv().map_err(|_| Error::GuidanceClosed)?;
            let ControlMessage::Scores { submission, reply } = msg else {
                continue;
            };
            let leaves = self.hierarchy.leaves();
            let checked = submission
                .validate(&leaves)
                .and_then(|_| LeafScores::new(submission.scores.clone(), self.config.temperature));
            let scores = match checked {
                Ok(s) => s,
                Err(e) => {
                    let _ = reply.send(Err(ScoreRejection::Invalid(e.to_string())));
                    continue;
                }
            };
            let record = GuidanceRecord {
                step: self.step,
                timestamp: submission.timestamp.clone().unwrap_or_else(timestamp),
                source: ScoreSource::Human,
                submitter: submission.submitter.clone(),
                scores: scores.scores.clone(),
            };
            self.dir.append_guidance(&record)?;
            self.guidance_log.push(record);
            self.active_scores = Some(scores);
            self.set_status(RunStatus::Running)?;
            let _ = reply.send(Ok(()));
            return Ok(());
        }
    }

    fn leaf_members(&self, key: &NodeKey) -> Result<&[Member]> {
        Ok(&self.hierarchy.node(key)?.members)
    }

    fn explore_step(&mut self) -> Result<()> {
        let i = self.step;
        let cfg = &self.config;
        let (theta, goal_space, target, source) = if i < cfg.n_init {
            (sample_random_params(&cfg.param_space, &mut self.rng), None, None, None)
        } else {
            let leaves = self.hierarchy.leaves();
            let k = sample_goal_space(&leaves, self.active_scores.as_ref(), &mut self.rng)?;
            let members = &self.hierarchy.node(&k)?.members;
            let g = sample_goal(members, cfg.goal_box_expansion, &mut self.rng);
            let (theta, source) = sample_parameters(
                members,
                &g,
                &self.thetas,
                &cfg.param_space,
                &cfg.mutation,
                &mut self.rng,
            )?;
            (theta, Some(k), Some(g), source)
        };
        let o = rollout(&theta, &self.config.lenia)?;
        let route = self.hierarchy.route(&o)?;
        self.hierarchy.record(i, &route)?;
        let category = categorize(&o, &self.config.categorizer);
        let entry = HistoryEntry {
            index: i,
            theta: theta.clone(),
            goal: route.leaf_goal().to_vec(),
            leaf: route.leaf.clone(),
            path: route.path.iter().map(|s| s.key.clone()).collect(),
            goal_directed: goal_space.is_some(),
            goal_space,
            target_goal: target,
            source_entry: source,
            category,
            observation: RunDir::entry_stem(i),
        };
        self.dir.write_entry(&entry, &o)?;
        self.thetas.push(theta);
        self.observations.push(o);
        self.categories.push(category);
        self.step += 1;

        if self.config.variant == Variant::Holmes && self.hierarchy.is_saturated(&route.leaf)? {
            let outcome = self.hierarchy.split(&route.leaf, &self.observations, &mut self.rng)?;
            let did_split = matches!(outcome, SplitOutcome::Split { .. });
            tracing::info!(step = self.step, node = %route.leaf, ?outcome, "saturated leaf");
            self.events.push(ExploreEvent::Split {
                step: self.step,
                key: route.leaf.clone(),
                outcome,
            });
            if did_split {
                self.tree_version += 1;
                self.dir.write_tree(&self.hierarchy.snapshot())?;
                self.after_split()?;
            }
        }

        if self.step % self.config.train_period == 0 {
            let report = self
                .hierarchy
                .train(&self.observations, self.config.epochs, &mut self.rng)?;
            tracing::info!(step = self.step, nodes = report.epoch_loss.len(), "trained");
            self.events.push(ExploreEvent::Train {
                step: self.step,
                final_loss: report
                    .epoch_loss
                    .into_iter()
                    .filter_map(|(k, l)| l.last().map(|&v| (k, v)))
                    .collect(),
            });
            self.checkpoint()?;
        }
        self.publish();
        Ok(())
    }

    fn after_split(&mut self) -> Result<()> {
        match self.config.guidance {
            Guidance::Uniform => Ok(()),
            Guidance::Scored(category) => {
                let leaves = self.hierarchy.leaves();
                let with_members: Vec<(NodeKey, &[Member])> = leaves
                    .iter()
                    .map(|k| Ok((k.clone(), self.leaf_members(k)?)))
                    .collect::<Result<_>>()?;
                let scores = score_leaves_by_category(&with_members, &self.categories, category);
                let record = GuidanceRecord {
                    step: self.step,
                    timestamp: timestamp(),
                    source: ScoreSource::Heuristic,
                    submitter: format!("categorizer:{}", category.as_str()),
                    scores: scores.clone(),
                };
                self.dir.append_guidance(&record)?;
                self.guidance_log.push(record);
                self.active_scores = Some(LeafScores::new(scores, self.config.temperature)?);
                Ok(())
            }
            Guidance::Interactive => {
                self.active_scores = None;
                self.await_scores()
            }
        }
    }

    /// Writes `checkpoints/step-K/` for the current step.
    pub fn checkpoint(&self) -> Result<()> {
        let path = self.dir.checkpoint_path(self.step);
        self.hierarchy.save(&path.join("hierarchy"))?;
        let state = ExplorerState {
            v: SCHEMA_VERSION,
            step: self.step,
            rng: self.rng.clone(),
            active_scores: self.active_scores.clone(),
            tree_version: self.tree_version,
            events: self.events.clone(),
        };
        self.dir.write_json_at(&path.join("state.json"), &state)?;
        self.write_manifest()
    }
}
