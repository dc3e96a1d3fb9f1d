use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lenia::Observation;
use crate::ndiff::{AdamConfig, AdamState, Tensor};
use crate::vae::{
    observation_batch, per_image_bce, AncestorFeatures, Architecture, NodeModule, NodeTaps,
    LATENT_DIM,
};

use super::boundary::{fit_boundary, Boundary, BoundaryMethod, SvmConfig};
use super::{NodeKey, Side};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolmesConfig {
    pub arch: Architecture,
    /// Population at which a leaf saturates.
    pub n_max: usize,
    pub batch_size: usize,
    /// Share of each epoch's draws reserved for entries added since the
    /// previous training round.
    pub new_entry_mass: f64,
    pub adam: AdamConfig,
    pub svm: SvmConfig,
}

impl HolmesConfig {
    pub fn new(arch: Architecture, n_max: usize) -> Self {
        Self {
            arch,
            n_max,
            batch_size: 128,
            new_entry_mass: 0.5,
            adam: AdamConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

/// One observation as seen by a node: history index plus its goal point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub entry: usize,
    pub goal: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyNode {
    pub module: NodeModule<f32>,
    pub optimizer: AdamState<f32>,
    pub boundary: Option<Boundary>,
    pub boundary_method: Option<BoundaryMethod>,
    pub members: Vec<Member>,
    /// Population that triggers a split; raised when a split is declined.
    pub split_threshold: usize,
    /// Members present at the end of the previous training round.
    pub trained_upto: usize,
}

impl HierarchyNode {
    fn fresh(module: NodeModule<f32>, config: &HolmesConfig) -> Self {
        let optimizer = module.new_optimizer(config.adam);
        Self {
            module,
            optimizer,
            boundary: None,
            boundary_method: None,
            members: Vec::new(),
            split_threshold: config.n_max,
            trained_upto: 0,
        }
    }

    pub fn population(&self) -> usize {
        self.members.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.boundary.is_none()
    }
}

/// Goal of one observation at one node of its routing path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub key: NodeKey,
    pub goal: Vec<f32>,
    pub logvar: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub leaf: NodeKey,
    /// Root first, ending at the leaf.
    pub path: Vec<PathStep>,
}

impl Route {
    pub fn leaf_goal(&self) -> &[f32] {
        &self.path.last().expect("route has at least the root").goal
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SplitOutcome {
    Split {
        left: usize,
        right: usize,
        method: BoundaryMethod,
    },
    /// The population had no separable spread (e.g. all goals identical);
    /// the node stays a leaf until `new_threshold`.
    Declined { new_threshold: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch for each trained leaf.
    pub epoch_loss: BTreeMap<NodeKey, Vec<f64>>,
}

/// Binary tree of representation modules keyed by path.
#[derive(Clone, Debug, PartialEq)]
pub struct Hierarchy {
    config: HolmesConfig,
    nodes: BTreeMap<NodeKey, HierarchyNode>,
}

fn gather(t: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    let item = t.len() / t.dim(0);
    let mut data = Vec::with_capacity(idx.len() * item);
    for &i in idx {
        data.extend_from_slice(t.item(i));
    }
    Tensor::new(shape, data).expect("gathered rows keep their shape")
}

fn gather_taps(taps: &NodeTaps<f32>, idx: &[usize]) -> NodeTaps<f32> {
    NodeTaps {
        enc_local: gather(&taps.enc_local, idx),
        dec_global: gather(&taps.dec_global, idx),
        dec_local: gather(&taps.dec_local, idx),
        embedding: gather(&taps.embedding, idx),
        original: gather(&taps.original, idx),
    }
}

impl Hierarchy {
    pub fn new<R: Rng + ?Sized>(config: HolmesConfig, rng: &mut R) -> Result<Self> {
        if config.n_max < 2 || config.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "n_max must be >= 2 and batch_size >= 1".into(),
            ));
        }
        let root = NodeModule::new(config.arch, 0, rng)?;
        let mut nodes = BTreeMap::new();
        nodes.insert(NodeKey::root(), HierarchyNode::fresh(root, &config));
        Ok(Self { config, nodes })
    }

    pub(crate) fn from_parts(config: HolmesConfig, nodes: BTreeMap<NodeKey, HierarchyNode>) -> Self {
        Self { config, nodes }
    }

    pub fn config(&self) -> &HolmesConfig {
        &self.config
    }

    pub fn nodes(&self) -> &BTreeMap<NodeKey, HierarchyNode> {
        &self.nodes
    }

    pub fn node(&self, key: &NodeKey) -> Result<&HierarchyNode> {
        self.nodes
            .get(key)
            .ok_or_else(|| Error::UnknownNode(key.to_string()))
    }

    fn node_mut(&mut self, key: &NodeKey) -> Result<&mut HierarchyNode> {
        self.nodes
            .get_mut(key)
            .ok_or_else(|| Error::UnknownNode(key.to_string()))
    }

    /// Empties every node's population, keeping modules and boundaries, so a
    /// new observation set can be routed through a trained tree.
    pub fn clear_members(&mut self) {
        for node in self.nodes.values_mut() {
            node.members.clear();
        }
    }

    pub fn leaves(&self) -> Vec<NodeKey> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.is_leaf())
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn population(&self, key: &NodeKey) -> Result<usize> {
        Ok(self.node(key)?.population())
    }

    pub fn is_saturated(&self, key: &NodeKey) -> Result<bool> {
        let node = self.node(key)?;
        if !node.is_leaf() {
            return Err(Error::NotALeaf(key.to_string()));
        }
        Ok(node.population() >= node.split_threshold)
    }

    /// Taps of every ancestor of `key` on batch `x`, root first.
    pub fn ancestor_features(&self, key: &NodeKey, x: &Tensor<f32>) -> Result<AncestorFeatures<f32>> {
        let mut anc = AncestorFeatures::none();
        for a in key.ancestors() {
            let (_, taps) = self.node(&a)?.module.forward_eval(x, &anc)?;
            anc.levels.push(taps);
        }
        Ok(anc)
    }

    pub fn route(&self, o: &Observation) -> Result<Route> {
        let x = observation_batch(&[o])?;
        Ok(self.route_batch(&x)?.pop().expect("one observation routed"))
    }

    /// Walks every row of `x` from the root down to its leaf, encoding at
    /// each node with the ancestors' lateral features.
    pub fn route_batch(&self, x: &Tensor<f32>) -> Result<Vec<Route>> {
        let n = x.dim(0);
        let mut paths: Vec<Vec<PathStep>> = vec![Vec::new(); n];
        let mut leaves: Vec<Option<NodeKey>> = vec![None; n];
        let all: Vec<usize> = (0..n).collect();
        let mut stack = vec![(NodeKey::root(), all, x.clone(), AncestorFeatures::none())];
        while let Some((key, rows, xs, anc)) = stack.pop() {
            let node = self.node(&key)?;
            let (enc, taps) = node.module.forward_eval(&xs, &anc)?;
            let mut left = Vec::new();
            let mut right = Vec::new();
            for (local, &row) in rows.iter().enumerate() {
                let goal = enc.mu.item(local).to_vec();
                paths[row].push(PathStep {
                    key: key.clone(),
                    goal: goal.clone(),
                    logvar: enc.logvar.item(local).to_vec(),
                });
                match &node.boundary {
                    None => leaves[row] = Some(key.clone()),
                    Some(b) => match b.side(&goal) {
                        Side::Left => left.push(local),
                        Side::Right => right.push(local),
                    },
                }
            }
            for (side, locals) in [(Side::Left, left), (Side::Right, right)] {
                if locals.is_empty() {
                    continue;
                }
                let mut child_anc = AncestorFeatures {
                    levels: anc.levels.iter().map(|t| gather_taps(t, &locals)).collect(),
                };
                child_anc.levels.push(gather_taps(&taps, &locals));
                let child_rows = locals.iter().map(|&l| rows[l]).collect();
                stack.push((key.child(side), child_rows, gather(&xs, &locals), child_anc));
            }
        }
        Ok(paths
            .into_iter()
            .zip(leaves)
            .map(|(path, leaf)| Route {
                leaf: leaf.expect("every row reaches a leaf"),
                path,
            })
            .collect())
    }

    /// Appends history entry `entry` to every node on its path.
    pub fn record(&mut self, entry: usize, route: &Route) -> Result<()> {
        for step in &route.path {
            if step.goal.len() != LATENT_DIM {
                return Err(Error::Shape(format!("goal of length {}", step.goal.len())));
            }
            self.node_mut(&step.key)?.members.push(Member {
                entry,
                goal: step.goal.clone(),
            });
        }
        Ok(())
    }

    /// Goals and per-image reconstruction BCE of `entries` at node `key`.
    pub fn encode_at(
        &self,
        key: &NodeKey,
        entries: &[usize],
        observations: &[Observation],
    ) -> Result<(Vec<Vec<f32>>, Vec<f64>)> {
        let node = self.node(key)?;
        let mut goals = Vec::with_capacity(entries.len());
        let mut errors = Vec::with_capacity(entries.len());
        for chunk in entries.chunks(self.config.batch_size) {
            let obs = chunk
                .iter()
                .map(|&e| observation(observations, e))
                .collect::<Result<Vec<_>>>()?;
            let x = observation_batch(&obs)?;
            let anc = self.ancestor_features(key, &x)?;
            let (enc, taps) = node.module.forward_eval(&x, &anc)?;
            goals.extend((0..chunk.len()).map(|b| enc.mu.item(b).to_vec()));
            errors.extend(per_image_bce(&taps.original, &x)?);
        }
        Ok((goals, errors))
    }

    /// Freezes a saturated leaf, fits its boundary and hands its population
    /// to two fresh children (encoded by the children themselves).
    pub fn split<R: Rng + ?Sized>(
        &mut self,
        key: &NodeKey,
        observations: &[Observation],
        rng: &mut R,
    ) -> Result<SplitOutcome> {
        if !self.is_saturated(key)? {
            return Err(Error::NotSaturated(key.to_string()));
        }
        let entries: Vec<usize> = self.node(key)?.members.iter().map(|m| m.entry).collect();
        let (goals, errors) = self.encode_at(key, &entries, observations)?;
        let Some(fit) = fit_boundary(&goals, &errors, &self.config.svm)? else {
            let n_max = self.config.n_max;
            let node = self.node_mut(key)?;
            node.split_threshold = node.population() + n_max;
            return Ok(SplitOutcome::Declined {
                new_threshold: node.split_threshold,
            });
        };

        let parent = self.node_mut(key)?;
        parent.module.freeze();
        for (m, g) in parent.members.iter_mut().zip(&goals) {
            m.goal = g.clone();
        }
        parent.boundary = Some(fit.boundary.clone());
        parent.boundary_method = Some(fit.method);
        let left_module = NodeModule::child_of(&parent.module, rng)?;
        let right_module = NodeModule::child_of(&parent.module, rng)?;
        self.nodes
            .insert(key.left(), HierarchyNode::fresh(left_module, &self.config));
        self.nodes
            .insert(key.right(), HierarchyNode::fresh(right_module, &self.config));

        let mut counts = [0usize; 2];
        for side in [Side::Left, Side::Right] {
            let child = key.child(side);
            let assigned: Vec<usize> = entries
                .iter()
                .zip(&goals)
                .filter(|(_, g)| fit.boundary.side(g) == side)
                .map(|(&e, _)| e)
                .collect();
            let (child_goals, _) = self.encode_at(&child, &assigned, observations)?;
            let node = self.node_mut(&child)?;
            node.members = assigned
                .into_iter()
                .zip(child_goals)
                .map(|(entry, goal)| Member { entry, goal })
                .collect();
            counts[side as usize] = node.population();
        }
        Ok(SplitOutcome::Split {
            left: counts[0],
            right: counts[1],
            method: fit.method,
        })
    }

    /// Trains every non-frozen leaf on its own population, then refreshes the
    /// goals those leaves store.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        observations: &[Observation],
        epochs: usize,
        rng: &mut R,
    ) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        let trainable: Vec<NodeKey> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.is_leaf() && !n.module.is_frozen() && !n.members.is_empty())
            .map(|(k, _)| k.clone())
            .collect();
        for key in trainable {
            let losses = self.train_leaf(&key, observations, epochs, rng)?;
            report.epoch_loss.insert(key, losses);
        }
        self.refresh_goals(observations)?;
        Ok(report)
    }

    fn sampling_weights(&self, node: &HierarchyNode) -> Vec<f64> {
        let n = node.members.len();
        let old = node.trained_upto.min(n);
        let new = n - old;
        if old == 0 || new == 0 {
            return vec![1.0; n];
        }
        let m = self.config.new_entry_mass;
        let w_old = (1.0 - m) / old as f64;
        let w_new = m / new as f64;
        (0..n).map(|i| if i < old { w_old } else { w_new }).collect()
    }

    fn train_leaf<R: Rng + ?Sized>(
        &mut self,
        key: &NodeKey,
        observations: &[Observation],
        epochs: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let node = self.node(key)?;
        let entries: Vec<usize> = node.members.iter().map(|m| m.entry).collect();
        let sampler = WeightedIndex::new(self.sampling_weights(node))
            .map_err(|e| Error::InvalidArgument(format!("sampling weights: {e}")))?;
        let mut epoch_loss = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let draws: Vec<usize> = (0..entries.len()).map(|_| sampler.sample(rng)).collect();
            let mut total = 0.0;
            let mut batches = 0usize;
            for chunk in draws.chunks(self.config.batch_size) {
                let obs = chunk
                    .iter()
                    .map(|&i| observation(observations, entries[i]))
                    .collect::<Result<Vec<_>>>()?;
                let x = observation_batch(&obs)?;
                let anc = self.ancestor_features(key, &x)?;
                let noise = Tensor::from_fn(&[chunk.len(), LATENT_DIM], |_| {
                    rng.sample::<f32, _>(StandardNormal)
                });
                let node = self.node_mut(key)?;
                let (loss, grads) = node.module.loss_and_grads(&x, &anc, Some(&noise))?;
                if !loss.total.is_finite() {
                    return Err(Error::NonFinite("training loss"));
                }
                node.module.apply_grads(&grads, &mut node.optimizer)?;
                total += loss.total;
                batches += 1;
            }
            epoch_loss.push(total / batches.max(1) as f64);
        }
        let node = self.node_mut(key)?;
        node.trained_upto = node.members.len();
        Ok(epoch_loss)
    }

    /// Re-encodes the stored goals of every non-frozen node. Frozen nodes
    /// and their ancestors never change, so their goals stay current.
    pub fn refresh_goals(&mut self, observations: &[Observation]) -> Result<()> {
        let keys: Vec<NodeKey> = self
            .nodes
            .iter()
            .filter(|(_, n)| !n.module.is_frozen())
            .map(|(k, _)| k.clone())
            .collect();
        for key in keys {
            let entries: Vec<usize> = self.node(&key)?.members.iter().map(|m| m.entry).collect();
            let (goals, _) = self.encode_at(&key, &entries, observations)?;
            for (m, g) in self.node_mut(&key)?.members.iter_mut().zip(goals) {
                m.goal = g;
            }
        }
        Ok(())
    }

    /// Structural invariants: prefix-closed keys, boundary iff two children,
    /// every non-leaf frozen, child populations partitioning the parent's.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(format!("invalid hierarchy: {msg}")));
        if !self.nodes.contains_key(&NodeKey::root()) {
            return fail("missing root".into());
        }
        for (key, node) in &self.nodes {
            if let Some(p) = key.parent() {
                if !self.nodes.contains_key(&p) {
                    return fail(format!("{key} has no parent"));
                }
            }
            if node.module.n_ancestors() != key.depth() {
                return fail(format!("{key} wired to {} ancestors", node.module.n_ancestors()));
            }
            let kids = [key.left(), key.right()].map(|k| self.nodes.get(&k));
            match (&node.boundary, kids) {
                (None, [None, None]) => {}
                (Some(b), [Some(l), Some(r)]) => {
                    if !b.is_finite() {
                        return fail(format!("{key} has a non-finite boundary"));
                    }
                    if !node.module.is_frozen() {
                        return fail(format!("inner node {key} is not frozen"));
                    }
                    if l.population() + r.population() != node.population() {
                        return fail(format!(
                            "{key}: {} + {} children vs {} members",
                            l.population(),
                            r.population(),
                            node.population()
                        ));
                    }
                }
                _ => return fail(format!("{key}: boundary and children disagree")),
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        TreeSnapshot {
            nodes: self
                .nodes
                .iter()
                .map(|(k, n)| NodeSummary {
                    key: k.clone(),
                    depth: k.depth(),
                    population: n.population(),
                    frozen: n.module.is_frozen(),
                    leaf: n.is_leaf(),
                    split_threshold: n.split_threshold,
                    boundary: n.boundary.clone(),
                    boundary_method: n.boundary_method,
                })
                .collect(),
        }
    }
}

fn observation(observations: &[Observation], entry: usize) -> Result<&Observation> {
    observations
        .get(entry)
        .ok_or_else(|| Error::InvalidArgument(format!("no observation for history entry {entry}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub key: NodeKey,
    pub depth: usize,
    pub population: usize,
    pub frozen: bool,
    pub leaf: bool,
    pub split_threshold: usize,
    pub boundary: Option<Boundary>,
    pub boundary_method: Option<BoundaryMethod>,
}

/// Serializable view of the tree without module weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub nodes: Vec<NodeSummary>,
}
