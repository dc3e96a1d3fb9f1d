use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::holmes::{Hierarchy, NodeKey};
use crate::lenia::Observation;
use crate::vae::observation_batch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub n_images: usize,
    /// Mean per-image BCE of the root module.
    pub root_bce: f64,
    /// Mean per-image BCE of the leaf each image routes to.
    pub leaf_bce: f64,
    /// Mean BCE at each depth over the images whose path reaches it.
    pub by_depth: BTreeMap<usize, f64>,
    pub leaf_counts: BTreeMap<NodeKey, usize>,
}

/// Reconstruction error of a test set along each image's routing path.
pub fn reconstruction_report(h: &Hierarchy, test: &[Observation]) -> Result<ReconstructionReport> {
    let (by_node, leaves) = route_all(h, test)?;
    let mut bce = vec![BTreeMap::new(); test.len()];
    for (key, idx) in &by_node {
        let (_, errors) = h.encode_at(key, idx, test)?;
        for (&i, e) in idx.iter().zip(errors) {
            bce[i].insert(key.depth(), e);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let root: Vec<f64> = bce.iter().map(|m| m[&0]).collect();
    let leaf: Vec<f64> = bce
        .iter()
        .zip(&leaves)
        .map(|(m, k)| m[&k.depth()])
        .collect();
    let max_depth = leaves.iter().map(|k| k.depth()).max().unwrap_or(0);
    let by_depth = (0..=max_depth)
        .map(|d| {
            let v: Vec<f64> = bce.iter().filter_map(|m| m.get(&d).copied()).collect();
            (d, mean(&v))
        })
        .collect();
    let mut leaf_counts = BTreeMap::new();
    for k in leaves {
        *leaf_counts.entry(k).or_insert(0) += 1;
    }
    Ok(ReconstructionReport {
        n_images: test.len(),
        root_bce: mean(&root),
        leaf_bce: mean(&leaf),
        by_depth,
        leaf_counts,
    })
}

/// Per node, the latent means of the test images routed through it, keyed
/// by image index. Input for representational similarity between nodes.
pub fn node_representations(
    h: &Hierarchy,
    test: &[Observation],
) -> Result<BTreeMap<NodeKey, BTreeMap<usize, Vec<f32>>>> {
    let (by_node, _) = route_all(h, test)?;
    by_node
        .into_iter()
        .map(|(key, idx)| {
            let (goals, _) = h.encode_at(&key, &idx, test)?;
            Ok((key, idx.into_iter().zip(goals).collect()))
        })
        .collect()
}

type Routed = (BTreeMap<NodeKey, Vec<usize>>, Vec<NodeKey>);

fn route_all(h: &Hierarchy, test: &[Observation]) -> Result<Routed> {
    let mut by_node: BTreeMap<NodeKey, Vec<usize>> = BTreeMap::new();
    let mut leaves = Vec::with_capacity(test.len());
    for chunk_start in (0..test.len()).step_by(h.config().batch_size) {
        let end = (chunk_start + h.config().batch_size).min(test.len());
        let x = observation_batch(&test[chunk_start..end].iter().collect::<Vec<_>>())?;
        for (i, r) in h.route_batch(&x)?.into_iter().enumerate() {
            for step in &r.path {
                by_node.entry(step.key.clone()).or_default().push(chunk_start + i);
            }
            leaves.push(r.leaf);
        }
    }
    Ok((by_node, leaves))
}
