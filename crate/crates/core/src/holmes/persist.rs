//! Hierarchy checkpoints: `tree.json` plus one tensor file per node.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::ndiff::{read_tensors, write_tensors, Tensor};
use crate::vae::{NodeDescriptor, NodeModule};

use super::boundary::{Boundary, BoundaryMethod};
use super::hierarchy::{Hierarchy, HierarchyNode, HolmesConfig, Member};
use super::NodeKey;

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    descriptor: NodeDescriptor,
    split_threshold: usize,
    trained_upto: usize,
    boundary: Option<Boundary>,
    boundary_method: Option<BoundaryMethod>,
    adam_step: u64,
    members: Vec<Member>,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    config: HolmesConfig,
    nodes: Vec<NodeRecord>,
}

fn tensor_file(dir: &Path, key: &NodeKey) -> std::path::PathBuf {
    dir.join("nodes").join(format!("{key}.bin"))
}

impl Hierarchy {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("nodes")).at(dir)?;
        let mut records = Vec::new();
        for (key, node) in self.nodes() {
            let m = &node.module;
            let named = m.named_tensors();
            let mut tensors: Vec<(String, &Tensor<f32>)> = named.clone();
            for (slot, moments) in [("m", &node.optimizer.m), ("v", &node.optimizer.v)] {
                tensors.extend(
                    named
                        .iter()
                        .zip(moments)
                        .map(|((n, _), t)| (format!("adam.{slot}.{n}"), t)),
                );
            }
            write_tensors(&tensor_file(dir, key), tensors)?;
            records.push(NodeRecord {
                descriptor: NodeDescriptor {
                    key: key.to_string(),
                    frozen: m.is_frozen(),
                    arch: *m.arch(),
                    ancestors: key.ancestors().iter().map(|a| a.to_string()).collect(),
                    global_tap: m.arch().global_tap(),
                    local_tap: m.arch().local_tap(),
                },
                split_threshold: node.split_threshold,
                trained_upto: node.trained_upto,
                boundary: node.boundary.clone(),
                boundary_method: node.boundary_method,
                adam_step: node.optimizer.step,
                members: node.members.clone(),
            });
        }
        let file = TreeFile {
            config: self.config().clone(),
            nodes: records,
        };
        let path = dir.join("tree.json");
        fs::write(&path, serde_json::to_vec(&file)?).at(path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("tree.json");
        let file: TreeFile = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
        // Weights are overwritten from disk; the generator only sizes them.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut nodes = BTreeMap::new();
        for rec in file.nodes {
            let key = NodeKey::parse(&rec.descriptor.key)?;
            let mut module = NodeModule::new(rec.descriptor.arch, key.depth(), &mut rng)?;
            let tensors = read_tensors(&tensor_file(dir, &key))?;
            module.load_named(&tensors)?;
            let mut optimizer = module.new_optimizer(file.config.adam);
            optimizer.step = rec.adam_step;
            let names: Vec<String> = module.named_tensors().into_iter().map(|(n, _)| n).collect();
            for (slot, moments) in [("m", &mut optimizer.m), ("v", &mut optimizer.v)] {
                for (name, t) in names.iter().zip(moments.iter_mut()) {
                    let want = format!("adam.{slot}.{name}");
                    let (_, stored) = tensors
                        .iter()
                        .find(|(n, _)| *n == want)
                        .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks {want}")))?;
                    if stored.shape() != t.shape() {
                        return Err(Error::Shape(format!("{want}: {:?}", stored.shape())));
                    }
                    *t = stored.clone();
                }
            }
            if rec.descriptor.frozen {
                module.freeze();
            }
            nodes.insert(
                key,
                HierarchyNode {
                    module,
                    optimizer,
                    boundary: rec.boundary,
                    boundary_method: rec.boundary_method,
                    members: rec.members,
                    split_threshold: rec.split_threshold,
                    trained_upto: rec.trained_upto,
                },
            );
        }
        let h = Hierarchy::from_parts(file.config, nodes);
        h.validate()?;
        Ok(h)
    }
}
