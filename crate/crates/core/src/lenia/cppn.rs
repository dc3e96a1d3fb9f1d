//! Compositional pattern-producing networks that paint Lenia initial states.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::PatternState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sine,
    Gaussian,
    Sigmoid,
    Identity,
    Absolute,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Sine,
        Activation::Gaussian,
        Activation::Sigmoid,
        Activation::Identity,
        Activation::Absolute,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sine => x.sin(),
            Activation::Gaussian => (-x * x).exp(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
            Activation::Absolute => x.abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CppnInput {
    X,
    Y,
    Distance,
    Bias,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "input")]
pub enum NodeRole {
    Input(CppnInput),
    Hidden,
    Output,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CppnNode {
    pub id: u32,
    pub role: NodeRole,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub from: u32,
    pub to: u32,
    pub weight: f64,
}

/// Node/edge-list genome. Inputs are ids 0-3 (x, y, distance, bias) and the
/// single output is id 4; hidden nodes follow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CppnGenome {
    pub nodes: Vec<CppnNode>,
    pub connections: Vec<Connection>,
}

pub const OUTPUT_ID: u32 = 4;
const INPUTS: [CppnInput; 4] = [CppnInput::X, CppnInput::Y, CppnInput::Distance, CppnInput::Bias];

/// Fraction of the half-width inside which the initial state may be active.
pub const DEFAULT_INIT_RADIUS: f64 = 0.8;

impl CppnGenome {
    /// Inputs and an output node with the given activation, no hidden nodes
    /// and no connections.
    pub fn skeleton(output_activation: Activation) -> Self {
        let mut nodes: Vec<CppnNode> = INPUTS
            .iter()
            .enumerate()
            .map(|(i, &inp)| CppnNode {
                id: i as u32,
                role: NodeRole::Input(inp),
                activation: Activation::Identity,
            })
            .collect();
        nodes.push(CppnNode {
            id: OUTPUT_ID,
            role: NodeRole::Output,
            activation: output_activation,
        });
        Self {
            nodes,
            connections: Vec::new(),
        }
    }

    pub fn input_id(input: CppnInput) -> u32 {
        INPUTS.iter().position(|&i| i == input).expect("known input") as u32
    }

    pub fn add_hidden(&mut self, activation: Activation) -> u32 {
        let id = self.nodes.iter().map(|n| n.id).max().unwrap_or(0) + 1;
        self.nodes.push(CppnNode {
            id,
            role: NodeRole::Hidden,
            activation,
        });
        id
    }

    pub fn connect(&mut self, from: u32, to: u32, weight: f64) {
        self.connections.push(Connection { from, to, weight });
    }

    /// Node ids in evaluation order; fails on cycles or dangling edges.
    pub fn topological_order(&self) -> Result<Vec<u32>> {
        let mut indegree: BTreeMap<u32, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        for c in &self.connections {
            if !indegree.contains_key(&c.from) {
                return Err(Error::InvalidParams(format!("edge from unknown node {}", c.from)));
            }
            match indegree.get_mut(&c.to) {
                Some(d) => *d += 1,
                None => {
                    return Err(Error::InvalidParams(format!("edge to unknown node {}", c.to)))
                }
            }
        }
        let mut ready: Vec<u32> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        ready.reverse();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop() {
            order.push(id);
            for c in self.connections.iter().filter(|c| c.from == id) {
                let d = indegree.get_mut(&c.to).expect("checked");
                *d -= 1;
                if *d == 0 {
                    ready.push(c.to);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::CyclicGenome);
        }
        Ok(order)
    }

    pub fn validate(&self) -> Result<()> {
        let order = self.topological_order()?;
        if self.connections.iter().any(|c| !c.weight.is_finite()) {
            return Err(Error::InvalidParams("non-finite CPPN weight".into()));
        }
        if !self.nodes.iter().any(|n| n.id == OUTPUT_ID && n.role == NodeRole::Output) {
            return Err(Error::InvalidParams("genome has no output node".into()));
        }
        for c in &self.connections {
            if self.role(c.to) == Some(NodeRole::Output) {
                continue;
            }
            if matches!(self.role(c.to), Some(NodeRole::Input(_))) {
                return Err(Error::InvalidParams(format!("edge into input node {}", c.to)));
            }
        }
        // Some input must reach the output.
        let mut reach: BTreeMap<u32, bool> = BTreeMap::new();
        for id in order {
            let r = matches!(self.role(id), Some(NodeRole::Input(_)))
                || self
                    .connections
                    .iter()
                    .any(|c| c.to == id && reach.get(&c.from).copied().unwrap_or(false));
            reach.insert(id, r);
        }
        if !reach[&OUTPUT_ID] {
            return Err(Error::InvalidParams("no input-to-output path".into()));
        }
        Ok(())
    }

    fn role(&self, id: u32) -> Option<NodeRole> {
        self.nodes.iter().find(|n| n.id == id).map(|n| n.role)
    }

    /// Raw output node value (after its activation) at one input point.
    pub fn evaluate(&self, x: f64, y: f64) -> Result<f64> {
        let order = self.topological_order()?;
        Ok(self.evaluate_ordered(&order, x, y))
    }

    fn evaluate_ordered(&self, order: &[u32], x: f64, y: f64) -> f64 {
        let d = (x * x + y * y).sqrt();
        let mut values: BTreeMap<u32, f64> = BTreeMap::new();
        for &id in order {
            let node = self.nodes.iter().find(|n| n.id == id).expect("ordered");
            let v = match node.role {
                NodeRole::Input(CppnInput::X) => x,
                NodeRole::Input(CppnInput::Y) => y,
                NodeRole::Input(CppnInput::Distance) => d,
                NodeRole::Input(CppnInput::Bias) => 1.0,
                NodeRole::Hidden | NodeRole::Output => {
                    let s: f64 = self
                        .connections
                        .iter()
                        .filter(|c| c.to == id)
                        .map(|c| c.weight * values[&c.from])
                        .sum();
                    node.activation.apply(s)
                }
            };
            values.insert(id, v);
        }
        values[&OUTPUT_ID]
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let weight = Normal::new(0.0, 2.0).expect("finite sigma");
        let mut g = Self::skeleton(*Activation::ALL.choose(rng).expect("non-empty"));
        let n_hidden = rng.random_range(3..=8);
        let mut sources: Vec<u32> = (0..INPUTS.len() as u32).collect();
        let mut hidden = Vec::new();
        for _ in 0..n_hidden {
            let act = *Activation::ALL.choose(rng).expect("non-empty");
            let id = g.add_hidden(act);
            let fan_in = rng.random_range(1..=3usize).min(sources.len());
            for &from in sources.choose_multiple(rng, fan_in) {
                g.connect(from, id, weight.sample(rng));
            }
            sources.push(id);
            hidden.push(id);
        }
        let last = *hidden.last().expect("at least three hidden nodes");
        for &h in &hidden {
            if h == last || rng.random_bool(0.5) {
                g.connect(h, OUTPUT_ID, weight.sample(rng));
            }
        }
        g
    }

    /// Structural and weight mutation; acyclicity is preserved because new
    /// edges always run forward in the current topological order.
    pub fn mutate<R: Rng + ?Sized>(
        &self,
        add_node_prob: f64,
        add_connection_prob: f64,
        weight_sigma: f64,
        rng: &mut R,
    ) -> Self {
        let mut g = self.clone();
        if weight_sigma > 0.0 {
            let noise = Normal::new(0.0, weight_sigma).expect("finite sigma");
            for c in &mut g.connections {
                c.weight += noise.sample(rng);
            }
        }
        if add_node_prob > 0.0 && !g.connections.is_empty() && rng.random_bool(add_node_prob) {
            let i = rng.random_range(0..g.connections.len());
            let old = g.connections.remove(i);
            let act = *Activation::ALL.choose(rng).expect("non-empty");
            let id = g.add_hidden(act);
            g.connect(old.from, id, 1.0);
            g.connect(id, old.to, old.weight);
        }
        if add_connection_prob > 0.0 && rng.random_bool(add_connection_prob) {
            let order = g.topological_order().expect("mutation keeps genome acyclic");
            let i = rng.random_range(0..order.len() - 1);
            let j = rng.random_range(i + 1..order.len());
            let (from, to) = (order[i], order[j]);
            let target_ok = !matches!(g.role(to), Some(NodeRole::Input(_)))
                && g.role(from) != Some(NodeRole::Output);
            if target_ok {
                let w = Normal::new(0.0, 1.0).expect("unit").sample(rng);
                g.connect(from, to, w);
            }
        }
        g
    }
}

/// Squashes the raw output into `[0, 1)`; zero stays zero.
pub fn squash(v: f64) -> f64 {
    v.tanh().abs()
}

/// Paints the genome over `[-1, 1]^2` cell centres. Cells farther than
/// `init_radius` (normalized) from the centre are zero.
pub fn render_cppn(genome: &CppnGenome, size: usize, init_radius: f64) -> Result<PatternState> {
    let order = genome.topological_order()?;
    let mut cells = Vec::with_capacity(size * size);
    for j in 0..size {
        let y = 2.0 * (j as f64 + 0.5) / size as f64 - 1.0;
        for i in 0..size {
            let x = 2.0 * (i as f64 + 0.5) / size as f64 - 1.0;
            let v = if (x * x + y * y).sqrt() > init_radius {
                0.0
            } else {
                squash(genome.evaluate_ordered(&order, x, y))
            };
            cells.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
        }
    }
    PatternState::from_cells(size, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weight_bias_gives_uniform_zero() {
        let mut g = CppnGenome::skeleton(Activation::Identity);
        g.connect(CppnGenome::input_id(CppnInput::Bias), OUTPUT_ID, 0.0);
        let p = render_cppn(&g, 8, DEFAULT_INIT_RADIUS).unwrap();
        assert!(p.cells().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_node_genome_matches_hand_evaluation() {
        // out = identity(1.5 * sine(2x + 0.5)) with cells outside r = 0.8 zeroed.
        let mut g = CppnGenome::skeleton(Activation::Identity);
        let h = g.add_hidden(Activation::Sine);
        g.connect(CppnGenome::input_id(CppnInput::X), h, 2.0);
        g.connect(CppnGenome::input_id(CppnInput::Bias), h, 0.5);
        g.connect(h, OUTPUT_ID, 1.5);
        let p = render_cppn(&g, 4, DEFAULT_INIT_RADIUS).unwrap();
        let coords = [-0.75, -0.25, 0.25, 0.75];
        for (j, &y) in coords.iter().enumerate() {
            for (i, &x) in coords.iter().enumerate() {
                let expected: f64 = if (x * x + y * y as f64).sqrt() > 0.8 {
                    0.0
                } else {
                    (1.5 * (2.0 * x + 0.5f64).sin()).tanh().abs()
                };
                assert!((p.get(j, i) - expected).abs() < 1e-12, "cell {j},{i}");
            }
        }
    }

    #[test]
    fn cycles_rejected() {
        let mut g = CppnGenome::skeleton(Activation::Identity);
        let a = g.add_hidden(Activation::Sine);
        let b = g.add_hidden(Activation::Sine);
        g.connect(0, a, 1.0);
        g.connect(a, b, 1.0);
        g.connect(b, a, 1.0);
        g.connect(b, OUTPUT_ID, 1.0);
        assert!(matches!(render_cppn(&g, 4, 0.8), Err(Error::CyclicGenome)));
    }

    #[test]
    fn random_genomes_valid_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let g = CppnGenome::random(&mut rng);
            g.validate().unwrap();
            let hidden = g.nodes.iter().filter(|n| n.role == NodeRole::Hidden).count();
            assert!((3..=8).contains(&hidden));
            let p = render_cppn(&g, 16, DEFAULT_INIT_RADIUS).unwrap();
            assert!(p.cells().iter().all(|v| (0.0..=1.0).contains(v)));
            let mut m = g.clone();
            for _ in 0..20 {
                m = m.mutate(0.3, 0.3, 0.3, &mut rng);
                m.validate().unwrap();
            }
        }
    }

    #[test]
    fn zero_mutation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = CppnGenome::random(&mut rng);
        assert_eq!(g.mutate(0.0, 0.0, 0.0, &mut rng), g);
    }
}
