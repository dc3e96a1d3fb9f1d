use serde::{Deserialize, Serialize};

use crate::lenia::Observation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternCategory {
    Dead,
    Animal,
    NonAnimal,
}

impl PatternCategory {
    pub const ALL: [Self; 3] = [Self::Dead, Self::Animal, Self::NonAnimal];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dead => "dead",
            Self::Animal => "animal",
            Self::NonAnimal => "non_animal",
        }
    }
}

impl std::str::FromStr for PatternCategory {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| crate::Error::InvalidArgument(format!("unknown pattern category {s:?}")))
    }
}

/// Thresholds of the connected-component categorizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorizerConfig {
    /// Total activity below which a pattern counts as dead.
    pub dead_activity: f64,
    /// Cells above this value take part in connected components.
    pub cell_threshold: f32,
    /// Largest wrap-aware extent of an animal, as a fraction of the width.
    pub max_extent_frac: f64,
    /// Share of total activity the largest component must hold.
    pub min_mass_frac: f64,
}

impl Default for CategorizerConfig {
    fn default() -> Self {
        Self {
            dead_activity: 1.0,
            cell_threshold: 0.1,
            max_extent_frac: 0.6,
            min_mass_frac: 0.8,
        }
    }
}

/// One 8-connected component on the torus.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub cells: Vec<usize>,
    pub mass: f64,
}

/// Components of cells strictly above `threshold`, 8-connectivity with
/// wrap-around, in order of their first cell.
pub fn components(o: &Observation, threshold: f32) -> Vec<Component> {
    let n = o.size();
    let cells = o.cells();
    let mut label = vec![usize::MAX; n * n];
    let mut out = Vec::new();
    for start in 0..n * n {
        if cells[start] <= threshold || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![start];
        label[start] = id;
        let mut comp = Component {
            cells: Vec::new(),
            mass: 0.0,
        };
        while let Some(c) = stack.pop() {
            comp.cells.push(c);
            comp.mass += cells[c] as f64;
            let (y, x) = (c / n, c % n);
            for dy in [n - 1, 0, 1] {
                for dx in [n - 1, 0, 1] {
                    let nb = ((y + dy) % n) * n + (x + dx) % n;
                    if label[nb] == usize::MAX && cells[nb] > threshold {
                        label[nb] = id;
                        stack.push(nb);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Length of the shortest cyclic arc covering `positions` on a ring of `n`.
pub fn circular_extent(positions: &[usize], n: usize) -> usize {
    let mut occupied = vec![false; n];
    for &p in positions {
        occupied[p % n] = true;
    }
    let count = occupied.iter().filter(|&&o| o).count();
    if count == 0 {
        return 0;
    }
    // Longest run of empty slots, wrapping.
    let mut best = 0;
    let mut run = 0;
    for i in 0..2 * n {
        if occupied[i % n] {
            run = 0;
        } else {
            run += 1;
            best = best.max(run.min(n));
        }
    }
    n - best
}

pub fn categorize(o: &Observation, cfg: &CategorizerConfig) -> PatternCategory {
    let total = o.total_activity();
    if total < cfg.dead_activity {
        return PatternCategory::Dead;
    }
    let n = o.size();
    let Some(largest) = components(o, cfg.cell_threshold)
        .into_iter()
        .max_by(|a, b| a.mass.total_cmp(&b.mass))
    else {
        return PatternCategory::NonAnimal;
    };
    let rows: Vec<usize> = largest.cells.iter().map(|c| c / n).collect();
    let cols: Vec<usize> = largest.cells.iter().map(|c| c % n).collect();
    let extent = circular_extent(&rows, n).max(circular_extent(&cols, n));
    if (extent as f64) < cfg.max_extent_frac * n as f64 && largest.mass > cfg.min_mass_frac * total {
        PatternCategory::Animal
    } else {
        PatternCategory::NonAnimal
    }
}
