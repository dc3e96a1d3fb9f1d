use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::vae::LATENT_DIM;

/// Per-axis interior range. Each axis has four bins: below range, two equal
/// interior halves, above range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityBins {
    pub ranges: Vec<(f64, f64)>,
}

pub const BINS_PER_AXIS: u8 = 4;

impl Default for DiversityBins {
    fn default() -> Self {
        Self::uniform(LATENT_DIM, -3.0, 3.0)
    }
}

impl DiversityBins {
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            ranges: vec![(lo, hi); dim],
        }
    }

    pub fn bin(&self, axis: usize, v: f64) -> u8 {
        let (lo, hi) = self.ranges[axis];
        let mid = 0.5 * (lo + hi);
        if v < lo {
            0
        } else if v < mid {
            1
        } else if v <= hi {
            2
        } else {
            3
        }
    }

    pub fn cell(&self, g: &[f32]) -> Vec<u8> {
        assert_eq!(g.len(), self.ranges.len(), "latent dimension vs bin ranges");
        g.iter()
            .enumerate()
            .map(|(d, &v)| self.bin(d, v as f64))
            .collect()
    }
}

/// Number of distinct occupied bin cells.
pub fn diversity<'a>(latents: impl IntoIterator<Item = &'a [f32]>, bins: &DiversityBins) -> usize {
    latents
        .into_iter()
        .map(|g| bins.cell(g))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Diversity after each successive point.
pub fn diversity_curve<'a>(latents: impl IntoIterator<Item = &'a [f32]>, bins: &DiversityBins) -> Vec<usize> {
    let mut seen = BTreeSet::new();
    latents
        .into_iter()
        .map(|g| {
            seen.insert(bins.cell(g));
            seen.len()
        })
        .collect()
}
