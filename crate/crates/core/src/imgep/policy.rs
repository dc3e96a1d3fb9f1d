use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::PatternCategory;
use crate::error::{Error, Result};
use crate::holmes::{Member, NodeKey};
use crate::lenia::{mutate_params, sample_random_params, MutationConfig, ParamSpace, SystemParams};
use crate::vae::LATENT_DIM;

/// Non-negative preference per leaf; missing leaves score 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafScores {
    pub scores: BTreeMap<NodeKey, f64>,
    pub temperature: f64,
}

impl LeafScores {
    pub fn new(scores: BTreeMap<NodeKey, f64>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        if let Some((k, s)) = scores.iter().find(|(_, s)| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::InvalidArgument(format!("score {s} for {k} must be >= 0")));
        }
        Ok(Self { scores, temperature })
    }

    pub fn get(&self, k: &NodeKey) -> f64 {
        self.scores.get(k).copied().unwrap_or(0.0)
    }
}

/// Selection weights: 1 each without scores, `exp((s - max) / tau)` with.
/// Equal scores therefore give exactly the uniform weights.
pub fn goal_space_weights(leaves: &[NodeKey], scores: Option<&LeafScores>) -> Vec<f64> {
    match scores {
        None => vec![1.0; leaves.len()],
        Some(sc) => {
            let s: Vec<f64> = leaves.iter().map(|k| sc.get(k) / sc.temperature).collect();
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            s.iter().map(|v| (v - max).exp()).collect()
        }
    }
}

pub fn sample_goal_space<R: Rng + ?Sized>(
    leaves: &[NodeKey],
    scores: Option<&LeafScores>,
    rng: &mut R,
) -> Result<NodeKey> {
    if leaves.is_empty() {
        return Err(Error::InvalidArgument("no leaf to sample".into()));
    }
    let dist = WeightedIndex::new(goal_space_weights(leaves, scores))
        .map_err(|e| Error::InvalidArgument(format!("goal-space weights: {e}")))?;
    Ok(leaves[dist.sample(rng)].clone())
}

/// Per-axis `[min - d, max + d]` over reached goals, `d = expansion * (max - min)`.
pub fn goal_box(goals: &[&[f32]], expansion: f64) -> Option<Vec<(f64, f64)>> {
    let first = goals.first()?;
    Some(
        (0..first.len())
            .map(|d| {
                let (lo, hi) = goals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| {
                    (lo.min(g[d] as f64), hi.max(g[d] as f64))
                });
                let pad = expansion * (hi - lo);
                (lo - pad, hi + pad)
            })
            .collect(),
    )
}

/// Uniform in the expanded box of the leaf's reached goals; unit Gaussian
/// when the leaf has none.
pub fn sample_goal<R: Rng + ?Sized>(members: &[Member], expansion: f64, rng: &mut R) -> Vec<f32> {
    let goals: Vec<&[f32]> = members.iter().map(|m| m.goal.as_slice()).collect();
    match goal_box(&goals, expansion) {
        None => (0..LATENT_DIM).map(|_| rng.sample(StandardNormal)).collect(),
        Some(b) => b
            .into_iter()
            .map(|(lo, hi)| {
                if hi > lo {
                    rng.random_range(lo..=hi) as f32
                } else {
                    lo as f32
                }
            })
            .collect(),
    }
}

/// Index into `members` of the goal nearest to `g`; ties go to the earliest.
pub fn nearest_member(members: &[Member], g: &[f32]) -> Option<usize> {
    let dist = |m: &Member| -> f64 {
        m.goal
            .iter()
            .zip(g)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum()
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in members.iter().enumerate() {
        let d = dist(m);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Mutation of the parameters that reached the nearest goal, or fresh
/// random parameters for an empty leaf. Returns the source entry too.
pub fn sample_parameters<R: Rng + ?Sized>(
    members: &[Member],
    g: &[f32],
    thetas: &[SystemParams],
    space: &ParamSpace,
    mutation: &MutationConfig,
    rng: &mut R,
) -> Result<(SystemParams, Option<usize>)> {
    match nearest_member(members, g) {
        None => Ok((sample_random_params(space, rng), None)),
        Some(i) => {
            let entry = members[i].entry;
            let theta = thetas
                .get(entry)
                .ok_or_else(|| Error::InvalidArgument(format!("no parameters for entry {entry}")))?;
            Ok((mutate_params(theta, space, mutation, rng), Some(entry)))
        }
    }
}

/// Score of each leaf = number of its entries in `category`.
pub fn score_leaves_by_category(
    leaves: &[(NodeKey, &[Member])],
    categories: &[PatternCategory],
    category: PatternCategory,
) -> BTreeMap<NodeKey, f64> {
    leaves
        .iter()
        .map(|(k, members)| {
            let n = members
                .iter()
                .filter(|m| categories.get(m.entry) == Some(&category))
                .count();
            (k.clone(), n as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn member(entry: usize, goal: Vec<f32>) -> Member {
        Member { entry, goal }
    }

    #[test]
    fn softmax_closed_form() {
        let leaves = [NodeKey::parse("00").unwrap(), NodeKey::parse("01").unwrap()];
        let sc = LeafScores::new(
            [(leaves[0].clone(), 2f64.ln()), (leaves[1].clone(), 0.0)].into(),
            1.0,
        )
        .unwrap();
        let w = goal_space_weights(&leaves, Some(&sc));
        let p0 = w[0] / (w[0] + w[1]);
        assert!((p0 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_match_uniform_draws() {
        let leaves: Vec<NodeKey> = ["000", "001", "01"].iter().map(|s| NodeKey::parse(s).unwrap()).collect();
        let sc = LeafScores::new(leaves.iter().map(|k| (k.clone(), 7.0)).collect(), 1.0).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(
                sample_goal_space(&leaves, None, &mut a).unwrap(),
                sample_goal_space(&leaves, Some(&sc), &mut b).unwrap()
            );
        }
    }

    #[test]
    fn single_goal_box_is_a_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g: Vec<f32> = (0..16).map(|i| i as f32 * 0.1).collect();
        assert_eq!(sample_goal(&[member(0, g.clone())], 0.1, &mut rng), g);
        assert_eq!(sample_goal(&[], 0.1, &mut rng).len(), 16);
    }

    #[test]
    fn exact_goal_selects_its_entry() {
        let ms = vec![member(4, vec![0.0; 16]), member(9, vec![1.0; 16]), member(2, vec![2.0; 16])];
        assert_eq!(nearest_member(&ms, &[1.0; 16]), Some(1));
        assert_eq!(nearest_member(&[], &[1.0; 16]), None);
    }

    #[test]
    fn category_scores_count_members() {
        let ms = vec![member(0, vec![]), member(1, vec![]), member(2, vec![])];
        let cats = [PatternCategory::Animal, PatternCategory::Dead, PatternCategory::Animal];
        let k = NodeKey::root();
        let empty: &[Member] = &[];
        let s = score_leaves_by_category(&[(k.clone(), &ms), (k.left(), empty)], &cats, PatternCategory::Animal);
        assert_eq!(s[&k], 2.0);
        assert_eq!(s[&k.left()], 0.0);
    }
}
