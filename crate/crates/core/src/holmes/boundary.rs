use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Side;

/// Hyperplane in a frozen node's goal space; `w·g + b < 0` routes left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl Boundary {
    pub fn margin(&self, g: &[f32]) -> f64 {
        self.weight
            .iter()
            .zip(g)
            .map(|(w, &x)| w * x as f64)
            .sum::<f64>()
            + self.bias
    }

    pub fn side(&self, g: &[f32]) -> Side {
        if self.margin(g) < 0.0 {
            Side::Left
        } else {
            Side::Right
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weight.iter().all(|w| w.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 1.0, epochs: 500 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMethod {
    Svm,
    PrincipalAxis,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFit {
    pub boundary: Boundary,
    pub method: BoundaryMethod,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `true` marks a badly reconstructed point (error strictly above the median).
pub fn median_labels(errors: &[f64]) -> Vec<bool> {
    let m = median(errors);
    errors.iter().map(|&e| e > m).collect()
}

/// Max-margin split of a node's population: points reconstructed worse than
/// the median go right. Falls back to a balanced cut along the first
/// principal axis when the labels are all equal or the fitted hyperplane
/// leaves one side empty. Returns `None` when every latent is identical, in
/// which case no hyperplane can separate the population.
pub fn fit_boundary(latents: &[Vec<f32>], errors: &[f64], cfg: &SvmConfig) -> Result<Option<BoundaryFit>> {
    if latents.len() < 2 || latents.len() != errors.len() {
        return Err(Error::InvalidArgument(format!(
            "boundary fit needs >= 2 points with matching errors, got {} latents and {} errors",
            latents.len(),
            errors.len()
        )));
    }
    let dim = latents[0].len();
    if latents.iter().any(|g| g.len() != dim) {
        return Err(Error::Shape("latents of unequal dimension".into()));
    }
    let labels = median_labels(errors);
    if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
        let boundary = fit_linear_svm(latents, &labels, cfg);
        if boundary.is_finite() && splits_population(&boundary, latents) {
            return Ok(Some(BoundaryFit {
                boundary,
                method: BoundaryMethod::Svm,
            }));
        }
    }
    Ok(principal_axis_split(latents).map(|boundary| BoundaryFit {
        boundary,
        method: BoundaryMethod::PrincipalAxis,
    }))
}

fn splits_population(b: &Boundary, latents: &[Vec<f32>]) -> bool {
    let left = latents.iter().filter(|g| b.side(g) == Side::Left).count();
    left > 0 && left < latents.len()
}

/// Full-batch Pegasos on the primal hinge objective with an appended
/// constant feature for the bias; keeps the iterate with the lowest
/// objective.
pub fn fit_linear_svm(latents: &[Vec<f32>], labels: &[bool], cfg: &SvmConfig) -> Boundary {
    let n = latents.len();
    let dim = latents[0].len() + 1;
    let xs: Vec<Vec<f64>> = latents
        .iter()
        .map(|g| g.iter().map(|&v| v as f64).chain([1.0]).collect())
        .collect();
    let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let lambda = 1.0 / (cfg.c * n as f64);
    let objective = |w: &[f64]| {
        let reg = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
        let hinge: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (1.0 - y * dot(w, x)).max(0.0))
            .sum::<f64>()
            / n as f64;
        reg + hinge
    };
    let mut w = vec![0.0; dim];
    let mut best = (objective(&w), w.clone());
    let radius = 1.0 / lambda.sqrt();
    for t in 1..=cfg.epochs.max(1) {
        let eta = 1.0 / (lambda * t as f64);
        let mut step = vec![0.0; dim];
        for (x, y) in xs.iter().zip(&ys) {
            if y * dot(&w, x) < 1.0 {
                for (s, xi) in step.iter_mut().zip(x) {
                    *s += y * xi;
                }
            }
        }
        for (wi, s) in w.iter_mut().zip(&step) {
            *wi = (1.0 - eta * lambda) * *wi + eta * s / n as f64;
        }
        let norm = dot(&w, &w).sqrt();
        if norm > radius {
            w.iter_mut().for_each(|v| *v *= radius / norm);
        }
        let obj = objective(&w);
        if obj < best.0 {
            best = (obj, w.clone());
        }
    }
    let mut w = best.1;
    let bias = w.pop().expect("bias feature");
    Boundary { weight: w, bias }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Leading eigenvector of the sample covariance by power iteration, cut
/// between the two adjacent distinct projections closest to the middle.
pub fn principal_axis_split(latents: &[Vec<f32>]) -> Option<Boundary> {
    let n = latents.len();
    let dim = latents[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|d| latents.iter().map(|g| g[d] as f64).sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<Vec<f64>> = latents
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(&v, m)| v as f64 - m).collect())
        .collect();
    let mut cov = vec![0.0; dim * dim];
    for x in &centered {
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] += x[i] * x[j];
            }
        }
    }
    let mut axis: Vec<f64> = (0..dim).map(|i| 1.0 / (i + 1) as f64).collect();
    for _ in 0..200 {
        let next: Vec<f64> = (0..dim)
            .map(|i| dot(&cov[i * dim..(i + 1) * dim], &axis))
            .collect();
        let norm = dot(&next, &next).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        axis = next.into_iter().map(|v| v / norm).collect();
    }
    let mut candidates = vec![axis];
    // Coordinate axes by decreasing variance guard against a start vector
    // orthogonal to the spread.
    let mut by_var: Vec<usize> = (0..dim).collect();
    by_var.sort_by(|&a, &b| cov[b * dim + b].total_cmp(&cov[a * dim + a]));
    candidates.extend(by_var.into_iter().map(|d| {
        let mut e = vec![0.0; dim];
        e[d] = 1.0;
        e
    }));
    for axis in candidates {
        let mut proj: Vec<f64> = latents
            .iter()
            .map(|g| g.iter().zip(&axis).map(|(&v, a)| v as f64 * a).sum())
            .collect();
        proj.sort_by(f64::total_cmp);
        let cut = (1..n)
            .filter(|&i| proj[i - 1] < proj[i])
            .min_by_key(|&i| (2 * i).abs_diff(n));
        if let Some(i) = cut {
            let threshold = 0.5 * (proj[i - 1] + proj[i]);
            let boundary = Boundary {
                weight: axis,
                bias: -threshold,
            };
            if splits_population(&boundary, latents) {
                return Some(boundary);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_semantics() {
        assert_eq!(median_labels(&[1.0, 2.0, 3.0, 4.0]), [false, false, true, true]);
        assert_eq!(median_labels(&[3.0, 1.0, 2.0]), [true, false, false]);
    }

    #[test]
    fn sign_convention() {
        let mut w = vec![0.0; 16];
        w[0] = 1.0;
        let b = Boundary { weight: w, bias: 0.0 };
        let mut g = vec![0.0f32; 16];
        g[0] = -1.0;
        assert_eq!(b.side(&g), Side::Left);
        g[0] = 0.0;
        assert_eq!(b.side(&g), Side::Right);
    }

    #[test]
    fn separable_data_fully_classified() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let dir: Vec<f64> = (0..16).map(|_| rng.random::<f64>() - 0.5).collect();
            let (mut latents, mut errors) = (Vec::new(), Vec::new());
            let (mut pos, mut neg) = (0, 0);
            while pos + neg < 60 {
                let g: Vec<f32> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
                let m: f64 = g.iter().zip(&dir).map(|(&a, b)| a as f64 * b).sum();
                let keep = if m > 0.3 { pos < 30 } else if m < -0.3 { neg < 30 } else { false };
                if keep {
                    if m > 0.0 { pos += 1 } else { neg += 1 }
                    errors.push(m);
                    latents.push(g);
                }
            }
            let labels = median_labels(&errors);
            let fit = fit_boundary(&latents, &errors, &SvmConfig::default()).unwrap().unwrap();
            assert_eq!(fit.method, BoundaryMethod::Svm);
            for (g, &bad) in latents.iter().zip(&labels) {
                assert_eq!(fit.boundary.side(g) == Side::Right, bad);
            }
        }
    }

    #[test]
    fn equal_errors_use_principal_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let latents: Vec<Vec<f32>> = (0..31)
            .map(|_| (0..16).map(|_| rng.random::<f32>()).collect())
            .collect();
        let fit = fit_boundary(&latents, &[5.0; 31], &SvmConfig::default()).unwrap().unwrap();
        assert_eq!(fit.method, BoundaryMethod::PrincipalAxis);
        let left = latents.iter().filter(|g| fit.boundary.side(g) == Side::Left).count();
        assert!(left == 15 || left == 16, "left {left}");
    }

    #[test]
    fn identical_latents_cannot_split() {
        let latents = vec![vec![0.25f32; 16]; 10];
        let errors: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(fit_boundary(&latents, &errors, &SvmConfig::default()).unwrap().is_none());
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(fit_boundary(&[vec![0.0; 16]], &[1.0], &SvmConfig::default()).is_err());
    }
}
