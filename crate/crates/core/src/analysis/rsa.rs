use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// `1 - centered cosine`. A vector with zero spread has no defined
/// correlation; its distance to anything is 1.
pub fn correlation_distance(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "correlation_distance on unequal lengths");
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 1.0;
    }
    (1.0 - sab / (saa * sbb).sqrt()).clamp(0.0, 2.0)
}

/// Symmetric dissimilarity matrix over one representation's encodings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rdm {
    pub n: usize,
    pub values: Vec<f64>,
}

impl Rdm {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Entries with `i < j`, row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.n.saturating_sub(1) / 2);
        for i in 0..self.n {
            for j in i + 1..self.n {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

pub fn rdm(latents: &[&[f32]]) -> Rdm {
    let n = latents.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = correlation_distance(latents[i], latents[j]);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Rdm { n, values }
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman on unequal lengths");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    if rx == ry {
        return if rx.windows(2).any(|w| w[0] != w[1]) { 1.0 } else { 0.0 };
    }
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsaResult {
    pub rho: f64,
    pub common: usize,
    /// Fewer than three shared images: `rho` is reported as 0.
    pub insufficient: bool,
}

pub const MIN_COMMON_IMAGES: usize = 3;

/// Rank correlation between two representations' RDMs over the images they
/// both encode. Keys are history entry indices.
pub fn rsa(a: &BTreeMap<usize, Vec<f32>>, b: &BTreeMap<usize, Vec<f32>>) -> RsaResult {
    let common: Vec<usize> = a.keys().filter(|k| b.contains_key(k)).copied().collect();
    if common.len() < MIN_COMMON_IMAGES {
        return RsaResult {
            rho: 0.0,
            common: common.len(),
            insufficient: true,
        };
    }
    let la: Vec<&[f32]> = common.iter().map(|k| a[k].as_slice()).collect();
    let lb: Vec<&[f32]> = common.iter().map(|k| b[k].as_slice()).collect();
    RsaResult {
        rho: spearman(&rdm(&la).upper_triangle(), &rdm(&lb).upper_triangle()),
        common: common.len(),
        insufficient: false,
    }
}

/// Pairwise RSA over named representations, with common-image counts per
/// cell for annotated heatmaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsaMatrix {
    pub labels: Vec<String>,
    pub rho: Vec<Vec<f64>>,
    pub common: Vec<Vec<usize>>,
}

pub fn rsa_matrix(reps: &[(String, BTreeMap<usize, Vec<f32>>)]) -> RsaMatrix {
    let n = reps.len();
    let mut rho = vec![vec![0.0; n]; n];
    let mut common = vec![vec![0; n]; n];
    for i in 0..n {
        for j in i..n {
            let r = rsa(&reps[i].1, &reps[j].1);
            rho[i][j] = r.rho;
            rho[j][i] = r.rho;
            common[i][j] = r.common;
            common[j][i] = r.common;
        }
    }
    RsaMatrix {
        labels: reps.iter().map(|(l, _)| l.clone()).collect(),
        rho,
        common,
    }
}

impl RsaMatrix {
    /// Long format: `a,b,rho,common`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,b,rho,common\n");
        for (i, a) in self.labels.iter().enumerate() {
            for (j, b) in self.labels.iter().enumerate() {
                out.push_str(&format!("{a},{b},{},{}\n", self.rho[i][j], self.common[i][j]));
            }
        }
        out
    }
}
