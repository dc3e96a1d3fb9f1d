//! Independent oracles shared by the property tests and the acceptance
//! harness. Nothing here calls into the code under test for the quantity
//! being checked.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use holmes_core::holmes::{Hierarchy, HolmesConfig, SplitOutcome};
use holmes_core::lenia::{Kernel, Observation};
use holmes_core::ndiff::{
    bce_pixelwise, bce_pixelwise_grad, conv2d, conv2d_backward, gaussian_kl, gaussian_kl_grad, linear,
    linear_backward, relu, relu_backward, transpose_conv2d, transpose_conv2d_backward, LayerKind, LayerParams,
    Tensor,
};
use holmes_core::vae::Architecture;
use holmes_core::NodeKey;

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradOp {
    Conv,
    TransposeConv,
    Linear,
    Lateral1x1,
    Relu,
    Bce,
    Kl,
}

pub const GRAD_OPS: [GradOp; 7] = [
    GradOp::Conv,
    GradOp::TransposeConv,
    GradOp::Linear,
    GradOp::Lateral1x1,
    GradOp::Relu,
    GradOp::Bce,
    GradOp::Kl,
];

#[derive(Debug)]
pub struct GradReport {
    pub op: GradOp,
    pub shape: String,
    pub checked: usize,
    pub worst_rel: f64,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Five-point central differences of `loss` along every coordinate of `t`,
/// compared with `analytic`. The fourth-order stencil keeps truncation error
/// well below the tolerance where a gradient component is close to zero.
fn fd_compare(
    t: &Tensor<f64>,
    analytic: &Tensor<f64>,
    loss: &dyn Fn(&Tensor<f64>) -> f64,
    worst: &mut f64,
    checked: &mut usize,
) {
    assert_eq!(t.shape(), analytic.shape());
    for i in 0..t.len() {
        let at = |offset: f64| {
            let mut moved = t.clone();
            moved.data_mut()[i] += offset;
            loss(&moved)
        };
        let h = FD_STEP;
        let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        *worst = worst.max(rel_err(analytic.data()[i], numeric));
        *checked += 1;
    }
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

type Forward = dyn Fn(&Tensor<f64>, &LayerParams<f64>) -> Tensor<f64>;

fn check_layer(
    x: Tensor<f64>,
    p: LayerParams<f64>,
    fwd: &Forward,
    bwd: &dyn Fn(&Tensor<f64>, &LayerParams<f64>, &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>),
    rng: &mut ChaCha8Rng,
) -> (usize, f64) {
    let y = fwd(&x, &p);
    let r = uniform(y.shape(), -1.0, 1.0, rng);
    let (gx, gw, gb) = bwd(&x, &p, &r);
    let (mut worst, mut checked) = (0.0, 0);
    fd_compare(&x, &gx, &|xx| weighted_sum(&fwd(xx, &p), &r), &mut worst, &mut checked);
    fd_compare(
        &p.weight,
        &gw,
        &|w| {
            let q = LayerParams::new(p.kind, w.clone(), p.bias.clone()).unwrap();
            weighted_sum(&fwd(&x, &q), &r)
        },
        &mut worst,
        &mut checked,
    );
    fd_compare(
        &p.bias,
        &gb,
        &|b| {
            let q = LayerParams::new(p.kind, p.weight.clone(), b.clone()).unwrap();
            weighted_sum(&fwd(&x, &q), &r)
        },
        &mut worst,
        &mut checked,
    );
    (checked, worst)
}

/// One randomized finite-difference case for `op` in 64-bit arithmetic.
pub fn gradient_case(op: GradOp, rng: &mut ChaCha8Rng) -> GradReport {
    let batch = rng.random_range(1..=2);
    let (checked, worst_rel, shape) = match op {
        GradOp::Conv | GradOp::Lateral1x1 => {
            let (k, stride, padding) = if op == GradOp::Conv {
                let k = rng.random_range(1..=4);
                (k, rng.random_range(1..=2), rng.random_range(0..k.min(2)))
            } else {
                (1, 1, 0)
            };
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let h = rng.random_range(k.max(2)..=6);
            let kind = if op == GradOp::Conv { LayerKind::Conv } else { LayerKind::Lateral1x1 };
            let x = uniform(&[batch, cin, h, h], -1.0, 1.0, rng);
            let p = LayerParams::new(kind, uniform(&[cout, cin, k, k], -1.0, 1.0, rng), uniform(&[cout], -1.0, 1.0, rng))
                .unwrap();
            let (c, w) = check_layer(
                x,
                p,
                &move |x, p| conv2d(x, p, stride, padding).unwrap(),
                &move |x, p, r| {
                    let (gx, g) = conv2d_backward(x, p, stride, padding, r).unwrap();
                    (gx, g.weight, g.bias)
                },
                rng,
            );
            (c, w, format!("[{batch},{cin},{h},{h}] k{k} s{stride} p{padding} -> {cout}"))
        }
        GradOp::TransposeConv => {
            let k = rng.random_range(1..=4);
            let stride = rng.random_range(1..=2);
            let padding = rng.random_range(0..=(k - 1) / 2);
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let h = rng.random_range(1..=4);
            let x = uniform(&[batch, cin, h, h], -1.0, 1.0, rng);
            let p = LayerParams::new(
                LayerKind::TransposeConv,
                uniform(&[cin, cout, k, k], -1.0, 1.0, rng),
                uniform(&[cout], -1.0, 1.0, rng),
            )
            .unwrap();
            let (c, w) = check_layer(
                x,
                p,
                &move |x, p| transpose_conv2d(x, p, stride, padding).unwrap(),
                &move |x, p, r| {
                    let (gx, g) = transpose_conv2d_backward(x, p, stride, padding, r).unwrap();
                    (gx, g.weight, g.bias)
                },
                rng,
            );
            (c, w, format!("[{batch},{cin},{h},{h}] k{k} s{stride} p{padding} -> {cout}"))
        }
        GradOp::Linear => {
            let (nin, nout) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let x = uniform(&[batch, nin], -1.0, 1.0, rng);
            let p = LayerParams::new(
                LayerKind::FullyConnected,
                uniform(&[nout, nin], -1.0, 1.0, rng),
                uniform(&[nout], -1.0, 1.0, rng),
            )
            .unwrap();
            let (c, w) = check_layer(
                x,
                p,
                &|x, p| linear(x, p).unwrap(),
                &|x, p, r| {
                    let (gx, g) = linear_backward(x, p, r).unwrap();
                    (gx, g.weight, g.bias)
                },
                rng,
            );
            (c, w, format!("[{batch},{nin}] -> {nout}"))
        }
        GradOp::Relu => {
            let n = rng.random_range(1..=12);
            // Keep clear of the kink where the derivative is undefined.
            let x = Tensor::from_fn(&[batch, n], |_| {
                let v: f64 = rng.random_range(0.05..1.0);
                if rng.random::<bool>() { v } else { -v }
            });
            let r = uniform(x.shape(), -1.0, 1.0, rng);
            let g = relu_backward(&x, &r).unwrap();
            let (mut worst, mut checked) = (0.0, 0);
            fd_compare(&x, &g, &|xx| weighted_sum(&relu(xx), &r), &mut worst, &mut checked);
            (checked, worst, format!("[{batch},{n}]"))
        }
        GradOp::Bce => {
            let n = rng.random_range(1..=16);
            let logits = uniform(&[batch, 1, n, 1], -4.0, 4.0, rng);
            let target = uniform(logits.shape(), 0.0, 1.0, rng);
            let g = bce_pixelwise_grad(&logits, &target).unwrap();
            let (mut worst, mut checked) = (0.0, 0);
            fd_compare(&logits, &g, &|l| bce_pixelwise(l, &target).unwrap(), &mut worst, &mut checked);
            (checked, worst, format!("[{batch},1,{n},1]"))
        }
        GradOp::Kl => {
            let n = rng.random_range(1..=16);
            let mu = uniform(&[batch, n], -2.0, 2.0, rng);
            let logvar = uniform(&[batch, n], -2.0, 2.0, rng);
            let (gm, gl) = gaussian_kl_grad(&mu, &logvar).unwrap();
            let (mut worst, mut checked) = (0.0, 0);
            fd_compare(&mu, &gm, &|m| gaussian_kl(m, &logvar).unwrap(), &mut worst, &mut checked);
            fd_compare(&logvar, &gl, &|l| gaussian_kl(&mu, l).unwrap(), &mut worst, &mut checked);
            (checked, worst, format!("[{batch},{n}]"))
        }
    };
    GradReport {
        op,
        shape,
        checked,
        worst_rel,
    }
}

// ---------------------------------------------------------------- lenia

/// Toroidal cross-correlation written straight from the definition.
pub fn brute_toroidal_conv(kernel: &Kernel, cells: &[f64], n: usize) -> Vec<f64> {
    let r = kernel.radius() as isize;
    let w = kernel.width();
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for ky in 0..w {
                for kx in 0..w {
                    let (dy, dx) = (ky as isize - r, kx as isize - r);
                    let sy = (y as isize - dy).rem_euclid(n as isize) as usize;
                    let sx = (x as isize - dx).rem_euclid(n as isize) as usize;
                    acc += kernel.values()[ky * w + kx] * cells[sy * n + sx];
                }
            }
            out[y * n + x] = acc;
        }
    }
    out
}

// ---------------------------------------------------------------- analysis

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// `1 - pearson`, with a constant vector treated as uncorrelated.
pub fn brute_correlation_distance(a: &[f32], b: &[f32]) -> f64 {
    let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    1.0 - pearson(&a, &b).unwrap_or(0.0)
}

/// Fractional ranks (1-based, ties averaged) by counting.
pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&brute_ranks(a), &brute_ranks(b)).unwrap_or(0.0)
}

/// Full matrix of pairwise correlation distances.
pub fn brute_rdm(latents: &[Vec<f32>]) -> Vec<Vec<f64>> {
    latents
        .iter()
        .map(|a| latents.iter().map(|b| brute_correlation_distance(a, b)).collect())
        .collect()
}

pub fn upper(m: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            out.push(m[i][j]);
        }
    }
    out
}

/// RSA over the shared keys, 0 when fewer than three are shared.
pub fn brute_rsa(a: &BTreeMap<usize, Vec<f32>>, b: &BTreeMap<usize, Vec<f32>>) -> (f64, usize) {
    let common: Vec<usize> = a.keys().filter(|k| b.contains_key(k)).copied().collect();
    if common.len() < 3 {
        return (0.0, common.len());
    }
    let ra = brute_rdm(&common.iter().map(|k| a[k].clone()).collect::<Vec<_>>());
    let rb = brute_rdm(&common.iter().map(|k| b[k].clone()).collect::<Vec<_>>());
    (brute_spearman(&upper(&ra), &upper(&rb)), common.len())
}

/// Occupied cells with each axis cut into below / lower half / upper half /
/// above of `[lo, hi]`.
pub fn brute_diversity(points: &[Vec<f32>], lo: f64, hi: f64) -> usize {
    let mid = (lo + hi) / 2.0;
    let cells: HashSet<Vec<i8>> = points
        .iter()
        .map(|p| {
            p.iter()
                .map(|&v| {
                    let v = v as f64;
                    if v > hi {
                        3
                    } else if v >= mid {
                        2
                    } else if v >= lo {
                        1
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    cells.len()
}

// ---------------------------------------------------------------- hierarchy

pub fn blob(size: usize, rng: &mut ChaCha8Rng) -> Observation {
    let (cy, cx) = (rng.random_range(0.0..size as f32), rng.random_range(0.0..size as f32));
    let r = rng.random_range(1.5..(size as f32 / 3.0));
    let cells = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f32, (i % size) as f32);
            let d2 = (y - cy).powi(2) + (x - cx).powi(2);
            (-d2 / (r * r)).exp()
        })
        .collect();
    Observation::new(size, cells).unwrap()
}

fn noise(size: usize, rng: &mut ChaCha8Rng) -> Observation {
    Observation::new(size, (0..size * size).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn weight_bits(h: &Hierarchy, key: &NodeKey) -> Vec<(String, Vec<u32>)> {
    h.nodes()[key]
        .module
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn structure_ok(h: &Hierarchy) -> Result<(), String> {
    h.validate().map_err(|e| e.to_string())?;
    for (key, node) in h.nodes() {
        let has_children = h.nodes().contains_key(&key.left()) && h.nodes().contains_key(&key.right());
        let leaf = node.boundary.is_none();
        if leaf == has_children {
            return Err(format!("{key}: boundary/children mismatch"));
        }
        if !leaf && !node.module.is_frozen() {
            return Err(format!("{key}: inner node not frozen"));
        }
        if !leaf {
            let mut parent: Vec<usize> = node.members.iter().map(|m| m.entry).collect();
            let mut kids: Vec<usize> = [key.left(), key.right()]
                .iter()
                .flat_map(|k| h.nodes()[k].members.iter().map(|m| m.entry))
                .collect();
            parent.sort();
            kids.sort();
            if parent != kids {
                return Err(format!("{key}: children do not partition the population"));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct FuzzStats {
    pub ops: usize,
    pub splits: usize,
    pub declined: usize,
    pub trains: usize,
    pub frozen_checks: usize,
}

/// One random route/split/train sequence on a 16x16 hierarchy, checking
/// tree validity, population conservation and frozen-node immutability
/// (weights and encodings) after every operation.
pub fn fuzz_hierarchy(seed: u64) -> Result<FuzzStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_max = rng.random_range(3..=8);
    let mut cfg = HolmesConfig::new(Architecture::core(16), n_max);
    cfg.batch_size = 8;
    let e = |e: holmes_core::Error| e.to_string();
    let mut h = Hierarchy::new(cfg, &mut rng).map_err(e)?;
    let mut obs: Vec<Observation> = Vec::new();
    let mut frozen: BTreeMap<NodeKey, (Vec<(String, Vec<u32>)>, Vec<Vec<f32>>)> = BTreeMap::new();
    let probe: Vec<Observation> = (0..3).map(|_| blob(16, &mut rng)).collect();
    let probe_ids: Vec<usize> = (0..probe.len()).collect();
    let mut stats = FuzzStats::default();
    let n_ops = rng.random_range(10..=30);
    for _ in 0..n_ops {
        stats.ops += 1;
        let roll: f64 = rng.random();
        if roll < 0.7 {
            let o = match rng.random_range(0..5) {
                0 => Observation::zeros(16),
                1 => noise(16, &mut rng),
                _ => blob(16, &mut rng),
            };
            let route = h.route(&o).map_err(e)?;
            if route != h.route(&o).map_err(e)? {
                return Err("routing is not deterministic".into());
            }
            obs.push(o);
            h.record(obs.len() - 1, &route).map_err(e)?;
            if h.is_saturated(&route.leaf).map_err(e)? {
                let before = h.population(&route.leaf).map_err(e)?;
                match h.split(&route.leaf, &obs, &mut rng).map_err(e)? {
                    SplitOutcome::Split { left, right, .. } => {
                        stats.splits += 1;
                        let after = h.population(&route.leaf.left()).map_err(e)?
                            + h.population(&route.leaf.right()).map_err(e)?;
                        if after != before || left + right != before {
                            return Err(format!("split of {} lost entries: {before} -> {after}", route.leaf));
                        }
                        let (goals, _) = h.encode_at(&route.leaf, &probe_ids, &probe).map_err(e)?;
                        frozen.insert(route.leaf.clone(), (weight_bits(&h, &route.leaf), goals));
                    }
                    SplitOutcome::Declined { .. } => stats.declined += 1,
                }
            }
        } else if !obs.is_empty() {
            h.train(&obs, 1, &mut rng).map_err(e)?;
            stats.trains += 1;
            for (key, node) in h.nodes() {
                let entries: Vec<usize> = node.members.iter().map(|m| m.entry).collect();
                let (goals, _) = h.encode_at(key, &entries, &obs).map_err(e)?;
                if node.members.iter().zip(&goals).any(|(m, g)| &m.goal != g) {
                    return Err(format!("{key}: stored goals stale after training"));
                }
            }
        }
        structure_ok(&h)?;
        let total: usize = h.leaves().iter().map(|k| h.nodes()[k].members.len()).sum();
        if total != obs.len() || h.population(&NodeKey::root()).map_err(e)? != obs.len() {
            return Err("population not conserved".into());
        }
        for (key, (bits, goals)) in &frozen {
            stats.frozen_checks += 1;
            if &weight_bits(&h, key) != bits {
                return Err(format!("frozen node {key} weights changed"));
            }
            let (now, _) = h.encode_at(key, &probe_ids, &probe).map_err(e)?;
            if &now != goals {
                return Err(format!("frozen node {key} encodes differently"));
            }
        }
    }
    Ok(stats)
}
