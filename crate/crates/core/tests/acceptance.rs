//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Desk-scale runs for the reconstruction and guidance checks are cached
//! under `ACCEPTANCE_RUNS` (default: cargo's per-target tmp dir) and reused
//! when a finished run with the same config exists. `ACCEPTANCE_FRESH=1`
//! discards the cache. A FAIL line makes the process exit non-zero only with
//! `ACCEPTANCE_STRICT=1`.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use holmes_core::analysis::{
    correlation_distance, diversity, rdm, reconstruction_report, rsa, DiversityBins, PatternCategory,
};
use holmes_core::holmes::{Hierarchy, HolmesConfig};
use holmes_core::imgep::{Explorer, Guidance, RunConfig, Variant};
use holmes_core::lenia::{
    build_kernel, random_rollouts, sample_random_params, step, ConvolutionPath, Convolver, ParamSpace,
    PatternState,
};
use holmes_core::runstore::{RunDir, RunStatus};
use holmes_core::vae::{Architecture, NodeModule};
use holmes_core::{NodeKey, Observation};

use common::*;

const SEEDS: [u64; 3] = [1, 2, 3];
const HOLDOUT: usize = 100;
const HOLDOUT_SEED: u64 = 0x5eed;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(actual: usize, target: f64, tol: f64) -> bool {
    (actual as f64 - target).abs() <= tol * target
}

fn params() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let core = NodeModule::<f32>::new(Architecture::core(256), 0, &mut rng).map(|m| m.param_count(false));
    let mono = NodeModule::<f32>::new(Architecture::monolithic(256), 0, &mut rng).map(|m| m.param_count(false));
    match (core, mono) {
        (Ok(c), Ok(m)) => verdict(
            within(c, 38_600.0, 0.02) && within(m, 572_000.0, 0.02),
            format!("module {c} (38600 +-2%), monolithic {m} (572000 +-2%)"),
        ),
        (c, m) => verdict(false, format!("construction failed: {c:?} {m:?}")),
    }
}

fn gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9ad);
    let mut worst: Option<GradReport> = None;
    let mut failed = 0;
    let mut checked = 0;
    for i in 0..100 {
        let r = gradient_case(GRAD_OPS[i % GRAD_OPS.len()], &mut rng);
        checked += r.checked;
        if !(r.worst_rel <= 1e-4) {
            failed += 1;
        }
        if worst.as_ref().is_none_or(|w| r.worst_rel > w.worst_rel) {
            worst = Some(r);
        }
    }
    let w = worst.expect("cases ran");
    verdict(
        failed == 0,
        format!(
            "100 cases, {checked} partials, {failed} above 1e-4, worst {:.2e} ({:?} {})",
            w.worst_rel, w.op, w.shape
        ),
    )
}

fn lenia() -> Verdict {
    let space = ParamSpace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1e41a);
    let mut worst = 0.0f64;
    for &n in &[32usize, 64] {
        for _ in 0..10 {
            let d = sample_random_params(&space, &mut rng).dynamics;
            let k = match build_kernel(&d) {
                Ok(k) => k,
                Err(e) => return verdict(false, format!("kernel: {e}")),
            };
            let cells: Vec<f64> = (0..n * n).map(|_| rng.random()).collect();
            let fft = Convolver::new(k.clone(), n, ConvolutionPath::Fft).convolve(&cells);
            let direct = Convolver::new(k, n, ConvolutionPath::Direct).convolve(&cells);
            worst = fft.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    let mut moved = 0;
    for _ in 0..100 {
        let d = sample_random_params(&space, &mut rng).dynamics;
        let conv = Convolver::new(build_kernel(&d).expect("valid dynamics"), 32, ConvolutionPath::Fft);
        let mut s = PatternState::zeros(32);
        for _ in 0..5 {
            s = step(&s, &d, &conv);
        }
        if s.cells().iter().any(|&c| c != 0.0) {
            moved += 1;
        }
    }
    verdict(
        worst <= 1e-5 && moved == 0,
        format!("fft vs direct max |diff| {worst:.2e} on 32/64 (<= 1e-5); zero state left in {moved}/100 dynamics"),
    )
}

fn hierarchy_fuzz() -> Verdict {
    let mut totals = FuzzStats::default();
    let mut failures = Vec::new();
    for seed in 0..1000u64 {
        match fuzz_hierarchy(seed) {
            Ok(s) => {
                totals.ops += s.ops;
                totals.splits += s.splits;
                totals.declined += s.declined;
                totals.trains += s.trains;
                totals.frozen_checks += s.frozen_checks;
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "1000 sequences, {} ops, {} splits, {} declined, {} trains, {} frozen checks{}",
            totals.ops,
            totals.splits,
            totals.declined,
            totals.trains,
            totals.frozen_checks,
            failures.first().map(|f| format!("; first failure {f}")).unwrap_or_default()
        ),
    )
}

fn random_latent(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-4.0f32..4.0)).collect()
}

fn analysis() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa7a);
    let mut problems = Vec::new();
    let n = 60;
    for i in 0..n {
        let a = random_latent(&mut rng, 16);
        let b = random_latent(&mut rng, 16);
        let d = correlation_distance(&a, &b);
        if (d - brute_correlation_distance(&a, &b)).abs() > 1e-9 {
            problems.push(format!("correlation distance case {i}"));
        }
    }
    let mut self_rho = 0;
    for i in 0..n {
        let map = |rng: &mut ChaCha8Rng| -> BTreeMap<usize, Vec<f32>> {
            let len = rng.random_range(0..12);
            (0..len).map(|_| (rng.random_range(0..16), random_latent(rng, 16))).collect()
        };
        let a = map(&mut rng);
        let b = map(&mut rng);
        let got = rsa(&a, &b);
        let (rho, common) = brute_rsa(&a, &b);
        if got.common != common || (got.rho - rho).abs() > 1e-9 {
            problems.push(format!("rsa case {i}: {} vs {rho}", got.rho));
        }
        if a.len() >= 3 {
            self_rho += 1;
            if rsa(&a, &a).rho != 1.0 {
                problems.push(format!("rsa case {i}: rho(R, R) != 1"));
            }
        }
    }
    let bins = DiversityBins::default();
    for i in 0..n {
        let len = rng.random_range(0..60);
        let points: Vec<Vec<f32>> = (0..len).map(|_| random_latent(&mut rng, 16)).collect();
        if diversity(points.iter().map(Vec::as_slice), &bins) != brute_diversity(&points, -3.0, 3.0) {
            problems.push(format!("diversity case {i}"));
        }
    }
    for i in 0..n {
        let len = rng.random_range(1..15);
        let points: Vec<Vec<f32>> = (0..len).map(|_| random_latent(&mut rng, 16)).collect();
        let refs: Vec<&[f32]> = points.iter().map(Vec::as_slice).collect();
        let m = rdm(&refs);
        let brute = brute_rdm(&points);
        for p in 0..len {
            for q in 0..len {
                let v = m.get(p, q);
                if v != m.get(q, p) || (p == q && v != 0.0) || !(0.0..=2.0).contains(&v) || (v - brute[p][q]).abs() > 1e-9 {
                    problems.push(format!("rdm case {i} at ({p}, {q})"));
                }
            }
        }
    }
    verdict(
        problems.is_empty(),
        format!(
            "{n} instances each of correlation distance, rsa, diversity, rdm; {self_rho} self-rsa checks{}",
            problems.first().map(|p| format!("; first mismatch {p}")).unwrap_or_default()
        ),
    )
}

fn runs_root() -> PathBuf {
    std::env::var_os("ACCEPTANCE_RUNS")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-runs"))
}

fn desk_config(guidance: Guidance, seed: u64) -> RunConfig {
    RunConfig {
        guidance,
        seed,
        variant: Variant::Holmes,
        ..RunConfig::desk()
    }
}

/// Finished desk run for `cfg`, reusing a cached one when possible.
fn desk_run(cfg: &RunConfig) -> holmes_core::Result<RunDir> {
    let dir = runs_root().join(format!("{}-s{}", cfg.guidance.to_string().replace(':', "-"), cfg.seed));
    let fresh = std::env::var("ACCEPTANCE_FRESH").is_ok_and(|v| v == "1");
    if !fresh {
        if let Ok(rd) = RunDir::open(&dir) {
            if let Ok(m) = rd.read_manifest() {
                if &m.config == cfg {
                    if m.status == RunStatus::Finished {
                        return Ok(rd);
                    }
                    eprintln!("resuming {}", dir.display());
                    Explorer::resume(&dir)?.run()?;
                    return RunDir::open(&dir);
                }
            }
        }
    }
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|source| holmes_core::Error::Io {
            path: dir.clone(),
            source,
        })?;
    }
    eprintln!("exploring {} (desk profile, several minutes)", dir.display());
    Explorer::create(cfg.clone(), &dir)?.run()?;
    RunDir::open(&dir)
}

fn final_hierarchy(rd: &RunDir) -> holmes_core::Result<Hierarchy> {
    let (_, path) = rd
        .latest_checkpoint()?
        .ok_or_else(|| holmes_core::Error::InvalidArgument(format!("{} has no checkpoint", rd.root().display())))?;
    Hierarchy::load(&path.join("hierarchy"))
}

fn coarse_to_fine() -> Verdict {
    let cfg = desk_config(Guidance::Uniform, SEEDS[0]);
    let test = match random_rollouts(&cfg.param_space, &cfg.lenia, HOLDOUT, HOLDOUT_SEED) {
        Ok(t) => t,
        Err(e) => return verdict(false, format!("held-out set: {e}")),
    };
    let mut parts = Vec::new();
    let mut pass = true;
    for seed in SEEDS {
        let outcome = desk_run(&desk_config(Guidance::Uniform, seed)).and_then(|rd| {
            let h = final_hierarchy(&rd)?;
            let splits = h.nodes().len() / 2;
            Ok((splits, reconstruction_report(&h, &test)?))
        });
        match outcome {
            Ok((splits, r)) => {
                let ok = splits >= 1 && r.leaf_bce < r.root_bce;
                pass &= ok;
                parts.push(format!(
                    "seed {seed}: {splits} splits, leaf {:.1} vs root {:.1}{}",
                    r.leaf_bce,
                    r.root_bce,
                    if ok { "" } else { " (miss)" }
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("seed {seed}: {e}"));
            }
        }
    }
    verdict(pass, format!("held-out {HOLDOUT}; {}", parts.join("; ")))
}

fn category_counts(rd: &RunDir) -> holmes_core::Result<BTreeMap<PatternCategory, usize>> {
    let mut counts = BTreeMap::new();
    for i in 0..rd.entry_count() {
        *counts.entry(rd.read_entry(i)?.category).or_default() += 1;
    }
    Ok(counts)
}

fn guidance_trend() -> Verdict {
    let mut animal_wins = 0;
    let mut non_animal_wins = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let counts = [
            Guidance::Uniform,
            Guidance::Scored(PatternCategory::Animal),
            Guidance::Scored(PatternCategory::NonAnimal),
        ]
        .map(|g| desk_run(&desk_config(g, seed)).and_then(|rd| category_counts(&rd)));
        let [Ok(u), Ok(a), Ok(n)] = counts else {
            let err = counts.iter().find_map(|c| c.as_ref().err()).map(ToString::to_string);
            parts.push(format!("seed {seed}: {}", err.unwrap_or_default()));
            continue;
        };
        let get = |m: &BTreeMap<PatternCategory, usize>, c| m.get(&c).copied().unwrap_or(0);
        let (ua, aa) = (get(&u, PatternCategory::Animal), get(&a, PatternCategory::Animal));
        let (un, nn) = (get(&u, PatternCategory::NonAnimal), get(&n, PatternCategory::NonAnimal));
        animal_wins += usize::from(aa > ua);
        non_animal_wins += usize::from(nn > un);
        parts.push(format!("seed {seed}: animal {aa} vs {ua}, non_animal {nn} vs {un}"));
    }
    verdict(
        animal_wins >= 2 && non_animal_wins >= 2,
        format!(
            "scored:animal wins {animal_wins}/3, scored:non_animal wins {non_animal_wins}/3; {}",
            parts.join("; ")
        ),
    )
}

fn small_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        n_total: 90,
        n_init: 30,
        train_period: 20,
        epochs: 2,
        n_max: 20,
        seed,
        batch_size: 16,
        ..RunConfig::default()
    };
    cfg.lenia.grid_size = 16;
    cfg.lenia.steps = 10;
    cfg.param_space.r = (2, 6);
    cfg
}

fn history_bytes(dir: &Path) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    let mut files = fs::read_dir(dir.join("history"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    files.sort();
    files
        .into_iter()
        .map(|p| Ok((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), fs::read(&p)?)))
        .collect()
}

fn reproducibility() -> Verdict {
    let attempt = || -> Result<(bool, bool, usize, usize), Box<dyn std::error::Error>> {
        let cfg = small_config(11);
        let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir()).collect::<std::io::Result<_>>()?;
        Explorer::create(cfg.clone(), dirs[0].path())?.run()?;
        Explorer::create(cfg.clone(), dirs[1].path())?.run()?;
        let a = history_bytes(dirs[0].path())?;
        let identical = a == history_bytes(dirs[1].path())?;

        let mut ex = Explorer::create(cfg, dirs[2].path())?;
        ex.run_until(57)?;
        drop(ex);
        let resumed = Explorer::resume(dirs[2].path())?.run()?;
        let same_after_resume = a == history_bytes(dirs[2].path())?;
        Ok((identical, same_after_resume, a.len(), resumed.splits))
    };
    match attempt() {
        Ok((identical, resumed, files, splits)) => verdict(
            identical && resumed,
            format!("{files} history files; rerun identical {identical}; resume at 57 identical {resumed}; {splits} splits"),
        ),
        Err(e) => verdict(false, e.to_string()),
    }
}

fn zero_leaf_diversity() -> Verdict {
    let bins = DiversityBins::default();
    let zeros: Vec<Observation> = (0..40).map(|_| Observation::zeros(64)).collect();
    let mut checks = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let fresh = Hierarchy::new(HolmesConfig::new(Architecture::core(64), 100), &mut rng);
    checks.push(("fresh root", fresh));
    let trained = desk_run(&desk_config(Guidance::Uniform, SEEDS[0])).and_then(|rd| final_hierarchy(&rd));
    checks.push(("trained tree", trained));

    let mut parts = Vec::new();
    let mut pass = true;
    for (name, h) in checks {
        let result = h.and_then(|mut h| {
            h.clear_members();
            for (i, o) in zeros.iter().enumerate() {
                let r = h.route(o)?;
                h.record(i, &r)?;
            }
            let populated: Vec<NodeKey> = h
                .leaves()
                .into_iter()
                .filter(|k| !h.nodes()[k].members.is_empty())
                .collect();
            let per_leaf: Vec<(NodeKey, usize)> = populated
                .into_iter()
                .map(|k| {
                    let d = diversity(h.nodes()[&k].members.iter().map(|m| m.goal.as_slice()), &bins);
                    (k, d)
                })
                .collect();
            Ok(per_leaf)
        });
        match result {
            Ok(per_leaf) => {
                let ok = per_leaf.len() == 1 && per_leaf[0].1 == 1;
                pass &= ok;
                let desc: Vec<String> = per_leaf.iter().map(|(k, d)| format!("leaf {k} diversity {d}")).collect();
                parts.push(format!("{name}: {}", desc.join(", ")));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    verdict(pass, format!("40 blank frames; {}", parts.join("; ")))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("parameter budgets", params),
        ("gradient suite", gradients),
        ("lenia correctness", lenia),
        ("hierarchy fuzzing", hierarchy_fuzz),
        ("analysis oracles", analysis),
        ("coarse-to-fine reconstruction", coarse_to_fine),
        ("guidance trend", guidance_trend),
        ("reproducibility", reproducibility),
        ("blank-leaf diversity", zero_leaf_diversity),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let v = check();
        failed += usize::from(!v.pass);
        println!(
            "criterion {n} {}: {name} [{:.1}s] {}",
            if v.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            v.detail
        );
    }
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        std::process::exit(1);
    }
}
