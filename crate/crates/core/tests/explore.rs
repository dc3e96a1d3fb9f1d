use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use holmes_core::analysis::PatternCategory;
use holmes_core::imgep::{Explorer, Guidance, RunConfig, Variant};
use holmes_core::runstore::{control_channel, RunDir, RunStatus, ScoreRejection, ScoreSource, ScoreSubmission, SnapshotCell};
use holmes_core::NodeKey;

fn tiny(n_total: usize, n_max: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        n_total,
        n_init: 30,
        train_period: 25,
        epochs: 2,
        n_max,
        seed,
        batch_size: 32,
        ..RunConfig::default()
    };
    cfg.lenia.grid_size = 16;
    cfg.lenia.steps = 10;
    cfg.param_space.r = (2, 6);
    cfg
}

fn history_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir.join("history"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn pure_random_budget() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(30, 100, 1);
    cfg.n_init = 30;
    let mut ex = Explorer::create(cfg, dir.path()).unwrap();
    let summary = ex.run().unwrap();
    assert_eq!(summary.steps, 30);
    let rd = RunDir::open(dir.path()).unwrap();
    assert_eq!(rd.entry_count(), 30);
    for i in 0..30 {
        let e = rd.read_entry(i).unwrap();
        assert!(!e.goal_directed && e.target_goal.is_none());
    }
    assert_eq!(rd.read_manifest().unwrap().status, RunStatus::Finished);
}

#[test]
fn same_seed_same_history() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Explorer::create(tiny(50, 20, 7), a.path()).unwrap().run().unwrap();
    Explorer::create(tiny(50, 20, 7), b.path()).unwrap().run().unwrap();
    let (ha, hb) = (history_bytes(a.path()), history_bytes(b.path()));
    assert_eq!(ha.len(), 150);
    assert!(ha == hb, "histories differ");
}

#[test]
fn splits_keep_tree_valid_and_goals_fresh() {
    let dir = tempfile::tempdir().unwrap();
    let mut ex = Explorer::create(tiny(100, 20, 3), dir.path()).unwrap();
    for stop in (10..=100).step_by(10) {
        ex.run_until(stop).unwrap();
        ex.hierarchy().validate().unwrap();
    }
    let summary = ex.run().unwrap();
    assert!(summary.splits >= 1, "{summary:?}");
    let h = ex.hierarchy();
    assert_eq!(h.population(&NodeKey::root()).unwrap(), 100);
    for (i, e) in (0..100).map(|i| (i, ex.run_dir().read_entry(i).unwrap())) {
        assert_eq!(e.goal_directed, i >= 30);
    }
    // After the last training round every stored goal matches a re-encode.
    for (key, node) in h.nodes() {
        let entries: Vec<usize> = node.members.iter().map(|m| m.entry).collect();
        let (goals, _) = h.encode_at(key, &entries, ex.observations()).unwrap();
        let stored: Vec<Vec<f32>> = node.members.iter().map(|m| m.goal.clone()).collect();
        assert_eq!(goals, stored, "node {key}");
    }
}

#[test]
fn resume_matches_uninterrupted() {
    let full = tempfile::tempdir().unwrap();
    let part = tempfile::tempdir().unwrap();
    Explorer::create(tiny(90, 20, 11), full.path()).unwrap().run().unwrap();
    let mut ex = Explorer::create(tiny(90, 20, 11), part.path()).unwrap();
    ex.run_until(63).unwrap();
    drop(ex);
    let mut ex = Explorer::resume(part.path()).unwrap();
    assert_eq!(ex.step(), 50);
    ex.run().unwrap();
    assert!(history_bytes(full.path()) == history_bytes(part.path()));
}

#[test]
fn monolithic_never_splits() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(60, 10, 2);
    cfg.variant = Variant::Monolithic;
    let mut ex = Explorer::create(cfg, dir.path()).unwrap();
    let s = ex.run().unwrap();
    assert_eq!(s.leaves, vec![NodeKey::root()]);
    assert_eq!(ex.hierarchy().nodes()[&NodeKey::root()].module.arch().channels, 32);
}

#[test]
fn scored_guidance_logs_heuristic_scores() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(80, 20, 5);
    cfg.guidance = Guidance::Scored(PatternCategory::Animal);
    let mut ex = Explorer::create(cfg, dir.path()).unwrap();
    let s = ex.run().unwrap();
    let log = RunDir::open(dir.path()).unwrap().read_guidance().unwrap();
    assert_eq!(log.len(), s.splits);
    assert!(log.iter().all(|r| r.source == ScoreSource::Heuristic));
}

#[test]
fn interactive_run_waits_for_scores() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(60, 20, 9);
    cfg.guidance = Guidance::Interactive;
    let (handle, rx) = control_channel();
    let cell = SnapshotCell::new();
    let mut ex = Explorer::create(cfg, dir.path())
        .unwrap()
        .with_control(rx)
        .with_snapshots(cell.clone());
    let worker = thread::spawn(move || ex.run().map(|s| (s, ex.step())));

    let mut submitted = 0;
    loop {
        let snap = cell.load().unwrap();
        match snap.manifest.status {
            RunStatus::Finished => break,
            RunStatus::PausedAwaitingScores => {
                let leaves = snap.leaves();
                // A stale key is refused, the run stays paused.
                let stale = ScoreSubmission {
                    scores: [(NodeKey::parse("0111111").unwrap(), 1.0)].into(),
                    submitter: "test".into(),
                    timestamp: None,
                };
                let verdict = handle.submit(stale).unwrap().recv().unwrap();
                assert!(matches!(verdict, Err(ScoreRejection::Invalid(_))));
                let good = ScoreSubmission {
                    scores: leaves.iter().map(|k| (k.clone(), 1.0)).collect(),
                    submitter: "test".into(),
                    timestamp: None,
                };
                handle.submit(good).unwrap().recv().unwrap().unwrap();
                submitted += 1;
                let after = cell.load().unwrap();
                assert_eq!(after.guidance.len(), submitted);
            }
            RunStatus::Running => {
                // Submissions while running are refused.
                let r = handle.submit(ScoreSubmission {
                    scores: [(NodeKey::root(), 1.0)].into(),
                    submitter: "x".into(),
                    timestamp: None,
                });
                if let Some(rx) = r {
                    if let Ok(v) = rx.recv_timeout(Duration::from_secs(30)) {
                        if v.is_ok() {
                            // Raced into a pause and the root was still the only leaf.
                            submitted += 1;
                        }
                    }
                }
                thread::sleep(Duration::from_millis(5));
            }
        }
    }
    let (summary, step) = worker.join().unwrap().unwrap();
    assert_eq!(step, 60);
    assert!(summary.splits >= 1);
    let log = RunDir::open(dir.path()).unwrap().read_guidance().unwrap();
    assert_eq!(log.len(), submitted);
    assert!(log.iter().all(|r| r.source == ScoreSource::Human));
}
