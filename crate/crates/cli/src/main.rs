use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use holmes_core::analysis::{
    diversity, diversity_curve, node_representations, reconstruction_report, rsa_matrix, DiversityBins,
    PatternCategory,
};
use holmes_core::holmes::Hierarchy;
use holmes_core::imgep::{Explorer, Guidance, RunConfig, Variant};
use holmes_core::lenia::random_rollouts;
use holmes_core::runstore::{control_channel, RunDir, SnapshotCell};
use holmes_core::NodeKey;
use holmes_service::{serve, AppState};

#[derive(Parser)]
#[command(name = "holmes", version, about = "Goal exploration of Lenia with a growing hierarchy of VAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// 256x256 grid, 5000 steps.
    Full,
    /// 64x64 grid, 600 steps.
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) an exploration.
    Explore {
        /// JSON run configuration; overrides --profile.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "desk")]
        profile: Profile,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the latest checkpoint in --out.
        #[arg(long)]
        resume: bool,
        /// holmes | monolithic
        #[arg(long)]
        variant: Option<Variant>,
        /// uniform | scored:animal | scored:non_animal | scored:dead | interactive
        #[arg(long)]
        guidance: Option<Guidance>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_total: Option<usize>,
        /// Serve the HTTP control surface while exploring.
        #[arg(long)]
        port: Option<u16>,
        /// Keep serving after the run finishes (needs --port).
        #[arg(long)]
        linger: bool,
    },
    /// Serve a run directory read-only from its latest checkpoint.
    Serve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Compare finished runs: reconstruction, RSA, diversity, categories.
    Analyze {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Size of the held-out test set of random rollouts.
        #[arg(long, default_value_t = 100)]
        holdout: usize,
        #[arg(long, default_value_t = 0x5eed)]
        holdout_seed: u64,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Explore {
            config,
            profile,
            out,
            resume,
            variant,
            guidance,
            seed,
            n_total,
            port,
            linger,
        } => {
            let explorer = if resume {
                if config.is_some() || variant.is_some() || guidance.is_some() || seed.is_some() {
                    bail!("--resume takes the configuration stored in the run directory");
                }
                Explorer::resume(&out)?
            } else {
                let mut cfg = match config {
                    Some(path) => RunConfig::from_file(&path)?,
                    None => match profile {
                        Profile::Full => RunConfig::default(),
                        Profile::Desk => RunConfig::desk(),
                    },
                };
                if let Some(v) = variant {
                    cfg.variant = v;
                }
                if let Some(g) = guidance {
                    cfg.guidance = g;
                }
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                if let Some(n) = n_total {
                    cfg.n_total = n;
                }
                if cfg.guidance == Guidance::Interactive && port.is_none() {
                    bail!("interactive guidance needs --port to receive scores");
                }
                Explorer::create(cfg, &out)?
            };
            explore(explorer, &out, port, linger)
        }
        Command::Serve { run, port } => {
            let state = AppState::offline(&run)?;
            serve_blocking(state, port)
        }
        Command::Analyze {
            runs,
            out,
            holdout,
            holdout_seed,
        } => analyze(&runs, &out, holdout, holdout_seed),
    }
}

fn addr(port: u16) -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], port))
}

fn serve_blocking(state: AppState, port: u16) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    tracing::info!("serving on http://{}", addr(port));
    rt.block_on(serve(state, addr(port)))?;
    Ok(())
}

fn explore(mut explorer: Explorer, out: &Path, port: Option<u16>, linger: bool) -> Result<()> {
    let server = match port {
        Some(port) => {
            let (handle, rx) = control_channel();
            let cell = SnapshotCell::new();
            explorer = explorer.with_control(rx).with_snapshots(cell.clone());
            let state = AppState::live(RunDir::open(out)?, cell, handle);
            Some(thread::spawn(move || serve_blocking(state, port)))
        }
        None => None,
    };
    tracing::info!(step = explorer.step(), total = explorer.config().n_total, "exploring");
    let summary = explorer.run()?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(server) = server {
        if linger {
            tracing::info!("run finished; still serving (Ctrl-C to stop)");
            server.join().expect("server thread panicked")?;
        }
    }
    Ok(())
}

fn load_final(dir: &RunDir) -> Result<Hierarchy> {
    let (_, ckpt) = dir
        .latest_checkpoint()?
        .with_context(|| format!("{} has no checkpoint", dir.root().display()))?;
    Ok(Hierarchy::load(&ckpt.join("hierarchy"))?)
}

fn analyze(runs: &[PathBuf], out: &Path, holdout: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(out)?;
    let dirs: Vec<RunDir> = runs.iter().map(|r| RunDir::open(r)).collect::<holmes_core::Result<_>>()?;
    let first = dirs[0].config()?;
    tracing::info!(n = holdout, "rendering held-out set");
    let test = random_rollouts(&first.param_space, &first.lenia, holdout, seed)?;

    let bins = DiversityBins::default();
    let mut reconstruction = BTreeMap::new();
    let mut diversity_out = BTreeMap::new();
    let mut categories = BTreeMap::new();
    let mut reps = Vec::new();
    for dir in &dirs {
        let manifest = dir.read_manifest()?;
        let id = manifest.run_id.clone();
        if manifest.config.lenia.grid_size != first.lenia.grid_size {
            bail!("{id}: grid size differs from the first run");
        }
        tracing::info!(run = %id, "analyzing");
        let h = load_final(dir)?;
        reconstruction.insert(id.clone(), reconstruction_report(&h, &test)?);
        for (key, rep) in node_representations(&h, &test)? {
            reps.push((format!("{id}/{key}"), rep));
        }

        let n = dir.entry_count();
        let observations: Vec<_> = (0..n).map(|i| dir.read_observation(i)).collect::<holmes_core::Result<_>>()?;
        let entries: Vec<usize> = (0..n).collect();
        let (root_goals, _) = h.encode_at(&NodeKey::root(), &entries, &observations)?;
        let leaves: BTreeMap<String, usize> = h
            .leaves()
            .into_iter()
            .map(|k| {
                let node = &h.nodes()[&k];
                let d = diversity(node.members.iter().map(|m| m.goal.as_slice()), &bins);
                (k.to_string(), d)
            })
            .collect();
        diversity_out.insert(
            id.clone(),
            json!({
                "root_space_curve": diversity_curve(root_goals.iter().map(Vec::as_slice), &bins),
                "leaf_diversity": leaves,
            }),
        );

        let mut counts: BTreeMap<PatternCategory, usize> = PatternCategory::ALL.iter().map(|&c| (c, 0)).collect();
        for i in 0..n {
            *counts.entry(dir.read_entry(i)?.category).or_default() += 1;
        }
        categories.insert(id, counts);
    }
    let matrix = rsa_matrix(&reps);
    fs::write(out.join("rsa.csv"), matrix.to_csv())?;
    fs::write(out.join("rsa.json"), serde_json::to_vec_pretty(&matrix)?)?;
    fs::write(out.join("reconstruction.json"), serde_json::to_vec_pretty(&reconstruction)?)?;
    fs::write(out.join("diversity.json"), serde_json::to_vec_pretty(&diversity_out)?)?;
    fs::write(out.join("categories.json"), serde_json::to_vec_pretty(&categories)?)?;
    println!("{}", serde_json::to_string_pretty(&json!({ "reconstruction": reconstruction, "categories": categories }))?);
    Ok(())
}
