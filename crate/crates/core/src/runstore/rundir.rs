use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, IoContext, Result};
use crate::holmes::TreeSnapshot;
use crate::imgep::RunConfig;
use crate::lenia::Observation;

use super::{GuidanceRecord, HistoryEntry, RunManifest};

/// Layout of one run on disk:
///
/// ```text
/// config.json  manifest.json  scores.json  tree.json
/// history/NNNNNN.{json,png,f32}
/// checkpoints/step-K/
/// ```
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path).at(path)?)?)
}

impl RunDir {
    /// Creates the layout, or adopts an existing run with the same config.
    pub fn create(root: &Path, config: &RunConfig) -> Result<Self> {
        let dir = Self {
            root: root.to_path_buf(),
        };
        fs::create_dir_all(dir.history_dir()).at(root)?;
        fs::create_dir_all(dir.checkpoints_dir()).at(root)?;
        write_json(&dir.root.join("config.json"), config)?;
        Ok(dir)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let dir = Self {
            root: root.to_path_buf(),
        };
        let cfg = dir.root.join("config.json");
        if !cfg.is_file() {
            return Err(Error::InvalidArgument(format!(
                "{} is not a run directory (no config.json)",
                root.display()
            )));
        }
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> Result<RunConfig> {
        read_json(&self.root.join("config.json"))
    }

    pub fn history_dir(&self) -> PathBuf {
        self.root.join("history")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn entry_stem(index: usize) -> String {
        format!("{index:06}")
    }

    pub fn entry_path(&self, index: usize, ext: &str) -> PathBuf {
        self.history_dir().join(format!("{}.{ext}", Self::entry_stem(index)))
    }

    pub fn write_entry(&self, entry: &HistoryEntry, o: &Observation) -> Result<()> {
        o.write_raw(&self.entry_path(entry.index, "f32"))?;
        o.write_png(&self.entry_path(entry.index, "png"))?;
        write_json(&self.entry_path(entry.index, "json"), entry)
    }

    pub fn read_entry(&self, index: usize) -> Result<HistoryEntry> {
        read_json(&self.entry_path(index, "json"))
    }

    pub fn read_observation(&self, index: usize) -> Result<Observation> {
        Observation::read_raw(&self.entry_path(index, "f32"))
    }

    /// Number of contiguous entries `0..n` present on disk.
    pub fn entry_count(&self) -> usize {
        (0..).take_while(|&i| self.entry_path(i, "json").is_file()).count()
    }

    pub fn write_manifest(&self, m: &RunManifest) -> Result<()> {
        write_json(&self.root.join("manifest.json"), m)
    }

    pub fn read_manifest(&self) -> Result<RunManifest> {
        read_json(&self.root.join("manifest.json"))
    }

    pub fn write_tree(&self, tree: &TreeSnapshot) -> Result<()> {
        write_json(&self.root.join("tree.json"), tree)
    }

    pub fn read_guidance(&self) -> Result<Vec<GuidanceRecord>> {
        let path = self.root.join("scores.json");
        if !path.is_file() {
            return Ok(Vec::new());
        }
        read_json(&path)
    }

    pub fn write_guidance(&self, records: &[GuidanceRecord]) -> Result<()> {
        write_json(&self.root.join("scores.json"), &records)
    }

    /// Appends one record; the file is rewritten atomically.
    pub fn append_guidance(&self, record: &GuidanceRecord) -> Result<()> {
        let mut all = self.read_guidance()?;
        all.push(record.clone());
        self.write_guidance(&all)
    }

    pub fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.checkpoints_dir().join(format!("step-{step}"))
    }

    /// Highest complete checkpoint, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<(usize, PathBuf)>> {
        let dir = self.checkpoints_dir();
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut best = None;
        for e in fs::read_dir(&dir).at(&dir)? {
            let e = e.at(&dir)?;
            let name = e.file_name().to_string_lossy().into_owned();
            let Some(step) = name.strip_prefix("step-").and_then(|s| s.parse::<usize>().ok()) else {
                continue;
            };
            if !e.path().join("state.json").is_file() {
                continue;
            }
            if best.as_ref().is_none_or(|(s, _)| step > *s) {
                best = Some((step, e.path()));
            }
        }
        Ok(best)
    }

    pub(crate) fn write_json_at<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        write_json(path, value)
    }

    pub(crate) fn read_json_at<T: DeserializeOwned>(&self, path: &Path) -> Result<T> {
        read_json(path)
    }
}
