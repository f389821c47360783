//! Checkpoints, their stores, and name-matched restore.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TrialId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "shape does not match value count"
        );
        Self { shape, values }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }
}

pub type Variables = BTreeMap<String, Tensor>;

/// Saved model state. `step` is the global (lineage) step.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub path: String,
    pub variables: Variables,
    pub step: u64,
    pub trial_id: TrialId,
}

/// Canonical checkpoint identifier, relative to a store root.
pub fn checkpoint_path(study_id: &str, trial_id: TrialId, step: u64) -> String {
    format!("{study_id}/trial-{:06}/ckpt-{step:08}", trial_id.0)
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {0} not found")]
    NotFound(String),
    #[error("checkpoint {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

pub trait CheckpointStore: Send + Sync {
    fn write(&self, checkpoint: &Checkpoint) -> Result<(), CheckpointError>;
    fn read(&self, path: &str) -> Result<Checkpoint, CheckpointError>;
    fn exists(&self, path: &str) -> bool;
    /// Removes a checkpoint; `Ok(false)` if it was already gone.
    fn delete(&self, path: &str) -> Result<bool, CheckpointError>;
    /// Paths of all checkpoints of one study, sorted.
    fn list(&self, study_id: &str) -> Result<Vec<String>, CheckpointError>;
}

pub const MANIFEST_FORMAT: &str = "pbt-ckpt-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    trial_id: TrialId,
    step: u64,
    variables: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

/// One directory per checkpoint holding `manifest.json` and one
/// little-endian f64 file per variable.
#[derive(Debug, Clone)]
pub struct DirCheckpointStore {
    root: PathBuf,
}

impl DirCheckpointStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Self {
            root: root.as_ref().to_path_buf(),
        })
    }

    pub fn dir_of(&self, path: &str) -> PathBuf {
        self.root.join(path)
    }

    fn malformed(path: &str, message: impl ToString) -> CheckpointError {
        CheckpointError::Malformed {
            path: path.to_string(),
            message: message.to_string(),
        }
    }
}

impl CheckpointStore for DirCheckpointStore {
    fn write(&self, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
        let dir = self.dir_of(&checkpoint.path);
        let parent = dir
            .parent()
            .ok_or_else(|| Self::malformed(&checkpoint.path, "no parent"))?;
        fs::create_dir_all(parent)?;
        let staging = parent.join(format!(
            ".tmp-{}",
            dir.file_name().and_then(|n| n.to_str()).unwrap_or("ckpt")
        ));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        let mut entries = Vec::new();
        for (i, (name, tensor)) in checkpoint.variables.iter().enumerate() {
            let file = format!("var-{i:03}.bin");
            let bytes: Vec<u8> = tensor.values.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(staging.join(&file), bytes)?;
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: tensor.shape.clone(),
                file,
            });
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            trial_id: checkpoint.trial_id,
            step: checkpoint.step,
            variables: entries,
        };
        let json = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| Self::malformed(&checkpoint.path, e))?;
        fs::write(staging.join("manifest.json"), json)?;
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(&staging, &dir)?;
        Ok(())
    }

    fn read(&self, path: &str) -> Result<Checkpoint, CheckpointError> {
        let dir = self.dir_of(path);
        let manifest = match fs::read(dir.join("manifest.json")) {
            Ok(m) => m,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(CheckpointError::NotFound(path.into()))
            }
            Err(e) => return Err(e.into()),
        };
        let manifest: Manifest =
            serde_json::from_slice(&manifest).map_err(|e| Self::malformed(path, e))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Self::malformed(
                path,
                format!("unknown format {}", manifest.format),
            ));
        }
        let mut variables = Variables::new();
        for entry in manifest.variables {
            let bytes = fs::read(dir.join(&entry.file))?;
            if bytes.len() != 8 * entry.shape.iter().product::<usize>() {
                return Err(Self::malformed(
                    path,
                    format!("{}: size does not match shape", entry.name),
                ));
            }
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            variables.insert(
                entry.name,
                Tensor {
                    shape: entry.shape,
                    values,
                },
            );
        }
        Ok(Checkpoint {
            path: path.to_string(),
            variables,
            step: manifest.step,
            trial_id: manifest.trial_id,
        })
    }

    fn exists(&self, path: &str) -> bool {
        self.dir_of(path).join("manifest.json").is_file()
    }

    fn delete(&self, path: &str) -> Result<bool, CheckpointError> {
        match fs::remove_dir_all(self.dir_of(path)) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    fn list(&self, study_id: &str) -> Result<Vec<String>, CheckpointError> {
        let study_dir = self.root.join(study_id);
        let mut out = Vec::new();
        let trials = match fs::read_dir(&study_dir) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        for trial in trials {
            let trial = trial?;
            let trial_name = trial.file_name().to_string_lossy().into_owned();
            if !trial.file_type()?.is_dir() || !trial_name.starts_with("trial-") {
                continue;
            }
            for ckpt in fs::read_dir(trial.path())? {
                let name = ckpt?.file_name().to_string_lossy().into_owned();
                let path = format!("{study_id}/{trial_name}/{name}");
                if name.starts_with("ckpt-") && self.exists(&path) {
                    out.push(path);
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Debug, Default)]
pub struct MemoryCheckpointStore {
    checkpoints: Mutex<HashMap<String, Checkpoint>>,
}

impl MemoryCheckpointStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.checkpoints.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CheckpointStore for MemoryCheckpointStore {
    fn write(&self, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
        self.checkpoints
            .lock()
            .insert(checkpoint.path.clone(), checkpoint.clone());
        Ok(())
    }

    fn read(&self, path: &str) -> Result<Checkpoint, CheckpointError> {
        self.checkpoints
            .lock()
            .get(path)
            .cloned()
            .ok_or_else(|| CheckpointError::NotFound(path.into()))
    }

    fn exists(&self, path: &str) -> bool {
        self.checkpoints.lock().contains_key(path)
    }

    fn delete(&self, path: &str) -> Result<bool, CheckpointError> {
        Ok(self.checkpoints.lock().remove(path).is_some())
    }

    fn list(&self, study_id: &str) -> Result<Vec<String>, CheckpointError> {
        let prefix = format!("{study_id}/");
        let mut out: Vec<String> = self
            .checkpoints
            .lock()
            .keys()
            .filter(|p| p.starts_with(&prefix))
            .cloned()
            .collect();
        out.sort();
        Ok(out)
    }
}

/// Outcome of a name-matched restore.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoreReport {
    pub matched: Vec<String>,
    pub shape_mismatched: Vec<String>,
    pub missing: Vec<String>,
}

/// Restores every model variable whose name and shape both appear in the
/// checkpoint; the rest keep their fresh values.
pub fn smart_restore(checkpoint: &Checkpoint, fresh: Variables) -> (Variables, RestoreReport) {
    let mut report = RestoreReport::default();
    let mut out = Variables::new();
    for (name, init) in fresh {
        match checkpoint.variables.get(&name) {
            Some(saved) if saved.shape == init.shape => {
                report.matched.push(name.clone());
                out.insert(name, saved.clone());
            }
            Some(_) => {
                report.shape_mismatched.push(name.clone());
                out.insert(name, init);
            }
            None => {
                report.missing.push(name.clone());
                out.insert(name, init);
            }
        }
    }
    (out, report)
}
