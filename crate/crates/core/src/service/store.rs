//! Persistent trial stores.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use thiserror::Error;

use super::record::{LogRecord, StudyRecord};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("study {study}: log line {line}: {message}")]
    Corrupt {
        study: String,
        line: usize,
        message: String,
    },
}

/// Durable home of study logs.
///
/// `append` must be all-or-nothing from the point of view of `load`.
pub trait TrialStore: Send + Sync {
    /// Writes the first record of a new study; `Ok(false)` if it already exists.
    fn create(&self, study_id: &str, first: &LogRecord) -> Result<bool, StoreError>;
    fn load(&self, study_id: &str) -> Result<Option<StudyRecord>, StoreError>;
    fn append(&self, study_id: &str, records: &[LogRecord]) -> Result<(), StoreError>;
    fn list_studies(&self) -> Result<Vec<String>, StoreError>;
}

/// One JSON-lines log per study under `<root>/studies/<study_id>.jsonl`.
///
/// A trailing line without a newline is the remains of an interrupted write;
/// `load` ignores it and the next `append` truncates it.
#[derive(Debug, Clone)]
pub struct FileStore {
    dir: PathBuf,
}

impl FileStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = root.as_ref().join("studies");
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn log_path(&self, study_id: &str) -> PathBuf {
        self.dir.join(format!("{study_id}.jsonl"))
    }

    /// Raw log records, for inspection and tests.
    pub fn read_log(&self, study_id: &str) -> Result<Option<Vec<LogRecord>>, StoreError> {
        let text = match fs::read_to_string(self.log_path(study_id)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        complete
            .lines()
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                    study: study_id.to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn encode(records: &[LogRecord]) -> Vec<u8> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).expect("log records serialize");
            buf.push(b'\n');
        }
        buf
    }
}

fn truncate_partial_tail(file: &mut File) -> io::Result<()> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(());
    }
    let mut last = [0u8; 1];
    file.seek(SeekFrom::Start(len - 1))?;
    file.read_exact(&mut last)?;
    if last[0] == b'\n' {
        return Ok(());
    }
    let mut content = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut content)?;
    let keep = content
        .iter()
        .rposition(|&b| b == b'\n')
        .map_or(0, |i| i + 1);
    file.set_len(keep as u64)
}

impl TrialStore for FileStore {
    fn create(&self, study_id: &str, first: &LogRecord) -> Result<bool, StoreError> {
        let path = self.log_path(study_id);
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => return Ok(false),
            Err(e) => return Err(e.into()),
        };
        file.write_all(&Self::encode(std::slice::from_ref(first)))?;
        file.sync_data()?;
        Ok(true)
    }

    fn load(&self, study_id: &str) -> Result<Option<StudyRecord>, StoreError> {
        let Some(log) = self.read_log(study_id)? else {
            return Ok(None);
        };
        StudyRecord::fold(&log)
            .map(Some)
            .map_err(|message| StoreError::Corrupt {
                study: study_id.to_string(),
                line: 0,
                message,
            })
    }

    fn append(&self, study_id: &str, records: &[LogRecord]) -> Result<(), StoreError> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(self.log_path(study_id))?;
        truncate_partial_tail(&mut file)?;
        file.seek(SeekFrom::End(0))?;
        file.write_all(&Self::encode(records))?;
        file.sync_data()?;
        Ok(())
    }

    fn list_studies(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    out.push(stem.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Keeps materialized records in memory. Used by simulations and tests.
#[derive(Debug, Default)]
pub struct MemoryStore {
    studies: Mutex<HashMap<String, StudyRecord>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl TrialStore for MemoryStore {
    fn create(&self, study_id: &str, first: &LogRecord) -> Result<bool, StoreError> {
        let mut map = self.studies.lock();
        if map.contains_key(study_id) {
            return Ok(false);
        }
        let record = StudyRecord::fold([first]).map_err(|message| StoreError::Corrupt {
            study: study_id.to_string(),
            line: 1,
            message,
        })?;
        map.insert(study_id.to_string(), record);
        Ok(true)
    }

    fn load(&self, study_id: &str) -> Result<Option<StudyRecord>, StoreError> {
        Ok(self.studies.lock().get(study_id).cloned())
    }

    fn append(&self, study_id: &str, records: &[LogRecord]) -> Result<(), StoreError> {
        let mut map = self.studies.lock();
        let current = map
            .get(study_id)
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, study_id.to_string()))?;
        let mut next = current.clone();
        for (i, r) in records.iter().enumerate() {
            next.apply(r).map_err(|message| StoreError::Corrupt {
                study: study_id.to_string(),
                line: i + 1,
                message,
            })?;
        }
        map.insert(study_id.to_string(), next);
        Ok(())
    }

    fn list_studies(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = self.studies.lock().keys().cloned().collect();
        ids.sort();
        Ok(ids)
    }
}
