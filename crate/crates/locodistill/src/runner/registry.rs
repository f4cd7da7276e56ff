//! Append-only run ledger: one JSON line per executed stage.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("registry line {0} is not valid JSON: {1}")]
    BadLine(usize, serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Completed,
    Failed,
    /// An upstream dependency failed; this stage never ran.
    Blocked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Stage kind: "expert" | "collect" | "train-dp" | "eval".
    pub stage: String,
    /// Unique stage instance name, e.g. "collect/all/200k".
    pub name: String,
    /// Hash of every input that determines the outputs.
    pub input_hash: u64,
    /// Paths of produced artifacts, relative to the registry root.
    pub outputs: Vec<String>,
    pub status: Status,
    /// Error text for failures, empty otherwise.
    pub detail: String,
    pub seconds: f64,
}

/// Run ledger stored as `registry.jsonl` under the output root. Appends are
/// flushed line-atomically; reload tolerates a truncated final line only by
/// erroring (corruption is never silently dropped).
#[derive(Debug)]
pub struct RunRegistry {
    root: PathBuf,
    records: Vec<RunRecord>,
}

impl RunRegistry {
    pub fn open(root: &Path) -> Result<Self, RegistryError> {
        std::fs::create_dir_all(root)?;
        let path = root.join("registry.jsonl");
        let mut records = Vec::new();
        if path.exists() {
            for (i, line) in std::fs::read_to_string(&path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                records.push(
                    serde_json::from_str(line).map_err(|e| RegistryError::BadLine(i + 1, e))?,
                );
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            records,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    /// The latest completed record for a name, if its hash matches and all
    /// its outputs still exist on disk.
    pub fn reusable(&self, name: &str, input_hash: u64) -> Option<&RunRecord> {
        self.records
            .iter()
            .rev()
            .find(|r| r.name == name && r.status == Status::Completed)
            .filter(|r| {
                r.input_hash == input_hash
                    && r.outputs.iter().all(|o| self.root.join(o).exists())
            })
    }

    pub fn append(&mut self, record: RunRecord) -> Result<(), RegistryError> {
        let line = serde_json::to_string(&record).expect("record serializes");
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join("registry.jsonl"))?;
        writeln!(f, "{line}")?;
        f.flush()?;
        self.records.push(record);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(name: &str, hash: u64, status: Status, outputs: Vec<String>) -> RunRecord {
        RunRecord {
            stage: "collect".into(),
            name: name.into(),
            input_hash: hash,
            outputs,
            status,
            detail: String::new(),
            seconds: 0.0,
        }
    }

    #[test]
    fn round_trips_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = RunRegistry::open(dir.path()).unwrap();
        reg.append(rec("a", 1, Status::Completed, vec![])).unwrap();
        reg.append(rec("b", 2, Status::Failed, vec![])).unwrap();
        let again = RunRegistry::open(dir.path()).unwrap();
        assert_eq!(again.records(), reg.records());
    }

    #[test]
    fn reusable_requires_hash_match_and_outputs_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = RunRegistry::open(dir.path()).unwrap();
        std::fs::write(dir.path().join("x.bin"), b"data").unwrap();
        reg.append(rec("a", 1, Status::Completed, vec!["x.bin".into()]))
            .unwrap();
        assert!(reg.reusable("a", 1).is_some());
        assert!(reg.reusable("a", 2).is_none(), "hash mismatch");
        assert!(reg.reusable("b", 1).is_none(), "unknown name");
        reg.append(rec("c", 3, Status::Completed, vec!["missing.bin".into()]))
            .unwrap();
        assert!(reg.reusable("c", 3).is_none(), "output vanished");
        reg.append(rec("d", 4, Status::Failed, vec![])).unwrap();
        assert!(reg.reusable("d", 4).is_none(), "failures never reuse");
    }

    #[test]
    fn corrupt_line_is_an_error_not_a_skip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("registry.jsonl"), "{not json\n").unwrap();
        assert!(matches!(
            RunRegistry::open(dir.path()),
            Err(RegistryError::BadLine(1, _))
        ));
    }
}
