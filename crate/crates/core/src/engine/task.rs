//! The contract between the engine and in-situ tasks.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compress::CompressionReport;
use crate::engine::Mode;
use crate::error::{Error, Result};
use crate::proxysim::{FieldKind, Mesh, SnapshotView};
use crate::tasks::Intermediate;
use crate::workers::WorkerGroup;

/// What `init` gets to size itself.
#[derive(Debug, Clone)]
pub struct TaskContext {
    pub out_dir: PathBuf,
    pub mesh: Arc<Mesh>,
    pub mode: Mode,
    pub workers: usize,
}

/// A file a task wrote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRecord {
    pub step: u64,
    pub field: String,
    pub report: CompressionReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskOutputs {
    pub artifacts: Vec<Artifact>,
    pub compression: Vec<CompressionRecord>,
}

impl TaskOutputs {
    pub fn merge(&mut self, other: TaskOutputs) {
        self.artifacts.extend(other.artifacts);
        self.compression.extend(other.compression);
    }

    pub fn bytes_written(&self) -> u64 {
        self.artifacts.iter().map(|a| a.bytes).sum()
    }

    /// Digest over artifact file names and contents, independent of the
    /// directory they were written to and of write order.
    pub fn content_digest(&self) -> String {
        let mut entries: Vec<(String, &str)> = self
            .artifacts
            .iter()
            .map(|a| {
                let name = a
                    .path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                (name, a.sha256.as_str())
            })
            .collect();
        entries.sort();
        let mut h = Sha256::new();
        for (name, digest) in entries {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(digest.as_bytes());
            h.update(*b"\n");
        }
        hex(&h.finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` via a temporary file and rename, so readers never see a
/// partial file.
pub fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<Artifact> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(Artifact {
        path,
        bytes: bytes.len() as u64,
        sha256: hex(&Sha256::digest(bytes)),
    })
}

/// A task that runs whole, either inline or on the in-situ workers.
pub trait InSituTask: Send {
    fn name(&self) -> &'static str;
    /// Fields the engine must copy for asynchronous transfer.
    fn needed_fields(&self) -> Vec<FieldKind>;
    fn init(&mut self, ctx: &TaskContext) -> Result<()>;
    fn check(&mut self, snapshot: SnapshotView<'_>, workers: &WorkerGroup) -> Result<()>;
    fn end(&mut self) -> Result<TaskOutputs>;
}

/// Inline half of a hybrid task.
pub trait SyncStage: Send {
    fn init(&mut self, ctx: &TaskContext) -> Result<()>;
    fn sync_part(&mut self, snapshot: SnapshotView<'_>, workers: &WorkerGroup) -> Result<()>;
    /// Drains what has accumulated since the last call; `None` when there
    /// is nothing to ship.
    fn take_intermediate(&mut self, step_index: u64) -> Result<Option<Intermediate>>;
    fn end(&mut self) -> Result<TaskOutputs>;
}

/// Concurrent half of a hybrid task.
pub trait AsyncStage: Send {
    fn init(&mut self, ctx: &TaskContext) -> Result<()>;
    fn async_part(&mut self, data: Intermediate, workers: &WorkerGroup) -> Result<()>;
    fn end(&mut self) -> Result<TaskOutputs>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Created,
    Initialized,
    Ended,
}

/// Enforces init -> check* -> end.
#[derive(Debug)]
pub struct Lifecycle {
    label: &'static str,
    phase: Phase,
    checks: u64,
}

impl Lifecycle {
    pub fn new(label: &'static str) -> Self {
        Self {
            label,
            phase: Phase::Created,
            checks: 0,
        }
    }

    pub fn init(&mut self) -> Result<()> {
        if self.phase != Phase::Created {
            return Err(Error::Lifecycle(format!("{}: init called twice", self.label)));
        }
        self.phase = Phase::Initialized;
        Ok(())
    }

    pub fn check(&mut self) -> Result<()> {
        match self.phase {
            Phase::Initialized => {
                self.checks += 1;
                Ok(())
            }
            Phase::Created => Err(Error::Lifecycle(format!("{}: check before init", self.label))),
            Phase::Ended => Err(Error::Lifecycle(format!("{}: check after end", self.label))),
        }
    }

    pub fn end(&mut self) -> Result<()> {
        if self.phase != Phase::Initialized {
            return Err(Error::Lifecycle(format!(
                "{}: end without a matching init",
                self.label
            )));
        }
        self.phase = Phase::Ended;
        Ok(())
    }

    pub fn checks(&self) -> u64 {
        self.checks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle_order_enforced() {
        let mut l = Lifecycle::new("t");
        assert!(l.check().is_err());
        assert!(l.end().is_err());
        l.init().unwrap();
        assert!(l.init().is_err());
        l.check().unwrap();
        l.check().unwrap();
        l.end().unwrap();
        assert!(l.check().is_err());
        assert!(l.end().is_err());
        assert_eq!(l.checks(), 2);
    }

    #[test]
    fn artifact_write_is_atomic_and_digested() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_artifact(dir.path(), "x.bin", b"abc").unwrap();
        assert_eq!(a.bytes, 3);
        assert_eq!(
            a.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(!dir.path().join(".x.bin.tmp").exists());
        assert_eq!(std::fs::read(dir.path().join("x.bin")).unwrap(), b"abc");
    }

    #[test]
    fn digest_ignores_directory_and_order() {
        let mk = |dir: &str, name: &str, d: &str| Artifact {
            path: PathBuf::from(dir).join(name),
            bytes: 1,
            sha256: d.into(),
        };
        let a = TaskOutputs {
            artifacts: vec![mk("a", "1", "x"), mk("a", "2", "y")],
            ..Default::default()
        };
        let b = TaskOutputs {
            artifacts: vec![mk("b", "2", "y"), mk("b", "1", "x")],
            ..Default::default()
        };
        assert_eq!(a.content_digest(), b.content_digest());
    }
}
