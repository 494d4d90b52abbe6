//! Experiment directory layout, advisory lock and rollback of partial outputs.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// ```text
/// <root>/
///   config.json                 resolved configuration
///   raw/phantom_NNNNN.dtc       ground-truth phantom per case
///   raw/acq_NNNNN.dtc           multi-coil k-space per case
///   cases/case_NNNNN.dtc        guidance / noisy / reference triple
///   models/<hash>/model.dtc     trained network
///   models/<hash>/train_log.csv
///   models/<hash>/denoised/case_NNNNN.dtc
///   reports/*.csv
/// ```
#[derive(Debug, Clone)]
pub struct ExperimentDir {
    root: PathBuf,
}

impl ExperimentDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ExperimentDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn lock_path(&self) -> PathBuf {
        self.root.join(".lock")
    }

    pub fn phantom_path(&self, id: u64) -> PathBuf {
        self.root.join("raw").join(format!("phantom_{id:05}.dtc"))
    }

    pub fn raw_path(&self, id: u64) -> PathBuf {
        self.root.join("raw").join(format!("acq_{id:05}.dtc"))
    }

    pub fn case_path(&self, id: u64) -> PathBuf {
        self.root.join("cases").join(format!("case_{id:05}.dtc"))
    }

    pub fn model_dir(&self, hash: &str) -> PathBuf {
        self.root.join("models").join(hash)
    }

    pub fn model_path(&self, hash: &str) -> PathBuf {
        self.model_dir(hash).join("model.dtc")
    }

    pub fn denoised_path(&self, hash: &str, id: u64) -> PathBuf {
        self.model_dir(hash).join("denoised").join(format!("case_{id:05}.dtc"))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    /// Take the advisory lock; fails if another command holds it.
    pub fn lock(&self) -> Result<LockGuard> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.lock_path();
        OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Config(format!(
                    "{} exists: another command is running on this experiment (remove the file if it is stale)",
                    path.display()
                ))
            } else {
                Error::io(&path, e)
            }
        })?;
        Ok(LockGuard { path })
    }
}

#[derive(Debug)]
pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Write `bytes` through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Files produced by the running command, deleted again if it fails.
#[derive(Debug, Default)]
pub struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn record(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.written.extend(paths);
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn rollback(&mut self) {
        for p in self.written.drain(..).rev() {
            let _ = fs::remove_file(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = ExperimentDir::new(tmp.path().join("exp"));
        let g = dir.lock().unwrap();
        assert!(dir.lock().is_err());
        drop(g);
        assert!(dir.lock().is_ok());
    }

    #[test]
    fn rollback_removes_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = Outputs::default();
        let p = tmp.path().join("a/b.txt");
        out.write(&p, b"x").unwrap();
        assert!(p.exists());
        out.rollback();
        assert!(!p.exists());
    }
}
