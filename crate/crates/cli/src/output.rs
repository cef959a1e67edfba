//! Atomic file output: every artifact is written to a temporary file in the
//! target directory and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::CliError;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|source| CliError::Write {
            path: root.display().to_string(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.path(name);
        let err = |source| CliError::Write {
            path: target.display().to_string(),
            source,
        };
        let mut tmp = NamedTempFile::new_in(&self.root).map_err(err)?;
        tmp.write_all(bytes).map_err(err)?;
        tmp.as_file().sync_all().map_err(err)?;
        tmp.persist(&target).map_err(|e| err(e.error))?;
        Ok(())
    }

    /// Renders with `f` into memory, then writes atomically.
    pub fn write_with<E: std::fmt::Display>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> Result<(), E>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        self.write(name, &buf)
    }
}

/// Reads an artifact a previous command should have left behind.
pub fn read_artifact(dir: &Path, name: &str, producer: &str) -> Result<String, CliError> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| {
        CliError::MissingArtifact(format!(
            "{}: {e}; run `ibnr {producer}` with the same --out first",
            path.display()
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_replace_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(&dir.path().join("nested")).unwrap();
        out.write("a.txt", b"one").unwrap();
        out.write("a.txt", b"two").unwrap();
        assert_eq!(fs::read_to_string(out.path("a.txt")).unwrap(), "two");
        let leftovers = fs::read_dir(dir.path().join("nested")).unwrap().count();
        assert_eq!(leftovers, 1);
        assert!(matches!(
            read_artifact(dir.path(), "fit.csv", "fit"),
            Err(CliError::MissingArtifact(_))
        ));
    }
}
