//! Output directory with a manifest of every file written, saved last.

use crate::error::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    inputs: &'a [FileEntry],
    files: &'a [FileEntry],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Compute(format!("cannot write {}: {e}", path.display()))
}

pub struct OutputDir {
    root: PathBuf,
    command: String,
    inputs: Vec<FileEntry>,
    files: Vec<FileEntry>,
}

impl OutputDir {
    /// Create `root` and remove any stale manifest, so an interrupted run
    /// never looks complete.
    pub fn create(root: &Path, command: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        let manifest = root.join(MANIFEST);
        if manifest.exists() {
            std::fs::remove_file(&manifest).map_err(|e| io_err(&manifest, e))?;
        }
        Ok(Self { root: root.to_path_buf(), command: command.into(), inputs: Vec::new(), files: Vec::new() })
    }

    /// Record an input file by content hash.
    pub fn note_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let contents = contents.as_ref();
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.files.push(FileEntry { path: name.into(), bytes: contents.len(), sha256: sha256_hex(contents) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Compute(e.to_string()))? + "\n";
        self.write(name, text)
    }

    pub fn finish(self) -> Result<Vec<FileEntry>, CliError> {
        let manifest = Manifest { command: &self.command, inputs: &self.inputs, files: &self.files };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = self.root.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(self.files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_files_and_replaces_stale_one() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(MANIFEST), "stale").unwrap();
        let mut out = OutputDir::create(dir.path(), "fit").unwrap();
        assert!(!dir.path().join(MANIFEST).exists());
        out.write("a/b.txt", "abc").unwrap();
        out.finish().unwrap();
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(m["files"][0]["path"], "a/b.txt");
        assert_eq!(
            m["files"][0]["sha256"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
