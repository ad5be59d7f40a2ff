use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "MANIFEST";
pub const CONFIG: &str = "run_config.json";

/// Output directory of one command. Every file in it ends up in the
/// MANIFEST, which uses the `sha256sum` line format.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `root`, refusing a directory that already has content so a
    /// run never mixes with an earlier one.
    pub fn create(root: &Path, cfg: &RunConfig) -> Result<Self, CliError> {
        if root.exists() {
            let mut entries = fs::read_dir(root).map_err(|e| CliError::io(root, e))?;
            if entries.next().is_some() {
                return Err(CliError::Io(format!(
                    "{}: output directory is not empty",
                    root.display()
                )));
            }
        }
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let dir = Self { root: root.to_owned() };
        dir.write_json(CONFIG, cfg)?;
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json<S: Serialize + ?Sized>(&self, name: &str, value: &S) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv<S: Serialize>(&self, name: &str, rows: &[S]) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(&p).map_err(|e| CliError::io(&p, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| CliError::io(&p, e))?;
        }
        w.flush().map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    /// Writes the MANIFEST and returns its own SHA-256, which identifies the
    /// whole directory.
    pub fn finish(self) -> Result<String, CliError> {
        let text = manifest_text(&self.root)?;
        self.write_bytes(MANIFEST, text.as_bytes())?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `<sha256>  <relative path>` per file, sorted by path.
pub fn manifest_text(root: &Path) -> Result<String, CliError> {
    let mut files = Vec::new();
    collect(root, root, &mut files)?;
    files.sort();
    let mut out = String::new();
    for rel in files {
        if rel == MANIFEST {
            continue;
        }
        let digest = file_digest(&root.join(&rel))?;
        out.push_str(&format!("{digest}  {rel}\n"));
    }
    Ok(out)
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walk stays under root");
            let parts: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
            out.push(parts.join("/"));
        }
    }
    Ok(())
}
