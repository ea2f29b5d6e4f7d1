use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use greg_core::digest::sha256_hex;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Written as `manifest.json` next to the outputs of every command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub version: String,
    pub wall_seconds: f64,
}

/// Hash of a file, or of the sorted file listing of a directory
/// (`manifest.json` excluded).
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "manifest.json"))
            .collect();
        names.sort();
        let mut listing = String::new();
        for p in names {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            listing.push_str(&format!("{name}\t{}\n", hash_path(&p)?));
        }
        Ok(sha256_hex(listing.as_bytes()))
    } else {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(sha256_hex(&bytes))
    }
}

fn normalise(p: &Path) -> PathBuf {
    if let Ok(c) = p.canonicalize() {
        return c;
    }
    let abs = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    match (abs.parent(), abs.file_name()) {
        (Some(parent), Some(name)) => parent.canonicalize().map(|d| d.join(name)).unwrap_or(abs),
        _ => abs,
    }
}

/// Fails when an output would overwrite an input. A directory input also
/// covers the files inside it.
pub fn ensure_distinct(inputs: &[&Path], outputs: &[PathBuf]) -> Result<()> {
    let ins: Vec<PathBuf> = inputs.iter().map(|p| normalise(p)).collect();
    for out in outputs {
        let o = normalise(out);
        for (i, raw) in ins.iter().zip(inputs) {
            let clash = if raw.is_dir() { o.parent() == Some(i.as_path()) || &o == i } else { &o == i };
            if clash {
                bail!("output {} would overwrite input {}", out.display(), raw.display());
            }
        }
    }
    Ok(())
}

pub struct Recorder {
    command: &'static str,
    started: Instant,
    inputs: Vec<InputHash>,
}

impl Recorder {
    /// Hashes inputs before anything is written.
    pub fn start(command: &'static str, inputs: &[&Path]) -> Result<Self> {
        let started = Instant::now();
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputHash {
                    path: p.display().to_string(),
                    sha256: hash_path(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            command,
            started,
            inputs,
        })
    }

    pub fn finish(self, out_dir: &Path, config: serde_json::Value, outputs: &[PathBuf], seed: u64) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            config,
            inputs: self.inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        fs::write(&f, "x").unwrap();
        assert!(ensure_distinct(&[&f], &[f.clone()]).is_err());
        assert!(ensure_distinct(&[&f], &[dir.path().join("b.txt")]).is_ok());
        let sub = dir.path().join("corpus");
        fs::create_dir(&sub).unwrap();
        assert!(ensure_distinct(&[&sub], &[sub.join("vocab.tsv")]).is_err());
        assert!(ensure_distinct(&[&sub], &[sub.join("x").join("vocab.tsv")]).is_ok());
    }

    #[test]
    fn directory_hash_ignores_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a"), "1").unwrap();
        let h = hash_path(dir.path()).unwrap();
        fs::write(dir.path().join("manifest.json"), "{}").unwrap();
        assert_eq!(h, hash_path(dir.path()).unwrap());
        fs::write(dir.path().join("a"), "2").unwrap();
        assert_ne!(h, hash_path(dir.path()).unwrap());
    }
}
