//! Dataset directories: match-set files plus a deterministic manifest that
//! fixes ordering and records generation parameters.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use plpose_core::datagen::{load_matchset, MatchSet};

pub const MANIFEST_NAME: &str = "manifest.txt";

pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
}

pub struct Manifest {
    pub mode: String,
    pub params_line: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "plpose dataset v1");
        let _ = writeln!(out, "mode {}", self.mode);
        let _ = writeln!(out, "params {}", self.params_line);
        let _ = writeln!(out, "count {}", self.entries.len());
        for e in &self.entries {
            let _ = writeln!(out, "file {} seed {}", e.file, e.seed);
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Manifest> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header != "plpose dataset v1" {
            bail!("{origin}: bad manifest header {header:?}");
        }
        let mut mode = String::new();
        let mut params_line = String::new();
        let mut entries = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("mode ") {
                mode = rest.to_string();
            } else if let Some(rest) = line.strip_prefix("params ") {
                params_line = rest.to_string();
            } else if line.starts_with("count ") {
                // informational; entry list is authoritative
            } else if let Some(rest) = line.strip_prefix("file ") {
                let mut parts = rest.split_whitespace();
                let file = parts
                    .next()
                    .map(str::to_string)
                    .ok_or_else(|| anyhow::anyhow!("{origin}: bad file line {line:?}"))?;
                let seed = match (parts.next(), parts.next()) {
                    (Some("seed"), Some(s)) => s
                        .parse()
                        .with_context(|| format!("{origin}: bad seed in {line:?}"))?,
                    _ => bail!("{origin}: bad file line {line:?}"),
                };
                entries.push(ManifestEntry { file, seed });
            } else {
                bail!("{origin}: unrecognized manifest line {line:?}");
            }
        }
        Ok(Manifest {
            mode,
            params_line,
            entries,
        })
    }
}

/// Load a dataset directory in manifest order, or sorted by file name when no
/// manifest is present.
pub fn load_dataset(dir: &Path) -> Result<Vec<MatchSet>> {
    let files = dataset_files(dir)?;
    let mut out = Vec::with_capacity(files.len());
    for f in &files {
        out.push(load_matchset(f).with_context(|| format!("loading {}", f.display()))?);
    }
    if out.is_empty() {
        bail!("dataset directory {} contains no match sets", dir.display());
    }
    Ok(out)
}

pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let manifest_path = dir.join(MANIFEST_NAME);
    if manifest_path.is_file() {
        let text = std::fs::read_to_string(&manifest_path)
            .with_context(|| format!("reading {}", manifest_path.display()))?;
        let manifest = Manifest::parse(&text, &manifest_path.display().to_string())?;
        return Ok(manifest.entries.iter().map(|e| dir.join(&e.file)).collect());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pms"))
        .collect();
    files.sort();
    Ok(files)
}

/// Dataset mode recorded in the manifest.
pub fn manifest_mode(dir: &Path) -> Result<Option<String>> {
    let manifest_path = dir.join(MANIFEST_NAME);
    if !manifest_path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&manifest_path)?;
    Ok(Some(
        Manifest::parse(&text, &manifest_path.display().to_string())?.mode,
    ))
}
