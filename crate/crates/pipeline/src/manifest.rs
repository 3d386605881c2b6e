//! Utterance manifests: TSV of (utterance ID, audio path, speaker, optional
//! alignment path).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utt: String,
    pub audio: PathBuf,
    pub speaker: String,
    pub alignment: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Rejects duplicate utterance IDs.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.utt.as_str()) {
                return Err(PipelineError::Manifest(format!(
                    "duplicate utterance ID `{}`",
                    e.utt
                )));
            }
        }
        Ok(Manifest { entries })
    }

    /// Paths under the manifest's own directory are stored relative to it,
    /// so a run directory can be moved or renamed without going stale.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.utt,
                rel(&e.audio),
                e.speaker,
                e.alignment
                    .as_ref()
                    .map(|p| rel(p))
                    .unwrap_or_else(|| "-".into()),
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Loads, resolving relative paths against the manifest's directory, and
    /// checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("")).to_path_buf();
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(PipelineError::Manifest(format!(
                    "{} line {}: expected 4 columns, got {}",
                    path.display(),
                    i + 1,
                    cols.len()
                )));
            }
            let audio = resolve(cols[1]);
            if !audio.exists() {
                return Err(PipelineError::Manifest(format!(
                    "audio file missing: {}",
                    audio.display()
                )));
            }
            let alignment = if cols[3] == "-" {
                None
            } else {
                let p = resolve(cols[3]);
                if !p.exists() {
                    return Err(PipelineError::Manifest(format!(
                        "alignment file missing: {}",
                        p.display()
                    )));
                }
                Some(p)
            };
            entries.push(ManifestEntry {
                utt: cols[0].to_string(),
                audio,
                speaker: cols[2].to_string(),
                alignment,
            });
        }
        Manifest::new(entries)
    }
}
