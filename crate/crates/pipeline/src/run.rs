//! Stage runner with content-addressed caching.
//!
//! Each completed stage leaves a stamp file holding a hash of the stage
//! name, the config fields it depends on, and the contents of its input
//! directories. A stage is skipped when its stamp matches, its output
//! directory exists, and none of the stages it reads from executed during
//! this run; otherwise it runs into a temporary directory that replaces the
//! old output atomically on success.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{PipelineError, Result};
use crate::stages::{execute_stage, stage_config_text, stage_inputs, RunPaths};

#[derive(Debug, Default)]
pub struct RunOutcome {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
}

fn hash_tree(hasher: &mut Sha256, path: &Path) -> Result<()> {
    if path.is_dir() {
        let mut children: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| Ok(e?.path()))
            .collect::<Result<Vec<_>>>()?;
        children.sort();
        for c in &children {
            hasher.update(c.file_name().unwrap_or_default().as_encoded_bytes());
            hash_tree(hasher, c)?;
        }
    } else {
        hasher.update(fs::read(path)?);
    }
    Ok(())
}

fn stage_hash(name: &str, cfg: &RunConfig, paths: &RunPaths) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(name.as_bytes());
    hasher.update([0]);
    hasher.update(stage_config_text(name, cfg).as_bytes());
    for input in stage_inputs(name, cfg, paths) {
        hasher.update([0]);
        hasher.update(input.file_name().unwrap_or_default().as_encoded_bytes());
        if input.exists() {
            hash_tree(&mut hasher, &input)?;
        }
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Stage names whose output directories feed `name`, derived from the input
/// paths (an input like `extract/abx` maps to the `extract` stage).
fn dep_names(name: &str, cfg: &RunConfig, paths: &RunPaths) -> Vec<String> {
    stage_inputs(name, cfg, paths)
        .iter()
        .filter_map(|p| p.strip_prefix(&paths.root).ok())
        .filter_map(|p| p.components().next())
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect()
}

fn replace_dir(tmp: &Path, dst: &Path) -> Result<()> {
    if dst.exists() {
        fs::remove_dir_all(dst)?;
    }
    fs::rename(tmp, dst)?;
    Ok(())
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.out_dir);
    let stamps = paths.root.join("stamps");
    fs::create_dir_all(&stamps)?;

    let mut executed: BTreeSet<String> = BTreeSet::new();
    let mut outcome = RunOutcome::default();
    for name in &cfg.stages {
        let stage_dir = paths.stage(name);
        let stamp_path = stamps.join(name);
        let hash = stage_hash(name, cfg, &paths)?;
        let deps_dirty = dep_names(name, cfg, &paths)
            .iter()
            .any(|d| executed.contains(d));
        let stamp_ok = fs::read_to_string(&stamp_path)
            .map(|s| s.trim() == hash)
            .unwrap_or(false);
        if stamp_ok && stage_dir.exists() && !deps_dirty {
            outcome.skipped.push(name.clone());
            continue;
        }

        let tmp = paths.root.join(format!(".tmp-{name}"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        let result = execute_stage(name, cfg, &paths, &tmp);
        if let Err(e) = result {
            let _ = fs::remove_dir_all(&tmp);
            return Err(PipelineError::Stage {
                stage: name.clone(),
                reason: e.to_string(),
            });
        }
        replace_dir(&tmp, &stage_dir)?;
        // re-hash: the inputs may have been replaced by upstream stages, and
        // the stamp must describe what this stage actually consumed
        let hash = stage_hash(name, cfg, &paths)?;
        let stamp_tmp = stamps.join(format!(".tmp-{name}"));
        fs::write(&stamp_tmp, format!("{hash}\n"))?;
        fs::rename(&stamp_tmp, &stamp_path)?;
        executed.insert(name.clone());
        outcome.executed.push(name.clone());
    }
    Ok(outcome)
}
