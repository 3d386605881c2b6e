//! The pipeline stages and their data flow. Each stage reads files produced
//! by earlier stages and writes into its own directory under the run root.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use cluster::{assign, kmeans_fit, second_round, train_deep_cluster, DcConfig, DcModel, DcTrainOptions, KMeansModel};
use cpc::{extract_features, train_cpc, write_feature_file, read_feature_file, CpcConfig, CpcModel, FeatureLayer, HeadKind, TrainOptions};
use metrics::{abx_error, cosine_similarity, pair_accuracy, spearman_rho, word_embedding, AbxItem, AbxMode, MetricReport, SimilarityRecord, StimulusPair};
use nn_core::{Checkpoint, Tensor};
use slm::{pseudo_prob, train_slm, SlmConfig, SlmModel, SlmTrainOptions};

use crate::config::RunConfig;
use crate::error::{PipelineError, Result};
use crate::manifest::Manifest;
use crate::synth::generate_synth;
use crate::wav::read_wav;

pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        RunPaths { root: root.to_path_buf() }
    }

    pub fn stage(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn synth(&self) -> PathBuf {
        self.stage("synth")
    }

    pub fn metrics_file(&self) -> PathBuf {
        self.stage("report").join("metrics.tsv")
    }
}

fn stage_err(stage: &str, reason: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage: stage.into(),
        reason: reason.to_string(),
    }
}

fn head_kind(cfg: &RunConfig) -> HeadKind {
    if cfg.cpc.head == "transformer" {
        HeadKind::Transformer
    } else {
        HeadKind::Conformer
    }
}

fn load_waves(manifest: &Manifest) -> Result<Vec<(String, Vec<f64>)>> {
    manifest
        .entries
        .iter()
        .map(|e| Ok((e.utt.clone(), read_wav(&e.audio)?)))
        .collect()
}

fn load_cpc(paths: &RunPaths) -> Result<CpcModel> {
    let ckpt = Checkpoint::load(&paths.stage("train-cpc").join("cpc.ckpt"))?;
    Ok(CpcModel::from_checkpoint(&ckpt)?)
}

fn load_dc(paths: &RunPaths) -> Result<DcModel> {
    let ckpt = Checkpoint::load(&paths.stage("train-dc").join("dc.ckpt"))?;
    Ok(DcModel::from_checkpoint(&ckpt)?)
}

// ---- stage: synth ----

pub fn run_synth(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let mut spec = cfg.synth.clone();
    spec.seed = cfg.seed ^ spec.seed;
    generate_synth(&spec, dir)?;
    Ok(())
}

// ---- stage: train-cpc ----

pub fn run_train_cpc(cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let manifest = Manifest::load(&paths.synth().join("manifest_train.tsv"))?;
    let waves: Vec<Vec<f64>> = load_waves(&manifest)?
        .into_iter()
        .map(|(_, w)| w)
        .collect();
    let config = CpcConfig::desk(head_kind(cfg));
    let opts = TrainOptions {
        epochs: cfg.cpc.epochs,
        window: cfg.cpc.window,
        windows_per_epoch: cfg.cpc.windows_per_epoch,
        batch: cfg.cpc.batch,
        lr: cfg.cpc.lr,
    };
    let outcome = train_cpc(&waves, &config, cfg.seed ^ 0xc9c, &opts)?;
    outcome.model.to_checkpoint().save(&dir.join("cpc.ckpt"))?;
    let trace: String = outcome
        .loss_trace
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i}\t{l:.6}\n"))
        .collect();
    fs::write(dir.join("loss.tsv"), trace)?;
    Ok(())
}

// ---- stage: extract ----

fn extract_manifest(model: &CpcModel, manifest: &Manifest, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for e in &manifest.entries {
        let wave = read_wav(&e.audio)?;
        let feats = extract_features(model, &wave, FeatureLayer::C)?;
        write_feature_file(&dir.join(format!("{}.feat", e.utt)), &feats)?;
    }
    Ok(())
}

pub fn run_extract(_cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let model = load_cpc(paths)?;
    for name in ["fit", "abx", "stimuli"] {
        let manifest = Manifest::load(&paths.synth().join(format!("manifest_{name}.tsv")))?;
        extract_manifest(&model, &manifest, &dir.join(name))?;
    }
    Ok(())
}

// ---- stage: kmeans ----

fn stack_feature_dir(dir: &Path, max_frames: usize) -> Result<Tensor> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| Ok(e?.path()))
        .collect::<Result<Vec<_>>>()?;
    files.sort();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for f in &files {
        let t = read_feature_file(f)?;
        for r in 0..t.rows() {
            rows.push(t.row(r).to_vec());
        }
    }
    if max_frames > 0 && rows.len() > max_frames {
        // deterministic stride subsample
        let stride = rows.len() as f64 / max_frames as f64;
        rows = (0..max_frames)
            .map(|i| rows[(i as f64 * stride) as usize].clone())
            .collect();
    }
    Ok(Tensor::from_rows(&rows))
}

fn save_kmeans(model: &KMeansModel, dir: &Path) -> Result<()> {
    write_feature_file(&dir.join("centroids.feat"), &model.centroids)?;
    let trace: String = model
        .inertia_trace
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{i}\t{v:.6}\n"))
        .collect();
    fs::write(dir.join("inertia.tsv"), trace)?;
    Ok(())
}

fn load_kmeans(dir: &Path) -> Result<KMeansModel> {
    Ok(KMeansModel {
        centroids: read_feature_file(&dir.join("centroids.feat"))?,
        inertia_trace: Vec::new(),
    })
}

pub fn run_kmeans(cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let feats = stack_feature_dir(&paths.stage("extract").join("fit"), cfg.kmeans.max_fit_frames)?;
    let model = kmeans_fit(&feats, cfg.kmeans.k, cfg.kmeans.iters, cfg.seed ^ 0x6b6d)?;
    for w in model.inertia_trace.windows(2) {
        if w[1] > w[0] + 1e-9 {
            return Err(stage_err("kmeans", "inertia increased during fitting"));
        }
    }
    save_kmeans(&model, dir)
}

// ---- stage: quantize ----

fn quantize_manifest(
    model: &CpcModel,
    km: &KMeansModel,
    manifest: &Manifest,
    out_file: &Path,
) -> Result<()> {
    let mut units = Vec::new();
    for e in &manifest.entries {
        let wave = read_wav(&e.audio)?;
        let feats = extract_features(model, &wave, FeatureLayer::C)?;
        units.push((e.utt.clone(), assign(km, &feats)?));
    }
    cluster::write_units(out_file, &units)?;
    Ok(())
}

pub fn run_quantize(_cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let model = load_cpc(paths)?;
    let km = load_kmeans(&paths.stage("kmeans"))?;
    for (name, out) in [("train", "train.units"), ("stimuli", "stimuli.units")] {
        let manifest = Manifest::load(&paths.synth().join(format!("manifest_{name}.tsv")))?;
        quantize_manifest(&model, &km, &manifest, &dir.join(out))?;
    }
    Ok(())
}

// ---- stage: train-dc ----

pub fn run_train_dc(cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let manifest = Manifest::load(&paths.synth().join("manifest_train.tsv"))?;
    let waves = load_waves(&manifest)?;
    let labels: HashMap<String, Vec<usize>> =
        cluster::read_units(&paths.stage("quantize").join("train.units"))?
            .into_iter()
            .collect();
    let mut cpc_cfg = CpcConfig::desk(head_kind(cfg));
    if cfg.dc.hidden_override > 0 {
        cpc_cfg.ar_hidden = cfg.dc.hidden_override;
    }
    let dc_cfg = DcConfig {
        cpc: cpc_cfg,
        k: cfg.kmeans.k,
    };
    let opts = DcTrainOptions {
        epochs: cfg.dc.epochs,
        crop_frames: cfg.dc.crop_frames,
        crops_per_epoch: cfg.dc.crops_per_epoch,
        lr: cfg.dc.lr,
    };
    let outcome = train_deep_cluster(&waves, &labels, &dc_cfg, cfg.seed ^ 0xdc0, &opts)?;
    outcome.model.to_checkpoint().save(&dir.join("dc.ckpt"))?;
    let trace: String = outcome
        .loss_trace
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i}\t{l:.6}\n"))
        .collect();
    fs::write(dir.join("loss.tsv"), trace)?;
    fs::write(
        dir.join("train_accuracy.txt"),
        format!("{:.6}\n", outcome.train_accuracy),
    )?;
    Ok(())
}

// ---- stage: second-round ----

fn dc_features_manifest(model: &DcModel, manifest: &Manifest, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for e in &manifest.entries {
        let wave = read_wav(&e.audio)?;
        let feats = model.features(&wave)?;
        write_feature_file(&dir.join(format!("{}.feat", e.utt)), &feats)?;
    }
    Ok(())
}

pub fn run_second_round(cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let model = load_dc(paths)?;
    // second-round clustering is fit on the fit split
    let fit = Manifest::load(&paths.synth().join("manifest_fit.tsv"))?;
    let fit_waves = load_waves(&fit)?;
    let (km, _) = second_round(
        &model,
        &fit_waves,
        cfg.kmeans.k,
        cfg.kmeans.iters,
        cfg.seed ^ 0x5247,
    )?;
    save_kmeans(&km, dir)?;
    // label train + stimuli with the new units; export features for eval
    for (name, out) in [("train", "train.units"), ("stimuli", "stimuli.units")] {
        let manifest = Manifest::load(&paths.synth().join(format!("manifest_{name}.tsv")))?;
        let mut units = Vec::new();
        for e in &manifest.entries {
            let wave = read_wav(&e.audio)?;
            let feats = model.features(&wave)?;
            units.push((e.utt.clone(), assign(&km, &feats)?));
        }
        cluster::write_units(&dir.join(out), &units)?;
    }
    for name in ["abx", "stimuli"] {
        let manifest = Manifest::load(&paths.synth().join(format!("manifest_{name}.tsv")))?;
        dc_features_manifest(&model, &manifest, &dir.join(name))?;
    }
    Ok(())
}

// ---- stage: train-lm ----

/// Consecutive repeats collapse to one token; unit LMs see phone-like
/// sequences rather than frame rates.
pub fn collapse_repeats(units: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for &u in units {
        if out.last() != Some(&u) {
            out.push(u);
        }
    }
    out
}

fn final_units_dir(cfg: &RunConfig, paths: &RunPaths) -> PathBuf {
    if cfg.uses_deep_cluster() {
        paths.stage("second-round")
    } else {
        paths.stage("quantize")
    }
}

pub fn run_train_lm(cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let units = cluster::read_units(&final_units_dir(cfg, paths).join("train.units"))?;
    let seqs: Vec<Vec<usize>> = units.iter().map(|(_, u)| collapse_repeats(u)).collect();
    let slm_cfg = SlmConfig {
        k: cfg.kmeans.k,
        layers: cfg.slm.layers,
        heads: cfg.slm.heads,
        hidden: cfg.slm.hidden,
        ffn: cfg.slm.ffn,
        ..SlmConfig::desk(cfg.kmeans.k)
    };
    let opts = SlmTrainOptions {
        epochs: cfg.slm.epochs,
        batch: cfg.slm.batch,
        lr: cfg.slm.lr,
    };
    let outcome = train_slm(&seqs, &slm_cfg, cfg.seed ^ 0x51b, &opts)?;
    outcome.model.to_checkpoint().save(&dir.join("slm.ckpt"))?;
    let trace: String = outcome
        .loss_trace
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i}\t{l:.6}\n"))
        .collect();
    fs::write(dir.join("loss.tsv"), trace)?;
    Ok(())
}

// ---- stage: score ----

pub fn run_score(cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let model = SlmModel::from_checkpoint(&Checkpoint::load(
        &paths.stage("train-lm").join("slm.ckpt"),
    )?)?;
    let mut units = cluster::read_units(&final_units_dir(cfg, paths).join("stimuli.units"))?;
    units.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = String::new();
    for (utt, u) in &units {
        let collapsed = collapse_repeats(u);
        if collapsed.is_empty() {
            return Err(stage_err("score", format!("stimulus `{utt}` has no units")));
        }
        let scored = pseudo_prob(&model, &collapsed)?;
        // length-normalized: raw pseudo log-probability tracks sequence
        // length so closely that it drowns out well-formedness
        let score = scored.pll / scored.per_position.len() as f64;
        out.push_str(&format!("{utt}\t{score:.6}\n"));
    }
    fs::write(dir.join("scores.tsv"), out)?;
    Ok(())
}

// ---- stage: eval-abx ----

fn abx_feature_dir(cfg: &RunConfig, paths: &RunPaths) -> PathBuf {
    if cfg.uses_deep_cluster() {
        paths.stage("second-round").join("abx")
    } else {
        paths.stage("extract").join("abx")
    }
}

fn tensor_to_frames(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn load_abx_items(item_file: &Path, feature_dir: &Path) -> Result<Vec<AbxItem>> {
    let text = fs::read_to_string(item_file)?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(PipelineError::Manifest(format!(
                "{} line {}: expected utt-id<TAB>category<TAB>speaker",
                item_file.display(),
                i + 1
            )));
        }
        let feats = read_feature_file(&feature_dir.join(format!("{}.feat", cols[0])))?;
        items.push(AbxItem {
            id: cols[0].to_string(),
            features: tensor_to_frames(&feats),
            category: cols[1].to_string(),
            speaker: cols[2].to_string(),
        });
    }
    Ok(items)
}

pub fn run_eval_abx(cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let items = load_abx_items(
        &paths.synth().join("abx_items.tsv"),
        &abx_feature_dir(cfg, paths),
    )?;
    let mut report = MetricReport::default();
    for (mode, name) in [(AbxMode::Within, "abx-within"), (AbxMode::Across, "abx-across")] {
        let r = abx_error(&items, mode)?;
        report.push(name, r.error);
    }
    fs::write(dir.join("report.tsv"), report.to_text())?;
    Ok(())
}

// ---- stage: eval-pairs ----

pub fn read_scores(path: &Path) -> Result<HashMap<String, f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, v) = line
            .split_once('\t')
            .ok_or_else(|| PipelineError::Manifest(format!("bad scores line `{line}`")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| PipelineError::Manifest(format!("bad score in `{line}`")))?;
        out.insert(id.to_string(), v);
    }
    Ok(out)
}

pub fn load_pairs(pair_file: &Path, scores: &HashMap<String, f64>) -> Result<Vec<StimulusPair>> {
    let text = fs::read_to_string(pair_file)?;
    let mut pairs = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(PipelineError::Manifest(format!("bad pair line `{line}`")));
        }
        let get = |id: &str| {
            scores
                .get(id)
                .copied()
                .ok_or_else(|| PipelineError::Manifest(format!("no score for stimulus `{id}`")))
        };
        pairs.push(StimulusPair {
            id: cols[0].to_string(),
            positive: get(cols[1])?,
            negative: get(cols[2])?,
        });
    }
    Ok(pairs)
}

pub fn run_eval_pairs(_cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let scores = read_scores(&paths.stage("score").join("scores.tsv"))?;
    let mut report = MetricReport::default();
    for (file, name) in [
        ("pairs_lexical.tsv", "lexical-accuracy"),
        ("pairs_syntactic.tsv", "syntactic-accuracy"),
    ] {
        let pairs = load_pairs(&paths.synth().join(file), &scores)?;
        report.push(name, pair_accuracy(&pairs)?);
        report.push(&format!("{name}-pairs"), pairs.len() as f64);
    }
    fs::write(dir.join("report.tsv"), report.to_text())?;
    Ok(())
}

// ---- stage: eval-simi ----

fn stimulus_feature_dir(cfg: &RunConfig, paths: &RunPaths) -> PathBuf {
    if cfg.uses_deep_cluster() {
        paths.stage("second-round").join("stimuli")
    } else {
        paths.stage("extract").join("stimuli")
    }
}

pub fn run_eval_simi(cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let feature_dir = stimulus_feature_dir(cfg, paths);
    let text = fs::read_to_string(paths.synth().join("simi_gold.tsv"))?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(PipelineError::Manifest(format!("bad gold line `{line}`")));
        }
        let emb = |id: &str| -> Result<Vec<f64>> {
            let t = read_feature_file(&feature_dir.join(format!("{id}.feat")))?;
            Ok(word_embedding(&tensor_to_frames(&t))?)
        };
        let human: f64 = cols[3]
            .parse()
            .map_err(|_| PipelineError::Manifest(format!("bad human score in `{line}`")))?;
        records.push(SimilarityRecord {
            model: cosine_similarity(&emb(cols[1])?, &emb(cols[2])?),
            human,
        });
    }
    let mut report = MetricReport::default();
    report.push("simi-spearman", spearman_rho(&records)?);
    fs::write(dir.join("report.tsv"), report.to_text())?;
    Ok(())
}

// ---- stage: report ----

pub fn run_report(cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    let mut combined = MetricReport::default();
    for stage in ["eval-abx", "eval-pairs", "eval-simi"] {
        if !cfg.stages.iter().any(|s| s == stage) {
            continue;
        }
        let text = fs::read_to_string(paths.stage(stage).join("report.tsv"))?;
        let part = MetricReport::from_text(&text)?;
        combined.entries.extend(part.entries);
    }
    fs::write(dir.join("metrics.tsv"), combined.to_text())?;
    Ok(())
}

/// Dispatch by stage name into the given (temporary) stage directory.
pub fn execute_stage(name: &str, cfg: &RunConfig, paths: &RunPaths, dir: &Path) -> Result<()> {
    match name {
        "synth" => run_synth(cfg, dir),
        "train-cpc" => run_train_cpc(cfg, paths, dir),
        "extract" => run_extract(cfg, paths, dir),
        "kmeans" => run_kmeans(cfg, paths, dir),
        "quantize" => run_quantize(cfg, paths, dir),
        "train-dc" => run_train_dc(cfg, paths, dir),
        "second-round" => run_second_round(cfg, paths, dir),
        "train-lm" => run_train_lm(cfg, paths, dir),
        "score" => run_score(cfg, paths, dir),
        "eval-abx" => run_eval_abx(cfg, paths, dir),
        "eval-pairs" => run_eval_pairs(cfg, paths, dir),
        "eval-simi" => run_eval_simi(cfg, paths, dir),
        "report" => run_report(cfg, paths, dir),
        other => Err(PipelineError::Config(format!("unknown stage `{other}`"))),
    }
}

/// Upstream stage whose outputs feed each stage; used for cache
/// invalidation.
pub fn stage_inputs(name: &str, cfg: &RunConfig, paths: &RunPaths) -> Vec<PathBuf> {
    let p = |s: &str| paths.stage(s);
    match name {
        "synth" => vec![],
        "train-cpc" => vec![p("synth")],
        "extract" => vec![p("synth"), p("train-cpc")],
        "kmeans" => vec![p("extract")],
        "quantize" => vec![p("synth"), p("train-cpc"), p("kmeans")],
        "train-dc" => vec![p("synth"), p("quantize")],
        "second-round" => vec![p("synth"), p("train-dc")],
        "train-lm" => vec![final_units_dir(cfg, paths)],
        "score" => vec![p("train-lm"), final_units_dir(cfg, paths)],
        "eval-abx" => vec![p("synth"), abx_feature_dir(cfg, paths)],
        "eval-pairs" => vec![p("synth"), p("score")],
        "eval-simi" => vec![p("synth"), stimulus_feature_dir(cfg, paths)],
        "report" => vec![p("eval-abx"), p("eval-pairs"), p("eval-simi")],
        _ => vec![],
    }
}

/// Config text relevant to a stage; changing unrelated sections must not
/// invalidate its cache.
pub fn stage_config_text(name: &str, cfg: &RunConfig) -> String {
    let seed = cfg.seed;
    let synth = toml::to_string(&cfg.synth).unwrap_or_default();
    match name {
        "synth" => format!("seed={seed}\n{synth}"),
        "train-cpc" => format!("seed={seed}\n{:?}", cfg.cpc),
        "extract" => String::new(),
        "kmeans" => format!("seed={seed}\n{:?}", cfg.kmeans),
        "quantize" => String::new(),
        "train-dc" => format!("seed={seed}\nk={}\nhead={}\n{:?}", cfg.kmeans.k, cfg.cpc.head, cfg.dc),
        "second-round" => format!("seed={seed}\nk={}\niters={}", cfg.kmeans.k, cfg.kmeans.iters),
        "train-lm" => format!("seed={seed}\nk={}\n{:?}", cfg.kmeans.k, cfg.slm),
        "score" | "eval-abx" | "eval-pairs" | "eval-simi" => String::new(),
        "report" => cfg.stages.join(","),
        _ => String::new(),
    }
}

