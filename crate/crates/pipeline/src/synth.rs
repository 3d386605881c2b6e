//! Synthetic mini-speech: each phone is a distinct harmonic template, each
//! speaker a fixed multiplicative frequency shift. Emits audio, gold
//! alignments at 100 Hz, ABX items, lexical word/non-word pairs, and
//! grammatical/ungrammatical sentence pairs from a toy bigram grammar.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::manifest::{Manifest, ManifestEntry};
use crate::wav::write_wav;

pub const FRAME_SAMPLES: usize = 160; // 100 Hz frames at 16 kHz

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SynthSpec {
    /// Phone inventory size.
    pub phones: usize,
    /// Speakers, realized as multiplicative frequency shifts.
    pub speakers: usize,
    /// Target amount of training audio, in seconds.
    pub train_seconds: f64,
    /// Phones per training utterance (inclusive range).
    pub utterance_phones: (usize, usize),
    /// Phone duration in frames (inclusive range).
    pub phone_frames: (usize, usize),
    /// Single-phone ABX items per (phone, speaker).
    pub abx_items_per_cell: usize,
    /// Lexicon size; pairs are drawn word x non-word.
    pub lexicon_words: usize,
    /// Word/non-word pairs in the lexical set.
    pub lexical_pairs: usize,
    /// Sentence pairs in the syntactic set.
    pub syntactic_pairs: usize,
    /// Phones per sentence stimulus.
    pub sentence_phones: usize,
    /// Word pairs in the similarity set.
    pub simi_pairs: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            phones: 8,
            speakers: 4,
            train_seconds: 1200.0,
            // long phones keep boundary frames (smeared by the encoder's
            // receptive field) a small fraction of each phone's frames
            utterance_phones: (8, 14),
            phone_frames: (10, 20),
            abx_items_per_cell: 4,
            lexicon_words: 56,
            lexical_pairs: 600,
            syntactic_pairs: 600,
            sentence_phones: 8,
            simi_pairs: 120,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.phones < 2 {
            return Err(PipelineError::Config("phone inventory must be >= 2".into()));
        }
        if self.phone_frames.0 < 3 {
            return Err(PipelineError::Config(
                "phone duration must be >= 3 frames to survive downsampling".into(),
            ));
        }
        if self.phone_frames.0 > self.phone_frames.1 || self.utterance_phones.0 > self.utterance_phones.1
        {
            return Err(PipelineError::Config("empty duration range".into()));
        }
        if self.speakers == 0 {
            return Err(PipelineError::Config("need at least one speaker".into()));
        }
        Ok(())
    }
}

/// Legal bigram transitions of the toy grammar: from phone p, the successor
/// must be one of {p+1, p+3, p+5} mod inventory.
pub fn legal_next(phones: usize, p: usize) -> [usize; 3] {
    [(p + 1) % phones, (p + 3) % phones, (p + 5) % phones]
}

pub fn is_legal_transition(phones: usize, a: usize, b: usize) -> bool {
    legal_next(phones, a).contains(&b)
}

/// Harmonic template of a phone under a speaker's frequency shift. Pitch
/// carries the speaker; the phone lives in the spectral envelope (each phone
/// concentrates energy on its own harmonic), so phone identity survives the
/// multiplicative shift.
fn phone_wave(
    phones: usize,
    phone: usize,
    speaker_shift: f64,
    n_samples: usize,
    _phase0: f64,
) -> Vec<f64> {
    let f0 = 150.0 * speaker_shift;
    let n_harmonics = (phones + 1).max(5);
    // one windowed frame template, tiled: every frame restarts at zero
    // phase, so the waveform is strictly frame-periodic and frames of the
    // same phone line up exactly regardless of duration or speaker drift
    let mut template = vec![0.0; FRAME_SAMPLES];
    for h in 1..=n_harmonics {
        // dominant harmonic h = phone+1, with a floor on the rest so the
        // harmonic stack still reveals the pitch
        let amp = if h == phone + 1 { 1.0 } else { 0.12 };
        let w = 2.0 * std::f64::consts::PI * f0 * h as f64 / crate::wav::SAMPLE_RATE as f64;
        for (i, o) in template.iter_mut().enumerate() {
            *o += amp * (w * i as f64).sin();
        }
    }
    // raised-cosine fades at the template edges remove boundary clicks
    let ramp = 8;
    for i in 0..ramp {
        let g = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos();
        template[i] *= g;
        template[FRAME_SAMPLES - 1 - i] *= g;
    }
    let peak = template
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-9);
    for o in &mut template {
        *o *= 0.6 / peak;
    }
    (0..n_samples).map(|i| template[i % FRAME_SAMPLES]).collect()
}

/// Shifts span 0.96..1.04: wide enough that every speaker sounds distinct,
/// narrow enough that one phone's dominant harmonic never crosses its
/// neighbor's (adjacent dominants are >= 9/8 apart; 1.04/0.96 < 9/8).
fn speaker_shift(speakers: usize, s: usize) -> f64 {
    0.96 + 0.08 * s as f64 / (speakers.max(2) - 1) as f64
}

/// Per-utterance pitch jitter (about +-0.5%): items of the same speaker
/// still differ, so evaluation does not degenerate into exact matching.
fn pitch_jitter(rng: &mut ChaCha8Rng) -> f64 {
    1.0 + 0.01 * (rng.gen::<f64>() - 0.5)
}

/// Renders a phone string; `fixed_frames` pins every phone's duration (used
/// for evaluation stimuli so paired items have matched lengths), otherwise
/// durations are drawn from the configured range. Returns samples and the
/// per-frame gold labels.
fn render(
    spec: &SynthSpec,
    phones: &[usize],
    speaker: usize,
    fixed_frames: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<usize>) {
    let shift = speaker_shift(spec.speakers, speaker) * pitch_jitter(rng);
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for &p in phones {
        let frames = fixed_frames
            .unwrap_or_else(|| rng.gen_range(spec.phone_frames.0..=spec.phone_frames.1));
        samples.extend(phone_wave(spec.phones, p, shift, frames * FRAME_SAMPLES, 0.0));
        labels.extend(std::iter::repeat(p).take(frames));
    }
    (samples, labels)
}

fn grammar_walk(spec: &SynthSpec, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let mut p = rng.gen_range(0..spec.phones);
    out.push(p);
    for _ in 1..len {
        let next = legal_next(spec.phones, p);
        p = next[rng.gen_range(0..next.len())];
        out.push(p);
    }
    out
}

/// A phone string in which every transition violates the grammar; phones
/// never repeat so duration collapsing cannot hide the violations.
fn illegal_walk(spec: &SynthSpec, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let mut p = rng.gen_range(0..spec.phones);
    out.push(p);
    for _ in 1..len {
        let bad: Vec<usize> = (0..spec.phones)
            .filter(|&c| c != p && !is_legal_transition(spec.phones, p, c))
            .collect();
        p = bad[rng.gen_range(0..bad.len())];
        out.push(p);
    }
    out
}

/// Mutates one transition of a legal walk into an illegal one.
fn break_grammar(spec: &SynthSpec, walk: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = walk.to_vec();
    for _ in 0..100 {
        let i = rng.gen_range(1..out.len());
        let cand = rng.gen_range(0..spec.phones);
        if !is_legal_transition(spec.phones, out[i - 1], cand) {
            out[i] = cand;
            return out;
        }
    }
    // inventory so permissive that no illegal successor was found
    out
}

pub struct SynthOutput {
    pub train: Manifest,
    /// Subset of `train` used to fit the clustering model.
    pub fit: Manifest,
    pub abx: Manifest,
    pub stimuli: Manifest,
    pub out_dir: PathBuf,
}

fn write_alignment(path: &Path, labels: &[usize]) -> Result<()> {
    let text: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
    fs::write(path, text.join(" "))?;
    Ok(())
}

pub fn read_alignment(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    text.split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| PipelineError::Manifest(format!("bad alignment token `{t}`")))
        })
        .collect()
}

/// Generates the corpus under `out_dir`. Same spec -> byte-identical output.
pub fn generate_synth(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    let audio = out_dir.join("audio");
    let align = out_dir.join("align");
    fs::create_dir_all(&audio)?;
    fs::create_dir_all(&align)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x73796e74);

    // ---- training utterances ----
    let mut train_entries = Vec::new();
    let mut seconds = 0.0;
    let mut idx = 0usize;
    while seconds < spec.train_seconds {
        let speaker = idx % spec.speakers;
        let n_phones = rng.gen_range(spec.utterance_phones.0..=spec.utterance_phones.1);
        let phones = grammar_walk(spec, n_phones, &mut rng);
        let (samples, labels) = render(spec, &phones, speaker, None, &mut rng);
        let utt = format!("train-{idx:05}");
        let wav_path = audio.join(format!("{utt}.wav"));
        let align_path = align.join(format!("{utt}.txt"));
        write_wav(&wav_path, &samples)?;
        write_alignment(&align_path, &labels)?;
        seconds += samples.len() as f64 / crate::wav::SAMPLE_RATE as f64;
        train_entries.push(ManifestEntry {
            utt,
            audio: wav_path,
            speaker: format!("spk{speaker}"),
            alignment: Some(align_path),
        });
        idx += 1;
    }
    let train = Manifest::new(train_entries)?;
    // every 5th utterance fits the clustering model
    let fit = Manifest::new(
        train
            .entries
            .iter()
            .step_by(5)
            .cloned()
            .collect::<Vec<_>>(),
    )?;

    // ---- ABX items: one phone per item ----
    let mut abx_entries = Vec::new();
    let mut abx_lines = String::new();
    for p in 0..spec.phones {
        for s in 0..spec.speakers {
            for i in 0..spec.abx_items_per_cell {
                let utt = format!("abx-p{p}-s{s}-{i}");
                let frames = rng.gen_range(15..=25);
                let mut samples = phone_wave(
                    spec.phones,
                    p,
                    speaker_shift(spec.speakers, s) * pitch_jitter(&mut rng),
                    frames * FRAME_SAMPLES,
                    0.0,
                );
                // mild amplitude jitter so items within a cell differ
                let g = 0.9 + 0.2 * rng.gen::<f64>();
                samples.iter_mut().for_each(|v| *v *= g);
                let wav_path = audio.join(format!("{utt}.wav"));
                write_wav(&wav_path, &samples)?;
                let align_path = align.join(format!("{utt}.txt"));
                write_alignment(&align_path, &vec![p; frames])?;
                abx_lines.push_str(&format!("{utt}\tp{p}\tspk{s}\n"));
                abx_entries.push(ManifestEntry {
                    utt,
                    audio: wav_path,
                    speaker: format!("spk{s}"),
                    alignment: Some(align_path),
                });
            }
        }
    }
    let abx = Manifest::new(abx_entries)?;
    fs::write(out_dir.join("abx_items.tsv"), abx_lines)?;

    // ---- lexicon: legal 3-phone words, illegal non-words ----
    let mut words: BTreeSet<Vec<usize>> = BTreeSet::new();
    while words.len() < spec.lexicon_words {
        words.insert(grammar_walk(spec, 3, &mut rng));
    }
    let mut nonwords: BTreeSet<Vec<usize>> = BTreeSet::new();
    while nonwords.len() < spec.lexicon_words {
        nonwords.insert(illegal_walk(spec, 3, &mut rng));
    }
    let words: Vec<Vec<usize>> = words.into_iter().collect();
    let nonwords: Vec<Vec<usize>> = nonwords.into_iter().collect();

    let mut stim_entries = Vec::new();
    let render_stimulus =
        |name: &str, phones: &[usize], speaker: usize, rng: &mut ChaCha8Rng, entries: &mut Vec<ManifestEntry>| -> Result<()> {
            let mid_frames = (spec.phone_frames.0 + spec.phone_frames.1) / 2;
            let (samples, _labels) = render(spec, phones, speaker, Some(mid_frames), rng);
            let wav_path = audio.join(format!("{name}.wav"));
            write_wav(&wav_path, &samples)?;
            entries.push(ManifestEntry {
                utt: name.to_string(),
                audio: wav_path,
                speaker: format!("spk{speaker}"),
                alignment: None,
            });
            Ok(())
        };
    for (i, w) in words.iter().enumerate() {
        render_stimulus(&format!("word-{i:03}"), w, i % spec.speakers, &mut rng, &mut stim_entries)?;
    }
    for (i, w) in nonwords.iter().enumerate() {
        render_stimulus(&format!("nonword-{i:03}"), w, i % spec.speakers, &mut rng, &mut stim_entries)?;
    }

    // lexical pairs: word x non-word combinations spoken by the same voice,
    // so the comparison isolates well-formedness from speaker effects
    let mut lex_combos: Vec<(usize, usize)> = Vec::new();
    for wi in 0..words.len() {
        for ni in 0..nonwords.len() {
            if wi % spec.speakers == ni % spec.speakers {
                lex_combos.push((wi, ni));
            }
        }
    }
    lex_combos.shuffle(&mut rng);
    let mut lex_lines = String::new();
    for (pair_idx, (wi, ni)) in lex_combos.iter().take(spec.lexical_pairs).enumerate() {
        lex_lines.push_str(&format!("lex-{pair_idx:04}\tword-{wi:03}\tnonword-{ni:03}\n"));
    }
    fs::write(out_dir.join("pairs_lexical.tsv"), lex_lines)?;

    // ---- syntactic sentences ----
    // 2*sqrt(pairs) sentences per side leaves enough same-voice combinations
    let n_sent = (2.0 * (spec.syntactic_pairs as f64).sqrt()).ceil() as usize;
    let n_sent = n_sent.max(8);
    for i in 0..n_sent {
        let good = grammar_walk(spec, spec.sentence_phones, &mut rng);
        render_stimulus(&format!("gram-{i:03}"), &good, i % spec.speakers, &mut rng, &mut stim_entries)?;
        let bad = break_grammar(spec, &grammar_walk(spec, spec.sentence_phones, &mut rng), &mut rng);
        render_stimulus(&format!("ungram-{i:03}"), &bad, i % spec.speakers, &mut rng, &mut stim_entries)?;
    }
    let mut syn_combos: Vec<(usize, usize)> = Vec::new();
    for gi in 0..n_sent {
        for ui in 0..n_sent {
            if gi % spec.speakers == ui % spec.speakers {
                syn_combos.push((gi, ui));
            }
        }
    }
    syn_combos.shuffle(&mut rng);
    let mut syn_lines = String::new();
    for (pair_idx, (gi, ui)) in syn_combos.iter().take(spec.syntactic_pairs).enumerate() {
        syn_lines.push_str(&format!("syn-{pair_idx:04}\tgram-{gi:03}\tungram-{ui:03}\n"));
    }
    fs::write(out_dir.join("pairs_syntactic.tsv"), syn_lines)?;

    // ---- similarity set: word pairs with phone-overlap "human" scores ----
    // shared phone inventory regardless of position, since listeners (and
    // pooled embeddings) judge words by their sound content, not alignment
    let bag_overlap = |a: &[usize], b: &[usize]| -> usize {
        let mut remaining = b.to_vec();
        a.iter()
            .filter(|x| {
                remaining
                    .iter()
                    .position(|y| y == *x)
                    .map(|i| remaining.swap_remove(i))
                    .is_some()
            })
            .count()
    };
    let mut simi_lines = String::new();
    for i in 0..spec.simi_pairs {
        let a = rng.gen_range(0..words.len());
        let mut b = rng.gen_range(0..words.len());
        if b == a {
            b = (b + 1) % words.len();
        }
        let overlap = bag_overlap(&words[a], &words[b]);
        let human = overlap as f64 + 0.1 * ((a * 31 + b * 17) % 10) as f64 / 10.0;
        simi_lines.push_str(&format!("simi-{i:03}\tword-{a:03}\tword-{b:03}\t{human:.4}\n"));
    }
    fs::write(out_dir.join("simi_gold.tsv"), simi_lines)?;

    let stimuli = Manifest::new(stim_entries)?;
    train.save(&out_dir.join("manifest_train.tsv"))?;
    fit.save(&out_dir.join("manifest_fit.tsv"))?;
    abx.save(&out_dir.join("manifest_abx.tsv"))?;
    stimuli.save(&out_dir.join("manifest_stimuli.tsv"))?;
    fs::write(
        out_dir.join("spec.toml"),
        toml::to_string_pretty(spec).map_err(|e| PipelineError::Config(e.to_string()))?,
    )?;
    Ok(SynthOutput {
        train,
        fit,
        abx,
        stimuli,
        out_dir: out_dir.to_path_buf(),
    })
}
