//! End-to-end pipeline for the desk-scale spoken-language-modeling stack:
//! synthetic corpus generation, contrastive pretraining, clustering into
//! discrete units, unit language modeling, and zero-shot evaluation.

pub mod compare;
pub mod config;
pub mod error;
pub mod manifest;
pub mod run;
pub mod stages;
pub mod synth;
pub mod wav;

pub use compare::{compare_runs, Comparison, MetricDelta};
pub use config::{
    CpcStageConfig, DcStageConfig, KmeansStageConfig, RunConfig, SlmStageConfig, BASELINE_STAGES,
    DEEP_CLUSTER_STAGES, OUT_ROOT_ENV,
};
pub use error::{PipelineError, Result};
pub use manifest::{Manifest, ManifestEntry};
pub use run::{run_pipeline, RunOutcome};
pub use stages::{collapse_repeats, execute_stage, RunPaths};
pub use synth::{generate_synth, read_alignment, SynthOutput, SynthSpec, FRAME_SAMPLES};
pub use wav::{read_wav, write_wav, SAMPLE_RATE};
