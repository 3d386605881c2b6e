//! Masked-LM configuration: encoder shape, vocabulary layout, and the span
//! masking policy.

use crate::error::{Result, SlmError};

#[derive(Debug, Clone, PartialEq)]
pub struct SlmConfig {
    /// Discrete unit inventory size; unit IDs are 0..k.
    pub k: usize,
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    /// Maximum sequence length including BOS/EOS, for the learned positions.
    pub max_len: usize,
    /// Fraction of positions masked in expectation.
    pub mask_rate: f64,
    /// Mean masked-span length in frames.
    pub mean_span: f64,
    pub dropout: f64,
}

impl SlmConfig {
    /// Reference shape: 8 layers, 8 heads, hidden 512, FFN 2048.
    pub fn reference(k: usize) -> Self {
        SlmConfig {
            k,
            layers: 8,
            heads: 8,
            hidden: 512,
            ffn: 2048,
            max_len: 1024,
            mask_rate: 0.5,
            mean_span: 10.0,
            dropout: 0.1,
        }
    }

    /// Shape small enough for single-core CPU runs.
    pub fn desk(k: usize) -> Self {
        SlmConfig {
            k,
            layers: 2,
            heads: 4,
            hidden: 32,
            ffn: 64,
            max_len: 640,
            mask_rate: 0.5,
            // the reference span length is calibrated for frame-rate unit
            // streams; desk runs train on repeat-collapsed sequences where
            // one unit covers ~3 frames, so the equivalent span is shorter
            mean_span: 3.0,
            dropout: 0.1,
        }
    }

    /// Vocabulary = k units + MASK, PAD, BOS, EOS.
    pub fn vocab(&self) -> usize {
        self.k + 4
    }

    pub fn mask_id(&self) -> usize {
        self.k
    }

    pub fn pad_id(&self) -> usize {
        self.k + 1
    }

    pub fn bos_id(&self) -> usize {
        self.k + 2
    }

    pub fn eos_id(&self) -> usize {
        self.k + 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(SlmError::Invalid("unit inventory must be >= 2".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(SlmError::Invalid(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(SlmError::Invalid(format!(
                "mask rate {} outside (0, 1)",
                self.mask_rate
            )));
        }
        if self.mean_span < 1.0 {
            return Err(SlmError::Invalid("mean span must be >= 1".into()));
        }
        Ok(())
    }

    pub fn descriptor(&self) -> String {
        format!(
            "slm-config-v1\nk={}\nlayers={}\nheads={}\nhidden={}\nffn={}\nmax_len={}\nmask_rate={}\nmean_span={}\ndropout={}",
            self.k,
            self.layers,
            self.heads,
            self.hidden,
            self.ffn,
            self.max_len,
            self.mask_rate,
            self.mean_span,
            self.dropout
        )
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("slm-config-v1") {
            return Err(SlmError::Invalid("bad model descriptor".into()));
        }
        let mut cfg = SlmConfig::desk(2);
        for line in lines {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SlmError::Invalid(format!("bad descriptor line `{line}`")))?;
            let bad = || SlmError::Invalid(format!("bad value in `{line}`"));
            match key {
                "k" => cfg.k = value.parse().map_err(|_| bad())?,
                "layers" => cfg.layers = value.parse().map_err(|_| bad())?,
                "heads" => cfg.heads = value.parse().map_err(|_| bad())?,
                "hidden" => cfg.hidden = value.parse().map_err(|_| bad())?,
                "ffn" => cfg.ffn = value.parse().map_err(|_| bad())?,
                "max_len" => cfg.max_len = value.parse().map_err(|_| bad())?,
                "mask_rate" => cfg.mask_rate = value.parse().map_err(|_| bad())?,
                "mean_span" => cfg.mean_span = value.parse().map_err(|_| bad())?,
                "dropout" => cfg.dropout = value.parse().map_err(|_| bad())?,
                other => return Err(SlmError::Invalid(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
