//! CPC model configuration and its canonical text form (used as the
//! checkpoint architecture descriptor).

use nn_core::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Transformer,
    Conformer,
}

impl HeadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadKind::Transformer => "transformer",
            HeadKind::Conformer => "conformer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(HeadKind::Transformer),
            "conformer" => Ok(HeadKind::Conformer),
            other => Err(NnError::InvalidConfig(format!("unknown head kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpcConfig {
    /// Encoder channel width (the dimension of z).
    pub encoder_channels: usize,
    pub encoder_kernels: Vec<usize>,
    pub encoder_strides: Vec<usize>,
    pub encoder_paddings: Vec<usize>,
    /// Aggregator LSTM depth and hidden size (small: 2 x 256, big: 4 x 512).
    pub ar_layers: usize,
    pub ar_hidden: usize,
    pub head_kind: HeadKind,
    pub head_hidden: usize,
    pub head_heads: usize,
    pub head_ffn: usize,
    pub conformer_kernel: usize,
    /// Prediction horizon K.
    pub prediction_steps: usize,
    /// Negative-set size per position.
    pub negatives: usize,
    /// Dropout inside the prediction block.
    pub head_dropout: f64,
    /// Dropout on prediction outputs before the product with z.
    pub output_dropout: f64,
}

impl CpcConfig {
    /// CPC-small: 2-layer 256-unit LSTM, 512-wide head, K=12, 128 negatives.
    pub fn small(head_kind: HeadKind) -> Self {
        CpcConfig {
            encoder_channels: 256,
            encoder_kernels: vec![10, 8, 4, 4, 4],
            encoder_strides: vec![5, 4, 2, 2, 2],
            encoder_paddings: vec![3, 2, 1, 1, 1],
            ar_layers: 2,
            ar_hidden: 256,
            head_kind,
            head_hidden: 512,
            head_heads: 8,
            head_ffn: 2048,
            conformer_kernel: 30,
            prediction_steps: 12,
            negatives: 128,
            head_dropout: 0.1,
            output_dropout: 0.5,
        }
    }

    /// CPC-big: 4-layer 512-unit LSTM; same head family.
    pub fn big(head_kind: HeadKind) -> Self {
        CpcConfig {
            ar_layers: 4,
            ar_hidden: 512,
            ..CpcConfig::small(head_kind)
        }
    }

    /// Desk-scale configuration for the synthetic corpus: same topology with
    /// reduced widths so the whole pipeline runs on one CPU core.
    pub fn desk(head_kind: HeadKind) -> Self {
        CpcConfig {
            encoder_channels: 24,
            encoder_kernels: vec![10, 8, 4, 4, 4],
            encoder_strides: vec![5, 4, 2, 2, 2],
            encoder_paddings: vec![3, 2, 1, 1, 1],
            ar_layers: 2,
            ar_hidden: 24,
            head_kind,
            head_hidden: 24,
            head_heads: 4,
            head_ffn: 48,
            conformer_kernel: 6,
            prediction_steps: 6,
            negatives: 128,
            head_dropout: 0.1,
            output_dropout: 0.5,
        }
    }

    /// Total encoder downsampling factor (product of strides).
    pub fn downsampling(&self) -> usize {
        self.encoder_strides.iter().product()
    }

    /// Minimum waveform length that yields one encoder frame.
    pub fn min_samples(&self) -> usize {
        self.downsampling()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.encoder_kernels.len();
        if n == 0 || self.encoder_strides.len() != n || self.encoder_paddings.len() != n {
            return Err(NnError::InvalidConfig(
                "encoder kernel/stride/padding schedules must have equal nonzero length".into(),
            ));
        }
        if self.prediction_steps == 0 {
            return Err(NnError::InvalidConfig("prediction horizon K must be >= 1".into()));
        }
        if self.negatives == 0 {
            return Err(NnError::InvalidConfig("negative-set size must be >= 1".into()));
        }
        if self.head_hidden % self.head_heads != 0 {
            return Err(NnError::InvalidConfig(format!(
                "head hidden {} not divisible by {} heads",
                self.head_hidden, self.head_heads
            )));
        }
        for r in [self.head_dropout, self.output_dropout] {
            if !(0.0..1.0).contains(&r) {
                return Err(NnError::InvalidConfig(format!("dropout rate {r} outside [0,1)")));
            }
        }
        Ok(())
    }

    fn join(v: &[usize]) -> String {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }

    fn split(s: &str) -> Result<Vec<usize>> {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| NnError::InvalidConfig(format!("bad integer list `{s}`")))
            })
            .collect()
    }

    /// Canonical key=value text, one field per line, fixed order.
    pub fn descriptor(&self) -> String {
        format!(
            "cpc-config-v1\n\
             encoder_channels={}\n\
             encoder_kernels={}\n\
             encoder_strides={}\n\
             encoder_paddings={}\n\
             ar_layers={}\n\
             ar_hidden={}\n\
             head_kind={}\n\
             head_hidden={}\n\
             head_heads={}\n\
             head_ffn={}\n\
             conformer_kernel={}\n\
             prediction_steps={}\n\
             negatives={}\n\
             head_dropout={}\n\
             output_dropout={}\n",
            self.encoder_channels,
            Self::join(&self.encoder_kernels),
            Self::join(&self.encoder_strides),
            Self::join(&self.encoder_paddings),
            self.ar_layers,
            self.ar_hidden,
            self.head_kind.as_str(),
            self.head_hidden,
            self.head_heads,
            self.head_ffn,
            self.conformer_kernel,
            self.prediction_steps,
            self.negatives,
            self.head_dropout,
            self.output_dropout,
        )
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != "cpc-config-v1" {
            return Err(NnError::InvalidConfig(format!(
                "unexpected descriptor header `{header}`"
            )));
        }
        let mut cfg = CpcConfig::small(HeadKind::Transformer);
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| NnError::InvalidConfig(format!("bad descriptor line `{line}`")))?;
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| NnError::InvalidConfig(format!("bad integer `{v}` for {key}")))
            };
            let parse_f64 = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| NnError::InvalidConfig(format!("bad real `{v}` for {key}")))
            };
            match key {
                "encoder_channels" => cfg.encoder_channels = parse_usize(val)?,
                "encoder_kernels" => cfg.encoder_kernels = Self::split(val)?,
                "encoder_strides" => cfg.encoder_strides = Self::split(val)?,
                "encoder_paddings" => cfg.encoder_paddings = Self::split(val)?,
                "ar_layers" => cfg.ar_layers = parse_usize(val)?,
                "ar_hidden" => cfg.ar_hidden = parse_usize(val)?,
                "head_kind" => cfg.head_kind = HeadKind::parse(val)?,
                "head_hidden" => cfg.head_hidden = parse_usize(val)?,
                "head_heads" => cfg.head_heads = parse_usize(val)?,
                "head_ffn" => cfg.head_ffn = parse_usize(val)?,
                "conformer_kernel" => cfg.conformer_kernel = parse_usize(val)?,
                "prediction_steps" => cfg.prediction_steps = parse_usize(val)?,
                "negatives" => cfg.negatives = parse_usize(val)?,
                "head_dropout" => cfg.head_dropout = parse_f64(val)?,
                "output_dropout" => cfg.output_dropout = parse_f64(val)?,
                other => {
                    return Err(NnError::InvalidConfig(format!(
                        "unknown descriptor key `{other}`"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
