//! The CPC acoustic model: conv encoder g_enc, LSTM aggregator g_ar, and the
//! shared Transformer/Conformer prediction trunk with per-step output maps.

use nn_core::{
    dropout, Activation, Bound, Checkpoint, ChannelNorm, Conv1d, ConvModule, Ffn, Graph,
    HasParams, Initializer, LayerNorm, Linear, Lstm, Mhsa, Mode, NnError, NodeId, Result, Tensor,
};
use rand_chacha::ChaCha8Rng;

use crate::config::{CpcConfig, HeadKind};

/// Encoder + aggregator; shared between the CPC model and the deep-cluster
/// classifier, which trains the same architecture with a different head.
pub struct CpcBase {
    pub encoder_channels: usize,
    convs: Vec<Conv1d>,
    norms: Vec<ChannelNorm>,
    pub aggregator: Lstm,
    min_samples: usize,
}

impl CpcBase {
    pub fn new(cfg: &CpcConfig, init: &mut Initializer) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut c_in = 1;
        for (i, ((&k, &s), &p)) in cfg
            .encoder_kernels
            .iter()
            .zip(&cfg.encoder_strides)
            .zip(&cfg.encoder_paddings)
            .enumerate()
        {
            convs.push(Conv1d::new(
                &format!("genc.conv{i}"),
                c_in,
                cfg.encoder_channels,
                k,
                s,
                p,
                p,
                init,
            )?);
            norms.push(ChannelNorm::new(
                &format!("genc.norm{i}"),
                cfg.encoder_channels,
                init,
            )?);
            c_in = cfg.encoder_channels;
        }
        let aggregator = Lstm::new("gar", cfg.encoder_channels, cfg.ar_hidden, cfg.ar_layers, init)?;
        Ok(CpcBase {
            encoder_channels: cfg.encoder_channels,
            convs,
            norms,
            aggregator,
            min_samples: cfg.min_samples(),
        })
    }

    /// Frames produced for a waveform of `samples` samples.
    pub fn out_frames(&self, samples: usize) -> Result<usize> {
        if samples < self.min_samples {
            return Err(NnError::InputTooShort {
                len: samples,
                min: self.min_samples,
                context: Some("encoder needs at least one output frame".into()),
            });
        }
        let mut t = samples;
        for conv in &self.convs {
            t = conv.out_len(t)?;
        }
        Ok(t)
    }

    /// g_enc: waveform -> z (T x channels). Channel-norm and ReLU after each conv.
    pub fn encode(&self, g: &mut Graph, bound: &mut Bound, waveform: &[f64]) -> Result<NodeId> {
        self.out_frames(waveform.len())?;
        let mut x = g.input(Tensor::new(vec![waveform.len(), 1], waveform.to_vec()).unwrap());
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            x = conv.forward(g, bound, x)?;
            x = norm.forward(g, bound, x);
            x = g.relu(x);
        }
        Ok(x)
    }

    /// g_ar: z -> c, causal by construction.
    pub fn aggregate(&self, g: &mut Graph, bound: &mut Bound, z: NodeId) -> NodeId {
        self.aggregator.forward(g, bound, z)
    }
}

impl HasParams for CpcBase {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = Vec::new();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            p.extend(conv.params());
            p.extend(norm.params());
        }
        p.extend(self.aggregator.params());
        p
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p = Vec::new();
        for (conv, norm) in self.convs.iter_mut().zip(&mut self.norms) {
            p.extend(conv.params_mut());
            p.extend(norm.params_mut());
        }
        p.extend(self.aggregator.params_mut());
        p
    }
}

/// Submodule outputs of one Conformer pass, exposed so the four-equation
/// decomposition can be recomputed externally.
pub struct ConformerTrace {
    pub input: NodeId,
    pub ffn1_out: NodeId,
    pub after_ffn1: NodeId,
    pub mhsa_out: NodeId,
    pub after_mhsa: NodeId,
    pub conv_out: NodeId,
    pub after_conv: NodeId,
    pub ffn2_out: NodeId,
    pub output: NodeId,
}

pub struct ConformerBlock {
    pub ffn1: Ffn,
    pub attn: Mhsa,
    pub conv: ConvModule,
    pub ffn2: Ffn,
    pub ln: LayerNorm,
    pub dropout_rate: f64,
}

impl ConformerBlock {
    pub fn new(
        name: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
        conv_kernel: usize,
        dropout_rate: f64,
        init: &mut Initializer,
    ) -> Result<Self> {
        Ok(ConformerBlock {
            ffn1: Ffn::new(&format!("{name}.ffn1"), d, ffn_hidden, Activation::Swish, init)?,
            attn: Mhsa::new(&format!("{name}.attn"), d, heads, true, init)?,
            conv: ConvModule::new(&format!("{name}.conv"), d, conv_kernel, init)?,
            ffn2: Ffn::new(&format!("{name}.ffn2"), d, ffn_hidden, Activation::Swish, init)?,
            ln: LayerNorm::new(&format!("{name}.ln"), d, init)?,
            dropout_rate,
        })
    }

    /// c~ = c + 1/2 FFN(c); c' = c~ + MHSA(c~); c'' = c' + Conv(c');
    /// y = LN(c'' + 1/2 FFN(c'')).
    pub fn forward_detailed(
        &self,
        g: &mut Graph,
        bound: &mut Bound,
        c: NodeId,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> ConformerTrace {
        let ffn1_out = self.ffn1.forward(g, bound, c);
        let ffn1_out = dropout(g, ffn1_out, self.dropout_rate, mode, rng);
        let half1 = g.scale(ffn1_out, 0.5);
        let after_ffn1 = g.add(c, half1);

        let mhsa_out = self.attn.forward(g, bound, after_ffn1);
        let mhsa_out = dropout(g, mhsa_out, self.dropout_rate, mode, rng);
        let after_mhsa = g.add(after_ffn1, mhsa_out);

        let conv_out = self.conv.forward(g, bound, after_mhsa);
        let conv_out = dropout(g, conv_out, self.dropout_rate, mode, rng);
        let after_conv = g.add(after_mhsa, conv_out);

        let ffn2_out = self.ffn2.forward(g, bound, after_conv);
        let ffn2_out = dropout(g, ffn2_out, self.dropout_rate, mode, rng);
        let half2 = g.scale(ffn2_out, 0.5);
        let pre_ln = g.add(after_conv, half2);
        let output = self.ln.forward(g, bound, pre_ln);

        ConformerTrace {
            input: c,
            ffn1_out,
            after_ffn1,
            mhsa_out,
            after_mhsa,
            conv_out,
            after_conv,
            ffn2_out,
            output,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &mut Bound,
        c: NodeId,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        self.forward_detailed(g, bound, c, mode, rng).output
    }
}

impl HasParams for ConformerBlock {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.ffn1.params();
        p.extend(self.attn.params());
        p.extend(self.conv.params());
        p.extend(self.ffn2.params());
        p.extend(self.ln.params());
        p
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p = self.ffn1.params_mut();
        p.extend(self.attn.params_mut());
        p.extend(self.conv.params_mut());
        p.extend(self.ffn2.params_mut());
        p.extend(self.ln.params_mut());
        p
    }
}

/// Post-norm Transformer encoder block with causal attention.
pub struct TransformerBlock {
    pub attn: Mhsa,
    pub ln1: LayerNorm,
    pub ffn: Ffn,
    pub ln2: LayerNorm,
    pub dropout_rate: f64,
}

impl TransformerBlock {
    pub fn new(
        name: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
        dropout_rate: f64,
        causal: bool,
        init: &mut Initializer,
    ) -> Result<Self> {
        Ok(TransformerBlock {
            attn: Mhsa::new(&format!("{name}.attn"), d, heads, causal, init)?,
            ln1: LayerNorm::new(&format!("{name}.ln1"), d, init)?,
            ffn: Ffn::new(&format!("{name}.ffn"), d, ffn_hidden, Activation::Relu, init)?,
            ln2: LayerNorm::new(&format!("{name}.ln2"), d, init)?,
            dropout_rate,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &mut Bound,
        x: NodeId,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        let a = self.attn.forward(g, bound, x);
        let a = dropout(g, a, self.dropout_rate, mode, rng);
        let x = g.add(x, a);
        let x = self.ln1.forward(g, bound, x);
        let f = self.ffn.forward(g, bound, x);
        let f = dropout(g, f, self.dropout_rate, mode, rng);
        let x = g.add(x, f);
        self.ln2.forward(g, bound, x)
    }
}

impl HasParams for TransformerBlock {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.attn.params();
        p.extend(self.ln1.params());
        p.extend(self.ffn.params());
        p.extend(self.ln2.params());
        p
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p = self.attn.params_mut();
        p.extend(self.ln1.params_mut());
        p.extend(self.ffn.params_mut());
        p.extend(self.ln2.params_mut());
        p
    }
}

pub enum HeadBlock {
    Transformer(TransformerBlock),
    Conformer(ConformerBlock),
}

/// The h_k family: one shared 1-layer trunk over c followed by K separate
/// linear maps onto the embedding space of z.
pub struct PredictionHead {
    pub kind: HeadKind,
    /// Present only when the aggregator width differs from the head width.
    pub in_proj: Option<Linear>,
    pub block: HeadBlock,
    pub out_maps: Vec<Linear>,
    pub output_dropout: f64,
}

impl PredictionHead {
    pub fn new(cfg: &CpcConfig, init: &mut Initializer) -> Result<Self> {
        let in_proj = (cfg.ar_hidden != cfg.head_hidden)
            .then(|| Linear::new("head.proj", cfg.ar_hidden, cfg.head_hidden, init))
            .transpose()?;
        let block = match cfg.head_kind {
            HeadKind::Transformer => HeadBlock::Transformer(TransformerBlock::new(
                "head",
                cfg.head_hidden,
                cfg.head_heads,
                cfg.head_ffn,
                cfg.head_dropout,
                true,
                init,
            )?),
            HeadKind::Conformer => HeadBlock::Conformer(ConformerBlock::new(
                "head",
                cfg.head_hidden,
                cfg.head_heads,
                cfg.head_ffn,
                cfg.conformer_kernel,
                cfg.head_dropout,
                init,
            )?),
        };
        let out_maps = (0..cfg.prediction_steps)
            .map(|k| {
                let mut m =
                    Linear::new(&format!("pred.{k}"), cfg.head_hidden, cfg.encoder_channels, init)?;
                // small output scale keeps untrained contrastive scores near
                // zero, so the initial loss starts at ln(candidate count)
                m.w.scale_assign(0.1);
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictionHead {
            kind: cfg.head_kind,
            in_proj,
            block,
            out_maps,
            output_dropout: cfg.output_dropout,
        })
    }

    pub fn horizon(&self) -> usize {
        self.out_maps.len()
    }

    /// Shared trunk output for context c.
    pub fn trunk(
        &self,
        g: &mut Graph,
        bound: &mut Bound,
        c: NodeId,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        let x = match &self.in_proj {
            Some(p) => p.forward(g, bound, c),
            None => c,
        };
        match &self.block {
            HeadBlock::Transformer(b) => b.forward(g, bound, x, mode, rng),
            HeadBlock::Conformer(b) => b.forward(g, bound, x, mode, rng),
        }
    }

    /// h_k applied to a precomputed trunk; k is 1-based, 1 <= k <= K.
    pub fn predict_from_trunk(
        &self,
        g: &mut Graph,
        bound: &mut Bound,
        trunk: NodeId,
        k: usize,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        if k == 0 || k > self.out_maps.len() {
            return Err(NnError::InvalidConfig(format!(
                "prediction step {k} outside 1..={}",
                self.out_maps.len()
            )));
        }
        let y = self.out_maps[k - 1].forward(g, bound, trunk);
        Ok(dropout(g, y, self.output_dropout, mode, rng))
    }
}

impl HasParams for PredictionHead {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = Vec::new();
        if let Some(proj) = &self.in_proj {
            p.extend(proj.params());
        }
        match &self.block {
            HeadBlock::Transformer(b) => p.extend(b.params()),
            HeadBlock::Conformer(b) => p.extend(b.params()),
        }
        for m in &self.out_maps {
            p.extend(m.params());
        }
        p
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p = Vec::new();
        if let Some(proj) = &mut self.in_proj {
            p.extend(proj.params_mut());
        }
        match &mut self.block {
            HeadBlock::Transformer(b) => p.extend(b.params_mut()),
            HeadBlock::Conformer(b) => p.extend(b.params_mut()),
        }
        for m in &mut self.out_maps {
            p.extend(m.params_mut());
        }
        p
    }
}

pub struct CpcModel {
    pub config: CpcConfig,
    pub base: CpcBase,
    pub head: PredictionHead,
}

impl CpcModel {
    pub fn new(config: CpcConfig, seed: u64) -> Result<Self> {
        let mut init = Initializer::new(seed);
        let base = CpcBase::new(&config, &mut init)?;
        let head = PredictionHead::new(&config, &mut init)?;
        Ok(CpcModel { config, base, head })
    }

    /// Full forward: waveform -> (z, c, per-k predictions).
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &mut Bound,
        waveform: &[f64],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(NodeId, NodeId, Vec<NodeId>)> {
        let z = self.base.encode(g, bound, waveform)?;
        let c = self.base.aggregate(g, bound, z);
        let trunk = self.head.trunk(g, bound, c, mode, rng);
        let preds = (1..=self.head.horizon())
            .map(|k| self.head.predict_from_trunk(g, bound, trunk, k, mode, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok((z, c, preds))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.config.descriptor(),
            self.params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = CpcConfig::from_descriptor(&ck.descriptor)?;
        let mut model = CpcModel::new(config, 0)?;
        model.load_params(&ck.params)?;
        Ok(model)
    }
}

impl HasParams for CpcModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.base.params();
        p.extend(self.head.params());
        p
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p = self.base.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}
