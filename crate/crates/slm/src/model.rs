//! The masked-only Transformer encoder: token + learned position embeddings,
//! bidirectional self-attention blocks, and a linear output head over the
//! vocabulary.

use std::rc::Rc;

use nn_core::{
    dropout, Activation, Bound, Checkpoint, Ffn, Graph, HasParams, Initializer, LayerNorm, Linear,
    Mhsa, Mode, NodeId, Tensor,
};
use rand_chacha::ChaCha8Rng;

use crate::config::SlmConfig;
use crate::error::{Result, SlmError};

struct EncoderBlock {
    attn: Mhsa,
    ln1: LayerNorm,
    ffn: Ffn,
    ln2: LayerNorm,
}

impl EncoderBlock {
    fn new(name: &str, cfg: &SlmConfig, init: &mut Initializer) -> Result<Self> {
        Ok(EncoderBlock {
            attn: Mhsa::new(&format!("{name}.attn"), cfg.hidden, cfg.heads, false, init)?,
            ln1: LayerNorm::new(&format!("{name}.ln1"), cfg.hidden, init)?,
            ffn: Ffn::new(&format!("{name}.ffn"), cfg.hidden, cfg.ffn, Activation::Relu, init)?,
            ln2: LayerNorm::new(&format!("{name}.ln2"), cfg.hidden, init)?,
        })
    }

    fn forward(
        &self,
        g: &mut Graph,
        bound: &mut Bound,
        x: NodeId,
        rate: f64,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        let a = self.attn.forward(g, bound, x);
        let a = dropout(g, a, rate, mode, rng);
        let x = g.add(x, a);
        let x = self.ln1.forward(g, bound, x);
        let f = self.ffn.forward(g, bound, x);
        let f = dropout(g, f, rate, mode, rng);
        let x = g.add(x, f);
        self.ln2.forward(g, bound, x)
    }
}

impl HasParams for EncoderBlock {
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

pub struct SlmModel {
    pub config: SlmConfig,
    embed: Tensor,
    pos: Tensor,
    blocks: Vec<EncoderBlock>,
    out: Linear,
}

impl SlmModel {
    pub fn new(config: SlmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Initializer::new(seed);
        let v = config.vocab();
        let d = config.hidden;
        let embed = init.uniform(vec![v, d], d);
        let pos = init.uniform(vec![config.max_len, d], d);
        let blocks = (0..config.layers)
            .map(|l| EncoderBlock::new(&format!("slm.{l}"), &config, &mut init))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Linear::new("slm.out", d, v, &mut init)?;
        // small output scale keeps untrained logits near uniform, so the
        // initial MLM loss starts at ln(vocab)
        out.w.scale_assign(0.1);
        Ok(SlmModel {
            config,
            embed,
            pos,
            blocks,
            out,
        })
    }

    /// Validates every token against the full vocabulary.
    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() > self.config.max_len {
            return Err(SlmError::TooLong {
                len: tokens.len(),
                max: self.config.max_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab()) {
            return Err(SlmError::UnknownUnit {
                unit: bad,
                k: self.config.k,
            });
        }
        Ok(())
    }

    /// Logits over the vocabulary, one row per token.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &mut Bound,
        tokens: &[usize],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        self.check_tokens(tokens)?;
        if tokens.is_empty() {
            return Err(SlmError::Invalid("empty token sequence".into()));
        }
        let embed = bound.bind(g, "slm.embed", &self.embed);
        let pos = bound.bind(g, "slm.pos", &self.pos);
        let tok_rows = g.gather_rows(embed, Rc::new(tokens.to_vec()));
        let pos_rows = g.gather_rows(pos, Rc::new((0..tokens.len()).collect()));
        let mut x = g.add(tok_rows, pos_rows);
        for block in &self.blocks {
            x = block.forward(g, bound, x, self.config.dropout, mode, rng);
        }
        Ok(self.out.forward(g, bound, x))
    }

    /// Deterministic eval-mode logits as a plain tensor.
    pub fn logits(&self, tokens: &[usize]) -> Result<Tensor> {
        use rand::SeedableRng;
        let mut g = Graph::new();
        let mut bound = Bound::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let node = self.forward(&mut g, &mut bound, tokens, Mode::Eval, &mut rng)?;
        Ok(g.value(node).clone())
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

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = SlmConfig::from_descriptor(&ckpt.descriptor)?;
        let mut model = SlmModel::new(config, 0)?;
        model.load_params(&ckpt.params)?;
        Ok(model)
    }
}

impl HasParams for SlmModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = vec![
            ("slm.embed".to_string(), &self.embed),
            ("slm.pos".to_string(), &self.pos),
        ];
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.extend(self.out.params());
        p
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p = vec![
            ("slm.embed".to_string(), &mut self.embed),
            ("slm.pos".to_string(), &mut self.pos),
        ];
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p.extend(self.out.params_mut());
        p
    }
}
