//! Layer primitives used by the acoustic model, the deep-cluster classifier
//! and the spoken LM: conv1d, LSTM, linear, layer/channel norm, multi-headed
//! self-attention, feed-forward, the Conformer convolution module, dropout.
//!
//! Layers own their parameter tensors. A forward pass binds them into a
//! [`Graph`] through a [`Bound`] registry so gradients can be routed back to
//! named parameters after `backward`.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::graph::{Grads, Graph, NodeId};
use crate::init::Initializer;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Swish,
}

pub const LAYERNORM_EPS: f64 = 1e-5;
pub const CHANNELNORM_EPS: f64 = 1e-5;

/// Declarative layer hyperparameters, validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerConfig {
    Conv1d {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad_l: usize,
        pad_r: usize,
    },
    Lstm {
        input: usize,
        hidden: usize,
        layers: usize,
    },
    Linear {
        d_in: usize,
        d_out: usize,
    },
    LayerNorm {
        d: usize,
    },
    Mhsa {
        d: usize,
        heads: usize,
        causal: bool,
    },
    Ffn {
        d: usize,
        hidden: usize,
        activation: Activation,
    },
    ConvModule {
        d: usize,
        kernel: usize,
    },
    Dropout {
        rate: f64,
    },
    ChannelNorm {
        d: usize,
    },
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::InvalidConfig(msg));
        match *self {
            LayerConfig::Conv1d {
                c_in,
                c_out,
                kernel,
                stride,
                ..
            } => {
                if c_in == 0 || c_out == 0 || kernel == 0 {
                    return bad(format!("conv1d sizes must be positive ({c_in},{c_out},{kernel})"));
                }
                if stride == 0 {
                    return bad("conv1d stride must be >= 1".into());
                }
            }
            LayerConfig::Lstm {
                input,
                hidden,
                layers,
            } => {
                if input == 0 || hidden == 0 || layers == 0 {
                    return bad(format!("lstm sizes must be positive ({input},{hidden},{layers})"));
                }
            }
            LayerConfig::Linear { d_in, d_out } => {
                if d_in == 0 || d_out == 0 {
                    return bad(format!("linear sizes must be positive ({d_in},{d_out})"));
                }
            }
            LayerConfig::LayerNorm { d } | LayerConfig::ChannelNorm { d } => {
                if d == 0 {
                    return bad("norm dimension must be positive".into());
                }
            }
            LayerConfig::Mhsa { d, heads, .. } => {
                if d == 0 || heads == 0 {
                    return bad(format!("mhsa sizes must be positive ({d},{heads})"));
                }
                if d % heads != 0 {
                    return bad(format!("mhsa dimension {d} not divisible by {heads} heads"));
                }
            }
            LayerConfig::Ffn { d, hidden, .. } => {
                if d == 0 || hidden == 0 {
                    return bad(format!("ffn sizes must be positive ({d},{hidden})"));
                }
            }
            LayerConfig::ConvModule { d, kernel } => {
                if d == 0 || kernel == 0 {
                    return bad(format!("conv module sizes must be positive ({d},{kernel})"));
                }
            }
            LayerConfig::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return bad(format!("dropout rate {rate} outside [0,1)"));
                }
            }
        }
        Ok(())
    }
}

/// Named parameters reachable from a model root.
pub trait HasParams {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn load_params(&mut self, source: &[(String, Tensor)]) -> Result<()> {
        let mut mine = self.params_mut();
        for (name, tensor) in &mut mine {
            let found = source
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| NnError::CheckpointFormat(format!("missing parameter `{name}`")))?;
            if found.1.shape() != tensor.shape() {
                return Err(NnError::ShapeMismatch {
                    expected: tensor.shape().to_vec(),
                    got: found.1.shape().to_vec(),
                });
            }
            **tensor = found.1.clone();
        }
        Ok(())
    }
}

/// Records which graph leaf each named parameter was bound to for one pass.
#[derive(Default)]
pub struct Bound {
    pairs: Vec<(String, NodeId, Vec<usize>)>,
}

impl Bound {
    pub fn new() -> Self {
        Bound::default()
    }

    pub fn bind(&mut self, g: &mut Graph, name: &str, t: &Tensor) -> NodeId {
        let id = g.input(t.clone());
        self.pairs.push((name.to_string(), id, t.shape().to_vec()));
        id
    }

    /// Named gradients in binding order; parameters the loss never touched get zeros.
    pub fn named_grads(&self, grads: &Grads) -> Vec<(String, Tensor)> {
        self.pairs
            .iter()
            .map(|(name, id, shape)| (name.clone(), grads.get_or_zero(*id, shape)))
            .collect()
    }
}

/// Seeded dropout. Train mode zeroes entries with probability `rate` and
/// rescales survivors by 1/(1-rate); eval mode is the identity.
pub fn dropout(
    g: &mut Graph,
    x: NodeId,
    rate: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> NodeId {
    assert!((0.0..1.0).contains(&rate), "dropout rate outside [0,1)");
    if mode == Mode::Eval || rate == 0.0 {
        return x;
    }
    let shape = g.value(x).shape().to_vec();
    let keep = 1.0 - rate;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                0.0
            } else {
                1.0 / keep
            }
        })
        .collect();
    g.mul_mask(x, Rc::new(Tensor::new(shape, data).unwrap()))
}

// ---- linear ----

pub struct Linear {
    pub name: String,
    pub w: Tensor, // d_in x d_out
    pub b: Tensor, // d_out
}

impl Linear {
    pub fn new(name: &str, d_in: usize, d_out: usize, init: &mut Initializer) -> Result<Self> {
        LayerConfig::Linear { d_in, d_out }.validate()?;
        Ok(Linear {
            name: name.to_string(),
            w: init.uniform(vec![d_in, d_out], d_in),
            b: init.zeros(vec![d_out]),
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, x: NodeId) -> NodeId {
        let w = bound.bind(g, &format!("{}.w", self.name), &self.w);
        let b = bound.bind(g, &format!("{}.b", self.name), &self.b);
        let y = g.matmul(x, w);
        g.add_bias(y, b)
    }
}

impl HasParams for Linear {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{}.w", self.name), &self.w),
            (format!("{}.b", self.name), &self.b),
        ]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{}.w", self.name), &mut self.w),
            (format!("{}.b", self.name), &mut self.b),
        ]
    }
}

// ---- conv1d ----

pub struct Conv1d {
    pub name: String,
    pub kernel: usize,
    pub stride: usize,
    pub pad_l: usize,
    pub pad_r: usize,
    pub c_in: usize,
    pub w: Tensor, // c_out x (c_in * kernel)
    pub b: Tensor, // c_out
}

impl Conv1d {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad_l: usize,
        pad_r: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        LayerConfig::Conv1d {
            c_in,
            c_out,
            kernel,
            stride,
            pad_l,
            pad_r,
        }
        .validate()?;
        Ok(Conv1d {
            name: name.to_string(),
            kernel,
            stride,
            pad_l,
            pad_r,
            c_in,
            w: init.uniform(vec![c_out, c_in * kernel], c_in * kernel),
            b: init.zeros(vec![c_out]),
        })
    }

    /// Output length for an input of `t` frames, or an error when the padded
    /// input is shorter than the kernel.
    pub fn out_len(&self, t: usize) -> Result<usize> {
        let padded = t + self.pad_l + self.pad_r;
        if padded < self.kernel {
            return Err(NnError::InputTooShort {
                len: t,
                min: self.kernel.saturating_sub(self.pad_l + self.pad_r),
                context: Some(format!("conv `{}` kernel {}", self.name, self.kernel)),
            });
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, x: NodeId) -> Result<NodeId> {
        self.out_len(g.value(x).rows())?;
        let w = bound.bind(g, &format!("{}.w", self.name), &self.w);
        let b = bound.bind(g, &format!("{}.b", self.name), &self.b);
        Ok(g.conv1d(x, w, b, self.kernel, self.stride, self.pad_l, self.pad_r))
    }
}

impl HasParams for Conv1d {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{}.w", self.name), &self.w),
            (format!("{}.b", self.name), &self.b),
        ]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{}.w", self.name), &mut self.w),
            (format!("{}.b", self.name), &mut self.b),
        ]
    }
}

// ---- norms ----

pub struct LayerNorm {
    pub name: String,
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(name: &str, d: usize, init: &mut Initializer) -> Result<Self> {
        LayerConfig::LayerNorm { d }.validate()?;
        Ok(LayerNorm {
            name: name.to_string(),
            gain: init.ones(vec![d]),
            bias: init.zeros(vec![d]),
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, x: NodeId) -> NodeId {
        let gain = bound.bind(g, &format!("{}.gain", self.name), &self.gain);
        let bias = bound.bind(g, &format!("{}.bias", self.name), &self.bias);
        g.layernorm_rows(x, gain, bias, LAYERNORM_EPS)
    }
}

impl HasParams for LayerNorm {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{}.gain", self.name), &self.gain),
            (format!("{}.bias", self.name), &self.bias),
        ]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{}.gain", self.name), &mut self.gain),
            (format!("{}.bias", self.name), &mut self.bias),
        ]
    }
}

/// Channel-wise normalization over time; the stabilized replacement for batch
/// norm in the encoder stack.
pub struct ChannelNorm {
    pub name: String,
    pub gain: Tensor,
    pub bias: Tensor,
}

impl ChannelNorm {
    pub fn new(name: &str, d: usize, init: &mut Initializer) -> Result<Self> {
        LayerConfig::ChannelNorm { d }.validate()?;
        Ok(ChannelNorm {
            name: name.to_string(),
            gain: init.ones(vec![d]),
            bias: init.zeros(vec![d]),
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, x: NodeId) -> NodeId {
        let gain = bound.bind(g, &format!("{}.gain", self.name), &self.gain);
        let bias = bound.bind(g, &format!("{}.bias", self.name), &self.bias);
        g.channel_norm(x, gain, bias, CHANNELNORM_EPS)
    }
}

impl HasParams for ChannelNorm {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{}.gain", self.name), &self.gain),
            (format!("{}.bias", self.name), &self.bias),
        ]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{}.gain", self.name), &mut self.gain),
            (format!("{}.bias", self.name), &mut self.bias),
        ]
    }
}

// ---- lstm ----

struct LstmLayerParams {
    w_ih: Tensor, // d x 4h, gate order i,f,g,o
    w_hh: Tensor, // h x 4h
    b: Tensor,    // 4h
}

/// Multi-layer unidirectional LSTM with zero initial state.
pub struct Lstm {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
    layers: Vec<LstmLayerParams>,
}

impl Lstm {
    pub fn new(
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        LayerConfig::Lstm {
            input,
            hidden,
            layers,
        }
        .validate()?;
        let ls = (0..layers)
            .map(|l| {
                let d = if l == 0 { input } else { hidden };
                LstmLayerParams {
                    w_ih: init.uniform(vec![d, 4 * hidden], d),
                    w_hh: init.uniform(vec![hidden, 4 * hidden], hidden),
                    b: init.zeros(vec![4 * hidden]),
                }
            })
            .collect();
        Ok(Lstm {
            name: name.to_string(),
            input,
            hidden,
            layers: ls,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, x: NodeId) -> NodeId {
        let t_len = g.value(x).rows();
        let h = self.hidden;
        let mut layer_in = x;
        for (l, lp) in self.layers.iter().enumerate() {
            let w_ih = bound.bind(g, &format!("{}.{l}.w_ih", self.name), &lp.w_ih);
            let w_hh = bound.bind(g, &format!("{}.{l}.w_hh", self.name), &lp.w_hh);
            let b = bound.bind(g, &format!("{}.{l}.b", self.name), &lp.b);
            // precompute input-to-hidden for all steps at once
            let xw = g.matmul(layer_in, w_ih);
            let xw = g.add_bias(xw, b);
            let mut h_prev: Option<NodeId> = None;
            let mut c_prev: Option<NodeId> = None;
            let mut outputs = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let pre_x = g.slice_rows(xw, t, t + 1);
                let pre = match h_prev {
                    Some(hp) => {
                        let hw = g.matmul(hp, w_hh);
                        g.add(pre_x, hw)
                    }
                    None => pre_x,
                };
                let i_g = g.slice_cols(pre, 0, h);
                let i_g = g.sigmoid(i_g);
                let f_g = g.slice_cols(pre, h, 2 * h);
                let f_g = g.sigmoid(f_g);
                let g_g = g.slice_cols(pre, 2 * h, 3 * h);
                let g_g = g.tanh(g_g);
                let o_g = g.slice_cols(pre, 3 * h, 4 * h);
                let o_g = g.sigmoid(o_g);
                let ig = g.mul(i_g, g_g);
                let c_t = match c_prev {
                    Some(cp) => {
                        let fc = g.mul(f_g, cp);
                        g.add(fc, ig)
                    }
                    None => ig,
                };
                let tc = g.tanh(c_t);
                let h_t = g.mul(o_g, tc);
                outputs.push(h_t);
                h_prev = Some(h_t);
                c_prev = Some(c_t);
            }
            layer_in = g.concat_rows(&outputs);
        }
        layer_in
    }
}

impl HasParams for Lstm {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, lp)| {
                vec![
                    (format!("{}.{l}.w_ih", self.name), &lp.w_ih),
                    (format!("{}.{l}.w_hh", self.name), &lp.w_hh),
                    (format!("{}.{l}.b", self.name), &lp.b),
                ]
            })
            .collect()
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let name = self.name.clone();
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(l, lp)| {
                vec![
                    (format!("{name}.{l}.w_ih"), &mut lp.w_ih),
                    (format!("{name}.{l}.w_hh"), &mut lp.w_hh),
                    (format!("{name}.{l}.b"), &mut lp.b),
                ]
            })
            .collect()
    }
}

// ---- attention ----

pub struct Mhsa {
    pub name: String,
    pub d: usize,
    pub heads: usize,
    pub causal: bool,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl Mhsa {
    pub fn new(name: &str, d: usize, heads: usize, causal: bool, init: &mut Initializer) -> Result<Self> {
        LayerConfig::Mhsa { d, heads, causal }.validate()?;
        Ok(Mhsa {
            name: name.to_string(),
            d,
            heads,
            causal,
            wq: Linear::new(&format!("{name}.wq"), d, d, init)?,
            wk: Linear::new(&format!("{name}.wk"), d, d, init)?,
            wv: Linear::new(&format!("{name}.wv"), d, d, init)?,
            wo: Linear::new(&format!("{name}.wo"), d, d, init)?,
        })
    }

    /// Returns the block output and the per-head attention matrices.
    pub fn forward_with_attn(
        &self,
        g: &mut Graph,
        bound: &mut Bound,
        x: NodeId,
    ) -> (NodeId, Vec<NodeId>) {
        let t_len = g.value(x).rows();
        let dh = self.d / self.heads;
        let q = self.wq.forward(g, bound, x);
        let k = self.wk.forward(g, bound, x);
        let v = self.wv.forward(g, bound, x);
        let mask = self.causal.then(|| {
            let mut m = Tensor::zeros(vec![t_len, t_len]);
            for i in 0..t_len {
                for j in i + 1..t_len {
                    m.set(i, j, -1e30);
                }
            }
            Rc::new(m)
        });
        let mut attns = Vec::with_capacity(self.heads);
        let mut heads_out = Vec::with_capacity(self.heads);
        for hidx in 0..self.heads {
            let lo = hidx * dh;
            let qh = g.slice_cols(q, lo, lo + dh);
            let kh = g.slice_cols(k, lo, lo + dh);
            let vh = g.slice_cols(v, lo, lo + dh);
            let scores = g.matmul_nt(qh, kh);
            let mut scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            if let Some(m) = &mask {
                scores = g.add_const(scores, Rc::clone(m));
            }
            let attn = g.softmax_rows(scores);
            attns.push(attn);
            heads_out.push(g.matmul(attn, vh));
        }
        let cat = g.concat_cols(&heads_out);
        (self.wo.forward(g, bound, cat), attns)
    }

    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, x: NodeId) -> NodeId {
        self.forward_with_attn(g, bound, x).0
    }
}

impl HasParams for Mhsa {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.wq.params();
        p.extend(self.wk.params());
        p.extend(self.wv.params());
        p.extend(self.wo.params());
        p
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p = self.wq.params_mut();
        p.extend(self.wk.params_mut());
        p.extend(self.wv.params_mut());
        p.extend(self.wo.params_mut());
        p
    }
}

// ---- feed-forward ----

pub struct Ffn {
    pub name: String,
    pub activation: Activation,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Ffn {
    pub fn new(
        name: &str,
        d: usize,
        hidden: usize,
        activation: Activation,
        init: &mut Initializer,
    ) -> Result<Self> {
        LayerConfig::Ffn {
            d,
            hidden,
            activation,
        }
        .validate()?;
        Ok(Ffn {
            name: name.to_string(),
            activation,
            fc1: Linear::new(&format!("{name}.fc1"), d, hidden, init)?,
            fc2: Linear::new(&format!("{name}.fc2"), hidden, d, init)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, x: NodeId) -> NodeId {
        let h = self.fc1.forward(g, bound, x);
        let h = match self.activation {
            Activation::Relu => g.relu(h),
            Activation::Swish => g.swish(h),
        };
        self.fc2.forward(g, bound, h)
    }
}

impl HasParams for Ffn {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.fc1.params();
        p.extend(self.fc2.params());
        p
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p = self.fc1.params_mut();
        p.extend(self.fc2.params_mut());
        p
    }
}

// ---- conformer convolution module ----

/// Pointwise conv (d -> 2d) -> GLU gating -> causal depthwise conv ->
/// frame-local norm -> swish -> pointwise conv (d -> d).
///
/// The norm after the depthwise conv is per-frame (layer norm) rather than a
/// statistic over time, so the module stays causal end to end.
pub struct ConvModule {
    pub name: String,
    pub d: usize,
    pub kernel: usize,
    pub pw1: Linear,
    pub dw_w: Tensor, // d x kernel
    pub dw_b: Tensor, // d
    pub norm: LayerNorm,
    pub pw2: Linear,
}

impl ConvModule {
    pub fn new(name: &str, d: usize, kernel: usize, init: &mut Initializer) -> Result<Self> {
        LayerConfig::ConvModule { d, kernel }.validate()?;
        Ok(ConvModule {
            name: name.to_string(),
            d,
            kernel,
            pw1: Linear::new(&format!("{name}.pw1"), d, 2 * d, init)?,
            dw_w: init.uniform(vec![d, kernel], kernel),
            dw_b: init.zeros(vec![d]),
            norm: LayerNorm::new(&format!("{name}.norm"), d, init)?,
            pw2: Linear::new(&format!("{name}.pw2"), d, d, init)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, x: NodeId) -> NodeId {
        let h = self.pw1.forward(g, bound, x);
        let a = g.slice_cols(h, 0, self.d);
        let b = g.slice_cols(h, self.d, 2 * self.d);
        let gate = g.sigmoid(b);
        let h = g.mul(a, gate);
        let dw_w = bound.bind(g, &format!("{}.dw_w", self.name), &self.dw_w);
        let dw_b = bound.bind(g, &format!("{}.dw_b", self.name), &self.dw_b);
        // causal: pad fully on the left so frame t never sees frames > t
        let h = g.depthwise_conv1d(h, dw_w, dw_b, self.kernel, self.kernel - 1, 0);
        let h = self.norm.forward(g, bound, h);
        let h = g.swish(h);
        self.pw2.forward(g, bound, h)
    }
}

impl HasParams for ConvModule {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.pw1.params();
        p.push((format!("{}.dw_w", self.name), &self.dw_w));
        p.push((format!("{}.dw_b", self.name), &self.dw_b));
        p.extend(self.norm.params());
        p.extend(self.pw2.params());
        p
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let name = self.name.clone();
        let mut p = self.pw1.params_mut();
        p.push((format!("{name}.dw_w"), &mut self.dw_w));
        p.push((format!("{name}.dw_b"), &mut self.dw_b));
        p.extend(self.norm.params_mut());
        p.extend(self.pw2.params_mut());
        p
    }
}
