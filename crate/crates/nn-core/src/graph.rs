//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! A [`Graph`] records every forward operation as a node holding its value and
//! a backward closure. [`Graph::backward`] seeds the (scalar) output with 1
//! and replays the tape in reverse, accumulating gradients per node. Leaves
//! are created with [`Graph::input`]; callers keep the returned [`NodeId`]s of
//! the leaves they want gradients for.

use std::rc::Rc;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

type BackFn = Box<dyn Fn(&Tensor, &mut dyn FnMut(usize, Tensor))>;

struct Node {
    value: Rc<Tensor>,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Grads {
    by_node: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node[id.0].as_ref()
    }

    /// Gradient for a leaf, zero-filled if the output did not depend on it.
    pub fn get_or_zero(&self, id: NodeId, shape: &[usize]) -> Tensor {
        self.by_node[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, back: Option<BackFn>) -> NodeId {
        self.nodes.push(Node {
            value: Rc::new(value),
            back,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rc(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes[id.0].value)
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, None)
    }

    /// Runs reverse accumulation from a scalar output node.
    pub fn backward(&self, out: NodeId) -> Grads {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        let mut by_node: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        by_node[out.0] = Some(Tensor::scalar(1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = by_node[i].take() else { continue };
            if let Some(back) = &self.nodes[i].back {
                back(&g, &mut |parent, contrib| match &mut by_node[parent] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                });
            }
            by_node[i] = Some(g);
        }
        Grads { by_node }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.rc(a), self.rc(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let mut out = (*va).clone();
        out.add_assign(&vb);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.clone());
                sink(b.0, g.clone());
            })),
        )
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.rc(a), self.rc(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect(),
        )
        .unwrap();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.clone());
                sink(b.0, g.map(|v| -v));
            })),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.rc(a), self.rc(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
        )
        .unwrap();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let ga = Tensor::new(
                    vb.shape().to_vec(),
                    g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
                )
                .unwrap();
                let gb = Tensor::new(
                    va.shape().to_vec(),
                    g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect(),
                )
                .unwrap();
                sink(a.0, ga);
                sink(b.0, gb);
            })),
        )
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let va = self.rc(a);
        self.push(
            va.map(|v| v * s),
            Some(Box::new(move |g, sink| sink(a.0, g.map(|v| v * s)))),
        )
    }

    /// Elementwise product with a constant mask (dropout); no gradient to the mask.
    pub fn mul_mask(&mut self, a: NodeId, mask: Rc<Tensor>) -> NodeId {
        let va = self.rc(a);
        assert_eq!(va.shape(), mask.shape(), "mask shape mismatch");
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data()
                .iter()
                .zip(mask.data())
                .map(|(x, m)| x * m)
                .collect(),
        )
        .unwrap();
        let mask_b = Rc::clone(&mask);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let ga = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(mask_b.data())
                        .map(|(x, m)| x * m)
                        .collect(),
                )
                .unwrap();
                sink(a.0, ga);
            })),
        )
    }

    /// Add a constant tensor (no gradient flows to it); used for attention masks.
    pub fn add_const(&mut self, a: NodeId, c: Rc<Tensor>) -> NodeId {
        let va = self.rc(a);
        assert_eq!(va.shape(), c.shape(), "add_const shape mismatch");
        let mut out = (*va).clone();
        out.add_assign(&c);
        self.push(out, Some(Box::new(move |g, sink| sink(a.0, g.clone()))))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let va = self.rc(a);
        let out = va.map(|v| 1.0 / (1.0 + (-v).exp()));
        let y = Rc::new(out.clone());
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let ga = Tensor::new(
                    y.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * yv * (1.0 - yv))
                        .collect(),
                )
                .unwrap();
                sink(a.0, ga);
            })),
        )
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let va = self.rc(a);
        let out = va.map(f64::tanh);
        let y = Rc::new(out.clone());
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let ga = Tensor::new(
                    y.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * (1.0 - yv * yv))
                        .collect(),
                )
                .unwrap();
                sink(a.0, ga);
            })),
        )
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let va = self.rc(a);
        let out = va.map(|v| v.max(0.0));
        let x = Rc::clone(&va);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let ga = Tensor::new(
                    x.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect(),
                )
                .unwrap();
                sink(a.0, ga);
            })),
        )
    }

    /// Swish / SiLU: `x * sigmoid(x)`.
    pub fn swish(&mut self, a: NodeId) -> NodeId {
        let va = self.rc(a);
        let out = va.map(|v| v / (1.0 + (-v).exp()));
        let x = Rc::clone(&va);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let ga = Tensor::new(
                    x.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| {
                            let s = 1.0 / (1.0 + (-xv).exp());
                            gv * (s + xv * s * (1.0 - s))
                        })
                        .collect(),
                )
                .unwrap();
                sink(a.0, ga);
            })),
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.rc(a), self.rc(b));
        let out = va.matmul(&vb);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.matmul_nt(&vb));
                sink(b.0, va.matmul_tn(g));
            })),
        )
    }

    /// `a * b^T`; used for attention scores.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.rc(a), self.rc(b));
        let out = va.matmul_nt(&vb);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.matmul(&vb));
                sink(b.0, g.matmul_tn(&va));
            })),
        )
    }

    /// Broadcast-add a length-d bias vector to every row of an m x d matrix.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (va, vb) = (self.rc(a), self.rc(bias));
        let d = va.cols();
        assert_eq!(vb.len(), d, "bias length mismatch");
        let mut out = (*va).clone();
        for i in 0..out.rows() {
            for (x, b) in out.row_mut(i).iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                sink(a.0, g.clone());
                let mut gb = vec![0.0; d];
                for i in 0..g.rows() {
                    for (acc, v) in gb.iter_mut().zip(g.row(i)) {
                        *acc += v;
                    }
                }
                sink(bias.0, Tensor::vector(gb));
            })),
        )
    }

    // ---- shape surgery ----

    pub fn slice_rows(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let va = self.rc(a);
        let c = va.cols();
        let rows = va.rows();
        assert!(lo <= hi && hi <= rows, "slice_rows out of range");
        let out = Tensor::new(
            vec![hi - lo, c],
            va.data()[lo * c..hi * c].to_vec(),
        )
        .unwrap();
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut ga = Tensor::zeros(vec![rows, c]);
                ga.data_mut()[lo * c..hi * c].copy_from_slice(g.data());
                sink(a.0, ga);
            })),
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let va = self.rc(a);
        let (m, c) = (va.rows(), va.cols());
        assert!(lo <= hi && hi <= c, "slice_cols out of range");
        let w = hi - lo;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&va.row(i)[lo..hi]);
        }
        self.push(
            Tensor::new(vec![m, w], data).unwrap(),
            Some(Box::new(move |g, sink| {
                let mut ga = Tensor::zeros(vec![m, c]);
                for i in 0..m {
                    ga.row_mut(i)[lo..hi].copy_from_slice(g.row(i));
                }
                sink(a.0, ga);
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.rc(p)).collect();
        let c = vals[0].cols();
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(vals.len());
        for v in &vals {
            assert_eq!(v.cols(), c, "concat_rows column mismatch");
            row_counts.push(v.rows());
            data.extend_from_slice(v.data());
        }
        let total: usize = row_counts.iter().sum();
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            Tensor::new(vec![total, c], data).unwrap(),
            Some(Box::new(move |g, sink| {
                let mut off = 0;
                for (&id, &r) in ids.iter().zip(&row_counts) {
                    let part = Tensor::new(
                        vec![r, c],
                        g.data()[off * c..(off + r) * c].to_vec(),
                    )
                    .unwrap();
                    sink(id, part);
                    off += r;
                }
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|&p| self.rc(p)).collect();
        let m = vals[0].rows();
        let widths: Vec<usize> = vals.iter().map(|v| v.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for v in &vals {
                assert_eq!(v.rows(), m, "concat_cols row mismatch");
                data.extend_from_slice(v.row(i));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            Tensor::new(vec![m, total], data).unwrap(),
            Some(Box::new(move |g, sink| {
                let mut off = 0;
                for (&id, &w) in ids.iter().zip(&widths) {
                    let mut part = Tensor::zeros(vec![m, w]);
                    for i in 0..m {
                        part.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                    }
                    sink(id, part);
                    off += w;
                }
            })),
        )
    }

    /// Gather rows of `a` by index; duplicate indices accumulate in backward.
    pub fn gather_rows(&mut self, a: NodeId, ids: Rc<Vec<usize>>) -> NodeId {
        let va = self.rc(a);
        let (m, c) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids.iter() {
            assert!(i < m, "gather_rows index out of range");
            data.extend_from_slice(va.row(i));
        }
        let n = ids.len();
        self.push(
            Tensor::new(vec![n, c], data).unwrap(),
            Some(Box::new(move |g, sink| {
                let mut ga = Tensor::zeros(vec![m, c]);
                for (r, &i) in ids.iter().enumerate() {
                    for (acc, v) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                sink(a.0, ga);
            })),
        )
    }

    // ---- reductions & normalization ----

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let va = self.rc(a);
        let n = va.len() as f64;
        let s: f64 = va.data().iter().sum();
        let shape = va.shape().to_vec();
        self.push(
            Tensor::scalar(s / n),
            Some(Box::new(move |g, sink| {
                let gv = g.item() / n;
                sink(a.0, Tensor::zeros(shape.clone()).map(|_| gv));
            })),
        )
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let va = self.rc(a);
        let s: f64 = va.data().iter().sum();
        let shape = va.shape().to_vec();
        self.push(
            Tensor::scalar(s),
            Some(Box::new(move |g, sink| {
                let gv = g.item();
                sink(a.0, Tensor::zeros(shape.clone()).map(|_| gv));
            })),
        )
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.rc(a);
        let (m, c) = (va.rows(), va.cols());
        let mut out = Tensor::zeros(vec![m, c]);
        for i in 0..m {
            let row = va.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (o, &x) in out.row_mut(i).iter_mut().zip(row) {
                *o = (x - mx).exp();
                s += *o;
            }
            for o in out.row_mut(i) {
                *o /= s;
            }
        }
        let y = Rc::new(out.clone());
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut ga = Tensor::zeros(vec![m, c]);
                for i in 0..m {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in ga.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                sink(a.0, ga);
            })),
        )
    }

    /// Mean cross-entropy of row-wise softmax against integer targets.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: Rc<Vec<usize>>) -> NodeId {
        let vl = self.rc(logits);
        let (m, c) = (vl.rows(), vl.cols());
        assert_eq!(targets.len(), m, "one target per row");
        let mut probs = Tensor::zeros(vec![m, c]);
        let mut loss = 0.0;
        for i in 0..m {
            let row = vl.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (o, &x) in probs.row_mut(i).iter_mut().zip(row) {
                *o = (x - mx).exp();
                s += *o;
            }
            for o in probs.row_mut(i) {
                *o /= s;
            }
            loss -= probs.row(i)[targets[i]].ln();
        }
        let probs = Rc::new(probs);
        self.push(
            Tensor::scalar(loss / m as f64),
            Some(Box::new(move |g, sink| {
                let gv = g.item() / m as f64;
                let mut gl = (*probs).clone();
                for (i, &t) in targets.iter().enumerate() {
                    gl.row_mut(i)[t] -= 1.0;
                }
                gl.scale_assign(gv);
                sink(logits.0, gl);
            })),
        )
    }

    /// Per-row layer normalization with affine gain/bias of length d.
    pub fn layernorm_rows(&mut self, a: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        let (va, vg, vb) = (self.rc(a), self.rc(gain), self.rc(bias));
        let (m, d) = (va.rows(), va.cols());
        assert_eq!(vg.len(), d);
        assert_eq!(vb.len(), d);
        let mut xhat = Tensor::zeros(vec![m, d]);
        let mut inv_sigma = vec![0.0; m];
        let mut out = Tensor::zeros(vec![m, d]);
        for i in 0..m {
            let row = va.row(i);
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[i] = inv;
            for j in 0..d {
                let xh = (row[j] - mu) * inv;
                xhat.set(i, j, xh);
                out.set(i, j, xh * vg.data()[j] + vb.data()[j]);
            }
        }
        let xhat = Rc::new(xhat);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut ga = Tensor::zeros(vec![m, d]);
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for i in 0..m {
                    let gr = g.row(i);
                    let xr = xhat.row(i);
                    let mut dxhat = vec![0.0; d];
                    for j in 0..d {
                        dxhat[j] = gr[j] * vg.data()[j];
                        gg[j] += gr[j] * xr[j];
                        gb[j] += gr[j];
                    }
                    let mean_dx = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dx_xhat =
                        dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        ga.set(
                            i,
                            j,
                            inv_sigma[i] * (dxhat[j] - mean_dx - xr[j] * mean_dx_xhat),
                        );
                    }
                }
                sink(a.0, ga);
                sink(gain.0, Tensor::vector(gg));
                sink(bias.0, Tensor::vector(gb));
            })),
        )
    }

    /// Per-channel normalization over time (columns normalized over rows).
    pub fn channel_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        let (va, vg, vb) = (self.rc(a), self.rc(gain), self.rc(bias));
        let (m, d) = (va.rows(), va.cols());
        assert_eq!(vg.len(), d);
        assert_eq!(vb.len(), d);
        let mut xhat = Tensor::zeros(vec![m, d]);
        let mut inv_sigma = vec![0.0; d];
        let mut out = Tensor::zeros(vec![m, d]);
        for j in 0..d {
            let mut mu = 0.0;
            for i in 0..m {
                mu += va.at(i, j);
            }
            mu /= m as f64;
            let mut var = 0.0;
            for i in 0..m {
                let dv = va.at(i, j) - mu;
                var += dv * dv;
            }
            var /= m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[j] = inv;
            for i in 0..m {
                let xh = (va.at(i, j) - mu) * inv;
                xhat.set(i, j, xh);
                out.set(i, j, xh * vg.data()[j] + vb.data()[j]);
            }
        }
        let xhat = Rc::new(xhat);
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut ga = Tensor::zeros(vec![m, d]);
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for j in 0..d {
                    let mut dxhat = vec![0.0; m];
                    for i in 0..m {
                        dxhat[i] = g.at(i, j) * vg.data()[j];
                        gg[j] += g.at(i, j) * xhat.at(i, j);
                        gb[j] += g.at(i, j);
                    }
                    let mean_dx = dxhat.iter().sum::<f64>() / m as f64;
                    let mean_dx_xhat = (0..m)
                        .map(|i| dxhat[i] * xhat.at(i, j))
                        .sum::<f64>()
                        / m as f64;
                    for i in 0..m {
                        ga.set(
                            i,
                            j,
                            inv_sigma[j] * (dxhat[i] - mean_dx - xhat.at(i, j) * mean_dx_xhat),
                        );
                    }
                }
                sink(a.0, ga);
                sink(gain.0, Tensor::vector(gg));
                sink(bias.0, Tensor::vector(gb));
            })),
        )
    }

    // ---- convolutions ----

    /// 1-D convolution. Input is T x c_in, weight c_out x (c_in * k) with the
    /// kernel laid out as `w[o][c * k + j]`, bias length c_out. Output
    /// T' x c_out with `T' = (T + pad_l + pad_r - k) / stride + 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv1d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        k: usize,
        stride: usize,
        pad_l: usize,
        pad_r: usize,
    ) -> NodeId {
        let (vx, vw, vb) = (self.rc(x), self.rc(weight), self.rc(bias));
        let (t_in, c_in) = (vx.rows(), vx.cols());
        let c_out = vw.rows();
        assert_eq!(vw.cols(), c_in * k, "conv weight width mismatch");
        assert_eq!(vb.len(), c_out);
        assert!(t_in + pad_l + pad_r >= k, "conv input shorter than kernel");
        let t_out = (t_in + pad_l + pad_r - k) / stride + 1;
        let mut out = Tensor::zeros(vec![t_out, c_out]);
        let mut patch = vec![0.0; c_in * k];
        for t in 0..t_out {
            let start = (t * stride) as isize - pad_l as isize;
            patch.iter_mut().for_each(|p| *p = 0.0);
            for j in 0..k {
                let src = start + j as isize;
                if src < 0 || src >= t_in as isize {
                    continue;
                }
                let xr = vx.row(src as usize);
                for c in 0..c_in {
                    patch[c * k + j] = xr[c];
                }
            }
            let orow = out.row_mut(t);
            for o in 0..c_out {
                let wr = vw.row(o);
                let mut s = vb.data()[o];
                for (wv, pv) in wr.iter().zip(&patch) {
                    s += wv * pv;
                }
                orow[o] = s;
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut gx = Tensor::zeros(vec![t_in, c_in]);
                let mut gw = Tensor::zeros(vec![c_out, c_in * k]);
                let mut gb = vec![0.0; c_out];
                let mut patch = vec![0.0; c_in * k];
                let mut dpatch = vec![0.0; c_in * k];
                for t in 0..g.rows() {
                    let start = (t * stride) as isize - pad_l as isize;
                    patch.iter_mut().for_each(|p| *p = 0.0);
                    for j in 0..k {
                        let src = start + j as isize;
                        if src < 0 || src >= t_in as isize {
                            continue;
                        }
                        let xr = vx.row(src as usize);
                        for c in 0..c_in {
                            patch[c * k + j] = xr[c];
                        }
                    }
                    dpatch.iter_mut().for_each(|p| *p = 0.0);
                    let gr = g.row(t);
                    for o in 0..c_out {
                        let gv = gr[o];
                        if gv == 0.0 {
                            continue;
                        }
                        gb[o] += gv;
                        let wr = vw.row(o);
                        let gwr = gw.row_mut(o);
                        for idx in 0..c_in * k {
                            gwr[idx] += gv * patch[idx];
                            dpatch[idx] += gv * wr[idx];
                        }
                    }
                    for j in 0..k {
                        let src = start + j as isize;
                        if src < 0 || src >= t_in as isize {
                            continue;
                        }
                        let gxr = gx.row_mut(src as usize);
                        for c in 0..c_in {
                            gxr[c] += dpatch[c * k + j];
                        }
                    }
                }
                sink(x.0, gx);
                sink(weight.0, gw);
                sink(bias.0, Tensor::vector(gb));
            })),
        )
    }

    /// Depthwise 1-D convolution, stride 1. Weight is c x k, bias length c.
    pub fn depthwise_conv1d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        k: usize,
        pad_l: usize,
        pad_r: usize,
    ) -> NodeId {
        let (vx, vw, vb) = (self.rc(x), self.rc(weight), self.rc(bias));
        let (t_in, c) = (vx.rows(), vx.cols());
        assert_eq!(vw.rows(), c);
        assert_eq!(vw.cols(), k);
        assert_eq!(vb.len(), c);
        assert!(t_in + pad_l + pad_r >= k);
        let t_out = t_in + pad_l + pad_r - k + 1;
        let mut out = Tensor::zeros(vec![t_out, c]);
        for t in 0..t_out {
            let start = t as isize - pad_l as isize;
            let orow = out.row_mut(t);
            for ch in 0..c {
                let mut s = vb.data()[ch];
                let wr = vw.row(ch);
                for j in 0..k {
                    let src = start + j as isize;
                    if src < 0 || src >= t_in as isize {
                        continue;
                    }
                    s += wr[j] * vx.at(src as usize, ch);
                }
                orow[ch] = s;
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut gx = Tensor::zeros(vec![t_in, c]);
                let mut gw = Tensor::zeros(vec![c, k]);
                let mut gb = vec![0.0; c];
                for t in 0..g.rows() {
                    let start = t as isize - pad_l as isize;
                    let gr = g.row(t);
                    for ch in 0..c {
                        let gv = gr[ch];
                        if gv == 0.0 {
                            continue;
                        }
                        gb[ch] += gv;
                        for j in 0..k {
                            let src = start + j as isize;
                            if src < 0 || src >= t_in as isize {
                                continue;
                            }
                            gw.row_mut(ch)[j] += gv * vx.at(src as usize, ch);
                            gx.row_mut(src as usize)[ch] += gv * vw.at(ch, j);
                        }
                    }
                }
                sink(x.0, gx);
                sink(weight.0, gw);
                sink(bias.0, Tensor::vector(gb));
            })),
        )
    }

    /// Candidate scores for contrastive losses: `out[p][j]` is the dot product
    /// of prediction row p with candidate row `idx[p][j]`.
    pub fn dot_scores(
        &mut self,
        pred: NodeId,
        cands: NodeId,
        idx: Rc<Vec<Vec<usize>>>,
    ) -> NodeId {
        let (vp, vc) = (self.rc(pred), self.rc(cands));
        let d = vp.cols();
        assert_eq!(vc.cols(), d, "candidate dimension mismatch");
        let p_rows = vp.rows();
        assert_eq!(idx.len(), p_rows, "one index row per prediction");
        let n = if idx.is_empty() { 0 } else { idx[0].len() };
        let mut out = Tensor::zeros(vec![p_rows, n]);
        for p in 0..p_rows {
            assert_eq!(idx[p].len(), n, "ragged candidate sets");
            let pr = vp.row(p);
            let orow = out.row_mut(p);
            for (j, &ci) in idx[p].iter().enumerate() {
                let cr = vc.row(ci);
                orow[j] = pr.iter().zip(cr).map(|(a, b)| a * b).sum();
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, sink| {
                let mut gp = Tensor::zeros(vec![p_rows, d]);
                let mut gc = Tensor::zeros(vec![vc.rows(), d]);
                for p in 0..p_rows {
                    let gr = g.row(p);
                    let pr = vp.row(p);
                    for (j, &ci) in idx[p].iter().enumerate() {
                        let gv = gr[j];
                        if gv == 0.0 {
                            continue;
                        }
                        let cr = vc.row(ci);
                        for ((gpv, &cv), (gcv, &pv)) in gp
                            .row_mut(p)
                            .iter_mut()
                            .zip(cr)
                            .zip(gc.row_mut(ci).iter_mut().zip(pr))
                        {
                            *gpv += gv * cv;
                            *gcv += gv * pv;
                        }
                    }
                }
                sink(pred.0, gp);
                sink(cands.0, gc);
            })),
        )
    }
}
