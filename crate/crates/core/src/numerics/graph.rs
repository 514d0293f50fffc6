use std::collections::HashMap;

use super::kernels::{self, ConvGeom, NormStats};
use super::{Float, ParamId, ParamStore, Tensor};
use crate::error::{contract, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F: Float> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddChannel(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        stats: NormStats<F>,
    },
    Swish(Var),
    Attend {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<F>,
        dims: (usize, usize, usize, usize),
    },
    Upsample2x(Var),
    Concat(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Sum(Var),
    Mean(Var),
    MeanAbsDiff(Var, Var),
}

struct Node<F: Float> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Learned 1×1 projections of a single-head attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Gradient tape. Every operation appends a node holding its output and the
/// information its backward rule needs; [`Graph::backward`] replays the
/// nodes in reverse.
///
/// A graph is built for one forward pass and dropped afterwards.
pub struct Graph<F: Float = f32> {
    nodes: Vec<Node<F>>,
    params: Vec<(ParamId, Var)>,
    param_lookup: HashMap<ParamId, Var>,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of a backward pass: `∂loss/∂leaf` for every leaf that requires
/// grad.
pub struct Gradients<F: Float = f32> {
    grads: Vec<Option<Tensor<F>>>,
    params: Vec<(ParamId, Var)>,
}

impl<F: Float> Gradients<F> {
    /// Gradient of a leaf, `None` if the leaf does not require grad.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }
}

fn same_shape<F: Float>(a: &Tensor<F>, b: &Tensor<F>, op: &str) -> Result<()> {
    contract!(
        a.shape() == b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    Ok(())
}

impl<F: Float> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            param_lookup: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf. It participates in differentiation iff
    /// `t.requires_grad`.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        let needs = t.requires_grad;
        let mut t = t;
        t.grad = None;
        self.push(t, Op::Leaf, needs)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<F>) -> Var {
        t.requires_grad = false;
        t.grad = None;
        self.push(t, Op::Leaf, false)
    }

    /// Records a parameter leaf, once per graph.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.param_lookup.get(&id) {
            return v;
        }
        let t = store.get(id);
        let needs = t.requires_grad;
        let mut value = t.clone();
        value.grad = None;
        let v = self.push(value, Op::Leaf, needs);
        self.params.push((id, v));
        self.param_lookup.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Softmax matrix `[N, Pq, Pk]` of an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[F]> {
        match &self.nodes[v.0].op {
            Op::Attend { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        same_shape(self.value(a), self.value(b), name)?;
        self.value(a).zip_map(self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Adds a per-sample, per-channel vector `[N, C]` to every spatial
    /// position of `x: [N, C, H, W]`.
    pub fn add_channel(&mut self, x: Var, e: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        contract!(
            self.shape(e) == [n, c],
            "add_channel: expected [{n}, {c}] vector, got {:?}",
            self.shape(e)
        );
        let hw = h * w;
        let ev = self.value(e).data();
        let mut out = self.value(x).data().to_vec();
        for (i, plane) in out.chunks_mut(hw).enumerate() {
            let add = ev[i];
            plane.iter_mut().for_each(|v| *v += add);
        }
        let out = Tensor::new(&[n, c, h, w], out)?;
        let ng = self.needs(x) || self.needs(e);
        Ok(self.push(out, Op::AddChannel(x, e), ng))
    }

    /// 2-D cross-correlation with square `k×k` kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (cout, wcin, k, k2) = self.value(w).dims4()?;
        contract!(k == k2, "conv2d: kernel must be square, got {k}×{k2}");
        contract!(k == 1 || k == 3, "conv2d: kernel size {k} not in {{1, 3}}");
        contract!(stride == 1 || stride == 2, "conv2d: stride {stride} not in {{1, 2}}");
        contract!(
            wcin == cin,
            "conv2d: input has {cin} channels but weight expects {wcin}"
        );
        contract!(
            self.shape(b) == [cout],
            "conv2d: bias shape {:?}, expected [{cout}]",
            self.shape(b)
        );
        contract!(
            h + 2 * padding >= k && wd + 2 * padding >= k,
            "conv2d: input {h}×{wd} smaller than kernel {k}"
        );
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            k,
            stride,
            pad: padding,
            oh: (h + 2 * padding - k) / stride + 1,
            ow: (wd + 2 * padding - k) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let out = Tensor::new(&[n, cout, geom.oh, geom.ow], out)?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, ng))
    }

    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        contract!(groups > 0 && c % groups == 0, "group_norm: {c} channels not divisible into {groups} groups");
        contract!(eps > 0.0, "group_norm: eps must be positive");
        contract!(
            self.shape(gamma) == [c] && self.shape(beta) == [c],
            "group_norm: affine parameters must have shape [{c}]"
        );
        let (y, stats) = kernels::group_norm_forward(
            self.value(x).data(),
            (n, c, h * w),
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let out = Tensor::new(&[n, c, h, w], y)?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
            ng,
        ))
    }

    /// `x · sigmoid(x)`, elementwise.
    pub fn swish(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v / (F::one() + (-v).exp()));
        let ng = self.needs(x);
        self.push(out, Op::Swish(x), ng)
    }

    /// `softmax(QᵀK/√C)` applied to `V`, with spatial positions flattened.
    /// `q: [N,C,H,W]`, `k`, `v: [N,C,H',W']`; output has `q`'s shape.
    pub fn attend(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (n, c, hq, wq) = self.value(q).dims4()?;
        let (nk, ck, hk, wk) = self.value(k).dims4()?;
        contract!(
            nk == n && ck == c,
            "attention: query {:?} and key {:?} disagree in batch or channels",
            self.shape(q),
            self.shape(k)
        );
        same_shape(self.value(k), self.value(v), "attention key/value")?;
        let dims = (n, c, hq * wq, hk * wk);
        let (out, probs) = kernels::attend_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            dims,
        );
        let out = Tensor::new(&[n, c, hq, wq], out)?;
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(out, Op::Attend { q, k, v, probs, dims }, ng))
    }

    /// Residual attention block: `query_src + Wo·attend(Wq·q, Wk·kv, Wv·kv)`
    /// with 1×1 projections. Pass the same var twice for self-attention.
    pub fn attention(&mut self, query_src: Var, kv_src: Var, w: &AttentionWeights) -> Result<Var> {
        let q = self.conv2d(query_src, w.wq, w.bq, 1, 0)?;
        let k = self.conv2d(kv_src, w.wk, w.bk, 1, 0)?;
        let v = self.conv2d(kv_src, w.wv, w.bv, 1, 0)?;
        let a = self.attend(q, k, v)?;
        let o = self.conv2d(a, w.wo, w.bo, 1, 0)?;
        self.add(query_src, o)
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let src = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![F::zero(); n * c * oh * ow];
        for (plane, dst) in src.chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for y in 0..oh {
                let row = &plane[(y / 2) * w..(y / 2 + 1) * w];
                for (xo, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                    *d = row[xo / 2];
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Upsample2x(x), ng))
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        contract!(
            n == nb && h == hb && w == wb,
            "concat: {:?} and {:?} differ outside the channel axis",
            self.shape(a),
            self.shape(b)
        );
        let hw = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for s in 0..n {
            out.extend_from_slice(&self.value(a).data()[s * ca * hw..(s + 1) * ca * hw]);
            out.extend_from_slice(&self.value(b).data()[s * cb * hw..(s + 1) * cb * hw]);
        }
        let out = Tensor::new(&[n, ca + cb, h, w], out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat(a, b), ng))
    }

    /// `x · Wᵀ + b` for `x: [N, I]`, `W: [O, I]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        contract!(xs.len() == 2, "linear: input must be [N, I], got {xs:?}");
        let (n, i) = (xs[0], xs[1]);
        let ws = self.shape(w);
        contract!(
            ws.len() == 2 && ws[1] == i,
            "linear: weight {ws:?} incompatible with input width {i}"
        );
        let o = ws[0];
        contract!(self.shape(b) == [o], "linear: bias must be [{o}]");
        let mut out = vec![F::zero(); n * o];
        for row in out.chunks_mut(o) {
            row.copy_from_slice(self.value(b).data());
        }
        F::gemm(n, i, o, self.value(x).data(), false, self.value(w).data(), true, &mut out, true);
        let out = Tensor::new(&[n, o], out)?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: F = self.value(x).data().iter().copied().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<F>() / F::from_usize(t.len().max(1)).unwrap();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Mean absolute difference, the L1 training objective.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mean_abs_diff")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let total: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y).abs().to_f64().unwrap_or(f64::NAN))
            .sum();
        let m = F::from_f64_lossy(total / ta.len().max(1) as f64);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(m), Op::MeanAbsDiff(a, b), ng))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        contract!(
            lv.len() == 1,
            "backward needs a scalar loss, got shape {:?}",
            lv.shape()
        );
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
        }

        let out = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf if node.needs_grad => Some(
                    Tensor::new(
                        node.value.shape(),
                        g.unwrap_or_else(|| vec![F::zero(); node.value.len()]),
                    )
                    .expect("gradient buffer matches its leaf"),
                ),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            grads: out,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, node: &Node<F>, dy: &[F], grads: &mut [Option<Vec<F>>]) {
        let mut acc = |v: Var, g: Vec<F>| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
                slot @ None => *slot = Some(g),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, dy.to_vec());
                acc(*b, dy.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.to_vec());
                acc(*b, dy.iter().map(|&d| -d).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, dy.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                acc(*b, dy.iter().zip(va).map(|(&d, &x)| d * x).collect());
            }
            Op::Scale(a, s) => acc(*a, dy.iter().map(|&d| d * *s).collect()),
            Op::AddChannel(x, e) => {
                acc(*x, dy.to_vec());
                let hw = self.nodes[x.0].value.shape()[2] * self.nodes[x.0].value.shape()[3];
                acc(*e, dy.chunks(hw).map(|p| p.iter().copied().sum()).collect());
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(val(*x), val(*w), dy, geom, self.needs(*x));
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                acc(*w, dw);
                acc(*b, db);
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            } => {
                let s = self.nodes[x.0].value.shape();
                let (dx, dg, db) = kernels::group_norm_backward(
                    val(*x),
                    (s[0], s[1], s[2] * s[3]),
                    *groups,
                    val(*gamma),
                    stats,
                    dy,
                );
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::Swish(x) => {
                let g = val(*x)
                    .iter()
                    .zip(dy)
                    .map(|(&v, &d)| {
                        let s = F::one() / (F::one() + (-v).exp());
                        d * s * (F::one() + v * (F::one() - s))
                    })
                    .collect();
                acc(*x, g);
            }
            Op::Attend { q, k, v, probs, dims } => {
                let (dq, dk, dv) = kernels::attend_backward(val(*q), val(*k), val(*v), probs, dy, *dims);
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::Upsample2x(x) => {
                let s = self.nodes[x.0].value.shape();
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (2 * h, 2 * w);
                let mut g = vec![F::zero(); s.iter().product()];
                for (dst, src) in g.chunks_mut(h * w).zip(dy.chunks(oh * ow)) {
                    for y in 0..oh {
                        for xo in 0..ow {
                            dst[(y / 2) * w + xo / 2] += src[y * ow + xo];
                        }
                    }
                }
                acc(*x, g);
            }
            Op::Concat(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (n, hw) = (sa[0], sa[2] * sa[3]);
                let (ca, cb) = (sa[1] * hw, sb[1] * hw);
                let mut ga = Vec::with_capacity(n * ca);
                let mut gb = Vec::with_capacity(n * cb);
                for chunk in dy.chunks(ca + cb) {
                    ga.extend_from_slice(&chunk[..ca]);
                    gb.extend_from_slice(&chunk[ca..]);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Linear { x, w, b } => {
                let xs = self.nodes[x.0].value.shape();
                let (n, i) = (xs[0], xs[1]);
                let o = self.nodes[w.0].value.shape()[0];
                if self.needs(*x) {
                    let mut dx = vec![F::zero(); n * i];
                    F::gemm(n, o, i, dy, false, val(*w), false, &mut dx, false);
                    acc(*x, dx);
                }
                let mut dw = vec![F::zero(); o * i];
                F::gemm(o, n, i, dy, true, val(*x), false, &mut dw, false);
                acc(*w, dw);
                let mut db = vec![F::zero(); o];
                for row in dy.chunks(o) {
                    db.iter_mut().zip(row).for_each(|(a, &d)| *a += d);
                }
                acc(*b, db);
            }
            Op::Sum(x) => acc(*x, vec![dy[0]; self.nodes[x.0].value.len()]),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                acc(*x, vec![dy[0] / F::from_usize(n.max(1)).unwrap(); n]);
            }
            Op::MeanAbsDiff(a, b) => {
                let n = F::from_usize(self.nodes[a.0].value.len().max(1)).unwrap();
                let g: Vec<F> = val(*a)
                    .iter()
                    .zip(val(*b))
                    .map(|(&x, &y)| {
                        let d = x - y;
                        let s = if d > F::zero() {
                            F::one()
                        } else if d < F::zero() {
                            -F::one()
                        } else {
                            F::zero()
                        };
                        dy[0] * s / n
                    })
                    .collect();
                acc(*b, g.iter().map(|&v| -v).collect());
                acc(*a, g);
            }
        }
    }
}
