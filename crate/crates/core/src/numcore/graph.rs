//! Dynamically recorded computation graph with reverse-mode differentiation.
//!
//! Every value is a matrix (`rows x cols`); scalars are `1 x 1`. Parameters
//! are borrowed from a [`ParamStore`] and never copied into the graph.

use super::kernels::{self, dot, gelu, gelu_grad, sigmoid};
use super::{ParamId, ParamStore, Real};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Contiguous block of rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }
}

/// Pairs query blocks with key/value blocks. Query block `i` attends only to
/// key block `i`; with `causal`, query row `t` sees key rows `0..=t`.
#[derive(Clone, Debug)]
pub struct AttentionLayout {
    pub queries: Vec<Span>,
    pub keys: Vec<Span>,
    pub causal: bool,
}

/// Blend weight for [`Graph::gated_quantize`].
#[derive(Clone, Copy, Debug)]
pub enum Gate<T> {
    /// Endpoint forced by an ablation: 0 emits the code, 1 emits the input.
    Fixed(T),
    /// Learned weight, a `1 x 1` or `1 x heads` node with values in (0, 1).
    Learned(Var),
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<f64> },
    GatherRows { src: Var, index: Vec<usize> },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Attention { q: Var, k: Var, v: Var, layout: AttentionLayout, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Sum(Var),
    SumSquares(Var),
    GatedQuantize { e: Var, codes: Vec<T>, gate: Gate<T>, heads: usize },
}

struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    tracked: bool,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    bound: Vec<Option<Var>>,
    grads: Vec<Option<Vec<T>>>,
}

/// Per-parameter gradients extracted after [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T: Real> {
    grads: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(params: &ParamStore<T>) -> Self {
        Self { grads: params.iter().map(|(_, _, t)| vec![T::zero(); t.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g.wide() * g.wide()).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm does not exceed `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = T::narrow(max_norm / norm);
            self.grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
        norm
    }

    /// First parameter holding a non-finite gradient entry.
    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.grads.iter().position(|g| g.iter().any(|v| !v.is_finite())).map(ParamId)
    }

    pub fn apply_to(self, params: &mut ParamStore<T>) -> Result<()> {
        for (i, g) in self.grads.into_iter().enumerate() {
            params.get_mut(ParamId(i)).set_grad(g)?;
        }
        Ok(())
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::new(), bound: vec![None; params.len()], grads: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, tracked: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node { rows, cols, value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &[T] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0].wide()
    }

    /// Gradient of the last backward output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let (rows, cols) = self.params.get(id).dims2();
        let v = self.push(rows, cols, Vec::new(), Op::Param(id), true);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape");
        self.push(rows, cols, value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient without being a stored parameter.
    pub fn variable(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Var {
        assert_eq!(value.len(), rows * cols, "variable shape");
        self.push(rows, cols, value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dimensions");
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let t = self.tracked(a) || self.tracked(b);
        self.push(m, n, out, Op::MatMul(a, b), t)
    }

    /// `a @ b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_nt inner dimensions");
        let out = kernels::matmul_nt(self.value(a), self.value(b), m, k, n);
        let t = self.tracked(a) || self.tracked(b);
        self.push(m, n, out, Op::MatMulNt(a, b), t)
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> (usize, usize, Vec<T>, bool) {
        let (r, c) = self.dims(a);
        assert_eq!((r, c), self.dims(b), "elementwise shapes");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        (r, c, out, self.tracked(a) || self.tracked(b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (r, c, out, t) = self.zip_same(a, b, |x, y| x + y);
        self.push(r, c, out, Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (r, c, out, t) = self.zip_same(a, b, |x, y| x - y);
        self.push(r, c, out, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (r, c, out, t) = self.zip_same(a, b, |x, y| x * y);
        self.push(r, c, out, Op::Mul(a, b), t)
    }

    fn zip_row(&mut self, a: Var, row: Var, f: impl Fn(T, T) -> T) -> (usize, usize, Vec<T>, bool) {
        let (r, c) = self.dims(a);
        assert_eq!(self.dims(row), (1, c), "row broadcast shape");
        let rv = self.value(row);
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|ar| ar.iter().zip(rv).map(|(&x, &y)| f(x, y)))
            .collect();
        (r, c, out, self.tracked(a) || self.tracked(row))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c, out, t) = self.zip_row(a, row, |x, y| x + y);
        self.push(r, c, out, Op::AddRow(a, row), t)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c, out, t) = self.zip_row(a, row, |x, y| x * y);
        self.push(r, c, out, Op::MulRow(a, row), t)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::narrow(s);
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let t = self.tracked(a);
        self.push(r, c, out, Op::Scale(a, s), t)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| T::narrow(gelu(x.wide()))).collect();
        let t = self.tracked(a);
        self.push(r, c, out, Op::Gelu(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| T::narrow(sigmoid(x.wide()))).collect();
        let t = self.tracked(a);
        self.push(r, c, out, Op::Sigmoid(a), t)
    }

    /// Row-wise layer normalization with `1 x cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        const EPS: f64 = 1e-5;
        let (r, c) = self.dims(x);
        assert_eq!(self.dims(gain), (1, c), "layer_norm gain");
        assert_eq!(self.dims(bias), (1, c), "layer_norm bias");
        let (gv, bv) = (self.value(gain), self.value(bias));
        let mut out = Vec::with_capacity(r * c);
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        for row in self.value(x).chunks(c) {
            let mean = kernels::sum(row) / c as f64;
            let var = row.iter().map(|v| (v.wide() - mean).powi(2)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd.push(rs);
            for (j, v) in row.iter().enumerate() {
                let h = (v.wide() - mean) * rs;
                xhat.push(T::narrow(h));
                out.push(T::narrow(h * gv[j].wide() + bv[j].wide()));
            }
        }
        let t = self.tracked(x) || self.tracked(gain) || self.tracked(bias);
        self.push(r, c, out, Op::LayerNorm { x, gain, bias, xhat, rstd }, t)
    }

    /// Output row `i` is row `index[i]` of `src` (embedding lookup, slicing, reordering).
    pub fn gather_rows(&mut self, src: Var, index: Vec<usize>) -> Var {
        let (r, c) = self.dims(src);
        let sv = self.value(src);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in &index {
            assert!(i < r, "gather_rows index {i} out of {r} rows");
            out.extend_from_slice(&sv[i * c..(i + 1) * c]);
        }
        let t = self.tracked(src);
        self.push(index.len(), c, out, Op::GatherRows { src, index }, t)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let c = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims(p);
            assert_eq!(pc, c, "concat_rows column mismatch");
            out.extend_from_slice(self.value(p));
            rows += r;
        }
        let t = parts.iter().any(|&p| self.tracked(p));
        self.push(rows, c, out, Op::ConcatRows(parts.to_vec()), t)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(r * c, rows * cols, "reshape size");
        let out = self.value(a).to_vec();
        let t = self.tracked(a);
        self.push(rows, cols, out, Op::Reshape(a), t)
    }

    /// Multi-head scaled dot-product attention over blocks of rows.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, layout: AttentionLayout) -> Var {
        let (qr, d) = self.dims(q);
        let (kr, dk) = self.dims(k);
        assert_eq!(d, dk, "attention key width");
        assert_eq!(self.dims(v), (kr, d), "attention value shape");
        assert!(heads > 0 && d % heads == 0, "attention heads must divide width");
        assert_eq!(layout.queries.len(), layout.keys.len(), "attention block count");
        for (qs, ks) in layout.queries.iter().zip(&layout.keys) {
            assert!(qs.start + qs.len <= qr && ks.start + ks.len <= kr, "attention span");
            assert!(ks.len > 0, "attention over empty key block");
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![T::zero(); qr * d];
        let probs_len: usize =
            layout.queries.iter().zip(&layout.keys).map(|(a, b)| heads * a.len * b.len).sum();
        let mut probs = vec![0f64; probs_len];
        let mut scores = Vec::new();
        let mut p = Vec::new();
        let mut acc = vec![0f64; dh];
        let mut off = 0;
        for (qs, ks) in layout.queries.iter().zip(&layout.keys) {
            for h in 0..heads {
                for t in 0..qs.len {
                    let qrow = &qv[(qs.start + t) * d + h * dh..][..dh];
                    let kmax = if layout.causal { (t + 1).min(ks.len) } else { ks.len };
                    scores.clear();
                    for j in 0..kmax {
                        scores.push(scale * dot(qrow, &kv[(ks.start + j) * d + h * dh..][..dh]));
                    }
                    p.resize(kmax, 0.0);
                    kernels::softmax_into(&scores, &mut p);
                    probs[off + (h * qs.len + t) * ks.len..][..kmax].copy_from_slice(&p);
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for (j, &pj) in p.iter().enumerate() {
                        let vrow = &vv[(ks.start + j) * d + h * dh..][..dh];
                        for (a, &x) in acc.iter_mut().zip(vrow) {
                            *a += pj * x.wide();
                        }
                    }
                    for (o, &a) in out[(qs.start + t) * d + h * dh..][..dh].iter_mut().zip(&acc) {
                        *o = T::narrow(a);
                    }
                }
            }
            off += heads * qs.len * ks.len;
        }
        let t = self.tracked(q) || self.tracked(k) || self.tracked(v);
        self.push(qr, d, out, Op::Attention { q, k, v, layout, heads, probs }, t)
    }

    /// Summed negative log-likelihood of `targets` (one per row) under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let (r, c) = self.dims(logits);
        assert_eq!(targets.len(), r, "one target per logit row");
        let mut probs = Vec::with_capacity(r * c);
        let mut total = 0.0;
        for (row, &y) in self.value(logits).chunks(c).zip(&targets) {
            assert!(y < c, "target {y} outside {c} classes");
            let lp = kernels::log_softmax(row);
            total -= lp[y];
            probs.extend(lp.iter().map(|l| l.exp()));
        }
        let t = self.tracked(logits);
        self.push(1, 1, vec![T::narrow(total)], Op::CrossEntropy { logits, targets, probs }, t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = kernels::sum(self.value(a));
        let t = self.tracked(a);
        self.push(1, 1, vec![T::narrow(s)], Op::Sum(a), t)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = dot(self.value(a), self.value(a));
        let t = self.tracked(a);
        self.push(1, 1, vec![T::narrow(s)], Op::SumSquares(a), t)
    }

    /// `z = gate * e + (1 - gate) * codes`, row `r` using the gate of head `r % heads`.
    ///
    /// The codes are constants; the backward pass hands `dz` to `e` unchanged,
    /// which is the straight-through estimator for the quantizer.
    pub fn gated_quantize(&mut self, e: Var, codes: Vec<T>, gate: Gate<T>, heads: usize) -> Var {
        let (r, c) = self.dims(e);
        assert_eq!(codes.len(), r * c, "codes shape");
        assert!(heads > 0 && r % heads == 0, "rows must be a multiple of heads");
        let ev = self.value(e);
        let out: Vec<T> = match gate {
            Gate::Fixed(a) if a == T::zero() => codes.clone(),
            Gate::Fixed(a) if a == T::one() => ev.to_vec(),
            Gate::Fixed(a) => blend(ev, &codes, c, heads, |_| a),
            Gate::Learned(g) => {
                let (gr, gc) = self.dims(g);
                assert!(gr == 1 && (gc == 1 || gc == heads), "gate shape");
                let gv = self.value(g);
                blend(ev, &codes, c, heads, |h| if gc == 1 { gv[0] } else { gv[h] })
            }
        };
        let t = self.tracked(e) || matches!(gate, Gate::Learned(g) if self.tracked(g));
        self.push(r, c, out, Op::GatedQuantize { e, codes, gate, heads }, t)
    }

    /// Reverse pass from a scalar output; gradients of every node are kept.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.dims(output) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got {:?}",
                self.dims(output)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);
        for i in (0..=output.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Parameter gradients of the last backward pass (zeros where unreachable).
    pub fn param_grads(&self) -> Gradients<T> {
        let mut out = Gradients::zeros(self.params);
        for (id, v) in self.bound.iter().enumerate() {
            if let Some(g) = v.and_then(|v| self.grad(v)) {
                out.grads[id].copy_from_slice(g);
            }
        }
        out
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if self.tracked(*a) {
                    let da = kernels::matmul_nt(g, self.value(*b), m, n, k);
                    add_into(slot(grads, *a, m * k), &da);
                }
                if self.tracked(*b) {
                    let db = kernels::matmul_tn(self.value(*a), g, m, k, n);
                    add_into(slot(grads, *b, k * n), &db);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if self.tracked(*a) {
                    let da = kernels::matmul(g, self.value(*b), m, n, k);
                    add_into(slot(grads, *a, m * k), &da);
                }
                if self.tracked(*b) {
                    let db = kernels::matmul_tn(g, self.value(*a), m, n, k);
                    add_into(slot(grads, *b, n * k), &db);
                }
            }
            Op::Add(a, b) => {
                for (v, neg) in [(*a, false), (*b, false)] {
                    if self.tracked(v) {
                        acc_signed(slot(grads, v, g.len()), g, neg);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, neg) in [(*a, false), (*b, true)] {
                    if self.tracked(v) {
                        acc_signed(slot(grads, v, g.len()), g, neg);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.tracked(v) {
                        let ov = self.value(other);
                        let s = slot(grads, v, g.len());
                        for ((d, &gi), &o) in s.iter_mut().zip(g).zip(ov) {
                            *d += gi * o;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.tracked(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.tracked(*row) {
                    let cs = column_sums(g, cols, |_, gi| gi.wide());
                    add_wide(slot(grads, *row, cols), &cs);
                }
            }
            Op::MulRow(a, row) => {
                let rv = self.value(*row);
                if self.tracked(*a) {
                    let s = slot(grads, *a, g.len());
                    for (idx, (d, &gi)) in s.iter_mut().zip(g).enumerate() {
                        *d += gi * rv[idx % cols];
                    }
                }
                if self.tracked(*row) {
                    let av = self.value(*a);
                    let cs = column_sums(g, cols, |idx, gi| gi.wide() * av[idx].wide());
                    add_wide(slot(grads, *row, cols), &cs);
                }
            }
            Op::Scale(a, s) => {
                if self.tracked(*a) {
                    for (d, &gi) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                        *d += gi * *s;
                    }
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                for ((d, &gi), &x) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(av) {
                    *d += T::narrow(gi.wide() * gelu_grad(x.wide()));
                }
            }
            Op::Sigmoid(a) => {
                for ((d, &gi), &y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(&node.value) {
                    *d += gi * y * (T::one() - y);
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let gv = self.value(*gain);
                if self.tracked(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let hr = &xhat[r * cols..(r + 1) * cols];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..cols {
                            let dh = gr[j].wide() * gv[j].wide();
                            mean_d += dh;
                            mean_dh += dh * hr[j].wide();
                        }
                        mean_d /= cols as f64;
                        mean_dh /= cols as f64;
                        for j in 0..cols {
                            let dh = gr[j].wide() * gv[j].wide();
                            dx[r * cols + j] =
                                T::narrow(rstd[r] * (dh - mean_d - hr[j].wide() * mean_dh));
                        }
                    }
                    add_into(slot(grads, *x, g.len()), &dx);
                }
                if self.tracked(*gain) {
                    let cs = column_sums(g, cols, |idx, gi| gi.wide() * xhat[idx].wide());
                    add_wide(slot(grads, *gain, cols), &cs);
                }
                if self.tracked(*bias) {
                    let cs = column_sums(g, cols, |_, gi| gi.wide());
                    add_wide(slot(grads, *bias, cols), &cs);
                }
            }
            Op::GatherRows { src, index } => {
                let (sr, sc) = self.dims(*src);
                let s = slot(grads, *src, sr * sc);
                for (r, &i) in index.iter().enumerate() {
                    for (d, &gi) in s[i * sc..(i + 1) * sc].iter_mut().zip(&g[r * sc..(r + 1) * sc]) {
                        *d += gi;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (pr, pc) = self.dims(p);
                    if self.tracked(p) {
                        add_into(slot(grads, p, pr * pc), &g[off..off + pr * pc]);
                    }
                    off += pr * pc;
                }
            }
            Op::Reshape(a) => add_into(slot(grads, *a, g.len()), g),
            Op::Attention { q, k, v, layout, heads, probs } => {
                self.attention_backward(*q, *k, *v, layout, *heads, probs, g, grads)
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let (_, c) = self.dims(*logits);
                let go = g[0].wide();
                let s = slot(grads, *logits, probs.len());
                for (r, &y) in targets.iter().enumerate() {
                    for j in 0..c {
                        let ind = if j == y { 1.0 } else { 0.0 };
                        s[r * c + j] += T::narrow(go * (probs[r * c + j] - ind));
                    }
                }
            }
            Op::Sum(a) => {
                let go = g[0];
                slot(grads, *a, self.value(*a).len()).iter_mut().for_each(|d| *d += go);
            }
            Op::SumSquares(a) => {
                let two_g = g[0] + g[0];
                let av = self.value(*a);
                for (d, &x) in slot(grads, *a, av.len()).iter_mut().zip(av) {
                    *d += two_g * x;
                }
            }
            Op::GatedQuantize { e, codes, gate, heads } => {
                if self.tracked(*e) {
                    add_into(slot(grads, *e, g.len()), g);
                }
                if let Gate::Learned(gv) = gate {
                    if self.tracked(*gv) {
                        let ev = self.value(*e);
                        let gc = self.dims(*gv).1;
                        let mut dgate = vec![0f64; gc];
                        for r in 0..rows {
                            let h = if gc == 1 { 0 } else { r % heads };
                            for j in r * cols..(r + 1) * cols {
                                dgate[h] += g[j].wide() * (ev[j].wide() - codes[j].wide());
                            }
                        }
                        add_wide(slot(grads, *gv, gc), &dgate);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        layout: &AttentionLayout,
        heads: usize,
        probs: &[f64],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (qr, d) = self.dims(q);
        let kr = self.dims(k).0;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dq = vec![0f64; qr * d];
        let mut dk = vec![0f64; kr * d];
        let mut dv = vec![0f64; kr * d];
        let mut dp = Vec::new();
        let mut off = 0;
        for (qs, ks) in layout.queries.iter().zip(&layout.keys) {
            for h in 0..heads {
                for t in 0..qs.len {
                    let kmax = if layout.causal { (t + 1).min(ks.len) } else { ks.len };
                    let p = &probs[off + (h * qs.len + t) * ks.len..][..kmax];
                    let qi = (qs.start + t) * d + h * dh;
                    let go = &g[qi..qi + dh];
                    dp.clear();
                    for j in 0..kmax {
                        dp.push(dot(go, &vv[(ks.start + j) * d + h * dh..][..dh]));
                    }
                    let mix: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    for j in 0..kmax {
                        let kj = (ks.start + j) * d + h * dh;
                        let ds = p[j] * (dp[j] - mix) * scale;
                        for c in 0..dh {
                            dq[qi + c] += ds * kv[kj + c].wide();
                            dk[kj + c] += ds * qv[qi + c].wide();
                            dv[kj + c] += p[j] * go[c].wide();
                        }
                    }
                }
            }
            off += heads * qs.len * ks.len;
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if self.tracked(var) {
                add_wide(slot(grads, var, buf.len()), &buf);
            }
        }
    }
}

fn blend<T: Real>(e: &[T], codes: &[T], cols: usize, heads: usize, gate: impl Fn(usize) -> T) -> Vec<T> {
    e.iter()
        .zip(codes)
        .enumerate()
        .map(|(idx, (&x, &q))| {
            let a = gate((idx / cols) % heads);
            a * x + (T::one() - a) * q
        })
        .collect()
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn acc_signed<T: Real>(dst: &mut [T], src: &[T], negate: bool) {
    if negate {
        dst.iter_mut().zip(src).for_each(|(d, &s)| *d -= s);
    } else {
        add_into(dst, src);
    }
}

fn add_wide<T: Real>(dst: &mut [T], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += T::narrow(s);
    }
}

fn column_sums<T: Real>(g: &[T], cols: usize, f: impl Fn(usize, T) -> f64) -> Vec<f64> {
    let mut out = vec![0f64; cols];
    for (idx, &gi) in g.iter().enumerate() {
        out[idx % cols] += f(idx, gi);
    }
    out
}
