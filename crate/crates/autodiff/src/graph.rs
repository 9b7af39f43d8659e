//! Define-by-run tape. Every op records its inputs plus whatever it needs
//! for the backward pass; `backward` walks the tape in reverse.
//!
//! All tensors on the tape are rank 2; scalars are `1 x 1`.

use crate::error::AutodiffError;
use crate::optim::{Gradients, ParamId, ParameterStore};
use crate::tensor::{gemm, Element, Tensor, View, ViewMut};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMask {
    None,
    /// Query `i` sees keys `0..=i + (n_k - n_q)`.
    Causal,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat { parts: Vec<Var>, axis: usize },
    SelectRows { src: Var, index: Vec<usize> },
    SliceCols { src: Var, start: usize },
    Softmax { src: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
    Sum(Var),
    Mean(Var),
    Mse { pred: Var, target: Vec<T> },
    CrossEntropy { logits: Var, labels: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    MaskedL1 { x: Var, keep: Vec<bool>, count: usize },
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of every tape node reached by `backward`.
pub struct NodeGrads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> NodeGrads<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

pub struct Graph<'p, T> {
    store: &'p ParameterStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    grad_enabled: bool,
}

fn gelu_parts<T: Element>(x: T) -> (T, T) {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044_715);
    let half = T::lit(0.5);
    let u = k * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::lit(3.0) * a * x * x);
    (y, dy)
}

fn softmax_in_place<T: Element>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|x| *x = T::zero());
        return;
    }
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

impl<'p, T: Element> Graph<'p, T> {
    pub fn new(store: &'p ParameterStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            grad_enabled: true,
        }
    }

    /// A tape whose nodes never require gradients.
    pub fn inference(store: &'p ParameterStore<T>) -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(store)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.value(v).shape
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let s = self.shape(v);
        (s[0], s[1])
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_rank2(&self, v: Var) -> Result<(usize, usize), AutodiffError> {
        self.value(v).dims()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        self.check_rank2(a)?;
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::Shape {
                op,
                a: self.shape(a).to_vec(),
                b: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Constant input; gradients do not flow into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var, AutodiffError> {
        t.dims()?;
        Ok(self.push(t, Op::Leaf, &[]))
    }

    /// Free input that receives a gradient (used by gradient checks).
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var, AutodiffError> {
        t.dims()?;
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            needs_grad: self.grad_enabled,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: self.grad_enabled,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).matmul(self.value(b)).map_err(|e| match e {
            AutodiffError::Shape { .. } => AutodiffError::Shape {
                op: "matmul",
                a: self.shape(a).to_vec(),
                b: self.shape(b).to_vec(),
            },
            other => other,
        })?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, AutodiffError> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        Ok(Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip("add", a, b, |p, q| p + q)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip("sub", a, b, |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip("mul", a, b, |p, q| p * q)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (_, m) = self.check_rank2(a)?;
        if self.shape(row) != [1, m] {
            return Err(AutodiffError::Shape {
                op: "add_row",
                a: self.shape(a).to_vec(),
                b: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row).data.clone();
        let mut out = self.value(a).clone();
        for chunk in out.data.chunks_mut(m) {
            for (x, &b) in chunk.iter_mut().zip(&r) {
                *x = *x + b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let (r0, c0) = self.check_rank2(first)?;
        for &p in parts {
            let (r, c) = self.check_rank2(p)?;
            let ok = match axis {
                0 => c == c0,
                1 => r == r0,
                _ => false,
            };
            if !ok {
                return Err(AutodiffError::Shape {
                    op: "concat",
                    a: self.shape(first).to_vec(),
                    b: self.shape(p).to_vec(),
                });
            }
        }
        let out = if axis == 0 {
            let rows: usize = parts.iter().map(|&p| self.dims(p).0).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(&self.value(p).data);
            }
            Tensor { shape: vec![rows, c0], data }
        } else {
            let cols: usize = parts.iter().map(|&p| self.dims(p).1).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for r in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor { shape: vec![r0, cols], data }
        };
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Gathers rows by index; doubles as the embedding lookup.
    pub fn select_rows(&mut self, src: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.check_rank2(src)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(AutodiffError::Invalid {
                op: "select_rows",
                msg: format!("row {bad} out of {r}"),
            });
        }
        let s = self.value(src);
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(s.row(i));
        }
        let out = Tensor {
            shape: vec![index.len(), c],
            data,
        };
        Ok(self.push(
            out,
            Op::SelectRows {
                src,
                index: index.to_vec(),
            },
            &[src],
        ))
    }

    pub fn embedding(&mut self, table: ParamId, ids: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.param(table);
        self.select_rows(t, ids)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.check_rank2(src)?;
        if start > end || end > c {
            return Err(AutodiffError::Invalid {
                op: "slice_cols",
                msg: format!("{start}..{end} of {c} columns"),
            });
        }
        let s = self.value(src);
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&s.row(i)[start..end]);
        }
        let out = Tensor {
            shape: vec![r, end - start],
            data,
        };
        Ok(self.push(out, Op::SliceCols { src, start }, &[src]))
    }

    pub fn softmax(&mut self, src: Var, axis: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.check_rank2(src)?;
        let mut out = self.value(src).clone();
        match axis {
            1 => out.data.chunks_mut(c).for_each(softmax_in_place),
            0 => {
                let mut col = vec![T::zero(); r];
                for j in 0..c {
                    for i in 0..r {
                        col[i] = out.data[i * c + j];
                    }
                    softmax_in_place(&mut col);
                    for i in 0..r {
                        out.data[i * c + j] = col[i];
                    }
                }
            }
            _ => {
                return Err(AutodiffError::Invalid {
                    op: "softmax",
                    msg: format!("axis {axis}"),
                })
            }
        }
        Ok(self.push(out, Op::Softmax { src, axis }, &[src]))
    }

    /// Row-wise layer norm with affine `gamma`, `beta` of shape `1 x m`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, AutodiffError> {
        let (r, c) = self.check_rank2(x)?;
        for p in [gamma, beta] {
            if self.shape(p) != [1, c] {
                return Err(AutodiffError::Shape {
                    op: "layer_norm",
                    a: self.shape(x).to_vec(),
                    b: self.shape(p).to_vec(),
                });
            }
        }
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let n = T::lit(c as f64);
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + T::lit(eps)).sqrt();
            rstd.push(rs);
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat.push(h);
                out.push(h * g.data[j] + b.data[j]);
            }
        }
        let out = Tensor {
            shape: vec![r, c],
            data: out,
        };
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| gelu_parts(x).0);
        self.push(out, Op::Gelu(a), &[a])
    }

    /// Multi-head scaled dot-product attention. `q` is `n_q x C`, `k` and
    /// `v` are `n_k x C`; heads split the channel axis evenly. Returns the
    /// `n_q x C` output and the `heads x n_q x n_k` attention weights.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: AttnMask,
    ) -> Result<Var, AutodiffError> {
        let (nq, c) = self.check_rank2(q)?;
        let (nk, ck) = self.check_rank2(k)?;
        if ck != c || self.shape(v) != [nk, c] {
            return Err(AutodiffError::Shape {
                op: "attention",
                a: self.shape(q).to_vec(),
                b: self.shape(if ck != c { k } else { v }).to_vec(),
            });
        }
        if heads == 0 || c % heads != 0 || (mask == AttnMask::Causal && nk < nq) {
            return Err(AutodiffError::Invalid {
                op: "attention",
                msg: format!("{heads} heads over {c} channels, {nq} queries, {nk} keys"),
            });
        }
        let dh = c / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![T::zero(); heads * nq * nk];
        let mut out = vec![T::zero(); nq * c];
        for h in 0..heads {
            let p = &mut probs[h * nq * nk..(h + 1) * nq * nk];
            gemm(
                scale,
                View::col_block(&qv.data, nq, c, h * dh, dh),
                View::col_block(&kv.data, nk, c, h * dh, dh).t(),
                T::zero(),
                ViewMut::row_major(p, nq, nk),
            );
            for (i, row) in p.chunks_mut(nk).enumerate() {
                if mask == AttnMask::Causal {
                    let visible = i + (nk - nq) + 1;
                    row[visible..].iter_mut().for_each(|x| *x = T::neg_infinity());
                }
                softmax_in_place(row);
            }
            gemm(
                T::one(),
                View::row_major(p, nq, nk),
                View::col_block(&vv.data, nk, c, h * dh, dh),
                T::zero(),
                ViewMut::col_block(&mut out, nq, c, h * dh, dh),
            );
        }
        let out = Tensor {
            shape: vec![nq, c],
            data: out,
        };
        Ok(self.push(out, Op::Attention { q, k, v, heads, probs }, &[q, k, v]))
    }

    /// Attention weights recorded by an attention node, `heads x n_q x n_k`
    /// flattened.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().copied().sum::<T>() / T::lit(t.numel().max(1) as f64);
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var, AutodiffError> {
        self.check_rank2(pred)?;
        if self.shape(pred) != target.shape.as_slice() {
            return Err(AutodiffError::Shape {
                op: "mse",
                a: self.shape(pred).to_vec(),
                b: target.shape.clone(),
            });
        }
        let p = self.value(pred);
        let n = T::lit(p.numel().max(1) as f64);
        let loss = p
            .data
            .iter()
            .zip(&target.data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data.clone(),
            },
            &[pred],
        ))
    }

    /// Mean token cross-entropy over rows whose label is `Some`. All rows
    /// ignored gives a zero loss.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[Option<usize>]) -> Result<Var, AutodiffError> {
        let (r, c) = self.check_rank2(logits)?;
        if labels.len() != r {
            return Err(AutodiffError::Shape {
                op: "cross_entropy",
                a: self.shape(logits).to_vec(),
                b: vec![labels.len()],
            });
        }
        if let Some(bad) = labels.iter().flatten().find(|&&l| l >= c) {
            return Err(AutodiffError::Invalid {
                op: "cross_entropy",
                msg: format!("label {bad} out of {c} classes"),
            });
        }
        let mut probs = self.value(logits).data.clone();
        probs.chunks_mut(c).for_each(softmax_in_place);
        let lv = self.value(logits);
        let mut total = T::zero();
        let mut count = 0;
        for (i, l) in labels.iter().enumerate() {
            if let Some(l) = *l {
                let row = lv.row(i);
                let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
                total = total + lse - row[l];
                count += 1;
            }
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::lit(count as f64)
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                count,
            },
            &[logits],
        ))
    }

    /// Mean of `|x|` over entries with `keep` set; nothing kept gives 0.
    pub fn masked_l1(&mut self, x: Var, keep: &[bool]) -> Result<Var, AutodiffError> {
        self.check_rank2(x)?;
        let xv = self.value(x);
        if keep.len() != xv.numel() {
            return Err(AutodiffError::Shape {
                op: "masked_l1",
                a: xv.shape.clone(),
                b: vec![keep.len()],
            });
        }
        let count = keep.iter().filter(|&&k| k).count();
        let total: T = xv
            .data
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v.abs())
            .sum();
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::lit(count as f64)
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedL1 {
                x,
                keep: keep.to_vec(),
                count,
            },
            &[x],
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<NodeGrads<T>, AutodiffError> {
        if self.shape(loss) != [1, 1] {
            return Err(AutodiffError::Shape {
                op: "backward",
                a: self.shape(loss).to_vec(),
                b: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(NodeGrads { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(&node.op, Var(i), &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(NodeGrads { grads })
    }

    /// Adds the gradients of all parameter leaves into `out`.
    pub fn accumulate_params(&self, node_grads: &NodeGrads<T>, out: &mut Gradients<T>) {
        for (id, v) in self.param_vars.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = node_grads.of(*v) {
                    out.add_to(ParamId(id), g);
                }
            }
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut Tensor<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = &self.value(v).shape;
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn acc_with(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl Fn(usize) -> T) {
        if let Some(buf) = self.grad_buf(grads, v) {
            for (i, x) in buf.data.iter_mut().enumerate() {
                *x = *x + f(i);
            }
        }
    }

    fn backprop(&self, op: &Op<T>, out: Var, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = &g.data;
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if let Some(buf) = self.grad_buf(grads, *a) {
                    gemm(
                        T::one(),
                        View::row_major(gd, m, n),
                        bv.view().t(),
                        T::one(),
                        ViewMut::row_major(&mut buf.data, m, k),
                    );
                }
                if let Some(buf) = self.grad_buf(grads, *b) {
                    gemm(
                        T::one(),
                        av.view().t(),
                        View::row_major(gd, m, n),
                        T::one(),
                        ViewMut::row_major(&mut buf.data, k, n),
                    );
                }
            }
            Op::Add(a, b) => {
                self.acc_with(grads, *a, |i| gd[i]);
                self.acc_with(grads, *b, |i| gd[i]);
            }
            Op::Sub(a, b) => {
                self.acc_with(grads, *a, |i| gd[i]);
                self.acc_with(grads, *b, |i| -gd[i]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                self.acc_with(grads, *a, |i| gd[i] * bv[i]);
                self.acc_with(grads, *b, |i| gd[i] * av[i]);
            }
            Op::AddRow(a, row) => {
                self.acc_with(grads, *a, |i| gd[i]);
                let m = g.cols();
                if let Some(buf) = self.grad_buf(grads, *row) {
                    for chunk in gd.chunks(m) {
                        for (x, &y) in buf.data.iter_mut().zip(chunk) {
                            *x = *x + y;
                        }
                    }
                }
            }
            Op::Scale(a, s) => self.acc_with(grads, *a, |i| gd[i] * *s),
            Op::Concat { parts, axis } => {
                let total_cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.dims(p);
                    if let Some(buf) = self.grad_buf(grads, p) {
                        for i in 0..r {
                            for j in 0..c {
                                let src = if *axis == 0 {
                                    (offset + i) * c + j
                                } else {
                                    i * total_cols + offset + j
                                };
                                buf.data[i * c + j] = buf.data[i * c + j] + gd[src];
                            }
                        }
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::SelectRows { src, index } => {
                let c = g.cols();
                if let Some(buf) = self.grad_buf(grads, *src) {
                    for (k, &i) in index.iter().enumerate() {
                        for j in 0..c {
                            buf.data[i * c + j] = buf.data[i * c + j] + gd[k * c + j];
                        }
                    }
                }
            }
            Op::SliceCols { src, start } => {
                let (r, w) = (g.rows(), g.cols());
                let c = self.dims(*src).1;
                if let Some(buf) = self.grad_buf(grads, *src) {
                    for i in 0..r {
                        for j in 0..w {
                            let d = &mut buf.data[i * c + start + j];
                            *d = *d + gd[i * w + j];
                        }
                    }
                }
            }
            Op::Softmax { src, axis } => {
                let y = &self.value(out).data;
                let (r, c) = (g.rows(), g.cols());
                if let Some(buf) = self.grad_buf(grads, *src) {
                    let (outer, inner, stride_o, stride_i) = if *axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
                    for o in 0..outer {
                        let idx = |k: usize| o * stride_o + k * stride_i;
                        let dot: T = (0..inner).map(|k| gd[idx(k)] * y[idx(k)]).sum();
                        for k in 0..inner {
                            let t = idx(k);
                            buf.data[t] = buf.data[t] + y[t] * (gd[t] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (r, c) = (g.rows(), g.cols());
                let gam = &self.value(*gamma).data;
                if let Some(buf) = self.grad_buf(grads, *gamma) {
                    for i in 0..r * c {
                        buf.data[i % c] = buf.data[i % c] + gd[i] * xhat[i];
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *beta) {
                    for i in 0..r * c {
                        buf.data[i % c] = buf.data[i % c] + gd[i];
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *x) {
                    let n = T::lit(c as f64);
                    for i in 0..r {
                        let row = i * c..(i + 1) * c;
                        let dxh: Vec<T> = row.clone().map(|t| gd[t] * gam[t - i * c]).collect();
                        let s1: T = dxh.iter().copied().sum();
                        let s2: T = dxh.iter().zip(&xhat[row.clone()]).map(|(&a, &b)| a * b).sum();
                        for (j, t) in row.enumerate() {
                            let d = rstd[i] / n * (n * dxh[j] - s1 - xhat[t] * s2);
                            buf.data[t] = buf.data[t] + d;
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let av = &self.value(*a).data;
                self.acc_with(grads, *a, |i| gd[i] * gelu_parts(av[i]).1);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (nq, c) = self.dims(*q);
                let nk = self.dims(*k).0;
                let dh = c / heads;
                let scale = T::lit(1.0 / (dh as f64).sqrt());
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut ds = vec![T::zero(); nq * nk];
                for h in 0..*heads {
                    let p = &probs[h * nq * nk..(h + 1) * nq * nk];
                    let go = View::col_block(gd, nq, c, h * dh, dh);
                    if let Some(buf) = self.grad_buf(grads, *v) {
                        gemm(
                            T::one(),
                            View::row_major(p, nq, nk).t(),
                            go,
                            T::one(),
                            ViewMut::col_block(&mut buf.data, nk, c, h * dh, dh),
                        );
                    }
                    let need_qk = self.nodes[q.0].needs_grad || self.nodes[k.0].needs_grad;
                    if !need_qk {
                        continue;
                    }
                    // dP = dO V^T, then the softmax Jacobian row by row.
                    gemm(
                        T::one(),
                        go,
                        View::col_block(&vv.data, nk, c, h * dh, dh).t(),
                        T::zero(),
                        ViewMut::row_major(&mut ds, nq, nk),
                    );
                    for (drow, prow) in ds.chunks_mut(nk).zip(p.chunks(nk)) {
                        let dot: T = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                        for (d, &pp) in drow.iter_mut().zip(prow) {
                            *d = pp * (*d - dot);
                        }
                    }
                    if let Some(buf) = self.grad_buf(grads, *q) {
                        gemm(
                            scale,
                            View::row_major(&ds, nq, nk),
                            View::col_block(&kv.data, nk, c, h * dh, dh),
                            T::one(),
                            ViewMut::col_block(&mut buf.data, nq, c, h * dh, dh),
                        );
                    }
                    if let Some(buf) = self.grad_buf(grads, *k) {
                        gemm(
                            scale,
                            View::row_major(&ds, nq, nk).t(),
                            View::col_block(&qv.data, nq, c, h * dh, dh),
                            T::one(),
                            ViewMut::col_block(&mut buf.data, nk, c, h * dh, dh),
                        );
                    }
                }
            }
            Op::Sum(a) => self.acc_with(grads, *a, |_| gd[0]),
            Op::Mean(a) => {
                let n = T::lit(self.value(*a).numel().max(1) as f64);
                self.acc_with(grads, *a, |_| gd[0] / n);
            }
            Op::Mse { pred, target } => {
                let p = &self.value(*pred).data;
                let n = T::lit(p.len().max(1) as f64);
                let two = T::lit(2.0);
                self.acc_with(grads, *pred, |i| gd[0] * two * (p[i] - target[i]) / n);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let c = self.dims(*logits).1;
                let w = gd[0] / T::lit(*count as f64);
                self.acc_with(grads, *logits, |i| match labels[i / c] {
                    None => T::zero(),
                    Some(l) => {
                        let onehot = if i % c == l { T::one() } else { T::zero() };
                        w * (probs[i] - onehot)
                    }
                });
            }
            Op::MaskedL1 { x, keep, count } => {
                if *count == 0 {
                    return;
                }
                let xv = &self.value(*x).data;
                let w = gd[0] / T::lit(*count as f64);
                self.acc_with(grads, *x, |i| {
                    if keep[i] && xv[i] != T::zero() {
                        w * xv[i].signum()
                    } else {
                        T::zero()
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore<f64> {
        ParameterStore::new()
    }

    #[test]
    fn softmax_of_zero_row_is_uniform() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::zeros(&[2, 4])).unwrap();
        let y = g.softmax(x, 1).unwrap();
        assert!(g.value(y).data.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_v() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::zeros(&[3, 7])).unwrap();
        let l = g.cross_entropy(x, &[Some(1), None, Some(6)]).unwrap();
        assert!((g.value(l).item() - 7f64.ln()).abs() < 1e-12);
        let grads = g.backward(l).unwrap();
        let gx = grads.of(x).unwrap();
        assert!(gx.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fully_ignored_losses_are_zero() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::full(&[2, 3], 0.7)).unwrap();
        let ce = g.cross_entropy(x, &[None, None]).unwrap();
        let l1 = g.masked_l1(x, &[false; 6]).unwrap();
        let total = g.add(ce, l1).unwrap();
        assert_eq!(g.value(total).item(), 0.0);
        let grads = g.backward(total).unwrap();
        assert!(grads.of(x).is_none_or(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn mse_of_equal_tensors_is_zero() {
        let s = store();
        let mut g = Graph::new(&s);
        let t = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let x = g.input(t.clone()).unwrap();
        let l = g.mse(x, &t).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let s = store();
        let mut g = Graph::new(&s);
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
        assert!(g.add_row(a, b).is_err());
    }

    #[test]
    fn causal_attention_hides_future_keys() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g
            .constant(Tensor::matrix(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap())
            .unwrap();
        let y = g.attention(x, x, x, 1, AttnMask::Causal).unwrap();
        let p = g.attention_weights(y).unwrap();
        assert_eq!(&p[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(p[5], 0.0);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(g.value(y).row(0), g.value(x).row(0));
    }

    #[test]
    fn param_nodes_are_shared() {
        let mut s = store();
        let id = s.add("w", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new(&s);
        let a = g.param(id);
        let b = g.param(id);
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let grads = g.backward(y).unwrap();
        let mut out = Gradients::zeros_like(&s);
        g.accumulate_params(&grads, &mut out);
        assert_eq!(out.get(id).item(), 6.0);
    }

    #[test]
    fn inference_tape_records_no_gradients() {
        let mut s = store();
        let id = s.add("w", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::inference(&s);
        let a = g.param(id);
        let y = g.mul(a, a).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.of(a).is_none());
    }
}
