//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! Operations are appended to a [`Tape`] as the forward pass runs; calling
//! [`Tape::backward`] walks the record in reverse and returns exact gradients
//! for every node that depends on a gradient leaf. Inputs of a node always
//! have smaller indices than the node itself, so a single reverse sweep is a
//! valid topological order.

use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            // relu(0) = 0 and its derivative there is taken as 0.
            Activation::Relu => {
                if x > F::zero() {
                    x
                } else {
                    F::zero()
                }
            }
        }
    }

    /// Derivative expressed through the output value `y = apply(x)`.
    #[inline]
    fn derivative_from_output<F: Real>(self, y: F) -> F {
        match self {
            Activation::Sigmoid => y * (F::one() - y),
            Activation::Tanh => F::one() - y * y,
            Activation::Relu => {
                if y > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    // Split on sign so exp never overflows.
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Numerically stable softmax.
pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits
        .iter()
        .copied()
        .fold(F::neg_infinity(), |a, b| if b > a { b } else { a });
    let exps: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    RowDot {
        x: Var,
        v: Var,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulColumn {
        x: Var,
        s: Var,
    },
    Scale {
        x: Var,
        factor: F,
    },
    ConcatCols {
        parts: Vec<Var>,
        widths: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    Segment {
        x: Var,
        seg: Vec<usize>,
        counts: Vec<usize>,
        kind: Reduce,
        /// For `Max`: source row of each output cell.
        argmax: Vec<usize>,
    },
    ReduceAxis {
        x: Var,
        axis: usize,
        kind: Reduce,
        argmax: Vec<usize>,
    },
    SumAll {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    SoftmaxNll {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<F>,
    },
    KlSparsity {
        rho_hat: Var,
        rho: F,
        clamped: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (if any) into `target.grad`.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor<F>) -> Result<()> {
        match self.get(v) {
            Some(g) => target.accumulate_grad(g),
            None => {
                let zeros = vec![F::zero(); target.len()];
                target.accumulate_grad(&zeros)
            }
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Record of a forward computation.
#[derive(Debug)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    /// Hash of every non-smooth decision taken so far (relu side, argmax
    /// winners, clamping). Two evaluations with the same signature lie on
    /// the same smooth piece of the function.
    kinks: u64,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            kinks: FNV_OFFSET,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    fn mix(&mut self, word: u64) {
        for byte in word.to_le_bytes() {
            self.kinks ^= byte as u64;
            self.kinks = self.kinks.wrapping_mul(FNV_PRIME);
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor; it receives gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn constant(&mut self, mut t: Tensor<F>) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> F {
        self.nodes[v.0].value.data()[0]
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.as_matrix_dims()
    }

    fn is_vector(&self, v: Var) -> bool {
        self.nodes[v.0].value.shape().len() <= 1
    }

    /// `x · Wᵀ + b` for `x` of shape `[n]` or `[r, n]` and `W` of shape `[m, n]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 2 || xs.is_empty() || xs.len() > 2 || *xs.last().unwrap() != ws[1] {
            return Err(Error::dim(format!(
                "affine: input {xs:?} does not conform to weight {ws:?}"
            )));
        }
        if let Some(b) = b {
            let bs = self.value(b).shape();
            if bs != [ws[0]] {
                return Err(Error::dim(format!(
                    "affine: bias {bs:?} does not conform to weight {ws:?}"
                )));
            }
        }
        let (rows, n) = self.dims(x);
        let m = ws[0];
        let mut out = vec![F::zero(); rows * m];
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let bd = b.map(|b| self.value(b).data());
            for r in 0..rows {
                let xr = &xd[r * n..(r + 1) * n];
                let orow = &mut out[r * m..(r + 1) * m];
                for j in 0..m {
                    let mut acc = dot(xr, &wd[j * n..(j + 1) * n]);
                    if let Some(bd) = bd {
                        acc = acc + bd[j];
                    }
                    orow[j] = acc;
                }
            }
        }
        let shape = if xs.len() == 1 { vec![m] } else { vec![rows, m] };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Affine { x, w, b }, &inputs))
    }

    /// Per-row dot product with a vector: `[r, n] · [n] -> [r]`.
    pub fn row_dot(&mut self, x: Var, v: Var) -> Result<Var> {
        let (rows, n) = self.dims(x);
        if self.value(v).shape() != [n] {
            return Err(Error::dim(format!(
                "row_dot: rows of {:?} against vector {:?}",
                self.value(x).shape(),
                self.value(v).shape()
            )));
        }
        let out: Vec<F> = {
            let xd = self.value(x).data();
            let vd = self.value(v).data();
            (0..rows).map(|r| dot(&xd[r * n..(r + 1) * n], vd)).collect()
        };
        Ok(self.push(Tensor::vector(out), Op::RowDot { x, v }, &[x, v]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let input = self.value(x);
        let out: Vec<F> = input.data().iter().map(|&z| kind.apply(z)).collect();
        let shape = input.shape().to_vec();
        if kind == Activation::Relu {
            let words: Vec<u64> = input
                .data()
                .iter()
                .map(|&z| (z > F::zero()) as u64 | (((z == F::zero()) as u64) << 1))
                .collect();
            for w in words {
                self.mix(w);
            }
        }
        let t = Tensor::new(shape, out).expect("shape preserved");
        self.push(t, Op::Act { x, kind }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Scales each row of `x` (`[r, n]`) by the matching entry of `s` (`[r]`).
    pub fn mul_column(&mut self, x: Var, s: Var) -> Result<Var> {
        let (rows, n) = self.dims(x);
        if self.value(s).len() != rows {
            return Err(Error::dim(format!(
                "mul_column: {:?} against row scales {:?}",
                self.value(x).shape(),
                self.value(s).shape()
            )));
        }
        let t = {
            let xd = self.value(x).data();
            let sd = self.value(s).data();
            let data = (0..rows * n).map(|k| xd[k] * sd[k / n]).collect();
            Tensor::new(self.value(x).shape().to_vec(), data)?
        };
        Ok(self.push(t, Op::MulColumn { x, s }, &[x, s]))
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let input = self.value(x);
        let data = input.data().iter().map(|&z| z * factor).collect();
        let t = Tensor::new(input.shape().to_vec(), data).expect("shape preserved");
        self.push(t, Op::Scale { x, factor }, &[x])
    }

    /// Concatenates along the last axis. Vectors concatenate into a vector;
    /// matrices must agree on row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat of zero tensors"));
        }
        let vector = parts.iter().all(|&p| self.is_vector(p));
        let rows = self.dims(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows || self.is_vector(p) != vector {
                return Err(Error::dim(format!(
                    "concat: {:?} does not line up with {:?}",
                    self.value(p).shape(),
                    self.value(parts[0]).shape()
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let shape = if vector { vec![total] } else { vec![rows, total] };
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::ConcatCols {
                parts: parts.to_vec(),
                widths,
            },
            parts,
        ))
    }

    /// Columns `start..start+len` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, n) = self.dims(x);
        if start + len > n || len == 0 {
            return Err(Error::dim(format!(
                "slice {start}..{} out of width {n}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&self.value(x).data()[r * n + start..r * n + start + len]);
        }
        let shape = if self.is_vector(x) { vec![len] } else { vec![rows, len] };
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::SliceCols { x, start }, &[x]))
    }

    /// Stacks matrices with equal column count on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_rows of zero tensors"));
        }
        let cols = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(Error::dim(format!(
                    "concat_rows: width {c} against {cols}"
                )));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(t, Op::ConcatRows { parts: parts.to_vec() }, parts))
    }

    /// Looks up rows of `table` (`[V, D]`). Consecutive groups of `group`
    /// indices are laid side by side, giving `[idx.len() / group, group·D]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize], group: usize) -> Result<Var> {
        let (v, d) = self.dims(table);
        if group == 0 || idx.len() % group != 0 {
            return Err(Error::dim(format!(
                "gather: {} indices do not split into groups of {group}",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(Error::Index(format!("row {bad} of a table with {v} rows")));
        }
        let mut out = Vec::with_capacity(idx.len() * d);
        {
            let td = self.value(table).data();
            for &i in idx {
                out.extend_from_slice(&td[i * d..(i + 1) * d]);
            }
        }
        let t = Tensor::new(vec![idx.len() / group, group * d], out)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        ))
    }

    /// Reduces the rows of `x` that share a segment id. A vector input is
    /// treated as a column and yields a vector of length `nseg`.
    pub fn segment_reduce(
        &mut self,
        x: Var,
        seg: &[usize],
        nseg: usize,
        kind: Reduce,
    ) -> Result<Var> {
        let vector = self.is_vector(x);
        let (rows, cols) = if vector {
            (self.value(x).len(), 1)
        } else {
            self.dims(x)
        };
        if seg.len() != rows {
            return Err(Error::dim(format!(
                "segment ids ({}) do not match rows ({rows})",
                seg.len()
            )));
        }
        let mut counts = vec![0usize; nseg];
        for &s in seg {
            if s >= nseg {
                return Err(Error::Index(format!("segment {s} of {nseg}")));
            }
            counts[s] += 1;
        }
        if kind != Reduce::Sum {
            if let Some(empty) = counts.iter().position(|&c| c == 0) {
                return Err(Error::dim(format!("segment {empty} is empty")));
            }
        }
        let xd = self.value(x).data();
        let mut out = vec![F::zero(); nseg * cols];
        let mut argmax = Vec::new();
        match kind {
            Reduce::Sum | Reduce::Mean => {
                for (r, &s) in seg.iter().enumerate() {
                    let o = &mut out[s * cols..(s + 1) * cols];
                    for (oc, &xc) in o.iter_mut().zip(&xd[r * cols..(r + 1) * cols]) {
                        *oc = *oc + xc;
                    }
                }
                if kind == Reduce::Mean {
                    for (s, &c) in counts.iter().enumerate() {
                        let inv = F::from_f64(c as f64);
                        out[s * cols..(s + 1) * cols]
                            .iter_mut()
                            .for_each(|o| *o = *o / inv);
                    }
                }
            }
            Reduce::Max => {
                argmax = vec![usize::MAX; nseg * cols];
                for (r, &s) in seg.iter().enumerate() {
                    for c in 0..cols {
                        let cell = s * cols + c;
                        let v = xd[r * cols + c];
                        // strict comparison keeps the earliest row on ties
                        if argmax[cell] == usize::MAX || v > out[cell] {
                            out[cell] = v;
                            argmax[cell] = r;
                        }
                    }
                }
            }
        }
        let shape = if vector { vec![nseg] } else { vec![nseg, cols] };
        let t = Tensor::new(shape, out)?;
        for &a in &argmax {
            self.mix(a as u64);
        }
        Ok(self.push(
            t,
            Op::Segment {
                x,
                seg: seg.to_vec(),
                counts,
                kind,
                argmax,
            },
            &[x],
        ))
    }

    /// Reduces a matrix along `axis` (0: over rows, 1: over columns).
    pub fn reduce_axis(&mut self, x: Var, axis: usize, kind: Reduce) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 2 || axis > 1 {
            return Err(Error::dim(format!(
                "reduce over axis {axis} of {shape:?}"
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if shape[axis] == 0 {
            return Err(Error::dim(format!("reduction over empty axis {axis}")));
        }
        let (outer, inner) = if axis == 0 { (cols, rows) } else { (rows, cols) };
        let at = |o: usize, i: usize| if axis == 0 { i * cols + o } else { o * cols + i };
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer);
        let mut argmax = Vec::new();
        for o in 0..outer {
            match kind {
                Reduce::Sum | Reduce::Mean => {
                    let mut acc = F::zero();
                    for i in 0..inner {
                        acc = acc + xd[at(o, i)];
                    }
                    if kind == Reduce::Mean {
                        acc = acc / F::from_f64(inner as f64);
                    }
                    out.push(acc);
                }
                Reduce::Max => {
                    let mut best = 0;
                    for i in 1..inner {
                        if xd[at(o, i)] > xd[at(o, best)] {
                            best = i;
                        }
                    }
                    out.push(xd[at(o, best)]);
                    argmax.push(at(o, best));
                }
            }
        }
        for &a in &argmax {
            self.mix(a as u64);
        }
        let t = Tensor::vector(out);
        Ok(self.push(
            t,
            Op::ReduceAxis {
                x,
                axis,
                kind,
                argmax,
            },
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: F = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::SumAll { x }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape { x }, &[x]))
    }

    /// Summed negative log-likelihood of `targets` under a row-wise softmax.
    /// `logits` is `[K]` (one target) or `[r, K]` (one target per row).
    pub fn softmax_nll(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (rows, k) = self.dims(logits);
        if targets.len() != rows {
            return Err(Error::dim(format!(
                "{} targets for {rows} rows of logits",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Index(format!("target {bad} with {k} classes")));
        }
        let mut probs = Vec::with_capacity(rows * k);
        let mut loss = F::zero();
        {
            let ld = self.value(logits).data();
            for (r, &target) in targets.iter().enumerate() {
                let row = &ld[r * k..(r + 1) * k];
                let max = row
                    .iter()
                    .copied()
                    .fold(F::neg_infinity(), |a, b| if b > a { b } else { a });
                let total: F = row.iter().map(|&z| (z - max).exp()).sum();
                let log_z = max + total.ln();
                loss = loss + (log_z - row[target]);
                probs.extend(row.iter().map(|&z| (z - log_z).exp()));
            }
        }
        let op = Op::SoftmaxNll {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// `Σ_t KL(ρ ‖ ρ̂_t)` with each `ρ̂_t` clamped into `(eps, 1 − eps)`.
    /// Clamped entries pass no gradient.
    pub fn kl_sparsity(&mut self, rho_hat: Var, rho: F, eps: F) -> Result<Var> {
        if !(rho > F::zero() && rho < F::one()) {
            return Err(Error::Config(format!("sparsity rho {rho} is outside (0, 1)")));
        }
        let lo = eps;
        let hi = F::one() - eps;
        let mut clamped = Vec::new();
        let mut total = F::zero();
        for &q in self.value(rho_hat).data() {
            let c = q < lo || q > hi;
            let q = q.max(lo).min(hi);
            clamped.push(c);
            total = total
                + rho * (rho / q).ln()
                + (F::one() - rho) * ((F::one() - rho) / (F::one() - q)).ln();
        }
        for &c in &clamped {
            self.mix(c as u64 | 4);
        }
        let op = Op::KlSparsity {
            rho_hat,
            rho,
            clamped,
        };
        Ok(self.push(Tensor::scalar(total), op, &[rho_hat]))
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// depends on a gradient leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(format!(
                "backward from non-scalar of shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.value(loss).is_finite() {
            return Err(Error::NonFinite("loss is not finite".into()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<F>, gy: &[F], grads: &mut [Option<Vec<F>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (rows, n) = self.dims(*x);
                let m = self.value(*w).shape()[0];
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                if wants(*x) {
                    let gx = slot(grads, *x, rows * n);
                    for r in 0..rows {
                        let gxr = &mut gx[r * n..(r + 1) * n];
                        for j in 0..m {
                            let g = gy[r * m + j];
                            if g != F::zero() {
                                axpy(g, &wd[j * n..(j + 1) * n], gxr);
                            }
                        }
                    }
                }
                if wants(*w) {
                    let gw = slot(grads, *w, m * n);
                    for r in 0..rows {
                        let xr = &xd[r * n..(r + 1) * n];
                        for j in 0..m {
                            let g = gy[r * m + j];
                            if g != F::zero() {
                                axpy(g, xr, &mut gw[j * n..(j + 1) * n]);
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let gb = slot(grads, *b, m);
                        for r in 0..rows {
                            for j in 0..m {
                                gb[j] = gb[j] + gy[r * m + j];
                            }
                        }
                    }
                }
            }
            Op::RowDot { x, v } => {
                let (rows, n) = self.dims(*x);
                let xd = self.value(*x).data();
                let vd = self.value(*v).data();
                if wants(*x) {
                    let gx = slot(grads, *x, rows * n);
                    for r in 0..rows {
                        axpy(gy[r], vd, &mut gx[r * n..(r + 1) * n]);
                    }
                }
                if wants(*v) {
                    let gv = slot(grads, *v, n);
                    for r in 0..rows {
                        axpy(gy[r], &xd[r * n..(r + 1) * n], gv);
                    }
                }
            }
            Op::Act { x, kind } => {
                let y = node.value.data();
                let gx = slot(grads, *x, y.len());
                for ((g, &yi), &gyi) in gx.iter_mut().zip(y).zip(gy) {
                    *g = *g + gyi * kind.derivative_from_output(yi);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        let g = slot(grads, v, gy.len());
                        g.iter_mut().zip(gy).for_each(|(g, &d)| *g = *g + d);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    let g = slot(grads, *a, gy.len());
                    g.iter_mut().zip(gy).for_each(|(g, &d)| *g = *g + d);
                }
                if wants(*b) {
                    let g = slot(grads, *b, gy.len());
                    g.iter_mut().zip(gy).for_each(|(g, &d)| *g = *g - d);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    let g = slot(grads, *a, gy.len());
                    for i in 0..gy.len() {
                        g[i] = g[i] + gy[i] * bd[i];
                    }
                }
                if wants(*b) {
                    let g = slot(grads, *b, gy.len());
                    for i in 0..gy.len() {
                        g[i] = g[i] + gy[i] * ad[i];
                    }
                }
            }
            Op::MulColumn { x, s } => {
                let (rows, n) = self.dims(*x);
                let (xd, sd) = (self.value(*x).data(), self.value(*s).data());
                if wants(*x) {
                    let g = slot(grads, *x, rows * n);
                    for k in 0..rows * n {
                        g[k] = g[k] + gy[k] * sd[k / n];
                    }
                }
                if wants(*s) {
                    let g = slot(grads, *s, rows);
                    for r in 0..rows {
                        g[r] = g[r] + dot(&gy[r * n..(r + 1) * n], &xd[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::Scale { x, factor } => {
                let g = slot(grads, *x, gy.len());
                g.iter_mut().zip(gy).for_each(|(g, &d)| *g = *g + d * *factor);
            }
            Op::ConcatCols { parts, widths } => {
                let total: usize = widths.iter().sum();
                let rows = gy.len() / total.max(1);
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    if wants(p) {
                        let g = slot(grads, p, rows * w);
                        for r in 0..rows {
                            let src = &gy[r * total + offset..r * total + offset + w];
                            g[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(g, &d)| *g = *g + d);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, n) = self.dims(*x);
                let len = gy.len() / rows.max(1);
                let g = slot(grads, *x, rows * n);
                for r in 0..rows {
                    let dst = &mut g[r * n + start..r * n + start + len];
                    dst.iter_mut()
                        .zip(&gy[r * len..(r + 1) * len])
                        .for_each(|(g, &d)| *g = *g + d);
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if wants(p) {
                        let g = slot(grads, p, len);
                        g.iter_mut()
                            .zip(&gy[offset..offset + len])
                            .for_each(|(g, &d)| *g = *g + d);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { table, idx } => {
                let (v, d) = self.dims(*table);
                let g = slot(grads, *table, v * d);
                for (q, &i) in idx.iter().enumerate() {
                    g[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&gy[q * d..(q + 1) * d])
                        .for_each(|(g, &dy)| *g = *g + dy);
                }
            }
            Op::Segment {
                x,
                seg,
                counts,
                kind,
                argmax,
            } => {
                let len = self.value(*x).len();
                let cols = len / seg.len().max(1);
                let g = slot(grads, *x, len);
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        for (r, &s) in seg.iter().enumerate() {
                            let scale = if *kind == Reduce::Mean {
                                F::one() / F::from_f64(counts[s] as f64)
                            } else {
                                F::one()
                            };
                            for c in 0..cols {
                                g[r * cols + c] = g[r * cols + c] + gy[s * cols + c] * scale;
                            }
                        }
                    }
                    Reduce::Max => {
                        for (cell, &r) in argmax.iter().enumerate() {
                            let c = cell % cols;
                            g[r * cols + c] = g[r * cols + c] + gy[cell];
                        }
                    }
                }
            }
            Op::ReduceAxis {
                x,
                axis,
                kind,
                argmax,
            } => {
                let shape = self.value(*x).shape();
                let (rows, cols) = (shape[0], shape[1]);
                let g = slot(grads, *x, rows * cols);
                match kind {
                    Reduce::Max => {
                        for (o, &pos) in argmax.iter().enumerate() {
                            g[pos] = g[pos] + gy[o];
                        }
                    }
                    Reduce::Sum | Reduce::Mean => {
                        let inner = if *axis == 0 { rows } else { cols };
                        let scale = if *kind == Reduce::Mean {
                            F::one() / F::from_f64(inner as f64)
                        } else {
                            F::one()
                        };
                        for r in 0..rows {
                            for c in 0..cols {
                                let o = if *axis == 0 { c } else { r };
                                g[r * cols + c] = g[r * cols + c] + gy[o] * scale;
                            }
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                let len = self.value(*x).len();
                let g = slot(grads, *x, len);
                g.iter_mut().for_each(|g| *g = *g + gy[0]);
            }
            Op::Reshape { x } => {
                let g = slot(grads, *x, gy.len());
                g.iter_mut().zip(gy).for_each(|(g, &d)| *g = *g + d);
            }
            Op::SoftmaxNll {
                logits,
                targets,
                probs,
            } => {
                let k = probs.len() / targets.len().max(1);
                let g = slot(grads, *logits, probs.len());
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..k {
                        let one_hot = if c == t { F::one() } else { F::zero() };
                        g[r * k + c] = g[r * k + c] + gy[0] * (probs[r * k + c] - one_hot);
                    }
                }
            }
            Op::KlSparsity {
                rho_hat,
                rho,
                clamped,
            } => {
                let qd = self.value(*rho_hat).data();
                let g = slot(grads, *rho_hat, qd.len());
                for (i, (&q, &c)) in qd.iter().zip(clamped).enumerate() {
                    if !c {
                        let d = -*rho / q + (F::one() - *rho) / (F::one() - q);
                        g[i] = g[i] + gy[0] * d;
                    }
                }
            }
        }
    }
}

fn slot<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut Vec<F> {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
}
