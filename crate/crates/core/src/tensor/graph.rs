use super::gemm::{gemm, gemm_ex, Operand};
use super::{Result, SplitRng, Tensor, TensorError};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Column statistic used by [`Graph::reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stat {
    Min,
    Max,
    Mean,
    Std,
}

/// Added inside the square root of the pooled standard deviation.
pub const STD_EPS: f64 = 1e-12;
/// Added to the row variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    /// `[n]` onto `[m, n]`.
    Row,
    /// `[m, 1]` onto `[m, n]`.
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        scale: f64,
        /// Row-softmaxed scores, one `[s, s]` block per head.
        probs: Vec<f64>,
    },
    Add {
        a: usize,
        b: usize,
        bcast: Bcast,
    },
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    Relu(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    Reduce {
        x: usize,
        stat: Stat,
        argext: Vec<usize>,
        mean: Vec<f64>,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    Transpose(usize),
    Reshape(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

/// Append-only tape of tensor operations.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    requires: Vec<bool>,
    ops: Vec<Op>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, requires: bool, op: Op) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    fn req(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires[v.0])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        let (m, k) = ta.dims2("matmul")?;
        let (k2, n) = tb.dims2("matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            Operand::plain(ta.data(), m, k),
            Operand::plain(tb.data(), k, n),
            0.0,
            &mut out,
        );
        let r = self.req(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, r, Op::MatMul(a.0, b.0)))
    }

    /// `x·w + b` for `x: [m, k]`, `w: [k, n]`, `b: [n]`; one node instead of
    /// a matmul followed by a broadcast add.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.val(x), self.val(w), self.val(b));
        let (m, k) = tx.dims2("linear")?;
        let (k2, n) = tw.dims2("linear")?;
        if k != k2 {
            return Err(mismatch("linear", tx, tw));
        }
        if tb.shape() != [n] {
            return Err(mismatch("linear", tw, tb));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(tb.data());
        }
        gemm(
            Operand::plain(tx.data(), m, k),
            Operand::plain(tw.data(), k, n),
            1.0,
            &mut out,
        );
        let r = self.req(&[x, w, b]);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            r,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.0,
            },
        ))
    }

    /// Multi-head scaled dot-product attention over `[s, e]` projections.
    ///
    /// Head `j` uses columns `j·e/heads .. (j+1)·e/heads` of `q`, `k` and `v`
    /// and writes the same columns of the `[s, e]` output:
    /// `softmax_rows(scale · q_j k_jᵀ) · v_j`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, scale: f64) -> Result<Var> {
        let (tq, tk, tv) = (self.val(q), self.val(k), self.val(v));
        let (s, e) = tq.dims2("attention")?;
        if tk.shape() != tq.shape() {
            return Err(mismatch("attention", tq, tk));
        }
        if tv.shape() != tq.shape() {
            return Err(mismatch("attention", tq, tv));
        }
        if heads == 0 || e % heads != 0 {
            return Err(TensorError::Invalid(format!(
                "width {e} does not split into {heads} heads"
            )));
        }
        let dh = e / heads;
        let mut probs = vec![0.0; heads * s * s];
        let mut out = vec![0.0; s * e];
        for (j, p) in probs
            .chunks_exact_mut((s * s).max(1))
            .enumerate()
            .take(heads)
        {
            let lo = j * dh;
            gemm_ex(
                scale,
                Operand::plain(&tq.data()[lo..], s, dh).with_ld(e),
                Operand::t(&tk.data()[lo..], dh, s).with_ld(e),
                0.0,
                p,
                s,
            );
            for row in p.chunks_exact_mut(s) {
                softmax_in_place(row);
            }
            gemm_ex(
                1.0,
                Operand::plain(p, s, s),
                Operand::plain(&tv.data()[lo..], s, dh).with_ld(e),
                0.0,
                &mut out[lo..],
                e,
            );
        }
        let r = self.req(&[q, k, v]);
        Ok(self.push(
            Tensor::new(vec![s, e], out)?,
            r,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                heads,
                scale,
                probs,
            },
        ))
    }

    /// Per-head `[s, s]` attention probabilities of a node made by
    /// [`Graph::attention`].
    pub fn attention_probs(&self, a: Var) -> Option<Vec<Tensor>> {
        match &self.ops[a.0] {
            Op::Attention { heads, probs, .. } => {
                let s = self.values[a.0].shape()[0];
                Some(
                    probs
                        .chunks_exact((s * s).max(1))
                        .take(*heads)
                        .map(|p| Tensor {
                            shape: vec![s, s],
                            data: p.to_vec(),
                        })
                        .collect(),
                )
            }
            _ => None,
        }
    }

    /// Element-wise sum. One operand may be broadcast onto the other when it
    /// is missing the leading axis (`[n]` with `[m, n]`) or has a trailing
    /// extent of 1 (`[m, 1]` with `[m, n]`).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let pattern = |big: &Tensor, small: &Tensor| {
            if big.shape() == small.shape() {
                return Some(Bcast::Same);
            }
            match (big.shape(), small.shape()) {
                ([_, n], [n2]) if n == n2 => Some(Bcast::Row),
                ([m, _], [m2, 1]) if m == m2 => Some(Bcast::Col),
                _ => None,
            }
        };
        let (big, small, bcast) = if let Some(p) = pattern(self.val(a), self.val(b)) {
            (a, b, p)
        } else if let Some(p) = pattern(self.val(b), self.val(a)) {
            (b, a, p)
        } else {
            return Err(mismatch("add", self.val(a), self.val(b)));
        };
        let (tb, ts) = (self.val(big), self.val(small));
        let mut out = tb.data().to_vec();
        let sd = ts.data();
        match bcast {
            Bcast::Same => out.iter_mut().zip(sd).for_each(|(o, s)| *o += s),
            Bcast::Row => {
                for row in out.chunks_exact_mut(sd.len()) {
                    row.iter_mut().zip(sd).for_each(|(o, s)| *o += s);
                }
            }
            Bcast::Col => {
                let n = tb.shape()[1];
                for (row, s) in out.chunks_exact_mut(n).zip(sd) {
                    row.iter_mut().for_each(|o| *o += s);
                }
            }
        }
        let shape = tb.shape().to_vec();
        let r = self.req(&[a, b]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            r,
            Op::Add {
                a: big.0,
                b: small.0,
                bcast,
            },
        ))
    }

    /// Element-wise (Hadamard) product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = ta.shape().to_vec();
        let r = self.req(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, r, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.val(a);
        let out = t.data().iter().map(|x| x * factor).collect();
        let t = Tensor {
            shape: t.shape().to_vec(),
            data: out,
        };
        let r = self.req(&[a]);
        self.push(t, r, Op::Scale(a.0, factor))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).data().iter().sum();
        let r = self.req(&[a]);
        self.push(Tensor::scalar(s), r, Op::Sum(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.val(a);
        let out = t
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let t = Tensor {
            shape: t.shape().to_vec(),
            data: out,
        };
        let r = self.req(&[a]);
        self.push(t, r, Op::Relu(a.0))
    }

    /// Row-wise softmax of a rank-2 tensor (max-subtracted).
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        let (_, n) = t.dims2("softmax_rows")?;
        let mut out = t.data().to_vec();
        for row in out.chunks_exact_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        let r = self.req(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, r, Op::Softmax(a.0)))
    }

    /// Per-row `(x − μ)/√(σ²_pop + 1e−5)·gain + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.val(x), self.val(gain), self.val(bias));
        let (m, n) = tx.dims2("layer_norm")?;
        if tg.shape() != [n] {
            return Err(mismatch("layer_norm", tx, tg));
        }
        if tb.shape() != [n] {
            return Err(mismatch("layer_norm", tx, tb));
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..n {
                let h = (row[c] - mu) * inv;
                xhat[r * n + c] = h;
                out[r * n + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let r = self.req(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            r,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inverted dropout. Identity (the same handle) in eval mode or at `p = 0`.
    pub fn dropout(&mut self, a: Var, p: f64, training: bool, rng: &mut SplitRng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.val(a);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.next_f64() < p { 0.0 } else { keep })
            .collect();
        let out = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = t.shape().to_vec();
        let r = self.req(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, r, Op::Dropout { x: a.0, mask }))
    }

    /// Column statistic over the rows of a rank-2 `[s, e]` tensor, giving `[e]`.
    ///
    /// `Std` is the population deviation `√(σ² + 1e−12)`. `Min`/`Max` send the
    /// gradient to the lowest row index attaining the extremum.
    pub fn reduce(&mut self, a: Var, stat: Stat) -> Result<Var> {
        let t = self.val(a);
        let (s, e) = t.dims2("reduce")?;
        if s == 0 {
            return Err(TensorError::Invalid("reduce over zero rows".into()));
        }
        let d = t.data();
        let mut out = vec![0.0; e];
        let mut argext = Vec::new();
        let mut mean = Vec::new();
        match stat {
            Stat::Min | Stat::Max => {
                argext = vec![0; e];
                out.copy_from_slice(&d[..e]);
                for r in 1..s {
                    for c in 0..e {
                        let v = d[r * e + c];
                        let better = match stat {
                            Stat::Min => v < out[c],
                            _ => v > out[c],
                        };
                        if better {
                            out[c] = v;
                            argext[c] = r;
                        }
                    }
                }
            }
            Stat::Mean | Stat::Std => {
                for row in d.chunks_exact(e) {
                    out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                }
                out.iter_mut().for_each(|o| *o /= s as f64);
                if stat == Stat::Std {
                    mean = out.clone();
                    let mut var = vec![0.0; e];
                    for row in d.chunks_exact(e) {
                        for c in 0..e {
                            let dv = row[c] - mean[c];
                            var[c] += dv * dv;
                        }
                    }
                    for c in 0..e {
                        out[c] = (var[c] / s as f64 + STD_EPS).sqrt();
                    }
                }
            }
        }
        let r = self.req(&[a]);
        Ok(self.push(
            Tensor::vector(out),
            r,
            Op::Reduce {
                x: a.0,
                stat,
                argext,
                mean,
            },
        ))
    }

    /// Concatenation along `axis`: axis 0 for any equal-trailing-shape parts,
    /// axis 1 for rank-2 parts with equal row counts.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let t0 = self.val(*first);
        let rank = t0.rank();
        if axis >= rank || (axis == 1 && rank != 2) {
            return Err(TensorError::Invalid(format!(
                "concat axis {axis} unsupported for rank {rank}"
            )));
        }
        for p in &parts[1..] {
            let t = self.val(*p);
            let ok = t.rank() == rank
                && t.shape()
                    .iter()
                    .zip(t0.shape())
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(mismatch("concat", t0, t));
            }
        }
        let mut shape = t0.shape().to_vec();
        shape[axis] = parts.iter().map(|p| self.val(*p).shape()[axis]).sum();
        let out = if axis == 0 {
            parts
                .iter()
                .flat_map(|p| self.val(*p).data().iter().copied())
                .collect()
        } else {
            let rows = shape[0];
            let mut out = Vec::with_capacity(rows * shape[1]);
            for r in 0..rows {
                for p in parts {
                    out.extend_from_slice(self.val(*p).row(r));
                }
            }
            out
        };
        let r = self.req(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            r,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
        ))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.val(a);
        let (m, n) = t.dims2("slice_cols")?;
        if start > end || end > n {
            return Err(TensorError::Invalid(format!(
                "column range {start}..{end} outside 0..{n}"
            )));
        }
        if start == 0 && end == n {
            return Ok(a);
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&t.row(r)[start..end]);
        }
        let req = self.req(&[a]);
        Ok(self.push(
            Tensor::new(vec![m, w], out)?,
            req,
            Op::SliceCols { x: a.0, start },
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        let (m, n) = t.dims2("transpose")?;
        let out = transpose_buf(t.data(), m, n);
        let r = self.req(&[a]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, r, Op::Transpose(a.0)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.val(a).clone().reshaped(shape.to_vec())?;
        let r = self.req(&[a]);
        Ok(self.push(t, r, Op::Reshape(a.0)))
    }

    /// Mean over the batch of `−log softmax(logits)[label]` for `[b, n]` logits.
    pub fn cross_entropy_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.val(logits);
        let (b, n) = t.dims2("cross_entropy_logits")?;
        if labels.len() != b || b == 0 {
            return Err(TensorError::Invalid(format!(
                "{} labels for a batch of {b}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n) {
            return Err(TensorError::Invalid(format!(
                "label {bad} out of range 0..{n}"
            )));
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (row_idx, row) in t.data().chunks_exact(n).enumerate() {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[labels[row_idx]];
            softmax_in_place(&mut probs[row_idx * n..(row_idx + 1) * n]);
        }
        let r = self.req(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / b as f64),
            r,
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Smallest distance of the tape from a point where it is not
    /// differentiable: ReLU inputs from 0 and, per column, the gap between the
    /// extremum picked by a min/max reduction and the runner-up. Finite
    /// difference checks with step `h` are only meaningful when this is well
    /// above `h` times the input scale.
    pub fn nonsmooth_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for op in &self.ops {
            match op {
                Op::Relu(a) => {
                    for v in self.values[*a].data() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::Reduce {
                    x,
                    stat: stat @ (Stat::Min | Stat::Max),
                    argext,
                    ..
                } => {
                    let t = &self.values[*x];
                    let (s, e) = (t.shape()[0], t.shape()[1]);
                    for (c, &best) in argext.iter().enumerate().take(e) {
                        let top = t.data()[best * e + c];
                        for r in (0..s).filter(|&r| r != best) {
                            let v = t.data()[r * e + c];
                            let gap = if *stat == Stat::Max { top - v } else { v - top };
                            margin = margin.min(gap);
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from a single-element `loss`, seeding its gradient with 1.
    ///
    /// Gradients accumulate across calls; use [`Graph::zero_grad`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].len() != 1 {
            return Err(TensorError::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        let mut tmp: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        tmp[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.requires[i] {
                continue;
            }
            let Some(g) = tmp[i].take() else { continue };
            self.backprop_node(i, &g, &mut tmp);
            tmp[i] = Some(g);
        }
        for (i, g) in tmp.into_iter().enumerate() {
            let Some(g) = g else { continue };
            match &mut self.grads[i] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], tmp: &mut [Option<Vec<f64>>]) {
        let values = &self.values;
        let requires = &self.requires;
        macro_rules! slot {
            ($p:expr) => {
                grad_slot(tmp, values, requires, $p)
            };
        }
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&values[*a], &values[*b]);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if let Some(ga) = slot!(*a) {
                    gemm(
                        Operand::plain(g, m, n),
                        Operand::t(tb.data(), n, k),
                        1.0,
                        ga,
                    );
                }
                if let Some(gb) = slot!(*b) {
                    gemm(
                        Operand::t(ta.data(), k, m),
                        Operand::plain(g, m, n),
                        1.0,
                        gb,
                    );
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (&values[*x], &values[*w]);
                let (m, k) = (tx.shape()[0], tx.shape()[1]);
                let n = tw.shape()[1];
                if let Some(gx) = slot!(*x) {
                    gemm(
                        Operand::plain(g, m, n),
                        Operand::t(tw.data(), n, k),
                        1.0,
                        gx,
                    );
                }
                if let Some(gw) = slot!(*w) {
                    gemm(
                        Operand::t(tx.data(), k, m),
                        Operand::plain(g, m, n),
                        1.0,
                        gw,
                    );
                }
                if let Some(gb) = slot!(*b) {
                    for row in g.chunks_exact(n) {
                        gb.iter_mut().zip(row).for_each(|(x, v)| *x += v);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                probs,
            } => {
                let (s, e) = (values[*q].shape()[0], values[*q].shape()[1]);
                let dh = e / heads;
                let (dq, dk, dv) = (values[*q].data(), values[*k].data(), values[*v].data());
                let mut dp = vec![0.0; s * s];
                for (j, p) in probs.chunks_exact((s * s).max(1)).enumerate().take(*heads) {
                    let lo = j * dh;
                    let gh = Operand::plain(&g[lo..], s, dh).with_ld(e);
                    if let Some(gv) = slot!(*v) {
                        gemm_ex(1.0, Operand::t(p, s, s), gh, 1.0, &mut gv[lo..], e);
                    }
                    if !requires[*q] && !requires[*k] {
                        continue;
                    }
                    gemm_ex(
                        1.0,
                        gh,
                        Operand::t(&dv[lo..], dh, s).with_ld(e),
                        0.0,
                        &mut dp,
                        s,
                    );
                    // Softmax backward: dS = P ⊙ (dP − rowsum(dP ⊙ P)).
                    for (dr, pr) in dp.chunks_exact_mut(s).zip(p.chunks_exact(s)) {
                        let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                        for (d, &pv) in dr.iter_mut().zip(pr) {
                            *d = pv * (*d - dot);
                        }
                    }
                    if let Some(gq) = slot!(*q) {
                        gemm_ex(
                            *scale,
                            Operand::plain(&dp, s, s),
                            Operand::plain(&dk[lo..], s, dh).with_ld(e),
                            1.0,
                            &mut gq[lo..],
                            e,
                        );
                    }
                    if let Some(gk) = slot!(*k) {
                        gemm_ex(
                            *scale,
                            Operand::t(&dp, s, s),
                            Operand::plain(&dq[lo..], s, dh).with_ld(e),
                            1.0,
                            &mut gk[lo..],
                            e,
                        );
                    }
                }
            }
            Op::Add { a, b, bcast } => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, v)| *x += v);
                }
                if let Some(gb) = slot!(*b) {
                    match bcast {
                        Bcast::Same => gb.iter_mut().zip(g).for_each(|(x, v)| *x += v),
                        Bcast::Row => {
                            let n = gb.len();
                            for row in g.chunks_exact(n) {
                                gb.iter_mut().zip(row).for_each(|(x, v)| *x += v);
                            }
                        }
                        Bcast::Col => {
                            let n = g.len() / gb.len();
                            for (x, row) in gb.iter_mut().zip(g.chunks_exact(n)) {
                                *x += row.iter().sum::<f64>();
                            }
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (values[*a].data(), values[*b].data());
                if let Some(ga) = slot!(*a) {
                    for ((x, v), o) in ga.iter_mut().zip(g).zip(db) {
                        *x += v * o;
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for ((x, v), o) in gb.iter_mut().zip(g).zip(da) {
                        *x += v * o;
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, v)| *x += v * f);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Relu(a) => {
                let d = values[*a].data();
                if let Some(ga) = slot!(*a) {
                    for ((x, v), inp) in ga.iter_mut().zip(g).zip(d) {
                        if *inp > 0.0 {
                            *x += v;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let y = values[i].data();
                let n = values[i].shape()[1];
                if let Some(ga) = slot!(*a) {
                    for ((gx, gy), yr) in ga
                        .chunks_exact_mut(n)
                        .zip(g.chunks_exact(n))
                        .zip(y.chunks_exact(n))
                    {
                        let dot: f64 = gy.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for c in 0..n {
                            gx[c] += yr[c] * (gy[c] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = values[*x].shape()[1];
                let gd = values[*gain].data().to_vec();
                if let Some(gg) = slot!(*gain) {
                    for (gr, hr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for c in 0..n {
                            gg[c] += gr[c] * hr[c];
                        }
                    }
                }
                if let Some(gb) = slot!(*bias) {
                    for gr in g.chunks_exact(n) {
                        gb.iter_mut().zip(gr).for_each(|(x, v)| *x += v);
                    }
                }
                if let Some(gx) = slot!(*x) {
                    let mut dh = vec![0.0; n];
                    for (r, (gxr, (gr, hr))) in gx
                        .chunks_exact_mut(n)
                        .zip(g.chunks_exact(n).zip(xhat.chunks_exact(n)))
                        .enumerate()
                    {
                        for c in 0..n {
                            dh[c] = gr[c] * gd[c];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dhh =
                            dh.iter().zip(hr).map(|(p, q)| p * q).sum::<f64>() / n as f64;
                        for c in 0..n {
                            gxr[c] += inv_std[r] * (dh[c] - mean_dh - hr[c] * mean_dhh);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = slot!(*x) {
                    for ((a, v), m) in gx.iter_mut().zip(g).zip(mask) {
                        *a += v * m;
                    }
                }
            }
            Op::Reduce {
                x,
                stat,
                argext,
                mean,
            } => {
                let tx = &values[*x];
                let (s, e) = (tx.shape()[0], tx.shape()[1]);
                let out = values[i].data();
                if let Some(gx) = slot!(*x) {
                    match stat {
                        Stat::Min | Stat::Max => {
                            for c in 0..e {
                                gx[argext[c] * e + c] += g[c];
                            }
                        }
                        Stat::Mean => {
                            for row in gx.chunks_exact_mut(e) {
                                for c in 0..e {
                                    row[c] += g[c] / s as f64;
                                }
                            }
                        }
                        Stat::Std => {
                            for (row, xr) in gx.chunks_exact_mut(e).zip(tx.data().chunks_exact(e)) {
                                for c in 0..e {
                                    row[c] += g[c] * (xr[c] - mean[c]) / (s as f64 * out[c]);
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let n = values[p].len();
                        if let Some(gp) = slot!(p) {
                            gp.iter_mut()
                                .zip(&g[off..off + n])
                                .for_each(|(x, v)| *x += v);
                        }
                        off += n;
                    }
                } else {
                    let total = values[i].shape()[1];
                    let mut col = 0;
                    for &p in parts {
                        let w = values[p].shape()[1];
                        if let Some(gp) = slot!(p) {
                            for (gr, src) in gp.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                                gr.iter_mut()
                                    .zip(&src[col..col + w])
                                    .for_each(|(x, v)| *x += v);
                            }
                        }
                        col += w;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let n = values[*x].shape()[1];
                let w = values[i].shape()[1];
                if let Some(gx) = slot!(*x) {
                    for (gr, src) in gx.chunks_exact_mut(n).zip(g.chunks_exact(w)) {
                        gr[*start..start + w]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, v)| *a += v);
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (values[*a].shape()[0], values[*a].shape()[1]);
                if let Some(ga) = slot!(*a) {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, v)| *x += v);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = values[*logits].shape()[1];
                let b = labels.len() as f64;
                if let Some(gl) = slot!(*logits) {
                    for (r, (gr, pr)) in gl
                        .chunks_exact_mut(n)
                        .zip(probs.chunks_exact(n))
                        .enumerate()
                    {
                        for c in 0..n {
                            let target = if c == labels[r] { 1.0 } else { 0.0 };
                            gr[c] += g[0] * (pr[c] - target) / b;
                        }
                    }
                }
            }
        }
    }
}

fn grad_slot<'t>(
    tmp: &'t mut [Option<Vec<f64>>],
    values: &[Tensor],
    requires: &[bool],
    p: usize,
) -> Option<&'t mut Vec<f64>> {
    if !requires[p] {
        return None;
    }
    let n = values[p].len();
    Some(tmp[p].get_or_insert_with(|| vec![0.0; n]))
}

fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

fn transpose_buf(d: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        for c in 0..n {
            out[c * m + r] = d[r * n + c];
        }
    }
    out
}
