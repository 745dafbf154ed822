use super::graph::{GradSink, Graph, Node, Op, Var};
use super::{gemm, Tensor, View};
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn expect_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::dim(op, t.shape(), &[0, 0]));
    }
    Ok(as_matrix(t))
}

/// Bias may be given as `[d]` or `[d, 1]`.
fn expect_bias(op: &'static str, b: &Tensor, d: usize) -> Result<()> {
    let ok = match b.shape() {
        [n] => *n == d,
        [n, 1] => *n == d,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::dim(op, b.shape(), &[d]))
    }
}

fn row_sums_into(g: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        out[r] += g[r * cols..(r + 1) * cols].iter().sum::<f64>();
    }
}

impl Graph {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, k) = expect_rank2("matmul", ta)?;
        let (k2, c) = expect_rank2("matmul", tb)?;
        if k != k2 {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; r * c];
        gemm(
            1.0,
            View::row_major(ta.data(), r, k),
            View::row_major(tb.data(), k, c),
            0.0,
            &mut out,
            c as isize,
            1,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(r, c, out)?, rg, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::Scale(x, c))
    }

    /// Sum of all elements as a `[1]` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("hadamard", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Hadamard(a, b)))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = self.value(x).map(|v| kind.apply(v));
        let rg = self.any_grad(&[x]);
        self.push(out, rg, Op::Act(x, kind))
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

    /// `weight · x + bias`, bias broadcast to every column.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(weight), self.value(bias));
        let (inp, m) = expect_rank2("linear", tx)?;
        let (out_dim, inp2) = expect_rank2("linear", tw)?;
        if inp != inp2 {
            return Err(Error::dim("linear", tw.shape(), tx.shape()));
        }
        expect_bias("linear", tb, out_dim)?;
        let mut out = vec![0.0; out_dim * m];
        for (r, row) in out.chunks_mut(m).enumerate() {
            row.fill(tb.data()[r]);
        }
        gemm(
            1.0,
            View::row_major(tw.data(), out_dim, inp),
            View::row_major(tx.data(), inp, m),
            1.0,
            &mut out,
            m as isize,
            1,
        );
        let rg = self.any_grad(&[x, weight, bias]);
        Ok(self.push(
            Tensor::matrix(out_dim, m, out)?,
            rg,
            Op::Linear {
                x,
                w: weight,
                b: bias,
            },
        ))
    }

    /// Stride-1 convolution (cross-correlation) with zero padding that keeps
    /// the sequence length: `floor((k-1)/2)` on the left, the rest on the right.
    ///
    /// `x` is `[cin, n]`, `filters` is `[cout, cin, k]`, `bias` is `[cout]`.
    pub fn conv1d_same(&mut self, x: Var, filters: Var, bias: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(filters), self.value(bias));
        let (cin, n) = expect_rank2("conv1d_same", tx)?;
        let [cout, cin2, k] = *tw.shape() else {
            return Err(Error::dim("conv1d_same", tw.shape(), &[0, cin, 0]));
        };
        if cin2 != cin {
            return Err(Error::dim("conv1d_same", tw.shape(), tx.shape()));
        }
        expect_bias("conv1d_same", tb, cout)?;
        let pad_left = (k - 1) / 2;
        let cols = im2col(tx.data(), cin, n, k, pad_left);
        let mut out = vec![0.0; cout * n];
        for (r, row) in out.chunks_mut(n).enumerate() {
            row.fill(tb.data()[r]);
        }
        gemm(
            1.0,
            View::row_major(tw.data(), cout, cin * k),
            View::row_major(&cols, cin * k, n),
            1.0,
            &mut out,
            n as isize,
            1,
        );
        let rg = self.any_grad(&[x, filters, bias]);
        Ok(self.push(
            Tensor::matrix(cout, n, out)?,
            rg,
            Op::Conv1d {
                x,
                w: filters,
                b: bias,
                cols,
                k,
                pad_left,
            },
        ))
    }

    /// Stacks the rows of every part; all parts need the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_rows needs at least one input".into()))?;
        let cols = expect_rank2("concat_rows", self.value(*first))?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = expect_rank2("concat_rows", t)?;
            if c != cols {
                return Err(Error::dim("concat_rows", self.value(*first).shape(), t.shape()));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::matrix(rows, cols, data)?, rg, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = expect_rank2("slice_rows", t)?;
        if len == 0 || start + len > r {
            return Err(Error::Argument(format!(
                "slice_rows {start}..{} out of range for {r} rows",
                start + len
            )));
        }
        let data = t.data()[start * c..(start + len) * c].to_vec();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::matrix(len, c, data)?, rg, Op::SliceRows { x, start }))
    }

    /// Column mean: `[d, n]` to `[d, 1]`.
    pub fn mean_cols(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = expect_rank2("mean_cols", t)?;
        let data = (0..r)
            .map(|i| t.data()[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64)
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::matrix(r, 1, data)?, rg, Op::MeanCols(x)))
    }

    /// `z · a` for a constant (typically binary) `a`, summed in frame order.
    pub fn align_pool(&mut self, z: Var, a: &Tensor) -> Result<Var> {
        self.align_pool_impl(z, a, false)
    }

    /// Like [`Graph::align_pool`] for a binary `a`, but each column is the
    /// sum over its frames divided by their count; empty columns stay zero.
    pub fn align_pool_mean(&mut self, z: Var, a: &Tensor) -> Result<Var> {
        self.align_pool_impl(z, a, true)
    }

    fn align_pool_impl(&mut self, z: Var, a: &Tensor, mean: bool) -> Result<Var> {
        let tz = self.value(z);
        let (q, n) = expect_rank2("temporal_align_pool", tz)?;
        let (n2, m) = expect_rank2("temporal_align_pool", a)?;
        if n != n2 {
            return Err(Error::dim("temporal_align_pool", tz.shape(), a.shape()));
        }
        let counts: Vec<usize> = (0..m)
            .map(|j| (0..n).filter(|&i| a.data()[i * m + j] != 0.0).count())
            .collect();
        let mut out = vec![0.0; q * m];
        for r in 0..q {
            let zr = &tz.data()[r * n..(r + 1) * n];
            for j in 0..m {
                let mut acc = 0.0;
                for (i, &zv) in zr.iter().enumerate() {
                    let w = a.data()[i * m + j];
                    if w != 0.0 {
                        acc += zv * w;
                    }
                }
                if mean && counts[j] > 0 {
                    acc /= counts[j] as f64;
                }
                out[r * m + j] = acc;
            }
        }
        // Backward multiplies by the effective pooling matrix.
        let effective = if mean {
            let mut e = a.clone();
            for i in 0..n {
                for (j, &c) in counts.iter().enumerate() {
                    if c > 0 {
                        e.data_mut()[i * m + j] /= c as f64;
                    }
                }
            }
            e
        } else {
            a.clone()
        };
        let rg = self.any_grad(&[z]);
        Ok(self.push(
            Tensor::matrix(q, m, out)?,
            rg,
            Op::AlignPool { z, a: effective },
        ))
    }

    /// Packs variable-length sequences `[d, m_b]` into one `[d, B * T]`
    /// matrix, sequence-major (column `b * T + t`), zero beyond each length.
    pub fn pack_sequences(&mut self, parts: &[Var]) -> Result<(Var, Vec<usize>, usize)> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("pack_sequences needs at least one input".into()))?;
        let d = expect_rank2("pack_sequences", self.value(*first))?.0;
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (r, c) = expect_rank2("pack_sequences", t)?;
            if r != d {
                return Err(Error::dim("pack_sequences", self.value(*first).shape(), t.shape()));
            }
            lens.push(c);
        }
        let max_len = *lens.iter().max().expect("nonempty");
        let width = parts.len() * max_len;
        let mut data = vec![0.0; d * width];
        for (b, &p) in parts.iter().enumerate() {
            let t = self.value(p);
            let len = lens[b];
            for r in 0..d {
                let dst = r * width + b * max_len;
                data[dst..dst + len].copy_from_slice(&t.data()[r * len..(r + 1) * len]);
            }
        }
        let rg = self.any_grad(parts);
        let out = self.push(
            Tensor::matrix(d, width, data)?,
            rg,
            Op::PackSeqs {
                parts: parts.to_vec(),
                max_len,
            },
        );
        Ok((out, lens, max_len))
    }

    /// Per-row maximum over the first `lens[b]` columns of each packed
    /// sequence; `[d, B * T]` to `[d, B]`. Ties go to the earliest column.
    pub fn maxpool_time(&mut self, h: Var, lens: &[usize], max_len: usize) -> Result<Var> {
        let t = self.value(h);
        let (d, width) = expect_rank2("maxpool_time", t)?;
        let batch = lens.len();
        if batch == 0 || batch * max_len != width {
            return Err(Error::dim("maxpool_time", t.shape(), &[d, batch * max_len]));
        }
        if let Some(bad) = lens.iter().find(|&&l| l == 0 || l > max_len) {
            return Err(Error::Argument(format!(
                "maxpool_time valid_len {bad} outside 1..={max_len}"
            )));
        }
        let mut out = vec![0.0; d * batch];
        let mut argmax = vec![0; d * batch];
        for r in 0..d {
            for (b, &len) in lens.iter().enumerate() {
                let base = r * width + b * max_len;
                let row = &t.data()[base..base + len];
                let mut best = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                out[r * batch + b] = row[best];
                argmax[r * batch + b] = base + best;
            }
        }
        let rg = self.any_grad(&[h]);
        Ok(self.push(Tensor::matrix(d, batch, out)?, rg, Op::MaxPool { x: h, argmax }))
    }

    /// Column-wise softmax with max subtraction.
    pub fn softmax_columns(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (k, b) = expect_rank2("softmax_columns", t)?;
        let out = softmax_cols(t.data(), k, b);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::matrix(k, b, out)?, rg, Op::Softmax(x)))
    }

    /// Fused softmax + cross-entropy over the columns of `logits` (`[K, B]`),
    /// reduced as `scale * sum_b -ln p[label_b, b]`. The gradient on the
    /// logits is `scale * (p - y)`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        scale: f64,
    ) -> Result<Var> {
        let t = self.value(logits);
        let (k, b) = expect_rank2("softmax_cross_entropy", t)?;
        if labels.len() != b {
            return Err(Error::dim("softmax_cross_entropy", t.shape(), &[k, labels.len()]));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
        }
        let probs = softmax_cols(t.data(), k, b);
        let loss: f64 = labels
            .iter()
            .enumerate()
            .map(|(j, &l)| -probs[l * b + j].max(LOG_CLAMP).ln())
            .sum();
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(scale * loss),
            rg,
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
                scale,
            },
        ))
    }
}

pub(crate) fn softmax_cols(x: &[f64], k: usize, b: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * b];
    for j in 0..b {
        let max = (0..k).map(|i| x[i * b + j]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for i in 0..k {
            let e = (x[i * b + j] - max).exp();
            out[i * b + j] = e;
            total += e;
        }
        for i in 0..k {
            out[i * b + j] /= total;
        }
    }
    out
}

/// Plain (non-recorded) softmax of a column vector.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    softmax_cols(x, x.len(), 1)
}

/// `-sum_k y_k ln max(p_k, 1e-12)` for a probability vector and one-hot `y`.
pub fn cross_entropy(p: &[f64], y: &[f64]) -> f64 {
    p.iter()
        .zip(y)
        .filter(|(_, &yk)| yk != 0.0)
        .map(|(&pk, &yk)| -yk * pk.max(LOG_CLAMP).ln())
        .sum()
}

fn im2col(x: &[f64], cin: usize, n: usize, k: usize, pad_left: usize) -> Vec<f64> {
    let mut cols = vec![0.0; cin * k * n];
    for c in 0..cin {
        let xr = &x[c * n..(c + 1) * n];
        for j in 0..k {
            let row = &mut cols[(c * k + j) * n..(c * k + j + 1) * n];
            // output t reads x[t + j - pad_left]
            let shift = j as isize - pad_left as isize;
            let t_lo = (-shift).max(0) as usize;
            let t_hi = ((n as isize - shift).min(n as isize)).max(0) as usize;
            if t_lo < t_hi {
                let src_lo = (t_lo as isize + shift) as usize;
                row[t_lo..t_hi].copy_from_slice(&xr[src_lo..src_lo + (t_hi - t_lo)]);
            }
        }
    }
    cols
}

fn col2im_add(dcols: &[f64], cin: usize, n: usize, k: usize, pad_left: usize, dx: &mut [f64]) {
    for c in 0..cin {
        let dxr = &mut dx[c * n..(c + 1) * n];
        for j in 0..k {
            let row = &dcols[(c * k + j) * n..(c * k + j + 1) * n];
            let shift = j as isize - pad_left as isize;
            let t_lo = (-shift).max(0) as usize;
            let t_hi = ((n as isize - shift).min(n as isize)).max(0) as usize;
            for t in t_lo..t_hi {
                dxr[(t as isize + shift) as usize] += row[t];
            }
        }
    }
}

/// Chain rule for one recorded node: pushes `g` (the node's output
/// gradient) into its inputs.
pub(crate) fn backprop(node: &Node, g: &[f64], sink: &mut GradSink<'_>) {
    let y = &node.value;
    let nodes = sink.nodes;
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (a, b) = (*a, *b);
            let (ta, tb) = (val(a), val(b));
            let (r, k) = as_matrix(ta);
            let c = tb.cols();
            let gv = View::row_major(g, r, c);
            sink.with(a, |da| {
                gemm(1.0, gv, View::row_major(tb.data(), k, c).t(), 1.0, da, k as isize, 1)
            });
            sink.with(b, |db| {
                gemm(1.0, View::row_major(ta.data(), r, k).t(), gv, 1.0, db, c as isize, 1)
            });
        }
        Op::Add(a, b) => {
            sink.add(*a, g);
            sink.add(*b, g);
        }
        Op::Scale(x, c) => {
            let c = *c;
            sink.with(*x, |dx| dx.iter_mut().zip(g).for_each(|(d, gv)| *d += c * gv));
        }
        Op::Sum(x) => {
            let g0 = g[0];
            sink.with(*x, |dx| dx.iter_mut().for_each(|d| *d += g0));
        }
        Op::Hadamard(a, b) => {
            let (a, b) = (*a, *b);
            let bv = val(b).data();
            let av = val(a).data();
            sink.with(a, |da| {
                for i in 0..da.len() {
                    da[i] += g[i] * bv[i];
                }
            });
            sink.with(b, |db| {
                for i in 0..db.len() {
                    db[i] += g[i] * av[i];
                }
            });
        }
        Op::Act(x, kind) => {
            let kind = *kind;
            sink.with(*x, |dx| {
                for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y.data()) {
                    *d += gv * kind.derivative_from_output(yv);
                }
            });
        }
        Op::Linear { x, w, b } => {
            let (x, w, b) = (*x, *w, *b);
            let (tx, tw) = (val(x), val(w));
            let (inp, m) = as_matrix(tx);
            let out = tw.rows();
            let gv = View::row_major(g, out, m);
            sink.with(w, |dw| {
                gemm(1.0, gv, View::row_major(tx.data(), inp, m).t(), 1.0, dw, inp as isize, 1)
            });
            sink.with(x, |dx| {
                gemm(1.0, View::row_major(tw.data(), out, inp).t(), gv, 1.0, dx, m as isize, 1)
            });
            sink.with(b, |db| row_sums_into(g, out, m, db));
        }
        Op::Conv1d {
            x,
            w,
            b,
            cols,
            k,
            pad_left,
        } => {
            let (x, w, b, k, pad_left) = (*x, *w, *b, *k, *pad_left);
            let tw = val(w);
            let (cin, n) = as_matrix(sink.value(x));
            let cout = tw.shape()[0];
            let gv = View::row_major(g, cout, n);
            sink.with(w, |dw| {
                gemm(
                    1.0,
                    gv,
                    View::row_major(cols, cin * k, n).t(),
                    1.0,
                    dw,
                    (cin * k) as isize,
                    1,
                )
            });
            if sink.wants(x) {
                let mut dcols = vec![0.0; cin * k * n];
                gemm(
                    1.0,
                    View::row_major(tw.data(), cout, cin * k).t(),
                    gv,
                    0.0,
                    &mut dcols,
                    n as isize,
                    1,
                );
                sink.with(x, |dx| col2im_add(&dcols, cin, n, k, pad_left, dx));
            }
            sink.with(b, |db| row_sums_into(g, cout, n, db));
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = sink.value(p).len();
                sink.add(p, &g[offset..offset + len]);
                offset += len;
            }
        }
        Op::SliceRows { x, start } => {
            let c = y.cols();
            let off = start * c;
            sink.with(*x, |dx| {
                for (d, gv) in dx[off..off + g.len()].iter_mut().zip(g) {
                    *d += gv;
                }
            });
        }
        Op::MeanCols(x) => {
            let (r, c) = as_matrix(sink.value(*x));
            sink.with(*x, |dx| {
                for i in 0..r {
                    let gi = g[i] / c as f64;
                    dx[i * c..(i + 1) * c].iter_mut().for_each(|d| *d += gi);
                }
            });
        }
        Op::AlignPool { z, a } => {
            let (q, n) = as_matrix(sink.value(*z));
            let m = a.cols();
            sink.with(*z, |dz| {
                gemm(
                    1.0,
                    View::row_major(g, q, m),
                    View::row_major(a.data(), n, m).t(),
                    1.0,
                    dz,
                    n as isize,
                    1,
                )
            });
        }
        Op::PackSeqs { parts, max_len } => {
            let width = y.cols();
            let d = y.rows();
            for (b, &p) in parts.iter().enumerate() {
                let len = sink.value(p).cols();
                sink.with(p, |dp| {
                    for r in 0..d {
                        let src = r * width + b * max_len;
                        for (dv, gv) in dp[r * len..(r + 1) * len].iter_mut().zip(&g[src..src + len]) {
                            *dv += gv;
                        }
                    }
                });
            }
        }
        Op::MaxPool { x, argmax } => {
            sink.with(*x, |dx| {
                for (&idx, gv) in argmax.iter().zip(g) {
                    dx[idx] += gv;
                }
            });
        }
        Op::Softmax(x) => {
            let (k, b) = as_matrix(y);
            let yv = y.data();
            sink.with(*x, |dx| {
                for j in 0..b {
                    let dot: f64 = (0..k).map(|i| g[i * b + j] * yv[i * b + j]).sum();
                    for i in 0..k {
                        dx[i * b + j] += yv[i * b + j] * (g[i * b + j] - dot);
                    }
                }
            });
        }
        Op::SoftmaxCe {
            logits,
            probs,
            labels,
            scale,
        } => {
            let b = labels.len();
            let s = g[0] * scale;
            sink.with(*logits, |dl| {
                for (i, (d, &p)) in dl.iter_mut().zip(probs).enumerate() {
                    let (row, col) = (i / b, i % b);
                    let target = if labels[col] == row { 1.0 } else { 0.0 };
                    *d += s * (p - target);
                }
            });
        }
        Op::Lstm(cache) => super::lstm::backprop(cache, g, sink),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_hand_values() {
        let mut g = Graph::new();
        let a = g.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = g.constant(t(&[&[1.0], &[1.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let m = t(&[&[1.0, -2.0, 3.5], &[0.0, 4.0, 1.0], &[9.0, 8.0, 7.0]]);
        let i = g.constant(Tensor::identity(3));
        let mv = g.constant(m.clone());
        let out = g.matmul(i, mv).unwrap();
        assert_eq!(g.value(out), &m);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn conv1d_identity_and_right_pad() {
        let mut g = Graph::new();
        let x = g.constant(t(&[&[1.0, 2.0, 3.0]]));
        let id = g.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let zero = g.constant(Tensor::zeros(&[1]));
        let y = g.conv1d_same(x, id, zero).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);

        let k2 = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
        let y = g.conv1d_same(x, k2, zero).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0, 3.0]);
    }

    #[test]
    fn conv1d_keeps_length_for_model_kernels() {
        for k in [20, 10, 2] {
            let mut g = Graph::new();
            let x = g.constant(Tensor::ones(&[3, 98]));
            let w = g.constant(Tensor::ones(&[4, 3, k]));
            let b = g.constant(Tensor::zeros(&[4]));
            let y = g.conv1d_same(x, w, b).unwrap();
            assert_eq!(g.shape(y), &[4, 98]);
        }
    }

    #[test]
    fn conv1d_kernel_longer_than_sequence() {
        let mut g = Graph::new();
        let x = g.constant(t(&[&[1.0, 2.0]]));
        let w = g.constant(Tensor::ones(&[1, 1, 5]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv1d_same(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 3.0]);
    }

    #[test]
    fn activations_at_fixed_points() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert!(Activation::Sigmoid.apply(-800.0).is_finite());
    }

    #[test]
    fn hadamard_values() {
        let mut g = Graph::new();
        let a = g.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = g.constant(t(&[&[2.0, 0.0], &[1.0, 3.0]]));
        let c = g.hadamard(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[2.0, 0.0, 3.0, 12.0]);
        let z = g.constant(Tensor::zeros(&[2, 2]));
        let c = g.hadamard(a, z).unwrap();
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
        let bad = g.constant(Tensor::zeros(&[1, 2]));
        assert!(g.hadamard(a, bad).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let mut g = Graph::new();
        let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = t(&[&[5.0, 6.0]]);
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.concat_rows(&[va, vb]).unwrap();
        assert_eq!(g.shape(c), &[3, 2]);
        let a2 = g.slice_rows(c, 0, 2).unwrap();
        let b2 = g.slice_rows(c, 2, 1).unwrap();
        assert_eq!(g.value(a2), &a);
        assert_eq!(g.value(b2), &b);
        let bad = g.constant(Tensor::zeros(&[1, 3]));
        assert!(g.concat_rows(&[va, bad]).is_err());
    }

    #[test]
    fn maxpool_masks_padding() {
        let mut g = Graph::new();
        let h = g.constant(t(&[&[1.0, 3.0], &[2.0, 0.0]]));
        let p = g.maxpool_time(h, &[2], 2).unwrap();
        assert_eq!(g.value(p).data(), &[3.0, 2.0]);

        let h = g.constant(t(&[&[1.0, 1e9], &[2.0, 1e9]]));
        let p = g.maxpool_time(h, &[1], 2).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0]);
        assert!(g.maxpool_time(h, &[3], 2).is_err());
        assert!(g.maxpool_time(h, &[0], 2).is_err());
    }

    #[test]
    fn maxpool_tie_routes_to_earliest() {
        let mut g = Graph::new();
        let h = g.param(t(&[&[2.0, 2.0, 1.0]]));
        let p = g.maxpool_time(h, &[3], 3).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(h).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln(), 4f64.ln()]);
        for (a, b) in p.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]), 0.0);
        let ce = cross_entropy(&[0.25; 4], &[0.0, 0.0, 1.0, 0.0]);
        assert!((ce - 4f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[0.0, 1.0], &[1.0, 0.0]).is_finite());
    }

    #[test]
    fn fused_ce_gradient_is_p_minus_y() {
        let mut g = Graph::new();
        let logits = g.param(Tensor::matrix(3, 1, vec![0.2, -1.0, 0.7]).unwrap());
        let l = g.softmax_cross_entropy(logits, &[2], 1.0).unwrap();
        g.backward(l).unwrap();
        let p = softmax(&[0.2, -1.0, 0.7]);
        let grad = g.grad(logits).unwrap();
        for (i, (gv, pv)) in grad.data().iter().zip(&p).enumerate() {
            let y = if i == 2 { 1.0 } else { 0.0 };
            assert!((gv - (pv - y)).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let mut g = Graph::new();
        let x = g.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let w = g.constant(Tensor::identity(2));
        let b0 = g.constant(Tensor::zeros(&[2]));
        let y = g.linear(x, w, b0).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let w0 = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::vector(vec![5.0, -1.0]).unwrap());
        let y = g.linear(x, w0, b).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 5.0, -1.0, -1.0]);
    }

    #[test]
    fn backward_simple_rules() {
        let mut g = Graph::new();
        let x = g.param(t(&[&[1.0, -2.0, 3.0]]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(t(&[&[1.0, -2.0, 3.0]]));
        let sq = g.hadamard(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_repeat() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[2, 2]));
        assert!(matches!(g.backward(x), Err(Error::Argument(_))));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Argument(_))));
    }

    #[test]
    fn pack_sequences_zero_pads() {
        let mut g = Graph::new();
        let a = g.constant(t(&[&[1.0, 2.0, 3.0]]));
        let b = g.constant(t(&[&[4.0]]));
        let (p, lens, t_max) = g.pack_sequences(&[a, b]).unwrap();
        assert_eq!(lens, vec![3, 1]);
        assert_eq!(t_max, 3);
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
    }
}
