//! Single-direction LSTM over packed, variable-length sequences.
//!
//! Gate order in the stacked weights is input, forget, cell, output.
//! Internal buffers are column-contiguous (one run per packed column
//! `b * T + t`) so the per-step gathers stay cache friendly.

use super::graph::{GradSink, Graph, Op, Var};
use super::ops::sigmoid;
use super::{gemm, Tensor, View};
use crate::error::{Error, Result};

pub(crate) struct LstmCache {
    x: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    hidden: usize,
    lens: Vec<usize>,
    max_len: usize,
    reverse: bool,
    gates: Vec<f64>,
    cell_tanh: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
}

/// Packed column processed by sequence `b` at recurrence step `s`, if any.
fn column(lens: &[usize], max_len: usize, reverse: bool, b: usize, s: usize) -> Option<usize> {
    let len = lens[b];
    (s < len).then(|| b * max_len + if reverse { len - 1 - s } else { s })
}

impl Graph {
    /// Runs an LSTM over `x` (`[in, B * T]`, packed as by
    /// [`Graph::pack_sequences`]). Each sequence starts from zero state; with
    /// `reverse` it is read from its own last valid column backwards, so
    /// padding never leaks into the state. Padded output columns are zero.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm(
        &mut self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        lens: &[usize],
        max_len: usize,
        reverse: bool,
    ) -> Result<Var> {
        let (tx, tih, thh, tb) = (
            self.value(x),
            self.value(w_ih),
            self.value(w_hh),
            self.value(bias),
        );
        if tx.rank() != 2 || tih.rank() != 2 || thh.rank() != 2 {
            return Err(Error::dim("lstm", tx.shape(), tih.shape()));
        }
        let (in_dim, width) = (tx.rows(), tx.cols());
        let hidden = thh.cols();
        let g4 = 4 * hidden;
        if tih.shape() != [g4, in_dim] {
            return Err(Error::dim("lstm", tih.shape(), &[g4, in_dim]));
        }
        if thh.shape() != [g4, hidden] {
            return Err(Error::dim("lstm", thh.shape(), &[g4, hidden]));
        }
        if tb.len() != g4 {
            return Err(Error::dim("lstm", tb.shape(), &[g4]));
        }
        if lens.is_empty() || lens.len() * max_len != width {
            return Err(Error::dim("lstm", tx.shape(), &[in_dim, lens.len() * max_len]));
        }
        if lens.iter().any(|&l| l == 0 || l > max_len) {
            return Err(Error::Argument(format!(
                "lstm sequence lengths {lens:?} outside 1..={max_len}"
            )));
        }
        let batch = lens.len();

        // Input projections for every column at once, plus bias.
        let mut pre_in = vec![0.0; g4 * width];
        gemm(
            1.0,
            View::row_major(tih.data(), g4, in_dim),
            View::row_major(tx.data(), in_dim, width),
            0.0,
            &mut pre_in,
            1,
            g4 as isize,
        );
        for col in pre_in.chunks_mut(g4) {
            for (v, b) in col.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }

        let mut gates = vec![0.0; g4 * width];
        let mut cell_tanh = vec![0.0; hidden * width];
        let mut h_prev = vec![0.0; hidden * width];
        let mut c_prev = vec![0.0; hidden * width];
        let mut out = vec![0.0; hidden * width];
        let mut h_state = vec![0.0; hidden * batch];
        let mut c_state = vec![0.0; hidden * batch];
        let mut h_act = vec![0.0; hidden * batch];
        let mut rec = vec![0.0; g4 * batch];

        for s in 0..max_len {
            let active: Vec<(usize, usize)> = (0..batch)
                .filter_map(|b| column(lens, max_len, reverse, b, s).map(|c| (b, c)))
                .collect();
            for (a, &(b, _)) in active.iter().enumerate() {
                h_act[a * hidden..(a + 1) * hidden]
                    .copy_from_slice(&h_state[b * hidden..(b + 1) * hidden]);
            }
            let nact = active.len();
            gemm(
                1.0,
                View::row_major(thh.data(), g4, hidden),
                View::col_major(&h_act, hidden, nact),
                0.0,
                &mut rec,
                1,
                g4 as isize,
            );
            for (a, &(b, col)) in active.iter().enumerate() {
                let pre = &pre_in[col * g4..(col + 1) * g4];
                let r = &rec[a * g4..(a + 1) * g4];
                let gt = &mut gates[col * g4..(col + 1) * g4];
                for j in 0..g4 {
                    let z = pre[j] + r[j];
                    gt[j] = if (2 * hidden..3 * hidden).contains(&j) {
                        z.tanh()
                    } else {
                        sigmoid(z)
                    };
                }
                let hs = &mut h_state[b * hidden..(b + 1) * hidden];
                let cs = &mut c_state[b * hidden..(b + 1) * hidden];
                let base = col * hidden;
                h_prev[base..base + hidden].copy_from_slice(hs);
                c_prev[base..base + hidden].copy_from_slice(cs);
                for j in 0..hidden {
                    let (i, f, g, o) = (
                        gt[j],
                        gt[hidden + j],
                        gt[2 * hidden + j],
                        gt[3 * hidden + j],
                    );
                    let c = f * cs[j] + i * g;
                    let tc = c.tanh();
                    let h = o * tc;
                    cs[j] = c;
                    hs[j] = h;
                    cell_tanh[base + j] = tc;
                    out[j * width + col] = h;
                }
            }
        }

        let rg = self.any_grad(&[x, w_ih, w_hh, bias]);
        let cache = LstmCache {
            x,
            w_ih,
            w_hh,
            bias,
            hidden,
            lens: lens.to_vec(),
            max_len,
            reverse,
            gates,
            cell_tanh,
            h_prev,
            c_prev,
        };
        Ok(self.push(
            Tensor::matrix(hidden, width, out)?,
            rg,
            Op::Lstm(Box::new(cache)),
        ))
    }
}

pub(crate) fn backprop(cache: &LstmCache, g: &[f64], sink: &mut GradSink<'_>) {
    let nodes = sink.nodes;
    let tx = &nodes[cache.x.0].value;
    let tih = &nodes[cache.w_ih.0].value;
    let thh = &nodes[cache.w_hh.0].value;
    let hidden = cache.hidden;
    let g4 = 4 * hidden;
    let (in_dim, width) = (tx.rows(), tx.cols());
    let batch = cache.lens.len();

    let mut da_all = vec![0.0; g4 * width];
    let mut dh_state = vec![0.0; hidden * batch];
    let mut dc_state = vec![0.0; hidden * batch];
    let mut da_act = vec![0.0; g4 * batch];
    let mut dh_act = vec![0.0; hidden * batch];

    for s in (0..cache.max_len).rev() {
        let active: Vec<(usize, usize)> = (0..batch)
            .filter_map(|b| {
                column(&cache.lens, cache.max_len, cache.reverse, b, s).map(|c| (b, c))
            })
            .collect();
        for (a, &(b, col)) in active.iter().enumerate() {
            let gt = &cache.gates[col * g4..(col + 1) * g4];
            let base = col * hidden;
            let da = &mut da_all[col * g4..(col + 1) * g4];
            let dhs = &dh_state[b * hidden..(b + 1) * hidden];
            let dcs = &mut dc_state[b * hidden..(b + 1) * hidden];
            for j in 0..hidden {
                let (i, f, gg, o) = (
                    gt[j],
                    gt[hidden + j],
                    gt[2 * hidden + j],
                    gt[3 * hidden + j],
                );
                let tc = cache.cell_tanh[base + j];
                let dh = g[j * width + col] + dhs[j];
                let dc = dcs[j] + dh * o * (1.0 - tc * tc);
                da[j] = dc * gg * i * (1.0 - i);
                da[hidden + j] = dc * cache.c_prev[base + j] * f * (1.0 - f);
                da[2 * hidden + j] = dc * i * (1.0 - gg * gg);
                da[3 * hidden + j] = dh * tc * o * (1.0 - o);
                dcs[j] = dc * f;
            }
            da_act[a * g4..(a + 1) * g4].copy_from_slice(da);
        }
        let nact = active.len();
        gemm(
            1.0,
            View::row_major(thh.data(), g4, hidden).t(),
            View::col_major(&da_act, g4, nact),
            0.0,
            &mut dh_act,
            1,
            hidden as isize,
        );
        for (a, &(b, _)) in active.iter().enumerate() {
            dh_state[b * hidden..(b + 1) * hidden]
                .copy_from_slice(&dh_act[a * hidden..(a + 1) * hidden]);
        }
    }

    let da_view = View::col_major(&da_all, g4, width);
    sink.with(cache.w_ih, |dw| {
        gemm(
            1.0,
            da_view,
            View::row_major(tx.data(), in_dim, width).t(),
            1.0,
            dw,
            in_dim as isize,
            1,
        )
    });
    sink.with(cache.w_hh, |dw| {
        gemm(
            1.0,
            da_view,
            View::col_major(&cache.h_prev, hidden, width).t(),
            1.0,
            dw,
            hidden as isize,
            1,
        )
    });
    sink.with(cache.bias, |db| {
        for col in da_all.chunks(g4) {
            for (d, v) in db.iter_mut().zip(col) {
                *d += v;
            }
        }
    });
    sink.with(cache.x, |dx| {
        gemm(
            1.0,
            View::row_major(tih.data(), g4, in_dim).t(),
            da_view,
            1.0,
            dx,
            width as isize,
            1,
        )
    });
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    /// Unbatched single-sequence reference written directly from the cell
    /// equations.
    fn reference(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, b: &Tensor, reverse: bool) -> Vec<Vec<f64>> {
        let h = w_hh.cols();
        let n = x.cols();
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut out = vec![vec![0.0; h]; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let xt = x.column(t);
            let mut z = vec![0.0; 4 * h];
            for r in 0..4 * h {
                z[r] = b.data()[r]
                    + (0..x.rows()).map(|c| w_ih.get(r, c) * xt[c]).sum::<f64>()
                    + (0..h).map(|c| w_hh.get(r, c) * hs[c]).sum::<f64>();
            }
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                cs[j] = f * cs[j] + i * g;
                hs[j] = o * cs[j].tanh();
            }
            out[t] = hs.clone();
        }
        out
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn packed_batch_matches_per_sequence_reference() {
        let (inp, h) = (3, 4);
        let w_ih = rand_tensor(&[16, inp], 1);
        let w_hh = rand_tensor(&[16, h], 2);
        let b = rand_tensor(&[16], 3);
        let seqs = [rand_tensor(&[inp, 5], 4), rand_tensor(&[inp, 2], 5)];
        for reverse in [false, true] {
            let mut g = Graph::new();
            let parts: Vec<_> = seqs.iter().map(|s| g.constant(s.clone())).collect();
            let (x, lens, t) = g.pack_sequences(&parts).unwrap();
            let (wi, wh, bb) = (
                g.constant(w_ih.clone()),
                g.constant(w_hh.clone()),
                g.constant(b.clone()),
            );
            let y = g.lstm(x, wi, wh, bb, &lens, t, reverse).unwrap();
            let y = g.value(y);
            for (bi, seq) in seqs.iter().enumerate() {
                let want = reference(seq, &w_ih, &w_hh, &b, reverse);
                for tt in 0..t {
                    for j in 0..h {
                        let got = y.get(j, bi * t + tt);
                        let expect = if tt < seq.cols() { want[tt][j] } else { 0.0 };
                        assert!((got - expect).abs() < 1e-12, "b{bi} t{tt} j{j}");
                    }
                }
            }
        }
    }
}
