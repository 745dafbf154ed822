//! Finite-difference checks of every differentiable op and of the full
//! model loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::{build_alignment, AlignmentMatrix, WordSpan};
use crate::config::{FusionMode, LossReduction, PoolingMode};
use crate::error::Result;
use crate::model::{batch_loss, param_shapes, ModelParams, ParamVars, PreparedSample};
use crate::tensor::{grad_check_stats, GradCheckStats, Graph, Tensor, Var};

pub const OP_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;
/// Larger step for the full loss: many parameter gradients are ~1e-7 against
/// a loss of order 1, so a 1e-6 step is dominated by round-off.
const MODEL_STEP: f64 = 1e-4;
/// Probed elements per parameter tensor in the end-to-end check.
const MODEL_PROBES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub probed: usize,
    /// Probes dropped for straddling a ReLU kink or an argmax switch.
    pub skipped: usize,
}

impl GradCheckResult {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        GradCheckResult {
            name: name.into(),
            max_rel_error: 0.0,
            tolerance,
            probed: 0,
            skipped: 0,
        }
    }

    fn absorb(&mut self, s: GradCheckStats) {
        self.max_rel_error = self.max_rel_error.max(s.max_rel_error);
        self.probed += s.probed;
        self.skipped += s.skipped;
    }

    pub fn passed(&self) -> bool {
        self.probed > 0 && self.max_rel_error <= self.tolerance
    }
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
        .expect("positive shape")
}

/// Scalar `sum(v ⊙ R)` with a fixed random `R`.
fn project(g: &mut Graph, v: Var, r: &Tensor) -> Result<Var> {
    let rv = g.constant(r.clone());
    let h = g.hadamard(v, rv)?;
    Ok(g.sum(h))
}

type OpCase = (&'static str, Tensor, Box<dyn Fn(&mut Graph, Var) -> Result<Var>>);

fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases: Vec<OpCase> = Vec::new();

    macro_rules! case {
        ($name:expr, $x:expr, $out_shape:expr, |$g:ident, $v:ident| $body:expr) => {{
            let proj = rand_t(&$out_shape, r, 1.0);
            cases.push((
                $name,
                $x,
                Box::new(move |$g: &mut Graph, $v: Var| {
                    let out = $body?;
                    project($g, out, &proj)
                }),
            ));
        }};
    }

    let b = rand_t(&[4, 5], r, 1.0);
    case!("matmul.lhs", rand_t(&[3, 4], r, 1.0), [3, 5], |g, v| {
        let c = g.constant(b.clone());
        g.matmul(v, c)
    });
    let a = rand_t(&[3, 4], r, 1.0);
    case!("matmul.rhs", rand_t(&[4, 5], r, 1.0), [3, 5], |g, v| {
        let c = g.constant(a.clone());
        g.matmul(c, v)
    });
    let other = rand_t(&[3, 4], r, 1.0);
    case!("add", rand_t(&[3, 4], r, 1.0), [3, 4], |g, v| {
        let c = g.constant(other.clone());
        g.add(v, c)
    });
    case!("scale", rand_t(&[3, 4], r, 1.0), [3, 4], |g, v| Ok::<_, crate::Error>(g.scale(v, -1.7)));
    let other = rand_t(&[3, 4], r, 1.0);
    case!("hadamard", rand_t(&[3, 4], r, 1.0), [3, 4], |g, v| {
        let c = g.constant(other.clone());
        g.hadamard(v, c)
    });
    case!("sigmoid", rand_t(&[3, 4], r, 3.0), [3, 4], |g, v| Ok::<_, crate::Error>(g.sigmoid(v)));
    case!("tanh", rand_t(&[3, 4], r, 3.0), [3, 4], |g, v| Ok::<_, crate::Error>(g.tanh(v)));
    case!("relu", rand_t(&[3, 4], r, 3.0), [3, 4], |g, v| Ok::<_, crate::Error>(g.relu(v)));
    cases.push(("sum", rand_t(&[3, 4], r, 1.0), Box::new(|g: &mut Graph, v: Var| Ok(g.sum(v)))));

    let (w, bias, x) = (rand_t(&[3, 5], r, 1.0), rand_t(&[3], r, 1.0), rand_t(&[5, 4], r, 1.0));
    {
        let (w2, b2) = (w.clone(), bias.clone());
        case!("linear.input", x.clone(), [3, 4], |g, v| {
            let (wv, bv) = (g.constant(w2.clone()), g.constant(b2.clone()));
            g.linear(v, wv, bv)
        });
    }
    {
        let (x2, b2) = (x.clone(), bias.clone());
        case!("linear.weight", w.clone(), [3, 4], |g, v| {
            let (xv, bv) = (g.constant(x2.clone()), g.constant(b2.clone()));
            g.linear(xv, v, bv)
        });
    }
    case!("linear.bias", bias, [3, 4], |g, v| {
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        g.linear(xv, wv, v)
    });

    for k in [1usize, 2, 5] {
        let (f, cb, x) = (rand_t(&[4, 3, k], r, 1.0), rand_t(&[4], r, 1.0), rand_t(&[3, 9], r, 1.0));
        let (f1, b1) = (f.clone(), cb.clone());
        let name: &'static str = match k {
            1 => "conv1d.input.k1",
            2 => "conv1d.input.k2",
            _ => "conv1d.input.k5",
        };
        case!(name, x.clone(), [4, 9], |g, v| {
            let (fv, bv) = (g.constant(f1.clone()), g.constant(b1.clone()));
            g.conv1d_same(v, fv, bv)
        });
        let (x2, b2) = (x.clone(), cb.clone());
        let name: &'static str = match k {
            1 => "conv1d.filters.k1",
            2 => "conv1d.filters.k2",
            _ => "conv1d.filters.k5",
        };
        case!(name, f.clone(), [4, 9], |g, v| {
            let (xv, bv) = (g.constant(x2.clone()), g.constant(b2.clone()));
            g.conv1d_same(xv, v, bv)
        });
        if k == 5 {
            case!("conv1d.bias", cb, [4, 9], |g, v| {
                let (xv, fv) = (g.constant(x.clone()), g.constant(f.clone()));
                g.conv1d_same(xv, fv, v)
            });
        }
    }

    let other = rand_t(&[2, 4], r, 1.0);
    case!("concat_rows", rand_t(&[3, 4], r, 1.0), [5, 4], |g, v| {
        let c = g.constant(other.clone());
        g.concat_rows(&[c, v])
    });
    case!("slice_rows", rand_t(&[5, 4], r, 1.0), [2, 4], |g, v| g.slice_rows(v, 1, 2));
    case!("mean_cols", rand_t(&[3, 6], r, 1.0), [3, 1], |g, v| g.mean_cols(v));

    let spans = [WordSpan::new("a", 0, 40), WordSpan::new("b", 50, 70), WordSpan::new("c", 70, 120)];
    let align = build_alignment(&spans, 12, 10, 25).expect("valid spans");
    let a = align.tensor().clone();
    case!("align_pool.sum", rand_t(&[4, 12], r, 1.0), [4, 3], |g, v| g.align_pool(v, &a));
    let a = align.tensor().clone();
    case!("align_pool.mean", rand_t(&[4, 12], r, 1.0), [4, 3], |g, v| g.align_pool_mean(v, &a));

    let short = rand_t(&[3, 2], r, 1.0);
    case!("pack_sequences", rand_t(&[3, 4], r, 1.0), [3, 8], |g, v| {
        let s = g.constant(short.clone());
        g.pack_sequences(&[s, v]).map(|p| p.0)
    });
    case!("maxpool_time", rand_t(&[3, 8], r, 1.0), [3, 2], |g, v| g.maxpool_time(v, &[4, 2], 4));
    case!("softmax_columns", rand_t(&[4, 3], r, 2.0), [4, 3], |g, v| g.softmax_columns(v));
    cases.push((
        "softmax_cross_entropy",
        rand_t(&[4, 3], r, 2.0),
        Box::new(|g: &mut Graph, v: Var| g.softmax_cross_entropy(v, &[0, 3, 1], 1.0)),
    ));

    let (d, h) = (3usize, 4usize);
    let x = rand_t(&[d, 2 * 3], r, 1.0);
    let w_ih = rand_t(&[4 * h, d], r, 0.6);
    let w_hh = rand_t(&[4 * h, h], r, 0.6);
    let lb = rand_t(&[4 * h], r, 0.3);
    let lens = vec![3usize, 2];
    for reverse in [false, true] {
        let dir = if reverse { "bwd" } else { "fwd" };
        let inputs = [x.clone(), w_ih.clone(), w_hh.clone(), lb.clone()];
        for (which, label) in ["x", "w_ih", "w_hh", "b"].iter().enumerate() {
            let name: &'static str = Box::leak(format!("lstm.{dir}.{label}").into_boxed_str());
            let fixed = inputs.clone();
            let lens = lens.clone();
            case!(name, inputs[which].clone(), [h, 6], |g, v| {
                let mut vars: Vec<Var> = fixed.iter().map(|t| g.constant(t.clone())).collect();
                vars[which] = v;
                g.lstm(vars[0], vars[1], vars[2], vars[3], &lens, 3, reverse)
            });
        }
    }
    cases
}

/// Every op checked on every element, one result per op with the worst
/// error over all seeds.
pub fn check_ops(seeds: &[u64]) -> Result<Vec<GradCheckResult>> {
    let mut results: Vec<GradCheckResult> = Vec::new();
    for &seed in seeds {
        for (name, x, f) in op_cases(seed) {
            let all: Vec<usize> = (0..x.len()).collect();
            let stats = grad_check_stats(&*f, &x, STEP, &all)?;
            let pos = match results.iter().position(|r| r.name == name) {
                Some(p) => p,
                None => {
                    results.push(GradCheckResult::new(name, OP_TOLERANCE));
                    results.len() - 1
                }
            };
            results[pos].absorb(stats);
        }
    }
    Ok(results)
}

fn fixture_sample(m: usize, label: usize, rng: &mut ChaCha8Rng) -> Result<PreparedSample> {
    let spans: Vec<WordSpan> = (0..m)
        .map(|j| WordSpan::new(format!("w{j}"), 30 * j as u32, 30 * j as u32 + 25))
        .collect();
    let n = 3 * m + 1;
    let align: AlignmentMatrix = build_alignment(&spans, n, 10, 25)?;
    PreparedSample::new(
        format!("g{m}"),
        rand_t(&[crate::dsp::NUM_FEATURES, n], rng, 1.0),
        align,
        rand_t(&[crate::model::EMBED_DIM, m], rng, 0.5),
        label,
    )
}

/// Full-model loss gradient for each fusion mode on a padded batch of two
/// utterances; probes a few random elements of every parameter tensor.
pub fn check_model(seeds: &[u64]) -> Result<Vec<GradCheckResult>> {
    let shapes = param_shapes();
    let mut results = Vec::new();
    for mode in FusionMode::ALL {
        let mut result = GradCheckResult::new(format!("model.{}", mode.as_str()), MODEL_TOLERANCE);
        for &seed in seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = ModelParams::init(&mut rng);
            let samples = [fixture_sample(3, 1, &mut rng)?, fixture_sample(2, 3, &mut rng)?];
            let refs: Vec<&PreparedSample> = samples.iter().collect();
            let tensors = params.tensors();
            for (idx, t) in tensors.iter().enumerate() {
                let probes: Vec<usize> = (0..MODEL_PROBES).map(|_| rng.gen_range(0..t.len())).collect();
                let f = |g: &mut Graph, v: Var| {
                    let mut p = ParamVars::register(g, &params, false);
                    p.set(idx, v);
                    batch_loss(g, &p, &refs, mode, PoolingMode::Sum, LossReduction::Sum, None)
                };
                let stats = grad_check_stats(f, t, MODEL_STEP, &probes)?;
                if stats.max_rel_error > MODEL_TOLERANCE {
                    log::warn!("{mode} {}: relative error {:e}", shapes[idx].0, stats.max_rel_error);
                }
                result.absorb(stats);
            }
        }
        results.push(result);
    }
    Ok(results)
}

/// Ops followed by the end-to-end checks.
pub fn run_gradient_suite(seeds: &[u64]) -> Result<Vec<GradCheckResult>> {
    let mut out = check_ops(seeds)?;
    out.extend(check_model(seeds)?);
    Ok(out)
}
