//! Central finite-difference gradient checking.

// `!(eps > 0.0)` rejects NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(f: &F, x: &Tensor) -> Result<(f64, Vec<usize>)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    Ok((scalar_of(&g, out)?, g.branch_pattern()))
}

/// Outcome of a probed gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckStats {
    pub max_rel_error: f64,
    pub probed: usize,
    /// Probes whose `±eps` evaluations straddle a ReLU kink or a max-pool
    /// argmax change; finite differences are meaningless there.
    pub skipped: usize,
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::Argument(format!(
            "gradient check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

/// Compares the recorded gradient of scalar `f` at `x` against central
/// differences over every element; returns the max relative error.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, eps, &all)
}

/// Like [`grad_check`] but only probes the listed element indices.
pub fn grad_check_at<F>(f: F, x: &Tensor, eps: f64, indices: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_stats(f, x, eps, indices).map(|s| s.max_rel_error)
}

/// [`grad_check_at`] with probe counts.
pub fn grad_check_stats<F>(f: F, x: &Tensor, eps: f64, indices: &[usize]) -> Result<GradCheckStats>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("eps must be positive, got {eps}")));
    }
    if !x.is_finite() {
        return Err(Error::Argument("gradient check input is not finite".into()));
    }
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    scalar_of(&g, out)?;
    let pattern = g.branch_pattern();
    g.backward(out)?;
    let analytic = g.grad(v).unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut stats = GradCheckStats {
        max_rel_error: 0.0,
        probed: 0,
        skipped: 0,
    };
    let mut probe = x.clone();
    for &i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (up, p_up) = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let (down, p_down) = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        if p_up != pattern || p_down != pattern {
            stats.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * eps);
        stats.probed += 1;
        stats.max_rel_error = stats.max_rel_error.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(stats)
}
