use crate::config::TrainConfig;
use crate::model::ModelParams;

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState {
            m: ModelParams::zeros(),
            v: ModelParams::zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping. `max_norm <= 0` disables clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        ModelParams::init(&mut ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = params();
        let before = p.clone();
        let mut s = AdamState::default();
        adam_step(&mut p, &ModelParams::zeros(), &mut s, &TrainConfig::default());
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut p = ModelParams::zeros();
        let mut g = ModelParams::zeros();
        g.fc2_b.data_mut()[0] = 3.0;
        g.fc2_b.data_mut()[1] = -0.5;
        let mut s = AdamState::default();
        adam_step(&mut p, &g, &mut s, &cfg);
        // m_hat = g, v_hat = g^2: update = -lr * g / (|g| + eps)
        let expect0 = -0.001 * 3.0 / (3.0 + 1e-8);
        let expect1 = 0.001 * 0.5 / (0.5 + 1e-8);
        assert!((p.fc2_b.data()[0] - expect0).abs() < 1e-15);
        assert!((p.fc2_b.data()[1] - expect1).abs() < 1e-15);
        assert_eq!(p.fc2_b.data()[2], 0.0);
    }

    #[test]
    fn deterministic() {
        let cfg = TrainConfig::default();
        let g = params();
        let run = || {
            let mut p = params();
            let mut s = AdamState::default();
            for _ in 0..3 {
                adam_step(&mut p, &g, &mut s, &cfg);
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = params();
        let n = clip_global_norm(&mut g, 1.0);
        assert!(n > 1.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let mut h = params();
        clip_global_norm(&mut h, 0.0);
        assert_eq!(h, params());
    }
}
