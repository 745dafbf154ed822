//! Seeded fixtures for the kernel benchmarks.

use emofuse_core::dsp::{AudioClip, SAMPLE_RATE_HZ};
use emofuse_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
        .expect("shape matches data")
}

/// Noisy chirp of `ms` milliseconds at the pipeline sample rate.
pub fn chirp(ms: usize, rng: &mut ChaCha8Rng) -> AudioClip {
    let sr = f64::from(SAMPLE_RATE_HZ);
    let n = ms * SAMPLE_RATE_HZ as usize / 1000;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            0.4 * (std::f64::consts::TAU * (200.0 + 1500.0 * t) * t).sin() + rng.gen_range(-0.01..0.01)
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE_HZ).expect("valid clip")
}
