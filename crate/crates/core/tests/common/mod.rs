//! Reference implementations and fixtures shared by the integration tests.
//! Everything here is written directly from the definitions and shares no
//! code with the library beyond its public data types.
#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use emofuse_core::alignment::{build_alignment, WordSpan};
use emofuse_core::data::{
    load_embeddings, load_manifest, load_utterances, synth::SynthFactors, synth_dataset,
    LoadedUtterance,
};
use emofuse_core::model::{ModelParams, PreparedSample};
use emofuse_core::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SR: f64 = 16000.0;
pub const EPS: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

// ---------------------------------------------------------------- DSP

/// One-sided magnitude spectrum by the O(N^2) DFT of the Hamming-windowed
/// frame zero-padded to the next power of two.
pub fn ref_spectrum(frame: &[f64]) -> Vec<f64> {
    let l = frame.len();
    let mut n_fft = 1;
    while n_fft < l {
        n_fft *= 2;
    }
    let windowed: Vec<f64> = (0..l)
        .map(|i| frame[i] * (0.54 - 0.46 * (2.0 * PI * i as f64 / (l as f64 - 1.0)).cos()))
        .collect();
    (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, x) in windowed.iter().enumerate() {
                let ang = -2.0 * PI * (k * t % n_fft) as f64 / n_fft as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

fn entropy_of_blocks(x: &[f64]) -> f64 {
    let size = x.len() / 8;
    let mut e = [0.0; 8];
    for (b, eb) in e.iter_mut().enumerate() {
        for v in &x[b * size..(b + 1) * size] {
            *eb += v * v;
        }
    }
    let total: f64 = e.iter().sum::<f64>() + EPS;
    let mut h = 0.0;
    for eb in e {
        let p = eb / total;
        h -= p * (p + EPS).ln() / 2f64.ln();
    }
    h
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// All 34 features of `frame`, given the previous frame's spectrum.
pub fn ref_features(frame: &[f64], prev: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    let l = frame.len();
    let mag = ref_spectrum(frame);
    let k_bins = mag.len();
    let n_fft = 2 * (k_bins - 1);
    let mut out = Vec::with_capacity(34);

    // zero-crossing rate
    let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
    let mut crossings = 0.0;
    for i in 1..l {
        crossings += f64::abs(sign(frame[i]) - sign(frame[i - 1]));
    }
    out.push(crossings / (2.0 * (l - 1) as f64));
    // energy
    out.push(frame.iter().map(|s| s * s).sum::<f64>() / l as f64);
    // energy entropy
    out.push(entropy_of_blocks(frame));
    // centroid, spread over normalised frequency
    let mass: f64 = mag.iter().sum::<f64>() + EPS;
    let freq = |k: usize| k as f64 / (k_bins - 1) as f64;
    let centroid: f64 = (0..k_bins).map(|k| freq(k) * mag[k]).sum::<f64>() / mass;
    let spread = ((0..k_bins).map(|k| (freq(k) - centroid).powi(2) * mag[k]).sum::<f64>() / mass).sqrt();
    out.push(centroid);
    out.push(spread);
    // spectral entropy
    out.push(entropy_of_blocks(&mag));
    // flux
    out.push(match prev {
        None => 0.0,
        Some(p) => {
            let sa: f64 = mag.iter().sum::<f64>() + EPS;
            let sb: f64 = p.iter().sum::<f64>() + EPS;
            (0..k_bins).map(|k| (mag[k] / sa - p[k] / sb).powi(2)).sum::<f64>().sqrt()
        }
    });
    // rolloff
    let power: f64 = mag.iter().map(|m| m * m).sum();
    let mut rolloff = 0.0;
    if power > 0.0 {
        let mut acc = 0.0;
        for k in 0..k_bins {
            acc += mag[k] * mag[k];
            if acc >= 0.9 * power {
                rolloff = freq(k);
                break;
            }
        }
    }
    out.push(rolloff);
    // MFCC: 40 triangular HTK-mel filters on the magnitude, ln, DCT-II (ortho)
    let top = mel(SR / 2.0);
    let log_mel: Vec<f64> = (0..40)
        .map(|m| {
            let lo = inv_mel(top * m as f64 / 41.0);
            let mid = inv_mel(top * (m + 1) as f64 / 41.0);
            let hi = inv_mel(top * (m + 2) as f64 / 41.0);
            let mut e = 0.0;
            for k in 0..k_bins {
                let f = k as f64 * SR / n_fft as f64;
                let w = if lo < f && f <= mid {
                    (f - lo) / (mid - lo)
                } else if mid < f && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                e += w * mag[k];
            }
            e.max(1e-10).ln()
        })
        .collect();
    for c in 0..13 {
        let norm = if c == 0 { (1.0f64 / 40.0).sqrt() } else { (2.0f64 / 40.0).sqrt() };
        let s: f64 = (0..40)
            .map(|i| log_mel[i] * (PI * c as f64 * (i as f64 + 0.5) / 40.0).cos())
            .sum();
        out.push(norm * s);
    }
    // chroma
    let mut chroma = [0.0; 12];
    let mut total = 0.0;
    for k in 1..k_bins {
        let f = k as f64 * SR / n_fft as f64;
        let semis = (12.0 * (f / 27.5).log2()).round() as i64;
        chroma[semis.rem_euclid(12) as usize] += mag[k] * mag[k];
        total += mag[k] * mag[k];
    }
    for c in &mut chroma {
        *c /= total + EPS;
    }
    out.extend_from_slice(&chroma);
    let mean = chroma.iter().sum::<f64>() / 12.0;
    out.push((chroma.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / 12.0).sqrt());
    (out, mag)
}

/// Random 400-sample frame: a few sines plus noise at a random level.
pub fn random_frame(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let tones: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..4))
        .map(|_| (rng.gen_range(50.0..7900.0), rng.gen_range(0.05..0.4), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let noise = rng.gen_range(0.0..0.2);
    (0..400)
        .map(|i| {
            let t = i as f64 / SR;
            let s: f64 = tones.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum();
            (s + rng.gen_range(-noise..=noise)).clamp(-1.0, 1.0)
        })
        .collect()
}

// ---------------------------------------------------------------- pooling

/// Word-by-word loop: column `j` is the sum (or mean) of the frames marked
/// in column `j` of `a`.
pub fn loop_pool(z: &Tensor, a: &Tensor, mean: bool) -> Tensor {
    let (q, n, m) = (z.rows(), z.cols(), a.cols());
    let mut out = Tensor::zeros(&[q, m]);
    for j in 0..m {
        let frames: Vec<usize> = (0..n).filter(|&i| a.get(i, j) == 1.0).collect();
        for r in 0..q {
            let mut acc = 0.0;
            for &i in &frames {
                acc += z.get(r, i);
            }
            if mean && !frames.is_empty() {
                acc /= frames.len() as f64;
            }
            out.set(r, j, acc);
        }
    }
    out
}

// ---------------------------------------------------------------- model fixtures

/// Small random utterance: `m` words of 3 frames each plus a trailing frame.
pub fn random_sample(m: usize, seed: u64, label: usize) -> PreparedSample {
    let mut r = rng(seed);
    let spans: Vec<WordSpan> = (0..m)
        .map(|j| WordSpan::new(format!("w{j}"), 30 * j as u32, 30 * j as u32 + 25))
        .collect();
    let n = 3 * m + 1;
    PreparedSample::new(
        format!("r{seed}"),
        random_tensor(&[34, n], &mut r, 1.0),
        build_alignment(&spans, n, 10, 25).unwrap(),
        random_tensor(&[300, m], &mut r, 0.5),
        label,
    )
    .unwrap()
}

pub fn param_tensor(params: &ModelParams, idx: usize) -> Tensor {
    params.tensors()[idx].clone()
}

/// Sum of `v ⊙ R` for a fixed random `R`, so every output element matters.
pub fn project(g: &mut Graph, v: Var, seed: u64) -> Var {
    let shape = g.shape(v).to_vec();
    let r = random_tensor(&shape, &mut rng(seed ^ 0x9e37), 1.0);
    let rv = g.constant(r);
    let h = g.hadamard(v, rv).unwrap();
    g.sum(h)
}

// ---------------------------------------------------------------- synthetic data

pub struct SynthLoaded {
    pub dir: tempfile::TempDir,
    pub utterances: Vec<LoadedUtterance>,
    pub factors: Vec<SynthFactors>,
}

pub fn synth_loaded(n_per_class: usize, seed: u64) -> SynthLoaded {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(n_per_class, seed, dir.path()).unwrap();
    let records = load_manifest(&ds.manifest_path).unwrap();
    let table = load_embeddings(&ds.embeddings_path).unwrap();
    SynthLoaded {
        utterances: load_utterances(&records, &table).unwrap(),
        factors: ds.factors,
        dir,
    }
}
