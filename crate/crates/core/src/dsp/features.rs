use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{
    ENTROPY_BLOCKS, EPS, LOG_FLOOR, NUM_CHROMA, NUM_FEATURES, NUM_MELS, NUM_MFCC,
    ROLLOFF_FRACTION,
};

/// `(1 / 2(L-1)) * sum |sgn(s_i) - sgn(s_{i-1})|` with `sgn(0) = +1`.
pub fn zero_crossing_rate(frame: &[f64]) -> f64 {
    if frame.len() < 2 {
        return 0.0;
    }
    let sgn = |v: f64| -> f64 { if v >= 0.0 { 1.0 } else { -1.0 } };
    let total: f64 = frame
        .windows(2)
        .map(|w| (sgn(w[1]) - sgn(w[0])).abs())
        .sum();
    total / (2.0 * (frame.len() - 1) as f64)
}

/// Mean of squared samples.
pub fn short_time_energy(frame: &[f64]) -> f64 {
    if frame.is_empty() {
        return 0.0;
    }
    frame.iter().map(|s| s * s).sum::<f64>() / frame.len() as f64
}

/// Base-2 entropy of the normalised energies of `ENTROPY_BLOCKS` equal
/// chunks (remainder dropped).
fn block_entropy(values: &[f64]) -> f64 {
    let block = values.len() / ENTROPY_BLOCKS;
    if block == 0 {
        return 0.0;
    }
    let energies: Vec<f64> = values
        .chunks_exact(block)
        .take(ENTROPY_BLOCKS)
        .map(|c| c.iter().map(|v| v * v).sum())
        .collect();
    let total: f64 = energies.iter().sum::<f64>() + EPS;
    -energies
        .iter()
        .map(|e| {
            let p = e / total;
            p * (p + EPS).log2()
        })
        .sum::<f64>()
}

pub fn energy_entropy(frame: &[f64]) -> f64 {
    block_entropy(frame)
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Triangular filters equally spaced on the HTK mel scale from 0 Hz to
/// Nyquist, evaluated on the one-sided DFT bins.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `[NUM_MELS][bins]`, row-major.
    weights: Vec<f64>,
    bins: usize,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(n_fft: usize, sample_rate: u32, n_mels: usize) -> Self {
        let bins = n_fft / 2 + 1;
        let nyquist = f64::from(sample_rate) / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = vec![0.0; n_mels * bins];
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * f64::from(sample_rate) / n_fft as f64;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[m * bins + k] = w;
            }
        }
        MelFilterbank { weights, bins }
    }

    pub fn apply(&self, magnitude: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.bins)
            .map(|row| row.iter().zip(magnitude).map(|(w, m)| w * m).sum())
            .collect()
    }
}

/// Orthonormal DCT-II, first `n_out` coefficients.
fn dct2_ortho(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
                    })
                    .sum::<f64>()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralStats {
    pub centroid: f64,
    pub spread: f64,
    pub entropy: f64,
    pub rolloff: f64,
}

/// Centroid and spread over normalised frequency `k / (K - 1)`, sub-band
/// entropy, and the 90% energy rolloff point.
pub fn spectral_stats(magnitude: &[f64]) -> SpectralStats {
    let bins = magnitude.len();
    let last = (bins.max(2) - 1) as f64;
    let mass: f64 = magnitude.iter().sum::<f64>() + EPS;
    let centroid = magnitude
        .iter()
        .enumerate()
        .map(|(k, m)| k as f64 / last * m)
        .sum::<f64>()
        / mass;
    let spread = (magnitude
        .iter()
        .enumerate()
        .map(|(k, m)| (k as f64 / last - centroid).powi(2) * m)
        .sum::<f64>()
        / mass)
        .sqrt();
    let energy: f64 = magnitude.iter().map(|m| m * m).sum();
    let rolloff = if energy > 0.0 {
        let target = ROLLOFF_FRACTION * energy;
        let mut acc = 0.0;
        let mut idx = bins - 1;
        for (k, m) in magnitude.iter().enumerate() {
            acc += m * m;
            if acc >= target {
                idx = k;
                break;
            }
        }
        idx as f64 / last
    } else {
        0.0
    };
    SpectralStats {
        centroid,
        spread,
        entropy: block_entropy(magnitude),
        rolloff,
    }
}

/// Euclidean distance between L1-normalised magnitude spectra.
pub fn spectral_flux(magnitude: &[f64], prev: &[f64]) -> f64 {
    let a = magnitude.iter().sum::<f64>() + EPS;
    let b = prev.iter().sum::<f64>() + EPS;
    magnitude
        .iter()
        .zip(prev)
        .map(|(x, y)| (x / a - y / b).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn pitch_classes(n_fft: usize, sample_rate: u32) -> Vec<Option<usize>> {
    (0..n_fft / 2 + 1)
        .map(|k| {
            (k > 0).then(|| {
                let f = k as f64 * f64::from(sample_rate) / n_fft as f64;
                ((12.0 * (f / 27.5).log2()).round() as i64).rem_euclid(12) as usize
            })
        })
        .collect()
}

/// Twelve pitch-class energy shares plus their population standard deviation.
pub fn chroma(magnitude: &[f64], n_fft: usize, sample_rate: u32) -> ([f64; NUM_CHROMA], f64) {
    chroma_with(magnitude, &pitch_classes(n_fft, sample_rate))
}

fn chroma_with(magnitude: &[f64], classes: &[Option<usize>]) -> ([f64; NUM_CHROMA], f64) {
    let mut bins = [0.0; NUM_CHROMA];
    let mut total = 0.0;
    for (m, pc) in magnitude.iter().zip(classes) {
        if let Some(pc) = pc {
            bins[*pc] += m * m;
            total += m * m;
        }
    }
    for b in &mut bins {
        *b /= total + EPS;
    }
    let mean = bins.iter().sum::<f64>() / NUM_CHROMA as f64;
    let var = bins.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / NUM_CHROMA as f64;
    (bins, var.sqrt())
}

/// Features of one frame plus its magnitude spectrum (needed for the next
/// frame's flux).
#[derive(Clone, Debug)]
pub struct LowLevelFrame {
    pub features: [f64; NUM_FEATURES],
    pub spectrum: Vec<f64>,
}

/// Precomputed window, FFT plan, mel filters and chroma map for one frame
/// length and sample rate.
#[derive(Clone)]
pub struct FeatureExtractor {
    frame_len: usize,
    n_fft: usize,
    sample_rate: u32,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    mel: MelFilterbank,
    classes: Vec<Option<usize>>,
}

impl FeatureExtractor {
    pub fn new(frame_len: usize, sample_rate: u32) -> Self {
        assert!(frame_len >= 2, "frame must hold at least two samples");
        let n_fft = next_pow2(frame_len);
        let window = (0..frame_len)
            .map(|i| {
                0.54 - 0.46
                    * (2.0 * std::f64::consts::PI * i as f64 / (frame_len - 1) as f64).cos()
            })
            .collect();
        FeatureExtractor {
            frame_len,
            n_fft,
            sample_rate,
            window,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            mel: MelFilterbank::new(n_fft, sample_rate, NUM_MELS),
            classes: pitch_classes(n_fft, sample_rate),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// One-sided magnitude spectrum of the Hamming-windowed, zero-padded frame.
    pub fn magnitude_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        assert_eq!(frame.len(), self.frame_len, "frame length changed");
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(s, w)| Complex::new(s * w, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.n_fft)
            .collect();
        self.fft.process(&mut buf);
        buf[..self.n_fft / 2 + 1].iter().map(|c| c.norm()).collect()
    }

    pub fn mfcc_from_spectrum(&self, magnitude: &[f64]) -> Vec<f64> {
        let log_mel: Vec<f64> = self
            .mel
            .apply(magnitude)
            .into_iter()
            .map(|e| e.max(LOG_FLOOR).ln())
            .collect();
        dct2_ortho(&log_mel, NUM_MFCC)
    }

    pub fn extract(&self, frame: &[f64], prev_spectrum: Option<&[f64]>) -> LowLevelFrame {
        let spectrum = self.magnitude_spectrum(frame);
        let stats = spectral_stats(&spectrum);
        let mut f = [0.0; NUM_FEATURES];
        f[0] = zero_crossing_rate(frame);
        f[1] = short_time_energy(frame);
        f[2] = energy_entropy(frame);
        f[3] = stats.centroid;
        f[4] = stats.spread;
        f[5] = stats.entropy;
        f[6] = prev_spectrum.map_or(0.0, |p| spectral_flux(&spectrum, p));
        f[7] = stats.rolloff;
        f[8..8 + NUM_MFCC].copy_from_slice(&self.mfcc_from_spectrum(&spectrum));
        let (bins, dev) = chroma_with(&spectrum, &self.classes);
        f[21..21 + NUM_CHROMA].copy_from_slice(&bins);
        f[33] = dev;
        LowLevelFrame {
            features: f,
            spectrum,
        }
    }
}

/// 13 MFCCs of a single frame.
pub fn mfcc(frame: &[f64], sample_rate: u32) -> Vec<f64> {
    let ex = FeatureExtractor::new(frame.len(), sample_rate);
    ex.mfcc_from_spectrum(&ex.magnitude_spectrum(frame))
}

/// All 34 low-level features of a frame; `prev_spectrum` is the previous
/// frame's magnitude spectrum (flux is 0 without one).
pub fn extract_llf(frame: &[f64], sample_rate: u32, prev_spectrum: Option<&[f64]>) -> LowLevelFrame {
    FeatureExtractor::new(frame.len(), sample_rate).extract(frame, prev_spectrum)
}
