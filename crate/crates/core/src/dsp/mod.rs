//! Frame-level low-level acoustic features.
//!
//! Audio is cut into 25 ms frames every 10 ms and each frame is described by
//! 34 values in the fixed order of [`FEATURE_NAMES`].

mod features;
mod framing;
mod wav;

pub use features::{
    chroma, energy_entropy, extract_llf, mfcc, short_time_energy, spectral_stats,
    zero_crossing_rate, FeatureExtractor, LowLevelFrame, MelFilterbank, SpectralStats,
};
pub use framing::{frame_count, frame_signal, utterance_features, FrameFeatureMatrix};
pub use wav::{read_wav, write_wav, AudioClip};

pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const FRAME_WIDTH_MS: u32 = 25;
pub const FRAME_STEP_MS: u32 = 10;
pub const NUM_FEATURES: usize = 34;
pub const NUM_MELS: usize = 40;
pub const NUM_MFCC: usize = 13;
pub const NUM_CHROMA: usize = 12;
/// Number of equal sub-blocks (energy entropy) and sub-bands (spectral entropy).
pub const ENTROPY_BLOCKS: usize = 8;
pub const ROLLOFF_FRACTION: f64 = 0.90;
pub const LOG_FLOOR: f64 = 1e-10;
/// Regulariser for ratios and entropies.
pub const EPS: f64 = 1e-8;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "zcr",
    "energy",
    "energy_entropy",
    "spectral_centroid",
    "spectral_spread",
    "spectral_entropy",
    "spectral_flux",
    "spectral_rolloff",
    "mfcc_1",
    "mfcc_2",
    "mfcc_3",
    "mfcc_4",
    "mfcc_5",
    "mfcc_6",
    "mfcc_7",
    "mfcc_8",
    "mfcc_9",
    "mfcc_10",
    "mfcc_11",
    "mfcc_12",
    "mfcc_13",
    "chroma_1",
    "chroma_2",
    "chroma_3",
    "chroma_4",
    "chroma_5",
    "chroma_6",
    "chroma_7",
    "chroma_8",
    "chroma_9",
    "chroma_10",
    "chroma_11",
    "chroma_12",
    "chroma_std",
];

/// FNV-1a over the comma-joined feature names. Stored in checkpoints so a
/// model is never fed features in a different order than it was trained on.
pub fn feature_order_hash() -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, name) in FEATURE_NAMES.iter().enumerate() {
        if i > 0 {
            h = (h ^ u64::from(b',')).wrapping_mul(0x0000_0100_0000_01b3);
        }
        for &byte in name.as_bytes() {
            h = (h ^ u64::from(byte)).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

pub(crate) fn samples_for_ms(ms: u32, sample_rate: u32) -> usize {
    (u64::from(ms) * u64::from(sample_rate) / 1000) as usize
}
