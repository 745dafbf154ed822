//! Desk-scale synthetic corpus where the class needs both modalities.
//!
//! Every utterance has [`WORDS_PER_UTTERANCE`] words on a fixed grid. One of
//! them is the key word: its token comes from vocabulary A or B (the content
//! factor) and its audio is a sine in a low or high band (the tone factor).
//! The other words are fillers with filler tokens and a random band each.
//! `label = 2 * tone + content`, so either factor alone pins the class down
//! to one of two.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::WordSpan;
use crate::data::{write_embeddings, write_manifest, EmbeddingTable, FeatureSource, UtteranceRecord};
use crate::dsp::{write_wav, AudioClip, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::model::EMBED_DIM;
use crate::NUM_CLASSES;

pub const WORDS_PER_UTTERANCE: usize = 3;
/// Leading and trailing silence.
pub const EDGE_MS: u32 = 20;
pub const WORD_MS: u32 = 60;
pub const GAP_MS: u32 = 20;

pub const VOCAB_A: [&str; 6] = ["bright", "sunny", "glad", "warm", "lively", "cheer"];
pub const VOCAB_B: [&str; 6] = ["gloomy", "cold", "grey", "heavy", "dull", "bleak"];
pub const FILLERS: [&str; 10] = ["the", "a", "and", "today", "we", "it", "was", "so", "then", "just"];

const LOW_BAND_HZ: (f64, f64) = (250.0, 450.0);
const HIGH_BAND_HZ: (f64, f64) = (1800.0, 2600.0);
const AMPLITUDE: f64 = 0.5;
const NOISE: f64 = 0.01;

/// The generating factors of one utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthFactors {
    /// 0 low band, 1 high band.
    pub tone: usize,
    /// 0 vocabulary A, 1 vocabulary B.
    pub content: usize,
    pub key_index: usize,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub manifest_path: PathBuf,
    pub embeddings_path: PathBuf,
    pub records: Vec<UtteranceRecord>,
    pub factors: Vec<SynthFactors>,
    pub embeddings: EmbeddingTable,
}

pub fn label_of(tone: usize, content: usize) -> usize {
    2 * tone + content
}

pub fn word_span_ms(j: usize) -> (u32, u32) {
    let start = EDGE_MS + (WORD_MS + GAP_MS) * j as u32;
    (start, start + WORD_MS)
}

pub fn utterance_ms() -> u32 {
    word_span_ms(WORDS_PER_UTTERANCE - 1).1 + EDGE_MS
}

fn band(tone: usize) -> (f64, f64) {
    if tone == 0 {
        LOW_BAND_HZ
    } else {
        HIGH_BAND_HZ
    }
}

fn toy_embeddings(rng: &mut ChaCha8Rng) -> Result<EmbeddingTable> {
    let mut direction = || -> Vec<f64> { (0..EMBED_DIM).map(|_| rng.gen_range(-0.1..0.1)).collect() };
    let groups = [(&VOCAB_A[..], direction()), (&VOCAB_B[..], direction()), (&FILLERS[..], direction())];
    let mut table = EmbeddingTable::new(EMBED_DIM);
    for (tokens, dir) in groups {
        for tok in tokens {
            let v = dir.iter().map(|d| d + rng.gen_range(-0.03..0.03)).collect();
            table.insert(*tok, v)?;
        }
    }
    // Stored with six decimals; round here so the in-memory table matches the file.
    for tok in VOCAB_A.iter().chain(&VOCAB_B).chain(&FILLERS) {
        let v = table.lookup(tok).0.iter().map(|x| format!("{x:.6}").parse().unwrap()).collect();
        table.insert(*tok, v)?;
    }
    Ok(table)
}

fn render(tones: &[f64], rng: &mut ChaCha8Rng) -> Result<AudioClip> {
    let sr = f64::from(SAMPLE_RATE_HZ);
    let total = (utterance_ms() as usize * SAMPLE_RATE_HZ as usize) / 1000;
    let mut samples: Vec<f64> = (0..total).map(|_| rng.gen_range(-NOISE..NOISE)).collect();
    for (j, &freq) in tones.iter().enumerate() {
        let (s, e) = word_span_ms(j);
        let a = s as usize * SAMPLE_RATE_HZ as usize / 1000;
        let b = e as usize * SAMPLE_RATE_HZ as usize / 1000;
        let len = (b - a) as f64;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for (i, x) in samples[a..b].iter_mut().enumerate() {
            let taper = (std::f64::consts::PI * (i as f64 + 0.5) / len).sin();
            *x += AMPLITUDE * taper * (std::f64::consts::TAU * freq * i as f64 / sr + phase).sin();
        }
    }
    AudioClip::new(samples, SAMPLE_RATE_HZ)
}

/// Writes `n_per_class * 4` utterances under `out_dir`: `manifest.jsonl`,
/// `embeddings.txt` and `audio/*.wav`. Identical seeds give identical bytes.
pub fn synth_dataset(n_per_class: usize, seed: u64, out_dir: impl AsRef<Path>) -> Result<SynthDataset> {
    if n_per_class == 0 {
        return Err(Error::Argument("n_per_class must be >= 1".into()));
    }
    let out_dir = out_dir.as_ref();
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embeddings = toy_embeddings(&mut rng)?;
    let mut records = Vec::with_capacity(n_per_class * NUM_CLASSES);
    let mut factors = Vec::with_capacity(n_per_class * NUM_CLASSES);
    for i in 0..n_per_class {
        for label in 0..NUM_CLASSES {
            let (tone, content) = (label / 2, label % 2);
            let key_index = rng.gen_range(0..WORDS_PER_UTTERANCE);
            let mut tokens = Vec::with_capacity(WORDS_PER_UTTERANCE);
            let mut tones = Vec::with_capacity(WORDS_PER_UTTERANCE);
            for j in 0..WORDS_PER_UTTERANCE {
                let (vocab, t): (&[&str], usize) = if j == key_index {
                    (if content == 0 { &VOCAB_A } else { &VOCAB_B }, tone)
                } else {
                    (&FILLERS, rng.gen_range(0..2))
                };
                tokens.push(*vocab.choose(&mut rng).expect("non-empty vocabulary"));
                let (lo, hi) = band(t);
                tones.push(rng.gen_range(lo..hi));
            }
            let id = format!("syn{:05}", i * NUM_CLASSES + label);
            let wav = audio_dir.join(format!("{id}.wav"));
            write_wav(&wav, &render(&tones, &mut rng)?)?;
            let words = tokens
                .iter()
                .enumerate()
                .map(|(j, tok)| {
                    let (s, e) = word_span_ms(j);
                    WordSpan::new(*tok, s, e)
                })
                .collect();
            records.push(UtteranceRecord {
                id,
                source: FeatureSource::Audio(wav),
                words,
                label,
            });
            factors.push(SynthFactors {
                tone,
                content,
                key_index,
                label: label_of(tone, content),
            });
        }
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    let embeddings_path = out_dir.join("embeddings.txt");
    write_manifest(&manifest_path, &records)?;
    write_embeddings(&embeddings_path, &embeddings)?;
    Ok(SynthDataset {
        manifest_path,
        embeddings_path,
        records,
        factors,
        embeddings,
    })
}

/// Best accuracy of any rule that sees one factor only, found by trying
/// every mapping from factor value to label.
pub fn best_single_factor_accuracy(factors: &[SynthFactors]) -> f64 {
    if factors.is_empty() {
        return 0.0;
    }
    let by = |key: fn(&SynthFactors) -> usize| -> usize {
        let mut counts = [[0usize; NUM_CLASSES]; 2];
        for f in factors {
            counts[key(f)][f.label] += 1;
        }
        counts.iter().map(|c| *c.iter().max().unwrap()).sum()
    };
    let best = by(|f| f.tone).max(by(|f| f.content));
    best as f64 / factors.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_fits_in_clip() {
        assert_eq!(word_span_ms(0), (20, 80));
        assert_eq!(word_span_ms(2), (180, 240));
        assert_eq!(utterance_ms(), 260);
    }

    #[test]
    fn balanced_deterministic_and_needs_both_factors() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let da = synth_dataset(10, 7, a.path()).unwrap();
        let db = synth_dataset(10, 7, b.path()).unwrap();
        assert_eq!(da.records.len(), 40);
        for c in 0..NUM_CLASSES {
            assert_eq!(da.records.iter().filter(|r| r.label == c).count(), 10);
        }
        for name in ["manifest.jsonl", "embeddings.txt", "audio/syn00013.wav"] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name} differs");
        }
        assert_eq!(da.factors, db.factors);
        assert_eq!(best_single_factor_accuracy(&da.factors), 0.5);
        assert!(da.factors.iter().all(|f| f.label == label_of(f.tone, f.content)));
        let loaded = crate::data::load_embeddings(&da.embeddings_path).unwrap();
        assert_eq!(loaded, da.embeddings);
    }
}
