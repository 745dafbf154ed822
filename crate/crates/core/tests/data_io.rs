mod common;

use emofuse_core::data::{
    load_manifest, load_utterances, read_tensor, synth::SynthFactors, write_manifest, write_tensor,
    DType, FeatureSource, UtteranceRecord,
};
use emofuse_core::dsp::{read_wav, utterance_features};

/// Mean spectral centroid of each utterance.
fn centroid_feature(data: &common::SynthLoaded) -> Vec<f64> {
    data.utterances
        .iter()
        .map(|u| {
            let row = u.features.row(3);
            row.iter().sum::<f64>() / row.len() as f64
        })
        .collect()
}

/// Multinomial logistic regression on one standardised scalar, trained by
/// full-batch gradient descent; returns training accuracy.
fn logistic_probe(x: &[f64], y: &[usize]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    let x: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    let (mut w, mut b) = ([0.0f64; 4], [0.0f64; 4]);
    for _ in 0..3000 {
        let (mut gw, mut gb) = ([0.0; 4], [0.0; 4]);
        for (xi, &yi) in x.iter().zip(y) {
            let logits: Vec<f64> = (0..4).map(|k| w[k] * xi + b[k]).collect();
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let s: f64 = e.iter().sum();
            for k in 0..4 {
                let d = e[k] / s - f64::from(u8::from(k == yi));
                gw[k] += d * xi / n;
                gb[k] += d / n;
            }
        }
        for k in 0..4 {
            w[k] -= 0.5 * gw[k];
            b[k] -= 0.5 * gb[k];
        }
    }
    let correct = x
        .iter()
        .zip(y)
        .filter(|(xi, &yi)| {
            let scores: Vec<f64> = (0..4).map(|k| w[k] * *xi + b[k]).collect();
            let best = (0..4).fold(0, |a, k| if scores[k] > scores[a] { k } else { a });
            best == yi
        })
        .count();
    correct as f64 / n
}

#[test]
fn acoustic_only_probe_is_near_chance_for_four_classes() {
    let data = common::synth_loaded(25, 31);
    let labels: Vec<usize> = data.utterances.iter().map(|u| u.label).collect();
    let acc = logistic_probe(&centroid_feature(&data), &labels);
    assert!(acc <= 0.6, "tone-only probe reached {acc}");
}

#[test]
fn joint_factors_determine_the_class() {
    let data = common::synth_loaded(5, 32);
    for (u, f) in data.utterances.iter().zip(&data.factors) {
        let SynthFactors { tone, content, .. } = *f;
        assert_eq!(u.label, 2 * tone + content);
    }
}

#[test]
fn feature_files_match_audio_path() {
    let data = common::synth_loaded(1, 33);
    let records = load_manifest(data.dir.path().join("manifest.jsonl")).unwrap();
    let feat_dir = data.dir.path().join("features");
    std::fs::create_dir_all(&feat_dir).unwrap();
    let mut converted = Vec::new();
    for r in &records {
        let FeatureSource::Audio(wav) = &r.source else {
            panic!("synthetic records reference audio")
        };
        let feats = utterance_features(&read_wav(wav).unwrap()).unwrap().features;
        let out = feat_dir.join(format!("{}.emt", r.id));
        write_tensor(&out, &feats, DType::F64).unwrap();
        converted.push(UtteranceRecord {
            source: FeatureSource::Features(out),
            ..r.clone()
        });
    }
    let manifest = data.dir.path().join("features.jsonl");
    write_manifest(&manifest, &converted).unwrap();
    let reloaded = load_manifest(&manifest).unwrap();
    assert_eq!(reloaded, converted);
    let table = emofuse_core::data::load_embeddings(data.dir.path().join("embeddings.txt")).unwrap();
    let from_files = load_utterances(&reloaded, &table).unwrap();
    for (a, b) in from_files.iter().zip(&data.utterances) {
        assert_eq!(a.features, b.features);
        assert_eq!(a.alignment, b.alignment);
        assert_eq!(a.word_vectors, b.word_vectors);
    }
    assert_eq!(read_tensor(feat_dir.join("syn00000.emt")).unwrap(), data.utterances[0].features);
}
