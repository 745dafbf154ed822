use crate::alignment::{build_alignment, AlignmentMatrix};
use crate::data::{read_tensor, EmbeddingTable, FeatureSource, UtteranceRecord};
use crate::dsp::{self, read_wav, FRAME_STEP_MS, FRAME_WIDTH_MS, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::model::{word_vectors, FeatureNorm, PreparedSample};
use crate::tensor::Tensor;

/// An utterance with raw (unnormalised) features, alignment and word
/// vectors resolved.
#[derive(Clone, Debug)]
pub struct LoadedUtterance {
    pub id: String,
    pub features: Tensor,
    pub alignment: AlignmentMatrix,
    pub word_vectors: Tensor,
    pub label: usize,
    pub oov_tokens: usize,
}

impl LoadedUtterance {
    pub fn load(record: &UtteranceRecord, table: &EmbeddingTable) -> Result<Self> {
        let features = match &record.source {
            FeatureSource::Audio(p) => dsp::utterance_features(&read_wav(p)?)?.features,
            FeatureSource::Features(p) => {
                let t = read_tensor(p)?;
                if t.rank() != 2 || t.rows() != NUM_FEATURES || !t.is_finite() {
                    return Err(Error::Input(format!(
                        "{}: feature matrix must be finite [{NUM_FEATURES}, n], got {:?}",
                        p.display(),
                        t.shape()
                    )));
                }
                t
            }
        };
        let alignment =
            build_alignment(&record.words, features.cols(), FRAME_STEP_MS, FRAME_WIDTH_MS)?;
        let diag = crate::alignment::validate_alignment(&alignment)?;
        if diag.empty_words > 0 {
            log::debug!(
                "{}: {} word(s) captured no frames",
                record.id,
                diag.empty_words
            );
        }
        let tokens: Vec<&str> = record.words.iter().map(|w| w.token.as_str()).collect();
        let oov_tokens = tokens.iter().filter(|t| table.lookup(t).1).count();
        Ok(LoadedUtterance {
            id: record.id.clone(),
            features,
            alignment,
            word_vectors: word_vectors(&tokens, table)?,
            label: record.label,
            oov_tokens,
        })
    }

    pub fn prepare(&self, norm: &FeatureNorm) -> Result<PreparedSample> {
        PreparedSample::new(
            self.id.clone(),
            norm.apply(&self.features),
            self.alignment.clone(),
            self.word_vectors.clone(),
            self.label,
        )
    }
}

/// Loads every record; fails on the first bad one.
pub fn load_utterances(
    records: &[UtteranceRecord],
    table: &EmbeddingTable,
) -> Result<Vec<LoadedUtterance>> {
    let loaded = records
        .iter()
        .map(|r| LoadedUtterance::load(r, table))
        .collect::<Result<Vec<_>>>()?;
    let oov: usize = loaded.iter().map(|u| u.oov_tokens).sum();
    if oov > 0 {
        log::info!("{oov} out-of-vocabulary token(s) mapped to zero vectors");
    }
    Ok(loaded)
}
