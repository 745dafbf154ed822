// Negated comparisons below reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How acoustic and semantic streams are joined before the BiLSTM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionMode {
    /// Utterance-level means of both streams, concatenated once.
    #[serde(rename = "uttconcat")]
    UttConcat,
    /// Word-level aligned acoustics concatenated with word semantics.
    #[serde(rename = "tempalign")]
    TempAlign,
    /// As `TempAlign`, with the acoustics gated by the semantic excitation.
    #[serde(rename = "tempalign-cme")]
    TempAlignCme,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [
        FusionMode::UttConcat,
        FusionMode::TempAlign,
        FusionMode::TempAlignCme,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::UttConcat => "uttconcat",
            FusionMode::TempAlign => "tempalign",
            FusionMode::TempAlignCme => "tempalign-cme",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            FusionMode::UttConcat => 0,
            FusionMode::TempAlign => 1,
            FusionMode::TempAlignCme => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "uttconcat" | "utt-concat" => Ok(FusionMode::UttConcat),
            "tempalign" | "temp-align" => Ok(FusionMode::TempAlign),
            "tempalign-cme" | "temp-align-cme" | "tempaligncme" | "cme" => {
                Ok(FusionMode::TempAlignCme)
            }
            other => Err(Error::Config(format!(
                "unknown fusion mode {other:?} (expected uttconcat, tempalign, tempalign-cme)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossReduction {
    Sum,
    Mean,
}

impl FromStr for LossReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(LossReduction::Sum),
            "mean" => Ok(LossReduction::Mean),
            other => Err(Error::Config(format!("unknown loss reduction {other:?}"))),
        }
    }
}

/// Frame-to-word pooling. `Sum` is the literal binary-matrix product;
/// `Mean` divides each word by its frame count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingMode {
    Sum,
    Mean,
}

impl FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(PoolingMode::Sum),
            "mean" => Ok(PoolingMode::Mean),
            other => Err(Error::Config(format!("unknown pooling mode {other:?}"))),
        }
    }
}

/// Parameter storage precision. Arithmetic is always carried out in `f64`;
/// with `F32` every parameter is rounded to the nearest `f32` after
/// initialisation and after each optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" => Ok(Precision::F32),
            "64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("precision must be 32 or 64, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub fusion_mode: FusionMode,
    pub loss_reduction: LossReduction,
    pub precision: Precision,
    pub pooling: PoolingMode,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            fusion_mode: FusionMode::TempAlignCme,
            loss_reduction: LossReduction::Sum,
            precision: Precision::F32,
            pooling: PoolingMode::Sum,
            clip_norm: 5.0,
            dropout: 0.0,
            weight_decay: 0.0,
            folds: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if !(self.clip_norm >= 0.0) {
            return fail(format!("clip_norm must be >= 0, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.folds < 2 {
            return fail(format!("folds must be >= 2, got {}", self.folds));
        }
        Ok(())
    }
}
