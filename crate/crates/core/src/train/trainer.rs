use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, clip_global_norm, AdamState};
use super::metrics::{argmax, ConfusionMatrix, EvalReport};
use crate::config::{Precision, TrainConfig};
use crate::data::LoadedUtterance;
use crate::error::{Error, Result};
use crate::model::{loss_and_grads, predict_batch, Checkpoint, Dropout, FeatureNorm, ModelParams};
use crate::NUM_CLASSES;

const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Mean per-utterance loss of each epoch, measured during the epoch.
    pub loss_curve: Vec<f64>,
}

/// Trains from a seeded initialisation on `train`; normalisation statistics
/// come from the same split.
pub fn train_fold(train: &[LoadedUtterance], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let norm = FeatureNorm::fit(train.iter().map(|u| &u.features));
    let samples = train
        .iter()
        .map(|u| u.prepare(&norm))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(&mut rng);
    if cfg.precision == Precision::F32 {
        params.quantize_f32();
    }
    let mut state = AdamState::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| &samples[i]).collect();
            let drop = (cfg.dropout > 0.0).then_some(Dropout {
                rate: cfg.dropout,
                rng: &mut rng,
            });
            let (loss, mut grads) = loss_and_grads(
                &params,
                &batch,
                cfg.fusion_mode,
                cfg.pooling,
                cfg.loss_reduction,
                drop,
            )?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss is {loss} at epoch {} (step {})",
                    epoch + 1,
                    state.step + 1
                )));
            }
            total += match cfg.loss_reduction {
                crate::config::LossReduction::Sum => loss,
                crate::config::LossReduction::Mean => loss * batch.len() as f64,
            };
            if cfg.weight_decay > 0.0 {
                for (g, p) in grads.tensors_mut().into_iter().zip(params.tensors()) {
                    for (g, p) in g.data_mut().iter_mut().zip(p.data()) {
                        *g += cfg.weight_decay * p;
                    }
                }
            }
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Divergence(format!(
                    "gradient norm is {norm} at epoch {}",
                    epoch + 1
                )));
            }
            adam_step(&mut params, &grads, &mut state, cfg);
            if cfg.precision == Precision::F32 {
                params.quantize_f32();
            }
            if let Some((name, _)) = params.named().find(|(_, t)| !t.is_finite()) {
                return Err(Error::Divergence(format!(
                    "parameter {name} became non-finite at epoch {}",
                    epoch + 1
                )));
            }
        }
        let mean = total / samples.len() as f64;
        log::debug!("epoch {:>3}: mean loss {mean:.6}", epoch + 1);
        loss_curve.push(mean);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params,
            fusion_mode: cfg.fusion_mode,
            pooling: cfg.pooling,
            norm,
        },
        loss_curve,
    })
}

/// Argmax class per utterance.
pub fn predict_labels(ckpt: &Checkpoint, utterances: &[LoadedUtterance]) -> Result<Vec<usize>> {
    let samples = utterances
        .iter()
        .map(|u| u.prepare(&ckpt.norm))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<_> = chunk.iter().collect();
        for p in predict_batch(&ckpt.params, &refs, ckpt.fusion_mode, ckpt.pooling)? {
            out.push(argmax(p.data()));
        }
    }
    Ok(out)
}

pub fn evaluate(ckpt: &Checkpoint, utterances: &[LoadedUtterance]) -> Result<EvalReport> {
    let mut confusion = ConfusionMatrix::new(NUM_CLASSES);
    for (u, p) in utterances.iter().zip(predict_labels(ckpt, utterances)?) {
        confusion.add(u.label, p);
    }
    Ok(EvalReport::from_confusion(confusion))
}
