use super::features::FeatureExtractor;
use super::{samples_for_ms, AudioClip, FRAME_STEP_MS, FRAME_WIDTH_MS, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `floor((len - win) / hop) + 1`, or `None` when not even one frame fits.
pub fn frame_count(num_samples: usize, win: usize, hop: usize) -> Option<usize> {
    (num_samples >= win && hop > 0).then(|| (num_samples - win) / hop + 1)
}

/// Contiguous windows of `width_ms` every `step_ms`; trailing samples that
/// do not fill a whole frame are dropped.
pub fn frame_signal(clip: &AudioClip, width_ms: u32, step_ms: u32) -> Result<Vec<&[f64]>> {
    if step_ms == 0 || width_ms < step_ms {
        return Err(Error::Argument(format!(
            "need width_ms >= step_ms > 0, got width {width_ms}, step {step_ms}"
        )));
    }
    let win = samples_for_ms(width_ms, clip.sample_rate_hz());
    let hop = samples_for_ms(step_ms, clip.sample_rate_hz());
    let samples = clip.samples();
    let n = frame_count(samples.len(), win, hop).ok_or_else(|| {
        Error::Input(format!(
            "clip of {} samples is shorter than one {width_ms} ms frame ({win} samples)",
            samples.len()
        ))
    })?;
    Ok((0..n).map(|i| &samples[i * hop..i * hop + win]).collect())
}

/// Low-level feature matrix `[34, n]`, one column per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatureMatrix {
    pub features: Tensor,
}

impl FrameFeatureMatrix {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.rank() != 2 || features.rows() != NUM_FEATURES {
            return Err(Error::dim("frame features", features.shape(), &[NUM_FEATURES, 0]));
        }
        if !features.is_finite() {
            return Err(Error::Input("frame features contain non-finite values".into()));
        }
        Ok(FrameFeatureMatrix { features })
    }

    pub fn num_frames(&self) -> usize {
        self.features.cols()
    }
}

pub fn utterance_features(clip: &AudioClip) -> Result<FrameFeatureMatrix> {
    let frames = frame_signal(clip, FRAME_WIDTH_MS, FRAME_STEP_MS)?;
    let n = frames.len();
    let extractor = FeatureExtractor::new(frames[0].len(), clip.sample_rate_hz());
    let mut data = vec![0.0; NUM_FEATURES * n];
    let mut prev: Option<Vec<f64>> = None;
    for (i, frame) in frames.iter().enumerate() {
        let out = extractor.extract(frame, prev.as_deref());
        for (r, v) in out.features.iter().enumerate() {
            data[r * n + i] = *v;
        }
        prev = Some(out.spectrum);
    }
    FrameFeatureMatrix::new(Tensor::matrix(NUM_FEATURES, n, data)?)
}
