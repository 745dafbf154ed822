//! The network: stacked 1-d CNN over frames, semantic projection,
//! temporal alignment pooling, cross-modality excitation, BiLSTM, max-pool
//! over words and a two-layer prediction head.
//!
//! Shape ledger for one utterance with `n` frames and `m` words:
//! `34×n → 128×n → (A) 128×m → (gate) 128×m → concat 256×m → BiLSTM 400×m
//! → max-pool 400 → 128 → 4`.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FeatureNorm};
pub use params::{
    param_shapes, ModelParams, ACOUSTIC_DIM, CNN_CHANNELS, CNN_KERNELS, EMBED_DIM, FCN_HIDDEN,
    FUSED_DIM, LSTM_HIDDEN, PARAM_COUNT, SEMANTIC_DIM,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{temporal_align_pool, AlignmentMatrix};
use crate::config::{FusionMode, LossReduction, PoolingMode};
use crate::data::EmbeddingTable;
use crate::dsp::NUM_FEATURES;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use crate::NUM_CLASSES;

/// One utterance ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    /// `[34, n]` low-level features (already normalised, if at all).
    pub features: Tensor,
    /// `[n, m]` frame-to-word alignment.
    pub alignment: AlignmentMatrix,
    /// `[300, m]` pretrained word vectors.
    pub word_vectors: Tensor,
    pub label: usize,
}

impl PreparedSample {
    pub fn new(
        id: impl Into<String>,
        features: Tensor,
        alignment: AlignmentMatrix,
        word_vectors: Tensor,
        label: usize,
    ) -> Result<Self> {
        if features.rank() != 2 || features.rows() != NUM_FEATURES {
            return Err(Error::dim("sample features", features.shape(), &[NUM_FEATURES, 0]));
        }
        if alignment.num_frames() != features.cols() {
            return Err(Error::dim(
                "sample alignment",
                alignment.tensor().shape(),
                features.shape(),
            ));
        }
        if word_vectors.rank() != 2
            || word_vectors.rows() != EMBED_DIM
            || word_vectors.cols() != alignment.num_words()
        {
            return Err(Error::dim(
                "sample word vectors",
                word_vectors.shape(),
                &[EMBED_DIM, alignment.num_words()],
            ));
        }
        if label >= NUM_CLASSES {
            return Err(Error::Input(format!("label {label} outside 0..{NUM_CLASSES}")));
        }
        Ok(PreparedSample {
            id: id.into(),
            features,
            alignment,
            word_vectors,
            label,
        })
    }

    pub fn num_words(&self) -> usize {
        self.alignment.num_words()
    }
}

/// Graph handles for every parameter tensor.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub conv_w: [Var; 3],
    pub conv_b: [Var; 3],
    pub sem_w: Var,
    pub sem_b: Var,
    pub cme_w: Var,
    pub fwd: [Var; 3],
    pub bwd: [Var; 3],
    pub fc1: [Var; 2],
    pub fc2: [Var; 2],
}

impl ParamVars {
    /// Records every parameter as a leaf; trainable leaves collect gradients.
    pub fn register(g: &mut Graph, params: &ModelParams, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let conv_w = [
            leaf(&params.conv_w[0]),
            leaf(&params.conv_w[1]),
            leaf(&params.conv_w[2]),
        ];
        let conv_b = [
            leaf(&params.conv_b[0]),
            leaf(&params.conv_b[1]),
            leaf(&params.conv_b[2]),
        ];
        ParamVars {
            conv_w,
            conv_b,
            sem_w: leaf(&params.sem_w),
            sem_b: leaf(&params.sem_b),
            cme_w: leaf(&params.cme_w),
            fwd: [
                leaf(&params.lstm_fwd_w_ih),
                leaf(&params.lstm_fwd_w_hh),
                leaf(&params.lstm_fwd_b),
            ],
            bwd: [
                leaf(&params.lstm_bwd_w_ih),
                leaf(&params.lstm_bwd_w_hh),
                leaf(&params.lstm_bwd_b),
            ],
            fc1: [leaf(&params.fc1_w), leaf(&params.fc1_b)],
            fc2: [leaf(&params.fc2_w), leaf(&params.fc2_b)],
        }
    }

    /// Vars in [`param_shapes`] order.
    pub fn vars(&self) -> [Var; 19] {
        [
            self.conv_w[0],
            self.conv_b[0],
            self.conv_w[1],
            self.conv_b[1],
            self.conv_w[2],
            self.conv_b[2],
            self.sem_w,
            self.sem_b,
            self.cme_w,
            self.fwd[0],
            self.fwd[1],
            self.fwd[2],
            self.bwd[0],
            self.bwd[1],
            self.bwd[2],
            self.fc1[0],
            self.fc1[1],
            self.fc2[0],
            self.fc2[1],
        ]
    }

    /// Replaces the handle at position `idx` of [`ParamVars::vars`].
    pub fn set(&mut self, idx: usize, v: Var) {
        match idx {
            0 | 2 | 4 => self.conv_w[idx / 2] = v,
            1 | 3 | 5 => self.conv_b[idx / 2] = v,
            6 => self.sem_w = v,
            7 => self.sem_b = v,
            8 => self.cme_w = v,
            9..=11 => self.fwd[idx - 9] = v,
            12..=14 => self.bwd[idx - 12] = v,
            15 | 16 => self.fc1[idx - 15] = v,
            17 | 18 => self.fc2[idx - 17] = v,
            _ => panic!("parameter index {idx} out of range"),
        }
    }

    /// Gradients after a backward pass, shaped like the parameters.
    pub fn grads(&self, g: &Graph) -> ModelParams {
        let tensors = self
            .vars()
            .iter()
            .map(|&v| g.grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
            .collect();
        ModelParams::from_tensors(tensors).expect("gradients mirror parameter shapes")
    }
}

/// `Z^a_1`: three sequential ReLU conv layers, outputs stacked to `[128, n]`.
pub fn acoustic_encode(g: &mut Graph, p: &ParamVars, x: Var) -> Result<Var> {
    let mut h = x;
    let mut layers = [x; 3];
    for (i, slot) in layers.iter_mut().enumerate() {
        let c = g.conv1d_same(h, p.conv_w[i], p.conv_b[i])?;
        h = g.relu(c);
        *slot = h;
    }
    g.concat_rows(&layers)
}

/// Pretrained vectors of `tokens` as a `[300, m]` matrix; unknown tokens
/// become zero columns.
pub fn word_vectors(tokens: &[impl AsRef<str>], table: &EmbeddingTable) -> Result<Tensor> {
    if tokens.is_empty() {
        return Err(Error::Input("semantic encoding needs at least one token".into()));
    }
    if table.dim() != EMBED_DIM {
        return Err(Error::dim("embedding table", &[table.dim()], &[EMBED_DIM]));
    }
    let m = tokens.len();
    let mut data = vec![0.0; EMBED_DIM * m];
    for (j, tok) in tokens.iter().enumerate() {
        let (vec, _) = table.lookup(tok.as_ref());
        for (r, v) in vec.iter().enumerate() {
            data[r * m + j] = *v;
        }
    }
    Tensor::matrix(EMBED_DIM, m, data)
}

/// `Z^s = W^s X^s + b`: `[300, m]` to `[128, m]`.
pub fn semantic_encode(g: &mut Graph, p: &ParamVars, word_vectors: Var) -> Result<Var> {
    g.linear(word_vectors, p.sem_w, p.sem_b)
}

/// `sigmoid(W Z^s) ⊙ Z^a_2`.
pub fn cross_modality_excite(g: &mut Graph, p: &ParamVars, z_s: Var, z_a2: Var) -> Result<Var> {
    if g.shape(z_s) != g.shape(z_a2) {
        return Err(Error::dim("cross_modality_excite", g.shape(z_s), g.shape(z_a2)));
    }
    let pre = g.matmul(p.cme_w, z_s)?;
    let gate = g.sigmoid(pre);
    g.hadamard(gate, z_a2)
}

/// Per-word fused representation `[256, m]` (or `[256, 1]` for
/// utterance-level concatenation).
pub fn fused_sequence(
    g: &mut Graph,
    p: &ParamVars,
    sample: &PreparedSample,
    mode: FusionMode,
    pooling: PoolingMode,
) -> Result<Var> {
    let x = g.constant(sample.features.clone());
    let z_a1 = acoustic_encode(g, p, x)?;
    let xs = g.constant(sample.word_vectors.clone());
    let z_s = semantic_encode(g, p, xs)?;
    match mode {
        FusionMode::UttConcat => {
            let a = g.mean_cols(z_a1)?;
            let s = g.mean_cols(z_s)?;
            g.concat_rows(&[a, s])
        }
        FusionMode::TempAlign => {
            let z_a2 = temporal_align_pool(g, z_a1, &sample.alignment, pooling)?;
            g.concat_rows(&[z_a2, z_s])
        }
        FusionMode::TempAlignCme => {
            let z_a2 = temporal_align_pool(g, z_a1, &sample.alignment, pooling)?;
            let z_a = cross_modality_excite(g, p, z_s, z_a2)?;
            g.concat_rows(&[z_a, z_s])
        }
    }
}

fn dropout(g: &mut Graph, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    let keep = 1.0 / (1.0 - rate);
    let mut mask = g.value(x).clone();
    for v in mask.data_mut() {
        *v = if rng.gen::<f64>() < rate { 0.0 } else { keep };
    }
    let m = g.constant(mask);
    g.hadamard(x, m)
}

/// Training-time dropout applied to the fused sequence and the pooled state.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// BiLSTM, max-pool and head over already fused sequences; `[4, B]` logits.
pub fn head_logits(
    g: &mut Graph,
    p: &ParamVars,
    seqs: &[Var],
    mut drop: Option<Dropout<'_>>,
) -> Result<Var> {
    let (mut x, lens, t) = g.pack_sequences(seqs)?;
    if let Some(d) = drop.as_mut().filter(|d| d.rate > 0.0) {
        x = dropout(g, x, d.rate, d.rng)?;
    }
    let fwd = g.lstm(x, p.fwd[0], p.fwd[1], p.fwd[2], &lens, t, false)?;
    let bwd = g.lstm(x, p.bwd[0], p.bwd[1], p.bwd[2], &lens, t, true)?;
    let h = g.concat_rows(&[fwd, bwd])?;
    let mut pooled = g.maxpool_time(h, &lens, t)?;
    if let Some(d) = drop.as_mut().filter(|d| d.rate > 0.0) {
        pooled = dropout(g, pooled, d.rate, d.rng)?;
    }
    let z = g.linear(pooled, p.fc1[0], p.fc1[1])?;
    let z = g.relu(z);
    g.linear(z, p.fc2[0], p.fc2[1])
}

/// Logits `[4, B]` for a batch of samples.
pub fn batch_logits(
    g: &mut Graph,
    p: &ParamVars,
    samples: &[&PreparedSample],
    mode: FusionMode,
    pooling: PoolingMode,
    drop: Option<Dropout<'_>>,
) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let seqs = samples
        .iter()
        .map(|s| fused_sequence(g, p, s, mode, pooling))
        .collect::<Result<Vec<_>>>()?;
    head_logits(g, p, &seqs, drop)
}

/// Class probabilities `[4, 1]` for one utterance.
pub fn forward(
    params: &ModelParams,
    sample: &PreparedSample,
    mode: FusionMode,
    pooling: PoolingMode,
) -> Result<Tensor> {
    Ok(predict_batch(params, &[sample], mode, pooling)?.remove(0))
}

/// Class probabilities for each sample, one `[4, 1]` tensor each.
pub fn predict_batch(
    params: &ModelParams,
    samples: &[&PreparedSample],
    mode: FusionMode,
    pooling: PoolingMode,
) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, false);
    let logits = batch_logits(&mut g, &p, samples, mode, pooling, None)?;
    let probs = g.softmax_columns(logits)?;
    let probs = g.value(probs);
    (0..samples.len())
        .map(|b| Tensor::matrix(NUM_CLASSES, 1, probs.column(b)))
        .collect()
}

pub(crate) fn reduction_scale(reduction: LossReduction, batch: usize) -> f64 {
    match reduction {
        LossReduction::Sum => 1.0,
        LossReduction::Mean => 1.0 / batch as f64,
    }
}

/// Records the batch cross-entropy on `g`.
pub fn batch_loss(
    g: &mut Graph,
    p: &ParamVars,
    samples: &[&PreparedSample],
    mode: FusionMode,
    pooling: PoolingMode,
    reduction: LossReduction,
    drop: Option<Dropout<'_>>,
) -> Result<Var> {
    let logits = batch_logits(g, p, samples, mode, pooling, drop)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    g.softmax_cross_entropy(logits, &labels, reduction_scale(reduction, samples.len()))
}

/// Cross-entropy of a batch, summed (or averaged) over samples.
pub fn loss(
    params: &ModelParams,
    samples: &[&PreparedSample],
    mode: FusionMode,
    pooling: PoolingMode,
    reduction: LossReduction,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, false);
    let l = batch_loss(&mut g, &p, samples, mode, pooling, reduction, None)?;
    Ok(g.value(l).data()[0])
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grads(
    params: &ModelParams,
    samples: &[&PreparedSample],
    mode: FusionMode,
    pooling: PoolingMode,
    reduction: LossReduction,
    drop: Option<Dropout<'_>>,
) -> Result<(f64, ModelParams)> {
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, true);
    let l = batch_loss(&mut g, &p, samples, mode, pooling, reduction, drop)?;
    g.backward(l)?;
    Ok((g.value(l).data()[0], p.grads(&g)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{build_alignment, WordSpan};
    use rand::SeedableRng;

    fn sample(n_words: usize, seed: u64, label: usize) -> PreparedSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spans: Vec<WordSpan> = (0..n_words)
            .map(|j| WordSpan::new(format!("w{j}"), 30 * j as u32, 30 * j as u32 + 25))
            .collect();
        let n = 3 * n_words + 1;
        let a = build_alignment(&spans, n, 10, 25).unwrap();
        let feats = (0..NUM_FEATURES * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let words = (0..EMBED_DIM * n_words).map(|_| rng.gen_range(-1.0..1.0)).collect();
        PreparedSample::new(
            format!("s{seed}"),
            Tensor::matrix(NUM_FEATURES, n, feats).unwrap(),
            a,
            Tensor::matrix(EMBED_DIM, n_words, words).unwrap(),
            label,
        )
        .unwrap()
    }

    fn params(seed: u64) -> ModelParams {
        ModelParams::init(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn shape_ledger() {
        let s = sample(3, 1, 0);
        let mut g = Graph::new();
        let p = ParamVars::register(&mut g, &params(0), false);
        let x = g.constant(s.features.clone());
        let za1 = acoustic_encode(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(za1), &[128, 10]);
        let fused = fused_sequence(&mut g, &p, &s, FusionMode::TempAlignCme, PoolingMode::Sum)
            .unwrap();
        assert_eq!(g.shape(fused), &[256, 3]);
        let utt = fused_sequence(&mut g, &p, &s, FusionMode::UttConcat, PoolingMode::Sum).unwrap();
        assert_eq!(g.shape(utt), &[256, 1]);
        let logits = head_logits(&mut g, &p, &[fused], None).unwrap();
        assert_eq!(g.shape(logits), &[4, 1]);
    }

    #[test]
    fn zero_params_give_uniform_output_and_b_ln4_loss() {
        let z = ModelParams::zeros();
        let s = [sample(2, 1, 0), sample(4, 2, 3), sample(1, 3, 1)];
        for mode in FusionMode::ALL {
            let p = forward(&z, &s[0], mode, PoolingMode::Sum).unwrap();
            assert_eq!(p.data(), &[0.25; 4]);
            let refs: Vec<&PreparedSample> = s.iter().collect();
            let l = loss(&z, &refs, mode, PoolingMode::Sum, LossReduction::Sum).unwrap();
            assert!((l - 3.0 * 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_cnn_gives_zero_acoustics() {
        let mut z = params(4);
        for t in z.conv_w.iter_mut().chain(z.conv_b.iter_mut()) {
            t.data_mut().fill(0.0);
        }
        let s = sample(2, 5, 0);
        let mut g = Graph::new();
        let p = ParamVars::register(&mut g, &z, false);
        let x = g.constant(s.features.clone());
        let za1 = acoustic_encode(&mut g, &p, x).unwrap();
        assert!(g.value(za1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_normalised_and_deterministic() {
        let pr = params(7);
        let s = sample(5, 9, 2);
        for mode in FusionMode::ALL {
            let a = forward(&pr, &s, mode, PoolingMode::Sum).unwrap();
            let b = forward(&pr, &s, mode, PoolingMode::Sum).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.shape(), &[4, 1]);
            assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.data().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn batched_forward_matches_single() {
        let pr = params(8);
        let s = [sample(2, 1, 0), sample(5, 2, 1), sample(3, 3, 2)];
        let refs: Vec<&PreparedSample> = s.iter().collect();
        let batch = predict_batch(&pr, &refs, FusionMode::TempAlignCme, PoolingMode::Sum).unwrap();
        for (b, one) in batch.iter().zip(&s) {
            let single = forward(&pr, one, FusionMode::TempAlignCme, PoolingMode::Sum).unwrap();
            assert!(b.max_abs_diff(&single) < 1e-12);
        }
    }

    #[test]
    fn cme_gate_extremes() {
        let pr = params(2);
        let s = sample(3, 4, 0);
        let mut g = Graph::new();
        let mut zero_w = pr.clone();
        zero_w.cme_w.data_mut().fill(0.0);
        let p = ParamVars::register(&mut g, &zero_w, false);
        let xs = g.constant(s.word_vectors.clone());
        let zs = semantic_encode(&mut g, &p, xs).unwrap();
        let za2 = g.constant(Tensor::full(&[128, 3], 3.0));
        let out = cross_modality_excite(&mut g, &p, zs, za2).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 1.5));

        let zero = g.constant(Tensor::zeros(&[128, 3]));
        let out = cross_modality_excite(&mut g, &p, zs, zero).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_label_is_rejected() {
        let s = sample(2, 1, 0);
        assert!(matches!(
            PreparedSample::new("x", s.features, s.alignment, s.word_vectors, 7),
            Err(Error::Input(_))
        ));
    }
}
