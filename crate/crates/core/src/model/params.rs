use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::NUM_FEATURES;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

pub const CNN_KERNELS: [usize; 3] = [20, 10, 2];
pub const CNN_CHANNELS: [usize; 3] = [64, 32, 32];
/// Acoustic embedding width: the three CNN layers concatenated.
pub const ACOUSTIC_DIM: usize = 128;
/// Pretrained word-vector width.
pub const EMBED_DIM: usize = 300;
/// Fine-tuned semantic embedding width.
pub const SEMANTIC_DIM: usize = 128;
pub const FUSED_DIM: usize = ACOUSTIC_DIM + SEMANTIC_DIM;
pub const LSTM_HIDDEN: usize = 200;
pub const FCN_HIDDEN: usize = 128;

/// Every trainable weight of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub conv_w: [Tensor; 3],
    pub conv_b: [Tensor; 3],
    pub sem_w: Tensor,
    pub sem_b: Tensor,
    pub cme_w: Tensor,
    pub lstm_fwd_w_ih: Tensor,
    pub lstm_fwd_w_hh: Tensor,
    pub lstm_fwd_b: Tensor,
    pub lstm_bwd_w_ih: Tensor,
    pub lstm_bwd_w_hh: Tensor,
    pub lstm_bwd_b: Tensor,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

/// Parameter names and shapes in checkpoint order.
pub fn param_shapes() -> Vec<(&'static str, Vec<usize>)> {
    let g4 = 4 * LSTM_HIDDEN;
    let mut cin = NUM_FEATURES;
    let mut out = Vec::new();
    let names = [("conv1.w", "conv1.b"), ("conv2.w", "conv2.b"), ("conv3.w", "conv3.b")];
    for (i, (w, b)) in names.into_iter().enumerate() {
        out.push((w, vec![CNN_CHANNELS[i], cin, CNN_KERNELS[i]]));
        out.push((b, vec![CNN_CHANNELS[i]]));
        cin = CNN_CHANNELS[i];
    }
    out.extend([
        ("semantic.w", vec![SEMANTIC_DIM, EMBED_DIM]),
        ("semantic.b", vec![SEMANTIC_DIM]),
        ("cme.w", vec![ACOUSTIC_DIM, SEMANTIC_DIM]),
        ("lstm.fwd.w_ih", vec![g4, FUSED_DIM]),
        ("lstm.fwd.w_hh", vec![g4, LSTM_HIDDEN]),
        ("lstm.fwd.b", vec![g4]),
        ("lstm.bwd.w_ih", vec![g4, FUSED_DIM]),
        ("lstm.bwd.w_hh", vec![g4, LSTM_HIDDEN]),
        ("lstm.bwd.b", vec![g4]),
        ("fc1.w", vec![FCN_HIDDEN, 2 * LSTM_HIDDEN]),
        ("fc1.b", vec![FCN_HIDDEN]),
        ("fc2.w", vec![NUM_CLASSES, FCN_HIDDEN]),
        ("fc2.b", vec![NUM_CLASSES]),
    ]);
    out
}

/// Total scalar parameter count, fixed by the architecture.
pub const PARAM_COUNT: usize = 904_132;

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("static shape")
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros() -> Self {
        Self::from_tensors(
            param_shapes()
                .into_iter()
                .map(|(_, s)| Tensor::zeros(&s))
                .collect(),
        )
        .expect("static shapes")
    }

    /// Glorot-uniform weights, zero biases except the LSTM forget gates (1).
    pub fn init(rng: &mut ChaCha8Rng) -> Self {
        let mut tensors = Vec::new();
        for (name, shape) in param_shapes() {
            let t = if name.ends_with(".b") {
                let mut b = Tensor::zeros(&shape);
                if name.starts_with("lstm") {
                    b.data_mut()[LSTM_HIDDEN..2 * LSTM_HIDDEN].fill(1.0);
                }
                b
            } else if shape.len() == 3 {
                let k = shape[2];
                glorot(rng, &shape, shape[1] * k, shape[0] * k)
            } else if name.starts_with("lstm") {
                glorot(rng, &shape, shape[1], LSTM_HIDDEN)
            } else {
                glorot(rng, &shape, shape[1], shape[0])
            };
            tensors.push(t);
        }
        Self::from_tensors(tensors).expect("static shapes")
    }

    /// Builds parameters from tensors in [`param_shapes`] order, checking
    /// every shape.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = param_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::Input(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Input(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let (c1w, c1b, c2w, c2b, c3w, c3b) = (next(), next(), next(), next(), next(), next());
        let p = ModelParams {
            conv_w: [c1w, c2w, c3w],
            conv_b: [c1b, c2b, c3b],
            sem_w: next(),
            sem_b: next(),
            cme_w: next(),
            lstm_fwd_w_ih: next(),
            lstm_fwd_w_hh: next(),
            lstm_fwd_b: next(),
            lstm_bwd_w_ih: next(),
            lstm_bwd_w_hh: next(),
            lstm_bwd_b: next(),
            fc1_w: next(),
            fc1_b: next(),
            fc2_w: next(),
            fc2_b: next(),
        };
        debug_assert_eq!(p.count(), PARAM_COUNT);
        Ok(p)
    }

    /// Tensors in [`param_shapes`] order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.conv_w[0],
            &self.conv_b[0],
            &self.conv_w[1],
            &self.conv_b[1],
            &self.conv_w[2],
            &self.conv_b[2],
            &self.sem_w,
            &self.sem_b,
            &self.cme_w,
            &self.lstm_fwd_w_ih,
            &self.lstm_fwd_w_hh,
            &self.lstm_fwd_b,
            &self.lstm_bwd_w_ih,
            &self.lstm_bwd_w_hh,
            &self.lstm_bwd_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let [c1w, c2w, c3w] = &mut self.conv_w;
        let [c1b, c2b, c3b] = &mut self.conv_b;
        vec![
            c1w,
            c1b,
            c2w,
            c2b,
            c3w,
            c3b,
            &mut self.sem_w,
            &mut self.sem_b,
            &mut self.cme_w,
            &mut self.lstm_fwd_w_ih,
            &mut self.lstm_fwd_w_hh,
            &mut self.lstm_fwd_b,
            &mut self.lstm_bwd_w_ih,
            &mut self.lstm_bwd_w_hh,
            &mut self.lstm_bwd_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        param_shapes()
            .into_iter()
            .map(|(n, _)| n)
            .zip(self.tensors())
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rounds every value to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
