//! Versioned binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "EMOFCKPT"
//! version    u32      1
//! feat_hash  u64      dsp::feature_order_hash()
//! fusion     u8       0 uttconcat, 1 tempalign, 2 tempalign-cme
//! pooling    u8       0 sum, 1 mean
//! norm_dim   u32      34
//! mean       f64 × norm_dim
//! std        f64 × norm_dim
//! count      u32      number of tensors
//! tensor*    name_len u16, name utf-8, rank u8, dims u32 × rank, f32 × numel
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::params::{param_shapes, ModelParams};
use crate::config::{FusionMode, PoolingMode};
use crate::dsp::{feature_order_hash, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"EMOFCKPT";
const VERSION: u32 = 1;

/// Per-feature z-normalisation statistics from a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity() -> Self {
        FeatureNorm {
            mean: vec![0.0; NUM_FEATURES],
            std: vec![1.0; NUM_FEATURES],
        }
    }

    /// Mean and population std of every feature row over all frames of all
    /// matrices. Rows with std below `1e-8` are left unscaled.
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let mut sum = vec![0.0; NUM_FEATURES];
        let mut sq = vec![0.0; NUM_FEATURES];
        let mut count = 0usize;
        for t in features {
            for r in 0..NUM_FEATURES {
                for &v in t.row(r) {
                    sum[r] += v;
                    sq[r] += v * v;
                }
            }
            count += t.cols();
        }
        if count == 0 {
            return Self::identity();
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                let s = var.sqrt();
                if s < 1e-8 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        FeatureNorm { mean, std }
    }

    pub fn apply(&self, features: &Tensor) -> Tensor {
        let mut out = features.clone();
        let cols = out.cols();
        for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
            for v in row {
                *v = (*v - self.mean[r]) / self.std[r];
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub fusion_mode: FusionMode,
    pub pooling: PoolingMode,
    pub norm: FeatureNorm,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&feature_order_hash().to_le_bytes());
        out.push(self.fusion_mode.tag());
        out.push(match self.pooling {
            PoolingMode::Sum => 0,
            PoolingMode::Mean => 1,
        });
        out.extend_from_slice(&(NUM_FEATURES as u32).to_le_bytes());
        for v in self.norm.mean.iter().chain(&self.norm.std) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let named: Vec<_> = self.params.named().collect();
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in named {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let bad = |msg: String| Error::Input(format!("checkpoint: {msg}"));
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic; not a checkpoint file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hash = read_u64(&mut r)?;
        if hash != feature_order_hash() {
            return Err(bad(format!(
                "feature order hash {hash:#x} does not match this build ({:#x})",
                feature_order_hash()
            )));
        }
        let fusion_mode = FusionMode::from_tag(read_u8(&mut r)?)
            .ok_or_else(|| bad("unknown fusion mode tag".into()))?;
        let pooling = match read_u8(&mut r)? {
            0 => PoolingMode::Sum,
            1 => PoolingMode::Mean,
            t => return Err(bad(format!("unknown pooling tag {t}"))),
        };
        let dim = read_u32(&mut r)? as usize;
        if dim != NUM_FEATURES {
            return Err(bad(format!("normalisation has {dim} features, expected {NUM_FEATURES}")));
        }
        let mean = (0..dim).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let std = (0..dim).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;

        let count = read_u32(&mut r)? as usize;
        let expected = param_shapes();
        if count != expected.len() {
            return Err(bad(format!("{count} tensors, expected {}", expected.len())));
        }
        let mut tensors = Vec::with_capacity(count);
        for (want_name, want_shape) in &expected {
            let name_len = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not utf-8".into()))?;
            if name != *want_name {
                return Err(bad(format!("found tensor {name:?}, expected {want_name:?}")));
            }
            let rank = read_u8(&mut r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != *want_shape {
                return Err(bad(format!("{name} has shape {shape:?}, expected {want_shape:?}")));
            }
            let numel: usize = shape.iter().product();
            let data = (0..numel)
                .map(|_| read_f32(&mut r).map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::new(shape, data)?);
        }
        if !r.is_empty() {
            return Err(bad(format!("{} trailing bytes", r.len())));
        }
        Ok(Checkpoint {
            params: ModelParams::from_tensors(tensors)?,
            fusion_mode,
            pooling,
            norm: FeatureNorm { mean, std },
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Input("checkpoint: truncated file".into()))
}

macro_rules! reader {
    ($name:ident, $ty:ty) => {
        fn $name(r: &mut &[u8]) -> Result<$ty> {
            let mut b = [0u8; std::mem::size_of::<$ty>()];
            read_exact(r, &mut b)?;
            Ok(<$ty>::from_le_bytes(b))
        }
    };
}

reader!(read_u8, u8);
reader!(read_u16, u16);
reader!(read_u32, u32);
reader!(read_u64, u64);
reader!(read_f32, f32);
reader!(read_f64, f64);
