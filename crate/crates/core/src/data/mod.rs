//! Dataset manifests, embedding tables, tensor files, fold plans and the
//! synthetic dataset generator.

mod embeddings;
mod folds;
mod manifest;
mod prepare;
pub mod synth;
mod tensor_file;

pub use embeddings::{load_embeddings, write_embeddings, EmbeddingTable};
pub use folds::{kfold_split, Fold, FoldPlan};
pub use manifest::{load_manifest, parse_manifest, write_manifest, FeatureSource, UtteranceRecord};
pub use prepare::{load_utterances, LoadedUtterance};
pub use synth::{synth_dataset, SynthDataset};
pub use tensor_file::{read_tensor, write_tensor, DType};
