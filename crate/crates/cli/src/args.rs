use std::path::{Path, PathBuf};

use clap::Args;
use emofuse_core::{FusionMode, LossReduction, PoolingMode, Precision, TrainConfig};

use crate::CliError;

/// Training flags; each mirrors a `TrainConfig` field and overrides the
/// value from `--config`.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    /// TOML file with `TrainConfig` fields; flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for initialisation, shuffling and fold assignment.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Adam first-moment decay
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    /// Adam second-moment decay
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    /// Adam denominator epsilon
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Passes over the training split
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Utterances per optimiser step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// uttconcat, tempalign or tempalign-cme.
    #[arg(long, value_parser = parse_with::<FusionMode>)]
    pub fusion_mode: Option<FusionMode>,
    /// sum or mean over the batch.
    #[arg(long, value_parser = parse_with::<LossReduction>)]
    pub loss_reduction: Option<LossReduction>,
    /// Parameter storage precision: 32 or 64.
    #[arg(long, value_parser = parse_with::<Precision>)]
    pub precision: Option<Precision>,
    /// Frame-to-word pooling: sum or mean.
    #[arg(long, value_parser = parse_with::<PoolingMode>)]
    pub pooling: Option<PoolingMode>,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Dropout rate on the fused sequence and pooled state; 0 disables
    #[arg(long)]
    pub dropout: Option<f64>,
    /// L2 coefficient added to the gradients
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Number of cross-validation folds.
    #[arg(long)]
    pub folds: Option<usize>,
}

pub fn parse_with<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr<Err = emofuse_core::Error>,
{
    s.parse().map_err(|e: emofuse_core::Error| e.to_string())
}

fn load_config_file(path: &Path) -> Result<TrainConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))
}

impl TrainFlags {
    /// Defaults, then the config file, then flags; validated.
    pub fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => load_config_file(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        apply!(
            seed, learning_rate, adam_beta1, adam_beta2, adam_eps, epochs, batch_size, fusion_mode,
            loss_reduction, precision, pooling, clip_norm, dropout, weight_decay, folds
        );
        c.validate()?;
        Ok(c)
    }
}

/// Writes the resolved configuration and seed to stderr.
pub fn announce(cfg: &TrainConfig) {
    let text = toml::to_string(cfg).expect("config serialises");
    eprintln!("# resolved config (seed {})\n{text}", cfg.seed);
}
