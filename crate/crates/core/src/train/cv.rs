use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::metrics::EvalReport;
use super::trainer::{evaluate, train_fold};
use crate::config::{FusionMode, TrainConfig};
use crate::data::{kfold_split, LoadedUtterance};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct CvOptions {
    /// Train folds on separate threads; results are identical either way.
    pub parallel_folds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub final_loss: f64,
    pub loss_curve: Vec<f64>,
    pub eval: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvReport {
    pub fusion_mode: FusionMode,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub mean_wa: f64,
    pub mean_ua: f64,
}

fn run_fold(
    fold: usize,
    utterances: &[LoadedUtterance],
    train_ids: &[String],
    test_ids: &[String],
    cfg: &TrainConfig,
) -> Result<FoldReport> {
    let pick = |ids: &[String]| -> Vec<LoadedUtterance> {
        let wanted: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        utterances
            .iter()
            .filter(|u| wanted.contains(u.id.as_str()))
            .cloned()
            .collect()
    };
    let (train, test) = (pick(train_ids), pick(test_ids));
    let fold_cfg = TrainConfig {
        seed: cfg.seed.wrapping_add(fold as u64),
        ..cfg.clone()
    };
    let outcome = train_fold(&train, &fold_cfg)?;
    let eval = evaluate(&outcome.checkpoint, &test)?;
    log::info!(
        "{} fold {}: WA {:.4} UA {:.4}",
        cfg.fusion_mode,
        fold + 1,
        eval.wa,
        eval.ua
    );
    Ok(FoldReport {
        fold,
        n_train: train.len(),
        n_test: test.len(),
        final_loss: outcome.loss_curve.last().copied().unwrap_or(f64::NAN),
        loss_curve: outcome.loss_curve,
        eval,
    })
}

/// K-fold cross-validation with `cfg.folds` folds; fold `f` trains with seed
/// `cfg.seed + f`.
pub fn cross_validate(
    utterances: &[LoadedUtterance],
    cfg: &TrainConfig,
    opts: &CvOptions,
) -> Result<CvReport> {
    cfg.validate()?;
    let ids: Vec<String> = utterances.iter().map(|u| u.id.clone()).collect();
    let plan = kfold_split(&ids, cfg.folds, cfg.seed)?;
    let folds = if opts.parallel_folds {
        std::thread::scope(|s| {
            let handles: Vec<_> = plan
                .folds
                .iter()
                .enumerate()
                .map(|(f, fold)| s.spawn(move || run_fold(f, utterances, &fold.train, &fold.test, cfg)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Argument("fold thread panicked".into()))))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        plan.folds
            .iter()
            .enumerate()
            .map(|(f, fold)| run_fold(f, utterances, &fold.train, &fold.test, cfg))
            .collect::<Result<Vec<_>>>()?
    };
    let k = folds.len() as f64;
    let mean_wa = folds.iter().map(|f| f.eval.wa).sum::<f64>() / k;
    let mean_ua = folds.iter().map(|f| f.eval.ua).sum::<f64>() / k;
    Ok(CvReport {
        fusion_mode: cfg.fusion_mode,
        seed: cfg.seed,
        folds,
        mean_wa,
        mean_ua,
    })
}

/// Cross-validates every mode in `modes` with otherwise identical settings.
pub fn run_ablation(
    utterances: &[LoadedUtterance],
    cfg: &TrainConfig,
    modes: &[FusionMode],
    opts: &CvOptions,
) -> Result<Vec<CvReport>> {
    modes
        .iter()
        .map(|&m| {
            let cfg = TrainConfig {
                fusion_mode: m,
                ..cfg.clone()
            };
            cross_validate(utterances, &cfg, opts)
        })
        .collect()
}

/// Plain-text WA/UA table, one row per mode.
pub fn ablation_table(reports: &[CvReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16}{:>8}{:>8}", "Model", "WA", "UA");
    for r in reports {
        let _ = writeln!(s, "{:<16}{:>8.3}{:>8.3}", r.fusion_mode.as_str(), r.mean_wa, r.mean_ua);
    }
    s
}

/// Writes `cv_<mode>.json` per report and `summary.txt`.
pub fn write_cv_reports(dir: impl AsRef<Path>, reports: &[CvReport]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in reports {
        let path = dir.join(format!("cv_{}.json", r.fusion_mode.as_str()));
        let mut json = serde_json::to_string_pretty(r).expect("report serialises");
        json.push('\n');
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("summary.txt");
    std::fs::write(&path, ablation_table(reports)).map_err(|e| Error::io(&path, e))
}
