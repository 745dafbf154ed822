use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use emofuse_core::data::{
    load_embeddings, load_manifest, load_utterances, synth_dataset, write_manifest, write_tensor,
    DType, FeatureSource, LoadedUtterance, UtteranceRecord,
};
use emofuse_core::dsp::{read_wav, utterance_features};
use emofuse_core::gradsuite::run_gradient_suite;
use emofuse_core::model::{load_checkpoint, save_checkpoint};
use emofuse_core::train::{
    ablation_table, evaluate, run_ablation, train_fold, write_cv_reports, CvOptions, EvalReport,
};
use emofuse_core::{FusionMode, LABELS};

use crate::args::{announce, parse_with, TrainFlags};
use crate::CliError;

type CmdResult = Result<(), CliError>;

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Input manifest (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for feature files and the rewritten manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Value type stored in feature files.
    #[arg(long, value_enum, default_value_t = DTypeArg::F64)]
    pub dtype: DTypeArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DTypeArg {
    F32,
    F64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Utterances per class.
    #[arg(long, default_value_t = 100)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Manifest (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Word embedding text file (`token v1 ... v300` per line).
    #[arg(long)]
    pub embeddings: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint produced by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Optional JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Comma-separated fusion modes to compare.
    #[arg(
        long,
        value_delimiter = ',',
        value_parser = parse_with::<FusionMode>,
        default_value = "uttconcat,tempalign,tempalign-cme"
    )]
    pub modes: Vec<FusionMode>,
    /// Train folds on separate threads; reports are unchanged.
    #[arg(long)]
    pub parallel_folds: bool,
    /// Directory for per-mode JSON reports and `summary.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Number of random seeds (0..N).
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
}

fn load_data(data: &DataArgs) -> Result<Vec<LoadedUtterance>, CliError> {
    let records = load_manifest(&data.manifest)?;
    if records.is_empty() {
        return Err(CliError::validation(format!(
            "manifest {} has no records",
            data.manifest.display()
        )));
    }
    let table = load_embeddings(&data.embeddings)?;
    log::info!("loaded {} records, {} embeddings", records.len(), table.len());
    Ok(load_utterances(&records, &table)?)
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn extract(a: ExtractArgs) -> CmdResult {
    let records = load_manifest(&a.manifest)?;
    create_dir(&a.out)?;
    let dtype = match a.dtype {
        DTypeArg::F32 => DType::F32,
        DTypeArg::F64 => DType::F64,
    };
    let mut converted = Vec::with_capacity(records.len());
    let mut written = 0;
    for r in records {
        let source = match &r.source {
            FeatureSource::Audio(wav) => {
                let feats = utterance_features(&read_wav(wav)?)?.features;
                let path = a.out.join(format!("{}.emt", r.id));
                write_tensor(&path, &feats, dtype)?;
                written += 1;
                FeatureSource::Features(path)
            }
            FeatureSource::Features(p) => FeatureSource::Features(p.clone()),
        };
        converted.push(UtteranceRecord { source, ..r });
    }
    let manifest = a.out.join("manifest.jsonl");
    write_manifest(&manifest, &converted)?;
    println!("wrote {written} feature files and {}", manifest.display());
    Ok(())
}

pub fn synth(a: SynthArgs) -> CmdResult {
    eprintln!("# seed {}", a.seed);
    let ds = synth_dataset(a.n_per_class, a.seed, &a.out)?;
    println!(
        "wrote {} records to {} and embeddings to {}",
        ds.records.len(),
        ds.manifest_path.display(),
        ds.embeddings_path.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> CmdResult {
    let cfg = a.flags.resolve()?;
    announce(&cfg);
    let data = load_data(&a.data)?;
    let outcome = train_fold(&data, &cfg)?;
    save_checkpoint(&a.out, &outcome.checkpoint)?;
    println!("epoch\tmean_loss");
    for (i, l) in outcome.loss_curve.iter().enumerate() {
        println!("{}\t{l:.6}", i + 1);
    }
    let report = evaluate(&outcome.checkpoint, &data)?;
    println!("train WA {:.4} UA {:.4}", report.wa, report.ua);
    log::info!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("n {}  WA {:.4}  UA {:.4}", r.n, r.wa, r.ua);
    print!("{:>10}", "true\\pred");
    for l in LABELS {
        print!("{l:>9}");
    }
    println!();
    for (label, row) in LABELS.iter().zip(r.confusion.counts()) {
        print!("{label:>10}");
        for c in row {
            print!("{c:>9}");
        }
        println!();
    }
    if !r.zero_support_classes.is_empty() {
        let names: Vec<&str> = r.zero_support_classes.iter().map(|&c| LABELS[c]).collect();
        println!("classes without support (left out of UA): {}", names.join(", "));
    }
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let data = load_data(&a.data)?;
    let report = evaluate(&ckpt, &data)?;
    print_report(&report);
    if let Some(out) = a.out {
        let json = serde_json::to_string_pretty(&report).expect("report serialises") + "\n";
        std::fs::write(&out, json)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", out.display())))?;
    }
    Ok(())
}

pub fn cv(a: CvArgs) -> CmdResult {
    let cfg = a.flags.resolve()?;
    announce(&cfg);
    if a.modes.is_empty() {
        return Err(CliError::validation("--modes needs at least one fusion mode"));
    }
    let data = load_data(&a.data)?;
    let opts = CvOptions {
        parallel_folds: a.parallel_folds,
    };
    let reports = run_ablation(&data, &cfg, &a.modes, &opts)?;
    if let Some(out) = &a.out {
        write_cv_reports(out, &reports)?;
        log::info!("reports written to {}", out.display());
    }
    print!("{}", ablation_table(&reports));
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    if a.seeds == 0 {
        return Err(CliError::validation("--seeds must be at least 1"));
    }
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let results = run_gradient_suite(&seeds)?;
    println!("{:<26}{:>14}{:>11}{:>9}  status", "check", "max_rel_err", "tolerance", "skipped");
    for r in &results {
        println!(
            "{:<26}{:>14.3e}{:>11.0e}{:>9}  {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.skipped,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::runtime(format!("{failed} gradient check(s) failed")));
    }
    Ok(())
}
