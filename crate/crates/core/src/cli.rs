//! Command-line front end: `synth`, `zeroshot`, `train`, `eval`, `pseudo-label`, `sweep`.
//!
//! Every subcommand prints one JSON document on stdout. Errors go to stderr and
//! map to a nonzero exit code (see [`exit_code`]).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataio::{
    read_checkpoint, read_dataset, read_prompts, synth_generate, write_checkpoint, write_dataset, write_prompts,
    EmbeddingDataset, SynthConfig,
};
use crate::error::{Error, Result};
use crate::guidance::{guidance_cache, zero_shot_accuracy, zero_shot_probs, DomainRole, DEFAULT_TAU};
use crate::losses::KlDirection;
use crate::model::UdaModel;
use crate::prompt_bank::{PromptBank, PromptSet};
use crate::pseudo_label;
use crate::trainer::{evaluate, train, train_with_guidance, TrainingConfig};

/// Caps the worker pool used by `sweep`.
pub const THREADS_ENV: &str = "CLIPDIV_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "clipdiv",
    version,
    about = "CLIP-guided unsupervised domain adaptation on precomputed embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-domain benchmark
    Synth(SynthArgs),
    /// CLIP zero-shot accuracy of a dataset under one or more prompt sets
    Zeroshot(ZeroShotArgs),
    /// Train an adaptation model and write its checkpoint and metrics
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a labeled dataset
    Eval(EvalArgs),
    /// Dump the pseudo labels a checkpoint would assign to a target dataset
    PseudoLabel(PseudoLabelArgs),
    /// Train over a grid of one hyperparameter and several seeds
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON file with generator settings; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d_in: Option<usize>,
    #[arg(long)]
    pub d_clip: Option<usize>,
    /// Samples per domain
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub gap: Option<f64>,
    #[arg(long)]
    pub fidelity: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Receives `source/`, `target/` and `prompts/`
    #[arg(long, default_value = "synth")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ZeroShotArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    /// Comma-separated: agnostic, averaged, source, target
    #[arg(long, value_delimiter = ',', default_value = "agnostic")]
    pub prompt_set: Vec<PromptSet>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Write the probability rows of every requested set as JSON
    #[arg(long)]
    pub dump_probs: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    /// JSON file with training settings; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda_abs: Option<f64>,
    #[arg(long)]
    pub lambda_rel: Option<f64>,
    #[arg(long)]
    pub lambda_pl: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// guidance_first or model_first
    #[arg(long)]
    pub kl_direction: Option<KlDirection>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Receives `checkpoint/`, `metrics.jsonl` and `config.json`
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Write one predicted class id per line
    #[arg(long)]
    pub dump_predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PseudoLabelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Write the full pseudo-label state as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub prompts: PathBuf,
    /// JSON sweep spec; `--param`, `--values` and `--seeds` build one instead
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub param: Option<SweepParam>,
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Base training config for every cell
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Receives `runs/*.json` and `sweep.csv`
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
}

/// Hyperparameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepParam {
    LambdaAbs,
    LambdaRel,
    LambdaPl,
    BatchSize,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::LambdaAbs => "lambda_abs",
            SweepParam::LambdaRel => "lambda_rel",
            SweepParam::LambdaPl => "lambda_pl",
            SweepParam::BatchSize => "batch_size",
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &TrainingConfig, value: f64) -> Result<TrainingConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParam::LambdaAbs => cfg.weights.lambda_abs = value,
            SweepParam::LambdaRel => cfg.weights.lambda_rel = value,
            SweepParam::LambdaPl => cfg.weights.lambda_pl = value,
            SweepParam::BatchSize => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::Config(format!(
                        "batch_size must be a positive integer, got {value}"
                    )));
                }
                cfg.batch_size = value as usize;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub base: TrainingConfig,
}

impl SweepSpec {
    /// One config per (value, seed) cell, in value-major order.
    pub fn cells(&self) -> Result<Vec<(f64, u64, TrainingConfig)>> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        let mut cells = Vec::with_capacity(self.values.len() * self.seeds.len());
        for &value in &self.values {
            for &seed in &self.seeds {
                let mut cfg = self.param.apply(&self.base, value)?;
                cfg.seed = seed;
                cells.push((value, seed, cfg));
            }
        }
        Ok(cells)
    }
}

/// One CSV row; `seed` is `None` on the per-value mean rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub seed: Option<u64>,
    pub target_accuracy: f64,
    pub source_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Sorted by value, then seed.
    pub runs: Vec<SweepRow>,
    /// One per value, in ascending value order.
    pub means: Vec<SweepRow>,
}

impl SweepResult {
    pub fn mean_target_accuracy(&self, value: f64) -> Option<f64> {
        self.means.iter().find(|r| r.value == value).map(|r| r.target_accuracy)
    }

    /// Header, then each value's seed rows followed by its `mean` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["param", "value", "seed", "target_accuracy", "source_accuracy"])
            .expect("in-memory csv");
        for mean in &self.means {
            for row in self.runs.iter().filter(|r| r.value == mean.value).chain([mean]) {
                let seed = row.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
                w.write_record([
                    row.param.clone(),
                    row.value.to_string(),
                    seed,
                    row.target_accuracy.to_string(),
                    row.source_accuracy.to_string(),
                ])
                .expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

/// Runs every cell of `spec` on the current rayon pool. With `out_dir`, each
/// finished cell is written to `runs/` immediately and `sweep.csv` at the end.
pub fn run_sweep(
    spec: &SweepSpec,
    source: &EmbeddingDataset,
    target: &EmbeddingDataset,
    bank: &PromptBank,
    out_dir: Option<&Path>,
) -> Result<SweepResult> {
    let cells = spec.cells()?;
    if target.scoring_labels().is_none() {
        return Err(Error::Config("sweep target needs evaluation labels".into()));
    }
    let tau = spec.base.tau;
    let src_guidance = guidance_cache(source, bank, tau, DomainRole::Source)?;
    let tgt_guidance = guidance_cache(target, bank, tau, DomainRole::Target)?;
    let runs_dir = out_dir.map(|d| d.join("runs"));
    if let Some(dir) = &runs_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut runs = cells
        .par_iter()
        .map(|(value, seed, cfg)| -> Result<SweepRow> {
            let (_, metrics) = train_with_guidance(source, target, &src_guidance, &tgt_guidance, cfg)?;
            let last = metrics.epochs.last().expect("at least one epoch");
            let row = SweepRow {
                param: spec.param.name().to_string(),
                value: *value,
                seed: Some(*seed),
                target_accuracy: last.target_accuracy.expect("target has labels"),
                source_accuracy: last.source_accuracy,
            };
            if let Some(dir) = &runs_dir {
                let path = dir.join(format!("{}={value}_seed={seed}.json", spec.param.name()));
                write_text(
                    &path,
                    &format!("{}\n", serde_json::to_string(&row).expect("row serializes")),
                )?;
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.seed.cmp(&b.seed)));

    let mut values = spec.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let means = values
        .iter()
        .map(|&value| {
            let rows: Vec<&SweepRow> = runs.iter().filter(|r| r.value == value).collect();
            let n = rows.len() as f64;
            SweepRow {
                param: spec.param.name().to_string(),
                value,
                seed: None,
                target_accuracy: rows.iter().map(|r| r.target_accuracy).sum::<f64>() / n,
                source_accuracy: rows.iter().map(|r| r.source_accuracy).sum::<f64>() / n,
            }
        })
        .collect();
    let result = SweepResult { runs, means };
    if let Some(dir) = out_dir {
        write_text(&dir.join("sweep.csv"), &result.to_csv())?;
    }
    Ok(result)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn synth_config(args: &SynthArgs) -> Result<SynthConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = args.k {
        cfg.num_classes = v;
    }
    if let Some(v) = args.d_in {
        cfg.dim_input = v;
    }
    if let Some(v) = args.d_clip {
        cfg.dim_clip = v;
    }
    if let Some(v) = args.n {
        cfg.n_per_domain = v;
    }
    if let Some(v) = args.gap {
        cfg.domain_gap = v;
    }
    if let Some(v) = args.fidelity {
        cfg.clip_fidelity = v;
    }
    if let Some(v) = args.noise {
        cfg.noise_scale = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Resolves `--config` plus flag overrides into a validated config.
pub fn training_config(o: &TrainOverrides) -> Result<TrainingConfig> {
    let mut cfg = match &o.config {
        Some(p) => read_json(p)?,
        None => TrainingConfig::default(),
    };
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.lambda_abs {
        cfg.weights.lambda_abs = v;
    }
    if let Some(v) = o.lambda_rel {
        cfg.weights.lambda_rel = v;
    }
    if let Some(v) = o.lambda_pl {
        cfg.weights.lambda_pl = v;
    }
    if let Some(v) = o.tau {
        cfg.tau = v;
    }
    if let Some(v) = o.kl_direction {
        cfg.kl_direction = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn zero_shot_summary(ds: &EmbeddingDataset, bank: &PromptBank, sets: &[PromptSet], tau: f64) -> Result<Value> {
    let labels = ds
        .scoring_labels()
        .ok_or_else(|| Error::InvalidInput(format!("dataset `{}` has no labels", ds.domain_name)))?;
    let mut out = serde_json::Map::new();
    for &set in sets {
        let probs = zero_shot_probs(ds.clip()?, bank.text(set), tau)?;
        out.insert(set.name().into(), json!(zero_shot_accuracy(&probs, labels)?));
    }
    Ok(Value::Object(out))
}

fn check_classes(model_classes: &[String], ds: &EmbeddingDataset) -> Result<()> {
    if model_classes != ds.class_names.as_slice() {
        return Err(Error::Config(format!(
            "checkpoint classes {:?} do not match dataset `{}` classes {:?}",
            model_classes, ds.domain_name, ds.class_names
        )));
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<Value> {
    let cfg = synth_config(args)?;
    let out = synth_generate(&cfg)?;
    let (src_dir, tgt_dir, prompt_dir) = (
        args.out.join("source"),
        args.out.join("target"),
        args.out.join("prompts"),
    );
    write_dataset(&src_dir, &out.source)?;
    write_dataset(&tgt_dir, &out.target)?;
    write_prompts(&prompt_dir, &out.bank)?;
    Ok(json!({
        "source": path_str(&src_dir),
        "target": path_str(&tgt_dir),
        "prompts": path_str(&prompt_dir),
        "config": cfg,
        "zero_shot_accuracy": {
            "source": zero_shot_summary(&out.source, &out.bank, &[PromptSet::Agnostic, PromptSet::SourceSpecific], DEFAULT_TAU)?,
            "target": zero_shot_summary(&out.target, &out.bank, &[PromptSet::Agnostic, PromptSet::TargetSpecific], DEFAULT_TAU)?,
        },
    }))
}

fn cmd_zeroshot(args: &ZeroShotArgs) -> Result<Value> {
    let ds = read_dataset(&args.dataset)?;
    let bank = read_prompts(&args.prompts)?;
    if bank.class_names() != ds.class_names.as_slice() {
        return Err(Error::Config("prompt bank and dataset class lists differ".into()));
    }
    let labels = ds
        .scoring_labels()
        .ok_or_else(|| Error::InvalidInput(format!("dataset `{}` has no labels to score", ds.domain_name)))?;
    let mut accuracy = BTreeMap::new();
    let mut dump = BTreeMap::new();
    for &set in &args.prompt_set {
        let probs = zero_shot_probs(ds.clip()?, bank.text(set), args.tau)?;
        accuracy.insert(set.name(), zero_shot_accuracy(&probs, labels)?);
        if args.dump_probs.is_some() {
            let rows: Vec<Vec<f64>> = probs.rows().into_iter().map(|r| r.to_vec()).collect();
            dump.insert(set.name(), rows);
        }
    }
    if let Some(path) = &args.dump_probs {
        write_text(path, &serde_json::to_string(&dump).expect("probabilities serialize"))?;
    }
    Ok(json!({
        "dataset": path_str(&args.dataset),
        "num_samples": ds.len(),
        "tau": args.tau,
        "accuracy": accuracy,
    }))
}

fn cmd_train(args: &TrainArgs) -> Result<Value> {
    let cfg = training_config(&args.overrides)?;
    let source = read_dataset(&args.source)?;
    let target = read_dataset(&args.target)?;
    let bank = read_prompts(&args.prompts)?;
    let (model, metrics) = train(&source, &target, &bank, &cfg)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let ckpt = args.out.join("checkpoint");
    let metrics_path = args.out.join("metrics.jsonl");
    write_checkpoint(&ckpt, &model, &source.class_names)?;
    write_text(&metrics_path, &metrics.to_jsonl())?;
    write_text(
        &args.out.join("config.json"),
        &format!("{}\n", serde_json::to_string_pretty(&cfg).expect("config serializes")),
    )?;
    let last = metrics.epochs.last().expect("at least one epoch");
    Ok(json!({
        "checkpoint": path_str(&ckpt),
        "metrics": path_str(&metrics_path),
        "epochs": metrics.epochs.len(),
        "steps": metrics.steps.len(),
        "final": last,
        "wall_time_secs": metrics.wall_time_secs.iter().sum::<f64>(),
    }))
}

fn cmd_eval(args: &EvalArgs) -> Result<Value> {
    let (model, classes) = read_checkpoint(&args.checkpoint)?;
    let ds = read_dataset(&args.dataset)?;
    check_classes(&classes, &ds)?;
    let accuracy = evaluate(&model, &ds)?;
    if let Some(path) = &args.dump_predictions {
        let preds = model.predict(&ds.inputs)?;
        let text: String = preds.iter().map(|p| format!("{p}\n")).collect();
        write_text(path, &text)?;
    }
    Ok(json!({
        "dataset": path_str(&args.dataset),
        "num_samples": ds.len(),
        "accuracy": accuracy,
    }))
}

fn cmd_pseudo_label(args: &PseudoLabelArgs) -> Result<Value> {
    let (model, classes) = read_checkpoint(&args.checkpoint)?;
    let target = read_dataset(&args.target)?;
    let bank = read_prompts(&args.prompts)?;
    check_classes(&classes, &target)?;
    check_classes(bank.class_names(), &target)?;
    let state = pseudo_labels_for(&model, &target, &bank, args.tau)?;
    if let Some(path) = &args.out {
        write_text(path, &serde_json::to_string(&state).expect("state serializes"))?;
    }
    let mut counts = vec![0usize; model.num_classes()];
    state.labels.iter().for_each(|&c| counts[c] += 1);
    let score = |labels: &[usize]| {
        target
            .scoring_labels()
            .map(|y| labels.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64)
    };
    Ok(json!({
        "num_samples": target.len(),
        "class_counts": counts,
        "accuracy": score(&state.labels),
        "initial_accuracy": score(&state.initial_labels),
    }))
}

/// The pseudo labels `model` would receive at the start of an epoch.
pub fn pseudo_labels_for(
    model: &UdaModel,
    target: &EmbeddingDataset,
    bank: &PromptBank,
    tau: f64,
) -> Result<pseudo_label::PseudoLabelState> {
    let guidance = guidance_cache(target, bank, tau, DomainRole::Target)?;
    let rec = model.forward(&target.inputs)?;
    let clip = guidance
        .target_specific
        .as_ref()
        .expect("target role builds target-specific guidance");
    pseudo_label::run(rec.features(), &rec.probs, &clip.probs)
}

fn cmd_sweep(args: &SweepArgs) -> Result<Value> {
    let mut spec = match (&args.spec, args.param) {
        (Some(p), _) => read_json::<SweepSpec>(p)?,
        (None, Some(param)) => SweepSpec {
            param,
            values: args.values.clone(),
            seeds: args.seeds.clone(),
            base: match &args.config {
                Some(p) => read_json(p)?,
                None => TrainingConfig::default(),
            },
        },
        (None, None) => return Err(Error::Config("sweep needs --spec or --param".into())),
    };
    if let Some(e) = args.epochs {
        spec.base.epochs = e;
    }
    spec.cells()?;
    let source = read_dataset(&args.source)?;
    let target = read_dataset(&args.target)?;
    let bank = read_prompts(&args.prompts)?;
    let result = run_sweep(&spec, &source, &target, &bank, Some(&args.out))?;
    Ok(json!({
        "csv": path_str(&args.out.join("sweep.csv")),
        "param": spec.param.name(),
        "means": result.means,
    }))
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n = usize::from_str(raw.trim())
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<Value> {
    configure_threads()?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Zeroshot(a) => cmd_zeroshot(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::PseudoLabel(a) => cmd_pseudo_label(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// 2: bad configuration or input; 3: file or format problem; 1: anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::InvalidInput(_)
        | Error::InvalidDataset(_)
        | Error::InvalidLabel { .. } => 2,
        Error::Io { .. } | Error::Format { .. } | Error::Json { .. } => 3,
        _ => 1,
    }
}

/// Parses the process arguments, runs, prints, and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("summary serializes"));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
