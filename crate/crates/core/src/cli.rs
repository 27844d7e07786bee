//! Command-line front end. Every command is deterministic given its config
//! and seed, echoes the materialized config, and exits with 0 on success,
//! 1 on usage or config errors, 2 on runtime failures.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blob::write_json;
use crate::config::{config_parse_error, Precision, PriorMode, TrainConfig};
use crate::dataspace::{
    empirical_class_prior, load_dataset, make_synthetic_tzsl, save_dataset, ClassCounts,
    FeatureNormalization, Preprocessing, SplitDataset, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{gtzsl_evaluate, space_sweep, tzsl_evaluate, EvalReport};
use crate::nets::ModelSet;
use crate::normexp::norm_experiment;
use crate::prior::{prior_tv_distance, uniform_prior};
use crate::train::{estimate_prior, pretune_features, run_inductive_pipeline, run_pipeline_with, TrainState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    #[default]
    Transductive,
    Inductive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSource {
    pub spec: SyntheticSpec,
    pub seed: u64,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        SyntheticSource {
            spec: SyntheticSpec::fixture(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A dataset directory as written by `gen-data`.
    Path(PathBuf),
    Synthetic(SyntheticSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSource::default())
    }
}

/// Everything a run needs. Unknown keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub train: TrainConfig,
    pub data: DataSource,
    /// Feature normalization applied at load time; attributes are always
    /// L2-normalized to `train.radius`.
    pub features: FeatureNormalization,
    pub experiment: Experiment,
    /// Epochs of feature pre-tuning before training; none when absent.
    pub pretune_epochs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        RunConfigFile {
            train: TrainConfig::fixture(),
            data: DataSource::default(),
            features: FeatureNormalization::L2,
            experiment: Experiment::default(),
            pretune_epochs: None,
            out: None,
        }
    }
}

impl RunConfigFile {
    pub fn preprocessing(&self) -> Preprocessing {
        Preprocessing {
            features: self.features,
            radius: self.train.radius,
            normalize_attributes: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.pretune_epochs == Some(0) {
            return Err(Error::Config {
                key: "pretune_epochs".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Raw, unnormalized data.
    pub fn load_raw(&self) -> Result<SplitDataset> {
        match &self.data {
            DataSource::Path(p) => load_dataset(p, &Preprocessing::raw()),
            DataSource::Synthetic(s) => make_synthetic_tzsl(&s.spec, s.seed),
        }
    }

    pub fn load(&self) -> Result<SplitDataset> {
        let pre = self.preprocessing();
        let data = match &self.data {
            DataSource::Path(p) => load_dataset(p, &pre)?,
            DataSource::Synthetic(s) => make_synthetic_tzsl(&s.spec, s.seed)?.preprocessed(&pre)?,
        };
        match self.pretune_epochs {
            Some(e) => pretune_features(&data, &self.train, e),
            None => Ok(data),
        }
    }
}

pub fn parse_run_config(text: &str) -> Result<RunConfigFile> {
    let cfg: RunConfigFile = serde_json::from_str(text).map_err(|e| config_parse_error(&e))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Parser)]
#[command(name = "tzsl", version, about = "Transductive zero-shot learning experiments")]
pub struct Cli {
    /// JSON run config; unknown keys are an error.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train and evaluate; writes report, step log, priors and checkpoints.
    Train,
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Repeated prior estimation trials on a checkpoint.
    Prior(PriorArgs),
    /// L2 vs. Min-Max normalization comparison.
    NormExp,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub num_seen: Option<usize>,
    #[arg(long)]
    pub num_unseen: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub attribute_dim: Option<usize>,
    /// Seen rows per class: one number, or a comma list per class.
    #[arg(long)]
    pub seen_per_class: Option<String>,
    /// Unseen rows per class: one number, or a comma list per class.
    #[arg(long)]
    pub unseen_per_class: Option<String>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub attribute_noise: Option<f64>,
    #[arg(long)]
    pub latent_rank: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EvalModeArg {
    Tzsl,
    Gtzsl,
    Spaces,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory; normalized as recorded in the checkpoint.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "tzsl")]
    pub mode: EvalModeArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PriorMethodArg {
    Cpe,
    Bbse,
    Uniform,
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub method: PriorMethodArg,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
}

/// What a checkpoint records besides the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub train: TrainConfig,
    pub preprocessing: Preprocessing,
    pub prior: Vec<f64>,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTrial {
    pub trial: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSummary {
    pub method: String,
    pub trials: usize,
    pub failures: usize,
    pub tv_mean: Option<f64>,
    pub tv_std: Option<f64>,
    pub train: TrainConfig,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(cli, a),
        Command::Train => cmd_train(cli),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Prior(a) => cmd_prior(cli, a),
        Command::NormExp => cmd_norm_experiment(cli),
    }
}

/// Reads `--config` (or the defaults) and applies the global overrides.
fn run_config(cli: &Cli, base: RunConfigFile) -> Result<RunConfigFile> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_run_config(&text)?
        }
        None => base,
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(p) = cli.precision {
        cfg.train.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg_out: Option<&PathBuf>) -> Result<PathBuf> {
    let dir = cfg_out
        .cloned()
        .ok_or_else(|| Error::invalid("an output directory is required (--out or `out` in the config)"))?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn counts_arg(s: &str) -> Result<ClassCounts> {
    let parsed: std::result::Result<Vec<usize>, _> = s.split(',').map(|x| x.trim().parse()).collect();
    match parsed {
        Ok(v) if v.len() == 1 => Ok(ClassCounts::Each(v[0])),
        Ok(v) => Ok(ClassCounts::PerClass(v)),
        Err(_) => Err(Error::invalid(format!("bad class count list `{s}`"))),
    }
}

#[derive(Serialize)]
struct GenSummary {
    out: PathBuf,
    seed: u64,
    spec: SyntheticSpec,
    seen_class_counts: Vec<usize>,
    unseen_class_counts: Vec<usize>,
    unseen_prior: Vec<f64>,
}

fn class_counts(labels: &[usize], n: usize) -> Vec<usize> {
    let mut c = vec![0; n];
    labels.iter().for_each(|&y| c[y] += 1);
    c
}

pub fn cmd_gen_data(cli: &Cli, a: &GenDataArgs) -> Result<()> {
    let mut spec = SyntheticSpec::fixture();
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { spec.$f = v; } )* };
    }
    set!(num_seen, num_unseen, feature_dim, attribute_dim, separation, noise, attribute_noise);
    if let Some(r) = a.latent_rank {
        spec.latent_rank = Some(r);
    }
    if let Some(s) = &a.seen_per_class {
        spec.seen_per_class = counts_arg(s)?;
    }
    if let Some(s) = &a.unseen_per_class {
        spec.unseen_per_class = counts_arg(s)?;
    }
    let seed = cli.seed.unwrap_or(0);
    let dir = out_dir(cli.out.as_ref())?;
    let data = make_synthetic_tzsl(&spec, seed)?;
    save_dataset(&dir, &data)?;
    let unseen = data.unseen_labels_eval().expect("synthetic data keeps labels");
    let summary = GenSummary {
        out: dir,
        seed,
        seen_class_counts: class_counts(data.seen_labels(), data.num_seen_classes()),
        unseen_class_counts: class_counts(unseen, data.num_unseen_classes()),
        unseen_prior: empirical_class_prior(unseen, data.num_unseen_classes())?.probs().to_vec(),
        spec,
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
    Ok(())
}

fn save_checkpoint(dir: &Path, state: &TrainState, cfg: &RunConfigFile) -> Result<()> {
    let meta = CheckpointMeta {
        train: cfg.train.clone(),
        preprocessing: cfg.preprocessing(),
        prior: state.prior.probs().to_vec(),
        epoch: state.epoch,
    };
    state
        .models
        .save(dir, serde_json::to_value(meta).expect("serializable"))
}

fn json_line<T: Serialize>(w: &mut impl Write, value: &T, path: &Path) -> Result<()> {
    let line = serde_json::to_string(value).expect("serializable");
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn cmd_train(cli: &Cli) -> Result<()> {
    let cfg = run_config(cli, RunConfigFile::default())?;
    let dir = out_dir(cfg.out.as_ref())?;
    write_json(&dir.join("config.json"), &cfg)?;
    let data = cfg.load()?;

    let log_path = dir.join("train_log.jsonl");
    let prior_path = dir.join("priors.jsonl");
    let mut log = create(&log_path)?;
    let mut priors = create(&prior_path)?;
    let mut logged = 0usize;
    let mut priors_logged = 0usize;
    let mut on_epoch = |state: &TrainState| -> Result<()> {
        for rec in &state.history[logged..] {
            json_line(&mut log, rec, &log_path)?;
        }
        logged = state.history.len();
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        for snap in &state.prior_history[priors_logged..] {
            json_line(&mut priors, snap, &prior_path)?;
        }
        priors_logged = state.prior_history.len();
        priors.flush().map_err(|e| Error::io(&prior_path, e))?;
        if let Some(n) = cfg.train.checkpoint_every {
            if state.epoch.is_multiple_of(n) {
                save_checkpoint(&dir.join("checkpoints").join(format!("epoch_{:04}", state.epoch)), state, &cfg)?;
            }
        }
        Ok(())
    };

    let (state, report) = match cfg.experiment {
        Experiment::Transductive => run_pipeline_with(&data, &cfg.train, &mut on_epoch)?,
        Experiment::Inductive => {
            let (state, report) = run_inductive_pipeline(&data, &cfg.train)?;
            on_epoch(&state)?;
            (state, report)
        }
    };
    // Snapshots taken after the last epoch callback.
    on_epoch(&state)?;
    save_checkpoint(&dir.join("checkpoint"), &state, &cfg)?;
    write_json(&dir.join("report.json"), &report)?;
    write_text(
        &dir.join("report.csv"),
        &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
    )?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(ModelSet, CheckpointMeta)> {
    let (models, meta) = ModelSet::load(path)?;
    let meta: CheckpointMeta = serde_json::from_value(meta).map_err(|e| Error::Manifest {
        path: path.join(crate::nets::CHECKPOINT_MANIFEST),
        message: format!("checkpoint meta: {e}"),
    })?;
    Ok((models, meta))
}

fn check_compatible(models: &ModelSet, data: &SplitDataset, prior_len: usize) -> Result<()> {
    if models.feature_dim() != data.feature_dim() || models.attribute_dim() != data.attribute_dim() {
        return Err(Error::shape(format!(
            "checkpoint expects d_v={}, d_a={} but dataset has d_v={}, d_a={}",
            models.feature_dim(),
            models.attribute_dim(),
            data.feature_dim(),
            data.attribute_dim()
        )));
    }
    if prior_len != data.num_unseen_classes() {
        return Err(Error::shape(format!(
            "checkpoint prior has {prior_len} classes, dataset has {} unseen classes",
            data.num_unseen_classes()
        )));
    }
    Ok(())
}

/// Training config from the checkpoint, with `--config`, `--seed` and
/// `--precision` applied on top when given.
fn eval_config(cli: &Cli, meta: &CheckpointMeta) -> Result<TrainConfig> {
    let base = RunConfigFile {
        train: meta.train.clone(),
        ..RunConfigFile::default()
    };
    Ok(run_config(cli, base)?.train)
}

pub fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let (models, meta) = load_checkpoint(&a.checkpoint)?;
    let train = eval_config(cli, &meta)?;
    let data = load_dataset(&a.data, &meta.preprocessing)?;
    check_compatible(&models, &data, meta.prior.len())?;
    let prior = crate::dataspace::ClassPrior::new(meta.prior.clone())?;
    let snap = crate::eval::Snapshot {
        models: &models,
        prior: &prior,
    };
    let reports = match a.mode {
        EvalModeArg::Tzsl => vec![tzsl_evaluate(&snap, &data, &train)?],
        EvalModeArg::Gtzsl => vec![gtzsl_evaluate(&snap, &data, &train)?],
        EvalModeArg::Spaces => space_sweep(&snap, &data, &train)?,
    };
    if let Some(dir) = &cli.out {
        let dir = out_dir(Some(dir))?;
        write_json(&dir.join("reports.json"), &reports)?;
        let mut csv = format!("{}\n", EvalReport::CSV_HEADER);
        reports.iter().for_each(|r| csv.push_str(&format!("{}\n", r.csv_row())));
        write_text(&dir.join("reports.csv"), &csv)?;
    }
    println!("{}", serde_json::to_string_pretty(&reports).expect("serializable"));
    Ok(())
}

/// Per-trial seed; each trial gets its own stream.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (trial as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

pub fn cmd_prior(cli: &Cli, a: &PriorArgs) -> Result<()> {
    if a.trials == 0 {
        return Err(Error::invalid("--trials must be at least 1"));
    }
    let (models, meta) = load_checkpoint(&a.checkpoint)?;
    let train = eval_config(cli, &meta)?;
    let data = load_dataset(&a.data, &meta.preprocessing)?;
    check_compatible(&models, &data, meta.prior.len())?;
    let truth = data.true_unseen_prior();
    let mode = match a.method {
        PriorMethodArg::Cpe => PriorMode::Cpe,
        PriorMethodArg::Bbse => PriorMode::Bbse,
        PriorMethodArg::Uniform => PriorMode::Uniform,
    };
    let trials: Vec<PriorTrial> = (0..a.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = trial_seed(train.seed, trial);
            let est = if mode == PriorMode::Uniform {
                uniform_prior(data.num_unseen_classes())
            } else {
                estimate_prior(&models, &data, &train, mode, seed)
            };
            match est {
                Ok(p) => PriorTrial {
                    trial,
                    seed,
                    tv: truth.as_ref().and_then(|t| prior_tv_distance(&p, t).ok()),
                    prior: Some(p.probs().to_vec()),
                    error: None,
                },
                Err(e) => PriorTrial {
                    trial,
                    seed,
                    prior: None,
                    tv: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let tvs: Vec<f64> = trials.iter().filter_map(|t| t.tv).collect();
    let (tv_mean, tv_std) = if tvs.is_empty() {
        (None, None)
    } else {
        let m = tvs.iter().sum::<f64>() / tvs.len() as f64;
        let var = tvs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / tvs.len() as f64;
        (Some(m), Some(var.sqrt()))
    };
    let summary = PriorSummary {
        method: format!("{:?}", a.method).to_lowercase(),
        trials: a.trials,
        failures: trials.iter().filter(|t| t.error.is_some()).count(),
        tv_mean,
        tv_std,
        train,
    };
    let mut lines = String::new();
    for t in &trials {
        lines.push_str(&serde_json::to_string(t).expect("serializable"));
        lines.push('\n');
    }
    if let Some(dir) = &cli.out {
        let dir = out_dir(Some(dir))?;
        write_text(&dir.join("prior_trials.jsonl"), &lines)?;
        write_json(&dir.join("prior_summary.json"), &summary)?;
    }
    print!("{lines}");
    println!("{}", serde_json::to_string(&summary).expect("serializable"));
    Ok(())
}

pub fn cmd_norm_experiment(cli: &Cli) -> Result<()> {
    let base = RunConfigFile {
        train: TrainConfig::norm_fixture(),
        ..RunConfigFile::default()
    };
    let cfg = run_config(cli, base)?;
    let dir = out_dir(cfg.out.as_ref())?;
    let report = norm_experiment(&cfg.load_raw()?, &cfg.train)?;
    write_json(&dir.join("config.json"), &cfg)?;
    write_json(&dir.join("norm_report.json"), &report)?;
    write_text(&dir.join("norm_histograms.csv"), &report.histogram_csv())?;
    write_text(&dir.join("norm_accuracy.csv"), &report.accuracy_csv())?;
    #[derive(Serialize)]
    struct Brief {
        l2_emd: f64,
        min_max_emd: f64,
        l2_relative_emd: f64,
        min_max_relative_emd: f64,
        l2_epochs_to_90: Option<usize>,
        min_max_epochs_to_90: Option<usize>,
    }
    let brief = Brief {
        l2_emd: report.l2.emd,
        min_max_emd: report.min_max.emd,
        l2_relative_emd: report.l2.relative_emd,
        min_max_relative_emd: report.min_max.relative_emd,
        l2_epochs_to_90: report.l2.epochs_to_90,
        min_max_epochs_to_90: report.min_max.epochs_to_90,
    };
    println!("{}", serde_json::to_string_pretty(&brief).expect("serializable"));
    Ok(())
}
