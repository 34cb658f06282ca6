//! Command-line front end: calibrate, synth, train, eval, matrix, inflate.
//!
//! Every command is a plain function over explicit arguments so it can be
//! driven from tests as well as from the `hyperseg` binary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bandselect::BandStrategy;
use crate::calibration::{calibrate, CalibrationReport, ReferencePair};
use crate::error::{Error, Result};
use crate::hypercube::{load_cube, save_cube, save_mask, DatasetManifest, LabelMask, Split};
use crate::metrics::{metrics_csv_row, ConfusionMatrix, MetricReport, METRICS_CSV_HEADER};
use crate::models::{argmax_classes, build, inflate_patch_embed, Arch, Checkpoint, Model, ModelSpec, PatchEmbedWeights};
use crate::synthdata::{write_dataset, SynthConfig};
use crate::training::{loss_trace_csv, prepare, resolve_bands, train, CheckpointSink, TrainConfig};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "HYPERSEG_THREADS";

/// Backbone label used in result tables; every architecture here uses a
/// VGG-style stack of 3×3 (or 1×1) convolutions.
pub const BACKBONE_LABEL: &str = "VGG-style";

#[derive(Debug, Parser)]
#[command(name = "hyperseg", version, about = "Hyperspectral image segmentation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a raw cube to reflectance with white/dark references.
    Calibrate(CalibrateArgs),
    /// Generate a synthetic dataset with a manifest.
    Synth(SynthArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Train and evaluate every experiment of a matrix spec.
    Matrix(MatrixArgs),
    /// Inflate 3-channel patch-embedding weights to more channels.
    Inflate(InflateArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub white: PathBuf,
    #[arg(long)]
    pub dark: PathBuf,
    /// Output header path; the report goes next to it as `<stem>.report.toml`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_clip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Background, two texture twins and one spectrally distinct class.
    Twins,
    /// Classes separated only by narrow spectral features.
    Narrow,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene configuration (TOML); overrides `--preset`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "twins")]
    pub preset: Preset,
    #[arg(long, default_value_t = 4)]
    pub train: usize,
    #[arg(long, default_value_t = 2)]
    pub test: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags shared by `train` and `matrix` that override spec values.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "freeze-epochs")]
    pub freeze_epochs: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, config: &mut TrainConfig) {
        if let Some(e) = self.epochs {
            config.epochs = e;
        }
        if let Some(lr) = self.lr {
            config.lr = lr;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(f) = self.freeze_epochs {
            config.freeze_backbone_epochs = f;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment spec (TOML). Without it `--manifest` and `--out` are required.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub arch: Option<Arch>,
    /// `all`, `uniform:K` or `rgb:l1,l2,l3`.
    #[arg(long)]
    pub bands: Option<BandStrategy>,
    /// Comma-separated layer widths.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Band strategy; defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub bands: Option<BandStrategy>,
    #[arg(long)]
    pub include_background: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Combined results CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub include_background: bool,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct InflateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub channels: usize,
    #[arg(long)]
    pub output: PathBuf,
}

/// One row of an experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub arch: Arch,
    #[serde(default)]
    pub bands: BandStrategy,
    pub manifest: PathBuf,
    pub output: PathBuf,
    /// Layer widths; architecture defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(default)]
    pub include_background: bool,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec: ExperimentSpec = read_toml(path)?;
        spec.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(spec)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if self.manifest.is_relative() {
            self.manifest = base.join(&self.manifest);
        }
        if self.output.is_relative() {
            self.output = base.join(&self.output);
        }
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\', ',']) {
            return Err(Error::Config(format!("invalid experiment id {:?}", self.id)));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    #[serde(default)]
    pub experiments: Vec<ExperimentSpec>,
}

impl MatrixSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec: MatrixSpec = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut spec.experiments {
            e.resolve_paths(base);
        }
        Ok(spec)
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Worker threads allowed by [`THREADS_ENV`]; all available cores when
/// unset.
pub fn thread_limit() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<CalibrationReport> {
    let raw = load_cube(&args.raw)?;
    let refs = ReferencePair::new(load_cube(&args.white)?, load_cube(&args.dark)?)?;
    let (cube, report) = calibrate(&raw, &refs, !args.no_clip)?;
    save_cube(&cube, &args.out)?;
    let text = toml::to_string(&report).map_err(|e| Error::Parse(e.to_string()))?;
    write_file(&args.out.with_extension("report.toml"), text)?;
    Ok(report)
}

/// Writes the dataset and returns the manifest path.
pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let mut config = match &args.config {
        Some(path) => read_toml::<SynthConfig>(path)?,
        None => match args.preset {
            Preset::Twins => SynthConfig::texture_twins(0),
            Preset::Narrow => SynthConfig::narrow_signatures(0),
        },
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.train == 0 {
        return Err(Error::Config("synth needs at least one train scene".into()));
    }
    write_dataset(&config, args.train, args.test, &args.out)
}

/// Builds a fresh model for `spec` against `manifest`.
fn model_for(spec: &ExperimentSpec, manifest: &DatasetManifest) -> Result<Model> {
    let in_channels = spec.bands.band_count(manifest.grid.len());
    let mut model_spec = ModelSpec::new(spec.arch, in_channels, manifest.class_names.len());
    if let Some(widths) = &spec.widths {
        model_spec = model_spec.with_widths(widths.clone());
    }
    build(&model_spec, spec.train.seed)
}

/// Trains one experiment and writes `<output>/<id>.ckpt` and
/// `<output>/<id>_loss.csv`; returns the checkpoint path.
pub fn train_experiment(spec: &ExperimentSpec) -> Result<PathBuf> {
    spec.validate()?;
    let manifest = DatasetManifest::load(&spec.manifest)?;
    let model = model_for(spec, &manifest)?;
    fs::create_dir_all(&spec.output).map_err(|e| Error::io(&spec.output, e))?;
    let sink = CheckpointSink {
        dir: spec.output.clone(),
        experiment: spec.id.clone(),
        bands: spec.bands.to_string(),
        class_names: manifest.class_names.clone(),
    };
    let outcome = train(model, &manifest, &spec.bands, &spec.train, Some(&sink))?;
    write_file(
        &spec.output.join(format!("{}_loss.csv", spec.id)),
        loss_trace_csv(&outcome.loss_trace),
    )?;
    Ok(sink.final_path())
}

pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let mut spec = match &args.spec {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec {
            id: "run".into(),
            arch: Arch::UNet,
            bands: BandStrategy::All,
            manifest: args
                .manifest
                .clone()
                .ok_or_else(|| Error::Config("train needs --spec or --manifest".into()))?,
            output: args
                .out
                .clone()
                .ok_or_else(|| Error::Config("train needs --spec or --out".into()))?,
            widths: None,
            include_background: false,
            train: TrainConfig::default(),
        },
    };
    if let Some(m) = &args.manifest {
        spec.manifest = m.clone();
    }
    if let Some(o) = &args.out {
        spec.output = o.clone();
    }
    if let Some(id) = &args.id {
        spec.id = id.clone();
    }
    if let Some(a) = args.arch {
        spec.arch = a;
    }
    if let Some(b) = &args.bands {
        spec.bands = b.clone();
    }
    if let Some(w) = &args.widths {
        spec.widths = Some(w.clone());
    }
    args.overrides.apply(&mut spec.train);
    train_experiment(&spec)
}

/// Result of evaluating a checkpoint on one split.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub experiment: String,
    pub arch: Arch,
    pub band_count: usize,
    pub confusion: ConfusionMatrix,
    pub report: MetricReport,
}

impl Evaluation {
    pub fn csv_row(&self) -> String {
        metrics_csv_row(
            &self.experiment,
            self.band_count,
            BACKBONE_LABEL,
            self.arch.decoder_label(),
            &self.report,
        )
    }
}

/// Evaluates `checkpoint` and writes `metrics.csv`, `confusion.csv` and
/// one predicted mask per image under `pred/` into `out`.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    manifest_path: &Path,
    split: Split,
    bands: Option<&BandStrategy>,
    include_background: bool,
    out: &Path,
) -> Result<Evaluation> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    if ckpt.class_names != manifest.class_names {
        return Err(Error::Config(format!(
            "checkpoint classes {:?} differ from manifest classes {:?}",
            ckpt.class_names, manifest.class_names
        )));
    }
    let strategy = match bands {
        Some(b) => b.clone(),
        None => ckpt.bands.parse()?,
    };
    let indices = resolve_bands(&manifest.grid, &strategy, &ckpt.model)?;
    let samples = manifest.load_split(split)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("manifest has no {split} entries")));
    }
    let mut confusion = ConfusionMatrix::new(manifest.class_names.clone());
    let pred_dir = out.join("pred");
    fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
    for sample in &samples {
        let prepared = prepare(sample, &indices)?;
        let logits = ckpt.model.forward(&prepared.input)?;
        let labels = argmax_classes(&logits)?;
        let predicted = LabelMask::new(prepared.height, prepared.width, labels, manifest.class_names.clone())?;
        confusion.accumulate(&predicted, &sample.mask)?;
        save_mask(&predicted, &pred_dir.join(format!("{}.png", sample.name)))?;
    }
    let report = confusion.compute(include_background)?;
    let evaluation = Evaluation {
        experiment: ckpt.experiment.clone(),
        arch: ckpt.model.spec().arch,
        band_count: indices.len(),
        confusion,
        report,
    };
    write_file(
        &out.join("metrics.csv"),
        format!("{METRICS_CSV_HEADER}\n{}\n", evaluation.csv_row()),
    )?;
    write_file(&out.join("confusion.csv"), evaluation.confusion.to_csv())?;
    Ok(evaluation)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Evaluation> {
    evaluate_checkpoint(
        &args.checkpoint,
        &args.manifest,
        args.split,
        args.bands.as_ref(),
        args.include_background,
        &args.out,
    )
}

/// Trains then evaluates one experiment on its test split.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Evaluation> {
    let ckpt = train_experiment(spec)?;
    evaluate_checkpoint(
        &ckpt,
        &spec.manifest,
        Split::Test,
        Some(&spec.bands),
        spec.include_background,
        &spec.output.join("eval"),
    )
}

/// Runs every experiment (in parallel up to [`thread_limit`]) and writes
/// the combined CSV ordered by experiment id.
pub fn run_matrix(spec: &MatrixSpec, out: &Path) -> Result<Vec<Evaluation>> {
    let mut ids = BTreeSet::new();
    for e in &spec.experiments {
        e.validate()?;
        if !ids.insert(e.id.as_str()) {
            return Err(Error::Config(format!("duplicate experiment id {:?}", e.id)));
        }
    }
    let mut order: Vec<&ExperimentSpec> = spec.experiments.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_limit()?)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<Evaluation>> = pool.install(|| {
        use rayon::prelude::*;
        order.par_iter().map(|e| run_experiment(e)).collect()
    });
    let evaluations = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut csv = format!("{METRICS_CSV_HEADER}\n");
    for e in &evaluations {
        csv.push_str(&e.csv_row());
        csv.push('\n');
    }
    write_file(out, csv)?;
    Ok(evaluations)
}

pub fn cmd_matrix(args: &MatrixArgs) -> Result<Vec<Evaluation>> {
    let mut spec = MatrixSpec::load(&args.spec)?;
    for e in &mut spec.experiments {
        args.overrides.apply(&mut e.train);
        e.include_background |= args.include_background;
    }
    run_matrix(&spec, &args.out)
}

pub fn cmd_inflate(args: &InflateArgs) -> Result<PatchEmbedWeights> {
    let rgb = PatchEmbedWeights::load(&args.input)?;
    let inflated = inflate_patch_embed(&rgb, args.channels)?;
    inflated.save(&args.output)?;
    Ok(inflated)
}

/// Runs one parsed command line; returns a one-line summary for stdout.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Calibrate(a) => {
            let r = cmd_calibrate(a)?;
            Ok(format!(
                "wrote {} (invalid {}, clipped low {}, clipped high {})",
                a.out.display(),
                r.invalid_pixel_count,
                r.clipped_low,
                r.clipped_high
            ))
        }
        Command::Synth(a) => Ok(format!("wrote {}", cmd_synth(a)?.display())),
        Command::Train(a) => Ok(format!("wrote {}", cmd_train(a)?.display())),
        Command::Eval(a) => {
            let e = cmd_eval(a)?;
            Ok(format!("{METRICS_CSV_HEADER}\n{}", e.csv_row()))
        }
        Command::Matrix(a) => {
            let results = cmd_matrix(a)?;
            Ok(format!("{} experiments, wrote {}", results.len(), a.out.display()))
        }
        Command::Inflate(a) => {
            let w = cmd_inflate(a)?;
            Ok(format!("wrote {} ({} channels)", a.output.display(), w.channels()))
        }
    }
}
