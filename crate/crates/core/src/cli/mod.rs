//! `depvoice` command line: synthetic corpus generation, segmentation,
//! spectrogram rendering, splitting, LR range tests, training, evaluation,
//! single-file prediction and plotting.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

pub mod pipeline;
pub mod plot;

use crate::dataset::{
    generate_corpus, load_manifest, oversample_minority, split, split_by_participant, AugmentSpec, DatasetError,
    ImageSet, Label, Manifest, Split, SynthConfig,
};
use crate::dsp::{ColormapSpec, RenderPipeline, SpectrogramConfig};
use crate::metrics::{confusion, report, ConfusionMatrix, MetricReport};
use crate::nn::{load_checkpoint, save_checkpoint, Model, ModelConfig, NnError};
use crate::segmenter::{segment_buffer, SegmentPolicy};
use crate::trainer::{argmax, fine_tune, predict_set, predict_tta, LrFindConfig, Session, TrainError, TrainPlan};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Nn(n) => n.into(),
            TrainError::InvalidPlan(m) => CliError::Usage(m),
            e @ (TrainError::NonFinite { .. } | TrainError::DivergedImmediately | TrainError::NoDescent) => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "depvoice", version, about = "Speech spectrogram CNN fine-tuning for depression screening")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-class WAV corpus and its manifest.
    Synth(SynthArgs),
    /// Cut recordings into fixed windows.
    Segment(SegmentArgs),
    /// Render clips to spectrogram PNGs.
    Spectrogram(SpectrogramArgs),
    /// Assign train/test splits.
    Split(SplitArgs),
    /// LR range test; writes the smoothed curve.
    LrFind(LrFindArgs),
    /// Staged fine-tuning; writes a checkpoint and history CSVs.
    Train(TrainArgs),
    /// Metric report and confusion matrix on the test split.
    Evaluate(EvaluateArgs),
    /// Classify one WAV recording.
    Predict(PredictArgs),
    /// Plot a history, LR trace or LR curve CSV as a PNG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    pub per_class: usize,
    /// Overrides --per-class for the depressed class.
    #[arg(long)]
    pub depressed: Option<usize>,
    /// Overrides --per-class for the non-depressed class.
    #[arg(long)]
    pub non_depressed: Option<usize>,
    #[arg(long, default_value_t = 90.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 16_000)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    pub offset: f64,
    #[arg(long, default_value_t = 15.0)]
    pub window: f64,
    /// Contiguous windows up to this time; omit for a single window.
    #[arg(long)]
    pub until: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args, Clone)]
pub struct RenderArgs {
    #[arg(long, default_value_t = 224)]
    pub size: usize,
    /// Text file with 256 lines of "r g b".
    #[arg(long)]
    pub colormap: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub fft: usize,
    #[arg(long, default_value_t = 128)]
    pub hop: usize,
    #[arg(long, default_value_t = 2)]
    pub decimate: usize,
}

impl RenderArgs {
    fn pipeline(&self) -> Result<RenderPipeline, CliError> {
        let colormap = match &self.colormap {
            Some(p) => ColormapSpec::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
            None => ColormapSpec::Grayscale,
        };
        let spectrogram = SpectrogramConfig {
            fft_size: self.fft,
            hop: self.hop,
            ..SpectrogramConfig::default()
        };
        spectrogram.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.size == 0 || self.decimate == 0 {
            return Err(CliError::Usage("--size and --decimate must be positive".into()));
        }
        Ok(RenderPipeline {
            decimate_factor: self.decimate,
            spectrogram,
            out_size: self.size,
            colormap,
            ..RenderPipeline::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct SpectrogramArgs {
    /// Directory holding a manifest.csv of WAV clips.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub render: RenderArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    pub test_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep all records of a participant on the same side.
    #[arg(long)]
    pub by_participant: bool,
    /// Output manifest; defaults to <manifest stem>_split.csv beside the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LrFindArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "mini-18")]
    pub arch: String,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-7)]
    pub lr_start: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lr_end: f64,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Sweep the whole network instead of the head on cached features.
    #[arg(long)]
    pub unfrozen: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "mini-18")]
    pub arch: String,
    #[arg(long, default_value_t = 0.01)]
    pub head_lr: f64,
    /// Pick the head rate with the LR range test instead of --head-lr.
    #[arg(long)]
    pub find_head_lr: bool,
    #[arg(long, default_value_t = 10.0)]
    pub disc_factor: f64,
    #[arg(long, default_value_t = 1)]
    pub cycle_len: usize,
    #[arg(long, default_value_t = 2)]
    pub cycle_mult: usize,
    #[arg(long, default_value_t = 10)]
    pub max_cycles: usize,
    #[arg(long, default_value_t = 2)]
    pub patience: usize,
    #[arg(long, default_value_t = 2)]
    pub epochs_cached: usize,
    #[arg(long, default_value_t = 3)]
    pub epochs_aug: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub lr_find_iters: usize,
    /// Keep the head rate after unfreezing instead of re-running the range test.
    #[arg(long)]
    pub no_refind_lr: bool,
    #[arg(long)]
    pub no_augment: bool,
    /// Keep the initial batch-norm statistics of the body.
    #[arg(long)]
    pub no_bn_calibration: bool,
    /// Test fraction used when the manifest has no split column.
    #[arg(long, default_value_t = 0.25)]
    pub test_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Augmented views averaged per image; 0 disables.
    #[arg(long, default_value_t = 4)]
    pub tta: usize,
    #[arg(long, default_value_t = 0)]
    pub aug_seed: u64,
    /// Evaluate every record instead of the test split.
    #[arg(long)]
    pub all: bool,
    /// Also write the metric JSON line to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub tta: usize,
    #[arg(long, default_value_t = 0)]
    pub aug_seed: u64,
    #[arg(long, default_value_t = 60.0)]
    pub offset: f64,
    #[arg(long, default_value_t = 15.0)]
    pub window: f64,
    #[arg(long)]
    pub until: Option<f64>,
    #[arg(long)]
    pub colormap: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub fft: usize,
    #[arg(long, default_value_t = 128)]
    pub hop: usize,
    #[arg(long, default_value_t = 2)]
    pub decimate: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub history: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 640)]
    pub width: u32,
    #[arg(long, default_value_t = 400)]
    pub height: u32,
}

/// Paths created by a command, removed again if it fails.
#[derive(Default)]
struct Outputs {
    dirs: Vec<PathBuf>,
    files: Vec<PathBuf>,
    done: bool,
}

impl Outputs {
    /// Creates `dir`, which must be absent or empty.
    fn dir(&mut self, dir: &Path) -> Result<(), CliError> {
        if dir.exists() {
            let mut entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
            if entries.next().is_some() {
                return Err(CliError::Usage(format!("output directory {} is not empty", dir.display())));
            }
        }
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        self.dirs.push(dir.to_path_buf());
        Ok(())
    }

    fn file(&mut self, path: &Path) -> Result<PathBuf, CliError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            if !parent.is_dir() {
                return Err(CliError::Usage(format!("directory {} does not exist", parent.display())));
            }
        }
        self.files.push(path.to_path_buf());
        Ok(path.to_path_buf())
    }

    fn commit(mut self) {
        self.done = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        for d in &self.dirs {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} not found", path.display())))
    }
}

fn check_jobs(jobs: usize) -> Result<(), CliError> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Spectrogram(a) => cmd_spectrogram(a),
        Command::Split(a) => cmd_split(a),
        Command::LrFind(a) => cmd_lr_find(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        n_depressed: a.depressed.unwrap_or(a.per_class),
        n_non_depressed: a.non_depressed.unwrap_or(a.per_class),
        duration_s: a.duration,
        sample_rate_hz: a.sample_rate,
        seed: a.seed,
    };
    if config.n_depressed + config.n_non_depressed == 0 || !(a.duration > 0.0) || a.sample_rate == 0 {
        return Err(CliError::Usage("corpus needs files, a positive duration and a positive sample rate".into()));
    }
    let mut out = Outputs::default();
    out.dir(&a.out)?;
    let m = generate_corpus(&config, &a.out)?;
    println!(
        "wrote {} recordings ({} depressed, {} non-depressed) to {}",
        m.len(),
        m.count(Label::Depressed),
        m.count(Label::NonDepressed),
        a.out.display()
    );
    out.commit();
    Ok(())
}

fn cmd_segment(a: &SegmentArgs) -> Result<(), CliError> {
    check_jobs(a.jobs)?;
    let policy = SegmentPolicy {
        offset_s: a.offset,
        window_s: a.window,
        end_s: a.until,
    };
    policy.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    require_file(&a.manifest)?;
    let manifest = load_manifest(&a.manifest)?;
    let mut out = Outputs::default();
    out.dir(&a.out)?;
    let m = pipeline::segment_corpus(&manifest, &policy, &a.out, a.jobs)?;
    println!(
        "{} segments from {} recordings ({} depressed, {} non-depressed)",
        m.len(),
        manifest.len(),
        m.count(Label::Depressed),
        m.count(Label::NonDepressed)
    );
    out.commit();
    Ok(())
}

fn cmd_spectrogram(a: &SpectrogramArgs) -> Result<(), CliError> {
    check_jobs(a.jobs)?;
    let pipeline = a.render.pipeline()?;
    let manifest_path = a.input.join(crate::dataset::MANIFEST_NAME);
    require_file(&manifest_path)?;
    let manifest = load_manifest(&manifest_path)?;
    let mut out = Outputs::default();
    out.dir(&a.out)?;
    let m = pipeline::render_corpus(&manifest, &pipeline, &a.out, a.jobs)?;
    println!("rendered {} images at {}x{}", m.len(), a.render.size, a.render.size);
    out.commit();
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<(), CliError> {
    if !(a.test_frac > 0.0 && a.test_frac < 1.0) {
        return Err(CliError::Usage(format!("--test-frac {} must be in (0, 1)", a.test_frac)));
    }
    require_file(&a.manifest)?;
    let manifest = load_manifest(&a.manifest)?;
    let target = match &a.out {
        Some(p) => p.clone(),
        None => {
            let stem = a.manifest.file_stem().map_or("manifest".into(), |s| s.to_string_lossy().into_owned());
            a.manifest.with_file_name(format!("{stem}_split.csv"))
        }
    };
    if target == a.manifest {
        return Err(CliError::Usage("--out must differ from the input manifest".into()));
    }
    let (train, test) = if a.by_participant {
        split_by_participant(&manifest, a.test_frac, a.seed)?
    } else {
        split(&manifest, a.test_frac, a.seed)?
    };
    let mut records = train.records.clone();
    records.extend(test.records.iter().cloned());
    records.sort_by_key(|r| manifest.records.iter().position(|x| x.participant_id == r.participant_id && x.path == r.path));
    let combined = manifest.with_records(records);
    let base = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut out = Outputs::default();
    let target = out.file(&target)?;
    pipeline::rebase(&combined, base).save(&target)?;
    println!("train {} / test {} -> {}", train.len(), test.len(), target.display());
    out.commit();
    Ok(())
}

/// Train and validation images. Manifests without a split column are split
/// with `test_frac` and `seed`.
pub fn load_split_images(manifest: &Manifest, test_frac: f64, seed: u64) -> Result<(ImageSet, ImageSet), CliError> {
    let (train, test) = if manifest.records.iter().any(|r| r.split.is_some()) {
        (manifest.filter_split(Split::Train), manifest.filter_split(Split::Test))
    } else {
        split(manifest, test_frac, seed)?
    };
    Ok((ImageSet::load(&train)?, ImageSet::load(&test)?))
}

fn input_size(set: &ImageSet) -> Result<usize, CliError> {
    set.square_size()
        .ok_or_else(|| CliError::Data("images must be square and share one size".into()))
}

fn cmd_lr_find(a: &LrFindArgs) -> Result<(), CliError> {
    require_file(&a.manifest)?;
    let config = LrFindConfig {
        lr_start: a.lr_start,
        lr_end: a.lr_end,
        iters: a.iters,
    };
    let plan = TrainPlan {
        batch_size: a.batch,
        seed: a.seed,
        lr_find: config,
        ..TrainPlan::default()
    };
    plan.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    let (train, val) = load_split_images(&manifest, 0.25, a.seed)?;
    let cfg = ModelConfig::from_arch(&a.arch, input_size(&train)?)?;
    let mut model = Model::<f32>::build(&cfg, a.seed)?;
    if !a.unfrozen {
        model.set_frozen(&[0, 1], true)?;
    }
    let mut out = Outputs::default();
    let target = out.file(&a.out)?;
    let mut session = Session::new(model, &train, &val, plan)?;
    let curve = if a.unfrozen {
        session.find_lr_full()?
    } else {
        let cache = crate::trainer::cache_activations(&session.model, &train)?;
        session.find_lr_cached(&cache)?
    };
    write_text(&target, &curve.to_csv())?;
    match crate::trainer::suggest_lr(&curve) {
        Ok(lr) => println!("suggested lr {lr:e} ({} points)", curve.points.len()),
        Err(e) => println!("no suggestion: {e}"),
    }
    out.commit();
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map_or_else(Default::default, |n| n.to_os_string());
    name.push(suffix);
    path.with_file_name(name)
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    check_jobs(a.jobs)?;
    if !(a.test_frac > 0.0 && a.test_frac < 1.0) {
        return Err(CliError::Usage(format!("--test-frac {} must be in (0, 1)", a.test_frac)));
    }
    let plan = TrainPlan {
        head_lr: (!a.find_head_lr).then_some(a.head_lr),
        disc_factor: a.disc_factor,
        head_epochs_cached: a.epochs_cached,
        head_epochs_aug: a.epochs_aug,
        batch_size: a.batch,
        seed: a.seed,
        overfit_patience: a.patience,
        cycle_len: a.cycle_len,
        cycle_mult: a.cycle_mult,
        max_cycles: a.max_cycles,
        augment: (!a.no_augment).then_some(AugmentSpec {
            rng_seed: a.seed,
            ..AugmentSpec::default()
        }),
        lr_find: LrFindConfig {
            iters: a.lr_find_iters,
            ..LrFindConfig::default()
        },
        refind_lr: !a.no_refind_lr,
        calibrate_bn: !a.no_bn_calibration,
        ..TrainPlan::default()
    };
    plan.validate()?;
    ModelConfig::from_arch(&a.arch, 224)?;
    require_file(&a.manifest)?;
    let manifest = load_manifest(&a.manifest)?;
    let mut out = Outputs::default();
    let ckpt = out.file(&a.out)?;
    let history_path = out.file(&sibling(&a.out, ".history.csv"))?;
    let lr_path = out.file(&sibling(&a.out, ".lr.csv"))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let (model, history) = pool.install(|| -> Result<_, CliError> {
        let (train_m, val_m) = if manifest.records.iter().any(|r| r.split.is_some()) {
            (manifest.filter_split(Split::Train), manifest.filter_split(Split::Test))
        } else {
            split(&manifest, a.test_frac, a.seed)?
        };
        let balanced = if train_m.count(Label::Depressed) != train_m.count(Label::NonDepressed) {
            oversample_minority(&train_m, a.seed)?
        } else {
            train_m
        };
        let train = ImageSet::load(&balanced)?;
        let val = ImageSet::load(&val_m)?;
        let cfg = ModelConfig::from_arch(&a.arch, input_size(&train)?)?;
        let model = Model::<f32>::build(&cfg, a.seed)?;
        Ok(fine_tune(model, &train, &val, &plan)?)
    })?;
    save_checkpoint(&model, &ckpt)?;
    write_text(&history_path, &history.to_csv())?;
    write_text(&lr_path, &history.lr_trace_csv())?;
    for (curve, suffix) in [(&history.head_curve, ".head-lrfind.csv"), (&history.unfrozen_curve, ".lrfind.csv")] {
        if let Some(c) = curve {
            let p = out.file(&sibling(&a.out, suffix))?;
            write_text(&p, &c.to_csv())?;
        }
    }
    out.commit();
    let best = history.best_epoch.and_then(|e| history.epochs.iter().find(|r| r.epoch == e));
    if let Some(b) = best {
        println!(
            "best epoch {} ({}): val_loss {:.4}, val_acc {:.4}; {} epochs, head lr {:e}, unfrozen lr {:e}",
            b.epoch,
            b.phase,
            b.val_loss,
            b.val_acc,
            history.epochs.len(),
            history.head_lr,
            history.unfrozen_lr
        );
    }
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

/// Predicted labels and metrics for a labeled image set.
pub fn evaluate_images(
    model: &Model<f32>,
    data: &ImageSet,
    tta: Option<(&AugmentSpec, usize)>,
) -> Result<(ConfusionMatrix, MetricReport), CliError> {
    let probs = predict_set(model, data, tta)?;
    let preds: Vec<Label> = probs.iter().map(|p| Label::from_class_index(argmax(p))).collect();
    let cm = confusion(&preds, &data.labels).map_err(|e| CliError::Data(e.to_string()))?;
    let rep = report(&cm).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((cm, rep))
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    check_jobs(a.jobs)?;
    require_file(&a.ckpt)?;
    require_file(&a.manifest)?;
    let model = load_checkpoint(&a.ckpt)?;
    let manifest = load_manifest(&a.manifest)?;
    let subset = if a.all || manifest.records.iter().all(|r| r.split.is_none()) {
        manifest
    } else {
        manifest.filter_split(Split::Test)
    };
    let data = ImageSet::load(&subset)?;
    if data.is_empty() {
        return Err(CliError::Data("no records to evaluate".into()));
    }
    let spec = AugmentSpec {
        rng_seed: a.aug_seed,
        ..AugmentSpec::default()
    };
    let tta = (a.tta > 0).then_some((&spec, a.tta));
    let mut out = Outputs::default();
    let json_path = a.json.as_deref().map(|p| out.file(p)).transpose()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let (cm, rep) = pool.install(|| evaluate_images(&model, &data, tta))?;
    println!("{}", rep.to_table());
    println!("{cm}");
    let line = rep.to_json_line(&cm);
    println!("{line}");
    if let Some(p) = json_path {
        write_text(&p, &format!("{line}\n"))?;
    }
    out.commit();
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    require_file(&a.ckpt)?;
    require_file(&a.wav)?;
    let policy = SegmentPolicy {
        offset_s: a.offset,
        window_s: a.window,
        end_s: a.until,
    };
    policy.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let model = load_checkpoint(&a.ckpt)?;
    let render = RenderArgs {
        size: model.config.input_size,
        colormap: a.colormap.clone(),
        fft: a.fft,
        hop: a.hop,
        decimate: a.decimate,
    }
    .pipeline()?;
    let audio = pipeline::read_wav(&a.wav)?;
    let clips = segment_buffer(&audio, &policy).map_err(|e| CliError::Data(e.to_string()))?;
    let spec = AugmentSpec {
        rng_seed: a.aug_seed,
        ..AugmentSpec::default()
    };
    let classes = model.config.num_classes;
    let mut mean = vec![0.0f64; classes];
    for clip in &clips {
        let img = render.run(clip).map_err(|e| CliError::Data(e.to_string()))?;
        let p = predict_tta(&model, &img, &spec, a.tta)?;
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v as f64 / clips.len() as f64;
        }
    }
    let probs: Vec<f32> = mean.iter().map(|&v| v as f32).collect();
    let label = Label::from_class_index(argmax(&probs));
    println!(
        "{label} (non-depressed {:.4}, depressed {:.4}; {} segment(s))",
        probs[Label::NonDepressed.class_index()],
        probs[Label::Depressed.class_index()],
        clips.len()
    );
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> Result<(), CliError> {
    if a.width < 100 || a.height < 100 {
        return Err(CliError::Usage("--width and --height must be at least 100".into()));
    }
    require_file(&a.history)?;
    let mut out = Outputs::default();
    let target = out.file(&a.out)?;
    plot::plot_csv(&a.history, &target, a.width, a.height)?;
    println!("wrote {}", target.display());
    out.commit();
    Ok(())
}
