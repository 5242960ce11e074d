//! Command-line front end.
//!
//! Every command prints a `key=value` manifest on success and also writes it to
//! `<output>.manifest` unless `--manifest` names another path.

mod bench;
mod config_file;
mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use bench::{median, tile_rows_f32, time_projection, BenchTiming};
pub use config_file::{parse_config_text, read_config_file};
pub use manifest::{default_manifest_path, RunManifest};

use crate::data::{
    decode_descriptors, describe_patches, load_patches, save_descriptors, save_patches,
    split_dataset, DescriptorSet, Precision, SynthConfig, Tier,
};
use crate::error::{Error, Result};
use crate::eval::{eval_matching, eval_retrieval, eval_verification, EvalReport, Task};
use crate::nn::{save_model, FrozenEncoder, MlpModel};
use crate::pca::{fit_pca, PcaModel};
use crate::train::{reduce, train, ClusterEvent, EpochRecord, LabelSource, Scheme, TrainConfig, TrainObserver};

#[derive(Debug, Parser)]
#[command(name = "descpress", version, about = "Learned dimensionality reduction of local descriptors")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled patch dataset.
    Synth(SynthArgs),
    /// Compute 128-D gradient-histogram descriptors for a patch file.
    Describe(DescribeArgs),
    /// Split a descriptor file by class into train/validation/test files.
    Split(SplitArgs),
    /// Fit a PCA projection.
    FitPca(FitPcaArgs),
    /// Train an encoder.
    Train(TrainArgs),
    /// Project descriptors through an encoder or PCA model.
    Reduce(ReduceArgs),
    /// Evaluate descriptors on verification, matching or retrieval.
    Eval(EvalArgs),
    /// Train and evaluate a grid of hidden-layer counts and widths.
    Sweep(SweepArgs),
    /// Time projection through a model.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long = "per-class", default_value_t = 4)]
    pub per_class: usize,
    /// Comma-separated noise tiers cycled over non-reference views.
    #[arg(long, default_value = "easy,hard,tough")]
    pub tiers: String,
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Value width of the output file: f32 or f64.
    #[arg(long, default_value = "f32")]
    pub precision: String,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Train, validation and test fractions of the classes.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub fractions: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitPcaArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub dim: usize,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Training settings; each flag overrides the same key in `--config`.
#[derive(Debug, Args, Default, Clone)]
pub struct TrainFlags {
    /// Flat `key=value` file with `#` comments.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// us, ss or sv.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Comma-separated hidden widths, or `none`.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// linear or none.
    #[arg(long = "lr-schedule")]
    pub lr_schedule: Option<String>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "distance-loss", num_args = 0..=1, default_missing_value = "true")]
    pub distance_loss: Option<String>,
    #[arg(long = "distance-on-positives", num_args = 0..=1, default_missing_value = "true")]
    pub distance_on_positives: Option<String>,
    /// Cluster count or `auto`.
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long = "recluster-period")]
    pub recluster_period: Option<usize>,
    #[arg(long = "kmeans-iters")]
    pub kmeans_iters: Option<usize>,
    #[arg(long = "kmeans-restarts")]
    pub kmeans_restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("scheme", self.scheme.clone());
        push("dim", self.dim.map(|v| v.to_string()));
        push("hidden", self.hidden.clone());
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("lr_schedule", self.lr_schedule.clone());
        push("margin", self.margin.map(|v| v.to_string()));
        push("alpha", self.alpha.map(|v| v.to_string()));
        push("beta", self.beta.map(|v| v.to_string()));
        push("distance_loss", self.distance_loss.clone());
        push("distance_on_positives", self.distance_on_positives.clone());
        push("k", self.k.clone());
        push("recluster_period", self.recluster_period.map(|v| v.to_string()));
        push("kmeans_iters", self.kmeans_iters.map(|v| v.to_string()));
        push("kmeans_restarts", self.kmeans_restarts.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        out
    }

    /// Builds the configuration: scheme defaults, then the config file, then flags.
    /// `fallback` supplies the scheme and dimension when neither source names them.
    pub fn resolve(&self, fallback: Option<(Scheme, usize)>) -> Result<TrainConfig> {
        let file = match &self.config {
            Some(p) => read_config_file(p)?,
            None => Vec::new(),
        };
        let flags = self.pairs();
        let lookup = |key: &str| -> Option<String> {
            let norm = |k: &str| k.trim().replace('-', "_");
            let aliases: &[&str] = match key {
                "scheme" => &["scheme"],
                _ => &["dim", "target_dim"],
            };
            flags
                .iter()
                .find(|(k, _)| aliases.contains(&norm(k).as_str()))
                .map(|(_, v)| v.clone())
                .or_else(|| {
                    file.iter()
                        .rev()
                        .find(|(k, _)| aliases.contains(&norm(k).as_str()))
                        .map(|(_, v)| v.clone())
                })
        };
        let scheme = match (lookup("scheme"), fallback) {
            (Some(s), _) => s.parse()?,
            (None, Some((s, _))) => s,
            (None, None) => return Err(Error::config("no scheme given (use --scheme or scheme= in --config)")),
        };
        let dim = match (lookup("dim"), fallback) {
            (Some(d), _) => d
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("invalid dim '{d}'")))?,
            (None, Some((_, d))) => d,
            (None, None) => return Err(Error::config("no target dimension given (use --dim or dim= in --config)")),
        };
        let mut config = TrainConfig::new(scheme, dim);
        for (k, v) in &file {
            config.set(k, v)?;
        }
        for (k, v) in &flags {
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Training log; defaults to `<output>.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Encoder (DNN1) or PCA (DPC1) model file.
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// f32 or f64; defaults to the input file's width.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// verification, matching, retrieval or all.
    #[arg(long, default_value = "matching")]
    pub task: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "pairs-per-tier", default_value_t = crate::eval::DEFAULT_PAIRS_PER_TIER)]
    pub pairs_per_tier: usize,
    #[arg(long, default_value_t = crate::eval::DEFAULT_DISTRACTORS)]
    pub distractors: usize,
    /// Report file; printed to stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// One record line per tier instead of a key=value block.
    #[arg(long)]
    pub records: bool,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Descriptors scored with matching mAP.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "0,1,2")]
    pub layers: String,
    #[arg(long, default_value = "96,128,256,512,1024")]
    pub sizes: String,
    /// Table file; printed to stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub input: PathBuf,
    /// Descriptors per repetition; input rows are repeated to reach it.
    #[arg(long, default_value_t = 100_000)]
    pub count: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Describe(a) => cmd_describe(&a),
        Command::Split(a) => cmd_split(&a),
        Command::FitPca(a) => cmd_fit_pca(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Reduce(a) => cmd_reduce(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn parse_precision(s: &str) -> Result<Precision> {
    match s.trim().to_ascii_lowercase().as_str() {
        "f32" | "4" => Ok(Precision::F32),
        "f64" | "8" => Ok(Precision::F64),
        other => Err(Error::config(format!("unknown precision '{other}' (expected f32 or f64)"))),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::config(format!("invalid {what} '{}'", v.trim())))
        })
        .collect()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a descriptor file together with its stored value width.
fn load_descriptors_precision(path: &Path) -> Result<(DescriptorSet, Precision)> {
    let buf = read_file(path)?;
    let set = decode_descriptors(&buf)?;
    let precision = if buf[12] == 4 { Precision::F32 } else { Precision::F64 };
    Ok((set, precision))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::data::write_atomic(path, text.as_bytes())
}

fn manifest_path(explicit: &Option<PathBuf>, output: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| default_manifest_path(output))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut m = RunManifest::new("synth");
    let tiers: Vec<Tier> = parse_list(&a.tiers, "tier")?;
    m.set("classes", a.classes);
    m.set("per_class", a.per_class);
    m.set("tiers", &a.tiers);
    m.set("scenes", a.scenes);
    m.set("seed", a.seed);
    let set = m.phase("generate", || {
        SynthConfig::new(a.classes, a.per_class, tiers, a.seed)
            .scenes(a.scenes)
            .generate()
    })?;
    m.set("patches", set.len());
    m.phase("write", || save_patches(&set, &a.output))?;
    m.output(&a.output);
    m.emit(Some(&manifest_path(&a.manifest, &a.output)))
}

fn cmd_describe(a: &DescribeArgs) -> Result<()> {
    let mut m = RunManifest::new("describe");
    let precision = parse_precision(&a.precision)?;
    m.input(&a.input);
    let patches = m.phase("load", || load_patches(&a.input))?;
    let start = Instant::now();
    let set = m.phase("describe", || describe_patches(&patches))?;
    m.set("descriptors", set.len());
    m.set("dim", set.dim());
    m.set("precision", &a.precision);
    m.set("per_descriptor_us", per_item_us(start, set.len()));
    m.phase("write", || save_descriptors(&set, &a.output, precision))?;
    m.output(&a.output);
    m.emit(Some(&manifest_path(&a.manifest, &a.output)))
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let mut m = RunManifest::new("split");
    let f: Vec<f64> = parse_list(&a.fractions, "fraction")?;
    let fractions: [f64; 3] = f
        .try_into()
        .map_err(|_| Error::config("--fractions needs exactly three values"))?;
    m.input(&a.input);
    m.set("fractions", &a.fractions);
    m.set("seed", a.seed);
    let (set, precision) = m.phase("load", || load_descriptors_precision(&a.input))?;
    let (train, val, test) = m.phase("split", || split_dataset(&set, fractions, a.seed))?;
    m.phase("write", || {
        for (part, path) in [(&train, &a.train), (&val, &a.val), (&test, &a.test)] {
            save_descriptors(part, path, precision)?;
        }
        Ok(())
    })?;
    m.set("train_rows", train.len());
    m.set("val_rows", val.len());
    m.set("test_rows", test.len());
    for p in [&a.train, &a.val, &a.test] {
        m.output(p);
    }
    m.emit(Some(&manifest_path(&a.manifest, &a.train)))
}

fn cmd_fit_pca(a: &FitPcaArgs) -> Result<()> {
    let mut m = RunManifest::new("fit-pca");
    m.input(&a.input);
    m.set("dim", a.dim);
    let (set, _) = m.phase("load", || load_descriptors_precision(&a.input))?;
    let model = m.phase("fit", || fit_pca(&set, a.dim))?;
    let start = Instant::now();
    model.project(&set.descriptors)?;
    m.set("per_descriptor_us", per_item_us(start, set.len()));
    m.phase("write", || model.save(&a.output))?;
    m.output(&a.output);
    m.emit(Some(&manifest_path(&a.manifest, &a.output)))
}

/// Collects the training log and mirrors it to the `log` facade.
#[derive(Default)]
struct LogObserver {
    lines: Vec<String>,
}

impl TrainObserver for LogObserver {
    fn on_epoch(&mut self, r: &EpochRecord) {
        log::info!("{r}");
        self.lines.push(r.to_string());
    }

    fn on_cluster(&mut self, e: &ClusterEvent) {
        let source = match e.source {
            LabelSource::Original => "original",
            LabelSource::Embedded => "embedded",
        };
        let line = format!(
            "cluster epoch={} source={source} k={} objective={:.9} head={}",
            e.epoch, e.k, e.objective, e.head_width
        );
        log::info!("{line}");
        self.lines.push(line);
    }
}

fn per_item_us(start: Instant, n: usize) -> String {
    format!("{:.6}", start.elapsed().as_secs_f64() * 1e6 / n.max(1) as f64)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut m = RunManifest::new("train");
    let config = a.flags.resolve(None)?;
    for line in config.to_lines() {
        let (k, v) = line.split_once('=').expect("config lines are key=value");
        m.set(k, v);
    }
    m.input(&a.input);
    let (set, _) = m.phase("load", || load_descriptors_precision(&a.input))?;
    let mut log = LogObserver::default();
    let model = m.phase("train", || train(&set, &config, &mut log))?;
    let start = Instant::now();
    reduce(&model, &set)?;
    m.set("per_descriptor_us", per_item_us(start, set.len()));
    m.set("params", model.param_count());
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.output.as_os_str().to_owned();
        s.push(".log");
        PathBuf::from(s)
    });
    m.phase("write", || {
        save_model(&model, &a.output)?;
        let mut text = config.to_lines().join("\n");
        text.push('\n');
        for line in &log.lines {
            text.push_str(line);
            text.push('\n');
        }
        write_text(&log_path, &text)
    })?;
    m.output(&a.output);
    m.output(&log_path);
    m.emit(Some(&manifest_path(&a.manifest, &a.output)))
}

/// A model file of either kind, recognized by its magic.
pub enum AnyModel {
    Encoder(MlpModel),
    Pca(PcaModel),
}

impl AnyModel {
    pub fn load(path: &Path) -> Result<AnyModel> {
        let buf = read_file(path)?;
        match buf.get(..4) {
            Some(b"DNN1") => Ok(AnyModel::Encoder(MlpModel::from_bytes(&buf)?)),
            Some(b"DPC1") => Ok(AnyModel::Pca(PcaModel::from_bytes(&buf)?)),
            _ => Err(Error::format(0, format!("{} is neither an encoder nor a PCA model", path.display()))),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            AnyModel::Encoder(e) => e.input_dim(),
            AnyModel::Pca(p) => p.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            AnyModel::Encoder(e) => e.output_dim(),
            AnyModel::Pca(p) => p.output_dim(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            AnyModel::Encoder(_) => "encoder",
            AnyModel::Pca(_) => "pca",
        }
    }

    /// Projects a descriptor set; PCA outputs are ℓ2-normalized.
    pub fn apply(&self, set: &DescriptorSet) -> Result<DescriptorSet> {
        if set.dim() != self.input_dim() {
            return Err(Error::shape(format!(
                "model expects dimension {}, descriptors have dimension {}",
                self.input_dim(),
                set.dim()
            )));
        }
        match self {
            AnyModel::Encoder(e) => reduce(e, set),
            AnyModel::Pca(p) => crate::pca::pca_transform(p, set),
        }
    }
}

fn cmd_reduce(a: &ReduceArgs) -> Result<()> {
    let mut m = RunManifest::new("reduce");
    m.input(&a.input);
    m.input(&a.model);
    let model = m.phase("load_model", || AnyModel::load(&a.model))?;
    let (set, input_precision) = m.phase("load", || load_descriptors_precision(&a.input))?;
    let precision = match &a.precision {
        Some(p) => parse_precision(p)?,
        None => input_precision,
    };
    let start = Instant::now();
    let out = m.phase("project", || model.apply(&set))?;
    m.set("model", model.kind());
    m.set("input_dim", set.dim());
    m.set("output_dim", out.dim());
    m.set("descriptors", out.len());
    m.set("per_descriptor_us", per_item_us(start, set.len()));
    m.phase("write", || save_descriptors(&out, &a.output, precision))?;
    m.output(&a.output);
    m.emit(Some(&manifest_path(&a.manifest, &a.output)))
}

fn run_task(set: &DescriptorSet, task: Task, a: &EvalArgs) -> Result<EvalReport> {
    match task {
        Task::Verification => eval_verification(set, a.pairs_per_tier, a.seed),
        Task::Matching => eval_matching(set, a.seed),
        Task::Retrieval => eval_retrieval(set, a.distractors, a.seed),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut m = RunManifest::new("eval");
    let tasks: Vec<Task> = if a.task.trim().eq_ignore_ascii_case("all") {
        Task::ALL.to_vec()
    } else {
        parse_list(&a.task, "task")?
    };
    m.input(&a.input);
    m.set("task", &a.task);
    m.set("seed", a.seed);
    let (set, _) = m.phase("load", || load_descriptors_precision(&a.input))?;
    let mut text = String::new();
    for task in tasks {
        let report = m.phase(task.name(), || run_task(&set, task, a))?;
        let report = report
            .with_echo("dim", set.dim())
            .with_echo("input", a.input.display())
            .with_echo("seed", a.seed);
        m.set(format!("map_{}", task.name()), format!("{:.6}", report.map_overall));
        text.push_str(&if a.records { report.to_records() } else { report.to_text() });
    }
    match &a.output {
        Some(out) => {
            write_text(out, &text)?;
            m.output(out);
            m.emit(Some(&manifest_path(&a.manifest, out)))
        }
        None => {
            print!("{text}");
            m.emit(a.manifest.as_deref())
        }
    }
}

/// Matching mAP of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub layers: usize,
    pub size: usize,
    pub map: f64,
    pub params: usize,
}

/// Trains one encoder per (layer count, width) cell with identical data and
/// seed, and scores each on matching.
pub fn sweep(
    train_set: &DescriptorSet,
    test_set: &DescriptorSet,
    base: &TrainConfig,
    layers: &[usize],
    sizes: &[usize],
) -> Result<Vec<SweepRow>> {
    if let Some(l) = layers.iter().find(|&&l| l > crate::nn::MAX_HIDDEN_LAYERS) {
        return Err(Error::config(format!(
            "{l} hidden layers requested, at most {} supported",
            crate::nn::MAX_HIDDEN_LAYERS
        )));
    }
    let mut rows = Vec::with_capacity(layers.len() * sizes.len());
    for &l in layers {
        for &size in sizes {
            let mut config = base.clone();
            config.hidden_sizes = vec![size; l];
            let model = train(train_set, &config, &mut crate::train::NoObserver)?;
            let report = eval_matching(&reduce(&model, test_set)?, config.seed)?;
            log::info!("sweep layers={l} size={size} map={:.6}", report.map_overall);
            rows.push(SweepRow {
                layers: l,
                size,
                map: report.map_overall,
                params: model.param_count(),
            });
        }
    }
    Ok(rows)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!("{:>6} {:>6} {:>10} {:>9}\n", "layers", "size", "params", "map");
    for r in rows {
        out.push_str(&format!("{:>6} {:>6} {:>10} {:>9.6}\n", r.layers, r.size, r.params, r.map));
    }
    out
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let mut m = RunManifest::new("sweep");
    let config = a.flags.resolve(Some((Scheme::Supervised, 64)))?;
    let layers: Vec<usize> = parse_list(&a.layers, "layer count")?;
    let sizes: Vec<usize> = parse_list(&a.sizes, "hidden size")?;
    for line in config.to_lines() {
        let (k, v) = line.split_once('=').expect("config lines are key=value");
        if k != "hidden" {
            m.set(k, v);
        }
    }
    m.set("layers", &a.layers);
    m.set("sizes", &a.sizes);
    m.input(&a.train);
    m.input(&a.test);
    let (train_set, _) = m.phase("load_train", || load_descriptors_precision(&a.train))?;
    let (test_set, _) = m.phase("load_test", || load_descriptors_precision(&a.test))?;
    let rows = m.phase("sweep", || sweep(&train_set, &test_set, &config, &layers, &sizes))?;
    let table = sweep_table(&rows);
    match &a.output {
        Some(out) => {
            write_text(out, &table)?;
            m.output(out);
            m.emit(Some(&manifest_path(&a.manifest, out)))
        }
        None => {
            print!("{table}");
            m.emit(a.manifest.as_deref())
        }
    }
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let mut m = RunManifest::new("bench");
    if a.reps == 0 || a.count == 0 {
        return Err(Error::config("--reps and --count must be positive"));
    }
    m.input(&a.model);
    m.input(&a.input);
    let model = m.phase("load_model", || AnyModel::load(&a.model))?;
    let (set, _) = m.phase("load", || load_descriptors_precision(&a.input))?;
    if set.dim() != model.input_dim() {
        return Err(Error::shape(format!(
            "model expects dimension {}, descriptors have dimension {}",
            model.input_dim(),
            set.dim()
        )));
    }
    let timing = m.phase("bench", || match &model {
        AnyModel::Encoder(e) => {
            let frozen = FrozenEncoder::new(e);
            let x = tile_rows_f32(&set.descriptors, a.count);
            time_projection(&frozen, &x, a.count, a.reps)
        }
        AnyModel::Pca(p) => bench::time_pca(p, &set.descriptors, a.count, a.reps),
    })?;
    m.set("model", model.kind());
    m.set("input_dim", model.input_dim());
    m.set("output_dim", model.output_dim());
    m.set("count", a.count);
    m.set("reps", a.reps);
    m.set("per_descriptor_us", format!("{:.6}", timing.median_us));
    m.set("min_per_descriptor_us", format!("{:.6}", timing.min_us));
    m.set("max_per_descriptor_us", format!("{:.6}", timing.max_us));
    m.set(
        "memory_ratio",
        format!("{:.4}", model.input_dim() as f64 / model.output_dim() as f64),
    );
    m.emit(a.manifest.as_deref())
}
