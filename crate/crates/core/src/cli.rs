//! `v2c` command-line front end: train, translate, eval, map and split.
//!
//! Every subcommand emits a JSON run manifest (resolved settings, seeds,
//! input digests, versions). `train` writes it next to the checkpoint; the
//! others write it to `--manifest PATH` or to stderr.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cells::CellKind;
use crate::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crate::data::{self, AnnotationSet, FeatureFile, SplitMode, FEATURE_VERSION};
use crate::error::{Result, V2cError};
use crate::mapper::{self, RobotVocabulary};
use crate::metrics::{self, Corpus, CorpusItem};
use crate::model::{Model, ModelConfig, DEFAULT_HIDDEN, DEFAULT_INIT_RANGE, DEFAULT_STEPS};
use crate::train::{self, TrainConfig, TrainingExample, DEFAULT_BATCH, DEFAULT_EPOCHS, DEFAULT_LR};
use crate::vocab::Vocabulary;

pub const THREADS_ENV: &str = "V2C_THREADS";

#[derive(Debug, Parser)]
#[command(name = "v2c", version, about = "Translate per-frame video features into robot commands")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an encoder-decoder on feature files and annotations.
    Train(TrainArgs),
    /// Greedy-decode a command for each feature file.
    Translate(TranslateArgs),
    /// Translate an annotated set and print captioning metrics.
    Eval(EvalArgs),
    /// Map generated commands onto a robot vocabulary.
    Map(MapArgs),
    /// Split an annotation file into train and test files.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding `<video_id>.v2cf` feature files.
    #[arg(long)]
    pub features: PathBuf,
    /// `video_id<TAB>command` lines.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = CellKind::Lstm)]
    pub cell: CellKind,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub frames: usize,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; vocabulary, manifest and log are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `<out>.epoch<N>` every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Keep the sample order fixed instead of reshuffling every epoch.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Resolve inputs and settings, write the manifest, and stop.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One or more `.v2cf` files; the file stem is the video id.
    #[arg(long, num_args = 1.., required = true)]
    pub features: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "oracle")]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Score the ground truth against itself.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Write `video_id<TAB>candidate` lines here.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// `slot<TAB>token` lines with slot in hand, action, object.
    #[arg(long)]
    pub robot_vocab: PathBuf,
    #[arg(long, default_value_t = mapper::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Commands to map, `video_id<TAB>tokens` or bare tokens; stdin if absent.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep clips of the same video (id prefix before the last `_`) together.
    #[arg(long)]
    pub by_video: bool,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub v2c: &'static str,
    pub checkpoint_format: u32,
    pub feature_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions { v2c: env!("CARGO_PKG_VERSION"), checkpoint_format: CHECKPOINT_VERSION, feature_format: FEATURE_VERSION }
    }
}

/// Everything needed to reproduce one invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: &'static str,
    pub versions: Versions,
    pub threads: usize,
    pub settings: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(subcommand: &'static str, threads: usize, settings: serde_json::Value) -> Self {
        RunManifest { subcommand, versions: Versions::default(), threads, settings, inputs: Vec::new(), outputs: Vec::new() }
    }

    fn digest(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| V2cError::io(path, e))?;
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

#[derive(Debug, Clone, Serialize)]
struct TrainSettings {
    cell: CellKind,
    hidden: usize,
    frames: usize,
    epochs: usize,
    lr: f64,
    batch: usize,
    init_range: f64,
    seed: u64,
    shuffle: bool,
    checkpoint_every: Option<usize>,
    feature_dim: usize,
    vocab_size: usize,
    samples: usize,
    features: String,
    annotations: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Requested worker count, capped by `V2C_THREADS` when set.
pub fn resolve_threads(requested: usize) -> Result<usize> {
    if requested == 0 {
        return Err(V2cError::Usage("--threads must be at least 1".into()));
    }
    let cap = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| V2cError::Usage(format!("{THREADS_ENV}={v:?} is not a positive integer")))?,
        Err(_) => usize::MAX,
    };
    Ok(requested.min(cap))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| V2cError::io(path, e))
}

fn emit_manifest(manifest: &RunManifest, dest: Option<&Path>, stderr: &mut dyn Write) -> Result<()> {
    match dest {
        Some(p) => write_file(p, manifest.to_json()),
        None => {
            let _ = write!(stderr, "{}", manifest.to_json());
            Ok(())
        }
    }
}

fn video_id_of(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .ok_or_else(|| V2cError::Usage(format!("cannot derive a video id from {}", path.display())))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| V2cError::Config(format!("cannot start worker pool: {e}")))
}

/// Translate each prepared input, preserving input order.
fn translate_all(model: &Model, vocab: &Vocabulary, inputs: &[Vec<Vec<f64>>], threads: usize) -> Result<Vec<Vec<String>>> {
    let one = |features: &Vec<Vec<f64>>| -> Result<Vec<String>> {
        let out = model.translate(features)?;
        Ok(vocab.render(&out.tokens).into_iter().map(str::to_owned).collect())
    };
    if threads <= 1 {
        inputs.iter().map(one).collect()
    } else {
        pool(threads)?.install(|| inputs.par_iter().map(one).collect())
    }
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        V2cError::Config(m) if !m.starts_with(&path.display().to_string()) => V2cError::Config(format!("{}: {m}", path.display())),
        V2cError::Shape(m) => V2cError::Shape(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn cmd_train(args: &TrainArgs, stderr: &mut dyn Write) -> Result<()> {
    let threads = resolve_threads(args.threads)?;
    let annotations = AnnotationSet::load(&args.annotations)?;
    if annotations.is_empty() {
        return Err(V2cError::Usage(format!("{} has no annotations", args.annotations.display())));
    }
    let samples = data::load_samples(&args.features, &annotations, args.frames, None)?;
    let feature_dim = samples[0].features[0].len();
    let vocab = Vocabulary::build(&annotations.commands())?;

    let model_config = ModelConfig {
        cell_kind: args.cell,
        hidden: args.hidden,
        feature_dim,
        vocab_size: vocab.len(),
        n_steps: args.frames,
        init_range: DEFAULT_INIT_RANGE,
        seed: args.seed,
    };
    model_config.validate()?;
    let train_config = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        batch_size: args.batch,
        seed: args.seed,
        shuffle: !args.no_shuffle,
        checkpoint_every: args.checkpoint_every,
        threads,
    };
    train_config.validate()?;

    let settings = TrainSettings {
        cell: args.cell,
        hidden: args.hidden,
        frames: args.frames,
        epochs: args.epochs,
        lr: args.lr,
        batch: args.batch,
        init_range: model_config.init_range,
        seed: args.seed,
        shuffle: train_config.shuffle,
        checkpoint_every: args.checkpoint_every,
        feature_dim,
        vocab_size: vocab.len(),
        samples: samples.len(),
        features: args.features.display().to_string(),
        annotations: args.annotations.display().to_string(),
    };
    let mut manifest = RunManifest::new("train", threads, serde_json::to_value(&settings).expect("settings serialize"));
    manifest.digest(&args.annotations)?;
    for rec in &annotations.records {
        manifest.digest(&data::feature_path(&args.features, &rec.video_id))?;
    }
    let vocab_path = sibling(&args.out, ".vocab.txt");
    let manifest_path = sibling(&args.out, ".manifest.json");
    let log_path = sibling(&args.out, ".log");
    manifest.outputs = [&args.out, &vocab_path, &log_path].iter().map(|p| p.display().to_string()).collect();
    write_file(&manifest_path, manifest.to_json())?;
    if args.dry_run {
        return Ok(());
    }

    let examples = samples.iter().map(|s| TrainingExample::from_sample(s, &vocab)).collect::<Result<Vec<_>>>()?;
    let model = Model::init(model_config.clone())?;
    let mut log = String::new();
    let (params, _) = train::train_with(model.params, &examples, &train_config, |rec, params, due| {
        let line = rec.log_line();
        let _ = writeln!(stderr, "{line}");
        log.push_str(&line);
        log.push('\n');
        if due {
            let ck = Checkpoint::new(Model::from_parts(model_config.clone(), params.clone())?, vocab.clone())?;
            ck.save(&sibling(&args.out, &format!(".epoch{}", rec.epoch)))?;
        }
        Ok(())
    })?;
    write_file(&log_path, &log)?;
    Checkpoint::new(Model::from_parts(model_config, params)?, vocab.clone())?.save(&args.out)?;
    vocab.save(&vocab_path)
}

pub fn cmd_translate(args: &TranslateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let threads = resolve_threads(args.threads)?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let n = ck.model.config.n_steps;
    let mut manifest = RunManifest::new("translate", threads, serde_json::json!({ "checkpoint": args.checkpoint.display().to_string() }));
    manifest.digest(&args.checkpoint)?;

    let mut ids = Vec::with_capacity(args.features.len());
    let mut inputs = Vec::with_capacity(args.features.len());
    for path in &args.features {
        let file = FeatureFile::load(path)?;
        if file.feature_dim != ck.model.config.feature_dim {
            return Err(V2cError::Config(format!(
                "{}: feature dimension mismatch: expected {}, found {}",
                path.display(),
                ck.model.config.feature_dim,
                file.feature_dim
            )));
        }
        ids.push(video_id_of(path)?);
        inputs.push(with_path(path, file.prepare(n))?.rows);
        manifest.digest(path)?;
    }
    let outputs = translate_all(&ck.model, &ck.vocab, &inputs, threads)?;
    let mut text = String::new();
    for (id, tokens) in ids.iter().zip(&outputs) {
        text.push_str(&format!("{id}\t{}\n", tokens.join(" ")));
    }
    stdout.write_all(text.as_bytes()).map_err(|e| V2cError::io("<stdout>", e))?;
    emit_manifest(&manifest, args.manifest.as_deref(), stderr)
}

pub fn cmd_eval(args: &EvalArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let threads = resolve_threads(args.threads)?;
    let annotations = AnnotationSet::load(&args.annotations)?;
    if annotations.is_empty() {
        return Err(V2cError::Usage(format!("{}: evaluation set is empty", args.annotations.display())));
    }
    let mut manifest = RunManifest::new(
        "eval",
        threads,
        serde_json::json!({
            "oracle": args.oracle,
            "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
            "features": args.features.as_ref().map(|p| p.display().to_string()),
            "annotations": args.annotations.display().to_string(),
        }),
    );
    manifest.digest(&args.annotations)?;

    let candidates: Vec<Vec<String>> = if args.oracle {
        annotations.commands()
    } else {
        let (Some(ck_path), Some(dir)) = (&args.checkpoint, &args.features) else {
            return Err(V2cError::Usage("--checkpoint and --features are required without --oracle".into()));
        };
        let ck = Checkpoint::load(ck_path)?;
        manifest.digest(ck_path)?;
        let cfg = &ck.model.config;
        let samples = data::load_samples(dir, &annotations, cfg.n_steps, Some(cfg.feature_dim))?;
        for rec in &annotations.records {
            manifest.digest(&data::feature_path(dir, &rec.video_id))?;
        }
        let inputs: Vec<Vec<Vec<f64>>> = samples.into_iter().map(|s| s.features).collect();
        translate_all(&ck.model, &ck.vocab, &inputs, threads)?
    };

    if let Some(path) = &args.candidates {
        let text: String = annotations.records.iter().zip(&candidates).map(|(r, c)| format!("{}\t{}\n", r.video_id, c.join(" "))).collect();
        write_file(path, text)?;
        manifest.outputs.push(path.display().to_string());
    }

    let items = annotations
        .records
        .iter()
        .zip(candidates)
        .map(|(r, c)| CorpusItem { video_id: r.video_id.clone(), candidate: c, references: vec![r.command.clone()] })
        .collect();
    let report = metrics::evaluate(&Corpus::new(items)?);
    write!(stdout, "{report}").map_err(|e| V2cError::io("<stdout>", e))?;
    emit_manifest(&manifest, args.manifest.as_deref(), stderr)
}

/// One output line for one `map` input line.
pub fn map_line(line: &str, vocab: &RobotVocabulary) -> String {
    let (id, text) = match line.split_once('\t') {
        Some((id, text)) => (Some(id.trim()), text),
        None => (None, line),
    };
    let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let mapped = mapper::map_command(&tokens, vocab);
    let body = if mapped.accepted {
        format!("accepted\t{}", mapped.resolved_text())
    } else {
        format!("rejected\t{}", mapped.reason.unwrap_or_default())
    };
    match id {
        Some(id) => format!("{id}\t{body}"),
        None => body,
    }
}

pub fn cmd_map(args: &MapArgs, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let vocab = RobotVocabulary::load(&args.robot_vocab, args.threshold)?;
    let mut manifest = RunManifest::new(
        "map",
        1,
        serde_json::json!({ "robot_vocab": args.robot_vocab.display().to_string(), "threshold": args.threshold }),
    );
    manifest.digest(&args.robot_vocab)?;
    let text = match &args.input {
        Some(path) => {
            manifest.digest(path)?;
            std::fs::read_to_string(path).map_err(|e| V2cError::io(path, e))?
        }
        None => {
            let mut s = String::new();
            stdin.read_to_string(&mut s).map_err(|e| V2cError::io("<stdin>", e))?;
            s
        }
    };
    let mut out = String::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push_str(&map_line(line, &vocab));
        out.push('\n');
    }
    stdout.write_all(out.as_bytes()).map_err(|e| V2cError::io("<stdout>", e))?;
    emit_manifest(&manifest, args.manifest.as_deref(), stderr)
}

pub fn cmd_split(args: &SplitArgs, stderr: &mut dyn Write) -> Result<()> {
    let set = AnnotationSet::load(&args.annotations)?;
    let mode = if args.by_video { SplitMode::ByVideo } else { SplitMode::ByClip };
    let (train_set, test_set) = data::split(&set, args.fraction, args.seed, mode)?;
    write_file(&args.train_out, train_set.to_text())?;
    write_file(&args.test_out, test_set.to_text())?;
    let mut manifest =
        RunManifest::new("split", 1, serde_json::json!({ "fraction": args.fraction, "seed": args.seed, "by_video": args.by_video }));
    manifest.digest(&args.annotations)?;
    manifest.outputs = vec![args.train_out.display().to_string(), args.test_out.display().to_string()];
    emit_manifest(&manifest, args.manifest.as_deref(), stderr)
}

pub fn execute(cli: &Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, stderr),
        Command::Translate(a) => cmd_translate(a, stdout, stderr),
        Command::Eval(a) => cmd_eval(a, stdout, stderr),
        Command::Map(a) => cmd_map(a, stdin, stdout, stderr),
        Command::Split(a) => cmd_split(a, stderr),
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    match execute(&cli, stdin, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "v2c: {e}");
            e.exit_code()
        }
    }
}
