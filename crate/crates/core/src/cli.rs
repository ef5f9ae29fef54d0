//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! Diagnostics go to stderr; data products are written as files under `--out`
//! (or to stdout for `eval`/`metrics`/`clean --report` when asked).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cleanse::{clean_pairs, CleanConfig};
use crate::error::{Error, Result};
use crate::evaluate::{self, cluster, EmbeddingMode};
use crate::features::DOWNSAMPLE_RATE;
use crate::ingest::{self, Dataset, RiderProfile, Session};
use crate::metrics;
use crate::synth::{self, SynthConfig, PROFILES_FILE};
use crate::train::{self, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "cyclehr", version, about = "Heart-rate response modeling for cycling sessions", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus of riders and sessions.
    Synth(SynthArgs),
    /// Run the cleaning rules and write the kept sessions plus a report.
    Clean(CleanArgs),
    /// Clean, split by rider, train, and write a checkpoint and report.
    Train(TrainArgs),
    /// Per-session RMSE with min/mean/max and the persistence baseline.
    Eval(EvalArgs),
    /// Per-session prediction traces as CSV.
    Trace(TraceArgs),
    /// Session embeddings as CSV.
    Embed(EmbedArgs),
    /// Normalized power, intensity factor and TSS per session.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory of `<rider_id>__<session_id>.csv` files.
    #[arg(long)]
    sessions: PathBuf,
    /// Profiles JSON; defaults to `<sessions>/profiles.json`.
    #[arg(long)]
    profiles: Option<PathBuf>,
}

impl DataArgs {
    fn profiles_path(&self) -> PathBuf {
        self.profiles.clone().unwrap_or_else(|| self.sessions.join(PROFILES_FILE))
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 15)]
    riders: usize,
    #[arg(long = "sessions-per-rider", default_value_t = 20)]
    sessions_per_rider: usize,
    #[arg(long, default_value_t = 0.5)]
    interval_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1800)]
    min_duration: u32,
    #[arg(long, default_value_t = 3600)]
    max_duration: u32,
    #[arg(long)]
    noise_std: Option<f64>,
}

#[derive(Debug, Args)]
struct CleanArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also print the clean report JSON on stdout.
    #[arg(long)]
    report: bool,
    #[arg(long, default_value_t = crate::cleanse::DEFAULT_SPURIOUS_HR_BPM)]
    spurious_hr: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sessions: Option<PathBuf>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Write `eval_report.json` here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip riders the checkpoint was trained on.
    #[arg(long)]
    validation_only: bool,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to these sessions (repeatable).
    #[arg(long = "session-id")]
    session_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    FinalState,
    MeanPooled,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `embedding_mode` from `--config`.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Pipeline config; only `embedding_mode` is read.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Append a 2-component principal-component projection.
    #[arg(long)]
    pca: bool,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Training run configuration file: every [`TrainConfig`] field plus paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub sessions: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    /// Locked to 0.3; present so configs state it explicitly.
    pub downsample_rate: f64,
    pub embedding_mode: EmbeddingMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            sessions: None,
            profiles: None,
            downsample_rate: DOWNSAMPLE_RATE,
            embedding_mode: EmbeddingMode::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.downsample_rate != DOWNSAMPLE_RATE {
            return Err(Error::Config(format!("downsample_rate is fixed at {DOWNSAMPLE_RATE}")));
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{} is not a directory", path.display())))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{} does not exist", path.display())))
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn load(data: &DataArgs) -> Result<Dataset> {
    let profiles = data.profiles_path();
    require_dir(&data.sessions)?;
    require_file(&profiles)?;
    let dataset = ingest::load_dataset(&data.sessions, &profiles)?;
    log::info!("loaded {} sessions ({} skipped)", dataset.pairs.len(), dataset.skipped.len());
    Ok(dataset)
}

fn load_cleaned(data: &DataArgs, checkpoint: &Checkpoint) -> Result<Vec<(Session, RiderProfile)>> {
    let dataset = load(data)?;
    let (kept, report) = clean_pairs(dataset.pairs, &checkpoint.config.clean());
    for r in &report.rejected {
        log::warn!("session {} rejected: {}", r.session_id, r.reason);
    }
    Ok(kept)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_riders: args.riders,
        sessions_per_rider: args.sessions_per_rider,
        interval_fraction: args.interval_fraction,
        seed: args.seed,
        min_duration_s: args.min_duration,
        max_duration_s: args.max_duration,
        noise_std: args.noise_std,
    };
    let manifest = synth::generate_corpus(&args.out, &cfg)?;
    log::info!("wrote {} sessions for {} riders to {}", manifest.sessions.len(), manifest.riders.len(), args.out.display());
    Ok(())
}

fn cmd_clean(args: CleanArgs) -> Result<()> {
    let dataset = load(&args.data)?;
    let profiles: Vec<RiderProfile> = {
        let mut seen = std::collections::BTreeMap::new();
        for (_, p) in &dataset.pairs {
            seen.entry(p.rider_id.clone()).or_insert_with(|| p.clone());
        }
        seen.into_values().collect()
    };
    let (kept, report) = clean_pairs(dataset.pairs, &CleanConfig { spurious_hr_threshold: args.spurious_hr });
    let sessions_dir = args.out.join("sessions");
    ensure_dir(&sessions_dir)?;
    for (s, _) in &kept {
        write_file(&sessions_dir.join(ingest::session_filename(&s.rider_id, &s.session_id)), s.to_csv())?;
    }
    write_file(&sessions_dir.join(PROFILES_FILE), ingest::profiles_to_json(&profiles))?;
    let json = to_json(&report);
    write_file(&args.out.join("clean_report.json"), &json)?;
    if args.report {
        print!("{json}");
    }
    Ok(())
}

fn read_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    require_file(path)?;
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = read_config(args.config.as_deref())?;
    if let Some(v) = args.sessions {
        cfg.sessions = Some(v);
    }
    if let Some(v) = args.profiles {
        cfg.profiles = Some(v);
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.hidden_dim {
        cfg.train.hidden_dim = v;
    }
    if let Some(v) = args.window {
        cfg.train.window = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.train.learning_rate = v;
    }
    cfg.validate()?;
    let sessions = cfg.sessions.clone().ok_or_else(|| Error::Usage("no session directory (config `sessions` or --sessions)".into()))?;
    let data = DataArgs { sessions, profiles: cfg.profiles.clone() };
    let dataset = load(&data)?;
    ensure_dir(&args.out)?;
    write_file(&args.out.join("config.json"), to_json(&cfg))?;

    let outcome = train::train_pipeline(dataset.pairs, &cfg.train)?;
    save_checkpoint(&outcome.checkpoint, &args.out.join("model.ckpt"))?;
    write_file(&args.out.join("train_report.jsonl"), outcome.report.to_jsonl())?;
    write_file(&args.out.join("timing.jsonl"), outcome.report.timing_jsonl())?;
    write_file(&args.out.join("clean_report.json"), to_json(&outcome.clean_report))?;
    write_file(
        &args.out.join("split.json"),
        to_json(&serde_json::json!({
            "train_riders": outcome.train_riders,
            "validation_riders": outcome.validation_riders,
            "best_epoch": outcome.report.best_epoch,
            "excluded_sessions": outcome.report.excluded_sessions,
        })),
    )?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    require_file(&args.checkpoint)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let mut pairs = load_cleaned(&args.data, &checkpoint)?;
    if args.validation_only {
        pairs.retain(|(s, _)| !checkpoint.training_rider_ids.contains(&s.rider_id));
    }
    let report = evaluate::evaluate_dataset(&checkpoint, &pairs)?;
    let json = to_json(&report);
    match args.out {
        Some(dir) => {
            ensure_dir(&dir)?;
            write_file(&dir.join("eval_report.json"), json)
        }
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn cmd_trace(args: TraceArgs) -> Result<()> {
    require_file(&args.checkpoint)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let pairs = load_cleaned(&args.data, &checkpoint)?;
    ensure_dir(&args.out)?;
    let mut written = 0;
    for (session, profile) in &pairs {
        if !args.session_ids.is_empty() && !args.session_ids.contains(&session.session_id) {
            continue;
        }
        let rows = evaluate::predict_trace(&checkpoint, session, profile)?;
        write_file(&args.out.join(format!("trace_{}.csv", session.session_id)), evaluate::trace_to_csv(&rows))?;
        written += 1;
    }
    if written == 0 {
        return Err(Error::Eval(evaluate::EvalError::EmptyEvaluableSet));
    }
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> Result<()> {
    require_file(&args.checkpoint)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let mode = match args.mode {
        Some(ModeArg::FinalState) => EmbeddingMode::FinalState,
        Some(ModeArg::MeanPooled) => EmbeddingMode::MeanPooled,
        None => read_config(args.config.as_deref())?.embedding_mode,
    };
    let pairs = load_cleaned(&args.data, &checkpoint)?;
    let mut embeddings = Vec::new();
    for (session, profile) in &pairs {
        match evaluate::extract_embedding(&checkpoint, session, profile, mode) {
            Ok(e) => embeddings.push(e),
            Err(evaluate::EvalError::Feature(e)) => log::warn!("skipping {}: {e}", session.session_id),
            Err(e) => return Err(e.into()),
        }
    }
    embeddings.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let projection = args.pca.then(|| cluster::pca_2d(&embeddings.iter().map(|e| e.vector.clone()).collect::<Vec<_>>()));
    ensure_dir(&args.out)?;
    write_file(&args.out.join("embeddings.csv"), evaluate::embeddings_to_csv(&embeddings, projection.as_deref()))
}

fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    let dataset = load(&args.data)?;
    let mut lines = String::new();
    for (session, profile) in &dataset.pairs {
        match metrics::session_metrics(session, profile.ftp) {
            Ok(m) => {
                lines.push_str(&serde_json::to_string(&m).expect("serializable"));
                lines.push('\n');
            }
            Err(e) => log::warn!("no metrics for {}: {e}", session.session_id),
        }
    }
    match args.out {
        Some(dir) => {
            ensure_dir(&dir)?;
            write_file(&dir.join("metrics.jsonl"), lines)
        }
        None => {
            print!("{lines}");
            Ok(())
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Clean(a) => cmd_clean(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Trace(a) => cmd_trace(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Metrics(a) => cmd_metrics(a),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{}", e.render());
                    1
                }
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.class() as i32
        }
    }
}
