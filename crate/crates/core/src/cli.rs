//! The `vtln` command line: dataset generation, training, synthesis,
//! evaluation and gradient checking.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, EvalSet, NpssOptions, Weighting};
use crate::model::{draw_eps, VtlnConfig};
use crate::motion::{read_sequence_csv, write_sequence_file, DatasetManifest, NormStats, Split};
use crate::synth::{make_dataset, DatasetTemplate};
use crate::training::{
    check_gradients, format_log, load_checkpoint, save_checkpoint, GradCheckSetup, LambdaSchedule, LambdaStep,
    TrainConfig, Trainer, TrainingData,
};

/// Largest hidden size `gradcheck` accepts.
pub const GRADCHECK_MAX_HIDDEN: usize = 8;

#[derive(Debug, Parser)]
#[command(name = "vtln", version, about = "Variational recurrent motion prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-action dataset with a manifest.
    Synthgen(SynthgenArgs),
    /// Train a model on the train split of a manifest.
    Train(TrainArgs),
    /// Sample predictions from a checkpoint given seed frames.
    Synthesize(SynthesizeArgs),
    /// Score predictions against ground truth.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Compare analytic gradients of the training loss with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthgenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub actions: usize,
    #[arg(long, default_value_t = 8)]
    pub seqs_per_action: usize,
    #[arg(long, default_value_t = 256)]
    pub frames: usize,
    #[arg(long, default_value_t = 54)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON dataset template; flags above override its sizes.
    #[arg(long)]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    ShortTerm,
    LongTerm,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint, log and resolved config.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run config. Mutually exclusive with `--preset`.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Hidden size of both recurrent networks (preset runs only).
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `iteration:value` pairs, e.g. `0:0,100:0.5,150:1.0`.
    #[arg(long)]
    pub lambda_schedule: Option<String>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Print a progress line every N iterations (0 = never).
    #[arg(long, default_value_t = 0)]
    pub progress: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EpsMode {
    /// Standard normal draws, one per trial.
    Normal,
    /// ε = 0: the mean trajectory.
    Zero,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV of seed frames in data units; the last `seed_frames` rows are used.
    #[arg(long)]
    pub seed_frames: PathBuf,
    /// Action name; may be omitted for single-action checkpoints.
    #[arg(long)]
    pub action: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = EpsMode::Normal)]
    pub eps: EpsMode,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    /// Output directory; trial `k` is written to `trial_kk/<seed file name>`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Mean Euler-angle distance at fixed time slices.
    Mse(MseArgs),
    /// Normalized power spectrum similarity over time windows.
    Npss(NpssArgs),
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Prediction directory: CSV files, or `trial_*` subdirectories of them.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth CSV files, paired with predictions by file name.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    /// Label written into the report.
    #[arg(long, default_value = "all")]
    pub action: String,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MseArgs {
    #[command(flatten)]
    pub pairs: PairArgs,
    /// Milliseconds after the seed.
    #[arg(long, value_delimiter = ',', default_value = "80,160,320,400,560,1000")]
    pub slices: Vec<f64>,
    /// Wrap angle differences into (−π, π].
    #[arg(long)]
    pub wrap: bool,
}

#[derive(Debug, Args)]
pub struct NpssArgs {
    #[command(flatten)]
    pub pairs: PairArgs,
    /// Windows in seconds, `start-end`.
    #[arg(long, value_delimiter = ',', default_value = "0-1,1-2,2-4")]
    pub windows: Vec<String>,
    /// Weight channels by their normalized rather than raw truth power.
    #[arg(long)]
    pub normalized_weights: bool,
    /// Keep the DC bin.
    #[arg(long)]
    pub keep_dc: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// JSON model config; its hidden sizes must not exceed 8.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 6)]
    pub hidden: usize,
    #[arg(long, default_value_t = 6)]
    pub joint_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub actions: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Debug: perturb the analytic gradient of this tensor.
    #[arg(long, value_name = "TENSOR")]
    pub corrupt_grad: Option<String>,
}

/// Everything that determines a training run, as written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }
}

/// Output of one command: text for stdout and the exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Outcome { stdout, code: 0 }
    }
}

/// Parses `args` (including the program name) and runs the command. Usage
/// errors come back as exit code 2 with the message in `stdout`'s place on
/// stderr.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.stdout.as_bytes());
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => 2,
        _ => 1,
    }
}

pub fn execute(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Synthgen(a) => synthgen(a),
        Command::Train(a) => train(a),
        Command::Synthesize(a) => synthesize(a),
        Command::Eval(EvalCommand::Mse(a)) => eval_mse(a),
        Command::Eval(EvalCommand::Npss(a)) => eval_npss(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

// ------------------------------------------------------------- synthgen

fn synthgen(a: &SynthgenArgs) -> Result<Outcome> {
    let mut template = match &a.template {
        Some(p) => read_json::<DatasetTemplate>(p)?,
        None => DatasetTemplate::default(),
    };
    template.frames = a.frames;
    template.channels = a.channels;
    if a.actions == 0 || a.seqs_per_action == 0 || a.frames < 2 || a.channels == 0 {
        return Err(Error::Usage(
            "--actions, --seqs-per-action and --channels must be positive and --frames at least 2".into(),
        ));
    }
    let manifest = make_dataset(&a.out, a.actions, a.seqs_per_action, &template, a.seed)?;
    let echo = serde_json::json!({
        "actions": a.actions,
        "seqs_per_action": a.seqs_per_action,
        "seed": a.seed,
        "template": template,
    });
    write_file(&a.out.join("synthgen_config.json"), &serde_json::to_string_pretty(&echo)?)?;
    Ok(Outcome::ok(format!(
        "wrote {} sequences ({} actions x {}, {} frames x {} channels) to {}\n",
        manifest.entries.len(),
        a.actions,
        a.seqs_per_action,
        a.frames,
        a.channels,
        a.out.display()
    )))
}

// ---------------------------------------------------------------- train

/// Parses `0:0,100:0.5,150:1.0`.
pub fn parse_lambda_schedule(text: &str) -> Result<LambdaSchedule> {
    let steps = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|part| {
            let (it, v) = part
                .split_once(':')
                .ok_or_else(|| Error::Usage(format!("bad lambda step '{part}', expected iteration:value")))?;
            let iteration = it
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad iteration in '{part}'")))?;
            let value = v
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad value in '{part}'")))?;
            Ok(LambdaStep { iteration, value })
        })
        .collect::<Result<Vec<_>>>()?;
    let schedule = LambdaSchedule { steps };
    schedule.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(schedule)
}

/// Builds the resolved config of a `train` invocation.
pub fn resolve_train_config(a: &TrainArgs, joint_dim: usize, actions: usize) -> Result<RunConfig> {
    let mut run = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let model = VtlnConfig::new(a.hidden, joint_dim, actions);
            let train = match a.preset.unwrap_or(Preset::LongTerm) {
                Preset::ShortTerm => TrainConfig::short_term(model),
                Preset::LongTerm => TrainConfig::long_term(model),
            };
            RunConfig {
                data: None,
                out: None,
                train,
            }
        }
    };
    run.data = Some(a.data.clone());
    run.out = Some(a.out.clone());
    let t = &mut run.train;
    if let Some(n) = a.iters {
        t.iterations = n;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(s) = &a.lambda_schedule {
        t.lambda = Some(parse_lambda_schedule(s)?);
    }
    if let Some(d) = a.dropout {
        t.model.dropout = d;
    }
    if let Some(s) = a.seed {
        t.seed = s;
    }
    if let Some(n) = a.threads {
        t.threads = n;
    }
    t.validate().map_err(|e| Error::Usage(e.to_string()))?;
    if t.model.joint_dim != joint_dim || t.model.actions != actions {
        return Err(Error::dims(format!(
            "config expects {} channels and {} actions, data has {joint_dim} and {actions}",
            t.model.joint_dim, t.model.actions
        )));
    }
    Ok(run)
}

fn train(a: &TrainArgs) -> Result<Outcome> {
    let manifest = DatasetManifest::load(&a.data)?;
    let seqs = manifest.load_split(Split::Train)?;
    if seqs.is_empty() {
        return Err(Error::Empty);
    }
    let data = TrainingData::from_sequences(&seqs)?;
    let run = resolve_train_config(a, data.dim(), data.actions.len())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_file(&a.out.join("run_config.json"), &serde_json::to_string_pretty(&run)?)?;

    let mut trainer = Trainer::new(run.train.clone(), data)?;
    let mut log = Vec::with_capacity(run.train.iterations);
    let mut stderr = std::io::stderr();
    while !trainer.is_done() {
        let row = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                // keep what was logged so far for diagnosis
                write_file(&a.out.join("train_log.csv"), &format_log(&log))?;
                return Err(e);
            }
        };
        if a.progress > 0 && (row.iteration + 1) % a.progress == 0 {
            let _ = writeln!(
                stderr,
                "iter {} open {:.6} total {:.6}",
                row.iteration + 1,
                row.open_loss,
                row.total_loss
            );
        }
        log.push(row);
    }
    write_file(&a.out.join("train_log.csv"), &format_log(&log))?;
    save_checkpoint(&trainer.checkpoint(), &a.out.join("checkpoint.json"))?;
    let last = log.last().map_or(f64::NAN, |r| r.total_loss);
    Ok(Outcome::ok(format!(
        "trained {} iterations, final loss {last}\n",
        trainer.iteration()
    )))
}

// ----------------------------------------------------------- synthesize

fn synthesize(a: &SynthesizeArgs) -> Result<Outcome> {
    if a.trials == 0 || a.horizon == 0 {
        return Err(Error::Usage("--trials and --horizon must be positive".into()));
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let action = match &a.action {
        Some(name) => ckpt
            .actions
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::BadConfig(format!("checkpoint has no action '{name}' ({:?})", ckpt.actions)))?,
        None if ckpt.actions.len() == 1 => 0,
        None => {
            return Err(Error::Usage(format!(
                "--action is required; checkpoint actions are {:?}",
                ckpt.actions
            )))
        }
    };
    let seed = read_sequence_csv(&a.seed_frames, a.fps)?;
    let norm: &NormStats = &ckpt.norm;
    let standardized = norm.standardize(seed.frames())?;
    let model = ckpt.model();
    let eps = match a.eps {
        EpsMode::Zero => Array2::zeros((a.trials, model.config.hidden_top)),
        EpsMode::Normal => draw_eps(a.trials, model.config.hidden_top, &mut ChaCha8Rng::seed_from_u64(a.seed)),
    };
    let preds = model.synthesize(standardized.view(), action, a.horizon, eps.view())?;
    let name = a
        .seed_frames
        .file_name()
        .ok_or_else(|| Error::Usage("seed file has no file name".into()))?;
    for (k, p) in preds.iter().enumerate() {
        let path = a.out.join(format!("trial_{k:02}")).join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_sequence_file(&path, &norm.destandardize(p)?)?;
    }
    let echo = serde_json::json!({
        "checkpoint": a.checkpoint,
        "seed_frames": a.seed_frames,
        "action": ckpt.actions[action],
        "horizon": a.horizon,
        "trials": a.trials,
        "seed": a.seed,
        "eps": format!("{:?}", a.eps).to_lowercase(),
        "fps": a.fps,
        "model": model.config,
    });
    write_file(&a.out.join("synthesize_config.json"), &serde_json::to_string_pretty(&echo)?)?;
    Ok(Outcome::ok(format!(
        "wrote {} trials of {} frames to {}\n",
        a.trials,
        a.horizon,
        a.out.display()
    )))
}

// ----------------------------------------------------------------- eval

fn csv_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, path);
        }
    }
    Ok(out)
}

/// Trial directories under `pred`: its `trial_*` subdirectories, or `pred`
/// itself when there are none.
fn trial_dirs(pred: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(pred)
        .map_err(|e| Error::io(pred, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("trial_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        dirs.push(pred.to_path_buf());
    }
    Ok(dirs)
}

/// One evaluation set per trial, pairing files by identical name. Any file
/// present on one side only is an error.
pub fn load_trials(pred: &Path, truth: &Path, action: &str, fps: f64) -> Result<Vec<EvalSet>> {
    let truth_files = csv_files(truth)?;
    if truth_files.is_empty() {
        return Err(Error::Empty);
    }
    let mut truths = Vec::with_capacity(truth_files.len());
    for path in truth_files.values() {
        truths.push(read_sequence_csv(path, fps)?.into_frames());
    }
    trial_dirs(pred)?
        .iter()
        .map(|dir| {
            let pred_files = csv_files(dir)?;
            if let Some(extra) = pred_files.keys().find(|k| !truth_files.contains_key(*k)) {
                return Err(Error::BadConfig(format!("{} has no ground truth", dir.join(extra).display())));
            }
            let mut pairs = Vec::with_capacity(truths.len());
            for (name, truth) in truth_files.keys().zip(&truths) {
                let p = pred_files
                    .get(name)
                    .ok_or_else(|| Error::BadConfig(format!("no prediction for {name} in {}", dir.display())))?;
                let pred = read_sequence_csv(p, fps)?.into_frames();
                if pred.dim() != truth.dim() {
                    return Err(Error::dims(format!(
                        "{name}: prediction {:?} vs truth {:?}",
                        pred.dim(),
                        truth.dim()
                    )));
                }
                pairs.push((truth.clone(), pred));
            }
            EvalSet::new(action, pairs, fps)
        })
        .collect()
}

fn emit(out: &Option<PathBuf>, text: String) -> Result<Outcome> {
    match out {
        Some(p) => {
            write_file(p, &text)?;
            Ok(Outcome::ok(format!("wrote {}\n", p.display())))
        }
        None => Ok(Outcome::ok(text)),
    }
}

/// CSV rows `ms,frame,mean,std,trials`, with `#` comment lines documenting
/// the inputs and the slice-to-frame conversion.
pub fn mse_report(trials: &[EvalSet], slices_ms: &[f64], wrap: bool) -> Result<String> {
    let per_trial = trials
        .iter()
        .map(|set| metrics::euler_mse_at_slices(set, slices_ms, wrap))
        .collect::<Result<Vec<_>>>()?;
    let fps = trials[0].frame_rate_hz;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# action={} fps={fps} trials={} sequences={} wrap={wrap}",
        trials[0].action,
        trials.len(),
        trials[0].pairs.len()
    );
    let _ = writeln!(
        out,
        "# frame = ms * fps / 1000, counted from 1 = first predicted frame (row frame-1)"
    );
    out.push_str("ms,frame,mean,std,trials\n");
    for (i, &ms) in slices_ms.iter().enumerate() {
        let values: Vec<f64> = per_trial.iter().map(|r| r[i].mean_distance).collect();
        let (mean, std) = metrics::mean_std(&values);
        let _ = writeln!(out, "{ms},{},{mean},{std},{}", per_trial[0][i].frame, values.len());
    }
    Ok(out)
}

/// Parses `0-1,1-2` style second ranges.
pub fn parse_windows(items: &[String]) -> Result<Vec<(f64, f64)>> {
    items
        .iter()
        .map(|w| {
            let (a, b) = w
                .split_once('-')
                .ok_or_else(|| Error::Usage(format!("bad window '{w}', expected start-end")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Usage(format!("bad window '{w}'")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpssWindowSummary {
    pub action: String,
    pub start_s: f64,
    pub end_s: f64,
    pub start_frame: usize,
    pub end_frame: usize,
    pub mean: f64,
    pub std: f64,
    /// NPSS of each trial.
    pub trials: Vec<f64>,
}

pub fn npss_report(trials: &[EvalSet], windows_s: &[(f64, f64)], opts: NpssOptions) -> Result<Vec<NpssWindowSummary>> {
    let per_trial = trials
        .iter()
        .map(|set| metrics::npss_windowed(set, windows_s, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(windows_s
        .iter()
        .enumerate()
        .map(|(i, &(start_s, end_s))| {
            let values: Vec<f64> = per_trial.iter().map(|r| r[i].npss).collect();
            let (mean, std) = metrics::mean_std(&values);
            NpssWindowSummary {
                action: trials[0].action.clone(),
                start_s,
                end_s,
                start_frame: per_trial[0][i].window.start_frame,
                end_frame: per_trial[0][i].window.end_frame,
                mean,
                std,
                trials: values,
            }
        })
        .collect())
}

fn eval_mse(a: &MseArgs) -> Result<Outcome> {
    let p = &a.pairs;
    if a.slices.is_empty() {
        return Err(Error::Usage("--slices is empty".into()));
    }
    for &ms in &a.slices {
        metrics::ms_to_frame(ms, p.fps).map_err(|e| Error::Usage(e.to_string()))?;
    }
    let trials = load_trials(&p.pred, &p.truth, &p.action, p.fps)?;
    emit(&p.out, mse_report(&trials, &a.slices, a.wrap)?)
}

fn eval_npss(a: &NpssArgs) -> Result<Outcome> {
    let p = &a.pairs;
    let windows = parse_windows(&a.windows)?;
    let trials = load_trials(&p.pred, &p.truth, &p.action, p.fps)?;
    let opts = NpssOptions {
        remove_dc: !a.keep_dc,
        weighting: if a.normalized_weights {
            Weighting::NormalizedPower
        } else {
            Weighting::RawPower
        },
    };
    let report = serde_json::json!({
        "pred": p.pred,
        "truth": p.truth,
        "fps": p.fps,
        "options": opts,
        "windows": npss_report(&trials, &windows, opts)?,
    });
    emit(&p.out, serde_json::to_string_pretty(&report)? + "\n")
}

// ------------------------------------------------------------ gradcheck

fn gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let model = match &a.config {
        Some(p) => read_json::<VtlnConfig>(p)?,
        None => {
            let mut m = VtlnConfig::new(a.hidden, a.joint_dim, a.actions);
            m.seed_frames = 6;
            m.horizon = 6;
            m
        }
    };
    if model.hidden_top > GRADCHECK_MAX_HIDDEN || model.hidden_body > GRADCHECK_MAX_HIDDEN {
        return Err(Error::Usage(format!(
            "gradcheck needs hidden sizes <= {GRADCHECK_MAX_HIDDEN}, got {} and {}",
            model.hidden_top, model.hidden_body
        )));
    }
    if !(a.tolerance > 0.0) {
        return Err(Error::Usage("--tolerance must be positive".into()));
    }
    let mut setup = GradCheckSetup::new(model);
    setup.lambda = a.lambda;
    setup.seed = a.seed;
    setup.corrupt = a.corrupt_grad.clone();
    let report = check_gradients(&setup)?;
    let mut out = String::from("tensor,max_rel_err,worst_index,analytic,numeric\n");
    for t in &report.tensors {
        let _ = writeln!(
            out,
            "{},{:e},{},{},{}",
            t.name, t.max_rel_err, t.worst_index, t.analytic, t.numeric
        );
    }
    let pass = report.passes(a.tolerance);
    let _ = writeln!(
        out,
        "{}: max relative error {:e} in {} (tolerance {:e})",
        if pass { "PASS" } else { "FAIL" },
        report.max_rel_err,
        report.worst_param,
        a.tolerance
    );
    Ok(Outcome {
        stdout: out,
        code: if pass { 0 } else { 1 },
    })
}
