//! End-to-end evaluation on a manifest of exponential-map sequences: train
//! on the train split, then score the model and the zero-velocity baseline
//! on the test split, per action.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{self, EvalSet, NpssOptions, SliceError};
use crate::model::{draw_eps, Vtln, VtlnConfig};
use crate::motion::{
    read_sequence_csv, write_sequence_file, DatasetManifest, ManifestEntry, NormStats, PoseSequence, Split,
};
use crate::training::{train, Checkpoint, LogRow, TrainConfig, TrainingData};

pub const STANDARD_SLICES_MS: [f64; 6] = [80.0, 160.0, 320.0, 400.0, 560.0, 1000.0];
pub const STANDARD_WINDOWS_S: [(f64, f64); 3] = [(0.0, 1.0), (1.0, 2.0), (2.0, 4.0)];

#[derive(Debug, Clone)]
pub struct ProtocolOptions {
    pub train: TrainConfig,
    pub slices_ms: Vec<f64>,
    pub windows_s: Vec<(f64, f64)>,
    /// Seed/future windows cut from each test sequence, evenly spaced.
    pub windows_per_sequence: usize,
    pub trials: usize,
    pub seed: u64,
}

impl ProtocolOptions {
    /// Long-term preset with the given hidden size; model widths are filled
    /// in from the data.
    pub fn long_term(hidden: usize, iterations: usize) -> Self {
        let mut train = TrainConfig::long_term(VtlnConfig::new(hidden, 1, 1));
        train.iterations = iterations;
        Self {
            train,
            slices_ms: STANDARD_SLICES_MS.to_vec(),
            windows_s: STANDARD_WINDOWS_S.to_vec(),
            windows_per_sequence: 4,
            trials: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowScore {
    pub start_s: f64,
    pub end_s: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScores {
    /// Slice errors averaged over trials.
    pub slices: Vec<SliceError>,
    /// Standard deviation over trials at each slice.
    pub slice_std: Vec<f64>,
    pub npss: Vec<WindowScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionScores {
    pub action: String,
    pub clips: usize,
    pub model: MethodScores,
    pub zero_velocity: MethodScores,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolReport {
    pub actions: Vec<ActionScores>,
    #[serde(skip)]
    pub checkpoint: Checkpoint,
    #[serde(skip)]
    pub log: Vec<LogRow>,
}

/// Cuts `count` evenly spaced `(seed, future)` windows out of `frames`.
pub fn cut_windows(frames: &Array2<f64>, seed_len: usize, horizon: usize, count: usize) -> Vec<(usize, usize)> {
    let need = seed_len + horizon;
    if frames.nrows() < need || count == 0 {
        return Vec::new();
    }
    let span = frames.nrows() - need;
    let mut starts: Vec<usize> = (0..count)
        .map(|i| if count == 1 { 0 } else { i * span / (count - 1) })
        .collect();
    starts.dedup();
    starts.into_iter().map(|s| (s, s + seed_len)).collect()
}

fn score(
    per_trial: &[Vec<(Array2<f64>, Array2<f64>)>],
    action: &str,
    fps: f64,
    opts: &ProtocolOptions,
) -> Result<MethodScores> {
    let mut slice_runs = Vec::new();
    let mut npss_runs = Vec::new();
    for pairs in per_trial {
        let set = EvalSet::new(action, pairs.clone(), fps)?;
        slice_runs.push(metrics::euler_mse_at_slices(&set, &opts.slices_ms, false)?);
        npss_runs.push(metrics::npss_windowed(&set, &opts.windows_s, NpssOptions::default())?);
    }
    let mut slices = Vec::new();
    let mut slice_std = Vec::new();
    for i in 0..opts.slices_ms.len() {
        let v: Vec<f64> = slice_runs.iter().map(|r| r[i].mean_distance).collect();
        let (m, sd) = metrics::mean_std(&v);
        slices.push(SliceError {
            mean_distance: m,
            ..slice_runs[0][i]
        });
        slice_std.push(sd);
    }
    let npss = opts
        .windows_s
        .iter()
        .enumerate()
        .map(|(i, &(start_s, end_s))| {
            let v: Vec<f64> = npss_runs.iter().map(|r| r[i].npss).collect();
            let (mean, std) = metrics::mean_std(&v);
            WindowScore { start_s, end_s, mean, std }
        })
        .collect();
    Ok(MethodScores { slices, slice_std, npss })
}

/// Scores `model` and the zero-velocity baseline on `test`, grouped by
/// action. Predictions are compared in data units.
pub fn evaluate(
    model: &Vtln,
    actions: &[String],
    norm: &NormStats,
    test: &[PoseSequence],
    fps: f64,
    opts: &ProtocolOptions,
) -> Result<Vec<ActionScores>> {
    let (seed_len, horizon) = (model.config.seed_frames, model.config.horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    for (a, name) in actions.iter().enumerate() {
        let mut model_trials: Vec<Vec<(Array2<f64>, Array2<f64>)>> = vec![Vec::new(); opts.trials];
        let mut baseline = Vec::new();
        for seq in test.iter().filter(|s| &s.action == name) {
            for (start, split) in cut_windows(seq.frames(), seed_len, horizon, opts.windows_per_sequence) {
                let seed = seq.frames().slice(s![start..split, ..]);
                let truth = seq.frames().slice(s![split..split + horizon, ..]).to_owned();
                let eps = draw_eps(opts.trials, model.config.hidden_top, &mut rng);
                let preds = model.synthesize(norm.standardize(&seed.to_owned())?.view(), a, horizon, eps.view())?;
                for (k, p) in preds.iter().enumerate() {
                    model_trials[k].push((truth.clone(), norm.destandardize(p)?));
                }
                baseline.push((truth, metrics::zero_velocity_predict(seed, horizon)?));
            }
        }
        if baseline.is_empty() {
            continue;
        }
        out.push(ActionScores {
            action: name.clone(),
            clips: baseline.len(),
            model: score(&model_trials, name, fps, opts)?,
            zero_velocity: score(&[baseline], name, fps, opts)?,
        });
    }
    if out.is_empty() {
        return Err(Error::DataTooShort {
            needed: seed_len + horizon,
            available: test.iter().map(|s| s.len()).max().unwrap_or(0),
        });
    }
    Ok(out)
}

/// Trains on the train split of `manifest` and evaluates on its test split.
pub fn run_protocol<F: FnMut(&LogRow)>(
    manifest: &DatasetManifest,
    opts: &ProtocolOptions,
    on_step: F,
) -> Result<ProtocolReport> {
    let train_seqs = manifest.load_split(Split::Train)?;
    let test = manifest.load_split(Split::Test)?;
    if train_seqs.is_empty() || test.is_empty() {
        return Err(Error::Empty);
    }
    let data = TrainingData::from_sequences(&train_seqs)?;
    let mut config = opts.train.clone();
    config.model.joint_dim = data.dim();
    config.model.actions = data.actions.len();
    let (checkpoint, log) = train(config, data, on_step)?;
    let model = checkpoint.model();
    let actions = evaluate(
        &model,
        &checkpoint.actions,
        &checkpoint.norm,
        &test,
        manifest.fps,
        opts,
    )?;
    Ok(ProtocolReport {
        actions,
        checkpoint,
        log,
    })
}

/// The four action classes of the standard long-term comparison.
pub const LONG_TERM_ACTIONS: [&str; 4] = ["walking", "eating", "smoking", "discussion"];

/// How [`import_expmap_tree`] reads a directory of per-subject recordings
/// laid out as `<root>/<subject>/<action>_<take>.txt` (comma separated, one
/// frame per line).
#[derive(Debug, Clone)]
pub struct ImportOptions {
    /// Only these actions are imported.
    pub actions: Vec<String>,
    pub test_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
    /// Frame rate of the source files.
    pub source_fps: f64,
    /// Keep every n-th frame.
    pub downsample: usize,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self {
            actions: LONG_TERM_ACTIONS.iter().map(|s| s.to_string()).collect(),
            test_subjects: vec!["S5".into()],
            val_subjects: vec!["S11".into()],
            source_fps: 50.0,
            downsample: 2,
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Converts a recording tree into downsampled CSVs plus `manifest.json`
/// under `dst`, and returns the manifest.
pub fn import_expmap_tree(src: &Path, dst: &Path, opts: &ImportOptions) -> Result<DatasetManifest> {
    if opts.downsample == 0 {
        return Err(Error::BadConfig("downsample must be at least 1".into()));
    }
    std::fs::create_dir_all(dst).map_err(|e| Error::io(dst, e))?;
    let mut entries = Vec::new();
    for subject_dir in sorted_entries(src)?.into_iter().filter(|p| p.is_dir()) {
        let subject = subject_dir.file_name().unwrap().to_string_lossy().into_owned();
        let split = if opts.test_subjects.contains(&subject) {
            Split::Test
        } else if opts.val_subjects.contains(&subject) {
            Split::Val
        } else {
            Split::Train
        };
        for file in sorted_entries(&subject_dir)?.into_iter().filter(|p| p.is_file()) {
            let stem = file.file_stem().unwrap().to_string_lossy().into_owned();
            let Some((action, _take)) = stem.rsplit_once('_') else {
                continue;
            };
            if !opts.actions.iter().any(|a| a == action) {
                continue;
            }
            let seq = read_sequence_csv(&file, opts.source_fps)?;
            let kept = seq
                .frames()
                .select(Axis(0), &(0..seq.len()).step_by(opts.downsample).collect::<Vec<_>>());
            let name = PathBuf::from(format!("{subject}_{stem}.csv"));
            write_sequence_file(dst.join(&name), &kept)?;
            entries.push(ManifestEntry {
                file: name,
                subject: subject.clone(),
                action: action.to_string(),
                split,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::Empty);
    }
    let manifest = DatasetManifest::new(opts.source_fps / opts.downsample as f64, entries);
    manifest.validate()?;
    manifest.save(dst.join("manifest.json"))?;
    DatasetManifest::load(dst.join("manifest.json"))
}
