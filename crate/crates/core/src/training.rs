//! Loss, schedules, optimizer, checkpoints and the training loop.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
use crate::model::{
    backward_guides, backward_rollout, draw_eps, generate_guide_vectors, one_hot, rollout, Dropout,
    FeedPattern, VtlnConfig, VtlnParams,
};
use crate::motion::{NormStats, PoseSequence};
use crate::params::{ParamTensors, TensorSet};

pub const CHECKPOINT_VERSION: u32 = 1;

// ---------------------------------------------------------------- schedules

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaStep {
    /// First iteration at which `value` applies.
    pub iteration: usize,
    pub value: f64,
}

/// Piecewise-constant weight of the closed-loop term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSchedule {
    pub steps: Vec<LambdaStep>,
}

impl LambdaSchedule {
    /// Six equal steps from 0 to 1, one every sixth of the run.
    pub fn default_for(total_iterations: usize) -> Self {
        Self {
            steps: (0..6)
                .map(|k| LambdaStep {
                    iteration: k * total_iterations / 6,
                    value: k as f64 / 5.0,
                })
                .collect(),
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            steps: vec![LambdaStep { iteration: 0, value }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .steps
            .first()
            .ok_or_else(|| Error::BadSchedule("λ schedule is empty".into()))?;
        if first.iteration != 0 {
            return Err(Error::BadSchedule("λ schedule must start at iteration 0".into()));
        }
        for step in &self.steps {
            if !step.value.is_finite() {
                return Err(Error::BadSchedule(format!("λ value {} is not finite", step.value)));
            }
            if step.value < 0.0 {
                return Err(Error::NegativeLambda(step.value));
            }
        }
        for pair in self.steps.windows(2) {
            if pair[1].iteration < pair[0].iteration {
                return Err(Error::BadSchedule("λ thresholds must be sorted".into()));
            }
            if pair[1].value < pair[0].value {
                return Err(Error::BadSchedule(format!(
                    "λ decreases from {} to {} at iteration {}",
                    pair[0].value, pair[1].value, pair[1].iteration
                )));
            }
        }
        Ok(())
    }

    pub fn at(&self, iteration: usize) -> f64 {
        self.steps
            .iter()
            .take_while(|s| s.iteration <= iteration)
            .last()
            .map_or(0.0, |s| s.value)
    }
}

pub fn lambda_schedule(iteration: usize, schedule: &LambdaSchedule) -> Result<f64> {
    schedule.validate()?;
    Ok(schedule.at(iteration))
}

/// Step decay: `initial · decay^⌊min(iter, cutoff) / interval⌋`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub interval: usize,
    /// Iteration after which the rate stops decaying.
    #[serde(default)]
    pub cutoff: Option<usize>,
}

impl LrSchedule {
    pub fn short_term() -> Self {
        Self {
            initial: 1e-4,
            decay: 0.8,
            interval: 5000,
            cutoff: Some(60_000),
        }
    }

    pub fn long_term() -> Self {
        Self {
            initial: 2e-4,
            decay: 0.6,
            interval: 2000,
            cutoff: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial.is_finite() && self.initial > 0.0) {
            return Err(Error::BadSchedule(format!("learning rate {} must be positive", self.initial)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::BadSchedule(format!("decay {} must be in (0, 1]", self.decay)));
        }
        if self.interval == 0 {
            return Err(Error::BadSchedule("decay interval must be positive".into()));
        }
        Ok(())
    }

    pub fn at(&self, iteration: usize) -> f64 {
        let capped = self.cutoff.map_or(iteration, |c| iteration.min(c));
        self.initial * self.decay.powi((capped / self.interval) as i32)
    }
}

pub fn lr_schedule(iteration: usize, schedule: &LrSchedule) -> Result<f64> {
    schedule.validate()?;
    Ok(schedule.at(iteration))
}

// --------------------------------------------------------------------- loss

/// `weight · mean_b (1/T) Σ_t ‖pred_t − truth_t‖²` and its gradient per step,
/// divided by `rows` instead of the local batch size so chunks can be summed.
fn squared_error_term(
    preds: &[Array2<f64>],
    truth: &[Array2<f64>],
    weight: f64,
    rows: usize,
) -> Result<(f64, Vec<Array2<f64>>)> {
    if preds.len() != truth.len() {
        return Err(Error::dims(format!(
            "{} predictions for {} targets",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let scale = weight / (preds.len() as f64 * rows as f64);
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (p, y) in preds.iter().zip(truth) {
        if p.dim() != y.dim() {
            return Err(Error::dims(format!("prediction {:?} vs target {:?}", p.dim(), y.dim())));
        }
        let diff = p - y;
        loss += diff.iter().map(|v| v * v).sum::<f64>();
        grads.push(diff * (2.0 * scale));
    }
    Ok((loss * scale, grads))
}

/// The two-term objective: mean squared frame error of the teacher-forced
/// predictions plus `λ` times that of the closed-loop predictions. Frames are
/// `B × D`; the result is averaged over the batch.
pub fn multi_objective_loss(
    open: &[Array2<f64>],
    open_truth: &[Array2<f64>],
    closed: &[Array2<f64>],
    closed_truth: &[Array2<f64>],
    lambda: f64,
) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    let rows = open.first().or(closed.first()).map_or(1, |a| a.nrows());
    let (lo, _) = squared_error_term(open, open_truth, 1.0, rows)?;
    let (lc, _) = squared_error_term(closed, closed_truth, lambda, rows)?;
    Ok(lo + lc)
}

/// Which teacher-forced steps enter the open-loop term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OpenLoopSpan {
    /// Every prediction in the window.
    #[default]
    FullWindow,
    /// Only predictions of frames after the seed.
    PostSeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrainingMode {
    /// Open-loop plus λ-weighted closed-loop loss.
    #[default]
    MultiObjective,
    /// Single rollout alternating ground-truth and self-fed blocks.
    AutoConditioned { block: usize },
}

/// A batch of windows, one `B × D` array per frame.
#[derive(Debug, Clone)]
pub struct Batch {
    pub frames: Vec<Array2<f64>>,
    pub actions: Array2<f64>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.actions.nrows()
    }

    /// Rows `range` of every frame.
    pub fn slice_rows(&self, start: usize, end: usize) -> Batch {
        Batch {
            frames: self.frames.iter().map(|f| f.slice(s![start..end, ..]).to_owned()).collect(),
            actions: self.actions.slice(s![start..end, ..]).to_owned(),
        }
    }
}

/// Loss terms and gradients for one batch.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    pub open_loss: f64,
    /// `None` when the closed-loop pass was skipped.
    pub closed_loss: Option<f64>,
    pub total_loss: f64,
    pub grads: VtlnParams,
}

/// Settings that shape one gradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSettings {
    pub mode: TrainingMode,
    pub open_loop_span: OpenLoopSpan,
    pub stop_feedback: bool,
    pub dropout: f64,
}

impl StepSettings {
    pub fn deterministic() -> Self {
        Self {
            mode: TrainingMode::MultiObjective,
            open_loop_span: OpenLoopSpan::FullWindow,
            stop_feedback: false,
            dropout: 0.0,
        }
    }
}

/// Forward and backward over a batch of `seed_frames + horizon` windows.
///
/// `eps` is the frozen reparameterization noise (`B × H_top`). Losses and
/// gradients are normalized by `total_rows`, which equals the batch size
/// unless the caller splits a batch into chunks.
pub fn loss_and_grad<R: Rng + ?Sized>(
    params: &VtlnParams,
    config: &VtlnConfig,
    settings: &StepSettings,
    batch: &Batch,
    eps: &Array2<f64>,
    lambda: f64,
    total_rows: usize,
    dropout_rng: &mut R,
) -> Result<BatchGrad> {
    if lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    let window = config.window();
    if batch.frames.len() != window {
        return Err(Error::dims(format!(
            "batch has {} frames, window is {window}",
            batch.frames.len()
        )));
    }
    let steps = window - 1;
    let seed = config.seed_frames;
    let spec = &config.derivatives;
    let guides = generate_guide_vectors(&params.noise, eps.view(), batch.actions.view(), window)?;
    let mut grads = params.zeros_like();
    let mut dguides: Vec<Array2<f64>> = guides.guides.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
    let targets = &batch.frames[1..];

    let run = |pattern: FeedPattern,
                   first: usize,
                   weight: f64,
                   rng: &mut R,
                   grads: &mut VtlnParams,
                   dguides: &mut [Array2<f64>]|
     -> Result<f64> {
        let dropout = (settings.dropout > 0.0).then(|| Dropout {
            rate: settings.dropout,
            rng: &mut *rng,
        });
        let r = rollout(params, spec, &batch.frames, steps, pattern, &guides, dropout)?;
        let (loss, term_grads) = squared_error_term(&r.outputs[first..], &targets[first..], weight, total_rows)?;
        let mut d_out: Vec<Array2<f64>> = r.outputs.iter().map(|o| Array2::zeros(o.raw_dim())).collect();
        for (d, g) in d_out[first..].iter_mut().zip(term_grads) {
            *d = g;
        }
        let dg = backward_rollout(params, &r, &d_out, settings.stop_feedback, grads)?;
        for (acc, g) in dguides.iter_mut().zip(dg) {
            *acc += &g;
        }
        // raw (unweighted) loss for reporting
        Ok(if weight > 0.0 { loss / weight } else { loss })
    };

    let (open_loss, closed_loss, total) = match settings.mode {
        TrainingMode::MultiObjective => {
            let first = match settings.open_loop_span {
                OpenLoopSpan::FullWindow => 0,
                OpenLoopSpan::PostSeed => seed - 1,
            };
            let open = run(FeedPattern::Open, first, 1.0, dropout_rng, &mut grads, &mut dguides)?;
            let closed = if lambda > 0.0 {
                Some(run(
                    FeedPattern::Closed { prime: seed },
                    seed - 1,
                    lambda,
                    dropout_rng,
                    &mut grads,
                    &mut dguides,
                )?)
            } else {
                None
            };
            (open, closed, open + lambda * closed.unwrap_or(0.0))
        }
        TrainingMode::AutoConditioned { block } => {
            if block == 0 {
                return Err(Error::BadConfig("auto-conditioning block must be at least 1".into()));
            }
            let loss = run(
                FeedPattern::AutoConditioned { block },
                0,
                1.0,
                dropout_rng,
                &mut grads,
                &mut dguides,
            )?;
            (loss, None, loss)
        }
    };
    backward_guides(&params.noise, &guides, &dguides, &mut grads.noise)?;
    Ok(BatchGrad {
        open_loss,
        closed_loss,
        total_loss: total,
        grads,
    })
}

/// Teacher-forced and alternating rollouts share [`rollout`]; this helper runs
/// the alternating one on its own.
pub fn auto_conditioning_rollout(
    params: &VtlnParams,
    config: &VtlnConfig,
    frames: &[Array2<f64>],
    guides: &crate::model::GuideVectors,
    condition_length: usize,
) -> Result<crate::model::Rollout> {
    if condition_length == 0 {
        return Err(Error::BadConfig("condition length must be at least 1".into()));
    }
    rollout::<ChaCha8Rng>(
        params,
        &config.derivatives,
        frames,
        frames.len(),
        FeedPattern::AutoConditioned {
            block: condition_length,
        },
        guides,
        None,
    )
}

// ------------------------------------------------------ clipping, optimizer

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_gradients<P: ParamTensors>(grads: &mut P, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::BadConfig(format!("clip norm {max_norm} must be positive")));
    }
    for (name, t) in grads.tensors() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, mut t) in grads.tensors_mut() {
            t.mapv_inplace(|v| v * scale);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Running mean of squared gradients, one tensor per parameter.
    pub accumulators: TensorSet,
    pub rho: f64,
    pub eps: f64,
    pub iteration: usize,
}

impl OptimizerState {
    pub fn new<P: ParamTensors + ?Sized>(params: &P) -> Self {
        Self {
            accumulators: TensorSet::from_params(params).zeros_like(),
            rho: 0.9,
            eps: 1e-8,
            iteration: 0,
        }
    }
}

/// `acc ← ρ·acc + (1−ρ)·g²; θ ← θ − lr·g / (√acc + ε)`.
pub fn rmsprop_step<P: ParamTensors>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    let acc = &mut state.accumulators.entries;
    if g.len() != p.len() || acc.len() != p.len() {
        return Err(Error::dims("optimizer state does not match parameters"));
    }
    for ((pn, pt), (gn, gt)) in p.iter().zip(&g) {
        if pn != gn || pt.shape() != gt.shape() {
            return Err(Error::dims(format!("gradient {gn} does not match parameter {pn}")));
        }
    }
    for (((_, pt), (_, gt)), (_, at)) in p.iter_mut().zip(&g).zip(acc.iter_mut()) {
        if at.shape() != pt.shape() {
            return Err(Error::dims("accumulator shape mismatch"));
        }
        let (rho, eps) = (state.rho, state.eps);
        ndarray::Zip::from(pt)
            .and(gt)
            .and(at)
            .for_each(|theta, &grad, a| {
                *a = rho * *a + (1.0 - rho) * grad * grad;
                *theta -= lr * grad / (a.sqrt() + eps);
            });
    }
    state.iteration += 1;
    Ok(())
}

// ---------------------------------------------------------------- data

/// Standardized training sequences with integer action labels.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub sequences: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    pub actions: Vec<String>,
    pub norm: NormStats,
}

impl TrainingData {
    /// Computes normalization statistics from `train` and assigns labels by
    /// the sorted list of distinct action names.
    pub fn from_sequences(train: &[PoseSequence]) -> Result<Self> {
        let norm = NormStats::from_sequences(train)?;
        let mut actions: Vec<String> = train.iter().map(|s| s.action.clone()).collect();
        actions.sort();
        actions.dedup();
        Self::with_stats(train, actions, norm)
    }

    pub fn with_stats(seqs: &[PoseSequence], actions: Vec<String>, norm: NormStats) -> Result<Self> {
        let mut sequences = Vec::with_capacity(seqs.len());
        let mut labels = Vec::with_capacity(seqs.len());
        for s in seqs {
            let label = actions
                .iter()
                .position(|a| a == &s.action)
                .ok_or_else(|| Error::BadConfig(format!("unknown action '{}'", s.action)))?;
            sequences.push(norm.standardize(s.frames())?);
            labels.push(label);
        }
        Ok(Self {
            sequences,
            labels,
            actions,
            norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.ncols())
    }

    /// Draws `rows` windows: a sequence uniformly among those long enough,
    /// then a uniform start offset.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rows: usize, window: usize, rng: &mut R) -> Result<Batch> {
        let eligible: Vec<usize> = (0..self.sequences.len())
            .filter(|&i| self.sequences[i].nrows() >= window)
            .collect();
        if eligible.is_empty() {
            return Err(Error::DataTooShort {
                needed: window,
                available: self.sequences.iter().map(|s| s.nrows()).max().unwrap_or(0),
            });
        }
        let dim = self.dim();
        let mut frames = vec![Array2::zeros((rows, dim)); window];
        let mut labels = Vec::with_capacity(rows);
        for row in 0..rows {
            let idx = eligible[rng.gen_range(0..eligible.len())];
            let seq = &self.sequences[idx];
            let start = rng.gen_range(0..=seq.nrows() - window);
            for (t, f) in frames.iter_mut().enumerate() {
                f.row_mut(row).assign(&seq.row(start + t));
            }
            labels.push(self.labels[idx]);
        }
        Ok(Batch {
            frames,
            actions: one_hot(&labels, self.actions.len())?,
        })
    }
}

// --------------------------------------------------------------- training

fn default_batch() -> usize {
    32
}

fn default_clip() -> f64 {
    5.0
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: VtlnConfig,
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub lr: LrSchedule,
    /// Defaults to six equal steps over `iterations`.
    #[serde(default)]
    pub lambda: Option<LambdaSchedule>,
    #[serde(default)]
    pub mode: TrainingMode,
    #[serde(default)]
    pub open_loop_span: OpenLoopSpan,
    /// Treat fed-back predictions as constants in the closed-loop pass.
    #[serde(default)]
    pub stop_feedback: bool,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    /// Batch chunks evaluated concurrently. Results depend on this value.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

impl TrainConfig {
    /// 50 seed frames, 10 predicted, 100k iterations, dropout 0.3.
    pub fn short_term(mut model: VtlnConfig) -> Self {
        model.seed_frames = 50;
        model.horizon = 10;
        model.dropout = 0.3;
        Self::with(model, 100_000, LrSchedule::short_term())
    }

    /// 50 seed frames, 100 predicted, 10k iterations, no dropout.
    pub fn long_term(mut model: VtlnConfig) -> Self {
        model.seed_frames = 50;
        model.horizon = 100;
        model.dropout = 0.0;
        Self::with(model, 10_000, LrSchedule::long_term())
    }

    fn with(model: VtlnConfig, iterations: usize, lr: LrSchedule) -> Self {
        Self {
            model,
            iterations,
            batch_size: default_batch(),
            lr,
            lambda: None,
            mode: TrainingMode::default(),
            open_loop_span: OpenLoopSpan::default(),
            stop_feedback: false,
            clip_norm: default_clip(),
            seed: 0,
            threads: 1,
        }
    }

    pub fn lambda_schedule(&self) -> LambdaSchedule {
        self.lambda
            .clone()
            .unwrap_or_else(|| LambdaSchedule::default_for(self.iterations))
    }

    pub fn settings(&self) -> StepSettings {
        StepSettings {
            mode: self.mode,
            open_loop_span: self.open_loop_span,
            stop_feedback: self.stop_feedback,
            dropout: self.model.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.lr.validate()?;
        self.lambda_schedule().validate()?;
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch size must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::BadConfig("threads must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::BadConfig("clip norm must be positive".into()));
        }
        if let TrainingMode::AutoConditioned { block: 0 } = self.mode {
            return Err(Error::BadConfig("auto-conditioning block must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub lambda: f64,
    pub lr: f64,
    pub open_loss: f64,
    pub closed_loss: Option<f64>,
    pub total_loss: f64,
}

pub const LOG_HEADER: &str = "iteration,lambda,lr,open_loss,closed_loss,total_loss";

/// CSV with [`LOG_HEADER`]; a skipped closed-loop pass leaves its cell empty.
pub fn format_log(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let closed = r.closed_loss.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration, r.lambda, r.lr, r.open_loss, closed, r.total_loss
        );
    }
    out
}

/// Seed and stream position of the training generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// A trained (or partially trained) model with everything needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: VtlnParams,
    pub norm: NormStats,
    pub actions: Vec<String>,
    pub optimizer: OptimizerState,
    pub iteration: usize,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerRecord {
    rho: f64,
    eps: f64,
    iteration: usize,
    accumulators: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    config: TrainConfig,
    norm: NormStats,
    actions: Vec<String>,
    iteration: usize,
    rng: RngState,
    tensors: Vec<TensorRecord>,
    optimizer: OptimizerRecord,
}

fn records<P: ParamTensors + ?Sized>(p: &P) -> Vec<TensorRecord> {
    p.tensors()
        .into_iter()
        .map(|(name, t)| TensorRecord {
            name,
            shape: t.shape().to_vec(),
            values: t.iter().copied().collect(),
        })
        .collect()
}

fn fill_from_records<P: ParamTensors + ?Sized>(target: &mut P, recs: &[TensorRecord]) -> std::result::Result<(), String> {
    let mut slots = target.tensors_mut();
    if slots.len() != recs.len() {
        return Err(format!("expected {} tensors, found {}", slots.len(), recs.len()));
    }
    for ((name, slot), rec) in slots.iter_mut().zip(recs) {
        if *name != rec.name || slot.shape() != rec.shape.as_slice() {
            return Err(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                rec.name,
                rec.shape,
                name,
                slot.shape()
            ));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&rec.shape), rec.values.clone()).map_err(|e| e.to_string())?;
        slot.assign(&arr);
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            norm: self.norm.clone(),
            actions: self.actions.clone(),
            iteration: self.iteration,
            rng: self.rng.clone(),
            tensors: records(&self.params),
            optimizer: OptimizerRecord {
                rho: self.optimizer.rho,
                eps: self.optimizer.eps,
                iteration: self.optimizer.iteration,
                accumulators: records(&self.optimizer.accumulators),
            },
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let corrupt = |msg: String| Error::CorruptFile {
            path: origin.into(),
            msg,
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| corrupt("missing version".into()))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: version as u32,
            });
        }
        let file: CheckpointFile = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
        file.config.validate().map_err(|e| corrupt(e.to_string()))?;
        let mut params = VtlnParams::zeros(&file.config.model);
        fill_from_records(&mut params, &file.tensors).map_err(corrupt)?;
        let mut optimizer = OptimizerState::new(&params);
        fill_from_records(&mut optimizer.accumulators, &file.optimizer.accumulators).map_err(corrupt)?;
        optimizer.rho = file.optimizer.rho;
        optimizer.eps = file.optimizer.eps;
        optimizer.iteration = file.optimizer.iteration;
        if file.norm.mean.len() != file.config.model.joint_dim || file.norm.std.len() != file.config.model.joint_dim {
            return Err(corrupt("normalization width differs from the model".into()));
        }
        if file.actions.len() != file.config.model.actions {
            return Err(corrupt("action list differs from the model".into()));
        }
        Ok(Self {
            config: file.config,
            params,
            norm: file.norm,
            actions: file.actions,
            optimizer,
            iteration: file.iteration,
            rng: file.rng,
        })
    }

    pub fn model(&self) -> crate::model::Vtln {
        crate::model::Vtln {
            config: self.config.model.clone(),
            params: self.params.clone(),
        }
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text, &path.display().to_string())
}

/// Owns the mutable state of a training run.
pub struct Trainer {
    config: TrainConfig,
    data: TrainingData,
    params: VtlnParams,
    optimizer: OptimizerState,
    lambda: LambdaSchedule,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: TrainingData) -> Result<Self> {
        config.validate()?;
        check_data(&config, &data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = VtlnParams::init(&config.model, &mut rng)?;
        let optimizer = OptimizerState::new(&params);
        Ok(Self {
            lambda: config.lambda_schedule(),
            config,
            data,
            params,
            optimizer,
            rng,
            iteration: 0,
        })
    }

    /// Continues from a checkpoint; `data` must be standardized with the
    /// checkpoint's statistics.
    pub fn resume(ckpt: Checkpoint, data: TrainingData) -> Result<Self> {
        check_data(&ckpt.config, &data)?;
        Ok(Self {
            lambda: ckpt.config.lambda_schedule(),
            rng: ckpt.rng.restore(),
            config: ckpt.config,
            data,
            params: ckpt.params,
            optimizer: ckpt.optimizer,
            iteration: ckpt.iteration,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn params(&self) -> &VtlnParams {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// One optimizer update.
    pub fn step(&mut self) -> Result<LogRow> {
        let it = self.iteration;
        let lambda = self.lambda.at(it);
        let lr = self.config.lr.at(it);
        let rows = self.config.batch_size;
        let batch = self.data.sample_batch(rows, self.config.model.window(), &mut self.rng)?;
        let eps = draw_eps(rows, self.config.model.hidden_top, &mut self.rng);
        let chunks = self.config.threads.min(rows);
        let chunk_seeds: Vec<u64> = (0..chunks).map(|_| self.rng.gen()).collect();
        let settings = self.config.settings();

        let bounds: Vec<(usize, usize)> = (0..chunks)
            .map(|c| (c * rows / chunks, (c + 1) * rows / chunks))
            .collect();
        let eval = |c: usize| -> Result<BatchGrad> {
            let (a, b) = bounds[c];
            let sub = if chunks == 1 { batch.clone() } else { batch.slice_rows(a, b) };
            let sub_eps = eps.slice(s![a..b, ..]).to_owned();
            let mut rng = ChaCha8Rng::seed_from_u64(chunk_seeds[c]);
            loss_and_grad(
                &self.params,
                &self.config.model,
                &settings,
                &sub,
                &sub_eps,
                lambda,
                rows,
                &mut rng,
            )
        };
        let results: Vec<Result<BatchGrad>> = if chunks == 1 {
            vec![eval(0)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..chunks).map(|c| scope.spawn(move || eval(c))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .collect()
            })
        };
        let mut results = results.into_iter();
        let mut total = results.next().expect("at least one chunk")?;
        for r in results {
            let r = r?;
            total.open_loss += r.open_loss;
            total.closed_loss = match (total.closed_loss, r.closed_loss) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            };
            total.total_loss += r.total_loss;
            total.grads.add_scaled(1.0, &r.grads);
        }
        if !total.total_loss.is_finite() {
            return Err(Error::DivergedLoss(it));
        }
        clip_gradients(&mut total.grads, self.config.clip_norm)?;
        rmsprop_step(&mut self.params, &total.grads, &mut self.optimizer, lr)?;
        self.iteration += 1;
        Ok(LogRow {
            iteration: it,
            lambda,
            lr,
            open_loss: total.open_loss,
            closed_loss: total.closed_loss,
            total_loss: total.total_loss,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            norm: self.data.norm.clone(),
            actions: self.data.actions.clone(),
            optimizer: self.optimizer.clone(),
            iteration: self.iteration,
            rng: RngState::capture(&self.rng),
        }
    }
}

fn check_data(config: &TrainConfig, data: &TrainingData) -> Result<()> {
    if data.sequences.is_empty() {
        return Err(Error::Empty);
    }
    if data.dim() != config.model.joint_dim {
        return Err(Error::dims(format!(
            "data width {} but model expects {}",
            data.dim(),
            config.model.joint_dim
        )));
    }
    if data.actions.len() != config.model.actions {
        return Err(Error::dims(format!(
            "{} actions in data, model expects {}",
            data.actions.len(),
            config.model.actions
        )));
    }
    Ok(())
}

/// Runs every remaining iteration, calling `on_step` after each.
pub fn train<F: FnMut(&LogRow)>(
    config: TrainConfig,
    data: TrainingData,
    mut on_step: F,
) -> Result<(Checkpoint, Vec<LogRow>)> {
    let mut trainer = Trainer::new(config, data)?;
    let mut log = Vec::with_capacity(trainer.config.iterations);
    while !trainer.is_done() {
        let row = trainer.step()?;
        on_step(&row);
        log.push(row);
    }
    Ok((trainer.checkpoint(), log))
}

/// Options for [`check_gradients`].
#[derive(Debug, Clone)]
pub struct GradCheckSetup {
    pub model: VtlnConfig,
    pub settings: StepSettings,
    pub lambda: f64,
    pub rows: usize,
    pub seed: u64,
    /// Debug aid: perturbs the analytic gradient of this tensor before the
    /// comparison, so the check should fail and name it.
    pub corrupt: Option<String>,
}

impl GradCheckSetup {
    pub fn new(model: VtlnConfig) -> Self {
        GradCheckSetup {
            model,
            settings: StepSettings::deterministic(),
            lambda: 0.5,
            rows: 2,
            seed: 0,
            corrupt: None,
        }
    }
}

/// Finite-difference check of the full training loss on a random instance
/// with frozen noise.
pub fn check_gradients(setup: &GradCheckSetup) -> Result<GradCheckReport> {
    let config = &setup.model;
    config.validate()?;
    if setup.settings.dropout > 0.0 {
        return Err(Error::BadConfig("gradient check needs dropout 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let params = VtlnParams::init(config, &mut rng)?;
    let frames = (0..config.window())
        .map(|_| Array2::from_shape_simple_fn((setup.rows, config.joint_dim), || rng.gen_range(-1.0..1.0)))
        .collect();
    let labels: Vec<usize> = (0..setup.rows).map(|r| r % config.actions).collect();
    let batch = Batch {
        frames,
        actions: one_hot(&labels, config.actions)?,
    };
    let eps = draw_eps(setup.rows, config.hidden_top, &mut rng);
    let eval = |p: &VtlnParams| {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        loss_and_grad(p, config, &setup.settings, &batch, &eps, setup.lambda, setup.rows, &mut unused)
    };
    let mut analytic = eval(&params)?.grads;
    if let Some(name) = &setup.corrupt {
        let mut found = false;
        for (n, mut t) in analytic.tensors_mut() {
            if &n == name {
                t.mapv_inplace(|g| g * 1.5 + 1e-3);
                found = true;
            }
        }
        if !found {
            return Err(Error::BadConfig(format!("no tensor named {name}")));
        }
    }
    grad_check(&params, &analytic, DEFAULT_STEP, |p| eval(p).map(|g| g.total_loss))
}
