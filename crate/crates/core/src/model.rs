//! The two-level model: a backward-running noise GRU that emits one guide
//! vector per forward step, and a forward body GRU that fuses those guides
//! with derivative-augmented joint angles.
//!
//! Time conventions used throughout:
//!
//! * a rollout has `steps` body updates; step `t` consumes frame `t` and its
//!   output predicts frame `t + 1`;
//! * the noise process performs `K` updates from `z_φ`, producing states
//!   `s_1..s_K`; forward step `t` (0-based) receives `s_{K-t}`, so the first
//!   forward step sees the most processed state;
//! * in closed loop the first `seed_frames` steps read ground truth and every
//!   later step reads the previous output, with derivatives recomputed from
//!   the mixed history.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gru::{
    body_gru_cell_backward_partial, body_gru_cell_forward, decoder_backward, decoder_forward,
    dropout_mask, gru_cell_backward, gru_cell_forward, BodyGruParams, CellCache, DecoderCache,
    DecoderParams, GruParams,
};
use crate::motion::derivatives::{augment_step, backprop_step};
use crate::motion::DerivativeSpec;
use crate::params::ParamTensors;

/// Outputs larger than this abort a rollout.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

fn default_true() -> bool {
    true
}

fn default_seed_frames() -> usize {
    50
}

fn default_horizon() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VtlnConfig {
    pub hidden_top: usize,
    pub hidden_body: usize,
    /// Width of a joint-angle frame.
    pub joint_dim: usize,
    /// Number of action classes (one-hot width of the noise process input).
    pub actions: usize,
    #[serde(default)]
    pub derivatives: DerivativeSpec,
    #[serde(default = "default_true")]
    pub residual_output: bool,
    #[serde(default = "default_true")]
    pub use_bias: bool,
    #[serde(default = "default_seed_frames")]
    pub seed_frames: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Dropout rate on the body input and the decoder input; training only.
    #[serde(default)]
    pub dropout: f64,
}

impl VtlnConfig {
    pub fn new(hidden: usize, joint_dim: usize, actions: usize) -> Self {
        Self {
            hidden_top: hidden,
            hidden_body: hidden,
            joint_dim,
            actions,
            derivatives: DerivativeSpec::default(),
            residual_output: true,
            use_bias: true,
            seed_frames: default_seed_frames(),
            horizon: default_horizon(),
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadConfig(msg));
        if self.hidden_top == 0 || self.hidden_body == 0 || self.joint_dim == 0 || self.actions == 0 {
            return bad("sizes must be positive".into());
        }
        self.derivatives.validate()?;
        if self.seed_frames < self.derivatives.history_len() {
            return bad(format!(
                "seed_frames {} is shorter than the derivative history {}",
                self.seed_frames,
                self.derivatives.history_len()
            ));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.derivatives.width(self.joint_dim)
    }

    /// Frames in one training window.
    pub fn window(&self) -> usize {
        self.seed_frames + self.horizon
    }
}

/// Exact number of trainable scalars for a configuration.
pub fn count_parameters(config: &VtlnConfig) -> usize {
    let gru = |h: usize, i: usize| 3 * (h * i + h * h) + if config.use_bias { 3 * h } else { 0 };
    let (ht, hb, d) = (config.hidden_top, config.hidden_body, config.joint_dim);
    let noise = gru(ht, config.actions) + 2 * ht;
    let body = gru(hb, config.input_size()) + 3 * hb * ht;
    let decoder = d * hb + if config.use_bias { d } else { 0 };
    noise + body + decoder
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProcessParams {
    pub gru: GruParams,
    pub mu: Array1<f64>,
    /// Diagonal of Σ in the log domain.
    pub log_sigma: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VtlnParams {
    pub noise: NoiseProcessParams,
    pub body: BodyGruParams,
    pub decoder: DecoderParams,
}

impl VtlnParams {
    pub fn init<R: Rng + ?Sized>(config: &VtlnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (ht, hb) = (config.hidden_top, config.hidden_body);
        Ok(Self {
            noise: NoiseProcessParams {
                gru: GruParams::init(ht, config.actions, config.use_bias, rng),
                mu: Array1::zeros(ht),
                log_sigma: Array1::zeros(ht),
            },
            body: BodyGruParams::init(hb, config.input_size(), ht, config.use_bias, rng),
            decoder: DecoderParams::init(
                config.joint_dim,
                hb,
                config.residual_output,
                config.use_bias,
                rng,
            ),
        })
    }

    pub fn zeros(config: &VtlnConfig) -> Self {
        let (ht, hb) = (config.hidden_top, config.hidden_body);
        Self {
            noise: NoiseProcessParams {
                gru: GruParams::zeros(ht, config.actions, config.use_bias),
                mu: Array1::zeros(ht),
                log_sigma: Array1::zeros(ht),
            },
            body: BodyGruParams::zeros(hb, config.input_size(), ht, config.use_bias),
            decoder: DecoderParams::zeros(config.joint_dim, hb, config.residual_output, config.use_bias),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            noise: NoiseProcessParams {
                gru: self.noise.gru.zeros_like(),
                mu: Array1::zeros(self.noise.mu.len()),
                log_sigma: Array1::zeros(self.noise.log_sigma.len()),
            },
            body: self.body.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }

    pub fn hidden_top(&self) -> usize {
        self.noise.mu.len()
    }
}

impl ParamTensors for VtlnParams {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        self.noise.gru.collect("noise", &mut out);
        out.push(("noise.mu".into(), self.noise.mu.view().into_dyn()));
        out.push(("noise.log_sigma".into(), self.noise.log_sigma.view().into_dyn()));
        self.body.collect("body", &mut out);
        self.decoder.collect("decoder", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        let NoiseProcessParams { gru, mu, log_sigma } = &mut self.noise;
        gru.collect_mut("noise", &mut out);
        out.push(("noise.mu".into(), mu.view_mut().into_dyn()));
        out.push(("noise.log_sigma".into(), log_sigma.view_mut().into_dyn()));
        self.body.collect_mut("body", &mut out);
        self.decoder.collect_mut("decoder", &mut out);
        out
    }
}

/// `z_φ = μ + exp(log_sigma) ⊙ ε`, one row per batch element.
pub fn sample_initial_state(np: &NoiseProcessParams, eps: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if eps.ncols() != np.mu.len() {
        return Err(Error::dims(format!(
            "ε has width {}, noise state has {}",
            eps.ncols(),
            np.mu.len()
        )));
    }
    let sigma = np.log_sigma.mapv(f64::exp);
    Ok(&eps * &sigma + &np.mu)
}

/// Standard-normal ε for `rows` batch elements.
pub fn draw_eps<R: Rng + ?Sized>(rows: usize, width: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, width), || rng.sample(StandardNormal))
}

pub fn one_hot(actions: &[usize], width: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((actions.len(), width));
    for (row, &a) in actions.iter().enumerate() {
        if a >= width {
            return Err(Error::dims(format!("action {a} out of range for {width} classes")));
        }
        out[[row, a]] = 1.0;
    }
    Ok(out)
}

/// Guide vectors in forward time order plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct GuideVectors {
    /// `guides[t]` conditions forward step `t`; each is `B × H_top`.
    pub guides: Vec<Array2<f64>>,
    eps: Array2<f64>,
    caches: Vec<CellCache>,
}

impl GuideVectors {
    pub fn len(&self) -> usize {
        self.guides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.guides.is_empty()
    }

    /// The same guides in reverse order, with no backward information.
    pub fn reversed(&self) -> Self {
        Self {
            guides: self.guides.iter().rev().cloned().collect(),
            eps: self.eps.clone(),
            caches: Vec::new(),
        }
    }
}

/// Runs the noise GRU `k` times from `z_φ`, feeding the one-hot action at
/// every update, and aligns its states to forward time.
pub fn generate_guide_vectors(
    np: &NoiseProcessParams,
    eps: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    k: usize,
) -> Result<GuideVectors> {
    if k == 0 {
        return Err(Error::BadConfig("guide count must be at least 1".into()));
    }
    if actions.nrows() != eps.nrows() {
        return Err(Error::dims("action batch and ε batch differ"));
    }
    let mut state = sample_initial_state(np, eps)?;
    let mut states = Vec::with_capacity(k);
    let mut caches = Vec::with_capacity(k);
    for _ in 0..k {
        let (next, cache) = gru_cell_forward(&np.gru, actions, state.view(), None)?;
        caches.push(cache);
        states.push(next.clone());
        state = next;
    }
    states.reverse();
    Ok(GuideVectors {
        guides: states,
        eps: eps.to_owned(),
        caches,
    })
}

/// Back-propagates guide gradients (forward time order) into the noise
/// process parameters, including μ and log Σ.
pub fn backward_guides(
    np: &NoiseProcessParams,
    guides: &GuideVectors,
    dguides: &[Array2<f64>],
    grad: &mut NoiseProcessParams,
) -> Result<()> {
    let k = guides.caches.len();
    if dguides.len() != k {
        return Err(Error::StaleCache(format!(
            "{} guide gradients for {k} noise updates",
            dguides.len()
        )));
    }
    let mut ds = Array2::zeros(guides.guides[0].raw_dim());
    for m in (0..k).rev() {
        // update m (0-based) produced s_{m+1}, which feeds forward step k-1-m
        ds += &dguides[k - 1 - m];
        ds = gru_cell_backward(&np.gru, &guides.caches[m], ds.view(), &mut grad.gru)?.dh_prev;
    }
    let sigma = np.log_sigma.mapv(f64::exp);
    grad.mu += &ds.sum_axis(Axis(0));
    grad.log_sigma += &((&ds * &guides.eps).sum_axis(Axis(0)) * &sigma);
    Ok(())
}

/// Which input each body step reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeedPattern {
    /// Ground truth at every step.
    Open,
    /// Ground truth for the first `n` steps, own output afterwards.
    Closed { prime: usize },
    /// Alternating blocks of `n` ground-truth and `n` self-fed steps.
    AutoConditioned { block: usize },
}

impl FeedPattern {
    pub fn uses_ground_truth(&self, t: usize) -> bool {
        match *self {
            FeedPattern::Open => true,
            FeedPattern::Closed { prime } => t < prime.max(1),
            FeedPattern::AutoConditioned { block } => t == 0 || (t / block.max(1)) % 2 == 0,
        }
    }
}

/// Dropout settings for one rollout.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

/// A finished rollout with everything needed for back-propagation.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// `outputs[t]` predicts frame `t + 1`.
    pub outputs: Vec<Array2<f64>>,
    /// The joint-angle frame actually consumed at each step.
    pub inputs: Vec<Array2<f64>>,
    pattern: FeedPattern,
    cells: Vec<CellCache>,
    decoders: Vec<DecoderCache>,
    spec: DerivativeSpec,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.outputs.len()
    }

    pub fn pattern(&self) -> &FeedPattern {
        &self.pattern
    }
}

/// Runs the body RNN for `steps` updates from a zero state.
///
/// `ground_truth[t]` must exist for every step that reads ground truth.
pub fn rollout<R: Rng + ?Sized>(
    params: &VtlnParams,
    spec: &DerivativeSpec,
    ground_truth: &[Array2<f64>],
    steps: usize,
    pattern: FeedPattern,
    guides: &GuideVectors,
    mut dropout: Option<Dropout<'_, R>>,
) -> Result<Rollout> {
    if steps == 0 {
        return Err(Error::BadConfig("rollout needs at least one step".into()));
    }
    if guides.len() < steps {
        return Err(Error::dims(format!(
            "{} guide vectors for {steps} steps",
            guides.len()
        )));
    }
    let batch = ground_truth
        .first()
        .ok_or_else(|| Error::dims("no ground-truth frames"))?
        .nrows();
    let hidden = params.body.gru.hidden_size();
    let input = params.body.gru.input_size();
    let mut h = Array2::zeros((batch, hidden));
    let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(steps);
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(steps);
    let mut cells = Vec::with_capacity(steps);
    let mut decoders = Vec::with_capacity(steps);
    for t in 0..steps {
        let frame = if pattern.uses_ground_truth(t) {
            ground_truth
                .get(t)
                .ok_or_else(|| Error::dims(format!("missing ground-truth frame {t}")))?
                .clone()
        } else {
            outputs[t - 1].clone()
        };
        inputs.push(frame);
        let x = augment_step(spec, &inputs, t);
        if x.ncols() != input {
            return Err(Error::dims(format!(
                "augmented width {} but body expects {input}",
                x.ncols()
            )));
        }
        let (x_mask, h_mask) = match dropout.as_mut() {
            Some(d) if d.rate > 0.0 => (
                Some(dropout_mask(batch, input, d.rate, d.rng)),
                Some(dropout_mask(batch, hidden, d.rate, d.rng)),
            ),
            _ => (None, None),
        };
        let (h_new, cell) =
            body_gru_cell_forward(&params.body, x.view(), h.view(), guides.guides[t].view(), x_mask.as_ref())?;
        let (y, dec) = decoder_forward(&params.decoder, h_new.view(), inputs[t].view(), h_mask.as_ref())?;
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(peak <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged { step: t, magnitude: peak });
        }
        h = h_new;
        cells.push(cell);
        decoders.push(dec);
        outputs.push(y);
    }
    Ok(Rollout {
        outputs,
        inputs,
        pattern,
        cells,
        decoders,
        spec: spec.clone(),
    })
}

/// Back-propagates `d_outputs` (one `B × D` gradient per step) through a
/// rollout. Body and decoder gradients accumulate into `grad`; the returned
/// vectors are the gradients of the guides in forward order.
///
/// With `stop_feedback` the self-fed frames are treated as constants.
pub fn backward_rollout(
    params: &VtlnParams,
    rollout: &Rollout,
    d_outputs: &[Array2<f64>],
    stop_feedback: bool,
    grad: &mut VtlnParams,
) -> Result<Vec<Array2<f64>>> {
    let steps = rollout.steps();
    if d_outputs.len() != steps || rollout.cells.len() != steps {
        return Err(Error::StaleCache(format!(
            "{} output gradients for {steps} steps",
            d_outputs.len()
        )));
    }
    let batch = rollout.outputs[0].nrows();
    let hidden = params.body.gru.hidden_size();
    let mut d_frames: Vec<Array2<f64>> = rollout
        .inputs
        .iter()
        .map(|f| Array2::zeros(f.raw_dim()))
        .collect();
    let mut dguides = Vec::with_capacity(steps);
    let mut dh_next = Array2::zeros((batch, hidden));
    // input gradients only matter once a fed-back frame is in the history
    let first_fed = (0..steps).find(|&t| !rollout.pattern.uses_ground_truth(t));
    for t in (0..steps).rev() {
        let need_dx = !stop_feedback && first_fed.is_some_and(|f| t >= f);
        let mut dy = d_outputs[t].clone();
        if !stop_feedback && t + 1 < steps && !rollout.pattern.uses_ground_truth(t + 1) {
            dy += &d_frames[t + 1];
        }
        let (dh_dec, dx_joint) =
            decoder_backward(&params.decoder, &rollout.decoders[t], dy.view(), &mut grad.decoder)?;
        if let (true, Some(dx)) = (need_dx, dx_joint) {
            d_frames[t] += &dx;
        }
        let dh = dh_dec + &dh_next;
        let g = body_gru_cell_backward_partial(&params.body, &rollout.cells[t], dh.view(), &mut grad.body, need_dx)?;
        if need_dx {
            backprop_step(&rollout.spec, g.dx.view(), t, &mut d_frames);
        }
        dguides.push(g.dguide.expect("body cell always has a guide"));
        dh_next = g.dh_prev;
    }
    dguides.reverse();
    Ok(dguides)
}

/// Teacher-forced outputs for every frame of `frames`.
pub fn open_loop_forward(
    params: &VtlnParams,
    spec: &DerivativeSpec,
    frames: &[Array2<f64>],
    guides: &GuideVectors,
) -> Result<Rollout> {
    rollout::<rand::rngs::ThreadRng>(params, spec, frames, frames.len(), FeedPattern::Open, guides, None)
}

/// Primes on `seed.len()` ground-truth frames, then feeds back its own
/// outputs. Returns the rollout; its last `horizon` outputs are the
/// predictions (see [`closed_loop_predictions`]).
pub fn closed_loop_forward(
    params: &VtlnParams,
    spec: &DerivativeSpec,
    seed: &[Array2<f64>],
    horizon: usize,
    guides: &GuideVectors,
) -> Result<Rollout> {
    if seed.len() < spec.history_len() {
        return Err(Error::BadConfig(format!(
            "closed loop needs at least {} seed frames",
            spec.history_len()
        )));
    }
    if horizon == 0 {
        return Err(Error::BadConfig("horizon must be at least 1".into()));
    }
    rollout::<rand::rngs::ThreadRng>(
        params,
        spec,
        seed,
        seed.len() + horizon - 1,
        FeedPattern::Closed { prime: seed.len() },
        guides,
        None,
    )
}

pub fn closed_loop_predictions(rollout: &Rollout, horizon: usize) -> &[Array2<f64>] {
    &rollout.outputs[rollout.steps() - horizon..]
}

/// A model together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Vtln {
    pub config: VtlnConfig,
    pub params: VtlnParams,
}

impl Vtln {
    pub fn new<R: Rng + ?Sized>(config: VtlnConfig, rng: &mut R) -> Result<Self> {
        let params = VtlnParams::init(&config, rng)?;
        Ok(Self { config, params })
    }

    /// A model whose closed-loop output repeats its input: zero decoder with
    /// the residual connection on.
    pub fn identity(config: VtlnConfig) -> Result<Self> {
        config.validate()?;
        let mut config = config;
        config.residual_output = true;
        let params = VtlnParams::zeros(&config);
        Ok(Self { config, params })
    }

    /// Generates `horizon` frames after `seed` (already standardized, at
    /// least `seed_frames` rows; the last `seed_frames` are used). Each row of
    /// `eps` is one independent trial. Returns one `horizon × D` array per
    /// trial.
    pub fn synthesize(
        &self,
        seed: ArrayView2<'_, f64>,
        action: usize,
        horizon: usize,
        eps: ArrayView2<'_, f64>,
    ) -> Result<Vec<Array2<f64>>> {
        let s_len = self.config.seed_frames;
        if seed.nrows() < s_len {
            return Err(Error::DataTooShort {
                needed: s_len,
                available: seed.nrows(),
            });
        }
        if seed.ncols() != self.config.joint_dim {
            return Err(Error::dims(format!(
                "seed width {} but model expects {}",
                seed.ncols(),
                self.config.joint_dim
            )));
        }
        let trials = eps.nrows();
        let start = seed.nrows() - s_len;
        let frames: Vec<Array2<f64>> = (start..seed.nrows())
            .map(|t| {
                let row = seed.slice(s![t..t + 1, ..]);
                let mut out = Array2::zeros((trials, row.ncols()));
                out.assign(&row.broadcast((trials, row.ncols())).unwrap());
                out
            })
            .collect();
        let actions = one_hot(&vec![action; trials], self.config.actions)?;
        let guides = generate_guide_vectors(&self.params.noise, eps, actions.view(), s_len + horizon)?;
        let run = closed_loop_forward(&self.params, &self.config.derivatives, &frames, horizon, &guides)?;
        let preds = closed_loop_predictions(&run, horizon);
        Ok((0..trials)
            .map(|i| {
                let mut out = Array2::zeros((horizon, self.config.joint_dim));
                for (t, p) in preds.iter().enumerate() {
                    out.row_mut(t).assign(&p.row(i));
                }
                out
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gru::{body_gru_cell_forward, decoder_forward};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> VtlnConfig {
        let mut c = VtlnConfig::new(4, 3, 2);
        c.hidden_body = 5;
        c.seed_frames = 4;
        c.horizon = 3;
        c
    }

    fn random_frames(t: usize, b: usize, d: usize, seed: u64) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t)
            .map(|_| Array2::from_shape_simple_fn((b, d), || rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn guides_for(params: &VtlnParams, config: &VtlnConfig, b: usize, k: usize) -> GuideVectors {
        let eps = draw_eps(b, config.hidden_top, &mut ChaCha8Rng::seed_from_u64(99));
        let actions = one_hot(&(0..b).map(|i| i % config.actions).collect::<Vec<_>>(), config.actions).unwrap();
        generate_guide_vectors(&params.noise, eps.view(), actions.view(), k).unwrap()
    }

    #[test]
    fn initial_state_arithmetic() {
        let mut np = VtlnParams::zeros(&VtlnConfig::new(2, 3, 1)).noise;
        np.mu = array![0.5, -1.0];
        np.log_sigma = array![0.0, 2f64.ln()];
        let z = sample_initial_state(&np, array![[1.0, 1.0]].view()).unwrap();
        assert!((z[[0, 0]] - 1.5).abs() < 1e-15 && (z[[0, 1]] - 1.0).abs() < 1e-15);
        let z0 = sample_initial_state(&np, array![[0.0, 0.0]].view()).unwrap();
        assert_eq!(z0.row(0).to_vec(), np.mu.to_vec());
        assert!(sample_initial_state(&np, array![[0.0]].view()).is_err());
    }

    #[test]
    fn zero_noise_gru_halves_per_update() {
        let config = VtlnConfig::new(3, 3, 2);
        let mut params = VtlnParams::zeros(&config);
        params.noise.mu = array![1.0, -2.0, 0.5];
        let eps = Array2::zeros((1, 3));
        let k = 5;
        let g = generate_guide_vectors(&params.noise, eps.view(), one_hot(&[1], 2).unwrap().view(), k).unwrap();
        for t in 1..=k {
            let scale = 0.5f64.powi((k - t + 1) as i32);
            let want = &params.noise.mu * scale;
            assert_eq!(g.guides[t - 1].row(0).to_vec(), want.to_vec(), "t = {t}");
        }
    }

    #[test]
    fn single_guide_is_one_update() {
        let config = tiny_config();
        let params = VtlnParams::init(&config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let eps = array![[0.3, -0.1, 0.2, 0.9]];
        let act = one_hot(&[1], 2).unwrap();
        let g = generate_guide_vectors(&params.noise, eps.view(), act.view(), 1).unwrap();
        let z = sample_initial_state(&params.noise, eps.view()).unwrap();
        let (want, _) = gru_cell_forward(&params.noise.gru, act.view(), z.view(), None).unwrap();
        assert_eq!(g.guides[0], want);
    }

    #[test]
    fn actions_change_guides() {
        let config = tiny_config();
        let params = VtlnParams::init(&config, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let eps = Array2::zeros((1, 4));
        let a = generate_guide_vectors(&params.noise, eps.view(), one_hot(&[0], 2).unwrap().view(), 6).unwrap();
        let b = generate_guide_vectors(&params.noise, eps.view(), one_hot(&[1], 2).unwrap().view(), 6).unwrap();
        assert!(a.guides.iter().zip(&b.guides).all(|(x, y)| x != y));
    }

    #[test]
    fn identity_model_open_loop_echoes_input() {
        let config = tiny_config();
        let model = Vtln::identity(config.clone()).unwrap();
        let frames = random_frames(6, 2, 3, 3);
        let guides = guides_for(&model.params, &config, 2, 6);
        let run = open_loop_forward(&model.params, &config.derivatives, &frames, &guides).unwrap();
        for (o, f) in run.outputs.iter().zip(&frames) {
            assert_eq!(o, f);
        }
    }

    #[test]
    fn single_step_matches_manual_composition() {
        let config = tiny_config();
        let params = VtlnParams::init(&config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let frames = random_frames(5, 2, 3, 5);
        let guides = guides_for(&params, &config, 2, 5);
        let run = open_loop_forward(&params, &config.derivatives, &frames, &guides).unwrap();

        // step-by-step composition from the cell primitives
        let mut h = Array2::zeros((2, 5));
        let batch_aug: Vec<Array2<f64>> = (0..2)
            .map(|b| {
                let seq = Array2::from_shape_fn((5, 3), |(t, j)| frames[t][[b, j]]);
                crate::motion::augment_with_derivatives(&seq, &config.derivatives).unwrap()
            })
            .collect();
        for t in 0..5 {
            let x = Array2::from_shape_fn((2, 12), |(b, j)| batch_aug[b][[t, j]]);
            let (h_new, _) =
                body_gru_cell_forward(&params.body, x.view(), h.view(), guides.guides[t].view(), None).unwrap();
            let (y, _) = decoder_forward(&params.decoder, h_new.view(), frames[t].view(), None).unwrap();
            assert_eq!(y, run.outputs[t], "step {t}");
            h = h_new;
        }
    }

    #[test]
    fn identity_closed_loop_is_zero_velocity() {
        let config = tiny_config();
        let model = Vtln::identity(config.clone()).unwrap();
        let seed = random_frames(4, 1, 3, 6);
        let guides = guides_for(&model.params, &config, 1, 7);
        let run = closed_loop_forward(&model.params, &config.derivatives, &seed, 4, &guides).unwrap();
        for p in closed_loop_predictions(&run, 4) {
            assert_eq!(p, &seed[3]);
        }
    }

    #[test]
    fn closed_loop_one_step_equals_open_loop_at_boundary() {
        let config = tiny_config();
        let params = VtlnParams::init(&config, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let seed = random_frames(4, 2, 3, 9);
        let guides = guides_for(&params, &config, 2, 5);
        let closed = closed_loop_forward(&params, &config.derivatives, &seed, 1, &guides).unwrap();
        let open = open_loop_forward(&params, &config.derivatives, &seed, &guides).unwrap();
        assert_eq!(closed_loop_predictions(&closed, 1)[0], open.outputs[3]);
    }

    #[test]
    fn closed_loop_inputs_match_batch_augmentation() {
        let config = tiny_config();
        let params = VtlnParams::init(&config, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let seed = random_frames(4, 1, 3, 11);
        let guides = guides_for(&params, &config, 1, 10);
        let run = closed_loop_forward(&params, &config.derivatives, &seed, 6, &guides).unwrap();
        // inputs are [seed ‖ predictions]; re-running them open loop must
        // reproduce the closed-loop outputs exactly
        let open = open_loop_forward(&params, &config.derivatives, &run.inputs, &guides).unwrap();
        assert_eq!(open.outputs, run.outputs);
        for (t, frame) in run.inputs.iter().enumerate().skip(4) {
            assert_eq!(frame, &run.outputs[t - 1]);
        }
    }

    #[test]
    fn reversed_guides_change_outputs() {
        let config = tiny_config();
        let params = VtlnParams::init(&config, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let frames = random_frames(8, 2, 3, 13);
        let guides = guides_for(&params, &config, 2, 8);
        let a = open_loop_forward(&params, &config.derivatives, &frames, &guides).unwrap();
        let b = open_loop_forward(&params, &config.derivatives, &frames, &guides.reversed()).unwrap();
        assert_ne!(a.outputs, b.outputs);
    }

    #[test]
    fn exploding_weights_trip_the_guard() {
        let config = tiny_config();
        let mut params = VtlnParams::init(&config, &mut ChaCha8Rng::seed_from_u64(14)).unwrap();
        params.decoder.w_out.fill(1e7);
        let seed = random_frames(4, 1, 3, 15);
        let guides = guides_for(&params, &config, 1, 60);
        let err = closed_loop_forward(&params, &config.derivatives, &seed, 50, &guides).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn parameter_count_by_hand() {
        let mut c = VtlnConfig::new(1, 1, 1);
        c.derivatives = DerivativeSpec::none();
        c.use_bias = false;
        c.seed_frames = 1;
        // noise 3·(1+1) + μ + logΣ = 8; body 3·(1+1) + 3 guide = 9; decoder 1
        assert_eq!(count_parameters(&c), 18);
        let params = VtlnParams::zeros(&c);
        assert_eq!(params.num_scalars(), 18);
    }

    #[test]
    fn parameter_count_matches_tensors() {
        for bias in [true, false] {
            let mut c = tiny_config();
            c.use_bias = bias;
            let p = VtlnParams::init(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(p.num_scalars(), count_parameters(&c));
        }
    }

    #[test]
    fn doubling_joint_dim_delta() {
        let c = tiny_config();
        let mut c2 = c.clone();
        c2.joint_dim *= 2;
        // only the body input weights (3·H_b·4D) and decoder (H_b·D + D) grow
        let d = c.joint_dim;
        let hb = c.hidden_body;
        let want = 3 * hb * c.derivatives.blocks() * d + hb * d + d;
        assert_eq!(count_parameters(&c2) - count_parameters(&c), want);
    }

    #[test]
    fn feed_patterns() {
        let ac = FeedPattern::AutoConditioned { block: 5 };
        let self_fed: Vec<usize> = (0..20).filter(|&t| !ac.uses_ground_truth(t)).collect();
        // 1-based steps 6..10 and 16..20
        assert_eq!(self_fed, (5..10).chain(15..20).collect::<Vec<_>>());
        let closed = FeedPattern::Closed { prime: 3 };
        assert!(closed.uses_ground_truth(2) && !closed.uses_ground_truth(3));
    }

    #[test]
    fn synthesize_identity_repeats_last_seed_frame() {
        let mut config = tiny_config();
        config.seed_frames = 4;
        let model = Vtln::identity(config).unwrap();
        let seed = Array2::from_shape_fn((6, 3), |(t, j)| (t * 3 + j) as f64 * 0.1);
        let eps = draw_eps(3, 4, &mut ChaCha8Rng::seed_from_u64(0));
        let out = model.synthesize(seed.view(), 1, 5, eps.view()).unwrap();
        assert_eq!(out.len(), 3);
        for trial in out {
            for row in trial.rows() {
                assert_eq!(row, seed.row(5));
            }
        }
    }
}
