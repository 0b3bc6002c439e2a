//! GRU cells, the guide-conditioned body cell and the linear decoder, with
//! hand-written backward passes.
//!
//! Every operation is batched: inputs are `B × width` with one row per
//! sequence, so a whole mini-batch advances one time step per call and the
//! heavy lifting is a handful of matrix products.
//!
//! Cell update (the body cell adds the `V · p` terms, the plain cell omits
//! them):
//!
//! ```text
//! r  = σ(W_r x + U_r h + V_r p + b_r)
//! z  = σ(W_z x + U_z h + V_z p + b_z)
//! h~ = tanh(W x + U (r ⊙ h) + V p + b)
//! h' = z ⊙ h + (1 - z) ⊙ h~
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_r: Array2<f64>,
    pub w_z: Array2<f64>,
    pub w: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u: Array2<f64>,
    pub b_r: Array1<f64>,
    pub b_z: Array1<f64>,
    pub b: Array1<f64>,
    /// When false the bias vectors stay at zero and are not trained.
    pub use_bias: bool,
}

/// Guide-to-hidden projections of the body cell, each `H × P`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideWeights {
    pub v_r: Array2<f64>,
    pub v_z: Array2<f64>,
    pub v: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyGruParams {
    pub gru: GruParams,
    pub guide: GuideWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    /// Adds the joint-angle block of the input to the output.
    pub residual_output: bool,
    pub use_bias: bool,
}

fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

impl GruParams {
    pub fn zeros(hidden: usize, input: usize, use_bias: bool) -> Self {
        Self {
            w_r: Array2::zeros((hidden, input)),
            w_z: Array2::zeros((hidden, input)),
            w: Array2::zeros((hidden, input)),
            u_r: Array2::zeros((hidden, hidden)),
            u_z: Array2::zeros((hidden, hidden)),
            u: Array2::zeros((hidden, hidden)),
            b_r: Array1::zeros(hidden),
            b_z: Array1::zeros(hidden),
            b: Array1::zeros(hidden),
            use_bias,
        }
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init<R: Rng + ?Sized>(hidden: usize, input: usize, use_bias: bool, rng: &mut R) -> Self {
        Self {
            w_r: uniform(hidden, input, rng),
            w_z: uniform(hidden, input, rng),
            w: uniform(hidden, input, rng),
            u_r: uniform(hidden, hidden, rng),
            u_z: uniform(hidden, hidden, rng),
            u: uniform(hidden, hidden, rng),
            b_r: Array1::zeros(hidden),
            b_z: Array1::zeros(hidden),
            b: Array1::zeros(hidden),
            use_bias,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.u.nrows()
    }

    pub fn input_size(&self) -> usize {
        self.w.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hidden_size(), self.input_size(), self.use_bias)
    }

    pub fn num_scalars(&self) -> usize {
        let (h, i) = (self.hidden_size(), self.input_size());
        3 * (h * i + h * h) + if self.use_bias { 3 * h } else { 0 }
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        for (name, m) in [
            ("w_r", &self.w_r),
            ("w_z", &self.w_z),
            ("w", &self.w),
            ("u_r", &self.u_r),
            ("u_z", &self.u_z),
            ("u", &self.u),
        ] {
            out.push((format!("{prefix}.{name}"), m.view().into_dyn()));
        }
        if self.use_bias {
            for (name, v) in [("b_r", &self.b_r), ("b_z", &self.b_z), ("b", &self.b)] {
                out.push((format!("{prefix}.{name}"), v.view().into_dyn()));
            }
        }
    }

    pub(crate) fn collect_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>,
    ) {
        let Self {
            w_r,
            w_z,
            w,
            u_r,
            u_z,
            u,
            b_r,
            b_z,
            b,
            use_bias,
        } = self;
        for (name, m) in [("w_r", w_r), ("w_z", w_z), ("w", w), ("u_r", u_r), ("u_z", u_z), ("u", u)] {
            out.push((format!("{prefix}.{name}"), m.view_mut().into_dyn()));
        }
        if *use_bias {
            for (name, v) in [("b_r", b_r), ("b_z", b_z), ("b", b)] {
                out.push((format!("{prefix}.{name}"), v.view_mut().into_dyn()));
            }
        }
    }
}

impl GuideWeights {
    pub fn zeros(hidden: usize, guide: usize) -> Self {
        Self {
            v_r: Array2::zeros((hidden, guide)),
            v_z: Array2::zeros((hidden, guide)),
            v: Array2::zeros((hidden, guide)),
        }
    }

    pub fn guide_size(&self) -> usize {
        self.v.ncols()
    }
}

impl BodyGruParams {
    pub fn zeros(hidden: usize, input: usize, guide: usize, use_bias: bool) -> Self {
        Self {
            gru: GruParams::zeros(hidden, input, use_bias),
            guide: GuideWeights::zeros(hidden, guide),
        }
    }

    pub fn init<R: Rng + ?Sized>(
        hidden: usize,
        input: usize,
        guide: usize,
        use_bias: bool,
        rng: &mut R,
    ) -> Self {
        let gru = GruParams::init(hidden, input, use_bias, rng);
        let guide = GuideWeights {
            v_r: uniform(hidden, guide, rng),
            v_z: uniform(hidden, guide, rng),
            v: uniform(hidden, guide, rng),
        };
        Self { gru, guide }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.gru.hidden_size(),
            self.gru.input_size(),
            self.guide.guide_size(),
            self.gru.use_bias,
        )
    }

    pub fn num_scalars(&self) -> usize {
        self.gru.num_scalars() + 3 * self.guide.v.len()
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.gru.collect(prefix, out);
        for (name, m) in [("v_r", &self.guide.v_r), ("v_z", &self.guide.v_z), ("v", &self.guide.v)] {
            out.push((format!("{prefix}.{name}"), m.view().into_dyn()));
        }
    }

    pub(crate) fn collect_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>,
    ) {
        self.gru.collect_mut(prefix, out);
        let GuideWeights { v_r, v_z, v } = &mut self.guide;
        for (name, m) in [("v_r", v_r), ("v_z", v_z), ("v", v)] {
            out.push((format!("{prefix}.{name}"), m.view_mut().into_dyn()));
        }
    }
}

impl DecoderParams {
    pub fn zeros(out: usize, hidden: usize, residual_output: bool, use_bias: bool) -> Self {
        Self {
            w_out: Array2::zeros((out, hidden)),
            b_out: Array1::zeros(out),
            residual_output,
            use_bias,
        }
    }

    pub fn init<R: Rng + ?Sized>(
        out: usize,
        hidden: usize,
        residual_output: bool,
        use_bias: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            w_out: uniform(out, hidden, rng),
            b_out: Array1::zeros(out),
            residual_output,
            use_bias,
        }
    }

    pub fn output_size(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.w_out.nrows(), self.w_out.ncols(), self.residual_output, self.use_bias)
    }

    pub fn num_scalars(&self) -> usize {
        self.w_out.len() + if self.use_bias { self.b_out.len() } else { 0 }
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((format!("{prefix}.w_out"), self.w_out.view().into_dyn()));
        if self.use_bias {
            out.push((format!("{prefix}.b_out"), self.b_out.view().into_dyn()));
        }
    }

    pub(crate) fn collect_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>,
    ) {
        out.push((format!("{prefix}.w_out"), self.w_out.view_mut().into_dyn()));
        if self.use_bias {
            out.push((format!("{prefix}.b_out"), self.b_out.view_mut().into_dyn()));
        }
    }
}

/// Intermediates of one cell step, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct CellCache {
    /// Input after dropout.
    x: Array2<f64>,
    mask: Option<Array2<f64>>,
    h_prev: Array2<f64>,
    guide: Option<Array2<f64>>,
    r: Array2<f64>,
    z: Array2<f64>,
    candidate: Array2<f64>,
    rh: Array2<f64>,
}

impl CellCache {
    pub fn reset_gate(&self) -> &Array2<f64> {
        &self.r
    }

    pub fn update_gate(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn candidate(&self) -> &Array2<f64> {
        &self.candidate
    }
}

/// Gradients with respect to the inputs of one cell step.
#[derive(Debug, Clone)]
pub struct CellInputGrads {
    pub dx: Array2<f64>,
    pub dh_prev: Array2<f64>,
    pub dguide: Option<Array2<f64>>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `out = a · bᵀ + out`.
fn gemm_nt(a: &ArrayView2<'_, f64>, b: &Array2<f64>, out: &mut Array2<f64>) {
    general_mat_mul(1.0, a, &b.t(), 1.0, out);
}

fn check_cols(what: &str, m: &ArrayView2<'_, f64>, cols: usize, rows: usize) -> Result<()> {
    if m.ncols() != cols || m.nrows() != rows {
        return Err(Error::dims(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn cell_forward(
    p: &GruParams,
    guide_w: Option<&GuideWeights>,
    x: ArrayView2<'_, f64>,
    h_prev: ArrayView2<'_, f64>,
    guide: Option<ArrayView2<'_, f64>>,
    mask: Option<&Array2<f64>>,
) -> Result<(Array2<f64>, CellCache)> {
    let batch = x.nrows();
    let hidden = p.hidden_size();
    check_cols("input", &x, p.input_size(), batch)?;
    check_cols("hidden state", &h_prev, hidden, batch)?;
    if let Some(m) = mask {
        check_cols("dropout mask", &m.view(), p.input_size(), batch)?;
    }
    let x = match mask {
        Some(m) => &x * m,
        None => x.to_owned(),
    };
    let guide = match (guide_w, guide) {
        (Some(gw), Some(g)) => {
            check_cols("guide", &g, gw.guide_size(), batch)?;
            Some(g.to_owned())
        }
        (None, None) => None,
        _ => return Err(Error::dims("guide vector and guide weights must come together")),
    };

    let mut a_r = Array2::zeros((batch, hidden));
    let mut a_z = Array2::zeros((batch, hidden));
    let mut a_c = Array2::zeros((batch, hidden));
    if p.use_bias {
        a_r += &p.b_r;
        a_z += &p.b_z;
        a_c += &p.b;
    }
    let xv = x.view();
    gemm_nt(&xv, &p.w_r, &mut a_r);
    gemm_nt(&xv, &p.w_z, &mut a_z);
    gemm_nt(&xv, &p.w, &mut a_c);
    gemm_nt(&h_prev, &p.u_r, &mut a_r);
    gemm_nt(&h_prev, &p.u_z, &mut a_z);
    if let (Some(gw), Some(g)) = (guide_w, guide.as_ref()) {
        let gv = g.view();
        gemm_nt(&gv, &gw.v_r, &mut a_r);
        gemm_nt(&gv, &gw.v_z, &mut a_z);
        gemm_nt(&gv, &gw.v, &mut a_c);
    }
    let r = a_r.mapv_into(sigmoid);
    let z = a_z.mapv_into(sigmoid);
    let rh = &r * &h_prev;
    gemm_nt(&rh.view(), &p.u, &mut a_c);
    let candidate = a_c.mapv_into(f64::tanh);

    let mut h_new = Array2::zeros((batch, hidden));
    ndarray::Zip::from(&mut h_new)
        .and(&z)
        .and(&h_prev)
        .and(&candidate)
        .for_each(|o, &z, &h, &c| *o = z * h + (1.0 - z) * c);
    if h_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cell state".into()));
    }
    let cache = CellCache {
        x,
        mask: mask.cloned(),
        h_prev: h_prev.to_owned(),
        guide,
        r,
        z,
        candidate,
        rh,
    };
    Ok((h_new, cache))
}

fn cell_backward(
    p: &GruParams,
    guide_w: Option<&GuideWeights>,
    cache: &CellCache,
    dh_new: ArrayView2<'_, f64>,
    grad: &mut GruParams,
    guide_grad: Option<&mut GuideWeights>,
    need_dx: bool,
) -> Result<CellInputGrads> {
    let batch = cache.x.nrows();
    if cache.x.ncols() != p.input_size()
        || cache.h_prev.ncols() != p.hidden_size()
        || dh_new.dim() != (batch, p.hidden_size())
        || cache.guide.as_ref().map(|g| g.ncols()) != guide_w.map(|g| g.guide_size())
    {
        return Err(Error::StaleCache(format!(
            "cache input {}x{}, hidden {}, params {}x{}",
            batch,
            cache.x.ncols(),
            cache.h_prev.ncols(),
            p.hidden_size(),
            p.input_size()
        )));
    }
    let CellCache {
        x,
        h_prev,
        r,
        z,
        candidate,
        rh,
        ..
    } = cache;

    // Through the convex combination.
    let mut da_c = Array2::zeros(z.raw_dim());
    let mut da_z = Array2::zeros(z.raw_dim());
    ndarray::Zip::from(&mut da_c)
        .and(&mut da_z)
        .and(&dh_new)
        .and(z)
        .and(h_prev)
        .and(candidate)
        .for_each(|dac, daz, &dh, &z, &h, &c| {
            *dac = dh * (1.0 - z) * (1.0 - c * c);
            *daz = dh * (h - c) * z * (1.0 - z);
        });
    let mut dh_prev = &dh_new * z;

    let d_rh = da_c.dot(&p.u);
    let mut da_r = Array2::zeros(z.raw_dim());
    ndarray::Zip::from(&mut da_r)
        .and(&mut dh_prev)
        .and(&d_rh)
        .and(r)
        .and(h_prev)
        .for_each(|dar, dhp, &drh, &r, &h| {
            *dar = drh * h * r * (1.0 - r);
            *dhp += drh * r;
        });

    let da_r_t = da_r.t();
    let da_z_t = da_z.t();
    let da_c_t = da_c.t();
    general_mat_mul(1.0, &da_r_t, x, 1.0, &mut grad.w_r);
    general_mat_mul(1.0, &da_z_t, x, 1.0, &mut grad.w_z);
    general_mat_mul(1.0, &da_c_t, x, 1.0, &mut grad.w);
    general_mat_mul(1.0, &da_r_t, h_prev, 1.0, &mut grad.u_r);
    general_mat_mul(1.0, &da_z_t, h_prev, 1.0, &mut grad.u_z);
    general_mat_mul(1.0, &da_c_t, rh, 1.0, &mut grad.u);
    if p.use_bias {
        grad.b_r += &da_r.sum_axis(Axis(0));
        grad.b_z += &da_z.sum_axis(Axis(0));
        grad.b += &da_c.sum_axis(Axis(0));
    }

    general_mat_mul(1.0, &da_r, &p.u_r, 1.0, &mut dh_prev);
    general_mat_mul(1.0, &da_z, &p.u_z, 1.0, &mut dh_prev);

    let dx = if need_dx {
        let mut dx = da_r.dot(&p.w_r);
        general_mat_mul(1.0, &da_z, &p.w_z, 1.0, &mut dx);
        general_mat_mul(1.0, &da_c, &p.w, 1.0, &mut dx);
        if let Some(m) = &cache.mask {
            dx *= m;
        }
        dx
    } else {
        Array2::zeros(x.raw_dim())
    };

    let dguide = match (guide_w, guide_grad, cache.guide.as_ref()) {
        (Some(gw), Some(gg), Some(g)) => {
            general_mat_mul(1.0, &da_r_t, g, 1.0, &mut gg.v_r);
            general_mat_mul(1.0, &da_z_t, g, 1.0, &mut gg.v_z);
            general_mat_mul(1.0, &da_c_t, g, 1.0, &mut gg.v);
            let mut dg = da_r.dot(&gw.v_r);
            general_mat_mul(1.0, &da_z, &gw.v_z, 1.0, &mut dg);
            general_mat_mul(1.0, &da_c, &gw.v, 1.0, &mut dg);
            Some(dg)
        }
        _ => None,
    };
    Ok(CellInputGrads { dx, dh_prev, dguide })
}

/// One step of the plain GRU (the noise process cell).
pub fn gru_cell_forward(
    p: &GruParams,
    x: ArrayView2<'_, f64>,
    h_prev: ArrayView2<'_, f64>,
    drop_mask: Option<&Array2<f64>>,
) -> Result<(Array2<f64>, CellCache)> {
    cell_forward(p, None, x, h_prev, None, drop_mask)
}

/// Accumulates parameter gradients into `grad` and returns input gradients.
pub fn gru_cell_backward(
    p: &GruParams,
    cache: &CellCache,
    dh_new: ArrayView2<'_, f64>,
    grad: &mut GruParams,
) -> Result<CellInputGrads> {
    cell_backward(p, None, cache, dh_new, grad, None, true)
}

/// One step of the body cell, conditioned on a guide vector per row.
pub fn body_gru_cell_forward(
    p: &BodyGruParams,
    x: ArrayView2<'_, f64>,
    h_prev: ArrayView2<'_, f64>,
    guide: ArrayView2<'_, f64>,
    drop_mask: Option<&Array2<f64>>,
) -> Result<(Array2<f64>, CellCache)> {
    cell_forward(&p.gru, Some(&p.guide), x, h_prev, Some(guide), drop_mask)
}

pub fn body_gru_cell_backward(
    p: &BodyGruParams,
    cache: &CellCache,
    dh_new: ArrayView2<'_, f64>,
    grad: &mut BodyGruParams,
) -> Result<CellInputGrads> {
    cell_backward(
        &p.gru,
        Some(&p.guide),
        cache,
        dh_new,
        &mut grad.gru,
        Some(&mut grad.guide),
        true,
    )
}

/// As [`body_gru_cell_backward`], but leaves `dx` zero when the caller has no
/// use for the input gradient.
pub(crate) fn body_gru_cell_backward_partial(
    p: &BodyGruParams,
    cache: &CellCache,
    dh_new: ArrayView2<'_, f64>,
    grad: &mut BodyGruParams,
    need_dx: bool,
) -> Result<CellInputGrads> {
    cell_backward(
        &p.gru,
        Some(&p.guide),
        cache,
        dh_new,
        &mut grad.gru,
        Some(&mut grad.guide),
        need_dx,
    )
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    h: Array2<f64>,
    mask: Option<Array2<f64>>,
}

/// `ŷ = W_out · h + b_out (+ x_joint)`; `x_joint` holds only the joint-angle
/// block of the input, never the derivative blocks.
pub fn decoder_forward(
    d: &DecoderParams,
    h: ArrayView2<'_, f64>,
    x_joint: ArrayView2<'_, f64>,
    drop_mask: Option<&Array2<f64>>,
) -> Result<(Array2<f64>, DecoderCache)> {
    let batch = h.nrows();
    check_cols("decoder input", &h, d.w_out.ncols(), batch)?;
    if d.residual_output {
        check_cols("joint block", &x_joint, d.output_size(), batch)?;
    }
    let h = match drop_mask {
        Some(m) => {
            check_cols("dropout mask", &m.view(), d.w_out.ncols(), batch)?;
            &h * m
        }
        None => h.to_owned(),
    };
    let mut y = if d.residual_output {
        x_joint.to_owned()
    } else {
        Array2::zeros((batch, d.output_size()))
    };
    if d.use_bias {
        y += &d.b_out;
    }
    gemm_nt(&h.view(), &d.w_out, &mut y);
    Ok((
        y,
        DecoderCache {
            h,
            mask: drop_mask.cloned(),
        },
    ))
}

/// Returns `(dL/dh, dL/dx_joint)`; the joint gradient is `None` without the
/// residual connection.
pub fn decoder_backward(
    d: &DecoderParams,
    cache: &DecoderCache,
    dy: ArrayView2<'_, f64>,
    grad: &mut DecoderParams,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    if cache.h.ncols() != d.w_out.ncols() || dy.ncols() != d.output_size() {
        return Err(Error::StaleCache("decoder cache shape".into()));
    }
    general_mat_mul(1.0, &dy.t(), &cache.h, 1.0, &mut grad.w_out);
    if d.use_bias {
        grad.b_out += &dy.sum_axis(Axis(0));
    }
    let mut dh = dy.dot(&d.w_out);
    if let Some(m) = &cache.mask {
        dh *= m;
    }
    let dx = d.residual_output.then(|| dy.to_owned());
    Ok((dh, dx))
}

/// Inverted-dropout mask: entries are `0` or `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Array2<f64> {
    if rate <= 0.0 {
        return Array2::ones((rows, cols));
    }
    let keep = 1.0 - rate;
    // one 32-bit draw per entry, kept when below keep·2³²
    let threshold = (keep * 4_294_967_296.0).min(u32::MAX as f64) as u32;
    let scale = 1.0 / keep;
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.next_u32() < threshold {
            scale
        } else {
            0.0
        }
    })
}
