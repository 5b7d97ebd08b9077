//! Stacked bidirectional LSTM with highway carry gates.
//!
//! Layer 1 is a plain bidirectional LSTM. From layer 2 upward each direction
//! may carry the cell state of the same direction one layer below through a
//! learned gate `d`:
//!
//! ```text
//! d_t = σ(U_d x_t + w_d ⊙ c_t^{lower} + b_d)
//! c_t = d_t ⊙ c_t^{lower} + f_t ⊙ c_{t-1} + i_t ⊙ tanh(U_c x_t + W_c h_{t-1} + b_c)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! `w_d` is a per-unit (diagonal) weight. The output head is an affine map of
//! the top layer's concatenated `[h_fwd; h_bwd]` at the last time step.
//!
//! Everything runs in `f64` with hand-written reverse-mode gradients through
//! time, both directions, the carry gates and the dropout masks.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{
    build_samples, predict_series, train, AdamW, EpochLoss, Normalization, PredictedPoint,
    TrainConfig, TrainOutcome,
};

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Gate blocks inside the stacked `[4H x ...]` cell matrices.
pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_OUTPUT: usize = 2;
pub const GATE_CANDIDATE: usize = 3;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Input, forget and output gates plus the candidate, stacked in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    /// `[4H x input]`
    pub u: Array2<f64>,
    /// `[4H x H]`
    pub w: Array2<f64>,
    /// `[4H]`
    pub b: Array1<f64>,
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            u: Array2::zeros((4 * hidden, input)),
            w: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w.ncols()
    }

    pub fn input(&self) -> usize {
        self.u.ncols()
    }

    /// Bias slice of one gate block.
    pub fn gate_bias_mut(&mut self, gate: usize) -> ndarray::ArrayViewMut1<'_, f64> {
        let h = self.hidden();
        self.b.slice_mut(s![gate * h..(gate + 1) * h])
    }
}

/// Carry gate of a highway cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HighwayParams {
    /// `[H x input]`
    pub u: Array2<f64>,
    /// `[H]`, applied elementwise to the lower layer's cell state.
    pub w: Array1<f64>,
    /// `[H]`
    pub b: Array1<f64>,
}

impl HighwayParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            u: Array2::zeros((hidden, input)),
            w: Array1::zeros(hidden),
            b: Array1::zeros(hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionParams {
    pub cell: LstmCellParams,
    pub carry: Option<HighwayParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLayerParams {
    pub forward: DirectionParams,
    pub backward: DirectionParams,
}

impl BiLayerParams {
    fn directions(&self) -> [&DirectionParams; 2] {
        [&self.forward, &self.backward]
    }

    fn directions_mut(&mut self) -> [&mut DirectionParams; 2] {
        [&mut self.forward, &mut self.backward]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Whether layers 2 and up get carry gates.
    pub highway: bool,
}

/// All trainable tensors. Gradients and optimizer moments share this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<BiLayerParams>,
    /// `[2H]`
    pub head_w: Array1<f64>,
    pub head_b: f64,
}

impl Network {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        if arch.layers == 0 || arch.hidden == 0 || arch.input == 0 {
            return Err(Error::Validation(format!(
                "layers, hidden size and input width must be positive: {arch:?}"
            )));
        }
        let h = arch.hidden;
        let layers = (0..arch.layers)
            .map(|l| {
                let input = if l == 0 { arch.input } else { 2 * h };
                let dir = || DirectionParams {
                    cell: LstmCellParams::zeros(input, h),
                    carry: (l > 0 && arch.highway).then(|| HighwayParams::zeros(input, h)),
                };
                BiLayerParams {
                    forward: dir(),
                    backward: dir(),
                }
            })
            .collect();
        Ok(Self {
            layers,
            head_w: Array1::zeros(2 * h),
            head_b: 0.0,
        })
    }

    /// Uniform `±1/sqrt(fan_in)` weights, forget-gate bias `+1`.
    pub fn init(arch: &Architecture, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let h = arch.hidden as f64;
        let mut fill = |a: &mut [f64], fan_in: f64| {
            let bound = 1.0 / fan_in.sqrt();
            for v in a {
                *v = rng.random_range(-bound..bound);
            }
        };
        for layer in &mut net.layers {
            for dir in layer.directions_mut() {
                let input = dir.cell.input() as f64;
                fill(dir.cell.u.as_slice_mut().unwrap(), input);
                fill(dir.cell.w.as_slice_mut().unwrap(), h);
                fill(dir.cell.b.as_slice_mut().unwrap(), h);
                dir.cell.gate_bias_mut(GATE_FORGET).fill(1.0);
                if let Some(c) = dir.carry.as_mut() {
                    fill(c.u.as_slice_mut().unwrap(), input);
                    fill(c.w.as_slice_mut().unwrap(), h);
                    fill(c.b.as_slice_mut().unwrap(), h);
                }
            }
        }
        fill(net.head_w.as_slice_mut().unwrap(), 2.0 * h);
        let mut head_b = [0.0];
        fill(&mut head_b, 2.0 * h);
        net.head_b = head_b[0];
        Ok(net)
    }

    pub fn architecture(&self) -> Architecture {
        let first = &self.layers[0].forward.cell;
        Architecture {
            input: first.input(),
            hidden: first.hidden(),
            layers: self.layers.len(),
            highway: self.layers.iter().any(|l| l.forward.carry.is_some()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, a| a.fill(0.0));
        z
    }

    /// Every tensor in a fixed order with a stable name.
    pub fn visit(&self, mut f: impl FnMut(&str, &[usize], &[f64])) {
        for (l, layer) in self.layers.iter().enumerate() {
            for (dir, name) in layer.directions().into_iter().zip(["fwd", "bwd"]) {
                let p = format!("layer{l}.{name}");
                f(&format!("{p}.cell.u"), dir.cell.u.shape(), dir.cell.u.as_slice().unwrap());
                f(&format!("{p}.cell.w"), dir.cell.w.shape(), dir.cell.w.as_slice().unwrap());
                f(&format!("{p}.cell.b"), dir.cell.b.shape(), dir.cell.b.as_slice().unwrap());
                if let Some(c) = &dir.carry {
                    f(&format!("{p}.carry.u"), c.u.shape(), c.u.as_slice().unwrap());
                    f(&format!("{p}.carry.w"), c.w.shape(), c.w.as_slice().unwrap());
                    f(&format!("{p}.carry.b"), c.b.shape(), c.b.as_slice().unwrap());
                }
            }
        }
        f("head.w", self.head_w.shape(), self.head_w.as_slice().unwrap());
        f("head.b", &[1], std::slice::from_ref(&self.head_b));
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (dir, name) in layer.directions_mut().into_iter().zip(["fwd", "bwd"]) {
                let p = format!("layer{l}.{name}");
                f(&format!("{p}.cell.u"), dir.cell.u.as_slice_mut().unwrap());
                f(&format!("{p}.cell.w"), dir.cell.w.as_slice_mut().unwrap());
                f(&format!("{p}.cell.b"), dir.cell.b.as_slice_mut().unwrap());
                if let Some(c) = dir.carry.as_mut() {
                    f(&format!("{p}.carry.u"), c.u.as_slice_mut().unwrap());
                    f(&format!("{p}.carry.w"), c.w.as_slice_mut().unwrap());
                    f(&format!("{p}.carry.b"), c.b.as_slice_mut().unwrap());
                }
            }
        }
        f("head.w", self.head_w.as_slice_mut().unwrap());
        f("head.b", std::slice::from_mut(&mut self.head_b));
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, _, a| n += a.len());
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(|_, _, a| out.extend_from_slice(a));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.visit_mut(|_, a| {
            a.copy_from_slice(&flat[at..at + a.len()]);
            at += a.len();
        });
        debug_assert_eq!(at, flat.len());
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, _, a| ok &= a.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Activations of one cell step for a batch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Array2<f64>,
    pub h_prev: Array2<f64>,
    pub c_prev: Array2<f64>,
    pub i: Array2<f64>,
    pub f: Array2<f64>,
    pub o: Array2<f64>,
    pub g: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub h: Array2<f64>,
    /// Carry gate activation and the lower cell state it gated.
    pub carry: Option<(Array2<f64>, Array2<f64>)>,
}

/// One cell step over a batch: `x [B x in]`, `h_prev`/`c_prev [B x H]`.
pub fn cell_step(
    dir: &DirectionParams,
    x: &Array2<f64>,
    h_prev: &Array2<f64>,
    c_prev: &Array2<f64>,
    c_lower: Option<&Array2<f64>>,
) -> StepCache {
    let hdim = dir.cell.hidden();
    let batch = x.nrows();
    let mut z = Array2::<f64>::zeros((batch, 4 * hdim));
    general_mat_mul(1.0, x, &dir.cell.u.t(), 0.0, &mut z);
    general_mat_mul(1.0, h_prev, &dir.cell.w.t(), 1.0, &mut z);
    z += &dir.cell.b;

    let block = |k: usize| z.slice(s![.., k * hdim..(k + 1) * hdim]);
    let i = block(GATE_INPUT).mapv(sigmoid);
    let f = block(GATE_FORGET).mapv(sigmoid);
    let o = block(GATE_OUTPUT).mapv(sigmoid);
    let g = block(GATE_CANDIDATE).mapv(f64::tanh);

    let mut c = &f * c_prev + &i * &g;
    let carry = match (&dir.carry, c_lower) {
        (Some(hw), Some(lower)) => {
            let mut zd = Array2::<f64>::zeros((batch, hdim));
            general_mat_mul(1.0, x, &hw.u.t(), 0.0, &mut zd);
            zd += &(lower * &hw.w);
            zd += &hw.b;
            let d = zd.mapv(sigmoid);
            c += &(&d * lower);
            Some((d, lower.clone()))
        }
        _ => None,
    };
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;
    StepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        i,
        f,
        o,
        g,
        c,
        tanh_c,
        h,
        carry,
    }
}

/// Gradients flowing out of one step.
struct StepGrads {
    dx: Array2<f64>,
    dh_prev: Array2<f64>,
    dc_prev: Array2<f64>,
    dc_lower: Option<Array2<f64>>,
}

/// Reverse of [`cell_step`]; parameter gradients are accumulated into `grad`.
fn cell_step_backward(
    dir: &DirectionParams,
    cache: &StepCache,
    dh: &Array2<f64>,
    dc_in: &Array2<f64>,
    grad: &mut DirectionParams,
) -> StepGrads {
    let d_o = dh * &cache.tanh_c;
    let mut dc = dc_in.clone();
    Zip::from(&mut dc)
        .and(dh)
        .and(&cache.o)
        .and(&cache.tanh_c)
        .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));

    let batch = dh.nrows();
    let hdim = dh.ncols();
    let mut dz = Array2::<f64>::zeros((batch, 4 * hdim));
    {
        let (mut zi, rest) = dz.view_mut().split_at(Axis(1), hdim);
        let (mut zf, rest) = rest.split_at(Axis(1), hdim);
        let (mut zo, mut zg) = rest.split_at(Axis(1), hdim);
        Zip::from(&mut zi)
            .and(&dc)
            .and(&cache.g)
            .and(&cache.i)
            .for_each(|z, &dc, &g, &i| *z = dc * g * i * (1.0 - i));
        Zip::from(&mut zf)
            .and(&dc)
            .and(&cache.c_prev)
            .and(&cache.f)
            .for_each(|z, &dc, &cp, &f| *z = dc * cp * f * (1.0 - f));
        Zip::from(&mut zo)
            .and(&d_o)
            .and(&cache.o)
            .for_each(|z, &d, &o| *z = d * o * (1.0 - o));
        Zip::from(&mut zg)
            .and(&dc)
            .and(&cache.i)
            .and(&cache.g)
            .for_each(|z, &dc, &i, &g| *z = dc * i * (1.0 - g * g));
    }

    general_mat_mul(1.0, &dz.t(), &cache.x, 1.0, &mut grad.cell.u);
    general_mat_mul(1.0, &dz.t(), &cache.h_prev, 1.0, &mut grad.cell.w);
    grad.cell.b += &dz.sum_axis(Axis(0));

    let mut dx = dz.dot(&dir.cell.u);
    let dh_prev = dz.dot(&dir.cell.w);
    let dc_prev = &dc * &cache.f;

    let dc_lower = match (&cache.carry, &dir.carry, grad.carry.as_mut()) {
        (Some((d, lower)), Some(hw), Some(ghw)) => {
            let mut dzd = Array2::<f64>::zeros((batch, hdim));
            Zip::from(&mut dzd)
                .and(&dc)
                .and(lower)
                .and(d)
                .for_each(|z, &dc, &cl, &d| *z = dc * cl * d * (1.0 - d));
            general_mat_mul(1.0, &dzd.t(), &cache.x, 1.0, &mut ghw.u);
            ghw.w += &(&dzd * lower).sum_axis(Axis(0));
            ghw.b += &dzd.sum_axis(Axis(0));
            general_mat_mul(1.0, &dzd, &hw.u, 1.0, &mut dx);
            Some(&dc * d + &dzd * &hw.w)
        }
        _ => None,
    };

    StepGrads {
        dx,
        dh_prev,
        dc_prev,
        dc_lower,
    }
}

fn check_vec(name: &str, len: usize, want: usize) -> Result<()> {
    if len == want {
        Ok(())
    } else {
        Err(Error::Shape(format!("{name} has length {len}, expected {want}")))
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}

/// Single plain LSTM step; returns `(h_t, c_t)`.
pub fn lstm_cell_forward(
    params: &LstmCellParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hdim = params.hidden();
    check_vec("x", x.len(), params.input())?;
    check_vec("h_prev", h_prev.len(), hdim)?;
    check_vec("c_prev", c_prev.len(), hdim)?;
    let dir = DirectionParams {
        cell: params.clone(),
        carry: None,
    };
    let step = cell_step(&dir, &row(x), &row(h_prev), &row(c_prev), None);
    Ok((step.h.row(0).to_vec(), step.c.row(0).to_vec()))
}

/// Single highway step using `c_lower`, the same direction's cell state one
/// layer below at the same time step.
pub fn highway_cell_forward(
    params: &LstmCellParams,
    highway: &HighwayParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    c_lower: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hdim = params.hidden();
    check_vec("x", x.len(), params.input())?;
    check_vec("h_prev", h_prev.len(), hdim)?;
    check_vec("c_prev", c_prev.len(), hdim)?;
    check_vec("c_lower", c_lower.len(), hdim)?;
    if highway.u.dim() != (hdim, params.input()) || highway.w.len() != hdim || highway.b.len() != hdim {
        return Err(Error::Shape("highway parameters do not match the cell".into()));
    }
    let dir = DirectionParams {
        cell: params.clone(),
        carry: Some(highway.clone()),
    };
    let step = cell_step(&dir, &row(x), &row(h_prev), &row(c_prev), Some(&row(c_lower)));
    Ok((step.h.row(0).to_vec(), step.c.row(0).to_vec()))
}

/// Cached activations of one bidirectional layer, indexed by time step.
#[derive(Debug, Clone)]
pub struct LayerTape {
    pub forward: Vec<StepCache>,
    pub backward: Vec<StepCache>,
    /// Inverted-dropout masks applied to this layer's input, if any.
    pub input_mask: Option<Vec<Array2<f64>>>,
}

impl LayerTape {
    /// `[B x 2H]` concatenated output at step `t`.
    pub fn output(&self, t: usize) -> Array2<f64> {
        concatenate![Axis(1), self.forward[t].h, self.backward[t].h]
    }
}

#[derive(Debug, Clone)]
pub struct Tape {
    pub layers: Vec<LayerTape>,
    pub predictions: Array1<f64>,
}

pub enum Mode<'a> {
    Eval,
    /// Dropout active, masks drawn from the given generator.
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

fn run_direction(
    dir: &DirectionParams,
    inputs: &[Array2<f64>],
    lower: Option<&[StepCache]>,
    reverse: bool,
) -> Vec<StepCache> {
    let t_len = inputs.len();
    let batch = inputs[0].nrows();
    let hdim = dir.cell.hidden();
    let mut h = Array2::zeros((batch, hdim));
    let mut c = Array2::zeros((batch, hdim));
    let mut out: Vec<Option<StepCache>> = vec![None; t_len];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    };
    for t in order {
        let c_lower = lower.map(|l| &l[t].c);
        let step = cell_step(dir, &inputs[t], &h, &c, c_lower);
        h = step.h.clone();
        c = step.c.clone();
        out[t] = Some(step);
    }
    out.into_iter().map(|s| s.expect("every step visited")).collect()
}

/// Bidirectional pass over `inputs` (time-major, each `[B x in]`). Lower
/// cell states are only consulted by directions that have carry gates.
pub fn bilstm_layer_forward(
    layer: &BiLayerParams,
    inputs: &[Array2<f64>],
    lower: Option<&LayerTape>,
) -> Result<LayerTape> {
    if inputs.is_empty() {
        return Err(Error::InsufficientData("empty input sequence".into()));
    }
    let want = layer.forward.cell.input();
    if let Some(bad) = inputs.iter().find(|x| x.ncols() != want) {
        return Err(Error::Shape(format!("input width {} != {want}", bad.ncols())));
    }
    if layer.forward.carry.is_some() && lower.is_none() {
        return Err(Error::Shape("highway layer needs the lower layer's cell states".into()));
    }
    Ok(LayerTape {
        forward: run_direction(&layer.forward, inputs, lower.map(|l| l.forward.as_slice()), false),
        backward: run_direction(&layer.backward, inputs, lower.map(|l| l.backward.as_slice()), true),
        input_mask: None,
    })
}

/// Stacks `B` windows `[T x F]` into `T` time-major matrices `[B x F]`.
pub fn time_major(windows: &[ArrayView2<'_, f64>]) -> Result<Vec<Array2<f64>>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InsufficientData("empty batch".into()))?;
    let (t_len, width) = first.dim();
    if t_len == 0 {
        return Err(Error::InsufficientData("empty window".into()));
    }
    if windows.iter().any(|w| w.dim() != (t_len, width)) {
        return Err(Error::Shape("windows in a batch differ in shape".into()));
    }
    Ok((0..t_len)
        .map(|t| Array2::from_shape_fn((windows.len(), width), |(b, j)| windows[b][[t, j]]))
        .collect())
}

impl Network {
    pub fn forward(&self, inputs: &[Array2<f64>], mode: Mode<'_>) -> Result<Tape> {
        if inputs.is_empty() {
            return Err(Error::InsufficientData("empty input sequence".into()));
        }
        let width = self.layers[0].forward.cell.input();
        if inputs[0].ncols() != width {
            return Err(Error::Shape(format!(
                "feature width {} does not match model input {width}",
                inputs[0].ncols()
            )));
        }
        let (dropout, mut rng) = match mode {
            Mode::Eval => (0.0, None),
            Mode::Train { dropout, rng } => (dropout, Some(rng)),
        };
        let t_len = inputs.len();
        let mut tapes: Vec<LayerTape> = Vec::with_capacity(self.layers.len());
        let mut current: Vec<Array2<f64>> = inputs.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut mask = None;
            if l > 0 && dropout > 0.0 {
                if let Some(rng) = rng.as_deref_mut() {
                    let keep = 1.0 - dropout;
                    let masks: Vec<Array2<f64>> = current
                        .iter()
                        .map(|x| {
                            Array2::from_shape_simple_fn(x.dim(), || {
                                if rng.random::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                        })
                        .collect();
                    for (x, m) in current.iter_mut().zip(&masks) {
                        *x *= m;
                    }
                    mask = Some(masks);
                }
            }
            let mut tape = bilstm_layer_forward(layer, &current, tapes.last())?;
            tape.input_mask = mask;
            current = (0..t_len).map(|t| tape.output(t)).collect();
            tapes.push(tape);
        }
        let last = &current[t_len - 1];
        let predictions = last.dot(&self.head_w) + self.head_b;
        Ok(Tape {
            layers: tapes,
            predictions,
        })
    }

    /// Reverse-mode gradients of a loss whose derivative with respect to the
    /// batch predictions is `d_pred`.
    pub fn backward(&self, tape: &Tape, d_pred: &Array1<f64>) -> Network {
        let mut grad = self.zeros_like();
        let top = tape.layers.last().expect("at least one layer");
        let t_len = top.forward.len();
        let hdim = self.layers[0].forward.cell.hidden();
        let batch = d_pred.len();

        let last_out = top.output(t_len - 1);
        grad.head_w = last_out.t().dot(d_pred);
        grad.head_b = d_pred.sum();

        let zeros = || Array2::<f64>::zeros((batch, hdim));
        let mut d_out: Vec<Array2<f64>> = vec![Array2::zeros((batch, 2 * hdim)); t_len];
        d_out[t_len - 1] = d_pred
            .view()
            .insert_axis(Axis(1))
            .dot(&self.head_w.view().insert_axis(Axis(0)));
        let mut dc_ext: [Vec<Array2<f64>>; 2] = [vec![zeros(); t_len], vec![zeros(); t_len]];

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let layer_tape = &tape.layers[l];
            let in_width = layer.forward.cell.input();
            let mut d_in: Vec<Array2<f64>> = vec![Array2::zeros((batch, in_width)); t_len];
            let mut next_dc_ext: [Vec<Array2<f64>>; 2] = [vec![zeros(); t_len], vec![zeros(); t_len]];

            let grad_layer = &mut grad.layers[l];
            let jobs = [
                (&layer.forward, &layer_tape.forward, &mut grad_layer.forward, 0usize),
                (&layer.backward, &layer_tape.backward, &mut grad_layer.backward, 1usize),
            ];
            for (dir, steps, gdir, k) in jobs {
                // Reverse of the processing order.
                let order: Vec<usize> = if k == 0 {
                    (0..t_len).rev().collect()
                } else {
                    (0..t_len).collect()
                };
                let mut dh_next = zeros();
                let mut dc_next = zeros();
                for t in order {
                    let dh = &d_out[t].slice(s![.., k * hdim..(k + 1) * hdim]) + &dh_next;
                    let dc_in = &dc_next + &dc_ext[k][t];
                    let g = cell_step_backward(dir, &steps[t], &dh, &dc_in, gdir);
                    d_in[t] += &g.dx;
                    dh_next = g.dh_prev;
                    dc_next = g.dc_prev;
                    if let Some(dcl) = g.dc_lower {
                        next_dc_ext[k][t] = dcl;
                    }
                }
            }
            if let Some(masks) = &layer_tape.input_mask {
                for (d, m) in d_in.iter_mut().zip(masks) {
                    *d *= m;
                }
            }
            d_out = d_in;
            dc_ext = next_dc_ext;
        }
        grad
    }
}

/// Mean squared error of `pred` against `target` and its derivative.
pub fn mse_with_grad(pred: &Array1<f64>, target: &Array1<f64>) -> (f64, Array1<f64>) {
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.mapv(|d| d * d).sum() / n;
    (loss, diff * (2.0 / n))
}

/// Parameters plus everything needed to turn raw feature windows into
/// price forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub network: Network,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
    pub window: usize,
    pub normalization: Option<Normalization>,
}

impl ForecastModel {
    pub fn new(input: usize, config: &TrainConfig) -> Result<Self> {
        let arch = config.architecture(input);
        let mut rng = crate::rng::substream(config.seed, crate::rng::Stream::Init);
        Ok(Self {
            network: Network::init(&arch, &mut rng)?,
            config: config.clone(),
            feature_names: Vec::new(),
            window: 0,
            normalization: None,
        })
    }

    pub fn input_width(&self) -> usize {
        self.network.layers[0].forward.cell.input()
    }

    /// Prediction for one already-normalized window `[T x F]`.
    pub fn forward_one(&self, window: ArrayView2<'_, f64>, mode: Mode<'_>) -> Result<f64> {
        let inputs = time_major(&[window])?;
        Ok(self.network.forward(&inputs, mode)?.predictions[0])
    }
}

/// Single-window forward pass in the given mode.
pub fn model_forward(model: &ForecastModel, window: ArrayView2<'_, f64>, mode: Mode<'_>) -> Result<f64> {
    if window.ncols() != model.input_width() {
        return Err(Error::Shape(format!(
            "window has {} features, model expects {}",
            window.ncols(),
            model.input_width()
        )));
    }
    model.forward_one(window, mode)
}
