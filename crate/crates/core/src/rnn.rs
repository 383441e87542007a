//! Stacked RNN / GRU / LSTM networks for sequence-to-one regression, with
//! exact gradients by backpropagation through time.
//!
//! Gate blocks are stored stacked along the output dimension of each weight
//! matrix, in the order `[z, r, n]` for GRU and `[i, f, g, o]` for LSTM.
//! Dropout is applied to each layer's output sequence before it feeds the
//! next layer, and to the last hidden state before the linear head; the
//! recurrent connections are never dropped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_LAYERS: usize = 5;
pub const MAX_UNITS: usize = 512;
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellType {
    Rnn,
    Gru,
    Lstm,
}

impl CellType {
    pub const ALL: [CellType; 3] = [CellType::Rnn, CellType::Gru, CellType::Lstm];

    /// Number of stacked gate blocks per layer.
    pub fn gates(self) -> usize {
        match self {
            CellType::Rnn => 1,
            CellType::Gru => 3,
            CellType::Lstm => 4,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            CellType::Rnn => 0,
            CellType::Gru => 1,
            CellType::Lstm => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            CellType::Rnn => "rnn",
            CellType::Gru => "gru",
            CellType::Lstm => "lstm",
        }
    }
}

impl std::fmt::Display for CellType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CellType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(CellType::Rnn),
            "gru" => Ok(CellType::Gru),
            "lstm" => Ok(CellType::Lstm),
            _ => Err(Error::InvalidArgument(format!("unknown cell type `{s}`"))),
        }
    }
}

/// Half-width of the uniform initialization interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `[-√n, √n]` with `n` the number of input features.
    #[default]
    SqrtFeatures,
    /// `[-1/√n, 1/√n]`.
    InvSqrtFeatures,
}

impl InitScheme {
    pub fn bound(self, n_features: usize) -> f64 {
        let root = (n_features as f64).sqrt();
        match self {
            InitScheme::SqrtFeatures => root,
            InitScheme::InvSqrtFeatures => 1.0 / root,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub cell: CellType,
    pub layer_sizes: Vec<usize>,
    pub dropout: f64,
    #[serde(default)]
    pub init: InitScheme,
}

impl Architecture {
    pub fn new(cell: CellType, layer_sizes: Vec<usize>) -> Self {
        Self { cell, layer_sizes, dropout: DEFAULT_DROPOUT, init: InitScheme::default() }
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn with_init(mut self, init: InitScheme) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layer_sizes.len();
        if !(1..=MAX_LAYERS).contains(&n) {
            return Err(Error::InvalidArchitecture(format!("{n} layers, expected 1..={MAX_LAYERS}")));
        }
        if let Some(&u) = self.layer_sizes.iter().find(|&&u| !(1..=MAX_UNITS).contains(&u)) {
            return Err(Error::InvalidArchitecture(format!("{u} units, expected 1..={MAX_UNITS}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArchitecture(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub units: usize,
    pub fan_in: usize,
    /// `(gates·units) × fan_in`, row-major.
    pub input_weights: Vec<f64>,
    /// `(gates·units) × units`, row-major.
    pub recurrent_weights: Vec<f64>,
    /// `gates·units`.
    pub biases: Vec<f64>,
}

impl LayerParams {
    fn zeros(cell: CellType, fan_in: usize, units: usize) -> Self {
        let g = cell.gates() * units;
        Self {
            units,
            fan_in,
            input_weights: vec![0.0; g * fan_in],
            recurrent_weights: vec![0.0; g * units],
            biases: vec![0.0; g],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub cell: CellType,
    pub n_features: usize,
    pub layers: Vec<LayerParams>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
    pub dropout: f64,
}

impl NetworkParams {
    /// All-zero parameters with the given shape.
    pub fn zeros(cell: CellType, layer_sizes: &[usize], n_features: usize, dropout: f64) -> Self {
        let mut fan_in = n_features;
        let layers = layer_sizes
            .iter()
            .map(|&units| {
                let layer = LayerParams::zeros(cell, fan_in, units);
                fan_in = units;
                layer
            })
            .collect();
        Self { cell, n_features, layers, head_weights: vec![0.0; fan_in], head_bias: 0.0, dropout }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cell, &self.layer_sizes(), self.n_features, self.dropout)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.units).collect()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.cell, self.layer_sizes()).with_dropout(self.dropout)
    }

    /// Every parameter array in a fixed order: per layer input weights,
    /// recurrent weights, biases; then head weights and head bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(&l.input_weights);
            out.push(&l.recurrent_weights);
            out.push(&l.biases);
        }
        out.push(&self.head_weights);
        out.push(std::slice::from_ref(&self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(&mut l.input_weights);
            out.push(&mut l.recurrent_weights);
            out.push(&mut l.biases);
        }
        out.push(&mut self.head_weights);
        out.push(std::slice::from_mut(&mut self.head_bias));
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale · other`, element by element in tensor order.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn same_shape(&self, other: &NetworkParams) -> bool {
        self.cell == other.cell && self.n_features == other.n_features && self.layer_sizes() == other.layer_sizes()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Uniform initialization of every weight and bias, deterministic in `seed`.
pub fn init_params(arch: &Architecture, n_features: usize, seed: u64) -> Result<NetworkParams> {
    arch.validate()?;
    if n_features == 0 {
        return Err(Error::InvalidArchitecture("network needs at least one feature".into()));
    }
    let bound = arch.init.bound(n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(arch.cell, &arch.layer_sizes, n_features, arch.dropout);
    for tensor in params.tensors_mut() {
        for x in tensor.iter_mut() {
            *x = rng.random_range(-bound..=bound);
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    /// `steps × fan_in`; already multiplied by the dropout mask of the layer below.
    pub inputs: Vec<f64>,
    /// `(steps + 1) × units`; row 0 is the zero initial state.
    pub hidden: Vec<f64>,
    /// `steps × gates·units`, post-activation gate values.
    pub gates: Vec<f64>,
    /// LSTM cell states, `(steps + 1) × units`; empty otherwise.
    pub cells: Vec<f64>,
    /// Inverted-dropout scale factors applied to this layer's output:
    /// `steps × units` for inner layers, `units` for the last layer.
    pub mask: Option<Vec<f64>>,
}

/// Everything the backward pass needs from a train-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub steps: usize,
    pub layers: Vec<LayerCache>,
    pub head_input: Vec<f64>,
    pub prediction: f64,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += W·x` with `W` row-major `out.len() × x.len()`.
#[inline]
fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *o += s;
    }
}

/// `out += Wᵀ·d` with `W` row-major `d.len() × out.len()`.
#[inline]
fn matvec_t_acc(out: &mut [f64], w: &[f64], d: &[f64]) {
    let cols = out.len();
    for (&di, row) in d.iter().zip(w.chunks_exact(cols)) {
        if di == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += di * a;
        }
    }
}

/// `g += d ⊗ x`, `g` row-major `d.len() × x.len()`.
#[inline]
fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (&di, row) in d.iter().zip(g.chunks_exact_mut(cols)) {
        if di == 0.0 {
            continue;
        }
        for (a, b) in row.iter_mut().zip(x) {
            *a += di * b;
        }
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

fn layer_forward(cell: CellType, layer: &LayerParams, inputs: Vec<f64>, steps: usize) -> LayerCache {
    let u = layer.units;
    let fan_in = layer.fan_in;
    let g = cell.gates() * u;
    let mut hidden = vec![0.0; (steps + 1) * u];
    let mut gates = vec![0.0; steps * g];
    let mut cells = if cell == CellType::Lstm { vec![0.0; (steps + 1) * u] } else { Vec::new() };
    let mut pre = vec![0.0; g];
    let mut rh = vec![0.0; u];
    for t in 0..steps {
        let x = &inputs[t * fan_in..(t + 1) * fan_in];
        let (past, future) = hidden.split_at_mut((t + 1) * u);
        let hp = &past[t * u..];
        let h = &mut future[..u];
        pre.copy_from_slice(&layer.biases);
        matvec_acc(&mut pre, &layer.input_weights, x);
        let gt = &mut gates[t * g..(t + 1) * g];
        match cell {
            CellType::Rnn => {
                matvec_acc(&mut pre, &layer.recurrent_weights, hp);
                for j in 0..u {
                    gt[j] = pre[j].tanh();
                    h[j] = gt[j];
                }
            }
            CellType::Gru => {
                matvec_acc(&mut pre[..2 * u], &layer.recurrent_weights[..2 * u * u], hp);
                for j in 0..2 * u {
                    gt[j] = sigmoid(pre[j]);
                }
                for j in 0..u {
                    rh[j] = gt[u + j] * hp[j];
                }
                matvec_acc(&mut pre[2 * u..], &layer.recurrent_weights[2 * u * u..], &rh);
                for j in 0..u {
                    let n = pre[2 * u + j].tanh();
                    gt[2 * u + j] = n;
                    let z = gt[j];
                    h[j] = (1.0 - z) * hp[j] + z * n;
                }
            }
            CellType::Lstm => {
                matvec_acc(&mut pre, &layer.recurrent_weights, hp);
                let (c_past, c_future) = cells.split_at_mut((t + 1) * u);
                let cp = &c_past[t * u..];
                let c = &mut c_future[..u];
                for j in 0..u {
                    let i = sigmoid(pre[j]);
                    let f = sigmoid(pre[u + j]);
                    let gg = pre[2 * u + j].tanh();
                    let o = sigmoid(pre[3 * u + j]);
                    gt[j] = i;
                    gt[u + j] = f;
                    gt[2 * u + j] = gg;
                    gt[3 * u + j] = o;
                    c[j] = f * cp[j] + i * gg;
                    h[j] = o * c[j].tanh();
                }
            }
        }
    }
    LayerCache { inputs, hidden, gates, cells, mask: None }
}

fn check_input(params: &NetworkParams, input: &[f64]) -> Result<usize> {
    let n = params.n_features;
    if input.is_empty() || !input.len().is_multiple_of(n) {
        return Err(Error::ShapeMismatch(format!(
            "input of length {} is not a nonempty multiple of {n} features",
            input.len()
        )));
    }
    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("input contains non-finite values".into()));
    }
    Ok(input.len() / n)
}

/// Runs the network over a row-major `steps × n_features` window.
///
/// In train mode, dropout masks are drawn from `rng_seed` and the cache is
/// returned; in eval mode no dropout is applied and `rng_seed` is ignored.
pub fn forward(
    params: &NetworkParams,
    input: &[f64],
    mode: Mode,
    rng_seed: u64,
) -> Result<(f64, Option<ForwardCache>)> {
    let steps = check_input(params, input)?;
    let rate = params.dropout;
    let mut rng = (mode == Mode::Train && rate > 0.0).then(|| ChaCha8Rng::seed_from_u64(rng_seed));
    let n_layers = params.layers.len();
    let mut caches: Vec<LayerCache> = Vec::with_capacity(n_layers);
    let mut next_inputs = input.to_vec();
    let mut head_input = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut cache = layer_forward(params.cell, layer, next_inputs, steps);
        let u = layer.units;
        if l + 1 < n_layers {
            let mut out = cache.hidden[u..].to_vec();
            if let Some(rng) = rng.as_mut() {
                let mask = dropout_mask(rng, steps * u, rate);
                out.iter_mut().zip(&mask).for_each(|(x, m)| *x *= m);
                cache.mask = Some(mask);
            }
            next_inputs = out;
        } else {
            head_input = cache.hidden[steps * u..].to_vec();
            if let Some(rng) = rng.as_mut() {
                let mask = dropout_mask(rng, u, rate);
                head_input.iter_mut().zip(&mask).for_each(|(x, m)| *x *= m);
                cache.mask = Some(mask);
            }
            next_inputs = Vec::new();
        }
        caches.push(cache);
    }
    let prediction = params.head_bias + params.head_weights.iter().zip(&head_input).map(|(w, h)| w * h).sum::<f64>();
    if !prediction.is_finite() {
        return Err(Error::NonFiniteActivation);
    }
    let cache = (mode == Mode::Train).then_some(ForwardCache { steps, layers: caches, head_input, prediction });
    Ok((prediction, cache))
}

/// Eval-mode prediction.
pub fn predict(params: &NetworkParams, input: &[f64]) -> Result<f64> {
    forward(params, input, Mode::Eval, 0).map(|(p, _)| p)
}

fn check_cache(params: &NetworkParams, cache: &ForwardCache) -> Result<()> {
    if cache.layers.len() != params.layers.len() {
        return Err(Error::CacheMismatch(format!(
            "{} cached layers for {} parameter layers",
            cache.layers.len(),
            params.layers.len()
        )));
    }
    for (l, (lp, lc)) in params.layers.iter().zip(&cache.layers).enumerate() {
        let ok = lc.hidden.len() == (cache.steps + 1) * lp.units
            && lc.inputs.len() == cache.steps * lp.fan_in
            && lc.gates.len() == cache.steps * lp.units * params.cell.gates();
        if !ok {
            return Err(Error::CacheMismatch(format!("layer {l} shapes differ")));
        }
    }
    if cache.head_input.len() != params.head_weights.len() {
        return Err(Error::CacheMismatch("head width differs".into()));
    }
    Ok(())
}

/// Gradient of `d_prediction · prediction` with respect to every parameter.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, d_prediction: f64) -> Result<NetworkParams> {
    let mut grads = params.zeros_like();
    backward_accumulate(params, cache, d_prediction, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`], but adds into an existing gradient buffer.
pub fn backward_accumulate(
    params: &NetworkParams,
    cache: &ForwardCache,
    d_prediction: f64,
    grads: &mut NetworkParams,
) -> Result<()> {
    check_cache(params, cache)?;
    if !grads.same_shape(params) {
        return Err(Error::ShapeMismatch("gradient buffer shape differs from parameters".into()));
    }
    let steps = cache.steps;
    let cell = params.cell;
    grads.head_bias += d_prediction;
    for (g, h) in grads.head_weights.iter_mut().zip(&cache.head_input) {
        *g += d_prediction * h;
    }

    let n_layers = params.layers.len();
    let top = &params.layers[n_layers - 1];
    // Gradient w.r.t. each layer's raw hidden outputs h_1..h_T.
    let mut d_out = vec![0.0; steps * top.units];
    {
        let mask = cache.layers[n_layers - 1].mask.as_deref();
        let last = &mut d_out[(steps - 1) * top.units..];
        for j in 0..top.units {
            let m = mask.map_or(1.0, |m| m[j]);
            last[j] = d_prediction * params.head_weights[j] * m;
        }
    }

    for l in (0..n_layers).rev() {
        let lp = &params.layers[l];
        let lc = &cache.layers[l];
        let gl = &mut grads.layers[l];
        let u = lp.units;
        let fan_in = lp.fan_in;
        let gw = cell.gates() * u;
        let mut d_inputs = vec![0.0; steps * fan_in];
        let mut dh_next = vec![0.0; u];
        let mut dc_next = vec![0.0; u];
        let mut da = vec![0.0; gw];
        let mut dh = vec![0.0; u];
        let mut rh = vec![0.0; u];
        let mut d_rh = vec![0.0; u];
        for t in (0..steps).rev() {
            let x = &lc.inputs[t * fan_in..(t + 1) * fan_in];
            let hp = &lc.hidden[t * u..(t + 1) * u];
            let h = &lc.hidden[(t + 1) * u..(t + 2) * u];
            let gt = &lc.gates[t * gw..(t + 1) * gw];
            for j in 0..u {
                dh[j] = d_out[t * u + j] + dh_next[j];
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            match cell {
                CellType::Rnn => {
                    for j in 0..u {
                        da[j] = dh[j] * (1.0 - h[j] * h[j]);
                    }
                    outer_acc(&mut gl.recurrent_weights, &da, hp);
                    matvec_t_acc(&mut dh_next, &lp.recurrent_weights, &da);
                }
                CellType::Gru => {
                    for j in 0..u {
                        let (z, r, n) = (gt[j], gt[u + j], gt[2 * u + j]);
                        let dz = dh[j] * (n - hp[j]);
                        let dn = dh[j] * z;
                        dh_next[j] += dh[j] * (1.0 - z);
                        da[j] = dz * z * (1.0 - z);
                        da[2 * u + j] = dn * (1.0 - n * n);
                        rh[j] = r * hp[j];
                    }
                    d_rh.iter_mut().for_each(|v| *v = 0.0);
                    let (u_zr, u_n) = lp.recurrent_weights.split_at(2 * u * u);
                    matvec_t_acc(&mut d_rh, u_n, &da[2 * u..]);
                    for j in 0..u {
                        let r = gt[u + j];
                        dh_next[j] += d_rh[j] * r;
                        da[u + j] = d_rh[j] * hp[j] * r * (1.0 - r);
                    }
                    let (g_zr, g_n) = gl.recurrent_weights.split_at_mut(2 * u * u);
                    outer_acc(g_zr, &da[..2 * u], hp);
                    outer_acc(g_n, &da[2 * u..], &rh);
                    matvec_t_acc(&mut dh_next, u_zr, &da[..2 * u]);
                }
                CellType::Lstm => {
                    let c = &lc.cells[(t + 1) * u..(t + 2) * u];
                    let cp = &lc.cells[t * u..(t + 1) * u];
                    for j in 0..u {
                        let (i, f, g, o) = (gt[j], gt[u + j], gt[2 * u + j], gt[3 * u + j]);
                        let tc = c[j].tanh();
                        let d_o = dh[j] * tc;
                        let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
                        da[j] = dc * g * i * (1.0 - i);
                        da[u + j] = dc * cp[j] * f * (1.0 - f);
                        da[2 * u + j] = dc * i * (1.0 - g * g);
                        da[3 * u + j] = d_o * o * (1.0 - o);
                        dc_next[j] = dc * f;
                    }
                    outer_acc(&mut gl.recurrent_weights, &da, hp);
                    matvec_t_acc(&mut dh_next, &lp.recurrent_weights, &da);
                }
            }
            outer_acc(&mut gl.input_weights, &da, x);
            for (b, d) in gl.biases.iter_mut().zip(&da) {
                *b += d;
            }
            matvec_t_acc(&mut d_inputs[t * fan_in..(t + 1) * fan_in], &lp.input_weights, &da);
        }
        if l > 0 {
            if let Some(mask) = cache.layers[l - 1].mask.as_deref() {
                d_inputs.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
            }
            d_out = d_inputs;
        }
    }
    Ok(())
}
