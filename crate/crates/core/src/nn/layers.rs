use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activations::Activation;
use super::graph::{Graph, Var};
use super::init::{glorot_uniform, orthogonal_blocks, uniform};
use super::params::{ParamId, ParameterSet};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
const EMBEDDING_INIT: f64 = 0.05;

/// Per-sequence dropout masks. Each sequence owns its own generator so the
/// masks do not depend on how a batch is split across threads.
pub struct Dropout {
    rate: f64,
    rngs: Vec<ChaCha8Rng>,
}

impl Dropout {
    pub fn new(rate: f64, seeds: &[u64]) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout {
            rate,
            rngs: seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect(),
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn batch(&self) -> usize {
        self.rngs.len()
    }

    /// `[batch × width]` inverted-dropout mask (entries 0 or 1/(1−rate)).
    pub fn mask(&mut self, width: usize) -> Array2<f64> {
        let keep = 1.0 - self.rate;
        let mut out = Array2::zeros((self.rngs.len(), width));
        for (mut row, rng) in out.outer_iter_mut().zip(self.rngs.iter_mut()) {
            for x in row.iter_mut() {
                *x = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
            }
        }
        out
    }

    /// Multiplies a time-major `[steps·batch × width]` input by one mask per
    /// sequence, reused at every step.
    pub fn apply(&mut self, g: &mut Graph, x: Var, steps: usize) -> Var {
        if self.rate == 0.0 {
            return x;
        }
        let width = g.value(x).ncols();
        let mask = self.mask(width);
        let views = vec![mask.view(); steps];
        let tiled = ndarray::concatenate(ndarray::Axis(0), &views).expect("mask tiling");
        let m = g.constant(tiled);
        g.mul(x, m)
    }
}

pub(crate) fn maybe_dropout(dropout: &mut Option<&mut Dropout>, g: &mut Graph, x: Var, steps: usize) -> Var {
    match dropout {
        Some(d) => d.apply(g, x, steps),
        None => x,
    }
}

/// Inverted dropout on a plain matrix; identity when not training.
pub fn dropout<R: Rng + ?Sized>(x: &Array2<f64>, rate: f64, training: bool, rng: &mut R) -> Array2<f64> {
    if !training || rate == 0.0 {
        return x.clone();
    }
    let keep = 1.0 - rate;
    x.mapv(|v| if rng.random::<f64>() < keep { v / keep } else { 0.0 })
}

/// Gated recurrent unit with gates ordered `[update | reset | candidate]`.
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub input: usize,
    pub hidden: usize,
    w: ParamId,
    u_zr: ParamId,
    u_h: ParamId,
    b: ParamId,
    norms: Option<[(ParamId, ParamId); 3]>,
}

impl GruLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        layer_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = params.add(format!("{prefix}.w"), glorot_uniform(rng, input, 3 * hidden))?;
        let u_zr = params.add(format!("{prefix}.u_zr"), orthogonal_blocks(rng, hidden, 2))?;
        let u_h = params.add(format!("{prefix}.u_h"), orthogonal_blocks(rng, hidden, 1))?;
        let b = params.add(format!("{prefix}.b"), Array2::zeros((1, 3 * hidden)))?;
        let norms = if layer_norm {
            let mut gates = Vec::with_capacity(3);
            for gate in ["z", "r", "h"] {
                let gain = params.add(format!("{prefix}.ln_{gate}.gain"), Array2::ones((1, hidden)))?;
                let bias = params.add(format!("{prefix}.ln_{gate}.bias"), Array2::zeros((1, hidden)))?;
                gates.push((gain, bias));
            }
            Some([gates[0], gates[1], gates[2]])
        } else {
            None
        };
        Ok(GruLayer {
            input,
            hidden,
            w,
            u_zr,
            u_h,
            b,
            norms,
        })
    }

    pub fn has_layer_norm(&self) -> bool {
        self.norms.is_some()
    }

    /// `x W + b` for all rows of `x` at once.
    pub fn project(&self, g: &mut Graph, x: Var) -> Var {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }

    fn norm(&self, g: &mut Graph, x: Var, gate: usize) -> Var {
        match self.norms {
            Some(norms) => {
                let (gain, bias) = (g.param(norms[gate].0), g.param(norms[gate].1));
                g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
            }
            None => x,
        }
    }

    /// One update given the projected input `xw` (`[batch × 3h]`).
    pub fn step(&self, g: &mut Graph, xw: Var, h: Var) -> Var {
        let n = self.hidden;
        let u_zr = g.param(self.u_zr);
        let u_h = g.param(self.u_h);
        let hu = g.matmul(h, u_zr);
        let xw_zr = g.slice_cols(xw, 0, 2 * n);
        let pre_zr = g.add(xw_zr, hu);
        let (z, r) = if self.norms.is_some() {
            let pz = g.slice_cols(pre_zr, 0, n);
            let pr = g.slice_cols(pre_zr, n, 2 * n);
            let pz = self.norm(g, pz, 0);
            let pr = self.norm(g, pr, 1);
            (g.sigmoid(pz), g.sigmoid(pr))
        } else {
            let zr = g.sigmoid(pre_zr);
            (g.slice_cols(zr, 0, n), g.slice_cols(zr, n, 2 * n))
        };
        let rh = g.mul(r, h);
        let rhu = g.matmul(rh, u_h);
        let xw_h = g.slice_cols(xw, 2 * n, 3 * n);
        let pre_h = g.add(xw_h, rhu);
        let pre_h = self.norm(g, pre_h, 2);
        let cand = g.tanh(pre_h);
        // z∘h + (1−z)∘h̃ = h̃ + z∘(h − h̃)
        let diff = g.sub(h, cand);
        let gated = g.mul(z, diff);
        g.add(cand, gated)
    }

    pub fn cell(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let xw = self.project(g, x);
        self.step(g, xw, h)
    }

    /// Runs the cell over a time-major projected sequence
    /// (`[steps·batch × 3h]`). Rows whose mask entry is false keep their
    /// previous state. Returns the state after each step, in time order.
    pub fn run(
        &self,
        g: &mut Graph,
        xw: Var,
        batch: usize,
        masks: Option<&[Arc<[bool]>]>,
        reverse: bool,
    ) -> Vec<Var> {
        let steps = g.value(xw).nrows() / batch;
        let mut h = g.constant(Array2::zeros((batch, self.hidden)));
        let mut out = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let xt = g.slice_rows(xw, t * batch, (t + 1) * batch);
            let next = self.step(g, xt, h);
            h = match masks {
                Some(m) if m[t].iter().any(|&a| !a) => g.select_rows(next, h, m[t].clone()),
                _ => next,
            };
            out[t] = h;
        }
        out
    }

    /// Single step on plain vectors.
    pub fn cell_values(&self, params: &ParameterSet, x: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input || h.len() != self.hidden {
            return Err(Error::Shape(format!(
                "GRU cell expects input {} and state {}, got {} and {}",
                self.input,
                self.hidden,
                x.len(),
                h.len()
            )));
        }
        let mut g = Graph::new(params);
        let xv = g.constant(x.to_owned().insert_axis(ndarray::Axis(0)));
        let hv = g.constant(h.to_owned().insert_axis(ndarray::Axis(0)));
        let out = self.cell(&mut g, xv, hv);
        Ok(g.value(out).row(0).to_owned())
    }
}

/// Per-step activity masks for a time-major batch.
pub fn step_masks(lengths: &[usize], steps: usize) -> Vec<Arc<[bool]>> {
    (0..steps)
        .map(|t| lengths.iter().map(|&len| t < len).collect::<Vec<_>>().into())
        .collect()
}

pub struct BiGruOutput {
    /// `[steps·batch × 2h]`, forward and backward outputs of the top layer.
    pub outputs: Var,
    /// `[batch × 2h]`: forward state at the last active step, backward state at step 0.
    pub context: Var,
}

/// Stacked bidirectional GRU encoder.
#[derive(Debug, Clone)]
pub struct BiGruStack {
    layers: Vec<(GruLayer, GruLayer)>,
}

impl BiGruStack {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        input: usize,
        hidden: &[usize],
        layer_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            let fwd = GruLayer::new(params, &format!("{prefix}.l{i}.fwd"), width, h, layer_norm, rng)?;
            let bwd = GruLayer::new(params, &format!("{prefix}.l{i}.bwd"), width, h, layer_norm, rng)?;
            layers.push((fwd, bwd));
            width = 2 * h;
        }
        Ok(BiGruStack { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].0.input
    }

    pub fn context_width(&self) -> usize {
        2 * self.layers.last().expect("non-empty").0.hidden
    }

    /// `x` is time-major `[steps·batch × input]`; `lengths[b]` is the active
    /// prefix length of sequence `b`.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        lengths: &[usize],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<BiGruOutput> {
        let batch = lengths.len();
        let (rows, width) = g.value(x).dim();
        if batch == 0 || rows % batch != 0 {
            return Err(Error::Shape(format!("{rows} rows do not split into batch {batch}")));
        }
        if width != self.input_width() {
            return Err(Error::Shape(format!(
                "encoder expects {} input columns, got {width}",
                self.input_width()
            )));
        }
        let steps = rows / batch;
        if let Some(&len) = lengths.iter().find(|&&l| l == 0 || l > steps) {
            return Err(Error::Shape(if len == 0 {
                "sequence has no active timesteps".to_owned()
            } else {
                format!("active length {len} exceeds {steps} steps")
            }));
        }
        let masks = step_masks(lengths, steps);
        let mut input = x;
        let mut fwd_states = Vec::new();
        let mut bwd_states = Vec::new();
        for (fwd, bwd) in &self.layers {
            let inp = maybe_dropout(&mut dropout, g, input, steps);
            let xf = fwd.project(g, inp);
            let xb = bwd.project(g, inp);
            fwd_states = fwd.run(g, xf, batch, Some(&masks), false);
            bwd_states = bwd.run(g, xb, batch, Some(&masks), true);
            let per_step: Vec<Var> = fwd_states
                .iter()
                .zip(&bwd_states)
                .map(|(&f, &b)| g.concat_cols(&[f, b]))
                .collect();
            input = g.concat_rows(&per_step);
        }
        let context = g.concat_cols(&[fwd_states[steps - 1], bwd_states[0]]);
        Ok(BiGruOutput {
            outputs: input,
            context,
        })
    }

    /// Encodes one `[steps × input]` sequence; returns per-step top-layer
    /// outputs and the context vector.
    pub fn forward_values(
        &self,
        params: &ParameterSet,
        seq: ArrayView2<f64>,
        mask: &[bool],
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        if mask.len() != seq.nrows() {
            return Err(Error::Shape("mask length differs from sequence length".into()));
        }
        let len = mask.iter().take_while(|&&m| m).count();
        if mask[len..].iter().any(|&m| m) {
            return Err(Error::Shape("mask is not a contiguous active prefix".into()));
        }
        let mut g = Graph::new(params);
        let x = g.constant(seq.to_owned());
        let out = self.forward(&mut g, x, &[len], None)?;
        Ok((g.value(out.outputs).clone(), g.value(out.context).row(0).to_owned()))
    }
}

/// Hidden states of every decoder layer, one row per live sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub layers: Vec<Array2<f64>>,
}

impl DecoderState {
    pub fn batch(&self) -> usize {
        self.layers.first().map_or(0, |l| l.nrows())
    }

    /// New state holding the given rows (repeats allowed) in order.
    pub fn select_rows(&self, rows: &[usize]) -> DecoderState {
        DecoderState {
            layers: self
                .layers
                .iter()
                .map(|l| l.select(ndarray::Axis(0), rows))
                .collect(),
        }
    }
}

/// Stacked unidirectional GRU decoder. Every layer sees the shared per-step
/// input; layers above the first also see the output of the layer below.
#[derive(Debug, Clone)]
pub struct DecoderStack {
    shared: usize,
    layers: Vec<GruLayer>,
}

impl DecoderStack {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        shared: usize,
        hidden: &[usize],
        layer_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("decoder needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        for (i, &h) in hidden.iter().enumerate() {
            let input = shared + if i == 0 { 0 } else { hidden[i - 1] };
            layers.push(GruLayer::new(params, &format!("{prefix}.l{i}"), input, h, layer_norm, rng)?);
        }
        Ok(DecoderStack { shared, layers })
    }

    pub fn shared_width(&self) -> usize {
        self.shared
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden).collect()
    }

    pub fn output_width(&self) -> usize {
        self.layers.iter().map(|l| l.hidden).sum()
    }

    /// Teacher-forced pass over time-major `[steps·batch × shared]` inputs.
    /// Returns each layer's outputs as `[steps·batch × h_k]`.
    pub fn forward_sequence(
        &self,
        g: &mut Graph,
        shared: Var,
        batch: usize,
        mut dropout: Option<&mut Dropout>,
    ) -> Vec<Var> {
        let steps = g.value(shared).nrows() / batch;
        let mut outputs: Vec<Var> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = match outputs.last() {
                Some(&below) => g.concat_cols(&[shared, below]),
                None => shared,
            };
            let input = maybe_dropout(&mut dropout, g, input, steps);
            let xw = layer.project(g, input);
            let states = layer.run(g, xw, batch, None, false);
            outputs.push(g.concat_rows(&states));
        }
        outputs
    }

    pub fn zero_state(&self, batch: usize) -> DecoderState {
        DecoderState {
            layers: self.layers.iter().map(|l| Array2::zeros((batch, l.hidden))).collect(),
        }
    }

    pub fn check_state(&self, state: &DecoderState, batch: usize) -> Result<()> {
        let ok = state.layers.len() == self.layers.len()
            && state
                .layers
                .iter()
                .zip(&self.layers)
                .all(|(s, l)| s.dim() == (batch, l.hidden));
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "decoder state does not match {} layers of {:?} for batch {batch}",
                self.layers.len(),
                self.hidden_sizes()
            )))
        }
    }

    /// One step from a stored state; returns the top-level outputs of every
    /// layer as graph nodes.
    pub fn step_from(&self, g: &mut Graph, shared: Var, state: &DecoderState) -> Vec<Var> {
        let states: Vec<Var> = state.layers.iter().map(|s| g.constant(s.clone())).collect();
        self.step(g, shared, &states)
    }

    /// One step for all layers; returns the new states.
    pub fn step(&self, g: &mut Graph, shared: Var, states: &[Var]) -> Vec<Var> {
        let mut out: Vec<Var> = Vec::with_capacity(self.layers.len());
        for (layer, &h) in self.layers.iter().zip(states) {
            let input = match out.last() {
                Some(&below) => g.concat_cols(&[shared, below]),
                None => shared,
            };
            out.push(layer.cell(g, input, h));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    w: ParamId,
    b: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = params.add(format!("{prefix}.w"), glorot_uniform(rng, input, output))?;
        let b = params.add(format!("{prefix}.b"), Array2::zeros((1, output)))?;
        Ok(Dense { input, output, w, b })
    }

    /// Linear pre-activation.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    pub fn apply(&self, params: &ParameterSet, x: ArrayView2<f64>, activation: Activation) -> Result<Array2<f64>> {
        dense(x, params.get(self.w).view(), params.get(self.b).view(), activation)
    }
}

/// `activation(x W + b)` on plain matrices, one row per example.
pub fn dense(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    b: ArrayView2<f64>,
    activation: Activation,
) -> Result<Array2<f64>> {
    if x.ncols() != w.nrows() || b.dim() != (1, w.ncols()) {
        return Err(Error::Shape(format!(
            "dense: input {:?}, weights {:?}, bias {:?}",
            x.dim(),
            w.dim(),
            b.dim()
        )));
    }
    let mut y = x.dot(&w) + &b;
    for mut row in y.outer_iter_mut() {
        activation.apply(row.as_slice_mut().expect("standard layout"));
    }
    Ok(y)
}

/// `(x − mean(x)) / sqrt(var(x) + 1e-5) ∘ gain + bias`.
pub fn layer_norm(x: ArrayView1<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.len() != gain.len() || x.len() != bias.len() || x.is_empty() {
        return Err(Error::Shape("layer_norm needs equal, non-empty lengths".into()));
    }
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    Ok(ndarray::Zip::from(&x)
        .and(&gain)
        .and(&bias)
        .map_collect(|&x, &g, &b| (x - mean) * inv * g + b))
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub vocab: usize,
    pub dim: usize,
    table: ParamId,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let table = params.add(format!("{prefix}.table"), uniform(rng, vocab, dim, EMBEDDING_INIT))?;
        Ok(Embedding { vocab, dim, table })
    }

    pub fn forward(&self, g: &mut Graph, indices: Arc<[usize]>) -> Result<Var> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.vocab) {
            return Err(Error::Text(format!("token index {bad} outside vocabulary of {}", self.vocab)));
        }
        let table = g.param(self.table);
        Ok(g.gather_rows(table, indices))
    }
}
