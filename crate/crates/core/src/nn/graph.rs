//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Every operation is evaluated eagerly and appended to the tape. Calling
//! [`Graph::backward`] on a `1 × 1` node walks the tape in reverse and
//! accumulates gradients for every parameter that contributed to it.
//!
//! Shapes are checked with assertions: callers (the layer code) are
//! responsible for feeding consistent dimensions, and public entry points
//! validate user-provided shapes before building a graph.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::activations::{log_clamped, sigmoid, softmax_in_place, softplus, LOG_CLAMP};
use super::params::{Gradients, ParamId, ParameterSet};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Layout of the mixture-density head output row:
/// `[alpha logits (K) | means (K·J) | raw spreads (K·J) | active logit (1)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MdnLayout {
    pub components: usize,
    pub joints: usize,
}

impl MdnLayout {
    pub fn width(&self) -> usize {
        self.components * (1 + 2 * self.joints) + 1
    }
    pub fn mu_offset(&self) -> usize {
        self.components
    }
    pub fn sigma_offset(&self) -> usize {
        self.components + self.components * self.joints
    }
    pub fn flag_offset(&self) -> usize {
        self.width() - 1
    }
}

/// Lower bound on predicted standard deviations inside density and sampler.
pub const SIGMA_FLOOR: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Softmax(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Select {
        new: Var,
        old: Var,
        mask: Arc<[bool]>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Gather(Var, Arc<[usize]>),
    SoftmaxNll {
        logits: Var,
        targets: Arc<[usize]>,
        weights: Arc<[f64]>,
        probs: Array2<f64>,
    },
    MdnSurrogate {
        raw: Var,
        targets: Arc<Array2<f64>>,
        joint_weights: Arc<[f64]>,
        flag_weights: Arc<[f64]>,
        layout: MdnLayout,
    },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "parameter",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::OneMinus(_) => "one_minus",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softplus(_) => "softplus",
            Op::Softmax(_) => "softmax",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::Select { .. } => "select",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather(..) => "gather",
            Op::SoftmaxNll { .. } => "softmax_nll",
            Op::MdnSurrogate { .. } => "mdn_surrogate",
            Op::Sum(_) => "sum",
        }
    }
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

/// The recorded forward computation for one pass (the gradient context).
pub struct Graph<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(value), _) => value,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        assert_eq!(value.dim(), (1, 1), "not a scalar node");
        value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dimensions");
        let out = va.dot(vb);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "add shapes");
        let out = va + vb;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// `a [n × m] + row [1 × m]`, broadcasting the row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.nrows(), 1, "add_row expects a single row");
        assert_eq!(va.ncols(), vr.ncols(), "add_row widths");
        let out = va + vr;
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "sub shapes");
        let out = va - vb;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "mul shapes");
        let out = va * vb;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 - x);
        let rg = self.rg(a);
        self.push(out, Op::OneMinus(a), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(softplus);
        let rg = self.rg(a);
        self.push(out, Op::Softplus(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.outer_iter_mut() {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![start..end, ..]).to_owned();
        let rg = self.rg(a);
        self.push(out, Op::SliceRows(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols row counts");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows widths");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Row `i` of the result is `new[i]` where `mask[i]`, else `old[i]`.
    /// Values are copied, so unselected rows never influence the output.
    pub fn select_rows(&mut self, new: Var, old: Var, mask: Arc<[bool]>) -> Var {
        let (vn, vo) = (self.value(new), self.value(old));
        assert_eq!(vn.dim(), vo.dim(), "select shapes");
        assert_eq!(mask.len(), vn.nrows(), "select mask length");
        let mut out = vo.clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(i).assign(&vn.row(i));
            }
        }
        let rg = self.rg(new) || self.rg(old);
        self.push(out, Op::Select { new, old, mask }, rg)
    }

    /// Normalizes each row to zero mean / unit variance, then applies
    /// `gain` and `bias` (both `1 × n`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let n = vx.ncols() as f64;
        let mut normalized = vx.clone();
        let mut inv_std = Array1::zeros(vx.nrows());
        for (i, mut row) in normalized.outer_iter_mut().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std[i] = inv;
        }
        let out = &(&normalized * self.value(gain)) + self.value(bias);
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        )
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, rows: Arc<[usize]>) -> Var {
        let out = self.value(table).select(Axis(0), &rows);
        let rg = self.rg(table);
        self.push(out, Op::Gather(table, rows), rg)
    }

    /// `Σ_i w_i · (−log softmax(logits_i)[targets_i])`, with the log clamped
    /// at `ln 1e-12`. Rows with zero weight are not evaluated at all.
    pub fn softmax_nll(&mut self, logits: Var, targets: Arc<[usize]>, weights: Arc<[f64]>) -> Var {
        let vl = self.value(logits);
        assert_eq!(targets.len(), vl.nrows());
        assert_eq!(weights.len(), vl.nrows());
        let mut probs = Array2::zeros(vl.dim());
        let mut total = 0.0;
        for (i, row) in vl.outer_iter().enumerate() {
            if weights[i] == 0.0 {
                continue;
            }
            let mut p = probs.row_mut(i);
            p.assign(&row);
            softmax_in_place(p.as_slice_mut().expect("standard layout"));
            total += weights[i] * -log_clamped(p[targets[i]]);
        }
        let rg = self.rg(logits);
        self.push(
            Array2::from_elem((1, 1), total),
            Op::SoftmaxNll {
                logits,
                targets,
                weights,
                probs,
            },
            rg,
        )
    }

    /// Weighted sum of the per-step mixture surrogate loss
    /// `−Σ_k α_k log N_k(x)` (joint weight) plus the Bernoulli cross-entropy
    /// of the active flag (flag weight). `targets` rows are `J + 1` wide.
    pub fn mdn_surrogate(
        &mut self,
        raw: Var,
        targets: Arc<Array2<f64>>,
        joint_weights: Arc<[f64]>,
        flag_weights: Arc<[f64]>,
        layout: MdnLayout,
    ) -> Var {
        let vr = self.value(raw);
        assert_eq!(vr.ncols(), layout.width(), "mdn head width");
        assert_eq!(targets.nrows(), vr.nrows());
        assert_eq!(targets.ncols(), layout.joints + 1);
        let mut total = 0.0;
        for (i, row) in vr.outer_iter().enumerate() {
            let row = row.as_slice().expect("standard layout");
            let target = targets.row(i);
            let target = target.as_slice().expect("standard layout");
            let terms = MdnRowTerms::new(row, target, layout);
            if joint_weights[i] != 0.0 {
                total += joint_weights[i] * terms.continuous();
            }
            if flag_weights[i] != 0.0 {
                total += flag_weights[i] * terms.bernoulli();
            }
        }
        let rg = self.rg(raw);
        self.push(
            Array2::from_elem((1, 1), total),
            Op::MdnSurrogate {
                raw,
                targets,
                joint_weights,
                flag_weights,
                layout,
            },
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a), rg)
    }

    /// Describes the first node whose value holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, node)| {
            let value = self.value(Var(i));
            if value.iter().all(|x| x.is_finite()) {
                return None;
            }
            Some(match node.op {
                Op::Param(id) => format!("parameter `{}`", self.params.name(id)),
                ref op => format!("node {i} ({}) of shape {:?}", op.name(), value.dim()),
            })
        })
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        let mut out = Gradients::zeros_like(self.params);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => *out.get_mut(*id) += &g,
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        self.acc_ref(&mut grads, *b, &g);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, gr);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, -&g);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let ga = &g * self.value(*b);
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = &g * self.value(*a);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::OneMinus(a) => self.acc(&mut grads, *a, -g),
                Op::Scale(a, f) => self.acc(&mut grads, *a, g * *f),
                Op::Sigmoid(a) => {
                    let y = self.value(Var(i));
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= y * (1.0 - y));
                    self.acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(i));
                    let mut ga = g;
                    Zip::from(&mut ga).and(y).for_each(|g, &y| *g *= 1.0 - y * y);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    Zip::from(&mut ga).and(x).for_each(|g, &x| *g *= sigmoid(x));
                    self.acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(i));
                    let mut ga = g;
                    for (mut grow, yrow) in ga.outer_iter_mut().zip(y.outer_iter()) {
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(g, y)| g * y).sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|g, &y| *g = y * (*g - dot));
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let dim = self.value(*a).dim();
                    let target = grads[a.0].get_or_insert_with(|| Array2::zeros(dim));
                    let mut view = target.slice_mut(s![.., *start..*start + g.ncols()]);
                    view += &g;
                }
                Op::SliceRows(a, start) => {
                    let dim = self.value(*a).dim();
                    let target = grads[a.0].get_or_insert_with(|| Array2::zeros(dim));
                    let mut view = target.slice_mut(s![*start..*start + g.nrows(), ..]);
                    view += &g;
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.rg(p) {
                            let gp = g.slice(s![.., col..col + w]).to_owned();
                            self.acc(&mut grads, p, gp);
                        }
                        col += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        if self.rg(p) {
                            let gp = g.slice(s![row..row + h, ..]).to_owned();
                            self.acc(&mut grads, p, gp);
                        }
                        row += h;
                    }
                }
                Op::Select { new, old, mask } => {
                    if self.rg(*new) {
                        let mut gn = g.clone();
                        for (i, &m) in mask.iter().enumerate() {
                            if !m {
                                gn.row_mut(i).fill(0.0);
                            }
                        }
                        self.acc(&mut grads, *new, gn);
                    }
                    if self.rg(*old) {
                        let mut go = g;
                        for (i, &m) in mask.iter().enumerate() {
                            if m {
                                go.row_mut(i).fill(0.0);
                            }
                        }
                        self.acc(&mut grads, *old, go);
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    if self.rg(*gain) {
                        let gg = (&g * normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *gain, gg);
                    }
                    if self.rg(*bias) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *bias, gb);
                    }
                    if self.rg(*x) {
                        let n = g.ncols() as f64;
                        let mut dxhat = &g * self.value(*gain);
                        for ((mut d, xh), &inv) in dxhat
                            .outer_iter_mut()
                            .zip(normalized.outer_iter())
                            .zip(inv_std.iter())
                        {
                            let mean_d = d.sum() / n;
                            let mean_dx = d.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                            Zip::from(&mut d)
                                .and(&xh)
                                .for_each(|d, &xh| *d = inv * (*d - mean_d - xh * mean_dx));
                        }
                        self.acc(&mut grads, *x, dxhat);
                    }
                }
                Op::Gather(table, rows) => {
                    let dim = self.value(*table).dim();
                    let target = grads[table.0].get_or_insert_with(|| Array2::zeros(dim));
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = target.row_mut(r);
                        dst += &g.row(i);
                    }
                }
                Op::SoftmaxNll {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let scale = g[[0, 0]];
                    let mut gl = Array2::zeros(probs.dim());
                    for (i, mut row) in gl.outer_iter_mut().enumerate() {
                        let w = weights[i];
                        if w == 0.0 || probs[[i, targets[i]]] < LOG_CLAMP {
                            continue;
                        }
                        row.assign(&probs.row(i));
                        row[targets[i]] -= 1.0;
                        row *= w * scale;
                    }
                    self.acc(&mut grads, *logits, gl);
                }
                Op::MdnSurrogate {
                    raw,
                    targets,
                    joint_weights,
                    flag_weights,
                    layout,
                } => {
                    let scale = g[[0, 0]];
                    let vr = self.value(*raw);
                    let mut gr = Array2::zeros(vr.dim());
                    for (i, (row, mut grow)) in vr.outer_iter().zip(gr.outer_iter_mut()).enumerate() {
                        let (jw, fw) = (joint_weights[i], flag_weights[i]);
                        if jw == 0.0 && fw == 0.0 {
                            continue;
                        }
                        let target = targets.row(i);
                        let terms = MdnRowTerms::new(
                            row.as_slice().expect("standard layout"),
                            target.as_slice().expect("standard layout"),
                            *layout,
                        );
                        terms.backward(
                            grow.as_slice_mut().expect("standard layout"),
                            jw * scale,
                            fw * scale,
                        );
                    }
                    self.acc(&mut grads, *raw, gr);
                }
                Op::Sum(a) => {
                    let dim = self.value(*a).dim();
                    self.acc(&mut grads, *a, Array2::from_elem(dim, g[[0, 0]]));
                }
            }
        }
        out
    }

    fn acc(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_ref(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: &Array2<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }
}

/// Activated mixture parameters of one head row together with the target it
/// is scored against.
struct MdnRowTerms<'a> {
    raw: &'a [f64],
    target: &'a [f64],
    layout: MdnLayout,
    alphas: Vec<f64>,
    log_densities: Vec<f64>,
    p: f64,
}

impl<'a> MdnRowTerms<'a> {
    fn new(raw: &'a [f64], target: &'a [f64], layout: MdnLayout) -> Self {
        let (k, j) = (layout.components, layout.joints);
        let mut alphas = raw[..k].to_vec();
        softmax_in_place(&mut alphas);
        let log_densities = (0..k)
            .map(|c| {
                (0..j)
                    .map(|d| {
                        let mu = raw[layout.mu_offset() + c * j + d];
                        let sigma = softplus(raw[layout.sigma_offset() + c * j + d]).max(SIGMA_FLOOR);
                        let z = (target[d] - mu) / sigma;
                        -HALF_LN_2PI - sigma.ln() - 0.5 * z * z
                    })
                    .sum()
            })
            .collect();
        let p = sigmoid(raw[layout.flag_offset()]);
        MdnRowTerms {
            raw,
            target,
            layout,
            alphas,
            log_densities,
            p,
        }
    }

    fn continuous(&self) -> f64 {
        -self
            .alphas
            .iter()
            .zip(&self.log_densities)
            .map(|(a, l)| a * l)
            .sum::<f64>()
    }

    fn bernoulli(&self) -> f64 {
        let flag = self.target[self.layout.joints];
        -(flag * log_clamped(self.p) + (1.0 - flag) * log_clamped(1.0 - self.p))
    }

    fn backward(&self, grad: &mut [f64], joint_scale: f64, flag_scale: f64) {
        let (k, j) = (self.layout.components, self.layout.joints);
        if joint_scale != 0.0 {
            // d/dα_k = −log N_k, then through the softmax
            let weighted: f64 = self
                .alphas
                .iter()
                .zip(&self.log_densities)
                .map(|(a, l)| a * l)
                .sum();
            for c in 0..k {
                grad[c] += joint_scale * self.alphas[c] * (-self.log_densities[c] + weighted);
            }
            for c in 0..k {
                let a = self.alphas[c];
                for d in 0..j {
                    let mu_i = self.layout.mu_offset() + c * j + d;
                    let sg_i = self.layout.sigma_offset() + c * j + d;
                    let raw_sigma = self.raw[sg_i];
                    let sp = softplus(raw_sigma);
                    let sigma = sp.max(SIGMA_FLOOR);
                    let diff = self.target[d] - self.raw[mu_i];
                    let inv2 = 1.0 / (sigma * sigma);
                    grad[mu_i] += joint_scale * -a * diff * inv2;
                    if sp > SIGMA_FLOOR {
                        let dsigma = -a * (-1.0 / sigma + diff * diff * inv2 / sigma);
                        grad[sg_i] += joint_scale * dsigma * sigmoid(raw_sigma);
                    }
                }
            }
        }
        if flag_scale != 0.0 {
            let flag = self.target[j];
            let p = self.p;
            let mut d = 0.0;
            if p >= LOG_CLAMP {
                d += -flag * (1.0 - p);
            }
            if 1.0 - p >= LOG_CLAMP {
                d += (1.0 - flag) * p;
            }
            grad[self.layout.flag_offset()] += flag_scale * d;
        }
    }
}
