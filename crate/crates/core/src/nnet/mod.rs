//! A small differentiable network engine for toy supernets.
//!
//! The network is a fixed frame around a searchable cell:
//!
//! ```text
//! x -> dense(stem) -> norm -> [cell] -> relu -> dense(head) + bias -> logits
//! ```
//!
//! Inside the cell each node sums the outputs of its incoming edges. A
//! parametric operator is `relu -> dense -> norm`; identity passes its input
//! through; pooling averages a `k x k` window over the node's features laid out
//! as a square grid. Every dense map is followed by a normalization, so the
//! network output does not depend on the scale of dense weights once the
//! normalization statistics are recomputed.

pub mod data;
pub mod matrix;
pub mod tape;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ChildModel, OpKind, OperatorId, SupernetGraph};
pub use data::{DataConfig, Split, TaskKind, ToyDataset};
pub use matrix::Matrix;
pub use tape::{Tape, Var};

/// Addresses one learnable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "param", content = "op", rename_all = "snake_case")]
pub enum ParamKey {
    Stem,
    StemScale,
    StemShift,
    Head,
    HeadBias,
    Op(OperatorId),
    OpScale(OperatorId),
    OpShift(OperatorId),
}

impl ParamKey {
    /// The searchable operator this tensor belongs to, if any.
    pub fn operator(&self) -> Option<OperatorId> {
        match *self {
            ParamKey::Op(id) | ParamKey::OpScale(id) | ParamKey::OpShift(id) => Some(id),
            _ => None,
        }
    }
}

/// Addresses one normalization layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "norm", content = "op", rename_all = "snake_case")]
pub enum NormKey {
    Stem,
    Op(OperatorId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    OperatorWeight,
    NormScale,
    NormShift,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub values: Matrix,
    /// Momentum buffer, same shape as `values`.
    pub velocity: Matrix,
    pub role: ParamRole,
}

impl ParamTensor {
    pub fn new(values: Matrix, role: ParamRole) -> Self {
        let velocity = Matrix::zeros(values.rows, values.cols);
        Self {
            values,
            velocity,
            role,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl NormState {
    pub fn fresh(width: usize, momentum: f64, eps: f64) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
            momentum,
            eps,
        }
    }

    fn absorb(&mut self, m: &Moments) {
        let a = self.momentum;
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - a) * self.mean[c] + a * m.mean[c];
            self.var[c] = (1.0 - a) * self.var[c] + a * m.variance(c);
        }
    }
}

/// Per-feature count, mean and sum of squared deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Moments {
    fn of(x: &Matrix) -> Self {
        let (rows, cols) = x.shape();
        let n = rows as f64;
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                mean[c] += x.data[r * cols + c];
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut m2 = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                let d = x.data[r * cols + c] - mean[c];
                m2[c] += d * d;
            }
        }
        Self {
            count: rows,
            mean,
            m2,
        }
    }

    /// Population variance of feature `c`.
    pub fn variance(&self, c: usize) -> f64 {
        self.m2[c] / self.count as f64
    }

    /// Pooled moments of two disjoint samples.
    pub fn merge(&self, other: &Moments) -> Moments {
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let mut mean = Vec::with_capacity(self.mean.len());
        let mut m2 = Vec::with_capacity(self.mean.len());
        for c in 0..self.mean.len() {
            let delta = other.mean[c] - self.mean[c];
            mean.push(self.mean[c] + delta * nb / n);
            m2.push(self.m2[c] + other.m2[c] + delta * delta * na * nb / n);
        }
        Moments {
            count: self.count + other.count,
            mean,
            m2,
        }
    }
}

pub type NormStates = BTreeMap<NormKey, NormState>;
pub type Grads = BTreeMap<ParamKey, Matrix>;

/// All learnable tensors and normalization statistics of a supernet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub input_dim: usize,
    pub classes: usize,
    #[serde(with = "crate::entries")]
    pub tensors: BTreeMap<ParamKey, ParamTensor>,
    #[serde(with = "crate::entries")]
    pub norms: NormStates,
}

impl NetworkParams {
    pub fn tensor(&self, key: ParamKey) -> Result<&ParamTensor> {
        self.tensors
            .get(&key)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {key:?}")))
    }

    fn norm_state<'a>(&'a self, key: NormKey, overrides: Option<&'a NormStates>) -> Result<&'a NormState> {
        overrides
            .and_then(|o| o.get(&key))
            .or_else(|| self.norms.get(&key))
            .ok_or_else(|| Error::ShapeMismatch(format!("missing normalization {key:?}")))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.values.all_finite())
            && self
                .norms
                .values()
                .all(|n| n.mean.iter().chain(&n.var).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics and fold them into the running statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
    /// Normalize with batch statistics and report them without touching running state.
    Collect,
}

/// Result of one forward pass: the tape (for backward) and per-layer batch moments.
pub struct Forward {
    pub tape: Tape<ParamKey>,
    pub logits: Var,
    pub moments: Vec<(NormKey, Moments)>,
}

impl Forward {
    pub fn logits(&self) -> &Matrix {
        self.tape.value(self.logits)
    }
}

/// Fixed map `P` with `x * P` = zero-padded `k x k` mean over the square feature grid.
pub fn pooling_map(dim: usize, k: usize) -> Result<Matrix> {
    let side = (dim as f64).sqrt().round() as usize;
    if side * side != dim {
        return Err(Error::ShapeMismatch(format!(
            "pooling needs a square feature grid, width {dim} is not a square"
        )));
    }
    let half = (k / 2) as isize;
    let w = 1.0 / (k * k) as f64;
    let mut p = Matrix::zeros(dim, dim);
    for r in 0..side as isize {
        for c in 0..side as isize {
            let out = (r * side as isize + c) as usize;
            for dr in -half..=half {
                for dc in -half..=half {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && cc >= 0 && rr < side as isize && cc < side as isize {
                        let inp = (rr * side as isize + cc) as usize;
                        p.set(inp, out, w);
                    }
                }
            }
        }
    }
    Ok(p)
}

/// Run `child` on a batch.
pub fn forward(
    graph: &SupernetGraph,
    child: &ChildModel,
    params: &NetworkParams,
    x: &Matrix,
    mode: Mode,
    norm_overrides: Option<&NormStates>,
) -> Result<Forward> {
    if x.rows == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    if x.cols != params.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} features, network expects {}",
            x.cols, params.input_dim
        )));
    }
    let mut tape = Tape::new();
    let mut moments = Vec::new();

    let mut norm = |tape: &mut Tape<ParamKey>,
                    h: Var,
                    key: NormKey,
                    scale: ParamKey,
                    shift: ParamKey|
     -> Result<Var> {
        let gamma = tape.param(scale, params.tensor(scale)?.values.clone());
        let beta = tape.param(shift, params.tensor(shift)?.values.clone());
        let state = params.norm_state(key, norm_overrides)?;
        if state.mean.len() != tape.value(h).cols {
            return Err(Error::ShapeMismatch(format!("normalization {key:?} width")));
        }
        Ok(match mode {
            Mode::Eval => tape.norm(h, gamma, beta, &state.mean, &state.var, state.eps, false),
            Mode::Train | Mode::Collect => {
                let m = Moments::of(tape.value(h));
                let var: Vec<f64> = (0..m.mean.len()).map(|c| m.variance(c)).collect();
                let out = tape.norm(h, gamma, beta, &m.mean, &var, state.eps, true);
                moments.push((key, m));
                out
            }
        })
    };

    let input = tape.input(x.clone());
    let stem_w = tape.param(ParamKey::Stem, params.tensor(ParamKey::Stem)?.values.clone());
    if tape.value(stem_w).rows != x.cols {
        return Err(Error::ShapeMismatch("stem input width".into()));
    }
    let stem = tape.matmul(input, stem_w);
    let stem = norm(&mut tape, stem, NormKey::Stem, ParamKey::StemScale, ParamKey::StemShift)?;

    let mut values: Vec<Option<Var>> = vec![None; graph.node_count()];
    values[graph.root()] = Some(stem);
    for &v in graph.topo_order() {
        if v == graph.root() {
            continue;
        }
        let mut acc: Option<Var> = None;
        for (e, edge) in graph.edges().iter().enumerate() {
            if edge.target != v || !child.is_on_path(e) {
                continue;
            }
            let src = values[edge.source]
                .ok_or_else(|| Error::InvalidChild(format!("edge {e} reads an unreached node")))?;
            let id = OperatorId::new(e, child.choices()[e]);
            let op = graph.op(id).ok_or(Error::UnknownOperator(id))?;
            if tape.value(src).cols != op.in_dim {
                return Err(Error::ShapeMismatch(format!("{} on edge {e} expects width {}", op.name, op.in_dim)));
            }
            let out = match op.kind {
                OpKind::Identity => src,
                OpKind::Pooling { k } => tape.fixed(src, pooling_map(op.in_dim, k)?),
                OpKind::Parametric => {
                    let h = tape.relu(src);
                    let w = tape.param(ParamKey::Op(id), params.tensor(ParamKey::Op(id))?.values.clone());
                    let h = tape.matmul(h, w);
                    norm(&mut tape, h, NormKey::Op(id), ParamKey::OpScale(id), ParamKey::OpShift(id))?
                }
                OpKind::None => continue,
            };
            acc = Some(match acc {
                None => out,
                Some(a) => tape.add(a, out),
            });
        }
        values[v] = acc;
    }
    let cell = values[graph.leaf()].ok_or_else(|| Error::InvalidChild("leaf unreached".into()))?;

    let h = tape.relu(cell);
    let head = tape.param(ParamKey::Head, params.tensor(ParamKey::Head)?.values.clone());
    if tape.value(head).rows != tape.value(h).cols {
        return Err(Error::ShapeMismatch("head input width".into()));
    }
    let z = tape.matmul(h, head);
    let bias = tape.param(ParamKey::HeadBias, params.tensor(ParamKey::HeadBias)?.values.clone());
    let logits = tape.add_bias(z, bias);
    if !tape.value(logits).all_finite() {
        return Err(Error::NumericalOverflow("logits".into()));
    }
    Ok(Forward {
        tape,
        logits,
        moments,
    })
}

/// Mean cross-entropy loss and parameter gradients for one batch (train-mode statistics).
pub fn loss_and_grads(
    graph: &SupernetGraph,
    child: &ChildModel,
    params: &NetworkParams,
    x: &Matrix,
    labels: &[usize],
) -> Result<(f64, Grads, Vec<(NormKey, Moments)>)> {
    let mut fwd = forward(graph, child, params, x, Mode::Train, None)?;
    let loss = fwd.tape.softmax_xent(fwd.logits, labels);
    let value = fwd.tape.value(loss).data[0];
    if !value.is_finite() {
        return Err(Error::NumericalOverflow("loss".into()));
    }
    let grads = fwd.tape.backward(loss);
    Ok((value, grads, fwd.moments))
}

/// Momentum SGD on the tensors present in `grads`; all others are left alone.
///
/// `v <- momentum * v + g; w <- w - lr * v`
pub fn sgd_step(params: &mut NetworkParams, grads: &Grads, lr: f64, momentum: f64) {
    for (key, g) in grads {
        let Some(t) = params.tensors.get_mut(key) else { continue };
        for ((w, v), &gi) in t.values.data.iter_mut().zip(&mut t.velocity.data).zip(&g.data) {
            *v = momentum * *v + gi;
            *w -= lr * *v;
        }
    }
}

/// One optimization step of `child` on a batch. Returns the batch loss.
pub fn train_step(
    graph: &SupernetGraph,
    child: &ChildModel,
    params: &mut NetworkParams,
    x: &Matrix,
    labels: &[usize],
    lr: f64,
    momentum: f64,
) -> Result<f64> {
    let (loss, grads, moments) = loss_and_grads(graph, child, params, x, labels)?;
    for (key, m) in &moments {
        if let Some(state) = params.norms.get_mut(key) {
            state.absorb(m);
        }
    }
    sgd_step(params, &grads, lr, momentum);
    Ok(loss)
}

/// Recompute running statistics of every normalization layer `child` uses by
/// streaming `data` through it. Returns the new states; `params` is untouched.
pub fn recalibrate_norm(
    graph: &SupernetGraph,
    child: &ChildModel,
    params: &NetworkParams,
    data: &ToyDataset,
    batch_size: usize,
) -> Result<NormStates> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("recalibration needs data".into()));
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let mut pooled: BTreeMap<NormKey, Moments> = BTreeMap::new();
    for (x, _) in data.batches(&order, batch_size.max(1)) {
        let fwd = forward(graph, child, params, &x, Mode::Collect, None)?;
        for (key, m) in fwd.moments {
            let merged = match pooled.get(&key) {
                Some(p) => p.merge(&m),
                None => m,
            };
            pooled.insert(key, merged);
        }
    }
    pooled
        .into_iter()
        .map(|(key, m)| {
            let old = params.norm_state(key, None)?;
            Ok((
                key,
                NormState {
                    var: (0..m.mean.len()).map(|c| m.variance(c).max(0.0)).collect(),
                    mean: m.mean,
                    momentum: old.momentum,
                    eps: old.eps,
                },
            ))
        })
        .collect()
}

/// Eval-mode class predictions for every row of `data`.
pub fn predict(
    graph: &SupernetGraph,
    child: &ChildModel,
    params: &NetworkParams,
    data: &ToyDataset,
    norm_overrides: Option<&NormStates>,
) -> Result<Vec<usize>> {
    let order: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for (x, _) in data.batches(&order, 256) {
        let fwd = forward(graph, child, params, &x, Mode::Eval, norm_overrides)?;
        out.extend(fwd.logits().argmax_rows());
    }
    Ok(out)
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}
