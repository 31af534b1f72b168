//! Shared weights, single-path uniform-sampling training, and the
//! accuracy-based evaluation of children with inherited weights.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ChildModel, OpKind, OperatorId, SupernetGraph};
use crate::nnet::{
    self, Matrix, NetworkParams, NormKey, NormState, ParamKey, ParamRole, ParamTensor, ToyDataset,
};

pub const CHECKPOINT_SCHEMA: &str = "angleshrink-checkpoint/v1";

const NORM_MOMENTUM: f64 = 0.1;
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    #[default]
    KaimingNormal,
    XavierUniform,
    Orthogonal,
}

/// Which copy of the operator weights to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSet {
    /// Trained weights `W`.
    Current,
    /// Weights at initialization `W0`.
    Init,
    /// Angle reference; equals `W0` until the first reset.
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetEvent {
    pub epoch: u64,
}

/// All learnable parameters plus the `W0` and base snapshots of operator kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStore {
    pub params: NetworkParams,
    #[serde(with = "crate::entries")]
    init: BTreeMap<OperatorId, Vec<f64>>,
    #[serde(with = "crate::entries")]
    base: BTreeMap<OperatorId, Vec<f64>>,
    /// Number of optimizer steps in which each operator was on the sampled path.
    #[serde(with = "crate::entries")]
    updates: BTreeMap<OperatorId, u64>,
    epoch: u64,
    resets: Vec<ResetEvent>,
}

impl WeightStore {
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn resets(&self) -> &[ResetEvent] {
        &self.resets
    }

    pub fn update_count(&self, id: OperatorId) -> u64 {
        self.updates.get(&id).copied().unwrap_or(0)
    }

    /// Flattened kernel of an operator. Identity and `none` have none;
    /// pooling has its constant `1/k^2` kernel in every weight set.
    pub fn kernel(&self, space: &SupernetGraph, id: OperatorId, set: WeightSet) -> Option<Cow<'_, [f64]>> {
        let op = space.op(id)?;
        match op.kind {
            OpKind::Identity | OpKind::None => Some(Cow::Borrowed(&[])),
            OpKind::Pooling { k } => Some(Cow::Owned(pooling_kernel(k))),
            OpKind::Parametric => match set {
                WeightSet::Current => self
                    .params
                    .tensors
                    .get(&ParamKey::Op(id))
                    .map(|t| Cow::Borrowed(t.values.data.as_slice())),
                WeightSet::Init => self.init.get(&id).map(|v| Cow::Borrowed(v.as_slice())),
                WeightSet::Base => self.base.get(&id).map(|v| Cow::Borrowed(v.as_slice())),
            },
        }
    }

    /// Whether the store has one entry per parametric operator of `space`, with matching shapes.
    pub fn matches(&self, space: &SupernetGraph) -> bool {
        space.operators().all(|(id, op)| match op.kind {
            OpKind::Parametric => self
                .params
                .tensors
                .get(&ParamKey::Op(id))
                .is_some_and(|t| t.values.shape() == (op.in_dim, op.out_dim))
                && self.init.get(&id).is_some_and(|v| v.len() == op.kernel_len())
                && self.base.get(&id).is_some_and(|v| v.len() == op.kernel_len()),
            _ => true,
        })
    }

    /// Multiply the current kernel of every parametric operator by `c`.
    pub fn scale_operator_weights(&mut self, c: f64) {
        for (key, t) in self.params.tensors.iter_mut() {
            if matches!(key, ParamKey::Op(_)) {
                t.values.scale(c);
            }
        }
    }
}

fn pooling_kernel(k: usize) -> Vec<f64> {
    vec![1.0 / (k * k) as f64; k * k]
}

/// Independent stream per parameter so draws do not depend on which other operators exist.
fn stream_for(key: ParamKey) -> u64 {
    let (kind, id) = match key {
        ParamKey::Stem => (1, None),
        ParamKey::Head => (2, None),
        ParamKey::Op(id) => (3, Some(id)),
        _ => (4, None),
    };
    let id = id.map(|i| ((i.edge as u64) << 20) | i.slot as u64).unwrap_or(0);
    (kind << 48) | id
}

/// Draw a `rows x cols` matrix (`rows` = fan-in) under `policy`.
pub fn init_matrix<R: Rng + ?Sized>(policy: InitPolicy, rows: usize, cols: usize, rng: &mut R) -> Matrix {
    match policy {
        InitPolicy::KaimingNormal => {
            let normal = Normal::new(0.0, (2.0 / rows as f64).sqrt()).unwrap();
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
        }
        InitPolicy::XavierUniform => {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let uniform = Uniform::new_inclusive(-bound, bound).unwrap();
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| uniform.sample(rng)).collect())
        }
        InitPolicy::Orthogonal => {
            let normal = Normal::new(0.0, 1.0).unwrap();
            let (long, short) = (rows.max(cols), rows.min(cols));
            // orthonormalize `short` vectors of length `long`
            let mut vecs: Vec<Vec<f64>> = (0..short)
                .map(|_| (0..long).map(|_| normal.sample(rng)).collect())
                .collect();
            for _pass in 0..2 {
                for i in 0..short {
                    for j in 0..i {
                        let d: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                        let (head, tail) = vecs.split_at_mut(i);
                        for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                            *a -= d * b;
                        }
                    }
                    let n = vecs[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                    for a in &mut vecs[i] {
                        *a /= n;
                    }
                }
            }
            let mut m = Matrix::zeros(rows, cols);
            for (i, v) in vecs.iter().enumerate() {
                for (j, &x) in v.iter().enumerate() {
                    if rows >= cols {
                        m.set(j, i, x);
                    } else {
                        m.set(i, j, x);
                    }
                }
            }
            m
        }
    }
}

/// Fresh supernet weights for `space` with `input_dim` features and `classes` outputs.
pub fn init_supernet(
    space: &SupernetGraph,
    input_dim: usize,
    classes: usize,
    policy: InitPolicy,
    seed: u64,
) -> Result<WeightStore> {
    let width_in = space
        .node_dim(space.root())
        .ok_or_else(|| Error::InvalidSpace("root has no operator with a width".into()))?;
    let width_out = space
        .node_dim(space.leaf())
        .ok_or_else(|| Error::InvalidSpace("leaf has no operator with a width".into()))?;
    let draw = |key: ParamKey, rows: usize, cols: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_for(key));
        init_matrix(policy, rows, cols, &mut rng)
    };

    let mut tensors = BTreeMap::new();
    let mut norms = BTreeMap::new();
    let mut init = BTreeMap::new();
    let mut add_norm = |tensors: &mut BTreeMap<ParamKey, ParamTensor>, scale, shift, key, width| {
        tensors.insert(scale, ParamTensor::new(Matrix::filled(1, width, 1.0), ParamRole::NormScale));
        tensors.insert(shift, ParamTensor::new(Matrix::zeros(1, width), ParamRole::NormShift));
        norms.insert(key, NormState::fresh(width, NORM_MOMENTUM, NORM_EPS));
    };

    tensors.insert(
        ParamKey::Stem,
        ParamTensor::new(draw(ParamKey::Stem, input_dim, width_in), ParamRole::OperatorWeight),
    );
    add_norm(&mut tensors, ParamKey::StemScale, ParamKey::StemShift, NormKey::Stem, width_in);
    tensors.insert(
        ParamKey::Head,
        ParamTensor::new(draw(ParamKey::Head, width_out, classes), ParamRole::OperatorWeight),
    );
    tensors.insert(ParamKey::HeadBias, ParamTensor::new(Matrix::zeros(1, classes), ParamRole::Bias));

    for (id, op) in space.operators() {
        match op.kind {
            OpKind::Parametric => {
                let w = draw(ParamKey::Op(id), op.in_dim, op.out_dim);
                init.insert(id, w.data.clone());
                tensors.insert(ParamKey::Op(id), ParamTensor::new(w, ParamRole::OperatorWeight));
                add_norm(&mut tensors, ParamKey::OpScale(id), ParamKey::OpShift(id), NormKey::Op(id), op.out_dim);
            }
            OpKind::Pooling { k } => {
                init.insert(id, pooling_kernel(k));
            }
            OpKind::Identity | OpKind::None => {}
        }
    }
    Ok(WeightStore {
        params: NetworkParams {
            input_dim,
            classes,
            tensors,
            norms,
        },
        base: init.clone(),
        init,
        updates: BTreeMap::new(),
        epoch: 0,
        resets: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// Cosine decay from `max` to `min` over `epochs`, then flat at `min`.
    Cosine { max: f64, min: f64, epochs: usize },
}

impl LrSchedule {
    pub fn at(&self, epoch: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Cosine { max, min, epochs } => {
                let t = (epoch as f64 / epochs.max(1) as f64).min(1.0);
                min + 0.5 * (max - min) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { lr } => lr > 0.0,
            LrSchedule::Cosine { max, min, epochs } => max > 0.0 && min > 0.0 && min <= max && epochs >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad learning-rate schedule {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Supernet epochs before the first scoring round.
    pub first_stage_epochs: usize,
    /// Supernet epochs before every later scoring round.
    pub stage_epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub init: InitPolicy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            first_stage_epochs: 20,
            stage_epochs: 5,
            batch_size: 64,
            lr: LrSchedule::Constant { lr: 0.05 },
            momentum: 0.9,
            init: InitPolicy::KaimingNormal,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.first_stage_epochs == 0 || self.stage_epochs == 0 || self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "epoch counts must be >= 1 and batch size >= 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        self.lr.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u64,
    pub batches: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// One epoch of single-path training: each batch samples a connected child
/// uniformly and updates only that child's weights.
pub fn train_epoch<R: Rng + ?Sized>(
    store: &mut WeightStore,
    space: &SupernetGraph,
    data: &ToyDataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<EpochLog> {
    train_epoch_with(store, space, data, cfg, rng, |space, rng| space.sample_child(rng, None))
}

/// [`train_epoch`] with a caller-chosen sampler (used for lr-free and fixed-child runs).
pub fn train_epoch_with<R, F>(
    store: &mut WeightStore,
    space: &SupernetGraph,
    data: &ToyDataset,
    cfg: &TrainConfig,
    rng: &mut R,
    mut sample: F,
) -> Result<EpochLog>
where
    R: Rng + ?Sized,
    F: FnMut(&SupernetGraph, &mut R) -> Result<ChildModel>,
{
    if data.len() < 2 {
        return Err(Error::InvalidConfig("training needs at least two rows".into()));
    }
    let lr = cfg.lr.at(store.epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0;
    for (x, labels) in data.batches(&order, cfg.batch_size) {
        if labels.len() < 2 {
            continue;
        }
        let child = sample(space, rng)?;
        total += nnet::train_step(space, &child, &mut store.params, &x, &labels, lr, cfg.momentum)?;
        for id in child.used_ops() {
            *store.updates.entry(id).or_default() += 1;
        }
        batches += 1;
    }
    if !store.params.all_finite() {
        return Err(Error::NumericalOverflow(format!("weights after epoch {}", store.epoch)));
    }
    let log = EpochLog {
        epoch: store.epoch,
        batches,
        mean_loss: total / batches.max(1) as f64,
        lr,
    };
    store.epoch += 1;
    Ok(log)
}

/// Validation accuracy of `child` with inherited weights. With `rebn`, the
/// normalization statistics are first recomputed on `train`.
pub fn eval_child_accuracy(
    space: &SupernetGraph,
    child: &ChildModel,
    store: &WeightStore,
    train: &ToyDataset,
    validation: &ToyDataset,
    rebn: bool,
) -> Result<f64> {
    let norms = if rebn {
        Some(nnet::recalibrate_norm(space, child, &store.params, train, 256)?)
    } else {
        None
    };
    let pred = nnet::predict(space, child, &store.params, validation, norms.as_ref())?;
    Ok(nnet::accuracy(&pred, &validation.labels))
}

/// Make the current weights the new angle reference.
pub fn reset_base_weights(store: &mut WeightStore) {
    for (id, base) in store.base.iter_mut() {
        if let Some(t) = store.params.tensors.get(&ParamKey::Op(*id)) {
            base.clone_from(&t.values.data);
        }
    }
    store.resets.push(ResetEvent { epoch: store.epoch });
}

/// Train `child` alone from a fresh initialization for `epochs` epochs.
pub fn train_standalone(
    space: &SupernetGraph,
    child: &ChildModel,
    train: &ToyDataset,
    cfg: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<WeightStore> {
    let own = space.restricted_to(child)?;
    let mut store = init_supernet(&own, train.features(), train.classes, cfg.init, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..epochs {
        train_epoch(&mut store, &own, train, cfg, &mut rng)?;
    }
    Ok(store)
}

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub space_hash: String,
    pub store: WeightStore,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn new(space: &SupernetGraph, store: &WeightStore, rng: &ChaCha8Rng) -> Self {
        Self {
            schema: CHECKPOINT_SCHEMA.into(),
            space_hash: space.hash(),
            store: store.clone(),
            rng: rng.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Load and check that the checkpoint belongs to `space`.
    pub fn load(path: &Path, space: &SupernetGraph) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if ck.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Schema {
                expected: CHECKPOINT_SCHEMA.into(),
                found: ck.schema,
            });
        }
        let actual = space.hash();
        if ck.space_hash != actual {
            return Err(Error::SpaceMismatch {
                expected: ck.space_hash,
                actual,
            });
        }
        Ok(ck)
    }
}
