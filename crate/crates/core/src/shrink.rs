//! Operator scoring and the shrinking loop.
//!
//! Each iteration trains the supernet for one stage, scores every live
//! operator by the mean angle of children that contain it, and removes the
//! `k` lowest. Removals that would empty an edge or cut the last
//! all-parametric root-to-leaf path are skipped in favour of the next-lowest
//! candidate.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angle::{angle_metric, AngleOptions};
use crate::error::{Error, Result};
use crate::graph::{ChildModel, OperatorId, SupernetGraph};
use crate::nnet::data::ToyDataset;
use crate::supernet::{init_supernet, reset_base_weights, train_epoch, TrainConfig, WeightSet, WeightStore};

pub const SHRINK_LOG_SCHEMA: &str = "angleshrink-shrinklog/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorScore {
    pub op: OperatorId,
    /// Mean metric value over the sampled children.
    pub score: f64,
    pub count: usize,
    /// Sample standard deviation; 0 for a single sample.
    pub std: f64,
}

impl OperatorScore {
    pub fn from_samples(op: OperatorId, samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { op, score: mean, count: n, std }
    }
}

/// Inclusive bounds on a child's learnable parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBand {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkConfig {
    /// Stop once the space has at most this many children.
    pub threshold: u64,
    /// Operators removed per iteration.
    pub drop_per_iteration: usize,
    /// Children sampled per operator score.
    pub samples: usize,
    /// Reset the angle reference once more than this many operators were
    /// removed since the last reset.
    pub reset_after: usize,
    #[serde(default)]
    pub angle: AngleOptions,
    #[serde(default)]
    pub param_band: Option<ParamBand>,
}

impl Default for ShrinkConfig {
    fn default() -> Self {
        Self {
            threshold: 100,
            drop_per_iteration: 2,
            samples: 100,
            reset_after: 4,
            angle: AngleOptions::default(),
            param_band: None,
        }
    }
}

impl ShrinkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold == 0 || self.drop_per_iteration == 0 || self.samples == 0 {
            return Err(Error::InvalidConfig(
                "threshold, drop_per_iteration and samples must be >= 1".into(),
            ));
        }
        if let Some(b) = self.param_band {
            if b.min > b.max {
                return Err(Error::InvalidConfig("param band min exceeds max".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Supernet epoch count when the scores were taken.
    pub epoch: u64,
    pub scores: Vec<OperatorScore>,
    pub removed: Vec<OperatorId>,
    /// How many of the requested removals were blocked by connectivity.
    pub shortfall: usize,
    pub size_before: u64,
    pub size_after: u64,
    pub reset: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BelowThreshold,
    NoRemovableOperator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkState {
    pub space: SupernetGraph,
    pub log: Vec<IterationRecord>,
    pub terminated: bool,
    pub stop_reason: Option<StopReason>,
    removed_since_reset: usize,
}

impl ShrinkState {
    pub fn new(space: SupernetGraph) -> Self {
        Self {
            space,
            log: Vec::new(),
            terminated: false,
            stop_reason: None,
            removed_since_reset: 0,
        }
    }

    pub fn removed(&self) -> impl Iterator<Item = OperatorId> + '_ {
        self.log.iter().flat_map(|r| r.removed.iter().copied())
    }
}

fn op_rng(seed: u64, iteration: usize, op: OperatorId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(((op.edge as u64) << 32) | op.slot as u64);
    rng
}

fn in_band(space: &SupernetGraph, band: Option<ParamBand>) -> impl Fn(&ChildModel) -> bool + '_ {
    move |child| match band {
        None => true,
        Some(b) => (b.min..=b.max).contains(&space.child_param_count(child)),
    }
}

/// Children that contain `op`: all of them when there are at most `n`,
/// otherwise `n` uniform draws with replacement.
pub fn children_for_score(
    space: &SupernetGraph,
    op: OperatorId,
    n: usize,
    band: Option<ParamBand>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ChildModel>> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    if !space.contains_op(op) {
        return Err(Error::UnknownOperator(op));
    }
    let accept = in_band(space, band);
    let with_op = space.space_size() / space.edges()[op.edge].ops.len() as u128;
    if with_op <= n as u128 {
        let all: Vec<ChildModel> = space
            .children()
            .into_iter()
            .filter(|c| c.choices()[op.edge] == op.slot && accept(c))
            .collect();
        if all.is_empty() {
            return Err(Error::SamplingExhausted { attempts: 0 });
        }
        return Ok(all);
    }
    (0..n).map(|_| space.sample_child_where(rng, Some(op), &accept)).collect()
}

/// Mean of `metric` over children containing `op`.
pub fn score_operator_with<F>(
    space: &SupernetGraph,
    op: OperatorId,
    n: usize,
    band: Option<ParamBand>,
    rng: &mut ChaCha8Rng,
    metric: F,
) -> Result<OperatorScore>
where
    F: Fn(&ChildModel) -> Result<f64>,
{
    let children = children_for_score(space, op, n, band, rng)?;
    let values = children.iter().map(&metric).collect::<Result<Vec<f64>>>()?;
    Ok(OperatorScore::from_samples(op, &values))
}

/// Angle score of one operator against the base snapshot.
pub fn score_operator(
    space: &SupernetGraph,
    store: &WeightStore,
    op: OperatorId,
    n: usize,
    opts: AngleOptions,
    rng: &mut ChaCha8Rng,
) -> Result<OperatorScore> {
    score_operator_with(space, op, n, None, rng, |c| {
        angle_metric(space, c, store, WeightSet::Base, opts)
    })
}

/// Scores of every live operator, computed in parallel with one RNG stream per operator.
pub fn score_all_with<F>(
    space: &SupernetGraph,
    n: usize,
    band: Option<ParamBand>,
    seed: u64,
    iteration: usize,
    metric: F,
) -> Result<Vec<OperatorScore>>
where
    F: Fn(&ChildModel) -> Result<f64> + Sync,
{
    let ops: Vec<OperatorId> = space.operators().map(|(id, _)| id).collect();
    ops.par_iter()
        .map(|&op| {
            let mut rng = op_rng(seed, iteration, op);
            score_operator_with(space, op, n, band, &mut rng, &metric)
        })
        .collect()
}

pub fn score_all_angle(
    space: &SupernetGraph,
    store: &WeightStore,
    cfg: &ShrinkConfig,
    seed: u64,
    iteration: usize,
) -> Result<Vec<OperatorScore>> {
    score_all_with(space, cfg.samples, cfg.param_band, seed, iteration, |c| {
        angle_metric(space, c, store, WeightSet::Base, cfg.angle)
    })
}

/// Outcome of choosing which operators to drop.
#[derive(Debug, Clone, PartialEq)]
pub struct Removal {
    pub space: SupernetGraph,
    pub removed: Vec<OperatorId>,
    pub shortfall: usize,
}

/// Remove up to `k` lowest-scoring operators, ties going to the lower id,
/// skipping any removal that would empty an edge or break connectivity.
pub fn select_removals(space: &SupernetGraph, scores: &[OperatorScore], k: usize) -> Result<Removal> {
    let mut order: Vec<&OperatorScore> = scores.iter().filter(|s| space.contains_op(s.op)).collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.op.cmp(&b.op)));
    let keep_parametric = space.has_parametric_path();
    let mut current = space.clone();
    let mut removed = Vec::new();
    for s in order {
        if removed.len() == k {
            break;
        }
        let Ok(next) = current.without_operator(s.op) else {
            continue;
        };
        if !next.has_connected_child() || (keep_parametric && !next.has_parametric_path()) {
            continue;
        }
        current = next;
        removed.push(s.op);
    }
    if k > 0 && removed.is_empty() {
        return Err(Error::NoRemovableOperator);
    }
    Ok(Removal {
        space: current,
        shortfall: k - removed.len(),
        removed,
    })
}

/// One iteration: train a stage, score, remove, maybe reset the base weights.
pub fn shrink_step(
    state: &mut ShrinkState,
    store: &mut WeightStore,
    data: &ToyDataset,
    train_cfg: &TrainConfig,
    cfg: &ShrinkConfig,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<()> {
    let size_before = state.space.space_size();
    if size_before <= cfg.threshold as u128 {
        return Err(Error::InvalidConfig("space is already within the threshold".into()));
    }
    if !state.space.edges().iter().any(|e| e.ops.len() > 1) {
        return Err(Error::NoRemovableOperator);
    }
    let iteration = state.log.len();
    let epochs = if iteration == 0 {
        train_cfg.first_stage_epochs
    } else {
        train_cfg.stage_epochs
    };
    for _ in 0..epochs {
        train_epoch(store, &state.space, data, train_cfg, rng)?;
    }
    let scores = score_all_angle(&state.space, store, cfg, seed, iteration)?;
    let removal = select_removals(&state.space, &scores, cfg.drop_per_iteration)?;

    state.removed_since_reset += removal.removed.len();
    let reset = state.removed_since_reset > cfg.reset_after;
    if reset {
        reset_base_weights(store);
        state.removed_since_reset = 0;
    }
    state.log.push(IterationRecord {
        iteration,
        epoch: store.epoch(),
        scores,
        removed: removal.removed,
        shortfall: removal.shortfall,
        size_before: size_before as u64,
        size_after: removal.space.space_size() as u64,
        reset,
    });
    state.space = removal.space;
    Ok(())
}

/// The full shrinking loop from a freshly initialized supernet.
pub fn run_abs(
    space: &SupernetGraph,
    cfg: &ShrinkConfig,
    train_cfg: &TrainConfig,
    data: &ToyDataset,
    seed: u64,
) -> Result<(ShrinkState, WeightStore)> {
    cfg.validate()?;
    train_cfg.validate()?;
    let mut store = init_supernet(space, data.features(), data.classes, train_cfg.init, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = ShrinkState::new(space.clone());
    loop {
        if state.space.space_size() <= cfg.threshold as u128 {
            state.stop_reason = Some(StopReason::BelowThreshold);
            break;
        }
        match shrink_step(&mut state, &mut store, data, train_cfg, cfg, &mut rng, seed) {
            Ok(()) => {}
            Err(Error::NoRemovableOperator) => {
                state.stop_reason = Some(StopReason::NoRemovableOperator);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    state.terminated = true;
    Ok((state, store))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Start {
        schema: String,
        space_hash: String,
        seed: u64,
        config_hash: String,
        initial_size: u64,
    },
    Iteration(IterationRecord),
    End {
        final_size: u64,
        stop_reason: Option<StopReason>,
        resets: usize,
    },
}

/// Log lines for a finished run.
pub fn log_lines(initial: &SupernetGraph, state: &ShrinkState, seed: u64, config_hash: &str) -> Vec<LogLine> {
    let mut lines = vec![LogLine::Start {
        schema: SHRINK_LOG_SCHEMA.into(),
        space_hash: initial.hash(),
        seed,
        config_hash: config_hash.into(),
        initial_size: initial.space_size() as u64,
    }];
    lines.extend(state.log.iter().cloned().map(LogLine::Iteration));
    lines.push(LogLine::End {
        final_size: state.space.space_size() as u64,
        stop_reason: state.stop_reason,
        resets: state.log.iter().filter(|r| r.reset).count(),
    });
    lines
}

pub fn write_log(path: &Path, lines: &[LogLine]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(lines)
}
