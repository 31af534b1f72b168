//! Ranking statistics and the ranking, stability, convergence, timing and
//! operator-selection experiments.
//!
//! Rank correlation is Kendall's tau-a: `(concordant - discordant) / (n(n-1)/2)`.
//! Pairs tied in either ranking count as neither, so a metric that gives every
//! child the same value correlates at exactly 0 with anything.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angle::{angle_metric, AngleOptions};
use crate::bench::{ground_truth_operator_score_in, GroundTruthTable};
use crate::error::{Error, Result};
use crate::graph::{ChildModel, OperatorId, SupernetGraph};
use crate::nnet::data::ToyDataset;
use crate::shrink::{score_all_with, select_removals, OperatorScore};
use crate::supernet::{eval_child_accuracy, init_supernet, train_epoch, TrainConfig, WeightSet, WeightStore};

/// Number of inversions in `v`, sorting it in place.
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut v[..mid], buf) + count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Pairs sharing a value among consecutive runs of a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run.saturating_sub(1)) / 2;
            run = 1;
        }
        prev = Some(v);
    }
    total + run * run.saturating_sub(1) / 2
}

/// Kendall's tau-a of two value lists, ties counting as neither concordant nor discordant.
/// Runs in `O(n log n)`.
pub fn tau_a(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooShort);
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidConfig("rank values must not be NaN".into()));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let ties_x = tied_pairs(pairs.iter().map(|p| p.0));
    let ties_xy = tied_pairs(pairs.iter().copied());
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let discordant = count_inversions(&mut ys, &mut Vec::with_capacity(n));
    let ties_y = tied_pairs(ys.iter().copied());
    let total = (n as u64) * (n as u64 - 1) / 2;
    // concordant = total - ties_x - ties_y + ties_xy - discordant
    let diff = total as i128 - ties_x as i128 - ties_y as i128 + ties_xy as i128 - 2 * discordant as i128;
    Ok(diff as f64 / total as f64)
}

/// Kendall's tau between two strict rankings (`a[i]` is item `i`'s rank).
pub fn kendalls_tau(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    for r in [a, b] {
        let mut s = r.to_vec();
        s.sort_unstable();
        if s.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::TiedRanks);
        }
    }
    let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    tau_a(&fa, &fb)
}

/// Descending ranks (0 = best); equal values share the rank of their first occurrence.
pub fn descending_ranks(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    let mut ranks = vec![0; values.len()];
    for (pos, &i) in idx.iter().enumerate() {
        ranks[i] = if pos > 0 && values[idx[pos - 1]] == values[i] {
            ranks[idx[pos - 1]]
        } else {
            pos
        };
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankMetric {
    Angle,
    AccuracyRebn,
    Random,
}

impl RankMetric {
    pub fn name(self) -> &'static str {
        match self {
            RankMetric::Angle => "angle",
            RankMetric::AccuracyRebn => "accuracy-rebn",
            RankMetric::Random => "random",
        }
    }
}

/// Everything a metric may need to evaluate a child against a supernet snapshot.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub space: &'a SupernetGraph,
    pub store: &'a WeightStore,
    pub train: &'a ToyDataset,
    pub validation: &'a ToyDataset,
    pub angle: AngleOptions,
}

impl EvalContext<'_> {
    pub fn angle(&self, child: &ChildModel) -> Result<f64> {
        angle_metric(self.space, child, self.store, WeightSet::Init, self.angle)
    }

    pub fn accuracy(&self, child: &ChildModel) -> Result<f64> {
        eval_child_accuracy(self.space, child, self.store, self.train, self.validation, true)
    }

    /// Metric values for `children`, in order.
    pub fn evaluate(&self, metric: RankMetric, children: &[ChildModel], seed: u64) -> Result<Vec<f64>> {
        match metric {
            RankMetric::Angle => children.par_iter().map(|c| self.angle(c)).collect(),
            RankMetric::AccuracyRebn => children.par_iter().map(|c| self.accuracy(c)).collect(),
            RankMetric::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(children.iter().map(|_| rng.random::<f64>()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub metric: RankMetric,
    pub encodings: Vec<String>,
    pub values: Vec<f64>,
    pub tau: f64,
    pub seed: u64,
    pub epoch: u64,
    /// All metric values are equal, so the ranking carries no information.
    pub degenerate: bool,
    /// Child pairs whose metric values tie.
    pub tied_pairs: u64,
}

/// Ground-truth accuracies for `children`, in order.
pub fn ground_truth_values(table: &GroundTruthTable, children: &[ChildModel]) -> Result<Vec<f64>> {
    children
        .iter()
        .map(|c| {
            table
                .accuracy(c)
                .ok_or_else(|| Error::InvalidChild(format!("{} is not in the benchmark", c.encoding())))
        })
        .collect()
}

pub fn rank_children_by_metric(
    ctx: &EvalContext,
    table: &GroundTruthTable,
    children: &[ChildModel],
    metric: RankMetric,
    seed: u64,
) -> Result<RankingReport> {
    let truth = ground_truth_values(table, children)?;
    let values = ctx.evaluate(metric, children, seed)?;
    report_from_values(metric, children, values, &truth, seed, ctx.store.epoch())
}

fn report_from_values(
    metric: RankMetric,
    children: &[ChildModel],
    values: Vec<f64>,
    truth: &[f64],
    seed: u64,
    epoch: u64,
) -> Result<RankingReport> {
    let tau = tau_a(&values, truth)?;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let tied = tied_pairs(sorted.iter().copied());
    let degenerate = sorted.first() == sorted.last();
    Ok(RankingReport {
        metric,
        encodings: children.iter().map(ChildModel::encoding).collect(),
        values,
        tau,
        seed,
        epoch,
        degenerate,
        tied_pairs: tied,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub metric: RankMetric,
    pub seeds: Vec<u64>,
    pub taus: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub range: f64,
}

impl StabilityReport {
    pub fn new(metric: RankMetric, seeds: Vec<u64>, taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() || seeds.len() != taus.len() {
            return Err(Error::LengthMismatch(seeds.len(), taus.len()));
        }
        let (mean, std) = mean_std(&taus);
        let max = taus.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = taus.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(Self {
            metric,
            seeds,
            taus,
            mean,
            std,
            range: max - min,
        })
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// A supernet trained from scratch with uniform single-path sampling.
pub fn train_supernet(
    space: &SupernetGraph,
    train: &ToyDataset,
    cfg: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<WeightStore> {
    let mut store = init_supernet(space, train.features(), train.classes, cfg.init, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..epochs {
        train_epoch(&mut store, space, train, cfg, &mut rng)?;
    }
    Ok(store)
}

/// Inputs shared by the supernet experiments.
#[derive(Debug, Clone, Copy)]
pub struct Experiment<'a> {
    pub space: &'a SupernetGraph,
    pub table: &'a GroundTruthTable,
    pub train: &'a ToyDataset,
    pub validation: &'a ToyDataset,
    pub train_cfg: &'a TrainConfig,
    pub angle: AngleOptions,
}

impl<'a> Experiment<'a> {
    fn ctx(&self, store: &'a WeightStore) -> EvalContext<'a> {
        EvalContext {
            space: self.space,
            store,
            train: self.train,
            validation: self.validation,
            angle: self.angle,
        }
    }

    /// Train one supernet per seed for `epochs` and rank `children` by each metric.
    pub fn stability(
        &self,
        children: &[ChildModel],
        metrics: &[RankMetric],
        epochs: usize,
        seeds: &[u64],
    ) -> Result<Vec<(StabilityReport, Vec<RankingReport>)>> {
        let truth = ground_truth_values(self.table, children)?;
        let mut per_metric: Vec<Vec<RankingReport>> = vec![Vec::new(); metrics.len()];
        for &seed in seeds {
            let store = train_supernet(self.space, self.train, self.train_cfg, epochs, seed)?;
            let ctx = self.ctx(&store);
            for (m, &metric) in metrics.iter().enumerate() {
                let values = ctx.evaluate(metric, children, seed)?;
                per_metric[m].push(report_from_values(metric, children, values, &truth, seed, store.epoch())?);
            }
        }
        metrics
            .iter()
            .zip(per_metric)
            .map(|(&metric, reports)| {
                let taus = reports.iter().map(|r| r.tau).collect();
                Ok((StabilityReport::new(metric, seeds.to_vec(), taus)?, reports))
            })
            .collect()
    }

    /// Tau of each metric at each probe epoch of a single training run.
    pub fn convergence_curve(
        &self,
        children: &[ChildModel],
        metrics: &[RankMetric],
        probe_epochs: &[usize],
        seed: u64,
    ) -> Result<Vec<ConvergencePoint>> {
        if probe_epochs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("probe epochs must be sorted ascending".into()));
        }
        let truth = ground_truth_values(self.table, children)?;
        let mut store = init_supernet(self.space, self.train.features(), self.train.classes, self.train_cfg.init, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        for &probe in probe_epochs {
            while (store.epoch() as usize) < probe {
                train_epoch(&mut store, self.space, self.train, self.train_cfg, &mut rng)?;
            }
            let ctx = self.ctx(&store);
            for &metric in metrics {
                let values = ctx.evaluate(metric, children, seed)?;
                let r = report_from_values(metric, children, values, &truth, seed, store.epoch())?;
                points.push(ConvergencePoint {
                    epoch: probe,
                    metric,
                    tau: r.tau,
                    degenerate: r.degenerate,
                });
            }
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub epoch: usize,
    pub metric: RankMetric,
    pub tau: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub metric: RankMetric,
    pub children: usize,
    pub repetitions: usize,
    pub seconds: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Wall-clock time of angle and re-calibrated accuracy over the same
/// children, evaluated sequentially on the calling thread.
pub fn timing_comparison(
    ctx: &EvalContext,
    children: &[ChildModel],
    repetitions: usize,
) -> Result<(TimingReport, TimingReport)> {
    if repetitions < 3 {
        return Err(Error::InvalidConfig("timing needs at least 3 repetitions".into()));
    }
    let time = |metric: RankMetric| -> Result<TimingReport> {
        let mut seconds = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            for c in children {
                let v = match metric {
                    RankMetric::Angle => ctx.angle(c)?,
                    _ => ctx.accuracy(c)?,
                };
                std::hint::black_box(v);
            }
            seconds.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
        }
        let (mean, std) = mean_std(&seconds);
        Ok(TimingReport {
            metric,
            children: children.len(),
            repetitions,
            seconds,
            mean,
            std,
        })
    };
    Ok((time(RankMetric::Angle)?, time(RankMetric::AccuracyRebn)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRank {
    pub op: OperatorId,
    pub score: f64,
    /// 0 is the best operator.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRun {
    pub metric: RankMetric,
    pub seed: u64,
    pub scores: Vec<OperatorScore>,
    pub removed: Vec<OperatorId>,
    pub reserved: Vec<OperatorId>,
    /// Reserved operators that the ground-truth selection also reserves.
    pub overlap: usize,
    /// Mean ground-truth rank of the reserved operators.
    pub mean_reserved_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub drop_count: usize,
    pub ground_truth: Vec<GroundTruthRank>,
    pub ground_truth_removed: Vec<OperatorId>,
    pub ground_truth_reserved: Vec<OperatorId>,
    pub runs: Vec<SelectionRun>,
}

/// Ground-truth scores of every operator in `space`.
pub fn ground_truth_scores(table: &GroundTruthTable, space: &SupernetGraph) -> Result<Vec<OperatorScore>> {
    space
        .operators()
        .map(|(op, _)| Ok(OperatorScore::from_samples(op, &[ground_truth_operator_score_in(table, space, op)?])))
        .collect()
}

fn reserved_after(space: &SupernetGraph, removed: &[OperatorId]) -> Vec<OperatorId> {
    space.operators().map(|(id, _)| id).filter(|id| !removed.contains(id)).collect()
}

impl Experiment<'_> {
    /// Train a supernet per seed for the first-stage epochs, score operators
    /// once by each metric, drop `drop_count`, and compare with the
    /// ground-truth selection.
    pub fn operator_selection(
        &self,
        drop_count: usize,
        metrics: &[RankMetric],
        samples: usize,
        seeds: &[u64],
    ) -> Result<SelectionReport> {
        let gt_scores = ground_truth_scores(self.table, self.space)?;
        let values: Vec<f64> = gt_scores.iter().map(|s| s.score).collect();
        let ranks = descending_ranks(&values);
        let ground_truth: Vec<GroundTruthRank> = gt_scores
            .iter()
            .zip(&ranks)
            .map(|(s, &rank)| GroundTruthRank { op: s.op, score: s.score, rank })
            .collect();
        let select = |scores: &[OperatorScore]| -> Result<Vec<OperatorId>> {
            if drop_count == 0 {
                return Ok(Vec::new());
            }
            Ok(select_removals(self.space, scores, drop_count)?.removed)
        };
        let gt_removed = select(&gt_scores)?;
        let gt_reserved = reserved_after(self.space, &gt_removed);
        let rank_of = |op: OperatorId| ground_truth.iter().find(|g| g.op == op).map_or(0, |g| g.rank);

        let mut runs = Vec::new();
        for &seed in seeds {
            let store = train_supernet(self.space, self.train, self.train_cfg, self.train_cfg.first_stage_epochs, seed)?;
            let ctx = self.ctx(&store);
            for &metric in metrics {
                let scores = match metric {
                    RankMetric::Angle => score_all_with(self.space, samples, None, seed, 0, |c| ctx.angle(c))?,
                    RankMetric::AccuracyRebn => score_all_with(self.space, samples, None, seed, 0, |c| ctx.accuracy(c))?,
                    RankMetric::Random => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        self.space
                            .operators()
                            .map(|(op, _)| OperatorScore::from_samples(op, &[rng.random::<f64>()]))
                            .collect()
                    }
                };
                let removed = select(&scores)?;
                let reserved = reserved_after(self.space, &removed);
                let overlap = reserved.iter().filter(|op| gt_reserved.contains(op)).count();
                let mean_reserved_rank =
                    reserved.iter().map(|&op| rank_of(op) as f64).sum::<f64>() / reserved.len().max(1) as f64;
                runs.push(SelectionRun {
                    metric,
                    seed,
                    scores,
                    removed,
                    reserved,
                    overlap,
                    mean_reserved_rank,
                });
            }
        }
        Ok(SelectionReport {
            drop_count,
            ground_truth,
            ground_truth_removed: gt_removed,
            ground_truth_reserved: gt_reserved,
            runs,
        })
    }
}

/// The child set used by ranking experiments: all children when there are at
/// most `limit`, otherwise a fixed uniform sample of `limit` distinct children.
pub fn ranking_children(space: &SupernetGraph, limit: usize, seed: u64) -> Vec<ChildModel> {
    let mut all = space.children();
    if all.len() <= limit {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, all.len(), limit).into_vec();
    let mut keep = vec![false; all.len()];
    for i in picked {
        keep[i] = true;
    }
    let mut i = 0;
    all.retain(|_| {
        i += 1;
        keep[i - 1]
    });
    all
}
