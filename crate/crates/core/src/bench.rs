//! Brute-force ground truth: every child of a small space trained on its own.
//!
//! All children share one training seed, so they see the same initial values
//! for shared operators and the same batch order. Differences in final
//! accuracy then come from the architecture, not from seed noise.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{encode_choices, ChildModel, OperatorId, SpaceFile, SupernetGraph};
use crate::nnet::data::DataConfig;
use crate::supernet::{eval_child_accuracy, train_standalone, TrainConfig};

pub const BENCH_SCHEMA: &str = "angleshrink-bench/v1";
pub const DEFAULT_CHILD_CAP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    /// Standalone epochs per child.
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_CHILD_CAP
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            train: TrainConfig {
                batch_size: 32,
                ..TrainConfig::default()
            },
            epochs: 30,
            seed: 0,
            cap: DEFAULT_CHILD_CAP,
        }
    }
}

impl BenchConfig {
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub encoding: String,
    pub choices: Vec<usize>,
    /// Validation accuracy after standalone training and normalization recalibration.
    pub accuracy: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTable {
    pub schema: String,
    pub space_hash: String,
    pub space: SpaceFile,
    pub config: BenchConfig,
    /// One record per connected child, sorted by choices.
    pub records: Vec<ChildRecord>,
}

impl GroundTruthTable {
    pub fn space(&self) -> Result<SupernetGraph> {
        SupernetGraph::from_file(self.space.clone())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, choices: &[usize]) -> Option<&ChildRecord> {
        self.records
            .binary_search_by(|r| r.choices.as_slice().cmp(choices))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn accuracy(&self, child: &ChildModel) -> Option<f64> {
        self.record(child.choices()).map(|r| r.accuracy)
    }

    /// Records whose choices are all live in `subspace`.
    pub fn records_in<'a>(&'a self, subspace: &'a SupernetGraph) -> impl Iterator<Item = &'a ChildRecord> + 'a {
        self.records.iter().filter(move |r| {
            r.choices
                .iter()
                .zip(subspace.edges())
                .all(|(&slot, edge)| edge.has_slot(slot))
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Load a table and check it was built for `space`.
    pub fn load(path: &Path, space: &SupernetGraph) -> Result<Self> {
        let table = Self::load_any(path)?;
        let actual = space.hash();
        if table.space_hash != actual {
            return Err(Error::SpaceMismatch {
                expected: table.space_hash,
                actual,
            });
        }
        Ok(table)
    }

    /// Load a table for whatever space it embeds.
    pub fn load_any(path: &Path) -> Result<Self> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingBenchmark(path.to_path_buf()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        let table: Self = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if table.schema != BENCH_SCHEMA {
            return Err(Error::Schema {
                expected: BENCH_SCHEMA.into(),
                found: table.schema,
            });
        }
        let embedded = table.space()?.hash();
        if embedded != table.space_hash {
            return Err(Error::SpaceMismatch {
                expected: table.space_hash,
                actual: embedded,
            });
        }
        Ok(table)
    }
}

/// Standalone accuracy of one child, as recorded in a table.
pub fn ground_truth_accuracy(space: &SupernetGraph, child: &ChildModel, cfg: &BenchConfig) -> Result<f64> {
    let (train, val) = cfg.data.generate()?;
    child_accuracy(space, child, cfg, &train, &val)
}

fn child_accuracy(
    space: &SupernetGraph,
    child: &ChildModel,
    cfg: &BenchConfig,
    train: &crate::nnet::data::ToyDataset,
    val: &crate::nnet::data::ToyDataset,
) -> Result<f64> {
    let store = train_standalone(space, child, train, &cfg.train, cfg.epochs, cfg.seed)?;
    let own = space.restricted_to(child)?;
    let own_child = own.child(child.choices().to_vec())?;
    eval_child_accuracy(&own, &own_child, &store, train, val, true)
}

/// Train every connected child of `space` and record its validation accuracy.
/// `workers` bounds the thread pool; 0 uses rayon's default.
pub fn generate_benchmark(space: &SupernetGraph, cfg: &BenchConfig, workers: usize) -> Result<GroundTruthTable> {
    cfg.train.validate()?;
    if cfg.epochs == 0 {
        return Err(Error::InvalidConfig("benchmark needs at least one epoch".into()));
    }
    let size = space.space_size();
    if size > cfg.cap as u128 {
        return Err(Error::CapExceeded {
            children: size,
            cap: cfg.cap,
        });
    }
    let (train, val) = cfg.data.generate()?;
    let children = space.children();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let records = pool.install(|| {
        children
            .par_iter()
            .map(|child| {
                Ok(ChildRecord {
                    encoding: child.encoding(),
                    choices: child.choices().to_vec(),
                    accuracy: child_accuracy(space, child, cfg, &train, &val)?,
                    seed: cfg.seed,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(GroundTruthTable {
        schema: BENCH_SCHEMA.into(),
        space_hash: space.hash(),
        space: space.to_file(),
        config: cfg.clone(),
        records,
    })
}

/// Mean accuracy of the table's children in `subspace` that contain `op`.
pub fn ground_truth_operator_score_in(
    table: &GroundTruthTable,
    subspace: &SupernetGraph,
    op: OperatorId,
) -> Result<f64> {
    if !subspace.contains_op(op) {
        return Err(Error::UnknownOperator(op));
    }
    let (sum, n) = table
        .records_in(subspace)
        .filter(|r| r.choices[op.edge] == op.slot)
        .fold((0.0, 0usize), |(s, n), r| (s + r.accuracy, n + 1));
    if n == 0 {
        return Err(Error::EmptySubspace);
    }
    Ok(sum / n as f64)
}

/// Mean accuracy of all benchmarked children containing `op`.
pub fn ground_truth_operator_score(table: &GroundTruthTable, op: OperatorId) -> Result<f64> {
    ground_truth_operator_score_in(table, &table.space()?, op)
}

/// The most accurate benchmarked child in `subspace`; ties go to the earlier encoding.
pub fn best_in_space<'a>(table: &'a GroundTruthTable, subspace: &'a SupernetGraph) -> Result<&'a ChildRecord> {
    if !subspace.is_subspace_of(&table.space()?) {
        return Err(Error::InvalidSpace("not a subspace of the benchmarked space".into()));
    }
    table
        .records_in(subspace)
        .fold(None, |best: Option<&ChildRecord>, r| match best {
            Some(b) if b.accuracy >= r.accuracy => Some(b),
            _ => Some(r),
        })
        .ok_or(Error::EmptySubspace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    /// Operator names kept on every edge.
    pub operators: Vec<String>,
    pub space: SpaceFile,
}

/// Spaces that keep the same operator subset on every edge, largest first.
/// The first entry is the parent itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrunkSpaceCatalog {
    pub parent_hash: String,
    pub entries: Vec<CatalogEntry>,
}

impl ShrunkSpaceCatalog {
    pub fn uniform_subsets(parent: &SupernetGraph) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        for (_, op) in parent.operators() {
            if !names.contains(&op.name) {
                names.push(op.name.clone());
            }
        }
        if names.len() > 16 {
            return Err(Error::InvalidSpace("too many distinct operator names for a subset catalog".into()));
        }
        let full = (1u32 << names.len()) - 1;
        let mut masks: Vec<u32> = (1..=full).collect();
        // larger subsets first, then by the order names first appear
        masks.sort_by_key(|m| (std::cmp::Reverse(m.count_ones()), m.reverse_bits()));
        let mut entries = Vec::new();
        for mask in masks {
            let keep: Vec<&str> = names
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, n)| n.as_str())
                .collect();
            let Ok(space) = parent.with_operator_names(&keep) else {
                continue;
            };
            if !space.has_connected_child() {
                continue;
            }
            entries.push(CatalogEntry {
                name: format!("S{}", entries.len() + 1),
                operators: keep.iter().map(|s| s.to_string()).collect(),
                space: space.to_file(),
            });
        }
        Ok(Self {
            parent_hash: parent.hash(),
            entries,
        })
    }
}

/// Choices rendered the way tables store them.
pub fn encoding_of(choices: &[usize]) -> String {
    encode_choices(choices)
}
