//! The experiment config file (TOML) and its resolution against command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use angleshrink::angle::AngleOptions;
use angleshrink::bench::{BenchConfig, DEFAULT_CHILD_CAP};
use angleshrink::graph::SupernetGraph;
use angleshrink::nnet::data::DataConfig;
use angleshrink::search::EvolutionConfig;
use angleshrink::shrink::ShrinkConfig;
use angleshrink::supernet::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_SCHEMA: &str = "angleshrink-config/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Ranking,
    Stability,
    Convergence,
    Timing,
    Selection,
    Search,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Ranking,
        ExperimentKind::Stability,
        ExperimentKind::Convergence,
        ExperimentKind::Timing,
        ExperimentKind::Selection,
        ExperimentKind::Search,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Ranking => "ranking",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Timing => "timing",
            ExperimentKind::Selection => "selection",
            ExperimentKind::Search => "search",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .with_context(|| format!("unknown experiment {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub cap: usize,
    pub train: TrainConfig,
}

fn default_cap() -> usize {
    DEFAULT_CHILD_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Supernet epochs before ranking, stability and timing measurements.
    pub supernet_epochs: usize,
    pub probe_epochs: Vec<usize>,
    /// Ranking experiments use every child up to this many, else a fixed sample.
    pub ranking_limit: usize,
    pub timing_children: usize,
    pub timing_repetitions: usize,
    pub selection_drop: usize,
    pub selection_samples: usize,
    pub search_budget: usize,
    pub search_trials: usize,
    pub evolution: EvolutionConfig,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            supernet_epochs: 30,
            probe_epochs: vec![0, 1, 2, 5, 10, 20, 30],
            ranking_limit: 1000,
            timing_children: 100,
            timing_repetitions: 3,
            selection_drop: 6,
            selection_samples: 100,
            search_budget: 50,
            search_trials: 20,
            evolution: EvolutionConfig::default(),
        }
    }
}

/// The config file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema: String,
    /// Space definition, relative to the config file.
    pub space: PathBuf,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub experiments: Vec<ExperimentKind>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub shrink: ShrinkConfig,
    pub bench: BenchSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

/// Values that override the file, from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub experiments: Option<Vec<ExperimentKind>>,
}

/// A loaded config with overrides applied and the space resolved.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub file: ConfigFile,
    pub space: SupernetGraph,
    pub space_path: PathBuf,
    /// Hash of the resolved config and the space; embedded in every output.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut file: ConfigFile =
            toml::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))?;
        if file.schema != CONFIG_SCHEMA {
            bail!("config schema {:?} is not {CONFIG_SCHEMA:?}", file.schema);
        }
        let base = path.parent().unwrap_or(Path::new("."));
        if !overrides.seeds.is_empty() {
            file.seeds = overrides.seeds.clone();
        }
        if let Some(out) = &overrides.out {
            file.output_dir = out.clone();
        } else if file.output_dir.is_relative() {
            file.output_dir = base.join(&file.output_dir);
        }
        if let Some(w) = overrides.workers {
            file.workers = w;
        }
        if let Some(e) = &overrides.experiments {
            file.experiments = e.clone();
        }
        let space_path = base.join(&file.space);
        let space = SupernetGraph::load(&space_path)
            .with_context(|| format!("cannot load space file {}", space_path.display()))?;
        Self::resolve(file, space, space_path)
    }

    pub fn resolve(file: ConfigFile, space: SupernetGraph, space_path: PathBuf) -> Result<Self> {
        if file.seeds.is_empty() {
            bail!("config needs at least one seed");
        }
        file.train.validate()?;
        file.bench.train.validate()?;
        file.shrink.validate()?;
        let hash = config_hash(&file, &space);
        Ok(Self {
            file,
            space,
            space_path,
            hash,
        })
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            data: self.file.data.clone(),
            train: self.file.bench.train.clone(),
            epochs: self.file.bench.epochs,
            seed: self.file.bench.seed,
            cap: self.file.bench.cap,
        }
    }

    pub fn angle(&self) -> AngleOptions {
        self.file.shrink.angle
    }

    pub fn out(&self) -> &Path {
        &self.file.output_dir
    }

    pub fn bench_path(&self) -> PathBuf {
        self.out().join("bench.json")
    }
}

/// Hash of everything that determines primary outputs. The output directory and
/// worker count do not change results and are left out.
fn config_hash(file: &ConfigFile, space: &SupernetGraph) -> String {
    let mut canon = file.clone();
    canon.output_dir = PathBuf::new();
    canon.workers = 0;
    canon.space = PathBuf::new();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&canon).expect("config serializes"));
    h.update(space.hash().as_bytes());
    hex::encode(h.finalize())
}
