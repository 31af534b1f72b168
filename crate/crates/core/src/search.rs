//! Budgeted searchers over a benchmark table, used to compare an original
//! space with shrunk versions of it.
//!
//! Exhaustive search can never do better in a subspace than in its parent;
//! budgeted searchers can, because a smaller space holds a larger share of
//! good children.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{best_in_space, ChildRecord, GroundTruthTable};
use crate::error::{Error, Result};
use crate::evalstats::mean_std;
use crate::graph::SupernetGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: ChildRecord,
    pub evaluations: usize,
}

/// Query `budget` distinct children uniformly at random and keep the best.
pub fn random_search<R: Rng + ?Sized>(
    table: &GroundTruthTable,
    subspace: &SupernetGraph,
    budget: usize,
    rng: &mut R,
) -> Result<SearchOutcome> {
    let mut pool: Vec<&ChildRecord> = table.records_in(subspace).collect();
    if pool.is_empty() {
        return Err(Error::EmptySubspace);
    }
    if budget == 0 {
        return Err(Error::InvalidConfig("search budget must be >= 1".into()));
    }
    let (picked, _) = pool.partial_shuffle(rng, budget);
    let best = best_of(picked.iter().copied());
    Ok(SearchOutcome {
        best: best.clone(),
        evaluations: picked.len(),
    })
}

/// Highest accuracy, earlier encoding on ties.
fn best_of<'a>(records: impl Iterator<Item = &'a ChildRecord>) -> &'a ChildRecord {
    records
        .reduce(|b, r| {
            if r.accuracy > b.accuracy || (r.accuracy == b.accuracy && r.choices < b.choices) {
                r
            } else {
                b
            }
        })
        .expect("nonempty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population: usize,
    /// Tournament size.
    pub sample_size: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 10,
            sample_size: 3,
        }
    }
}

/// Regularized evolution: tournament parent, single-edge mutation, oldest member retires.
pub fn evolutionary_search<R: Rng + ?Sized>(
    table: &GroundTruthTable,
    subspace: &SupernetGraph,
    budget: usize,
    cfg: EvolutionConfig,
    rng: &mut R,
) -> Result<SearchOutcome> {
    if cfg.population == 0 || cfg.sample_size == 0 || budget == 0 {
        return Err(Error::InvalidConfig("population, tournament and budget must be >= 1".into()));
    }
    let pool: Vec<&ChildRecord> = table.records_in(subspace).collect();
    if pool.is_empty() {
        return Err(Error::EmptySubspace);
    }
    let mut history: Vec<&ChildRecord> = Vec::with_capacity(budget);
    let mut population = std::collections::VecDeque::with_capacity(cfg.population);
    while history.len() < budget.min(cfg.population) {
        let r = *pool.choose(rng).expect("nonempty");
        population.push_back(r);
        history.push(r);
    }
    let mutable: Vec<usize> = (0..subspace.edges().len())
        .filter(|&e| subspace.edges()[e].ops.len() > 1)
        .collect();
    while history.len() < budget {
        let parent = population
            .iter()
            .copied()
            .collect::<Vec<_>>()
            .choose_multiple(rng, cfg.sample_size)
            .copied()
            .reduce(|b, r| if r.accuracy > b.accuracy { r } else { b })
            .expect("nonempty population");
        let child = if mutable.is_empty() {
            parent
        } else {
            mutate(table, subspace, parent, &mutable, rng).unwrap_or(parent)
        };
        population.push_back(child);
        if population.len() > cfg.population {
            population.pop_front();
        }
        history.push(child);
    }
    Ok(SearchOutcome {
        best: best_of(history.iter().copied()).clone(),
        evaluations: history.len(),
    })
}

fn mutate<'a, R: Rng + ?Sized>(
    table: &'a GroundTruthTable,
    subspace: &SupernetGraph,
    parent: &ChildRecord,
    mutable: &[usize],
    rng: &mut R,
) -> Option<&'a ChildRecord> {
    // a mutation may disconnect the child; retry a few times
    for _ in 0..32 {
        let e = *mutable.choose(rng)?;
        let slots: Vec<usize> = subspace.edges()[e]
            .ops
            .iter()
            .map(|o| o.slot)
            .filter(|&s| s != parent.choices[e])
            .collect();
        let mut choices = parent.choices.clone();
        choices[e] = *slots.choose(rng)?;
        if let Some(r) = table.record(&choices) {
            return Some(r);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Searcher {
    Exhaustive,
    Random,
    Evolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub space: String,
    pub size: usize,
    pub searcher: Searcher,
    pub budget: usize,
    pub trials: usize,
    pub mean_best: f64,
    pub std_best: f64,
}

/// Best-found accuracy of each searcher on each named space, averaged over trials.
pub fn compare_spaces(
    table: &GroundTruthTable,
    spaces: &[(String, SupernetGraph)],
    budget: usize,
    trials: usize,
    evolution: EvolutionConfig,
    seed: u64,
) -> Result<Vec<StudyRow>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    let mut rows = Vec::new();
    for (name, space) in spaces {
        let size = table.records_in(space).count();
        let exhaustive = best_in_space(table, space)?.accuracy;
        rows.push(StudyRow {
            space: name.clone(),
            size,
            searcher: Searcher::Exhaustive,
            budget: size,
            trials: 1,
            mean_best: exhaustive,
            std_best: 0.0,
        });
        for searcher in [Searcher::Random, Searcher::Evolution] {
            let mut found = Vec::with_capacity(trials);
            for t in 0..trials {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let out = match searcher {
                    Searcher::Random => random_search(table, space, budget, &mut rng)?,
                    _ => evolutionary_search(table, space, budget, evolution, &mut rng)?,
                };
                found.push(out.best.accuracy);
            }
            let (mean, std) = mean_std(&found);
            rows.push(StudyRow {
                space: name.clone(),
                size,
                searcher,
                budget,
                trials,
                mean_best: mean,
                std_best: std,
            });
        }
    }
    Ok(rows)
}
