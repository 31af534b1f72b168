//! The `bench`, `shrink`, `evaluate` and `report` commands.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use angleshrink::bench::{generate_benchmark, GroundTruthTable, ShrunkSpaceCatalog};
use angleshrink::evalstats::{
    ranking_children, timing_comparison, train_supernet, EvalContext, Experiment, RankMetric, StabilityReport,
};
use angleshrink::graph::SupernetGraph;
use angleshrink::nnet::data::ToyDataset;
use angleshrink::search::compare_spaces;
use angleshrink::shrink::{log_lines, run_abs, write_log};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::report::{f4, write_report, Table};

/// Generate the ground-truth table. Refuses to replace an existing one.
pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let path = cfg.bench_path();
    if path.exists() {
        bail!(
            "refusing to overwrite existing benchmark {}; remove it or choose another --out",
            path.display()
        );
    }
    let table = generate_benchmark(&cfg.space, &cfg.bench_config(), cfg.file.workers)?;
    fs::create_dir_all(cfg.out()).with_context(|| format!("cannot create {}", cfg.out().display()))?;
    table.save(&path)?;

    let accs: Vec<f64> = table.records.iter().map(|r| r.accuracy).collect();
    let (mean, std) = angleshrink::evalstats::mean_std(&accs);
    let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    #[derive(Serialize)]
    struct Summary {
        space_hash: String,
        records: usize,
        bench_seed: u64,
        mean: f64,
        std: f64,
        min: f64,
        max: f64,
    }
    let summary = Summary {
        space_hash: table.space_hash.clone(),
        records: table.len(),
        bench_seed: table.config.seed,
        mean,
        std,
        min,
        max,
    };
    let mut t = Table::new("ground-truth accuracy", &["children", "mean", "std", "min", "max"]);
    t.row(vec![table.len().to_string(), f4(mean), f4(std), f4(min), f4(max)]);
    let mut out = vec![path];
    out.extend(write_report(
        cfg.out(),
        "bench_summary",
        &cfg.hash,
        &[table.config.seed],
        &summary,
        &[t],
        &[],
    )?);
    Ok(out)
}

/// Run shrinking once per seed; write a log and the shrunk space for each.
pub fn cmd_shrink(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (train, _) = cfg.file.data.generate()?;
    let dir = cfg.out().join("shrink");
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut out = Vec::new();
    let mut t = Table::new("shrinking", &["seed", "iterations", "final size", "removed", "resets"]);
    #[derive(Serialize)]
    struct Run {
        seed: u64,
        iterations: usize,
        final_size: u64,
        removed: Vec<String>,
        space_hash: String,
    }
    let mut runs = Vec::new();
    for &seed in &cfg.file.seeds {
        let (state, _) = run_abs(&cfg.space, &cfg.file.shrink, &cfg.file.train, &train, seed)?;
        let log = dir.join(format!("seed-{seed}.jsonl"));
        write_log(&log, &log_lines(&cfg.space, &state, seed, &cfg.hash))?;
        let space_file = dir.join(format!("seed-{seed}.space.json"));
        state.space.save(&space_file)?;
        let removed: Vec<String> = state.removed().map(|op| op.to_string()).collect();
        t.row(vec![
            seed.to_string(),
            state.log.len().to_string(),
            state.space.space_size().to_string(),
            removed.join(" "),
            state.log.iter().filter(|r| r.reset).count().to_string(),
        ]);
        runs.push(Run {
            seed,
            iterations: state.log.len(),
            final_size: state.space.space_size() as u64,
            removed,
            space_hash: state.space.hash(),
        });
        out.push(log);
        out.push(space_file);
    }
    out.extend(write_report(cfg.out(), "shrink_summary", &cfg.hash, &cfg.file.seeds, &runs, &[t], &[])?);
    Ok(out)
}

struct Inputs {
    table: GroundTruthTable,
    train: ToyDataset,
    validation: ToyDataset,
}

/// Run the selected experiments against an existing benchmark table.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.out().join("reports");
    if cfg.file.experiments.is_empty() {
        return write_report(
            &dir,
            "evaluate_summary",
            &cfg.hash,
            &cfg.file.seeds,
            &Vec::<String>::new(),
            &[],
            &["no experiments selected"],
        );
    }
    let table = GroundTruthTable::load(&cfg.bench_path(), &cfg.space)?;
    let (train, validation) = cfg.file.data.generate()?;
    let inputs = Inputs {
        table,
        train,
        validation,
    };
    let mut out = Vec::new();
    let mut stability_cache = None;
    for &kind in &cfg.file.experiments {
        out.extend(match kind {
            ExperimentKind::Ranking | ExperimentKind::Stability => {
                if stability_cache.is_none() {
                    stability_cache = Some(stability_runs(cfg, &inputs)?);
                }
                let runs = stability_cache.as_ref().expect("filled above");
                if kind == ExperimentKind::Ranking {
                    ranking_report(cfg, &dir, runs)?
                } else {
                    stability_report(cfg, &dir, runs)?
                }
            }
            ExperimentKind::Convergence => convergence(cfg, &inputs, &dir)?,
            ExperimentKind::Timing => timing(cfg, &inputs, &dir)?,
            ExperimentKind::Selection => selection(cfg, &inputs, &dir)?,
            ExperimentKind::Search => search_study(cfg, &inputs, &dir)?,
        });
    }
    let names: Vec<&str> = cfg.file.experiments.iter().map(|k| k.name()).collect();
    out.extend(write_report(&dir, "evaluate_summary", &cfg.hash, &cfg.file.seeds, &names, &[], &[])?);
    Ok(out)
}

fn experiment<'a>(cfg: &'a ExperimentConfig, inputs: &'a Inputs) -> Experiment<'a> {
    Experiment {
        space: &cfg.space,
        table: &inputs.table,
        train: &inputs.train,
        validation: &inputs.validation,
        train_cfg: &cfg.file.train,
        angle: cfg.angle(),
    }
}

const RANK_METRICS: [RankMetric; 3] = [RankMetric::Angle, RankMetric::AccuracyRebn, RankMetric::Random];

fn stability_runs(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<Vec<StabilityReport>> {
    let children = ranking_children(&cfg.space, cfg.file.evaluate.ranking_limit, cfg.file.seeds[0]);
    let runs = experiment(cfg, inputs).stability(
        &children,
        &RANK_METRICS,
        cfg.file.evaluate.supernet_epochs,
        &cfg.file.seeds,
    )?;
    Ok(runs.into_iter().map(|(s, _)| s).collect())
}

fn ranking_report(cfg: &ExperimentConfig, dir: &std::path::Path, runs: &[StabilityReport]) -> Result<Vec<PathBuf>> {
    let mut t = Table::new("mean Kendall tau vs ground truth", &["metric", "mean tau", "std", "seeds"]);
    for r in runs {
        t.row(vec![r.metric.name().into(), f4(r.mean), f4(r.std), r.taus.len().to_string()]);
    }
    let random = runs.iter().find(|r| r.metric == RankMetric::Random);
    let mut notes = Vec::new();
    let margin;
    if let (Some(angle), Some(random)) = (runs.iter().find(|r| r.metric == RankMetric::Angle), random) {
        margin = format!(
            "angle exceeds random by {} random standard deviations",
            f4((angle.mean - random.mean) / random.std.max(f64::MIN_POSITIVE))
        );
        notes.push(margin.as_str());
    }
    write_report(dir, "ranking", &cfg.hash, &cfg.file.seeds, &runs, &[t], &notes)
}

fn stability_report(cfg: &ExperimentConfig, dir: &std::path::Path, runs: &[StabilityReport]) -> Result<Vec<PathBuf>> {
    let mut t = Table::new("tau across seeds", &["metric", "mean", "std", "range", "taus"]);
    for r in runs {
        let taus: Vec<String> = r.taus.iter().map(|v| f4(*v)).collect();
        t.row(vec![r.metric.name().into(), f4(r.mean), f4(r.std), f4(r.range), taus.join(" ")]);
    }
    write_report(dir, "stability", &cfg.hash, &cfg.file.seeds, &runs, &[t], &[])
}

fn convergence(cfg: &ExperimentConfig, inputs: &Inputs, dir: &std::path::Path) -> Result<Vec<PathBuf>> {
    let seed = cfg.file.seeds[0];
    let children = ranking_children(&cfg.space, cfg.file.evaluate.ranking_limit, seed);
    let metrics = [RankMetric::Angle, RankMetric::AccuracyRebn];
    let points = experiment(cfg, inputs).convergence_curve(&children, &metrics, &cfg.file.evaluate.probe_epochs, seed)?;
    let mut t = Table::new("tau during supernet training", &["epoch", "angle", "accuracy-rebn"]);
    for pair in points.chunks(metrics.len()) {
        let cell = |p: &angleshrink::evalstats::ConvergencePoint| {
            if p.degenerate {
                format!("{} (degenerate)", f4(p.tau))
            } else {
                f4(p.tau)
            }
        };
        t.row(vec![pair[0].epoch.to_string(), cell(&pair[0]), cell(&pair[1])]);
    }
    write_report(dir, "convergence", &cfg.hash, &[seed], &points, &[t], &[])
}

fn timing(cfg: &ExperimentConfig, inputs: &Inputs, dir: &std::path::Path) -> Result<Vec<PathBuf>> {
    let seed = cfg.file.seeds[0];
    let store = train_supernet(&cfg.space, &inputs.train, &cfg.file.train, cfg.file.evaluate.supernet_epochs, seed)?;
    let ctx = EvalContext {
        space: &cfg.space,
        store: &store,
        train: &inputs.train,
        validation: &inputs.validation,
        angle: cfg.angle(),
    };
    let children = ranking_children(&cfg.space, cfg.file.evaluate.timing_children, seed);
    let (angle, acc) = timing_comparison(&ctx, &children, cfg.file.evaluate.timing_repetitions)?;
    let mut t = Table::new(
        "evaluation time (sequential)",
        &["metric", "children", "repetitions", "mean s", "std s"],
    );
    for r in [&angle, &acc] {
        t.row(vec![
            r.metric.name().into(),
            r.children.to_string(),
            r.repetitions.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.std),
        ]);
    }
    let speedup = format!("angle is {:.1}x faster", acc.mean / angle.mean);
    write_report(dir, "timing", &cfg.hash, &[seed], &[angle, acc], &[t], &[&speedup])
}

fn selection(cfg: &ExperimentConfig, inputs: &Inputs, dir: &std::path::Path) -> Result<Vec<PathBuf>> {
    let e = &cfg.file.evaluate;
    let report = experiment(cfg, inputs).operator_selection(
        e.selection_drop,
        &[RankMetric::Angle, RankMetric::AccuracyRebn],
        e.selection_samples,
        &cfg.file.seeds,
    )?;
    let mut gt = Table::new("ground-truth operator scores", &["operator", "name", "score", "rank", "reserved"]);
    for g in &report.ground_truth {
        gt.row(vec![
            g.op.to_string(),
            cfg.space.op(g.op).map_or(String::new(), |o| o.name.clone()),
            f4(g.score),
            g.rank.to_string(),
            report.ground_truth_reserved.contains(&g.op).to_string(),
        ]);
    }
    let mut runs = Table::new(
        "reserved operators by metric",
        &["seed", "metric", "removed", "overlap with ground truth", "mean reserved rank"],
    );
    for r in &report.runs {
        let removed: Vec<String> = r.removed.iter().map(|op| op.to_string()).collect();
        runs.row(vec![
            r.seed.to_string(),
            r.metric.name().into(),
            removed.join(" "),
            format!("{}/{}", r.overlap, report.ground_truth_reserved.len()),
            f4(r.mean_reserved_rank),
        ]);
    }
    write_report(dir, "selection", &cfg.hash, &cfg.file.seeds, &report, &[gt, runs], &[])
}

fn search_study(cfg: &ExperimentConfig, inputs: &Inputs, dir: &std::path::Path) -> Result<Vec<PathBuf>> {
    let seed = cfg.file.seeds[0];
    let mut spaces: Vec<(String, SupernetGraph)> = vec![("original".into(), cfg.space.clone())];
    for &s in &cfg.file.seeds {
        let (state, _) = run_abs(&cfg.space, &cfg.file.shrink, &cfg.file.train, &inputs.train, s)?;
        spaces.push((format!("abs-seed-{s}"), state.space));
    }
    let catalog = ShrunkSpaceCatalog::uniform_subsets(&cfg.space)?;
    for entry in catalog.entries.iter().skip(1) {
        spaces.push((
            format!("{} {{{}}}", entry.name, entry.operators.join(",")),
            SupernetGraph::from_file(entry.space.clone())?,
        ));
    }
    let e = &cfg.file.evaluate;
    let rows = compare_spaces(&inputs.table, &spaces, e.search_budget, e.search_trials, e.evolution, seed)?;
    let mut t = Table::new(
        "best-found accuracy by space and searcher",
        &["space", "children", "searcher", "budget", "trials", "mean best", "std"],
    );
    for r in &rows {
        t.row(vec![
            r.space.clone(),
            r.size.to_string(),
            format!("{:?}", r.searcher).to_lowercase(),
            r.budget.to_string(),
            r.trials.to_string(),
            f4(r.mean_best),
            f4(r.std_best),
        ]);
    }
    let notes = [
        "Exhaustive search can only lose accuracy in a subspace; the shrunk spaces help budgeted searchers, not exhaustive ones.",
    ];
    write_report(dir, "search", &cfg.hash, &cfg.file.seeds, &rows, &[t], &notes)
}

/// Concatenate the text reports found under the output directory.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let mut parts = Vec::new();
    let mut candidates = vec![
        cfg.out().join("bench_summary.txt"),
        cfg.out().join("shrink_summary.txt"),
    ];
    for k in ExperimentKind::ALL {
        candidates.push(cfg.out().join("reports").join(format!("{}.txt", k.name())));
    }
    for path in candidates {
        if let Ok(text) = fs::read_to_string(&path) {
            parts.push(text);
        }
    }
    if parts.is_empty() {
        bail!("no reports under {}; run bench, shrink or evaluate first", cfg.out().display());
    }
    let text = parts.join("\n");
    let path = cfg.out().join("report.txt");
    fs::write(&path, &text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(text)
}
