#![allow(dead_code)]

use angleshrink::graph::{ChildModel, Edge, OperatorSpec, SupernetGraph};
use angleshrink::nnet::{loss_and_grads, Matrix, NetworkParams, ParamKey};
use angleshrink::supernet::{init_supernet, InitPolicy};
use rand::Rng;

/// A random valid DAG on `n` nodes whose edges carry 1-3 operators of width `dim`.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize, dim: usize, density: f64) -> SupernetGraph {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for j in 1..n {
        for i in 0..j {
            if rng.random_bool(density) {
                pairs.push((i, j));
            }
        }
    }
    for v in 1..n {
        if !pairs.iter().any(|&(_, t)| t == v) {
            pairs.push((rng.random_range(0..v), v));
        }
    }
    for v in 0..n - 1 {
        if !pairs.iter().any(|&(s, _)| s == v) {
            pairs.push((v, rng.random_range(v + 1..n)));
        }
    }
    pairs.sort();
    pairs.dedup();
    let edges = pairs
        .into_iter()
        .map(|(source, target)| {
            let mut ops = vec![OperatorSpec::parametric("dense", dim, dim)];
            if rng.random_bool(0.5) {
                ops.push(OperatorSpec::identity("skip", dim));
            }
            if rng.random_bool(0.3) {
                ops.push(OperatorSpec::pooling("pool", 3, dim));
            }
            if rng.random_bool(0.3) {
                ops.push(OperatorSpec::none("none"));
            }
            for (slot, op) in ops.iter_mut().enumerate() {
                op.slot = slot;
            }
            Edge { source, target, ops }
        })
        .collect();
    SupernetGraph::new((0..n).map(|i| format!("v{i}")).collect(), edges, None).expect("generator builds valid DAGs")
}

/// A uniformly drawn connected child, or `None` if none was found quickly.
pub fn random_child<R: Rng>(rng: &mut R, space: &SupernetGraph) -> Option<ChildModel> {
    space.sample_child(rng, None).ok()
}

/// Root-to-leaf paths of `child` by plain depth-first search, as
/// `(node sequence, edge sequence)` pairs sorted lexicographically.
pub fn dfs_paths(space: &SupernetGraph, child: &ChildModel) -> Vec<(Vec<usize>, Vec<usize>)> {
    fn walk(
        space: &SupernetGraph,
        child: &ChildModel,
        node: usize,
        nodes: &mut Vec<usize>,
        edges: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, Vec<usize>)>,
    ) {
        if node == space.leaf() {
            out.push((nodes.clone(), edges.clone()));
            return;
        }
        for (e, edge) in space.edges().iter().enumerate() {
            if edge.source == node && child.is_present(e) {
                nodes.push(edge.target);
                edges.push(e);
                walk(space, child, edge.target, nodes, edges, out);
                nodes.pop();
                edges.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(space, child, space.root(), &mut vec![space.root()], &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// `(concordant - discordant) / (n(n-1)/2)` by looking at every pair.
pub fn brute_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
            let b = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
            s += a * b;
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

/// Norm-wise relative error between backprop and central finite differences
/// over every parameter used by `child`.
pub fn gradient_check_error<R: Rng>(rng: &mut R, space: &SupernetGraph, child: &ChildModel) -> f64 {
    let classes = 3;
    let policy = [InitPolicy::KaimingNormal, InitPolicy::XavierUniform, InitPolicy::Orthogonal][rng.random_range(0..3)];
    let store = init_supernet(space, 2, classes, policy, rng.random()).unwrap();
    let mut params: NetworkParams = store.params.clone();
    // move the affine norm parameters off their identity start
    for (key, t) in params.tensors.iter_mut() {
        if matches!(key, ParamKey::StemScale | ParamKey::StemShift | ParamKey::OpScale(_) | ParamKey::OpShift(_) | ParamKey::HeadBias) {
            for v in &mut t.values.data {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    let rows = 8;
    let x = Matrix::from_vec(rows, 2, (0..rows * 2).map(|_| rng.random_range(-2.0..2.0)).collect());
    let labels: Vec<usize> = (0..rows).map(|i| i % classes).collect();
    let (_, grads, _) = loss_and_grads(space, child, &params, &x, &labels).unwrap();

    let h = 1e-5;
    let mut diff2 = 0.0;
    let mut norm_a = 0.0;
    let mut norm_n = 0.0;
    for (key, g) in &grads {
        for i in 0..g.data.len() {
            let orig = params.tensors[key].values.data[i];
            params.tensors.get_mut(key).unwrap().values.data[i] = orig + h;
            let (plus, _, _) = loss_and_grads(space, child, &params, &x, &labels).unwrap();
            params.tensors.get_mut(key).unwrap().values.data[i] = orig - h;
            let (minus, _, _) = loss_and_grads(space, child, &params, &x, &labels).unwrap();
            params.tensors.get_mut(key).unwrap().values.data[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            diff2 += (g.data[i] - numeric).powi(2);
            norm_a += g.data[i].powi(2);
            norm_n += numeric.powi(2);
        }
    }
    diff2.sqrt() / (norm_a.sqrt() + norm_n.sqrt()).max(1e-12)
}

/// Recorded shrink log for [`golden_run`].
pub const GOLDEN_LOG: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/toy_seed7.jsonl");

/// Six edges with three operators each, k = 2, T = 100, a short training schedule.
pub fn golden_run() -> Vec<angleshrink::shrink::LogLine> {
    use angleshrink::nnet::data::DataConfig;
    use angleshrink::shrink::{log_lines, run_abs, ShrinkConfig};
    use angleshrink::supernet::TrainConfig;

    let space = angleshrink::graph::toy_space(9);
    let data = DataConfig {
        train_size: 128,
        validation_size: 32,
        ..DataConfig::default()
    }
    .generate()
    .unwrap()
    .0;
    let train = TrainConfig {
        first_stage_epochs: 3,
        stage_epochs: 1,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let cfg = ShrinkConfig {
        threshold: 100,
        drop_per_iteration: 2,
        samples: 20,
        ..ShrinkConfig::default()
    };
    let (state, _) = run_abs(&space, &cfg, &train, &data, 7).unwrap();
    log_lines(&space, &state, 7, "golden")
}

/// The JSONL bytes that [`angleshrink::shrink::write_log`] would produce.
pub fn log_bytes(lines: &[angleshrink::shrink::LogLine]) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    angleshrink::shrink::write_log(&path, lines).unwrap();
    std::fs::read(path).unwrap()
}
