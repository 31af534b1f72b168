//! Weight vectors of child models and the angle between two weight sets.
//!
//! A child's weight vector walks every root-to-leaf path of the child (in the
//! deterministic order of [`SupernetGraph::enumerate_paths`]) and concatenates
//! the kernels of the operators along each path. An operator shared by several
//! paths therefore appears once per path, which is what separates children
//! that hold the same learnable weights but wire them differently:
//!
//! * parametric operators contribute their flattened dense kernel;
//! * pooling contributes a constant `k x k` kernel of `1/k^2`;
//! * identity contributes an empty segment;
//! * `none` edges are absent from the child and never appear.
//!
//! The angle of a child is the angle between its vector under the reference
//! weights (the base snapshot, or `W0`) and under the current weights.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ChildModel, OperatorId, SupernetGraph};
use crate::supernet::{WeightSet, WeightStore};

pub const DEFAULT_PATH_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VectorMode {
    /// Paths from the root to the leaf of the whole graph.
    #[default]
    FullGraph,
    /// Paths from entry to exit inside each block, blocks concatenated in order.
    BlockWise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleOptions {
    pub mode: VectorMode,
    /// Full-graph construction refuses children with more paths than this.
    pub path_cap: usize,
}

impl Default for AngleOptions {
    fn default() -> Self {
        Self {
            mode: VectorMode::FullGraph,
            path_cap: DEFAULT_PATH_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub path: usize,
    pub op: OperatorId,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub provenance: Vec<Segment>,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// An angle in radians, always within `[0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct AngleValue(f64);

impl AngleValue {
    pub fn radians(self) -> f64 {
        self.0
    }
}

/// The `(path, operator)` sequence of a child's weight vector, before any weights are read.
pub fn vector_layout(
    space: &SupernetGraph,
    child: &ChildModel,
    opts: AngleOptions,
) -> Result<Vec<(usize, OperatorId)>> {
    let op_on = |e: usize| OperatorId::new(e, child.choices()[e]);
    let mut layout = Vec::new();
    match opts.mode {
        VectorMode::FullGraph => {
            let count = space.count_paths(child);
            if count > opts.path_cap as u128 {
                return Err(Error::PathExplosion {
                    paths: count,
                    cap: opts.path_cap,
                });
            }
            for (p, path) in space.enumerate_paths(child)?.iter().enumerate() {
                layout.extend(path.edges.iter().map(|&e| (p, op_on(e))));
            }
        }
        VectorMode::BlockWise => {
            let blocks = space.blocks().ok_or(Error::MissingBlocks)?;
            let mut p = 0;
            for block in blocks {
                let inside = |e: usize| block.edges.contains(&e) && child.is_on_path(e);
                let count = space.count_paths_between(block.entry, block.exit, inside);
                if count > opts.path_cap as u128 {
                    return Err(Error::PathExplosion {
                        paths: count,
                        cap: opts.path_cap,
                    });
                }
                for path in space.paths_between(block.entry, block.exit, inside) {
                    layout.extend(path.edges.iter().map(|&e| (p, op_on(e))));
                    p += 1;
                }
            }
        }
    }
    Ok(layout)
}

/// `V(g, W)` for the chosen weight set.
pub fn build_weight_vector(
    space: &SupernetGraph,
    child: &ChildModel,
    store: &WeightStore,
    set: WeightSet,
    opts: AngleOptions,
) -> Result<WeightVector> {
    let layout = vector_layout(space, child, opts)?;
    assemble(space, store, set, &layout)
}

fn assemble(
    space: &SupernetGraph,
    store: &WeightStore,
    set: WeightSet,
    layout: &[(usize, OperatorId)],
) -> Result<WeightVector> {
    let mut values = Vec::new();
    let mut provenance = Vec::with_capacity(layout.len());
    for &(path, op) in layout {
        let kernel = store.kernel(space, op, set).ok_or(Error::UnknownOperator(op))?;
        let start = values.len();
        values.extend_from_slice(&kernel);
        provenance.push(Segment {
            path,
            op,
            span: start..values.len(),
        });
    }
    if values.is_empty() {
        return Err(Error::EmptyVector);
    }
    Ok(WeightVector { values, provenance })
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Angle between two equal-length vectors.
///
/// Uses `2 atan2(|a/|a| - b/|b||, |a/|a| + b/|b||)`, which equals
/// `arccos(<a, b> / (|a| |b|))` but keeps full precision near 0 and pi.
pub fn angle_between(a: &[f64], b: &[f64]) -> Result<AngleValue> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyVector);
    }
    let na = compensated_sum(a.iter().map(|x| x * x)).sqrt();
    let nb = compensated_sum(b.iter().map(|x| x * x)).sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::ZeroNormVector);
    }
    let diff = compensated_sum(a.iter().zip(b).map(|(x, y)| (x / na - y / nb).powi(2))).sqrt();
    let sum = compensated_sum(a.iter().zip(b).map(|(x, y)| (x / na + y / nb).powi(2))).sqrt();
    let theta = 2.0 * diff.atan2(sum);
    Ok(AngleValue(theta.clamp(0.0, std::f64::consts::PI)))
}

/// Plain `arccos` of the clamped cosine; kept as an independent route for tests.
pub fn angle_by_arccos(a: &[f64], b: &[f64]) -> Result<AngleValue> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let dot = compensated_sum(a.iter().zip(b).map(|(x, y)| x * y));
    let na = compensated_sum(a.iter().map(|x| x * x)).sqrt();
    let nb = compensated_sum(b.iter().map(|x| x * x)).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNormVector);
    }
    Ok(AngleValue((dot / (na * nb)).clamp(-1.0, 1.0).acos()))
}

/// `Delta_g`: the angle between `V(g, reference)` and `V(g, W)`.
pub fn angle_of_child(
    space: &SupernetGraph,
    child: &ChildModel,
    store: &WeightStore,
    reference: WeightSet,
    opts: AngleOptions,
) -> Result<AngleValue> {
    let layout = vector_layout(space, child, opts)?;
    let reference = assemble(space, store, reference, &layout)?;
    let current = assemble(space, store, WeightSet::Current, &layout)?;
    angle_between(&reference.values, &current.values)
}

/// Angle used for ranking and scoring. A child whose vector is empty (only
/// identity operators on every path) carries no learnable direction and scores 0.
pub fn angle_metric(
    space: &SupernetGraph,
    child: &ChildModel,
    store: &WeightStore,
    reference: WeightSet,
    opts: AngleOptions,
) -> Result<f64> {
    match angle_of_child(space, child, store, reference, opts) {
        Ok(a) => Ok(a.radians()),
        Err(Error::EmptyVector) => Ok(0.0),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{toy_space, Block, Edge, OpKind, OperatorSpec};
    use crate::nnet::ParamKey;
    use crate::supernet::{init_supernet, reset_base_weights, InitPolicy};
    use std::f64::consts::PI;

    /// Chain `W1 -> W2 -> W3` with an optional shortcut around the first two.
    fn shortcut_space() -> SupernetGraph {
        SupernetGraph::new(
            (0..4).map(|i| format!("o{}", i + 1)).collect(),
            vec![
                Edge { source: 0, target: 1, ops: vec![OperatorSpec::parametric("w1", 4, 4)] },
                Edge { source: 1, target: 2, ops: vec![OperatorSpec::parametric("w2", 4, 4)] },
                Edge { source: 2, target: 3, ops: vec![OperatorSpec::parametric("w3", 4, 4)] },
                Edge {
                    source: 0,
                    target: 2,
                    ops: vec![OperatorSpec::identity("skip", 4), OperatorSpec::none("none")],
                },
            ],
            None,
        )
        .unwrap()
    }

    fn kernel(store: &WeightStore, e: usize) -> Vec<f64> {
        store.params.tensors[&ParamKey::Op(OperatorId::new(e, 0))].values.data.clone()
    }

    #[test]
    fn shortcut_duplicates_shared_segment() {
        let space = shortcut_space();
        let store = init_supernet(&space, 2, 3, InitPolicy::KaimingNormal, 0).unwrap();
        let with_skip = space.child(vec![0, 0, 0, 0]).unwrap();
        let sequential = space.child(vec![0, 0, 0, 1]).unwrap();
        let v1 = build_weight_vector(&space, &with_skip, &store, WeightSet::Current, AngleOptions::default()).unwrap();
        let v2 = build_weight_vector(&space, &sequential, &store, WeightSet::Current, AngleOptions::default()).unwrap();
        let (w1, w2, w3) = (kernel(&store, 0), kernel(&store, 1), kernel(&store, 2));
        assert_eq!(v1.values, [w1.clone(), w2.clone(), w3.clone(), w3.clone()].concat());
        assert_eq!(v2.values, [w1, w2, w3].concat());
        // skip contributes a zero-length segment on the second path
        assert_eq!(v1.provenance[3].span, 48..48);
        assert_eq!(v1.provenance[3].path, 1);
    }

    #[test]
    fn single_edge_vector_is_flattened_kernel() {
        let space = SupernetGraph::new(
            vec!["a".into(), "b".into()],
            vec![Edge { source: 0, target: 1, ops: vec![OperatorSpec::parametric("w", 3, 3)] }],
            None,
        )
        .unwrap();
        let store = init_supernet(&space, 2, 2, InitPolicy::Orthogonal, 1).unwrap();
        let child = space.child(vec![0]).unwrap();
        let v = build_weight_vector(&space, &child, &store, WeightSet::Current, AngleOptions::default()).unwrap();
        assert_eq!(v.values, kernel(&store, 0));
    }

    #[test]
    fn complete_cell_length_matches_path_walk() {
        let space = toy_space(9);
        let store = init_supernet(&space, 2, 4, InitPolicy::KaimingNormal, 0).unwrap();
        let child = space.child(vec![2; 6]).unwrap();
        let v = build_weight_vector(&space, &child, &store, WeightSet::Current, AngleOptions::default()).unwrap();
        // independent walk: 1-2-3-4 (3 ops), 1-2-4 (2), 1-3-4 (2), 1-4 (1)
        fn walk(node: usize, leaf: usize, depth: usize, out: &mut Vec<usize>) {
            if node == leaf {
                out.push(depth);
                return;
            }
            for next in node + 1..=leaf {
                walk(next, leaf, depth + 1, out);
            }
        }
        let mut lens = Vec::new();
        walk(0, 3, 0, &mut lens);
        assert_eq!(lens.len(), 4);
        assert_eq!(v.len(), lens.iter().sum::<usize>() * 81);
        assert_eq!(v.len(), 8 * 81);
    }

    #[test]
    fn all_identity_child_has_empty_vector() {
        let space = toy_space(9);
        let store = init_supernet(&space, 2, 4, InitPolicy::KaimingNormal, 0).unwrap();
        let child = space.child(vec![0; 6]).unwrap();
        assert!(matches!(
            build_weight_vector(&space, &child, &store, WeightSet::Current, AngleOptions::default()),
            Err(Error::EmptyVector)
        ));
        assert_eq!(angle_metric(&space, &child, &store, WeightSet::Base, AngleOptions::default()).unwrap(), 0.0);
    }

    #[test]
    fn elementary_angles() {
        assert_eq!(angle_between(&[1.0, 2.0], &[1.0, 2.0]).unwrap().radians(), 0.0);
        assert!((angle_between(&[1.0, 0.0], &[0.0, 1.0]).unwrap().radians() - PI / 2.0).abs() < 1e-15);
        let a = angle_between(&[1.0, 1.0, 0.0], &[1.0, 0.0, 1.0]).unwrap().radians();
        assert!((a - PI / 3.0).abs() < 1e-15);
        let b = angle_by_arccos(&[1.0, 1.0, 0.0], &[1.0, 0.0, 1.0]).unwrap().radians();
        assert!((a - b).abs() < 1e-15);
        assert!((angle_between(&[1.0, 0.0], &[-2.0, 0.0]).unwrap().radians() - PI).abs() < 1e-15);
        assert!(matches!(angle_between(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNormVector)));
        assert!(matches!(angle_between(&[1.0], &[1.0, 0.0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn untouched_weights_give_zero_angle() {
        let space = toy_space(9);
        let mut store = init_supernet(&space, 2, 4, InitPolicy::XavierUniform, 2).unwrap();
        let child = space.child(vec![2, 1, 2, 0, 2, 1]).unwrap();
        assert_eq!(angle_of_child(&space, &child, &store, WeightSet::Base, AngleOptions::default()).unwrap().radians(), 0.0);
        reset_base_weights(&mut store);
        assert_eq!(angle_of_child(&space, &child, &store, WeightSet::Base, AngleOptions::default()).unwrap().radians(), 0.0);
    }

    #[test]
    fn pooling_only_child_has_zero_angle() {
        let space = toy_space(9);
        let mut store = init_supernet(&space, 2, 4, InitPolicy::KaimingNormal, 2).unwrap();
        store.scale_operator_weights(-3.0);
        let child = space.child(vec![1, 0, 1, 1, 0, 1]).unwrap();
        assert_eq!(angle_of_child(&space, &child, &store, WeightSet::Init, AngleOptions::default()).unwrap().radians(), 0.0);
    }

    #[test]
    fn positive_rescaling_does_not_change_angle() {
        let space = toy_space(9);
        let mut store = init_supernet(&space, 2, 4, InitPolicy::KaimingNormal, 3).unwrap();
        // perturb so angles are nonzero
        for (k, t) in store.params.tensors.iter_mut() {
            if matches!(k, ParamKey::Op(_)) {
                for (i, v) in t.values.data.iter_mut().enumerate() {
                    *v += 0.05 * ((i as f64) * 1.3).sin();
                }
            }
        }
        // pooling kernels are constants and do not scale, so keep them out
        let child = space.child(vec![2, 2, 0, 2, 0, 2]).unwrap();
        let base = angle_of_child(&space, &child, &store, WeightSet::Init, AngleOptions::default()).unwrap().radians();
        assert!(base > 0.0);
        for c in [0.1, 3.0, 100.0] {
            let mut s = store.clone();
            s.scale_operator_weights(c);
            let a = angle_of_child(&space, &child, &s, WeightSet::Init, AngleOptions::default()).unwrap().radians();
            assert!((a - base).abs() < 1e-9);
        }
    }

    #[test]
    fn block_wise_needs_blocks_and_concatenates() {
        let space = shortcut_space();
        let store = init_supernet(&space, 2, 3, InitPolicy::KaimingNormal, 0).unwrap();
        let child = space.child(vec![0, 0, 0, 0]).unwrap();
        let opts = AngleOptions { mode: VectorMode::BlockWise, ..AngleOptions::default() };
        assert!(matches!(
            build_weight_vector(&space, &child, &store, WeightSet::Current, opts),
            Err(Error::MissingBlocks)
        ));

        let blocked = SupernetGraph::new(
            space.nodes().to_vec(),
            space.edges().to_vec(),
            Some(vec![
                Block { entry: 0, exit: 2, edges: vec![0, 1, 3] },
                Block { entry: 2, exit: 3, edges: vec![2] },
            ]),
        )
        .unwrap();
        let v = build_weight_vector(&blocked, &child, &store, WeightSet::Current, opts).unwrap();
        let (w1, w2, w3) = (kernel(&store, 0), kernel(&store, 1), kernel(&store, 2));
        // block 1: paths [w1 w2] and [skip]; block 2: [w3]
        assert_eq!(v.values, [w1, w2, w3].concat());
        assert_eq!(v.provenance.iter().map(|s| s.path).collect::<Vec<_>>(), vec![0, 0, 1, 2]);
    }

    #[test]
    fn path_cap_is_enforced() {
        let space = toy_space(9);
        let store = init_supernet(&space, 2, 4, InitPolicy::KaimingNormal, 0).unwrap();
        let child = space.child(vec![2; 6]).unwrap();
        let opts = AngleOptions { path_cap: 3, ..AngleOptions::default() };
        assert!(matches!(
            angle_of_child(&space, &child, &store, WeightSet::Base, opts),
            Err(Error::PathExplosion { paths: 4, cap: 3 })
        ));
    }

    #[test]
    fn vectors_share_provenance_across_weight_sets() {
        let space = toy_space(9);
        let store = init_supernet(&space, 2, 4, InitPolicy::KaimingNormal, 0).unwrap();
        let child = space.child(vec![2, 1, 0, 2, 2, 1]).unwrap();
        let a = build_weight_vector(&space, &child, &store, WeightSet::Current, AngleOptions::default()).unwrap();
        let b = build_weight_vector(&space, &child, &store, WeightSet::Init, AngleOptions::default()).unwrap();
        assert_eq!(a.provenance, b.provenance);
        let mut end = 0;
        for s in &a.provenance {
            assert_eq!(s.span.start, end);
            end = s.span.end;
            assert_eq!(s.span.len(), space.op(s.op).unwrap().kernel_len());
            assert!(space.op(s.op).unwrap().kind != OpKind::None);
        }
        assert_eq!(end, a.len());
    }
}
