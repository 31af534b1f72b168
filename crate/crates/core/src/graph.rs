//! Search spaces as directed acyclic graphs with alternative operators per edge.
//!
//! A [`SupernetGraph`] is a DAG `o_0 .. o_{M-1}` with a unique root (node 0)
//! and a unique leaf (the last node). Each edge carries a list of candidate
//! operators; a [`ChildModel`] picks exactly one of them per edge. Picking a
//! `none` operator removes the edge from the child.
//!
//! Operators are addressed by [`OperatorId`] `(edge, slot)`. Slots are stable:
//! removing an operator from a space never renumbers the survivors, so weights
//! and logs keyed by operator id stay valid across shrinking.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Schema id written into every search-space file.
pub const SPACE_SCHEMA: &str = "angleshrink-space/v1";

/// Retry budget for rejection sampling of connected children.
pub const MAX_SAMPLE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OperatorId {
    pub edge: usize,
    pub slot: usize,
}

impl OperatorId {
    pub fn new(edge: usize, slot: usize) -> Self {
        Self { edge, slot }
    }
}

impl fmt::Display for OperatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}:{}", self.edge, self.slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpKind {
    /// Dense map followed by normalization; owns learnable weights.
    Parametric,
    Identity,
    /// Fixed `k x k` average pooling over the feature grid.
    Pooling { k: usize },
    /// Removes the edge from any child that picks it.
    None,
}

impl OpKind {
    pub fn is_none(&self) -> bool {
        matches!(self, OpKind::None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub slot: usize,
    pub name: String,
    #[serde(flatten)]
    pub kind: OpKind,
    #[serde(default)]
    pub in_dim: usize,
    #[serde(default)]
    pub out_dim: usize,
}

impl OperatorSpec {
    pub fn parametric(name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::with_kind(name, OpKind::Parametric, in_dim, out_dim)
    }

    pub fn identity(name: &str, dim: usize) -> Self {
        Self::with_kind(name, OpKind::Identity, dim, dim)
    }

    pub fn pooling(name: &str, k: usize, dim: usize) -> Self {
        Self::with_kind(name, OpKind::Pooling { k }, dim, dim)
    }

    pub fn none(name: &str) -> Self {
        Self::with_kind(name, OpKind::None, 0, 0)
    }

    fn with_kind(name: &str, kind: OpKind, in_dim: usize, out_dim: usize) -> Self {
        Self {
            slot: 0,
            name: name.to_string(),
            kind,
            in_dim,
            out_dim,
        }
    }

    /// Number of entries this operator contributes to a weight vector.
    pub fn kernel_len(&self) -> usize {
        match self.kind {
            OpKind::Parametric => self.in_dim * self.out_dim,
            OpKind::Pooling { k } => k * k,
            OpKind::Identity | OpKind::None => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub ops: Vec<OperatorSpec>,
}

impl Edge {
    pub fn op(&self, slot: usize) -> Option<&OperatorSpec> {
        self.ops.iter().find(|o| o.slot == slot)
    }

    pub fn has_slot(&self, slot: usize) -> bool {
        self.op(slot).is_some()
    }
}

/// A non-intersecting sub-network with its own entry and exit node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub entry: usize,
    pub exit: usize,
    pub edges: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceFile {
    pub schema: String,
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<Block>>,
}

/// The search space `G(O, E)`. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupernetGraph {
    nodes: Vec<String>,
    edges: Vec<Edge>,
    blocks: Option<Vec<Block>>,
    topo: Vec<usize>,
}

impl SupernetGraph {
    pub fn new(nodes: Vec<String>, mut edges: Vec<Edge>, blocks: Option<Vec<Block>>) -> Result<Self> {
        // Slots default to list position when a caller did not number them.
        for edge in &mut edges {
            if edge.ops.len() > 1 && edge.ops.iter().all(|o| o.slot == 0) {
                for (i, op) in edge.ops.iter_mut().enumerate() {
                    op.slot = i;
                }
            }
        }
        let topo = validate(&nodes, &edges, blocks.as_deref())?;
        Ok(Self {
            nodes,
            edges,
            blocks,
            topo,
        })
    }

    pub fn from_file(file: SpaceFile) -> Result<Self> {
        if file.schema != SPACE_SCHEMA {
            return Err(Error::Schema {
                expected: SPACE_SCHEMA.into(),
                found: file.schema,
            });
        }
        Self::new(file.nodes, file.edges, file.blocks)
    }

    pub fn to_file(&self) -> SpaceFile {
        SpaceFile {
            schema: SPACE_SCHEMA.to_string(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            blocks: self.blocks.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SpaceFile = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_file()).expect("space serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn leaf(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn blocks(&self) -> Option<&[Block]> {
        self.blocks.as_deref()
    }

    /// Nodes in a topological order consistent with the declared node order.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn op(&self, id: OperatorId) -> Option<&OperatorSpec> {
        self.edges.get(id.edge).and_then(|e| e.op(id.slot))
    }

    pub fn contains_op(&self, id: OperatorId) -> bool {
        self.op(id).is_some()
    }

    /// Every live operator in `(edge, slot)` order.
    pub fn operators(&self) -> impl Iterator<Item = (OperatorId, &OperatorSpec)> + '_ {
        self.edges.iter().enumerate().flat_map(|(e, edge)| {
            edge.ops.iter().map(move |op| (OperatorId::new(e, op.slot), op))
        })
    }

    pub fn operator_count(&self) -> usize {
        self.edges.iter().map(|e| e.ops.len()).sum()
    }

    /// Feature width carried by a node, taken from any live operator touching it.
    pub fn node_dim(&self, node: usize) -> Option<usize> {
        self.edges.iter().find_map(|e| {
            e.ops.iter().filter(|o| !o.kind.is_none()).find_map(|o| {
                if e.source == node {
                    Some(o.in_dim)
                } else if e.target == node {
                    Some(o.out_dim)
                } else {
                    None
                }
            })
        })
    }

    /// A copy of the space without `id`. Remaining slots keep their numbers.
    pub fn without_operator(&self, id: OperatorId) -> Result<Self> {
        if !self.contains_op(id) {
            return Err(Error::UnknownOperator(id));
        }
        let mut edges = self.edges.clone();
        edges[id.edge].ops.retain(|o| o.slot != id.slot);
        if edges[id.edge].ops.is_empty() {
            return Err(Error::InvalidSpace(format!("removing {id} would empty edge {}", id.edge)));
        }
        Self::new(self.nodes.clone(), edges, self.blocks.clone())
    }

    /// The space keeping only the operators chosen by `child`.
    pub fn restricted_to(&self, child: &ChildModel) -> Result<Self> {
        let mut edges = self.edges.clone();
        for (edge, &slot) in edges.iter_mut().zip(child.choices()) {
            edge.ops.retain(|o| o.slot == slot);
        }
        Self::new(self.nodes.clone(), edges, self.blocks.clone())
    }

    /// A copy keeping, on every edge, only operators whose name is in `names`.
    pub fn with_operator_names(&self, names: &[&str]) -> Result<Self> {
        let mut edges = self.edges.clone();
        for edge in &mut edges {
            edge.ops.retain(|o| names.contains(&o.name.as_str()));
        }
        Self::new(self.nodes.clone(), edges, self.blocks.clone())
    }

    /// Whether `self` has the same topology as `parent` and only a subset of its operators.
    pub fn is_subspace_of(&self, parent: &SupernetGraph) -> bool {
        self.nodes == parent.nodes
            && self.edges.len() == parent.edges.len()
            && self.edges.iter().zip(&parent.edges).all(|(a, b)| {
                a.source == b.source
                    && a.target == b.target
                    && a.ops.iter().all(|o| b.op(o.slot) == Some(o))
            })
    }

    /// Build a child from one slot per edge.
    pub fn child(&self, choices: Vec<usize>) -> Result<ChildModel> {
        if choices.len() != self.edges.len() {
            return Err(Error::InvalidChild(format!(
                "expected {} choices, got {}",
                self.edges.len(),
                choices.len()
            )));
        }
        let mut present = Vec::with_capacity(choices.len());
        for (e, (&slot, edge)) in choices.iter().zip(&self.edges).enumerate() {
            let op = edge
                .op(slot)
                .ok_or_else(|| Error::InvalidChild(format!("edge {e} has no live slot {slot}")))?;
            present.push(!op.kind.is_none());
        }
        let on_path = self.edges_on_paths(&present);
        if !on_path.iter().any(|&b| b) {
            return Err(Error::InvalidChild(format!(
                "no path from root to leaf for choices {}",
                encode_choices(&choices)
            )));
        }
        Ok(ChildModel {
            choices,
            present,
            on_path,
        })
    }

    /// Edges that lie on at least one root-to-leaf path using only `present` edges.
    fn edges_on_paths(&self, present: &[bool]) -> Vec<bool> {
        let n = self.nodes.len();
        let mut from_root = vec![false; n];
        from_root[self.root()] = true;
        for &v in &self.topo {
            if !from_root[v] {
                continue;
            }
            for (e, edge) in self.edges.iter().enumerate() {
                if present[e] && edge.source == v {
                    from_root[edge.target] = true;
                }
            }
        }
        let mut to_leaf = vec![false; n];
        to_leaf[self.leaf()] = true;
        for &v in self.topo.iter().rev() {
            for (e, edge) in self.edges.iter().enumerate() {
                if present[e] && edge.source == v && to_leaf[edge.target] {
                    to_leaf[v] = true;
                }
            }
        }
        self.edges
            .iter()
            .enumerate()
            .map(|(e, edge)| present[e] && from_root[edge.source] && to_leaf[edge.target])
            .collect()
    }

    /// Whether some child of this space connects root to leaf.
    pub fn has_connected_child(&self) -> bool {
        let present: Vec<bool> = self
            .edges
            .iter()
            .map(|e| e.ops.iter().any(|o| !o.kind.is_none()))
            .collect();
        self.edges_on_paths(&present).iter().any(|&b| b)
    }

    /// Whether some root-to-leaf path runs only through edges that still offer
    /// a parametric operator, so the space holds at least one all-parametric child.
    pub fn has_parametric_path(&self) -> bool {
        let present: Vec<bool> = self
            .edges
            .iter()
            .map(|e| e.ops.iter().any(|o| o.kind == OpKind::Parametric))
            .collect();
        self.edges_on_paths(&present).iter().any(|&b| b)
    }

    /// Draw a connected child uniformly, optionally forcing one operator.
    pub fn sample_child<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        containing: Option<OperatorId>,
    ) -> Result<ChildModel> {
        self.sample_child_where(rng, containing, |_| true)
    }

    /// Like [`sample_child`](Self::sample_child), also rejecting children that fail `accept`.
    pub fn sample_child_where<R, F>(
        &self,
        rng: &mut R,
        containing: Option<OperatorId>,
        accept: F,
    ) -> Result<ChildModel>
    where
        R: Rng + ?Sized,
        F: Fn(&ChildModel) -> bool,
    {
        if let Some(id) = containing {
            if !self.contains_op(id) {
                return Err(Error::UnknownOperator(id));
            }
        }
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let choices: Vec<usize> = self
                .edges
                .iter()
                .enumerate()
                .map(|(e, edge)| match containing {
                    Some(id) if id.edge == e => id.slot,
                    _ if edge.ops.len() == 1 => edge.ops[0].slot,
                    _ => edge.ops[rng.random_range(0..edge.ops.len())].slot,
                })
                .collect();
            if let Ok(child) = self.child(choices) {
                if accept(&child) {
                    return Ok(child);
                }
            }
        }
        Err(Error::SamplingExhausted {
            attempts: MAX_SAMPLE_ATTEMPTS,
        })
    }

    /// `|G|`: the product of per-edge candidate counts, counting disconnected children too.
    pub fn space_size(&self) -> u128 {
        self.edges
            .iter()
            .fold(1u128, |acc, e| acc.saturating_mul(e.ops.len() as u128))
    }

    /// Every connected child, in lexicographic order of slot choices.
    pub fn children(&self) -> Vec<ChildModel> {
        let mut out = Vec::new();
        let mut idx = vec![0usize; self.edges.len()];
        loop {
            let choices = idx
                .iter()
                .zip(&self.edges)
                .map(|(&i, e)| e.ops[i].slot)
                .collect();
            if let Ok(child) = self.child(choices) {
                out.push(child);
            }
            // odometer increment, last edge fastest
            let mut pos = self.edges.len();
            loop {
                if pos == 0 {
                    out.sort_by(|a, b| a.choices.cmp(&b.choices));
                    return out;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < self.edges[pos].ops.len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }

    /// All simple paths `from -> to` through edges accepted by `allowed`,
    /// sorted lexicographically by node sequence (edge index breaks ties).
    pub fn paths_between<F>(&self, from: usize, to: usize, allowed: F) -> Vec<EdgePath>
    where
        F: Fn(usize) -> bool,
    {
        let n = self.nodes.len();
        let mut partial: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n];
        partial[from].push(Vec::new());
        for &v in &self.topo {
            if partial[v].is_empty() || v == to {
                continue;
            }
            let here = std::mem::take(&mut partial[v]);
            for (e, edge) in self.edges.iter().enumerate() {
                if edge.source != v || !allowed(e) {
                    continue;
                }
                for p in &here {
                    let mut q = p.clone();
                    q.push(e);
                    partial[edge.target].push(q);
                }
            }
            partial[v] = here;
        }
        let mut paths: Vec<EdgePath> = std::mem::take(&mut partial[to])
            .into_iter()
            .filter(|p| !p.is_empty() || from == to)
            .map(|edges| EdgePath { edges })
            .collect();
        paths.sort_by_cached_key(|p| {
            let nodes = self.path_nodes(p);
            (nodes, p.edges.clone())
        });
        paths
    }

    /// Number of simple paths `from -> to`, without materializing them.
    pub fn count_paths_between<F>(&self, from: usize, to: usize, allowed: F) -> u128
    where
        F: Fn(usize) -> bool,
    {
        let mut count = vec![0u128; self.nodes.len()];
        count[from] = 1;
        for &v in &self.topo {
            if count[v] == 0 || v == to {
                continue;
            }
            for (e, edge) in self.edges.iter().enumerate() {
                if edge.source == v && allowed(e) {
                    count[edge.target] = count[edge.target].saturating_add(count[v]);
                }
            }
        }
        count[to]
    }

    /// Node sequence visited by `path`, starting at the source of its first edge.
    pub fn path_nodes(&self, path: &EdgePath) -> Vec<usize> {
        let mut nodes = Vec::with_capacity(path.edges.len() + 1);
        if let Some(&first) = path.edges.first() {
            nodes.push(self.edges[first].source);
        }
        nodes.extend(path.edges.iter().map(|&e| self.edges[e].target));
        nodes
    }

    /// Every root-to-leaf path of `child`.
    pub fn enumerate_paths(&self, child: &ChildModel) -> Result<Vec<EdgePath>> {
        let paths = self.paths_between(self.root(), self.leaf(), |e| child.present[e]);
        if paths.is_empty() {
            return Err(Error::InvalidChild("no root-to-leaf path".into()));
        }
        Ok(paths)
    }

    pub fn count_paths(&self, child: &ChildModel) -> u128 {
        self.count_paths_between(self.root(), self.leaf(), |e| child.present[e])
    }

    /// Learnable-parameter count of the operators a child actually uses.
    pub fn child_param_count(&self, child: &ChildModel) -> usize {
        child
            .used_ops()
            .filter_map(|id| self.op(id))
            .filter(|o| o.kind == OpKind::Parametric)
            .map(|o| o.kernel_len())
            .sum()
    }
}

/// An ordered sequence of edge indices from one node to another.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgePath {
    pub edges: Vec<usize>,
}

/// A sub-graph `g(O, E~)` selecting one operator slot per edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChildModel {
    choices: Vec<usize>,
    present: Vec<bool>,
    on_path: Vec<bool>,
}

impl ChildModel {
    pub fn choices(&self) -> &[usize] {
        &self.choices
    }

    /// Edge is in `E~` (its chosen operator is not `none`).
    pub fn is_present(&self, edge: usize) -> bool {
        self.present[edge]
    }

    /// Edge lies on some root-to-leaf path and therefore affects the output.
    pub fn is_on_path(&self, edge: usize) -> bool {
        self.on_path[edge]
    }

    pub fn contains(&self, id: OperatorId) -> bool {
        self.choices.get(id.edge) == Some(&id.slot)
    }

    /// Operators on root-to-leaf paths, in edge order.
    pub fn used_ops(&self) -> impl Iterator<Item = OperatorId> + '_ {
        self.choices
            .iter()
            .enumerate()
            .filter(|(e, _)| self.on_path[*e])
            .map(|(e, &s)| OperatorId::new(e, s))
    }

    /// Effective edge set: `(edge, slot)` pairs that lie on a root-to-leaf path.
    pub fn effective_edges(&self) -> BTreeSet<OperatorId> {
        self.used_ops().collect()
    }

    pub fn encoding(&self) -> String {
        encode_choices(&self.choices)
    }
}

pub fn encode_choices(choices: &[usize]) -> String {
    choices
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

pub fn decode_choices(encoding: &str) -> Option<Vec<usize>> {
    encoding.split('-').map(|s| s.parse().ok()).collect()
}

fn validate(nodes: &[String], edges: &[Edge], blocks: Option<&[Block]>) -> Result<Vec<usize>> {
    let n = nodes.len();
    if n < 2 {
        return Err(Error::InvalidSpace("need at least two nodes".into()));
    }
    if edges.is_empty() {
        return Err(Error::InvalidSpace("no edges".into()));
    }
    let mut indeg = vec![0usize; n];
    let mut outdeg = vec![0usize; n];
    for (i, e) in edges.iter().enumerate() {
        if e.source >= n || e.target >= n || e.source == e.target {
            return Err(Error::InvalidSpace(format!("edge {i} has bad endpoints")));
        }
        if e.ops.is_empty() {
            return Err(Error::InvalidSpace(format!("edge {i} has no candidate operator")));
        }
        let mut slots: Vec<usize> = e.ops.iter().map(|o| o.slot).collect();
        slots.sort_unstable();
        slots.dedup();
        if slots.len() != e.ops.len() {
            return Err(Error::InvalidSpace(format!("edge {i} repeats a slot")));
        }
        for op in &e.ops {
            match op.kind {
                OpKind::Identity | OpKind::Pooling { .. } if op.in_dim != op.out_dim => {
                    return Err(Error::ShapeMismatch(format!(
                        "{} on edge {i} must preserve width",
                        op.name
                    )));
                }
                OpKind::Pooling { k } if k == 0 || k % 2 == 0 => {
                    return Err(Error::InvalidSpace(format!("pooling size {k} must be odd")));
                }
                OpKind::Parametric if op.in_dim == 0 || op.out_dim == 0 => {
                    return Err(Error::ShapeMismatch(format!("{} on edge {i} has zero width", op.name)));
                }
                _ => {}
            }
        }
        indeg[e.target] += 1;
        outdeg[e.source] += 1;
    }
    if indeg[0] != 0 {
        return Err(Error::InvalidSpace("first node must be the root".into()));
    }
    if outdeg[n - 1] != 0 {
        return Err(Error::InvalidSpace("last node must be the leaf".into()));
    }
    for v in 1..n - 1 {
        if indeg[v] == 0 || outdeg[v] == 0 {
            return Err(Error::InvalidSpace(format!("node {v} is a second root or leaf")));
        }
    }

    // Kahn's algorithm, lowest index first.
    let mut remaining = indeg.clone();
    let mut ready: BTreeSet<usize> = (0..n).filter(|&v| remaining[v] == 0).collect();
    let mut topo = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        topo.push(v);
        for e in edges.iter().filter(|e| e.source == v) {
            remaining[e.target] -= 1;
            if remaining[e.target] == 0 {
                ready.insert(e.target);
            }
        }
    }
    if topo.len() != n {
        return Err(Error::InvalidSpace("graph has a cycle".into()));
    }

    // Merge by summation needs one width per node.
    let mut width: Vec<Option<usize>> = vec![None; n];
    for (i, e) in edges.iter().enumerate() {
        for op in e.ops.iter().filter(|o| !o.kind.is_none()) {
            for (node, d) in [(e.source, op.in_dim), (e.target, op.out_dim)] {
                match width[node] {
                    None => width[node] = Some(d),
                    Some(w) if w != d => {
                        return Err(Error::ShapeMismatch(format!(
                            "edge {i} ({}) gives node {node} width {d}, expected {w}",
                            op.name
                        )))
                    }
                    _ => {}
                }
            }
        }
    }

    if let Some(blocks) = blocks {
        let mut seen = vec![0usize; edges.len()];
        for (b, block) in blocks.iter().enumerate() {
            if block.entry >= n || block.exit >= n {
                return Err(Error::InvalidSpace(format!("block {b} has bad entry/exit")));
            }
            for &e in &block.edges {
                if e >= edges.len() {
                    return Err(Error::InvalidSpace(format!("block {b} names missing edge {e}")));
                }
                seen[e] += 1;
            }
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(Error::InvalidSpace("blocks must partition the edge set".into()));
        }
    }
    Ok(topo)
}

/// The complete DAG on `nodes` nodes with every candidate in `ops` on each edge.
///
/// With four nodes this is the six-edge cell used by NAS-Bench-201.
pub fn complete_cell(nodes: usize, ops: &[OperatorSpec]) -> Result<SupernetGraph> {
    let names = (0..nodes).map(|i| format!("n{i}")).collect();
    let mut edges = Vec::new();
    for target in 1..nodes {
        for source in 0..target {
            let ops = ops
                .iter()
                .cloned()
                .enumerate()
                .map(|(slot, mut op)| {
                    op.slot = slot;
                    op
                })
                .collect();
            edges.push(Edge { source, target, ops });
        }
    }
    SupernetGraph::new(names, edges, None)
}

/// Default toy candidate set on a `dim`-wide cell: skip, 3x3 average pooling, dense.
pub fn toy_operators(dim: usize) -> Vec<OperatorSpec> {
    vec![
        OperatorSpec::identity("skip", dim),
        OperatorSpec::pooling("avg_pool_3x3", 3, dim),
        OperatorSpec::parametric("dense", dim, dim),
    ]
}

/// The default 729-child toy space: a four-node complete cell with three candidates per edge.
pub fn toy_space(dim: usize) -> SupernetGraph {
    complete_cell(4, &toy_operators(dim)).expect("toy space is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(n: usize) -> SupernetGraph {
        let names = (0..n).map(|i| format!("n{i}")).collect();
        let edges = (0..n - 1)
            .map(|i| Edge {
                source: i,
                target: i + 1,
                ops: vec![OperatorSpec::parametric("dense", 4, 4)],
            })
            .collect();
        SupernetGraph::new(names, edges, None).unwrap()
    }

    fn diamond() -> SupernetGraph {
        let names = (0..4).map(|i| format!("n{i}")).collect();
        let d = || vec![OperatorSpec::parametric("dense", 4, 4), OperatorSpec::none("none")];
        let edges = vec![
            Edge { source: 0, target: 1, ops: d() },
            Edge { source: 1, target: 3, ops: d() },
            Edge { source: 0, target: 2, ops: d() },
            Edge { source: 2, target: 3, ops: d() },
        ];
        SupernetGraph::new(names, edges, None).unwrap()
    }

    #[test]
    fn single_edge_has_one_path() {
        let g = chain(2);
        let c = g.child(vec![0]).unwrap();
        let paths = g.enumerate_paths(&c).unwrap();
        assert_eq!(paths, vec![EdgePath { edges: vec![0] }]);
    }

    #[test]
    fn diamond_has_two_paths() {
        let g = diamond();
        let c = g.child(vec![0, 0, 0, 0]).unwrap();
        let paths = g.enumerate_paths(&c).unwrap();
        let nodes: Vec<_> = paths.iter().map(|p| g.path_nodes(p)).collect();
        assert_eq!(nodes, vec![vec![0, 1, 3], vec![0, 2, 3]]);
    }

    #[test]
    fn complete_cell_paths_in_lexicographic_order() {
        let g = toy_space(9);
        let c = g.child(vec![2; 6]).unwrap();
        let nodes: Vec<_> = g
            .enumerate_paths(&c)
            .unwrap()
            .iter()
            .map(|p| g.path_nodes(p))
            .collect();
        assert_eq!(
            nodes,
            vec![vec![0, 1, 2, 3], vec![0, 1, 3], vec![0, 2, 3], vec![0, 3]]
        );
        assert_eq!(g.count_paths(&c), 4);
    }

    #[test]
    fn disconnected_child_is_rejected() {
        let g = diamond();
        // both branches cut
        let err = g.child(vec![1, 0, 0, 1]).unwrap_err();
        assert!(matches!(err, Error::InvalidChild(_)));
    }

    #[test]
    fn dangling_edges_are_present_but_off_path() {
        let g = diamond();
        let c = g.child(vec![0, 0, 1, 0]).unwrap();
        assert!(c.is_present(3));
        assert!(!c.is_on_path(3));
        assert_eq!(c.used_ops().count(), 2);
    }

    #[test]
    fn space_size_is_product_of_candidates() {
        assert_eq!(complete_cell(4, &[
            OperatorSpec::none("none"),
            OperatorSpec::identity("skip", 4),
            OperatorSpec::parametric("c1", 4, 4),
            OperatorSpec::parametric("c3", 4, 4),
            OperatorSpec::pooling("pool", 3, 4),
        ]).unwrap().space_size(), 15_625);
        assert_eq!(chain(2).space_size(), 1);

        let names = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        let ops = |n: usize| (0..n).map(|_| OperatorSpec::parametric("d", 2, 2)).collect::<Vec<_>>();
        let g = SupernetGraph::new(
            names,
            vec![
                Edge { source: 0, target: 1, ops: ops(2) },
                Edge { source: 1, target: 2, ops: ops(3) },
                Edge { source: 2, target: 3, ops: ops(4) },
            ],
            None,
        )
        .unwrap();
        assert_eq!(g.space_size(), 24);
    }

    #[test]
    fn removal_shrinks_size_and_keeps_slots() {
        let g = toy_space(9);
        let g2 = g.without_operator(OperatorId::new(2, 1)).unwrap();
        assert!(g2.space_size() < g.space_size());
        assert!(g2.contains_op(OperatorId::new(2, 2)));
        assert!(!g2.contains_op(OperatorId::new(2, 1)));
        let g3 = g2.without_operator(OperatorId::new(2, 0)).unwrap();
        assert!(g3.without_operator(OperatorId::new(2, 2)).is_err());
        assert!(g3.is_subspace_of(&g));
    }

    #[test]
    fn unique_child_of_single_op_space() {
        let g = chain(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            assert_eq!(g.sample_child(&mut rng, None).unwrap().choices(), &[0, 0, 0]);
        }
    }

    #[test]
    fn constrained_sampling_forces_slot() {
        let g = toy_space(9);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let c = g.sample_child(&mut rng, Some(OperatorId::new(2, 0))).unwrap();
            assert_eq!(c.choices()[2], 0);
        }
    }

    #[test]
    fn sampling_is_uniform_over_children() {
        let names = vec!["a".into(), "b".into(), "c".into()];
        let ops = || (0..3).map(|_| OperatorSpec::parametric("d", 2, 2)).collect::<Vec<_>>();
        let g = SupernetGraph::new(
            names,
            vec![
                Edge { source: 0, target: 1, ops: ops() },
                Edge { source: 1, target: 2, ops: ops() },
            ],
            None,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 9];
        let n = 10_000;
        for _ in 0..n {
            let c = g.sample_child(&mut rng, None).unwrap();
            counts[c.choices()[0] * 3 + c.choices()[1]] += 1;
        }
        let expected = n as f64 / 9.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 8 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 26.12, "chi2 = {chi2}");
        for &c in &counts {
            assert!((c as f64 / n as f64 - 1.0 / 9.0).abs() < 0.02);
        }
    }

    #[test]
    fn degenerate_space_exhausts_sampling() {
        // every edge can only be none on one side of the diamond
        let names = (0..3).map(|i| format!("n{i}")).collect();
        let g = SupernetGraph::new(
            names,
            vec![
                Edge { source: 0, target: 1, ops: vec![OperatorSpec::none("none")] },
                Edge { source: 1, target: 2, ops: vec![OperatorSpec::parametric("d", 2, 2)] },
            ],
            None,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            g.sample_child(&mut rng, None),
            Err(Error::SamplingExhausted { .. })
        ));
        assert!(!g.has_connected_child());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let g = toy_space(9);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| g.sample_child(&mut rng, None).unwrap().encoding())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    #[test]
    fn validation_rejects_bad_graphs() {
        let names: Vec<String> = (0..3).map(|i| format!("n{i}")).collect();
        let op = || vec![OperatorSpec::parametric("d", 2, 2)];
        // cycle
        let cyc = SupernetGraph::new(
            names.clone(),
            vec![
                Edge { source: 0, target: 1, ops: op() },
                Edge { source: 1, target: 2, ops: op() },
                Edge { source: 2, target: 1, ops: op() },
            ],
            None,
        );
        assert!(cyc.is_err());
        // empty candidate list
        let empty = SupernetGraph::new(
            names.clone(),
            vec![
                Edge { source: 0, target: 1, ops: vec![] },
                Edge { source: 1, target: 2, ops: op() },
            ],
            None,
        );
        assert!(empty.is_err());
        // blocks not a partition
        let bad_blocks = SupernetGraph::new(
            names,
            vec![
                Edge { source: 0, target: 1, ops: op() },
                Edge { source: 1, target: 2, ops: op() },
            ],
            Some(vec![Block { entry: 0, exit: 1, edges: vec![0] }]),
        );
        assert!(bad_blocks.is_err());
    }

    #[test]
    fn file_round_trip_preserves_hash() {
        let g = toy_space(9).without_operator(OperatorId::new(0, 1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("space.json");
        g.save(&path).unwrap();
        let back = SupernetGraph::load(&path).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.hash(), g.hash());
        assert_ne!(g.hash(), toy_space(9).hash());
    }

    #[test]
    fn children_of_toy_space() {
        let g = toy_space(9);
        let all = g.children();
        assert_eq!(all.len(), 729);
        assert_eq!(all[0].encoding(), "0-0-0-0-0-0");
    }
}
