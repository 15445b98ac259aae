//! The differentiable supernet: a stack of identical cells whose edges hold
//! softmax-relaxed operation mixtures.
//!
//! A cell is a DAG over two input slots (0 and 1, the previous two cell
//! outputs) and P intermediate nodes with stable ids starting at 2. Each
//! intermediate state is the sum of its input edges; each edge is either a
//! trainable mixture over the operation set or frozen to one operation. The
//! cell output concatenates all intermediate states and projects back to the
//! hidden width. Architecture weights (alpha) are shared across cells;
//! operation parameters are per cell.
//!
//! Node splitting rewrites the DAG in place: the split node keeps its id and
//! inputs, a fresh node is inserted right after it inheriting those inputs
//! plus an edge from the kept node, and downstream consumers re-source to the
//! fresh node. Every edge touching the pair restarts as a fresh trainable
//! mixture.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{entropy_of_probs, softmax_rows_impl, Tape, Tensor};
use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::gnnops::{glorot_uniform, op_forward, AggregationViews, OpKind, OpParams, REGISTRY};
use crate::scalar::Scalar;

/// Standard deviation of the near-zero initialization of alpha entries.
const ALPHA_JITTER: f64 = 1e-3;

/// One node split: `kept` keeps its id and input set, `fresh` is the new node
/// chained after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEvent {
    pub kept: usize,
    pub fresh: usize,
}

/// The cell DAG shared by all cells of the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellTopology {
    /// Intermediate node ids in processing order.
    order: Vec<usize>,
    /// Node id -> sorted input node ids. Invariant: non-empty, each input is
    /// a cell input (0, 1) or an intermediate earlier in `order`.
    inputs: BTreeMap<usize, Vec<usize>>,
    next_id: usize,
    splits: Vec<SplitEvent>,
}

impl CellTopology {
    /// Fully connected search topology: every intermediate node reads both
    /// cell inputs and all earlier intermediates.
    pub fn dense(p0: usize) -> Result<Self> {
        if p0 == 0 {
            return Err(Error::config("a cell needs at least one intermediate node"));
        }
        let mut order = Vec::with_capacity(p0);
        let mut inputs = BTreeMap::new();
        for id in 2..2 + p0 {
            let mut ins: Vec<usize> = vec![0, 1];
            ins.extend(2..id);
            inputs.insert(id, ins);
            order.push(id);
        }
        Ok(CellTopology {
            order,
            inputs,
            next_id: 2 + p0,
            splits: Vec::new(),
        })
    }

    /// Rebuild a topology from an explicit node order and edge list, as read
    /// back from an architecture file.
    pub fn from_edges(
        order: Vec<usize>,
        edges: &[(usize, usize)],
        splits: Vec<SplitEvent>,
    ) -> Result<Self> {
        let mut inputs: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &j in &order {
            inputs.insert(j, Vec::new());
        }
        for &(src, dst) in edges {
            inputs
                .get_mut(&dst)
                .ok_or_else(|| Error::data(format!("edge into unknown node {dst}")))?
                .push(src);
        }
        for ins in inputs.values_mut() {
            ins.sort_unstable();
            ins.dedup();
        }
        let next_id = order.iter().copied().max().unwrap_or(1) + 1;
        let topo = CellTopology {
            order,
            inputs,
            next_id,
            splits,
        };
        topo.check()?;
        Ok(topo)
    }

    pub fn p(&self) -> usize {
        self.order.len()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inputs(&self, j: usize) -> &[usize] {
        &self.inputs[&j]
    }

    pub fn splits(&self) -> &[SplitEvent] {
        &self.splits
    }

    /// All edges as (src, dst), grouped by destination in processing order.
    /// This is the canonical edge order used for parameter enumeration.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &j in &self.order {
            for &i in &self.inputs[&j] {
                out.push((i, j));
            }
        }
        out
    }

    /// Structural invariants: unique intermediate ids >= 2, every node keeps
    /// at least one input, and every input is a cell input or an intermediate
    /// strictly earlier in the order (which makes the DAG acyclic).
    pub fn check(&self) -> Result<()> {
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        if self.order.is_empty() {
            return Err(Error::data("cell has no intermediate nodes"));
        }
        for &j in &self.order {
            if j < 2 {
                return Err(Error::data(format!("intermediate node id {j} collides with cell inputs")));
            }
            if j >= self.next_id {
                return Err(Error::data(format!("node id {j} outruns the id counter")));
            }
            let ins = self
                .inputs
                .get(&j)
                .ok_or_else(|| Error::data(format!("node {j} has no input record")))?;
            if ins.is_empty() {
                return Err(Error::data(format!("node {j} has no inputs")));
            }
            if ins.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::data(format!("node {j} inputs are not sorted unique")));
            }
            for &i in ins {
                if i >= 2 && !seen.contains(&i) {
                    return Err(Error::data(format!(
                        "node {j} reads node {i} which is not earlier in the order"
                    )));
                }
            }
            if !seen.insert(j) {
                return Err(Error::data(format!("node {j} appears twice in the order")));
            }
        }
        if self.inputs.len() != self.order.len() {
            return Err(Error::data("input records do not match the node order"));
        }
        Ok(())
    }

    /// Split node `j`: the kept node retains id, inputs and position; a fresh
    /// node is inserted right after it with the same inputs plus an edge from
    /// the kept node, and every consumer of `j` re-sources to the fresh node.
    pub fn split_node(&mut self, j: usize) -> Result<SplitEvent> {
        let pos = self
            .order
            .iter()
            .position(|&x| x == j)
            .ok_or_else(|| Error::config(format!("cannot split unknown node {j}")))?;
        let fresh = self.next_id;
        self.next_id += 1;
        let mut fresh_inputs = self.inputs[&j].clone();
        fresh_inputs.push(j);
        fresh_inputs.sort_unstable();
        for (&node, ins) in self.inputs.iter_mut() {
            if node != j {
                for i in ins.iter_mut() {
                    if *i == j {
                        *i = fresh;
                    }
                }
                ins.sort_unstable();
            }
        }
        self.inputs.insert(fresh, fresh_inputs);
        self.order.insert(pos + 1, fresh);
        let event = SplitEvent { kept: j, fresh };
        self.splits.push(event);
        debug_assert!(self.check().is_ok());
        Ok(event)
    }
}

/// State of one edge's architecture weights.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeAlpha<S> {
    /// Raw alpha logits over the operation set, softmaxed at use.
    Trainable(Vec<S>),
    /// Discretized: the edge evaluates exactly this operation.
    Frozen(OpKind),
}

/// Architecture weights for every edge, shared across cells.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTable<S> {
    pub edges: BTreeMap<(usize, usize), EdgeAlpha<S>>,
}

impl<S: Scalar> AlphaTable<S> {
    /// Operation probabilities of an edge. Frozen edges are an exact one-hot.
    pub fn probs(&self, edge: (usize, usize), opset: &[OpKind]) -> Vec<S> {
        match &self.edges[&edge] {
            EdgeAlpha::Trainable(a) => softmax_slice(a),
            EdgeAlpha::Frozen(kind) => {
                let mut p = vec![S::zero(); opset.len()];
                let idx = opset.iter().position(|k| k == kind).expect("frozen op in opset");
                p[idx] = S::one();
                p
            }
        }
    }

    /// Entropy of one edge's operation distribution, in nats. Frozen edges
    /// are exactly zero.
    pub fn edge_entropy(&self, edge: (usize, usize)) -> S {
        match &self.edges[&edge] {
            EdgeAlpha::Trainable(a) => entropy_of_probs(&softmax_slice(a)),
            EdgeAlpha::Frozen(_) => S::zero(),
        }
    }

    /// Mean entropy over a node's input edges.
    pub fn node_entropy(&self, topo: &CellTopology, j: usize) -> S {
        let ins = topo.inputs(j);
        let sum: S = ins.iter().map(|&i| self.edge_entropy((i, j))).sum();
        sum / S::of(ins.len() as f64)
    }

    /// Mean node entropy over all intermediate nodes.
    pub fn overall_entropy(&self, topo: &CellTopology) -> S {
        let sum: S = topo
            .order()
            .iter()
            .map(|&j| self.node_entropy(topo, j))
            .sum();
        sum / S::of(topo.p() as f64)
    }

    pub fn is_trainable(&self, edge: (usize, usize)) -> bool {
        matches!(self.edges[&edge], EdgeAlpha::Trainable(_))
    }
}

fn softmax_slice<S: Scalar>(a: &[S]) -> Vec<S> {
    let m = Mat::from_vec(1, a.len(), a.to_vec());
    softmax_rows_impl(&m).data().to_vec()
}

fn argmax<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn fresh_alpha<S: Scalar>(k: usize, rng: &mut ChaCha8Rng) -> Vec<S> {
    let noise = Normal::new(0.0, ALPHA_JITTER).expect("valid stddev");
    (0..k).map(|_| S::of(noise.sample(rng))).collect()
}

fn kind_index(opset: &[OpKind], kind: OpKind) -> usize {
    opset
        .iter()
        .position(|&k| k == kind)
        .expect("frozen op in opset")
}

/// A discretized architecture: one operation per surviving edge. Edges whose
/// winning operation was `zero` are pruned. Serializes as its text format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivedArchitecture {
    pub cells: usize,
    pub hidden: usize,
    pub order: Vec<usize>,
    pub ops: BTreeMap<(usize, usize), OpKind>,
    pub splits: Vec<SplitEvent>,
}

impl DerivedArchitecture {
    pub fn topology(&self) -> Result<CellTopology> {
        let edges: Vec<(usize, usize)> = self.ops.keys().copied().collect();
        CellTopology::from_edges(self.order.clone(), &edges, self.splits.clone())
    }

    /// Render the line-based architecture file.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sagnas-arch v1");
        let _ = writeln!(s, "cells {}", self.cells);
        let _ = writeln!(s, "hidden {}", self.hidden);
        let order = self
            .order
            .iter()
            .map(|j| j.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(s, "nodes {order}");
        for &j in &self.order {
            for (&(src, dst), kind) in &self.ops {
                if dst == j {
                    let _ = writeln!(s, "({src} -> {dst}): {}", kind.name());
                }
            }
        }
        for ev in &self.splits {
            let _ = writeln!(s, "split {} {}", ev.kept, ev.fresh);
        }
        s
    }

    /// Parse the architecture file format written by [`Self::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
        let bad = |ln: usize, msg: String| Error::data(format!("architecture line {}: {msg}", ln + 1));

        let (ln, header) = lines
            .next()
            .ok_or_else(|| Error::data("empty architecture file"))?;
        if header.trim() != "sagnas-arch v1" {
            return Err(bad(ln, format!("unrecognized header {:?}", header.trim())));
        }
        let mut cells = None;
        let mut hidden = None;
        let mut order: Option<Vec<usize>> = None;
        let mut ops = BTreeMap::new();
        let mut splits = Vec::new();
        for (ln, raw) in lines {
            let line = raw.trim();
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("cells") => {
                    cells = Some(parse_num(toks.next(), ln, "cell count")?);
                }
                Some("hidden") => {
                    hidden = Some(parse_num(toks.next(), ln, "hidden width")?);
                }
                Some("nodes") => {
                    let ids: Result<Vec<usize>> =
                        toks.map(|t| parse_num(Some(t), ln, "node id")).collect();
                    order = Some(ids?);
                }
                Some("split") => {
                    let kept = parse_num(toks.next(), ln, "split kept id")?;
                    let fresh = parse_num(toks.next(), ln, "split fresh id")?;
                    splits.push(SplitEvent { kept, fresh });
                }
                Some(tok) if tok.starts_with('(') => {
                    // (src -> dst): op
                    let rest = line;
                    let close = rest
                        .find(')')
                        .ok_or_else(|| bad(ln, "edge line missing ')'".into()))?;
                    let inner = &rest[1..close];
                    let mut ends = inner.split("->");
                    let src: usize = parse_num(ends.next().map(str::trim), ln, "edge source")?;
                    let dst: usize = parse_num(ends.next().map(str::trim), ln, "edge target")?;
                    let op_name = rest[close + 1..]
                        .trim()
                        .strip_prefix(':')
                        .map(str::trim)
                        .ok_or_else(|| bad(ln, "edge line missing ': op'".into()))?;
                    let kind = OpKind::from_name(op_name)?;
                    if ops.insert((src, dst), kind).is_some() {
                        return Err(bad(ln, format!("duplicate edge ({src} -> {dst})")));
                    }
                }
                Some(tok) => return Err(bad(ln, format!("unrecognized directive {tok:?}"))),
                None => unreachable!("blank lines filtered"),
            }
        }
        let arch = DerivedArchitecture {
            cells: cells.ok_or_else(|| Error::data("architecture file missing cells line"))?,
            hidden: hidden.ok_or_else(|| Error::data("architecture file missing hidden line"))?,
            order: order.ok_or_else(|| Error::data("architecture file missing nodes line"))?,
            ops,
            splits,
        };
        if arch.cells == 0 || arch.hidden == 0 {
            return Err(Error::data("cells and hidden must be positive"));
        }
        arch.topology()?;
        Ok(arch)
    }
}

fn parse_num(tok: Option<&str>, ln: usize, what: &str) -> Result<usize> {
    tok.ok_or_else(|| Error::data(format!("architecture line {}: missing {what}", ln + 1)))?
        .parse()
        .map_err(|_| Error::data(format!("architecture line {}: invalid {what}", ln + 1)))
}

impl Serialize for DerivedArchitecture {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        s.serialize_str(&self.to_text())
    }
}

impl<'de> Deserialize<'de> for DerivedArchitecture {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        DerivedArchitecture::from_text(&text).map_err(serde::de::Error::custom)
    }
}

/// Which groups of values register as differentiable leaves in a forward
/// pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    /// Everything constant: pure evaluation.
    Eval,
    /// Operation parameters, projections and the classifier are leaves;
    /// alpha is constant.
    WStep,
    /// Alpha rows of trainable edges are leaves; all weights constant.
    AlphaStep,
}

/// A forward pass with handles to whatever was registered as a leaf.
pub struct Bound<S> {
    pub logits: Tensor<S>,
    /// Leaves in [`SupernetModel::for_each_w_slot`] order. Empty unless
    /// binding was `WStep`.
    pub w_leaves: Vec<Tensor<S>>,
    /// (edge, alpha leaf) for each trainable edge in canonical edge order.
    /// Empty unless binding was `AlphaStep`.
    pub alpha_leaves: Vec<((usize, usize), Tensor<S>)>,
    /// Mean node entropy of the trainable part of the mixture, on tape.
    /// Constant zero unless binding was `AlphaStep`.
    pub reg: Tensor<S>,
}

enum EdgeTensors<S> {
    /// One tensor list per operation in the opset.
    Mixed(Vec<Vec<Tensor<S>>>),
    /// Frozen edge: just the chosen operation.
    Single(OpKind, Vec<Tensor<S>>),
}

/// The full model: input projection, `cells` stacked cells sharing one
/// topology and alpha table, per-cell output projections, and a linear
/// classifier on the last cell output.
#[derive(Debug, Clone)]
pub struct SupernetModel<S> {
    pub opset: Vec<OpKind>,
    pub topology: CellTopology,
    pub alpha: AlphaTable<S>,
    pub cells: usize,
    pub hidden: usize,
    pub classes: usize,
    pub input_proj: Mat<S>,
    /// [cell][edge][opset index] operation parameters.
    pub edge_params: Vec<BTreeMap<(usize, usize), Vec<OpParams<S>>>>,
    /// Per-cell projection of the concatenated intermediate states.
    pub w_out: Vec<Mat<S>>,
    pub classifier: Mat<S>,
}

fn validate_opset(opset: &[OpKind]) -> Result<()> {
    if opset.is_empty() {
        return Err(Error::config("operation set is empty"));
    }
    let idx: Vec<usize> = opset.iter().map(|k| k.registry_index()).collect();
    if idx.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(
            "operation set must be a subset of the registry in registry order",
        ));
    }
    Ok(())
}

impl<S: Scalar> SupernetModel<S> {
    /// Fresh search supernet over a dense cell with `p0` intermediate nodes.
    /// Every edge starts as a near-uniform trainable mixture.
    pub fn new(
        feat_dim: usize,
        hidden: usize,
        classes: usize,
        cells: usize,
        p0: usize,
        opset: Vec<OpKind>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        validate_opset(&opset)?;
        if feat_dim == 0 || hidden == 0 || classes == 0 || cells == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        let topology = CellTopology::dense(p0)?;
        let mut alpha = BTreeMap::new();
        for edge in topology.edges() {
            alpha.insert(edge, EdgeAlpha::Trainable(fresh_alpha(opset.len(), rng)));
        }
        let mut model = SupernetModel {
            opset,
            topology,
            alpha: AlphaTable { edges: alpha },
            cells,
            hidden,
            classes,
            input_proj: glorot_uniform(feat_dim, hidden, rng),
            edge_params: Vec::new(),
            w_out: Vec::new(),
            classifier: Mat::zeros(1, 1),
        };
        model.init_all_params(rng);
        Ok(model)
    }

    /// Supernet whose every edge is frozen to a derived architecture, the
    /// starting point of iterative refinement. Parameters are fresh.
    pub fn from_frozen(
        arch: &DerivedArchitecture,
        feat_dim: usize,
        classes: usize,
        opset: Vec<OpKind>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        validate_opset(&opset)?;
        if feat_dim == 0 || classes == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        let topology = arch.topology()?;
        let mut alpha = BTreeMap::new();
        for edge in topology.edges() {
            let kind = arch.ops[&edge];
            if !opset.contains(&kind) {
                return Err(Error::config(format!(
                    "architecture uses {} which is outside the operation set",
                    kind.name()
                )));
            }
            alpha.insert(edge, EdgeAlpha::Frozen(kind));
        }
        let mut model = SupernetModel {
            opset,
            topology,
            alpha: AlphaTable { edges: alpha },
            cells: arch.cells,
            hidden: arch.hidden,
            classes,
            input_proj: glorot_uniform(feat_dim, arch.hidden, rng),
            edge_params: Vec::new(),
            w_out: Vec::new(),
            classifier: Mat::zeros(1, 1),
        };
        model.init_all_params(rng);
        Ok(model)
    }

    fn init_all_params(&mut self, rng: &mut ChaCha8Rng) {
        let edges = self.topology.edges();
        self.edge_params = (0..self.cells)
            .map(|_| {
                edges
                    .iter()
                    .map(|&e| {
                        // Frozen edges only ever evaluate their chosen
                        // operation; skip allocating the others.
                        let frozen = match &self.alpha.edges[&e] {
                            EdgeAlpha::Frozen(kind) => Some(*kind),
                            EdgeAlpha::Trainable(_) => None,
                        };
                        let per_op = self
                            .opset
                            .iter()
                            .map(|&k| {
                                if frozen.is_none() || frozen == Some(k) {
                                    OpParams::init(k, self.hidden, rng)
                                } else {
                                    OpParams { mats: Vec::new() }
                                }
                            })
                            .collect();
                        (e, per_op)
                    })
                    .collect()
            })
            .collect();
        let p = self.topology.p();
        self.w_out = (0..self.cells)
            .map(|_| glorot_uniform(p * self.hidden, self.hidden, rng))
            .collect();
        self.classifier = glorot_uniform(self.hidden, self.classes, rng);
    }

    /// Reset the concat projections and classifier, as after a topology
    /// change.
    pub fn reinit_heads(&mut self, rng: &mut ChaCha8Rng) {
        let p = self.topology.p();
        self.w_out = (0..self.cells)
            .map(|_| glorot_uniform(p * self.hidden, self.hidden, rng))
            .collect();
        self.classifier = glorot_uniform(self.hidden, self.classes, rng);
    }

    pub fn trainable_edges(&self) -> Vec<(usize, usize)> {
        self.topology
            .edges()
            .into_iter()
            .filter(|&e| self.alpha.is_trainable(e))
            .collect()
    }

    /// Freeze every trainable edge at its current argmax operation.
    pub fn freeze_trainable(&mut self) {
        for edge in self.topology.edges() {
            if let EdgeAlpha::Trainable(a) = &self.alpha.edges[&edge] {
                let kind = self.opset[argmax(a)];
                self.alpha.edges.insert(edge, EdgeAlpha::Frozen(kind));
            }
        }
    }

    /// Split a node and restart every edge touching the kept/fresh pair as a
    /// fresh trainable mixture with fresh parameters. Every other edge that
    /// was still trainable freezes at its current strongest operation first,
    /// so exactly the new pair's edges are open afterwards. The concat
    /// projections and classifier are reset for the new node count.
    pub fn split_node(&mut self, j: usize, rng: &mut ChaCha8Rng) -> Result<SplitEvent> {
        if !self.topology.order().contains(&j) {
            return Err(Error::config(format!("node {j} is not an intermediate node")));
        }
        self.freeze_trainable();
        let event = self.topology.split_node(j)?;
        let fresh = event.fresh;
        // Re-key re-sourced consumer edges (j -> c becomes fresh -> c).
        let consumers: Vec<usize> = self
            .topology
            .order()
            .iter()
            .copied()
            .filter(|&c| c != fresh && self.topology.inputs(c).contains(&fresh))
            .collect();
        for c in consumers {
            self.alpha.edges.remove(&(j, c));
            for cell in &mut self.edge_params {
                cell.remove(&(j, c));
            }
            self.alpha
                .edges
                .insert((fresh, c), EdgeAlpha::Trainable(Vec::new()));
        }
        // Fresh node's input edges, including kept -> fresh.
        for &i in self.topology.inputs(fresh) {
            self.alpha
                .edges
                .insert((i, fresh), EdgeAlpha::Trainable(Vec::new()));
        }
        // Kept node's input edges reopen too.
        for &i in self.topology.inputs(j) {
            self.alpha
                .edges
                .insert((i, j), EdgeAlpha::Trainable(Vec::new()));
        }
        // One deterministic pass to give every reopened edge fresh alpha and
        // fresh parameters, in canonical edge order.
        for edge in self.topology.edges() {
            let reopened = matches!(
                self.alpha.edges.get(&edge),
                Some(EdgeAlpha::Trainable(a)) if a.is_empty()
            );
            if reopened {
                self.alpha
                    .edges
                    .insert(edge, EdgeAlpha::Trainable(fresh_alpha(self.opset.len(), rng)));
                for cell in &mut self.edge_params {
                    let per_op = self
                        .opset
                        .iter()
                        .map(|&k| OpParams::init(k, self.hidden, rng))
                        .collect();
                    cell.insert(edge, per_op);
                }
            }
        }
        self.reinit_heads(rng);
        Ok(event)
    }

    /// Visit every weight matrix that trains in a `WStep`, in slot order:
    /// input projection, then per cell per canonical edge the operation
    /// parameters (every candidate on trainable edges, only the chosen
    /// operation on frozen ones), then the concat projections, then the
    /// classifier. All model weights keep training after edges freeze; only
    /// the mixture coefficients stop.
    pub fn for_each_w_slot(&self, f: &mut dyn FnMut(&Mat<S>)) {
        f(&self.input_proj);
        let edges = self.topology.edges();
        for cell in &self.edge_params {
            for &edge in &edges {
                match &self.alpha.edges[&edge] {
                    EdgeAlpha::Trainable(_) => {
                        for op in &cell[&edge] {
                            for m in &op.mats {
                                f(m);
                            }
                        }
                    }
                    EdgeAlpha::Frozen(kind) => {
                        let idx = kind_index(&self.opset, *kind);
                        for m in &cell[&edge][idx].mats {
                            f(m);
                        }
                    }
                }
            }
        }
        for w in &self.w_out {
            f(w);
        }
        f(&self.classifier);
    }

    pub fn for_each_w_slot_mut(&mut self, f: &mut dyn FnMut(&mut Mat<S>)) {
        f(&mut self.input_proj);
        let edges = self.topology.edges();
        let chosen: BTreeMap<(usize, usize), Option<usize>> = edges
            .iter()
            .map(|&e| {
                let sel = match &self.alpha.edges[&e] {
                    EdgeAlpha::Trainable(_) => None,
                    EdgeAlpha::Frozen(kind) => Some(kind_index(&self.opset, *kind)),
                };
                (e, sel)
            })
            .collect();
        for cell in &mut self.edge_params {
            for edge in &edges {
                let ops = cell.get_mut(edge).expect("edge params exist");
                match chosen[edge] {
                    None => {
                        for op in ops {
                            for m in &mut op.mats {
                                f(m);
                            }
                        }
                    }
                    Some(idx) => {
                        for m in &mut ops[idx].mats {
                            f(m);
                        }
                    }
                }
            }
        }
        for w in &mut self.w_out {
            f(w);
        }
        f(&mut self.classifier);
    }

    pub fn w_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        self.for_each_w_slot(&mut |m| shapes.push((m.rows(), m.cols())));
        shapes
    }

    /// Write back alpha rows for trainable edges, in canonical edge order
    /// (the order of [`Bound::alpha_leaves`]).
    pub fn set_trainable_alpha(&mut self, rows: &[((usize, usize), Vec<S>)]) -> Result<()> {
        for (edge, row) in rows {
            match self.alpha.edges.get_mut(edge) {
                Some(EdgeAlpha::Trainable(a)) => {
                    if a.len() != row.len() {
                        return Err(Error::config("alpha row length mismatch"));
                    }
                    a.clone_from(row);
                }
                _ => return Err(Error::config(format!("edge {edge:?} is not trainable"))),
            }
        }
        Ok(())
    }

    pub fn node_entropy(&self, j: usize) -> S {
        self.alpha.node_entropy(&self.topology, j)
    }

    pub fn overall_entropy(&self) -> S {
        self.alpha.overall_entropy(&self.topology)
    }

    /// One forward pass over the whole stack. `features` are raw node
    /// features (n x feat_dim); `views` must come from the same graph.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        features: &Mat<S>,
        views: &AggregationViews<S>,
        binding: Binding,
    ) -> Result<Bound<S>> {
        if features.cols() != self.input_proj.rows() {
            return Err(Error::Shape {
                op: "supernet_forward",
                detail: format!(
                    "{} feature columns vs {} projection rows",
                    features.cols(),
                    self.input_proj.rows()
                ),
            });
        }
        if features.rows() != views.n {
            return Err(Error::Shape {
                op: "supernet_forward",
                detail: format!("{} feature rows vs {} graph nodes", features.rows(), views.n),
            });
        }
        let w_leaf = binding == Binding::WStep;
        let a_leaf = binding == Binding::AlphaStep;
        let mut w_leaves: Vec<Tensor<S>> = Vec::new();
        let bind_w = |tape: &mut Tape<S>, m: &Mat<S>, sink: &mut Vec<Tensor<S>>| {
            if w_leaf {
                let t = tape.leaf(m.clone());
                sink.push(t.clone());
                t
            } else {
                Tensor::constant(m.clone())
            }
        };

        // Bind everything up front, in slot order.
        let edges = self.topology.edges();
        let proj_t = bind_w(tape, &self.input_proj, &mut w_leaves);
        let mut edge_tensors: Vec<BTreeMap<(usize, usize), EdgeTensors<S>>> =
            Vec::with_capacity(self.cells);
        for cell in &self.edge_params {
            let mut map = BTreeMap::new();
            for &edge in &edges {
                let et = match &self.alpha.edges[&edge] {
                    EdgeAlpha::Trainable(_) => {
                        let per_op = cell[&edge]
                            .iter()
                            .map(|p| {
                                p.mats
                                    .iter()
                                    .map(|m| bind_w(tape, m, &mut w_leaves))
                                    .collect()
                            })
                            .collect();
                        EdgeTensors::Mixed(per_op)
                    }
                    EdgeAlpha::Frozen(kind) => {
                        let idx = kind_index(&self.opset, *kind);
                        let mats = cell[&edge][idx]
                            .mats
                            .iter()
                            .map(|m| bind_w(tape, m, &mut w_leaves))
                            .collect();
                        EdgeTensors::Single(*kind, mats)
                    }
                };
                map.insert(edge, et);
            }
            edge_tensors.push(map);
        }
        let w_out_t: Vec<Tensor<S>> = self
            .w_out
            .iter()
            .map(|m| bind_w(tape, m, &mut w_leaves))
            .collect();
        let classifier_t = bind_w(tape, &self.classifier, &mut w_leaves);

        // Alpha: one tensor per trainable edge, shared by all cells.
        let mut alpha_leaves: Vec<((usize, usize), Tensor<S>)> = Vec::new();
        let mut edge_weights: BTreeMap<(usize, usize), Tensor<S>> = BTreeMap::new();
        for &edge in &edges {
            if let EdgeAlpha::Trainable(a) = &self.alpha.edges[&edge] {
                let row = Mat::from_vec(1, a.len(), a.clone());
                if a_leaf {
                    let leaf = tape.leaf(row);
                    let w = tape.softmax_rows(&leaf)?;
                    alpha_leaves.push((edge, leaf));
                    edge_weights.insert(edge, w);
                } else {
                    edge_weights.insert(edge, Tensor::constant(softmax_rows_impl(&row)));
                }
            }
        }

        // Entropy regularizer over trainable edges, on tape when alpha is
        // differentiable: mean over nodes of (sum of trainable input edge
        // entropies / input count).
        let reg = if a_leaf && !alpha_leaves.is_empty() {
            let mut node_terms: Vec<Tensor<S>> = Vec::new();
            for &j in self.topology.order() {
                let ins = self.topology.inputs(j);
                let mut acc: Option<Tensor<S>> = None;
                for &i in ins {
                    if let Some((_, leaf)) = alpha_leaves.iter().find(|(e, _)| *e == (i, j)) {
                        let h = tape.softmax_entropy_row(leaf)?;
                        acc = Some(match acc {
                            None => h,
                            Some(a) => tape.add(&a, &h)?,
                        });
                    }
                }
                if let Some(sum) = acc {
                    let mean = tape.mul_scalar(&sum, S::one() / S::of(ins.len() as f64))?;
                    node_terms.push(mean);
                }
            }
            let mut total = node_terms[0].clone();
            for t in &node_terms[1..] {
                total = tape.add(&total, t)?;
            }
            tape.mul_scalar(&total, S::one() / S::of(self.topology.p() as f64))?
        } else {
            Tensor::constant(Mat::zeros(1, 1))
        };

        // The stack: cell k reads the outputs of cells k-1 and k-2; both
        // bootstrap inputs are the projected features.
        let x = Tensor::constant(features.clone());
        let h0 = tape.matmul(&x, &proj_t)?;
        let mut prev = h0.clone();
        let mut prev2 = h0;
        for cell in 0..self.cells {
            let mut states: BTreeMap<usize, Tensor<S>> = BTreeMap::new();
            states.insert(0, prev.clone());
            states.insert(1, prev2.clone());
            for &j in self.topology.order() {
                let mut acc: Option<Tensor<S>> = None;
                for &i in self.topology.inputs(j) {
                    let state = states[&i].clone();
                    let part = match &edge_tensors[cell][&(i, j)] {
                        EdgeTensors::Mixed(per_op) => {
                            let parts: Vec<Tensor<S>> = self
                                .opset
                                .iter()
                                .zip(per_op)
                                .map(|(&kind, mats)| op_forward(tape, kind, mats, &state, views))
                                .collect::<Result<_>>()?;
                            let refs: Vec<&Tensor<S>> = parts.iter().collect();
                            tape.mix(&edge_weights[&(i, j)], &refs)?
                        }
                        EdgeTensors::Single(kind, mats) => {
                            op_forward(tape, *kind, mats, &state, views)?
                        }
                    };
                    acc = Some(match acc {
                        None => part,
                        Some(a) => tape.add(&a, &part)?,
                    });
                }
                states.insert(j, acc.expect("node has inputs"));
            }
            let ordered: Vec<Tensor<S>> = self
                .topology
                .order()
                .iter()
                .map(|j| states[j].clone())
                .collect();
            let refs: Vec<&Tensor<S>> = ordered.iter().collect();
            let concat = tape.concat_cols(&refs)?;
            let out = tape.matmul(&concat, &w_out_t[cell])?;
            prev2 = prev;
            prev = out;
        }
        let logits = tape.matmul(&prev, &classifier_t)?;
        Ok(Bound {
            logits,
            w_leaves,
            alpha_leaves,
            reg,
        })
    }

    /// Collapse every edge to its strongest operation. Edges won by `zero`
    /// are pruned; a node losing all of its inputs is an error.
    pub fn discretize(&self) -> Result<DerivedArchitecture> {
        let mut ops = BTreeMap::new();
        for edge in self.topology.edges() {
            let kind = match &self.alpha.edges[&edge] {
                EdgeAlpha::Frozen(k) => *k,
                EdgeAlpha::Trainable(a) => self.opset[argmax(a)],
            };
            if kind != OpKind::Zero {
                ops.insert(edge, kind);
            }
        }
        for &j in self.topology.order() {
            if !ops.keys().any(|&(_, dst)| dst == j) {
                return Err(Error::numerical(
                    "discretize",
                    format!("node {j} keeps no inputs after pruning zero edges"),
                ));
            }
        }
        Ok(DerivedArchitecture {
            cells: self.cells,
            hidden: self.hidden,
            order: self.topology.order().to_vec(),
            ops,
            splits: self.topology.splits().to_vec(),
        })
    }
}

/// The full registry as the default operation set.
pub fn full_opset() -> Vec<OpKind> {
    REGISTRY.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, MaskKind};
    use crate::seeding::rng_from;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn toy_graph(seed: u64, n: usize, p: f64, d: usize, classes: usize) -> Graph<f64> {
        let mut rng = rng_from(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        let features = Mat::from_fn(n, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let labels = (0..n).map(|i| (i % classes) as i64).collect();
        let masks = (0..n)
            .map(|i| if i % 2 == 0 { MaskKind::Train } else { MaskKind::Val })
            .collect();
        Graph::new(n, &edges, features, labels, masks, classes).unwrap()
    }

    #[test]
    fn dense_topology_shape() {
        let t = CellTopology::dense(3).unwrap();
        assert_eq!(t.order(), &[2, 3, 4]);
        assert_eq!(t.inputs(2), &[0, 1]);
        assert_eq!(t.inputs(3), &[0, 1, 2]);
        assert_eq!(t.inputs(4), &[0, 1, 2, 3]);
        assert_eq!(t.edges().len(), 9);
        t.check().unwrap();
    }

    #[test]
    fn split_inserts_chained_node_and_resources_consumers() {
        let mut t = CellTopology::dense(2).unwrap();
        let ev = t.split_node(2).unwrap();
        assert_eq!(ev, SplitEvent { kept: 2, fresh: 4 });
        assert_eq!(t.order(), &[2, 4, 3]);
        assert_eq!(t.inputs(2), &[0, 1]);
        assert_eq!(t.inputs(4), &[0, 1, 2]);
        // Node 3 read node 2 before; it now reads the fresh node instead.
        assert_eq!(t.inputs(3), &[0, 1, 4]);
        t.check().unwrap();

        let ev2 = t.split_node(4).unwrap();
        assert_eq!(ev2.fresh, 5);
        assert_eq!(t.order(), &[2, 4, 5, 3]);
        assert_eq!(t.inputs(5), &[0, 1, 2, 4]);
        assert_eq!(t.inputs(3), &[0, 1, 5]);
        t.check().unwrap();
    }

    #[test]
    fn repeated_random_splits_keep_invariants() {
        let mut rng = rng_from(77);
        for trial in 0..20 {
            let mut t = CellTopology::dense(1 + (trial % 3)).unwrap();
            for _ in 0..6 {
                let pick = t.order()[rng.random_range(0..t.p())];
                t.split_node(pick).unwrap();
                t.check().unwrap();
            }
            assert_eq!(t.p(), 1 + (trial % 3) + 6);
        }
    }

    #[test]
    fn entropies_of_uniform_and_frozen_edges() {
        let t = CellTopology::dense(2).unwrap();
        let k = REGISTRY.len();
        let mut edges = BTreeMap::new();
        for e in t.edges() {
            edges.insert(e, EdgeAlpha::Trainable(vec![0.0f64; k]));
        }
        edges.insert((0, 3), EdgeAlpha::Frozen(OpKind::Gcn));
        let table = AlphaTable { edges };
        let ln_k = (k as f64).ln();
        assert_abs_diff_eq!(table.edge_entropy((0, 2)), ln_k, epsilon = 1e-12);
        assert_eq!(table.edge_entropy((0, 3)), 0.0);
        // Node 2: both edges uniform. Node 3: one frozen of three.
        assert_abs_diff_eq!(table.node_entropy(&t, 2), ln_k, epsilon = 1e-12);
        assert_abs_diff_eq!(table.node_entropy(&t, 3), 2.0 * ln_k / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            table.overall_entropy(&t),
            (ln_k + 2.0 * ln_k / 3.0) / 2.0,
            epsilon = 1e-12
        );
        let probs = table.probs((0, 3), &REGISTRY);
        assert_eq!(probs[OpKind::Gcn.registry_index()], 1.0);
        assert_eq!(probs.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let g = toy_graph(50, 14, 0.4, 6, 3);
        let views = AggregationViews::of(&g);
        let build = || {
            SupernetModel::<f64>::new(6, 8, 3, 2, 2, full_opset(), &mut rng_from(51)).unwrap()
        };
        let m1 = build();
        let m2 = build();
        let mut t1 = Tape::new();
        let b1 = m1.forward(&mut t1, g.features(), &views, Binding::Eval).unwrap();
        let mut t2 = Tape::new();
        let b2 = m2.forward(&mut t2, g.features(), &views, Binding::Eval).unwrap();
        assert_eq!(b1.logits.value(), b2.logits.value());
        assert_eq!(b1.logits.shape(), (14, 3));
        assert!(b1.logits.value().all_finite());
        assert!(b1.w_leaves.is_empty());
        assert!(b1.alpha_leaves.is_empty());
    }

    #[test]
    fn single_skip_opset_matches_hand_wiring() {
        // One intermediate node, skip-only edges: cell output is
        // (s0 + s1) W_out, stacked twice, then the classifier.
        let g = toy_graph(60, 9, 0.5, 4, 2);
        let views = AggregationViews::of(&g);
        let model =
            SupernetModel::<f64>::new(4, 5, 2, 2, 1, vec![OpKind::Skip], &mut rng_from(61))
                .unwrap();
        let mut tape = Tape::new();
        let got = model
            .forward(&mut tape, g.features(), &views, Binding::Eval)
            .unwrap();
        let h0 = g.features().matmul(&model.input_proj);
        let out0 = h0.add(&h0).matmul(&model.w_out[0]);
        let out1 = out0.add(&h0).matmul(&model.w_out[1]);
        let want = out1.matmul(&model.classifier);
        for (a, b) in got.logits.value().data().iter().zip(want.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn wstep_binds_every_weight_slot_and_gradients_flow() {
        let g = toy_graph(70, 10, 0.5, 5, 2);
        let views = AggregationViews::of(&g);
        let model =
            SupernetModel::<f64>::new(5, 6, 2, 1, 2, full_opset(), &mut rng_from(71)).unwrap();
        let mut tape = Tape::new();
        let bound = model
            .forward(&mut tape, g.features(), &views, Binding::WStep)
            .unwrap();
        assert_eq!(bound.w_leaves.len(), model.w_shapes().len());
        let labels: Vec<i64> = g.labels().to_vec();
        let mask: Vec<bool> = g.masks().iter().map(|&m| m == MaskKind::Train).collect();
        let loss = tape
            .masked_cross_entropy(&bound.logits, &labels, &mask)
            .unwrap();
        let grads = tape.backward(&loss).unwrap();
        let gproj = grads.wrt(&bound.w_leaves[0]);
        assert!(gproj.max_abs() > 0.0);
        let gcls = grads.wrt(bound.w_leaves.last().unwrap());
        assert!(gcls.max_abs() > 0.0);
    }

    #[test]
    fn alphastep_reg_of_uniform_alpha_is_log_k() {
        let g = toy_graph(80, 8, 0.5, 4, 2);
        let views = AggregationViews::of(&g);
        let mut model =
            SupernetModel::<f64>::new(4, 5, 2, 1, 2, full_opset(), &mut rng_from(81)).unwrap();
        for e in model.topology.edges() {
            model
                .alpha
                .edges
                .insert(e, EdgeAlpha::Trainable(vec![0.0; model.opset.len()]));
        }
        let mut tape = Tape::new();
        let bound = model
            .forward(&mut tape, g.features(), &views, Binding::AlphaStep)
            .unwrap();
        assert_eq!(bound.alpha_leaves.len(), 5);
        let ln_k = (model.opset.len() as f64).ln();
        assert_abs_diff_eq!(bound.reg.scalar(), ln_k, epsilon = 1e-9);
        assert_abs_diff_eq!(
            model.overall_entropy(),
            ln_k,
            epsilon = 1e-12
        );
        // Alpha gradients reach the leaves through the mixture weights.
        let loss_terms = tape.sum_all(&bound.logits).unwrap();
        let grads = tape.backward(&loss_terms).unwrap();
        let any_nonzero = bound
            .alpha_leaves
            .iter()
            .any(|(_, leaf)| grads.wrt(leaf).max_abs() > 0.0);
        assert!(any_nonzero);
    }

    #[test]
    fn discretize_picks_argmax_prunes_zero_and_breaks_ties_low() {
        let g_idx = OpKind::Gcn.registry_index();
        let gin_idx = OpKind::Gin.registry_index();
        let zero_idx = OpKind::Zero.registry_index();
        let mut model =
            SupernetModel::<f64>::new(3, 4, 2, 1, 2, full_opset(), &mut rng_from(91)).unwrap();
        let k = model.opset.len();
        let hot = |i: usize| {
            let mut a = vec![0.0f64; k];
            a[i] = 5.0;
            a
        };
        // Node 2 keeps gcn from input 0; its input-1 edge collapses to zero.
        model.alpha.edges.insert((0, 2), EdgeAlpha::Trainable(hot(g_idx)));
        model.alpha.edges.insert((1, 2), EdgeAlpha::Trainable(hot(zero_idx)));
        model.alpha.edges.insert((0, 3), EdgeAlpha::Trainable(hot(gin_idx)));
        model.alpha.edges.insert((1, 3), EdgeAlpha::Trainable(hot(zero_idx)));
        // Tie between gcn and gin on (2, 3): the earlier registry entry wins.
        let mut tie = vec![0.0f64; k];
        tie[g_idx] = 5.0;
        tie[gin_idx] = 5.0;
        model.alpha.edges.insert((2, 3), EdgeAlpha::Trainable(tie));
        let arch = model.discretize().unwrap();
        assert_eq!(arch.ops[&(0, 2)], OpKind::Gcn);
        assert_eq!(arch.ops[&(0, 3)], OpKind::Gin);
        assert_eq!(arch.ops[&(2, 3)], OpKind::Gcn);
        assert!(!arch.ops.contains_key(&(1, 2)));
        assert!(!arch.ops.contains_key(&(1, 3)));

        // All-zero inputs on a node is an error.
        model.alpha.edges.insert((0, 2), EdgeAlpha::Trainable(hot(zero_idx)));
        model.alpha.edges.insert((2, 3), EdgeAlpha::Trainable(hot(zero_idx)));
        let err = model.discretize().unwrap_err();
        assert!(err.to_string().contains("node 2"));
    }

    #[test]
    fn arch_text_round_trips() {
        let mut model =
            SupernetModel::<f64>::new(3, 4, 2, 2, 2, full_opset(), &mut rng_from(95)).unwrap();
        let mut rng = rng_from(96);
        model.split_node(3, &mut rng).unwrap();
        model.freeze_trainable();
        let arch = model.discretize().unwrap();
        let text = arch.to_text();
        let back = DerivedArchitecture::from_text(&text).unwrap();
        assert_eq!(arch, back);
        assert!(text.contains("split 3 4"));
    }

    #[test]
    fn arch_text_rejects_malformed_input() {
        assert!(DerivedArchitecture::from_text("").is_err());
        assert!(DerivedArchitecture::from_text("sagnas-arch v2\n").is_err());
        let no_nodes = "sagnas-arch v1\ncells 1\nhidden 4\n";
        assert!(DerivedArchitecture::from_text(no_nodes).is_err());
        let cyclic = "sagnas-arch v1\ncells 1\nhidden 4\nnodes 2 3\n(3 -> 2): gcn\n(0 -> 3): gcn\n";
        assert!(DerivedArchitecture::from_text(cyclic).is_err());
        let bad_op = "sagnas-arch v1\ncells 1\nhidden 4\nnodes 2\n(0 -> 2): warp\n";
        assert!(DerivedArchitecture::from_text(bad_op)
            .unwrap_err()
            .to_string()
            .contains("warp"));
    }

    #[test]
    fn from_frozen_restores_topology_and_freezes_everything() {
        let model =
            SupernetModel::<f64>::new(4, 6, 3, 2, 3, full_opset(), &mut rng_from(100)).unwrap();
        let arch = model.discretize().unwrap();
        let mut rng = rng_from(101);
        let rebuilt =
            SupernetModel::<f64>::from_frozen(&arch, 4, 3, full_opset(), &mut rng).unwrap();
        assert_eq!(rebuilt.topology.order(), model.topology.order());
        assert!(rebuilt.trainable_edges().is_empty());
        assert_eq!(rebuilt.overall_entropy(), 0.0);
        // Pruned edges stay gone.
        for e in rebuilt.topology.edges() {
            assert!(arch.ops.contains_key(&e));
        }
        let g = toy_graph(102, 8, 0.5, 4, 3);
        let views = AggregationViews::of(&g);
        let mut tape = Tape::new();
        let bound = rebuilt
            .forward(&mut tape, g.features(), &views, Binding::Eval)
            .unwrap();
        assert!(bound.logits.value().all_finite());
    }

    #[test]
    fn split_reopens_incident_edges_only() {
        let model =
            SupernetModel::<f64>::new(4, 6, 2, 1, 3, full_opset(), &mut rng_from(110)).unwrap();
        let arch = model.discretize().unwrap();
        let mut rng = rng_from(111);
        let mut net =
            SupernetModel::<f64>::from_frozen(&arch, 4, 2, full_opset(), &mut rng).unwrap();
        let ev = net.split_node(3, &mut rng).unwrap();
        assert_eq!(ev.kept, 3);
        let trainable: BTreeSet<(usize, usize)> = net.trainable_edges().into_iter().collect();
        for e in net.topology.edges() {
            let incident = e.1 == ev.kept || e.1 == ev.fresh || e.0 == ev.fresh;
            assert_eq!(trainable.contains(&e), incident, "edge {e:?}");
        }
        // Reopened edges are near-uniform.
        for &e in &trainable {
            let h = net.alpha.edge_entropy(e).to64();
            let ln_k = (net.opset.len() as f64).ln();
            assert!((h - ln_k).abs() < 1e-4, "entropy {h} vs {ln_k}");
        }
        // Head projections track the new node count.
        assert_eq!(net.w_out[0].rows(), net.topology.p() * net.hidden);
        net.topology.check().unwrap();
    }

    #[test]
    fn model_split_freezes_everything_not_incident() {
        let mut model =
            SupernetModel::<f64>::new(4, 6, 2, 1, 3, full_opset(), &mut rng_from(140)).unwrap();
        assert_eq!(model.trainable_edges().len(), 9);
        let mut rng = rng_from(141);
        let ev = model.split_node(2, &mut rng).unwrap();
        let trainable: BTreeSet<(usize, usize)> = model.trainable_edges().into_iter().collect();
        for e in model.topology.edges() {
            let incident = e.1 == ev.kept || e.1 == ev.fresh || e.0 == ev.fresh;
            assert_eq!(trainable.contains(&e), incident, "edge {e:?}");
        }
        for (&e, a) in &model.alpha.edges {
            if !trainable.contains(&e) {
                assert!(matches!(a, EdgeAlpha::Frozen(_)), "edge {e:?} still open");
            }
        }
        // A bad split must not disturb the table.
        let before = model.alpha.edges.clone();
        assert!(model.split_node(0, &mut rng).is_err());
        assert_eq!(model.alpha.edges, before);
    }

    #[test]
    fn frozen_edges_keep_training_their_chosen_operation() {
        let mut ops = BTreeMap::new();
        ops.insert((0, 2), OpKind::Gcn);
        ops.insert((1, 2), OpKind::Gin);
        ops.insert((0, 3), OpKind::Skip);
        ops.insert((2, 3), OpKind::Gat1);
        let arch = DerivedArchitecture {
            cells: 1,
            hidden: 5,
            order: vec![2, 3],
            ops,
            splits: Vec::new(),
        };
        let mut rng = rng_from(130);
        let net = SupernetModel::<f64>::from_frozen(&arch, 4, 2, full_opset(), &mut rng).unwrap();
        // Slots: projection, gcn (1 mat), gin (2), skip (0), gat (3), concat
        // projection, classifier. Unchosen candidates are never allocated.
        let shapes = net.w_shapes();
        assert_eq!(shapes.len(), 9);
        assert_eq!(shapes[1], (5, 5));
        let g = toy_graph(131, 9, 0.5, 4, 2);
        let views = AggregationViews::of(&g);
        let mut tape = Tape::new();
        let bound = net
            .forward(&mut tape, g.features(), &views, Binding::WStep)
            .unwrap();
        assert_eq!(bound.w_leaves.len(), 9);
        let labels: Vec<i64> = g.labels().to_vec();
        let mask: Vec<bool> = g.masks().iter().map(|&m| m == MaskKind::Train).collect();
        let loss = tape
            .masked_cross_entropy(&bound.logits, &labels, &mask)
            .unwrap();
        let grads = tape.backward(&loss).unwrap();
        let ggcn = grads.wrt(&bound.w_leaves[1]);
        assert!(ggcn.max_abs() > 0.0);
    }

    #[test]
    fn opset_must_follow_registry_order() {
        let err = SupernetModel::<f64>::new(
            3,
            4,
            2,
            1,
            1,
            vec![OpKind::Zero, OpKind::Gcn],
            &mut rng_from(120),
        )
        .unwrap_err();
        assert!(err.to_string().contains("registry order"));
        assert!(SupernetModel::<f64>::new(3, 4, 2, 1, 1, vec![], &mut rng_from(121)).is_err());
    }
}
