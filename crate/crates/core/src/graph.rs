//! Undirected attributed graphs and the propagation operators derived from
//! them.
//!
//! Adjacency is CSR with unit values and no self loops, stored symmetric; the
//! unit values let the raw adjacency double as a sum-aggregation operator.
//! `normalize` produces the self-looped symmetric normalization
//! D^{-1/2} (A + I) D^{-1/2} used by convolution-style operations.

use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::Csr;

pub type NodeId = usize;

/// Node label. Negative means unlabeled; masked nodes must be labeled.
pub type Label = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    None,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph<S> {
    adj: Csr<S>,
    features: Mat<S>,
    labels: Vec<Label>,
    masks: Vec<MaskKind>,
    num_classes: usize,
}

impl<S: Scalar> Graph<S> {
    /// Build from an undirected edge list. Edges are symmetrized, duplicates
    /// collapsed, self loops dropped.
    pub fn new(
        n: usize,
        edges: &[(NodeId, NodeId)],
        features: Mat<S>,
        labels: Vec<Label>,
        masks: Vec<MaskKind>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rows() != n {
            return Err(Error::data(format!(
                "feature row count {} != node count {}",
                features.rows(),
                n
            )));
        }
        if labels.len() != n || masks.len() != n {
            return Err(Error::data(format!(
                "label/mask length ({}, {}) != node count {}",
                labels.len(),
                masks.len(),
                n
            )));
        }
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::data(format!("edge ({u}, {v}) out of range for n = {n}")));
            }
            if u == v {
                continue;
            }
            pairs.push((u, v));
            pairs.push((v, u));
        }
        pairs.sort_unstable();
        pairs.dedup();
        let triplets = pairs.into_iter().map(|(u, v)| (u, v, S::one())).collect();
        let adj = Csr::from_triplets(n, n, triplets);
        let g = Graph {
            adj,
            features,
            labels,
            masks,
            num_classes,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn from_parts(
        adj: Csr<S>,
        features: Mat<S>,
        labels: Vec<Label>,
        masks: Vec<MaskKind>,
        num_classes: usize,
    ) -> Result<Self> {
        let g = Graph {
            adj,
            features,
            labels,
            masks,
            num_classes,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if !self.adj.pattern_is_symmetric() {
            return Err(Error::data("adjacency is not symmetric"));
        }
        for v in 0..n {
            let (cols, _) = self.adj.row(v);
            if cols.contains(&v) {
                return Err(Error::data(format!("self loop at node {v}")));
            }
        }
        for v in 0..n {
            if self.masks[v] != MaskKind::None {
                let l = self.labels[v];
                if l < 0 || l as usize >= self.num_classes {
                    return Err(Error::data(format!(
                        "masked node {v} has invalid label {l} for {} classes",
                        self.num_classes
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.adj.n_rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_edges(&self) -> usize {
        self.adj.nnz() / 2
    }

    pub fn adj(&self) -> &Csr<S> {
        &self.adj
    }

    pub fn features(&self) -> &Mat<S> {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn masks(&self) -> &[MaskKind] {
        &self.masks
    }

    pub fn set_masks(&mut self, masks: Vec<MaskKind>) -> Result<()> {
        if masks.len() != self.n() {
            return Err(Error::data("mask length != node count"));
        }
        self.masks = masks;
        self.validate()
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj.row_len(v)
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        self.adj.row(v).0
    }

    pub fn mask_vec(&self, kind: MaskKind) -> Vec<bool> {
        self.masks.iter().map(|&m| m == kind).collect()
    }

    pub fn mask_count(&self, kind: MaskKind) -> usize {
        self.masks.iter().filter(|&&m| m == kind).count()
    }

    /// Symmetric self-looped normalization D^{-1/2} (A + I) D^{-1/2}.
    pub fn normalize(&self) -> NormalizedAdjacency<S> {
        let n = self.n();
        let dtilde: Vec<S> = (0..n).map(|v| S::of((self.degree(v) + 1) as f64)).collect();
        let mut triplets = Vec::with_capacity(self.adj.nnz() + n);
        for u in 0..n {
            let (cols, _) = self.adj.row(u);
            for &v in cols {
                triplets.push((u, v, S::one() / (dtilde[u] * dtilde[v]).sqrt()));
            }
            triplets.push((u, u, S::one() / dtilde[u]));
        }
        NormalizedAdjacency {
            csr: Csr::from_triplets(n, n, triplets),
        }
    }
}

/// The operator D^{-1/2} (A + I) D^{-1/2}: adjacency pattern plus self loops,
/// values positive, spectrum in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency<S> {
    csr: Csr<S>,
}

impl<S: Scalar> NormalizedAdjacency<S> {
    pub fn csr(&self) -> &Csr<S> {
        &self.csr
    }

    pub fn n(&self) -> usize {
        self.csr.n_rows()
    }
}

/// An induced subgraph plus the mapping from its local node ids back to the
/// ids of the graph it was induced from.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph<S> {
    pub graph: Graph<S>,
    pub node_map: Vec<NodeId>,
}

/// Induce the subgraph on `nodes` (unique, in range). Local ids follow the
/// order of `nodes`, so callers control the labeling; samplers pass sorted
/// lists and expansion appends new members after the existing ones.
pub fn induced_subgraph<S: Scalar>(g: &Graph<S>, nodes: &[NodeId]) -> Result<Subgraph<S>> {
    let n = g.n();
    let mut local_of = vec![usize::MAX; n];
    for (local, &orig) in nodes.iter().enumerate() {
        if orig >= n {
            return Err(Error::data(format!("subgraph node {orig} out of range")));
        }
        if local_of[orig] != usize::MAX {
            return Err(Error::data(format!("duplicate subgraph node {orig}")));
        }
        local_of[orig] = local;
    }
    let m = nodes.len();
    let mut triplets = Vec::new();
    let mut features = Mat::zeros(m, g.feat_dim());
    let mut labels = Vec::with_capacity(m);
    let mut masks = Vec::with_capacity(m);
    for (local, &orig) in nodes.iter().enumerate() {
        let (cols, _) = g.adj().row(orig);
        for &nb in cols {
            let lnb = local_of[nb];
            if lnb != usize::MAX {
                triplets.push((local, lnb, S::one()));
            }
        }
        features.row_mut(local).copy_from_slice(g.features().row(orig));
        labels.push(g.labels()[orig]);
        masks.push(g.masks()[orig]);
    }
    let adj = Csr::from_triplets(m, m, triplets);
    let graph = Graph::from_parts(adj, features, labels, masks, g.num_classes())?;
    Ok(Subgraph {
        graph,
        node_map: nodes.to_vec(),
    })
}
