//! Subgraph sampling, 1-hop expansion and train/val re-splitting.
//!
//! Three strategies produce the candidate subgraphs the seed search runs on:
//! uniform node sampling, degree-proportional node sampling, and breadth
//! first cluster growth. Uniform sampling admits an exact inclusion
//! probability (m / n), which makes the reweighted neighborhood-sum
//! estimator in [`check_unbiased_aggregation`] exactly unbiased; degree
//! sampling gets its probabilities from a Monte Carlo pilot instead.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, Graph, MaskKind, NodeId, Subgraph};
use crate::scalar::Scalar;
use crate::seeding::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerStrategy {
    NodeUniform,
    NodeDegree,
    Cluster,
}

impl SamplerStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SamplerStrategy::NodeUniform => "node_uniform",
            SamplerStrategy::NodeDegree => "node_degree",
            SamplerStrategy::Cluster => "cluster",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "node_uniform" => Ok(SamplerStrategy::NodeUniform),
            "node_degree" => Ok(SamplerStrategy::NodeDegree),
            "cluster" => Ok(SamplerStrategy::Cluster),
            other => Err(Error::config(format!("unknown sampler strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub strategy: SamplerStrategy,
    /// Fraction of graph nodes each sampled subgraph targets.
    pub fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            strategy: SamplerStrategy::NodeUniform,
            fraction: 0.2,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config(format!(
                "sampler fraction must be in (0, 1], got {}",
                self.fraction
            )));
        }
        Ok(())
    }

    pub fn target_size(&self, n: usize) -> usize {
        ((n as f64 * self.fraction).round() as usize).clamp(1, n)
    }
}

/// Draw a subgraph of `target_size` nodes. Node lists are sorted ascending,
/// so local ids are monotone in the original ids.
pub fn sample_subgraph<S: Scalar>(
    g: &Graph<S>,
    strategy: SamplerStrategy,
    target_size: usize,
    seed: u64,
) -> Result<Subgraph<S>> {
    let n = g.n();
    if target_size == 0 || target_size > n {
        return Err(Error::config(format!(
            "subgraph size {target_size} out of range for {n} nodes"
        )));
    }
    let mut rng = rng_from(seed);
    let mut nodes = match strategy {
        SamplerStrategy::NodeUniform => {
            // Partial Fisher-Yates over the id range.
            let mut ids: Vec<NodeId> = (0..n).collect();
            for i in 0..target_size {
                let j = rng.random_range(i..n);
                ids.swap(i, j);
            }
            ids.truncate(target_size);
            ids
        }
        SamplerStrategy::NodeDegree => {
            // Sequential degree-weighted draws without replacement.
            let mut weights: Vec<f64> = (0..n).map(|v| g.degree(v) as f64).collect();
            let mut total: f64 = weights.iter().sum();
            if total <= 0.0 {
                return Err(Error::data(
                    "degree sampling needs at least one edge in the graph",
                ));
            }
            let mut picked = Vec::with_capacity(target_size);
            for _ in 0..target_size {
                if total <= 0.0 {
                    return Err(Error::data(format!(
                        "degree sampling ran out of connected nodes after {} draws",
                        picked.len()
                    )));
                }
                let mut t = rng.random::<f64>() * total;
                let mut chosen = None;
                for (v, &w) in weights.iter().enumerate() {
                    if w <= 0.0 {
                        continue;
                    }
                    t -= w;
                    if t < 0.0 {
                        chosen = Some(v);
                        break;
                    }
                }
                // Guard the float edge case where t exhausts exactly.
                let v = chosen.unwrap_or_else(|| {
                    weights
                        .iter()
                        .rposition(|&w| w > 0.0)
                        .expect("total > 0 implies a positive weight")
                });
                picked.push(v);
                total -= weights[v];
                weights[v] = 0.0;
            }
            picked
        }
        SamplerStrategy::Cluster => {
            // Breadth first growth from a random start; when a component is
            // exhausted, restart from a fresh random unvisited node.
            let mut in_set = vec![false; n];
            let mut picked = Vec::with_capacity(target_size);
            let mut queue: VecDeque<NodeId> = VecDeque::new();
            while picked.len() < target_size {
                if queue.is_empty() {
                    let remaining: Vec<NodeId> = (0..n).filter(|&v| !in_set[v]).collect();
                    let start = remaining[rng.random_range(0..remaining.len())];
                    in_set[start] = true;
                    picked.push(start);
                    queue.push_back(start);
                    if picked.len() == target_size {
                        break;
                    }
                }
                let u = queue.pop_front().expect("queue refilled above");
                for &v in g.neighbors(u) {
                    if !in_set[v] {
                        in_set[v] = true;
                        picked.push(v);
                        queue.push_back(v);
                        if picked.len() == target_size {
                            break;
                        }
                    }
                }
            }
            picked
        }
    };
    nodes.sort_unstable();
    induced_subgraph(g, &nodes)
}

/// Grow a subgraph by one hop: every current member contributes up to
/// `per_node` of its not-yet-present neighbors in the original graph, drawn
/// uniformly without replacement. Members are visited in their node-map
/// order and see the additions of earlier members. New nodes are appended
/// after the existing ones, sorted by original id.
pub fn expand_subgraph<S: Scalar>(
    g: &Graph<S>,
    sub: &Subgraph<S>,
    per_node: usize,
    seed: u64,
) -> Result<Subgraph<S>> {
    let mut rng = rng_from(seed);
    let mut present = vec![false; g.n()];
    for &v in &sub.node_map {
        present[v] = true;
    }
    let mut added: Vec<NodeId> = Vec::new();
    for &u in &sub.node_map {
        let mut candidates: Vec<NodeId> = g
            .neighbors(u)
            .iter()
            .copied()
            .filter(|&v| !present[v])
            .collect();
        let take = per_node.min(candidates.len());
        for i in 0..take {
            let j = rng.random_range(i..candidates.len());
            candidates.swap(i, j);
            present[candidates[i]] = true;
            added.push(candidates[i]);
        }
    }
    added.sort_unstable();
    let mut nodes = sub.node_map.clone();
    nodes.extend(added);
    induced_subgraph(g, &nodes)
}

/// Reassign the train/val masks of a subgraph: the pool is every labeled
/// node that is not held out as test, shuffled and cut at `train_ratio`.
/// Test and unlabeled nodes keep their masks.
pub fn resplit_train_val<S: Scalar>(
    sub: &Subgraph<S>,
    train_ratio: f64,
    seed: u64,
) -> Result<Subgraph<S>> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::config(format!(
            "train ratio must be in (0, 1), got {train_ratio}"
        )));
    }
    let g = &sub.graph;
    let mut pool: Vec<usize> = (0..g.n())
        .filter(|&v| g.masks()[v] != MaskKind::Test && g.labels()[v] >= 0)
        .collect();
    if pool.len() < 2 {
        return Err(Error::data(format!(
            "cannot split {} trainable nodes into train and val",
            pool.len()
        )));
    }
    let mut rng = rng_from(seed);
    for i in (1..pool.len()).rev() {
        let j = rng.random_range(0..=i);
        pool.swap(i, j);
    }
    let n_train = ((pool.len() as f64 * train_ratio).round() as usize).clamp(1, pool.len() - 1);
    let mut masks = g.masks().to_vec();
    for (i, &v) in pool.iter().enumerate() {
        masks[v] = if i < n_train { MaskKind::Train } else { MaskKind::Val };
    }
    let mut graph = g.clone();
    graph.set_masks(masks)?;
    Ok(Subgraph {
        graph,
        node_map: sub.node_map.clone(),
    })
}

/// Exact inclusion probabilities where the strategy admits them. Uniform
/// sampling includes every node with probability m / n.
pub fn inclusion_probabilities<S: Scalar>(
    g: &Graph<S>,
    strategy: SamplerStrategy,
    target_size: usize,
) -> Result<Vec<f64>> {
    match strategy {
        SamplerStrategy::NodeUniform => {
            Ok(vec![target_size as f64 / g.n() as f64; g.n()])
        }
        _ => Err(Error::config(format!(
            "no closed-form inclusion probabilities for {} sampling",
            strategy.name()
        ))),
    }
}

/// Monte Carlo estimate of inclusion probabilities for strategies without a
/// closed form, from `trials` independent draws.
pub fn estimate_inclusion_probabilities<S: Scalar>(
    g: &Graph<S>,
    strategy: SamplerStrategy,
    target_size: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::config("pilot estimate needs at least one trial"));
    }
    let mut counts = vec![0usize; g.n()];
    for t in 0..trials {
        let sub = sample_subgraph(g, strategy, target_size, derive_seed(seed, "pilot", &[t as u64]))?;
        for &v in &sub.node_map {
            counts[v] += 1;
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / trials as f64).collect())
}

/// Outcome of [`check_unbiased_aggregation`].
#[derive(Debug, Clone, Serialize)]
pub struct UnbiasedReport {
    pub trials: usize,
    pub target_size: usize,
    pub mean_rel_err: f64,
    pub max_rel_err: f64,
}

/// Verify on a concrete graph that reweighting sampled neighborhood sums by
/// inverse inclusion probabilities estimates the full-graph sums without
/// bias: for every node v, averaging sum_{u in Vs} nrm(u, v) / pi_u * h_u
/// over sampled subgraphs approaches sum_u nrm(u, v) * h_u, where nrm is the
/// self-looped normalized adjacency and h the node features.
pub fn check_unbiased_aggregation<S: Scalar>(
    g: &Graph<S>,
    strategy: SamplerStrategy,
    target_size: usize,
    trials: usize,
    seed: u64,
) -> Result<UnbiasedReport> {
    if trials == 0 {
        return Err(Error::config("unbiasedness check needs at least one trial"));
    }
    let n = g.n();
    let d = g.feat_dim();
    let pi = match strategy {
        SamplerStrategy::NodeUniform => inclusion_probabilities(g, strategy, target_size)?,
        SamplerStrategy::NodeDegree => estimate_inclusion_probabilities(
            g,
            strategy,
            target_size,
            trials,
            derive_seed(seed, "pilot-stream", &[]),
        )?,
        SamplerStrategy::Cluster => {
            return Err(Error::config(
                "cluster sampling has path-dependent inclusion probabilities; \
                 the unbiasedness check does not support it",
            ))
        }
    };
    let nrm = g.normalize();
    let h = g.features();

    // Exact per-node aggregate, accumulated in ascending u order so the
    // full-sample case reproduces it bit for bit.
    let mut exact = Mat::<S>::zeros(n, d);
    for u in 0..n {
        let (cols, vals) = nrm.csr().row(u);
        for (&v, &w) in cols.iter().zip(vals) {
            for j in 0..d {
                let add = w * h.at(u, j);
                *exact.row_mut(v).get_mut(j).unwrap() += add;
            }
        }
    }

    // Mean of the per-trial estimates, accumulated as a base plus summed
    // deviations so identical trials (the full-sample case) average exactly.
    let mut base = Mat::<f64>::zeros(n, d);
    let mut dev_sum = Mat::<f64>::zeros(n, d);
    for t in 0..trials {
        let sub = sample_subgraph(g, strategy, target_size, derive_seed(seed, "trial", &[t as u64]))?;
        let mut est = Mat::<f64>::zeros(n, d);
        for &u in &sub.node_map {
            let (cols, vals) = nrm.csr().row(u);
            let inv_pi = 1.0 / pi[u];
            for (&v, &w) in cols.iter().zip(vals) {
                for j in 0..d {
                    let add = (w * h.at(u, j)).to64() * inv_pi;
                    *est.row_mut(v).get_mut(j).unwrap() += add;
                }
            }
        }
        if t == 0 {
            base = est;
        } else {
            dev_sum.add_assign(&est.sub(&base));
        }
    }
    let mean_est = base.add(&dev_sum.scale(1.0 / trials as f64));

    let mut sum_rel = 0.0;
    let mut max_rel = 0.0f64;
    for v in 0..n {
        let mut err = 0.0;
        let mut norm = 0.0;
        for j in 0..d {
            let e = exact.at(v, j).to64();
            err += (mean_est.at(v, j) - e).powi(2);
            norm += e * e;
        }
        let rel = if norm > 0.0 { (err / norm).sqrt() } else { err.sqrt() };
        sum_rel += rel;
        max_rel = max_rel.max(rel);
    }
    Ok(UnbiasedReport {
        trials,
        target_size,
        mean_rel_err: sum_rel / n as f64,
        max_rel_err: max_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbm::{generate_sbm, SbmConfig};

    fn line_graph(n: usize) -> Graph<f64> {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::new(
            n,
            &edges,
            Mat::from_fn(n, 2, |i, j| (i * 2 + j) as f64),
            (0..n).map(|i| (i % 2) as i64).collect(),
            vec![MaskKind::None; n],
            2,
        )
        .unwrap()
    }

    fn star_graph(leaves: usize) -> Graph<f64> {
        let edges: Vec<(usize, usize)> = (1..=leaves).map(|v| (0, v)).collect();
        Graph::new(
            leaves + 1,
            &edges,
            Mat::zeros(leaves + 1, 1),
            vec![-1; leaves + 1],
            vec![MaskKind::None; leaves + 1],
            1,
        )
        .unwrap()
    }

    #[test]
    fn uniform_sample_is_sorted_distinct_and_deterministic() {
        let g = line_graph(30);
        let a = sample_subgraph(&g, SamplerStrategy::NodeUniform, 10, 7).unwrap();
        let b = sample_subgraph(&g, SamplerStrategy::NodeUniform, 10, 7).unwrap();
        assert_eq!(a.node_map, b.node_map);
        assert_eq!(a.node_map.len(), 10);
        assert!(a.node_map.windows(2).all(|w| w[0] < w[1]));
        let c = sample_subgraph(&g, SamplerStrategy::NodeUniform, 10, 8).unwrap();
        assert_ne!(a.node_map, c.node_map);
    }

    #[test]
    fn uniform_inclusion_matches_m_over_n() {
        let g = line_graph(12);
        let trials = 20_000;
        let freq =
            estimate_inclusion_probabilities(&g, SamplerStrategy::NodeUniform, 4, trials, 3)
                .unwrap();
        let p = 4.0 / 12.0;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        // 4 sigma per node keeps the family-wise false alarm rate tiny
        // across the simultaneous per-node comparisons.
        for (v, &f) in freq.iter().enumerate() {
            assert!(
                (f - p).abs() < 4.0 * sigma,
                "node {v}: {f} vs {p} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn degree_sampling_single_draw_tracks_degree() {
        let g = star_graph(9);
        let trials = 30_000;
        let freq =
            estimate_inclusion_probabilities(&g, SamplerStrategy::NodeDegree, 1, trials, 4)
                .unwrap();
        // Center holds half the total degree. 4 sigma per node for the
        // simultaneous comparisons.
        let total = 18.0;
        for v in 0..g.n() {
            let p = g.degree(v) as f64 / total;
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            assert!(
                (freq[v] - p).abs() < 4.0 * sigma,
                "node {v}: {} vs {p}",
                freq[v]
            );
        }
    }

    #[test]
    fn degree_sampling_pair_draw_matches_enumeration() {
        // Path over 4 nodes, degrees [1, 2, 2, 1]. Exact unordered-pair
        // probabilities come from summing both draw orders.
        let g = line_graph(4);
        let w = [1.0, 2.0, 2.0, 1.0];
        let total: f64 = w.iter().sum();
        let pair_prob = |a: usize, b: usize| {
            w[a] / total * w[b] / (total - w[a]) + w[b] / total * w[a] / (total - w[b])
        };
        let trials = 40_000;
        let mut counts = std::collections::BTreeMap::new();
        for t in 0..trials {
            let sub = sample_subgraph(&g, SamplerStrategy::NodeDegree, 2, 1000 + t).unwrap();
            *counts.entry(sub.node_map.clone()).or_insert(0usize) += 1;
        }
        for a in 0..4 {
            for b in (a + 1)..4 {
                let want = pair_prob(a, b);
                let got = *counts.get(&vec![a, b]).unwrap_or(&0) as f64 / trials as f64;
                let sigma = (want * (1.0 - want) / trials as f64).sqrt();
                assert!(
                    (got - want).abs() < 4.0 * sigma,
                    "pair ({a},{b}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn degree_sampling_skips_isolated_nodes() {
        let g = Graph::<f64>::new(
            5,
            &[(0, 1)],
            Mat::zeros(5, 1),
            vec![-1; 5],
            vec![MaskKind::None; 5],
            1,
        )
        .unwrap();
        for seed in 0..50 {
            let sub = sample_subgraph(&g, SamplerStrategy::NodeDegree, 2, seed).unwrap();
            assert_eq!(sub.node_map, vec![0, 1]);
        }
        assert!(sample_subgraph(&g, SamplerStrategy::NodeDegree, 3, 0).is_err());
        let edgeless = Graph::<f64>::new(
            3,
            &[],
            Mat::zeros(3, 1),
            vec![-1; 3],
            vec![MaskKind::None; 3],
            1,
        )
        .unwrap();
        assert!(sample_subgraph(&edgeless, SamplerStrategy::NodeDegree, 1, 0).is_err());
    }

    #[test]
    fn cluster_sampling_grows_connected_runs() {
        let g = line_graph(40);
        for seed in 0..20 {
            let sub = sample_subgraph(&g, SamplerStrategy::Cluster, 8, seed).unwrap();
            // On a path, one breadth first component is a contiguous range.
            let lo = *sub.node_map.first().unwrap();
            let hi = *sub.node_map.last().unwrap();
            assert_eq!(hi - lo + 1, 8, "nodes {:?}", sub.node_map);
        }
    }

    #[test]
    fn cluster_sampling_spills_to_next_component() {
        // Two triangles; asking for 4 nodes must cross components.
        let g = Graph::<f64>::new(
            6,
            &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)],
            Mat::zeros(6, 1),
            vec![-1; 6],
            vec![MaskKind::None; 6],
            1,
        )
        .unwrap();
        let sub = sample_subgraph(&g, SamplerStrategy::Cluster, 4, 5).unwrap();
        assert_eq!(sub.node_map.len(), 4);
        let first: Vec<_> = sub.node_map.iter().filter(|&&v| v < 3).collect();
        assert!(first.len() == 3 || first.len() == 1, "{:?}", sub.node_map);
    }

    #[test]
    fn expansion_on_star_respects_per_node_budget() {
        let g = star_graph(9);
        // From the center: exactly three fresh leaves.
        let from_center = induced_subgraph(&g, &[0]).unwrap();
        let grown = expand_subgraph(&g, &from_center, 3, 11).unwrap();
        assert_eq!(grown.node_map.len(), 4);
        assert_eq!(grown.node_map[0], 0);
        assert!(grown.node_map[1..].windows(2).all(|w| w[0] < w[1]));
        assert!(grown.node_map[1..].iter().all(|&v| v >= 1));
        // From a leaf: only the center is reachable.
        let from_leaf = induced_subgraph(&g, &[4]).unwrap();
        let grown = expand_subgraph(&g, &from_leaf, 3, 12).unwrap();
        assert_eq!(grown.node_map, vec![4, 0]);
    }

    #[test]
    fn expansion_adds_each_node_once_and_appends_sorted() {
        let g = line_graph(4);
        let sub = induced_subgraph(&g, &[1, 2]).unwrap();
        let grown = expand_subgraph(&g, &sub, 5, 13).unwrap();
        assert_eq!(grown.node_map, vec![1, 2, 0, 3]);
        // The grown graph carries the induced edges.
        assert_eq!(grown.graph.num_edges(), 3);
    }

    #[test]
    fn resplit_covers_pool_and_respects_test_mask() {
        let mut cfg = SbmConfig::default();
        cfg.block_sizes = vec![30, 30];
        cfg.seed = 9;
        let g: Graph<f64> = generate_sbm(&cfg).unwrap();
        let sub = sample_subgraph(&g, SamplerStrategy::NodeUniform, 40, 21).unwrap();
        let before_test: Vec<usize> = (0..40)
            .filter(|&v| sub.graph.masks()[v] == MaskKind::Test)
            .collect();
        let re = resplit_train_val(&sub, 0.5, 22).unwrap();
        let after_test: Vec<usize> = (0..40)
            .filter(|&v| re.graph.masks()[v] == MaskKind::Test)
            .collect();
        assert_eq!(before_test, after_test);
        let n_train = re.graph.mask_count(MaskKind::Train);
        let n_val = re.graph.mask_count(MaskKind::Val);
        let pool = 40 - after_test.len();
        assert_eq!(n_train + n_val, pool);
        assert!((n_train as i64 - n_val as i64).abs() <= 1);
        // Deterministic under the same seed, different under another.
        let re2 = resplit_train_val(&sub, 0.5, 22).unwrap();
        assert_eq!(re.graph.masks(), re2.graph.masks());
        let re3 = resplit_train_val(&sub, 0.5, 23).unwrap();
        assert_ne!(re.graph.masks(), re3.graph.masks());
    }

    #[test]
    fn full_sample_estimator_is_exact() {
        let g = line_graph(15);
        let report =
            check_unbiased_aggregation(&g, SamplerStrategy::NodeUniform, 15, 3, 30).unwrap();
        assert_eq!(report.mean_rel_err, 0.0);
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn uniform_estimator_converges_on_random_graph() {
        let mut cfg = SbmConfig::default();
        cfg.block_sizes = vec![12, 12];
        cfg.p_in = 0.4;
        cfg.p_out = 0.1;
        cfg.seed = 31;
        let g: Graph<f64> = generate_sbm(&cfg).unwrap();
        let report =
            check_unbiased_aggregation(&g, SamplerStrategy::NodeUniform, 8, 4000, 32).unwrap();
        assert!(report.mean_rel_err < 0.1, "{report:?}");
    }

    #[test]
    fn cluster_unbiasedness_check_is_refused() {
        let g = line_graph(10);
        assert!(check_unbiased_aggregation(&g, SamplerStrategy::Cluster, 4, 10, 1).is_err());
        assert!(inclusion_probabilities(&g, SamplerStrategy::NodeDegree, 4).is_err());
    }

    #[test]
    fn config_validation_and_target_size() {
        let mut cfg = SamplerConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.target_size(100), 20);
        assert_eq!(cfg.target_size(3), 1);
        cfg.fraction = 1.0;
        assert_eq!(cfg.target_size(7), 7);
        cfg.fraction = 0.0;
        assert!(cfg.validate().is_err());
        cfg.fraction = 1.5;
        assert!(cfg.validate().is_err());
    }
}
