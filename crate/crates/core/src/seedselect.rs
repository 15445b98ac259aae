//! Seed-stage selection: search one cell per sampled subgraph, evaluate every
//! candidate on every subgraph and on the full graph, and keep the subgraph
//! whose performance ranking agrees best with the full graph under a
//! magnitude-weighted Kendall correlation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnnops::OpKind;
use crate::graph::{Graph, Subgraph};
use crate::scalar::Scalar;
use crate::search::{darts_search, train_eval, SearchConfig, SearchTrace};
use crate::seeding::{derive_seed, rng_from};
use crate::supernet::DerivedArchitecture;

/// Accuracies are meaningful to about a part in 10^6 (one node in a graph of
/// a million); quantizing before differencing makes tie detection exact.
const ACCURACY_GRID: f64 = 1e6;

fn quantize(x: f64) -> i64 {
    (x * ACCURACY_GRID).round() as i64
}

/// Validation accuracies of the K candidate architectures on one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfSequence {
    /// 0..K-1 name the subgraphs; K names the full graph.
    pub graph_id: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KendallScore {
    pub subgraph_id: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStrategy {
    /// Highest rank agreement with the full graph (the default pipeline).
    RankConsistency,
    Random,
    /// Architecture scoring highest on the full graph.
    HighestOnFull,
    /// Architecture with the best mean accuracy across subgraphs.
    HighestAvgSubgraphs,
}

impl SeedStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SeedStrategy::RankConsistency => "rank_consistency",
            SeedStrategy::Random => "random",
            SeedStrategy::HighestOnFull => "highest_on_full",
            SeedStrategy::HighestAvgSubgraphs => "highest_avg_subgraphs",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "rank_consistency" => Ok(SeedStrategy::RankConsistency),
            "random" => Ok(SeedStrategy::Random),
            "highest_on_full" => Ok(SeedStrategy::HighestOnFull),
            "highest_avg_subgraphs" => Ok(SeedStrategy::HighestAvgSubgraphs),
            other => Err(Error::config(format!("unknown seed strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSelection {
    pub strategy: SeedStrategy,
    pub seed_subgraph_id: usize,
    pub seed_architecture: DerivedArchitecture,
    /// Overall mixture entropy of the winning subgraph's search supernet at
    /// the end of the seed search; the expansion stage's starting reference.
    pub seed_overall_entropy: f64,
    pub scores: Vec<KendallScore>,
    pub sequences: Vec<PerfSequence>,
}

/// One subgraph's search outcome.
#[derive(Debug, Clone)]
pub struct SearchedCell {
    pub arch: DerivedArchitecture,
    /// Final overall mixture entropy of the search supernet.
    pub overall_entropy: f64,
    pub trace: SearchTrace,
}

/// Magnitude-weighted Kendall correlation between two performance sequences.
/// Each pair weighs in with the ratio of its smaller to larger accuracy gap,
/// signed by concordance; pairs tied on both sides count fully concordant.
pub fn weighted_kendall_tau(p_sub: &[f64], p_full: &[f64]) -> Result<f64> {
    if p_sub.len() != p_full.len() {
        return Err(Error::data(format!(
            "sequence lengths differ: {} vs {}",
            p_sub.len(),
            p_full.len()
        )));
    }
    let k = p_sub.len();
    if k < 2 {
        return Err(Error::data("sequences need at least two entries"));
    }
    let qs: Vec<i64> = p_sub.iter().map(|&x| quantize(x)).collect();
    let qf: Vec<i64> = p_full.iter().map(|&x| quantize(x)).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let ds = qs[i] - qs[j];
            let df = qf[i] - qf[j];
            let w = if ds == 0 && df == 0 {
                1.0
            } else if ds.abs() <= df.abs() {
                ds as f64 / df as f64
            } else {
                df as f64 / ds as f64
            };
            num += w;
            den += w.abs();
        }
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Run the per-subgraph cell searches, one independent search per subgraph,
/// in parallel. Per-subgraph seeds derive from the master seed and the
/// subgraph index, so results do not depend on the worker count.
pub fn search_architectures<S: Scalar>(
    subgraphs: &[Subgraph<S>],
    opset: &[OpKind],
    hidden: usize,
    cells: usize,
    p0: usize,
    cfg: &SearchConfig,
    master_seed: u64,
) -> Result<Vec<SearchedCell>> {
    if subgraphs.len() < 2 {
        return Err(Error::config("seed selection needs at least two subgraphs"));
    }
    subgraphs
        .par_iter()
        .enumerate()
        .map(|(k, sub)| {
            let seed = derive_seed(master_seed, "search", &[k as u64]);
            let (model, trace) =
                darts_search(&sub.graph, opset.to_vec(), hidden, cells, p0, cfg, seed)
                    .map_err(|e| {
                        Error::numerical("search_architectures", format!("subgraph {k}: {e}"))
                    })?;
            let arch = model.discretize().map_err(|e| {
                Error::numerical("search_architectures", format!("subgraph {k}: {e}"))
            })?;
            Ok(SearchedCell {
                arch,
                overall_entropy: model.overall_entropy().to64(),
                trace,
            })
        })
        .collect()
}

/// Evaluate every architecture on every subgraph and on the full graph:
/// K x (K+1) independent trainings with derived per-run seeds, in parallel.
/// Sequence k holds graph k's accuracies indexed by architecture; the last
/// sequence is the full graph's.
pub fn build_perf_sequences<S: Scalar>(
    archs: &[DerivedArchitecture],
    subgraphs: &[Subgraph<S>],
    g: &Graph<S>,
    cfg: &SearchConfig,
    master_seed: u64,
) -> Result<Vec<PerfSequence>> {
    let k = archs.len();
    if k != subgraphs.len() {
        return Err(Error::config(format!(
            "{k} architectures vs {} subgraphs",
            subgraphs.len()
        )));
    }
    if k < 2 {
        return Err(Error::config("seed selection needs at least two subgraphs"));
    }
    let tasks: Vec<(usize, usize)> = (0..=k)
        .flat_map(|gid| (0..k).map(move |i| (gid, i)))
        .collect();
    let values: Vec<f64> = tasks
        .par_iter()
        .map(|&(gid, i)| {
            let target: &Graph<S> = if gid == k { g } else { &subgraphs[gid].graph };
            let seed = derive_seed(master_seed, "eval", &[i as u64, gid as u64]);
            train_eval(&archs[i], target, cfg, seed)
                .map(|r| r.val_accuracy)
                .map_err(|e| {
                    Error::numerical(
                        "build_perf_sequences",
                        format!("architecture {i} on graph {gid}: {e}"),
                    )
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values
        .chunks(k)
        .enumerate()
        .map(|(gid, vals)| PerfSequence {
            graph_id: gid,
            values: vals.to_vec(),
        })
        .collect())
}

fn split_sequences(
    sequences: &[PerfSequence],
    k: usize,
) -> Result<(&[PerfSequence], &PerfSequence)> {
    if sequences.len() != k + 1 {
        return Err(Error::data(format!(
            "expected {} sequences for {k} subgraphs, got {}",
            k + 1,
            sequences.len()
        )));
    }
    for (i, s) in sequences.iter().enumerate() {
        if s.graph_id != i {
            return Err(Error::data(format!(
                "sequence {i} carries graph id {}",
                s.graph_id
            )));
        }
        if s.values.len() != k {
            return Err(Error::data(format!(
                "sequence {i} has {} values, expected {k}",
                s.values.len()
            )));
        }
    }
    Ok((&sequences[..k], &sequences[k]))
}

fn kendall_table(subs: &[PerfSequence], full: &PerfSequence) -> Result<Vec<KendallScore>> {
    subs.iter()
        .map(|s| {
            weighted_kendall_tau(&s.values, &full.values).map(|tau| KendallScore {
                subgraph_id: s.graph_id,
                tau,
            })
        })
        .collect()
}

/// Pick the subgraph whose ranking agrees best with the full graph. Ties go
/// to the subgraph whose own architecture scored higher on the full graph,
/// then to the lower index.
pub fn select_seed(
    sequences: &[PerfSequence],
    archs: &[DerivedArchitecture],
    search_entropies: &[f64],
) -> Result<SeedSelection> {
    let (subs, full) = split_sequences(sequences, archs.len())?;
    if search_entropies.len() != archs.len() {
        return Err(Error::data("one search entropy per subgraph required"));
    }
    let scores = kendall_table(subs, full)?;
    let mut best = 0;
    for i in 1..scores.len() {
        let better = scores[i].tau > scores[best].tau
            || (scores[i].tau == scores[best].tau && full.values[i] > full.values[best]);
        if better {
            best = i;
        }
    }
    Ok(SeedSelection {
        strategy: SeedStrategy::RankConsistency,
        seed_subgraph_id: best,
        seed_architecture: archs[best].clone(),
        seed_overall_entropy: search_entropies[best],
        scores,
        sequences: sequences.to_vec(),
    })
}

/// Ablation selectors. All of them still report the full score table; only
/// the choice rule differs. `seed` matters only to `Random`.
pub fn select_seed_variant(
    strategy: SeedStrategy,
    sequences: &[PerfSequence],
    archs: &[DerivedArchitecture],
    search_entropies: &[f64],
    seed: u64,
) -> Result<SeedSelection> {
    if strategy == SeedStrategy::RankConsistency {
        return select_seed(sequences, archs, search_entropies);
    }
    let (subs, full) = split_sequences(sequences, archs.len())?;
    if search_entropies.len() != archs.len() {
        return Err(Error::data("one search entropy per subgraph required"));
    }
    let scores = kendall_table(subs, full)?;
    let chosen = match strategy {
        SeedStrategy::RankConsistency => unreachable!("handled above"),
        SeedStrategy::Random => rng_from(seed).random_range(0..archs.len()),
        SeedStrategy::HighestOnFull => argmax_low_tie(&full.values),
        SeedStrategy::HighestAvgSubgraphs => {
            let means: Vec<f64> = (0..archs.len())
                .map(|i| {
                    subs.iter().map(|s| s.values[i]).sum::<f64>() / subs.len() as f64
                })
                .collect();
            argmax_low_tie(&means)
        }
    };
    Ok(SeedSelection {
        strategy,
        seed_subgraph_id: chosen,
        seed_architecture: archs[chosen].clone(),
        seed_overall_entropy: search_entropies[chosen],
        scores,
        sequences: sequences.to_vec(),
    })
}

fn argmax_low_tie(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
