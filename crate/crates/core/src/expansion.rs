//! Iterative cell growth: split the most uncertain node, pull fresh
//! neighborhood into the subgraph, and re-search just the reopened edges
//! under the entropy-regularized objective. Each iteration's entropy
//! bookkeeping is recorded for the trajectory reports.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnnops::OpKind;
use crate::graph::{Graph, Subgraph};
use crate::sampler::{expand_subgraph, resplit_train_val};
use crate::scalar::Scalar;
use crate::search::{localized_search, SearchConfig};
use crate::seeding::{derive_seed, rng_from};
use crate::seedselect::SeedSelection;
use crate::supernet::{AlphaTable, CellTopology, DerivedArchitecture, SupernetModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    /// Number of split-and-research iterations; each adds one node.
    pub iterations: usize,
    /// 1-hop neighbors drawn per present node per iteration.
    pub m: usize,
    /// Entropy-regularizer weight in the localized search objective.
    pub lambda: f64,
    /// Ablation: pick the split node uniformly instead of by entropy.
    pub random_split: bool,
    pub search: SearchConfig,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            iterations: 3,
            m: 2,
            lambda: 0.1,
            random_split: false,
            search: SearchConfig::default(),
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda must be nonnegative"));
        }
        self.search.validate()
    }
}

/// One split and its entropy bracket around the localized search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    /// The node that was split.
    pub node: usize,
    /// Its two successors: `kept` inherits the inputs, `fresh` additionally
    /// reads from `kept` and takes over the outgoing edges.
    pub kept: usize,
    pub fresh: usize,
    /// Entropy sum over {kept, fresh} right after the split (fresh uniform
    /// mixtures) and after the search.
    pub unstable_before: f64,
    pub unstable_after: f64,
    /// Mean node entropy right after the split and after the search.
    pub overall_before: f64,
    pub overall_after: f64,
}

/// Everything the trajectory report needs about one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub split: SplitRecord,
    /// Mean node entropy immediately before the split: the previous
    /// iteration's converged table, or 0 at iteration 1 where the whole seed
    /// is frozen. The expected trajectory has `mean_entropy_post_search`
    /// non-increasing across iterations; violations stay in the record.
    pub mean_entropy_pre_split: f64,
    pub mean_entropy_post_search: f64,
    /// Per-epoch mean trainable node entropy during the localized search.
    pub entropy_curve: Vec<f64>,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// Subgraph node count after the collaborative expansion.
    pub subgraph_size: usize,
}

/// The evolving model/subgraph pair the iterations thread through.
#[derive(Debug, Clone)]
pub struct ExpansionState<S> {
    pub model: SupernetModel<S>,
    pub sub: Subgraph<S>,
}

fn sorted_intermediates(topology: &CellTopology) -> Vec<usize> {
    let mut ids = topology.order().to_vec();
    ids.sort_unstable();
    ids
}

/// Intermediate node with the highest node entropy; ties go to the lowest
/// node id. On an all-frozen table every entropy is 0 and the lowest id wins.
pub fn select_split_node<S: Scalar>(topology: &CellTopology, alpha: &AlphaTable<S>) -> usize {
    let ids = sorted_intermediates(topology);
    let mut best = ids[0];
    let mut best_h = alpha.node_entropy(topology, best);
    for &j in &ids[1..] {
        let h = alpha.node_entropy(topology, j);
        if h > best_h {
            best = j;
            best_h = h;
        }
    }
    best
}

/// Entropy sum (not mean) over a group of intermediate nodes.
pub fn unstable_group_entropy<S: Scalar>(
    topology: &CellTopology,
    alpha: &AlphaTable<S>,
    group: &[usize],
) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::config("unstable group is empty"));
    }
    let mut sum = 0.0;
    for &j in group {
        if !topology.order().contains(&j) {
            return Err(Error::config(format!(
                "node {j} is not an intermediate node"
            )));
        }
        sum += alpha.node_entropy(topology, j).to64();
    }
    Ok(sum)
}

/// One growth step: pick a node, split it (freezing everything else), pull
/// `m` fresh 1-hop neighbors per present node into the subgraph, re-split
/// its train/val masks, and run the localized search on the reopened edges.
pub fn expand_iteration<S: Scalar>(
    state: &mut ExpansionState<S>,
    g: &Graph<S>,
    cfg: &ExpansionConfig,
    iteration: usize,
    master_seed: u64,
) -> Result<IterationRecord> {
    cfg.validate()?;
    let it = iteration as u64;
    let wrap = |err: Error| {
        Error::numerical("expand_iteration", format!("iteration {iteration}: {err}"))
    };
    let mean_entropy_pre_split = state.model.overall_entropy().to64();
    let node = if cfg.random_split {
        let ids = sorted_intermediates(&state.model.topology);
        let mut rng = rng_from(derive_seed(master_seed, "select", &[it]));
        ids[rng.random_range(0..ids.len())]
    } else {
        select_split_node(&state.model.topology, &state.model.alpha)
    };
    let mut split_rng = rng_from(derive_seed(master_seed, "split", &[it]));
    let ev = state.model.split_node(node, &mut split_rng).map_err(wrap)?;
    let group = [ev.kept, ev.fresh];
    let unstable_before =
        unstable_group_entropy(&state.model.topology, &state.model.alpha, &group)?;
    let overall_before = state.model.overall_entropy().to64();

    let grown = expand_subgraph(g, &state.sub, cfg.m, derive_seed(master_seed, "grow", &[it]))
        .map_err(wrap)?;
    state.sub = resplit_train_val(
        &grown,
        cfg.search.train_val_ratio,
        derive_seed(master_seed, "resplit", &[it]),
    )
    .map_err(wrap)?;

    let trace =
        localized_search(&mut state.model, &state.sub.graph, &cfg.search, cfg.lambda)
            .map_err(wrap)?;

    let unstable_after =
        unstable_group_entropy(&state.model.topology, &state.model.alpha, &group)?;
    let overall_after = state.model.overall_entropy().to64();
    Ok(IterationRecord {
        split: SplitRecord {
            iteration,
            node,
            kept: ev.kept,
            fresh: ev.fresh,
            unstable_before,
            unstable_after,
            overall_before,
            overall_after,
        },
        mean_entropy_pre_split,
        mean_entropy_post_search: overall_after,
        entropy_curve: trace.reg_values,
        train_losses: trace.train_losses,
        val_losses: trace.val_losses,
        subgraph_size: state.sub.node_map.len(),
    })
}

/// Grow the seed architecture for `cfg.iterations` steps and discretize.
/// The final state rides along for entropy checks and reports.
pub fn run_expansion<S: Scalar>(
    selection: &SeedSelection,
    seed_sub: Subgraph<S>,
    g: &Graph<S>,
    opset: &[OpKind],
    cfg: &ExpansionConfig,
    master_seed: u64,
) -> Result<(DerivedArchitecture, Vec<IterationRecord>, ExpansionState<S>)> {
    cfg.validate()?;
    let mut rng = rng_from(derive_seed(master_seed, "expand-init", &[]));
    let model = SupernetModel::from_frozen(
        &selection.seed_architecture,
        g.feat_dim(),
        g.num_classes(),
        opset.to_vec(),
        &mut rng,
    )?;
    let p0 = model.topology.p();
    let full_nodes = g.features().rows();
    let mut state = ExpansionState {
        model,
        sub: seed_sub,
    };
    let mut history = Vec::with_capacity(cfg.iterations);
    for i in 0..cfg.iterations {
        let prev_sub = state.sub.node_map.len();
        let record = expand_iteration(&mut state, g, cfg, i + 1, master_seed)?;
        if state.model.topology.p() != p0 + i + 1 {
            return Err(Error::numerical(
                "run_expansion",
                format!(
                    "node count {} after {} splits of a {p0}-node cell",
                    state.model.topology.p(),
                    i + 1
                ),
            ));
        }
        if record.subgraph_size < prev_sub || record.subgraph_size > full_nodes {
            return Err(Error::numerical(
                "run_expansion",
                format!("subgraph shrank or outgrew the graph at iteration {}", i + 1),
            ));
        }
        history.push(record);
    }
    let architecture = state.model.discretize()?;
    Ok((architecture, history, state))
}
