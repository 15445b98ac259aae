//! Run configuration: a flat text format with dotted keys (`search.lr_alpha
//! = 5e-4`, `#` comments), environment overrides, and the resolved struct
//! every report embeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnnops::OpKind;
use crate::graph::Graph;
use crate::io::{load_graph, SplitSpec};
use crate::sampler::{SamplerConfig, SamplerStrategy};
use crate::sbm::{generate_sbm, SbmConfig};
use crate::scalar::Scalar;
use crate::search::SearchConfig;
use crate::seeding::derive_seed;
use crate::seedselect::SeedStrategy;
use crate::supernet::full_opset;

/// Where the graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetConfig {
    Sbm(SbmConfig),
    Files {
        edges: PathBuf,
        features: PathBuf,
        labels: PathBuf,
        split: FileSplit,
    },
}

/// Mask derivation for file-backed datasets. Ratio splits draw their seed
/// from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileSplit {
    Ratios { train: f64, val: f64 },
    MaskFile(PathBuf),
}

/// The architecture-expansion block of a run config. The engine couples
/// these with the shared search block; see [`RunConfig::expansion_config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionBlock {
    pub iterations: usize,
    pub m: usize,
    pub lambda: f64,
    pub random_split: bool,
}

impl Default for ExpansionBlock {
    fn default() -> Self {
        let d = crate::expansion::ExpansionConfig::default();
        ExpansionBlock {
            iterations: d.iterations,
            m: d.m,
            lambda: d.lambda,
            random_split: d.random_split,
        }
    }
}

/// Fully resolved run parameters. Defaults target a small graph: 5 stacked
/// cells over 3 initial intermediate nodes, 9 sampled subgraphs, 64 hidden
/// dims. Reports embed this struct verbatim so a run is replayable from any
/// of its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub sampler: SamplerConfig,
    pub search: SearchConfig,
    pub expansion: ExpansionBlock,
    /// Subgraphs sampled for seed selection.
    pub k: usize,
    /// Stacked cells in every model.
    pub cells: usize,
    /// Intermediate nodes per cell before expansion.
    pub p0: usize,
    /// Hidden embedding width.
    pub hidden: usize,
    pub workers: usize,
    pub master_seed: u64,
    pub seed_strategy: SeedStrategy,
    /// Candidate operations, always kept in registry order.
    pub ops: Vec<OpKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::Sbm(SbmConfig {
                seed: derive_seed(0, "dataset", &[]),
                ..SbmConfig::default()
            }),
            sampler: SamplerConfig::default(),
            search: SearchConfig::default(),
            expansion: ExpansionBlock::default(),
            k: 9,
            cells: 5,
            p0: 3,
            hidden: 64,
            workers: 1,
            master_seed: 0,
            seed_strategy: SeedStrategy::RankConsistency,
            ops: full_opset(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config(format!("k = {} but at least 2 subgraphs are needed", self.k)));
        }
        if self.cells == 0 || self.p0 == 0 || self.hidden == 0 {
            return Err(Error::config("cells, p0 and hidden must be positive"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be positive"));
        }
        self.sampler.validate()?;
        if self.ops.is_empty() {
            return Err(Error::config("ops must name at least one operation"));
        }
        if let DatasetConfig::Files { split: FileSplit::Ratios { train, val }, .. } = &self.dataset
        {
            if !(*train > 0.0 && *val > 0.0 && train + val < 1.0) {
                return Err(Error::config(format!(
                    "dataset ratios train = {train}, val = {val} must be positive and sum below 1"
                )));
            }
        }
        self.search.validate()?;
        self.expansion_config().validate()
    }

    /// The expansion engine's parameters: this config's expansion block plus
    /// the shared search block.
    pub fn expansion_config(&self) -> crate::expansion::ExpansionConfig {
        crate::expansion::ExpansionConfig {
            iterations: self.expansion.iterations,
            m: self.expansion.m,
            lambda: self.expansion.lambda,
            random_split: self.expansion.random_split,
            search: self.search.clone(),
        }
    }

    /// Load or generate the configured graph.
    pub fn load_dataset<S: Scalar>(&self) -> Result<Graph<S>> {
        match &self.dataset {
            DatasetConfig::Sbm(sbm) => generate_sbm(sbm),
            DatasetConfig::Files {
                edges,
                features,
                labels,
                split,
            } => {
                let spec = match split {
                    FileSplit::MaskFile(path) => SplitSpec::MaskFile(path.clone()),
                    FileSplit::Ratios { train, val } => SplitSpec::Ratios {
                        train: *train,
                        val: *val,
                        seed: derive_seed(self.master_seed, "file-split", &[]),
                    },
                };
                load_graph(edges, features, labels, &spec)
            }
        }
    }
}

/// Parse the flat text format. Unknown keys are rejected so typos surface
/// instead of silently falling back to defaults.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {line}: expected `key = value`, got {body:?}")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(Error::config(format!("line {line}: empty key or value")));
        }
        if let Some((prev, _)) = kv.insert(key.clone(), (line, value)) {
            return Err(Error::config(format!(
                "line {line}: key {key:?} already set on line {prev}"
            )));
        }
    }
    build_config(&mut kv).and_then(|cfg| {
        if let Some((key, (line, _))) = kv.iter().next() {
            return Err(Error::config(format!("line {line}: unknown key {key:?}")));
        }
        Ok(cfg)
    })
}

struct Taken<'a>(&'a mut BTreeMap<String, (usize, String)>);

impl Taken<'_> {
    fn raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.0.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|_| {
                Error::config(format!("line {line}: invalid value {v:?} for {key}"))
            }),
        }
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.raw(key)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::config(format!("missing required key {key}")))
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, line: usize, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| Error::config(format!("line {line}: invalid entry {part:?} in {key}")))
        })
        .collect()
}

fn build_config(kv: &mut BTreeMap<String, (usize, String)>) -> Result<RunConfig> {
    let mut t = Taken(kv);
    let defaults = RunConfig::default();
    let master_seed = t.parse("master_seed", defaults.master_seed)?;

    let kind = t
        .raw("dataset.kind")
        .map_or_else(|| "sbm".to_string(), |(_, v)| v);
    let dataset = match kind.as_str() {
        "sbm" => {
            let d = SbmConfig::default();
            let blocks = match t.raw("dataset.blocks") {
                None => d.block_sizes,
                Some((line, v)) => parse_list("dataset.blocks", line, &v)?,
            };
            DatasetConfig::Sbm(SbmConfig {
                block_sizes: blocks,
                p_in: t.parse("dataset.p_in", d.p_in)?,
                p_out: t.parse("dataset.p_out", d.p_out)?,
                feat_dim: t.parse("dataset.feat_dim", d.feat_dim)?,
                noise: t.parse("dataset.noise", d.noise)?,
                seed: t.parse("dataset.seed", derive_seed(master_seed, "dataset", &[]))?,
            })
        }
        "files" => {
            let edges = PathBuf::from(t.require("dataset.edges")?);
            let features = PathBuf::from(t.require("dataset.features")?);
            let labels = PathBuf::from(t.require("dataset.labels")?);
            let split = match t.raw("dataset.masks") {
                Some((_, path)) => FileSplit::MaskFile(PathBuf::from(path)),
                None => FileSplit::Ratios {
                    train: t.parse("dataset.train_ratio", 0.6)?,
                    val: t.parse("dataset.val_ratio", 0.2)?,
                },
            };
            DatasetConfig::Files {
                edges,
                features,
                labels,
                split,
            }
        }
        other => {
            return Err(Error::config(format!(
                "dataset.kind must be sbm or files, got {other:?}"
            )))
        }
    };

    let sampler = SamplerConfig {
        strategy: match t.raw("sampler.strategy") {
            None => defaults.sampler.strategy,
            Some((_, v)) => SamplerStrategy::from_name(&v)?,
        },
        fraction: t.parse("sampler.fraction", defaults.sampler.fraction)?,
    };

    let sd = &defaults.search;
    let search = SearchConfig {
        epochs_search: t.parse("search.epochs_search", sd.epochs_search)?,
        epochs_eval: t.parse("search.epochs_eval", sd.epochs_eval)?,
        lr_w: t.parse("search.lr_w", sd.lr_w)?,
        lr_alpha: t.parse("search.lr_alpha", sd.lr_alpha)?,
        weight_decay: t.parse("search.weight_decay", sd.weight_decay)?,
        lambda: t.parse("search.lambda", sd.lambda)?,
        train_val_ratio: t.parse("search.train_val_ratio", sd.train_val_ratio)?,
    };

    let ed = &defaults.expansion;
    let expansion = ExpansionBlock {
        iterations: t.parse("expansion.iterations", ed.iterations)?,
        m: t.parse("expansion.m", ed.m)?,
        lambda: t.parse("expansion.lambda", ed.lambda)?,
        random_split: t.parse("expansion.random_split", ed.random_split)?,
    };

    let ops = match t.raw("ops") {
        None => defaults.ops,
        Some((line, v)) => {
            let mut kinds = Vec::new();
            for name in v.split(',') {
                let kind = OpKind::from_name(name.trim()).map_err(|e| {
                    Error::config(format!("line {line}: {e}"))
                })?;
                if !kinds.contains(&kind) {
                    kinds.push(kind);
                }
            }
            kinds.sort_by_key(|k| k.registry_index());
            kinds
        }
    };

    let seed_strategy = match t.raw("seed_strategy") {
        None => defaults.seed_strategy,
        Some((_, v)) => SeedStrategy::from_name(&v)?,
    };

    let cfg = RunConfig {
        dataset,
        sampler,
        search,
        expansion,
        k: t.parse("k", defaults.k)?,
        cells: t.parse("cells", defaults.cells)?,
        p0: t.parse("p0", defaults.p0)?,
        hidden: t.parse("hidden", defaults.hidden)?,
        workers: t.parse("workers", defaults.workers)?,
        master_seed,
        seed_strategy,
        ops,
    };
    Ok(cfg)
}

/// Apply `SAGNAS_SEED` and `SAGNAS_WORKERS` on top of a parsed config.
pub fn apply_env_overrides(cfg: &mut RunConfig, env: impl Fn(&str) -> Option<String>) -> Result<()> {
    if let Some(v) = env("SAGNAS_SEED") {
        cfg.master_seed = v
            .parse()
            .map_err(|_| Error::config(format!("SAGNAS_SEED = {v:?} is not an integer")))?;
    }
    if let Some(v) = env("SAGNAS_WORKERS") {
        cfg.workers = v
            .parse()
            .map_err(|_| Error::config(format!("SAGNAS_WORKERS = {v:?} is not a count")))?;
    }
    Ok(())
}

/// Read a config file, apply environment overrides, and validate.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cfg = parse_run_config(&text)?;
    apply_env_overrides(&mut cfg, |key| std::env::var(key).ok())?;
    cfg.validate()?;
    Ok(cfg)
}
