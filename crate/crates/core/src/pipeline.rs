//! End-to-end orchestration and the artifact files a run emits.
//!
//! Every stage is a pure function of the resolved config, so the single-shot
//! driver and the stage-wise commands write byte-identical artifacts. Wall
//! times live only in the summary's `timing` block; everything else is
//! deterministic under the master seed, including the worker count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, FileSplit, RunConfig};
use crate::error::{Error, Result};
use crate::expansion::{run_expansion, ExpansionState, IterationRecord};
use crate::graph::{induced_subgraph, Graph, MaskKind, Subgraph};
use crate::sampler::sample_subgraph;
use crate::scalar::Scalar;
use crate::search::{train_eval, EvalResult};
use crate::seeding::derive_seed;
use crate::seedselect::{
    build_perf_sequences, search_architectures, select_seed_variant, SearchedCell, SeedSelection,
};
use crate::supernet::DerivedArchitecture;

pub const SCHEMA_VERSION: u32 = 1;

pub const SAMPLES_FILE: &str = "samples.json";
pub const SELECTION_FILE: &str = "selection_report.json";
pub const HISTORY_FILE: &str = "expansion_history.jsonl";
pub const ARCHITECTURE_FILE: &str = "architecture.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVALUATION_FILE: &str = "evaluation.json";

/// Seeds an iteration of the expansion loop draws from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSeeds {
    pub select: u64,
    pub split: u64,
    pub grow: u64,
    pub resplit: u64,
}

/// Every seed the run derives from the master seed, in the order the stages
/// consume them. Together with the resolved config this replays the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedSeeds {
    /// Present when a file-backed dataset splits by ratios.
    pub file_split: Option<u64>,
    /// One per sampled subgraph.
    pub sample: Vec<u64>,
    /// One per subgraph search.
    pub search: Vec<u64>,
    /// `eval[i][gid]`: architecture i trained on subgraph gid (gid = k is
    /// the full graph).
    pub eval: Vec<Vec<u64>>,
    pub strategy: u64,
    pub expand_init: u64,
    pub expansion: Vec<IterationSeeds>,
    pub final_eval: u64,
}

pub fn derived_seeds(cfg: &RunConfig) -> DerivedSeeds {
    let m = cfg.master_seed;
    let file_split = match &cfg.dataset {
        DatasetConfig::Files {
            split: FileSplit::Ratios { .. },
            ..
        } => Some(derive_seed(m, "file-split", &[])),
        _ => None,
    };
    DerivedSeeds {
        file_split,
        sample: (0..cfg.k).map(|k| derive_seed(m, "sample", &[k as u64])).collect(),
        search: (0..cfg.k).map(|k| derive_seed(m, "search", &[k as u64])).collect(),
        eval: (0..cfg.k)
            .map(|i| {
                (0..=cfg.k)
                    .map(|gid| derive_seed(m, "eval", &[i as u64, gid as u64]))
                    .collect()
            })
            .collect(),
        strategy: derive_seed(m, "strategy", &[]),
        expand_init: derive_seed(m, "expand-init", &[]),
        expansion: (1..=cfg.expansion.iterations as u64)
            .map(|it| IterationSeeds {
                select: derive_seed(m, "select", &[it]),
                split: derive_seed(m, "split", &[it]),
                grow: derive_seed(m, "grow", &[it]),
                resplit: derive_seed(m, "resplit", &[it]),
            })
            .collect(),
        final_eval: derive_seed(m, "final-eval", &[]),
    }
}

/// Modeling choices that are not visible in the config but shape results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunNotes {
    pub split_warm_start: String,
    pub lambda_default: String,
}

impl Default for RunNotes {
    fn default() -> Self {
        RunNotes {
            split_warm_start: "splitting reinitializes the reopened edges' candidate parameters; \
                               every other edge keeps its trained weights"
                .to_string(),
            lambda_default: "entropy regularizer weight defaults to 0.1; small graphs can be \
                             sensitive to it, sweep expansion.lambda when results look unstable"
                .to_string(),
        }
    }
}

/// One sampled subgraph, stored as global node ids plus the local masks the
/// sampler assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub nodes: Vec<usize>,
    pub masks: Vec<MaskKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub derived_seeds: DerivedSeeds,
    pub subgraphs: Vec<SampleRecord>,
}

/// The per-subgraph search result kept in the selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub subgraph_id: usize,
    pub architecture: DerivedArchitecture,
    pub overall_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub derived_seeds: DerivedSeeds,
    pub notes: RunNotes,
    pub searched: Vec<SearchSummary>,
    pub selection: SeedSelection,
}

/// First line of the expansion history file; the remaining lines are one
/// [`IterationRecord`] each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryHeader {
    pub schema_version: u32,
    pub config: RunConfig,
    pub derived_seeds: DerivedSeeds,
    pub notes: RunNotes,
    pub seed_architecture: DerivedArchitecture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub architecture: DerivedArchitecture,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub subgraph_id: usize,
    pub tau: f64,
    pub overall_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionSummary {
    pub iterations: usize,
    /// Mean node entropy after each iteration's search.
    pub entropy_trajectory: Vec<f64>,
    pub final_subgraph_size: Option<usize>,
}

/// Stage wall times in seconds. The only nondeterministic part of a run's
/// artifacts, which is why it gets its own block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub load_secs: f64,
    pub sample_secs: f64,
    pub select_secs: f64,
    pub expand_secs: f64,
    pub eval_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub config: RunConfig,
    pub derived_seeds: DerivedSeeds,
    pub notes: RunNotes,
    pub seed: SeedSummary,
    pub expansion: ExpansionSummary,
    pub architecture: DerivedArchitecture,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub timing: Timing,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::data(format!(
            "{}: schema version {version}, this build reads {SCHEMA_VERSION}",
            path.display()
        )));
    }
    Ok(())
}

fn check_config(path: &Path, embedded: &RunConfig, cfg: &RunConfig) -> Result<()> {
    if embedded != cfg {
        return Err(Error::config(format!(
            "{} was produced under a different config; rerun the earlier stages",
            path.display()
        )));
    }
    Ok(())
}

/// Load the dataset and draw the `k` seed-selection subgraphs.
pub fn stage_sample<S: Scalar>(cfg: &RunConfig) -> Result<(Graph<S>, Vec<Subgraph<S>>)> {
    cfg.validate()?;
    let g: Graph<S> = cfg.load_dataset()?;
    let target = cfg.sampler.target_size(g.n());
    let subs = (0..cfg.k)
        .map(|k| {
            sample_subgraph(
                &g,
                cfg.sampler.strategy,
                target,
                derive_seed(cfg.master_seed, "sample", &[k as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((g, subs))
}

pub fn subgraph_records<S: Scalar>(subs: &[Subgraph<S>]) -> Vec<SampleRecord> {
    subs.iter()
        .enumerate()
        .map(|(id, sub)| SampleRecord {
            id,
            nodes: sub.node_map.clone(),
            masks: sub.graph.masks().to_vec(),
        })
        .collect()
}

/// Rebuild sampled subgraphs from their records, exactly as sampled: local
/// ids follow the stored node order and masks are restored verbatim.
pub fn restore_subgraphs<S: Scalar>(
    g: &Graph<S>,
    records: &[SampleRecord],
) -> Result<Vec<Subgraph<S>>> {
    records
        .iter()
        .map(|rec| {
            let mut sub = induced_subgraph(g, &rec.nodes)?;
            sub.graph.set_masks(rec.masks.clone())?;
            Ok(sub)
        })
        .collect()
}

/// Stage 1: search every subgraph, evaluate the architecture grid, and pick
/// the seed. The parallel grids run on a pool of `cfg.workers` threads; all
/// seeds derive from grid indices, so the worker count never changes results.
pub fn stage_select<S: Scalar>(
    cfg: &RunConfig,
    g: &Graph<S>,
    subs: &[Subgraph<S>],
) -> Result<(Vec<SearchedCell>, SeedSelection)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let (cells, sequences) = pool.install(|| -> Result<_> {
        let cells = search_architectures(
            subs,
            &cfg.ops,
            cfg.hidden,
            cfg.cells,
            cfg.p0,
            &cfg.search,
            cfg.master_seed,
        )?;
        let archs: Vec<DerivedArchitecture> = cells.iter().map(|c| c.arch.clone()).collect();
        let sequences = build_perf_sequences(&archs, subs, g, &cfg.search, cfg.master_seed)?;
        Ok((cells, sequences))
    })?;
    let archs: Vec<DerivedArchitecture> = cells.iter().map(|c| c.arch.clone()).collect();
    let entropies: Vec<f64> = cells.iter().map(|c| c.overall_entropy).collect();
    let selection = select_seed_variant(
        cfg.seed_strategy,
        &sequences,
        &archs,
        &entropies,
        derive_seed(cfg.master_seed, "strategy", &[]),
    )?;
    Ok((cells, selection))
}

/// Stage 2: grow the seed architecture on its expanding subgraph.
pub fn stage_expand<S: Scalar>(
    cfg: &RunConfig,
    g: &Graph<S>,
    seed_sub: Subgraph<S>,
    selection: &SeedSelection,
) -> Result<(DerivedArchitecture, Vec<IterationRecord>, ExpansionState<S>)> {
    run_expansion(
        selection,
        seed_sub,
        g,
        &cfg.ops,
        &cfg.expansion_config(),
        cfg.master_seed,
    )
}

/// Train the final architecture from scratch on the full graph.
pub fn stage_evaluate<S: Scalar>(
    cfg: &RunConfig,
    g: &Graph<S>,
    arch: &DerivedArchitecture,
) -> Result<EvalResult> {
    train_eval(arch, g, &cfg.search, derive_seed(cfg.master_seed, "final-eval", &[]))
}

pub fn write_samples(path: &Path, cfg: &RunConfig, records: Vec<SampleRecord>) -> Result<()> {
    write_json(
        path,
        &SamplesReport {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            derived_seeds: derived_seeds(cfg),
            subgraphs: records,
        },
    )
}

pub fn read_samples(path: &Path, cfg: &RunConfig) -> Result<SamplesReport> {
    let report: SamplesReport = read_json(path)?;
    check_version(path, report.schema_version)?;
    check_config(path, &report.config, cfg)?;
    Ok(report)
}

pub fn write_selection(
    path: &Path,
    cfg: &RunConfig,
    cells: &[SearchedCell],
    selection: &SeedSelection,
) -> Result<()> {
    let searched = cells
        .iter()
        .enumerate()
        .map(|(id, c)| SearchSummary {
            subgraph_id: id,
            architecture: c.arch.clone(),
            overall_entropy: c.overall_entropy,
        })
        .collect();
    write_json(
        path,
        &SelectionReport {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            derived_seeds: derived_seeds(cfg),
            notes: RunNotes::default(),
            searched,
            selection: selection.clone(),
        },
    )
}

pub fn read_selection(path: &Path, cfg: &RunConfig) -> Result<SelectionReport> {
    let report: SelectionReport = read_json(path)?;
    check_version(path, report.schema_version)?;
    check_config(path, &report.config, cfg)?;
    Ok(report)
}

pub fn write_history(
    path: &Path,
    cfg: &RunConfig,
    selection: &SeedSelection,
    history: &[IterationRecord],
) -> Result<()> {
    let header = HistoryHeader {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        derived_seeds: derived_seeds(cfg),
        notes: RunNotes::default(),
        seed_architecture: selection.seed_architecture.clone(),
    };
    let mut body = serde_json::to_string(&header)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    body.push('\n');
    for record in history {
        body.push_str(
            &serde_json::to_string(record)
                .map_err(|e| Error::data(format!("{}: {e}", path.display())))?,
        );
        body.push('\n');
    }
    write_text(path, &body)
}

/// Read a history file. The config check is optional so the report command
/// can digest histories from other runs.
pub fn read_history(
    path: &Path,
    cfg: Option<&RunConfig>,
) -> Result<(HistoryHeader, Vec<IterationRecord>)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines
        .next()
        .ok_or_else(|| Error::data(format!("{}: empty history", path.display())))?;
    let header: HistoryHeader = serde_json::from_str(first)
        .map_err(|e| Error::data(format!("{}:1: {e}", path.display())))?;
    check_version(path, header.schema_version)?;
    if let Some(cfg) = cfg {
        check_config(path, &header.config, cfg)?;
    }
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        records.push(serde_json::from_str(line).map_err(|e| {
            Error::data(format!("{}:{}: {e}", path.display(), idx + 2))
        })?);
    }
    Ok((header, records))
}

pub fn write_architecture(path: &Path, arch: &DerivedArchitecture) -> Result<()> {
    write_text(path, &arch.to_text())
}

pub fn read_architecture(path: &Path) -> Result<DerivedArchitecture> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    DerivedArchitecture::from_text(&text)
}

pub fn write_evaluation(
    path: &Path,
    cfg: &RunConfig,
    arch: &DerivedArchitecture,
    eval: &EvalResult,
) -> Result<()> {
    write_json(
        path,
        &EvaluationReport {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            architecture: arch.clone(),
            val_accuracy: eval.val_accuracy,
            test_accuracy: eval.test_accuracy,
        },
    )
}

/// Artifact paths of a completed run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub samples: PathBuf,
    pub selection: PathBuf,
    pub history: PathBuf,
    pub architecture: PathBuf,
    pub summary: PathBuf,
}

/// Run the whole pipeline and write every artifact into `out_dir`.
pub fn run_pipeline<S: Scalar>(cfg: &RunConfig, out_dir: &Path) -> Result<(Summary, RunArtifacts)> {
    let started = Instant::now();
    let artifacts = RunArtifacts {
        samples: out_dir.join(SAMPLES_FILE),
        selection: out_dir.join(SELECTION_FILE),
        history: out_dir.join(HISTORY_FILE),
        architecture: out_dir.join(ARCHITECTURE_FILE),
        summary: out_dir.join(SUMMARY_FILE),
    };

    let t = Instant::now();
    cfg.validate()?;
    let g: Graph<S> = cfg.load_dataset()?;
    let load_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let target = cfg.sampler.target_size(g.n());
    let subs: Vec<Subgraph<S>> = (0..cfg.k)
        .map(|k| {
            sample_subgraph(
                &g,
                cfg.sampler.strategy,
                target,
                derive_seed(cfg.master_seed, "sample", &[k as u64]),
            )
        })
        .collect::<Result<_>>()?;
    write_samples(&artifacts.samples, cfg, subgraph_records(&subs))?;
    let sample_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (cells, selection) = stage_select(cfg, &g, &subs)?;
    write_selection(&artifacts.selection, cfg, &cells, &selection)?;
    let select_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let seed_sub = subs
        .into_iter()
        .nth(selection.seed_subgraph_id)
        .ok_or_else(|| Error::data("seed subgraph id out of range"))?;
    let (arch, history, state) = stage_expand(cfg, &g, seed_sub, &selection)?;
    write_history(&artifacts.history, cfg, &selection, &history)?;
    write_architecture(&artifacts.architecture, &arch)?;
    let expand_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let eval = stage_evaluate(cfg, &g, &arch)?;
    let eval_secs = t.elapsed().as_secs_f64();

    let tau = selection
        .scores
        .iter()
        .find(|s| s.subgraph_id == selection.seed_subgraph_id)
        .map_or(f64::NAN, |s| s.tau);
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        derived_seeds: derived_seeds(cfg),
        notes: RunNotes::default(),
        seed: SeedSummary {
            subgraph_id: selection.seed_subgraph_id,
            tau,
            overall_entropy: selection.seed_overall_entropy,
        },
        expansion: ExpansionSummary {
            iterations: history.len(),
            entropy_trajectory: history.iter().map(|r| r.mean_entropy_post_search).collect(),
            final_subgraph_size: history.last().map(|_| state.sub.node_map.len()),
        },
        architecture: arch,
        val_accuracy: eval.val_accuracy,
        test_accuracy: eval.test_accuracy,
        timing: Timing {
            load_secs,
            sample_secs,
            select_secs,
            expand_secs,
            eval_secs,
            total_secs: started.elapsed().as_secs_f64(),
        },
    };
    write_json(&artifacts.summary, &summary)?;
    Ok((summary, artifacts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_run_config;

    fn quick_config(master_seed: u64) -> RunConfig {
        let text = format!(
            "\
dataset.blocks = 40, 40, 40
dataset.p_in = 0.25
dataset.p_out = 0.02
dataset.feat_dim = 6
dataset.noise = 0.3
sampler.fraction = 0.4
search.epochs_search = 4
search.epochs_eval = 6
search.lr_w = 0.01
search.lr_alpha = 0.02
expansion.iterations = 2
ops = gcn, sage_mean, skip_connect, zero
k = 3
cells = 1
p0 = 2
hidden = 8
master_seed = {master_seed}
"
        );
        parse_run_config(&text).unwrap()
    }

    #[test]
    fn quickstart_run_emits_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_config(5);
        let (summary, artifacts) = run_pipeline::<f64>(&cfg, dir.path()).unwrap();
        for path in [
            &artifacts.samples,
            &artifacts.selection,
            &artifacts.history,
            &artifacts.architecture,
            &artifacts.summary,
        ] {
            assert!(path.is_file(), "{} missing", path.display());
        }
        assert_eq!(summary.schema_version, SCHEMA_VERSION);
        assert_eq!(summary.expansion.iterations, 2);
        assert_eq!(summary.expansion.entropy_trajectory.len(), 2);
        assert!(summary.val_accuracy >= 0.0 && summary.val_accuracy <= 1.0);
        // The architecture file holds the discretized result of the run.
        let arch = read_architecture(&artifacts.architecture).unwrap();
        assert_eq!(arch, summary.architecture);
        assert_eq!(arch.order.len(), 4);
        // The history file parses back into header + one record per iteration.
        let (header, records) = read_history(&artifacts.history, Some(&cfg)).unwrap();
        assert_eq!(header.config, cfg);
        assert_eq!(records.len(), 2);
        // Reports carry the full resolved config and the derived seeds.
        let selection = read_selection(&artifacts.selection, &cfg).unwrap();
        assert_eq!(selection.config, cfg);
        assert_eq!(selection.derived_seeds, derived_seeds(&cfg));
        assert_eq!(selection.searched.len(), 3);
    }

    #[test]
    fn reruns_are_byte_identical_outside_the_timing_block() {
        let cfg = quick_config(6);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_pipeline::<f64>(&cfg, dir_a.path()).unwrap();
        run_pipeline::<f64>(&cfg, dir_b.path()).unwrap();
        for name in [SAMPLES_FILE, SELECTION_FILE, HISTORY_FILE, ARCHITECTURE_FILE] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
        }
        let mut a: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir_a.path().join(SUMMARY_FILE)).unwrap())
                .unwrap();
        let mut b: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir_b.path().join(SUMMARY_FILE)).unwrap())
                .unwrap();
        a["timing"] = serde_json::Value::Null;
        b["timing"] = serde_json::Value::Null;
        assert_eq!(a, b);
    }

    #[test]
    fn stagewise_run_reproduces_the_driver_artifacts() {
        let cfg = quick_config(7);
        let dir_a = tempfile::tempdir().unwrap();
        run_pipeline::<f64>(&cfg, dir_a.path()).unwrap();

        // The same run, stage by stage, each stage consuming the previous
        // stage's artifact file.
        let dir_b = tempfile::tempdir().unwrap();
        let (g, subs) = stage_sample::<f64>(&cfg).unwrap();
        write_samples(&dir_b.path().join(SAMPLES_FILE), &cfg, subgraph_records(&subs)).unwrap();
        drop(subs);

        let samples = read_samples(&dir_b.path().join(SAMPLES_FILE), &cfg).unwrap();
        let subs = restore_subgraphs(&g, &samples.subgraphs).unwrap();
        let (cells, selection) = stage_select(&cfg, &g, &subs).unwrap();
        write_selection(&dir_b.path().join(SELECTION_FILE), &cfg, &cells, &selection).unwrap();
        drop((cells, selection, subs));

        let report = read_selection(&dir_b.path().join(SELECTION_FILE), &cfg).unwrap();
        let samples = read_samples(&dir_b.path().join(SAMPLES_FILE), &cfg).unwrap();
        let seed_rec = &samples.subgraphs[report.selection.seed_subgraph_id];
        let seed_sub = restore_subgraphs(&g, std::slice::from_ref(seed_rec))
            .unwrap()
            .pop()
            .unwrap();
        let (arch, history, _) = stage_expand(&cfg, &g, seed_sub, &report.selection).unwrap();
        write_history(&dir_b.path().join(HISTORY_FILE), &cfg, &report.selection, &history)
            .unwrap();
        write_architecture(&dir_b.path().join(ARCHITECTURE_FILE), &arch).unwrap();

        for name in [SAMPLES_FILE, SELECTION_FILE, HISTORY_FILE, ARCHITECTURE_FILE] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs from the driver output");
        }
    }

    #[test]
    fn summary_accuracy_matches_a_standalone_evaluation() {
        let cfg = quick_config(8);
        let dir = tempfile::tempdir().unwrap();
        let (summary, artifacts) = run_pipeline::<f64>(&cfg, dir.path()).unwrap();
        let g: Graph<f64> = cfg.load_dataset().unwrap();
        let arch = read_architecture(&artifacts.architecture).unwrap();
        let eval = stage_evaluate(&cfg, &g, &arch).unwrap();
        assert_eq!(summary.val_accuracy, eval.val_accuracy);
        assert_eq!(summary.test_accuracy, eval.test_accuracy);
    }

    #[test]
    fn worker_count_does_not_move_the_results() {
        let mut cfg = quick_config(9);
        let dir_a = tempfile::tempdir().unwrap();
        run_pipeline::<f64>(&cfg, dir_a.path()).unwrap();
        cfg.workers = 4;
        let dir_b = tempfile::tempdir().unwrap();
        run_pipeline::<f64>(&cfg, dir_b.path()).unwrap();
        // The configs differ (workers is part of them), so compare the
        // selection outcomes rather than whole files.
        let a: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir_a.path().join(SELECTION_FILE)).unwrap(),
        )
        .unwrap();
        let b: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir_b.path().join(SELECTION_FILE)).unwrap(),
        )
        .unwrap();
        assert_eq!(a["selection"], b["selection"]);
        assert_eq!(a["searched"], b["searched"]);
        let arch_a = std::fs::read(dir_a.path().join(ARCHITECTURE_FILE)).unwrap();
        let arch_b = std::fs::read(dir_b.path().join(ARCHITECTURE_FILE)).unwrap();
        assert_eq!(arch_a, arch_b);
    }

    #[test]
    fn restored_subgraphs_equal_the_sampled_ones() {
        let cfg = quick_config(10);
        let (g, subs) = stage_sample::<f64>(&cfg).unwrap();
        let records = subgraph_records(&subs);
        let back = restore_subgraphs(&g, &records).unwrap();
        assert_eq!(subs.len(), back.len());
        for (orig, rest) in subs.iter().zip(&back) {
            assert_eq!(orig.node_map, rest.node_map);
            assert_eq!(orig.graph, rest.graph);
        }
    }

    #[test]
    fn stage_artifacts_reject_foreign_configs_and_versions() {
        let cfg = quick_config(11);
        let dir = tempfile::tempdir().unwrap();
        let (_, subs) = stage_sample::<f64>(&cfg).unwrap();
        let path = dir.path().join(SAMPLES_FILE);
        write_samples(&path, &cfg, subgraph_records(&subs)).unwrap();
        let mut other = cfg.clone();
        other.master_seed += 1;
        let err = read_samples(&path, &other).unwrap_err();
        assert!(err.to_string().contains("different config"), "{err}");
        // A bumped schema version is refused.
        let mut value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        value["schema_version"] = serde_json::json!(99);
        std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        let err = read_samples(&path, &cfg).unwrap_err();
        assert!(err.to_string().contains("schema version"), "{err}");
    }
}
