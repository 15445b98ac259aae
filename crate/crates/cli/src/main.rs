//! `sagnas`: two-stage graph neural architecture search at the command line.
//!
//! `pipeline` runs everything; `sample`, `search-seed`, `expand` and
//! `evaluate` run the same stages one artifact at a time, each consuming the
//! previous stage's files from the artifact directory. `kendall` and
//! `report` are small analysis utilities over the emitted files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sagnas_core::config::load_run_config;
use sagnas_core::error::{Error, Result};
use sagnas_core::io::save_graph_text;
use sagnas_core::pipeline::{
    read_architecture, read_history, read_samples, read_selection, restore_subgraphs,
    run_pipeline, stage_evaluate, stage_expand, stage_sample, stage_select, subgraph_records,
    write_architecture, write_evaluation, write_history, write_samples, write_selection,
    ARCHITECTURE_FILE, EVALUATION_FILE, HISTORY_FILE, SAMPLES_FILE, SELECTION_FILE,
};
use sagnas_core::seedselect::weighted_kendall_tau;
use sagnas_core::Graph64;

#[derive(Parser)]
#[command(name = "sagnas", version, about = "Two-stage graph neural architecture search")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct StageArgs {
    /// Run config in the flat dotted-key format.
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every stage end to end and write all artifacts.
    Pipeline(StageArgs),
    /// Write the configured dataset as text files.
    GenData(StageArgs),
    /// Sample the seed-selection subgraphs.
    Sample(StageArgs),
    /// Search every sampled subgraph and pick the seed architecture.
    SearchSeed(StageArgs),
    /// Grow the seed architecture by iterative node splitting.
    Expand(StageArgs),
    /// Train an architecture file from scratch and report its accuracy.
    Evaluate {
        #[command(flatten)]
        stage: StageArgs,
        /// Architecture file; defaults to architecture.txt in the artifact
        /// directory.
        #[arg(long)]
        arch: Option<PathBuf>,
    },
    /// Rank agreement between two accuracy sequences (one value per line).
    Kendall {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Flatten an expansion history into a CSV entropy trajectory.
    Report {
        /// History file written by `expand` or `pipeline`.
        #[arg(long)]
        history: PathBuf,
        /// CSV destination; defaults to the history file with a .csv suffix.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                Error::Config(_) => 2,
                Error::Data(_) | Error::Io { .. } => 3,
                Error::Shape { .. } | Error::Numerical { .. } => 4,
            })
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Pipeline(args) => cmd_pipeline(&args),
        Cmd::GenData(args) => cmd_gen_data(&args),
        Cmd::Sample(args) => cmd_sample(&args),
        Cmd::SearchSeed(args) => cmd_search_seed(&args),
        Cmd::Expand(args) => cmd_expand(&args),
        Cmd::Evaluate { stage, arch } => cmd_evaluate(&stage, arch.as_deref()),
        Cmd::Kendall { a, b } => cmd_kendall(&a, &b),
        Cmd::Report { history, out } => cmd_report(&history, out),
    }
}

fn cmd_pipeline(args: &StageArgs) -> Result<()> {
    let cfg = load_run_config(&args.config)?;
    let (summary, _) = run_pipeline::<f64>(&cfg, &args.out)?;
    println!(
        "seed subgraph {} (tau {:.4}), {} expansion iterations",
        summary.seed.subgraph_id, summary.seed.tau, summary.expansion.iterations
    );
    println!(
        "final val accuracy {:.4}, test accuracy {}",
        summary.val_accuracy,
        summary
            .test_accuracy
            .map_or("n/a".to_string(), |a| format!("{a:.4}")),
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_gen_data(args: &StageArgs) -> Result<()> {
    let cfg = load_run_config(&args.config)?;
    let g: Graph64 = cfg.load_dataset()?;
    save_graph_text(&g, &args.out)?;
    println!(
        "wrote {} nodes, {} edges, {} classes to {}",
        g.n(),
        g.num_edges(),
        g.num_classes(),
        args.out.display()
    );
    Ok(())
}

fn cmd_sample(args: &StageArgs) -> Result<()> {
    let cfg = load_run_config(&args.config)?;
    let (_, subs) = stage_sample::<f64>(&cfg)?;
    let sizes: Vec<usize> = subs.iter().map(|s| s.node_map.len()).collect();
    write_samples(&args.out.join(SAMPLES_FILE), &cfg, subgraph_records(&subs))?;
    println!("sampled {} subgraphs with sizes {sizes:?}", subs.len());
    Ok(())
}

fn cmd_search_seed(args: &StageArgs) -> Result<()> {
    let cfg = load_run_config(&args.config)?;
    let g: Graph64 = cfg.load_dataset()?;
    let samples = read_samples(&args.out.join(SAMPLES_FILE), &cfg)?;
    let subs = restore_subgraphs(&g, &samples.subgraphs)?;
    let (cells, selection) = stage_select(&cfg, &g, &subs)?;
    write_selection(&args.out.join(SELECTION_FILE), &cfg, &cells, &selection)?;
    for score in &selection.scores {
        println!("subgraph {}: tau {:.4}", score.subgraph_id, score.tau);
    }
    println!(
        "seed subgraph {} selected by {}",
        selection.seed_subgraph_id,
        selection.strategy.name()
    );
    Ok(())
}

fn cmd_expand(args: &StageArgs) -> Result<()> {
    let cfg = load_run_config(&args.config)?;
    let g: Graph64 = cfg.load_dataset()?;
    let samples = read_samples(&args.out.join(SAMPLES_FILE), &cfg)?;
    let report = read_selection(&args.out.join(SELECTION_FILE), &cfg)?;
    let id = report.selection.seed_subgraph_id;
    let record = samples
        .subgraphs
        .get(id)
        .ok_or_else(|| Error::data(format!("samples file has no subgraph {id}")))?;
    let seed_sub = restore_subgraphs(&g, std::slice::from_ref(record))?
        .pop()
        .expect("one record restores one subgraph");
    let (arch, history, _) = stage_expand(&cfg, &g, seed_sub, &report.selection)?;
    write_history(&args.out.join(HISTORY_FILE), &cfg, &report.selection, &history)?;
    write_architecture(&args.out.join(ARCHITECTURE_FILE), &arch)?;
    for rec in &history {
        println!(
            "iteration {}: split node {}, mean entropy {:.4} -> {:.4}",
            rec.split.iteration,
            rec.split.node,
            rec.split.overall_before,
            rec.split.overall_after
        );
    }
    println!("architecture with {} nodes written", arch.order.len());
    Ok(())
}

fn cmd_evaluate(args: &StageArgs, arch_path: Option<&Path>) -> Result<()> {
    let cfg = load_run_config(&args.config)?;
    let g: Graph64 = cfg.load_dataset()?;
    let default_path = args.out.join(ARCHITECTURE_FILE);
    let arch = read_architecture(arch_path.unwrap_or(&default_path))?;
    let eval = stage_evaluate(&cfg, &g, &arch)?;
    write_evaluation(&args.out.join(EVALUATION_FILE), &cfg, &arch, &eval)?;
    println!(
        "val accuracy {:.4}, test accuracy {}",
        eval.val_accuracy,
        eval.test_accuracy
            .map_or("n/a".to_string(), |a| format!("{a:.4}")),
    );
    Ok(())
}

/// One numeric column: first CSV field of every non-comment line.
fn read_column(path: &Path) -> Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let field = body.split(',').next().unwrap_or("").trim();
        values.push(field.parse().map_err(|_| {
            Error::data(format!(
                "{}:{}: {field:?} is not a number",
                path.display(),
                idx + 1
            ))
        })?);
    }
    Ok(values)
}

fn cmd_kendall(a: &Path, b: &Path) -> Result<()> {
    let sub = read_column(a)?;
    let full = read_column(b)?;
    let tau = weighted_kendall_tau(&sub, &full)?;
    if tau == tau.round() {
        println!("{tau:.1}");
    } else {
        println!("{tau}");
    }
    Ok(())
}

fn cmd_report(history: &Path, out: Option<PathBuf>) -> Result<()> {
    let (_, records) = read_history(history, None)?;
    let out = out.unwrap_or_else(|| history.with_extension("csv"));
    let mut csv = String::from("iteration,epoch,mean_node_entropy\n");
    for rec in &records {
        csv.push_str(&format!("{},0,{}\n", rec.split.iteration, rec.split.overall_before));
        for (e, h) in rec.entropy_curve.iter().enumerate() {
            csv.push_str(&format!("{},{},{h}\n", rec.split.iteration, e + 1));
        }
        csv.push_str(&format!(
            "{},{},{}\n",
            rec.split.iteration,
            rec.entropy_curve.len() + 1,
            rec.split.overall_after
        ));
    }
    std::fs::write(&out, csv).map_err(|e| Error::io(out.display().to_string(), e))?;
    println!(
        "wrote {} iterations to {}",
        records.len(),
        out.display()
    );
    Ok(())
}
