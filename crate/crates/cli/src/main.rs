//! `cvtgad` command line: train, run the ablation grid, or score a dataset
//! with a saved model.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use cvtgad::checkpoint::Checkpoint;
use cvtgad::experiment::{emit_results, load_dataset, rank_table, rank_table_csv, run_ablation_suite, run_on_dataset};
use cvtgad::objective::auc;
use cvtgad::train::score_graphs;
use cvtgad::views::{build_views, view_dims};
use cvtgad::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "cvtgad", version, about = "Graph-level anomaly detection experiments")]
struct Cli {
    /// Log more (repeat for debug output)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on one dataset and score its test split
    Train(TrainArgs),
    /// Run the ablation grid over several seeds
    Ablate(AblateArgs),
    /// Score every graph of a dataset with a saved model
    Score(ScoreArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Dataset name, e.g. AIDS
    #[arg(long)]
    dataset: Option<String>,

    /// Directory holding `<name>/<name>_A.txt` and friends
    #[arg(long, env = "CVTGAD_DATA_DIR")]
    data_dir: Option<PathBuf>,

    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override the number of epochs
    #[arg(long)]
    epochs: Option<usize>,

    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,

    #[arg(long)]
    seed: Option<u64>,

    /// Skip writing the model checkpoint
    #[arg(long)]
    no_checkpoint: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Grid {
    Default,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,

    #[arg(long, value_enum, default_value = "default")]
    grid: Grid,

    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Checkpoint written by `train`
    #[arg(long)]
    model: PathBuf,

    #[arg(long)]
    dataset: String,

    #[arg(long, env = "CVTGAD_DATA_DIR")]
    data_dir: Option<PathBuf>,

    /// Write `graph,score,anomaly_label` rows here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &common.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(d) = &common.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(e) = common.epochs {
        cfg.epochs = Some(e);
    }
    if let Some(o) = &common.out {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let dataset = load_dataset(&cfg)?;
    let run = run_on_dataset(&cfg, dataset)?;
    emit_results(std::slice::from_ref(&run.result), &cfg.output)?;
    if !args.no_checkpoint {
        let path = cfg
            .output
            .join(format!("model_{}_seed{}.json", run.result.dataset, run.result.seed));
        Checkpoint::from_run(&run).save(&path)?;
        info!("checkpoint written to {}", path.display());
    }
    println!(
        "{} seed {}: AUC {:.4} ({} test graphs, {:.1} s)",
        run.result.dataset, run.result.seed, run.result.auc, run.result.test_size, run.result.wall_clock_secs
    );
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let Grid::Default = args.grid;
    let cfg = resolve(&args.common)?;
    if args.seeds.is_empty() {
        bail!("no seeds given");
    }
    let runs = run_ablation_suite(&cfg, &args.seeds);
    let mut ok = Vec::new();
    for r in runs {
        match r.outcome {
            Ok(result) => ok.push(result),
            Err(e) => warn!("{} seed {} failed: {e}", r.variant, r.seed),
        }
    }
    if ok.is_empty() {
        bail!("every run failed");
    }
    emit_results(&ok, &cfg.output)?;
    let table = rank_table_csv(&rank_table(&ok));
    let path = cfg.output.join("ranks.csv");
    std::fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    print!("{table}");
    Ok(())
}

fn score(args: ScoreArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.model)?;
    let mut cfg = ckpt.config.clone();
    cfg.dataset = args.dataset.clone();
    if let Some(d) = &args.data_dir {
        cfg.data_dir = d.clone();
    }
    let mut dataset = load_dataset(&cfg)?;
    dataset.node_label_values = ckpt.node_label_values.clone();
    let dims = view_dims(&dataset, &cfg.views);
    if dims != (ckpt.feature_dim, ckpt.structure_dim) {
        bail!(
            "{} yields view widths {dims:?}, the model expects ({}, {})",
            cfg.dataset,
            ckpt.feature_dim,
            ckpt.structure_dim
        );
    }
    let labelled = match dataset.assign_anomaly_labels(cfg.label_rule()) {
        Ok(_) => true,
        Err(e) => {
            warn!("no anomaly labels: {e}");
            false
        }
    };
    let model = ckpt.model()?;
    let views = build_views(&dataset, &cfg.views)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let scores = score_graphs(&model, &ckpt.score_stats, &dataset, &views, &all, &cfg.eval, cfg.seed)?;
    let labels: Vec<u8> = dataset.graphs.iter().map(|g| g.anomaly_label).collect();

    let mut out = String::from("graph,score,anomaly_label\n");
    for (i, s) in scores.iter().enumerate() {
        let _ = writeln!(out, "{i},{s},{}", labels[i]);
    }
    write_or_print(args.out.as_deref(), &out)?;
    if labelled {
        match auc(&scores, &labels) {
            Ok(a) => eprintln!("AUC over all {} graphs: {a:.4}", scores.len()),
            Err(e) => warn!("{e}"),
        }
    }
    Ok(())
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Train(a) => train(a),
        Command::Ablate(a) => ablate(a),
        Command::Score(a) => score(a),
    }
}
