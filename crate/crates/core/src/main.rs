use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use argem::checkpoint::{read_embedding_tsv, write_embedding_tsv, Checkpoint, SplitSpec};
use argem::cluster::{KMeansOptions, NmiNorm};
use argem::experiment::{
    cluster_metrics, link_metrics, require_labels, run_repeated, split_for, DatasetSource,
    Protocol, Task,
};
use argem::graph::{split_edges, Graph};
use argem::linkpred::{auc_ap, score_edges};
use argem::models::Variant;
use argem::report::{EvalReport, RunRecord};
use argem::tensor::DenseMat;
use argem::train::{train_with_inputs, Prior, TrainConfig, TrainingInputs};
use argem::Error;

/// Exit status for usage and configuration errors.
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(
    name = "argem",
    version,
    about = "Adversarially regularized graph autoencoders"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint, embedding and run record.
    Train(TrainArgs),
    /// Link-prediction or clustering metrics for a checkpoint, an embedding,
    /// or fresh runs over several seeds.
    Eval(EvalArgs),
    /// Write a checkpoint's embedding as tab-separated text.
    Export(ExportArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// `cora`, `citeseer`, `pubmed`, or a `.content` and `.cites` file pair.
    #[arg(long, num_args = 1..=2, value_names = ["NAME_OR_CONTENT", "CITES"])]
    dataset: Option<Vec<String>>,

    /// Root holding `<name>/<name>.content` and `<name>/<name>.cites`.
    #[arg(long, env = "ARGEM_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
}

impl DataArgs {
    fn source(&self) -> Result<Option<DatasetSource>, CliError> {
        match self.dataset.as_deref() {
            None => Ok(None),
            Some([name]) => Ok(Some(DatasetSource::Named(name.clone()))),
            Some([content, cites]) => Ok(Some(DatasetSource::Files {
                content: content.into(),
                cites: cites.into(),
            })),
            Some(_) => Err(CliError::usage("--dataset takes a name or two paths")),
        }
    }

    fn require_source(&self) -> Result<DatasetSource, CliError> {
        self.source()?
            .ok_or_else(|| CliError::usage("--dataset is required"))
    }
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// TOML file with training settings; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    model: Option<Variant>,
    #[arg(long, value_enum)]
    prior: Option<PriorArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    disc_lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    disc_steps: Option<usize>,
    #[arg(long)]
    adv_weight: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Gaussian,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Link,
    Cluster,
}

#[derive(Clone, Copy, ValueEnum)]
enum NmiArg {
    Arithmetic,
    Geometric,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|_| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.05)]
    val_frac: f64,
    #[arg(long, default_value_t = 0.10)]
    test_frac: f64,
    /// Output directory for checkpoint.json, embedding.tsv and run.json.
    #[arg(long, default_value = "argem-out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Evaluate a saved checkpoint instead of training.
    #[arg(long, conflicts_with_all = ["embedding", "repeat"])]
    checkpoint: Option<PathBuf>,
    /// Evaluate an exported embedding instead of training.
    #[arg(long, conflicts_with = "repeat")]
    embedding: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Train and evaluate this many times with seeds `seed + i`.
    #[arg(long)]
    repeat: Option<usize>,
    /// Runs executed in parallel during `--repeat`.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0.05)]
    val_frac: f64,
    #[arg(long, default_value_t = 0.10)]
    test_frac: f64,
    #[arg(long, value_enum, default_value = "arithmetic")]
    nmi: NmiArg,
    #[arg(long, default_value_t = 10)]
    kmeans_restarts: usize,
    #[arg(long, default_value_t = 300)]
    kmeans_max_iter: usize,
    /// Also write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Sizing(_) => EXIT_USAGE,
            Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::Checkpoint(_) => EXIT_DATA,
            Error::Diverged { .. } | Error::Numeric { .. } => EXIT_DIVERGED,
            _ => EXIT_OTHER,
        };
        CliError {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("argem: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

/// Built-in defaults (PubMed has its own), then the config file, then flags.
fn resolve_config(model: &ModelArgs, source: Option<&DatasetSource>) -> CliResult<TrainConfig> {
    let mut cfg = match source {
        Some(DatasetSource::Named(name)) if name == "pubmed" => TrainConfig::pubmed(),
        _ => TrainConfig::default(),
    };
    if let Some(path) = &model.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg = cfg.merge_toml(&text)?;
    }
    if let Some(v) = model.model {
        cfg.variant = v;
    }
    if let Some(p) = model.prior {
        cfg.prior = match p {
            PriorArg::Gaussian => Prior::Gaussian,
            PriorArg::Uniform => Prior::Uniform,
        };
    }
    macro_rules! apply {
        ($($field:ident)*) => { $(if let Some(v) = model.$field { cfg.$field = v; })* };
    }
    apply!(epochs lr disc_lr hidden embed disc_steps adv_weight seed);
    cfg.validate()?;
    Ok(cfg)
}

fn load_graph(source: &DatasetSource, data: &DataArgs) -> CliResult<Graph> {
    let g = source.load(&data.data_dir)?;
    log::info!(
        "{}: {} nodes, {} edges, {} features",
        source.label(),
        g.num_nodes(),
        g.num_edges(),
        g.num_features()
    );
    Ok(g)
}

fn print_lines(lines: &[(String, String)]) {
    for (k, v) in lines {
        println!("{k}={v}");
    }
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let source = a.data.require_source()?;
    let cfg = resolve_config(&a.model, Some(&source))?;
    let g = load_graph(&source, &a.data)?;
    let start = Instant::now();
    let split = split_edges(&g, a.val_frac, a.test_frac, cfg.seed)?;
    let inputs = TrainingInputs::new(&g, &split)?;
    let model = train_with_inputs(&g, &inputs, &cfg)?;
    let metrics = if split.test_pos.is_empty() {
        BTreeMap::new()
    } else {
        link_metrics(&model, &inputs, &split)?
    };
    let record = RunRecord {
        run_index: 0,
        seed: cfg.seed,
        config: cfg.clone(),
        losses: model.history.clone(),
        metrics,
        duration_secs: start.elapsed().as_secs_f64(),
    };

    fs::create_dir_all(&a.out)?;
    let ck_path = a.out.join("checkpoint.json");
    let emb_path = a.out.join("embedding.tsv");
    let run_path = a.out.join("run.json");
    let split_spec = SplitSpec {
        val_frac: a.val_frac,
        test_frac: a.test_frac,
        seed: cfg.seed,
    };
    Checkpoint::new(&model, &source, split_spec, g.node_ids()).save(&ck_path)?;
    write_embedding_tsv(&emb_path, g.node_ids(), &model.embedding)?;
    fs::write(
        &run_path,
        serde_json::to_string_pretty(&record).map_err(Error::from)?,
    )?;

    let last = model.history.last().copied().expect("at least one epoch");
    let mut lines = vec![
        ("dataset".to_string(), source.label()),
        ("model".to_string(), cfg.variant.to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("epochs".to_string(), model.history.len().to_string()),
        ("nodes".to_string(), model.embedding.rows().to_string()),
        ("embed".to_string(), model.embedding.cols().to_string()),
        ("recon".to_string(), last.recon.to_string()),
        ("kl".to_string(), last.kl.to_string()),
        ("disc".to_string(), last.disc.to_string()),
        ("gen".to_string(), last.gen.to_string()),
    ];
    lines.extend(
        record
            .metrics
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string())),
    );
    lines.extend([
        (
            "duration_secs".to_string(),
            format!("{:.3}", record.duration_secs),
        ),
        ("checkpoint".to_string(), ck_path.display().to_string()),
        ("embedding".to_string(), emb_path.display().to_string()),
        ("run_record".to_string(), run_path.display().to_string()),
    ]);
    print_lines(&lines);
    Ok(())
}

fn protocol_of(a: &EvalArgs) -> Protocol {
    Protocol {
        task: match a.task {
            TaskArg::Link => Task::Link,
            TaskArg::Cluster => Task::Cluster,
        },
        val_frac: a.val_frac,
        test_frac: a.test_frac,
        kmeans: KMeansOptions {
            max_iter: a.kmeans_max_iter,
            restarts: a.kmeans_restarts,
        },
        nmi_norm: match a.nmi {
            NmiArg::Arithmetic => NmiNorm::Arithmetic,
            NmiArg::Geometric => NmiNorm::Geometric,
        },
    }
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let protocol = protocol_of(&a);
    if a.kmeans_restarts == 0 || a.kmeans_max_iter == 0 {
        return Err(CliError::usage(
            "--kmeans-restarts and --kmeans-max-iter must be positive",
        ));
    }
    let report = if let Some(path) = &a.checkpoint {
        eval_checkpoint(&a, &protocol, path)?
    } else if let Some(path) = &a.embedding {
        eval_embedding(&a, &protocol, path)?
    } else {
        let source = a.data.require_source()?;
        let cfg = resolve_config(&a.model, Some(&source))?;
        let g = load_graph(&source, &a.data)?;
        if protocol.task == Task::Cluster {
            require_labels(&g)?;
        }
        let repeat = a.repeat.unwrap_or(1);
        if repeat == 0 {
            return Err(CliError::usage("--repeat must be at least 1"));
        }
        let runs = run_repeated(&g, &cfg, &protocol, repeat, a.jobs.max(1))?;
        EvalReport::new(
            &protocol.task.to_string(),
            &source.label(),
            cfg.variant.name(),
            runs,
        )
    };
    if let Some(out) = &a.out {
        fs::write(
            out,
            serde_json::to_string_pretty(&report).map_err(Error::from)?,
        )?;
    }
    print!("{}", report.to_key_value());
    Ok(())
}

fn single_record(cfg: TrainConfig, metrics: BTreeMap<String, f64>, start: Instant) -> RunRecord {
    RunRecord {
        run_index: 0,
        seed: cfg.seed,
        losses: vec![],
        metrics,
        duration_secs: start.elapsed().as_secs_f64(),
        config: cfg,
    }
}

fn eval_checkpoint(a: &EvalArgs, protocol: &Protocol, path: &Path) -> CliResult<EvalReport> {
    let start = Instant::now();
    let ck = Checkpoint::load(path)?;
    let source = a.data.source()?.unwrap_or_else(|| ck.dataset.clone());
    let g = load_graph(&source, &a.data)?;
    if g.node_ids() != ck.node_ids.as_slice() {
        return Err(CliError {
            code: EXIT_DATA,
            msg: format!("checkpoint nodes do not match dataset {}", source.label()),
        });
    }
    let metrics = match protocol.task {
        Task::Link => {
            let split = split_edges(&g, ck.split.val_frac, ck.split.test_frac, ck.split.seed)?;
            if split.test_pos.is_empty() {
                return Err(CliError::usage(
                    "checkpoint was trained without held-out test edges",
                ));
            }
            let inputs = TrainingInputs::new(&g, &split)?;
            link_metrics(&ck.to_model(), &inputs, &split)?
        }
        Task::Cluster => {
            let labels = require_labels(&g)?;
            let seed = a.model.seed.unwrap_or(ck.config.seed);
            cluster_metrics(
                &ck.embedding,
                labels,
                g.num_classes(),
                seed,
                protocol.kmeans,
                protocol.nmi_norm,
            )?
        }
    };
    let mut cfg = ck.config.clone();
    if let Some(seed) = a.model.seed {
        cfg.seed = seed;
    }
    let model = cfg.variant.name();
    Ok(EvalReport::new(
        &protocol.task.to_string(),
        &source.label(),
        model,
        vec![single_record(cfg, metrics, start)],
    ))
}

/// Reorders embedding rows to the dataset's node order.
fn align_embedding(ids: &[String], z: &DenseMat, g: &Graph) -> CliResult<DenseMat> {
    let pos: BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut order = Vec::with_capacity(g.num_nodes());
    for id in g.node_ids() {
        let &row = pos.get(id.as_str()).ok_or_else(|| CliError {
            code: EXIT_DATA,
            msg: format!("embedding has no row for node {id}"),
        })?;
        order.push(row);
    }
    Ok(z.select_rows(&order))
}

fn eval_embedding(a: &EvalArgs, protocol: &Protocol, path: &Path) -> CliResult<EvalReport> {
    let start = Instant::now();
    let (ids, z) = read_embedding_tsv(path)?;
    let source = a.data.require_source()?;
    let g = load_graph(&source, &a.data)?;
    let z = align_embedding(&ids, &z, &g)?;
    let cfg = resolve_config(&a.model, Some(&source))?;
    let metrics = match protocol.task {
        Task::Link => {
            let split = split_for(&g, protocol, cfg.seed)?;
            let (auc, ap) = auc_ap(
                &score_edges(&z, &split.test_pos)?,
                &score_edges(&z, &split.test_neg)?,
            )?;
            BTreeMap::from([("auc".to_string(), auc), ("ap".to_string(), ap)])
        }
        Task::Cluster => {
            let labels = require_labels(&g)?;
            cluster_metrics(
                &z,
                labels,
                g.num_classes(),
                cfg.seed,
                protocol.kmeans,
                protocol.nmi_norm,
            )?
        }
    };
    Ok(EvalReport::new(
        &protocol.task.to_string(),
        &source.label(),
        "embedding",
        vec![single_record(cfg, metrics, start)],
    ))
}

fn cmd_export(a: ExportArgs) -> CliResult<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    write_embedding_tsv(&a.out, &ck.node_ids, &ck.embedding)?;
    print_lines(&[
        ("rows".to_string(), ck.embedding.rows().to_string()),
        ("dims".to_string(), ck.embedding.cols().to_string()),
        ("embedding".to_string(), a.out.display().to_string()),
    ]);
    Ok(())
}
