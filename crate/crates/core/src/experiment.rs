//! Train-then-evaluate runs and multi-seed sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_scores, kmeans, KMeansOptions, NmiNorm};
use crate::error::{Error, Result};
use crate::graph::{load_citation_dataset, split_edges, EdgeSplit, Graph};
use crate::linkpred::auc_ap;
use crate::report::RunRecord;
use crate::tensor::numeric::sigmoid;
use crate::tensor::DenseMat;
use crate::train::{train_with_inputs, TrainConfig, TrainedModel, TrainingInputs};

/// A named dataset under the data root, or an explicit file pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Named(String),
    Files { content: PathBuf, cites: PathBuf },
}

impl DatasetSource {
    /// `<root>/<name>/<name>.content` and `.cites` for named datasets.
    pub fn paths(&self, data_root: &Path) -> (PathBuf, PathBuf) {
        match self {
            DatasetSource::Named(name) => {
                let dir = data_root.join(name);
                (
                    dir.join(format!("{name}.content")),
                    dir.join(format!("{name}.cites")),
                )
            }
            DatasetSource::Files { content, cites } => (content.clone(), cites.clone()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DatasetSource::Named(name) => name.clone(),
            DatasetSource::Files { content, .. } => content
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| content.display().to_string()),
        }
    }

    pub fn load(&self, data_root: &Path) -> Result<Graph> {
        let (content, cites) = self.paths(data_root);
        load_citation_dataset(&content, &cites)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Link,
    Cluster,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Link => "link",
            Task::Cluster => "cluster",
        })
    }
}

/// Everything besides the training config that a run needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Protocol {
    pub task: Task,
    pub val_frac: f64,
    pub test_frac: f64,
    pub kmeans: KMeansOptions,
    pub nmi_norm: NmiNorm,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            task: Task::Link,
            val_frac: 0.05,
            test_frac: 0.10,
            kmeans: KMeansOptions::default(),
            nmi_norm: NmiNorm::Arithmetic,
        }
    }
}

/// Test-set AUC and AP of the model's link probabilities.
pub fn link_metrics(
    model: &TrainedModel,
    inputs: &TrainingInputs,
    split: &EdgeSplit,
) -> Result<BTreeMap<String, f64>> {
    let score = |pairs: &[(usize, usize)]| -> Result<Vec<f64>> {
        Ok(model
            .link_logits(inputs, pairs)?
            .into_iter()
            .map(sigmoid)
            .collect())
    };
    let (auc, ap) = auc_ap(&score(&split.test_pos)?, &score(&split.test_neg)?)?;
    Ok(BTreeMap::from([
        ("auc".to_string(), auc),
        ("ap".to_string(), ap),
    ]))
}

/// K-means with one cluster per ground-truth class, then the five scores.
pub fn cluster_metrics(
    embedding: &DenseMat,
    labels: &[usize],
    num_classes: usize,
    seed: u64,
    kmeans_opts: KMeansOptions,
    norm: NmiNorm,
) -> Result<BTreeMap<String, f64>> {
    let assignment = kmeans(embedding, num_classes, seed, kmeans_opts)?;
    let s = cluster_scores(&assignment.labels, labels, norm)?;
    Ok(BTreeMap::from([
        ("acc".to_string(), s.acc),
        ("nmi".to_string(), s.nmi),
        ("f1".to_string(), s.f1),
        ("precision".to_string(), s.precision),
        ("ari".to_string(), s.ari),
    ]))
}

pub fn require_labels(g: &Graph) -> Result<&[usize]> {
    g.labels()
        .ok_or_else(|| Error::Contract("clustering evaluation needs ground-truth labels".into()))
}

/// The edge split a run trains on: held-out edges for link prediction, every
/// edge for clustering.
pub fn split_for(g: &Graph, protocol: &Protocol, seed: u64) -> Result<EdgeSplit> {
    match protocol.task {
        Task::Link => split_edges(g, protocol.val_frac, protocol.test_frac, seed),
        Task::Cluster => Ok(EdgeSplit::all_train(g)),
    }
}

/// One train-and-evaluate run with `cfg.seed` seeding the split, the model
/// and K-means.
pub fn run_once(
    g: &Graph,
    cfg: &TrainConfig,
    protocol: &Protocol,
    run_index: usize,
) -> Result<RunRecord> {
    let start = Instant::now();
    let labels = match protocol.task {
        Task::Cluster => Some(require_labels(g)?),
        Task::Link => None,
    };
    let split = split_for(g, protocol, cfg.seed)?;
    let inputs = TrainingInputs::new(g, &split)?;
    let model = train_with_inputs(g, &inputs, cfg)?;
    let metrics = match labels {
        None => link_metrics(&model, &inputs, &split)?,
        Some(labels) => cluster_metrics(
            &model.embedding,
            labels,
            g.num_classes(),
            cfg.seed,
            protocol.kmeans,
            protocol.nmi_norm,
        )?,
    };
    Ok(RunRecord {
        run_index,
        seed: cfg.seed,
        config: cfg.clone(),
        losses: model.history,
        metrics,
        duration_secs: start.elapsed().as_secs_f64(),
    })
}

/// `repeat` runs with seeds `cfg.seed + i` on up to `jobs` threads, returned
/// in run-index order. The first failure is reported.
pub fn run_repeated(
    g: &Graph,
    cfg: &TrainConfig,
    protocol: &Protocol,
    repeat: usize,
    jobs: usize,
) -> Result<Vec<RunRecord>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunRecord>>>> =
        Mutex::new((0..repeat).map(|_| None).collect());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= repeat {
            break;
        }
        let run_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let r = run_once(g, &run_cfg, protocol, i);
        if let Ok(rec) = &r {
            log::info!(
                "run {i} seed {} done in {:.1}s",
                rec.seed,
                rec.duration_secs
            );
        }
        results.lock().expect("poisoned")[i] = Some(r);
    };
    let jobs = jobs.clamp(1, repeat.max(1));
    std::thread::scope(|s| {
        for _ in 1..jobs {
            s.spawn(worker);
        }
        worker();
    });
    results
        .into_inner()
        .expect("poisoned")
        .into_iter()
        .map(|r| r.expect("every run index visited"))
        .collect()
}
