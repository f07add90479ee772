//! C interface to `argem`: opaque graph and model handles, status codes and a
//! per-thread last-error message.
//!
//! Every fallible function returns an [`ArgemStatus`]; on failure the message
//! is available from [`argem_last_error_message`] until the next call on the
//! same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use argem::checkpoint::{Checkpoint, SplitSpec};
use argem::cluster::{KMeansOptions, NmiNorm};
use argem::experiment::{cluster_metrics, link_metrics, require_labels, DatasetSource};
use argem::graph::{load_citation_dataset, split_edges, EdgeSplit, Graph};
use argem::tensor::DenseMat;
use argem::train::{train_with_inputs, TrainConfig, TrainedModel, TrainingInputs};
use argem::Error;

/// Dataset name recorded in checkpoints of graphs built from arrays.
const IN_MEMORY: &str = "in-memory";

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArgemStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Contract = 5,
    Config = 6,
    Diverged = 7,
    Checkpoint = 8,
    Shape = 9,
    Numeric = 10,
    Panic = 11,
}

/// An attributed graph.
pub struct ArgemGraph {
    graph: Graph,
    source: DatasetSource,
}

/// A trained model together with the split it was trained on.
pub struct ArgemModel {
    model: TrainedModel,
    source: DatasetSource,
    node_ids: Vec<String>,
    split: Option<(SplitSpec, EdgeSplit, TrainingInputs)>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ArgemClusterScores {
    pub acc: f64,
    pub nmi: f64,
    pub f1: f64,
    pub precision: f64,
    pub ari: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(ArgemStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } => ArgemStatus::Shape,
            Error::Numeric { .. } => ArgemStatus::Numeric,
            Error::Parse { .. } | Error::Json(_) => ArgemStatus::Parse,
            Error::Contract(_) | Error::Sizing(_) => ArgemStatus::Contract,
            Error::Config(_) => ArgemStatus::Config,
            Error::Diverged { .. } => ArgemStatus::Diverged,
            Error::Checkpoint(_) => ArgemStatus::Checkpoint,
            Error::Io(_) => ArgemStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(ArgemStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(ArgemStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ArgemStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ArgemStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("internal panic: {msg}"));
            ArgemStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or a nul-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `p` must be null or point to a live value of `T`.
unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next `argem_*` call on the same thread.
#[no_mangle]
pub extern "C" fn argem_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a citation dataset from a `.content` and a `.cites` file.
///
/// # Safety
/// Paths must be nul-terminated strings and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn argem_graph_load(
    content_path: *const c_char,
    cites_path: *const c_char,
    out: *mut *mut ArgemGraph,
) -> ArgemStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let content = PathBuf::from(str_arg(content_path, "content_path")?);
        let cites = PathBuf::from(str_arg(cites_path, "cites_path")?);
        let graph = load_citation_dataset(&content, &cites)?;
        *out = Box::into_raw(Box::new(ArgemGraph {
            graph,
            source: DatasetSource::Files { content, cites },
        }));
        Ok(())
    })
}

/// Builds a graph from row-major `num_nodes x num_features` features and
/// `num_edges` node pairs stored as `2 * num_edges` indices. `labels` may be
/// null; otherwise it holds one class per node.
///
/// # Safety
/// Arrays must hold the stated number of elements and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn argem_graph_from_arrays(
    num_nodes: usize,
    num_features: usize,
    features: *const f64,
    num_edges: usize,
    edges: *const usize,
    labels: *const usize,
    out: *mut *mut ArgemGraph,
) -> ArgemStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = num_nodes
            .checked_mul(num_features)
            .ok_or_else(|| invalid("feature matrix size overflows"))?;
        let pairs = num_edges
            .checked_mul(2)
            .ok_or_else(|| invalid("edge array size overflows"))?;
        let x = slice_arg(features, len, "features")?;
        let e = slice_arg(edges, pairs, "edges")?;
        let labels = if labels.is_null() {
            None
        } else {
            Some(slice_arg(labels, num_nodes, "labels")?.to_vec())
        };
        let x = DenseMat::from_vec(num_nodes, num_features, x.to_vec())?;
        let graph = Graph::new(x, e.chunks_exact(2).map(|p| (p[0], p[1])), labels, None)?;
        *out = Box::into_raw(Box::new(ArgemGraph {
            graph,
            source: DatasetSource::Named(IN_MEMORY.to_string()),
        }));
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn argem_graph_free(graph: *mut ArgemGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Node, undirected edge and feature counts.
///
/// # Safety
/// `graph` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn argem_graph_shape(
    graph: *const ArgemGraph,
    num_nodes: *mut usize,
    num_edges: *mut usize,
    num_features: *mut usize,
) -> ArgemStatus {
    guard(|| {
        let g = &ref_arg(graph, "graph")?.graph;
        if let Some(p) = num_nodes.as_mut() {
            *p = g.num_nodes();
        }
        if let Some(p) = num_edges.as_mut() {
            *p = g.num_edges();
        }
        if let Some(p) = num_features.as_mut() {
            *p = g.num_features();
        }
        Ok(())
    })
}

/// Trains on `graph` after holding out `val_frac` and `test_frac` of its
/// edges. `config_toml` may be null for the defaults, or a TOML document
/// overriding training settings such as `variant`, `epochs` and `seed`.
///
/// # Safety
/// `graph` must be a live handle, `config_toml` null or nul-terminated, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn argem_train(
    graph: *const ArgemGraph,
    config_toml: *const c_char,
    val_frac: f64,
    test_frac: f64,
    out: *mut *mut ArgemModel,
) -> ArgemStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let handle = ref_arg(graph, "graph")?;
        let g = &handle.graph;
        let cfg = if config_toml.is_null() {
            TrainConfig::default()
        } else {
            TrainConfig::default().merge_toml(str_arg(config_toml, "config_toml")?)?
        };
        let split = split_edges(g, val_frac, test_frac, cfg.seed)?;
        let inputs = TrainingInputs::new(g, &split)?;
        let model = train_with_inputs(g, &inputs, &cfg)?;
        let spec = SplitSpec {
            val_frac,
            test_frac,
            seed: cfg.seed,
        };
        *out = Box::into_raw(Box::new(ArgemModel {
            model,
            source: handle.source.clone(),
            node_ids: g.node_ids().to_vec(),
            split: Some((spec, split, inputs)),
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn argem_model_free(model: *mut ArgemModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding rows and columns.
///
/// # Safety
/// `model` must be a live handle and the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn argem_model_embedding_shape(
    model: *const ArgemModel,
    rows: *mut usize,
    cols: *mut usize,
) -> ArgemStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        *rows.as_mut().ok_or_else(|| null("rows"))? = m.model.embedding.rows();
        *cols.as_mut().ok_or_else(|| null("cols"))? = m.model.embedding.cols();
        Ok(())
    })
}

/// Copies the row-major embedding into `buf`, which must hold exactly
/// `rows * cols` values.
///
/// # Safety
/// `model` must be a live handle and `buf` hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn argem_model_embedding(
    model: *const ArgemModel,
    buf: *mut f64,
    len: usize,
) -> ArgemStatus {
    guard(|| {
        let z = &ref_arg(model, "model")?.model.embedding;
        if len != z.len() {
            return Err(invalid(format!(
                "buffer holds {len} values, embedding has {}",
                z.len()
            )));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(z.data());
        Ok(())
    })
}

/// Test-edge AUC and AP. Fails for models loaded from a checkpoint or trained
/// without held-out edges.
///
/// # Safety
/// `model` must be a live handle and the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn argem_model_link_scores(
    model: *const ArgemModel,
    auc: *mut f64,
    ap: *mut f64,
) -> ArgemStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let (_, split, inputs) = m
            .split
            .as_ref()
            .ok_or_else(|| invalid("model has no training split attached"))?;
        if split.test_pos.is_empty() {
            return Err(invalid("model was trained without held-out test edges"));
        }
        let metrics = link_metrics(&m.model, inputs, split)?;
        *auc.as_mut().ok_or_else(|| null("auc"))? = metrics["auc"];
        *ap.as_mut().ok_or_else(|| null("ap"))? = metrics["ap"];
        Ok(())
    })
}

/// K-means on the embedding with one cluster per class of `graph`, scored
/// against its labels.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn argem_model_cluster_scores(
    model: *const ArgemModel,
    graph: *const ArgemGraph,
    seed: u64,
    out: *mut ArgemClusterScores,
) -> ArgemStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let g = &ref_arg(graph, "graph")?.graph;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if g.num_nodes() != m.model.embedding.rows() {
            return Err(invalid(format!(
                "graph has {} nodes, embedding {}",
                g.num_nodes(),
                m.model.embedding.rows()
            )));
        }
        let labels = require_labels(g)?;
        let s = cluster_metrics(
            &m.model.embedding,
            labels,
            g.num_classes(),
            seed,
            KMeansOptions::default(),
            NmiNorm::Arithmetic,
        )?;
        *out = ArgemClusterScores {
            acc: s["acc"],
            nmi: s["nmi"],
            f1: s["f1"],
            precision: s["precision"],
            ari: s["ari"],
        };
        Ok(())
    })
}

/// Writes a checkpoint.
///
/// # Safety
/// `model` must be a live handle and `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn argem_model_save(
    model: *const ArgemModel,
    path: *const c_char,
) -> ArgemStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let spec = m.split.as_ref().map_or(
            SplitSpec {
                val_frac: 0.0,
                test_frac: 0.0,
                seed: m.model.config.seed,
            },
            |(s, _, _)| *s,
        );
        Checkpoint::new(&m.model, &m.source, spec, &m.node_ids).save(&path)?;
        Ok(())
    })
}

/// Loads a checkpoint. The returned model exposes its embedding and cluster
/// scores; link scores need the training graph and are unavailable.
///
/// # Safety
/// `path` must be nul-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn argem_model_load(
    path: *const c_char,
    out: *mut *mut ArgemModel,
) -> ArgemStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let ck = Checkpoint::load(&path)?;
        *out = Box::into_raw(Box::new(ArgemModel {
            model: ck.to_model(),
            source: ck.dataset,
            node_ids: ck.node_ids,
            split: None,
        }));
        Ok(())
    })
}
