//! Attributed graphs, citation-file ingestion, the normalized propagation
//! matrix and train/validation/test edge splits.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{DenseMat, Rng, SparseMat};

/// Undirected node pair stored as `(min, max)`.
pub type Edge = (usize, usize);

#[inline]
pub fn canonical(a: usize, b: usize) -> Edge {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Undirected attributed graph with optional ground-truth classes.
#[derive(Clone, Debug)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    features: DenseMat,
    labels: Option<Vec<usize>>,
    class_names: Vec<String>,
    node_ids: Vec<String>,
}

impl Graph {
    /// Validates and builds a graph. Edges are canonicalized, deduplicated and
    /// sorted; self-pairs are rejected.
    pub fn new(
        features: DenseMat,
        edges: impl IntoIterator<Item = Edge>,
        labels: Option<Vec<usize>>,
        node_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = features.rows();
        let mut set = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Contract(format!("edge ({a},{b}) outside {n} nodes")));
            }
            if a == b {
                return Err(Error::Contract(format!("self-pair ({a},{a})")));
            }
            set.push(canonical(a, b));
        }
        set.sort_unstable();
        set.dedup();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Contract(format!("{} labels for {n} nodes", l.len())));
            }
        }
        let node_ids = match node_ids {
            Some(ids) if ids.len() != n => {
                return Err(Error::Contract(format!(
                    "{} node ids for {n} nodes",
                    ids.len()
                )));
            }
            Some(ids) => ids,
            None => (0..n).map(|i| i.to_string()).collect(),
        };
        let class_names = labels
            .as_ref()
            .map(|l| {
                let k = l.iter().max().map_or(0, |m| m + 1);
                (0..k).map(|c| c.to_string()).collect()
            })
            .unwrap_or_default();
        Ok(Graph {
            n,
            edges: set,
            features,
            labels,
            class_names,
            node_ids,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &DenseMat {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    /// Same nodes and features, different edge set.
    pub fn with_edges(&self, edges: &[Edge]) -> Result<Graph> {
        let mut g = Graph::new(
            self.features.clone(),
            edges.iter().copied(),
            self.labels.clone(),
            Some(self.node_ids.clone()),
        )?;
        g.class_names = self.class_names.clone();
        Ok(g)
    }

    /// Induced subgraph on `nodes` (in the given order).
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|&(a, b)| Some((*pos.get(&a)?, *pos.get(&b)?)));
        let features = self.features.select_rows(nodes);
        let labels = self
            .labels
            .as_ref()
            .map(|l| nodes.iter().map(|&v| l[v]).collect());
        let ids = nodes.iter().map(|&v| self.node_ids[v].clone()).collect();
        let mut g = Graph::new(features, edges.collect::<Vec<_>>(), labels, Some(ids))?;
        g.class_names = self.class_names.clone();
        Ok(g)
    }

    /// Binary symmetric adjacency `A` (zero diagonal).
    pub fn adjacency(&self) -> SparseMat {
        let trip = self
            .edges
            .iter()
            .flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)])
            .collect();
        SparseMat::from_triplets(self.n, self.n, trip).expect("edges validated")
    }

    /// `A + I`.
    pub fn augmented_adjacency(&self) -> SparseMat {
        let trip = self
            .edges
            .iter()
            .flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)])
            .chain((0..self.n).map(|i| (i, i, 1.0)))
            .collect();
        SparseMat::from_triplets(self.n, self.n, trip).expect("edges validated")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub cites_lines: usize,
    pub unknown_id_lines: usize,
    pub self_citations: usize,
    pub duplicate_edges: usize,
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

/// Non-empty lines with their 1-based line numbers; tolerates CR/LF and a
/// missing trailing newline.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Loads a `.content` / `.cites` pair. See [`load_citation_dataset_with_stats`].
pub fn load_citation_dataset(content_path: &Path, cites_path: &Path) -> Result<Graph> {
    load_citation_dataset_with_stats(content_path, cites_path).map(|(g, _)| g)
}

/// Loads a `.content` / `.cites` pair.
///
/// Content lines are `node_id<TAB>f_1 … f_m<TAB>class_label`; cites lines are
/// `cited_id<TAB>citing_id`. Citations are symmetrized; duplicates and
/// self-citations are dropped and lines that mention an id missing from the
/// content file are skipped and counted.
pub fn load_citation_dataset_with_stats(
    content_path: &Path,
    cites_path: &Path,
) -> Result<(Graph, LoadStats)> {
    let content = read_text(content_path)?;
    let cites = read_text(cites_path)?;
    parse_citation_dataset(&content, &cites, content_path, cites_path)
}

pub(crate) fn parse_citation_dataset(
    content: &str,
    cites: &str,
    content_path: &Path,
    cites_path: &Path,
) -> Result<(Graph, LoadStats)> {
    let parse_err = |path: &Path, line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut class_of: Vec<usize> = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut width: Option<usize> = None;

    for (lineno, line) in numbered_lines(content) {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(parse_err(
                content_path,
                lineno,
                format!(
                    "expected id, features and label, found {} field(s)",
                    fields.len()
                ),
            ));
        }
        let m = fields.len() - 2;
        match width {
            None => width = Some(m),
            Some(w) if w != m => {
                return Err(parse_err(
                    content_path,
                    lineno,
                    format!("expected {} fields, found {}", w + 2, fields.len()),
                ));
            }
            _ => {}
        }
        let id = fields[0].to_string();
        if index.contains_key(&id) {
            return Err(parse_err(
                content_path,
                lineno,
                format!("duplicate node id {id}"),
            ));
        }
        for f in &fields[1..fields.len() - 1] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(content_path, lineno, format!("bad feature value {f:?}")))?;
            rows.push(v);
        }
        let label = fields[fields.len() - 1];
        let next = class_names.len();
        let c = *class_index.entry(label.to_string()).or_insert_with(|| {
            class_names.push(label.to_string());
            next
        });
        class_of.push(c);
        index.insert(id.clone(), ids.len());
        ids.push(id);
    }

    let n = ids.len();
    let m = width.unwrap_or(0);
    let features = DenseMat::from_vec(n, m, rows)?;

    let mut stats = LoadStats::default();
    let mut seen: HashSet<Edge> = HashSet::new();
    let mut edges = Vec::new();
    for (lineno, line) in numbered_lines(cites) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(
                cites_path,
                lineno,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        stats.cites_lines += 1;
        let (Some(&a), Some(&b)) = (index.get(fields[0]), index.get(fields[1])) else {
            stats.unknown_id_lines += 1;
            continue;
        };
        if a == b {
            stats.self_citations += 1;
            continue;
        }
        let e = canonical(a, b);
        if seen.insert(e) {
            edges.push(e);
        } else {
            stats.duplicate_edges += 1;
        }
    }
    if stats.unknown_id_lines > 0 {
        log::warn!(
            "{}: skipped {} citation line(s) referencing unknown node ids",
            cites_path.display(),
            stats.unknown_id_lines
        );
    }

    let mut g = Graph::new(features, edges, Some(class_of), Some(ids))?;
    g.class_names = class_names;
    Ok((g, stats))
}

/// Symmetric-normalized self-loop-augmented adjacency
/// `D̃^{-1/2} (A + I) D̃^{-1/2}` in sparse form.
#[derive(Clone, Debug)]
pub struct Propagator {
    matrix: Arc<SparseMat>,
}

impl Propagator {
    pub fn matrix(&self) -> &Arc<SparseMat> {
        &self.matrix
    }

    pub fn to_dense(&self) -> DenseMat {
        self.matrix.to_dense()
    }
}

pub fn build_propagator(g: &Graph) -> Propagator {
    let aug = g.augmented_adjacency();
    let deg: Vec<f64> = (0..g.num_nodes())
        .map(|i| aug.row(i).1.iter().sum())
        .collect();
    let trip = aug
        .iter()
        .map(|(i, j, v)| (i, j, v / (deg[i] * deg[j]).sqrt()))
        .collect();
    Propagator {
        matrix: Arc::new(
            SparseMat::from_triplets(g.num_nodes(), g.num_nodes(), trip).expect("valid"),
        ),
    }
}

/// Held-out positive edges with matched non-edge samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSplit {
    pub train_edges: Vec<Edge>,
    pub val_pos: Vec<Edge>,
    pub val_neg: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub test_neg: Vec<Edge>,
    pub seed: u64,
}

impl EdgeSplit {
    /// Every edge in train, nothing held out.
    pub fn all_train(g: &Graph) -> Self {
        EdgeSplit {
            train_edges: g.edges().to_vec(),
            val_pos: vec![],
            val_neg: vec![],
            test_pos: vec![],
            test_neg: vec![],
            seed: 0,
        }
    }
}

/// Randomly holds out `floor(frac * |E|)` edges for validation and test and
/// samples as many non-edges of the full graph for each. Deterministic in `seed`.
pub fn split_edges(g: &Graph, val_frac: f64, test_frac: f64, seed: u64) -> Result<EdgeSplit> {
    if !(0.0..1.0).contains(&val_frac)
        || !(0.0..1.0).contains(&test_frac)
        || val_frac + test_frac >= 1.0
    {
        return Err(Error::Sizing(format!(
            "need 0 <= val_frac + test_frac < 1, got {val_frac} + {test_frac}"
        )));
    }
    let num_edges = g.num_edges();
    let n_test = (test_frac * num_edges as f64).floor() as usize;
    let n_val = (val_frac * num_edges as f64).floor() as usize;
    if (test_frac > 0.0 && n_test == 0) || (val_frac > 0.0 && n_val == 0) {
        return Err(Error::Sizing(format!(
            "{num_edges} edges are too few for val_frac {val_frac} / test_frac {test_frac}"
        )));
    }

    let n = g.num_nodes();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let non_edges = total_pairs - num_edges;
    let wanted = n_test + n_val;
    if wanted > non_edges {
        return Err(Error::Sizing(format!(
            "need {wanted} negative pairs but the graph has only {non_edges} non-edges"
        )));
    }

    let mut rng = Rng::new(seed);
    let mut shuffled = g.edges().to_vec();
    rng.shuffle(&mut shuffled);
    let test_pos = shuffled[..n_test].to_vec();
    let val_pos = shuffled[n_test..n_test + n_val].to_vec();
    let mut train_edges = shuffled[n_test + n_val..].to_vec();
    train_edges.sort_unstable();

    let existing: HashSet<Edge> = g.edges().iter().copied().collect();
    let negatives = if wanted * 2 > non_edges {
        // dense graph: enumerate the complement instead of rejection sampling
        let mut all: Vec<Edge> = (0..n)
            .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
            .filter(|e| !existing.contains(e))
            .collect();
        let pick = rng.sample_indices(all.len(), wanted);
        let picked: Vec<Edge> = pick.iter().map(|&i| all[i]).collect();
        all.clear();
        picked
    } else {
        let mut taken: HashSet<Edge> = HashSet::with_capacity(wanted);
        let mut out = Vec::with_capacity(wanted);
        while out.len() < wanted {
            let a = rng.below(n);
            let b = rng.below(n);
            if a == b {
                continue;
            }
            let e = canonical(a, b);
            if existing.contains(&e) || !taken.insert(e) {
                continue;
            }
            out.push(e);
        }
        out
    };
    let test_neg = negatives[..n_test].to_vec();
    let val_neg = negatives[n_test..].to_vec();

    Ok(EdgeSplit {
        train_edges,
        val_pos,
        val_neg,
        test_pos,
        test_neg,
        seed,
    })
}
