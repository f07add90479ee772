#![allow(dead_code)]

use std::path::PathBuf;

use argem::graph::{load_citation_dataset, Graph};
use argem::tensor::{DenseMat, Rng};

/// Erdős–Rényi graph with binary features, at least one edge, and `k` labels.
pub fn random_graph(n: usize, p: f64, features: usize, classes: usize, seed: u64) -> Graph {
    let mut rng = Rng::new(seed);
    let mut edges = vec![];
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.uniform() < p {
                edges.push((a, b));
            }
        }
    }
    if edges.is_empty() && n > 1 {
        edges.push((0, 1));
    }
    let x = DenseMat::from_vec(
        n,
        features,
        (0..n * features)
            .map(|_| if rng.uniform() < 0.3 { 1.0 } else { 0.0 })
            .collect(),
    )
    .unwrap();
    let labels = (0..n).map(|i| i % classes.max(1)).collect();
    Graph::new(x, edges, Some(labels), None).unwrap()
}

pub fn data_root() -> PathBuf {
    std::env::var_os("ARGEM_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// The named dataset if its files are present under [`data_root`].
pub fn try_load(name: &str) -> Option<Graph> {
    let dir = data_root().join(name);
    let content = dir.join(format!("{name}.content"));
    let cites = dir.join(format!("{name}.cites"));
    if !content.exists() || !cites.exists() {
        eprintln!(
            "{name} not found under {}, falling back",
            data_root().display()
        );
        return None;
    }
    Some(load_citation_dataset(&content, &cites).expect("dataset parses"))
}
