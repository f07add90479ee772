//! K-means on embeddings and external clustering metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseMat, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: DenseMat,
    pub inertia: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 300,
            restarts: 10,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from k-means++ seeding; the lowest-inertia restart wins.
/// Restart `r` draws from its own stream of `seed`.
pub fn kmeans(z: &DenseMat, k: usize, seed: u64, opts: KMeansOptions) -> Result<ClusterAssignment> {
    let n = z.rows();
    if k == 0 || k > n {
        return Err(Error::Contract(format!(
            "k-means needs 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    if !z.is_finite() {
        return Err(Error::Contract(
            "k-means input contains non-finite values".into(),
        ));
    }
    let mut best: Option<ClusterAssignment> = None;
    for r in 0..opts.restarts.max(1) {
        let mut rng = Rng::with_stream(seed, r as u64);
        let run = lloyd(z, k, plus_plus(z, k, &mut rng), opts.max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus(z: &DenseMat, k: usize, rng: &mut Rng) -> DenseMat {
    let n = z.rows();
    let mut centroids = DenseMat::zeros(k, z.cols());
    let first = rng.below(n);
    centroids.row_mut(0).copy_from_slice(z.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(first))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut idx = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.below(n)
        };
        centroids.row_mut(c).copy_from_slice(z.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), z.row(pick)));
        }
    }
    centroids
}

fn assign(z: &DenseMat, centroids: &DenseMat, labels: &mut [usize], dist: &mut [f64]) -> bool {
    let mut changed = false;
    for i in 0..z.rows() {
        let (mut arg, mut min) = (0, f64::INFINITY);
        for c in 0..centroids.rows() {
            let d = sq_dist(z.row(i), centroids.row(c));
            if d < min {
                arg = c;
                min = d;
            }
        }
        changed |= labels[i] != arg;
        labels[i] = arg;
        dist[i] = min;
    }
    changed
}

fn lloyd(z: &DenseMat, k: usize, mut centroids: DenseMat, max_iter: usize) -> ClusterAssignment {
    let (n, d) = z.shape();
    let mut labels = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    assign(z, &centroids, &mut labels, &mut dist);
    for _ in 0..max_iter {
        let mut sums = DenseMat::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, &v) in sums.row_mut(labels[i]).iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its centroid
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]))
                    .expect("k <= n leaves a cluster with two points");
                counts[labels[far]] -= 1;
                for (s, &v) in sums.row_mut(labels[far]).iter_mut().zip(z.row(far)) {
                    *s -= v;
                }
                labels[far] = c;
                dist[far] = 0.0;
                counts[c] = 1;
                sums.row_mut(c).copy_from_slice(z.row(far));
            }
        }
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
        if !assign(z, &centroids, &mut labels, &mut dist) {
            break;
        }
    }
    let inertia = dist.iter().sum();
    ClusterAssignment {
        labels,
        centroids,
        inertia,
    }
}

/// Sum of squared distances from each point to the mean of its label.
pub fn inertia_of(z: &DenseMat, labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = DenseMat::zeros(k, z.cols());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &v) in sums.row_mut(l).iter_mut().zip(z.row(i)) {
            *s += v;
        }
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let c: Vec<f64> = sums.row(l).iter().map(|s| s / counts[l] as f64).collect();
            sq_dist(z.row(i), &c)
        })
        .sum()
}

/// Minimum-cost perfect assignment on a square matrix; `result[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // potentials formulation with 1-based sentinels
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            result[p[j] - 1] = j - 1;
        }
    }
    result
}

/// Dense ids `0..k` in order of first appearance.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Pred-by-truth contingency counts over compacted ids.
pub struct Contingency {
    pub table: Vec<Vec<u64>>,
    pub pred_sizes: Vec<u64>,
    pub truth_sizes: Vec<u64>,
    pub n: u64,
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::shape(
                "contingency",
                format!("{} predictions vs {} truth labels", pred.len(), truth.len()),
            ));
        }
        if pred.is_empty() {
            return Err(Error::Contract(
                "clustering metrics need at least one point".into(),
            ));
        }
        let (p, kp) = compact(pred);
        let (t, kt) = compact(truth);
        let mut table = vec![vec![0u64; kt]; kp];
        for (&a, &b) in p.iter().zip(&t) {
            table[a][b] += 1;
        }
        let pred_sizes = table.iter().map(|r| r.iter().sum()).collect();
        let truth_sizes = (0..kt).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        Ok(Contingency {
            table,
            pred_sizes,
            truth_sizes,
            n: pred.len() as u64,
        })
    }

    /// `mapping[pred_cluster] = Some(truth_class)` maximizing matched points.
    pub fn best_alignment(&self) -> Vec<Option<usize>> {
        let (kp, kt) = (self.pred_sizes.len(), self.truth_sizes.len());
        let size = kp.max(kt);
        let cost: Vec<Vec<f64>> = (0..size)
            .map(|i| {
                (0..size)
                    .map(|j| {
                        if i < kp && j < kt {
                            -(self.table[i][j] as f64)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let assignment = hungarian(&cost);
        (0..kp)
            .map(|i| Some(assignment[i]).filter(|&j| j < kt))
            .collect()
    }
}

/// Best fraction of points matched under a one-to-one relabeling.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let matched: u64 = c
        .best_alignment()
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| c.table[i][j]))
        .sum();
    Ok(matched as f64 / c.n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmiNorm {
    Arithmetic,
    Geometric,
}

fn entropy(sizes: &[u64], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the mean of the two entropies. A zero
/// normalizer (one cluster and one class) gives 0 with a warning.
pub fn nmi(pred: &[usize], truth: &[usize], norm: NmiNorm) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let n = c.n as f64;
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (c.pred_sizes[i] as f64 * c.truth_sizes[j] as f64)).ln();
            }
        }
    }
    let (hp, ht) = (entropy(&c.pred_sizes, n), entropy(&c.truth_sizes, n));
    let denom = match norm {
        NmiNorm::Arithmetic => 0.5 * (hp + ht),
        NmiNorm::Geometric => (hp * ht).sqrt(),
    };
    if denom <= 0.0 {
        log::warn!("NMI undefined for a single cluster/class labeling, reporting 0");
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn choose2(x: u64) -> f64 {
    x as f64 * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let index: f64 = c.table.iter().flatten().map(|&x| choose2(x)).sum();
    let a: f64 = c.pred_sizes.iter().map(|&x| choose2(x)).sum();
    let b: f64 = c.truth_sizes.iter().map(|&x| choose2(x)).sum();
    let total = choose2(c.n);
    let expected = a * b / total.max(1.0);
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Macro F1 and macro precision over truth classes after aligning cluster
/// ids to classes. A class with no aligned cluster scores 0 for both.
pub fn f1_and_precision(pred: &[usize], truth: &[usize]) -> Result<(f64, f64)> {
    let c = Contingency::new(pred, truth)?;
    let kt = c.truth_sizes.len();
    let mut f1 = vec![0.0; kt];
    let mut precision = vec![0.0; kt];
    for (i, m) in c.best_alignment().into_iter().enumerate() {
        let Some(j) = m else { continue };
        let tp = c.table[i][j] as f64;
        if tp == 0.0 {
            continue;
        }
        let p = tp / c.pred_sizes[i] as f64;
        let r = tp / c.truth_sizes[j] as f64;
        precision[j] = p;
        f1[j] = 2.0 * p * r / (p + r);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / kt as f64;
    Ok((mean(&f1), mean(&precision)))
}

/// The five clustering scores of one labeling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub acc: f64,
    pub nmi: f64,
    pub f1: f64,
    pub precision: f64,
    pub ari: f64,
}

pub fn cluster_scores(pred: &[usize], truth: &[usize], norm: NmiNorm) -> Result<ClusterScores> {
    let (f1, precision) = f1_and_precision(pred, truth)?;
    Ok(ClusterScores {
        acc: clustering_accuracy(pred, truth)?,
        nmi: nmi(pred, truth, norm)?,
        f1,
        precision,
        ari: ari(pred, truth)?,
    })
}
