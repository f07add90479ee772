use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::DenseMat;

/// Seedable counter-based generator (ChaCha8). Independent streams can be
/// derived from one seed so that, e.g., weight initialization and prior
/// sampling never perturb each other.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform on the open interval `(-1, 1)`.
    pub fn uniform_pm1(&mut self) -> f64 {
        loop {
            let v = 2.0 * self.uniform() - 1.0;
            if v > -1.0 {
                return v;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `m` distinct indices from `0..n`, in sampled order.
    pub fn sample_indices(&mut self, n: usize, m: usize) -> Vec<usize> {
        assert!(m <= n, "cannot draw {m} distinct indices from {n}");
        if m == n {
            return (0..n).collect();
        }
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(m);
        pool
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> DenseMat {
        let data = (0..rows * cols).map(|_| self.normal()).collect();
        DenseMat::from_vec(rows, cols, data).expect("sized")
    }

    pub fn uniform_matrix(&mut self, rows: usize, cols: usize) -> DenseMat {
        let data = (0..rows * cols).map(|_| self.uniform_pm1()).collect();
        DenseMat::from_vec(rows, cols, data).expect("sized")
    }
}
