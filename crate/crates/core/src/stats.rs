//! Streaming moments and deterministic chunked Monte Carlo.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Samples drawn per random stream in [`chunked`].
pub const CHUNK_SIZE: usize = 4096;

/// Welford accumulator for a scalar stream.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan's parallel combination.
    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn standard_error(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Per-coordinate Welford accumulators for a vector stream.
#[derive(Debug, Clone, PartialEq)]
pub struct VecMoments {
    coords: Vec<Moments>,
}

impl VecMoments {
    pub fn new(dim: usize) -> Self {
        Self {
            coords: vec![Moments::default(); dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.coords.len());
        for (m, &v) in self.coords.iter_mut().zip(x) {
            m.push(v);
        }
    }

    pub fn merge(&mut self, other: &VecMoments) {
        for (m, o) in self.coords.iter_mut().zip(&other.coords) {
            m.merge(o);
        }
    }

    pub fn coords(&self) -> &[Moments] {
        &self.coords
    }

    pub fn means(&self) -> Vec<f64> {
        self.coords.iter().map(Moments::mean).collect()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        self.coords.iter().map(Moments::standard_error).collect()
    }

    /// Trace of the sample covariance.
    pub fn trace_variance(&self) -> f64 {
        self.coords.iter().map(Moments::variance).sum()
    }
}

/// Random stream for chunk `chunk` of a run seeded with `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Splits `samples` into fixed chunks, each with its own random stream,
/// evaluates them in parallel and returns the per-chunk results in chunk
/// order. Results depend only on `seed`, never on thread scheduling.
pub fn chunked<T, F>(samples: usize, seed: u64, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let chunks = samples.div_ceil(CHUNK_SIZE);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK_SIZE.min(samples - c * CHUNK_SIZE);
            let mut rng = chunk_rng(seed, c as u64);
            work(&mut rng, len)
        })
        .collect()
}

/// Mean and sample standard deviation; `(NaN, NaN)` when empty.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m: Moments = xs.iter().copied().collect();
    if m.count() == 0 {
        (f64::NAN, f64::NAN)
    } else {
        (m.mean(), m.std_dev())
    }
}
