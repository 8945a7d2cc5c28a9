//! Streaming moments and small statistical helpers.

use crate::error::{PddError, Result};

/// Single-pass means and co-moments of a `D`-dimensional sample.
///
/// Updates use Welford's recurrence and merges use Chan's pairwise formula,
/// so merging per-block accumulators in a fixed order is deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments<const D: usize> {
    pub count: u64,
    pub mean: [f64; D],
    /// Sums of products of deviations from the mean.
    pub comoment: [[f64; D]; D],
}

impl<const D: usize> Default for Moments<D> {
    fn default() -> Self {
        Self {
            count: 0,
            mean: [0.0; D],
            comoment: [[0.0; D]; D],
        }
    }
}

impl<const D: usize> Moments<D> {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: [f64; D]) {
        self.count += 1;
        let n = self.count as f64;
        let mut d_old = [0.0; D];
        for k in 0..D {
            d_old[k] = x[k] - self.mean[k];
            self.mean[k] += d_old[k] / n;
        }
        for a in 0..D {
            let d_new = x[a] - self.mean[a];
            for b in 0..D {
                self.comoment[b][a] += d_old[b] * d_new;
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let mut delta = [0.0; D];
        for k in 0..D {
            delta[k] = other.mean[k] - self.mean[k];
        }
        for a in 0..D {
            for b in 0..D {
                self.comoment[a][b] += other.comoment[a][b] + delta[a] * delta[b] * na * nb / n;
            }
        }
        for k in 0..D {
            self.mean[k] += delta[k] * nb / n;
        }
        self.count += other.count;
    }

    /// Unbiased sample covariance; zero with fewer than two samples.
    pub fn covariance(&self, a: usize, b: usize) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.comoment[a][b] / (self.count - 1) as f64
        }
    }

    pub fn variance(&self, a: usize) -> f64 {
        self.covariance(a, a).max(0.0)
    }

    pub fn correlation(&self, a: usize, b: usize) -> Result<f64> {
        let (va, vb) = (self.variance(a), self.variance(b));
        if !(va > 0.0 && vb > 0.0) {
            return Err(PddError::Degenerate(format!("zero variance in correlation ({va}, {vb})")));
        }
        Ok((self.covariance(a, b) / (va * vb).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Pearson's sample correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(PddError::InvalidArgument(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(PddError::InvalidArgument("need at least 2 samples".into()));
    }
    let mut m = Moments::<2>::new();
    for (a, b) in x.iter().zip(y) {
        m.push([*a, *b]);
    }
    m.correlation(0, 1)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn sample_variance(x: &[f64]) -> f64 {
    let mut m = Moments::<1>::new();
    x.iter().for_each(|v| m.push([*v]));
    m.variance(0)
}

/// Spearman rank correlation (ties get their average rank).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&ranks(x), &ranks(y))
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}
