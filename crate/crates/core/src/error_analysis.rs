//! Global error bounds, the tolerance map ε → a₀, extreme-value helpers and the
//! noise-to-signal simulation for the variance proxy.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc, erfc_inv, erf_inv};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{PddError, Result};
use crate::stats::Moments;

/// Gilbarg–Trudinger constant for a domain lying between two parallel planes
/// `slab_width` apart.
pub fn gt_constant(sup_b_norm: f64, lambda_min: f64, slab_width: f64) -> f64 {
    ((sup_b_norm / lambda_min) / slab_width).exp() - 1.0
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile, accurate in both tails.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.5 {
        -SQRT_2 * erfc_inv(2.0 * p)
    } else {
        SQRT_2 * erfc_inv(2.0 * (1.0 - p))
    }
}

/// Inverse error function with one Newton step on top of the library value.
pub fn erfinv(y: f64) -> f64 {
    if y <= -1.0 {
        return f64::NEG_INFINITY;
    }
    if y >= 1.0 {
        return f64::INFINITY;
    }
    let x = erf_inv(y);
    let slope = 2.0 / PI.sqrt() * (-x * x).exp();
    if slope > 0.0 {
        x - (erf(x) - y) / slope
    } else {
        x
    }
}

/// CDF of the maximum of `s` i.i.d. standard normals.
pub fn extreme_cdf(x: f64, s: u64) -> f64 {
    normal_cdf(x).powf(s as f64)
}

/// Quantile of the maximum of `s` i.i.d. standard normals.
pub fn inverse_extreme_cdf(p: f64, s: u64) -> Result<f64> {
    if s == 0 {
        return Err(PddError::InvalidArgument("s must be at least 1".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(PddError::InvalidArgument(format!("probability {p} outside (0, 1)")));
    }
    // 1 − P^{1/s} without cancellation.
    let tail = -(p.ln() / s as f64).exp_m1();
    Ok(SQRT_2 * erfc_inv(2.0 * tail))
}

/// Draws the maximum of `s` standard normals by inverting its CDF.
pub fn sample_extreme<R: Rng + ?Sized>(s: u64, rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let tail = -(u.ln() / s as f64).exp_m1();
    SQRT_2 * erfc_inv(2.0 * tail)
}

/// Confidence probability attached to a normal quantile `q` (two-sided).
pub fn confidence_of(q: f64) -> f64 {
    erf(q / SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalErrorParams {
    pub gamma_r: f64,
    pub q_max: f64,
    /// Nodes on the critical subdomain.
    pub s: u64,
    pub q: f64,
    pub p_q: f64,
}

impl GlobalErrorParams {
    pub fn new(gamma_r: f64, q_max: f64, s: u64, q: f64) -> Result<Self> {
        let p = Self { gamma_r, q_max, s, q, p_q: confidence_of(q) };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_r >= 1.0) {
            return Err(PddError::InvalidArgument(format!("gamma_R = {} < 1", self.gamma_r)));
        }
        if !(self.q_max > 0.0 && self.q_max.is_finite()) {
            return Err(PddError::InvalidArgument(format!("Q_max = {} must be positive", self.q_max)));
        }
        if self.s == 0 {
            return Err(PddError::InvalidArgument("s must be at least 1".into()));
        }
        if !(self.q > 0.0) || !(self.p_q > 0.0 && self.p_q < 1.0) {
            return Err(PddError::InvalidArgument(format!("bad confidence pair ({}, {})", self.q, self.p_q)));
        }
        Ok(())
    }

    /// Multiplier `1 + (2√2/q) erf⁻¹(2P^{1/s} − 1)`.
    pub fn extreme_factor(&self) -> f64 {
        let x = inverse_extreme_cdf(self.p_q, self.s).unwrap_or(f64::NAN);
        1.0 + 2.0 * x / self.q
    }
}

/// Nodal tolerance that keeps the global error below `eps` with probability `P_q`.
pub fn a0_from_epsilon(eps: f64, p: &GlobalErrorParams) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(PddError::InvalidArgument(format!("epsilon = {eps} must be positive")));
    }
    p.validate()?;
    let f = p.extreme_factor();
    if !(f > 0.0) {
        return Err(PddError::Degenerate(format!("non-positive extreme factor {f}")));
    }
    Ok(2.0 * eps / (p.gamma_r * p.q_max * f))
}

/// Inverse of [`a0_from_epsilon`].
pub fn epsilon_from_a0(a0: f64, p: &GlobalErrorParams) -> f64 {
    0.5 * a0 * p.gamma_r * p.q_max * p.extreme_factor()
}

/// Global error bound for a realized maximum of the interfacial normals.
pub fn global_error_bound(a: f64, gamma_r: f64, q_k: f64, q: f64, sup_normal: f64) -> f64 {
    0.5 * a * gamma_r * q_k * (1.0 + 2.0 * sup_normal / q)
}

/// Location and scale of the Gumbel law approximating the max of `s` normals.
pub fn gumbel_params(s: u64) -> Result<(f64, f64)> {
    if s < 2 {
        return Err(PddError::InvalidArgument(format!("s = {s} < 2")));
    }
    let l = -normal_quantile(1.0 / s as f64);
    if !(l > 0.0) {
        return Err(PddError::Degenerate(format!("Gumbel location {l} gives no finite scale at s = {s}")));
    }
    Ok((l, 1.0 / l))
}

pub fn gumbel_cdf(x: f64, location: f64, scale: f64) -> f64 {
    (-(-(x - location) / scale).exp()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsrParams {
    /// K′/K″.
    pub ratio: f64,
    pub gamma_r: f64,
    pub q: f64,
    pub s: u64,
    pub samples: usize,
}

pub const MIN_NSR_SAMPLES: usize = 10_000;

impl NsrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio >= 0.0 && self.gamma_r >= 0.0 && self.q > 0.0) || self.s == 0 {
            return Err(PddError::InvalidArgument(format!("invalid NSR parameters {self:?}")));
        }
        if self.samples < MIN_NSR_SAMPLES {
            return Err(PddError::InvalidArgument(format!(
                "{} samples is below the minimum {MIN_NSR_SAMPLES}",
                self.samples
            )));
        }
        Ok(())
    }
}

/// Noise-to-signal ratio of the variance proxy `v̄ + ṽ(ω)`, in units of K″.
pub fn nsr_simulate<R: Rng + ?Sized>(p: &NsrParams, rng: &mut R) -> Result<f64> {
    p.validate()?;
    let mut m = Moments::<1>::new();
    for _ in 0..p.samples {
        let s = sample_extreme(p.s, rng);
        let t = p.ratio + 2.0 * p.gamma_r * s;
        m.push([t * t]);
    }
    let base = p.q * p.q * (p.ratio + p.gamma_r).powi(2);
    Ok(m.variance(0).sqrt() / (base + m.mean[0]))
}

pub const NSR_RATIOS: [f64; 6] = [0.0, 1e-2, 1e-1, 1.0, 10.0, 100.0];
pub const NSR_NODES: [u64; 5] = [10, 100, 1_000, 10_000, 100_000];
pub const NSR_GAMMAS: [f64; 2] = [1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsrEntry {
    pub gamma_r: f64,
    pub ratio: f64,
    pub s: u64,
    pub nsr: f64,
}

/// Full table over [`NSR_GAMMAS`] × [`NSR_RATIOS`] × [`NSR_NODES`]; one stream per cell.
pub fn nsr_table(q: f64, samples: usize, seed: u64) -> Result<Vec<NsrEntry>> {
    use crate::sde::{phase, StreamId};
    let mut out = Vec::new();
    let mut cell = 0u64;
    for &gamma_r in &NSR_GAMMAS {
        for &ratio in &NSR_RATIOS {
            for &s in &NSR_NODES {
                let mut rng = StreamId::new(seed, phase::NSR, cell).rng(0);
                let nsr = nsr_simulate(&NsrParams { ratio, gamma_r, q, s, samples }, &mut rng)?;
                out.push(NsrEntry { gamma_r, ratio, s, nsr });
                cell += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn gt_constant_examples() {
        assert_eq!(gt_constant(0.0, 1.0, 1.0), 0.0);
        assert_abs_diff_eq!(gt_constant(1.0, 1.0, 1.0), std::f64::consts::E - 1.0, epsilon = 1e-15);
        let qs: Vec<f64> = (0..20).map(|k| gt_constant(k as f64 * 0.3, 0.5, 1.0)).collect();
        assert!(qs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn erfinv_precision() {
        for k in -99..100 {
            let y = k as f64 / 100.0;
            let x = erfinv(y);
            assert!((erf(x) - y).abs() <= 1e-12 * y.abs().max(1e-3), "y = {y}");
        }
        assert_eq!(erfinv(0.0), 0.0);
    }

    #[test]
    fn extreme_cdf_values_and_round_trip() {
        assert_abs_diff_eq!(extreme_cdf(0.0, 1), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(extreme_cdf(0.0, 2), 0.25, epsilon = 1e-15);
        for &s in &[1u64, 2, 10, 1000, 100_000] {
            for &p in &[0.01, 0.5, 0.683, 0.955, 0.997] {
                let x = inverse_extreme_cdf(p, s).unwrap();
                assert!((extreme_cdf(x, s) - p).abs() <= 1e-10, "s={s} p={p}");
            }
        }
        assert!(inverse_extreme_cdf(1.0, 3).is_err());
        assert!(inverse_extreme_cdf(0.5, 0).is_err());
    }

    #[test]
    fn extreme_cdf_monotonicity() {
        for &s in &[1u64, 5, 50] {
            let v: Vec<f64> = (-30..30).map(|k| extreme_cdf(k as f64 * 0.1, s)).collect();
            assert!(v.windows(2).all(|w| w[1] >= w[0]));
        }
        for k in -20..20 {
            let x = k as f64 * 0.15;
            assert!(extreme_cdf(x, 4) < extreme_cdf(x, 3));
        }
    }

    #[test]
    fn extreme_quantile_matches_brute_force_maxima() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s = 100;
        let x = inverse_extreme_cdf(0.955, s).unwrap();
        let draws = 1_000_000 / s as usize * 10;
        let below = (0..draws)
            .filter(|_| (0..s).map(|_| rng.sample::<f64, _>(StandardNormal)).fold(f64::MIN, f64::max) < x)
            .count();
        let emp = below as f64 / draws as f64;
        assert!((emp - 0.955).abs() <= 0.01, "empirical {emp}");
    }

    fn params(gamma_r: f64, s: u64) -> GlobalErrorParams {
        GlobalErrorParams::new(gamma_r, 1.0, s, 2.0).unwrap()
    }

    #[test]
    fn a0_linear_in_epsilon() {
        let p = params(1.5, 60);
        let a = a0_from_epsilon(0.01, &p).unwrap();
        assert_eq!(a0_from_epsilon(0.02, &p).unwrap(), 2.0 * a);
        assert_abs_diff_eq!(epsilon_from_a0(a, &p), 0.01, epsilon = 1e-15);
        assert!(a0_from_epsilon(0.0, &p).is_err());
    }

    #[test]
    fn a0_decays_mildly_in_s() {
        let ratios: Vec<f64> = [10u64, 100, 1_000, 10_000, 100_000]
            .iter()
            .map(|&s| a0_from_epsilon(1.0, &params(1.5, s)).unwrap())
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]));
        assert!(ratios[0] / ratios[4] < 2.0, "{ratios:?}");
    }

    #[test]
    fn confidence_pairs() {
        assert_abs_diff_eq!(confidence_of(1.0), 0.683, epsilon = 1e-3);
        assert_abs_diff_eq!(confidence_of(2.0), 0.955, epsilon = 1e-3);
        assert_abs_diff_eq!(confidence_of(3.0), 0.997, epsilon = 1e-3);
    }

    #[test]
    fn gumbel_location_and_degenerate_case() {
        assert!(matches!(gumbel_params(2), Err(PddError::Degenerate(_))));
        assert!(gumbel_params(1).is_err());
        let ls: Vec<f64> = [3u64, 10, 100, 10_000].iter().map(|&s| gumbel_params(s).unwrap().0).collect();
        assert!(ls.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn gumbel_fits_large_maxima() {
        let s = 10_000;
        let (l, b) = gumbel_params(s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x: Vec<f64> = (0..100_000).map(|_| sample_extreme(s, &mut rng)).collect();
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        let ks = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = gumbel_cdf(v, l, b);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.05, "KS distance {ks}");
    }

    fn nsr(ratio: f64, gamma_r: f64, s: u64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        nsr_simulate(&NsrParams { ratio, gamma_r, q: 2.0, s, samples: 100_000 }, &mut rng).unwrap()
    }

    #[test]
    fn nsr_table_spot_values() {
        assert_abs_diff_eq!(nsr(0.0, 1.0, 10, 1), 0.54, epsilon = 0.02);
        assert_abs_diff_eq!(nsr(0.0, 1.0, 100_000, 2), 0.12, epsilon = 0.01);
        assert_abs_diff_eq!(nsr(100.0, 2.0, 10, 3), 0.0094, epsilon = 0.001);
    }

    #[test]
    fn nsr_zero_ratio_ignores_gamma_and_vanishes_for_large_ratio() {
        assert_abs_diff_eq!(nsr(0.0, 1.0, 100, 5), nsr(0.0, 2.0, 100, 5), epsilon = 1e-12);
        let sweep: Vec<f64> = [1.0, 10.0, 100.0, 1e3, 1e4].iter().map(|&r| nsr(r, 1.0, 100, 9)).collect();
        assert!(sweep.windows(2).all(|w| w[1] < w[0]));
        assert!(sweep[4] < 1e-4);
    }

    #[test]
    fn nsr_rejects_small_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = NsrParams { ratio: 1.0, gamma_r: 1.0, q: 2.0, s: 10, samples: 100 };
        assert!(nsr_simulate(&p, &mut rng).is_err());
    }

    #[test]
    fn nsr_table_is_full_and_deterministic() {
        let a = nsr_table(2.0, 10_000, 3).unwrap();
        assert_eq!(a.len(), 60);
        assert_eq!(a, nsr_table(2.0, 10_000, 3).unwrap());
    }
}
