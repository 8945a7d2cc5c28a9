//! Fast estimation of the nodal constants from a cloud of cheap simulations.
//!
//! For each node, `M̂` batches of `N̂` paths are run at equispaced timesteps.
//! Sample means are regressed on `h^δ` by ordinary least squares (normal noise,
//! identity link) and sample variances by a gamma GLM with identity link; the
//! intercepts estimate the `h → 0` limits and the slopes the bias coefficients.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{PddError, Result};
use crate::geometry::Point;
use crate::io::Header;
use crate::problem::EllipticProblem;
use crate::sde::{phase, run_batch, BatchStats, GradientField, StreamId, Tables, TrajectoryParams};

/// A straight-line fit `y ≈ intercept + slope·x` with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub se_intercept: f64,
    pub se_slope: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_design(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(PddError::Fit(format!("{} abscissae for {} responses", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(PddError::Fit(format!("need at least 3 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(PddError::Fit("non-finite data".into()));
    }
    Ok(())
}

/// Weighted least squares for a line. Returns (b0, b1, inverse of XᵀWX as [s00, s01, s11]).
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64, [f64; 3])> {
    let (mut sw, mut swx, mut swxx, mut swy, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        sw += wi;
        swx += wi * xi;
        swxx += wi * xi * xi;
        swy += wi * yi;
        swxy += wi * xi * yi;
    }
    // Centre to avoid cancellation in the determinant.
    let xbar = swx / sw;
    let sxx = swxx - swx * xbar;
    if !(sxx > 1e-14 * swxx.abs().max(f64::MIN_POSITIVE)) {
        return Err(PddError::Fit("rank-deficient design: abscissae are all equal".into()));
    }
    let slope = (swxy - xbar * swy) / sxx;
    let intercept = (swy - slope * swx) / sw;
    let inv = [1.0 / sw + xbar * xbar / sxx, -xbar / sxx, 1.0 / sxx];
    Ok((intercept, slope, inv))
}

/// Ordinary least squares with residual-based standard errors.
pub fn fit_normal_identity(x: &[f64], y: &[f64]) -> Result<LineFit> {
    check_design(x, y)?;
    let w = vec![1.0; x.len()];
    let (b0, b1, inv) = weighted_line(x, y, &w)?;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - b0 - b1 * a).powi(2)).sum();
    let s2 = rss / (x.len() - 2) as f64;
    Ok(LineFit {
        intercept: b0,
        slope: b1,
        se_intercept: (s2 * inv[0]).sqrt(),
        se_slope: (s2 * inv[2]).sqrt(),
        iterations: 1,
        converged: true,
    })
}

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_TOLERANCE: f64 = 1e-10;

/// Gamma GLM with identity link, fitted by iteratively reweighted least squares.
///
/// With `shape = Some(k)` the dispersion is fixed at `1/k`; otherwise it is the
/// Pearson estimate. Falls back to least squares (with a warning) if the
/// iteration does not converge.
pub fn fit_gamma_identity(x: &[f64], y: &[f64], shape: Option<f64>) -> Result<LineFit> {
    check_design(x, y)?;
    if y.iter().all(|v| *v == 0.0) {
        return Ok(LineFit {
            intercept: 0.0,
            slope: 0.0,
            se_intercept: 0.0,
            se_slope: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    if y.iter().any(|v| *v <= 0.0) {
        return Err(PddError::Fit("gamma responses must be positive".into()));
    }
    if let Some(k) = shape {
        if !(k > 0.0) {
            return Err(PddError::Fit(format!("gamma shape must be positive, got {k}")));
        }
    }
    let n = x.len();
    let ones = vec![1.0; n];
    let (mut b0, mut b1, _) = weighted_line(x, y, &ones)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut w = vec![0.0; n];
    for it in 1..=IRLS_MAX_ITER {
        iterations = it;
        for (wi, xi) in w.iter_mut().zip(x) {
            let mu = b0 + b1 * xi;
            if !(mu > 0.0) {
                return Err(PddError::Fit(format!("negative fitted mean {mu:.3e} at x = {xi:.3e}")));
            }
            *wi = 1.0 / (mu * mu);
        }
        // Identity link: the working response is y itself.
        let (n0, n1, _) = weighted_line(x, y, &w)?;
        let change = ((n0 - b0).abs() + (n1 - b1).abs()) / (n0.abs() + n1.abs()).max(f64::MIN_POSITIVE);
        b0 = n0;
        b1 = n1;
        if change <= IRLS_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("gamma IRLS did not converge in {IRLS_MAX_ITER} iterations; using least squares");
        let mut f = fit_normal_identity(x, y)?;
        f.iterations = iterations;
        f.converged = false;
        return Ok(f);
    }
    let mut pearson = 0.0;
    for ((wi, xi), yi) in w.iter_mut().zip(x).zip(y) {
        let mu = b0 + b1 * xi;
        if !(mu > 0.0) {
            return Err(PddError::Fit(format!("negative fitted mean {mu:.3e} at x = {xi:.3e}")));
        }
        *wi = 1.0 / (mu * mu);
        pearson += ((yi - mu) / mu).powi(2);
    }
    let dispersion = match shape {
        Some(k) => 1.0 / k,
        None => pearson / (n - 2) as f64,
    };
    let (_, _, inv) = weighted_line(x, y, &w)?;
    Ok(LineFit {
        intercept: b0,
        slope: b1,
        se_intercept: (dispersion * inv[0]).sqrt(),
        se_slope: (dispersion * inv[2]).sqrt(),
        iterations,
        converged: true,
    })
}

/// Fitted constants of one node, each with a standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodalConstants {
    pub node: usize,
    pub e_phi: f64,
    pub se_e_phi: f64,
    pub beta: f64,
    pub se_beta: f64,
    pub v_phi: f64,
    pub se_v_phi: f64,
    pub alpha: f64,
    pub se_alpha: f64,
    pub e_tau: f64,
    pub se_e_tau: f64,
    /// Slope of the exit-time fit; stored for reference only.
    pub b_tau: f64,
    pub k: f64,
    pub se_k: f64,
    pub e_psi: f64,
    pub cov_phi_psi: f64,
    pub se_cov_phi_psi: f64,
    pub v_psi: f64,
    pub se_v_psi: f64,
    pub rho_phi_psi: f64,
    pub se_rho_phi_psi: f64,
}

/// `K = 4 q² E[τ] (2|β|)^{1/δ}`: cost of a balanced plain solve is `K V / a^{2+1/δ}`.
pub fn cost_constant(q: f64, e_tau: f64, beta: f64, delta: f64) -> f64 {
    4.0 * q * q * e_tau * (2.0 * beta.abs()).powf(1.0 / delta)
}

/// Cloud of timesteps and per-step statistics used for one node.
#[derive(Debug, Clone)]
pub struct FitCloud {
    pub h: Vec<f64>,
    pub stats: Vec<BatchStats>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    /// Number of timesteps `M̂`.
    pub m_hat: usize,
    /// Paths per timestep `N̂`.
    pub n_hat: u64,
    pub h_min: f64,
    pub h_max: f64,
    pub q: f64,
    pub delta: f64,
    pub seed: u64,
    pub max_steps: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            m_hat: 100,
            n_hat: 1000,
            h_min: 1e-3,
            h_max: 1e-2,
            q: 2.0,
            delta: 1.0,
            seed: 0,
            max_steps: crate::sde::DEFAULT_MAX_STEPS,
        }
    }
}

impl FitSettings {
    pub fn validate(&self) -> Result<()> {
        if self.m_hat < 3 {
            return Err(PddError::InvalidArgument(format!("M̂ must be at least 3, got {}", self.m_hat)));
        }
        if self.n_hat < 30 {
            return Err(PddError::InvalidArgument(format!("N̂ must be at least 30, got {}", self.n_hat)));
        }
        if !(self.h_min > 0.0 && self.h_min < self.h_max) {
            return Err(PddError::InvalidArgument(format!(
                "need 0 < h_min < h_max, got [{}, {}]",
                self.h_min, self.h_max
            )));
        }
        if !(self.delta > 0.0) || !(self.q > 0.0) {
            return Err(PddError::InvalidArgument("q and delta must be positive".into()));
        }
        Ok(())
    }

    /// Equispaced timesteps from `h_max` down to `h_min`.
    pub fn timesteps(&self) -> Vec<f64> {
        (0..self.m_hat)
            .map(|j| self.h_max - (self.h_max - self.h_min) * j as f64 / (self.m_hat - 1) as f64)
            .collect()
    }
}

/// Runs the simulation cloud of one node. Paths of all timesteps are distinct
/// trajectories of the node's fitting stream.
pub fn simulate_cloud(
    node: usize,
    x0: &Point,
    problem: &dyn EllipticProblem,
    psi: Option<&dyn GradientField>,
    settings: &FitSettings,
) -> Result<FitCloud> {
    settings.validate()?;
    let stream = StreamId::new(settings.seed, phase::FIT, node as u64);
    let h = settings.timesteps();
    let tables = Tables { cv: None, psi };
    let stats = h
        .iter()
        .enumerate()
        .map(|(j, &hj)| {
            let params = TrajectoryParams {
                max_steps: settings.max_steps,
                ..TrajectoryParams::new(hj)
            };
            run_batch(x0, &params, problem, tables, settings.n_hat, stream, j as u64 * settings.n_hat)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FitCloud { h, stats })
}

impl FitCloud {
    /// Total integrator steps spent on the cloud.
    pub fn steps(&self) -> u64 {
        self.stats.iter().map(|s| s.steps).sum()
    }
}

/// Regresses a simulation cloud into nodal constants.
pub fn constants_from_cloud(node: usize, cloud: &FitCloud, q: f64, delta: f64) -> Result<NodalConstants> {
    let x: Vec<f64> = cloud.h.iter().map(|h| h.powf(delta)).collect();
    let col = |f: &dyn Fn(&BatchStats) -> f64| cloud.stats.iter().map(f).collect::<Vec<f64>>();
    let with = |what: &str, r: Result<LineFit>| r.map_err(|e| PddError::Fit(format!("{what}: {e}")));

    let phi = with("E[phi]", fit_normal_identity(&x, &col(&|s| s.mean_phi())))?;
    let tau = with("E[tau]", fit_normal_identity(&x, &col(&|s| s.mean_tau())))?;
    let psi_mean = with("E[psi]", fit_normal_identity(&x, &col(&|s| s.mean_psi())))?;
    let psi_phi = with("E[psi phi]", fit_normal_identity(&x, &col(&|s| s.mean_psi_phi())))?;
    let v_phi = with("V[phi]", fit_gamma_identity(&x, &col(&|s| s.var_phi()), None))?;
    let v_psi = with("V[psi]", fit_gamma_identity(&x, &col(&|s| s.var_psi()), None))?;

    let cov = psi_phi.intercept - psi_mean.intercept * phi.intercept;
    let se_cov = (psi_phi.se_intercept.powi(2)
        + (phi.intercept * psi_mean.se_intercept).powi(2)
        + (psi_mean.intercept * phi.se_intercept).powi(2))
    .sqrt();
    let (rho, se_rho) = if v_phi.intercept > 0.0 && v_psi.intercept > 0.0 {
        let s = (v_phi.intercept * v_psi.intercept).sqrt();
        let r = cov / s;
        let rel = ((se_cov / cov.abs().max(f64::MIN_POSITIVE)).powi(2)
            + 0.25 * (v_phi.se_intercept / v_phi.intercept).powi(2)
            + 0.25 * (v_psi.se_intercept / v_psi.intercept).powi(2))
        .sqrt();
        (r.clamp(-1.0, 1.0), (r.abs() * rel).min(1.0))
    } else {
        (0.0, 0.0)
    };
    let k = cost_constant(q, tau.intercept, phi.slope, delta);
    let se_k = k * ((tau.se_intercept / tau.intercept.abs().max(f64::MIN_POSITIVE)).powi(2)
        + (phi.se_slope / (delta * phi.slope.abs().max(f64::MIN_POSITIVE))).powi(2))
    .sqrt();
    Ok(NodalConstants {
        node,
        e_phi: phi.intercept,
        se_e_phi: phi.se_intercept,
        beta: phi.slope,
        se_beta: phi.se_slope,
        v_phi: v_phi.intercept,
        se_v_phi: v_phi.se_intercept,
        alpha: v_phi.slope,
        se_alpha: v_phi.se_slope,
        e_tau: tau.intercept,
        se_e_tau: tau.se_intercept,
        b_tau: tau.slope,
        k,
        se_k,
        e_psi: psi_mean.intercept,
        cov_phi_psi: cov,
        se_cov_phi_psi: se_cov,
        v_psi: v_psi.intercept,
        se_v_psi: v_psi.se_intercept,
        rho_phi_psi: rho,
        se_rho_phi_psi: se_rho,
    })
}

pub fn fit_node_constants(
    node: usize,
    x0: &Point,
    problem: &dyn EllipticProblem,
    psi: Option<&dyn GradientField>,
    settings: &FitSettings,
) -> Result<(NodalConstants, u64)> {
    let cloud = simulate_cloud(node, x0, problem, psi, settings).map_err(|e| e.at_node(node))?;
    let c = constants_from_cloud(node, &cloud, settings.q, settings.delta).map_err(|e| e.at_node(node))?;
    Ok((c, cloud.steps()))
}

/// Weak order and step-cost ratio shared by all nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalConstants {
    pub delta: f64,
    pub kappa: f64,
}

impl Default for GlobalConstants {
    fn default() -> Self {
        Self { delta: 1.0, kappa: 1.0 }
    }
}

/// Median over `repeats` of the ratio of wall time per step with `with` tables to
/// wall time per step with `without` tables, each timed over at least `min_steps` steps.
/// Never below 1.
pub fn estimate_kappa(
    x0: &Point,
    problem: &dyn EllipticProblem,
    h: f64,
    with: Tables<'_>,
    without: Tables<'_>,
    min_steps: u64,
    repeats: usize,
) -> Result<f64> {
    let params = TrajectoryParams::new(h);
    let time_per_step = |tables: Tables<'_>, rep: usize| -> Result<f64> {
        let stream = StreamId::new(rep as u64, phase::KAPPA, 0);
        let mut steps = 0u64;
        let mut first = 0u64;
        let t0 = Instant::now();
        while steps < min_steps {
            let s = run_batch(x0, &params, problem, tables, 256, stream, first)?;
            steps += s.steps;
            first += 256;
        }
        Ok(t0.elapsed().as_secs_f64() / steps as f64)
    };
    let mut ratios = Vec::with_capacity(repeats.max(1));
    for rep in 0..repeats.max(1) {
        let plain = time_per_step(without, rep)?;
        let cv = time_per_step(with, rep)?;
        ratios.push(cv / plain);
    }
    ratios.sort_by(f64::total_cmp);
    Ok(ratios[ratios.len() / 2].max(1.0))
}

/// Writes constants as CSV preceded by `# key=value` comment lines.
pub fn write_constants_csv(path: &Path, constants: &[NodalConstants], header: &Header) -> Result<()> {
    crate::io::write_csv(path, constants, header)
}

/// Reads a constants CSV; returns the rows and the `# key=value` header pairs.
pub fn read_constants_csv(path: &Path) -> Result<(Vec<NodalConstants>, Header)> {
    crate::io::read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Disk;
    use crate::problem::{DiskData, DiskProblem};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Gamma, Normal};

    fn grid(m: usize) -> Vec<f64> {
        (0..m).map(|j| 0.01 - 0.009 * j as f64 / (m - 1) as f64).collect()
    }

    #[test]
    fn ols_noiseless_and_constant() {
        let x = grid(10);
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let f = fit_normal_identity(&x, &y).unwrap();
        assert_abs_diff_eq!(f.intercept, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.slope, 3.0, epsilon = 1e-10);
        let f = fit_normal_identity(&x, &[4.5; 10]).unwrap();
        assert_abs_diff_eq!(f.intercept, 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f.slope, 0.0, epsilon = 1e-9);
        assert!(fit_normal_identity(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_normal_identity(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gamma_noiseless_and_constant() {
        let x = grid(10);
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 0.5 * v).collect();
        let f = fit_gamma_identity(&x, &y, None).unwrap();
        assert_abs_diff_eq!(f.intercept, 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(f.slope, 0.5, epsilon = 1e-8);
        let f = fit_gamma_identity(&x, &[3.0; 10], Some(10.0)).unwrap();
        assert_abs_diff_eq!(f.slope, 0.0, epsilon = 1e-9);
        let f = fit_gamma_identity(&x, &[0.0; 10], None).unwrap();
        assert_eq!((f.intercept, f.slope), (0.0, 0.0));
    }

    #[test]
    fn gamma_rejects_negative_fitted_mean() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [5.0, 0.1, 0.1, 0.1];
        // The least-squares start is 3.53 − 1.47x, negative at x = 3.
        let r = fit_gamma_identity(&x, &y, None);
        assert!(matches!(r, Err(PddError::Fit(_))), "{r:?}");
    }

    proptest! {
        #[test]
        fn fits_are_scale_equivariant(s in 0.01f64..100.0, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = grid(20);
            let y: Vec<f64> = x.iter().map(|v| 3.0 + 20.0 * v + rng.random_range(-0.1..0.1)).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * s).collect();
            for (a, b) in [
                (fit_normal_identity(&x, &y).unwrap(), fit_normal_identity(&x, &ys).unwrap()),
                (fit_gamma_identity(&x, &y, None).unwrap(), fit_gamma_identity(&x, &ys, None).unwrap()),
            ] {
                prop_assert!((b.intercept - s * a.intercept).abs() <= 1e-9 * (s * a.intercept).abs());
                prop_assert!((b.slope - s * a.slope).abs() <= 1e-7 * (s * a.slope).abs().max(1.0));
            }
        }
    }

    #[test]
    fn normal_model_recovery() {
        // E[η_h] ~ 1 + 5 h + N(0, V/N̂).
        let x = grid(100);
        let noise = Normal::new(0.0, (4.0f64 / 1000.0).sqrt()).unwrap();
        let mut hits = 0;
        for t in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
            let y: Vec<f64> = x.iter().map(|v| 1.0 + 5.0 * v + rng.sample(noise)).collect();
            let f = fit_normal_identity(&x, &y).unwrap();
            if (f.intercept - 1.0).abs() <= 3.0 * f.se_intercept {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn gamma_model_recovery() {
        // V̂_h ~ B h + Γ((N̂−1)/2, 2V/(N̂−1)) with V = 4, B = 1, N̂ = 1000.
        let x = grid(100);
        let n_hat = 1000.0;
        let g = Gamma::new((n_hat - 1.0) / 2.0, 2.0 * 4.0 / (n_hat - 1.0)).unwrap();
        let mut hits = 0;
        for t in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + t);
            let y: Vec<f64> = x.iter().map(|v| 1.0 * v + rng.sample(g)).collect();
            let f = fit_gamma_identity(&x, &y, Some((n_hat - 1.0) / 2.0)).unwrap();
            if (f.intercept - 4.0).abs() <= 3.0 * f.se_intercept {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn gamma_fit_on_normal_noise() {
        let x = grid(60);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 30.0 * v + rng.sample(Normal::new(0.0, 0.05).unwrap())).collect();
        let f = fit_gamma_identity(&x, &y, None).unwrap();
        assert!((f.intercept - 2.0).abs() <= 3.0 * f.se_intercept);
        assert!((f.slope - 30.0).abs() <= 3.0 * f.se_slope);
    }

    #[test]
    fn constant_boundary_data_gives_no_bias() {
        let p = DiskProblem::new(Disk::unit(), DiskData::Constant(1.0));
        let settings = FitSettings {
            m_hat: 5,
            n_hat: 100,
            ..FitSettings::default()
        };
        let (c, steps) = fit_node_constants(0, &Point::new(0.2, 0.0), &p, None, &settings).unwrap();
        assert!(steps > 0);
        assert_abs_diff_eq!(c.e_phi, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.beta, 0.0, epsilon = 1e-9);
        assert_eq!(c.v_phi, 0.0);
    }

    #[test]
    fn exit_time_intercept_matches_oracle() {
        let p = DiskProblem::new(Disk::unit(), DiskData::ExitTime);
        let settings = FitSettings {
            m_hat: 10,
            n_hat: 1000,
            ..FitSettings::default()
        };
        let (c, _) = fit_node_constants(0, &Point::zeros(), &p, None, &settings).unwrap();
        assert!((c.e_tau - 0.25).abs() <= 3.0 * c.se_e_tau, "{} ± {}", c.e_tau, c.se_e_tau);
    }

    #[test]
    fn kappa_of_identical_setups_is_near_one() {
        let p = DiskProblem::new(Disk::unit(), DiskData::ExitTime);
        let k = estimate_kappa(&Point::zeros(), &p, 1e-3, Tables::none(), Tables::none(), 100_000, 5).unwrap();
        assert!((1.0..=1.1).contains(&k), "{k}");
    }

    #[test]
    fn constants_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let c = NodalConstants {
            node: 3,
            e_phi: 1.5,
            se_e_phi: 0.01,
            beta: -12.25,
            se_beta: 1.0,
            v_phi: 4.9,
            se_v_phi: 0.1,
            alpha: 3.0,
            se_alpha: 0.5,
            e_tau: 0.1,
            se_e_tau: 0.001,
            b_tau: 0.2,
            k: cost_constant(2.0, 0.1, -12.25, 1.0),
            se_k: 1.0,
            e_psi: 0.0,
            cov_phi_psi: -0.3,
            se_cov_phi_psi: 0.05,
            v_psi: 0.8,
            se_v_psi: 0.02,
            rho_phi_psi: -0.15,
            se_rho_phi_psi: 0.03,
        };
        let header = vec![("q".to_string(), "2".to_string())];
        write_constants_csv(&path, &[c], &header).unwrap();
        let (rows, h) = read_constants_csv(&path).unwrap();
        assert_eq!(rows, vec![c]);
        assert_eq!(h, header);
    }
}
