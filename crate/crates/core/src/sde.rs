//! Euler–Maruyama paths of the Feynman–Kac system with a shrunk-boundary exit test.
//!
//! Along each path
//!
//! ```text
//! X_{k+1} = X_k + h b(X_k) + σ(X_k) ΔW_k
//! Y_{k+1} = Y_k (1 + h c(X_k))
//! Z_{k+1} = Z_k − h Y_k f(X_k)
//! ξ_{k+1} = ξ_k − Y_k (σᵀ∇ũ)(X_k) · ΔW_k
//! ```
//!
//! and `ψ̄` is accumulated like `ξ` with the gradient of the error-propagation
//! function. The path stops at the first `k` with `d(X_k) > −0.5826 ‖σᵀN‖ √h`;
//! then `X_τ` is the projection of `X_k` on the boundary and
//! `φ = g(X_τ) Y_τ + Z_τ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{PddError, Result};
use crate::geometry::{Point, Region};
use crate::problem::EllipticProblem;
use crate::stats::Moments;
use crate::subdomain::GradientTable;

pub const GOBET_MENOZZI_SHRINK: f64 = 0.5826;
pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

/// Trajectories per block in [`run_batch`]; blocks are merged in index order.
const BLOCK: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryParams {
    pub h: f64,
    /// Boundary shrinking coefficient; 0 gives the naive exit test.
    pub shrink: f64,
    pub max_steps: u64,
}

impl TrajectoryParams {
    pub fn new(h: f64) -> Self {
        Self {
            h,
            shrink: GOBET_MENOZZI_SHRINK,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(PddError::InvalidArgument(format!("timestep must be positive, got {}", self.h)));
        }
        if self.max_steps == 0 {
            return Err(PddError::InvalidArgument("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// A gradient field usable as a control variate.
pub trait GradientField: Sync {
    fn gradient(&self, x: &Point) -> Point;
}

impl GradientField for GradientTable {
    #[inline]
    fn gradient(&self, x: &Point) -> Point {
        self.sample(x)
    }
}

/// Wraps a closure as a [`GradientField`].
pub struct FnGradient<F>(pub F);

impl<F: Fn(&Point) -> Point + Sync> GradientField for FnGradient<F> {
    #[inline]
    fn gradient(&self, x: &Point) -> Point {
        (self.0)(x)
    }
}

/// Optional gradient fields for `ξ` (the rough solution) and `ψ̄` (the error propagation function).
#[derive(Clone, Copy, Default)]
pub struct Tables<'a> {
    pub cv: Option<&'a dyn GradientField>,
    pub psi: Option<&'a dyn GradientField>,
}

impl<'a> Tables<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn cv(cv: &'a dyn GradientField) -> Self {
        Self { cv: Some(cv), psi: None }
    }

    pub fn psi(psi: &'a dyn GradientField) -> Self {
        Self { cv: None, psi: Some(psi) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOutcome {
    pub phi: f64,
    pub xi: f64,
    pub psi_bar: f64,
    pub tau: f64,
    pub steps: u64,
    /// The path hit `max_steps` before exiting.
    pub flagged: bool,
}

pub fn simulate_trajectory<R: Rng + ?Sized>(
    x0: &Point,
    params: &TrajectoryParams,
    problem: &dyn EllipticProblem,
    tables: Tables<'_>,
    rng: &mut R,
) -> TrajectoryOutcome {
    let domain = problem.domain();
    let h = params.h;
    let sqrt_h = h.sqrt();
    let (mut y, mut z, mut xi, mut psi) = (1.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut x = *x0;
    let mut k = 0u64;
    loop {
        let q = domain.boundary_query(&x);
        let loc = problem.local(&x);
        let threshold = -params.shrink * (loc.sigma.transpose() * q.normal).norm() * sqrt_h;
        if q.distance > threshold {
            return TrajectoryOutcome {
                phi: problem.boundary_value(&q.projection) * y + z,
                xi,
                psi_bar: psi,
                tau: k as f64 * h,
                steps: k,
                flagged: false,
            };
        }
        if k >= params.max_steps {
            return TrajectoryOutcome {
                phi: f64::NAN,
                xi,
                psi_bar: psi,
                tau: k as f64 * h,
                steps: k,
                flagged: true,
            };
        }
        let dw = Point::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * sqrt_h;
        if let Some(cv) = tables.cv {
            xi -= y * (loc.sigma.transpose() * cv.gradient(&x)).dot(&dw);
        }
        if let Some(ps) = tables.psi {
            psi -= y * (loc.sigma.transpose() * ps.gradient(&x)).dot(&dw);
        }
        z -= h * y * loc.source;
        y *= 1.0 + h * loc.potential;
        x += h * loc.drift + loc.sigma * dw;
        k += 1;
    }
}

/// Identifies an independent family of random streams: one per (seed, phase, node).
/// Trajectory `t` of the family uses ChaCha stream `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub seed: u64,
    pub phase: u64,
    pub node: u64,
}

/// Phase identifiers used for substream derivation.
pub mod phase {
    pub const FIT: u64 = 1;
    pub const PLAIN: u64 = 2;
    pub const CONTROL_VARIATE: u64 = 3;
    pub const TOP_UP: u64 = 4;
    pub const KAPPA: u64 = 5;
    pub const PILOT: u64 = 6;
    pub const NSR: u64 = 7;
    pub const NOISE: u64 = 8;
    /// Level `j` of a cascade uses `LEVEL_BASE + j` so levels never share streams.
    pub const LEVEL_BASE: u64 = 1 << 20;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamId {
    pub fn new(seed: u64, phase: u64, node: u64) -> Self {
        Self { seed, phase, node }
    }

    /// The generator of trajectory `trajectory` in this family.
    pub fn rng(&self, trajectory: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let words = [
            splitmix64(self.seed),
            splitmix64(self.seed ^ splitmix64(self.phase)),
            splitmix64(self.seed ^ splitmix64(self.phase ^ splitmix64(self.node.wrapping_add(1)))),
            splitmix64(self.node ^ 0xD1B5_4A32_D192_ED03),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(trajectory);
        rng
    }
}

/// Indices into [`BatchStats::moments`].
pub const PHI: usize = 0;
pub const XI: usize = 1;
pub const PSI: usize = 2;
pub const TAU: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    /// Moments of (φ, ξ, ψ̄, τ) over non-flagged paths.
    pub moments: Moments<4>,
    pub flagged: u64,
    /// Integrator steps taken by all paths, flagged ones included.
    pub steps: u64,
}

impl BatchStats {
    pub fn empty() -> Self {
        Self {
            moments: Moments::new(),
            flagged: 0,
            steps: 0,
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.moments.merge(&other.moments);
        self.flagged += other.flagged;
        self.steps += other.steps;
    }

    pub fn n(&self) -> u64 {
        self.moments.count
    }

    pub fn mean_phi(&self) -> f64 {
        self.moments.mean[PHI]
    }

    pub fn var_phi(&self) -> f64 {
        self.moments.variance(PHI)
    }

    pub fn mean_xi(&self) -> f64 {
        self.moments.mean[XI]
    }

    pub fn var_xi(&self) -> f64 {
        self.moments.variance(XI)
    }

    pub fn cov_phi_xi(&self) -> f64 {
        self.moments.covariance(PHI, XI)
    }

    pub fn mean_psi(&self) -> f64 {
        self.moments.mean[PSI]
    }

    pub fn var_psi(&self) -> f64 {
        self.moments.variance(PSI)
    }

    pub fn cov_phi_psi(&self) -> f64 {
        self.moments.covariance(PHI, PSI)
    }

    /// Sample mean of the product `ψ̄ φ`.
    pub fn mean_psi_phi(&self) -> f64 {
        let n = self.n() as f64;
        let cov_biased = if n > 0.0 { self.moments.comoment[PHI][PSI] / n } else { 0.0 };
        cov_biased + self.mean_phi() * self.mean_psi()
    }

    pub fn mean_tau(&self) -> f64 {
        self.moments.mean[TAU]
    }

    /// Mean of `φ + ξ`.
    pub fn mean_cv(&self) -> f64 {
        self.mean_phi() + self.mean_xi()
    }

    /// Sample variance of `φ + ξ`.
    pub fn var_cv(&self) -> f64 {
        (self.var_phi() + self.var_xi() + 2.0 * self.cov_phi_xi()).max(0.0)
    }

    pub fn rho_phi_xi(&self) -> Result<f64> {
        self.moments.correlation(PHI, XI)
    }

    pub fn rho_phi_psi(&self) -> Result<f64> {
        self.moments.correlation(PHI, PSI)
    }
}

/// Runs trajectories `first .. first + n` of `stream` and returns their moments.
///
/// Trajectories are processed in fixed blocks whose accumulators are merged in
/// block order, so the result does not depend on the number of threads.
pub fn run_batch(
    x0: &Point,
    params: &TrajectoryParams,
    problem: &dyn EllipticProblem,
    tables: Tables<'_>,
    n: u64,
    stream: StreamId,
    first: u64,
) -> Result<BatchStats> {
    params.validate()?;
    if n < 2 {
        return Err(PddError::InvalidArgument(format!("batch needs at least 2 paths, got {n}")));
    }
    if !problem.domain().contains(x0) {
        return Err(PddError::OutsideDomain { x: x0.x, y: x0.y });
    }
    let blocks = n.div_ceil(BLOCK);
    let parts: Vec<BatchStats> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = BatchStats::empty();
            let lo = first + b * BLOCK;
            let hi = (lo + BLOCK).min(first + n);
            for t in lo..hi {
                let mut rng = stream.rng(t);
                let o = simulate_trajectory(x0, params, problem, tables, &mut rng);
                acc.steps += o.steps;
                if o.flagged {
                    acc.flagged += 1;
                } else {
                    acc.moments.push([o.phi, o.xi, o.psi_bar, o.tau]);
                }
            }
            acc
        })
        .collect();
    let mut total = BatchStats::empty();
    for p in &parts {
        total.merge(p);
    }
    if total.flagged > 0 {
        log::warn!(
            "{} of {n} paths from ({}, {}) hit the {}-step cap",
            total.flagged,
            x0.x,
            x0.y,
            params.max_steps
        );
    }
    if total.n() == 0 {
        return Err(PddError::AllPathsFlagged(n as usize));
    }
    Ok(total)
}
