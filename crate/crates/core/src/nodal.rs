//! Balanced Monte Carlo solves at interfacial nodes.

use serde::{Deserialize, Serialize};

use crate::error::{PddError, Result};
use crate::fitting::NodalConstants;
use crate::geometry::Point;
use crate::problem::EllipticProblem;
use crate::sde::{run_batch, BatchStats, GradientField, StreamId, Tables, TrajectoryParams, DEFAULT_MAX_STEPS};

pub const N_MIN: u64 = 100;

/// Path count and timestep balancing statistical error and bias at `a/2` each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancedParams {
    pub a: f64,
    pub q: f64,
    pub n: u64,
    pub h: f64,
}

/// `N = ⌈4q²V/a²⌉` (at least [`N_MIN`]) and `h = (a/(2|β|))^{1/δ}`.
pub fn balanced_parameters(a: f64, q: f64, v_phi: f64, beta_abs: f64, delta: f64) -> Result<BalancedParams> {
    if !(a > 0.0 && q > 0.0 && beta_abs > 0.0 && delta > 0.0) {
        return Err(PddError::InvalidArgument(format!(
            "balanced parameters need positive a, q, |beta|, delta; got ({a}, {q}, {beta_abs}, {delta})"
        )));
    }
    if !(v_phi >= 0.0 && v_phi.is_finite()) {
        return Err(PddError::InvalidArgument(format!("variance {v_phi} must be non-negative")));
    }
    Ok(BalancedParams {
        a,
        q,
        n: path_count(a, q, v_phi),
        h: (a / (2.0 * beta_abs)).powf(1.0 / delta),
    })
}

fn path_count(a: f64, q: f64, v: f64) -> u64 {
    let n = (4.0 * q * q * v / (a * a)).ceil();
    if n.is_finite() {
        (n as u64).max(N_MIN)
    } else {
        u64::MAX
    }
}

/// How the control variate enters the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CvCombination {
    /// `φ + ξ`.
    #[default]
    Sum,
    /// `φ + γ̂ξ` with `γ̂ = −Cov[φ, ξ]/V[ξ]` from the same sample.
    Fitted,
}

#[derive(Clone, Copy)]
pub enum Mode<'a> {
    Plain,
    ControlVariate {
        table: &'a dyn GradientField,
        /// Expected variance of the combined score, used to size the first batch.
        predicted_variance: f64,
        combination: CvCombination,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodalSettings {
    pub q: f64,
    pub delta: f64,
    /// Upper bound on the timestep.
    pub h_max: f64,
    pub max_steps: u64,
    /// Multiplies the predicted variance in control-variate mode.
    pub safety: f64,
    pub top_up: bool,
    pub seed: u64,
}

impl Default for NodalSettings {
    fn default() -> Self {
        Self {
            q: 2.0,
            delta: 1.0,
            h_max: f64::INFINITY,
            max_steps: DEFAULT_MAX_STEPS,
            safety: 1.0,
            top_up: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodalEstimate {
    pub node: usize,
    pub value: f64,
    /// Sample variance of the score actually averaged.
    pub variance: f64,
    pub n: u64,
    pub h: f64,
    pub ci_half_width: f64,
    /// Integrator steps, flagged paths included.
    pub work: u64,
    pub flagged: u64,
    /// Realized correlation of `φ` and `ξ` in control-variate mode.
    pub rho: Option<f64>,
    pub var_phi: f64,
    pub topped_up: bool,
}

fn timestep(a: f64, beta: f64, settings: &NodalSettings) -> f64 {
    let h = (a / (2.0 * beta.abs())).powf(1.0 / settings.delta);
    if h.is_finite() {
        h.min(settings.h_max)
    } else {
        settings.h_max
    }
}

/// Solves one node to tolerance `a` using paths of `stream` from trajectory 0.
pub fn solve_node(
    node: usize,
    x0: &Point,
    a: f64,
    constants: &NodalConstants,
    problem: &dyn EllipticProblem,
    mode: Mode<'_>,
    settings: &NodalSettings,
    stream: StreamId,
) -> Result<NodalEstimate> {
    if !(a > 0.0) {
        return Err(PddError::InvalidArgument(format!("tolerance {a} must be positive")));
    }
    let h = timestep(a, constants.beta, settings);
    if !h.is_finite() {
        return Err(PddError::InvalidArgument(format!(
            "node {node}: zero bias slope needs a finite h_max"
        )));
    }
    let params = TrajectoryParams {
        max_steps: settings.max_steps,
        ..TrajectoryParams::new(h)
    };
    let q = settings.q;
    let run = |tables: Tables<'_>, n: u64, first: u64| {
        run_batch(x0, &params, problem, tables, n, stream, first).map_err(|e| e.at_node(node))
    };
    match mode {
        Mode::Plain => {
            let n = path_count(a, q, constants.v_phi.max(0.0));
            let s = run(Tables::none(), n, 0)?;
            let v = s.var_phi();
            Ok(NodalEstimate {
                node,
                value: s.mean_phi(),
                variance: v,
                n: s.n(),
                h,
                ci_half_width: q * (v / s.n() as f64).sqrt(),
                work: s.steps,
                flagged: s.flagged,
                rho: None,
                var_phi: v,
                topped_up: false,
            })
        }
        Mode::ControlVariate { table, predicted_variance, combination } => {
            let tables = Tables::cv(table);
            let n = path_count(a, q, (predicted_variance * settings.safety).max(0.0));
            let mut s = run(tables, n, 0)?;
            let mut topped_up = false;
            if settings.top_up {
                let needed = path_count(a, q, combined_variance(&s, combination));
                if needed > s.n() {
                    let extra = run(tables, needed - s.n(), n)?;
                    s.merge(&extra);
                    topped_up = true;
                }
            }
            let (value, v) = combine(&s, combination);
            Ok(NodalEstimate {
                node,
                value,
                variance: v,
                n: s.n(),
                h,
                ci_half_width: q * (v / s.n() as f64).sqrt(),
                work: s.steps,
                flagged: s.flagged,
                rho: s.rho_phi_xi().ok(),
                var_phi: s.var_phi(),
                topped_up,
            })
        }
    }
}

fn fitted_gamma(s: &BatchStats) -> f64 {
    let vx = s.var_xi();
    if vx > 0.0 {
        -s.cov_phi_xi() / vx
    } else {
        0.0
    }
}

fn combined_variance(s: &BatchStats, c: CvCombination) -> f64 {
    combine(s, c).1
}

/// Point estimate and sample variance of the combined score.
pub fn combine(s: &BatchStats, c: CvCombination) -> (f64, f64) {
    match c {
        CvCombination::Sum => (s.mean_cv(), s.var_cv()),
        CvCombination::Fitted => {
            let g = fitted_gamma(s);
            let v = s.var_phi() + g * g * s.var_xi() + 2.0 * g * s.cov_phi_xi();
            (s.mean_phi() + g * s.mean_xi(), v.max(0.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Disk, Rectangle};
    use crate::problem::{DiskData, DiskProblem, StripProblem};
    use crate::sde::{phase, FnGradient};
    use approx::assert_abs_diff_eq;

    #[test]
    fn balanced_examples() {
        let p = balanced_parameters(0.1, 2.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(p.n, 1600);
        assert_abs_diff_eq!(p.h, 0.05, epsilon = 1e-15);
        let p = balanced_parameters(0.05, 2.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(p.n, 6400);
        assert_abs_diff_eq!(p.h, 0.025, epsilon = 1e-15);
        let p = balanced_parameters(0.1, 2.0, 1.0, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(p.h, 0.0025, epsilon = 1e-15);
        assert_eq!(balanced_parameters(0.1, 2.0, 0.0, 1.0, 1.0).unwrap().n, N_MIN);
        assert!(balanced_parameters(0.0, 2.0, 1.0, 1.0, 1.0).is_err());
        assert!(balanced_parameters(0.1, 2.0, 1.0, 0.0, 1.0).is_err());
        assert!(balanced_parameters(0.1, 2.0, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn balanced_ci_never_exceeds_half_tolerance() {
        for &v in &[1e-6, 0.3, 1.0, 17.0] {
            for &a in &[0.01, 0.1, 0.7] {
                let p = balanced_parameters(a, 2.0, v, 3.0, 1.0).unwrap();
                assert!(2.0 * (v / p.n as f64).sqrt() <= a / 2.0 + 1e-15);
            }
        }
    }

    fn constants(v_phi: f64, beta: f64) -> NodalConstants {
        NodalConstants {
            node: 0,
            e_phi: 0.0,
            se_e_phi: 0.0,
            beta,
            se_beta: 0.0,
            v_phi,
            se_v_phi: 0.0,
            alpha: 0.0,
            se_alpha: 0.0,
            e_tau: 0.1,
            se_e_tau: 0.0,
            b_tau: 0.0,
            k: 0.0,
            se_k: 0.0,
            e_psi: 0.0,
            cov_phi_psi: 0.0,
            se_cov_phi_psi: 0.0,
            v_psi: 0.0,
            se_v_psi: 0.0,
            rho_phi_psi: 0.0,
            se_rho_phi_psi: 0.0,
        }
    }

    #[test]
    fn constant_data_clamps_to_minimum_paths() {
        let p = DiskProblem::new(Disk::unit(), DiskData::Constant(2.0));
        let settings = NodalSettings { h_max: 0.01, ..Default::default() };
        let e = solve_node(0, &Point::zeros(), 0.1, &constants(0.0, 0.0), &p, Mode::Plain, &settings, StreamId::new(0, phase::PLAIN, 0))
            .unwrap();
        assert_eq!(e.n, N_MIN);
        assert_eq!(e.value, 2.0);
        assert_eq!(e.h, 0.01);
        assert!(solve_node(0, &Point::zeros(), 0.1, &constants(0.0, 0.0), &p, Mode::Plain, &NodalSettings::default(), StreamId::new(0, 2, 0))
            .is_err());
    }

    #[test]
    fn exact_control_variate_beats_plain() {
        let p = StripProblem::new(Rectangle::new(0.0, 2.0, 0.0, 1.0).unwrap());
        let x0 = Point::new(1.0, 0.5);
        let c = constants(7.0, 9.0);
        let settings = NodalSettings { h_max: 2e-3, ..Default::default() };
        let plain = solve_node(0, &x0, 0.2, &c, &p, Mode::Plain, &settings, StreamId::new(1, phase::PLAIN, 0)).unwrap();
        let grad = FnGradient(|x: &Point| StripProblem::exact_grad_u(x));
        for combination in [CvCombination::Sum, CvCombination::Fitted] {
            let mode = Mode::ControlVariate { table: &grad, predicted_variance: 0.2, combination };
            let cv = solve_node(0, &x0, 0.2, &c, &p, mode, &settings, StreamId::new(1, phase::CONTROL_VARIATE, 0)).unwrap();
            assert!(cv.variance < 0.2 * plain.variance, "{} vs {}", cv.variance, plain.variance);
            assert!(cv.rho.unwrap() < -0.9);
            let exact = StripProblem::exact_u(&x0);
            assert!((cv.value - exact).abs() < 0.2, "{} vs {exact}", cv.value);
        }
    }

    #[test]
    fn top_up_restores_confidence_interval() {
        let p = StripProblem::new(Rectangle::new(0.0, 2.0, 0.0, 1.0).unwrap());
        let x0 = Point::new(1.0, 0.5);
        let grad = FnGradient(|x: &Point| 0.5 * StripProblem::exact_grad_u(x));
        // A badly optimistic prediction forces the second batch.
        let mode = Mode::ControlVariate { table: &grad, predicted_variance: 1e-6, combination: CvCombination::Sum };
        let e = solve_node(0, &x0, 0.2, &constants(7.0, 9.0), &p, mode, &NodalSettings::default(), StreamId::new(4, 3, 0)).unwrap();
        assert!(e.topped_up);
        assert!(e.n > N_MIN);
    }

    #[test]
    fn sum_and_fitted_agree_for_exact_gradient() {
        let mut s = BatchStats::empty();
        for k in 0..100 {
            let e = (k as f64 * 0.37).sin();
            s.moments.push([1.0 + e, -e, 0.0, 0.0]);
        }
        let (a, va) = combine(&s, CvCombination::Sum);
        let (b, vb) = combine(&s, CvCombination::Fitted);
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        assert_abs_diff_eq!(va, vb, epsilon = 1e-12);
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-12);
    }
}
