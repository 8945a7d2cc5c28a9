//! Predicted correlations, costs and the cascade of tolerances.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{PddError, Result};
use crate::fitting::NodalConstants;
use crate::io::Header;

/// How the discretization term `|α̂ r/β̂| a₀` enters the predicted correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DiscretizationCorrection {
    /// Subtracted from ρ² as is.
    #[default]
    Absolute,
    /// Divided by `V̂[φ]` first, making it a variance fraction.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSettings {
    pub kappa: f64,
    pub delta: f64,
    /// Stop adding levels once the predicted speedup of the next one drops below this.
    pub stop_threshold: f64,
    pub correction: DiscretizationCorrection,
    /// Subdomain-solve cost per level, in integrator steps.
    pub pi: f64,
    /// Table-construction cost per control-variate level, in integrator steps.
    pub pi_tilde: f64,
    /// Upper end of the search interval as a multiple of the current tolerance.
    pub search_cap: f64,
    pub grid_points: usize,
    /// Longest cascade considered.
    pub max_levels: usize,
}

impl Default for ScheduleSettings {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            delta: 1.0,
            stop_threshold: 1.5,
            correction: DiscretizationCorrection::default(),
            pi: 0.0,
            pi_tilde: 0.0,
            search_cap: 1e3,
            grid_points: 200,
            max_levels: 10,
        }
    }
}

impl ScheduleSettings {
    fn exponent(&self) -> f64 {
        2.0 + 1.0 / self.delta
    }
}

fn uncorrected_rho2(a: f64, c: &NodalConstants) -> f64 {
    if !(c.v_phi > 0.0) {
        return 1.0;
    }
    let r2 = c.rho_phi_psi * c.rho_phi_psi;
    (1.0 - c.v_psi.max(0.0) * a * a / (4.0 * c.v_phi) * (1.0 - r2)).clamp(0.0, 1.0)
}

fn correction_term(a0: f64, rho: f64, c: &NodalConstants, kind: DiscretizationCorrection) -> f64 {
    if c.beta == 0.0 {
        return 0.0;
    }
    let t = (c.alpha * rho / c.beta).abs() * a0;
    match kind {
        DiscretizationCorrection::Absolute => t,
        DiscretizationCorrection::Relative if c.v_phi > 0.0 => t / c.v_phi,
        DiscretizationCorrection::Relative => 0.0,
    }
}

/// Predicted ρ²[φ_{h₀}, ξ_{h₀}(a)] for coarse tolerance `a` and fine tolerance `a0`.
pub fn sensitivity_rho2(a: f64, a0: f64, c: &NodalConstants, kind: DiscretizationCorrection) -> Result<f64> {
    if !(a0 > 0.0 && a > a0) {
        return Err(PddError::InvalidArgument(format!("need a > a0 > 0, got a = {a}, a0 = {a0}")));
    }
    let r2 = uncorrected_rho2(a, c);
    Ok((r2 - correction_term(a0, r2.sqrt(), c, kind)).clamp(0.0, 1.0))
}

/// `Σ K̂ V̂ / a^{2+1/δ}`.
pub fn plain_cost(a: f64, constants: &[NodalConstants], delta: f64) -> f64 {
    let p = 2.0 + 1.0 / delta;
    constants.iter().map(|c| c.k * c.v_phi.max(0.0)).sum::<f64>() / a.powf(p)
}

/// Cost of the fine stage of IterPDD(`a_prev`, `a`): the control-variate solves at `a_prev`.
pub fn fine_cost(a_prev: f64, a: f64, constants: &[NodalConstants], s: &ScheduleSettings) -> Result<f64> {
    let p = s.exponent();
    let mut total = 0.0;
    for c in constants {
        let residual = 1.0 - sensitivity_rho2(a, a_prev, c, s.correction)?;
        total += c.k * c.v_phi.max(0.0) * s.kappa * residual;
    }
    Ok(total / a_prev.powf(p))
}

/// Objective minimized when choosing the next coarser tolerance: coarse plain
/// solve at `a` plus the fine control-variate stage at `a_prev`.
pub fn predicted_iter_cost(a_prev: f64, a: f64, constants: &[NodalConstants], s: &ScheduleSettings) -> Result<f64> {
    Ok(fine_cost(a_prev, a, constants, s)? + plain_cost(a, constants, s.delta))
}

/// Mean over nodes of the predicted |ρ|.
pub fn predicted_mean_rho(a_prev: f64, a: f64, constants: &[NodalConstants], kind: DiscretizationCorrection) -> Result<f64> {
    let mut sum = 0.0;
    for c in constants {
        sum += sensitivity_rho2(a, a_prev, c, kind)?.sqrt();
    }
    Ok(sum / constants.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NextTolerance {
    pub a: f64,
    pub cost: f64,
    /// The minimizer sits on the upper end of the search interval.
    pub at_cap: bool,
}

/// Minimizes [`predicted_iter_cost`] over `(a_j, cap·a_j]` by a logarithmic grid
/// followed by golden-section refinement.
pub fn optimize_next(a_j: f64, constants: &[NodalConstants], s: &ScheduleSettings) -> Result<NextTolerance> {
    if !(a_j > 0.0) {
        return Err(PddError::InvalidArgument(format!("tolerance {a_j} must be positive")));
    }
    if constants.is_empty() {
        return Err(PddError::InvalidArgument("no nodal constants".into()));
    }
    let m = s.grid_points.max(3);
    let lo = a_j.ln();
    let hi = (a_j * s.search_cap).ln();
    let at = |k: usize| (lo + (hi - lo) * k as f64 / m as f64).exp();
    let f = |a: f64| predicted_iter_cost(a_j, a, constants, s);
    let mut best = (1, f64::INFINITY);
    for k in 1..=m {
        let v = f(at(k))?;
        if v < best.1 {
            best = (k, v);
        }
    }
    let (k, _) = best;
    let mut x0 = at(k - 1).ln();
    let mut x3 = at((k + 1).min(m)).ln();
    if k == 1 {
        // Stay strictly above a_j.
        x0 = lo + 1e-9 * (hi - lo);
    }
    if k == m {
        x3 = hi;
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = x3 - g * (x3 - x0);
    let mut x2 = x0 + g * (x3 - x0);
    let mut f1 = f(x1.exp())?;
    let mut f2 = f(x2.exp())?;
    while (x3 - x0) > 1e-3 * 0.5 {
        if f1 <= f2 {
            x3 = x2;
            x2 = x1;
            f2 = f1;
            x1 = x3 - g * (x3 - x0);
            f1 = f(x1.exp())?;
        } else {
            x0 = x1;
            x1 = x2;
            f1 = f2;
            x2 = x0 + g * (x3 - x0);
            f2 = f(x2.exp())?;
        }
    }
    let (mut a, mut cost) = if f1 <= f2 { (x1.exp(), f1) } else { (x2.exp(), f2) };
    let grid_best = at(k);
    if best.1 < cost {
        a = grid_best;
        cost = best.1;
    }
    let at_cap = k == m && (hi - a.ln()) < 1e-3;
    if at_cap {
        log::warn!("next tolerance after {a_j} sits at the search cap; the auxiliary variance looks degenerate");
    }
    Ok(NextTolerance { a, cost, at_cap })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleLevel {
    pub level: usize,
    pub a: f64,
    /// Plain cost for the coarsest level, fine control-variate cost otherwise.
    pub predicted_cost: f64,
    pub predicted_rho: Option<f64>,
    /// S(a_j, a_{j+1}).
    pub predicted_speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Ordered from the coarsest tolerance `a_J` down to `a_0`.
    pub levels: Vec<ScheduleLevel>,
    pub plain_cost_a0: f64,
    pub cumulative_speedup: f64,
    pub degenerate: bool,
}

impl Schedule {
    /// Number of control-variate levels.
    pub fn j(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn tolerances(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.a).collect()
    }

    pub fn a0(&self) -> f64 {
        self.levels.last().map(|l| l.a).unwrap_or(f64::NAN)
    }

    pub fn total_cost(&self) -> f64 {
        self.levels.iter().map(|l| l.predicted_cost).sum()
    }

    /// A cascade given by hand, with predictions filled in.
    pub fn from_tolerances(tolerances: &[f64], constants: &[NodalConstants], s: &ScheduleSettings) -> Result<Self> {
        if tolerances.is_empty() {
            return Err(PddError::InvalidArgument("empty cascade".into()));
        }
        if tolerances.windows(2).any(|w| !(w[0] > w[1])) || !(tolerances[tolerances.len() - 1] > 0.0) {
            return Err(PddError::InvalidArgument(format!("tolerances must decrease strictly to a positive a0: {tolerances:?}")));
        }
        let jmax = tolerances.len() - 1;
        let mut levels = Vec::with_capacity(tolerances.len());
        for (i, &a) in tolerances.iter().enumerate() {
            let level = jmax - i;
            if i == 0 {
                levels.push(ScheduleLevel {
                    level,
                    a,
                    predicted_cost: plain_cost(a, constants, s.delta) + s.pi,
                    predicted_rho: None,
                    predicted_speedup: None,
                });
            } else {
                let coarse = tolerances[i - 1];
                let fine = fine_cost(a, coarse, constants, s)? + s.pi + s.pi_tilde;
                let plain_coarse = plain_cost(coarse, constants, s.delta) + s.pi;
                let speedup = (plain_cost(a, constants, s.delta) + s.pi) / (plain_coarse + fine);
                levels.push(ScheduleLevel {
                    level,
                    a,
                    predicted_cost: fine,
                    predicted_rho: Some(predicted_mean_rho(a, coarse, constants, s.correction)?),
                    predicted_speedup: Some(speedup),
                });
            }
        }
        let a0 = tolerances[jmax];
        let plain_cost_a0 = plain_cost(a0, constants, s.delta) + s.pi;
        let mut sched = Schedule { levels, plain_cost_a0, cumulative_speedup: 1.0, degenerate: false };
        sched.cumulative_speedup = plain_cost_a0 / sched.total_cost();
        Ok(sched)
    }

    pub fn header(&self) -> Header {
        vec![
            ("a0".into(), self.a0().to_string()),
            ("levels".into(), self.j().to_string()),
            ("plain_cost_a0".into(), self.plain_cost_a0.to_string()),
            ("cumulative_speedup".into(), self.cumulative_speedup.to_string()),
            ("degenerate".into(), self.degenerate.to_string()),
        ]
    }

    pub fn write_csv(&self, path: &Path, extra: &Header) -> Result<()> {
        let mut h = self.header();
        h.extend(extra.iter().cloned());
        crate::io::write_csv(path, &self.levels, &h)
    }

    pub fn read_csv(path: &Path) -> Result<(Self, Header)> {
        let (levels, header): (Vec<ScheduleLevel>, Header) = crate::io::read_csv(path)?;
        if levels.is_empty() {
            return Err(PddError::Config(format!("{} holds no schedule levels", path.display())));
        }
        let num = |k: &str| -> Result<f64> {
            crate::io::header_value(&header, k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| PddError::Config(format!("schedule header lacks {k}")))
        };
        let sched = Schedule {
            levels,
            plain_cost_a0: num("plain_cost_a0")?,
            cumulative_speedup: num("cumulative_speedup")?,
            degenerate: crate::io::header_value(&header, "degenerate") == Some("true"),
        };
        Ok((sched, header))
    }
}

/// Builds the cascade upward from `a0` until the next level's predicted speedup
/// falls below `stop_threshold`.
pub fn build_schedule(a0: f64, constants: &[NodalConstants], s: &ScheduleSettings) -> Result<Schedule> {
    if !(a0 > 0.0) {
        return Err(PddError::InvalidArgument(format!("a0 = {a0} must be positive")));
    }
    if !(s.stop_threshold > 1.0) {
        return Err(PddError::InvalidArgument(format!("stop threshold {} must exceed 1", s.stop_threshold)));
    }
    let mut tol = vec![a0];
    let mut degenerate = false;
    while tol.len() <= s.max_levels {
        let a_j = *tol.last().unwrap();
        let next = optimize_next(a_j, constants, s)?;
        let fine = fine_cost(a_j, next.a, constants, s)? + s.pi + s.pi_tilde;
        let speedup = (plain_cost(a_j, constants, s.delta) + s.pi) / (plain_cost(next.a, constants, s.delta) + s.pi + fine);
        if !(speedup >= s.stop_threshold) {
            break;
        }
        degenerate |= next.at_cap;
        tol.push(next.a);
    }
    tol.reverse();
    let mut sched = Schedule::from_tolerances(&tol, constants, s)?;
    sched.degenerate = degenerate;
    Ok(sched)
}
