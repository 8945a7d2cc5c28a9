//! PlainPDD and IterPDD pipelines with cost accounting and error reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{PddError, Result};
use crate::fitting::{constants_from_cloud, simulate_cloud, FitSettings, NodalConstants};
use crate::geometry::{build_partition, Partition, Point, Rectangle};
use crate::interp::{default_shape, interface_overshoot};
use crate::nodal::{solve_node, CvCombination, Mode, NodalEstimate, NodalSettings};
use crate::problem::EllipticProblem;
use crate::scheduler::{sensitivity_rho2, Schedule, ScheduleSettings};
use crate::sde::{phase, GradientField, StreamId};
use crate::subdomain::{
    gradient_table, solve_error_propagation, solve_partition, GradientTable, GridField, InterfaceBases, PartitionOperators,
};

/// Levels whose mean realized ρ² falls below this are redone without control variates.
pub const FALLBACK_RHO2: f64 = 0.05;

/// Problem, partition and the deterministic machinery shared by every level.
pub struct Pdd {
    pub problem: Arc<dyn EllipticProblem>,
    pub partition: Partition,
    pub operators: PartitionOperators,
    pub bases: InterfaceBases,
    pub grid_spacing: f64,
    pub shape: Option<f64>,
}

impl Pdd {
    pub fn new(
        problem: Arc<dyn EllipticProblem>,
        m: usize,
        nodes_per_interface: usize,
        grid_spacing: f64,
        shape: Option<f64>,
    ) -> Result<Self> {
        let rect = problem
            .domain()
            .as_rectangle()
            .ok_or_else(|| PddError::InvalidArgument("domain decomposition needs a rectangular domain".into()))?;
        let partition = build_partition(rect, m, nodes_per_interface)?;
        let operators = PartitionOperators::new(&partition, problem.as_ref(), grid_spacing)?;
        let bases = InterfaceBases::new(&partition, shape)?;
        Ok(Self { problem, partition, operators, bases, grid_spacing, shape })
    }

    pub fn domain(&self) -> Rectangle {
        self.partition.domain
    }

    /// Largest overshoot constant over the interfaces.
    pub fn gamma_r(&self) -> Result<f64> {
        let mut g: f64 = 1.0;
        for iface in &self.partition.interfaces {
            let ys: Vec<f64> = iface.nodes.iter().map(|&id| self.partition.nodes[id].position[1]).collect();
            let shape = self.shape.unwrap_or_else(|| default_shape(iface.length(), ys.len()));
            g = g.max(interface_overshoot(iface.ymin, iface.ymax, &ys, shape)?.gamma);
        }
        Ok(g)
    }

    /// Gradient table of the error-propagation function for nodal bias signs `signs`.
    pub fn psi_table(&self, signs: &[f64]) -> Result<GradientTable> {
        let fields = solve_error_propagation(&self.partition, &self.operators, &self.bases, signs, None, 1.0)?;
        Ok(gradient_table(&self.partition, &fields))
    }

    /// Fits the constants of every node.
    ///
    /// The error-propagation function needs the signs of the biases, so the cloud
    /// is run twice on the same trajectories: first to get `β̂`, then with `ψ̄`.
    pub fn fit(&self, settings: &FitSettings) -> Result<FitOutcome> {
        let problem = self.problem.as_ref();
        let first: Vec<(NodalConstants, u64)> = self
            .partition
            .nodes
            .par_iter()
            .map(|nd| {
                let cloud = simulate_cloud(nd.id, &nd.point(), problem, None, settings).map_err(|e| e.at_node(nd.id))?;
                let c = constants_from_cloud(nd.id, &cloud, settings.q, settings.delta).map_err(|e| e.at_node(nd.id))?;
                Ok((c, cloud.steps()))
            })
            .collect::<Result<_>>()?;
        let signs: Vec<f64> = first.iter().map(|(c, _)| if c.beta < 0.0 { -1.0 } else { 1.0 }).collect();
        let psi = self.psi_table(&signs)?;
        let second: Vec<(NodalConstants, u64)> = self
            .partition
            .nodes
            .par_iter()
            .map(|nd| {
                let cloud = simulate_cloud(nd.id, &nd.point(), problem, Some(&psi as &dyn GradientField), settings)
                    .map_err(|e| e.at_node(nd.id))?;
                let c = constants_from_cloud(nd.id, &cloud, settings.q, settings.delta).map_err(|e| e.at_node(nd.id))?;
                Ok((c, cloud.steps()))
            })
            .collect::<Result<_>>()?;
        let steps = first.iter().chain(&second).map(|(_, s)| s).sum();
        let mut constants: Vec<NodalConstants> = second.into_iter().map(|(c, _)| c).collect();
        for (c, s) in constants.iter_mut().zip(&signs) {
            if (c.beta < 0.0) != (*s < 0.0) {
                log::warn!("node {}: bias sign changed between fitting passes", c.node);
            }
        }
        constants.sort_by_key(|c| c.node);
        Ok(FitOutcome { constants, steps, signs })
    }

    fn check_constants(&self, constants: &[NodalConstants]) -> Result<()> {
        if constants.len() != self.partition.n() || constants.iter().enumerate().any(|(i, c)| c.node != i) {
            return Err(PddError::InvalidArgument(format!(
                "constants must list nodes 0..{} in order",
                self.partition.n()
            )));
        }
        Ok(())
    }

    /// Builds the PDD solution from given nodal values.
    pub fn solution_from_values(&self, a: f64, values: Vec<f64>) -> Result<(PddSolution, Overheads)> {
        let problem = self.problem.as_ref();
        let t0 = Instant::now();
        let data = self.bases.fit(&self.partition, &values, &|p| problem.boundary_value(p))?;
        let outer = |p: &Point| problem.boundary_value(p);
        let fields = solve_partition(&self.partition, &self.operators, &data, &outer, true)?;
        let pi = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let gradients = gradient_table(&self.partition, &fields);
        let pi_tilde = t1.elapsed().as_secs_f64();
        Ok((
            PddSolution { a, values, estimates: Vec::new(), fields, gradients, mode: LevelMode::Plain },
            Overheads { pi_seconds: pi, pi_tilde_seconds: pi_tilde },
        ))
    }

    fn solve_nodes(
        &self,
        a: f64,
        level: usize,
        constants: &[NodalConstants],
        cv: Option<(&GradientTable, f64)>,
        opts: &RunOptions,
    ) -> Result<Vec<NodalEstimate>> {
        let problem = self.problem.as_ref();
        self.partition
            .nodes
            .par_iter()
            .map(|nd| {
                let c = &constants[nd.id];
                let stream = StreamId::new(opts.nodal.seed, phase::LEVEL_BASE + level as u64, nd.id as u64);
                let mode = match cv {
                    None => Mode::Plain,
                    Some((table, coarse)) => {
                        let r2 = sensitivity_rho2(coarse, a, c, opts.schedule.correction)?;
                        Mode::ControlVariate {
                            table,
                            predicted_variance: c.v_phi.max(0.0) * (1.0 - r2),
                            combination: opts.combination,
                        }
                    }
                };
                solve_node(nd.id, &nd.point(), a, c, problem, mode, &opts.nodal, stream)
            })
            .collect()
    }

    fn solve_level(
        &self,
        a: f64,
        level: usize,
        constants: &[NodalConstants],
        cv: Option<(&GradientTable, f64)>,
        opts: &RunOptions,
    ) -> Result<(PddSolution, LevelCost)> {
        let t0 = Instant::now();
        let mut estimates = self.solve_nodes(a, level, constants, cv, opts)?;
        let mut mode = if cv.is_some() { LevelMode::ControlVariate } else { LevelMode::Plain };
        let mut cv_steps = 0;
        let mut plain_steps = 0;
        let mut mean_rho = None;
        if cv.is_some() {
            cv_steps = estimates.iter().map(|e| e.work).sum();
            let rhos: Vec<f64> = estimates.iter().map(|e| e.rho.unwrap_or(0.0)).collect();
            let mean_r2 = rhos.iter().map(|r| r * r).sum::<f64>() / rhos.len() as f64;
            mean_rho = Some(rhos.iter().map(|r| r.abs()).sum::<f64>() / rhos.len() as f64);
            if mean_r2 < opts.fallback_rho2 {
                log::warn!("level a = {a}: mean realized rho^2 = {mean_r2:.3}; redoing without control variates");
                estimates = self.solve_nodes(a, level, constants, None, opts)?;
                plain_steps = estimates.iter().map(|e| e.work).sum();
                mode = LevelMode::Fallback;
            }
        } else {
            plain_steps = estimates.iter().map(|e| e.work).sum();
        }
        let nodal_seconds = t0.elapsed().as_secs_f64();
        let values: Vec<f64> = estimates.iter().map(|e| e.value).collect();
        let (mut sol, overheads) = self.solution_from_values(a, values)?;
        sol.estimates = estimates;
        sol.mode = mode;
        let weighted = plain_steps as f64 + opts.schedule.kappa * cv_steps as f64;
        let seconds_per_step = if weighted > 0.0 { nodal_seconds / weighted } else { 0.0 };
        let to_steps = |s: f64| if seconds_per_step > 0.0 { s / seconds_per_step } else { 0.0 };
        let cost = LevelCost {
            level,
            a,
            coarse_a: cv.map(|(_, c)| c),
            mode,
            plain_steps,
            cv_steps,
            weighted_steps: weighted,
            mean_abs_rho: mean_rho,
            mean_variance: sol.estimates.iter().map(|e| e.variance).sum::<f64>() / sol.estimates.len() as f64,
            nodal_seconds,
            pi_seconds: overheads.pi_seconds,
            pi_tilde_seconds: overheads.pi_tilde_seconds,
            pi_steps: to_steps(overheads.pi_seconds),
            pi_tilde_steps: if cv.is_some() { to_steps(overheads.pi_tilde_seconds) } else { 0.0 },
        };
        Ok((sol, cost))
    }

    /// PlainPDD(a): every node without variance reduction.
    pub fn run_plain(&self, a: f64, constants: &[NodalConstants], opts: &RunOptions) -> Result<(PddSolution, CostLedger)> {
        self.check_constants(constants)?;
        let (sol, cost) = self.solve_level(a, 0, constants, None, opts).map_err(|e| e.at_level(a))?;
        Ok((sol, CostLedger::new(opts.schedule.kappa, vec![cost])))
    }

    /// IterPDD along `schedule`, coarsest level first. Returns every level's solution.
    pub fn run_iter(
        &self,
        schedule: &Schedule,
        constants: &[NodalConstants],
        opts: &RunOptions,
    ) -> Result<(Vec<PddSolution>, CostLedger)> {
        self.check_constants(constants)?;
        let tol = schedule.tolerances();
        if tol.is_empty() || tol.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(PddError::InvalidArgument(format!("invalid schedule {tol:?}")));
        }
        let jmax = tol.len() - 1;
        let mut solutions: Vec<PddSolution> = Vec::with_capacity(tol.len());
        let mut costs = Vec::with_capacity(tol.len());
        let zeroth = if opts.fitted_zeroth_level { self.fitted_level(constants, opts)? } else { None };
        for (i, &a) in tol.iter().enumerate() {
            let level = jmax - i;
            let cv = match (solutions.last(), &zeroth) {
                (Some(prev), _) => Some((&prev.gradients, prev.a)),
                (None, Some(z)) if z.a > a => Some((&z.gradients, z.a)),
                _ => None,
            };
            let (sol, cost) = self.solve_level(a, level, constants, cv, opts).map_err(|e| e.at_level(a))?;
            solutions.push(sol);
            costs.push(cost);
        }
        Ok((solutions, CostLedger::new(opts.schedule.kappa, costs)))
    }

    /// Solution built from the fitted means; its tolerance is `2q` times the mean standard error.
    fn fitted_level(&self, constants: &[NodalConstants], opts: &RunOptions) -> Result<Option<PddSolution>> {
        let values: Vec<f64> = constants.iter().map(|c| c.e_phi).collect();
        let se = constants.iter().map(|c| c.se_e_phi).sum::<f64>() / constants.len() as f64;
        let a = 2.0 * opts.nodal.q * se;
        if !(a > 0.0) {
            return Ok(None);
        }
        Ok(Some(self.solution_from_values(a, values)?.0))
    }

    /// Largest disagreement between neighbouring strips along the interfaces.
    pub fn interface_jump(&self, fields: &[GridField], probes: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, iface) in self.partition.interfaces.iter().enumerate() {
            for k in 0..probes {
                let y = iface.ymin + (iface.ymax - iface.ymin) * k as f64 / (probes - 1).max(1) as f64;
                let p = Point::new(iface.x, y);
                worst = worst.max((fields[j].sample(&p) - fields[j + 1].sample(&p)).abs());
            }
        }
        worst
    }

    /// Error diagnostics against the exact solution; `None` if the problem has none.
    pub fn error_report(&self, sol: &PddSolution, probes_per_unit: usize) -> Option<ErrorReport> {
        let p = self.problem.as_ref();
        p.exact_solution(&Point::new(self.domain().xmin, self.domain().ymin))?;
        let exact = |x: &Point| p.exact_solution(x).unwrap_or(f64::NAN);
        Some(error_report(&self.partition, sol, &exact, probes_per_unit))
    }
}

/// Diagnostics of one solution against `exact`.
pub fn error_report(partition: &Partition, sol: &PddSolution, exact: &dyn Fn(&Point) -> f64, probes_per_unit: usize) -> ErrorReport {
    let nodal: Vec<f64> = partition
        .nodes
        .iter()
        .map(|nd| (sol.values[nd.id] - exact(&nd.point())).abs())
        .collect();
    let mean_nodal_error = nodal.iter().sum::<f64>() / nodal.len().max(1) as f64;
    let max_nodal_error = nodal.iter().fold(0.0, |m: f64, v| m.max(*v));
    let d = partition.domain;
    let count = |len: f64| ((len * probes_per_unit as f64).ceil() as usize).max(2);
    let mut sup_interface: f64 = 0.0;
    for (j, iface) in partition.interfaces.iter().enumerate() {
        let k = count(iface.length());
        for i in 0..=k {
            let p = Point::new(iface.x, iface.ymin + iface.length() * i as f64 / k as f64);
            sup_interface = sup_interface.max((sol.fields[j].sample(&p) - exact(&p)).abs());
        }
    }
    let (nx, ny) = (count(d.width()), count(d.height()));
    let mut sup_domain: f64 = 0.0;
    let mut sup_grad: f64 = 0.0;
    for j in 0..=ny {
        for i in 0..=nx {
            let p = Point::new(
                d.xmin + d.width() * i as f64 / nx as f64,
                d.ymin + d.height() * j as f64 / ny as f64,
            );
            let k = partition.locate_unchecked(p.x);
            sup_domain = sup_domain.max((sol.fields[k].sample(&p) - exact(&p)).abs());
            sup_grad = sup_grad.max(sol.gradients.sample(&p).norm());
        }
    }
    ErrorReport {
        a: sol.a,
        mean_nodal_error,
        max_nodal_error,
        sup_interface_error: sup_interface,
        sup_domain_error: sup_domain,
        sup_gradient_norm: sup_grad,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub a: f64,
    pub mean_nodal_error: f64,
    pub max_nodal_error: f64,
    pub sup_interface_error: f64,
    pub sup_domain_error: f64,
    pub sup_gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub constants: Vec<NodalConstants>,
    /// Steps of both fitting passes.
    pub steps: u64,
    /// Bias signs used for the error-propagation function.
    pub signs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub nodal: NodalSettings,
    /// Supplies κ̂ and the discretization correction used to size control-variate batches.
    pub schedule: ScheduleSettings,
    pub combination: CvCombination,
    pub fallback_rho2: f64,
    pub fitted_zeroth_level: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            nodal: NodalSettings::default(),
            schedule: ScheduleSettings::default(),
            combination: CvCombination::Sum,
            fallback_rho2: FALLBACK_RHO2,
            fitted_zeroth_level: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelMode {
    Plain,
    ControlVariate,
    /// Control variates were tried and discarded.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overheads {
    pub pi_seconds: f64,
    pub pi_tilde_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PddSolution {
    pub a: f64,
    /// Nodal values indexed by node id.
    pub values: Vec<f64>,
    /// Empty when the values were supplied directly.
    pub estimates: Vec<NodalEstimate>,
    pub fields: Vec<GridField>,
    pub gradients: GradientTable,
    pub mode: LevelMode,
}

impl PddSolution {
    pub fn evaluate(&self, partition: &Partition, x: &Point) -> f64 {
        self.fields[partition.locate_unchecked(x.x)].sample(x)
    }

    pub fn nodal_rows(&self, partition: &Partition, exact: Option<&dyn Fn(&Point) -> f64>) -> Vec<NodalRow> {
        partition
            .nodes
            .iter()
            .map(|nd| {
                let e = self.estimates.get(nd.id);
                NodalRow {
                    node: nd.id,
                    x: nd.position[0],
                    y: nd.position[1],
                    value: self.values[nd.id],
                    exact: exact.map(|f| f(&nd.point())),
                    variance: e.map(|e| e.variance),
                    var_phi: e.map(|e| e.var_phi),
                    paths: e.map(|e| e.n),
                    h: e.map(|e| e.h),
                    ci_half_width: e.map(|e| e.ci_half_width),
                    steps: e.map(|e| e.work),
                    rho: e.and_then(|e| e.rho),
                    topped_up: e.map(|e| e.topped_up),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalRow {
    pub node: usize,
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub exact: Option<f64>,
    pub variance: Option<f64>,
    pub var_phi: Option<f64>,
    pub paths: Option<u64>,
    pub h: Option<f64>,
    pub ci_half_width: Option<f64>,
    pub steps: Option<u64>,
    pub rho: Option<f64>,
    pub topped_up: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCost {
    pub level: usize,
    pub a: f64,
    pub coarse_a: Option<f64>,
    pub mode: LevelMode,
    pub plain_steps: u64,
    pub cv_steps: u64,
    /// `plain_steps + κ cv_steps`.
    pub weighted_steps: f64,
    pub mean_abs_rho: Option<f64>,
    pub mean_variance: f64,
    pub nodal_seconds: f64,
    pub pi_seconds: f64,
    pub pi_tilde_seconds: f64,
    /// Subdomain solves in step equivalents.
    pub pi_steps: f64,
    /// Gradient-table construction in step equivalents (control-variate levels only).
    pub pi_tilde_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub kappa: f64,
    pub levels: Vec<LevelCost>,
    pub fitting_steps: u64,
    pub total_plain_steps: u64,
    pub total_cv_steps: u64,
    pub total_weighted_steps: f64,
    pub total_overhead_steps: f64,
}

impl CostLedger {
    pub fn new(kappa: f64, levels: Vec<LevelCost>) -> Self {
        let mut l = Self {
            kappa,
            levels,
            fitting_steps: 0,
            total_plain_steps: 0,
            total_cv_steps: 0,
            total_weighted_steps: 0.0,
            total_overhead_steps: 0.0,
        };
        l.recompute();
        l
    }

    fn recompute(&mut self) {
        self.total_plain_steps = self.levels.iter().map(|c| c.plain_steps).sum();
        self.total_cv_steps = self.levels.iter().map(|c| c.cv_steps).sum();
        self.total_weighted_steps = self.levels.iter().map(|c| c.weighted_steps).sum();
        self.total_overhead_steps = self.levels.iter().map(|c| c.pi_steps + c.pi_tilde_steps).sum();
    }

    /// Totals match the sums of their parts exactly.
    pub fn is_conserved(&self) -> bool {
        let mut c = self.clone();
        c.recompute();
        c.total_plain_steps == self.total_plain_steps
            && c.total_cv_steps == self.total_cv_steps
            && c.total_weighted_steps == self.total_weighted_steps
            && c.total_overhead_steps == self.total_overhead_steps
            && self
                .levels
                .iter()
                .all(|l| l.weighted_steps == l.plain_steps as f64 + self.kappa * l.cv_steps as f64)
    }

    /// Observed speedup of this run over `plain` in weighted steps.
    pub fn speedup_over(&self, plain: &CostLedger) -> f64 {
        plain.total_weighted_steps / self.total_weighted_steps
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::StripProblem;
    use approx::assert_abs_diff_eq;

    fn small() -> Pdd {
        let p = Arc::new(StripProblem::new(Rectangle::new(0.0, 2.0, 0.0, 1.0).unwrap()));
        Pdd::new(p, 2, 4, 0.02, None).unwrap()
    }

    #[test]
    fn injected_exact_values_leave_only_solver_error() {
        let pdd = small();
        let values: Vec<f64> = pdd.partition.nodes.iter().map(|n| StripProblem::exact_u(&n.point())).collect();
        let (sol, _) = pdd.solution_from_values(0.0, values).unwrap();
        let r = pdd.error_report(&sol, 50).unwrap();
        assert_eq!(r.mean_nodal_error, 0.0);
        assert!(r.sup_domain_error < 0.1, "{r:?}");
        assert!(pdd.interface_jump(&sol.fields, 100) <= 1e-9);
    }

    #[test]
    fn ledger_conservation_and_speedup() {
        let mk = |level, plain, cv| LevelCost {
            level,
            a: 0.1,
            coarse_a: None,
            mode: LevelMode::Plain,
            plain_steps: plain,
            cv_steps: cv,
            weighted_steps: plain as f64 + 1.8 * cv as f64,
            mean_abs_rho: None,
            mean_variance: 1.0,
            nodal_seconds: 0.0,
            pi_seconds: 0.0,
            pi_tilde_seconds: 0.0,
            pi_steps: 3.0,
            pi_tilde_steps: 0.5,
        };
        let l = CostLedger::new(1.8, vec![mk(1, 1000, 0), mk(0, 0, 777)]);
        assert!(l.is_conserved());
        assert_eq!(l.total_weighted_steps, 1000.0 + 1.8 * 777.0);
        let p = CostLedger::new(1.8, vec![mk(0, 50_000, 0)]);
        assert_abs_diff_eq!(l.speedup_over(&p), 50_000.0 / (1000.0 + 1.8 * 777.0), epsilon = 1e-12);
        let mut bad = l.clone();
        bad.total_cv_steps += 1;
        assert!(!bad.is_conserved());
    }

    #[test]
    fn constants_must_match_nodes() {
        let pdd = small();
        assert!(pdd.run_plain(0.5, &[], &RunOptions::default()).is_err());
    }
}
