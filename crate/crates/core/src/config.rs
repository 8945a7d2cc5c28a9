//! Flat `key = value` run configuration with command-line overrides.

use std::path::{Path, PathBuf};

use crate::error::{PddError, Result};
use crate::error_analysis::{a0_from_epsilon, GlobalErrorParams};
use crate::fitting::FitSettings;
use crate::nodal::NodalSettings;
use crate::orchestrator::{RunOptions, FALLBACK_RHO2};
use crate::problem::{problem_by_name, EllipticProblem, DEFAULT_STRIP_DOMAIN};
use crate::scheduler::{DiscretizationCorrection, ScheduleSettings};
use crate::sde::DEFAULT_MAX_STEPS;

/// A measured value or a fixed one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting {
    Auto,
    Fixed(f64),
}

impl Setting {
    fn parse(key: &str, v: &str) -> Result<Self> {
        if v.eq_ignore_ascii_case("auto") {
            Ok(Setting::Auto)
        } else {
            Ok(Setting::Fixed(parse_num(key, v)?))
        }
    }

    fn render(&self) -> String {
        match self {
            Setting::Auto => "auto".into(),
            Setting::Fixed(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub domain: Option<[f64; 4]>,
    pub m: usize,
    pub nodes_per_interface: usize,
    pub grid_spacing: f64,
    pub shape: Option<f64>,
    pub q: f64,
    pub delta: f64,
    pub a0: Option<f64>,
    pub eps: Option<f64>,
    pub gamma_r: Option<Setting>,
    pub q_max: Option<f64>,
    pub s: Option<u64>,
    pub fit_m_hat: usize,
    pub fit_n_hat: u64,
    pub fit_h_min: f64,
    pub fit_h_max: f64,
    pub stop_threshold: f64,
    pub kappa: Setting,
    pub correction: DiscretizationCorrection,
    pub fallback_rho2: f64,
    pub max_steps: u64,
    pub seed: u64,
    /// 0 uses every core.
    pub threads: usize,
    pub out: PathBuf,
    pub plain: bool,
    /// Constants CSV to reuse instead of fitting.
    pub constants: Option<PathBuf>,
    /// Schedule CSV to reuse instead of building one.
    pub schedule: Option<PathBuf>,
    pub nsr_samples: usize,
    pub sweep_points: usize,
    pub sweep_a1_max: f64,
    pub write_fields: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "paper-sec6".into(),
            domain: None,
            m: 4,
            nodes_per_interface: 6,
            grid_spacing: 0.01,
            shape: None,
            q: 2.0,
            delta: 1.0,
            a0: None,
            eps: None,
            gamma_r: None,
            q_max: None,
            s: None,
            fit_m_hat: 100,
            fit_n_hat: 1000,
            fit_h_min: 1e-3,
            fit_h_max: 1e-2,
            stop_threshold: 1.5,
            kappa: Setting::Fixed(1.8),
            correction: DiscretizationCorrection::Absolute,
            fallback_rho2: FALLBACK_RHO2,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
            threads: 0,
            out: PathBuf::from("out"),
            plain: false,
            constants: None,
            schedule: None,
            nsr_samples: 100_000,
            sweep_points: 60,
            sweep_a1_max: 2.0,
            write_fields: false,
        }
    }
}

fn bad(key: &str, v: &str, what: &str) -> PddError {
    PddError::Config(format!("{key} = '{v}': {what}"))
}

fn parse_num(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| bad(key, v, "not a number"))?;
    if !x.is_finite() {
        return Err(bad(key, v, "must be finite"));
    }
    Ok(x)
}

fn parse_count<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v, "not a non-negative integer"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, v, "not a boolean")),
    }
}

fn opt_none(v: &str) -> bool {
    v.is_empty() || v.eq_ignore_ascii_case("none")
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PddError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PddError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one setting. `a0` and `eps` replace each other.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "problem" => self.problem = v.to_string(),
            "domain" => {
                self.domain = if opt_none(v) {
                    None
                } else {
                    let parts: Vec<f64> = v
                        .split(|ch: char| ch == ',' || ch.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_num(key, s))
                        .collect::<Result<_>>()?;
                    let b: [f64; 4] = parts
                        .try_into()
                        .map_err(|_| bad(key, v, "expected xmin,xmax,ymin,ymax"))?;
                    Some(b)
                }
            }
            "m" => self.m = parse_count(key, v)?,
            "nodes_per_interface" => self.nodes_per_interface = parse_count(key, v)?,
            "grid_spacing" => self.grid_spacing = parse_num(key, v)?,
            "shape" => self.shape = if opt_none(v) { None } else { Some(parse_num(key, v)?) },
            "q" => self.q = parse_num(key, v)?,
            "delta" => self.delta = parse_num(key, v)?,
            "a0" => {
                self.a0 = if opt_none(v) { None } else { Some(parse_num(key, v)?) };
                if self.a0.is_some() {
                    self.eps = None;
                }
            }
            "eps" => {
                self.eps = if opt_none(v) { None } else { Some(parse_num(key, v)?) };
                if self.eps.is_some() {
                    self.a0 = None;
                }
            }
            "gamma_r" => self.gamma_r = if opt_none(v) { None } else { Some(Setting::parse(key, v)?) },
            "q_max" => self.q_max = if opt_none(v) { None } else { Some(parse_num(key, v)?) },
            "s" => self.s = if opt_none(v) { None } else { Some(parse_count(key, v)?) },
            "fit_m_hat" | "m_hat" => self.fit_m_hat = parse_count(key, v)?,
            "fit_n_hat" | "n_hat" => self.fit_n_hat = parse_count(key, v)?,
            "fit_h_min" => self.fit_h_min = parse_num(key, v)?,
            "fit_h_max" => self.fit_h_max = parse_num(key, v)?,
            "stop_threshold" => self.stop_threshold = parse_num(key, v)?,
            "kappa" => self.kappa = Setting::parse(key, v)?,
            "correction" => {
                self.correction = match v.to_ascii_lowercase().as_str() {
                    "absolute" => DiscretizationCorrection::Absolute,
                    "relative" => DiscretizationCorrection::Relative,
                    _ => return Err(bad(key, v, "expected absolute or relative")),
                }
            }
            "fallback_rho2" => self.fallback_rho2 = parse_num(key, v)?,
            "max_steps" => self.max_steps = parse_count(key, v)?,
            "seed" => self.seed = parse_count(key, v)?,
            "threads" => self.threads = parse_count(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "plain" => self.plain = parse_bool(key, v)?,
            "constants" => self.constants = if opt_none(v) { None } else { Some(PathBuf::from(v)) },
            "schedule" => self.schedule = if opt_none(v) { None } else { Some(PathBuf::from(v)) },
            "nsr_samples" => self.nsr_samples = parse_count(key, v)?,
            "sweep_points" => self.sweep_points = parse_count(key, v)?,
            "sweep_a1_max" => self.sweep_a1_max = parse_num(key, v)?,
            "write_fields" => self.write_fields = parse_bool(key, v)?,
            other => return Err(PddError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Checks everything that does not depend on the problem instance.
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(PddError::Config(msg));
        if self.a0.is_some() && self.eps.is_some() {
            return cfg("give exactly one of a0 and eps".into());
        }
        if self.m == 0 || self.nodes_per_interface == 0 || self.fit_m_hat == 0 || self.fit_n_hat == 0 {
            return cfg("counts must be positive".into());
        }
        if self.nsr_samples == 0 || self.sweep_points == 0 || self.max_steps == 0 {
            return cfg("counts must be positive".into());
        }
        for (k, v) in [
            ("grid_spacing", self.grid_spacing),
            ("q", self.q),
            ("delta", self.delta),
            ("fit_h_min", self.fit_h_min),
            ("sweep_a1_max", self.sweep_a1_max),
        ] {
            if !(v > 0.0) {
                return cfg(format!("{k} must be positive, got {v}"));
            }
        }
        if !(self.fit_h_min < self.fit_h_max) {
            return cfg(format!("need fit_h_min < fit_h_max, got [{}, {}]", self.fit_h_min, self.fit_h_max));
        }
        if !(self.stop_threshold > 1.0) {
            return cfg(format!("stop_threshold must exceed 1, got {}", self.stop_threshold));
        }
        if let Setting::Fixed(k) = self.kappa {
            if !(k >= 1.0) {
                return cfg(format!("kappa must be at least 1, got {k}"));
            }
        }
        if !(0.0..1.0).contains(&self.fallback_rho2) {
            return cfg(format!("fallback_rho2 must lie in [0, 1), got {}", self.fallback_rho2));
        }
        if let Some(a) = self.a0 {
            if !(a > 0.0) {
                return cfg(format!("a0 must be positive, got {a}"));
            }
        }
        if let Some(e) = self.eps {
            if !(e > 0.0) {
                return cfg(format!("eps must be positive, got {e}"));
            }
            if self.gamma_r.is_none() || self.q_max.is_none() || self.s.is_none() {
                return cfg("eps needs gamma_r, q_max and s".into());
            }
        }
        if let Some(b) = self.domain {
            if !(b[0] < b[1] && b[2] < b[3]) {
                return cfg(format!("domain {b:?} is empty"));
            }
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<std::sync::Arc<dyn EllipticProblem>> {
        problem_by_name(&self.problem, self.domain)
    }

    /// Domain bounds in effect for rectangular problems.
    pub fn effective_domain(&self) -> Option<[f64; 4]> {
        match self.problem.as_str() {
            "paper-sec6" => Some(self.domain.unwrap_or(DEFAULT_STRIP_DOMAIN)),
            _ => self.domain,
        }
    }

    /// Whether the domain is authoritative. It never is for `paper-sec6`.
    pub fn domain_authoritative(&self) -> bool {
        self.problem != "paper-sec6"
    }

    /// Finest tolerance: `a0` as given or derived from `eps`. `gamma_r_measured` resolves `gamma_r = auto`.
    pub fn tolerance(&self, gamma_r_measured: impl FnOnce() -> Result<f64>) -> Result<f64> {
        match (self.a0, self.eps) {
            (Some(a), None) => Ok(a),
            (None, Some(eps)) => {
                let g = match self.gamma_r.expect("validated") {
                    Setting::Fixed(g) => g,
                    Setting::Auto => gamma_r_measured()?,
                };
                let p = GlobalErrorParams::new(g, self.q_max.expect("validated"), self.s.expect("validated"), self.q)
                    .map_err(|e| PddError::Config(e.to_string()))?;
                a0_from_epsilon(eps, &p).map_err(|e| PddError::Config(e.to_string()))
            }
            (None, None) => Err(PddError::Config("a tolerance is required: set a0 or eps".into())),
            (Some(_), Some(_)) => Err(PddError::Config("give exactly one of a0 and eps".into())),
        }
    }

    /// Rejects tolerances at or above ten times the largest boundary value.
    pub fn check_tolerance(&self, a: f64, problem: &dyn EllipticProblem) -> Result<()> {
        let cap = sanity_cap(problem);
        if !(a > 0.0 && a < cap) {
            return Err(PddError::Config(format!("tolerance {a} must lie in (0, {cap:.4e})")));
        }
        Ok(())
    }

    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            m_hat: self.fit_m_hat,
            n_hat: self.fit_n_hat,
            h_min: self.fit_h_min,
            h_max: self.fit_h_max,
            q: self.q,
            delta: self.delta,
            seed: self.seed,
            max_steps: self.max_steps,
        }
    }

    pub fn schedule_settings(&self, kappa: f64) -> ScheduleSettings {
        ScheduleSettings {
            kappa,
            delta: self.delta,
            stop_threshold: self.stop_threshold,
            correction: self.correction,
            ..ScheduleSettings::default()
        }
    }

    pub fn run_options(&self, kappa: f64) -> RunOptions {
        RunOptions {
            nodal: NodalSettings {
                q: self.q,
                delta: self.delta,
                max_steps: self.max_steps,
                seed: self.seed,
                ..NodalSettings::default()
            },
            schedule: self.schedule_settings(kappa),
            fallback_rho2: self.fallback_rho2,
            ..RunOptions::default()
        }
    }

    /// Settings that determine results, as `key=value` pairs for file headers.
    pub fn header(&self) -> Vec<(String, String)> {
        let mut h = vec![
            ("problem".to_string(), self.problem.clone()),
            (
                "domain".to_string(),
                self.effective_domain()
                    .map(|b| format!("{},{},{},{}", b[0], b[1], b[2], b[3]))
                    .unwrap_or_else(|| "builtin".into()),
            ),
            ("domain_authoritative".to_string(), self.domain_authoritative().to_string()),
            ("m".to_string(), self.m.to_string()),
            ("nodes_per_interface".to_string(), self.nodes_per_interface.to_string()),
            ("grid_spacing".to_string(), self.grid_spacing.to_string()),
            ("q".to_string(), self.q.to_string()),
            ("delta".to_string(), self.delta.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("kappa".to_string(), self.kappa.render()),
        ];
        if let Some(s) = self.shape {
            h.push(("shape".to_string(), s.to_string()));
        }
        h
    }
}

/// Ten times the largest boundary value sampled along the bounding box, at least 10.
pub fn sanity_cap(problem: &dyn EllipticProblem) -> f64 {
    let b = problem.domain().bounding_box();
    let k = 200;
    let mut sup: f64 = 1.0;
    for i in 0..=k {
        let t = i as f64 / k as f64;
        let x = b.xmin + t * (b.xmax - b.xmin);
        let y = b.ymin + t * (b.ymax - b.ymin);
        for p in [
            crate::geometry::Point::new(x, b.ymin),
            crate::geometry::Point::new(x, b.ymax),
            crate::geometry::Point::new(b.xmin, y),
            crate::geometry::Point::new(b.xmax, y),
        ] {
            let g = problem.boundary_value(&p);
            if g.is_finite() {
                sup = sup.max(g.abs());
            }
        }
    }
    10.0 * sup
}
