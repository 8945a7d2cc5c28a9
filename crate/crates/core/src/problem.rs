//! Elliptic boundary-value problems `L u + c u = f` in the domain, `u = g` on its boundary,
//! with `L = ½ Σ a_ij ∂_ij + b·∇`.
//!
//! Problems are looked up by registry name. The nodal Monte Carlo walks need
//! `b`, `σ` (with `σσᵀ = A`), `c` and `f` at every step, so [`EllipticProblem::local`]
//! returns all of them at once and implementations may share work between them.

use std::fmt;
use std::sync::Arc;

use nalgebra::Matrix2;

use crate::error::{PddError, Result};
use crate::geometry::{Disk, Domain, Point, Rectangle, Region};

pub type Mat2 = Matrix2<f64>;

/// Coefficients evaluated at one point.
#[derive(Debug, Clone, Copy)]
pub struct LocalCoefficients {
    pub drift: Point,
    pub sigma: Mat2,
    pub potential: f64,
    pub source: f64,
}

pub trait EllipticProblem: Send + Sync {
    fn name(&self) -> &str;

    fn domain(&self) -> &Domain;

    fn drift(&self, x: &Point) -> Point;

    /// The matrix `A(x)`.
    fn diffusion(&self, x: &Point) -> Mat2;

    /// The potential `c(x)`, required to be non-positive.
    fn potential(&self, x: &Point) -> f64;

    /// The right-hand side `f(x)` of `L u + c u = f`.
    fn source(&self, x: &Point) -> f64;

    /// Dirichlet data `g(x)`.
    fn boundary_value(&self, x: &Point) -> f64;

    /// Lower-triangular factor of `A(x)`.
    ///
    /// Panics if `A(x)` is not symmetric positive definite; problems are
    /// expected to be checked with [`spectral_bounds`] beforehand.
    fn sigma(&self, x: &Point) -> Mat2 {
        diffusion_factor(&self.diffusion(x)).expect("diffusion matrix must be SPD")
    }

    fn local(&self, x: &Point) -> LocalCoefficients {
        LocalCoefficients {
            drift: self.drift(x),
            sigma: self.sigma(x),
            potential: self.potential(x),
            source: self.source(x),
        }
    }

    fn exact_solution(&self, _x: &Point) -> Option<f64> {
        None
    }

    fn exact_gradient(&self, _x: &Point) -> Option<Point> {
        None
    }
}

impl fmt::Debug for dyn EllipticProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EllipticProblem({})", self.name())
    }
}

/// Cholesky factor `σ` of a 2×2 SPD matrix, so that `σσᵀ = A`.
pub fn diffusion_factor(a: &Mat2) -> Result<Mat2> {
    let scale = a.abs().max().max(f64::MIN_POSITIVE);
    if (a[(0, 1)] - a[(1, 0)]).abs() > 1e-12 * scale {
        return Err(PddError::NotPositiveDefinite(format!("asymmetric matrix {a}")));
    }
    let a11 = a[(0, 0)];
    if !(a11 > 0.0) {
        return Err(PddError::NotPositiveDefinite(format!("a11 = {a11}")));
    }
    let l11 = a11.sqrt();
    let l21 = a[(1, 0)] / l11;
    let rem = a[(1, 1)] - l21 * l21;
    if !(rem > 0.0) {
        return Err(PddError::NotPositiveDefinite(format!("Schur complement {rem}")));
    }
    Ok(Mat2::new(l11, 0.0, l21, rem.sqrt()))
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn symmetric_eigenvalues(a: &Mat2) -> (f64, f64) {
    let mean = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let half_diff = 0.5 * (a[(0, 0)] - a[(1, 1)]);
    let off = 0.5 * (a[(0, 1)] + a[(1, 0)]);
    let r = half_diff.hypot(off);
    (mean - r, mean + r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Minimum and maximum eigenvalue of `A(x)` over a `samples_per_axis²` grid on `region`.
pub fn spectral_bounds(
    problem: &dyn EllipticProblem,
    region: &Rectangle,
    samples_per_axis: usize,
) -> Result<SpectralBounds> {
    if samples_per_axis == 0 {
        return Err(PddError::InvalidArgument("sample count must be positive".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in sample_grid(region, samples_per_axis) {
        let a = problem.diffusion(&p);
        diffusion_factor(&a)?;
        let (l1, l2) = symmetric_eigenvalues(&a);
        lo = lo.min(l1);
        hi = hi.max(l2);
    }
    Ok(SpectralBounds {
        lambda_min: lo,
        lambda_max: hi,
    })
}

/// Supremum of `‖b(x)‖₂` over a sample grid.
pub fn sup_drift_norm(problem: &dyn EllipticProblem, region: &Rectangle, samples_per_axis: usize) -> f64 {
    sample_grid(region, samples_per_axis)
        .map(|p| problem.drift(&p).norm())
        .fold(0.0, f64::max)
}

fn sample_grid(region: &Rectangle, n: usize) -> impl Iterator<Item = Point> + '_ {
    let step = move |lo: f64, hi: f64, i: usize| {
        if n == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    (0..n).flat_map(move |i| {
        (0..n).map(move |j| Point::new(step(region.xmin, region.xmax, i), step(region.ymin, region.ymax, j)))
    })
}

/// The manufactured test problem with exact solution
/// `u = 2 cos(2(y−2)x) + sin(3(x−2)y) + 3.1`, `A = 2I`,
/// `b = cos(x+y)/(1.1+sin(x+y))·(1, 1)` and `c = −(x²+y²)/(1.1+sin(x+y))`.
#[derive(Debug, Clone)]
pub struct StripProblem {
    domain: Domain,
}

impl StripProblem {
    pub fn new(domain: Rectangle) -> Self {
        Self {
            domain: Domain::Rectangle(domain),
        }
    }

    pub fn rectangle(&self) -> Rectangle {
        *self.domain.as_rectangle().expect("strip problem lives on a rectangle")
    }

    pub fn exact_u(x: &Point) -> f64 {
        let p = 2.0 * (x.y - 2.0) * x.x;
        let q = 3.0 * (x.x - 2.0) * x.y;
        2.0 * p.cos() + q.sin() + 3.1
    }

    pub fn exact_grad_u(x: &Point) -> Point {
        let p = 2.0 * (x.y - 2.0) * x.x;
        let q = 3.0 * (x.x - 2.0) * x.y;
        let (sp, cq) = (p.sin(), q.cos());
        Point::new(
            -4.0 * (x.y - 2.0) * sp + 3.0 * x.y * cq,
            -4.0 * x.x * sp + 3.0 * (x.x - 2.0) * cq,
        )
    }

    /// Laplacian of the exact solution.
    pub fn exact_laplacian(x: &Point) -> f64 {
        let p = 2.0 * (x.y - 2.0) * x.x;
        let q = 3.0 * (x.x - 2.0) * x.y;
        let (cp, sq) = (p.cos(), q.sin());
        let u_xx = -8.0 * (x.y - 2.0).powi(2) * cp - 9.0 * x.y * x.y * sq;
        let u_yy = -8.0 * x.x * x.x * cp - 9.0 * (x.x - 2.0).powi(2) * sq;
        u_xx + u_yy
    }

    #[inline]
    fn evaluate(x: &Point) -> LocalCoefficients {
        let s = x.x + x.y;
        let denom = 1.1 + s.sin();
        let bscal = s.cos() / denom;
        let c = -(x.x * x.x + x.y * x.y) / denom;

        let p = 2.0 * (x.y - 2.0) * x.x;
        let q = 3.0 * (x.x - 2.0) * x.y;
        let (sp, cp) = p.sin_cos();
        let (sq, cq) = q.sin_cos();
        let u = 2.0 * cp + sq + 3.1;
        let ux = -4.0 * (x.y - 2.0) * sp + 3.0 * x.y * cq;
        let uy = -4.0 * x.x * sp + 3.0 * (x.x - 2.0) * cq;
        let lap = -8.0 * ((x.y - 2.0).powi(2) + x.x * x.x) * cp - 9.0 * (x.y * x.y + (x.x - 2.0).powi(2)) * sq;

        LocalCoefficients {
            drift: Point::new(bscal, bscal),
            sigma: Mat2::new(std::f64::consts::SQRT_2, 0.0, 0.0, std::f64::consts::SQRT_2),
            potential: c,
            source: lap + bscal * (ux + uy) + c * u,
        }
    }
}

impl EllipticProblem for StripProblem {
    fn name(&self) -> &str {
        "paper-sec6"
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn drift(&self, x: &Point) -> Point {
        let s = x.x + x.y;
        let b = s.cos() / (1.1 + s.sin());
        Point::new(b, b)
    }

    fn diffusion(&self, _x: &Point) -> Mat2 {
        Mat2::new(2.0, 0.0, 0.0, 2.0)
    }

    fn sigma(&self, _x: &Point) -> Mat2 {
        Mat2::new(std::f64::consts::SQRT_2, 0.0, 0.0, std::f64::consts::SQRT_2)
    }

    fn potential(&self, x: &Point) -> f64 {
        -(x.x * x.x + x.y * x.y) / (1.1 + (x.x + x.y).sin())
    }

    fn source(&self, x: &Point) -> f64 {
        Self::evaluate(x).source
    }

    fn boundary_value(&self, x: &Point) -> f64 {
        Self::exact_u(x)
    }

    #[inline]
    fn local(&self, x: &Point) -> LocalCoefficients {
        Self::evaluate(x)
    }

    fn exact_solution(&self, x: &Point) -> Option<f64> {
        Some(Self::exact_u(x))
    }

    fn exact_gradient(&self, x: &Point) -> Option<Point> {
        Some(Self::exact_grad_u(x))
    }
}

/// What the disk benchmarks solve with `A = 2I`, `b = c = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiskData {
    /// `f = 0`, `g ≡ value`: the solution is the constant.
    Constant(f64),
    /// `f = −1`, `g = 0`: the solution `(r² − |x − x_c|²)/4` is the mean exit time.
    ExitTime,
}

#[derive(Debug, Clone)]
pub struct DiskProblem {
    domain: Domain,
    disk: Disk,
    data: DiskData,
}

impl DiskProblem {
    pub fn new(disk: Disk, data: DiskData) -> Self {
        Self {
            domain: Domain::Disk(disk),
            disk,
            data,
        }
    }

    fn r2(&self, x: &Point) -> f64 {
        (x.x - self.disk.center[0]).powi(2) + (x.y - self.disk.center[1]).powi(2)
    }
}

impl EllipticProblem for DiskProblem {
    fn name(&self) -> &str {
        match self.data {
            DiskData::Constant(_) => "laplace-disk-benchmark",
            DiskData::ExitTime => "disk-exit-time",
        }
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn drift(&self, _x: &Point) -> Point {
        Point::zeros()
    }

    fn diffusion(&self, _x: &Point) -> Mat2 {
        Mat2::new(2.0, 0.0, 0.0, 2.0)
    }

    fn sigma(&self, _x: &Point) -> Mat2 {
        Mat2::new(std::f64::consts::SQRT_2, 0.0, 0.0, std::f64::consts::SQRT_2)
    }

    fn potential(&self, _x: &Point) -> f64 {
        0.0
    }

    fn source(&self, _x: &Point) -> f64 {
        match self.data {
            DiskData::Constant(_) => 0.0,
            DiskData::ExitTime => -1.0,
        }
    }

    fn boundary_value(&self, _x: &Point) -> f64 {
        match self.data {
            DiskData::Constant(v) => v,
            DiskData::ExitTime => 0.0,
        }
    }

    fn exact_solution(&self, x: &Point) -> Option<f64> {
        Some(match self.data {
            DiskData::Constant(v) => v,
            DiskData::ExitTime => 0.25 * (self.disk.radius.powi(2) - self.r2(x)),
        })
    }

    fn exact_gradient(&self, x: &Point) -> Option<Point> {
        Some(match self.data {
            DiskData::Constant(_) => Point::zeros(),
            DiskData::ExitTime => Point::new(
                -0.5 * (x.x - self.disk.center[0]),
                -0.5 * (x.y - self.disk.center[1]),
            ),
        })
    }
}

type ScalarField = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
type VectorField = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
type MatrixField = Arc<dyn Fn(&Point) -> Mat2 + Send + Sync>;

/// A problem assembled from coefficient closures.
#[derive(Clone)]
pub struct CustomProblem {
    pub name: String,
    pub domain: Domain,
    pub drift: VectorField,
    pub diffusion: MatrixField,
    pub potential: ScalarField,
    pub source: ScalarField,
    pub boundary: ScalarField,
    pub exact: Option<ScalarField>,
}

impl CustomProblem {
    /// `∇²u = 0` style problem (`A = 2I`, `b = c = f = 0`) with the given boundary data.
    pub fn laplace(domain: Domain, boundary: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: "custom-laplace".into(),
            domain,
            drift: Arc::new(|_| Point::zeros()),
            diffusion: Arc::new(|_| Mat2::new(2.0, 0.0, 0.0, 2.0)),
            potential: Arc::new(|_| 0.0),
            source: Arc::new(|_| 0.0),
            boundary: Arc::new(boundary),
            exact: None,
        }
    }
}

impl EllipticProblem for CustomProblem {
    fn name(&self) -> &str {
        &self.name
    }
    fn domain(&self) -> &Domain {
        &self.domain
    }
    fn drift(&self, x: &Point) -> Point {
        (self.drift)(x)
    }
    fn diffusion(&self, x: &Point) -> Mat2 {
        (self.diffusion)(x)
    }
    fn potential(&self, x: &Point) -> f64 {
        (self.potential)(x)
    }
    fn source(&self, x: &Point) -> f64 {
        (self.source)(x)
    }
    fn boundary_value(&self, x: &Point) -> f64 {
        (self.boundary)(x)
    }
    fn exact_solution(&self, x: &Point) -> Option<f64> {
        self.exact.as_ref().map(|e| e(x))
    }
}

/// Default domain for `paper-sec6`; the true extent is unknown, so this one is non-authoritative.
pub const DEFAULT_STRIP_DOMAIN: [f64; 4] = [0.0, 4.0, 0.0, 1.0];

pub const REGISTERED_PROBLEMS: [&str; 3] = ["paper-sec6", "laplace-disk-benchmark", "disk-exit-time"];

/// Looks a problem up by registry name. `bounds` overrides the rectangle of `paper-sec6`.
pub fn problem_by_name(name: &str, bounds: Option<[f64; 4]>) -> Result<Arc<dyn EllipticProblem>> {
    match name {
        "paper-sec6" => {
            let b = bounds.unwrap_or(DEFAULT_STRIP_DOMAIN);
            Ok(Arc::new(StripProblem::new(Rectangle::new(b[0], b[1], b[2], b[3])?)))
        }
        "laplace-disk-benchmark" => Ok(Arc::new(DiskProblem::new(Disk::unit(), DiskData::Constant(1.0)))),
        "disk-exit-time" => Ok(Arc::new(DiskProblem::new(Disk::unit(), DiskData::ExitTime))),
        other => Err(PddError::Config(format!(
            "unknown problem '{other}' (known: {})",
            REGISTERED_PROBLEMS.join(", ")
        ))),
    }
}

/// Checks `c ≤ 0` and SPD-ness of `A` on a grid covering the problem's bounding box.
pub fn validate_coefficients(problem: &dyn EllipticProblem, samples_per_axis: usize) -> Result<SpectralBounds> {
    let bbox = problem.domain().bounding_box();
    for p in sample_grid(&bbox, samples_per_axis) {
        if problem.domain().contains(&p) {
            let c = problem.potential(&p);
            if c > 0.0 {
                return Err(PddError::InvalidArgument(format!(
                    "potential c = {c} > 0 at ({}, {})",
                    p.x, p.y
                )));
            }
        }
    }
    spectral_bounds(problem, &bbox, samples_per_axis)
}
