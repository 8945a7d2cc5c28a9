//! Finite-difference solves on the rectangular strips, and gradient tables.
//!
//! The operator `½(a11 ∂xx + a22 ∂yy) + b·∇ + c` is discretized with second-order
//! central differences on a uniform grid. Unknowns are ordered along the shorter
//! side so the matrix is banded with half-bandwidth `min(nx, ny) − 1`, and the
//! system is solved by banded LU plus one step of iterative refinement.

use rayon::prelude::*;

use crate::error::{PddError, Result};
use crate::geometry::{Partition, Point, Rectangle};
use crate::interp::{default_shape, interface_centers, Interpolant, Multiquadric};
use crate::problem::EllipticProblem;

/// Residual bound for the discrete system, relative to the diagonal and the solution scale.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Grid resolution for a strip: the number of cells along each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
}

impl GridShape {
    /// Smallest grid whose spacing does not exceed `spacing` on either side.
    pub fn from_spacing(rect: &Rectangle, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(PddError::InvalidArgument(format!("grid spacing must be positive, got {spacing}")));
        }
        let nx = ((rect.width() / spacing) - 1e-9).ceil().max(2.0) as usize;
        let ny = ((rect.height() / spacing) - 1e-9).ceil().max(2.0) as usize;
        Ok(Self { nx, ny })
    }
}

/// Nodal values on a uniform grid covering a strip, boundary included.
/// `values[j * (nx + 1) + i]` is the value at `(xmin + i·hx, ymin + j·hy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub subdomain: usize,
    pub rect: Rectangle,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn hx(&self) -> f64 {
        self.rect.width() / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.rect.height() / self.ny as f64
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * (self.nx + 1) + i]
    }

    pub fn point(&self, i: usize, j: usize) -> Point {
        Point::new(
            grid_coord(self.rect.xmin, self.rect.xmax, i, self.nx),
            grid_coord(self.rect.ymin, self.rect.ymax, j, self.ny),
        )
    }

    /// Bilinear interpolation; points outside the strip are clamped onto it.
    pub fn sample(&self, x: &Point) -> f64 {
        bilinear(&self.rect, self.nx, self.ny, &self.values, x)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
fn grid_coord(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    if i == n {
        hi
    } else {
        lo + (hi - lo) * i as f64 / n as f64
    }
}

#[inline]
fn cell(t: f64, lo: f64, h: f64, n: usize) -> (usize, f64) {
    let s = ((t - lo) / h).clamp(0.0, n as f64);
    let k = (s.floor() as usize).min(n - 1);
    (k, s - k as f64)
}

#[inline]
fn bilinear(rect: &Rectangle, nx: usize, ny: usize, values: &[f64], x: &Point) -> f64 {
    let hx = rect.width() / nx as f64;
    let hy = rect.height() / ny as f64;
    let (i, sx) = cell(x.x, rect.xmin, hx, nx);
    let (j, sy) = cell(x.y, rect.ymin, hy, ny);
    let w = nx + 1;
    let v00 = values[j * w + i];
    let v10 = values[j * w + i + 1];
    let v01 = values[(j + 1) * w + i];
    let v11 = values[(j + 1) * w + i + 1];
    (1.0 - sy) * ((1.0 - sx) * v00 + sx * v10) + sy * ((1.0 - sx) * v01 + sx * v11)
}

/// Five-point stencil of one interior unknown: centre, west, east, south, north.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    c: f64,
    w: f64,
    e: f64,
    s: f64,
    n: f64,
}

/// Banded matrix stored row by row with `2·bw + 1` diagonals; factorized in place.
#[derive(Debug, Clone)]
struct BandedLu {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedLu {
    fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (2 * bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Doolittle elimination without pivoting; fine for the diagonally dominant
    /// matrices produced on grids that resolve the drift.
    fn factorize(&mut self) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        for k in 0..n {
            let pivot = self.data[k * width + bw];
            if !(pivot.abs() > 1e-300) || !pivot.is_finite() {
                return Err(PddError::LinearSolve(format!("zero pivot at row {k}")));
            }
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let lik_idx = self.idx(i, k);
                let l = self.data[lik_idx] / pivot;
                self.data[lik_idx] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=last {
                    let ukj = self.data[self.idx(k, j)];
                    let t = self.idx(i, j);
                    self.data[t] -= l * ukj;
                }
            }
        }
        Ok(())
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = b[i];
            for (j, bj) in b.iter().enumerate().take(i).skip(lo) {
                s -= self.data[i * width + (j + bw - i)] * bj;
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= self.data[i * width + (j + bw - i)] * b[j];
            }
            b[i] = s / self.data[i * width + bw];
        }
    }
}

/// The factorized discrete operator of one strip, reusable for any boundary data.
#[derive(Debug, Clone)]
pub struct SubdomainOperator {
    pub subdomain: usize,
    pub rect: Rectangle,
    pub nx: usize,
    pub ny: usize,
    stencils: Vec<Stencil>,
    source: Vec<f64>,
    lu: BandedLu,
    x_fast: bool,
}

impl SubdomainOperator {
    pub fn new(subdomain: usize, rect: Rectangle, grid: GridShape, problem: &dyn EllipticProblem) -> Result<Self> {
        let GridShape { nx, ny } = grid;
        if nx < 2 || ny < 2 {
            return Err(PddError::InvalidArgument(format!("grid {nx}x{ny} has no interior unknowns")));
        }
        let hx = rect.width() / nx as f64;
        let hy = rect.height() / ny as f64;
        let (mx, my) = (nx - 1, ny - 1);
        // With x as the fast index, vertical neighbours are mx apart; otherwise my.
        let x_fast = mx <= my;
        let bw = if x_fast { mx } else { my };
        let n = mx * my;
        let mut stencils = Vec::with_capacity(n);
        let mut source = Vec::with_capacity(n);
        for jj in 1..ny {
            for ii in 1..nx {
                let p = Point::new(grid_coord(rect.xmin, rect.xmax, ii, nx), grid_coord(rect.ymin, rect.ymax, jj, ny));
                let a = problem.diffusion(&p);
                let off = 0.5 * (a[(0, 1)] + a[(1, 0)]);
                if off.abs() > 1e-14 * a.abs().max() {
                    return Err(PddError::NonDiagonalDiffusion(off));
                }
                let b = problem.drift(&p);
                let c = problem.potential(&p);
                let (dx, dy) = (0.5 * a[(0, 0)] / (hx * hx), 0.5 * a[(1, 1)] / (hy * hy));
                let (gx, gy) = (b.x / (2.0 * hx), b.y / (2.0 * hy));
                stencils.push(Stencil {
                    c: -2.0 * dx - 2.0 * dy + c,
                    w: dx - gx,
                    e: dx + gx,
                    s: dy - gy,
                    n: dy + gy,
                });
                source.push(problem.source(&p));
            }
        }
        let mut op = Self {
            subdomain,
            rect,
            nx,
            ny,
            stencils,
            source,
            lu: BandedLu::zeros(n, bw),
            x_fast,
        };
        op.assemble()?;
        Ok(op)
    }

    /// Position of interior node (ii, jj), both 1-based, in the banded ordering.
    #[inline]
    fn unknown(&self, ii: usize, jj: usize) -> usize {
        let (mx, my) = (self.nx - 1, self.ny - 1);
        if self.x_fast {
            (jj - 1) * mx + (ii - 1)
        } else {
            (ii - 1) * my + (jj - 1)
        }
    }

    fn assemble(&mut self) -> Result<()> {
        let (nx, ny) = (self.nx, self.ny);
        let mut lu = BandedLu::zeros(self.lu.n, self.lu.bw);
        for jj in 1..ny {
            for ii in 1..nx {
                let s = self.stencils[(jj - 1) * (nx - 1) + (ii - 1)];
                let r = self.unknown(ii, jj);
                lu.set(r, r, s.c);
                if ii > 1 {
                    lu.set(r, self.unknown(ii - 1, jj), s.w);
                }
                if ii + 1 < nx {
                    lu.set(r, self.unknown(ii + 1, jj), s.e);
                }
                if jj > 1 {
                    lu.set(r, self.unknown(ii, jj - 1), s.s);
                }
                if jj + 1 < ny {
                    lu.set(r, self.unknown(ii, jj + 1), s.n);
                }
            }
        }
        lu.factorize()?;
        self.lu = lu;
        Ok(())
    }

    /// `A u` restricted to interior rows, with `u` a full grid (boundary included).
    fn apply(&self, u: &[f64], i: usize, j: usize) -> f64 {
        let w = self.nx + 1;
        let s = self.stencils[(j - 1) * (self.nx - 1) + (i - 1)];
        s.c * u[j * w + i] + s.w * u[j * w + i - 1] + s.e * u[j * w + i + 1] + s.s * u[(j - 1) * w + i] + s.n * u[(j + 1) * w + i]
    }

    /// Solves with boundary values from `dirichlet`; `with_source = false` solves the homogeneous equation.
    pub fn solve(&self, dirichlet: &dyn Fn(&Point) -> f64, with_source: bool) -> Result<GridField> {
        let (nx, ny) = (self.nx, self.ny);
        let w = nx + 1;
        let mut u = vec![0.0; w * (ny + 1)];
        let mut field = GridField {
            subdomain: self.subdomain,
            rect: self.rect,
            nx,
            ny,
            values: Vec::new(),
        };
        for j in 0..=ny {
            for i in 0..=nx {
                if i == 0 || j == 0 || i == nx || j == ny {
                    let p = Point::new(
                        grid_coord(self.rect.xmin, self.rect.xmax, i, nx),
                        grid_coord(self.rect.ymin, self.rect.ymax, j, ny),
                    );
                    u[j * w + i] = dirichlet(&p);
                }
            }
        }
        let rhs_at = |i: usize, j: usize| if with_source { self.source[(j - 1) * (nx - 1) + (i - 1)] } else { 0.0 };

        // Residual-correction form: starting from zero interior values, the first
        // pass is the plain solve and the second is one refinement step.
        let mut r = vec![0.0; self.lu.n];
        for pass in 0..3 {
            let mut worst = 0.0f64;
            for j in 1..ny {
                for i in 1..nx {
                    let res = rhs_at(i, j) - self.apply(&u, i, j);
                    let diag = self.stencils[(j - 1) * (nx - 1) + (i - 1)].c.abs();
                    worst = worst.max(res.abs() / diag);
                    r[self.unknown(i, j)] = res;
                }
            }
            let scale = u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if pass > 0 && worst <= RESIDUAL_TOLERANCE * scale {
                field.values = u;
                return Ok(field);
            }
            if pass == 2 {
                return Err(PddError::LinearSolve(format!(
                    "residual {worst:.3e} above tolerance after refinement"
                )));
            }
            self.lu.solve_in_place(&mut r);
            for j in 1..ny {
                for i in 1..nx {
                    u[j * w + i] += r[self.unknown(i, j)];
                }
            }
        }
        unreachable!()
    }
}

pub fn solve_dirichlet(
    subdomain: usize,
    rect: Rectangle,
    grid: GridShape,
    problem: &dyn EllipticProblem,
    dirichlet: &dyn Fn(&Point) -> f64,
) -> Result<GridField> {
    SubdomainOperator::new(subdomain, rect, grid, problem)?.solve(dirichlet, true)
}

/// Factorized operators for every strip of a partition.
#[derive(Debug, Clone)]
pub struct PartitionOperators {
    pub operators: Vec<SubdomainOperator>,
}

impl PartitionOperators {
    pub fn new(partition: &Partition, problem: &dyn EllipticProblem, spacing: f64) -> Result<Self> {
        let operators = partition
            .subdomains
            .par_iter()
            .enumerate()
            .map(|(k, rect)| SubdomainOperator::new(k, *rect, GridShape::from_spacing(rect, spacing)?, problem))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { operators })
    }
}

/// Interpolants along each interface, built from nodal values and boundary data at the ends.
#[derive(Debug, Clone)]
pub struct InterfaceData {
    pub interpolants: Vec<Interpolant>,
}

/// Multiquadric bases for every interface, anchored at both endpoints.
#[derive(Debug, Clone)]
pub struct InterfaceBases {
    pub bases: Vec<Multiquadric>,
}

impl InterfaceBases {
    /// `shape = None` uses [`default_shape`].
    pub fn new(partition: &Partition, shape: Option<f64>) -> Result<Self> {
        let bases = partition
            .interfaces
            .iter()
            .map(|iface| {
                let ys: Vec<f64> = iface.nodes.iter().map(|&id| partition.nodes[id].position[1]).collect();
                let c = interface_centers(iface.ymin, iface.ymax, &ys);
                Multiquadric::new(&c, shape.unwrap_or_else(|| default_shape(iface.length(), ys.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bases })
    }

    /// Fits every interface to `nodal` values (indexed by node id); `ends(x, y)` gives the endpoint data.
    pub fn fit(&self, partition: &Partition, nodal: &[f64], ends: &dyn Fn(&Point) -> f64) -> Result<InterfaceData> {
        if nodal.len() != partition.n() {
            return Err(PddError::InvalidArgument(format!(
                "{} nodal values for {} nodes",
                nodal.len(),
                partition.n()
            )));
        }
        let interpolants = partition
            .interfaces
            .iter()
            .zip(&self.bases)
            .map(|(iface, basis)| {
                let mut v = Vec::with_capacity(iface.nodes.len() + 2);
                v.push(ends(&Point::new(iface.x, iface.ymin)));
                v.extend(iface.nodes.iter().map(|&id| nodal[id]));
                v.push(ends(&Point::new(iface.x, iface.ymax)));
                basis.fit(&v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(InterfaceData { interpolants })
    }
}

/// Dirichlet data of strip `k`: interface interpolants on interface sides, `outer` elsewhere.
pub fn strip_dirichlet<'a>(
    partition: &'a Partition,
    data: &'a InterfaceData,
    k: usize,
    outer: &'a (dyn Fn(&Point) -> f64 + Sync),
) -> impl Fn(&Point) -> f64 + 'a {
    let rect = partition.subdomains[k];
    let m = partition.m();
    move |p: &Point| {
        if k > 0 && p.x == rect.xmin {
            data.interpolants[k - 1].eval(p.y)
        } else if k + 1 < m && p.x == rect.xmax {
            data.interpolants[k].eval(p.y)
        } else {
            outer(p)
        }
    }
}

/// Solves every strip with interface data `data` and boundary data `outer`.
pub fn solve_partition(
    partition: &Partition,
    operators: &PartitionOperators,
    data: &InterfaceData,
    outer: &(dyn Fn(&Point) -> f64 + Sync),
    with_source: bool,
) -> Result<Vec<GridField>> {
    operators
        .operators
        .par_iter()
        .map(|op| {
            let bc = strip_dirichlet(partition, data, op.subdomain, outer);
            op.solve(&bc, with_source)
        })
        .collect()
}

/// Error-propagation function on every strip: the homogeneous equation with zero
/// physical boundary data and interface data `R[sign β] + (1/q) R[ω]`.
pub fn solve_error_propagation(
    partition: &Partition,
    operators: &PartitionOperators,
    bases: &InterfaceBases,
    beta_signs: &[f64],
    omega: Option<&[f64]>,
    q: f64,
) -> Result<Vec<GridField>> {
    if beta_signs.len() != partition.n() {
        return Err(PddError::InvalidArgument(format!(
            "{} signs for {} nodes",
            beta_signs.len(),
            partition.n()
        )));
    }
    let mut nodal = beta_signs.to_vec();
    if let Some(w) = omega {
        if w.len() != partition.n() {
            return Err(PddError::InvalidArgument(format!("{} draws for {} nodes", w.len(), partition.n())));
        }
        if !(q > 0.0) {
            return Err(PddError::InvalidArgument(format!("q must be positive, got {q}")));
        }
        for (v, o) in nodal.iter_mut().zip(w) {
            *v += o / q;
        }
    }
    let zero = |_: &Point| 0.0;
    let data = bases.fit(partition, &nodal, &zero)?;
    solve_partition(partition, operators, &data, &zero, false)
}

/// Evaluates the direct sum of strip fields at `x`, using the partition's tie rule.
pub fn evaluate_direct_sum(partition: &Partition, fields: &[GridField], x: &Point) -> f64 {
    fields[partition.locate_unchecked(x.x)].sample(x)
}

/// Gradient of one strip field on its grid.
#[derive(Debug, Clone)]
pub struct GradientGrid {
    pub rect: Rectangle,
    pub nx: usize,
    pub ny: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

fn derivative(v: &dyn Fn(usize) -> f64, k: usize, n: usize, h: f64) -> f64 {
    if k == 0 {
        (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h)
    } else if k == n {
        (3.0 * v(n) - 4.0 * v(n - 1) + v(n - 2)) / (2.0 * h)
    } else {
        (v(k + 1) - v(k - 1)) / (2.0 * h)
    }
}

impl GradientGrid {
    pub fn from_field(field: &GridField) -> Self {
        let (nx, ny) = (field.nx, field.ny);
        let (hx, hy) = (field.hx(), field.hy());
        let w = nx + 1;
        let mut gx = vec![0.0; w * (ny + 1)];
        let mut gy = vec![0.0; w * (ny + 1)];
        for j in 0..=ny {
            for i in 0..=nx {
                gx[j * w + i] = derivative(&|ii| field.at(ii, j), i, nx, hx);
                gy[j * w + i] = derivative(&|jj| field.at(i, jj), j, ny, hy);
            }
        }
        Self {
            rect: field.rect,
            nx,
            ny,
            gx,
            gy,
        }
    }

    #[inline]
    pub fn sample(&self, x: &Point) -> Point {
        Point::new(
            bilinear(&self.rect, self.nx, self.ny, &self.gx, x),
            bilinear(&self.rect, self.nx, self.ny, &self.gy, x),
        )
    }
}

/// Gradients of a direct sum of strip fields, looked up by strip.
#[derive(Debug, Clone)]
pub struct GradientTable {
    /// Right edges of the strips except the last, for strip lookup.
    edges: Vec<f64>,
    pub grids: Vec<GradientGrid>,
}

impl GradientTable {
    #[inline]
    pub fn sample(&self, x: &Point) -> Point {
        let k = self.edges.iter().position(|&e| x.x <= e).unwrap_or(self.edges.len());
        self.grids[k].sample(x)
    }
}

pub fn gradient_table(partition: &Partition, fields: &[GridField]) -> GradientTable {
    let m = partition.m();
    GradientTable {
        edges: partition.subdomains[..m - 1].iter().map(|s| s.xmax).collect(),
        grids: fields.iter().map(GradientGrid::from_field).collect(),
    }
}

/// Gradient table of a single field, e.g. a field solved on the whole domain.
pub fn single_gradient_table(field: &GridField) -> GradientTable {
    GradientTable {
        edges: Vec::new(),
        grids: vec![GradientGrid::from_field(field)],
    }
}

/// Writes `(subdomain, x, y, value)` rows for external plotting.
pub fn write_fields_csv(path: &std::path::Path, fields: &[GridField]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subdomain", "x", "y", "value"])?;
    for f in fields {
        for j in 0..=f.ny {
            for i in 0..=f.nx {
                let p = f.point(i, j);
                w.write_record(&[
                    f.subdomain.to_string(),
                    format!("{:.17e}", p.x),
                    format!("{:.17e}", p.y),
                    format!("{:.17e}", f.at(i, j)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_partition, Domain};
    use crate::problem::{CustomProblem, StripProblem};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn laplace(g: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> CustomProblem {
        CustomProblem::laplace(Domain::Rectangle(Rectangle::unit_square()), g)
    }

    #[test]
    fn affine_data_is_reproduced() {
        let p = laplace(|x| x.x + x.y);
        let f = solve_dirichlet(0, Rectangle::unit_square(), GridShape { nx: 20, ny: 17 }, &p, &|x| x.x + x.y).unwrap();
        for j in 0..=f.ny {
            for i in 0..=f.nx {
                let q = f.point(i, j);
                assert_abs_diff_eq!(f.at(i, j), q.x + q.y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn constant_data_is_reproduced() {
        let p = laplace(|_| 5.0);
        let f = solve_dirichlet(0, Rectangle::unit_square(), GridShape { nx: 13, ny: 30 }, &p, &|_| 5.0).unwrap();
        assert!(f.values.iter().all(|v| (v - 5.0).abs() <= 1e-9));
    }

    #[test]
    fn non_diagonal_diffusion_rejected() {
        let mut p = laplace(|_| 0.0);
        p.diffusion = std::sync::Arc::new(|_| crate::problem::Mat2::new(2.0, 0.5, 0.5, 2.0));
        let r = solve_dirichlet(0, Rectangle::unit_square(), GridShape { nx: 8, ny: 8 }, &p, &|_| 0.0);
        assert!(matches!(r, Err(PddError::NonDiagonalDiffusion(_))));
    }

    fn strip_error(n: usize) -> f64 {
        let rect = Rectangle::new(1.0, 2.0, 0.0, 1.0).unwrap();
        let p = StripProblem::new(Rectangle::new(0.0, 4.0, 0.0, 1.0).unwrap());
        let f = solve_dirichlet(1, rect, GridShape { nx: n, ny: n }, &p, &StripProblem::exact_u).unwrap();
        let mut err = 0.0f64;
        for j in 0..=n {
            for i in 0..=n {
                err = err.max((f.at(i, j) - StripProblem::exact_u(&f.point(i, j))).abs());
            }
        }
        err
    }

    #[test]
    fn second_order_convergence_on_strip_problem() {
        let e1 = strip_error(20);
        let e2 = strip_error(40);
        let ratio = e1 / e2;
        assert!((3.2..=4.8).contains(&ratio), "ratio {ratio} ({e1:.3e} -> {e2:.3e})");
    }

    #[test]
    fn linear_in_boundary_data() {
        let p = StripProblem::new(Rectangle::new(0.0, 4.0, 0.0, 1.0).unwrap());
        let op = SubdomainOperator::new(0, Rectangle::new(0.0, 1.0, 0.0, 1.0).unwrap(), GridShape { nx: 24, ny: 24 }, &p)
            .unwrap();
        let g1 = |x: &Point| (3.0 * x.x).sin() + x.y;
        let g2 = |x: &Point| x.x * x.y - 2.0;
        let (l, m) = (1.7, -0.6);
        let a = op.solve(&g1, false).unwrap();
        let b = op.solve(&g2, false).unwrap();
        let c = op.solve(&|x| l * g1(x) + m * g2(x), false).unwrap();
        for k in 0..a.values.len() {
            assert_abs_diff_eq!(c.values[k], l * a.values[k] + m * b.values[k], epsilon = 1e-9);
        }
    }

    #[test]
    fn discrete_maximum_principle() {
        let p = StripProblem::new(Rectangle::new(0.0, 4.0, 0.0, 1.0).unwrap());
        let op = SubdomainOperator::new(2, Rectangle::new(2.0, 3.0, 0.0, 1.0).unwrap(), GridShape { nx: 20, ny: 20 }, &p)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let coef: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = |x: &Point| coef[0] + coef[1] * (5.0 * x.x).sin() + coef[2] * (4.0 * x.y).cos() + coef[3] * x.x * x.y;
            let f = op.solve(&g, false).unwrap();
            let mut bmax = f64::NEG_INFINITY;
            let mut bmin = f64::INFINITY;
            for j in 0..=f.ny {
                for i in 0..=f.nx {
                    if i == 0 || j == 0 || i == f.nx || j == f.ny {
                        bmax = bmax.max(f.at(i, j));
                        bmin = bmin.min(f.at(i, j));
                    }
                }
            }
            // With c ≤ 0 the bound is on the positive and negative parts.
            let hi = bmax.max(0.0);
            let lo = bmin.min(0.0);
            assert!(f.values.iter().all(|v| *v <= hi + 1e-12 && *v >= lo - 1e-12));
        }
    }

    #[test]
    fn gradient_of_simple_fields() {
        let rect = Rectangle::unit_square();
        let mk = |f: &dyn Fn(&Point) -> f64| {
            let mut g = GridField {
                subdomain: 0,
                rect,
                nx: 10,
                ny: 10,
                values: vec![0.0; 121],
            };
            for j in 0..=10 {
                for i in 0..=10 {
                    g.values[j * 11 + i] = f(&g.point(i, j));
                }
            }
            g
        };
        let c = GradientGrid::from_field(&mk(&|_| 3.0));
        let x = GradientGrid::from_field(&mk(&|p| p.x));
        let sq = GradientGrid::from_field(&mk(&|p| p.x * p.x));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = Point::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            assert_eq!(c.sample(&p), Point::zeros());
            assert_abs_diff_eq!(x.sample(&p), Point::new(1.0, 0.0), epsilon = 1e-10);
        }
        // Central and one-sided second-order stencils are exact for quadratics at nodes.
        assert_abs_diff_eq!(sq.sample(&Point::new(0.3, 0.5)).x, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(sq.sample(&Point::new(0.0, 0.5)).x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sq.sample(&Point::new(1.0, 0.5)).x, 2.0, epsilon = 1e-12);
    }

    fn strip_gradient_error(n: usize) -> f64 {
        let rect = Rectangle::new(1.0, 2.0, 0.0, 1.0).unwrap();
        let p = StripProblem::new(Rectangle::new(0.0, 4.0, 0.0, 1.0).unwrap());
        let f = solve_dirichlet(1, rect, GridShape { nx: n, ny: n }, &p, &StripProblem::exact_u).unwrap();
        let g = GradientGrid::from_field(&f);
        let mut err = 0.0f64;
        for a in 0..=8 {
            for b in 0..=8 {
                let x = Point::new(1.0 + a as f64 / 8.0, b as f64 / 8.0);
                err = err.max((g.sample(&x) - StripProblem::exact_grad_u(&x)).norm());
            }
        }
        err
    }

    #[test]
    fn gradient_converges_at_second_order() {
        let e1 = strip_gradient_error(32);
        let e2 = strip_gradient_error(64);
        let order = (e1 / e2).log2();
        assert!(order >= 1.8, "order {order} ({e1:.3e} -> {e2:.3e})");
    }

    fn strip_partition() -> (Partition, StripProblem) {
        let rect = Rectangle::new(0.0, 4.0, 0.0, 1.0).unwrap();
        (build_partition(&rect, 4, 6).unwrap(), StripProblem::new(rect))
    }

    #[test]
    fn direct_sum_is_continuous_across_interfaces() {
        let (part, prob) = strip_partition();
        let ops = PartitionOperators::new(&part, &prob, 1.0 / 40.0).unwrap();
        let bases = InterfaceBases::new(&part, None).unwrap();
        let nodal: Vec<f64> = part.nodes.iter().map(|n| StripProblem::exact_u(&n.point()) + 0.01).collect();
        let data = bases.fit(&part, &nodal, &StripProblem::exact_u).unwrap();
        let fields = solve_partition(&part, &ops, &data, &StripProblem::exact_u, true).unwrap();
        for iface in &part.interfaces {
            for k in 0..100 {
                let x = Point::new(iface.x, k as f64 / 99.0);
                let l = fields[iface.left].sample(&x);
                let r = fields[iface.right].sample(&x);
                assert!((l - r).abs() <= 1e-9, "{l} vs {r}");
            }
        }
    }

    #[test]
    fn error_propagation_bounds_and_zero_noise() {
        let (part, prob) = strip_partition();
        let ops = PartitionOperators::new(&part, &prob, 1.0 / 24.0).unwrap();
        let bases = InterfaceBases::new(&part, None).unwrap();
        let ones = vec![1.0; part.n()];
        let w = solve_error_propagation(&part, &ops, &bases, &ones, None, 2.0).unwrap();
        let gamma = crate::interp::interface_overshoot(
            0.0,
            1.0,
            &part.interfaces[0].nodes.iter().map(|&i| part.nodes[i].position[1]).collect::<Vec<_>>(),
            default_shape(1.0, 6),
        )
        .unwrap()
        .gamma;
        for f in &w {
            assert!(f.values.iter().all(|v| *v >= -1e-12 && *v <= gamma + 1e-12));
        }
        let zeros = vec![0.0; part.n()];
        let wz = solve_error_propagation(&part, &ops, &bases, &ones, Some(&zeros), 2.0).unwrap();
        assert_eq!(w, wz);
        assert!(solve_error_propagation(&part, &ops, &bases, &ones[1..], None, 2.0).is_err());
    }

    #[test]
    fn noise_part_has_zero_mean() {
        let (part, prob) = strip_partition();
        let ops = PartitionOperators::new(&part, &prob, 1.0 / 16.0).unwrap();
        let bases = InterfaceBases::new(&part, None).unwrap();
        let zeros = vec![0.0; part.n()];
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 200;
        let len = ops.operators[1].nx + 1;
        let mut sum = vec![0.0; len * (ops.operators[1].ny + 1)];
        let mut sum2 = sum.clone();
        for _ in 0..draws {
            let omega: Vec<f64> = (0..part.n()).map(|_| rng.sample(StandardNormal)).collect();
            let w = solve_error_propagation(&part, &ops, &bases, &zeros, Some(&omega), 1.0).unwrap();
            for (k, v) in w[1].values.iter().enumerate() {
                sum[k] += v;
                sum2[k] += v * v;
            }
        }
        let n = draws as f64;
        for k in 0..sum.len() {
            let mean = sum[k] / n;
            let var = (sum2[k] / n - mean * mean).max(0.0) * n / (n - 1.0);
            let se = (var / n).sqrt();
            assert!(mean.abs() <= 3.0 * se + 1e-12 || se == 0.0 && mean == 0.0, "k={k} mean={mean} se={se}");
        }
    }
}
