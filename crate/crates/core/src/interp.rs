//! Interpolation of nodal values along an interface.
//!
//! Interfaces are vertical, so everything here is one-dimensional in the
//! coordinate `t = y`. The interface endpoints lie on the physical boundary;
//! they are included as extra centers carrying boundary data, which keeps the
//! Dirichlet data of each strip continuous at its corners.

use nalgebra::{DMatrix, DVector};

use crate::error::{PddError, Result};

/// Largest accepted 2-norm condition number of the collocation matrix.
pub const MAX_CONDITION: f64 = 1e14;

/// Largest number of free centers accepted by the brute-force overshoot search.
pub const MAX_OVERSHOOT_CENTERS: usize = 20;

/// An interpolator that is linear in the data: `R[u](t) = Σ L_i(t) u_i`.
pub trait LinearInterpolator: Send + Sync {
    fn centers(&self) -> &[f64];

    /// Writes the cardinal functions `L_i(t)` into `out`.
    fn cardinal(&self, t: f64, out: &mut [f64]);

    fn evaluate(&self, values: &[f64], t: f64) -> f64 {
        let mut l = vec![0.0; self.centers().len()];
        self.cardinal(t, &mut l);
        l.iter().zip(values).map(|(a, b)| a * b).sum()
    }
}

#[inline]
fn multiquadric(r: f64, shape: f64) -> f64 {
    (r * r + shape * shape).sqrt()
}

fn check_centers(centers: &[f64]) -> Result<()> {
    if centers.len() < 2 {
        return Err(PddError::InvalidArgument(format!(
            "need at least 2 centers, got {}",
            centers.len()
        )));
    }
    if centers.iter().any(|c| !c.is_finite()) {
        return Err(PddError::InvalidArgument("non-finite center".into()));
    }
    for i in 0..centers.len() {
        for j in 0..i {
            if centers[i] == centers[j] {
                return Err(PddError::InvalidArgument(format!("repeated center {}", centers[i])));
            }
        }
    }
    Ok(())
}

/// Multiquadric RBF basis `√(r² + c²)` on fixed centers, with the collocation matrix
/// inverted once so that any data vector can be fitted by a matrix-vector product.
#[derive(Debug, Clone)]
pub struct Multiquadric {
    centers: Vec<f64>,
    shape: f64,
    inverse: DMatrix<f64>,
}

impl Multiquadric {
    pub fn new(centers: &[f64], shape: f64) -> Result<Self> {
        check_centers(centers)?;
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(PddError::InvalidArgument(format!("shape must be positive, got {shape}")));
        }
        let p = centers.len();
        let a = DMatrix::from_fn(p, p, |i, j| multiquadric(centers[i] - centers[j], shape));
        let sv = a.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(cond <= MAX_CONDITION) {
            return Err(PddError::IllConditioned(cond));
        }
        let inverse = a
            .lu()
            .try_inverse()
            .ok_or_else(|| PddError::LinearSolve("singular multiquadric collocation matrix".into()))?;
        Ok(Self {
            centers: centers.to_vec(),
            shape,
            inverse,
        })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn fit(&self, values: &[f64]) -> Result<Interpolant> {
        if values.len() != self.centers.len() {
            return Err(PddError::InvalidArgument(format!(
                "{} values for {} centers",
                values.len(),
                self.centers.len()
            )));
        }
        let w = &self.inverse * DVector::from_column_slice(values);
        Ok(Interpolant {
            centers: self.centers.clone(),
            weights: w.as_slice().to_vec(),
            shape: self.shape,
        })
    }
}

impl LinearInterpolator for Multiquadric {
    fn centers(&self) -> &[f64] {
        &self.centers
    }

    fn cardinal(&self, t: f64, out: &mut [f64]) {
        // The collocation matrix is symmetric, so L(t) = A⁻¹ φ(t).
        let p = self.centers.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..p {
            let phi = multiquadric(t - self.centers[j], self.shape);
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.inverse[(i, j)] * phi;
            }
        }
    }
}

/// A fitted multiquadric interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolant {
    pub centers: Vec<f64>,
    pub weights: Vec<f64>,
    pub shape: f64,
}

impl Interpolant {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * multiquadric(t - c, self.shape))
            .sum()
    }
}

pub fn fit(centers: &[f64], values: &[f64], shape: f64) -> Result<Interpolant> {
    Multiquadric::new(centers, shape)?.fit(values)
}

/// Piecewise-linear interpolation, constant beyond the outermost centers.
#[derive(Debug, Clone)]
pub struct PiecewiseLinear {
    centers: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(centers: &[f64]) -> Result<Self> {
        check_centers(centers)?;
        if centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PddError::InvalidArgument("centers must be increasing".into()));
        }
        Ok(Self {
            centers: centers.to_vec(),
        })
    }
}

impl LinearInterpolator for PiecewiseLinear {
    fn centers(&self) -> &[f64] {
        &self.centers
    }

    fn cardinal(&self, t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let c = &self.centers;
        let n = c.len();
        if t <= c[0] {
            out[0] = 1.0;
            return;
        }
        if t >= c[n - 1] {
            out[n - 1] = 1.0;
            return;
        }
        let k = c.partition_point(|&x| x <= t) - 1;
        let s = (t - c[k]) / (c[k + 1] - c[k]);
        out[k] = 1.0 - s;
        out[k + 1] = s;
    }
}

/// Centers used on an interface: both endpoints followed by the interior nodes in order.
pub fn interface_centers(ymin: f64, ymax: f64, nodes: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(nodes.len() + 2);
    c.push(ymin);
    c.extend_from_slice(nodes);
    c.push(ymax);
    c
}

/// Default shape parameter: the mean spacing of the interface centers including endpoints.
pub fn default_shape(length: f64, nodes: usize) -> f64 {
    length / (nodes + 1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct OvershootEstimate {
    pub gamma: f64,
    /// Signs of the free centers attaining the maximum (first entry +1).
    pub argmax_pattern: Vec<i8>,
}

/// `sup_z sup_t |R[z](t)|` over sign patterns `z ∈ {±1}` on the `free` centers
/// (all other centers carry 0), evaluated on `grid_size` points of `[lo, hi]`.
pub fn overshoot(
    interp: &dyn LinearInterpolator,
    free: &[usize],
    range: (f64, f64),
    grid_size: usize,
) -> Result<OvershootEstimate> {
    let p = free.len();
    if p < 2 {
        return Err(PddError::InvalidArgument(format!("overshoot needs at least 2 free centers, got {p}")));
    }
    if p > MAX_OVERSHOOT_CENTERS {
        return Err(PddError::InvalidArgument(format!(
            "brute-force overshoot limited to {MAX_OVERSHOOT_CENTERS} centers, got {p}"
        )));
    }
    if grid_size < 2 {
        return Err(PddError::InvalidArgument("grid needs at least 2 points".into()));
    }
    let nc = interp.centers().len();
    let mut buf = vec![0.0; nc];
    // card[i][g] = L_{free[i]}(t_g)
    let mut card = vec![vec![0.0; grid_size]; p];
    for g in 0..grid_size {
        let t = range.0 + (range.1 - range.0) * g as f64 / (grid_size - 1) as f64;
        interp.cardinal(t, &mut buf);
        for (i, &f) in free.iter().enumerate() {
            card[i][g] = buf[f];
        }
    }
    // z and −z give the same sup, so fix z_0 = +1 and walk the remaining
    // 2^{p−1} patterns in Gray-code order, one sign flip per step.
    let mut signs = vec![1i8; p];
    let mut acc: Vec<f64> = (0..grid_size).map(|g| card.iter().map(|c| c[g]).sum()).collect();
    let sup = |acc: &[f64]| acc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut best = sup(&acc);
    let mut best_signs = signs.clone();
    let total: u64 = 1 << (p - 1);
    for k in 1..total {
        let bit = k.trailing_zeros() as usize + 1;
        signs[bit] = -signs[bit];
        let d = 2.0 * signs[bit] as f64;
        for (a, c) in acc.iter_mut().zip(&card[bit]) {
            *a += d * c;
        }
        let s = sup(&acc);
        if s > best {
            best = s;
            best_signs.clone_from(&signs);
        }
    }
    Ok(OvershootEstimate {
        gamma: best,
        argmax_pattern: best_signs,
    })
}

/// Overshoot of the multiquadric interpolator on `centers`, all of them free,
/// sampled at `grid_size` points spanning the centers.
pub fn overshoot_constant(centers: &[f64], shape: f64, grid_size: usize) -> Result<OvershootEstimate> {
    if centers.len() > MAX_OVERSHOOT_CENTERS {
        return Err(PddError::InvalidArgument(format!(
            "brute-force overshoot limited to {MAX_OVERSHOOT_CENTERS} centers, got {}",
            centers.len()
        )));
    }
    let mq = Multiquadric::new(centers, shape)?;
    let lo = centers.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let free: Vec<usize> = (0..centers.len()).collect();
    overshoot(&mq, &free, (lo, hi), grid_size)
}

/// Overshoot of the interface interpolator: `nodes` free, endpoints held at 0,
/// sampled with 50 points per node over the whole interface.
pub fn interface_overshoot(ymin: f64, ymax: f64, nodes: &[f64], shape: f64) -> Result<OvershootEstimate> {
    let centers = interface_centers(ymin, ymax, nodes);
    let mq = Multiquadric::new(&centers, shape)?;
    let free: Vec<usize> = (1..=nodes.len()).collect();
    overshoot(&mq, &free, (ymin, ymax), 50 * nodes.len().max(1))
}

/// Lebesgue constant `sup_t Σ|L_i(t)|` over the free centers; equals the overshoot.
pub fn lebesgue_constant(interp: &dyn LinearInterpolator, free: &[usize], range: (f64, f64), grid_size: usize) -> f64 {
    let mut buf = vec![0.0; interp.centers().len()];
    let mut best = 0.0f64;
    for g in 0..grid_size {
        let t = range.0 + (range.1 - range.0) * g as f64 / (grid_size - 1) as f64;
        interp.cardinal(t, &mut buf);
        best = best.max(free.iter().map(|&i| buf[i].abs()).sum());
    }
    best
}
