//! Evaluation-only Fourier ergodic metric.
//!
//! Cross-validates kernel-optimized trajectories: the weighted squared
//! difference of cosine-basis coefficients between the target distribution
//! and the trajectory empirical distribution,
//! `sum_k Lambda_k (p_k - c_k)^2` with `Lambda_k = (1 + |k|)^-(n+1)/2`.
//!
//! Distribution coefficients come from a tensor-product Gauss-Legendre
//! quadrature (64 nodes per dimension); the evaluator refuses dimensions
//! above 3 where that budget blows up. Nothing here is used by the planner.

use crate::distributions::GaussianMixture;
use crate::error::{Error, Result};
use crate::metric::EuclideanTrajectory;
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};

/// Gauss-Legendre nodes per dimension for distribution coefficients.
const QUAD_NODES: usize = 64;

/// Highest dimension the quadrature accepts.
const MAX_QUAD_DIM: usize = 3;

/// Cosine product basis over a rectangular domain `[0,L_1]x...x[0,L_n]`.
///
/// `counts[i]` is the highest index per dimension, so the index set is
/// `{0..=counts[i]}` per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierBasisSet<T: Real> {
    counts: Vec<usize>,
    lengths: Vec<T>,
}

impl<T: Real> FourierBasisSet<T> {
    pub fn new(counts: Vec<usize>, lengths: Vec<T>) -> Result<Self> {
        if counts.is_empty() || counts.len() != lengths.len() {
            return Err(Error::DimMismatch(
                "counts and lengths must be non-empty and agree".into(),
            ));
        }
        if counts.iter().any(|k| *k < 1) {
            return Err(Error::Structure("need at least index 1 per dimension".into()));
        }
        if lengths.iter().any(|l| *l <= T::zero()) {
            return Err(Error::Structure("domain lengths must be positive".into()));
        }
        Ok(FourierBasisSet { counts, lengths })
    }

    /// `max_index` per dimension on the unit cube `[0,1]^dims`.
    pub fn unit_cube(dims: usize, max_index: usize) -> Result<Self> {
        Self::new(vec![max_index; dims], vec![T::one(); dims])
    }

    pub fn dims(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn lengths(&self) -> &[T] {
        &self.lengths
    }

    /// Total number of multi-indices.
    pub fn len(&self) -> usize {
        self.counts.iter().map(|k| k + 1).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-indices in flat order (last dimension fastest).
    pub fn indices(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.len());
        let mut k = vec![0usize; self.dims()];
        loop {
            out.push(k.clone());
            let mut axis = self.dims();
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if k[axis] < self.counts[axis] {
                    k[axis] += 1;
                    break;
                }
                k[axis] = 0;
            }
        }
    }

    /// Per-dimension normalizer so each basis function has unit self inner
    /// product: sqrt(L) for index 0, sqrt(L/2) otherwise.
    fn h_factor(&self, axis: usize, k: usize) -> T {
        if k == 0 {
            self.lengths[axis].sqrt()
        } else {
            (self.lengths[axis] * T::c(0.5)).sqrt()
        }
    }

    /// Basis function value `f_k(x)`. Points outside the domain only get a
    /// warning; the cosines are total functions.
    pub fn eval(&self, k: &[usize], x: &DVector<T>) -> Result<T> {
        if k.len() != self.dims() || x.len() != self.dims() {
            return Err(Error::DimMismatch("index or point dim mismatch".into()));
        }
        for (axis, ki) in k.iter().enumerate() {
            if *ki > self.counts[axis] {
                return Err(Error::DimMismatch(format!(
                    "index {} exceeds count {} on axis {}",
                    ki, self.counts[axis], axis
                )));
            }
        }
        let mut outside = false;
        let mut v = T::one();
        for axis in 0..self.dims() {
            if x[axis] < T::zero() || x[axis] > self.lengths[axis] {
                outside = true;
            }
            let arg = T::c(k[axis] as f64) * T::pi() * x[axis] / self.lengths[axis];
            v *= arg.cos() / self.h_factor(axis, k[axis]);
        }
        if outside {
            log::warn!("basis evaluated outside the domain");
        }
        Ok(v)
    }

    fn signature(&self) -> (Vec<usize>, Vec<f64>) {
        (
            self.counts.clone(),
            self.lengths.iter().map(|l| l.to_f64_lossy()).collect(),
        )
    }
}

/// Which empirical object a coefficient sequence was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoefficientKind {
    Distribution,
    Trajectory,
}

/// Coefficients over a basis's multi-index set, in the basis's flat order.
#[derive(Clone, Debug)]
pub struct SpectralCoefficients<T: Real> {
    pub kind: CoefficientKind,
    values: Vec<T>,
    signature: (Vec<usize>, Vec<f64>),
}

impl<T: Real> SpectralCoefficients<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Value at a multi-index.
    pub fn at(&self, basis: &FourierBasisSet<T>, k: &[usize]) -> Result<T> {
        self.check_basis(basis)?;
        let mut flat = 0usize;
        for axis in 0..basis.dims() {
            flat = flat * (basis.counts[axis] + 1) + k[axis];
        }
        Ok(self.values[flat])
    }

    fn check_basis(&self, basis: &FourierBasisSet<T>) -> Result<()> {
        if self.signature != basis.signature() {
            return Err(Error::BasisMismatch(
                "coefficients were computed on a different basis".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Gauss-Legendre quadrature.
// ---------------------------------------------------------------------------

/// Nodes and weights on [-1, 1], by Newton iteration on the Legendre
/// recurrence.
fn gauss_legendre<T: Real>(n: usize) -> (Vec<T>, Vec<T>) {
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    for i in 0..n {
        let mut x = (T::pi() * (T::c(i as f64) + T::c(0.75)) / (T::c(n as f64) + T::c(0.5))).cos();
        let mut dp = T::one();
        for _ in 0..100 {
            // evaluate P_n and P'_n by recurrence
            let mut p0 = T::one();
            let mut p1 = x;
            for k in 2..=n {
                let kf = T::c(k as f64);
                let p2 = ((T::c(2.0) * kf - T::one()) * x * p1 - (kf - T::one()) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = T::c(n as f64) * (x * p1 - p0) / (x * x - T::one());
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < T::default_epsilon() * T::c(4.0) {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = T::c(2.0) / ((T::one() - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Nodes and weights mapped to [0, length].
fn mapped_quadrature<T: Real>(n: usize, length: T) -> (Vec<T>, Vec<T>) {
    let (nodes, weights) = gauss_legendre::<T>(n);
    let half = length * T::c(0.5);
    (
        nodes.iter().map(|x| half * (*x + T::one())).collect(),
        weights.iter().map(|w| *w * half).collect(),
    )
}

// ---------------------------------------------------------------------------
// Coefficients.
// ---------------------------------------------------------------------------

/// Coefficients `<f, f_k>` of an arbitrary density by tensor-product
/// Gauss-Legendre quadrature. Refuses dims above 3.
pub fn function_coeffs<T: Real>(
    basis: &FourierBasisSet<T>,
    f: impl Fn(&DVector<T>) -> T,
) -> Result<SpectralCoefficients<T>> {
    let n = basis.dims();
    if n > MAX_QUAD_DIM {
        return Err(Error::QuadratureOverflow(format!(
            "tensor quadrature needs {QUAD_NODES}^{n} nodes; dims above {MAX_QUAD_DIM} refused"
        )));
    }

    // per-axis nodes/weights and cosine tables B[k][node] = cos * w / h
    let mut nodes = Vec::with_capacity(n);
    let mut tables = Vec::with_capacity(n);
    for axis in 0..n {
        let (xs, ws) = mapped_quadrature(QUAD_NODES, basis.lengths[axis]);
        let rows = basis.counts[axis] + 1;
        let mut b = DMatrix::zeros(rows, QUAD_NODES);
        for k in 0..rows {
            let h = basis.h_factor(axis, k);
            for (j, x) in xs.iter().enumerate() {
                let arg = T::c(k as f64) * T::pi() * *x / basis.lengths[axis];
                b[(k, j)] = arg.cos() * ws[j] / h;
            }
        }
        nodes.push(xs);
        tables.push(b);
    }

    // density tensor, row-major with the last axis fastest
    let dims: Vec<usize> = vec![QUAD_NODES; n];
    let total: usize = dims.iter().product();
    let mut tensor = vec![T::zero(); total];
    let mut point = DVector::zeros(n);
    for (flat, value) in tensor.iter_mut().enumerate() {
        let mut rem = flat;
        for axis in (0..n).rev() {
            point[axis] = nodes[axis][rem % QUAD_NODES];
            rem /= QUAD_NODES;
        }
        *value = f(&point);
    }

    // contract the leading axis against each cosine table in turn, appending
    // the coefficient index as the new fastest axis; after n contractions the
    // layout is [k_1, ..., k_n] with k_n fastest
    let mut current = tensor;
    let mut cur_dims = dims;
    for table in &tables {
        let d0 = cur_dims[0];
        let rest: usize = cur_dims[1..].iter().product();
        let rows = table.nrows();
        let mut next = vec![T::zero(); rest * rows];
        for x0 in 0..d0 {
            let src = &current[x0 * rest..(x0 + 1) * rest];
            for (r, s) in src.iter().enumerate() {
                let dst = &mut next[r * rows..(r + 1) * rows];
                for (k, slot) in dst.iter_mut().enumerate() {
                    *slot += *s * table[(k, x0)];
                }
            }
        }
        current = next;
        cur_dims = cur_dims[1..]
            .iter()
            .copied()
            .chain(std::iter::once(rows))
            .collect();
    }

    Ok(SpectralCoefficients {
        kind: CoefficientKind::Distribution,
        values: current,
        signature: basis.signature(),
    })
}

/// Distribution coefficients `p_k = <p, f_k>`. Warns when the mixture has
/// noticeable mass outside the domain.
pub fn distribution_coeffs<T: Real>(
    basis: &FourierBasisSet<T>,
    target: &GaussianMixture<T>,
) -> Result<SpectralCoefficients<T>> {
    if target.dim() != basis.dims() {
        return Err(Error::DimMismatch(format!(
            "target dim {} vs basis dims {}",
            target.dim(),
            basis.dims()
        )));
    }
    let outside = mass_outside_estimate(basis, target);
    if outside > 1e-3 {
        log::warn!("target has approximately {outside:.2e} probability mass outside the domain");
    }
    function_coeffs(basis, |x| target.pdf(x).expect("dim checked"))
}

/// Union-bound estimate of mixture mass outside the box, from per-axis
/// marginal normal tails.
fn mass_outside_estimate<T: Real>(basis: &FourierBasisSet<T>, target: &GaussianMixture<T>) -> f64 {
    let mut total = 0.0;
    for c in target.components() {
        let mut outside = 0.0;
        for axis in 0..basis.dims() {
            let mu = c.mean()[axis].to_f64_lossy();
            let sd = c.cov()[(axis, axis)].to_f64_lossy().max(1e-300).sqrt();
            let len = basis.lengths[axis].to_f64_lossy();
            outside += normal_cdf((0.0 - mu) / sd) + (1.0 - normal_cdf((len - mu) / sd));
        }
        total += c.weight().to_f64_lossy() * outside.min(1.0);
    }
    total
}

/// Standard normal CDF via the Abramowitz-Stegun erf approximation
/// (absolute error < 1.5e-7; used only for warnings).
fn normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-x * x).exp();
    let erf = if x < 0.0 { -erf } else { erf };
    0.5 * (1.0 + erf)
}

/// Trajectory coefficients `c_k = (1/N) sum_t f_k(s_t)`.
pub fn trajectory_coeffs<T: Real>(
    basis: &FourierBasisSet<T>,
    traj: &EuclideanTrajectory<T>,
) -> Result<SpectralCoefficients<T>> {
    if traj.dim() != basis.dims() {
        return Err(Error::DimMismatch(format!(
            "trajectory dim {} vs basis dims {}",
            traj.dim(),
            basis.dims()
        )));
    }
    let n = basis.dims();
    let total = basis.len();
    let mut values = vec![T::zero(); total];
    // per-axis cosine values for one state
    let mut axis_vals: Vec<Vec<T>> = basis
        .counts
        .iter()
        .map(|k| vec![T::zero(); k + 1])
        .collect();
    for t in 0..traj.steps() {
        let s = traj.state(t);
        for axis in 0..n {
            for k in 0..=basis.counts[axis] {
                let arg = T::c(k as f64) * T::pi() * s[axis] / basis.lengths[axis];
                axis_vals[axis][k] = arg.cos() / basis.h_factor(axis, k);
            }
        }
        // accumulate the outer product over the flat index order
        for (flat, slot) in values.iter_mut().enumerate() {
            let mut rem = flat;
            let mut v = T::one();
            for axis in (0..n).rev() {
                let size = basis.counts[axis] + 1;
                v *= axis_vals[axis][rem % size];
                rem /= size;
            }
            *slot += v;
        }
    }
    let steps = T::c(traj.steps() as f64);
    for v in values.iter_mut() {
        *v /= steps;
    }
    Ok(SpectralCoefficients {
        kind: CoefficientKind::Trajectory,
        values,
        signature: basis.signature(),
    })
}

/// Weight `Lambda_k = (1 + |k|)^-(n+1)/2` with the Euclidean norm of the
/// integer multi-index.
pub fn lambda_weight<T: Real>(dims: usize, k: &[usize]) -> T {
    let norm_sq: f64 = k.iter().map(|ki| (*ki * *ki) as f64).sum();
    let base = T::one() + T::c(norm_sq.sqrt());
    base.powf(-T::c((dims as f64 + 1.0) / 2.0))
}

/// Fourier ergodic metric from precomputed coefficient sequences.
pub fn fourier_metric_from_coeffs<T: Real>(
    basis: &FourierBasisSet<T>,
    p: &SpectralCoefficients<T>,
    c: &SpectralCoefficients<T>,
) -> Result<T> {
    p.check_basis(basis)?;
    c.check_basis(basis)?;
    let mut acc = T::zero();
    for (k, (pv, cv)) in basis.indices().iter().zip(p.values.iter().zip(c.values.iter())) {
        let d = *pv - *cv;
        acc += lambda_weight::<T>(basis.dims(), k) * d * d;
    }
    Ok(acc)
}

/// Fourier ergodic metric of a trajectory against a mixture target.
pub fn fourier_metric<T: Real>(
    basis: &FourierBasisSet<T>,
    traj: &EuclideanTrajectory<T>,
    target: &GaussianMixture<T>,
) -> Result<T> {
    let p = distribution_coeffs(basis, target)?;
    let c = trajectory_coeffs(basis, traj)?;
    fourier_metric_from_coeffs(basis, &p, &c)
}

/// CSV dump of a coefficient sequence: multi-index columns then the value.
pub fn coefficients_to_csv<T: Real>(
    basis: &FourierBasisSet<T>,
    coeffs: &SpectralCoefficients<T>,
) -> Result<String> {
    coeffs.check_basis(basis)?;
    let mut out = String::new();
    for axis in 0..basis.dims() {
        out.push_str(&format!("k{}", axis + 1));
        out.push(',');
    }
    out.push_str("value\n");
    for (k, v) in basis.indices().iter().zip(coeffs.values.iter()) {
        for ki in k {
            out.push_str(&format!("{ki},"));
        }
        out.push_str(&format!("{}\n", v.to_f64_lossy()));
    }
    Ok(out)
}
