//! The kernel ergodic metric and its trajectory gradient.
//!
//! For a discrete trajectory of N states the metric is
//!
//! ```text
//! (1/N^2) sum_ij phi(s_i, s_j) - (2/N) sum_i p(s_i) + int p^2
//! ```
//!
//! with `phi` a Gaussian kernel of diagonal covariance `theta`. Time-step
//! weights cancel between the sums, so the value depends on the step count
//! only; the double sum includes the i = j diagonal. On SO(3)/SE(3) the same
//! structure is used with the squared-exponential group kernel and the
//! concentrated-Gaussian density, and the trajectory-independent `int p^2`
//! constant is omitted (no closed form on the group).
//!
//! Sums are reduced in fixed-size chunks combined in index order, so results
//! are bit-identical across thread counts.

use crate::distributions::{GaussianMixture, LieGaussianMixture};
use crate::error::{Error, Result};
use crate::liegroups::{lie_quadratic_d1, GroupElement, GroupKind, TangentVector, WeightMatrix};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Fixed reduction chunk length; independent of the thread count.
const CHUNK: usize = 64;

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(CHUNK)
        .map(|start| (start, (start + CHUNK).min(n)))
        .collect()
}

// ---------------------------------------------------------------------------
// Kernel parameters.
// ---------------------------------------------------------------------------

/// Diagonal bandwidth of the Gaussian nascent kernel. Entries are variances
/// (the diagonal of the kernel covariance), not standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelParams<T: Real> {
    /// One variance shared by every dimension.
    Isotropic(T),
    /// Per-dimension variances.
    Diagonal(DVector<T>),
}

impl<T: Real> KernelParams<T> {
    /// Per-dimension variance vector for a `dim`-dimensional space.
    pub fn expand(&self, dim: usize) -> Result<DVector<T>> {
        let theta = match self {
            KernelParams::Isotropic(v) => DVector::from_element(dim, *v),
            KernelParams::Diagonal(v) => {
                if v.len() != dim {
                    return Err(Error::DimMismatch(format!(
                        "kernel has {} entries but space has dim {}",
                        v.len(),
                        dim
                    )));
                }
                v.clone()
            }
        };
        if theta.iter().any(|t| *t <= T::zero()) {
            return Err(Error::Structure("kernel variances must be positive".into()));
        }
        Ok(theta)
    }

    /// Sum of the expanded entries; used for tie-breaking in grid scans.
    fn magnitude(&self, dim: usize) -> T {
        match self {
            KernelParams::Isotropic(v) => *v * T::c(dim as f64),
            KernelParams::Diagonal(v) => v.iter().fold(T::zero(), |a, b| a + *b),
        }
    }
}

/// Precomputed kernel factors for one bandwidth.
struct KernelFactors<T: Real> {
    inv_theta: Vec<T>,
    /// Gaussian normalization ((2 pi)^n prod theta)^(-1/2); the kernel peak.
    peak: T,
}

impl<T: Real> KernelFactors<T> {
    fn new(params: &KernelParams<T>, dim: usize) -> Result<Self> {
        let theta = params.expand(dim)?;
        let mut log_norm = T::zero();
        for t in theta.iter() {
            log_norm += (T::two_pi() * *t).ln();
        }
        Ok(KernelFactors {
            inv_theta: theta.iter().map(|t| T::one() / *t).collect(),
            peak: (-log_norm * T::c(0.5)).exp(),
        })
    }

    #[inline]
    fn eval(&self, x1: &[T], x2: &[T]) -> T {
        let mut q = T::zero();
        for i in 0..x1.len() {
            let d = x1[i] - x2[i];
            q += d * d * self.inv_theta[i];
        }
        self.peak * (-q * T::c(0.5)).exp()
    }

    /// Gradient in the first argument, accumulated into `out`.
    #[inline]
    fn accumulate_grad1(&self, x1: &[T], x2: &[T], out: &mut [T]) {
        let mut q = T::zero();
        for i in 0..x1.len() {
            let d = x1[i] - x2[i];
            q += d * d * self.inv_theta[i];
        }
        let v = self.peak * (-q * T::c(0.5)).exp();
        for i in 0..x1.len() {
            out[i] += -v * (x1[i] - x2[i]) * self.inv_theta[i];
        }
    }
}

/// Gaussian kernel value `N(x1 | x2, diag(theta))`.
pub fn kernel_eval<T: Real>(
    x1: &DVector<T>,
    x2: &DVector<T>,
    params: &KernelParams<T>,
) -> Result<T> {
    if x1.len() != x2.len() {
        return Err(Error::DimMismatch("kernel arguments differ in dim".into()));
    }
    let f = KernelFactors::new(params, x1.len())?;
    Ok(f.eval(x1.as_slice(), x2.as_slice()))
}

/// Derivative of [`kernel_eval`] in its first argument.
pub fn kernel_grad1<T: Real>(
    x1: &DVector<T>,
    x2: &DVector<T>,
    params: &KernelParams<T>,
) -> Result<DVector<T>> {
    if x1.len() != x2.len() {
        return Err(Error::DimMismatch("kernel arguments differ in dim".into()));
    }
    let f = KernelFactors::new(params, x1.len())?;
    let mut out = vec![T::zero(); x1.len()];
    f.accumulate_grad1(x1.as_slice(), x2.as_slice(), &mut out);
    Ok(DVector::from_vec(out))
}

// ---------------------------------------------------------------------------
// Lie kernel.
// ---------------------------------------------------------------------------

/// Squared-exponential kernel on the group:
/// `alpha * exp(-0.5 |log(g2^-1 g1)|^2_M)` with `M = diag(theta)^-1` and
/// `alpha` the Gaussian normalization over the tangent dimension.
pub fn lie_kernel_eval<T: Real>(
    g1: &GroupElement<T>,
    g2: &GroupElement<T>,
    params: &KernelParams<T>,
) -> Result<T> {
    let factors = LieKernelFactors::new(params, g1.kind())?;
    factors.eval(g1, g2)
}

/// Left-trivialized derivative of [`lie_kernel_eval`] in its first argument.
pub fn lie_kernel_grad1<T: Real>(
    g1: &GroupElement<T>,
    g2: &GroupElement<T>,
    params: &KernelParams<T>,
) -> Result<TangentVector<T>> {
    let factors = LieKernelFactors::new(params, g1.kind())?;
    factors.grad1(g1, g2)
}

struct LieKernelFactors<T: Real> {
    weight: WeightMatrix<T>,
    peak: T,
}

impl<T: Real> LieKernelFactors<T> {
    fn new(params: &KernelParams<T>, kind: GroupKind) -> Result<Self> {
        let d = kind.dof();
        let theta = params.expand(d)?;
        let mut log_norm = T::zero();
        for t in theta.iter() {
            log_norm += (T::two_pi() * *t).ln();
        }
        let inv = DVector::from_iterator(d, theta.iter().map(|t| T::one() / *t));
        Ok(LieKernelFactors {
            weight: WeightMatrix::from_diagonal(&inv)?,
            peak: (-log_norm * T::c(0.5)).exp(),
        })
    }

    fn eval(&self, g1: &GroupElement<T>, g2: &GroupElement<T>) -> Result<T> {
        let q = crate::liegroups::lie_quadratic(g1, g2, &self.weight)?;
        Ok(self.peak * (-q).exp())
    }

    fn grad1(&self, g1: &GroupElement<T>, g2: &GroupElement<T>) -> Result<TangentVector<T>> {
        let q = crate::liegroups::lie_quadratic(g1, g2, &self.weight)?;
        let value = self.peak * (-q).exp();
        let d1 = lie_quadratic_d1(g1, g2, &self.weight)?;
        Ok(d1.scaled(-value))
    }
}

// ---------------------------------------------------------------------------
// Trajectories.
// ---------------------------------------------------------------------------

/// Discrete-time Euclidean trajectory. States are stored column-per-step
/// (n x T); `states` column k is the state reached after applying `controls`
/// column k, so the two always have the same step count.
#[derive(Clone, Debug, PartialEq)]
pub struct EuclideanTrajectory<T: Real> {
    states: DMatrix<T>,
    controls: DMatrix<T>,
    dt: T,
}

impl<T: Real> EuclideanTrajectory<T> {
    pub fn new(states: DMatrix<T>, controls: DMatrix<T>, dt: T) -> Result<Self> {
        if states.ncols() != controls.ncols() {
            return Err(Error::DimMismatch(format!(
                "states have {} steps, controls {}",
                states.ncols(),
                controls.ncols()
            )));
        }
        if states.ncols() < 2 {
            return Err(Error::DimMismatch("trajectory needs at least 2 steps".into()));
        }
        if dt <= T::zero() {
            return Err(Error::Structure("dt must be positive".into()));
        }
        if states.iter().chain(controls.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("trajectory entries".into()));
        }
        Ok(EuclideanTrajectory { states, controls, dt })
    }

    /// Trajectory whose states are the given sample points, with zero
    /// controls. Handy for scoring point sets under the metric.
    pub fn from_points(points: &[DVector<T>], dt: T) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::DimMismatch("empty point set".into()));
        }
        let n = points[0].len();
        let t = points.len();
        let mut states = DMatrix::zeros(n, t);
        for (k, p) in points.iter().enumerate() {
            if p.len() != n {
                return Err(Error::DimMismatch("points differ in dim".into()));
            }
            states.set_column(k, p);
        }
        Self::new(states, DMatrix::zeros(n, t), dt)
    }

    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.controls.nrows()
    }

    pub fn steps(&self) -> usize {
        self.states.ncols()
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn states(&self) -> &DMatrix<T> {
        &self.states
    }

    pub fn controls(&self) -> &DMatrix<T> {
        &self.controls
    }

    pub fn state(&self, k: usize) -> DVector<T> {
        self.states.column(k).into_owned()
    }
}

/// Discrete-time trajectory on SO(3)/SE(3) with left-trivialized twist
/// controls (d x T).
#[derive(Clone, Debug)]
pub struct LieTrajectory<T: Real> {
    states: Vec<GroupElement<T>>,
    controls: DMatrix<T>,
    dt: T,
}

impl<T: Real> LieTrajectory<T> {
    pub fn new(states: Vec<GroupElement<T>>, controls: DMatrix<T>, dt: T) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::DimMismatch("trajectory needs at least 2 steps".into()));
        }
        if states.len() != controls.ncols() {
            return Err(Error::DimMismatch(format!(
                "states have {} steps, controls {}",
                states.len(),
                controls.ncols()
            )));
        }
        let kind = states[0].kind();
        if states.iter().any(|g| g.kind() != kind) {
            return Err(Error::KindMismatch {
                expected: kind.name(),
                got: "mixed kinds",
            });
        }
        if controls.nrows() != kind.dof() {
            return Err(Error::DimMismatch(format!(
                "controls have {} rows, {} needs {}",
                controls.nrows(),
                kind,
                kind.dof()
            )));
        }
        if dt <= T::zero() {
            return Err(Error::Structure("dt must be positive".into()));
        }
        Ok(LieTrajectory { states, controls, dt })
    }

    pub fn from_poses(states: Vec<GroupElement<T>>, dt: T) -> Result<Self> {
        let d = states.first().map(|g| g.dof()).unwrap_or(0);
        let t = states.len();
        Self::new(states, DMatrix::zeros(d, t), dt)
    }

    pub fn kind(&self) -> GroupKind {
        self.states[0].kind()
    }

    pub fn steps(&self) -> usize {
        self.states.len()
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn states(&self) -> &[GroupElement<T>] {
        &self.states
    }

    pub fn controls(&self) -> &DMatrix<T> {
        &self.controls
    }
}

// ---------------------------------------------------------------------------
// Euclidean metric and gradient.
// ---------------------------------------------------------------------------

fn check_traj_target<T: Real>(
    traj: &EuclideanTrajectory<T>,
    target: &GaussianMixture<T>,
) -> Result<()> {
    if traj.dim() != target.dim() {
        return Err(Error::DimMismatch(format!(
            "trajectory dim {} vs target dim {}",
            traj.dim(),
            target.dim()
        )));
    }
    Ok(())
}

/// Kernel ergodic metric of a trajectory against a Gaussian-mixture target.
pub fn ergodic_metric<T: Real>(
    traj: &EuclideanTrajectory<T>,
    target: &GaussianMixture<T>,
    params: &KernelParams<T>,
) -> Result<T> {
    check_traj_target(traj, target)?;
    let factors = KernelFactors::new(params, traj.dim())?;
    let n = traj.steps();
    let nf = T::c(n as f64);
    let flat = traj.states.as_slice();
    let dim = traj.dim();
    let col = |k: usize| &flat[k * dim..(k + 1) * dim];

    let kernel_sum: T = chunk_ranges(n)
        .par_iter()
        .map(|&(a, b)| {
            let mut acc = T::zero();
            for i in a..b {
                let xi = col(i);
                for j in 0..n {
                    acc += factors.eval(xi, col(j));
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(T::zero(), |a, b| a + b);

    let density_sum: T = chunk_ranges(n)
        .par_iter()
        .map(|&(a, b)| {
            let mut acc = T::zero();
            for i in a..b {
                acc += target.pdf(&traj.state(i)).expect("dim checked");
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(T::zero(), |a, b| a + b);

    Ok(kernel_sum / (nf * nf) - T::c(2.0) * density_sum / nf + target.sq_integral())
}

/// Per-step metric gradient: row t is
/// `-(2/N) grad p(s_t) + (2/N^2) sum_tau grad_1 phi(s_t, s_tau)`,
/// which is exactly `d(metric)/d(s_t)`. Returned as an n x T matrix with one
/// column per step.
pub fn ergodic_grad<T: Real>(
    traj: &EuclideanTrajectory<T>,
    target: &GaussianMixture<T>,
    params: &KernelParams<T>,
) -> Result<DMatrix<T>> {
    check_traj_target(traj, target)?;
    let factors = KernelFactors::new(params, traj.dim())?;
    let n = traj.steps();
    let nf = T::c(n as f64);
    let dim = traj.dim();
    let flat = traj.states.as_slice();
    let col = |k: usize| &flat[k * dim..(k + 1) * dim];
    let pair_scale = T::c(2.0) / (nf * nf);
    let dens_scale = T::c(2.0) / nf;

    let chunks: Vec<Vec<T>> = chunk_ranges(n)
        .par_iter()
        .map(|&(a, b)| {
            let mut block = vec![T::zero(); (b - a) * dim];
            for i in a..b {
                let xi = col(i);
                let out = &mut block[(i - a) * dim..(i - a + 1) * dim];
                for j in 0..n {
                    factors.accumulate_grad1(xi, col(j), out);
                }
                for v in out.iter_mut() {
                    *v *= pair_scale;
                }
                let dp = target.grad(&traj.state(i)).expect("dim checked");
                for (v, g) in out.iter_mut().zip(dp.iter()) {
                    *v -= dens_scale * *g;
                }
            }
            block
        })
        .collect();

    let mut grad = DMatrix::zeros(dim, n);
    for (c, &(a, b)) in chunks.iter().zip(chunk_ranges(n).iter()) {
        for i in a..b {
            for r in 0..dim {
                grad[(r, i)] = c[(i - a) * dim + r];
            }
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Lie metric and gradient.
// ---------------------------------------------------------------------------

fn check_lie_traj_target<T: Real>(
    traj: &LieTrajectory<T>,
    target: &LieGaussianMixture<T>,
) -> Result<()> {
    if traj.kind() != target.kind() {
        return Err(Error::KindMismatch {
            expected: target.kind().name(),
            got: traj.kind().name(),
        });
    }
    Ok(())
}

/// Kernel ergodic metric on the group. The trajectory-independent `int p^2`
/// term has no closed form on SO(3)/SE(3) and is omitted; reported values
/// follow the "constant omitted" convention.
pub fn lie_ergodic_metric<T: Real>(
    traj: &LieTrajectory<T>,
    target: &LieGaussianMixture<T>,
    params: &KernelParams<T>,
) -> Result<T> {
    check_lie_traj_target(traj, target)?;
    let factors = LieKernelFactors::new(params, traj.kind())?;
    let n = traj.steps();
    let nf = T::c(n as f64);
    let states = traj.states();

    let kernel_sum = chunk_ranges(n)
        .par_iter()
        .map(|&(a, b)| {
            let mut acc = T::zero();
            for i in a..b {
                for (j, gj) in states.iter().enumerate() {
                    acc += factors.eval(&states[i], gj).map_err(|e| {
                        Error::Branch(format!("kernel pair ({i},{j}): {e}"))
                    })?;
                }
            }
            Ok::<T, Error>(acc)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(T::zero(), |a, b| a + b);

    let density_sum = chunk_ranges(n)
        .par_iter()
        .map(|&(a, b)| {
            let mut acc = T::zero();
            for i in a..b {
                acc += target
                    .pdf(&states[i])
                    .map_err(|e| Error::Branch(format!("density at step {i}: {e}")))?;
            }
            Ok::<T, Error>(acc)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(T::zero(), |a, b| a + b);

    Ok(kernel_sum / (nf * nf) - T::c(2.0) * density_sum / nf)
}

/// Per-step trivialized metric gradient (d x T, one column per step);
/// matches finite differences under the right perturbation `g exp(eps z)`.
pub fn lie_ergodic_grad<T: Real>(
    traj: &LieTrajectory<T>,
    target: &LieGaussianMixture<T>,
    params: &KernelParams<T>,
) -> Result<DMatrix<T>> {
    check_lie_traj_target(traj, target)?;
    let factors = LieKernelFactors::new(params, traj.kind())?;
    let n = traj.steps();
    let nf = T::c(n as f64);
    let d = traj.kind().dof();
    let states = traj.states();
    let pair_scale = T::c(2.0) / (nf * nf);
    let dens_scale = T::c(2.0) / nf;

    let chunks = chunk_ranges(n)
        .par_iter()
        .map(|&(a, b)| {
            let mut block = vec![T::zero(); (b - a) * d];
            for i in a..b {
                let mut acc = DVector::<T>::zeros(d);
                for (j, gj) in states.iter().enumerate() {
                    let g = factors.grad1(&states[i], gj).map_err(|e| {
                        Error::Branch(format!("kernel pair ({i},{j}): {e}"))
                    })?;
                    acc += g.coords();
                }
                let dp = target
                    .grad(&states[i])
                    .map_err(|e| Error::Branch(format!("density at step {i}: {e}")))?;
                let row = acc * pair_scale - dp.coords() * dens_scale;
                block[(i - a) * d..(i - a + 1) * d].copy_from_slice(row.as_slice());
            }
            Ok::<Vec<T>, Error>(block)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grad = DMatrix::zeros(d, n);
    for (c, &(a, b)) in chunks.iter().zip(chunk_ranges(n).iter()) {
        for i in a..b {
            for r in 0..d {
                grad[(r, i)] = c[(i - a) * d + r];
            }
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Kernel parameter selection.
// ---------------------------------------------------------------------------

/// Selection objective: squared norm of the stacked sample gradient of
/// `-(1/N) sum_i p(s_i) + (1/N^2) sum_ij phi(s_i, s_j)`.
///
/// i.i.d. samples from the target are an ergodic trajectory in the limit,
/// so a good bandwidth makes them (near-)stationary under the metric.
pub fn kernel_tuning_objective<T: Real>(
    samples: &[DVector<T>],
    target: &GaussianMixture<T>,
    params: &KernelParams<T>,
) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::DimMismatch("no samples".into()));
    }
    let dim = target.dim();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::DimMismatch("sample dim differs from target".into()));
    }
    let factors = KernelFactors::new(params, dim)?;
    let n = samples.len();
    let nf = T::c(n as f64);
    let mut total = T::zero();
    let mut row = vec![T::zero(); dim];
    for si in samples {
        row.iter_mut().for_each(|v| *v = T::zero());
        for sj in samples {
            factors.accumulate_grad1(si.as_slice(), sj.as_slice(), &mut row);
        }
        let dp = target.grad(si)?;
        let mut norm_sq = T::zero();
        for (k, v) in row.iter().enumerate() {
            let g = *v * T::c(2.0) / (nf * nf) - dp[k] / nf;
            norm_sq += g * g;
        }
        total += norm_sq;
    }
    Ok(total)
}

/// Result of a bandwidth grid scan.
#[derive(Clone, Debug)]
pub struct KernelTuning<T: Real> {
    pub best: KernelParams<T>,
    pub best_index: usize,
    /// Objective value per grid candidate, in input order.
    pub objectives: Vec<T>,
}

/// Scan a candidate grid and return the minimizer of
/// [`kernel_tuning_objective`]; ties break toward the larger bandwidth.
pub fn tune_kernel<T: Real>(
    samples: &[DVector<T>],
    target: &GaussianMixture<T>,
    grid: &[KernelParams<T>],
) -> Result<KernelTuning<T>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let dim = target.dim();
    let mut objectives = Vec::with_capacity(grid.len());
    let mut best_index = 0;
    for (i, candidate) in grid.iter().enumerate() {
        let j = kernel_tuning_objective(samples, target, candidate)?;
        objectives.push(j);
        let better = j < objectives[best_index]
            || (j == objectives[best_index]
                && candidate.magnitude(dim) > grid[best_index].magnitude(dim));
        if i > 0 && better {
            best_index = i;
        }
    }
    Ok(KernelTuning {
        best: grid[best_index].clone(),
        best_index,
        objectives,
    })
}

/// Log-spaced isotropic grid over `[lo, hi]`, inclusive.
pub fn log_grid<T: Real>(lo: T, hi: T, count: usize) -> Result<Vec<KernelParams<T>>> {
    if count == 0 {
        return Err(Error::EmptyGrid);
    }
    if lo <= T::zero() || hi < lo {
        return Err(Error::Structure("grid bounds must satisfy 0 < lo <= hi".into()));
    }
    if count == 1 {
        return Ok(vec![KernelParams::Isotropic(lo)]);
    }
    let step = (hi.ln() - lo.ln()) / T::c((count - 1) as f64);
    Ok((0..count)
        .map(|i| KernelParams::Isotropic((lo.ln() + step * T::c(i as f64)).exp()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::random_benchmark_gmm;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn iso(v: f64) -> KernelParams<f64> {
        KernelParams::Isotropic(v)
    }

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_row_slice(&[a, b])
    }

    fn random_traj(rng: &mut ChaCha8Rng, dim: usize, steps: usize) -> EuclideanTrajectory<f64> {
        let states = DMatrix::from_fn(dim, steps, |_, _| rng.random_range(0.0..1.0));
        EuclideanTrajectory::new(states, DMatrix::zeros(dim, steps), 0.1).unwrap()
    }

    // --- kernel -----------------------------------------------------------

    #[test]
    fn kernel_peak_2d() {
        let v = kernel_eval(&vec2(0.3, 0.4), &vec2(0.3, 0.4), &iso(1.0)).unwrap();
        assert_abs_diff_eq!(v, 1.0 / (2.0 * std::f64::consts::PI), epsilon = 1e-14);
    }

    #[test]
    fn kernel_grad_zero_at_coincidence() {
        let g = kernel_grad1(&vec2(0.3, 0.4), &vec2(0.3, 0.4), &iso(0.1)).unwrap();
        assert_eq!(g, DVector::zeros(2));
    }

    #[test]
    fn kernel_symmetry_and_antisymmetry() {
        let x1 = vec2(0.1, 0.9);
        let x2 = vec2(0.5, 0.2);
        let p = KernelParams::Diagonal(vec2(0.05, 0.2));
        assert_abs_diff_eq!(
            kernel_eval(&x1, &x2, &p).unwrap(),
            kernel_eval(&x2, &x1, &p).unwrap(),
            epsilon = 1e-15
        );
        let g12 = kernel_grad1(&x1, &x2, &p).unwrap();
        let g21 = kernel_grad1(&x2, &x1, &p).unwrap();
        assert!((g12 + g21).norm() < 1e-15);
    }

    #[test]
    fn kernel_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = KernelParams::Diagonal(vec2(0.03, 0.08));
        let eps = 1e-7;
        for _ in 0..50 {
            let x1 = vec2(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let x2 = vec2(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let g = kernel_grad1(&x1, &x2, &p).unwrap();
            for j in 0..2 {
                let mut xp = x1.clone();
                let mut xm = x1.clone();
                xp[j] += eps;
                xm[j] -= eps;
                let fd = (kernel_eval(&xp, &x2, &p).unwrap()
                    - kernel_eval(&xm, &x2, &p).unwrap())
                    / (2.0 * eps);
                let rel = (fd - g[j]).abs() / g.norm().max(1e-12);
                assert!(rel < 1e-6, "rel err {rel}");
            }
        }
    }

    #[test]
    fn kernel_rejects_nonpositive_theta() {
        assert!(kernel_eval(&vec2(0.0, 0.0), &vec2(0.0, 0.0), &iso(0.0)).is_err());
    }

    // --- lie kernel ---------------------------------------------------------

    #[test]
    fn lie_kernel_peak_is_alpha() {
        let g = GroupElement::<f64>::identity(GroupKind::SE3);
        let theta = 0.04;
        let v = lie_kernel_eval(&g, &g, &iso(theta)).unwrap();
        let alpha = (2.0 * std::f64::consts::PI * theta).powi(-3);
        assert_abs_diff_eq!(v, alpha, epsilon = 1e-12 * alpha);
    }

    #[test]
    fn lie_kernel_single_axis_matches_euclidean() {
        // one-axis SO(3) displacements reduce to a 1D Gaussian kernel in the
        // angle, up to the normalization over the remaining axes
        let theta = 0.09;
        let a = 0.4;
        let g1 = TangentVector::SO3(nalgebra::Vector3::new(a, 0.0, 0.0)).exp();
        let g2 = GroupElement::identity(GroupKind::SO3);
        let v = lie_kernel_eval(&g1, &g2, &iso(theta)).unwrap();
        let e1 = kernel_eval(
            &DVector::from_row_slice(&[a]),
            &DVector::from_row_slice(&[0.0]),
            &iso(theta),
        )
        .unwrap();
        let extra = 2.0 * std::f64::consts::PI * theta;
        assert_abs_diff_eq!(v, e1 / extra, epsilon = 1e-12);
    }

    #[test]
    fn lie_kernel_grad_zero_at_coincidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coords: Vec<f64> = (0..6).map(|_| rng.random_range(-0.4..0.4)).collect();
        let g = TangentVector::from_slice(GroupKind::SE3, &coords).unwrap().exp();
        let grad = lie_kernel_grad1(&g, &g, &iso(0.05)).unwrap();
        assert!(grad.norm() < 1e-12);
    }

    #[test]
    fn lie_kernel_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = iso(0.1);
        let eps = 1e-6;
        for _ in 0..20 {
            let c1: Vec<f64> = (0..6).map(|_| rng.random_range(-0.4..0.4)).collect();
            let c2: Vec<f64> = (0..6).map(|_| rng.random_range(-0.4..0.4)).collect();
            let g1 = TangentVector::from_slice(GroupKind::SE3, &c1).unwrap().exp();
            let g2 = TangentVector::from_slice(GroupKind::SE3, &c2).unwrap().exp();
            let grad = lie_kernel_grad1(&g1, &g2, &params).unwrap().coords();
            for j in 0..6 {
                let mut e = [0.0; 6];
                e[j] = eps;
                let step = TangentVector::from_slice(GroupKind::SE3, &e).unwrap();
                let plus = lie_kernel_eval(&g1.compose(&step.exp()).unwrap(), &g2, &params).unwrap();
                let minus = lie_kernel_eval(&g1.compose(&step.scaled(-1.0).exp()).unwrap(), &g2, &params)
                    .unwrap();
                let fd = (plus - minus) / (2.0 * eps);
                let rel = (fd - grad[j]).abs() / grad.norm().max(1e-9);
                assert!(rel < 1e-5, "component {j} rel err {rel}");
            }
        }
    }

    // --- metric -------------------------------------------------------------

    fn stationary_traj(point: &DVector<f64>, steps: usize) -> EuclideanTrajectory<f64> {
        EuclideanTrajectory::from_points(&vec![point.clone(); steps], 0.1).unwrap()
    }

    #[test]
    fn metric_stationary_closed_form() {
        let sigma2 = 0.07;
        let target = GaussianMixture::single(vec2(0.5, 0.5), DMatrix::identity(2, 2) * 0.02)
            .unwrap();
        let s0 = vec2(0.2, 0.6);
        let traj = stationary_traj(&s0, 16);
        let metric = ergodic_metric(&traj, &target, &iso(sigma2)).unwrap();
        let expected = 1.0 / (2.0 * std::f64::consts::PI * sigma2)
            - 2.0 * target.pdf(&s0).unwrap()
            + target.sq_integral();
        assert_abs_diff_eq!(metric, expected, epsilon = 1e-12);
    }

    #[test]
    fn metric_direct_double_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = random_benchmark_gmm::<f64, _>(2, &mut rng).unwrap();
        let traj = random_traj(&mut rng, 2, 37);
        let params = iso(0.02);
        let metric = ergodic_metric(&traj, &target, &params).unwrap();
        // naive sequential double sum
        let n = traj.steps();
        let mut ksum = 0.0;
        let mut dsum = 0.0;
        for i in 0..n {
            dsum += target.pdf(&traj.state(i)).unwrap();
            for j in 0..n {
                ksum += kernel_eval(&traj.state(i), &traj.state(j), &params).unwrap();
            }
        }
        let oracle = ksum / (n * n) as f64 - 2.0 * dsum / n as f64 + target.sq_integral();
        assert_abs_diff_eq!(metric, oracle, epsilon = 1e-12);
    }

    #[test]
    fn metric_samples_beat_uniform_points() {
        // i.i.d. target samples approximate the target better than uniform
        // noise, for every seed
        let params = iso(0.01);
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let target = random_benchmark_gmm::<f64, _>(2, &mut rng).unwrap();
            let samples = target.sample(&mut rng, 1024);
            let good = EuclideanTrajectory::from_points(&samples, 0.1).unwrap();
            let noise: Vec<DVector<f64>> = (0..1024)
                .map(|_| vec2(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
                .collect();
            let bad = EuclideanTrajectory::from_points(&noise, 0.1).unwrap();
            let m_good = ergodic_metric(&good, &target, &params).unwrap();
            let m_bad = ergodic_metric(&bad, &target, &params).unwrap();
            assert!(
                m_good < m_bad,
                "seed {seed}: samples {m_good} not below uniform {m_bad}"
            );
        }
    }

    #[test]
    fn metric_invariant_to_state_repetition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let target = random_benchmark_gmm::<f64, _>(2, &mut rng).unwrap();
        let points: Vec<DVector<f64>> = (0..33)
            .map(|_| vec2(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect();
        let doubled: Vec<DVector<f64>> = points
            .iter()
            .flat_map(|p| [p.clone(), p.clone()])
            .collect();
        let params = iso(0.03);
        let a = ergodic_metric(
            &EuclideanTrajectory::from_points(&points, 0.1).unwrap(),
            &target,
            &params,
        )
        .unwrap();
        let b = ergodic_metric(
            &EuclideanTrajectory::from_points(&doubled, 0.1).unwrap(),
            &target,
            &params,
        )
        .unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn metric_invariant_to_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let target = random_benchmark_gmm::<f64, _>(2, &mut rng).unwrap();
        let mut points: Vec<DVector<f64>> = (0..40)
            .map(|_| vec2(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect();
        let params = iso(0.02);
        let a = ergodic_metric(
            &EuclideanTrajectory::from_points(&points, 0.1).unwrap(),
            &target,
            &params,
        )
        .unwrap();
        points.reverse();
        points.swap(3, 17);
        let b = ergodic_metric(
            &EuclideanTrajectory::from_points(&points, 0.1).unwrap(),
            &target,
            &params,
        )
        .unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn metric_independent_of_dt() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let target = random_benchmark_gmm::<f64, _>(2, &mut rng).unwrap();
        let points: Vec<DVector<f64>> = (0..20)
            .map(|_| vec2(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect();
        let params = iso(0.02);
        let a = ergodic_metric(
            &EuclideanTrajectory::from_points(&points, 0.1).unwrap(),
            &target,
            &params,
        )
        .unwrap();
        let b = ergodic_metric(
            &EuclideanTrajectory::from_points(&points, 0.5).unwrap(),
            &target,
            &params,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    // --- gradient -------------------------------------------------------------

    #[test]
    fn grad_flat_density_stationary_point() {
        // near-flat target and a repeated single state: both terms vanish
        let target =
            GaussianMixture::single(vec2(0.0, 0.0), DMatrix::identity(2, 2) * 1e6).unwrap();
        let traj = stationary_traj(&vec2(0.4, 0.6), 8);
        let grad = ergodic_grad(&traj, &target, &iso(0.05)).unwrap();
        assert!(grad.abs().max() < 1e-9);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let target = random_benchmark_gmm::<f64, _>(2, &mut rng).unwrap();
        let traj = random_traj(&mut rng, 2, 50);
        let params = iso(0.02);
        let grad = ergodic_grad(&traj, &target, &params).unwrap();
        let eps = 1e-6;
        let mut max_rel: f64 = 0.0;
        let scale = grad.abs().max();
        for k in 0..traj.steps() {
            for r in 0..2 {
                let mut sp = traj.states().clone();
                let mut sm = traj.states().clone();
                sp[(r, k)] += eps;
                sm[(r, k)] -= eps;
                let tp = EuclideanTrajectory::new(sp, traj.controls().clone(), 0.1).unwrap();
                let tm = EuclideanTrajectory::new(sm, traj.controls().clone(), 0.1).unwrap();
                let fd = (ergodic_metric(&tp, &target, &params).unwrap()
                    - ergodic_metric(&tm, &target, &params).unwrap())
                    / (2.0 * eps);
                max_rel = max_rel.max((fd - grad[(r, k)]).abs() / scale);
            }
        }
        assert!(max_rel < 1e-5, "max rel err {max_rel}");
    }

    #[test]
    fn grad_symmetric_pair_accumulation_oracle() {
        // scatter each unordered pair once to both rows; must equal the
        // per-row formula bit-for-bit up to summation order (1e-12)
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target = random_benchmark_gmm::<f64, _>(2, &mut rng).unwrap();
        let traj = random_traj(&mut rng, 2, 30);
        let params = iso(0.02);
        let grad = ergodic_grad(&traj, &target, &params).unwrap();

        let n = traj.steps();
        let mut pair = DMatrix::<f64>::zeros(2, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let g = kernel_grad1(&traj.state(i), &traj.state(j), &params).unwrap();
                for r in 0..2 {
                    pair[(r, i)] += g[r];
                    pair[(r, j)] -= g[r];
                }
            }
        }
        let scale = 2.0 / (n * n) as f64;
        for i in 0..n {
            let dp = target.grad(&traj.state(i)).unwrap();
            for r in 0..2 {
                pair[(r, i)] = pair[(r, i)] * scale - 2.0 / n as f64 * dp[r];
            }
        }
        assert!((grad - pair).abs().max() < 1e-12);
    }

    // --- lie metric --------------------------------------------------------------

    fn lie_target(seed: u64) -> LieGaussianMixture<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut comps = Vec::new();
        for w in [0.5, 0.5] {
            let coords: Vec<f64> = (0..6).map(|_| rng.random_range(-0.4..0.4)).collect();
            let mean = TangentVector::from_slice(GroupKind::SE3, &coords).unwrap().exp();
            comps.push(
                crate::distributions::LieGaussianComponent::new(
                    mean,
                    DMatrix::identity(6, 6) * 0.03,
                    w,
                )
                .unwrap(),
            );
        }
        LieGaussianMixture::new(comps).unwrap()
    }

    #[test]
    fn lie_metric_stationary_closed_form() {
        let target = lie_target(10);
        let g0 = target.components()[0].mean().clone();
        let traj = LieTrajectory::from_poses(vec![g0.clone(); 8], 0.1).unwrap();
        let params = iso(0.05);
        let metric = lie_ergodic_metric(&traj, &target, &params).unwrap();
        let alpha = lie_kernel_eval(&g0, &g0, &params).unwrap();
        let expected = alpha - 2.0 * target.pdf(&g0).unwrap();
        assert_abs_diff_eq!(metric, expected, epsilon = 1e-10);
    }

    #[test]
    fn lie_metric_samples_beat_uniform_poses() {
        let params = iso(0.02);
        for seed in 0..10 {
            let target = lie_target(100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let good_poses = target.sample(&mut rng, 256);
            let bad_poses: Vec<GroupElement<f64>> = (0..256)
                .map(|_| {
                    let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                    TangentVector::from_slice(GroupKind::SE3, &c).unwrap().exp()
                })
                .collect();
            let good = LieTrajectory::from_poses(good_poses, 0.1).unwrap();
            let bad = LieTrajectory::from_poses(bad_poses, 0.1).unwrap();
            let m_good = lie_ergodic_metric(&good, &target, &params).unwrap();
            let m_bad = lie_ergodic_metric(&bad, &target, &params).unwrap();
            assert!(m_good < m_bad, "seed {seed}: {m_good} vs {m_bad}");
        }
    }

    #[test]
    fn lie_grad_matches_finite_differences() {
        let target = lie_target(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let poses = target.sample(&mut rng, 30);
        let traj = LieTrajectory::from_poses(poses, 0.1).unwrap();
        let params = iso(0.04);
        let grad = lie_ergodic_grad(&traj, &target, &params).unwrap();
        let scale = grad.abs().max();
        let eps = 1e-6;
        let mut max_rel: f64 = 0.0;
        for k in 0..traj.steps() {
            for r in 0..6 {
                let mut e = [0.0; 6];
                e[r] = eps;
                let step = TangentVector::from_slice(GroupKind::SE3, &e).unwrap();
                let mut plus = traj.states().to_vec();
                plus[k] = plus[k].compose(&step.exp()).unwrap();
                let mut minus = traj.states().to_vec();
                minus[k] = minus[k].compose(&step.scaled(-1.0).exp()).unwrap();
                let mp = lie_ergodic_metric(
                    &LieTrajectory::from_poses(plus, 0.1).unwrap(),
                    &target,
                    &params,
                )
                .unwrap();
                let mm = lie_ergodic_metric(
                    &LieTrajectory::from_poses(minus, 0.1).unwrap(),
                    &target,
                    &params,
                )
                .unwrap();
                let fd = (mp - mm) / (2.0 * eps);
                max_rel = max_rel.max((fd - grad[(r, k)]).abs() / scale);
            }
        }
        assert!(max_rel < 1e-4, "max rel err {max_rel}");
    }

    // --- tuning ----------------------------------------------------------------

    #[test]
    fn tuning_single_sample_ignores_kernel() {
        let target = GaussianMixture::single(vec2(0.5, 0.5), DMatrix::identity(2, 2) * 0.05)
            .unwrap();
        let s = vec![vec2(0.3, 0.6)];
        let j1 = kernel_tuning_objective(&s, &target, &iso(0.01)).unwrap();
        let j2 = kernel_tuning_objective(&s, &target, &iso(10.0)).unwrap();
        let expected = target.grad(&s[0]).unwrap().norm_squared();
        assert_abs_diff_eq!(j1, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(j2, expected, epsilon = 1e-12);
    }

    #[test]
    fn tuning_kernel_term_vanishes_for_wide_kernel() {
        let target = GaussianMixture::single(vec2(0.5, 0.5), DMatrix::identity(2, 2) * 0.05)
            .unwrap();
        let samples = vec![vec2(0.4, 0.5), vec2(0.6, 0.5)];
        let j_wide = kernel_tuning_objective(&samples, &target, &iso(1e8)).unwrap();
        let n = samples.len() as f64;
        let density_only: f64 = samples
            .iter()
            .map(|s| (target.grad(s).unwrap() / n).norm_squared())
            .sum();
        assert_abs_diff_eq!(j_wide, density_only, epsilon = 1e-12 + density_only * 1e-6);
    }

    #[test]
    fn tuning_objective_matches_scalar_finite_differences() {
        // the objective is built from gradients; check the inner gradient
        // against FD of the scalar it differentiates
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let target = random_benchmark_gmm::<f64, _>(2, &mut rng).unwrap();
        let samples = target.sample(&mut rng, 12);
        let params = iso(0.03);
        let n = samples.len();
        let nf = n as f64;
        let scalar = |pts: &[DVector<f64>]| -> f64 {
            let mut dens = 0.0;
            let mut kern = 0.0;
            for i in 0..n {
                dens += target.pdf(&pts[i]).unwrap();
                for j in 0..n {
                    kern += kernel_eval(&pts[i], &pts[j], &params).unwrap();
                }
            }
            -dens / nf + kern / (nf * nf)
        };
        // assemble the stacked gradient the same way the objective does
        let mut j_manual = 0.0;
        let eps = 1e-6;
        for i in 0..n {
            for r in 0..2 {
                let mut plus = samples.clone();
                let mut minus = samples.clone();
                plus[i][r] += eps;
                minus[i][r] -= eps;
                let fd = (scalar(&plus) - scalar(&minus)) / (2.0 * eps);
                j_manual += fd * fd;
            }
        }
        let j = kernel_tuning_objective(&samples, &target, &params).unwrap();
        assert!((j - j_manual).abs() / j.max(1e-12) < 1e-4, "{j} vs {j_manual}");
    }

    #[test]
    fn tune_single_candidate_grid() {
        let target = GaussianMixture::single(vec2(0.5, 0.5), DMatrix::identity(2, 2) * 0.05)
            .unwrap();
        let samples = vec![vec2(0.4, 0.5), vec2(0.6, 0.5)];
        let grid = vec![iso(0.07)];
        let tuning = tune_kernel(&samples, &target, &grid).unwrap();
        assert_eq!(tuning.best, iso(0.07));
        assert!(matches!(
            tune_kernel(&samples, &target, &[]),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn tune_finds_interior_minimum() {
        // single isotropic Gaussian target; the sweep over a log grid has an
        // interior optimum
        let target = GaussianMixture::single(vec2(0.5, 0.5), DMatrix::identity(2, 2) * 0.03)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let samples = target.sample(&mut rng, 200);
        let grid = log_grid(1e-4, 1.0, 16).unwrap();
        let tuning = tune_kernel(&samples, &target, &grid).unwrap();
        assert!(tuning.objectives.iter().all(|j| j.is_finite()));
        assert!(
            tuning.best_index > 0 && tuning.best_index < grid.len() - 1,
            "minimizer at grid end: index {} of {} (objectives {:?})",
            tuning.best_index,
            grid.len(),
            tuning.objectives
        );
    }

    #[test]
    fn tune_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let target = random_benchmark_gmm::<f64, _>(2, &mut rng).unwrap();
        let samples = target.sample(&mut rng, 64);
        let grid = log_grid(1e-3, 0.3, 8).unwrap();
        let a = tune_kernel(&samples, &target, &grid).unwrap();
        let b = tune_kernel(&samples, &target, &grid).unwrap();
        assert_eq!(a.best_index, b.best_index);
        assert_eq!(a.objectives, b.objectives);
    }
}
