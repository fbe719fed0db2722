//! Target information distributions.
//!
//! Euclidean Gaussian mixtures with full covariance (density, gradient,
//! sampling, squared integral), concentrated Gaussians and mixtures on
//! SO(3)/SE(3), tangent-space EM fitting from pose samples, and the
//! randomized benchmark target generator.
//!
//! Covariances are floored at eigenvalue 1e-8 when degenerate; healthy
//! matrices are kept bit-exact.

use crate::error::{Error, Result};
use crate::liegroups::{GroupElement, GroupKind, TangentVector};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Eigenvalue floor applied to degenerate covariances.
fn cov_floor<T: Real>() -> T {
    T::c(1e-8)
}

/// Validated SPD covariance with cached Cholesky/inverse/normalization.
#[derive(Clone, Debug)]
struct SpdFactors<T: Real> {
    cov: DMatrix<T>,
    inv: DMatrix<T>,
    chol_l: DMatrix<T>,
    /// Gaussian normalization ((2 pi)^n det)^(-1/2).
    norm: T,
    log_norm: T,
}

impl<T: Real> SpdFactors<T> {
    fn new(cov: DMatrix<T>) -> Result<Self> {
        let n = cov.nrows();
        if n == 0 || cov.ncols() != n {
            return Err(Error::DimMismatch("covariance must be square".into()));
        }
        let sym_tol = nalgebra::RealField::max(T::c(1e-12), T::default_epsilon() * T::c(100.0));
        if (&cov - cov.transpose()).abs().max() >= sym_tol {
            return Err(Error::Structure("covariance not symmetric".into()));
        }
        let eig = cov.clone().symmetric_eigen();
        let cov = if eig.eigenvalues.min() < cov_floor() {
            // floor only when needed so healthy inputs stay bit-exact
            let mut vals = eig.eigenvalues.clone();
            for v in vals.iter_mut() {
                *v = nalgebra::RealField::max(*v, cov_floor());
            }
            let floored =
                &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            (&floored + floored.transpose()) * T::c(0.5)
        } else {
            cov
        };
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Structure("covariance not positive definite".into()))?;
        let chol_l = chol.l();
        let inv = chol.inverse();
        let mut log_det = T::zero();
        for i in 0..n {
            log_det += chol_l[(i, i)].ln();
        }
        log_det *= T::c(2.0);
        let log_norm = -T::c(0.5) * (T::c(n as f64) * (T::two_pi()).ln() + log_det);
        Ok(SpdFactors {
            cov,
            inv,
            chol_l,
            norm: log_norm.exp(),
            log_norm,
        })
    }

    /// Density of N(0, cov) at displacement `d`.
    fn density(&self, d: &DVector<T>) -> T {
        let q = (d.transpose() * &self.inv * d)[(0, 0)];
        self.norm * (-q * T::c(0.5)).exp()
    }

    fn log_density(&self, d: &DVector<T>) -> T {
        let q = (d.transpose() * &self.inv * d)[(0, 0)];
        self.log_norm - q * T::c(0.5)
    }
}

// ---------------------------------------------------------------------------
// Euclidean Gaussian mixtures.
// ---------------------------------------------------------------------------

/// One full-covariance Gaussian component.
#[derive(Clone, Debug)]
pub struct GaussianComponent<T: Real> {
    mean: DVector<T>,
    factors: SpdFactors<T>,
    weight: T,
}

impl<T: Real> GaussianComponent<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>, weight: T) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::DimMismatch(format!(
                "mean has dim {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if weight <= T::zero() {
            return Err(Error::Structure("component weight must be positive".into()));
        }
        Ok(GaussianComponent {
            mean,
            factors: SpdFactors::new(cov)?,
            weight,
        })
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.factors.cov
    }

    pub fn weight(&self) -> T {
        self.weight
    }
}

/// Target distribution: a normalized mixture of Gaussians in R^n.
#[derive(Clone, Debug)]
pub struct GaussianMixture<T: Real> {
    components: Vec<GaussianComponent<T>>,
    dim: usize,
}

impl<T: Real> GaussianMixture<T> {
    /// Build a mixture. Weights must sum to 1 within 1e-9; they are stored
    /// renormalized so the invariant holds to machine precision.
    pub fn new(mut components: Vec<GaussianComponent<T>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Structure("mixture needs at least one component".into()));
        }
        let dim = components[0].mean.len();
        if components.iter().any(|c| c.mean.len() != dim) {
            return Err(Error::DimMismatch("components disagree on dimension".into()));
        }
        let total: T = components.iter().map(|c| c.weight).fold(T::zero(), |a, b| a + b);
        if (total - T::one()).abs() > T::c(1e-9) {
            return Err(Error::Structure(format!(
                "weights sum to {}, expected 1",
                total.to_f64_lossy()
            )));
        }
        // renormalize only when needed so reload is a fixed point
        if (total - T::one()).abs() > T::default_epsilon() * T::c(16.0) {
            for c in components.iter_mut() {
                c.weight /= total;
            }
        }
        Ok(GaussianMixture { components, dim })
    }

    pub fn single(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        Self::new(vec![GaussianComponent::new(mean, cov, T::one())?])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[GaussianComponent<T>] {
        &self.components
    }

    fn check_dim(&self, x: &DVector<T>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch(format!(
                "point has dim {}, mixture has dim {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Mixture density at `x`.
    pub fn pdf(&self, x: &DVector<T>) -> Result<T> {
        self.check_dim(x)?;
        let mut acc = T::zero();
        for c in &self.components {
            acc += c.weight * c.factors.density(&(x - &c.mean));
        }
        Ok(acc)
    }

    /// Analytic density gradient: sum_i w_i N_i(x) Sigma_i^-1 (mu_i - x).
    pub fn grad(&self, x: &DVector<T>) -> Result<DVector<T>> {
        self.check_dim(x)?;
        let mut acc = DVector::zeros(self.dim);
        for c in &self.components {
            let d = x - &c.mean;
            let dens = c.weight * c.factors.density(&d);
            acc += (&c.factors.inv * (-d)) * dens;
        }
        Ok(acc)
    }

    /// Draw i.i.d. samples: categorical component choice, then a Cholesky
    /// transform of standard normals.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<DVector<T>>
    where
        StandardNormal: Distribution<T>,
    {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let c = &self.components[self.pick_component(rng)];
            let xi = DVector::from_fn(self.dim, |_, _| rng.sample(StandardNormal));
            out.push(&c.mean + &c.factors.chol_l * xi);
        }
        out
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = T::c(rng.random::<f64>());
        let mut acc = T::zero();
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return i;
            }
        }
        self.components.len() - 1
    }

    /// Closed form of the squared integral of the density:
    /// sum_ij w_i w_j N(mu_i | mu_j, Sigma_i + Sigma_j).
    pub fn sq_integral(&self) -> T {
        let mut acc = T::zero();
        for ci in &self.components {
            for cj in &self.components {
                let sum_cov = ci.factors.cov.clone() + &cj.factors.cov;
                let f = SpdFactors::new(sum_cov).expect("SPD sum of SPD covariances");
                acc += ci.weight * cj.weight * f.density(&(&ci.mean - &cj.mean));
            }
        }
        acc
    }

    /// Mixture mean.
    pub fn mean(&self) -> DVector<T> {
        let mut acc = DVector::zeros(self.dim);
        for c in &self.components {
            acc += &c.mean * c.weight;
        }
        acc
    }

    /// Mixture convolved with `N(0, diag(theta))`: same means and weights,
    /// covariances inflated by the kernel bandwidth. Planning coverage
    /// against the smoothed target makes the finite-bandwidth kernel metric
    /// minimizer reproduce the original target instead of a deconvolved,
    /// over-concentrated version of it.
    pub fn smoothed(&self, theta: &DVector<T>) -> Result<Self> {
        if theta.len() != self.dim {
            return Err(Error::DimMismatch("bandwidth dim differs from mixture".into()));
        }
        let bump = DMatrix::from_diagonal(theta);
        let comps = self
            .components
            .iter()
            .map(|c| GaussianComponent::new(c.mean.clone(), &c.factors.cov + &bump, c.weight))
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(comps)
    }
}

/// Randomized benchmark target: three full-covariance modes with means
/// uniform in [0,1]^dim, covariance eigenvalues uniform in [0.01, 0.02]
/// over a random orthogonal basis, and simplex-uniform weights.
pub fn random_benchmark_gmm<T: Real, R: Rng + ?Sized>(
    dim: usize,
    rng: &mut R,
) -> Result<GaussianMixture<T>>
where
    StandardNormal: Distribution<T>,
{
    if !(2..=6).contains(&dim) {
        return Err(Error::DimMismatch(format!(
            "benchmark dimension must be in [2,6], got {dim}"
        )));
    }
    // Dirichlet(1,1,1) weights via normalized unit exponentials.
    let raw: Vec<T> = (0..3)
        .map(|_| -T::c(rng.random::<f64>().max(1e-300)).ln())
        .collect();
    let total = raw.iter().fold(T::zero(), |a, b| a + *b);
    let mut comps = Vec::with_capacity(3);
    for w in raw {
        let mean = DVector::from_fn(dim, |_, _| T::c(rng.random::<f64>()));
        let gauss = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<T, _>(StandardNormal));
        let q = gauss.qr().q();
        let eigs = DVector::from_fn(dim, |_, _| T::c(rng.random::<f64>() * 0.01 + 0.01));
        let cov = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
        let cov = (&cov + cov.transpose()) * T::c(0.5);
        comps.push(GaussianComponent::new(mean, cov, w / total)?);
    }
    GaussianMixture::new(comps)
}

// ---------------------------------------------------------------------------
// Concentrated Gaussians on SO(3)/SE(3).
// ---------------------------------------------------------------------------

/// Concentrated Gaussian on a matrix group: a zero-mean Gaussian in the
/// tangent space at the mean, with density
/// `eta * exp(-0.5 log(gbar^-1 g)^T Sigma^-1 log(gbar^-1 g))`.
#[derive(Clone, Debug)]
pub struct LieGaussianComponent<T: Real> {
    mean: GroupElement<T>,
    factors: SpdFactors<T>,
    weight: T,
}

impl<T: Real> LieGaussianComponent<T> {
    pub fn new(mean: GroupElement<T>, cov: DMatrix<T>, weight: T) -> Result<Self> {
        let d = mean.dof();
        if cov.nrows() != d {
            return Err(Error::DimMismatch(format!(
                "covariance is {}x{} but {} has {} degrees of freedom",
                cov.nrows(),
                cov.ncols(),
                mean.kind(),
                d
            )));
        }
        if weight <= T::zero() {
            return Err(Error::Structure("component weight must be positive".into()));
        }
        let factors = SpdFactors::new(cov)?;
        // concentration check: 3 sigma of the rotation block under pi/2
        let rd = 3.min(d);
        let rot_block = factors.cov.view((0, 0), (rd, rd)).into_owned();
        let max_eig = rot_block.symmetric_eigen().eigenvalues.max();
        if T::c(3.0) * max_eig.sqrt() >= T::frac_pi_2() {
            log::warn!(
                "Lie Gaussian is not concentrated: 3 sigma rotation radius {:.3} >= pi/2",
                (T::c(3.0) * max_eig.sqrt()).to_f64_lossy()
            );
        }
        Ok(LieGaussianComponent { mean, factors, weight })
    }

    pub fn mean(&self) -> &GroupElement<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.factors.cov
    }

    pub fn weight(&self) -> T {
        self.weight
    }

    pub fn kind(&self) -> GroupKind {
        self.mean.kind()
    }

    /// Normalization constant eta = ((2 pi)^d det Sigma)^(-1/2).
    pub fn normalization(&self) -> T {
        self.factors.norm
    }

    /// Density at `g`.
    pub fn pdf(&self, g: &GroupElement<T>) -> Result<T> {
        let v = self.mean.inverse().compose(g)?.log()?;
        Ok(self.factors.density(&v.coords()))
    }

    /// Left-trivialized density gradient (perturbation `g * exp(eps z)`):
    /// `DP(g) = P(g) * (-dexp_inv(-log(gbar^-1 g))^T Sigma^-1 log(gbar^-1 g))`.
    pub fn grad(&self, g: &GroupElement<T>) -> Result<TangentVector<T>> {
        let v = self.mean.inverse().compose(g)?.log()?;
        let coords = v.coords();
        let p = self.factors.density(&coords);
        let jac = v.scaled(-T::one()).dexp_inv()?;
        let grad = jac.transpose() * (&self.factors.inv * coords) * (-p);
        TangentVector::from_slice(g.kind(), grad.as_slice())
    }

    fn log_pdf(&self, g: &GroupElement<T>) -> Result<T> {
        let v = self.mean.inverse().compose(g)?.log()?;
        Ok(self.factors.log_density(&v.coords()))
    }

    /// Draw one sample by right-perturbing the mean: `g = gbar exp(eps)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupElement<T>
    where
        StandardNormal: Distribution<T>,
    {
        let d = self.mean.dof();
        let xi = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
        let eps = &self.factors.chol_l * xi;
        let step = TangentVector::from_slice(self.kind(), eps.as_slice())
            .expect("tangent from finite sample");
        self.mean.compose(&step.exp()).expect("same kind")
    }
}

/// Mixture of concentrated Gaussians of a uniform group kind.
#[derive(Clone, Debug)]
pub struct LieGaussianMixture<T: Real> {
    components: Vec<LieGaussianComponent<T>>,
}

impl<T: Real> LieGaussianMixture<T> {
    pub fn new(mut components: Vec<LieGaussianComponent<T>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Structure("mixture needs at least one component".into()));
        }
        let kind = components[0].kind();
        if components.iter().any(|c| c.kind() != kind) {
            return Err(Error::KindMismatch {
                expected: kind.name(),
                got: "mixed kinds",
            });
        }
        let total: T = components.iter().map(|c| c.weight).fold(T::zero(), |a, b| a + b);
        if (total - T::one()).abs() > T::c(1e-9) {
            return Err(Error::Structure(format!(
                "weights sum to {}, expected 1",
                total.to_f64_lossy()
            )));
        }
        // renormalize only when needed so reload is a fixed point
        if (total - T::one()).abs() > T::default_epsilon() * T::c(16.0) {
            for c in components.iter_mut() {
                c.weight /= total;
            }
        }
        Ok(LieGaussianMixture { components })
    }

    pub fn kind(&self) -> GroupKind {
        self.components[0].kind()
    }

    pub fn components(&self) -> &[LieGaussianComponent<T>] {
        &self.components
    }

    pub fn pdf(&self, g: &GroupElement<T>) -> Result<T> {
        let mut acc = T::zero();
        for c in &self.components {
            acc += c.weight * c.pdf(g)?;
        }
        Ok(acc)
    }

    pub fn grad(&self, g: &GroupElement<T>) -> Result<TangentVector<T>> {
        let mut acc = DVector::zeros(self.kind().dof());
        for c in &self.components {
            acc += c.grad(g)?.coords() * c.weight;
        }
        TangentVector::from_slice(self.kind(), acc.as_slice())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<GroupElement<T>>
    where
        StandardNormal: Distribution<T>,
    {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let u = T::c(rng.random::<f64>());
            let mut acc = T::zero();
            let mut idx = self.components.len() - 1;
            for (i, c) in self.components.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            out.push(self.components[idx].sample(rng));
        }
        out
    }

    /// Log-likelihood of a pose set under the mixture.
    pub fn log_likelihood(&self, samples: &[GroupElement<T>]) -> Result<T> {
        let mut total = T::zero();
        for g in samples {
            total += self.log_mixture_density(g)?;
        }
        Ok(total)
    }

    fn log_mixture_density(&self, g: &GroupElement<T>) -> Result<T> {
        // log-sum-exp over components
        let mut terms = Vec::with_capacity(self.components.len());
        for c in &self.components {
            terms.push(c.weight.ln() + c.log_pdf(g)?);
        }
        let max = terms.iter().copied().fold(terms[0], nalgebra::RealField::max);
        let sum_exp = terms.iter().map(|t| (*t - max).exp()).fold(T::zero(), |a, b| a + b);
        Ok(max + sum_exp.ln())
    }

    /// Mixture with covariances inflated by `diag(theta)`; see
    /// [`GaussianMixture::smoothed`].
    pub fn smoothed(&self, theta: &DVector<T>) -> Result<Self> {
        if theta.len() != self.kind().dof() {
            return Err(Error::DimMismatch("bandwidth dim differs from group dof".into()));
        }
        let bump = DMatrix::from_diagonal(theta);
        let comps = self
            .components
            .iter()
            .map(|c| LieGaussianComponent::new(c.mean.clone(), &c.factors.cov + &bump, c.weight))
            .collect::<Result<Vec<_>>>()?;
        LieGaussianMixture::new(comps)
    }

    /// Offset every SE(3) mean's translation by `offset` (meters). Used to
    /// push fitted means below a demonstrated surface.
    pub fn translate_means(&self, offset: &Vector3<T>) -> Result<Self> {
        if self.kind() != GroupKind::SE3 {
            return Err(Error::KindMismatch {
                expected: "SE3",
                got: self.kind().name(),
            });
        }
        let mut comps = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let mut m = c.mean.homogeneous();
            for i in 0..3 {
                m[(i, 3)] += offset[i];
            }
            comps.push(LieGaussianComponent::new(
                GroupElement::from_homogeneous(m)?,
                c.factors.cov.clone(),
                c.weight,
            )?);
        }
        LieGaussianMixture::new(comps)
    }
}

// ---------------------------------------------------------------------------
// Karcher mean and tangent-space EM.
// ---------------------------------------------------------------------------

/// Weighted intrinsic mean: iterate `m <- m * exp(sum_i w_i log(m^-1 g_i))`
/// until the update norm falls below `tol`.
pub fn karcher_mean<T: Real>(
    samples: &[GroupElement<T>],
    weights: Option<&[T]>,
    tol: T,
    max_iters: usize,
) -> Result<GroupElement<T>> {
    if samples.is_empty() {
        return Err(Error::Structure("Karcher mean of empty sample set".into()));
    }
    let kind = samples[0].kind();
    let total = match weights {
        Some(w) => w.iter().fold(T::zero(), |a, b| a + *b),
        None => T::c(samples.len() as f64),
    };
    if total <= T::zero() {
        return Err(Error::Structure("Karcher weights sum to zero".into()));
    }
    let mut mean = samples[0].clone();
    for _ in 0..max_iters {
        let mut step = DVector::zeros(kind.dof());
        let mean_inv = mean.inverse();
        for (i, g) in samples.iter().enumerate() {
            let w = weights.map_or(T::one(), |ws| ws[i]);
            step += mean_inv.compose(g)?.log()?.coords() * w;
        }
        step /= total;
        let update = TangentVector::from_slice(kind, step.as_slice())?;
        mean = mean.compose(&update.exp())?;
        if update.norm() < tol {
            return Ok(mean);
        }
    }
    Ok(mean)
}

/// Options for [`lie_gmm_fit_em`].
#[derive(Clone, Debug)]
pub struct EmOptions<T: Real> {
    pub max_iters: usize,
    pub ll_tol: T,
    pub max_restarts: usize,
}

impl<T: Real> Default for EmOptions<T> {
    fn default() -> Self {
        EmOptions {
            max_iters: 200,
            ll_tol: T::c(1e-9),
            max_restarts: 5,
        }
    }
}

/// Fit of a Lie GMM, with the per-iteration log-likelihood trace.
#[derive(Clone, Debug)]
pub struct EmFit<T: Real> {
    pub mixture: LieGaussianMixture<T>,
    pub log_likelihood: Vec<T>,
    pub restarts_used: usize,
}

/// Tangent-space EM for a mixture of concentrated Gaussians.
///
/// The E-step scores samples with the concentrated-Gaussian densities; the
/// M-step updates each mean by a responsibility-weighted Karcher iteration
/// (to 1e-8) and recomputes the covariance as the weighted outer product of
/// logs at the new mean. Initialization is k-means++ on tangent coordinates
/// at the Karcher mean of all samples. If any component's responsibility
/// mass collapses below 1e-6 the fit restarts with a fresh seed, at most
/// `max_restarts` times.
pub fn lie_gmm_fit_em<T: Real, R: Rng + ?Sized>(
    samples: &[GroupElement<T>],
    k: usize,
    rng: &mut R,
    options: &EmOptions<T>,
) -> Result<EmFit<T>>
where
    StandardNormal: Distribution<T>,
{
    if k == 0 {
        return Err(Error::Structure("EM needs k >= 1".into()));
    }
    if samples.len() < 10 * k {
        return Err(Error::DegenerateCluster(format!(
            "EM needs at least 10*k = {} samples, got {}",
            10 * k,
            samples.len()
        )));
    }
    let mut last_err = None;
    for restart in 0..=options.max_restarts {
        match em_single(samples, k, rng, options) {
            Ok(mut fit) => {
                fit.restarts_used = restart;
                return Ok(fit);
            }
            Err(e @ Error::DegenerateCluster(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::DegenerateCluster("EM failed".into())))
}

fn em_single<T: Real, R: Rng + ?Sized>(
    samples: &[GroupElement<T>],
    k: usize,
    rng: &mut R,
    options: &EmOptions<T>,
) -> Result<EmFit<T>> {
    let n = samples.len();
    let kind = samples[0].kind();
    let d = kind.dof();

    // tangent coordinates at the global Karcher mean
    let base = karcher_mean(samples, None, T::c(1e-10), 100)?;
    let base_inv = base.inverse();
    let mut coords = Vec::with_capacity(n);
    for g in samples {
        coords.push(base_inv.compose(g)?.log()?.coords());
    }

    let assignments = kmeans_pp(&coords, k, rng);

    // initial components from hard clusters
    let mut comps = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = (0..n).filter(|i| assignments[*i] == c).collect();
        if members.is_empty() {
            return Err(Error::DegenerateCluster(format!("empty initial cluster {c}")));
        }
        let centroid = members
            .iter()
            .fold(DVector::zeros(d), |acc, i| acc + &coords[*i])
            / T::c(members.len() as f64);
        let mean = base.compose(&TangentVector::from_slice(kind, centroid.as_slice())?.exp())?;
        let mean_inv = mean.inverse();
        let mut cov = DMatrix::zeros(d, d);
        for i in &members {
            let v = mean_inv.compose(&samples[*i])?.log()?.coords();
            cov += &v * v.transpose();
        }
        cov /= T::c(members.len() as f64);
        comps.push(LieGaussianComponent::new(
            mean,
            cov,
            T::c(members.len() as f64 / n as f64),
        )?);
    }
    let mut mixture = LieGaussianMixture::new(comps)?;

    let mut ll_trace = Vec::new();
    let mut resp = vec![vec![T::zero(); k]; n];
    for _ in 0..options.max_iters {
        // E-step (log domain)
        let mut ll = T::zero();
        for (i, g) in samples.iter().enumerate() {
            let mut terms = Vec::with_capacity(k);
            for c in mixture.components() {
                terms.push(c.weight().ln() + c.log_pdf(g)?);
            }
            let max = terms.iter().copied().fold(terms[0], nalgebra::RealField::max);
            let mut denom = T::zero();
            for t in &terms {
                denom += (*t - max).exp();
            }
            ll += max + denom.ln();
            for (c, t) in terms.iter().enumerate() {
                resp[i][c] = (*t - max).exp() / denom;
            }
        }
        ll_trace.push(ll);

        // M-step
        let mut new_comps = Vec::with_capacity(k);
        for c in 0..k {
            let mass = (0..n).fold(T::zero(), |acc, i| acc + resp[i][c]);
            if mass < T::c(1e-6) {
                return Err(Error::DegenerateCluster(format!(
                    "component {c} responsibility mass {} < 1e-6",
                    mass.to_f64_lossy()
                )));
            }
            // weighted Karcher update of the mean
            let mut mean = mixture.components()[c].mean().clone();
            for _ in 0..100 {
                let mean_inv = mean.inverse();
                let mut step = DVector::zeros(d);
                for (i, g) in samples.iter().enumerate() {
                    step += mean_inv.compose(g)?.log()?.coords() * resp[i][c];
                }
                step /= mass;
                let update = TangentVector::from_slice(kind, step.as_slice())?;
                mean = mean.compose(&update.exp())?;
                if update.norm() < T::c(1e-8) {
                    break;
                }
            }
            let mean_inv = mean.inverse();
            let mut cov = DMatrix::zeros(d, d);
            for (i, g) in samples.iter().enumerate() {
                let v = mean_inv.compose(g)?.log()?.coords();
                cov += &v * v.transpose() * resp[i][c];
            }
            cov /= mass;
            new_comps.push(LieGaussianComponent::new(mean, cov, mass / T::c(n as f64))?);
        }
        mixture = LieGaussianMixture::new(new_comps)?;

        if ll_trace.len() >= 2 {
            let prev = ll_trace[ll_trace.len() - 2];
            if (ll - prev).abs() < options.ll_tol * nalgebra::RealField::max(T::one(), ll.abs()) {
                break;
            }
        }
    }

    Ok(EmFit {
        mixture,
        log_likelihood: ll_trace,
        restarts_used: 0,
    })
}

/// k-means++ seeding followed by Lloyd iterations on tangent coordinates.
fn kmeans_pp<T: Real, R: Rng + ?Sized>(coords: &[DVector<T>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = coords.len();
    let mut centers: Vec<DVector<T>> = Vec::with_capacity(k);
    centers.push(coords[rng.random_range(0..n)].clone());
    while centers.len() < k {
        let d2: Vec<T> = coords
            .iter()
            .map(|x| {
                centers
                    .iter()
                    .map(|c| (x - c).norm_squared())
                    .fold(T::max_value().unwrap(), nalgebra::RealField::min)
            })
            .collect();
        let total = d2.iter().fold(T::zero(), |a, b| a + *b);
        let idx = if total <= T::zero() {
            rng.random_range(0..n)
        } else {
            let u = T::c(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            let mut pick = n - 1;
            for (i, v) in d2.iter().enumerate() {
                acc += *v;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(coords[idx].clone());
    }

    let mut assign = vec![0usize; n];
    for _ in 0..20 {
        let mut changed = false;
        for (i, x) in coords.iter().enumerate() {
            let mut best = 0;
            let mut best_d = (x - &centers[0]).norm_squared();
            for (c, center) in centers.iter().enumerate().skip(1) {
                let dd = (x - center).norm_squared();
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|i| assign[*i] == c).collect();
            if !members.is_empty() {
                let mut acc = DVector::zeros(center.len());
                for i in &members {
                    acc += &coords[*i];
                }
                *center = acc / T::c(members.len() as f64);
            }
        }
    }
    assign
}

// ---------------------------------------------------------------------------
// JSON mixture files.
// ---------------------------------------------------------------------------

pub const MIXTURE_SCHEMA: &str = "kes/mixture/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureFile {
    schema: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    components: Vec<ComponentFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentFile {
    weight: f64,
    /// n entries for Euclidean, 9 (row-major 3x3) for SO3, 16 (row-major
    /// 4x4) for SE3.
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

fn cov_from_rows<T: Real>(rows: &[Vec<f64>]) -> Result<DMatrix<T>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimMismatch("covariance rows must be square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| T::c(rows[i][j])))
}

fn cov_to_rows<T: Real>(cov: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..cov.nrows())
        .map(|i| (0..cov.ncols()).map(|j| cov[(i, j)].to_f64_lossy()).collect())
        .collect()
}

impl<T: Real> GaussianMixture<T> {
    pub fn to_json(&self) -> String {
        let file = MixtureFile {
            schema: MIXTURE_SCHEMA.to_string(),
            kind: "euclidean".to_string(),
            dim: Some(self.dim),
            components: self
                .components
                .iter()
                .map(|c| ComponentFile {
                    weight: c.weight.to_f64_lossy(),
                    mean: c.mean.iter().map(|x| x.to_f64_lossy()).collect(),
                    cov: cov_to_rows(&c.factors.cov),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("mixture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MixtureFile = serde_json::from_str(text)
            .map_err(|e| Error::Structure(format!("bad mixture JSON: {e}")))?;
        if file.schema != MIXTURE_SCHEMA {
            return Err(Error::Structure(format!(
                "unsupported mixture schema {:?}",
                file.schema
            )));
        }
        if file.kind != "euclidean" {
            return Err(Error::Structure(format!(
                "expected a Euclidean mixture, got kind {:?}",
                file.kind
            )));
        }
        let mut comps = Vec::with_capacity(file.components.len());
        for c in &file.components {
            comps.push(GaussianComponent::new(
                DVector::from_iterator(c.mean.len(), c.mean.iter().map(|x| T::c(*x))),
                cov_from_rows(&c.cov)?,
                T::c(c.weight),
            )?);
        }
        let mixture = GaussianMixture::new(comps)?;
        if let Some(dim) = file.dim {
            if dim != mixture.dim {
                return Err(Error::DimMismatch(format!(
                    "declared dim {dim} but components have dim {}",
                    mixture.dim
                )));
            }
        }
        Ok(mixture)
    }
}

impl<T: Real> LieGaussianMixture<T> {
    pub fn to_json(&self) -> String {
        let kind = self.kind();
        let file = MixtureFile {
            schema: MIXTURE_SCHEMA.to_string(),
            kind: kind.name().to_lowercase(),
            dim: None,
            components: self
                .components
                .iter()
                .map(|c| {
                    let mean = match kind {
                        GroupKind::SO3 => {
                            let r = c.mean.rotation();
                            (0..3)
                                .flat_map(|i| (0..3).map(move |j| (i, j)))
                                .map(|(i, j)| r[(i, j)].to_f64_lossy())
                                .collect()
                        }
                        GroupKind::SE3 => {
                            let m = c.mean.homogeneous();
                            (0..4)
                                .flat_map(|i| (0..4).map(move |j| (i, j)))
                                .map(|(i, j)| m[(i, j)].to_f64_lossy())
                                .collect()
                        }
                    };
                    ComponentFile {
                        weight: c.weight.to_f64_lossy(),
                        mean,
                        cov: cov_to_rows(&c.factors.cov),
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("mixture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MixtureFile = serde_json::from_str(text)
            .map_err(|e| Error::Structure(format!("bad mixture JSON: {e}")))?;
        if file.schema != MIXTURE_SCHEMA {
            return Err(Error::Structure(format!(
                "unsupported mixture schema {:?}",
                file.schema
            )));
        }
        let kind = match file.kind.as_str() {
            "so3" => GroupKind::SO3,
            "se3" => GroupKind::SE3,
            other => {
                return Err(Error::Structure(format!(
                    "expected a Lie mixture (so3/se3), got kind {other:?}"
                )))
            }
        };
        let mut comps = Vec::with_capacity(file.components.len());
        for c in &file.components {
            let mean = match kind {
                GroupKind::SO3 => {
                    if c.mean.len() != 9 {
                        return Err(Error::DimMismatch(
                            "SO3 mean must be 9 row-major entries".into(),
                        ));
                    }
                    let m = nalgebra::Matrix3::from_fn(|i, j| T::c(c.mean[3 * i + j]));
                    GroupElement::from_rotation(m)?
                }
                GroupKind::SE3 => {
                    if c.mean.len() != 16 {
                        return Err(Error::DimMismatch(
                            "SE3 mean must be 16 row-major entries".into(),
                        ));
                    }
                    let m = nalgebra::Matrix4::from_fn(|i, j| T::c(c.mean[4 * i + j]));
                    GroupElement::from_homogeneous(m)?
                }
            };
            comps.push(LieGaussianComponent::new(
                mean,
                cov_from_rows(&c.cov)?,
                T::c(c.weight),
            )?);
        }
        LieGaussianMixture::new(comps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_1d() -> GaussianMixture<f64> {
        GaussianMixture::single(DVector::from_row_slice(&[0.0]), DMatrix::identity(1, 1)).unwrap()
    }

    fn random_mixture(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> GaussianMixture<f64> {
        let mut comps = Vec::new();
        let mut weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        for w in weights {
            let mean = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
            let cov = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.3;
            comps.push(GaussianComponent::new(mean, cov, w).unwrap());
        }
        GaussianMixture::new(comps).unwrap()
    }

    #[test]
    fn pdf_standard_normal_peak() {
        let p = unit_1d();
        let v = p.pdf(&DVector::from_row_slice(&[0.0])).unwrap();
        assert_abs_diff_eq!(v, 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn pdf_two_component_hand_value() {
        // equal mixture of N(0,1) and N(2,1) evaluated at the first mean:
        // 0.5 * N(0|0,1) + 0.5 * N(2|0,1)
        let comps = vec![
            GaussianComponent::new(
                DVector::from_row_slice(&[0.0]),
                DMatrix::identity(1, 1),
                0.5,
            )
            .unwrap(),
            GaussianComponent::new(
                DVector::from_row_slice(&[2.0]),
                DMatrix::identity(1, 1),
                0.5,
            )
            .unwrap(),
        ];
        let p = GaussianMixture::new(comps).unwrap();
        let peak = 0.3989422804014327;
        let expected = 0.5 * peak + 0.5 * peak * (-2.0f64).exp();
        assert_abs_diff_eq!(
            p.pdf(&DVector::from_row_slice(&[0.0])).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pdf_integrates_to_one_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_mixture(&mut rng, 2, 2);
        let lo = -7.0;
        let hi = 7.0;
        let vol = (hi - lo) * (hi - lo);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = DVector::from_fn(2, |_, _| rng.random_range(lo..hi));
            acc += p.pdf(&x).unwrap();
        }
        let integral = acc / n as f64 * vol;
        assert!((integral - 1.0).abs() < 1e-2, "MC integral {integral}");
    }

    #[test]
    fn pdf_rejects_dim_mismatch() {
        let p = unit_1d();
        assert!(matches!(
            p.pdf(&DVector::from_row_slice(&[0.0, 1.0])),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn grad_zero_at_single_mode_mean() {
        let p = GaussianMixture::single(
            DVector::from_row_slice(&[0.3, -0.4]),
            DMatrix::identity(2, 2) * 0.5,
        )
        .unwrap();
        let g = p.grad(&DVector::from_row_slice(&[0.3, -0.4])).unwrap();
        assert!(g.norm() < 1e-14);
    }

    #[test]
    fn grad_standard_normal_hand_value() {
        let p = unit_1d();
        let g = p.grad(&DVector::from_row_slice(&[1.0])).unwrap();
        assert_abs_diff_eq!(g[0], -0.24197072451914337, epsilon = 1e-12);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_mixture(&mut rng, 4, 3);
        let eps = 1e-6;
        for _ in 0..100 {
            let x = DVector::from_fn(4, |_, _| rng.random_range(-1.5..1.5));
            let g = p.grad(&x).unwrap();
            for j in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += eps;
                xm[j] -= eps;
                let fd = (p.pdf(&xp).unwrap() - p.pdf(&xm).unwrap()) / (2.0 * eps);
                let rel = (fd - g[j]).abs() / g.norm().max(1e-12);
                assert!(rel < 1e-6, "component {j} rel err {rel}");
            }
        }
    }

    #[test]
    fn sample_deterministic_for_fixed_seed() {
        let mut rng1 = ChaCha8Rng::seed_from_u64(3);
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let p = random_mixture(&mut ChaCha8Rng::seed_from_u64(4), 3, 2);
        assert_eq!(p.sample(&mut rng1, 32), p.sample(&mut rng2, 32));
    }

    #[test]
    fn sample_degenerate_cov_is_floored() {
        let p = GaussianMixture::single(
            DVector::from_row_slice(&[1.0, 2.0]),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for s in p.sample(&mut rng, 16) {
            assert!((s - DVector::from_row_slice(&[1.0, 2.0])).norm() < 1e-2);
        }
    }

    #[test]
    fn sample_mean_and_mode_weights() {
        let comps = vec![
            GaussianComponent::new(
                DVector::from_row_slice(&[0.0, 0.0]),
                DMatrix::identity(2, 2) * 0.02,
                0.3,
            )
            .unwrap(),
            GaussianComponent::new(
                DVector::from_row_slice(&[3.0, 0.0]),
                DMatrix::identity(2, 2) * 0.02,
                0.7,
            )
            .unwrap(),
        ];
        let p = GaussianMixture::new(comps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let samples = p.sample(&mut rng, n);
        let frac2 = samples.iter().filter(|s| s[0] > 1.5).count() as f64 / n as f64;
        assert!((frac2 - 0.7).abs() < 0.01, "mode fraction {frac2}");
        let mean: DVector<f64> =
            samples.iter().fold(DVector::zeros(2), |a, s| a + s) / n as f64;
        let true_mean = p.mean();
        let se = ((0.3 * 0.7 * 9.0 + 0.02) / n as f64).sqrt();
        assert!((mean - true_mean).abs().max() < 3.0 * se);
    }

    #[test]
    fn sq_integral_single_unit_gaussian() {
        let p = unit_1d();
        assert_abs_diff_eq!(
            p.sq_integral(),
            1.0 / (2.0 * std::f64::consts::PI.sqrt()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sq_integral_duplicate_components_collapse() {
        let c = |w| {
            GaussianComponent::new(DVector::from_row_slice(&[0.5]), DMatrix::identity(1, 1), w)
                .unwrap()
        };
        let single = GaussianMixture::new(vec![c(1.0)]).unwrap();
        let double = GaussianMixture::new(vec![c(0.5), c(0.5)]).unwrap();
        assert_abs_diff_eq!(single.sq_integral(), double.sq_integral(), epsilon = 1e-14);
    }

    #[test]
    fn sq_integral_matches_grid_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_mixture(&mut rng, 2, 3);
        let lo = -8.0;
        let hi = 8.0;
        let n = 400;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let x = DVector::from_row_slice(&[lo + i as f64 * h, lo + j as f64 * h]);
                let v = p.pdf(&x).unwrap().powi(2);
                let w = if (i == 0 || i == n) && (j == 0 || j == n) {
                    0.25
                } else if i == 0 || i == n || j == 0 || j == n {
                    0.5
                } else {
                    1.0
                };
                acc += w * v;
            }
        }
        let quad = acc * h * h;
        let closed = p.sq_integral();
        assert!(
            (closed - quad).abs() / quad < 1e-4,
            "closed {closed} vs quadrature {quad}"
        );
    }

    // --- Lie Gaussians ------------------------------------------------------

    fn se3_component(seed: u64, sigma: f64) -> LieGaussianComponent<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<f64> = (0..6).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mean = TangentVector::from_slice(GroupKind::SE3, &coords).unwrap().exp();
        LieGaussianComponent::new(mean, DMatrix::identity(6, 6) * sigma * sigma, 1.0).unwrap()
    }

    #[test]
    fn lie_pdf_peak_is_normalization() {
        let c = se3_component(1, 0.2);
        assert_abs_diff_eq!(c.pdf(c.mean()).unwrap(), c.normalization(), epsilon = 1e-12);
    }

    #[test]
    fn lie_pdf_isotropic_so3_reduction() {
        let sigma: f64 = 0.3;
        let mean = TangentVector::SO3(nalgebra::Vector3::new(0.2, -0.1, 0.4)).exp();
        let c = LieGaussianComponent::new(
            mean.clone(),
            DMatrix::identity(3, 3) * sigma * sigma,
            1.0,
        )
        .unwrap();
        let a = 0.37;
        let g = mean
            .compose(&TangentVector::SO3(nalgebra::Vector3::new(a, 0.0, 0.0)).exp())
            .unwrap();
        let expected = c.normalization() * (-a * a / (2.0 * sigma * sigma)).exp();
        assert_abs_diff_eq!(c.pdf(&g).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn lie_pdf_matches_tangent_gaussian() {
        let c = se3_component(2, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let euc = GaussianMixture::single(DVector::zeros(6), c.cov().clone()).unwrap();
        for _ in 0..50 {
            let g = c.sample(&mut rng);
            let v = c.mean().inverse().compose(&g).unwrap().log().unwrap().coords();
            assert_abs_diff_eq!(c.pdf(&g).unwrap(), euc.pdf(&v).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn lie_pdf_left_translation_invariance() {
        let c = se3_component(4, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let h_coords: Vec<f64> = (0..6).map(|_| rng.random_range(-0.8..0.8)).collect();
            let h = TangentVector::from_slice(GroupKind::SE3, &h_coords).unwrap().exp();
            let g = c.sample(&mut rng);
            let shifted = LieGaussianComponent::new(
                h.compose(c.mean()).unwrap(),
                c.cov().clone(),
                1.0,
            )
            .unwrap();
            let lhs = shifted.pdf(&h.compose(&g).unwrap()).unwrap();
            let rhs = c.pdf(&g).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn lie_grad_zero_at_mean() {
        let c = se3_component(6, 0.2);
        assert!(c.grad(c.mean()).unwrap().norm() < 1e-12);
    }

    #[test]
    fn lie_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = se3_component(8, 0.3);
        let eps = 1e-6;
        for _ in 0..30 {
            let g = c.sample(&mut rng);
            let grad = c.grad(&g).unwrap().coords();
            for j in 0..6 {
                let mut e = [0.0; 6];
                e[j] = eps;
                let step = TangentVector::from_slice(GroupKind::SE3, &e).unwrap();
                let plus = c.pdf(&g.compose(&step.exp()).unwrap()).unwrap();
                let minus = c.pdf(&g.compose(&step.scaled(-1.0).exp()).unwrap()).unwrap();
                let fd = (plus - minus) / (2.0 * eps);
                let rel = (fd - grad[j]).abs() / grad.norm().max(1e-9);
                assert!(rel < 1e-5, "component {j} rel err {rel}");
            }
        }
    }

    #[test]
    fn lie_grad_single_axis_reduces_to_euclidean() {
        // an isotropic SO(3) Gaussian restricted to one axis behaves like a
        // 1D Euclidean Gaussian in the angle coordinate
        let sigma: f64 = 0.25;
        let mean = GroupElement::identity(GroupKind::SO3);
        let c = LieGaussianComponent::new(mean, DMatrix::identity(3, 3) * sigma * sigma, 1.0)
            .unwrap();
        let a = 0.3;
        let g = TangentVector::SO3(nalgebra::Vector3::new(a, 0.0, 0.0)).exp();
        let grad = c.grad(&g).unwrap().coords();
        let expected = c.pdf(&g).unwrap() * (-a / (sigma * sigma));
        assert_abs_diff_eq!(grad[0], expected, epsilon = 1e-10);
        assert!(grad[1].abs() < 1e-12 && grad[2].abs() < 1e-12);
    }

    #[test]
    fn lie_sample_concentrates_in_small_cov_limit() {
        let mean = se3_component(9, 0.2).mean().clone();
        let c = LieGaussianComponent::new(mean.clone(), DMatrix::identity(6, 6) * 1e-12, 1.0)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let g = c.sample(&mut rng);
            assert!(g.distance_inf(&mean) < 1e-3);
        }
    }

    #[test]
    fn lie_sample_karcher_mean_and_covariance() {
        let sigma: f64 = 0.15;
        let c = LieGaussianComponent::new(
            se3_component(11, 1.0).mean().clone(),
            DMatrix::identity(6, 6) * sigma * sigma,
            1.0,
        )
        .unwrap();
        let mixture = LieGaussianMixture::new(vec![c.clone()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        let samples = mixture.sample(&mut rng, n);

        let est = karcher_mean(&samples, None, 1e-10, 100).unwrap();
        let err = c.mean().inverse().compose(&est).unwrap().log().unwrap().norm();
        let bound = 3.0 * (c.cov().trace() / n as f64).sqrt();
        assert!(err < bound, "Karcher mean error {err} > {bound}");

        // empirical tangent covariance at the true mean within 10%
        let mean_inv = c.mean().inverse();
        let mut cov = DMatrix::<f64>::zeros(6, 6);
        for g in &samples {
            let v = mean_inv.compose(g).unwrap().log().unwrap().coords();
            cov += &v * v.transpose();
        }
        cov /= n as f64;
        let rel = (&cov - c.cov()).norm() / c.cov().norm();
        assert!(rel < 0.1, "covariance rel err {rel}");
    }

    #[test]
    fn lie_sample_deterministic() {
        let mixture = LieGaussianMixture::new(vec![se3_component(13, 0.2)]).unwrap();
        let a = mixture.sample(&mut ChaCha8Rng::seed_from_u64(14), 8);
        let b = mixture.sample(&mut ChaCha8Rng::seed_from_u64(14), 8);
        assert_eq!(a, b);
    }

    // --- EM -------------------------------------------------------------------

    #[test]
    fn em_identical_samples_floors_covariance() {
        let g0 = se3_component(15, 0.2).mean().clone();
        let samples = vec![g0.clone(); 20];
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let fit = lie_gmm_fit_em(&samples, 1, &mut rng, &EmOptions::default()).unwrap();
        let c = &fit.mixture.components()[0];
        assert!(c.mean().distance_inf(&g0) < 1e-9);
        let max_eig = c.cov().clone().symmetric_eigen().eigenvalues.max();
        assert!(max_eig <= 1e-7, "covariance not floored: {max_eig}");
    }

    #[test]
    fn em_recovers_single_component() {
        let sigma: f64 = 0.12;
        let truth = LieGaussianComponent::new(
            se3_component(17, 1.0).mean().clone(),
            DMatrix::identity(6, 6) * sigma * sigma,
            1.0,
        )
        .unwrap();
        let mixture = LieGaussianMixture::new(vec![truth.clone()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let samples = mixture.sample(&mut rng, 2000);
        let fit = lie_gmm_fit_em(&samples, 1, &mut rng, &EmOptions::default()).unwrap();
        let c = &fit.mixture.components()[0];

        let mean_err = truth.mean().inverse().compose(c.mean()).unwrap().log().unwrap().norm();
        assert!(mean_err < 0.05, "mean error {mean_err}");
        let cov_rel = (c.cov() - truth.cov()).norm() / truth.cov().norm();
        assert!(cov_rel < 0.2, "covariance rel err {cov_rel}");

        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "log-likelihood decreased: {w:?}");
        }
    }

    #[test]
    fn em_separates_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let m1 = GroupElement::identity(GroupKind::SE3);
        let m2 = TangentVector::from_slice(GroupKind::SE3, &[0.0, 0.0, 0.0, 3.0, 0.0, 0.0])
            .unwrap()
            .exp();
        let c1 = LieGaussianComponent::new(m1, DMatrix::identity(6, 6) * 0.01, 0.4).unwrap();
        let c2 = LieGaussianComponent::new(m2, DMatrix::identity(6, 6) * 0.01, 0.6).unwrap();
        let mixture = LieGaussianMixture::new(vec![c1, c2]).unwrap();
        let samples = mixture.sample(&mut rng, 500);
        let fit = lie_gmm_fit_em(&samples, 2, &mut rng, &EmOptions::default()).unwrap();
        let mut weights: Vec<f64> = fit.mixture.components().iter().map(|c| c.weight()).collect();
        weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((weights[0] - 0.4).abs() < 0.05, "weights {weights:?}");
        assert!((weights[1] - 0.6).abs() < 0.05, "weights {weights:?}");
    }

    // --- benchmark targets ------------------------------------------------------

    #[test]
    fn benchmark_gmm_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for dim in 2..=6 {
            let p = random_benchmark_gmm::<f64, _>(dim, &mut rng).unwrap();
            assert_eq!(p.components().len(), 3);
            for c in p.components() {
                let eig = c.cov().clone().symmetric_eigen().eigenvalues;
                assert!(eig.min() > 0.0);
                for i in 0..dim {
                    let d = c.cov()[(i, i)];
                    assert!((0.01..=0.02).contains(&d), "diagonal {d} outside [0.01, 0.02]");
                    assert!((0.0..=1.0).contains(&c.mean()[i]));
                }
            }
        }
        assert!(random_benchmark_gmm::<f64, _>(7, &mut rng).is_err());
    }

    #[test]
    fn benchmark_gmm_seeded_reproducibility() {
        let a = random_benchmark_gmm::<f64, _>(3, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        let b = random_benchmark_gmm::<f64, _>(3, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        for (ca, cb) in a.components().iter().zip(b.components()) {
            assert_eq!(ca.mean(), cb.mean());
            assert_eq!(ca.cov(), cb.cov());
            assert_eq!(ca.weight(), cb.weight());
        }
    }

    // --- serialization ------------------------------------------------------------

    #[test]
    fn mixture_json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let p = random_benchmark_gmm::<f64, _>(3, &mut rng).unwrap();
        let text = p.to_json();
        let back = GaussianMixture::<f64>::from_json(&text).unwrap();
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn lie_mixture_json_roundtrip() {
        let c = se3_component(23, 0.2);
        let p = LieGaussianMixture::new(vec![c]).unwrap();
        let text = p.to_json();
        let back = LieGaussianMixture::<f64>::from_json(&text).unwrap();
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn mixture_json_rejects_unknown_keys() {
        let text = r#"{"schema":"kes/mixture/1","kind":"euclidean","bogus":1,"components":[]}"#;
        assert!(GaussianMixture::<f64>::from_json(text).is_err());
    }

    #[test]
    fn translate_means_shifts_z() {
        let c = se3_component(24, 0.2);
        let p = LieGaussianMixture::new(vec![c.clone()]).unwrap();
        let shifted = p.translate_means(&Vector3::new(0.0, 0.0, -0.02)).unwrap();
        let dz = shifted.components()[0].mean().translation()[2] - c.mean().translation()[2];
        assert_abs_diff_eq!(dz, -0.02, epsilon = 1e-15);
        let zero = p.translate_means(&Vector3::zeros()).unwrap();
        assert_eq!(zero.components()[0].mean(), c.mean());
    }
}
