//! Iterative LQR trajectory optimization for the kernel ergodic objective.
//!
//! Each iteration rolls the controls out, assembles the metric gradient plus
//! runtime-cost gradients into per-step linear terms (a, b), solves the
//! regulated LQR subproblem
//!
//! ```text
//! min_v  sum_k dt * ( z_k^T Q z_k + v_k^T R v_k + a_k^T z_k + b_k^T v_k )
//! s.t.   z_+ = Ad z + Bd v,  z_0 = 0
//! ```
//!
//! by a backward affine Riccati recursion, and Armijo-backtracks along the
//! resulting descent direction. The same loop drives Euclidean point masses
//! and SO(3)/SE(3) kinematics; on groups the perturbation state lives in the
//! tangent space and the gradients are the trivialized ones.
//!
//! Warm starts come from a tracking bootstrap: order target samples by a
//! nearest-neighbor tour from the start state, resample the polyline (or
//! geodesic chain) to the horizon, and run a few iterations of the same iLQR
//! machinery on a quadratic tracking cost.

use crate::distributions::{GaussianMixture, LieGaussianMixture};
use crate::dynamics::{
    discrete_step_jacobians_euclidean, discrete_step_jacobians_lie, rollout_euclidean, rollout_lie,
    DiscreteLinearization, SystemModel,
};
use crate::error::{Error, Result};
use crate::liegroups::{lie_quadratic, lie_quadratic_d1, GroupElement, GroupKind, WeightMatrix};
use crate::metric::{
    ergodic_grad, ergodic_metric, lie_ergodic_grad, lie_ergodic_metric, EuclideanTrajectory,
    KernelParams, LieTrajectory,
};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::time::Instant;

// ---------------------------------------------------------------------------
// Problem definition.
// ---------------------------------------------------------------------------

/// Rectangular search domain (Euclidean problems only).
#[derive(Clone, Debug)]
pub struct SearchSpace<T: Real> {
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

impl<T: Real> SearchSpace<T> {
    pub fn new(lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimMismatch("domain bounds differ in dim".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l >= u) {
            return Err(Error::Structure("domain needs lower < upper".into()));
        }
        Ok(SearchSpace { lower, upper })
    }

    pub fn unit_cube(dim: usize) -> Self {
        SearchSpace {
            lower: DVector::zeros(dim),
            upper: DVector::from_element(dim, T::one()),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        DVector::from_fn(self.dim(), |i, _| {
            self.lower[i] + (self.upper[i] - self.lower[i]) * T::c(rng.random::<f64>())
        })
    }
}

/// Smooth quadratic hinge keeping Euclidean trajectories inside the domain.
#[derive(Clone, Debug)]
pub struct BarrierSpec<T: Real> {
    pub weight: T,
}

impl<T: Real> Default for BarrierSpec<T> {
    fn default() -> Self {
        BarrierSpec { weight: T::c(1e2) }
    }
}

/// Solver constants. The line-search and termination parameters are fixed
/// contracts, recorded in every report.
#[derive(Clone, Debug)]
pub struct SolverSettings<T: Real> {
    pub max_iters: usize,
    /// |dJ| below this for `dj_patience` consecutive iterations terminates.
    pub dj_tol: T,
    pub dj_patience: usize,
    pub armijo_beta: T,
    pub armijo_c: T,
    pub max_halvings: usize,
    /// Directional derivatives above this (i.e. not negative enough) count
    /// as stationary.
    pub stationary_tol: T,
    /// Tracking-cost weight and iteration budget for the bootstrap.
    pub tracking_weight: T,
    pub tracking_iters: usize,
}

impl<T: Real> Default for SolverSettings<T> {
    fn default() -> Self {
        SolverSettings {
            max_iters: 100,
            dj_tol: T::c(1e-6),
            dj_patience: 3,
            armijo_beta: T::c(0.5),
            armijo_c: T::c(1e-4),
            max_halvings: 20,
            stationary_tol: T::c(1e-12),
            tracking_weight: T::c(10.0),
            tracking_iters: 10,
        }
    }
}

/// Ergodic coverage problem on a Euclidean point-mass model.
#[derive(Clone, Debug)]
pub struct EuclideanProblem<T: Real> {
    pub model: SystemModel,
    pub target: GaussianMixture<T>,
    pub kernel: KernelParams<T>,
    pub horizon: usize,
    pub dt: T,
    pub initial_state: DVector<T>,
    /// LQR subproblem regulation weights (state_dim / control_dim).
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    /// Runtime control cost 0.5 u^T W u.
    pub control_weight: DMatrix<T>,
    pub barrier: Option<BarrierSpec<T>>,
    pub domain: SearchSpace<T>,
    pub settings: SolverSettings<T>,
}

impl<T: Real> EuclideanProblem<T> {
    /// Problem with default weights: Q = I, R = 0.1 I, W = 0.1 I, barrier on.
    pub fn new(
        model: SystemModel,
        target: GaussianMixture<T>,
        kernel: KernelParams<T>,
        horizon: usize,
        dt: T,
        initial_state: DVector<T>,
        domain: SearchSpace<T>,
    ) -> Result<Self> {
        if model.is_lie() {
            return Err(Error::ModelMismatch("Lie model in a Euclidean problem".into()));
        }
        if model.task_dim() != target.dim() || domain.dim() != target.dim() {
            return Err(Error::DimMismatch(
                "model task dim, target dim and domain dim must agree".into(),
            ));
        }
        if initial_state.len() != model.state_dim() {
            return Err(Error::DimMismatch("initial state dim".into()));
        }
        if horizon < 2 {
            return Err(Error::DimMismatch("horizon must be at least 2".into()));
        }
        let sd = model.state_dim();
        let cd = model.control_dim();
        Ok(EuclideanProblem {
            model,
            target,
            kernel,
            horizon,
            dt,
            initial_state,
            q: DMatrix::identity(sd, sd),
            r: DMatrix::identity(cd, cd) * T::c(0.1),
            control_weight: DMatrix::identity(cd, cd) * T::c(0.1),
            barrier: Some(BarrierSpec::default()),
            domain,
            settings: SolverSettings::default(),
        })
    }
}

/// Ergodic coverage problem on SO(3)/SE(3) kinematics.
#[derive(Clone, Debug)]
pub struct LieProblem<T: Real> {
    pub kind: GroupKind,
    pub target: LieGaussianMixture<T>,
    pub kernel: KernelParams<T>,
    pub horizon: usize,
    pub dt: T,
    pub initial_state: GroupElement<T>,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub control_weight: DMatrix<T>,
    pub settings: SolverSettings<T>,
}

impl<T: Real> LieProblem<T> {
    pub fn new(
        target: LieGaussianMixture<T>,
        kernel: KernelParams<T>,
        horizon: usize,
        dt: T,
        initial_state: GroupElement<T>,
    ) -> Result<Self> {
        let kind = target.kind();
        if initial_state.kind() != kind {
            return Err(Error::KindMismatch {
                expected: kind.name(),
                got: initial_state.kind().name(),
            });
        }
        if horizon < 2 {
            return Err(Error::DimMismatch("horizon must be at least 2".into()));
        }
        let d = kind.dof();
        Ok(LieProblem {
            kind,
            target,
            kernel,
            horizon,
            dt,
            initial_state,
            q: DMatrix::identity(d, d),
            r: DMatrix::identity(d, d) * T::c(0.1),
            control_weight: DMatrix::identity(d, d) * T::c(0.1),
            settings: SolverSettings::default(),
        })
    }
}

/// A coverage problem on either space, driven by one optimizer.
#[derive(Clone, Debug)]
pub enum ErgodicProblem<T: Real> {
    Euclidean(EuclideanProblem<T>),
    Lie(LieProblem<T>),
}

/// Rolled-out trajectory of either kind.
#[derive(Clone, Debug)]
pub enum Trajectory<T: Real> {
    Euclidean(EuclideanTrajectory<T>),
    Lie(LieTrajectory<T>),
}

impl<T: Real> Trajectory<T> {
    pub fn steps(&self) -> usize {
        match self {
            Trajectory::Euclidean(t) => t.steps(),
            Trajectory::Lie(t) => t.steps(),
        }
    }

    pub fn as_euclidean(&self) -> Option<&EuclideanTrajectory<T>> {
        match self {
            Trajectory::Euclidean(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_lie(&self) -> Option<&LieTrajectory<T>> {
        match self {
            Trajectory::Lie(t) => Some(t),
            _ => None,
        }
    }
}

impl<T: Real> ErgodicProblem<T> {
    pub fn horizon(&self) -> usize {
        match self {
            ErgodicProblem::Euclidean(p) => p.horizon,
            ErgodicProblem::Lie(p) => p.horizon,
        }
    }

    pub fn dt(&self) -> T {
        match self {
            ErgodicProblem::Euclidean(p) => p.dt,
            ErgodicProblem::Lie(p) => p.dt,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            ErgodicProblem::Euclidean(p) => p.model.control_dim(),
            ErgodicProblem::Lie(p) => p.kind.dof(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ErgodicProblem::Euclidean(p) => p.model.state_dim(),
            ErgodicProblem::Lie(p) => p.kind.dof(),
        }
    }

    pub fn settings(&self) -> &SolverSettings<T> {
        match self {
            ErgodicProblem::Euclidean(p) => &p.settings,
            ErgodicProblem::Lie(p) => &p.settings,
        }
    }

    fn check_spd(&self) -> Result<()> {
        let (q, r, w) = match self {
            ErgodicProblem::Euclidean(p) => (&p.q, &p.r, &p.control_weight),
            ErgodicProblem::Lie(p) => (&p.q, &p.r, &p.control_weight),
        };
        for (name, m, dim) in [
            ("Q", q, self.state_dim()),
            ("R", r, self.control_dim()),
            ("control weight", w, self.control_dim()),
        ] {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimMismatch(format!("{name} must be {dim}x{dim}")));
            }
            if (m - m.transpose()).abs().max() > T::c(1e-10) {
                return Err(Error::Structure(format!("{name} not symmetric")));
            }
            if m.clone().cholesky().is_none() {
                return Err(Error::Structure(format!("{name} not positive definite")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Objective.
// ---------------------------------------------------------------------------

fn barrier_value<T: Real>(domain: &SearchSpace<T>, weight: T, pos: &[T]) -> T {
    let mut acc = T::zero();
    for i in 0..domain.dim() {
        let over = nalgebra::RealField::max(T::zero(), pos[i] - domain.upper[i]);
        let under = nalgebra::RealField::max(T::zero(), domain.lower[i] - pos[i]);
        acc += over * over + under * under;
    }
    acc * weight
}

fn barrier_grad<T: Real>(domain: &SearchSpace<T>, weight: T, pos: &[T], out: &mut [T]) {
    for i in 0..domain.dim() {
        let over = nalgebra::RealField::max(T::zero(), pos[i] - domain.upper[i]);
        let under = nalgebra::RealField::max(T::zero(), domain.lower[i] - pos[i]);
        out[i] = T::c(2.0) * weight * (over - under);
    }
}

/// Position block of a Euclidean state trajectory as its own trajectory (the
/// ergodic metric lives on positions).
fn task_trajectory<T: Real>(
    model: &SystemModel,
    traj: &EuclideanTrajectory<T>,
) -> Result<EuclideanTrajectory<T>> {
    match model {
        SystemModel::FirstOrder { .. } => Ok(traj.clone()),
        SystemModel::SecondOrder { dim } => {
            let pos = traj.states().rows(0, *dim).into_owned();
            EuclideanTrajectory::new(pos, traj.controls().clone(), traj.dt())
        }
        SystemModel::LieKinematic { .. } => {
            Err(Error::ModelMismatch("Lie model with Euclidean trajectory".into()))
        }
    }
}

/// Full objective: kernel ergodic metric plus `dt * sum_k l(s_k, u_k)` with
/// `l = 0.5 u^T W u + barrier(s)`.
pub fn objective<T: Real>(problem: &ErgodicProblem<T>, traj: &Trajectory<T>) -> Result<T> {
    match (problem, traj) {
        (ErgodicProblem::Euclidean(p), Trajectory::Euclidean(t)) => {
            let task = task_trajectory(&p.model, t)?;
            let mut j = ergodic_metric(&task, &p.target, &p.kernel)?;
            let mut runtime = T::zero();
            for k in 0..t.steps() {
                let u = t.controls().column(k);
                runtime += (u.transpose() * &p.control_weight * u)[(0, 0)] * T::c(0.5);
                if let Some(barrier) = &p.barrier {
                    runtime += barrier_value(
                        &p.domain,
                        barrier.weight,
                        task.states().column(k).as_slice(),
                    );
                }
            }
            j += p.dt * runtime;
            Ok(j)
        }
        (ErgodicProblem::Lie(p), Trajectory::Lie(t)) => {
            let mut j = lie_ergodic_metric(t, &p.target, &p.kernel)?;
            let mut runtime = T::zero();
            for k in 0..t.steps() {
                let u = t.controls().column(k);
                runtime += (u.transpose() * &p.control_weight * u)[(0, 0)] * T::c(0.5);
            }
            j += p.dt * runtime;
            Ok(j)
        }
        _ => Err(Error::ModelMismatch("problem/trajectory kind mismatch".into())),
    }
}

/// Ergodic metric of a rolled-out trajectory (without runtime cost).
pub fn metric_of<T: Real>(problem: &ErgodicProblem<T>, traj: &Trajectory<T>) -> Result<T> {
    match (problem, traj) {
        (ErgodicProblem::Euclidean(p), Trajectory::Euclidean(t)) => {
            ergodic_metric(&task_trajectory(&p.model, t)?, &p.target, &p.kernel)
        }
        (ErgodicProblem::Lie(p), Trajectory::Lie(t)) => {
            lie_ergodic_metric(t, &p.target, &p.kernel)
        }
        _ => Err(Error::ModelMismatch("problem/trajectory kind mismatch".into())),
    }
}

fn rollout<T: Real>(problem: &ErgodicProblem<T>, u: &DMatrix<T>) -> Result<Trajectory<T>> {
    match problem {
        ErgodicProblem::Euclidean(p) => Ok(Trajectory::Euclidean(rollout_euclidean(
            &p.model,
            &p.initial_state,
            u,
            p.dt,
        )?)),
        ErgodicProblem::Lie(p) => {
            Ok(Trajectory::Lie(rollout_lie(&p.initial_state, u, p.dt)?))
        }
    }
}

/// Per-step subproblem linear terms (a, b) in density form.
type LinearTerms<T> = (Vec<DVector<T>>, Vec<DVector<T>>);

/// Per-step linear terms of the subproblem in density form:
/// `a_k = dJ/d s_k / dt`, `b_k = dJ/d u_k / dt`, so the Gateaux derivative
/// is `sum_k dt (a_k^T z_k + b_k^T v_k)`.
fn gradients<T: Real>(
    problem: &ErgodicProblem<T>,
    traj: &Trajectory<T>,
) -> Result<LinearTerms<T>> {
    match (problem, traj) {
        (ErgodicProblem::Euclidean(p), Trajectory::Euclidean(t)) => {
            let task = task_trajectory(&p.model, t)?;
            let metric_grad = ergodic_grad(&task, &p.target, &p.kernel)?;
            let n = p.model.task_dim();
            let sd = p.model.state_dim();
            let steps = t.steps();
            let mut a = Vec::with_capacity(steps);
            let mut b = Vec::with_capacity(steps);
            let mut bgrad = vec![T::zero(); n];
            for k in 0..steps {
                let mut ak = DVector::zeros(sd);
                for i in 0..n {
                    ak[i] = metric_grad[(i, k)] / p.dt;
                }
                if let Some(barrier) = &p.barrier {
                    barrier_grad(
                        &p.domain,
                        barrier.weight,
                        task.states().column(k).as_slice(),
                        &mut bgrad,
                    );
                    for i in 0..n {
                        ak[i] += bgrad[i];
                    }
                }
                a.push(ak);
                b.push(&p.control_weight * t.controls().column(k));
            }
            Ok((a, b))
        }
        (ErgodicProblem::Lie(p), Trajectory::Lie(t)) => {
            let metric_grad = lie_ergodic_grad(t, &p.target, &p.kernel)?;
            let steps = t.steps();
            let mut a = Vec::with_capacity(steps);
            let mut b = Vec::with_capacity(steps);
            for k in 0..steps {
                a.push(metric_grad.column(k).into_owned() / p.dt);
                b.push(&p.control_weight * t.controls().column(k));
            }
            Ok((a, b))
        }
        _ => Err(Error::ModelMismatch("problem/trajectory kind mismatch".into())),
    }
}

fn discrete_linearization<T: Real>(
    problem: &ErgodicProblem<T>,
    traj: &Trajectory<T>,
) -> Result<DiscreteLinearization<T>> {
    match (problem, traj) {
        (ErgodicProblem::Euclidean(p), Trajectory::Euclidean(t)) => {
            discrete_step_jacobians_euclidean(&p.model, t.steps(), p.dt)
        }
        (ErgodicProblem::Lie(p), Trajectory::Lie(t)) => discrete_step_jacobians_lie(t, p.dt),
        _ => Err(Error::ModelMismatch("problem/trajectory kind mismatch".into())),
    }
}

// ---------------------------------------------------------------------------
// LQR subproblem.
// ---------------------------------------------------------------------------

/// Descent direction from the Riccati recursion, with the predicted state
/// perturbation and the Gateaux derivative `sum dt (a^T z + b^T v)`.
#[derive(Clone, Debug)]
pub struct LqrSolution<T: Real> {
    pub v: DMatrix<T>,
    pub z: DMatrix<T>,
    pub directional_derivative: T,
}

/// Solve the discretized affine LQR subproblem by a backward Riccati sweep
/// and a forward rollout of the affine policy.
///
/// The cost pairs each post-transition perturbation `z_{k+1}` with the
/// linear term `a_k` (states store the post-control state, so index k of
/// `a`/`z` refers to the same physical state).
pub fn solve_lqr_subproblem<T: Real>(
    lin: &DiscreteLinearization<T>,
    a: &[DVector<T>],
    b: &[DVector<T>],
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    dt: T,
) -> Result<LqrSolution<T>> {
    let steps = lin.ad.len();
    if steps == 0 || a.len() != steps || b.len() != steps || lin.bd.len() != steps {
        return Err(Error::DimMismatch("per-step arrays must agree on length".into()));
    }
    let sd = q.nrows();
    let cd = r.nrows();
    let q_bar = q * dt;
    let r_bar = r * dt;

    // backward affine sweep: V_k(z) = z^T P_k z + q_k^T z + const
    let mut p_next = DMatrix::<T>::zeros(sd, sd);
    let mut lin_next = DVector::<T>::zeros(sd);
    let mut gains_k: Vec<DMatrix<T>> = Vec::with_capacity(steps);
    let mut gains_d: Vec<DVector<T>> = Vec::with_capacity(steps);
    for k in (0..steps).rev() {
        let ad = &lin.ad[k];
        let bd = &lin.bd[k];
        let s = &q_bar + &p_next;
        let w = &a[k] * dt + &lin_next;
        let h = &r_bar + bd.transpose() * &s * bd;
        let h_chol = h
            .clone()
            .cholesky()
            .ok_or_else(|| Error::RiccatiBlowup(format!("control Hessian not SPD at step {k}")))?;
        let g = bd.transpose() * &s * ad;
        let c = (bd.transpose() * &w + &b[k] * dt) * T::c(0.5);
        let k_gain = h_chol.solve(&g);
        let d_gain = h_chol.solve(&c);

        let p = ad.transpose() * &s * ad - g.transpose() * &k_gain;
        let p = (&p + p.transpose()) * T::c(0.5);
        let min_eig = p.clone().symmetric_eigen().eigenvalues.min();
        let scale = nalgebra::RealField::max(T::one(), p.abs().max());
        if min_eig < -T::c(1e-9) * scale {
            return Err(Error::RiccatiBlowup(format!(
                "value matrix lost positive semidefiniteness at step {k} (min eig {:.3e})",
                min_eig.to_f64_lossy()
            )));
        }
        lin_next = ad.transpose() * &w - g.transpose() * &d_gain * T::c(2.0);
        p_next = p;
        gains_k.push(k_gain);
        gains_d.push(d_gain);
    }
    gains_k.reverse();
    gains_d.reverse();

    // forward pass
    let mut v = DMatrix::<T>::zeros(cd, steps);
    let mut z = DMatrix::<T>::zeros(sd, steps);
    let mut z_cur = DVector::<T>::zeros(sd);
    let mut dirderiv = T::zero();
    for k in 0..steps {
        let vk = -(&gains_k[k] * &z_cur) - &gains_d[k];
        z_cur = &lin.ad[k] * z_cur + &lin.bd[k] * &vk;
        dirderiv += (a[k].dot(&z_cur) + b[k].dot(&vk)) * dt;
        v.set_column(k, &vk);
        z.set_column(k, &z_cur);
    }

    Ok(LqrSolution {
        v,
        z,
        directional_derivative: dirderiv,
    })
}

// ---------------------------------------------------------------------------
// Line search.
// ---------------------------------------------------------------------------

/// Outcome of one Armijo backtracking search.
#[derive(Clone, Debug)]
pub struct ArmijoOutcome<T: Real> {
    pub step: T,
    pub controls: DMatrix<T>,
    pub trajectory: Trajectory<T>,
    pub objective: T,
    pub evaluations: usize,
}

/// Armijo backtracking over eta in {1, beta, beta^2, ...}: accept when
/// `J(u + eta v) <= J0 + c * eta * dirderiv`. A non-negative directional
/// derivative returns step 0 with the input unchanged.
pub fn armijo_search<T: Real>(
    problem: &ErgodicProblem<T>,
    u: &DMatrix<T>,
    v: &DMatrix<T>,
    j0: T,
    dirderiv: T,
) -> Result<ArmijoOutcome<T>> {
    let settings = problem.settings().clone();
    armijo_generic(
        |controls| {
            let traj = rollout(problem, controls)?;
            let j = objective(problem, &traj)?;
            Ok((j, traj))
        },
        u,
        v,
        j0,
        dirderiv,
        &settings,
    )
}

fn armijo_generic<T: Real, F>(
    eval: F,
    u: &DMatrix<T>,
    v: &DMatrix<T>,
    j0: T,
    dirderiv: T,
    settings: &SolverSettings<T>,
) -> Result<ArmijoOutcome<T>>
where
    F: Fn(&DMatrix<T>) -> Result<(T, Trajectory<T>)>,
{
    if dirderiv >= T::zero() {
        let (j, traj) = eval(u)?;
        return Ok(ArmijoOutcome {
            step: T::zero(),
            controls: u.clone(),
            trajectory: traj,
            objective: j,
            evaluations: 1,
        });
    }
    let mut eta = T::one();
    for attempt in 0..settings.max_halvings {
        let candidate = u + v * eta;
        let (j, traj) = eval(&candidate)?;
        if j <= j0 + settings.armijo_c * eta * dirderiv {
            return Ok(ArmijoOutcome {
                step: eta,
                controls: candidate,
                trajectory: traj,
                objective: j,
                evaluations: attempt + 1,
            });
        }
        eta *= settings.armijo_beta;
    }
    Err(Error::LineSearchFailure {
        halvings: settings.max_halvings,
    })
}

// ---------------------------------------------------------------------------
// Optimization loop.
// ---------------------------------------------------------------------------

/// Why the optimizer stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Converged,
    MaxIterations,
    Stationary,
    LineSearchFailure,
    /// The Riccati recursion lost positive semidefiniteness mid-run.
    SubproblemFailure,
}

/// One accepted iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub ergodic_metric: f64,
    pub step_size: f64,
    pub line_search_evals: usize,
    pub wall_time_s: f64,
}

/// Solver configuration snapshot recorded with every run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportMeta {
    pub horizon: usize,
    pub dt: f64,
    pub state_dim: usize,
    pub control_dim: usize,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub control_weight_diag: Vec<f64>,
    pub barrier_weight: Option<f64>,
    pub kernel_theta: Vec<f64>,
    pub max_iters: usize,
    pub dj_tol: f64,
    pub armijo_beta: f64,
    pub armijo_c: f64,
    /// "full" in Euclidean space; "integral_p_squared_omitted" on groups.
    pub metric_convention: String,
}

/// Full optimization trace: meta line plus one record per iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub meta: ReportMeta,
    pub iterations: Vec<IterationRecord>,
    pub termination: TerminationReason,
}

impl OptimizationReport {
    /// JSONL: one meta object line, then one line per iteration.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let meta = serde_json::json!({"type": "meta", "meta": &self.meta, "termination": &self.termination});
        out.push_str(&serde_json::to_string(&meta).expect("meta serializes"));
        out.push('\n');
        for it in &self.iterations {
            let line = serde_json::json!({"type": "iteration", "record": it});
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Zero the wall-clock fields; byte-reproducible output mode.
    pub fn redact_timing(&mut self) {
        for it in self.iterations.iter_mut() {
            it.wall_time_s = 0.0;
        }
    }
}

/// Optimized controls with the rolled-out trajectory and the report.
#[derive(Clone, Debug)]
pub struct Solution<T: Real> {
    pub trajectory: Trajectory<T>,
    pub controls: DMatrix<T>,
    pub report: OptimizationReport,
}

fn diag_of<T: Real>(m: &DMatrix<T>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, i)].to_f64_lossy()).collect()
}

fn report_meta<T: Real>(problem: &ErgodicProblem<T>) -> ReportMeta {
    let settings = problem.settings();
    let (q, r, w, barrier, theta, convention) = match problem {
        ErgodicProblem::Euclidean(p) => (
            &p.q,
            &p.r,
            &p.control_weight,
            p.barrier.as_ref().map(|b| b.weight.to_f64_lossy()),
            p.kernel
                .expand(p.model.task_dim())
                .map(|t| t.iter().map(|x| x.to_f64_lossy()).collect())
                .unwrap_or_default(),
            "full",
        ),
        ErgodicProblem::Lie(p) => (
            &p.q,
            &p.r,
            &p.control_weight,
            None,
            p.kernel
                .expand(p.kind.dof())
                .map(|t| t.iter().map(|x| x.to_f64_lossy()).collect())
                .unwrap_or_default(),
            "integral_p_squared_omitted",
        ),
    };
    ReportMeta {
        horizon: problem.horizon(),
        dt: problem.dt().to_f64_lossy(),
        state_dim: problem.state_dim(),
        control_dim: problem.control_dim(),
        q_diag: diag_of(q),
        r_diag: diag_of(r),
        control_weight_diag: diag_of(w),
        barrier_weight: barrier,
        kernel_theta: theta,
        max_iters: settings.max_iters,
        dj_tol: settings.dj_tol.to_f64_lossy(),
        armijo_beta: settings.armijo_beta.to_f64_lossy(),
        armijo_c: settings.armijo_c.to_f64_lossy(),
        metric_convention: convention.to_string(),
    }
}

/// Iterate rollout / subproblem / line search until convergence.
///
/// Terminates on: `max_iters`, |dJ| below `dj_tol` for `dj_patience`
/// consecutive iterations, a stationary subproblem, or a failed line search
/// (recorded in the report, not an error). The objective never increases
/// across accepted iterations.
pub fn optimize<T: Real>(problem: &ErgodicProblem<T>, u_init: &DMatrix<T>) -> Result<Solution<T>> {
    problem.check_spd()?;
    let steps = problem.horizon();
    if u_init.ncols() != steps || u_init.nrows() != problem.control_dim() {
        return Err(Error::DimMismatch(format!(
            "u_init must be {}x{}",
            problem.control_dim(),
            steps
        )));
    }
    let settings = problem.settings().clone();
    let (q, r) = match problem {
        ErgodicProblem::Euclidean(p) => (p.q.clone(), p.r.clone()),
        ErgodicProblem::Lie(p) => (p.q.clone(), p.r.clone()),
    };

    let mut controls = u_init.clone();
    let mut traj = rollout(problem, &controls)?;
    let mut j = objective(problem, &traj)?;
    let mut iterations = Vec::new();
    let mut termination = TerminationReason::MaxIterations;
    let mut patience = 0usize;

    for iter in 0..settings.max_iters {
        let start = Instant::now();
        let (a, b) = gradients(problem, &traj)?;
        let lin = discrete_linearization(problem, &traj)?;
        let lqr = match solve_lqr_subproblem(&lin, &a, &b, &q, &r, problem.dt()) {
            Ok(l) => l,
            Err(Error::RiccatiBlowup(_)) => {
                termination = TerminationReason::SubproblemFailure;
                break;
            }
            Err(e) => return Err(e),
        };

        if lqr.directional_derivative > -settings.stationary_tol {
            termination = TerminationReason::Stationary;
            break;
        }

        let outcome = match armijo_search(problem, &controls, &lqr.v, j, lqr.directional_derivative)
        {
            Ok(o) => o,
            Err(Error::LineSearchFailure { .. }) => {
                termination = TerminationReason::LineSearchFailure;
                break;
            }
            Err(e) => return Err(e),
        };

        let j_prev = j;
        controls = outcome.controls;
        traj = outcome.trajectory;
        j = outcome.objective;
        iterations.push(IterationRecord {
            iter,
            objective: j.to_f64_lossy(),
            ergodic_metric: metric_of(problem, &traj)?.to_f64_lossy(),
            step_size: outcome.step.to_f64_lossy(),
            line_search_evals: outcome.evaluations,
            wall_time_s: start.elapsed().as_secs_f64(),
        });

        if (j_prev - j).abs() < settings.dj_tol {
            patience += 1;
            if patience >= settings.dj_patience {
                termination = TerminationReason::Converged;
                break;
            }
        } else {
            patience = 0;
        }
    }

    Ok(Solution {
        trajectory: traj,
        controls,
        report: OptimizationReport {
            meta: report_meta(problem),
            iterations,
            termination,
        },
    })
}

// ---------------------------------------------------------------------------
// Bootstrap.
// ---------------------------------------------------------------------------

/// Greedy nearest-neighbor tour over `points` starting from the element
/// closest to the start (distances supplied by closures).
fn nearest_neighbor_order<P>(
    points: &[P],
    from_start: impl Fn(&P) -> f64,
    pairwise: impl Fn(&P, &P) -> f64,
) -> Vec<usize> {
    let n = points.len();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    // first hop: closest to the start state
    let mut best = 0;
    for (slot, idx) in remaining.iter().enumerate() {
        if from_start(&points[*idx]) < from_start(&points[remaining[best]]) {
            best = slot;
        }
    }
    order.push(remaining.swap_remove(best));
    while !remaining.is_empty() {
        let current = &points[*order.last().unwrap()];
        let mut best = 0;
        for (slot, idx) in remaining.iter().enumerate() {
            if pairwise(current, &points[*idx]) < pairwise(current, &points[remaining[best]]) {
                best = slot;
            }
        }
        order.push(remaining.swap_remove(best));
    }
    order
}

/// Resample a polyline (start + ordered waypoints) to `steps` points at
/// equal arc-length increments.
fn resample_polyline<T: Real>(start: &DVector<T>, waypoints: &[DVector<T>], steps: usize) -> Vec<DVector<T>> {
    let mut nodes = Vec::with_capacity(waypoints.len() + 1);
    nodes.push(start.clone());
    nodes.extend_from_slice(waypoints);
    let mut cumulative = vec![T::zero()];
    for w in nodes.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + (&w[1] - &w[0]).norm());
    }
    let total = *cumulative.last().unwrap();
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let s = total * T::c((k + 1) as f64) / T::c(steps as f64);
        // locate the segment containing arc length s
        let mut seg = 0;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > T::zero() { (s - cumulative[seg]) / len } else { T::zero() };
        out.push(&nodes[seg] + (&nodes[seg + 1] - &nodes[seg]) * t);
    }
    out
}

/// Geodesic-chain resampling on the group.
fn resample_geodesics<T: Real>(
    start: &GroupElement<T>,
    waypoints: &[GroupElement<T>],
    steps: usize,
) -> Result<Vec<GroupElement<T>>> {
    let mut nodes = Vec::with_capacity(waypoints.len() + 1);
    nodes.push(start.clone());
    nodes.extend_from_slice(waypoints);
    let mut legs = Vec::with_capacity(nodes.len() - 1);
    let mut cumulative = vec![T::zero()];
    for w in nodes.windows(2) {
        let leg = w[0].inverse().compose(&w[1])?.log()?;
        let last = *cumulative.last().unwrap();
        cumulative.push(last + leg.norm());
        legs.push(leg);
    }
    let total = *cumulative.last().unwrap();
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let s = total * T::c((k + 1) as f64) / T::c(steps as f64);
        let mut seg = 0;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > T::zero() { (s - cumulative[seg]) / len } else { T::zero() };
        out.push(nodes[seg].compose(&legs[seg].scaled(t).exp())?);
    }
    Ok(out)
}

/// Bootstrap controls: draw `horizon/10` target samples, order them by a
/// nearest-neighbor tour from the start state, resample to the horizon, and
/// track the reference with a few iterations of the same iLQR machinery.
pub fn bootstrap<T: Real, R: Rng + ?Sized>(
    problem: &ErgodicProblem<T>,
    rng: &mut R,
) -> Result<DMatrix<T>>
where
    StandardNormal: Distribution<T>,
{
    problem.check_spd()?;
    let steps = problem.horizon();
    let num_samples = (steps / 10).max(1);
    match problem {
        ErgodicProblem::Euclidean(p) => {
            let samples = p.target.sample(rng, num_samples);
            let start_pos = DVector::from_iterator(
                p.model.task_dim(),
                p.initial_state.iter().take(p.model.task_dim()).copied(),
            );
            let order = nearest_neighbor_order(
                &samples,
                |x| (x - &start_pos).norm().to_f64_lossy(),
                |x, y| (x - y).norm().to_f64_lossy(),
            );
            let ordered: Vec<DVector<T>> = order.iter().map(|i| samples[*i].clone()).collect();
            let reference = resample_polyline(&start_pos, &ordered, steps);
            track_reference_euclidean(p, &reference)
        }
        ErgodicProblem::Lie(p) => {
            let samples = p.target.sample(rng, num_samples);
            let dist = |x: &GroupElement<T>, y: &GroupElement<T>| {
                x.inverse()
                    .compose(y)
                    .and_then(|g| g.log())
                    .map(|v| v.norm().to_f64_lossy())
                    .unwrap_or(f64::INFINITY)
            };
            let order = nearest_neighbor_order(
                &samples,
                |x| dist(&p.initial_state, x),
                |x, y| dist(x, y),
            );
            let ordered: Vec<GroupElement<T>> = order.iter().map(|i| samples[*i].clone()).collect();
            let reference = resample_geodesics(&p.initial_state, &ordered, steps)?;
            track_reference_lie(p, &reference)
        }
    }
}

/// Quadratic tracking of a position reference with the iLQR machinery.
fn track_reference_euclidean<T: Real>(
    p: &EuclideanProblem<T>,
    reference: &[DVector<T>],
) -> Result<DMatrix<T>> {
    let steps = p.horizon;
    let n = p.model.task_dim();
    let sd = p.model.state_dim();
    let settings = &p.settings;
    let qt = settings.tracking_weight;

    let track_cost = |traj: &EuclideanTrajectory<T>| -> T {
        let mut acc = T::zero();
        for k in 0..steps {
            let mut err = T::zero();
            for i in 0..n {
                let d = traj.states()[(i, k)] - reference[k][i];
                err += d * d;
            }
            let u = traj.controls().column(k);
            acc += qt * err * T::c(0.5) + (u.transpose() * &p.control_weight * u)[(0, 0)] * T::c(0.5);
        }
        acc * p.dt
    };

    let mut controls = DMatrix::<T>::zeros(p.model.control_dim(), steps);
    let mut traj = rollout_euclidean(&p.model, &p.initial_state, &controls, p.dt)?;
    let mut j = track_cost(&traj);
    let lin = discrete_step_jacobians_euclidean(&p.model, steps, p.dt)?;
    for _ in 0..settings.tracking_iters {
        let mut a = Vec::with_capacity(steps);
        let mut b = Vec::with_capacity(steps);
        for k in 0..steps {
            let mut ak = DVector::zeros(sd);
            for i in 0..n {
                ak[i] = qt * (traj.states()[(i, k)] - reference[k][i]);
            }
            a.push(ak);
            b.push(&p.control_weight * traj.controls().column(k));
        }
        let lqr = solve_lqr_subproblem(&lin, &a, &b, &p.q, &p.r, p.dt)?;
        if lqr.directional_derivative > -settings.stationary_tol {
            break;
        }
        let outcome = armijo_generic(
            |u| {
                let t = rollout_euclidean(&p.model, &p.initial_state, u, p.dt)?;
                let c = track_cost(&t);
                Ok((c, Trajectory::Euclidean(t)))
            },
            &controls,
            &lqr.v,
            j,
            lqr.directional_derivative,
            settings,
        );
        match outcome {
            Ok(o) => {
                controls = o.controls;
                traj = match o.trajectory {
                    Trajectory::Euclidean(t) => t,
                    _ => unreachable!(),
                };
                j = o.objective;
            }
            Err(Error::LineSearchFailure { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(controls)
}

fn track_reference_lie<T: Real>(
    p: &LieProblem<T>,
    reference: &[GroupElement<T>],
) -> Result<DMatrix<T>> {
    let steps = p.horizon;
    let d = p.kind.dof();
    let settings = &p.settings;
    let qt = WeightMatrix::new(DMatrix::identity(d, d) * settings.tracking_weight)?;

    let track_cost = |traj: &LieTrajectory<T>| -> Result<T> {
        let mut acc = T::zero();
        for k in 0..steps {
            acc += lie_quadratic(&traj.states()[k], &reference[k], &qt)?;
            let u = traj.controls().column(k);
            acc += (u.transpose() * &p.control_weight * u)[(0, 0)] * T::c(0.5);
        }
        Ok(acc * p.dt)
    };

    let mut controls = DMatrix::<T>::zeros(d, steps);
    let mut traj = rollout_lie(&p.initial_state, &controls, p.dt)?;
    let mut j = track_cost(&traj)?;
    for _ in 0..settings.tracking_iters {
        let lin = discrete_step_jacobians_lie(&traj, p.dt)?;
        let mut a = Vec::with_capacity(steps);
        let mut b = Vec::with_capacity(steps);
        for k in 0..steps {
            a.push(lie_quadratic_d1(&traj.states()[k], &reference[k], &qt)?.coords());
            b.push(&p.control_weight * traj.controls().column(k));
        }
        let lqr = solve_lqr_subproblem(&lin, &a, &b, &p.q, &p.r, p.dt)?;
        if lqr.directional_derivative > -settings.stationary_tol {
            break;
        }
        let outcome = armijo_generic(
            |u| {
                let t = rollout_lie(&p.initial_state, u, p.dt)?;
                let c = track_cost(&t)?;
                Ok((c, Trajectory::Lie(t)))
            },
            &controls,
            &lqr.v,
            j,
            lqr.directional_derivative,
            settings,
        );
        match outcome {
            Ok(o) => {
                controls = o.controls;
                traj = match o.trajectory {
                    Trajectory::Lie(t) => t,
                    _ => unreachable!(),
                };
                j = o.objective;
            }
            Err(Error::LineSearchFailure { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(controls)
}
