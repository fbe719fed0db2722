//! System models and linearizations.
//!
//! First- and second-order point masses in R^n and left-trivialized
//! kinematics on SO(3)/SE(3). Integrators: explicit Euler for first order
//! (exact for that model), semi-implicit Euler for second order, and the
//! exponential step `g_{k+1} = g_k exp(dt u_k^)` on groups.
//!
//! [`linearize`] returns the continuous-time (A, B) pairs; the planner
//! consumes [`discrete_step_jacobians`], the exact one-step Jacobians of
//! the integrators above, so predicted descent directions match rollout
//! finite differences to truncation error rather than O(dt^2).

use crate::error::{Error, Result};
use crate::liegroups::{GroupElement, GroupKind, TangentVector};
use crate::metric::{EuclideanTrajectory, LieTrajectory};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};

/// Which dynamical system the planner drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemModel {
    /// `s' = u`, state in R^n, control in R^n.
    FirstOrder { dim: usize },
    /// `x'' = u`, state `[x; v]` in R^2n, control in R^n.
    SecondOrder { dim: usize },
    /// `g' = g u^` with the control twist as the left-trivialized velocity.
    LieKinematic { kind: GroupKind },
}

impl SystemModel {
    pub fn state_dim(&self) -> usize {
        match self {
            SystemModel::FirstOrder { dim } => *dim,
            SystemModel::SecondOrder { dim } => 2 * dim,
            SystemModel::LieKinematic { kind } => kind.dof(),
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            SystemModel::FirstOrder { dim } | SystemModel::SecondOrder { dim } => *dim,
            SystemModel::LieKinematic { kind } => kind.dof(),
        }
    }

    /// Dimension of the space the ergodic metric lives in: positions for
    /// point masses, the full group for kinematics.
    pub fn task_dim(&self) -> usize {
        match self {
            SystemModel::FirstOrder { dim } | SystemModel::SecondOrder { dim } => *dim,
            SystemModel::LieKinematic { kind } => kind.dof(),
        }
    }

    pub fn is_lie(&self) -> bool {
        matches!(self, SystemModel::LieKinematic { .. })
    }
}

/// Per-step continuous-time linearization (A_k, B_k).
#[derive(Clone, Debug)]
pub struct Linearization<T: Real> {
    pub a: Vec<DMatrix<T>>,
    pub b: Vec<DMatrix<T>>,
}

/// Per-step exact discrete-time perturbation maps `z_{k+1} = Ad z_k + Bd v_k`.
#[derive(Clone, Debug)]
pub struct DiscreteLinearization<T: Real> {
    pub ad: Vec<DMatrix<T>>,
    pub bd: Vec<DMatrix<T>>,
}

fn check_controls<T: Real>(model: &SystemModel, controls: &DMatrix<T>) -> Result<()> {
    if controls.nrows() != model.control_dim() {
        return Err(Error::DimMismatch(format!(
            "controls have {} rows, model needs {}",
            controls.nrows(),
            model.control_dim()
        )));
    }
    if controls.iter().any(|u| !u.is_finite()) {
        return Err(Error::NonFinite("control sequence".into()));
    }
    Ok(())
}

/// One Euclidean integrator step.
pub fn step_euclidean<T: Real>(
    model: &SystemModel,
    state: &DVector<T>,
    control: &DVector<T>,
    dt: T,
) -> Result<DVector<T>> {
    match model {
        SystemModel::FirstOrder { .. } => Ok(state + control * dt),
        SystemModel::SecondOrder { dim } => {
            let n = *dim;
            let mut next = state.clone();
            for i in 0..n {
                next[n + i] += dt * control[i];
                let vel = next[n + i];
                next[i] += dt * vel;
            }
            Ok(next)
        }
        SystemModel::LieKinematic { .. } => {
            Err(Error::ModelMismatch("Euclidean step on a Lie model".into()))
        }
    }
}

/// One exponential step on the group.
pub fn step_lie<T: Real>(g: &GroupElement<T>, twist: &DVector<T>, dt: T) -> Result<GroupElement<T>> {
    let scaled = TangentVector::from_slice(g.kind(), (twist * dt).as_slice())?;
    g.compose(&scaled.exp())
}

/// Roll out a Euclidean model. Column k of the result holds the state
/// reached after applying control column k, starting from `s0`.
pub fn rollout_euclidean<T: Real>(
    model: &SystemModel,
    s0: &DVector<T>,
    controls: &DMatrix<T>,
    dt: T,
) -> Result<EuclideanTrajectory<T>> {
    check_controls(model, controls)?;
    if s0.len() != model.state_dim() {
        return Err(Error::DimMismatch(format!(
            "initial state has dim {}, model needs {}",
            s0.len(),
            model.state_dim()
        )));
    }
    let steps = controls.ncols();
    let mut states = DMatrix::zeros(model.state_dim(), steps);
    let mut current = s0.clone();
    for k in 0..steps {
        current = step_euclidean(model, &current, &controls.column(k).into_owned(), dt)?;
        states.set_column(k, &current);
    }
    EuclideanTrajectory::new(states, controls.clone(), dt)
}

/// Roll out group kinematics from `g0`.
pub fn rollout_lie<T: Real>(
    g0: &GroupElement<T>,
    controls: &DMatrix<T>,
    dt: T,
) -> Result<LieTrajectory<T>> {
    let model = SystemModel::LieKinematic { kind: g0.kind() };
    check_controls(&model, controls)?;
    let steps = controls.ncols();
    let mut states = Vec::with_capacity(steps);
    let mut current = g0.clone();
    for k in 0..steps {
        current = step_lie(&current, &controls.column(k).into_owned(), dt)?;
        states.push(current.clone());
    }
    LieTrajectory::new(states, controls.clone(), dt)
}

/// Continuous-time linearization along a trajectory.
///
/// First order: A = 0, B = I. Second order: A = [[0, I], [0, 0]],
/// B = [[0], [I]]. Group kinematics with the control as the twist:
/// `D1 lambda = 0`, so `A = -ad(u_k)` (the algebra adjoint) and B = I.
pub fn linearize_euclidean<T: Real>(
    model: &SystemModel,
    traj: &EuclideanTrajectory<T>,
) -> Result<Linearization<T>> {
    if traj.dim() != model.state_dim() || traj.control_dim() != model.control_dim() {
        return Err(Error::ModelMismatch(
            "trajectory shape does not match the model".into(),
        ));
    }
    let steps = traj.steps();
    match model {
        SystemModel::FirstOrder { dim } => Ok(Linearization {
            a: vec![DMatrix::zeros(*dim, *dim); steps],
            b: vec![DMatrix::identity(*dim, *dim); steps],
        }),
        SystemModel::SecondOrder { dim } => {
            let n = *dim;
            let mut a = DMatrix::zeros(2 * n, 2 * n);
            let mut b = DMatrix::zeros(2 * n, n);
            for i in 0..n {
                a[(i, n + i)] = T::one();
                b[(n + i, i)] = T::one();
            }
            Ok(Linearization {
                a: vec![a; steps],
                b: vec![b; steps],
            })
        }
        SystemModel::LieKinematic { .. } => {
            Err(Error::ModelMismatch("Lie model with Euclidean trajectory".into()))
        }
    }
}

/// Continuous-time linearization of group kinematics: `A_k = -ad(u_k)`.
pub fn linearize_lie<T: Real>(traj: &LieTrajectory<T>) -> Result<Linearization<T>> {
    let kind = traj.kind();
    let d = kind.dof();
    let steps = traj.steps();
    let mut a = Vec::with_capacity(steps);
    for k in 0..steps {
        let u = TangentVector::from_slice(kind, traj.controls().column(k).into_owned().as_slice())?;
        a.push(-u.algebra_adjoint());
    }
    Ok(Linearization {
        a,
        b: vec![DMatrix::identity(d, d); steps],
    })
}

/// Exact one-step discrete Jacobians of the integrators.
///
/// First order: Ad = I, Bd = dt I. Second order (semi-implicit Euler):
/// Ad = [[I, dt I], [0, I]], Bd = [[dt^2 I], [dt I]]. Group kinematics:
/// Ad = Adjoint(exp(-dt u^)), Bd = dt dexp(-dt u).
pub fn discrete_step_jacobians_euclidean<T: Real>(
    model: &SystemModel,
    steps: usize,
    dt: T,
) -> Result<DiscreteLinearization<T>> {
    match model {
        SystemModel::FirstOrder { dim } => Ok(DiscreteLinearization {
            ad: vec![DMatrix::identity(*dim, *dim); steps],
            bd: vec![DMatrix::identity(*dim, *dim) * dt; steps],
        }),
        SystemModel::SecondOrder { dim } => {
            let n = *dim;
            let mut ad = DMatrix::identity(2 * n, 2 * n);
            let mut bd = DMatrix::zeros(2 * n, n);
            for i in 0..n {
                ad[(i, n + i)] = dt;
                bd[(i, i)] = dt * dt;
                bd[(n + i, i)] = dt;
            }
            Ok(DiscreteLinearization {
                ad: vec![ad; steps],
                bd: vec![bd; steps],
            })
        }
        SystemModel::LieKinematic { .. } => Err(Error::ModelMismatch(
            "Lie model needs the trajectory controls; use the Lie variant".into(),
        )),
    }
}

pub fn discrete_step_jacobians_lie<T: Real>(
    traj: &LieTrajectory<T>,
    dt: T,
) -> Result<DiscreteLinearization<T>> {
    let kind = traj.kind();
    let steps = traj.steps();
    let mut ad = Vec::with_capacity(steps);
    let mut bd = Vec::with_capacity(steps);
    for k in 0..steps {
        let u = traj.controls().column(k).into_owned();
        let minus = TangentVector::from_slice(kind, (&u * -dt).as_slice())?;
        ad.push(minus.exp().adjoint_matrix());
        bd.push(minus.dexp() * dt);
    }
    Ok(DiscreteLinearization { ad, bd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_order_zero_control_is_constant() {
        let model = SystemModel::FirstOrder { dim: 2 };
        let s0 = DVector::from_row_slice(&[0.3, 0.4]);
        let traj = rollout_euclidean(&model, &s0, &DMatrix::zeros(2, 5), 0.1).unwrap();
        for k in 0..5 {
            assert_eq!(traj.state(k), s0);
        }
    }

    #[test]
    fn first_order_unit_control_arithmetic() {
        let model = SystemModel::FirstOrder { dim: 1 };
        let s0 = DVector::from_row_slice(&[0.0]);
        let controls = DMatrix::from_element(1, 5, 1.0);
        let traj = rollout_euclidean(&model, &s0, &controls, 0.1).unwrap();
        assert_abs_diff_eq!(traj.state(4)[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn second_order_drifts_at_constant_velocity() {
        let model = SystemModel::SecondOrder { dim: 1 };
        let s0 = DVector::from_row_slice(&[0.0, 0.25]);
        let traj = rollout_euclidean(&model, &s0, &DMatrix::zeros(1, 4), 0.1).unwrap();
        // velocity conserved exactly; position advances dt*v per step
        for k in 0..4 {
            assert_eq!(traj.state(k)[1], 0.25);
            assert_abs_diff_eq!(traj.state(k)[0], 0.025 * (k + 1) as f64, epsilon = 1e-15);
        }
    }

    #[test]
    fn lie_constant_twist_is_screw_motion() {
        let omega = 0.3;
        let g0 = GroupElement::<f64>::identity(GroupKind::SE3);
        let mut controls = DMatrix::zeros(6, 8);
        for k in 0..8 {
            controls[(2, k)] = omega;
        }
        let traj = rollout_lie(&g0, &controls, 0.1).unwrap();
        for (k, g) in traj.states().iter().enumerate() {
            let angle = (k + 1) as f64 * 0.1 * omega;
            let expected = TangentVector::SO3(nalgebra::Vector3::new(0.0, 0.0, angle)).exp();
            assert_abs_diff_eq!(g.rotation(), expected.rotation(), epsilon = 1e-12);
            assert!(g.translation().norm() < 1e-14);
        }
    }

    #[test]
    fn lie_rollout_preserves_invariants_long_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g0 = GroupElement::<f64>::identity(GroupKind::SE3);
        let steps = 10_000;
        let controls = DMatrix::from_fn(6, steps, |_, _| rng.random_range(-1.0..1.0));
        let traj = rollout_lie(&g0, &controls, 0.01).unwrap();
        let last = &traj.states()[steps - 1];
        let r = last.rotation();
        let drift = (r.transpose() * r - nalgebra::Matrix3::identity()).abs().max();
        assert!(drift < 1e-8, "orthonormality drift {drift}");
    }

    #[test]
    fn rollout_rejects_nonfinite_controls() {
        let model = SystemModel::FirstOrder { dim: 1 };
        let mut controls = DMatrix::zeros(1, 3);
        controls[(0, 1)] = f64::NAN;
        assert!(matches!(
            rollout_euclidean(&model, &DVector::zeros(1), &controls, 0.1),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn linearize_first_order_forms() {
        let model = SystemModel::FirstOrder { dim: 2 };
        let traj =
            rollout_euclidean(&model, &DVector::zeros(2), &DMatrix::zeros(2, 3), 0.1).unwrap();
        let lin = linearize_euclidean(&model, &traj).unwrap();
        assert_eq!(lin.a[0], DMatrix::zeros(2, 2));
        assert_eq!(lin.b[0], DMatrix::identity(2, 2));
    }

    #[test]
    fn linearize_second_order_blocks() {
        let model = SystemModel::SecondOrder { dim: 2 };
        let traj =
            rollout_euclidean(&model, &DVector::zeros(4), &DMatrix::zeros(2, 3), 0.1).unwrap();
        let lin = linearize_euclidean(&model, &traj).unwrap();
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        assert_eq!(lin.a[0], a);
        let mut b = DMatrix::zeros(4, 2);
        b[(2, 0)] = 1.0;
        b[(3, 1)] = 1.0;
        assert_eq!(lin.b[0], b);
    }

    #[test]
    fn linearize_rejects_model_mismatch() {
        let model = SystemModel::FirstOrder { dim: 2 };
        let traj =
            rollout_euclidean(&model, &DVector::zeros(2), &DMatrix::zeros(2, 3), 0.1).unwrap();
        assert!(matches!(
            linearize_euclidean(&SystemModel::SecondOrder { dim: 2 }, &traj),
            Err(Error::ModelMismatch(_))
        ));
    }

    /// One-step finite-difference check of the discrete Jacobians for the
    /// Euclidean models.
    fn euclidean_fd_check(model: SystemModel, state: DVector<f64>, control: DVector<f64>) {
        let dt = 0.1;
        let disc = discrete_step_jacobians_euclidean(&model, 1, dt).unwrap();
        let eps = 1e-6;
        let base = step_euclidean(&model, &state, &control, dt).unwrap();
        let sd = model.state_dim();
        let cd = model.control_dim();
        for j in 0..sd {
            let mut sp = state.clone();
            let mut sm = state.clone();
            sp[j] += eps;
            sm[j] -= eps;
            let fd = (step_euclidean(&model, &sp, &control, dt).unwrap()
                - step_euclidean(&model, &sm, &control, dt).unwrap())
                / (2.0 * eps);
            let col = disc.ad[0].column(j).into_owned();
            assert!((fd - col).norm() < 1e-9);
        }
        for j in 0..cd {
            let mut up = control.clone();
            let mut um = control.clone();
            up[j] += eps;
            um[j] -= eps;
            let fd = (step_euclidean(&model, &state, &up, dt).unwrap()
                - step_euclidean(&model, &state, &um, dt).unwrap())
                / (2.0 * eps);
            let col = disc.bd[0].column(j).into_owned();
            let err = (&fd - &col).norm();
            assert!(err < 1e-9, "B column {j}: {fd:?} vs {col:?}");
        }
        let _ = base;
    }

    #[test]
    fn discrete_jacobians_match_rollout_fd_first_order() {
        euclidean_fd_check(
            SystemModel::FirstOrder { dim: 2 },
            DVector::from_row_slice(&[0.2, 0.4]),
            DVector::from_row_slice(&[0.5, -0.3]),
        );
    }

    #[test]
    fn discrete_jacobians_match_rollout_fd_second_order() {
        euclidean_fd_check(
            SystemModel::SecondOrder { dim: 2 },
            DVector::from_row_slice(&[0.2, 0.4, -0.1, 0.3]),
            DVector::from_row_slice(&[0.5, -0.3]),
        );
    }

    #[test]
    fn discrete_jacobians_match_rollout_fd_lie() {
        // right-perturb the state and the control; the log-difference of the
        // next state must match the Ad/Bd columns. This also pins the reading
        // of the linearization as the algebra adjoint: A = -ad(u), whose
        // exact one-step form is Adjoint(exp(-dt u^)).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dt = 0.1;
        let eps = 1e-6;
        for _ in 0..10 {
            let coords: Vec<f64> = (0..6).map(|_| rng.random_range(-0.4..0.4)).collect();
            let g = TangentVector::from_slice(GroupKind::SE3, &coords).unwrap().exp();
            let u = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let controls = DMatrix::from_columns(&[u.clone(), u.clone()]);
            let traj = rollout_lie(&g, &controls, dt).unwrap();
            let disc = discrete_step_jacobians_lie(&traj, dt).unwrap();

            let next = step_lie(&g, &u, dt).unwrap();
            for j in 0..6 {
                let mut e = [0.0; 6];
                e[j] = eps;
                let dz = TangentVector::from_slice(GroupKind::SE3, &e).unwrap();

                // state perturbation -> Ad column
                let pert = step_lie(&g.compose(&dz.exp()).unwrap(), &u, dt).unwrap();
                let pert_m = step_lie(&g.compose(&dz.scaled(-1.0).exp()).unwrap(), &u, dt).unwrap();
                let zp = next.inverse().compose(&pert).unwrap().log().unwrap().coords();
                let zm = next.inverse().compose(&pert_m).unwrap().log().unwrap().coords();
                let fd = (zp - zm) / (2.0 * eps);
                let col = disc.ad[0].column(j).into_owned();
                let rel = (fd - &col).norm() / col.norm().max(1e-12);
                assert!(rel < 1e-4, "Ad column {j} rel err {rel}");

                // control perturbation -> Bd column
                let mut up = u.clone();
                let mut um = u.clone();
                up[j] += eps;
                um[j] -= eps;
                let np = step_lie(&g, &up, dt).unwrap();
                let nm = step_lie(&g, &um, dt).unwrap();
                let zp = next.inverse().compose(&np).unwrap().log().unwrap().coords();
                let zm = next.inverse().compose(&nm).unwrap().log().unwrap().coords();
                let fd = (zp - zm) / (2.0 * eps);
                let col = disc.bd[0].column(j).into_owned();
                let rel = (fd - &col).norm() / col.norm().max(1e-12);
                assert!(rel < 1e-4, "Bd column {j} rel err {rel}");
            }
        }
    }

    #[test]
    fn continuous_linearization_consistent_with_discrete_at_small_dt() {
        // Ad ~ I + dt A and Bd ~ dt B to first order
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dt = 1e-3;
        let u = DVector::from_fn(6, |_, _| rng.random_range(-0.5..0.5));
        let controls = DMatrix::from_columns(&[u.clone(), u.clone()]);
        let g0 = GroupElement::<f64>::identity(GroupKind::SE3);
        let traj = rollout_lie(&g0, &controls, dt).unwrap();
        let lin = linearize_lie(&traj).unwrap();
        let disc = discrete_step_jacobians_lie(&traj, dt).unwrap();
        let first_order_ad = DMatrix::identity(6, 6) + &lin.a[0] * dt;
        let first_order_bd = &lin.b[0] * dt;
        assert!((&disc.ad[0] - first_order_ad).abs().max() < 1e-5);
        assert!((&disc.bd[0] - first_order_bd).abs().max() < 1e-5);
    }
}
