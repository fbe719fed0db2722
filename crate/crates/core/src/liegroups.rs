//! Matrix-group primitives for SO(3) and SE(3).
//!
//! Rotations are 3x3 matrices, rigid transforms 4x4 homogeneous matrices;
//! there is no quaternion internal representation. Tangent coordinates are
//! ordered rotation-first: an SE(3) twist is `(omega, nu)` with `omega` in
//! radians and `nu` in meters.
//!
//! The trivialized tangent of the exponential map follows the convention
//! `d/dt exp(v(t)) = hat(dexp_v(v'))) * exp(v(t))`, so the Jacobian of the
//! logarithm under a right perturbation `g * exp(eps * hat(z))` is
//! `dexp_inv(-log(g))`. All derivative formulas in this module are stated
//! (and tested) against central finite differences of that perturbation.
//!
//! # Numerical conditioning
//!
//! The inverse-Jacobian coefficient `1/theta^2 - (1 + cos)/(2 theta sin)`
//! and the SE(3) coupling-block coefficients cancel catastrophically for
//! small rotation angles, well before the closed forms hit 0/0. Below
//! `theta = 0.05` every angle coefficient switches to a truncated Taylor
//! series whose error is under 1e-13 there. Near `theta = pi` the logarithm
//! branch is ambiguous and its derivative singular; `log` and `dexp_inv`
//! refuse inputs within 1e-6 of pi instead of silently picking an axis.

use crate::error::{Error, Result};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector6};

/// Which matrix group an element or tangent vector belongs to.
#[allow(clippy::upper_case_acronyms)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupKind {
    SO3,
    SE3,
}

impl GroupKind {
    /// Degrees of freedom (tangent dimension): 3 or 6.
    pub fn dof(self) -> usize {
        match self {
            GroupKind::SO3 => 3,
            GroupKind::SE3 => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::SO3 => "SO3",
            GroupKind::SE3 => "SE3",
        }
    }
}

impl std::fmt::Display for GroupKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Angle below which the closed-form coefficient functions switch to their
/// Taylor expansions. See the module docs for why this is far above 1e-6.
fn taylor_threshold<T: Real>() -> T {
    T::c(0.05)
}

/// Guard band around the cut locus: rotations with angle within 1e-6 of pi
/// are rejected by `log` and `dexp_inv`.
fn branch_guard<T: Real>() -> T {
    T::c(1e-6)
}

fn group_tol<T: Real>() -> T {
    // 1e-9 at f64; scaled up for f32 where 1e-9 is below machine epsilon.
    nalgebra::RealField::max(T::c(1e-9), T::default_epsilon() * T::c(1e4))
}

// ---------------------------------------------------------------------------
// Angle coefficient functions with Taylor fallbacks.
// ---------------------------------------------------------------------------

/// sin(t)/t
fn coeff_a<T: Real>(theta: T) -> T {
    if theta < taylor_threshold() {
        let t2 = theta * theta;
        T::one() - t2 / T::c(6.0) + t2 * t2 / T::c(120.0) - t2 * t2 * t2 / T::c(5040.0)
    } else {
        theta.sin() / theta
    }
}

/// (1 - cos(t))/t^2
fn coeff_b<T: Real>(theta: T) -> T {
    if theta < taylor_threshold() {
        let t2 = theta * theta;
        T::c(0.5) - t2 / T::c(24.0) + t2 * t2 / T::c(720.0) - t2 * t2 * t2 / T::c(40320.0)
    } else {
        (T::one() - theta.cos()) / (theta * theta)
    }
}

/// (t - sin(t))/t^3
fn coeff_c<T: Real>(theta: T) -> T {
    if theta < taylor_threshold() {
        let t2 = theta * theta;
        T::c(1.0 / 6.0) - t2 / T::c(120.0) + t2 * t2 / T::c(5040.0)
            - t2 * t2 * t2 / T::c(362880.0)
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    }
}

/// 1/t^2 - (1 + cos(t))/(2 t sin(t)); the Jl^-1 coefficient.
fn coeff_e<T: Real>(theta: T) -> T {
    if theta < taylor_threshold() {
        let t2 = theta * theta;
        T::c(1.0 / 12.0) + t2 / T::c(720.0) + t2 * t2 / T::c(30240.0)
            + t2 * t2 * t2 / T::c(1209600.0)
    } else {
        T::one() / (theta * theta)
            - (T::one() + theta.cos()) / (T::c(2.0) * theta * theta.sin())
    }
}

/// (1 - t^2/2 - cos(t))/t^4
fn coeff_q2<T: Real>(theta: T) -> T {
    if theta < taylor_threshold() {
        let t2 = theta * theta;
        -T::c(1.0 / 24.0) + t2 / T::c(720.0) - t2 * t2 / T::c(40320.0)
            + t2 * t2 * t2 / T::c(3628800.0)
    } else {
        let t2 = theta * theta;
        (T::one() - t2 * T::c(0.5) - theta.cos()) / (t2 * t2)
    }
}

/// (t - sin(t) - t^3/6)/t^5
fn coeff_q3<T: Real>(theta: T) -> T {
    if theta < taylor_threshold() {
        let t2 = theta * theta;
        -T::c(1.0 / 120.0) + t2 / T::c(5040.0) - t2 * t2 / T::c(362880.0)
            + t2 * t2 * t2 / T::c(39916800.0)
    } else {
        let t2 = theta * theta;
        (theta - theta.sin() - t2 * theta / T::c(6.0)) / (t2 * t2 * theta)
    }
}

// ---------------------------------------------------------------------------
// Fixed-size SO(3) internals.
// ---------------------------------------------------------------------------

fn so3_hat<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -w[2],
        w[1],
        w[2],
        T::zero(),
        -w[0],
        -w[1],
        w[0],
        T::zero(),
    )
}

fn so3_exp<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let theta = w.norm();
    let k = so3_hat(w);
    Matrix3::identity() + k * coeff_a(theta) + k * k * coeff_b(theta)
}

fn so3_log<T: Real>(r: &Matrix3<T>) -> Result<Vector3<T>> {
    let cos = nalgebra::RealField::clamp(
        (r.trace() - T::one()) * T::c(0.5),
        -T::one(),
        T::one(),
    );
    // vee(R - R^T)/2 = sin(theta) * axis
    let s = Vector3::new(
        (r[(2, 1)] - r[(1, 2)]) * T::c(0.5),
        (r[(0, 2)] - r[(2, 0)]) * T::c(0.5),
        (r[(1, 0)] - r[(0, 1)]) * T::c(0.5),
    );
    let theta = s.norm().atan2(cos);
    if theta > T::pi() - branch_guard() {
        return Err(Error::Branch(format!(
            "rotation angle {:.9} within 1e-6 of pi",
            theta.to_f64_lossy()
        )));
    }
    // omega = axis * theta = s * theta/sin(theta)
    let factor = if theta < taylor_threshold() {
        let t2 = theta * theta;
        T::one() + t2 / T::c(6.0) + t2 * t2 * T::c(7.0 / 360.0)
    } else {
        theta / theta.sin()
    };
    Ok(s * factor)
}

/// Left Jacobian Jl(w) = I + B(t) w^ + C(t) (w^)^2; equals dexp at w.
fn so3_jl<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let theta = w.norm();
    let k = so3_hat(w);
    Matrix3::identity() + k * coeff_b(theta) + k * k * coeff_c(theta)
}

/// Jl(w)^-1 = I - w^/2 + E(t) (w^)^2.
fn so3_jl_inv<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let theta = w.norm();
    let k = so3_hat(w);
    Matrix3::identity() - k * T::c(0.5) + k * k * coeff_e(theta)
}

/// Coupling block of the SE(3) dexp for twist (w, v).
fn se3_q<T: Real>(w: &Vector3<T>, v: &Vector3<T>) -> Matrix3<T> {
    let theta = w.norm();
    let wh = so3_hat(w);
    let vh = so3_hat(v);
    let c1 = coeff_c(theta);
    let c2 = coeff_q2(theta);
    let c3 = c2 - T::c(3.0) * coeff_q3(theta);
    vh * T::c(0.5)
        + (wh * vh + vh * wh + wh * vh * wh) * c1
        - (wh * wh * vh + vh * wh * wh - wh * vh * wh * T::c(3.0)) * c2
        - (wh * vh * wh * wh + wh * wh * vh * wh) * (c3 * T::c(0.5))
}

fn se3_assemble<T: Real>(r: &Matrix3<T>, t: &Vector3<T>) -> Matrix4<T> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

fn se3_parts<T: Real>(m: &Matrix4<T>) -> (Matrix3<T>, Vector3<T>) {
    (
        m.fixed_view::<3, 3>(0, 0).into_owned(),
        m.fixed_view::<3, 1>(0, 3).into_owned(),
    )
}

/// Nearest rotation to `m` (polar factor via SVD, det corrected to +1).
fn nearest_rotation<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    let mut r = u * vt;
    if r.determinant() < T::zero() {
        // flip the weakest singular direction
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

// ---------------------------------------------------------------------------
// Public types.
// ---------------------------------------------------------------------------

/// An SO(3) or SE(3) element, stored as a dense rotation or homogeneous
/// transform matrix.
#[allow(clippy::upper_case_acronyms)]
#[derive(Clone, Debug, PartialEq)]
pub enum GroupElement<T: Real> {
    SO3(Matrix3<T>),
    SE3(Matrix4<T>),
}

/// Tangent coordinates: a 3-vector `omega` for SO(3) or a 6-vector
/// `(omega, nu)` for SE(3).
#[allow(clippy::upper_case_acronyms)]
#[derive(Clone, Debug, PartialEq)]
pub enum TangentVector<T: Real> {
    SO3(Vector3<T>),
    SE3(Vector6<T>),
}

/// A Lie algebra element in matrix form, as produced by `hat`.
#[allow(clippy::upper_case_acronyms)]
#[derive(Clone, Debug, PartialEq)]
pub enum AlgebraMatrix<T: Real> {
    SO3(Matrix3<T>),
    SE3(Matrix4<T>),
}

impl<T: Real> GroupElement<T> {
    pub fn identity(kind: GroupKind) -> Self {
        match kind {
            GroupKind::SO3 => GroupElement::SO3(Matrix3::identity()),
            GroupKind::SE3 => GroupElement::SE3(Matrix4::identity()),
        }
    }

    /// Validate and wrap a rotation matrix.
    pub fn from_rotation(r: Matrix3<T>) -> Result<Self> {
        let g = GroupElement::SO3(r);
        g.check_invariants()?;
        Ok(g)
    }

    /// Validate and wrap a homogeneous transform.
    pub fn from_homogeneous(m: Matrix4<T>) -> Result<Self> {
        let g = GroupElement::SE3(m);
        g.check_invariants()?;
        Ok(g)
    }

    /// Build an SE(3) element from rotation and translation parts.
    pub fn from_parts(r: Matrix3<T>, t: Vector3<T>) -> Result<Self> {
        Self::from_homogeneous(se3_assemble(&r, &t))
    }

    /// Project an arbitrary matrix onto the group (nearest rotation via the
    /// polar factor, bottom row reset). Used at ingest boundaries only.
    pub fn project(kind: GroupKind, m: &DMatrix<T>) -> Result<Self> {
        match kind {
            GroupKind::SO3 => {
                if m.nrows() != 3 || m.ncols() != 3 {
                    return Err(Error::DimMismatch("SO3 projection needs a 3x3 matrix".into()));
                }
                let r = nearest_rotation(&Matrix3::from_fn(|i, j| m[(i, j)]));
                Ok(GroupElement::SO3(r))
            }
            GroupKind::SE3 => {
                if m.nrows() != 4 || m.ncols() != 4 {
                    return Err(Error::DimMismatch("SE3 projection needs a 4x4 matrix".into()));
                }
                let r = nearest_rotation(&Matrix3::from_fn(|i, j| m[(i, j)]));
                let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
                Ok(GroupElement::SE3(se3_assemble(&r, &t)))
            }
        }
    }

    pub fn kind(&self) -> GroupKind {
        match self {
            GroupElement::SO3(_) => GroupKind::SO3,
            GroupElement::SE3(_) => GroupKind::SE3,
        }
    }

    pub fn dof(&self) -> usize {
        self.kind().dof()
    }

    /// Rotation block.
    pub fn rotation(&self) -> Matrix3<T> {
        match self {
            GroupElement::SO3(r) => *r,
            GroupElement::SE3(m) => se3_parts(m).0,
        }
    }

    /// Translation part; zero for SO(3).
    pub fn translation(&self) -> Vector3<T> {
        match self {
            GroupElement::SO3(_) => Vector3::zeros(),
            GroupElement::SE3(m) => se3_parts(m).1,
        }
    }

    /// 4x4 homogeneous form (SO(3) embedded with zero translation).
    pub fn homogeneous(&self) -> Matrix4<T> {
        match self {
            GroupElement::SO3(r) => se3_assemble(r, &Vector3::zeros()),
            GroupElement::SE3(m) => *m,
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let tol = group_tol::<T>();
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho >= tol {
            return Err(Error::Structure(format!(
                "rotation block not orthonormal: |R^T R - I| = {:.3e}",
                ortho.to_f64_lossy()
            )));
        }
        let det = r.determinant();
        if (det - T::one()).abs() >= tol {
            return Err(Error::Structure(format!(
                "rotation determinant {} not 1",
                det.to_f64_lossy()
            )));
        }
        if let GroupElement::SE3(m) = self {
            let bottom_ok = m[(3, 0)] == T::zero()
                && m[(3, 1)] == T::zero()
                && m[(3, 2)] == T::zero()
                && m[(3, 3)] == T::one();
            if !bottom_ok {
                return Err(Error::Structure("SE3 bottom row is not (0,0,0,1)".into()));
            }
        }
        Ok(())
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        match (self, other) {
            (GroupElement::SO3(a), GroupElement::SO3(b)) => Ok(GroupElement::SO3(a * b)),
            (GroupElement::SE3(a), GroupElement::SE3(b)) => {
                let mut m = a * b;
                m[(3, 0)] = T::zero();
                m[(3, 1)] = T::zero();
                m[(3, 2)] = T::zero();
                m[(3, 3)] = T::one();
                Ok(GroupElement::SE3(m))
            }
            _ => Err(Error::KindMismatch {
                expected: self.kind().name(),
                got: other.kind().name(),
            }),
        }
    }

    pub fn inverse(&self) -> Self {
        match self {
            GroupElement::SO3(r) => GroupElement::SO3(r.transpose()),
            GroupElement::SE3(m) => {
                let (r, t) = se3_parts(m);
                let rt = r.transpose();
                GroupElement::SE3(se3_assemble(&rt, &(-(rt * t))))
            }
        }
    }

    /// Logarithm map. Rejects rotations within 1e-6 of angle pi.
    pub fn log(&self) -> Result<TangentVector<T>> {
        match self {
            GroupElement::SO3(r) => Ok(TangentVector::SO3(so3_log(r)?)),
            GroupElement::SE3(m) => {
                let (r, t) = se3_parts(m);
                let w = so3_log(&r)?;
                let nu = so3_jl_inv(&w) * t;
                let mut tau = Vector6::zeros();
                tau.fixed_rows_mut::<3>(0).copy_from(&w);
                tau.fixed_rows_mut::<3>(3).copy_from(&nu);
                Ok(TangentVector::SE3(tau))
            }
        }
    }

    /// Group adjoint as a dense d x d matrix. For SE(3) with the (omega, nu)
    /// tangent ordering this is [[R, 0], [t^ R, R]].
    pub fn adjoint_matrix(&self) -> DMatrix<T> {
        match self {
            GroupElement::SO3(r) => DMatrix::from_fn(3, 3, |i, j| r[(i, j)]),
            GroupElement::SE3(m) => {
                let (r, t) = se3_parts(m);
                let th_r = so3_hat(&t) * r;
                let mut ad = DMatrix::zeros(6, 6);
                for i in 0..3 {
                    for j in 0..3 {
                        ad[(i, j)] = r[(i, j)];
                        ad[(i + 3, j + 3)] = r[(i, j)];
                        ad[(i + 3, j)] = th_r[(i, j)];
                    }
                }
                ad
            }
        }
    }

    /// Max-abs difference of the homogeneous forms; a cheap closeness test.
    pub fn distance_inf(&self, other: &Self) -> T {
        (self.homogeneous() - other.homogeneous()).abs().max()
    }
}

impl<T: Real> TangentVector<T> {
    pub fn zero(kind: GroupKind) -> Self {
        match kind {
            GroupKind::SO3 => TangentVector::SO3(Vector3::zeros()),
            GroupKind::SE3 => TangentVector::SE3(Vector6::zeros()),
        }
    }

    pub fn from_slice(kind: GroupKind, coords: &[T]) -> Result<Self> {
        if coords.len() != kind.dof() {
            return Err(Error::DimMismatch(format!(
                "{} tangent needs {} coordinates, got {}",
                kind,
                kind.dof(),
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("tangent coordinates".into()));
        }
        Ok(match kind {
            GroupKind::SO3 => TangentVector::SO3(Vector3::from_row_slice(coords)),
            GroupKind::SE3 => TangentVector::SE3(Vector6::from_row_slice(coords)),
        })
    }

    pub fn kind(&self) -> GroupKind {
        match self {
            TangentVector::SO3(_) => GroupKind::SO3,
            TangentVector::SE3(_) => GroupKind::SE3,
        }
    }

    pub fn dof(&self) -> usize {
        self.kind().dof()
    }

    pub fn coords(&self) -> DVector<T> {
        match self {
            TangentVector::SO3(w) => DVector::from_row_slice(w.as_slice()),
            TangentVector::SE3(t) => DVector::from_row_slice(t.as_slice()),
        }
    }

    pub fn as_slice(&self) -> &[T] {
        match self {
            TangentVector::SO3(w) => w.as_slice(),
            TangentVector::SE3(t) => t.as_slice(),
        }
    }

    /// Rotational part of the twist (the whole vector for SO(3)).
    pub fn rotation_part(&self) -> Vector3<T> {
        match self {
            TangentVector::SO3(w) => *w,
            TangentVector::SE3(t) => t.fixed_rows::<3>(0).into_owned(),
        }
    }

    pub fn norm(&self) -> T {
        match self {
            TangentVector::SO3(w) => w.norm(),
            TangentVector::SE3(t) => t.norm(),
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        match self {
            TangentVector::SO3(w) => TangentVector::SO3(w * s),
            TangentVector::SE3(t) => TangentVector::SE3(t * s),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        match (self, other) {
            (TangentVector::SO3(a), TangentVector::SO3(b)) => Ok(TangentVector::SO3(a + b)),
            (TangentVector::SE3(a), TangentVector::SE3(b)) => Ok(TangentVector::SE3(a + b)),
            _ => Err(Error::KindMismatch {
                expected: self.kind().name(),
                got: other.kind().name(),
            }),
        }
    }

    /// Hat isomorphism into the algebra matrix form.
    pub fn hat(&self) -> AlgebraMatrix<T> {
        match self {
            TangentVector::SO3(w) => AlgebraMatrix::SO3(so3_hat(w)),
            TangentVector::SE3(t) => {
                let w = t.fixed_rows::<3>(0).into_owned();
                let v = t.fixed_rows::<3>(3).into_owned();
                let mut m = Matrix4::zeros();
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(&so3_hat(&w));
                m.fixed_view_mut::<3, 1>(0, 3).copy_from(&v);
                AlgebraMatrix::SE3(m)
            }
        }
    }

    /// Exponential map: Rodrigues on SO(3), the V-matrix closed form on SE(3).
    pub fn exp(&self) -> GroupElement<T> {
        match self {
            TangentVector::SO3(w) => GroupElement::SO3(so3_exp(w)),
            TangentVector::SE3(t) => {
                let w = t.fixed_rows::<3>(0).into_owned();
                let v = t.fixed_rows::<3>(3).into_owned();
                let r = so3_exp(&w);
                let trans = so3_jl(&w) * v;
                GroupElement::SE3(se3_assemble(&r, &trans))
            }
        }
    }

    /// Trivialized tangent of exp at this twist, as a d x d matrix.
    pub fn dexp(&self) -> DMatrix<T> {
        match self {
            TangentVector::SO3(w) => {
                let j = so3_jl(w);
                DMatrix::from_fn(3, 3, |i, jj| j[(i, jj)])
            }
            TangentVector::SE3(t) => {
                let w = t.fixed_rows::<3>(0).into_owned();
                let v = t.fixed_rows::<3>(3).into_owned();
                let j = so3_jl(&w);
                let q = se3_q(&w, &v);
                let mut m = DMatrix::zeros(6, 6);
                for i in 0..3 {
                    for jj in 0..3 {
                        m[(i, jj)] = j[(i, jj)];
                        m[(i + 3, jj + 3)] = j[(i, jj)];
                        m[(i + 3, jj)] = q[(i, jj)];
                    }
                }
                m
            }
        }
    }

    /// Inverse of [`dexp`](Self::dexp). Rejects `|omega|` within 1e-6 of pi.
    pub fn dexp_inv(&self) -> Result<DMatrix<T>> {
        let angle = self.rotation_part().norm();
        if angle > T::pi() - branch_guard() {
            return Err(Error::Branch(format!(
                "dexp_inv at rotation angle {:.9} within 1e-6 of pi",
                angle.to_f64_lossy()
            )));
        }
        Ok(match self {
            TangentVector::SO3(w) => {
                let j = so3_jl_inv(w);
                DMatrix::from_fn(3, 3, |i, jj| j[(i, jj)])
            }
            TangentVector::SE3(t) => {
                let w = t.fixed_rows::<3>(0).into_owned();
                let v = t.fixed_rows::<3>(3).into_owned();
                let ji = so3_jl_inv(&w);
                let q = se3_q(&w, &v);
                let coupling = -(ji * q * ji);
                let mut m = DMatrix::zeros(6, 6);
                for i in 0..3 {
                    for jj in 0..3 {
                        m[(i, jj)] = ji[(i, jj)];
                        m[(i + 3, jj + 3)] = ji[(i, jj)];
                        m[(i + 3, jj)] = coupling[(i, jj)];
                    }
                }
                m
            }
        })
    }

    /// Algebra adjoint ad(v): the bracket matrix, so ad(v) w = [v, w].
    pub fn algebra_adjoint(&self) -> DMatrix<T> {
        match self {
            TangentVector::SO3(w) => {
                let h = so3_hat(w);
                DMatrix::from_fn(3, 3, |i, j| h[(i, j)])
            }
            TangentVector::SE3(t) => {
                let wh = so3_hat(&t.fixed_rows::<3>(0).into_owned());
                let vh = so3_hat(&t.fixed_rows::<3>(3).into_owned());
                let mut m = DMatrix::zeros(6, 6);
                for i in 0..3 {
                    for j in 0..3 {
                        m[(i, j)] = wh[(i, j)];
                        m[(i + 3, j + 3)] = wh[(i, j)];
                        m[(i + 3, j)] = vh[(i, j)];
                    }
                }
                m
            }
        }
    }
}

impl<T: Real> AlgebraMatrix<T> {
    /// Inverse of `hat`: extract coordinates, checking the skew structure.
    pub fn vee(&self) -> Result<TangentVector<T>> {
        let tol = group_tol::<T>();
        match self {
            AlgebraMatrix::SO3(m) => {
                let skew_err = (m + m.transpose()).abs().max();
                if skew_err >= tol {
                    return Err(Error::Structure(format!(
                        "not skew-symmetric: |M + M^T| = {:.3e}",
                        skew_err.to_f64_lossy()
                    )));
                }
                Ok(TangentVector::SO3(Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])))
            }
            AlgebraMatrix::SE3(m) => {
                let rot = m.fixed_view::<3, 3>(0, 0);
                let skew_err = (rot + rot.transpose()).abs().max();
                if skew_err >= tol {
                    return Err(Error::Structure(format!(
                        "rotation block not skew-symmetric: |M + M^T| = {:.3e}",
                        skew_err.to_f64_lossy()
                    )));
                }
                let bottom = m.fixed_view::<1, 4>(3, 0).abs().max();
                if bottom >= tol {
                    return Err(Error::Structure("SE3 algebra bottom row not zero".into()));
                }
                let mut tau = Vector6::zeros();
                tau[0] = m[(2, 1)];
                tau[1] = m[(0, 2)];
                tau[2] = m[(1, 0)];
                tau[3] = m[(0, 3)];
                tau[4] = m[(1, 3)];
                tau[5] = m[(2, 3)];
                Ok(TangentVector::SE3(tau))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Quadratic function on the group.
// ---------------------------------------------------------------------------

/// Symmetric positive-definite weight for the Lie quadratic function.
#[derive(Clone, Debug)]
pub struct WeightMatrix<T: Real> {
    m: DMatrix<T>,
}

impl<T: Real> WeightMatrix<T> {
    pub fn new(m: DMatrix<T>) -> Result<Self> {
        let d = m.nrows();
        if d != m.ncols() || (d != 3 && d != 6) {
            return Err(Error::DimMismatch(format!(
                "weight matrix must be 3x3 or 6x6, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let sym_tol = nalgebra::RealField::max(T::c(1e-12), T::default_epsilon() * T::c(100.0));
        if (&m - m.transpose()).abs().max() >= sym_tol {
            return Err(Error::Structure("weight matrix not symmetric".into()));
        }
        let eig = m.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        if min_eig <= T::zero() {
            return Err(Error::Structure(format!(
                "weight matrix not positive definite (min eigenvalue {:.3e})",
                min_eig.to_f64_lossy()
            )));
        }
        Ok(WeightMatrix { m })
    }

    pub fn identity(dof: usize) -> Self {
        WeightMatrix {
            m: DMatrix::identity(dof, dof),
        }
    }

    pub fn from_diagonal(diag: &DVector<T>) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(diag))
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.m
    }

    pub fn dof(&self) -> usize {
        self.m.nrows()
    }
}

fn difference_log<T: Real>(g1: &GroupElement<T>, g2: &GroupElement<T>) -> Result<TangentVector<T>> {
    if g1.kind() != g2.kind() {
        return Err(Error::KindMismatch {
            expected: g1.kind().name(),
            got: g2.kind().name(),
        });
    }
    g2.inverse().compose(g1)?.log()
}

fn check_weight_dim<T: Real>(g: &GroupElement<T>, m: &WeightMatrix<T>) -> Result<()> {
    if m.dof() != g.dof() {
        return Err(Error::DimMismatch(format!(
            "weight matrix is {}x{} but group dof is {}",
            m.dof(),
            m.dof(),
            g.dof()
        )));
    }
    Ok(())
}

/// Quadratic function 0.5 * |log(g2^-1 g1)|^2_M.
pub fn lie_quadratic<T: Real>(
    g1: &GroupElement<T>,
    g2: &GroupElement<T>,
    m: &WeightMatrix<T>,
) -> Result<T> {
    check_weight_dim(g1, m)?;
    let v = difference_log(g1, g2)?.coords();
    Ok((v.transpose() * m.matrix() * &v)[(0, 0)] * T::c(0.5))
}

/// Left-trivialized derivative of [`lie_quadratic`] in its first argument
/// (perturbation `g1 * exp(eps * hat(z))`):
/// `D1 = dexp_inv(-log(g2^-1 g1))^T M log(g2^-1 g1)`.
pub fn lie_quadratic_d1<T: Real>(
    g1: &GroupElement<T>,
    g2: &GroupElement<T>,
    m: &WeightMatrix<T>,
) -> Result<TangentVector<T>> {
    check_weight_dim(g1, m)?;
    let v = difference_log(g1, g2)?;
    let jac = v.scaled(-T::one()).dexp_inv()?;
    let grad = jac.transpose() * (m.matrix() * v.coords());
    TangentVector::from_slice(g1.kind(), grad.as_slice())
}

/// Derivative in the second argument: `D2 = -Ad(g1^-1 g2)^T D1`.
pub fn lie_quadratic_d2<T: Real>(
    g1: &GroupElement<T>,
    g2: &GroupElement<T>,
    m: &WeightMatrix<T>,
) -> Result<TangentVector<T>> {
    let d1 = lie_quadratic_d1(g1, g2, m)?;
    let rel = g1.inverse().compose(g2)?;
    let grad = -(rel.adjoint_matrix().transpose() * d1.coords());
    TangentVector::from_slice(g1.kind(), grad.as_slice())
}
