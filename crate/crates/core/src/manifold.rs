//! SO(3)/SE(3) primitives used by every other module.
//!
//! Twists are ordered rotation-first, `[θx, θy, θz, x, y, z]`, matching the
//! block order of the point Jacobian `[-R[p]×, R]`. Every covariance, kernel
//! and filter interface in the crate uses this ordering.
//!
//! Pose updates are right-multiplicative: `T ⊞ ξ = T · exp(ξ)`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, SymmetricEigen, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Below this angle the exp/log/left-Jacobian use their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// `trace(R)` below `-1 + NEAR_PI_TRACE` switches the log map to the
/// eigenvector branch.
const NEAR_PI_TRACE: f64 = 1e-6;

pub type Adjoint6 = Matrix6<f64>;

/// Skew-symmetric matrix `[v]×` such that `[v]× w = v × w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]; reads the skew part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// A 3×3 rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rot3(Matrix3<f64>);

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Matrix3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rot3(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rot3(self.0.transpose())
    }

    /// Frobenius norm of `RᵀR - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    /// Projects back onto SO(3). Not used inside solver iterations.
    pub fn normalize(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rot3(u * d * v_t)
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.0)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Rot3(*q.to_rotation_matrix().matrix())
    }
}

impl Mul for Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: Rot3) -> Rot3 {
        Rot3(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rot3 {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Minimal pose increment `[θ; ρ]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Twist(Vector6::new(
            rotation.x,
            rotation.y,
            rotation.z,
            translation.x,
            translation.y,
            translation.z,
        ))
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Twist(Vector6::from_row_slice(v))
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn as_vector(&self) -> &Vector6<f64> {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Rigid transform `{R, p}` acting as `x ↦ R x + p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rot3,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Rot3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rot3, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose::new(Rot3::identity(), t)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * x + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn normalize(&self) -> Self {
        Pose::new(self.rotation.normalize(), self.translation)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|x| x.is_finite())
            && self.rotation.matrix().iter().all(|x| x.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
        )
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.to_quaternion();
        let t = &self.translation;
        write!(
            f,
            "{} {} {} {} {} {} {}",
            t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
    }
}

/// Rodrigues exponential.
pub fn so3_exp(omega: &Vector3<f64>) -> Rot3 {
    let theta = omega.norm();
    let w = hat(omega);
    let w2 = w * w;
    if theta < SMALL_ANGLE {
        return Rot3(Matrix3::identity() + w + 0.5 * w2);
    }
    let half_sin = (0.5 * theta).sin();
    let a = theta.sin() / theta;
    let b = 2.0 * half_sin * half_sin / (theta * theta);
    Rot3(Matrix3::identity() + a * w + b * w2)
}

/// Principal-branch logarithm, `‖result‖ ∈ [0, π]`.
pub fn so3_log(r: &Rot3) -> Vector3<f64> {
    let m = r.matrix();
    let trace = m.trace();
    let skew = vee(&(m - m.transpose()));
    let sin_theta = 0.5 * skew.norm();
    let cos_theta = (0.5 * (trace - 1.0)).clamp(-1.0, 1.0);

    if trace < -1.0 + NEAR_PI_TRACE {
        // Axis is the unit eigenvector of the symmetric part with eigenvalue 1.
        let sym = 0.5 * (m + m.transpose());
        let eig = SymmetricEigen::new(sym);
        let (best, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bd), (i, &l)| {
                let d = (l - 1.0).abs();
                if d < bd {
                    (i, d)
                } else {
                    (bi, bd)
                }
            });
        let mut axis: Vector3<f64> = eig.eigenvectors.column(best).into_owned();
        axis.normalize_mut();
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
        let theta = sin_theta.atan2(cos_theta);
        return axis * theta;
    }

    let theta = sin_theta.atan2(cos_theta);
    if theta < SMALL_ANGLE {
        return 0.5 * skew * (1.0 + theta * theta / 6.0);
    }
    skew * (theta / (2.0 * sin_theta))
}

/// Left Jacobian of SO(3), `V(θ)` in `p = V(θ) ρ`.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    let w2 = w * w;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * w + w2 / 6.0;
    }
    let t2 = theta * theta;
    let half_sin = (0.5 * theta).sin();
    let a = 2.0 * half_sin * half_sin / t2;
    let b = (theta - theta.sin()) / (t2 * theta);
    Matrix3::identity() + a * w + b * w2
}

/// Inverse of [`so3_left_jacobian`].
pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    let w2 = w * w;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * w + w2 / 12.0;
    }
    let half = 0.5 * theta;
    let coef = (1.0 - half * half.cos() / half.sin()) / (theta * theta);
    Matrix3::identity() - 0.5 * w + coef * w2
}

pub fn se3_exp(xi: &Twist) -> Pose {
    let omega = xi.rotation();
    Pose::new(so3_exp(&omega), so3_left_jacobian(&omega) * xi.translation())
}

pub fn se3_log(pose: &Pose) -> Twist {
    let omega = so3_log(&pose.rotation);
    Twist::new(omega, so3_left_jacobian_inv(&omega) * pose.translation)
}

/// `base · exp(delta)`.
pub fn pose_boxplus(base: &Pose, delta: &Twist) -> Pose {
    *base * se3_exp(delta)
}

/// `log(exp(a) · exp(b))`, the twist of a right-composed increment.
pub fn twist_compose(a: &Twist, b: &Twist) -> Twist {
    se3_log(&(se3_exp(a) * se3_exp(b)))
}

/// Adjoint `[[R, 0], [[p]×R, R]]` in rotation-first ordering, so that
/// `T · exp(ξ) · T⁻¹ = exp(Ad_T ξ)`.
pub fn adjoint(pose: &Pose) -> Adjoint6 {
    let r = pose.rotation.matrix();
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    ad.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(hat(&pose.translation) * r));
    ad
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn series_exp3(w: &Matrix3<f64>, terms: usize) -> Matrix3<f64> {
        let mut acc = Matrix3::identity();
        let mut term = Matrix3::identity();
        for k in 1..terms {
            term = term * w / k as f64;
            acc += term;
        }
        acc
    }

    fn series_exp4(m: &Matrix4<f64>, terms: usize) -> Matrix4<f64> {
        let mut acc = Matrix4::identity();
        let mut term = Matrix4::identity();
        for k in 1..terms {
            term = term * m / k as f64;
            acc += term;
        }
        acc
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(so3_exp(&Vector3::zeros()), Rot3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = so3_exp(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        let y = r * Vector3::new(1.0, 0.0, 0.0);
        assert!((y - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn exp_matches_power_series() {
        let omega = Vector3::new(0.1, -0.25, 0.12).normalize() * 0.3;
        let series = series_exp3(&hat(&omega), 20);
        assert!((so3_exp(&omega).matrix() - series).norm() < 1e-12);
    }

    #[test]
    fn log_of_identity_and_round_trip() {
        assert_eq!(so3_log(&Rot3::identity()), Vector3::zeros());
        let w = Vector3::new(0.1, -0.2, 0.05);
        assert!((so3_log(&so3_exp(&w)) - w).norm() < 1e-10);
    }

    #[test]
    fn log_at_half_turn() {
        let r = so3_exp(&Vector3::new(0.0, 0.0, PI));
        let w = so3_log(&r);
        assert!(close(w.z.abs(), PI, 1e-9));
        assert!(w.x.abs() < 1e-9 && w.y.abs() < 1e-9);
        assert!((so3_exp(&w).matrix() - r.matrix()).norm() < 1e-9);
    }

    #[test]
    fn log_just_below_half_turn_uses_consistent_sign() {
        let axis = Vector3::new(1.0, 2.0, -0.5).normalize();
        let w = axis * (PI - 1e-5);
        let back = so3_log(&so3_exp(&w));
        assert!((back - w).norm() < 1e-6, "{back:?} vs {w:?}");
    }

    #[test]
    fn se3_exp_special_cases() {
        assert_eq!(se3_exp(&Twist::zero()), Pose::identity());
        let p = se3_exp(&Twist::from_slice(&[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]));
        assert_eq!(p.rotation, Rot3::identity());
        assert_eq!(p.translation, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn se3_exp_matches_matrix_series() {
        let xi = Twist::from_slice(&[0.3, -0.2, 0.4, 1.0, -0.5, 2.0]);
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&xi.rotation()));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.translation());
        let series = series_exp4(&m, 30);
        assert!((se3_exp(&xi).to_matrix() - series).norm() < 1e-9);
    }

    #[test]
    fn se3_log_inverts_exp() {
        let xi = Twist::from_slice(&[0.3, -0.2, 0.4, 1.0, -0.5, 2.0]);
        let back = se3_log(&se3_exp(&xi));
        assert!((back.0 - xi.0).norm() < 1e-12);
    }

    #[test]
    fn boxplus_zero_and_identity() {
        let t = se3_exp(&Twist::from_slice(&[0.1, 0.2, 0.3, 4.0, 5.0, 6.0]));
        assert_eq!(pose_boxplus(&t, &Twist::zero()), t);
        let xi = Twist::from_slice(&[-0.1, 0.05, 0.2, 0.3, 0.0, -1.0]);
        assert_eq!(pose_boxplus(&Pose::identity(), &xi), se3_exp(&xi));
    }

    #[test]
    fn adjoint_special_cases() {
        assert_eq!(adjoint(&Pose::identity()), Matrix6::identity());
        let r = so3_exp(&Vector3::new(0.3, -0.1, 0.7));
        let ad = adjoint(&Pose::new(r, Vector3::zeros()));
        assert_eq!(ad.fixed_view::<3, 3>(0, 0), *r.matrix());
        assert_eq!(ad.fixed_view::<3, 3>(3, 3), *r.matrix());
        assert_eq!(ad.fixed_view::<3, 3>(3, 0), Matrix3::zeros());
        assert_eq!(ad.fixed_view::<3, 3>(0, 3), Matrix3::zeros());
    }

    #[test]
    fn adjoint_conjugates_twists() {
        let t = se3_exp(&Twist::from_slice(&[0.4, -0.3, 0.2, 1.0, 2.0, -1.5]));
        let xi = Twist::from_slice(&[0.05, 0.1, -0.02, 0.3, -0.2, 0.1]);
        let lhs = t * se3_exp(&xi) * t.inverse();
        let rhs = se3_exp(&Twist(adjoint(&t) * xi.0));
        assert!((lhs.to_matrix() - rhs.to_matrix()).norm() < 1e-12);
    }

    #[test]
    fn normalize_restores_orthonormality() {
        let mut m = *so3_exp(&Vector3::new(0.2, 0.1, -0.3)).matrix();
        m[(0, 1)] += 1e-4;
        let r = Rot3::from_matrix_unchecked(m).normalize();
        assert!(r.orthonormality_error() < 1e-14);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-14);
    }
}
