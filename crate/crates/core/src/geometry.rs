//! SO(3)/SE(3) machinery.
//!
//! Twists are ordered `[rho, phi]`: translational part first, rotational part
//! second. Every 6x6 matrix in this crate (adjoints, Jacobians, information
//! matrices, Hessian blocks) uses that ordering.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the exp/log maps switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Largest rotation angle accepted by the logarithm.
pub const LOG_ANGLE_LIMIT: f64 = std::f64::consts::PI - 1e-6;

pub fn hat3(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee3(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Unit quaternion with the canonical sign `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds a rotation from raw quaternion components, normalizing them.
    /// Components already unit-norm to 1e-14 are kept bit-exact.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::from_wxyz_within(w, x, y, z, 1e-14)
    }

    /// As [`Rotation::from_wxyz`], keeping the components verbatim when their
    /// norm is within `tolerance` of one. Readers of fixed-precision text use
    /// this so that re-writing a parsed pose reproduces the same digits.
    pub fn from_wxyz_within(w: f64, x: f64, y: f64, z: f64, tolerance: f64) -> Self {
        let q = Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() <= tolerance {
            Self::from_unit(UnitQuaternion::new_unchecked(q))
        } else {
            Self::from_unit(UnitQuaternion::from_quaternion(q))
        }
    }

    pub fn from_unit(q: UnitQuaternion<f64>) -> Self {
        let q = if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        };
        Rotation(q)
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self::from_unit(UnitQuaternion::from_matrix(m))
    }

    /// Rotation about the z axis.
    pub fn from_yaw(yaw: f64) -> Self {
        Self::exp(&Vector3::new(0.0, 0.0, yaw))
    }

    /// Rodrigues map. Non-finite input propagates; use [`so3_exp`] to reject it.
    pub fn exp(phi: &Vector3<f64>) -> Self {
        let theta2 = phi.norm_squared();
        let theta = theta2.sqrt();
        let (w, s) = if theta < SMALL_ANGLE {
            (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
        } else {
            let half = 0.5 * theta;
            (half.cos(), half.sin() / theta)
        };
        Self::from_wxyz(w, s * phi.x, s * phi.y, s * phi.z)
    }

    /// Rotation vector with angle in `[0, pi]`.
    pub fn log(&self) -> Vector3<f64> {
        let q = self.0.quaternion();
        let v = q.imag();
        let n = v.norm();
        let w = q.w;
        if n < 0.5 * SMALL_ANGLE {
            // atan2(n, w) / n ~ 1/w - n^2 / (3 w^3)
            return v * (2.0 / w - 2.0 * n * n / (3.0 * w * w * w));
        }
        v * (2.0 * n.atan2(w) / n)
    }

    pub fn angle(&self) -> f64 {
        let q = self.0.quaternion();
        2.0 * q.imag().norm().atan2(q.w)
    }

    pub fn inverse(&self) -> Self {
        Self::from_unit(self.0.inverse())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transform_vector(v)
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn w(&self) -> f64 {
        self.0.w
    }
    pub fn x(&self) -> f64 {
        self.0.i
    }
    pub fn y(&self) -> f64 {
        self.0.j
    }
    pub fn z(&self) -> f64 {
        self.0.k
    }

    pub fn norm(&self) -> f64 {
        self.0.quaternion().norm()
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        let q = self.0.quaternion() * rhs.0.quaternion();
        Rotation::from_unit(UnitQuaternion::new_normalize(q))
    }
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose::new(r, -r.rotate(&self.translation))
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn exp(xi: &Twist) -> Pose {
        let rotation = Rotation::exp(&xi.phi);
        Pose::new(rotation, left_jacobian_so3(&xi.phi) * xi.rho)
    }

    /// Logarithm without the domain check; see [`se3_log`].
    pub fn log_unchecked(&self) -> Twist {
        let phi = self.rotation.log();
        Twist::new(left_jacobian_so3_inv(&phi) * self.translation, phi)
    }

    /// Applies a left-multiplied increment: `exp(delta) * self`.
    pub fn retract(&self, delta: &Twist) -> Pose {
        Pose::exp(delta) * *self
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(
            self.rotation * rhs.rotation,
            self.rotation.rotate(&rhs.translation) + self.translation,
        )
    }
}

/// Element of se(3), `[rho, phi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Twist { rho, phi }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.rho);
        v.fixed_rows_mut::<3>(3).copy_from(&self.phi);
        v
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&self.phi));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.rho);
        m
    }

    pub fn vee(m: &Matrix4<f64>) -> Twist {
        let phi = vee3(&m.fixed_view::<3, 3>(0, 0).into_owned());
        Twist::new(m.fixed_view::<3, 1>(0, 3).into_owned(), phi)
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(self.phi.iter()).all(|v| v.is_finite())
    }
}

impl std::ops::Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist::new(-self.rho, -self.phi)
    }
}

/// Left Jacobian of SO(3).
pub fn left_jacobian_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat3(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * k + k2 / 6.0;
    }
    Matrix3::identity()
        + k * ((1.0 - theta.cos()) / theta2)
        + k2 * ((theta - theta.sin()) / (theta2 * theta))
}

pub fn left_jacobian_so3_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat3(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * k + k2 / 12.0;
    }
    let half = 0.5 * theta;
    let coeff = (1.0 - half / half.tan()) / theta2;
    Matrix3::identity() - 0.5 * k + k2 * coeff
}

fn check_finite3(v: &Vector3<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn so3_exp(phi: &Vector3<f64>) -> Result<Rotation> {
    check_finite3(phi, "so3_exp argument")?;
    Ok(Rotation::exp(phi))
}

pub fn se3_exp(xi: &Twist) -> Result<Pose> {
    if !xi.is_finite() {
        return Err(Error::NonFinite("se3_exp argument"));
    }
    Ok(Pose::exp(xi))
}

/// Inverse of [`se3_exp`]; rejects rotations within `1e-6` of pi.
pub fn se3_log(pose: &Pose) -> Result<Twist> {
    let angle = pose.rotation.angle();
    if !(angle < LOG_ANGLE_LIMIT) {
        return Err(Error::LogDomain { angle });
    }
    Ok(pose.log_unchecked())
}

/// Adjoint of `pose` acting on twists: `[[R, t^ R], [0, R]]`.
pub fn adjoint(pose: &Pose) -> Matrix6<f64> {
    let r = pose.rotation.matrix();
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(hat3(&pose.translation) * r));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    m
}

/// The se(3) "curly hat" `[[phi^, rho^], [0, phi^]]`.
pub fn curly_hat(xi: &Twist) -> Matrix6<f64> {
    let p = hat3(&xi.phi);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&p);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&hat3(&xi.rho));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&p);
    m
}

/// First-order inverse right Jacobian `I + curly_hat(e) / 2`.
pub fn right_jacobian_inv_approx(e: &Twist) -> Matrix6<f64> {
    Matrix6::identity() + 0.5 * curly_hat(e)
}
