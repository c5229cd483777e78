//! Rigid transforms.
//!
//! A [`Pose`] maps points expressed in one camera frame into another:
//! `P' = R P + t`. For reprojection the pose maps target-frame points into
//! the source frame.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|x| x.is_finite())
        {
            return Err(Error::config("pose has non-finite entries"));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        if err > ORTHONORMAL_TOL {
            return Err(Error::config(format!(
                "rotation is not orthonormal (|R^T R - I| = {err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::config(format!(
                "rotation determinant is {det}, expected 1"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Exactly the identity transform.
    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about the vertical axis. Positive angles
    /// increase longitude.
    pub fn yaw(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::new(0.0, angle, 0.0), Vector3::zeros())
    }

    pub fn from_axis_angle(omega: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: so3_exp(&omega),
            translation,
        }
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Same rotation, translation multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Pose {
        Pose {
            rotation: self.rotation,
            translation: self.translation * s,
        }
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        so3_log(&self.rotation)
    }

    pub fn params(&self) -> PoseParams {
        PoseParams::from_pose(self)
    }

    /// Rotation angle (degrees) and translation distance (meters) between two poses.
    pub fn error_to(&self, other: &Pose) -> (f64, f64) {
        let rel = self.rotation.transpose() * other.rotation;
        let angle = so3_log(&rel).norm().to_degrees();
        (angle, (self.translation - other.translation).norm())
    }
}

/// Minimal 6-parameter chart of a pose: axis-angle rotation then translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseParams(pub [f64; 6]);

impl PoseParams {
    pub fn new(omega: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self([omega.x, omega.y, omega.z, t.x, t.y, t.z])
    }

    pub fn from_pose(pose: &Pose) -> Self {
        Self::new(pose.axis_angle(), pose.translation)
    }

    #[inline]
    pub fn omega(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    #[inline]
    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn to_pose(&self) -> Pose {
        Pose::from_axis_angle(self.omega(), self.translation())
    }

    pub fn scaled_translation(&self, s: f64) -> Self {
        let mut out = *self;
        for x in &mut out.0[3..] {
            *x *= s;
        }
        out
    }
}

/// Rodrigues' formula.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(*omega).into_inner()
}

pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

pub(crate) fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Left Jacobian of SO(3): `exp([ω + δ]×) ≈ exp([J_l(ω) δ]×) exp([ω]×)`.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (a, b) = if theta2 < 1e-8 {
        // Taylor expansions of (1 - cos θ)/θ² and (θ - sin θ)/θ³.
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_non_rotations() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        let m = Matrix3::identity() * 1.1;
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        assert!(Pose::new(so3_exp(&Vector3::new(0.1, 0.2, 0.3)), Vector3::zeros()).is_ok());
    }

    #[test]
    fn compose_and_inverse() {
        let a = Pose::from_axis_angle(Vector3::new(0.1, -0.3, 0.2), Vector3::new(1.0, 2.0, 3.0));
        let id = a.compose(&a.inverse());
        assert_abs_diff_eq!(*id.rotation(), Matrix3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(*id.translation(), Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn params_round_trip() {
        let p = PoseParams([0.3, -0.2, 0.1, 0.5, 0.0, -1.0]);
        let q = p.to_pose().params();
        for (a, b) in p.0.iter().zip(q.0.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn left_jacobian_matches_finite_differences() {
        for omega in [
            Vector3::new(0.3, -0.7, 0.2),
            Vector3::new(1e-6, 2e-6, -1e-6),
            Vector3::zeros(),
        ] {
            let r = so3_exp(&omega);
            let jl = so3_left_jacobian(&omega);
            let h = 1e-6;
            for i in 0..3 {
                let mut e = Vector3::zeros();
                e[i] = h;
                let dr = (so3_exp(&(omega + e)) - so3_exp(&(omega - e))) / (2.0 * h);
                // dR = [J_l e_i]× R
                let expected = skew(&(jl.column(i).into_owned())) * r;
                assert_abs_diff_eq!(dr, expected, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn error_to_reports_angle_and_distance() {
        let a = Pose::yaw(0.1);
        let b = Pose::from_axis_angle(Vector3::new(0.0, 0.3, 0.0), Vector3::new(0.0, 3.0, 4.0));
        let (deg, dist) = a.error_to(&b);
        assert_abs_diff_eq!(deg, 0.2f64.to_degrees(), epsilon = 1e-9);
        assert_abs_diff_eq!(dist, 5.0, epsilon = 1e-12);
    }
}
