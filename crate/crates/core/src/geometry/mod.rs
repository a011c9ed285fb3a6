//! Rotations, rigid transforms, the camera model, and the IMU-camera
//! extrinsic chain.
//!
//! Orientations are Hamilton unit quaternions stored body-to-global, so a
//! pose maps points from its own frame into the frame it is expressed in.

mod camera;
mod so3;

pub use camera::{back_project, CameraIntrinsics};
pub use so3::{
    boxminus, boxplus, exp_so3, log_so3, quat_exp, quat_log, right_jacobian, right_jacobian_inv,
    skew, yaw_of, yaw_rotation, Quat,
};

use nalgebra::{Matrix3, Vector3};

pub const DEFAULT_GRAVITY: f64 = 9.81;

/// Rigid transform from frame A into frame B: `p_B = R p_A + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Quat,
    pub position: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Quat, position: Vector3<f64>) -> Self {
        Self { rotation, position }
    }

    pub fn identity() -> Self {
        Self::new(Quat::identity(), Vector3::zeros())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.position
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self::new(r_inv, -(r_inv * self.position))
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.position + self.position,
        )
    }
}

/// Free-function form of [`Pose::transform_point`].
pub fn transform_point(pose: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    pose.transform_point(p)
}

/// Camera-to-IMU calibration: camera orientation in the IMU frame and the
/// camera center expressed in the IMU frame. Held fixed during a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: Quat,
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Quat, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Quat::identity(), Vector3::zeros())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }
}

/// Camera-to-global pose for an IMU-to-global pose.
pub fn imu_pose_to_camera_pose(imu: &Pose, ext: &Extrinsics) -> Pose {
    Pose::new(
        imu.rotation * ext.rotation,
        imu.position + imu.rotation * ext.translation,
    )
}

/// Gravity in the gravity-aligned global frame; always along −z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityVector {
    g: Vector3<f64>,
}

impl GravityVector {
    pub fn new(magnitude: f64) -> Self {
        Self {
            g: Vector3::new(0.0, 0.0, -magnitude),
        }
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.g
    }

    pub fn magnitude(&self) -> f64 {
        -self.g.z
    }
}

impl Default for GravityVector {
    fn default() -> Self {
        Self::new(DEFAULT_GRAVITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn identity_pose_leaves_points() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&Pose::identity(), &p), p);
    }

    #[test]
    fn quarter_turn_about_z() {
        let pose = Pose::new(exp_so3(&Vector3::new(0.0, 0.0, PI / 2.0)), Vector3::zeros());
        let out = pose.transform_point(&Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(out, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn inverse_round_trip() {
        let pose = Pose::new(
            exp_so3(&Vector3::new(0.3, -0.4, 1.0)),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let p = Vector3::new(-0.7, 3.0, 2.2);
        let back = pose.inverse().transform_point(&pose.transform_point(&p));
        assert_relative_eq!(back, p, epsilon = 1e-12);
        let id = pose.compose(&pose.inverse());
        assert_relative_eq!(id.position.norm(), 0.0, epsilon = 1e-9);
        assert_relative_eq!(log_so3(&id.rotation).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn camera_pose_identity() {
        let cam = imu_pose_to_camera_pose(&Pose::identity(), &Extrinsics::identity());
        assert_eq!(cam.position, Vector3::zeros());
        assert_relative_eq!(log_so3(&cam.rotation).norm(), 0.0);
    }

    #[test]
    fn camera_pose_translation_only() {
        let ext = Extrinsics::new(Quat::identity(), Vector3::new(0.1, 0.0, 0.0));
        let cam = imu_pose_to_camera_pose(&Pose::identity(), &ext);
        assert_relative_eq!(cam.position, Vector3::new(0.1, 0.0, 0.0));
    }

    #[test]
    fn camera_pose_follows_imu_rotation() {
        let ext = Extrinsics::new(Quat::identity(), Vector3::new(0.1, 0.0, 0.0));
        let imu = Pose::new(exp_so3(&Vector3::new(0.0, 0.0, PI)), Vector3::zeros());
        let cam = imu_pose_to_camera_pose(&imu, &ext);
        assert_relative_eq!(cam.position, Vector3::new(-0.1, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn gravity_points_down() {
        let g = GravityVector::default();
        assert_eq!(g.vector(), Vector3::new(0.0, 0.0, -9.81));
        assert_eq!(g.magnitude(), 9.81);
    }

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-2.0f64..2.0),
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_map(|(r, t)| Pose::new(exp_so3(&Vector3::from(r)), Vector3::from(t)))
    }

    proptest! {
        #[test]
        fn transform_is_associative(a in pose_strategy(), b in pose_strategy(), c in pose_strategy(),
                                    p in prop::array::uniform3(-5.0f64..5.0)) {
            let p = Vector3::from(p);
            let chained = a.transform_point(&b.transform_point(&c.transform_point(&p)));
            let composed = a.compose(&b).compose(&c).transform_point(&p);
            prop_assert!((chained - composed).norm() < 1e-10);
        }

        #[test]
        fn pose_inverse_composes_to_identity(a in pose_strategy()) {
            let id = a.compose(&a.inverse());
            prop_assert!(id.position.norm() < 1e-9);
            prop_assert!(log_so3(&id.rotation).norm() < 1e-9);
        }
    }
}
