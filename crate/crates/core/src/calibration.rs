use crate::geometry::{CameraIntrinsics, Extrinsics, GravityVector, DEFAULT_GRAVITY};
use crate::preintegration::ImuNoiseModel;

/// Sensor calibration shared by every keyframe of a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: Extrinsics,
    pub gravity_magnitude: f64,
    pub noise: ImuNoiseModel,
    pub image_width: u32,
    pub image_height: u32,
}

impl Calibration {
    pub fn gravity(&self) -> GravityVector {
        GravityVector::new(self.gravity_magnitude)
    }
}

impl Default for Calibration {
    /// EuRoC-like camera and IMU with a forward-looking camera: optical axis
    /// along body x, image right along body −y, image down along body −z.
    fn default() -> Self {
        let r_ic = nalgebra::Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let rotation = crate::geometry::Quat::from_matrix(&r_ic);
        Self {
            intrinsics: CameraIntrinsics::euroc_cam0(),
            extrinsics: Extrinsics::new(rotation, nalgebra::Vector3::new(0.05, -0.02, 0.01)),
            gravity_magnitude: DEFAULT_GRAVITY,
            noise: ImuNoiseModel::default(),
            image_width: 752,
            image_height: 480,
        }
    }
}
