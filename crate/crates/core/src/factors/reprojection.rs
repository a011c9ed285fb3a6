use nalgebra::{Matrix2x3, Vector2, Vector3};

use super::Landmark;
use crate::geometry::{skew, CameraIntrinsics, Extrinsics};
use crate::state::KeyframeState;

pub const MIN_DEPTH_M: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionLinearization {
    /// Observed minus predicted pixel.
    pub residual: Vector2<f64>,
    pub d_pos: Matrix2x3<f64>,
    pub d_rot: Matrix2x3<f64>,
    pub d_landmark: Matrix2x3<f64>,
}

/// Landmark position in the camera frame of `state`.
pub fn landmark_in_camera(state: &KeyframeState, lm: &Vector3<f64>, ext: &Extrinsics) -> Vector3<f64> {
    let in_body = state.orientation.inverse() * (lm - state.position);
    ext.rotation.inverse() * (in_body - ext.translation)
}

/// Pixel residual `u − h_d(h_p(p_C), ζ)`. `None` when the landmark is not
/// at least [`MIN_DEPTH_M`] in front of the camera.
pub fn reprojection_residual(
    state: &KeyframeState,
    lm: &Landmark,
    u: &Vector2<f64>,
    intr: &CameraIntrinsics,
    ext: &Extrinsics,
) -> Option<ReprojectionLinearization> {
    let r_t = state.orientation.to_rotation_matrix().into_inner().transpose();
    let r_ic_t = ext.rotation_matrix().transpose();
    let in_body = r_t * (lm.position - state.position);
    let p_cam = r_ic_t * (in_body - ext.translation);
    if !(p_cam.z > MIN_DEPTH_M) {
        return None;
    }
    let predicted = intr.project(&p_cam)?;
    let dres_dcam = -intr.project_jacobian(&p_cam);
    let dcam_dlm = r_ic_t * r_t;
    Some(ReprojectionLinearization {
        residual: u - predicted,
        d_pos: -(dres_dcam * dcam_dlm),
        d_rot: dres_dcam * r_ic_t * skew(&in_body),
        d_landmark: dres_dcam * dcam_dlm,
    })
}
