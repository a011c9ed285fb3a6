use nalgebra::{Matrix3, RowVector3, Vector3};

use super::EpipolarFactor;
use crate::geometry::{skew, Extrinsics};
use crate::state::KeyframeState;

/// Pairs whose camera centers are closer than this are skipped for the
/// current linearization: the normalized translation is ill-defined there.
pub const MIN_BASELINE_M: f64 = 0.02;

/// Triple-product residual and its Jacobians with respect to the position
/// and (right-perturbed) orientation of both keyframes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarLinearization {
    pub residual: f64,
    pub d_pos_i: RowVector3<f64>,
    pub d_rot_i: RowVector3<f64>,
    pub d_pos_j: RowVector3<f64>,
    pub d_rot_j: RowVector3<f64>,
    pub baseline: f64,
}

/// Jacobian of `t / |t|` with respect to `t`.
pub fn normalization_jacobian(t: &Vector3<f64>) -> Matrix3<f64> {
    let n = t.norm();
    (Matrix3::identity() - t * t.transpose() / (n * n)) / n
}

/// `(R_j R_ic z_j)ᵀ [t/|t|]ₓ (R_i R_ic z_i)` with `t` the vector from camera
/// `j`'s center to camera `i`'s. `None` when the baseline is degenerate.
pub fn epipolar_residual(
    state_i: &KeyframeState,
    state_j: &KeyframeState,
    factor: &EpipolarFactor,
    ext: &Extrinsics,
) -> Option<EpipolarLinearization> {
    epipolar_residual_with(state_i, state_j, factor, ext, normalization_jacobian)
}

/// [`epipolar_residual`] with a caller-supplied normalization Jacobian, so
/// that the Jacobian checker can be exercised against a faulty chain rule.
pub fn epipolar_residual_with(
    state_i: &KeyframeState,
    state_j: &KeyframeState,
    factor: &EpipolarFactor,
    ext: &Extrinsics,
    dc_dt: impl Fn(&Vector3<f64>) -> Matrix3<f64>,
) -> Option<EpipolarLinearization> {
    let r_i = state_i.orientation.to_rotation_matrix().into_inner();
    let r_j = state_j.orientation.to_rotation_matrix().into_inner();
    let r_ic = ext.rotation_matrix();
    let p_ic = ext.translation;

    let w_i = r_ic * factor.bearing_i;
    let w_j = r_ic * factor.bearing_j;
    let b = r_i * w_i;
    let a = r_j * w_j;
    let t = state_i.position + r_i * p_ic - state_j.position - r_j * p_ic;
    let baseline = t.norm();
    if !(baseline >= MIN_BASELINE_M) {
        return None;
    }
    let c = t / baseline;
    let c_cross_b = c.cross(&b);
    let residual = a.dot(&c_cross_b);

    let dr_da = c_cross_b.transpose();
    let dr_dc = -(a.transpose() * skew(&b));
    let dr_db = a.transpose() * skew(&c);
    let dr_dt = dr_dc * dc_dt(&t);

    let da_drot_j = -r_j * skew(&w_j);
    let db_drot_i = -r_i * skew(&w_i);
    let dt_drot_i = -r_i * skew(&p_ic);
    let dt_drot_j = r_j * skew(&p_ic);

    Some(EpipolarLinearization {
        residual,
        d_pos_i: dr_dt,
        d_rot_i: dr_db * db_drot_i + dr_dt * dt_drot_i,
        d_pos_j: -dr_dt,
        d_rot_j: dr_da * da_drot_j + dr_dt * dt_drot_j,
        baseline,
    })
}
