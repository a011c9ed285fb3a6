use nalgebra::{Matrix3, Vector3};

use crate::factors::{FeatureTrack, MIN_DEPTH_M};
use crate::geometry::{imu_pose_to_camera_pose, Extrinsics};
use crate::state::KeyframeState;

/// Smallest eigenvalue of `Σ (I − d dᵀ)` (per ray) accepted as enough parallax.
const MIN_PARALLAX_EIGEN: f64 = 1e-6;

/// Least-squares point closest to all observation rays. `None` when the rays
/// are near-parallel or the point is not in front of every observing camera.
pub fn triangulate_track(
    track: &FeatureTrack,
    states: &[KeyframeState],
    ext: &Extrinsics,
) -> Option<Vector3<f64>> {
    if track.len() < 2 {
        return None;
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    let mut cams = Vec::with_capacity(track.len());
    for o in &track.observations {
        let cam = imu_pose_to_camera_pose(&states.get(o.keyframe)?.pose(), ext);
        let d = (cam.rotation * o.bearing).normalize();
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * cam.position;
        cams.push(cam);
    }
    let eig = a.symmetric_eigenvalues();
    if eig.min() < MIN_PARALLAX_EIGEN * track.len() as f64 {
        return None;
    }
    let p = a.cholesky()?.solve(&b);
    let in_front = cams
        .iter()
        .all(|c| (c.rotation.inverse() * (p - c.position)).z > MIN_DEPTH_M);
    in_front.then_some(p)
}
