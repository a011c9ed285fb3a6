use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};

use crate::error::{Error, Result};

const UNDISTORT_MAX_ITERS: usize = 20;
const UNDISTORT_TOL: f64 = 1e-14;

/// Pinhole camera with radial-tangential (plumb-bob, k1 k2 p1 p2) distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            p1: 0.0,
            p2: 0.0,
        }
    }

    /// EuRoC `cam0` calibration.
    pub fn euroc_cam0() -> Self {
        Self {
            fx: 458.654,
            fy: 457.296,
            cx: 367.215,
            cy: 248.375,
            k1: -0.28340811,
            k2: 0.07395907,
            p1: 0.00019359,
            p2: 1.76187114e-05,
        }
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    /// Applies lens distortion to a normalized image point.
    pub fn distort(&self, xn: &Vector2<f64>) -> Vector2<f64> {
        let (x, y) = (xn.x, xn.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        Vector2::new(
            x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        )
    }

    /// Jacobian of [`Self::distort`] with respect to the undistorted point.
    pub fn distort_jacobian(&self, xn: &Vector2<f64>) -> Matrix2<f64> {
        let (x, y) = (xn.x, xn.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        let dr = self.k1 + 2.0 * self.k2 * r2;
        let drx = 2.0 * x * dr;
        let dry = 2.0 * y * dr;
        Matrix2::new(
            radial + x * drx + 2.0 * self.p1 * y + 6.0 * self.p2 * x,
            x * dry + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            y * drx + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            radial + y * dry + 6.0 * self.p1 * y + 2.0 * self.p2 * x,
        )
    }

    /// Normalized image point to pixel, including distortion.
    pub fn normalized_to_pixel(&self, xn: &Vector2<f64>) -> Vector2<f64> {
        let d = self.distort(xn);
        Vector2::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy)
    }

    /// Projects a point in the camera frame. `None` when it is not in front.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some(self.normalized_to_pixel(&Vector2::new(p_cam.x / p_cam.z, p_cam.y / p_cam.z)))
    }

    /// Pixel Jacobian of [`Self::project`] with respect to the camera-frame point.
    pub fn project_jacobian(&self, p_cam: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p_cam.z;
        let xn = Vector2::new(p_cam.x * iz, p_cam.y * iz);
        let dn = Matrix2x3::new(iz, 0.0, -xn.x * iz, 0.0, iz, -xn.y * iz);
        let focal = Matrix2::new(self.fx, 0.0, 0.0, self.fy);
        focal * self.distort_jacobian(&xn) * dn
    }

    /// Inverts the distortion model by Gauss-Newton, starting from the
    /// distorted point itself.
    pub fn undistort(&self, distorted: &Vector2<f64>) -> Option<Vector2<f64>> {
        let mut x = *distorted;
        for _ in 0..UNDISTORT_MAX_ITERS {
            let err = self.distort(&x) - distorted;
            if err.norm() < UNDISTORT_TOL {
                return Some(x);
            }
            let step = self.distort_jacobian(&x).try_inverse()? * err;
            x -= step;
            if !x.iter().all(|v| v.is_finite()) {
                return None;
            }
        }
        ((self.distort(&x) - distorted).norm() < 1e-10).then_some(x)
    }

    /// Raw pixel to bearing `[x_n, y_n, 1]`.
    pub fn back_project(&self, u: &Vector2<f64>) -> Result<Vector3<f64>> {
        let distorted = Vector2::new((u.x - self.cx) / self.fx, (u.y - self.cy) / self.fy);
        self.undistort(&distorted)
            .map(|x| Vector3::new(x.x, x.y, 1.0))
            .ok_or(Error::UndistortionDiverged { u: u.x, v: u.y })
    }
}

/// Free-function form of [`CameraIntrinsics::back_project`].
pub fn back_project(u: &Vector2<f64>, intr: &CameraIntrinsics) -> Result<Vector3<f64>> {
    intr.back_project(u)
}
