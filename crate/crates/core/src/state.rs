//! The per-keyframe optimization variable and its 15-dimensional error state.

use nalgebra::{SVector, Vector3};

use crate::geometry::{boxminus, boxplus, Pose, Quat};

pub const ERROR_STATE_DIM: usize = 15;

/// Offsets of each block inside the error state `[δp, δv, δθ, δb_a, δb_g]`.
pub const POS: usize = 0;
pub const VEL: usize = 3;
pub const ROT: usize = 6;
pub const BA: usize = 9;
pub const BG: usize = 12;

pub type ErrorState = SVector<f64, ERROR_STATE_DIM>;

/// IMU state at one keyframe, expressed in the gravity-aligned global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeState {
    pub timestamp_ns: i64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Body-to-global orientation.
    pub orientation: Quat,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

impl KeyframeState {
    pub fn new(timestamp_ns: i64, position: Vector3<f64>, orientation: Quat) -> Self {
        Self {
            timestamp_ns,
            position,
            velocity: Vector3::zeros(),
            orientation,
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.orientation, self.position)
    }

    pub fn boxplus(&self, dx: &ErrorState) -> Self {
        Self {
            timestamp_ns: self.timestamp_ns,
            position: self.position + dx.fixed_rows::<3>(POS),
            velocity: self.velocity + dx.fixed_rows::<3>(VEL),
            orientation: boxplus(&self.orientation, &dx.fixed_rows::<3>(ROT).into_owned()),
            accel_bias: self.accel_bias + dx.fixed_rows::<3>(BA),
            gyro_bias: self.gyro_bias + dx.fixed_rows::<3>(BG),
        }
    }

    /// Error state `dx` such that `other.boxplus(dx) == self`.
    pub fn boxminus(&self, other: &KeyframeState) -> ErrorState {
        let mut dx = ErrorState::zeros();
        dx.fixed_rows_mut::<3>(POS).copy_from(&(self.position - other.position));
        dx.fixed_rows_mut::<3>(VEL).copy_from(&(self.velocity - other.velocity));
        dx.fixed_rows_mut::<3>(ROT).copy_from(&boxminus(&self.orientation, &other.orientation));
        dx.fixed_rows_mut::<3>(BA).copy_from(&(self.accel_bias - other.accel_bias));
        dx.fixed_rows_mut::<3>(BG).copy_from(&(self.gyro_bias - other.gyro_bias));
        dx
    }

    /// Applies a rigid yaw rotation about global z followed by a translation
    /// to the whole state. Biases are body-frame quantities and stay put.
    pub fn transformed(&self, yaw: &Quat, translation: &Vector3<f64>) -> Self {
        Self {
            position: yaw * self.position + translation,
            velocity: yaw * self.velocity,
            orientation: yaw * self.orientation,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so3;
    use approx::assert_relative_eq;

    #[test]
    fn boxplus_boxminus_round_trip() {
        let s = KeyframeState {
            timestamp_ns: 5,
            position: Vector3::new(1.0, 2.0, 3.0),
            velocity: Vector3::new(0.1, 0.2, 0.3),
            orientation: exp_so3(&Vector3::new(0.2, 0.1, -0.4)),
            accel_bias: Vector3::new(0.01, 0.0, -0.02),
            gyro_bias: Vector3::new(0.001, 0.002, 0.0),
        };
        let dx = ErrorState::from_fn(|i, _| 0.01 * (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 });
        let moved = s.boxplus(&dx);
        assert!((moved.orientation.norm() - 1.0).abs() < 1e-9);
        assert_relative_eq!(moved.boxminus(&s), dx, epsilon = 1e-12);
        assert_eq!(moved.timestamp_ns, 5);
    }
}
