//! Unit-quaternion algebra (Hamilton convention) and the SO(3) Jacobians
//! needed by the residuals.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

pub type Quat = UnitQuaternion<f64>;

/// Below this tangent norm the exponential and logarithm switch to Taylor forms.
const SMALL_ANGLE: f64 = 1e-8;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential of the pure quaternion `[0, v]`: `[cos|v|, sin|v| v/|v|]`.
///
/// `quat_exp(phi / 2)` is the rotation by the rotation vector `phi`.
pub fn quat_exp(v: &Vector3<f64>) -> Quat {
    let n = v.norm();
    let (w, s) = if n < SMALL_ANGLE {
        let n2 = n * n;
        (1.0 - 0.5 * n2, 1.0 - n2 / 6.0)
    } else {
        (n.cos(), n.sin() / n)
    };
    UnitQuaternion::new_normalize(Quaternion::new(w, s * v.x, s * v.y, s * v.z))
}

/// Inverse of [`quat_exp`]. The sign of `q` is chosen so that `w >= 0`, which
/// keeps the result on the shortest geodesic (`|log q| <= pi/2`).
pub fn quat_log(q: &Quat) -> Vector3<f64> {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let n = v.norm();
    if n < SMALL_ANGLE {
        // atan2(n, w) / n -> 1/w for small n.
        v / w
    } else {
        v * (n.atan2(w) / n)
    }
}

/// Rotation by the rotation vector `phi` (angle `|phi|` about `phi/|phi|`).
pub fn exp_so3(phi: &Vector3<f64>) -> Quat {
    quat_exp(&(0.5 * phi))
}

/// Rotation vector of `q`, with angle in `[0, pi]`.
pub fn log_so3(q: &Quat) -> Vector3<f64> {
    2.0 * quat_log(q)
}

/// `q ⊞ delta = q ⊗ exp(delta / 2)`: a right (body-frame) perturbation.
pub fn boxplus(q: &Quat, delta: &Vector3<f64>) -> Quat {
    UnitQuaternion::new_normalize((q * quat_exp(&(0.5 * delta))).into_inner())
}

/// `q1 ⊟ q2 = 2 log(q2⁻¹ ⊗ q1)`.
pub fn boxminus(q1: &Quat, q2: &Quat) -> Vector3<f64> {
    2.0 * quat_log(&(q2.inverse() * q1))
}

/// Right Jacobian of SO(3): `Exp(phi + d) ≈ Exp(phi) Exp(Jr(phi) d)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Matrix3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let t2 = theta * theta;
    Matrix3::identity() - ((1.0 - theta.cos()) / t2) * k
        + ((theta - theta.sin()) / (t2 * theta)) * k * k
}

/// Inverse of [`right_jacobian`]: `Log(Exp(phi) Exp(d)) ≈ phi + Jr⁻¹(phi) d`.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let t2 = theta * theta;
    let coeff = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coeff * k * k
}

/// Yaw (rotation about global z) of a body-to-global orientation, using the
/// Z-Y-X Euler decomposition.
pub fn yaw_of(q: &Quat) -> f64 {
    q.euler_angles().2
}

pub fn yaw_rotation(yaw: f64) -> Quat {
    UnitQuaternion::from_euler_angles(0.0, 0.0, yaw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn boxplus_zero_is_identity() {
        let q = boxplus(&Quat::identity(), &Vector3::zeros());
        assert_relative_eq!(q.quaternion().w, 1.0, epsilon = 1e-15);
        assert_relative_eq!(q.quaternion().imag().norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn boxplus_half_turn_about_x() {
        let q = boxplus(&Quat::identity(), &Vector3::new(PI, 0.0, 0.0));
        let q = q.quaternion();
        assert!(q.w.abs() < 1e-15);
        assert_relative_eq!(q.i, 1.0, epsilon = 1e-15);
        assert_relative_eq!(q.j, 0.0);
        assert_relative_eq!(q.k, 0.0);
    }

    #[test]
    fn boxminus_self_is_zero() {
        let q = exp_so3(&Vector3::new(0.3, -1.2, 0.7));
        assert_relative_eq!(boxminus(&q, &q).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn boxminus_half_turn() {
        let q = UnitQuaternion::new_unchecked(Quaternion::new(0.0, 1.0, 0.0, 0.0));
        let d = boxminus(&q, &Quat::identity());
        assert_relative_eq!(d, Vector3::new(PI, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn log_picks_shortest_geodesic() {
        let q = exp_so3(&Vector3::new(0.0, 0.0, 0.5));
        let flipped = UnitQuaternion::new_unchecked(-q.into_inner());
        assert_relative_eq!(log_so3(&flipped), Vector3::new(0.0, 0.0, 0.5), epsilon = 1e-14);
    }

    #[test]
    fn small_angle_exp_matches_closed_form() {
        let v = Vector3::new(3e-9, -2e-9, 1e-9);
        let q = quat_exp(&v);
        assert_relative_eq!(q.quaternion().imag(), v, epsilon = 1e-20);
        assert_relative_eq!(quat_log(&q), v, epsilon = 1e-20);
    }

    #[test]
    fn right_jacobian_inverse_pair() {
        let phi = Vector3::new(0.4, -0.9, 1.3);
        let prod = right_jacobian(&phi) * right_jacobian_inv(&phi);
        assert_relative_eq!(prod, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn right_jacobian_matches_finite_difference() {
        let phi = Vector3::new(0.4, -0.9, 1.3);
        let jr = right_jacobian(&phi);
        let h = 1e-6;
        for c in 0..3 {
            let mut d = Vector3::zeros();
            d[c] = h;
            // Exp(phi)^-1 Exp(phi + d) = Exp(Jr d)
            let plus = log_so3(&(exp_so3(&phi).inverse() * exp_so3(&(phi + d))));
            let minus = log_so3(&(exp_so3(&phi).inverse() * exp_so3(&(phi - d))));
            let col = (plus - minus) / (2.0 * h);
            assert_relative_eq!(col, jr.column(c).into_owned(), epsilon = 1e-8);
        }
    }

    #[test]
    fn rotation_matrix_is_orthonormal() {
        let q = exp_so3(&Vector3::new(1.1, 0.2, -2.5));
        let r = q.to_rotation_matrix().into_inner();
        assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-9);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn yaw_rotation_round_trip() {
        for yaw in [-3.0, -1.0, 0.0, 0.5, 3.1] {
            assert_relative_eq!(yaw_of(&yaw_rotation(yaw)), yaw, epsilon = 1e-14);
        }
    }

    fn tangent() -> impl Strategy<Value = Vector3<f64>> {
        (-1.8f64..1.8, -1.8f64..1.8, -1.8f64..1.8)
            .prop_map(|(x, y, z)| Vector3::new(x, y, z))
            .prop_filter("inside injectivity radius", |v| v.norm() < PI - 1e-3)
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(v in tangent()) {
            let q = exp_so3(&v);
            prop_assert!((q.norm() - 1.0).abs() < 1e-9);
            prop_assert!((log_so3(&q) - v).norm() < 1e-9);
        }

        #[test]
        fn boxplus_boxminus_round_trip(base in tangent(), d in tangent()) {
            let q = exp_so3(&base);
            let moved = boxplus(&q, &d);
            prop_assert!((moved.norm() - 1.0).abs() < 1e-9);
            prop_assert!((boxminus(&moved, &q) - d).norm() < 1e-9);
        }

        #[test]
        fn rotation_is_orthonormal(v in tangent()) {
            let r = exp_so3(&v).to_rotation_matrix().into_inner();
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
