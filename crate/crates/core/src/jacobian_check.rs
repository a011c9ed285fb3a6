//! Finite-difference verification of every analytic factor Jacobian.
//!
//! Each suite draws random instances, perturbs the error state along every
//! tangent direction with central differences, and reports the relative
//! Frobenius error `‖J_analytic − J_numeric‖ / max(‖J_numeric‖, floor)`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factors::{
    epipolar_residual_with, normalization_jacobian, reprojection_residual, EpipolarFactor, Landmark,
    MIN_BASELINE_M,
};
use crate::geometry::{exp_so3, CameraIntrinsics, Extrinsics, GravityVector, Quat};
use crate::preintegration::{imu_residual, preintegrate, ImuNoiseModel, ImuSample};
use crate::state::{ErrorState, KeyframeState, ERROR_STATE_DIM};

const STEP: f64 = 1e-6;
const NORM_FLOOR: f64 = 1e-8;
pub const EPIPOLAR_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Deliberate mistakes the checker must catch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negated derivative of the normalized baseline `∂C/∂t`.
    DcDtSign,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub failures: usize,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }
}

fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    (analytic - numeric).norm() / numeric.norm().max(NORM_FLOOR)
}

fn summarize(name: &'static str, errors: &[f64], tolerance: f64) -> SuiteResult {
    SuiteResult {
        name,
        instances: errors.len(),
        max_relative_error: errors.iter().copied().fold(0.0, f64::max),
        tolerance,
        failures: errors.iter().filter(|e| !(**e < tolerance)).count(),
    }
}

/// Central differences of `f` along the columns of the identity in `dim` dimensions.
fn numeric_jacobian(dim: usize, rows: usize, f: impl Fn(&DVector<f64>) -> Option<DVector<f64>>) -> Option<DMatrix<f64>> {
    let mut j = DMatrix::zeros(rows, dim);
    for c in 0..dim {
        let mut d = DVector::zeros(dim);
        d[c] = STEP;
        let plus = f(&d)?;
        let minus = f(&(-d))?;
        j.set_column(c, &((plus - minus) / (2.0 * STEP)));
    }
    Some(j)
}

fn random_vector(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-scale..scale))
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Quat {
    exp_so3(&random_vector(rng, std::f64::consts::PI / 1.8))
}

fn random_state(rng: &mut ChaCha8Rng) -> KeyframeState {
    KeyframeState {
        timestamp_ns: 0,
        position: random_vector(rng, 2.0),
        velocity: random_vector(rng, 1.0),
        orientation: random_rotation(rng),
        accel_bias: random_vector(rng, 0.1),
        gyro_bias: random_vector(rng, 0.01),
    }
}

fn pose_delta(d: &DVector<f64>, offset: usize) -> ErrorState {
    let mut dx = ErrorState::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&d.fixed_rows::<3>(offset));
    dx.fixed_rows_mut::<3>(6).copy_from(&d.fixed_rows::<3>(offset + 3));
    dx
}

/// Epipolar residual Jacobians over `trials` random instances. Every fifth
/// instance has a short baseline (a few centimeters) to probe the
/// near-degenerate regime.
pub fn check_epipolar(trials: usize, seed: u64, fault: Fault) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dc_dt = move |t: &Vector3<f64>| -> Matrix3<f64> {
        match fault {
            Fault::None => normalization_jacobian(t),
            Fault::DcDtSign => -normalization_jacobian(t),
        }
    };
    let mut errors = Vec::with_capacity(trials);
    while errors.len() < trials {
        let ext = Extrinsics::new(random_rotation(&mut rng), random_vector(&mut rng, 0.1));
        let si = random_state(&mut rng);
        let mut sj = random_state(&mut rng);
        if errors.len() % 5 == 4 {
            sj.position = si.position + random_vector(&mut rng, 1.0).normalize() * rng.random_range(0.03..0.06);
        }
        let mut bearing = || Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), 1.0);
        let factor = EpipolarFactor {
            feature_id: 0,
            i: 0,
            j: 1,
            bearing_i: bearing(),
            bearing_j: bearing(),
            sigma: 1.0,
        };
        let Some(lin) = epipolar_residual_with(&si, &sj, &factor, &ext, dc_dt) else {
            continue;
        };
        if lin.baseline < 1.5 * MIN_BASELINE_M {
            continue;
        }
        let mut analytic = DMatrix::zeros(1, 12);
        for (k, block) in [lin.d_pos_i, lin.d_rot_i, lin.d_pos_j, lin.d_rot_j].iter().enumerate() {
            analytic.view_mut((0, 3 * k), (1, 3)).copy_from(block);
        }
        let numeric = numeric_jacobian(12, 1, |d| {
            let a = si.boxplus(&pose_delta(d, 0));
            let b = sj.boxplus(&pose_delta(d, 6));
            epipolar_residual_with(&a, &b, &factor, &ext, normalization_jacobian)
                .map(|l| DVector::from_element(1, l.residual))
        });
        if let Some(numeric) = numeric {
            errors.push(relative_error(&analytic, &numeric));
        }
    }
    summarize("epipolar", &errors, EPIPOLAR_TOLERANCE)
}

/// Reprojection residual Jacobians with respect to pose and landmark.
pub fn check_reprojection(trials: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = CameraIntrinsics::euroc_cam0();
    let mut errors = Vec::with_capacity(trials);
    while errors.len() < trials {
        let ext = Extrinsics::new(random_rotation(&mut rng), random_vector(&mut rng, 0.1));
        let state = random_state(&mut rng);
        let depth = rng.random_range(1.0..10.0);
        let xn = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.4..0.4));
        let p_cam = Vector3::new(xn.x, xn.y, 1.0) * depth;
        let in_body = ext.rotation * p_cam + ext.translation;
        let lm = Landmark {
            position: state.orientation * in_body + state.position,
        };
        let pixel = intr.normalized_to_pixel(&xn) + Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let Some(lin) = reprojection_residual(&state, &lm, &pixel, &intr, &ext) else {
            continue;
        };
        let mut analytic = DMatrix::zeros(2, 9);
        analytic.view_mut((0, 0), (2, 3)).copy_from(&lin.d_pos);
        analytic.view_mut((0, 3), (2, 3)).copy_from(&lin.d_rot);
        analytic.view_mut((0, 6), (2, 3)).copy_from(&lin.d_landmark);
        let numeric = numeric_jacobian(9, 2, |d| {
            let s = state.boxplus(&pose_delta(d, 0));
            let l = Landmark {
                position: lm.position + d.fixed_rows::<3>(6),
            };
            reprojection_residual(&s, &l, &pixel, &intr, &ext).map(|r| DVector::from_column_slice(r.residual.as_slice()))
        });
        if let Some(numeric) = numeric {
            errors.push(relative_error(&analytic, &numeric));
        }
    }
    summarize("reprojection", &errors, DEFAULT_TOLERANCE)
}

/// IMU residual Jacobians over the 30 error-state directions of both keyframes.
pub fn check_imu(trials: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gravity = GravityVector::default();
    let noise = ImuNoiseModel::default();
    let mut errors = Vec::with_capacity(trials);
    while errors.len() < trials {
        let gyro0 = random_vector(&mut rng, 1.0);
        let accel0 = random_vector(&mut rng, 3.0) + Vector3::new(0.0, 0.0, 9.81);
        let samples: Vec<ImuSample> = (0..21)
            .map(|k| {
                let t = k as f64 * 0.005;
                ImuSample::new(
                    k * 5_000_000,
                    gyro0 + Vector3::new(t.sin(), 2.0 * t, -t) * 0.5,
                    accel0 + Vector3::new(t, t.cos(), 3.0 * t),
                )
            })
            .collect();
        let lin_ba = random_vector(&mut rng, 0.1);
        let lin_bg = random_vector(&mut rng, 0.01);
        let Ok(p) = preintegrate(&samples, lin_ba, lin_bg, &noise) else {
            continue;
        };
        let prev = KeyframeState {
            accel_bias: lin_ba + random_vector(&mut rng, 0.05),
            gyro_bias: lin_bg + random_vector(&mut rng, 0.01),
            ..random_state(&mut rng)
        };
        // A next state roughly consistent with the measurement keeps the
        // rotation residual away from the cut locus.
        let dt = p.dt_total;
        let g = gravity.vector();
        let next = KeyframeState {
            timestamp_ns: p.end_ns,
            position: prev.position + prev.velocity * dt + 0.5 * g * dt * dt + prev.orientation * p.alpha + random_vector(&mut rng, 0.1),
            velocity: prev.velocity + g * dt + prev.orientation * p.beta + random_vector(&mut rng, 0.1),
            orientation: prev.orientation * p.gamma * exp_so3(&random_vector(&mut rng, 0.2)),
            accel_bias: prev.accel_bias + random_vector(&mut rng, 0.01),
            gyro_bias: prev.gyro_bias + random_vector(&mut rng, 0.001),
        };
        let lin = imu_residual(&p, &prev, &next, &gravity);
        let mut analytic = DMatrix::zeros(ERROR_STATE_DIM, 2 * ERROR_STATE_DIM);
        analytic.view_mut((0, 0), (15, 15)).copy_from(&lin.jac_prev);
        analytic.view_mut((0, 15), (15, 15)).copy_from(&lin.jac_next);
        let numeric = numeric_jacobian(2 * ERROR_STATE_DIM, ERROR_STATE_DIM, |d| {
            let a = prev.boxplus(&d.fixed_rows::<15>(0).into_owned());
            let b = next.boxplus(&d.fixed_rows::<15>(15).into_owned());
            Some(DVector::from_column_slice(imu_residual(&p, &a, &b, &gravity).residual.as_slice()))
        });
        if let Some(numeric) = numeric {
            errors.push(relative_error(&analytic, &numeric));
        }
    }
    summarize("imu", &errors, DEFAULT_TOLERANCE)
}

/// Runs every suite; the epipolar suite uses `trials` instances and the
/// others a fifth of that (at least one).
pub fn run_all(trials: usize, seed: u64, fault: Fault) -> Result<Vec<SuiteResult>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("number of trials must be positive".into()));
    }
    let fewer = (trials / 5).max(1);
    Ok(vec![
        check_epipolar(trials, seed, fault),
        check_reprojection(fewer, seed.wrapping_add(1)),
        check_imu(fewer, seed.wrapping_add(2)),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        assert!(check_epipolar(100, 1, Fault::None).passed());
        assert!(check_reprojection(50, 2).passed());
        assert!(check_imu(20, 3).passed());
    }

    #[test]
    fn sign_error_is_caught() {
        let r = check_epipolar(50, 1, Fault::DcDtSign);
        assert!(!r.passed());
        assert!(r.max_relative_error > 0.1);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(run_all(0, 0, Fault::None).is_err());
    }
}
