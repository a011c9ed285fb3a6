//! IMU preintegration between consecutive keyframes.
//!
//! Samples are integrated with the midpoint rule. Alongside the mean, the
//! first-order map from the segment's initial error state (in particular the
//! bias errors) to its final error state is accumulated, together with the
//! measurement covariance over `[α, β, θ, b_a, b_g]`.
//!
//! In midpoint integration every interior sample feeds two steps, so its
//! noise is correlated across them. The covariance recursion carries the
//! cross-covariance between the error state and the noise of the most
//! recent sample to account for that.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, log_so3, right_jacobian, right_jacobian_inv, skew, GravityVector, Quat};
use crate::state::{KeyframeState, BA, BG, POS, ROT, VEL};

pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Vector15 = SVector<f64, 15>;
type Matrix15x6 = SMatrix<f64, 15, 6>;
type Matrix6 = SMatrix<f64, 6, 6>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub timestamp_ns: i64,
    /// Gyroscope reading, rad/s.
    pub gyro: Vector3<f64>,
    /// Accelerometer reading (specific force), m/s².
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn new(timestamp_ns: i64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self {
            timestamp_ns,
            gyro,
            accel,
        }
    }
}

/// Continuous-time IMU noise parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoiseModel {
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// rad/s²/√Hz
    pub gyro_random_walk: f64,
    /// m/s³/√Hz
    pub accel_random_walk: f64,
}

impl Default for ImuNoiseModel {
    /// EuRoC ADIS16448 datasheet values.
    fn default() -> Self {
        Self {
            gyro_noise_density: 1.7e-4,
            accel_noise_density: 2.0e-3,
            gyro_random_walk: 1.9393e-5,
            accel_random_walk: 3.0e-3,
        }
    }
}

impl ImuNoiseModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_random_walk,
            self.accel_random_walk,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "IMU noise parameters must be strictly positive: {self:?}"
            )))
        }
    }
}

/// Preintegrated relative motion between two keyframes, expressed in the
/// body frame of the earlier one.
#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedImu {
    pub alpha: Vector3<f64>,
    pub beta: Vector3<f64>,
    pub gamma: Quat,
    /// Map from the initial to the final error state. Its bias columns hold
    /// the bias Jacobians of α, β and γ.
    pub jacobian: Matrix15,
    /// Covariance of the measurement error in residual order, with the bias
    /// rows standing for the bias change `b_j − b_i` across the segment.
    pub covariance: Matrix15,
    /// Lower-triangular `L⁻¹` with `L Lᵀ = covariance`.
    pub sqrt_information: Matrix15,
    pub dt_total: f64,
    pub lin_ba: Vector3<f64>,
    pub lin_bg: Vector3<f64>,
    pub start_ns: i64,
    pub end_ns: i64,
}

/// Residual of one IMU factor and its Jacobians with respect to the error
/// states of the earlier (`prev`) and later (`next`) keyframe.
#[derive(Debug, Clone)]
pub struct ImuLinearization {
    pub residual: Vector15,
    pub jac_prev: Matrix15,
    pub jac_next: Matrix15,
}

impl PreintegratedImu {
    pub fn j_alpha_ba(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(POS, BA).into_owned()
    }
    pub fn j_alpha_bg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(POS, BG).into_owned()
    }
    pub fn j_beta_ba(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(VEL, BA).into_owned()
    }
    pub fn j_beta_bg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(VEL, BG).into_owned()
    }
    pub fn j_gamma_bg(&self) -> Matrix3<f64> {
        self.jacobian.fixed_view::<3, 3>(ROT, BG).into_owned()
    }

    /// Concatenates two adjacent preintegrations that share their boundary
    /// sample and linearization biases. The covariance neglects the
    /// correlation introduced by the shared sample.
    pub fn compose(&self, next: &PreintegratedImu) -> Result<PreintegratedImu> {
        if self.end_ns != next.start_ns {
            return Err(Error::InvalidProblem(format!(
                "cannot compose segments ending at {} and starting at {}",
                self.end_ns, next.start_ns
            )));
        }
        if self.lin_ba != next.lin_ba || self.lin_bg != next.lin_bg {
            return Err(Error::InvalidProblem(
                "composed segments must share linearization biases".into(),
            ));
        }
        let r1 = self.gamma.to_rotation_matrix().into_inner();
        let r2 = next.gamma.to_rotation_matrix().into_inner();
        let dt2 = next.dt_total;

        // Sensitivity of the composed error to the first segment's final error...
        let mut a = Matrix15::zeros();
        a.fixed_view_mut::<3, 3>(POS, POS).copy_from(&Matrix3::identity());
        a.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(Matrix3::identity() * dt2));
        a.fixed_view_mut::<3, 3>(POS, ROT).copy_from(&(-r1 * skew(&next.alpha)));
        a.fixed_view_mut::<3, 3>(VEL, VEL).copy_from(&Matrix3::identity());
        a.fixed_view_mut::<3, 3>(VEL, ROT).copy_from(&(-r1 * skew(&next.beta)));
        a.fixed_view_mut::<3, 3>(ROT, ROT).copy_from(&r2.transpose());
        // ...and to the second segment's.
        let mut b = Matrix15::identity();
        b.fixed_view_mut::<3, 3>(POS, POS).copy_from(&r1);
        b.fixed_view_mut::<3, 3>(VEL, VEL).copy_from(&r1);
        // The second segment starts with zero motion error but inherits the bias error.
        let mut bias_only = Matrix15::zeros();
        bias_only.fixed_view_mut::<6, 6>(BA, BA).copy_from(&Matrix6::identity());
        let m = a + b * next.jacobian * bias_only;

        let first = bias_change_sign(&self.covariance);
        let second = bias_change_sign(&next.covariance);
        let covariance = bias_change_sign(&symmetrize(&(m * first * m.transpose() + b * second * b.transpose())));
        Ok(PreintegratedImu {
            alpha: self.alpha + self.beta * dt2 + r1 * next.alpha,
            beta: self.beta + r1 * next.beta,
            gamma: Quat::new_normalize((self.gamma * next.gamma).into_inner()),
            jacobian: m * self.jacobian,
            sqrt_information: sqrt_information(&covariance),
            covariance,
            dt_total: self.dt_total + next.dt_total,
            lin_ba: self.lin_ba,
            lin_bg: self.lin_bg,
            start_ns: self.start_ns,
            end_ns: next.end_ns,
        })
    }

    /// Whitens a linearization in place so that its squared norm is the
    /// Mahalanobis distance under the preintegration covariance.
    pub fn whiten(&self, lin: &mut ImuLinearization) {
        lin.residual = self.sqrt_information * lin.residual;
        lin.jac_prev = self.sqrt_information * lin.jac_prev;
        lin.jac_next = self.sqrt_information * lin.jac_next;
    }
}

/// Switches the bias block between the propagation convention (linearization
/// bias minus true bias) and the residual convention (bias change), which
/// negates the motion-bias cross-covariance.
fn bias_change_sign(cov: &Matrix15) -> Matrix15 {
    let mut out = *cov;
    for r in 0..BA {
        for c in BA..15 {
            out[(r, c)] = -out[(r, c)];
            out[(c, r)] = -out[(c, r)];
        }
    }
    out
}

fn symmetrize(m: &Matrix15) -> Matrix15 {
    0.5 * (m + m.transpose())
}

fn sqrt_information(cov: &Matrix15) -> Matrix15 {
    let mut jittered = *cov;
    for attempt in 0..8 {
        if let Some(chol) = jittered.cholesky() {
            let l = chol.l();
            if let Some(inv) = l.solve_lower_triangular(&Matrix15::identity()) {
                return inv;
            }
        }
        // Two-sample segments leave α and β perfectly correlated; a relative
        // diagonal bump restores definiteness without changing the scale.
        let bump = 1e-10 * 10f64.powi(attempt);
        for i in 0..15 {
            jittered[(i, i)] = cov[(i, i)] * (1.0 + bump) + f64::MIN_POSITIVE.sqrt();
        }
    }
    // Unreachable for a covariance produced by preintegrate.
    Matrix15::identity()
}

/// Integrates `samples` (first and last at the two keyframe times) with the
/// given linearization biases.
pub fn preintegrate(
    samples: &[ImuSample],
    lin_ba: Vector3<f64>,
    lin_bg: Vector3<f64>,
    noise: &ImuNoiseModel,
) -> Result<PreintegratedImu> {
    if samples.len() < 2 {
        return Err(Error::TooFewImuSamples(samples.len()));
    }
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].timestamp_ns <= pair[0].timestamp_ns {
            return Err(Error::NonMonotonicImu {
                index: i + 1,
                timestamp_ns: pair[1].timestamp_ns,
            });
        }
    }
    let start_ns = samples[0].timestamp_ns;
    let end_ns = samples[samples.len() - 1].timestamp_ns;
    let dt_total = (end_ns - start_ns) as f64 * 1e-9;
    let mean_interval = dt_total / (samples.len() - 1) as f64;

    // White measurement noise per sample, discretized at the mean rate.
    let mut sample_cov = Matrix6::zeros();
    let acc_var = noise.accel_noise_density.powi(2) / mean_interval;
    let gyr_var = noise.gyro_noise_density.powi(2) / mean_interval;
    for i in 0..3 {
        sample_cov[(i, i)] = acc_var;
        sample_cov[(i + 3, i + 3)] = gyr_var;
    }

    let mut alpha = Vector3::zeros();
    let mut beta = Vector3::zeros();
    let mut gamma = Quat::identity();
    let mut jacobian = Matrix15::identity();
    let mut covariance = Matrix15::zeros();
    let mut cross = Matrix15x6::zeros();

    for pair in samples.windows(2) {
        let (s0, s1) = (&pair[0], &pair[1]);
        let dt = (s1.timestamp_ns - s0.timestamp_ns) as f64 * 1e-9;

        let omega = 0.5 * (s0.gyro + s1.gyro) - lin_bg;
        let rot_vec = omega * dt;
        let dq = exp_so3(&rot_vec);
        let gamma_next = Quat::new_normalize((gamma * dq).into_inner());
        let r0 = gamma.to_rotation_matrix().into_inner();
        let r1 = gamma_next.to_rotation_matrix().into_inner();
        let a0 = s0.accel - lin_ba;
        let a1 = s1.accel - lin_ba;
        let acc_mid = 0.5 * (r0 * a0 + r1 * a1);

        // First-order error propagation of this step.
        let dq_t = dq.to_rotation_matrix().into_inner().transpose();
        let jr_dt = right_jacobian(&rot_vec) * dt;
        let skew_a1 = skew(&a1);
        let dacc_dtheta = -0.5 * (r0 * skew(&a0) + r1 * skew_a1 * dq_t);
        let dacc_dba = -0.5 * (r0 + r1);
        let dacc_dbg = 0.5 * r1 * skew_a1 * jr_dt;
        let half_dt2 = 0.5 * dt * dt;

        let mut f = Matrix15::identity();
        f.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(Matrix3::identity() * dt));
        f.fixed_view_mut::<3, 3>(POS, ROT).copy_from(&(dacc_dtheta * half_dt2));
        f.fixed_view_mut::<3, 3>(POS, BA).copy_from(&(dacc_dba * half_dt2));
        f.fixed_view_mut::<3, 3>(POS, BG).copy_from(&(dacc_dbg * half_dt2));
        f.fixed_view_mut::<3, 3>(VEL, ROT).copy_from(&(dacc_dtheta * dt));
        f.fixed_view_mut::<3, 3>(VEL, BA).copy_from(&(dacc_dba * dt));
        f.fixed_view_mut::<3, 3>(VEL, BG).copy_from(&(dacc_dbg * dt));
        f.fixed_view_mut::<3, 3>(ROT, ROT).copy_from(&dq_t);
        f.fixed_view_mut::<3, 3>(ROT, BG).copy_from(&(-jr_dt));

        // Noise of the two samples, each `[accel, gyro]`, added to the
        // bias-compensated readings; the gyro enters through the midpoint rate.
        let dtheta_dgyr = 0.5 * jr_dt;
        let dacc_dgyr = -0.5 * r1 * skew_a1 * dtheta_dgyr;
        let mut g0 = Matrix15x6::zeros();
        let mut g1 = Matrix15x6::zeros();
        for (g, r_acc) in [(&mut g0, 0.5 * r0), (&mut g1, 0.5 * r1)] {
            g.fixed_view_mut::<3, 3>(POS, 0).copy_from(&(r_acc * half_dt2));
            g.fixed_view_mut::<3, 3>(VEL, 0).copy_from(&(r_acc * dt));
            g.fixed_view_mut::<3, 3>(POS, 3).copy_from(&(dacc_dgyr * half_dt2));
            g.fixed_view_mut::<3, 3>(VEL, 3).copy_from(&(dacc_dgyr * dt));
            g.fixed_view_mut::<3, 3>(ROT, 3).copy_from(&dtheta_dgyr);
        }
        // Bias random walk over the step; the later sample already sees it.
        let mut gw = Matrix15x6::zeros();
        gw.fixed_view_mut::<3, 3>(POS, 0).copy_from(&(-0.5 * r1 * half_dt2));
        gw.fixed_view_mut::<3, 3>(VEL, 0).copy_from(&(-0.5 * r1 * dt));
        gw.fixed_view_mut::<3, 3>(POS, 3).copy_from(&(-dacc_dgyr * half_dt2));
        gw.fixed_view_mut::<3, 3>(VEL, 3).copy_from(&(-dacc_dgyr * dt));
        gw.fixed_view_mut::<3, 3>(ROT, 3).copy_from(&(-dtheta_dgyr));
        gw.fixed_view_mut::<6, 6>(BA, 0).copy_from(&Matrix6::identity());
        let mut walk_cov = Matrix6::zeros();
        for i in 0..3 {
            walk_cov[(i, i)] = noise.accel_random_walk.powi(2) * dt;
            walk_cov[(i + 3, i + 3)] = noise.gyro_random_walk.powi(2) * dt;
        }

        let fc_g0 = f * cross * g0.transpose();
        covariance = f * covariance * f.transpose()
            + fc_g0
            + fc_g0.transpose()
            + g0 * sample_cov * g0.transpose()
            + g1 * sample_cov * g1.transpose()
            + gw * walk_cov * gw.transpose();
        covariance = symmetrize(&covariance);
        cross = g1 * sample_cov;
        jacobian = f * jacobian;

        alpha += beta * dt + acc_mid * half_dt2;
        beta += acc_mid * dt;
        gamma = gamma_next;
    }

    let covariance = bias_change_sign(&covariance);
    Ok(PreintegratedImu {
        alpha,
        beta,
        gamma,
        jacobian,
        sqrt_information: sqrt_information(&covariance),
        covariance,
        dt_total,
        lin_ba,
        lin_bg,
        start_ns,
        end_ns,
    })
}

/// Extracts the samples covering `[t0, t1]`, linearly interpolating
/// synthetic samples at either end when no reading lands exactly on it.
pub fn samples_between(samples: &[ImuSample], t0: i64, t1: i64) -> Result<Vec<ImuSample>> {
    let coverage = Error::ImuCoverage {
        start_ns: t0,
        end_ns: t1,
    };
    if t1 <= t0 || samples.is_empty() {
        return Err(coverage);
    }
    if samples[0].timestamp_ns > t0 || samples[samples.len() - 1].timestamp_ns < t1 {
        return Err(coverage);
    }
    let interpolate = |t: i64| -> ImuSample {
        let idx = samples.partition_point(|s| s.timestamp_ns < t);
        let hi = &samples[idx];
        if hi.timestamp_ns == t || idx == 0 {
            return ImuSample { timestamp_ns: t, ..*hi };
        }
        let lo = &samples[idx - 1];
        let w = (t - lo.timestamp_ns) as f64 / (hi.timestamp_ns - lo.timestamp_ns) as f64;
        ImuSample::new(
            t,
            lo.gyro + (hi.gyro - lo.gyro) * w,
            lo.accel + (hi.accel - lo.accel) * w,
        )
    };
    let mut out = vec![interpolate(t0)];
    out.extend(
        samples
            .iter()
            .filter(|s| s.timestamp_ns > t0 && s.timestamp_ns < t1)
            .copied(),
    );
    out.push(interpolate(t1));
    Ok(out)
}

/// First-order bias correction of the preintegrated measurements.
pub fn correct_for_bias_delta(
    p: &PreintegratedImu,
    ba: &Vector3<f64>,
    bg: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>, Quat) {
    let dba = ba - p.lin_ba;
    let dbg = bg - p.lin_bg;
    let alpha = p.alpha + p.j_alpha_ba() * dba + p.j_alpha_bg() * dbg;
    let beta = p.beta + p.j_beta_ba() * dba + p.j_beta_bg() * dbg;
    let gamma = p.gamma * small_rotation(&(p.j_gamma_bg() * dbg));
    (alpha, beta, Quat::new_normalize(gamma.into_inner()))
}

/// `normalize([1, v/2])`.
fn small_rotation(v: &Vector3<f64>) -> Quat {
    Quat::new_normalize(nalgebra::Quaternion::new(1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z))
}

/// Right-tangent derivative of [`small_rotation`]:
/// `small_rotation(v + dv) ≈ small_rotation(v) · Exp(D dv)`.
fn small_rotation_jacobian(v: &Vector3<f64>) -> Matrix3<f64> {
    let n = v.norm();
    // small_rotation(v) rotates by 2·atan(n/2) about v/n.
    let (ratio, curvature, angle) = if n < 1e-4 {
        (1.0 - n * n / 12.0, -1.0 / 6.0, *v * (1.0 - n * n / 12.0))
    } else {
        let f = 2.0 * (0.5 * n).atan();
        let df = 1.0 / (1.0 + 0.25 * n * n);
        (f / n, (df - f / n) / (n * n), *v * (f / n))
    };
    let dphi_dv = Matrix3::identity() * ratio + curvature * v * v.transpose();
    right_jacobian(&angle) * dphi_dv
}

/// IMU residual between two keyframe states and its error-state Jacobians.
pub fn imu_residual(
    p: &PreintegratedImu,
    prev: &KeyframeState,
    next: &KeyframeState,
    gravity: &GravityVector,
) -> ImuLinearization {
    let dt = p.dt_total;
    let g = gravity.vector();
    let ri_t = prev.orientation.to_rotation_matrix().into_inner().transpose();

    let (alpha, beta, gamma) = correct_for_bias_delta(p, &prev.accel_bias, &prev.gyro_bias);
    let alpha_pred =
        ri_t * (next.position - prev.position - prev.velocity * dt - 0.5 * g * dt * dt);
    let beta_pred = ri_t * (next.velocity - prev.velocity - g * dt);
    let gamma_pred = prev.orientation.inverse() * next.orientation;
    let err_rot = gamma_pred.inverse() * gamma;
    let r_rot = log_so3(&err_rot);

    let mut residual = Vector15::zeros();
    residual.fixed_rows_mut::<3>(POS).copy_from(&(alpha - alpha_pred));
    residual.fixed_rows_mut::<3>(VEL).copy_from(&(beta - beta_pred));
    residual.fixed_rows_mut::<3>(ROT).copy_from(&r_rot);
    residual
        .fixed_rows_mut::<3>(BA)
        .copy_from(&(next.accel_bias - prev.accel_bias));
    residual
        .fixed_rows_mut::<3>(BG)
        .copy_from(&(next.gyro_bias - prev.gyro_bias));

    let jr_inv = right_jacobian_inv(&r_rot);
    let i3 = Matrix3::identity();
    let dbg = prev.gyro_bias - p.lin_bg;
    let d_gamma_d_bg =
        jr_inv * small_rotation_jacobian(&(p.j_gamma_bg() * dbg)) * p.j_gamma_bg();

    let mut jp = Matrix15::zeros();
    jp.fixed_view_mut::<3, 3>(POS, POS).copy_from(&ri_t);
    jp.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(ri_t * dt));
    jp.fixed_view_mut::<3, 3>(POS, ROT).copy_from(&(-skew(&alpha_pred)));
    jp.fixed_view_mut::<3, 3>(POS, BA).copy_from(&p.j_alpha_ba());
    jp.fixed_view_mut::<3, 3>(POS, BG).copy_from(&p.j_alpha_bg());
    jp.fixed_view_mut::<3, 3>(VEL, VEL).copy_from(&ri_t);
    jp.fixed_view_mut::<3, 3>(VEL, ROT).copy_from(&(-skew(&beta_pred)));
    jp.fixed_view_mut::<3, 3>(VEL, BA).copy_from(&p.j_beta_ba());
    jp.fixed_view_mut::<3, 3>(VEL, BG).copy_from(&p.j_beta_bg());
    jp.fixed_view_mut::<3, 3>(ROT, ROT)
        .copy_from(&(jr_inv * gamma.to_rotation_matrix().into_inner().transpose()));
    jp.fixed_view_mut::<3, 3>(ROT, BG).copy_from(&d_gamma_d_bg);
    jp.fixed_view_mut::<3, 3>(BA, BA).copy_from(&(-i3));
    jp.fixed_view_mut::<3, 3>(BG, BG).copy_from(&(-i3));

    let mut jn = Matrix15::zeros();
    jn.fixed_view_mut::<3, 3>(POS, POS).copy_from(&(-ri_t));
    jn.fixed_view_mut::<3, 3>(VEL, VEL).copy_from(&(-ri_t));
    jn.fixed_view_mut::<3, 3>(ROT, ROT)
        .copy_from(&(-jr_inv * err_rot.to_rotation_matrix().into_inner().transpose()));
    jn.fixed_view_mut::<3, 3>(BA, BA).copy_from(&i3);
    jn.fixed_view_mut::<3, 3>(BG, BG).copy_from(&i3);

    ImuLinearization {
        residual,
        jac_prev: jp,
        jac_next: jn,
    }
}
