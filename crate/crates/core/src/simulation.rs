//! Synthetic trajectories, IMU streams, scenes and feature tracks.
//!
//! Ground-truth keyframe states are obtained by midpoint-integrating the
//! noise-free IMU samples from the analytic state at the first keyframe, so
//! noiseless preintegration reproduces them to rounding error.

use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::calibration::Calibration;
use crate::dataio::DatasetBundle;
use crate::error::{Error, Result};
use crate::factors::{landmark_in_camera, FeatureTrack, Observation, MIN_DEPTH_M};
use crate::geometry::{exp_so3, GravityVector, Quat};
use crate::preintegration::{ImuNoiseModel, ImuSample};
use crate::state::KeyframeState;

const NS_PER_S: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFamily {
    /// Forward motion with lateral and vertical sinusoids and bounded roll/pitch.
    Sinusoid3d,
    Circle,
    FigureEight,
    Static,
}

impl FromStr for TrajectoryFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid" | "sinusoid-3d" | "sinusoid3d" => Ok(Self::Sinusoid3d),
            "circle" => Ok(Self::Circle),
            "figure-eight" | "figure8" => Ok(Self::FigureEight),
            "static" => Ok(Self::Static),
            other => Err(Error::InvalidConfig(format!("unknown trajectory family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub family: TrajectoryFamily,
    /// m
    pub amplitude: f64,
    /// rad/s
    pub angular_rate: f64,
    /// Mean forward speed of the sinusoid family, m/s.
    pub forward_speed: f64,
    /// Time from the first to the last keyframe, s.
    pub duration_s: f64,
    pub imu_rate_hz: f64,
    pub keyframe_rate_hz: f64,
    /// Timestamp of the first keyframe.
    pub start_ns: i64,
    /// Extra IMU coverage before the first and after the last keyframe, s.
    pub imu_margin_s: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            family: TrajectoryFamily::Sinusoid3d,
            amplitude: 0.6,
            angular_rate: 1.0,
            forward_speed: 1.0,
            duration_s: 4.5,
            imu_rate_hz: 200.0,
            keyframe_rate_hz: 2.0,
            start_ns: 1_000_000_000,
            imu_margin_s: 0.1,
        }
    }
}

impl TrajectorySpec {
    /// Sets the duration so that exactly `n` keyframes are produced.
    pub fn with_keyframes(mut self, n: usize) -> Self {
        self.duration_s = n.saturating_sub(1) as f64 / self.keyframe_rate_hz;
        self
    }

    pub fn imu_period_ns(&self) -> i64 {
        (NS_PER_S / self.imu_rate_hz).round() as i64
    }

    pub fn keyframe_period_ns(&self) -> i64 {
        (NS_PER_S / self.keyframe_rate_hz).round() as i64
    }

    pub fn keyframe_count(&self) -> usize {
        (self.duration_s * self.keyframe_rate_hz + 1e-9).floor() as usize + 1
    }

    pub fn keyframe_timestamps(&self) -> Vec<i64> {
        let period = self.keyframe_period_ns();
        (0..self.keyframe_count())
            .map(|k| self.start_ns + k as i64 * period)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.imu_rate_hz, self.keyframe_rate_hz, self.duration_s];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rates and duration must be positive: {self:?}"
            )));
        }
        if !(self.amplitude >= 0.0
            && self.angular_rate.is_finite()
            && self.forward_speed >= 0.0
            && self.imu_margin_s >= 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "amplitude, forward speed and margin must be non-negative: {self:?}"
            )));
        }
        if self.imu_rate_hz < 10.0 * self.keyframe_rate_hz {
            return Err(Error::InvalidConfig(format!(
                "IMU rate {} Hz must be at least 10x the keyframe rate {} Hz",
                self.imu_rate_hz, self.keyframe_rate_hz
            )));
        }
        if self.keyframe_period_ns() % self.imu_period_ns() != 0 {
            return Err(Error::InvalidConfig(format!(
                "keyframe period {} ns is not a multiple of the IMU period {} ns",
                self.keyframe_period_ns(),
                self.imu_period_ns()
            )));
        }
        if self.keyframe_count() < 2 {
            return Err(Error::InvalidConfig("trajectory yields fewer than 2 keyframes".into()));
        }
        Ok(())
    }
}

/// Kinematic state of the analytic trajectory at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub orientation: Quat,
    /// Body-frame angular velocity.
    pub angular_velocity: Vector3<f64>,
}

/// Value and first two time derivatives of a scalar or vector signal.
struct Jet<T> {
    value: T,
    rate: T,
    accel: T,
}

/// Continuous-time sampler of a [`TrajectorySpec`].
#[derive(Debug, Clone, Copy)]
pub struct Trajectory {
    spec: TrajectorySpec,
}

impl Trajectory {
    pub fn new(spec: TrajectorySpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &TrajectorySpec {
        &self.spec
    }

    fn translation(&self, t: f64) -> Jet<Vector3<f64>> {
        let a = self.spec.amplitude;
        let w = self.spec.angular_rate;
        let (s1, c1) = (w * t).sin_cos();
        let (s2, c2) = (2.0 * w * t).sin_cos();
        let eight = Jet {
            value: Vector3::new(a * s1, 0.5 * a * s2, 0.0),
            rate: Vector3::new(a * w * c1, a * w * c2, 0.0),
            accel: Vector3::new(-a * w * w * s1, -2.0 * a * w * w * s2, 0.0),
        };
        match self.spec.family {
            TrajectoryFamily::FigureEight => eight,
            TrajectoryFamily::Sinusoid3d => {
                let v = self.spec.forward_speed;
                let (s3, c3) = (3.0 * w * t + 0.3).sin_cos();
                let h = 0.25 * a;
                Jet {
                    value: Vector3::new(v * t, a * s1, h * s3),
                    rate: Vector3::new(v, a * w * c1, 3.0 * h * w * c3),
                    accel: Vector3::new(0.0, -a * w * w * s1, -9.0 * h * w * w * s3),
                }
            }
            TrajectoryFamily::Circle => Jet {
                value: Vector3::new(a * c1, a * s1, 0.0),
                rate: Vector3::new(-a * w * s1, a * w * c1, 0.0),
                accel: Vector3::new(-a * w * w * c1, -a * w * w * s1, 0.0),
            },
            TrajectoryFamily::Static => Jet {
                value: Vector3::zeros(),
                rate: Vector3::zeros(),
                accel: Vector3::zeros(),
            },
        }
    }

    /// Roll and pitch with their rates.
    fn tilt(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        match self.spec.family {
            TrajectoryFamily::Sinusoid3d => {
                let w = self.spec.angular_rate;
                let (sr, cr) = (1.7 * w * t).sin_cos();
                let (sp, cp) = (2.3 * w * t + 0.4).sin_cos();
                ([0.15 * sr, 0.1 * sp], [0.15 * 1.7 * w * cr, 0.1 * 2.3 * w * cp])
            }
            _ => ([0.0; 2], [0.0; 2]),
        }
    }

    /// Samples the trajectory `t` seconds after the first keyframe.
    pub fn sample(&self, t: f64) -> TruthSample {
        let tr = self.translation(t);
        let ([roll, pitch], [droll, dpitch]) = self.tilt(t);
        let (vx, vy) = (tr.rate.x, tr.rate.y);
        let horizontal = vx * vx + vy * vy;
        // Yaw follows the horizontal heading.
        let (yaw, dyaw) = if horizontal > 1e-12 {
            (vy.atan2(vx), (vx * tr.accel.y - vy * tr.accel.x) / horizontal)
        } else {
            (0.0, 0.0)
        };
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let angular_velocity = Vector3::new(
            droll - dyaw * sp,
            dpitch * cr + dyaw * sr * cp,
            -dpitch * sr + dyaw * cr * cp,
        );
        TruthSample {
            position: tr.value,
            velocity: tr.rate,
            acceleration: tr.accel,
            orientation: Quat::from_euler_angles(roll, pitch, yaw),
            angular_velocity,
        }
    }

    /// Noise- and bias-free IMU reading at time `t` (seconds after the first keyframe).
    pub fn ideal_imu(&self, t: f64, gravity: &GravityVector) -> (Vector3<f64>, Vector3<f64>) {
        let s = self.sample(t);
        let specific_force = s.orientation.inverse() * (s.acceleration - gravity.vector());
        (s.angular_velocity, specific_force)
    }

    /// IMU timestamps covering the keyframe span plus the margin on both sides.
    pub fn imu_timestamps(&self) -> Vec<i64> {
        let period = self.spec.imu_period_ns();
        let margin = (self.spec.imu_margin_s * NS_PER_S / period as f64).ceil() as i64;
        let last_kf = *self.spec.keyframe_timestamps().last().unwrap_or(&self.spec.start_ns);
        let span = (last_kf - self.spec.start_ns) / period;
        (-margin..=span + margin)
            .map(|k| self.spec.start_ns + k * period)
            .collect()
    }

    fn seconds(&self, timestamp_ns: i64) -> f64 {
        (timestamp_ns - self.spec.start_ns) as f64 / NS_PER_S
    }
}

/// Constant sensor biases used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueBiases {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

impl Default for TrueBiases {
    fn default() -> Self {
        Self {
            accel: Vector3::new(0.03, -0.02, 0.05),
            gyro: Vector3::new(0.002, -0.001, 0.003),
        }
    }
}

impl TrueBiases {
    pub fn zero() -> Self {
        Self {
            accel: Vector3::zeros(),
            gyro: Vector3::zeros(),
        }
    }
}

fn normal_vector(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    let mut draw = || -> f64 { rng.sample(StandardNormal) };
    Vector3::new(draw(), draw(), draw()) * sigma
}

/// Simulated IMU readings: `a = Rᵀ(a_G − g) + b_a + n_a`, `ω = ω_B + b_g + n_g`.
/// `noise = None` gives exact readings.
pub fn synthesize_imu(
    trajectory: &Trajectory,
    gravity: &GravityVector,
    noise: Option<&ImuNoiseModel>,
    biases: &TrueBiases,
    seed: u64,
) -> Vec<ImuSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = trajectory.spec.imu_period_ns() as f64 / NS_PER_S;
    trajectory
        .imu_timestamps()
        .into_iter()
        .map(|ts| {
            let (gyro, accel) = trajectory.ideal_imu(trajectory.seconds(ts), gravity);
            let (ng, na) = match noise {
                Some(n) => (
                    normal_vector(&mut rng, n.gyro_noise_density / dt.sqrt()),
                    normal_vector(&mut rng, n.accel_noise_density / dt.sqrt()),
                ),
                None => (Vector3::zeros(), Vector3::zeros()),
            };
            ImuSample::new(ts, gyro + biases.gyro + ng, accel + biases.accel + na)
        })
        .collect()
}

/// Ground-truth keyframe states: the analytic state at the first keyframe
/// propagated through the ideal IMU samples with the midpoint rule.
pub fn generate_ground_truth(
    trajectory: &Trajectory,
    gravity: &GravityVector,
    biases: &TrueBiases,
) -> Vec<KeyframeState> {
    let spec = trajectory.spec;
    let keyframes = spec.keyframe_timestamps();
    let last = *keyframes.last().expect("validated spec has keyframes");
    let first = trajectory.sample(0.0);
    let g = gravity.vector();
    let make = |ts: i64, p: Vector3<f64>, v: Vector3<f64>, q: Quat| KeyframeState {
        timestamp_ns: ts,
        position: p,
        velocity: v,
        orientation: q,
        accel_bias: biases.accel,
        gyro_bias: biases.gyro,
    };

    let (mut p, mut v, mut q) = (first.position, first.velocity, first.orientation);
    let mut states = vec![make(spec.start_ns, p, v, q)];
    let stamps: Vec<i64> = trajectory
        .imu_timestamps()
        .into_iter()
        .filter(|&t| t >= spec.start_ns && t <= last)
        .collect();
    let mut prev = trajectory.ideal_imu(0.0, gravity);
    for pair in stamps.windows(2) {
        let dt = (pair[1] - pair[0]) as f64 / NS_PER_S;
        let next = trajectory.ideal_imu(trajectory.seconds(pair[1]), gravity);
        let q_next = Quat::new_normalize((q * exp_so3(&(0.5 * (prev.0 + next.0) * dt))).into_inner());
        let acc = 0.5 * (q * prev.1 + q_next * next.1) + g;
        p += v * dt + 0.5 * acc * dt * dt;
        v += acc * dt;
        q = q_next;
        prev = next;
        if keyframes.binary_search(&pair[1]).is_ok() {
            states.push(make(pair[1], p, v, q));
        }
    }
    states
}

/// Where landmarks are scattered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub landmark_count: usize,
    pub box_min: Vector3<f64>,
    pub box_max: Vector3<f64>,
    /// Bounds on the distance from a landmark to the nearest keyframe position, m.
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for SceneSpec {
    /// Landmarks ahead of the forward-moving sinusoid.
    fn default() -> Self {
        Self {
            landmark_count: 400,
            box_min: Vector3::new(8.0, -6.0, -3.0),
            box_max: Vector3::new(20.0, 6.0, 4.0),
            min_depth: 3.0,
            max_depth: 20.0,
        }
    }
}

impl SceneSpec {
    /// Landmarks all around a trajectory that stays near the origin.
    pub fn surrounding() -> Self {
        Self {
            landmark_count: 400,
            box_min: Vector3::new(-9.0, -9.0, -2.0),
            box_max: Vector3::new(9.0, 9.0, 3.0),
            min_depth: 3.0,
            max_depth: 12.0,
        }
    }

    /// A scene suited to the trajectory: for the sinusoid, a box ahead of the
    /// whole path with a constant landmark density; otherwise [`Self::surrounding`].
    pub fn for_trajectory(spec: &TrajectorySpec) -> Self {
        match spec.family {
            TrajectoryFamily::Sinusoid3d => {
                let base = Self::default();
                let reach = spec.forward_speed * spec.duration_s;
                let base_length = base.box_max.x - base.box_min.x;
                let length = base_length + reach - 4.5;
                let box_max = Vector3::new(base.box_min.x + length.max(base_length), base.box_max.y, base.box_max.z);
                let scale = (box_max.x - base.box_min.x) / base_length;
                Self {
                    landmark_count: (base.landmark_count as f64 * scale).round() as usize,
                    box_max,
                    ..base
                }
            }
            _ => Self::surrounding(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.landmark_count == 0 {
            return Err(Error::InvalidConfig("landmark count must be positive".into()));
        }
        if !(self.box_min.iter().zip(self.box_max.iter()).all(|(a, b)| a < b)) {
            return Err(Error::InvalidConfig("scene box is empty".into()));
        }
        if !(self.min_depth >= 0.0 && self.max_depth > self.min_depth) {
            return Err(Error::InvalidConfig(format!(
                "depth bounds must satisfy 0 <= min < max, got [{}, {}]",
                self.min_depth, self.max_depth
            )));
        }
        Ok(())
    }
}

/// Uniform landmarks in the scene box that respect the depth bounds.
pub fn generate_landmarks(
    scene: &SceneSpec,
    states: &[KeyframeState],
    seed: u64,
) -> Result<Vec<Vector3<f64>>> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(scene.landmark_count);
    let max_attempts = 1000 * scene.landmark_count;
    for _ in 0..max_attempts {
        if out.len() == scene.landmark_count {
            break;
        }
        let p = Vector3::from_fn(|i, _| rng.random_range(scene.box_min[i]..scene.box_max[i]));
        let nearest = states
            .iter()
            .map(|s| (s.position - p).norm())
            .fold(f64::INFINITY, f64::min);
        if nearest >= scene.min_depth && nearest <= scene.max_depth {
            out.push(p);
        }
    }
    if out.len() < scene.landmark_count {
        return Err(Error::InvalidConfig(format!(
            "could only place {} of {} landmarks within the depth bounds",
            out.len(),
            scene.landmark_count
        )));
    }
    Ok(out)
}

/// Projects every landmark into every keyframe, adds pixel noise and
/// back-projects to bearings. Observations outside the image or behind the
/// camera are skipped; tracks with fewer than two observations are dropped.
/// Track ids are landmark indices.
pub fn synthesize_tracks(
    states: &[KeyframeState],
    landmarks: &[Vector3<f64>],
    calib: &Calibration,
    pixel_sigma: f64,
    seed: u64,
) -> Result<Vec<FeatureTrack>> {
    if !(pixel_sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("pixel sigma must be non-negative, got {pixel_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, pixel_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (w, h) = (calib.image_width as f64, calib.image_height as f64);
    let mut tracks = Vec::new();
    for (id, lm) in landmarks.iter().enumerate() {
        let mut obs = Vec::new();
        for (k, s) in states.iter().enumerate() {
            let p_cam = landmark_in_camera(s, lm, &calib.extrinsics);
            if p_cam.z <= MIN_DEPTH_M {
                continue;
            }
            let Some(px) = calib.intrinsics.project(&p_cam) else {
                continue;
            };
            if !(px.x >= 0.0 && px.x < w && px.y >= 0.0 && px.y < h) {
                continue;
            }
            let noisy = if pixel_sigma > 0.0 {
                px + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                px
            };
            let Ok(bearing) = calib.intrinsics.back_project(&noisy) else {
                continue;
            };
            obs.push(Observation {
                keyframe: k,
                pixel: noisy,
                bearing,
            });
        }
        if obs.len() >= 2 {
            tracks.push(FeatureTrack::new(id as u64, obs)?);
        }
    }
    Ok(tracks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    /// m
    pub position_sigma: f64,
    /// rad, per tangent axis
    pub orientation_sigma: f64,
    /// m/s
    pub velocity_sigma: f64,
    pub accel_bias_sigma: f64,
    pub gyro_bias_sigma: f64,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            position_sigma: 0.05,
            orientation_sigma: 2f64.to_radians(),
            velocity_sigma: 0.1,
            accel_bias_sigma: 0.01,
            gyro_bias_sigma: 0.001,
            seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn zero(seed: u64) -> Self {
        Self {
            position_sigma: 0.0,
            orientation_sigma: 0.0,
            velocity_sigma: 0.0,
            accel_bias_sigma: 0.0,
            gyro_bias_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position_sigma,
            self.orientation_sigma,
            self.velocity_sigma,
            self.accel_bias_sigma,
            self.gyro_bias_sigma,
        ];
        if all.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("perturbation sigmas must be non-negative: {self:?}")))
        }
    }
}

/// Independent Gaussian perturbation of every keyframe state; orientation
/// is perturbed on the right by a Gaussian tangent vector.
pub fn perturb_states(states: &[KeyframeState], spec: &PerturbationSpec) -> Result<Vec<KeyframeState>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(states
        .iter()
        .map(|s| {
            let dp = normal_vector(&mut rng, spec.position_sigma);
            let dtheta = normal_vector(&mut rng, spec.orientation_sigma);
            let dv = normal_vector(&mut rng, spec.velocity_sigma);
            let dba = normal_vector(&mut rng, spec.accel_bias_sigma);
            let dbg = normal_vector(&mut rng, spec.gyro_bias_sigma);
            KeyframeState {
                timestamp_ns: s.timestamp_ns,
                position: s.position + dp,
                velocity: s.velocity + dv,
                orientation: if spec.orientation_sigma > 0.0 {
                    crate::geometry::boxplus(&s.orientation, &dtheta)
                } else {
                    s.orientation
                },
                accel_bias: s.accel_bias + dba,
                gyro_bias: s.gyro_bias + dbg,
            }
        })
        .collect())
}

/// Everything needed to produce one synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub trajectory: TrajectorySpec,
    /// `None` uses [`SceneSpec::for_trajectory`].
    pub scene: Option<SceneSpec>,
    pub calibration: Calibration,
    pub biases: TrueBiases,
    pub imu_noise: bool,
    pub pixel_sigma: f64,
    /// Perturbation used for the bundled initial guess; `None` omits it.
    pub perturbation: Option<PerturbationSpec>,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectorySpec::default(),
            scene: None,
            calibration: Calibration::default(),
            biases: TrueBiases::default(),
            imu_noise: true,
            pixel_sigma: 1.0,
            perturbation: Some(PerturbationSpec::default()),
            seed: 0,
        }
    }
}

impl SimulationConfig {
    /// Exact measurements, no initial guess.
    pub fn noiseless(mut self) -> Self {
        self.imu_noise = false;
        self.pixel_sigma = 0.0;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub bundle: DatasetBundle,
    pub landmarks: Vec<Vector3<f64>>,
    pub trajectory: Trajectory,
}

impl SimulatedDataset {
    pub fn truth(&self) -> &[KeyframeState] {
        self.bundle.groundtruth.as_deref().unwrap_or(&[])
    }
}

/// Runs the full generator. All randomness derives from `config.seed`
/// (and the perturbation's own seed).
pub fn simulate(config: &SimulationConfig) -> Result<SimulatedDataset> {
    config.calibration.noise.validate()?;
    let trajectory = Trajectory::new(config.trajectory)?;
    let gravity = config.calibration.gravity();
    let noise = config.imu_noise.then_some(&config.calibration.noise);
    let imu = synthesize_imu(&trajectory, &gravity, noise, &config.biases, config.seed);
    let truth = generate_ground_truth(&trajectory, &gravity, &config.biases);
    let scene = config
        .scene
        .unwrap_or_else(|| SceneSpec::for_trajectory(&config.trajectory));
    let landmarks = generate_landmarks(&scene, &truth, config.seed.wrapping_add(1))?;
    let tracks = synthesize_tracks(
        &truth,
        &landmarks,
        &config.calibration,
        config.pixel_sigma,
        config.seed.wrapping_add(2),
    )?;
    let initial = config
        .perturbation
        .as_ref()
        .map(|p| perturb_states(&truth, p))
        .transpose()?;
    Ok(SimulatedDataset {
        bundle: DatasetBundle {
            keyframes: truth.iter().map(|s| s.timestamp_ns).collect(),
            imu,
            tracks,
            calibration: config.calibration,
            groundtruth: Some(truth),
            initial,
        },
        landmarks,
        trajectory,
    })
}
