use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector2, Vector3};

use super::triangulation::triangulate_track;
use crate::calibration::Calibration;
use crate::error::{Error, Result};
use crate::factors::{
    build_epipolar_factors, epipolar_residual, huber_weight, reprojection_residual, EpipolarFactor,
    FeatureTrack, Landmark, Pairing, RobustLoss,
};
use crate::geometry::{CameraIntrinsics, Extrinsics, GravityVector};
use crate::preintegration::{imu_residual, PreintegratedImu};
use crate::state::{KeyframeState, ERROR_STATE_DIM, POS, ROT};

/// Which degrees of freedom are held fixed to remove the 4-DoF gauge
/// (global translation and yaw) of a gravity-aligned problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaugePolicy {
    /// First keyframe position and yaw are constants; its roll and pitch stay free.
    #[default]
    FixFirstPositionYaw,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_increase: f64,
    pub lambda_decrease: f64,
    /// Damping beyond which the normal equations are declared unsolvable.
    pub max_lambda: f64,
    pub relative_cost_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Relative step size below which the iterate is considered stationary.
    pub parameter_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            initial_lambda: 1e-4,
            lambda_increase: 10.0,
            lambda_decrease: 0.5,
            max_lambda: 1e16,
            relative_cost_tolerance: 1e-8,
            gradient_tolerance: 1e-10,
            parameter_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConfig {
    pub pairing: Pairing,
    /// Epipolar residual standard deviation; `None` means 1.5 / mean focal length.
    pub epipolar_sigma: Option<f64>,
    /// Reprojection standard deviation in pixels.
    pub pixel_sigma: f64,
    pub loss: RobustLoss,
    pub gauge: GaugePolicy,
    pub settings: SolverSettings,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            pairing: Pairing::AllPairs,
            epipolar_sigma: None,
            pixel_sigma: 1.0,
            loss: RobustLoss::default(),
            gauge: GaugePolicy::default(),
            settings: SolverSettings::default(),
        }
    }
}

impl ProblemConfig {
    pub fn epipolar_sigma_for(&self, intr: &CameraIntrinsics) -> f64 {
        self.epipolar_sigma.unwrap_or(1.5 / intr.mean_focal())
    }

    fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if let Some(s) = self.epipolar_sigma {
            if !(s > 0.0) {
                return Err(Error::InvalidConfig(format!("epipolar sigma must be positive, got {s}")));
            }
        }
        if !(self.pixel_sigma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "pixel sigma must be positive, got {}",
                self.pixel_sigma
            )));
        }
        Ok(())
    }
}

/// A pixel observation of landmark `landmark` in keyframe `keyframe`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionObservation {
    pub keyframe: usize,
    pub landmark: usize,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VisualTerms {
    Epipolar(Vec<EpipolarFactor>),
    Reprojection(Vec<ReprojectionObservation>),
}

/// One window's refinement problem: initial keyframe states (and landmarks,
/// for the landmark-based variant) plus every factor linking them.
#[derive(Debug, Clone)]
pub struct InitializationProblem {
    pub states: Vec<KeyframeState>,
    pub landmarks: Vec<Landmark>,
    pub preintegrations: Vec<PreintegratedImu>,
    pub visual: VisualTerms,
    /// Ids of tracks that could not be triangulated (landmark-based only).
    pub dropped_tracks: Vec<u64>,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: Extrinsics,
    pub gravity: GravityVector,
    pub pixel_sigma: f64,
    pub loss: RobustLoss,
    pub gauge: GaugePolicy,
    pub settings: SolverSettings,
}

/// Gauss-Newton quantities at one iterate, in the full error-state ordering
/// `[keyframe 0 .. keyframe N, landmark 0 .. landmark M-1]`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub cost: f64,
    /// `Jᵀ W J`
    pub hessian: DMatrix<f64>,
    /// `Jᵀ W r`; the cost gradient is twice this.
    pub gradient: DVector<f64>,
    pub active_visual_factors: usize,
}

fn validate_common(
    states: &[KeyframeState],
    preints: &[PreintegratedImu],
    tracks: &[FeatureTrack],
) -> Result<()> {
    if states.len() < 3 {
        return Err(Error::InsufficientKeyframes {
            needed: 3,
            got: states.len(),
        });
    }
    if preints.len() + 1 != states.len() {
        return Err(Error::InvalidProblem(format!(
            "{} keyframes need {} IMU factors, got {}",
            states.len(),
            states.len() - 1,
            preints.len()
        )));
    }
    for (k, p) in preints.iter().enumerate() {
        if p.start_ns != states[k].timestamp_ns || p.end_ns != states[k + 1].timestamp_ns {
            return Err(Error::InvalidProblem(format!(
                "IMU factor {k} spans [{}, {}] ns but keyframes are at {} and {} ns",
                p.start_ns,
                p.end_ns,
                states[k].timestamp_ns,
                states[k + 1].timestamp_ns
            )));
        }
    }
    for t in tracks {
        if let Some(o) = t.observations.iter().find(|o| o.keyframe >= states.len()) {
            return Err(Error::InvalidProblem(format!(
                "track {} references keyframe {} of {}",
                t.id,
                o.keyframe,
                states.len()
            )));
        }
    }
    if !tracks.iter().any(|t| t.len() >= 2) {
        return Err(Error::NoUsableTracks);
    }
    Ok(())
}

/// Assembles the structureless problem: IMU factors between consecutive
/// keyframes plus epipolar factors for every co-observing keyframe pair.
pub fn build_structureless(
    states: Vec<KeyframeState>,
    preints: Vec<PreintegratedImu>,
    tracks: &[FeatureTrack],
    calib: &Calibration,
    config: &ProblemConfig,
) -> Result<InitializationProblem> {
    config.validate()?;
    validate_common(&states, &preints, tracks)?;
    let sigma = config.epipolar_sigma_for(&calib.intrinsics);
    let factors = build_epipolar_factors(tracks, config.pairing, sigma);
    Ok(InitializationProblem {
        states,
        landmarks: Vec::new(),
        preintegrations: preints,
        visual: VisualTerms::Epipolar(factors),
        dropped_tracks: Vec::new(),
        intrinsics: calib.intrinsics,
        extrinsics: calib.extrinsics,
        gravity: calib.gravity(),
        pixel_sigma: config.pixel_sigma,
        loss: config.loss,
        gauge: config.gauge,
        settings: config.settings,
    })
}

/// Assembles the landmark-based problem. Each track is triangulated from the
/// initial states; tracks that fail are dropped and listed in
/// `dropped_tracks`.
pub fn build_structure_based(
    states: Vec<KeyframeState>,
    preints: Vec<PreintegratedImu>,
    tracks: &[FeatureTrack],
    calib: &Calibration,
    config: &ProblemConfig,
) -> Result<InitializationProblem> {
    config.validate()?;
    validate_common(&states, &preints, tracks)?;
    let mut landmarks = Vec::new();
    let mut observations = Vec::new();
    let mut dropped = Vec::new();
    for track in tracks.iter().filter(|t| t.len() >= 2) {
        match triangulate_track(track, &states, &calib.extrinsics) {
            Some(position) => {
                let index = landmarks.len();
                landmarks.push(Landmark { position });
                observations.extend(track.observations.iter().map(|o| ReprojectionObservation {
                    keyframe: o.keyframe,
                    landmark: index,
                    pixel: o.pixel,
                }));
            }
            None => dropped.push(track.id),
        }
    }
    if landmarks.is_empty() {
        return Err(Error::AllTracksDropped {
            dropped: dropped.len(),
        });
    }
    Ok(InitializationProblem {
        states,
        landmarks,
        preintegrations: preints,
        visual: VisualTerms::Reprojection(observations),
        dropped_tracks: dropped,
        intrinsics: calib.intrinsics,
        extrinsics: calib.extrinsics,
        gravity: calib.gravity(),
        pixel_sigma: config.pixel_sigma,
        loss: config.loss,
        gauge: config.gauge,
        settings: config.settings,
    })
}

/// Adds `w · Aᵀ B` style contributions of one visual factor whose Jacobian
/// is split into 3-column blocks at the given error-state offsets.
fn scatter<const R: usize>(
    hessian: &mut DMatrix<f64>,
    gradient: &mut DVector<f64>,
    offsets: &[usize],
    blocks: &[SMatrix<f64, R, 3>],
    residual: &SVector<f64, R>,
    weight: f64,
) {
    for (a, ja) in offsets.iter().zip(blocks) {
        let ga = ja.transpose() * residual * weight;
        let mut g = gradient.fixed_rows_mut::<3>(*a);
        g += ga;
        for (b, jb) in offsets.iter().zip(blocks) {
            let hab: Matrix3<f64> = ja.transpose() * jb * weight;
            let mut h = hessian.fixed_view_mut::<3, 3>(*a, *b);
            h += hab;
        }
    }
}

impl InitializationProblem {
    pub fn keyframe_count(&self) -> usize {
        self.states.len()
    }

    pub fn imu_factor_count(&self) -> usize {
        self.preintegrations.len()
    }

    pub fn visual_factor_count(&self) -> usize {
        match &self.visual {
            VisualTerms::Epipolar(f) => f.len(),
            VisualTerms::Reprojection(o) => o.len(),
        }
    }

    pub fn error_state_dim(&self) -> usize {
        ERROR_STATE_DIM * self.states.len() + 3 * self.landmarks.len()
    }

    /// Returns the problem with the first keyframe's position and yaw held fixed.
    pub fn with_gauge_fix(mut self) -> Self {
        self.gauge = GaugePolicy::FixFirstPositionYaw;
        self
    }

    fn landmark_offset(&self, index: usize) -> usize {
        ERROR_STATE_DIM * self.states.len() + 3 * index
    }

    /// Objective at the problem's own initial values.
    pub fn initial_cost(&self) -> f64 {
        self.cost(&self.states, &self.landmarks)
    }

    /// `Σ ‖r_I‖²_Σ + Σ ρ(‖r_V‖²_Σ)`. Degenerate visual factors contribute nothing.
    pub fn cost(&self, states: &[KeyframeState], landmarks: &[Landmark]) -> f64 {
        let mut cost = 0.0;
        for (k, p) in self.preintegrations.iter().enumerate() {
            let r = imu_residual(p, &states[k], &states[k + 1], &self.gravity).residual;
            cost += (p.sqrt_information * r).norm_squared();
        }
        match &self.visual {
            VisualTerms::Epipolar(factors) => {
                for f in factors {
                    if let Some(lin) = epipolar_residual(&states[f.i], &states[f.j], f, &self.extrinsics) {
                        cost += self.loss.cost((lin.residual / f.sigma).powi(2));
                    }
                }
            }
            VisualTerms::Reprojection(obs) => {
                for o in obs {
                    if let Some(lin) = reprojection_residual(
                        &states[o.keyframe],
                        &landmarks[o.landmark],
                        &o.pixel,
                        &self.intrinsics,
                        &self.extrinsics,
                    ) {
                        cost += self.loss.cost((lin.residual / self.pixel_sigma).norm_squared());
                    }
                }
            }
        }
        cost
    }

    /// Builds the dense normal equations at the given iterate. Degenerate
    /// visual factors are re-gated on every call.
    pub fn linearize(&self, states: &[KeyframeState], landmarks: &[Landmark]) -> Linearization {
        let dim = ERROR_STATE_DIM * states.len() + 3 * landmarks.len();
        let mut hessian = DMatrix::zeros(dim, dim);
        let mut gradient = DVector::zeros(dim);
        let mut cost = 0.0;

        for (k, p) in self.preintegrations.iter().enumerate() {
            let mut lin = imu_residual(p, &states[k], &states[k + 1], &self.gravity);
            p.whiten(&mut lin);
            cost += lin.residual.norm_squared();
            let blocks = [(k * ERROR_STATE_DIM, &lin.jac_prev), ((k + 1) * ERROR_STATE_DIM, &lin.jac_next)];
            for (a, ja) in blocks {
                let mut g = gradient.fixed_rows_mut::<ERROR_STATE_DIM>(a);
                g += ja.transpose() * lin.residual;
                for (b, jb) in blocks {
                    let mut h = hessian.fixed_view_mut::<ERROR_STATE_DIM, ERROR_STATE_DIM>(a, b);
                    h += ja.transpose() * jb;
                }
            }
        }

        let mut active = 0;
        match &self.visual {
            VisualTerms::Epipolar(factors) => {
                for f in factors {
                    let Some(lin) = epipolar_residual(&states[f.i], &states[f.j], f, &self.extrinsics) else {
                        continue;
                    };
                    active += 1;
                    let r = lin.residual / f.sigma;
                    cost += self.loss.cost(r * r);
                    let w = huber_weight(r.abs(), &self.loss);
                    let inv = 1.0 / f.sigma;
                    let offsets = [
                        f.i * ERROR_STATE_DIM + POS,
                        f.i * ERROR_STATE_DIM + ROT,
                        f.j * ERROR_STATE_DIM + POS,
                        f.j * ERROR_STATE_DIM + ROT,
                    ];
                    let blocks = [lin.d_pos_i * inv, lin.d_rot_i * inv, lin.d_pos_j * inv, lin.d_rot_j * inv];
                    scatter(&mut hessian, &mut gradient, &offsets, &blocks, &SVector::<f64, 1>::new(r), w);
                }
            }
            VisualTerms::Reprojection(obs) => {
                for o in obs {
                    let Some(lin) = reprojection_residual(
                        &states[o.keyframe],
                        &landmarks[o.landmark],
                        &o.pixel,
                        &self.intrinsics,
                        &self.extrinsics,
                    ) else {
                        continue;
                    };
                    active += 1;
                    let inv = 1.0 / self.pixel_sigma;
                    let r = lin.residual * inv;
                    let s = r.norm_squared();
                    cost += self.loss.cost(s);
                    let w = huber_weight(s.sqrt(), &self.loss);
                    let offsets = [
                        o.keyframe * ERROR_STATE_DIM + POS,
                        o.keyframe * ERROR_STATE_DIM + ROT,
                        self.landmark_offset(o.landmark),
                    ];
                    let blocks = [lin.d_pos * inv, lin.d_rot * inv, lin.d_landmark * inv];
                    scatter(&mut hessian, &mut gradient, &offsets, &blocks, &r, w);
                }
            }
        }

        Linearization {
            cost,
            hessian,
            gradient,
            active_visual_factors: active,
        }
    }

    /// Plain manifold update of every variable by a full-dimension increment.
    pub fn retract(
        &self,
        states: &[KeyframeState],
        landmarks: &[Landmark],
        dx: &DVector<f64>,
    ) -> (Vec<KeyframeState>, Vec<Landmark>) {
        let new_states = states
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let d = dx.fixed_rows::<ERROR_STATE_DIM>(k * ERROR_STATE_DIM).into_owned();
                s.boxplus(&d)
            })
            .collect();
        let base = ERROR_STATE_DIM * states.len();
        let new_landmarks = landmarks
            .iter()
            .enumerate()
            .map(|(l, lm)| Landmark {
                position: lm.position + dx.fixed_rows::<3>(base + 3 * l),
            })
            .collect();
        (new_states, new_landmarks)
    }

    /// Positions of the current landmarks (empty for the structureless problem).
    pub fn landmark_positions(&self) -> Vec<Vector3<f64>> {
        self.landmarks.iter().map(|l| l.position).collect()
    }
}
