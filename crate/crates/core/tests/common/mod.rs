#![allow(dead_code)]

use nalgebra::Vector3;
use svba_core::calibration::Calibration;
use svba_core::factors::FeatureTrack;
use svba_core::simulation::{simulate, PerturbationSpec, SimulatedDataset, SimulationConfig};
use svba_core::solver::{Mode, ProblemConfig, Solution};
use svba_core::state::KeyframeState;
use svba_core::window::{extract_window, refine_window, Window};

/// Default 10-keyframe sinusoid with exact measurements. The initial guess
/// is ground truth perturbed with the default magnitudes.
pub fn noiseless_dataset(seed: u64) -> SimulatedDataset {
    let cfg = SimulationConfig {
        seed,
        perturbation: Some(PerturbationSpec {
            seed,
            ..PerturbationSpec::default()
        }),
        ..SimulationConfig::default().noiseless()
    };
    simulate(&cfg).unwrap()
}

/// Same as [`noiseless_dataset`] but with datasheet IMU noise and 1 px pixel noise.
pub fn noisy_dataset(seed: u64) -> SimulatedDataset {
    let cfg = SimulationConfig {
        seed,
        perturbation: Some(PerturbationSpec {
            seed,
            ..PerturbationSpec::default()
        }),
        ..SimulationConfig::default()
    };
    simulate(&cfg).unwrap()
}

/// The whole dataset as one window, IMU factors linearized at `initial`.
pub fn full_window(data: &SimulatedDataset, initial: &[KeyframeState]) -> Window {
    extract_window(&data.bundle, initial, 0, data.bundle.keyframes.len()).unwrap()
}

pub fn initial(data: &SimulatedDataset) -> Vec<KeyframeState> {
    data.bundle.initial.clone().unwrap()
}

pub fn refine(window: &Window, calib: &Calibration, mode: Mode) -> Solution {
    refine_window(window, calib, &ProblemConfig::default(), mode).unwrap()
}

/// Tracks observed in every keyframe of the window, at most `n` of them.
pub fn full_length_tracks(window: &Window, n: usize) -> Vec<FeatureTrack> {
    window
        .tracks
        .iter()
        .filter(|t| t.len() == window.states.len())
        .take(n)
        .cloned()
        .collect()
}

/// Largest position and rotation (rad) difference between two state lists.
pub fn max_state_difference(a: &[KeyframeState], b: &[KeyframeState]) -> (f64, f64) {
    a.iter().zip(b).fold((0.0f64, 0.0f64), |(p, r), (x, y)| {
        let dp = (x.position - y.position).norm();
        let dr = (x.orientation.inverse() * y.orientation).angle();
        (p.max(dp), r.max(dr))
    })
}

pub fn rotate_all(states: &[KeyframeState], yaw: f64, translation: Vector3<f64>) -> Vec<KeyframeState> {
    let q = svba_core::geometry::yaw_rotation(yaw);
    states.iter().map(|s| s.transformed(&q, &translation)).collect()
}
