mod common;

use common::*;
use nalgebra::{DVector, Vector2, Vector3};
use svba_core::evaluation::align_posyaw;
use svba_core::factors::{FeatureTrack, Observation};
use svba_core::geometry::{imu_pose_to_camera_pose, yaw_of};
use svba_core::solver::{
    build_structure_based, build_structureless, solve, GaugePolicy, InitializationProblem, Mode, ProblemConfig,
    Termination,
};
use svba_core::state::KeyframeState;
use svba_core::window::Window;
use svba_core::Error;

fn structureless(w: &Window, tracks: &[FeatureTrack], calib: &svba_core::calibration::Calibration, config: &ProblemConfig) -> InitializationProblem {
    build_structureless(w.states.clone(), w.preintegrations.clone(), tracks, calib, config).unwrap()
}

fn aligned(estimate: &[KeyframeState], truth: &[KeyframeState]) -> Vec<KeyframeState> {
    let a = align_posyaw(estimate, truth).unwrap();
    estimate.iter().map(|s| a.apply(s)).collect()
}

#[test]
fn factor_and_dimension_counts() {
    let data = noiseless_dataset(0);
    let calib = data.bundle.calibration;
    let w = full_window(&data, data.truth());
    let tracks = full_length_tracks(&w, 50);
    assert_eq!(tracks.len(), 50);
    let config = ProblemConfig::default();
    let p = structureless(&w, &tracks, &calib, &config);
    assert_eq!(p.keyframe_count(), 10);
    assert_eq!(p.imu_factor_count(), 9);
    assert_eq!(p.visual_factor_count(), 2250);
    assert_eq!(p.error_state_dim(), 150);
    assert!(p.landmarks.is_empty());
    let q = build_structure_based(w.states.clone(), w.preintegrations.clone(), &tracks, &calib, &config).unwrap();
    assert_eq!(q.landmarks.len(), 50);
    assert_eq!(q.error_state_dim(), 300);
    assert!(q.dropped_tracks.is_empty());
    let none = build_structureless(w.states.clone(), w.preintegrations.clone(), &[], &calib, &config);
    assert!(matches!(none, Err(Error::NoUsableTracks)));
    let short = build_structureless(w.states[..2].to_vec(), w.preintegrations[..1].to_vec(), &tracks, &calib, &config);
    assert!(matches!(short, Err(Error::InsufficientKeyframes { .. })));
}

#[test]
fn ground_truth_is_a_fixed_point() {
    let data = noiseless_dataset(1);
    let calib = data.bundle.calibration;
    let w = full_window(&data, data.truth());
    for mode in [Mode::Structureless, Mode::StructureBased] {
        let s = refine(&w, &calib, mode);
        assert!(s.report.initial_cost <= 1e-16, "{mode:?} cost {}", s.report.initial_cost);
        assert!(s.report.final_cost <= 1e-16);
        assert!(s.report.iterations <= 2, "{mode:?} took {}", s.report.iterations);
    }
}

#[test]
fn perturbed_start_recovers_truth() {
    for seed in 0..3 {
        let data = noiseless_dataset(seed);
        let init = initial(&data);
        let w = full_window(&data, &init);
        let s = refine(&w, &data.bundle.calibration, Mode::Structureless);
        let (dp, dr) = max_state_difference(&aligned(&s.states, data.truth()), data.truth());
        assert!(dp < 1e-4 && dr < 1e-4, "seed {seed}: {dp} m, {dr} rad");
        let fixed = &s.states[0];
        assert_eq!(fixed.position, init[0].position);
        assert!((yaw_of(&fixed.orientation) - yaw_of(&init[0].orientation)).abs() < 1e-12);
    }
}

#[test]
fn cost_trace_never_increases() {
    for seed in 0..3 {
        let data = noisy_dataset(seed);
        let mut w = full_window(&data, &initial(&data));
        w.limit_tracks(50);
        for mode in [Mode::Structureless, Mode::StructureBased] {
            let s = refine(&w, &data.bundle.calibration, mode);
            let trace = &s.report.cost_trace;
            assert_eq!(trace[0], s.report.initial_cost);
            assert_eq!(*trace.last().unwrap(), s.report.final_cost);
            assert!(trace.windows(2).all(|p| p[1] <= p[0]));
            assert!(s.report.final_cost < s.report.initial_cost);
        }
    }
}

#[test]
fn iteration_cap_is_reported() {
    let data = noisy_dataset(4);
    let w = full_window(&data, &initial(&data));
    let mut config = ProblemConfig::default();
    config.settings.max_iterations = 1;
    let s = solve(&structureless(&w, &w.tracks, &data.bundle.calibration, &config)).unwrap();
    assert_eq!(s.report.iterations, 1);
    assert_eq!(s.report.termination, Termination::MaxIterations);
}

#[test]
fn objective_is_invariant_under_yaw_and_translation() {
    let data = noisy_dataset(5);
    let calib = data.bundle.calibration;
    let w = full_window(&data, &initial(&data));
    let p = structureless(&w, &w.tracks, &calib, &ProblemConfig::default());
    let base = p.initial_cost();
    for (yaw, t) in [(0.7, Vector3::new(1.0, -2.0, 0.5)), (-2.9, Vector3::new(-30.0, 4.0, -7.0))] {
        let moved = rotate_all(&w.states, yaw, t);
        let c = p.cost(&moved, &[]);
        assert!((c - base).abs() <= 1e-10 * base.max(1.0), "{c} vs {base}");
    }
}

#[test]
fn solving_a_transformed_problem_gives_the_transformed_solution() {
    let data = noisy_dataset(6);
    let calib = data.bundle.calibration;
    let w = full_window(&data, &initial(&data));
    let (yaw, t) = (1.1, Vector3::new(3.0, -1.0, 2.0));
    let mut moved = w.clone();
    moved.states = rotate_all(&w.states, yaw, t);
    let a = refine(&w, &calib, Mode::Structureless);
    let b = refine(&moved, &calib, Mode::Structureless);
    assert!((a.report.final_cost - b.report.final_cost).abs() <= 1e-6 * a.report.final_cost);
    let (dp, dr) = max_state_difference(&rotate_all(&a.states, yaw, t), &b.states);
    assert!(dp < 1e-6 && dr < 1e-6, "{dp} {dr}");
}

fn finite_difference_gradient(p: &InitializationProblem) -> DVector<f64> {
    let n = p.error_state_dim();
    let h = 1e-6;
    DVector::from_fn(n, |i, _| {
        let mut dx = DVector::zeros(n);
        dx[i] = h;
        let (sp, lp) = p.retract(&p.states, &p.landmarks, &dx);
        dx[i] = -h;
        let (sm, lm) = p.retract(&p.states, &p.landmarks, &dx);
        (p.cost(&sp, &lp) - p.cost(&sm, &lm)) / (2.0 * h)
    })
}

#[test]
fn gradient_matches_finite_differences() {
    let data = noisy_dataset(7);
    let calib = data.bundle.calibration;
    let mut w = full_window(&data, &initial(&data));
    w.limit_tracks(30);
    let config = ProblemConfig {
        gauge: GaugePolicy::Free,
        ..ProblemConfig::default()
    };
    let problems = [
        structureless(&w, &w.tracks, &calib, &config),
        build_structure_based(w.states.clone(), w.preintegrations.clone(), &w.tracks, &calib, &config).unwrap(),
    ];
    for p in &problems {
        let analytic = p.linearize(&p.states, &p.landmarks).gradient * 2.0;
        let numeric = finite_difference_gradient(p);
        let rel = (&analytic - &numeric).norm() / numeric.norm();
        assert!(rel < 1e-4, "relative gradient error {rel}");
    }
}

#[test]
fn structureless_and_structure_based_agree_on_noiseless_data() {
    for seed in 10..13 {
        let data = noiseless_dataset(seed);
        let calib = data.bundle.calibration;
        let mut w = full_window(&data, &initial(&data));
        w.limit_tracks(50);
        let a = refine(&w, &calib, Mode::Structureless);
        let b = refine(&w, &calib, Mode::StructureBased);
        let truth = data.truth();
        let (dp, dr) = max_state_difference(&aligned(&a.states, truth), &aligned(&b.states, truth));
        assert!(dp < 1e-5 && dr < 1e-5, "seed {seed}: {dp} m, {dr} rad");
    }
}

/// Midpoint of the shortest segment between the first and last rays of a track.
fn two_view_midpoint(track: &FeatureTrack, states: &[KeyframeState], calib: &svba_core::calibration::Calibration) -> Vector3<f64> {
    let ray = |o: &Observation| {
        let cam = imu_pose_to_camera_pose(&states[o.keyframe].pose(), &calib.extrinsics);
        (cam.position, (cam.rotation * o.bearing).normalize())
    };
    let (c1, d1) = ray(&track.observations[0]);
    let (c2, d2) = ray(track.observations.last().unwrap());
    let w0 = c1 - c2;
    let (b, d, e) = (d1.dot(&d2), d1.dot(&w0), d2.dot(&w0));
    let denom = 1.0 - b * b;
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;
    0.5 * ((c1 + d1 * s) + (c2 + d2 * t))
}

#[test]
fn triangulated_landmarks_match_truth_and_midpoint_oracle() {
    let data = noiseless_dataset(2);
    let calib = data.bundle.calibration;
    let w = full_window(&data, data.truth());
    let p = build_structure_based(w.states.clone(), w.preintegrations.clone(), &w.tracks, &calib, &ProblemConfig::default())
        .unwrap();
    let kept: Vec<&FeatureTrack> = w.tracks.iter().filter(|t| !p.dropped_tracks.contains(&t.id)).collect();
    assert_eq!(kept.len(), p.landmarks.len());
    for (track, landmark) in kept.iter().zip(&p.landmarks) {
        let truth = data.landmarks[track.id as usize];
        assert!((landmark.position - truth).norm() < 1e-6);
        let oracle = two_view_midpoint(track, &w.states, &calib);
        assert!((landmark.position - oracle).norm() < 1e-6);
    }
}

#[test]
fn track_behind_the_cameras_is_dropped() {
    let data = noiseless_dataset(3);
    let calib = data.bundle.calibration;
    let w = full_window(&data, data.truth());
    // A point behind keyframes 0 and 1: its rays pass through the camera
    // centres, so the closest point to them lies behind both cameras.
    let cam0 = imu_pose_to_camera_pose(&w.states[0].pose(), &calib.extrinsics);
    let behind = cam0.position + cam0.rotation * Vector3::new(0.3, -0.2, -5.0);
    let observations = (0..2)
        .map(|k| {
            let cam = imu_pose_to_camera_pose(&w.states[k].pose(), &calib.extrinsics);
            let pc = cam.rotation.inverse() * (behind - cam.position);
            let xn = Vector2::new(pc.x / pc.z, pc.y / pc.z);
            Observation {
                keyframe: k,
                pixel: calib.intrinsics.normalized_to_pixel(&calib.intrinsics.distort(&xn)),
                bearing: Vector3::new(xn.x, xn.y, 1.0),
            }
        })
        .collect();
    let ghost = FeatureTrack::new(9_999_999, observations).unwrap();
    let mut tracks = full_length_tracks(&w, 20);
    tracks.push(ghost);
    let p = build_structure_based(w.states.clone(), w.preintegrations.clone(), &tracks, &calib, &ProblemConfig::default())
        .unwrap();
    assert_eq!(p.dropped_tracks, vec![9_999_999]);
    assert_eq!(p.landmarks.len(), 20);
    let s = solve(&p).unwrap();
    assert_eq!(s.report.dropped_tracks, vec![9_999_999]);
    let only_ghost = build_structure_based(
        w.states.clone(),
        w.preintegrations.clone(),
        &tracks[20..],
        &calib,
        &ProblemConfig::default(),
    );
    assert!(matches!(only_ghost, Err(Error::AllTracksDropped { dropped: 1 })));
}
