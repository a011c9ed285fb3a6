//! Exhaustive sliding-window evaluation of a sequence.
//!
//! The window advances one keyframe at a time; every position is refined
//! from the supplied initial guess and scored against ground truth.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dataio::DatasetBundle;
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_solve_time, evaluate};
use crate::solver::{Mode, ProblemConfig, Termination};
use crate::state::KeyframeState;
use crate::window::{extract_window, number_of_windows, refine_window, states_for_keyframes, DEFAULT_WINDOW_SIZE};

pub const CSV_HEADER: &str = "window_index,t_start_ns,ate_pos_m,ate_rot_deg,vel_rmse_mps,solve_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub window_index: usize,
    pub t_start_ns: i64,
    pub ate_pos_m: f64,
    pub ate_rot_deg: f64,
    pub vel_rmse_mps: f64,
    pub solve_ms: f64,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchmarkAverage {
    pub ate_pos_m: f64,
    pub ate_rot_deg: f64,
    pub vel_rmse_mps: f64,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
    pub average: BenchmarkAverage,
}

impl BenchmarkTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.window_index, r.t_start_ns, r.ate_pos_m, r.ate_rot_deg, r.vel_rmse_mps, r.solve_ms
            )
            .expect("writing to a String cannot fail");
        }
        let a = &self.average;
        writeln!(
            s,
            "Avg,,{},{},{},{}",
            a.ate_pos_m, a.ate_rot_deg, a.vel_rmse_mps, a.solve_ms
        )
        .expect("writing to a String cannot fail");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkOptions {
    pub mode: Mode,
    pub window_size: usize,
    /// Keep only this many tracks per window (see [`crate::window::Window::limit_tracks`]).
    pub max_tracks: Option<usize>,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Structureless,
            window_size: DEFAULT_WINDOW_SIZE,
            max_tracks: None,
        }
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n.max(1) as f64
}

/// Refines and scores every window position of the bundle.
pub fn run_benchmark(
    bundle: &DatasetBundle,
    initial: &[KeyframeState],
    truth: &[KeyframeState],
    config: &ProblemConfig,
    options: &BenchmarkOptions,
) -> Result<BenchmarkTable> {
    let window_size = options.window_size;
    let count = number_of_windows(bundle.keyframes.len(), window_size);
    if window_size < 3 || count == 0 {
        return Err(Error::InsufficientKeyframes {
            needed: window_size.max(3),
            got: bundle.keyframes.len(),
        });
    }
    let truth = states_for_keyframes(&bundle.keyframes, truth)?;
    let mut rows = Vec::with_capacity(count);
    for start in 0..count {
        let mut window = extract_window(bundle, initial, start, window_size)?;
        if let Some(n) = options.max_tracks {
            window.limit_tracks(n);
        }
        let solution = refine_window(&window, &bundle.calibration, config, options.mode)?;
        let errors = evaluate(&solution.states, &truth[start..start + window_size])?;
        rows.push(BenchmarkRow {
            window_index: start,
            t_start_ns: bundle.keyframes[start],
            ate_pos_m: errors.ate_position,
            ate_rot_deg: errors.ate_rotation,
            vel_rmse_mps: errors.velocity_rmse,
            solve_ms: solution.report.solve_time_ms,
            termination: solution.report.termination,
        });
    }
    let times: Vec<f64> = rows.iter().map(|r| r.solve_ms).collect();
    let average = BenchmarkAverage {
        ate_pos_m: mean(rows.iter().map(|r| r.ate_pos_m)),
        ate_rot_deg: mean(rows.iter().map(|r| r.ate_rot_deg)),
        vel_rmse_mps: mean(rows.iter().map(|r| r.vel_rmse_mps)),
        solve_ms: aggregate_solve_time(&times)?,
    };
    Ok(BenchmarkTable { rows, average })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{simulate, SimulationConfig};

    #[test]
    fn one_row_per_window_plus_average() {
        let mut cfg = SimulationConfig::default();
        cfg.trajectory = cfg.trajectory.with_keyframes(13);
        let data = simulate(&cfg).unwrap();
        let init = data.bundle.initial.clone().unwrap();
        let options = BenchmarkOptions {
            max_tracks: Some(50),
            ..BenchmarkOptions::default()
        };
        let table = run_benchmark(&data.bundle, &init, data.truth(), &ProblemConfig::default(), &options).unwrap();
        assert_eq!(table.rows.len(), 4);
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 6);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert!(csv.lines().last().unwrap().starts_with("Avg,,"));
        let mean_ms = table.rows.iter().map(|r| r.solve_ms).sum::<f64>() / 4.0;
        assert!((table.average.solve_ms - mean_ms).abs() < 1e-12);
    }
}
