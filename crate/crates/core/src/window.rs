//! Cutting a sliding initialization window out of a sequence and refining it.

use crate::calibration::Calibration;
use crate::dataio::DatasetBundle;
use crate::error::{Error, Result};
use crate::factors::FeatureTrack;
use crate::preintegration::{preintegrate, samples_between, PreintegratedImu};
use crate::solver::{build_structure_based, build_structureless, solve, Mode, ProblemConfig, Solution};
use crate::state::KeyframeState;

pub const DEFAULT_WINDOW_SIZE: usize = 10;

/// One window's inputs: initial states, IMU factors linearized at the
/// initial biases, and the tracks restricted to the window.
#[derive(Debug, Clone)]
pub struct Window {
    /// Index of the first keyframe in the sequence.
    pub start: usize,
    pub states: Vec<KeyframeState>,
    pub preintegrations: Vec<PreintegratedImu>,
    /// Observation keyframe indices are local to the window.
    pub tracks: Vec<FeatureTrack>,
}

/// Cells per image axis used to spread a reduced track set over the image.
const SELECTION_GRID: usize = 4;

impl Window {
    /// Keeps `n` tracks spread over the image, in id order.
    ///
    /// Tracks are bucketed on a grid by the pixel of their first observation
    /// and taken round-robin across cells, longest first within a cell (ties
    /// by id). Taking only the globally longest tracks tends to keep distant
    /// points clustered around the direction of travel, which constrain the
    /// motion poorly.
    pub fn limit_tracks(&mut self, n: usize) {
        if self.tracks.len() <= n {
            return;
        }
        let first = |t: &FeatureTrack| t.observations[0].pixel;
        let (mut lo, mut hi) = (first(&self.tracks[0]), first(&self.tracks[0]));
        for t in &self.tracks {
            lo = lo.inf(&first(t));
            hi = hi.sup(&first(t));
        }
        let cell_of = |t: &FeatureTrack| {
            let p = first(t);
            let axis = |v: f64, a: f64, b: f64| {
                let u = if b > a { (v - a) / (b - a) } else { 0.0 };
                ((u * SELECTION_GRID as f64) as usize).min(SELECTION_GRID - 1)
            };
            axis(p.y, lo.y, hi.y) * SELECTION_GRID + axis(p.x, lo.x, hi.x)
        };
        let mut cells = vec![Vec::new(); SELECTION_GRID * SELECTION_GRID];
        for (i, t) in self.tracks.iter().enumerate() {
            cells[cell_of(t)].push(i);
        }
        for cell in &mut cells {
            cell.sort_by_key(|&i| (std::cmp::Reverse(self.tracks[i].len()), self.tracks[i].id));
            cell.reverse();
        }
        let mut chosen = Vec::with_capacity(n);
        while chosen.len() < n {
            for cell in &mut cells {
                if chosen.len() == n {
                    break;
                }
                if let Some(i) = cell.pop() {
                    chosen.push(i);
                }
            }
        }
        chosen.sort_unstable();
        self.tracks = chosen.into_iter().map(|i| self.tracks[i].clone()).collect();
    }
}

/// Initial states for the bundle's keyframes, matched by timestamp.
pub fn states_for_keyframes(keyframes: &[i64], states: &[KeyframeState]) -> Result<Vec<KeyframeState>> {
    keyframes
        .iter()
        .map(|&ts| {
            states
                .binary_search_by_key(&ts, |s| s.timestamp_ns)
                .map(|i| states[i])
                .map_err(|_| Error::Association { timestamp_ns: ts })
        })
        .collect()
}

pub fn number_of_windows(keyframes: usize, size: usize) -> usize {
    (keyframes + 1).saturating_sub(size)
}

pub fn extract_window(
    bundle: &DatasetBundle,
    initial: &[KeyframeState],
    start: usize,
    size: usize,
) -> Result<Window> {
    if size < 3 {
        return Err(Error::InvalidConfig(format!("window size must be at least 3, got {size}")));
    }
    let end = start + size;
    if end > bundle.keyframes.len() {
        return Err(Error::InsufficientKeyframes {
            needed: end,
            got: bundle.keyframes.len(),
        });
    }
    let states = states_for_keyframes(&bundle.keyframes[start..end], initial)?;
    let noise = &bundle.calibration.noise;
    let preintegrations = states
        .windows(2)
        .map(|pair| {
            let seg = samples_between(&bundle.imu, pair[0].timestamp_ns, pair[1].timestamp_ns)?;
            preintegrate(&seg, pair[0].accel_bias, pair[0].gyro_bias, noise)
        })
        .collect::<Result<Vec<_>>>()?;
    let tracks = bundle
        .tracks
        .iter()
        .filter_map(|t| {
            let obs: Vec<_> = t
                .observations
                .iter()
                .filter(|o| (start..end).contains(&o.keyframe))
                .map(|o| crate::factors::Observation {
                    keyframe: o.keyframe - start,
                    ..*o
                })
                .collect();
            (obs.len() >= 2).then_some(FeatureTrack {
                id: t.id,
                observations: obs,
            })
        })
        .collect();
    Ok(Window {
        start,
        states,
        preintegrations,
        tracks,
    })
}

/// Builds the problem for `mode` from a window and solves it.
pub fn refine_window(window: &Window, calib: &Calibration, config: &ProblemConfig, mode: Mode) -> Result<Solution> {
    let build = match mode {
        Mode::Structureless => build_structureless,
        Mode::StructureBased => build_structure_based,
    };
    let problem = build(
        window.states.clone(),
        window.preintegrations.clone(),
        &window.tracks,
        calib,
        config,
    )?;
    solve(&problem)
}
