//! Visual factors: the two-view epipolar constraint used by the
//! structureless problem, the reprojection residual used by the
//! landmark-based reference problem, and Huber robustification.

mod epipolar;
mod reprojection;

pub use epipolar::{
    epipolar_residual, epipolar_residual_with, normalization_jacobian, EpipolarLinearization,
    MIN_BASELINE_M,
};
pub use reprojection::{landmark_in_camera, reprojection_residual, ReprojectionLinearization, MIN_DEPTH_M};

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};

pub const DEFAULT_HUBER_DELTA: f64 = 1.345;

/// One sighting of a feature in a keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub keyframe: usize,
    /// Raw (distorted) pixel.
    pub pixel: Vector2<f64>,
    /// Undistorted bearing `[x_n, y_n, 1]`.
    pub bearing: Vector3<f64>,
}

/// A feature tracked across keyframes, observations ordered by keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub id: u64,
    pub observations: Vec<Observation>,
}

impl FeatureTrack {
    pub fn new(id: u64, mut observations: Vec<Observation>) -> Result<Self> {
        observations.sort_by_key(|o| o.keyframe);
        if observations.windows(2).any(|w| w[0].keyframe == w[1].keyframe) {
            return Err(Error::InvalidProblem(format!(
                "track {id} observes the same keyframe twice"
            )));
        }
        Ok(Self { id, observations })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Co-observation of one feature by keyframes `i` and `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarFactor {
    pub feature_id: u64,
    pub i: usize,
    pub j: usize,
    pub bearing_i: Vector3<f64>,
    pub bearing_j: Vector3<f64>,
    /// Standard deviation of the triple-product residual.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub position: Vector3<f64>,
}

/// Which keyframe pairs of a track become epipolar factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    #[default]
    AllPairs,
    Consecutive,
}

impl std::str::FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-pairs" | "all" => Ok(Self::AllPairs),
            "consecutive" => Ok(Self::Consecutive),
            other => Err(Error::InvalidConfig(format!("unknown pairing '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustLoss {
    None,
    Huber { delta: f64 },
}

impl Default for RobustLoss {
    fn default() -> Self {
        RobustLoss::Huber {
            delta: DEFAULT_HUBER_DELTA,
        }
    }
}

impl RobustLoss {
    pub fn validate(&self) -> Result<()> {
        match self {
            RobustLoss::Huber { delta } if !(*delta > 0.0) => Err(Error::InvalidConfig(format!(
                "Huber delta must be positive, got {delta}"
            ))),
            _ => Ok(()),
        }
    }

    /// `ρ(s)` for a squared whitened residual norm `s`.
    pub fn cost(&self, squared_norm: f64) -> f64 {
        match *self {
            RobustLoss::None => squared_norm,
            RobustLoss::Huber { delta } => {
                if squared_norm <= delta * delta {
                    squared_norm
                } else {
                    2.0 * delta * squared_norm.sqrt() - delta * delta
                }
            }
        }
    }
}

/// IRLS weight `ρ'(r²)` for a whitened residual norm `r`.
pub fn huber_weight(r: f64, loss: &RobustLoss) -> f64 {
    match *loss {
        RobustLoss::None => 1.0,
        RobustLoss::Huber { delta } => {
            if r <= delta {
                1.0
            } else {
                delta / r
            }
        }
    }
}

pub fn build_epipolar_factors(
    tracks: &[FeatureTrack],
    pairing: Pairing,
    sigma: f64,
) -> Vec<EpipolarFactor> {
    let mut factors = Vec::new();
    for track in tracks {
        let obs = &track.observations;
        let mut push = |a: &Observation, b: &Observation| {
            factors.push(EpipolarFactor {
                feature_id: track.id,
                i: a.keyframe,
                j: b.keyframe,
                bearing_i: a.bearing,
                bearing_j: b.bearing,
                sigma,
            })
        };
        match pairing {
            Pairing::AllPairs => {
                for (k, a) in obs.iter().enumerate() {
                    for b in &obs[k + 1..] {
                        push(a, b);
                    }
                }
            }
            Pairing::Consecutive => {
                for w in obs.windows(2) {
                    push(&w[0], &w[1]);
                }
            }
        }
    }
    factors
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(id: u64, keyframes: &[usize]) -> FeatureTrack {
        let obs = keyframes
            .iter()
            .map(|&k| Observation {
                keyframe: k,
                pixel: Vector2::zeros(),
                bearing: Vector3::new(0.0, 0.0, 1.0),
            })
            .collect();
        FeatureTrack::new(id, obs).unwrap()
    }

    fn pairs(f: &[EpipolarFactor]) -> Vec<(usize, usize)> {
        f.iter().map(|f| (f.i, f.j)).collect()
    }

    #[test]
    fn all_pairs_of_three() {
        let f = build_epipolar_factors(&[track(0, &[0, 1, 2])], Pairing::AllPairs, 1.0);
        assert_eq!(pairs(&f), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn consecutive_of_three() {
        let f = build_epipolar_factors(&[track(0, &[0, 1, 2])], Pairing::Consecutive, 1.0);
        assert_eq!(pairs(&f), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn fifty_full_tracks_over_ten_frames() {
        let frames: Vec<usize> = (0..10).collect();
        let tracks: Vec<_> = (0..50).map(|id| track(id, &frames)).collect();
        assert_eq!(build_epipolar_factors(&tracks, Pairing::AllPairs, 1.0).len(), 2250);
    }

    #[test]
    fn single_observation_yields_nothing() {
        assert!(build_epipolar_factors(&[track(3, &[4])], Pairing::AllPairs, 1.0).is_empty());
    }

    #[test]
    fn duplicate_keyframe_rejected() {
        let o = Observation {
            keyframe: 1,
            pixel: Vector2::zeros(),
            bearing: Vector3::new(0.0, 0.0, 1.0),
        };
        assert!(FeatureTrack::new(0, vec![o, o]).is_err());
    }

    #[test]
    fn huber_weights() {
        let loss = RobustLoss::Huber { delta: 1.0 };
        assert_eq!(huber_weight(0.5, &loss), 1.0);
        assert_eq!(huber_weight(2.0, &loss), 0.5);
        assert_eq!(huber_weight(1.0, &loss), 1.0);
        assert_eq!(huber_weight(100.0, &RobustLoss::None), 1.0);
    }

    #[test]
    fn huber_cost_is_continuous_and_matches_weight() {
        let loss = RobustLoss::Huber { delta: 1.345 };
        let d2 = 1.345f64 * 1.345;
        assert!((loss.cost(d2 * (1.0 + 1e-12)) - loss.cost(d2)).abs() < 1e-9);
        // dρ/ds equals the IRLS weight.
        for r in [0.3, 1.0, 2.0, 7.5] {
            let s = r * r;
            let h = 1e-6;
            let deriv = (loss.cost(s + h) - loss.cost(s - h)) / (2.0 * h);
            assert!((deriv - huber_weight(r, &loss)).abs() < 1e-6);
        }
        assert!(RobustLoss::Huber { delta: 0.0 }.validate().is_err());
    }
}
