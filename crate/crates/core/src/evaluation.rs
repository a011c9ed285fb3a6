//! Trajectory accuracy metrics after 4-DoF (yaw + translation) alignment.

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{boxminus, yaw_rotation, Quat};
use crate::state::KeyframeState;

/// Maximum timestamp gap for two states to be associated.
pub const ASSOCIATION_TOLERANCE_NS: i64 = 1_000_000;

/// Rigid transform `x ↦ Rz(yaw) x + translation` taking the estimate onto
/// the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosYawAlignment {
    pub yaw: f64,
    pub translation: Vector3<f64>,
    /// The horizontal positions carried no yaw information (all coincident).
    pub degenerate: bool,
}

impl PosYawAlignment {
    pub fn identity() -> Self {
        Self {
            yaw: 0.0,
            translation: Vector3::zeros(),
            degenerate: false,
        }
    }

    pub fn rotation(&self) -> Quat {
        yaw_rotation(self.yaw)
    }

    pub fn apply(&self, s: &KeyframeState) -> KeyframeState {
        s.transformed(&self.rotation(), &self.translation)
    }
}

/// Pairs each estimate state with the truth state nearest in time.
pub fn associate<'a>(
    estimate: &'a [KeyframeState],
    truth: &'a [KeyframeState],
) -> Result<Vec<(&'a KeyframeState, &'a KeyframeState)>> {
    if estimate.is_empty() {
        return Err(Error::Empty { what: "estimate trajectory" });
    }
    if truth.is_empty() {
        return Err(Error::Empty { what: "truth trajectory" });
    }
    estimate
        .iter()
        .map(|e| {
            let idx = truth.partition_point(|t| t.timestamp_ns < e.timestamp_ns);
            let best = [idx.checked_sub(1), Some(idx)]
                .into_iter()
                .flatten()
                .filter_map(|i| truth.get(i))
                .min_by_key(|t| (t.timestamp_ns - e.timestamp_ns).abs())
                .filter(|t| (t.timestamp_ns - e.timestamp_ns).abs() <= ASSOCIATION_TOLERANCE_NS);
            best.map(|t| (e, t)).ok_or(Error::Association {
                timestamp_ns: e.timestamp_ns,
            })
        })
        .collect()
}

/// Closed-form least-squares yaw + translation aligning estimate positions
/// to truth positions. Inputs are already associated pairwise.
pub fn align_posyaw(estimate: &[KeyframeState], truth: &[KeyframeState]) -> Result<PosYawAlignment> {
    if estimate.len() != truth.len() {
        return Err(Error::InvalidProblem(format!(
            "alignment needs paired states, got {} and {}",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.len() < 2 {
        return Err(Error::InsufficientKeyframes {
            needed: 2,
            got: estimate.len(),
        });
    }
    let n = estimate.len() as f64;
    let ce = estimate.iter().map(|s| s.position).sum::<Vector3<f64>>() / n;
    let ct = truth.iter().map(|s| s.position).sum::<Vector3<f64>>() / n;
    let (mut cross, mut dot) = (0.0, 0.0);
    for (e, t) in estimate.iter().zip(truth) {
        let (e, t) = (e.position - ce, t.position - ct);
        cross += e.x * t.y - e.y * t.x;
        dot += e.x * t.x + e.y * t.y;
    }
    let scale = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.position - ce).xy().norm() * (t.position - ct).xy().norm())
        .sum::<f64>();
    let degenerate = cross.hypot(dot) <= 1e-12 * scale.max(f64::MIN_POSITIVE) || scale == 0.0;
    let yaw = if degenerate { 0.0 } else { cross.atan2(dot) };
    Ok(PosYawAlignment {
        yaw,
        translation: ct - yaw_rotation(yaw) * ce,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryErrors {
    /// m
    pub ate_position: f64,
    /// deg
    pub ate_rotation: f64,
    /// m/s
    pub velocity_rmse: f64,
}

fn rmse(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Position RMSE and geodesic rotation RMSE (degrees) after posyaw alignment.
pub fn compute_ate(estimate: &[KeyframeState], truth: &[KeyframeState]) -> Result<(f64, f64)> {
    let pairs = associate(estimate, truth)?;
    let (est, tru): (Vec<KeyframeState>, Vec<KeyframeState>) = pairs.iter().map(|(e, t)| (**e, **t)).unzip();
    let align = align_posyaw(&est, &tru)?;
    let aligned: Vec<KeyframeState> = est.iter().map(|s| align.apply(s)).collect();
    let pos = rmse(aligned.iter().zip(&tru).map(|(a, t)| (a.position - t.position).norm()));
    let rot = rmse(
        aligned
            .iter()
            .zip(&tru)
            .map(|(a, t)| boxminus(&a.orientation, &t.orientation).norm().to_degrees()),
    );
    Ok((pos, rot))
}

/// RMSE of the difference of velocity norms.
pub fn compute_velocity_rmse(estimate: &[KeyframeState], truth: &[KeyframeState]) -> Result<f64> {
    let pairs = associate(estimate, truth)?;
    Ok(rmse(pairs.iter().map(|(e, t)| e.velocity.norm() - t.velocity.norm())))
}

pub fn evaluate(estimate: &[KeyframeState], truth: &[KeyframeState]) -> Result<TrajectoryErrors> {
    let (ate_position, ate_rotation) = compute_ate(estimate, truth)?;
    Ok(TrajectoryErrors {
        ate_position,
        ate_rotation,
        velocity_rmse: compute_velocity_rmse(estimate, truth)?,
    })
}

/// Mean per-window solve time.
pub fn aggregate_solve_time(times_ms: &[f64]) -> Result<f64> {
    if times_ms.is_empty() {
        return Err(Error::Empty { what: "solve time list" });
    }
    Ok(times_ms.iter().sum::<f64>() / times_ms.len() as f64)
}
