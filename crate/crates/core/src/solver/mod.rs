//! Damped Gauss-Newton refinement of an initialization window.

mod gauge;
mod problem;
mod triangulation;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factors::Landmark;
use crate::state::KeyframeState;
use gauge::FirstFrameGauge;

pub use problem::{
    build_structure_based, build_structureless, GaugePolicy, InitializationProblem, Linearization,
    ProblemConfig, ReprojectionObservation, SolverSettings, VisualTerms,
};
pub use triangulation::triangulate_track;

/// Which visual residual the problem uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Epipolar factors only, no landmark variables.
    #[default]
    Structureless,
    /// Triangulated landmarks with reprojection factors.
    StructureBased,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structureless" => Ok(Self::Structureless),
            "structure-based" => Ok(Self::StructureBased),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    RelativeCostDecrease,
    GradientNorm,
    ParameterTolerance,
    MaxIterations,
    /// Damping exceeded its ceiling without finding a descent step.
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    pub termination: Termination,
    pub solve_time_ms: f64,
    pub keyframes: usize,
    pub imu_factors: usize,
    pub visual_factors: usize,
    pub landmarks: usize,
    pub dropped_tracks: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub states: Vec<KeyframeState>,
    pub landmarks: Vec<Landmark>,
    pub report: SolveReport,
}

enum Parameterization {
    Free,
    Fixed(FirstFrameGauge),
}

impl Parameterization {
    fn new(problem: &InitializationProblem, states: &[KeyframeState], full_dim: usize) -> Self {
        match problem.gauge {
            GaugePolicy::Free => Self::Free,
            GaugePolicy::FixFirstPositionYaw => Self::Fixed(FirstFrameGauge::new(&states[0], full_dim)),
        }
    }

    fn reduce(&self, lin: Linearization) -> (DMatrix<f64>, DVector<f64>) {
        match self {
            Self::Free => (lin.hessian, lin.gradient),
            Self::Fixed(g) => g.reduce(&lin.hessian, &lin.gradient),
        }
    }

    fn apply(
        &self,
        problem: &InitializationProblem,
        states: &[KeyframeState],
        landmarks: &[Landmark],
        dy: &DVector<f64>,
    ) -> (Vec<KeyframeState>, Vec<Landmark>) {
        match self {
            Self::Free => problem.retract(states, landmarks, dy),
            Self::Fixed(g) => {
                let (dx, droll, dpitch) = g.expand(dy, problem.error_state_dim());
                let (mut s, l) = problem.retract(states, landmarks, &dx);
                s[0].orientation = g.first_orientation(droll, dpitch);
                (s, l)
            }
        }
    }
}

/// Magnitude of the Euclidean part of the iterate, used to scale the step test.
fn parameter_norm(states: &[KeyframeState], landmarks: &[Landmark]) -> f64 {
    let mut sq = 0.0;
    for s in states {
        sq += s.position.norm_squared()
            + s.velocity.norm_squared()
            + s.accel_bias.norm_squared()
            + s.gyro_bias.norm_squared()
            + 1.0;
    }
    for l in landmarks {
        sq += l.position.norm_squared();
    }
    sq.sqrt()
}

/// Solves `(H + λ diag(H)) dy = −g`. `None` when the damped system is not
/// positive definite.
fn damped_step(h: &DMatrix<f64>, g: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let mut damped = h.clone();
    for i in 0..h.nrows() {
        damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
    }
    let step = damped.cholesky()?.solve(&(-g));
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Levenberg-Marquardt on the problem's objective.
///
/// Returns the best iterate found. A damping blow-up is reported through
/// [`Termination::NumericalFailure`] rather than as an error so callers keep
/// the partial result.
pub fn solve(problem: &InitializationProblem) -> Result<Solution> {
    let started = Instant::now();
    let settings = &problem.settings;
    let mut states = problem.states.clone();
    let mut landmarks = problem.landmarks.clone();
    let full_dim = problem.error_state_dim();

    let mut lin = problem.linearize(&states, &landmarks);
    if !lin.cost.is_finite() {
        return Err(Error::InvalidProblem(format!("initial cost is {}", lin.cost)));
    }
    let initial_cost = lin.cost;
    let mut cost = lin.cost;
    let mut trace = vec![cost];
    let mut lambda = settings.initial_lambda;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    'outer: while iterations < settings.max_iterations {
        let param = Parameterization::new(problem, &states, full_dim);
        let (h, g) = param.reduce(lin);
        if 2.0 * g.norm() < settings.gradient_tolerance {
            termination = Termination::GradientNorm;
            break;
        }
        iterations += 1;
        loop {
            let Some(dy) = damped_step(&h, &g, lambda) else {
                lambda *= settings.lambda_increase;
                if lambda > settings.max_lambda {
                    termination = Termination::NumericalFailure;
                    break 'outer;
                }
                continue;
            };
            let tol = settings.parameter_tolerance;
            if dy.norm() <= tol * (parameter_norm(&states, &landmarks) + tol) {
                termination = Termination::ParameterTolerance;
                break 'outer;
            }
            let (cand_states, cand_landmarks) = param.apply(problem, &states, &landmarks, &dy);
            let new_cost = problem.cost(&cand_states, &cand_landmarks);
            if new_cost.is_finite() && new_cost < cost {
                let relative = (cost - new_cost) / cost;
                states = cand_states;
                landmarks = cand_landmarks;
                cost = new_cost;
                trace.push(cost);
                lambda = (lambda * settings.lambda_decrease).max(1e-15);
                if relative < settings.relative_cost_tolerance {
                    termination = Termination::RelativeCostDecrease;
                    break 'outer;
                }
                break;
            }
            lambda *= settings.lambda_increase;
            if lambda > settings.max_lambda {
                termination = Termination::NumericalFailure;
                break 'outer;
            }
        }
        lin = problem.linearize(&states, &landmarks);
    }

    let report = SolveReport {
        iterations,
        initial_cost,
        final_cost: cost,
        cost_trace: trace,
        termination,
        solve_time_ms: started.elapsed().as_secs_f64() * 1e3,
        keyframes: problem.keyframe_count(),
        imu_factors: problem.imu_factor_count(),
        visual_factors: problem.visual_factor_count(),
        landmarks: landmarks.len(),
        dropped_tracks: problem.dropped_tracks.clone(),
    };
    Ok(Solution {
        states,
        landmarks,
        report,
    })
}
