//! Controlled Itô diffusions and their Euler–Maruyama simulation.
//!
//! The model is `dX = (f(X) + g(X)u) dt + b(X) dW` with drift `f`, control
//! matrix `g` and diffusion `b`. The diffusion field carries a visibility
//! flag: experiment harnesses simulate with the true `b`, while controller
//! code built against a hidden-diffusion model cannot evaluate it.

use std::sync::Arc;

use crate::barrier::BarrierSpec;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::RngStream;

pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&[f64]) -> Mat + Send + Sync>;

/// Whether controllers may evaluate the diffusion field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionVisibility {
    Known,
    Hidden,
}

/// A controlled Itô diffusion `dX = (f(X) + g(X)u) dt + b(X) dW`.
///
/// Immutable after construction and cheap to clone (fields are shared), so a
/// single model can back many concurrent trajectory workers.
#[derive(Clone)]
pub struct SdeModel {
    state_dim: usize,
    control_dim: usize,
    noise_dim: usize,
    drift: VectorField,
    control_matrix: MatrixField,
    diffusion: MatrixField,
    visibility: DiffusionVisibility,
}

impl SdeModel {
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        noise_dim: usize,
        drift: VectorField,
        control_matrix: MatrixField,
        diffusion: MatrixField,
        visibility: DiffusionVisibility,
    ) -> Self {
        assert!(state_dim > 0 && control_dim > 0 && noise_dim > 0);
        Self {
            state_dim,
            control_dim,
            noise_dim,
            drift,
            control_matrix,
            diffusion,
            visibility,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.state_dim);
        let f = (self.drift)(x);
        assert_eq!(f.len(), self.state_dim, "drift dimension mismatch");
        f
    }

    pub fn control_matrix(&self, x: &[f64]) -> Mat {
        assert_eq!(x.len(), self.state_dim);
        let g = (self.control_matrix)(x);
        assert_eq!(g.rows(), self.state_dim, "control matrix row mismatch");
        assert_eq!(g.cols(), self.control_dim, "control matrix col mismatch");
        g
    }

    /// Controller-side access to the diffusion field, gated by visibility.
    pub fn diffusion(&self, x: &[f64]) -> Result<Mat> {
        match self.visibility {
            DiffusionVisibility::Known => Ok(self.diffusion_for_simulation(x)),
            DiffusionVisibility::Hidden => Err(Error::VisibilityViolation),
        }
    }

    /// Simulation-side access to the true diffusion field. The simulator is
    /// nature, not a controller, so this is not gated.
    pub fn diffusion_for_simulation(&self, x: &[f64]) -> Mat {
        assert_eq!(x.len(), self.state_dim);
        let b = (self.diffusion)(x);
        assert_eq!(b.rows(), self.state_dim, "diffusion row mismatch");
        assert_eq!(b.cols(), self.noise_dim, "diffusion col mismatch");
        b
    }

    pub fn diffusion_visibility(&self) -> DiffusionVisibility {
        self.visibility
    }

    /// A view of the same dynamics with the diffusion hidden from
    /// controllers.
    pub fn with_hidden_diffusion(&self) -> Self {
        let mut m = self.clone();
        m.visibility = DiffusionVisibility::Hidden;
        m
    }

    /// A view with the diffusion field replaced by zero (and marked known).
    /// Used for noise-free rollouts of the same drift.
    pub fn with_zero_diffusion(&self) -> Self {
        let n = self.state_dim;
        let d = self.noise_dim;
        let mut m = self.clone();
        m.diffusion = Arc::new(move |_: &[f64]| Mat::zeros(n, d));
        m.visibility = DiffusionVisibility::Known;
        m
    }
}

/// Why a simulated trajectory stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    HorizonReached,
    ExitedSafeSet,
    FilterInfeasible,
}

/// A simulated sample path, stopped at the first exit from the interior of
/// the safe set.
///
/// Invariants: `states.len() == controls.len() + 1`, `times[k] == k * dt`,
/// and no state beyond `exit_step` is ever recorded. `exit_step` marks the
/// first state with `h(x) <= 0`, or a non-finite state produced by a blowup.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub exit_step: Option<usize>,
    pub terminated: TerminationReason,
}

impl Trajectory {
    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least x0")
    }
}

/// One Euler–Maruyama step `x + (f(x) + g(x)u) dt + b(x) ξ √dt`, drawing
/// exactly `noise_dim` standard normal variates from `rng`.
pub fn em_step(
    model: &SdeModel,
    x: &[f64],
    u: &[f64],
    dt: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut xi = vec![0.0; model.noise_dim()];
    rng.fill_normal(&mut xi);
    em_step_given(model, x, u, dt, &xi)
}

/// Euler–Maruyama step with the Gaussian increment supplied by the caller
/// (used for antithetic pairs in the dataset builder).
pub fn em_step_given(
    model: &SdeModel,
    x: &[f64],
    u: &[f64],
    dt: f64,
    xi: &[f64],
) -> Result<Vec<f64>> {
    assert!(dt > 0.0, "dt must be positive");
    assert_eq!(u.len(), model.control_dim(), "control dimension mismatch");
    assert_eq!(xi.len(), model.noise_dim(), "noise dimension mismatch");

    let f = model.drift(x);
    let g = model.control_matrix(x);
    let b = model.diffusion_for_simulation(x);
    let gu = g.mul_vec(u);
    let noise = b.mul_vec(xi);

    let sqrt_dt = dt.sqrt();
    let next: Vec<f64> = (0..model.state_dim())
        .map(|i| x[i] + (f[i] + gu[i]) * dt + noise[i] * sqrt_dt)
        .collect();

    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NumericalBlowup { state: next })
    }
}

/// The noise-free Euler image `x + (f(x) + g(x)u) dt` of the same step.
/// Consumes no randomness.
pub fn euler_drift_step(model: &SdeModel, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
    assert!(dt > 0.0, "dt must be positive");
    let f = model.drift(x);
    let gu = model.control_matrix(x).mul_vec(u);
    (0..model.state_dim())
        .map(|i| x[i] + (f[i] + gu[i]) * dt)
        .collect()
}

/// `n` independent one-step transitions from `x`, resetting to `x` after each
/// step. Fails on the first blowup; see the estimator for the lossy variant
/// that counts exclusions instead.
pub fn sample_transitions(
    model: &SdeModel,
    x: &[f64],
    u: &[f64],
    dt: f64,
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    assert!(n >= 1, "need at least one transition");
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(em_step(model, x, u, dt, rng)?);
    }
    Ok(out)
}

/// A state-feedback policy; `None` means the safety filter is infeasible at
/// that state.
pub type Policy = Arc<dyn Fn(&[f64]) -> Option<Vec<f64>> + Send + Sync>;

/// Simulate under `policy` until the horizon, the first exit from the
/// interior of the safe set, or a filter infeasibility. The process is
/// stopped at the exit step: no further states are produced.
pub fn simulate(
    model: &SdeModel,
    policy: &Policy,
    x0: &[f64],
    dt: f64,
    horizon_steps: usize,
    barrier: &BarrierSpec,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    assert!(horizon_steps >= 1);
    let h0 = barrier.value(x0);
    if h0.is_nan() || h0 <= 0.0 {
        return Err(Error::OutsideSafeSet { h: h0 });
    }

    let mut states: Vec<Vec<f64>> = Vec::with_capacity(horizon_steps + 1);
    let mut controls: Vec<Vec<f64>> = Vec::with_capacity(horizon_steps);
    states.push(x0.to_vec());
    let mut exit_step = None;
    let mut terminated = TerminationReason::HorizonReached;

    for _ in 0..horizon_steps {
        let x = states.last().expect("nonempty").clone();
        let u = match policy(&x) {
            Some(u) => u,
            None => {
                terminated = TerminationReason::FilterInfeasible;
                break;
            }
        };
        match em_step(model, &x, &u, dt, rng) {
            Ok(next) => {
                let h = barrier.value(&next);
                controls.push(u);
                states.push(next);
                if h.is_nan() || h <= 0.0 {
                    exit_step = Some(states.len() - 1);
                    terminated = TerminationReason::ExitedSafeSet;
                    break;
                }
            }
            Err(Error::NumericalBlowup { state }) => {
                // Blowup counts as an unsafe exit at this step.
                controls.push(u);
                states.push(state);
                exit_step = Some(states.len() - 1);
                terminated = TerminationReason::ExitedSafeSet;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let times = (0..states.len()).map(|k| k as f64 * dt).collect();
    Ok(Trajectory {
        dt,
        times,
        states,
        controls,
        exit_step,
        terminated,
    })
}
