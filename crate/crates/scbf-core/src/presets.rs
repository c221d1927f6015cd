//! Built-in benchmark systems: an inverted pendulum with angle-proportional
//! noise, and a planar system with cubic drift and multiplicative noise on
//! the second coordinate. Both ship as named presets ("pendulum", "cubic2d")
//! selectable from configuration.

use std::sync::Arc;

use crate::barrier::BarrierSpec;
use crate::estimator::{SampleMode, SamplingRegion};
use crate::mat::Mat;
use crate::sde::{DiffusionVisibility, SdeModel};

pub const SQRT3: f64 = 1.7320508075688772;

/// Pendulum constants: gravitational acceleration, length, mass.
pub const PENDULUM_GRAVITY: f64 = 10.0;
pub const PENDULUM_LENGTH: f64 = 0.7;
pub const PENDULUM_MASS: f64 = 1.0;
/// Noise gain on the angle equation: b(x) = (0.1 θ, 0).
pub const PENDULUM_NOISE_GAIN: f64 = 0.1;

/// Default Monte Carlo start states. The pendulum starts near the upright
/// equilibrium. The cubic system starts where its slow manifold
/// `x1 = -x2/0.6` runs close to the parabola boundary, so trajectories crawl
/// along the boundary for a while and safety genuinely depends on the
/// filter; starts away from that zone are safe under every variant and make
/// the comparison vacuous.
pub const PENDULUM_X0: [f64; 2] = [0.1, -0.1];
pub const CUBIC_X0: [f64; 2] = [0.42, -0.68];

/// Start state for the cubic regulation demos (objective-controller
/// rollouts), well inside the safe set.
pub const CUBIC_CLF_DEMO_X0: [f64; 2] = [-0.5, 0.8];

/// Inverted pendulum `d(θ, ω) = (ω, (g/l) sin θ) dt + (0, 1/(m l²)) u dt +
/// (0.1 θ, 0) dW`.
pub fn pendulum_model(visibility: DiffusionVisibility) -> SdeModel {
    let g_over_l = PENDULUM_GRAVITY / PENDULUM_LENGTH;
    let inv_ml2 = 1.0 / (PENDULUM_MASS * PENDULUM_LENGTH * PENDULUM_LENGTH);
    SdeModel::new(
        2,
        1,
        1,
        Arc::new(move |x: &[f64]| vec![x[1], g_over_l * x[0].sin()]),
        Arc::new(move |_: &[f64]| Mat::new(2, 1, vec![0.0, inv_ml2])),
        Arc::new(|x: &[f64]| Mat::new(2, 1, vec![PENDULUM_NOISE_GAIN * x[0], 0.0])),
        visibility,
    )
}

/// Pendulum barrier `h = 0.2 - xᵀPx` with `P = [[√3, 1], [1, √3]]`; the safe
/// set is a small ellipse around the upright equilibrium and the supremum
/// 0.2 is attained at the origin.
pub fn pendulum_barrier() -> BarrierSpec {
    BarrierSpec::new(
        Arc::new(|x: &[f64]| {
            0.2 - SQRT3 * x[0] * x[0] - 2.0 * x[0] * x[1] - SQRT3 * x[1] * x[1]
        }),
        Arc::new(|x: &[f64]| {
            vec![
                -2.0 * SQRT3 * x[0] - 2.0 * x[1],
                -2.0 * x[0] - 2.0 * SQRT3 * x[1],
            ]
        }),
        Arc::new(|_: &[f64]| Mat::new(2, 2, vec![-2.0 * SQRT3, -2.0, -2.0, -2.0 * SQRT3])),
        Some(0.2),
    )
}

/// Sampling box for the pendulum, a comfortable superset of its safe set.
pub fn pendulum_region() -> SamplingRegion {
    SamplingRegion::new(vec![(-1.0, 1.0), (-1.0, 1.0)], SampleMode::UniformRandom)
}

/// Planar cubic system `d(x1, x2) = (-0.6 x1 - x2, x1³) dt + (0, x2) u dt +
/// (0, noise_gain · x2) dW`.
pub fn cubic_model(noise_gain: f64, visibility: DiffusionVisibility) -> SdeModel {
    SdeModel::new(
        2,
        1,
        1,
        Arc::new(|x: &[f64]| vec![-0.6 * x[0] - x[1], x[0] * x[0] * x[0]]),
        Arc::new(|x: &[f64]| Mat::new(2, 1, vec![0.0, x[1]])),
        Arc::new(move |x: &[f64]| Mat::new(2, 1, vec![0.0, noise_gain * x[1]])),
        visibility,
    )
}

/// Cubic-system barrier `h = 1 - x2² - x1`; the safe region is everything
/// left of the parabola `x1 = 1 - x2²`. No analytic supremum is set; callers
/// bound it on a grid over their working box.
pub fn cubic_barrier() -> BarrierSpec {
    BarrierSpec::new(
        Arc::new(|x: &[f64]| 1.0 - x[1] * x[1] - x[0]),
        Arc::new(|x: &[f64]| vec![-1.0, -2.0 * x[1]]),
        Arc::new(|_: &[f64]| Mat::new(2, 2, vec![0.0, 0.0, 0.0, -2.0])),
        None,
    )
}

/// Sampling box for the cubic system.
pub fn cubic_region() -> SamplingRegion {
    SamplingRegion::new(vec![(-2.0, 1.5), (-1.5, 1.5)], SampleMode::UniformRandom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_barrier_matches_expanded_form() {
        let b = pendulum_barrier();
        let x = [0.13, -0.21];
        let expected =
            0.2 - SQRT3 * x[0] * x[0] - 2.0 * x[0] * x[1] - SQRT3 * x[1] * x[1];
        assert_eq!(b.value(&x), expected);
        assert!(b.in_interior(&PENDULUM_X0));
    }

    #[test]
    fn cubic_start_states_are_safe() {
        let b = cubic_barrier();
        assert!((b.value(&CUBIC_X0) - 0.1176).abs() < 1e-12);
        assert!((b.value(&CUBIC_CLF_DEMO_X0) - 0.86).abs() < 1e-12);
    }

    #[test]
    fn model_dimensions_are_consistent() {
        for model in [
            pendulum_model(DiffusionVisibility::Known),
            cubic_model(0.1, DiffusionVisibility::Known),
        ] {
            let x = [0.2, 0.3];
            assert_eq!(model.drift(&x).len(), 2);
            let g = model.control_matrix(&x);
            assert_eq!((g.rows(), g.cols()), (2, 1));
            let b = model.diffusion(&x).unwrap();
            assert_eq!((b.rows(), b.cols()), (2, 1));
            assert!(model.drift(&x).iter().all(|v| v.is_finite()));
        }
    }
}
