//! Barrier functions, their generators along a diffusion, and the worst-case
//! invariance bound.
//!
//! A barrier `h` defines the safe set `C = {h >= 0}` with interior
//! `C° = {h > 0}`. Along a solution of the model SDE the generator of `h` is
//!
//! ```text
//! A h(x) = ∇h(x)·(f(x) + g(x)u) + ½ tr[(b bᵀ)(x) h_xx(x)]
//! ```
//!
//! which splits into Lie-derivative parts that are affine in the control and
//! a diffusion correction that depends on the state alone. Controllers that
//! are denied the diffusion field can only form the Lie parts; recovering the
//! correction from data is the job of the estimator and learner modules.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};
use crate::sde::{MatrixField, SdeModel, VectorField};

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A twice continuously differentiable barrier with analytic derivatives.
///
/// Analytic gradients and Hessians are required: the generator needs `h_xx`
/// exactly, and finite-difference noise would contaminate the filter margin.
/// Finite-difference helpers exist below for cross-checking only.
#[derive(Clone)]
pub struct BarrierSpec {
    value: ScalarField,
    gradient: VectorField,
    hessian: MatrixField,
    sup_on_safe_set: Option<f64>,
}

impl BarrierSpec {
    pub fn new(
        value: ScalarField,
        gradient: VectorField,
        hessian: MatrixField,
        sup_on_safe_set: Option<f64>,
    ) -> Self {
        if let Some(c) = sup_on_safe_set {
            assert!(c > 0.0, "sup of h over the safe set must be positive");
        }
        Self {
            value,
            gradient,
            hessian,
            sup_on_safe_set,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }

    pub fn hessian(&self, x: &[f64]) -> Mat {
        (self.hessian)(x)
    }

    pub fn sup_on_safe_set(&self) -> Option<f64> {
        self.sup_on_safe_set
    }

    pub fn with_sup(mut self, c: f64) -> Self {
        assert!(c > 0.0);
        self.sup_on_safe_set = Some(c);
        self
    }

    /// Membership in the interior `C°`.
    pub fn in_interior(&self, x: &[f64]) -> bool {
        self.value(x) > 0.0
    }
}

/// The exact generator `A h(x) = ∇h·(f + g u) + ½ tr[(b bᵀ) h_xx]`.
///
/// Requires a model whose diffusion is visible; controllers working against
/// hidden dynamics get `VisibilityViolation` instead, which is the point.
pub fn generator_true(
    model: &SdeModel,
    barrier: &BarrierSpec,
    x: &[f64],
    u: &[f64],
) -> Result<f64> {
    let (lf, lg) = lie_parts(model, barrier, x);
    let delta = trace_correction_true(model, barrier, x)?;
    Ok(lf + dot(&lg, u) + delta)
}

/// Lie-derivative parts of the generator: `lf = ∇h·f` and the row vector
/// `lg = ∇hᵀ g`, so that the control enters as `lf + lg·u`.
pub fn lie_parts(model: &SdeModel, barrier: &BarrierSpec, x: &[f64]) -> (f64, Vec<f64>) {
    let grad = barrier.gradient(x);
    let f = model.drift(x);
    let g = model.control_matrix(x);
    let lf = dot(&grad, &f);
    let lg = g.left_mul_vec(&grad);
    (lf, lg)
}

/// The diffusion correction `Δ(x) = ½ tr[(b bᵀ)(x) h_xx(x)]`, evaluated with
/// the true diffusion. `tr(b bᵀ H) = Σ_k b_kᵀ H b_k` over noise columns.
pub fn trace_correction_true(model: &SdeModel, barrier: &BarrierSpec, x: &[f64]) -> Result<f64> {
    let b = model.diffusion(x)?;
    let hess = barrier.hessian(x);
    let mut acc = 0.0;
    for k in 0..b.cols() {
        let col = b.col(k);
        acc += hess.quad_form(&col, &col);
    }
    Ok(0.5 * acc)
}

/// Worst-case probability that the controlled process stays in `C°` forever
/// when the filtered generator keeps a positive margin: `h(x0) / sup_C h`,
/// clamped to [0, 1].
pub fn worst_case_bound(barrier: &BarrierSpec, x0: &[f64]) -> Result<f64> {
    let h0 = barrier.value(x0);
    if h0.is_nan() || h0 <= 0.0 {
        return Err(Error::OutsideSafeSet { h: h0 });
    }
    let c = barrier.sup_on_safe_set().ok_or_else(|| {
        Error::config(
            "sup_on_safe_set",
            "worst_case_bound needs the supremum of h over the safe set",
        )
    })?;
    Ok((h0 / c).clamp(0.0, 1.0))
}

/// Result of a dense-grid search for `sup_C h` over a bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSup {
    /// Largest h over grid points inside the safe set.
    pub max_h: f64,
    /// Worst-case amount by which the true supremum may exceed `max_h`,
    /// from the largest gradient norm seen on the grid times half the cell
    /// diagonal.
    pub lipschitz_slack: f64,
}

/// Dense-grid maximum of `h` restricted to the safe set, over a bounding box
/// that must cover `C`. Use when the supremum is not known analytically.
pub fn sup_on_grid(barrier: &BarrierSpec, bounds: &[(f64, f64)], step: f64) -> GridSup {
    assert!(step > 0.0);
    assert!(!bounds.is_empty());
    let dims = bounds.len();
    let counts: Vec<usize> = bounds
        .iter()
        .map(|(lo, hi)| {
            assert!(lo < hi, "malformed bounding box");
            ((hi - lo) / step).ceil() as usize + 1
        })
        .collect();

    let mut max_h = f64::NEG_INFINITY;
    let mut max_grad = 0.0f64;
    let mut idx = vec![0usize; dims];
    let mut x = vec![0.0; dims];
    loop {
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            x[k] = (lo + idx[k] as f64 * step).min(hi);
        }
        let h = barrier.value(&x);
        if h >= 0.0 {
            if h > max_h {
                max_h = h;
            }
            let g = barrier.gradient(&x);
            let gn = dot(&g, &g).sqrt();
            if gn > max_grad {
                max_grad = gn;
            }
        }
        // Odometer increment over the grid.
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == dims {
                let slack = max_grad * step * (dims as f64).sqrt() / 2.0;
                return GridSup {
                    max_h,
                    lipschitz_slack: slack,
                };
            }
        }
    }
}

/// Central finite-difference gradient, for cross-checking analytic
/// derivatives in tests. Never used in the control loop.
pub fn fd_gradient(barrier: &BarrierSpec, x: &[f64], step: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + step;
        xm[i] = x[i] - step;
        out[i] = (barrier.value(&xp) - barrier.value(&xm)) / (2.0 * step);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    out
}

/// Central finite-difference Hessian, for cross-checking only.
pub fn fd_hessian(barrier: &BarrierSpec, x: &[f64], step: f64) -> Mat {
    let n = x.len();
    let mut out = Mat::zeros(n, n);
    let mut xs = x.to_vec();
    for i in 0..n {
        for j in 0..n {
            let mut eval = |di: f64, dj: f64| {
                xs[i] += di;
                xs[j] += dj;
                let v = barrier.value(&xs);
                xs[i] -= di;
                xs[j] -= dj;
                v
            };
            let v = (eval(step, step) - eval(step, -step) - eval(-step, step)
                + eval(-step, -step))
                / (4.0 * step * step);
            out.set(i, j, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::rng::RngStream;
    use crate::sde::DiffusionVisibility;

    const SQRT3: f64 = 1.7320508075688772;

    #[test]
    fn cubic_generator_matches_printed_form_at_1_1() {
        // A h = 0.6 x1 + x2 - 2 x1³ x2 - 2 x2² u - b(x2)², so at (1,1), u=0,
        // b = 0.1 x2: 0.6 + 1 - 2 - 0.01 = -0.41.
        let model = presets::cubic_model(0.1, DiffusionVisibility::Known);
        let barrier = presets::cubic_barrier();
        let g = generator_true(&model, &barrier, &[1.0, 1.0], &[0.0]).unwrap();
        assert!((g - (-0.41)).abs() < 1e-12, "got {g}");
    }

    #[test]
    fn cubic_generator_affine_in_control() {
        let model = presets::cubic_model(0.1, DiffusionVisibility::Known);
        let barrier = presets::cubic_barrier();
        let x = [0.3, -0.7];
        let g0 = generator_true(&model, &barrier, &x, &[0.0]).unwrap();
        let g1 = generator_true(&model, &barrier, &x, &[1.0]).unwrap();
        let (_, lg) = lie_parts(&model, &barrier, &x);
        assert!((g1 - g0 - lg[0]).abs() < 1e-12);
        // lg = -2 x2² from h = 1 - x1 - x2², g = (0, x2).
        assert!((lg[0] - (-2.0 * 0.49)).abs() < 1e-12);
    }

    #[test]
    fn zero_diffusion_generator_reduces_to_lie_parts() {
        let model = presets::pendulum_model(DiffusionVisibility::Known).with_zero_diffusion();
        let barrier = presets::pendulum_barrier();
        let x = [0.2, -0.1];
        let u = [0.4];
        let (lf, lg) = lie_parts(&model, &barrier, &x);
        let g = generator_true(&model, &barrier, &x, &u).unwrap();
        assert_eq!(g, lf + lg[0] * u[0]);
    }

    #[test]
    fn pendulum_trace_correction_is_theta_only() {
        let model = presets::pendulum_model(DiffusionVisibility::Known);
        let barrier = presets::pendulum_barrier();
        // Δ(θ, ·) = -√3 (0.1 θ)², independent of the angular rate.
        let d1 = trace_correction_true(&model, &barrier, &[1.0, 0.3]).unwrap();
        let d2 = trace_correction_true(&model, &barrier, &[1.0, -2.0]).unwrap();
        assert!((d1 - (-SQRT3 * 0.01)).abs() < 1e-12, "got {d1}");
        assert_eq!(d1, d2);
    }

    #[test]
    fn cubic_trace_correction_matches_hand_value() {
        let model = presets::cubic_model(0.1, DiffusionVisibility::Known);
        let barrier = presets::cubic_barrier();
        // h_xx = [[0,0],[0,-2]], b = (0, 0.1 x2): Δ = -(0.1 x2)².
        let d = trace_correction_true(&model, &barrier, &[0.4, 0.9]).unwrap();
        assert!((d - (-(0.09f64).powi(2))).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn zero_diffusion_trace_correction_is_zero() {
        let model = presets::cubic_model(0.1, DiffusionVisibility::Known).with_zero_diffusion();
        let barrier = presets::cubic_barrier();
        assert_eq!(
            trace_correction_true(&model, &barrier, &[0.4, 0.9]).unwrap(),
            0.0
        );
    }

    #[test]
    fn hidden_diffusion_is_a_visibility_violation() {
        let model = presets::pendulum_model(DiffusionVisibility::Hidden);
        let barrier = presets::pendulum_barrier();
        let err = generator_true(&model, &barrier, &[0.1, 0.0], &[0.0]).unwrap_err();
        assert!(matches!(err, Error::VisibilityViolation));
        let err = trace_correction_true(&model, &barrier, &[0.1, 0.0]).unwrap_err();
        assert!(matches!(err, Error::VisibilityViolation));
    }

    #[test]
    fn pendulum_lie_parts_match_displayed_expression() {
        let model = presets::pendulum_model(DiffusionVisibility::Known);
        let barrier = presets::pendulum_barrier();
        let (theta, omega) = (0.1, -0.1);
        let (lf, lg) = lie_parts(&model, &barrier, &[theta, omega]);
        let expected_lf = -(2.0 * SQRT3 * theta + 2.0 * omega) * omega
            - (2.0 * theta + 2.0 * SQRT3 * omega) * (10.0 / 0.7) * theta.sin();
        let expected_lg = -(2.0 * theta + 2.0 * SQRT3 * omega) / (0.7 * 0.7);
        assert!((lf - expected_lf).abs() < 1e-12);
        assert!((lg[0] - expected_lg).abs() < 1e-12);
    }

    #[test]
    fn decomposition_identity_randomized() {
        let model = presets::pendulum_model(DiffusionVisibility::Known);
        let barrier = presets::pendulum_barrier();
        let mut rng = RngStream::new(99, 0);
        for _ in 0..100 {
            let x = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
            let u = [rng.uniform_in(-5.0, 5.0)];
            let (lf, lg) = lie_parts(&model, &barrier, &x);
            let delta = trace_correction_true(&model, &barrier, &x).unwrap();
            let g = generator_true(&model, &barrier, &x, &u).unwrap();
            assert!((g - (lf + lg[0] * u[0] + delta)).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        for (barrier, lo, hi) in [
            (presets::pendulum_barrier(), -0.4, 0.4),
            (presets::cubic_barrier(), -1.0, 1.0),
        ] {
            let mut rng = RngStream::new(7, 1);
            let mut checked = 0;
            while checked < 100 {
                let x = [rng.uniform_in(lo, hi), rng.uniform_in(lo, hi)];
                if !barrier.in_interior(&x) {
                    continue;
                }
                checked += 1;
                let g = barrier.gradient(&x);
                let fd = fd_gradient(&barrier, &x, 1e-5);
                for i in 0..2 {
                    let denom = fd[i].abs().max(1e-6);
                    assert!(
                        (g[i] - fd[i]).abs() / denom < 1e-6,
                        "gradient mismatch at {x:?}: {g:?} vs {fd:?}"
                    );
                }
                let h = barrier.hessian(&x);
                let fdh = fd_hessian(&barrier, &x, 1e-4);
                for i in 0..2 {
                    for j in 0..2 {
                        assert!(
                            (h.get(i, j) - fdh.get(i, j)).abs() < 1e-4,
                            "hessian mismatch at {x:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hessians_are_symmetric_and_quadratic_barrier_is_constant() {
        let barrier = presets::pendulum_barrier();
        let mut rng = RngStream::new(8, 1);
        let reference = barrier.hessian(&[0.0, 0.0]);
        for _ in 0..50 {
            let x = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
            let h = barrier.hessian(&x);
            assert_eq!(h, reference, "quadratic barrier must have constant h_xx");
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(h.get(i, j), h.get(j, i));
                }
            }
        }
        // h = 0.2 - xᵀPx has h_xx = -2P exactly.
        assert_eq!(reference.get(0, 0), -2.0 * SQRT3);
        assert_eq!(reference.get(0, 1), -2.0);
        assert_eq!(reference.get(1, 0), -2.0);
        assert_eq!(reference.get(1, 1), -2.0 * SQRT3);
    }

    #[test]
    fn worst_case_bound_examples() {
        let barrier = presets::pendulum_barrier();
        // Supremum 0.2 is attained at the origin.
        assert_eq!(worst_case_bound(&barrier, &[0.0, 0.0]).unwrap(), 1.0);
        // A state with h = 0.1 gives exactly one half.
        let theta = (0.1f64 / SQRT3).sqrt();
        let x = [theta, 0.0];
        assert!((barrier.value(&x) - 0.1).abs() < 1e-12);
        let b = worst_case_bound(&barrier, &x).unwrap();
        assert!((b - 0.5).abs() < 1e-12);
        // Near the boundary the bound vanishes.
        let theta_edge = (0.2f64 / SQRT3).sqrt() - 1e-9;
        let near = [theta_edge, 0.0];
        let b_near = worst_case_bound(&barrier, &near).unwrap();
        assert!(b_near < 1e-7);
        // Outside the interior it is an error.
        assert!(matches!(
            worst_case_bound(&barrier, &[1.0, 1.0]),
            Err(Error::OutsideSafeSet { .. })
        ));
    }

    #[test]
    fn worst_case_bound_monotone_in_h() {
        let barrier = presets::pendulum_barrier();
        let mut prev = f64::NEG_INFINITY;
        // Walk inward along the θ axis: h increases, so must the bound.
        for k in (1..=20).rev() {
            let theta = 0.33 * k as f64 / 20.0;
            let x = [theta, 0.0];
            if !barrier.in_interior(&x) {
                continue;
            }
            let b = worst_case_bound(&barrier, &x).unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn sampled_safe_states_never_exceed_sup() {
        let barrier = presets::pendulum_barrier();
        let c = barrier.sup_on_safe_set().unwrap();
        let mut rng = RngStream::new(12, 0);
        for _ in 0..10_000 {
            let x = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
            if barrier.value(&x) >= 0.0 {
                assert!(barrier.value(&x) <= c + 1e-9);
            }
        }
    }

    #[test]
    fn grid_sup_recovers_known_suprema() {
        let pendulum = presets::pendulum_barrier();
        let got = sup_on_grid(&pendulum, &[(-1.0, 1.0), (-1.0, 1.0)], 0.01);
        assert!((got.max_h - 0.2).abs() <= got.lipschitz_slack.max(1e-6));

        let cubic = presets::cubic_barrier();
        let got = sup_on_grid(&cubic, &[(-2.0, 1.5), (-1.5, 1.5)], 0.01);
        // h = 1 - x1 - x2² peaks at the box corner x1 = -2, x2 = 0.
        assert!((got.max_h - 3.0).abs() < 1e-9, "got {}", got.max_h);
    }

    #[test]
    fn generator_definition_difference_quotient_converges() {
        // [E h(one-step) - h(x)] / dt approaches the generator as dt shrinks.
        let model = presets::pendulum_model(DiffusionVisibility::Known);
        let barrier = presets::pendulum_barrier();
        let x = [0.1, -0.05];
        let u = [0.0];
        let exact = generator_true(&model, &barrier, &x, &u).unwrap();
        let mut errors = Vec::new();
        for (i, dt) in [1e-2, 1e-3].into_iter().enumerate() {
            let mut rng = RngStream::new(31, i as u64);
            let n = 100_000;
            let mut mean_h = 0.0;
            for _ in 0..n {
                let next = crate::sde::em_step(&model, &x, &u, dt, &mut rng).unwrap();
                mean_h += barrier.value(&next);
            }
            mean_h /= n as f64;
            let quotient = (mean_h - barrier.value(&x)) / dt;
            errors.push((quotient - exact).abs());
        }
        assert!(
            errors[1] < errors[0],
            "difference-quotient error must shrink with dt: {errors:?}"
        );
    }
}
