//! Shared fixtures and check functions used by both the acceptance suite and
//! the standalone property suite.

// Each test binary compiles this module separately and uses a different
// subset of it.
#![allow(dead_code)]

use std::sync::OnceLock;

use scbf_core::barrier::{generator_true, lie_parts, trace_correction_true};
use scbf_core::estimator::build_dataset;
use scbf_core::experiments::{
    build_example, run_variant_with, ExampleId, ExperimentConfig, ExperimentTable, SafetyReport,
    Variant,
};
use scbf_core::filter::{filter_control, AffineGenerator, GeneratorSource, SafetyFilterConfig};
use scbf_core::learner::{
    learned_generator, loss_and_grad, mlp_forward, train, Gradients, MlpParams, TrainConfig,
};
use scbf_core::presets;
use scbf_core::rng::RngStream;
use scbf_core::sde::{em_step, euler_drift_step, DiffusionVisibility};

pub const SQRT3: f64 = 1.7320508075688772;

/// Trained artifacts for one experiment cell, shared across criteria within
/// a test binary.
pub struct Artifacts {
    pub cfg: ExperimentConfig,
    pub params: MlpParams,
    pub reports: Vec<SafetyReport>,
}

fn run_cell(mut cfg: ExperimentConfig, noise: f64) -> Artifacts {
    cfg.cubic_noise = noise;
    let dataset = scbf_core::experiments::build_experiment_dataset(&cfg).expect("dataset");
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let (params, _) = train(&dataset, &train_cfg).expect("training");
    let reports = Variant::ALL
        .iter()
        .map(|&v| run_variant_with(&cfg, v, Some(&params)).expect("variant run"))
        .collect();
    Artifacts {
        cfg,
        params,
        reports,
    }
}

pub fn pendulum_artifacts() -> &'static Artifacts {
    static CELL: OnceLock<Artifacts> = OnceLock::new();
    CELL.get_or_init(|| run_cell(ExperimentConfig::new(ExampleId::Pendulum), 0.1))
}

pub fn cubic_artifacts_low() -> &'static Artifacts {
    static CELL: OnceLock<Artifacts> = OnceLock::new();
    CELL.get_or_init(|| run_cell(ExperimentConfig::new(ExampleId::Cubic2d), 0.1))
}

pub fn cubic_artifacts_high() -> &'static Artifacts {
    static CELL: OnceLock<Artifacts> = OnceLock::new();
    CELL.get_or_init(|| run_cell(ExperimentConfig::new(ExampleId::Cubic2d), 0.15))
}

pub fn report_for(artifacts: &Artifacts, variant: Variant) -> &SafetyReport {
    artifacts
        .reports
        .iter()
        .find(|r| r.variant == variant)
        .expect("report present")
}

pub fn render(reports: &[SafetyReport]) -> String {
    ExperimentTable {
        reports: reports.to_vec(),
    }
    .render_text()
}

// ---------------------------------------------------------------------------
// Criterion-6 property checks, shared between the acceptance suite and the
// standalone property suite.
// ---------------------------------------------------------------------------

fn numerical_gradients(params: &MlpParams, batch: &[(Vec<f64>, f64)], step: f64) -> Gradients {
    let mut p = params.clone();
    let (_, mut out) = loss_and_grad(params, batch);
    for l in 0..out.weights.len() {
        for i in 0..out.weights[l].rows() {
            for j in 0..out.weights[l].cols() {
                let orig = p.weights_mut()[l].get(i, j);
                p.weights_mut()[l].set(i, j, orig + step);
                let (up, _) = loss_and_grad(&p, batch);
                p.weights_mut()[l].set(i, j, orig - step);
                let (down, _) = loss_and_grad(&p, batch);
                p.weights_mut()[l].set(i, j, orig);
                out.weights[l].set(i, j, (up - down) / (2.0 * step));
            }
        }
        for i in 0..out.biases[l].len() {
            let orig = p.biases_mut()[l][i];
            p.biases_mut()[l][i] = orig + step;
            let (up, _) = loss_and_grad(&p, batch);
            p.biases_mut()[l][i] = orig - step;
            let (down, _) = loss_and_grad(&p, batch);
            p.biases_mut()[l][i] = orig;
            out.biases[l][i] = (up - down) / (2.0 * step);
        }
    }
    out
}

/// Backpropagation gradients match central finite differences to 1e-4
/// relative on every coordinate.
pub fn check_gradient_against_fd() {
    let mut rng = RngStream::new(1234, 0);
    for seed in 0..3u64 {
        let params = MlpParams::init(&[2, 6, 4, 1], seed);
        let batch: Vec<(Vec<f64>, f64)> = (0..5)
            .map(|_| {
                (
                    vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)],
                    rng.uniform_in(-0.05, 0.05),
                )
            })
            .collect();
        let (_, analytic) = loss_and_grad(&params, &batch);
        let numeric = numerical_gradients(&params, &batch, 1e-6);
        for l in 0..analytic.weights.len() {
            for (a, n) in analytic.weights[l]
                .data()
                .iter()
                .zip(numeric.weights[l].data())
            {
                let denom = n.abs().max(1e-6);
                assert!(
                    (a - n).abs() / denom < 1e-4,
                    "gradient mismatch: {a} vs {n}"
                );
            }
            for (a, n) in analytic.biases[l].iter().zip(&numeric.biases[l]) {
                let denom = n.abs().max(1e-6);
                assert!((a - n).abs() / denom < 1e-4, "bias mismatch: {a} vs {n}");
            }
        }
    }
}

/// The generator decomposes exactly into Lie parts plus the diffusion
/// correction.
pub fn check_generator_decomposition() {
    let model = presets::pendulum_model(DiffusionVisibility::Known);
    let barrier = presets::pendulum_barrier();
    let mut rng = RngStream::new(77, 0);
    for _ in 0..200 {
        let x = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
        let u = [rng.uniform_in(-5.0, 5.0)];
        let (lf, lg) = lie_parts(&model, &barrier, &x);
        let delta = trace_correction_true(&model, &barrier, &x).unwrap();
        let total = generator_true(&model, &barrier, &x, &u).unwrap();
        assert!(
            (total - (lf + lg[0] * u[0] + delta)).abs() <= 1e-12,
            "decomposition residual at {x:?}"
        );
    }
}

/// Closed-form projection matches brute-force grid minimization.
pub fn check_filter_minimality() {
    let mut rng = RngStream::new(55, 0);
    for _ in 0..100 {
        let gen = AffineGenerator {
            intercept: rng.uniform_in(-2.0, 2.0),
            slope: vec![rng.uniform_in(-3.0, 3.0)],
        };
        let margin = rng.uniform_in(0.0, 1.0);
        let u_nom = rng.uniform_in(-2.0, 2.0);
        let (lo, hi) = (-3.0, 3.0);
        let cfg = SafetyFilterConfig::new(margin, GeneratorSource::TrueGenerator)
            .with_bounds(vec![(lo, hi)]);
        let out = filter_control(&[u_nom], &gen, &cfg);
        if !out.feasible {
            continue;
        }
        assert!(out.constraint_value >= margin - 1e-9);
        let mut best: Option<f64> = None;
        let steps = ((hi - lo) / 1e-4) as usize;
        for k in 0..=steps {
            let u = lo + k as f64 * 1e-4;
            if gen.eval(&[u]) >= margin {
                match best {
                    Some(b) if (b - u_nom).abs() <= (u - u_nom).abs() => {}
                    _ => best = Some(u),
                }
            }
        }
        let best = best.expect("solver found a solution, grid must too");
        assert!(
            (out.u[0] - u_nom).abs() <= (best - u_nom).abs() + 1e-3,
            "solver {} vs grid {best}",
            out.u[0]
        );
    }
}

/// Feasible nominals pass through unchanged; growing the margin never
/// shrinks the correction.
pub fn check_filter_idempotence_and_margin_monotonicity() {
    let mut rng = RngStream::new(56, 0);
    for _ in 0..100 {
        let gen = AffineGenerator {
            intercept: rng.uniform_in(-1.0, 1.0),
            slope: vec![rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0)],
        };
        let u_nom = vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
        let mut prev = 0.0;
        for margin in [0.0, 0.2, 0.5, 1.0] {
            let cfg = SafetyFilterConfig::new(margin, GeneratorSource::TrueGenerator);
            let out = filter_control(&u_nom, &gen, &cfg);
            if !out.feasible {
                continue;
            }
            let again = filter_control(&out.u, &gen, &cfg);
            if gen.eval(&out.u) >= margin {
                // A feasible control passes through exactly.
                assert_eq!(again.u, out.u, "idempotence");
                assert!(!again.modified);
            } else {
                // The projection can land one rounding step below the
                // margin; re-filtering must not move it measurably.
                let drift =
                    ((again.u[0] - out.u[0]).powi(2) + (again.u[1] - out.u[1]).powi(2)).sqrt();
                assert!(drift <= 1e-12, "re-projection moved by {drift}");
            }
            let d = ((out.u[0] - u_nom[0]).powi(2) + (out.u[1] - u_nom[1]).powi(2)).sqrt();
            assert!(d >= prev - 1e-12, "margin monotonicity: {d} < {prev}");
            prev = d;
        }
    }
}

/// With the diffusion removed the whole stack degenerates exactly.
pub fn check_zero_noise_reductions() {
    let model = presets::pendulum_model(DiffusionVisibility::Known).with_zero_diffusion();
    let barrier = presets::pendulum_barrier();
    let region = presets::pendulum_region();

    // Dataset targets vanish to rounding.
    let ds = build_dataset(&model, &barrier, &region, 40, 4, 0.01, 3, "pendulum").unwrap();
    for (_, target) in &ds.samples {
        assert!(target.abs() <= 1e-11, "target {target}");
        assert!(target.abs() <= 0.1);
    }

    // A zero network reduces the learned generator to the Lie derivative.
    let params = MlpParams::zeros(&[2, 4, 1]);
    let mut rng = RngStream::new(9, 0);
    for _ in 0..50 {
        let x = [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
        let u = [rng.uniform_in(-3.0, 3.0)];
        let (lf, lg) = lie_parts(&model, &barrier, &x);
        assert_eq!(
            learned_generator(&params, &model, &barrier, &x, &u),
            lf + lg[0] * u[0]
        );
    }

    // The zero-noise integrator is the explicit Euler step, bit for bit.
    let mut rng = RngStream::new(10, 0);
    for _ in 0..50 {
        let x = [rng.uniform_in(-0.5, 0.5), rng.uniform_in(-0.5, 0.5)];
        let u = [rng.uniform_in(-2.0, 2.0)];
        let stepped = em_step(&model, &x, &u, 0.01, &mut rng).unwrap();
        assert_eq!(stepped, euler_drift_step(&model, &x, &u, 0.01));
    }
}

/// Identical configurations reproduce byte-identical reports end to end.
pub fn check_pipeline_determinism() {
    let mut cfg = ExperimentConfig::new(ExampleId::Cubic2d);
    cfg.point_count = 10;
    cfg.transitions = 300;
    cfg.epochs = 25;
    cfg.trials = 20;
    cfg.horizon_steps = 100;
    cfg.seed = 42;
    let a = scbf_core::experiments::reproduce_table(&cfg).unwrap();
    let b = scbf_core::experiments::reproduce_table(&cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.render_text(), b.render_text());

    let pol_a = build_example(&cfg);
    let pol_b = build_example(&cfg);
    let mut rng_a = RngStream::new(5, 123);
    let mut rng_b = RngStream::new(5, 123);
    let p: scbf_core::Policy = std::sync::Arc::new(|_: &[f64]| Some(vec![0.0]));
    let ta = scbf_core::simulate(&pol_a.model, &p, &[0.0, 0.1], 0.01, 100, &pol_a.barrier, &mut rng_a)
        .unwrap();
    let tb = scbf_core::simulate(&pol_b.model, &p, &[0.0, 0.1], 0.01, 100, &pol_b.barrier, &mut rng_b)
        .unwrap();
    assert_eq!(ta, tb);
}

/// The analytic diffusion correction of the pendulum at a point, used as the
/// oracle for fit checks.
pub fn pendulum_delta(theta: f64) -> f64 {
    -SQRT3 * (0.1 * theta) * (0.1 * theta)
}

/// The analytic diffusion correction of the cubic system.
pub fn cubic_delta(noise: f64, x2: f64) -> f64 {
    -(noise * x2) * (noise * x2)
}

/// Max absolute deviation of the trained net from the analytic correction
/// over a sweep of the relevant coordinate, at several values of the other
/// coordinate.
pub fn max_fit_error(params: &MlpParams, example: ExampleId, noise: f64) -> f64 {
    let mut worst = 0.0f64;
    match example {
        ExampleId::Pendulum => {
            for i in 0..=200 {
                let theta = -1.0 + i as f64 / 100.0;
                for omega in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                    let err = (mlp_forward(params, &[theta, omega]) - pendulum_delta(theta)).abs();
                    worst = worst.max(err);
                }
            }
        }
        ExampleId::Cubic2d => {
            for i in 0..=300 {
                let x2 = -1.5 + i as f64 / 100.0;
                for x1 in [-2.0, -1.0, 0.0, 1.0, 1.5] {
                    let err = (mlp_forward(params, &[x1, x2]) - cubic_delta(noise, x2)).abs();
                    worst = worst.max(err);
                }
            }
        }
    }
    worst
}
