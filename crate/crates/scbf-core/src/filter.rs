//! Min-norm safety filtering.
//!
//! A policy's nominal control is minimally modified so the (true, learned,
//! or drift-only) generator of the barrier satisfies `Âh(x, u) >= margin`.
//! With one affine constraint and optional box bounds the projection has an
//! exact closed form, solved by a one-constraint active-set sweep; no
//! external QP solver is involved and results are bit-reproducible.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::barrier::{lie_parts, trace_correction_true, BarrierSpec};
use crate::error::{Error, Result};
use crate::learner::{mlp_forward, MlpParams};
use crate::mat::{dot, norm_sq};
use crate::sde::{DiffusionVisibility, Policy, SdeModel};

/// A nominal state-feedback controller.
pub type NominalController = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Which generator backs the filter constraint.
///
/// `TrueGenerator` uses the exact diffusion correction (benchmark only, the
/// model must be visible). `Learned` substitutes the trained network.
/// `DeterministicLie` is the classical drift-only barrier condition
/// `L_f h + L_g h · u >= -decay_rate · h(x)`: it ignores the diffusion
/// entirely and relaxes the constraint toward the boundary, which is what
/// makes it unsafe under noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneratorSource {
    TrueGenerator,
    Learned,
    DeterministicLie { decay_rate: f64 },
}

/// What a filtered policy does at states where the constraint cannot be met
/// over the admissible control set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfeasibleAction {
    /// The trajectory ends there and is counted separately from unsafe
    /// exits.
    Terminate,
    /// Apply the least-violating admissible control and continue; each such
    /// step is counted.
    BestEffort,
}

/// Filter configuration: the constraint margin (the robustness allowance for
/// estimation error), the generator source, optional control bounds, and the
/// infeasibility policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyFilterConfig {
    pub margin: f64,
    pub generator_source: GeneratorSource,
    pub control_bounds: Option<Vec<(f64, f64)>>,
    pub infeasible_action: InfeasibleAction,
}

impl SafetyFilterConfig {
    pub fn new(margin: f64, generator_source: GeneratorSource) -> Self {
        assert!(margin >= 0.0, "margin must be nonnegative");
        Self {
            margin,
            generator_source,
            control_bounds: None,
            infeasible_action: InfeasibleAction::Terminate,
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        for (lo, hi) in &bounds {
            assert!(lo <= hi, "control bounds must be ordered");
        }
        self.control_bounds = Some(bounds);
        self
    }

    pub fn with_infeasible_action(mut self, action: InfeasibleAction) -> Self {
        self.infeasible_action = action;
        self
    }
}

/// An affine-in-control generator evaluation at a fixed state:
/// `Âh(x, u) = intercept + slope · u`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGenerator {
    pub intercept: f64,
    pub slope: Vec<f64>,
}

impl AffineGenerator {
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.intercept + dot(&self.slope, u)
    }
}

/// Result of one filtering step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub u: Vec<f64>,
    pub modified: bool,
    /// `Âh` at the returned control, under the same generator source.
    pub constraint_value: f64,
    pub feasible: bool,
}

fn clamp_to_bounds(u: &[f64], bounds: Option<&[(f64, f64)]>) -> Vec<f64> {
    match bounds {
        None => u.to_vec(),
        Some(bs) => u
            .iter()
            .zip(bs)
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect(),
    }
}

/// Minimally modify `u_nom` so that `gen.eval(u) >= cfg.margin`, staying in
/// the box bounds when present.
///
/// Solves `argmin ‖u - u_nom‖²part` subject to one affine constraint plus the
/// box: the unconstrained solution is the half-space projection
/// `u_nom + λ a`, and with bounds the multiplier λ is found by sweeping the
/// breakpoints where coordinates saturate. Infeasibility (the constraint is
/// unreachable over the box, or the slope vanishes while the intercept falls
/// short) is reported in the outcome, not an error: trajectories treat it as
/// terminal.
pub fn filter_control(
    u_nom: &[f64],
    gen: &AffineGenerator,
    cfg: &SafetyFilterConfig,
) -> FilterOutcome {
    assert_eq!(u_nom.len(), gen.slope.len(), "control dimension mismatch");
    let bounds = cfg.control_bounds.as_deref();
    let a = &gen.slope;

    // Start from the box projection of the nominal control.
    let u0 = clamp_to_bounds(u_nom, bounds);
    let c0 = gen.eval(&u0);
    if c0 >= cfg.margin {
        let modified = u0 != u_nom;
        return FilterOutcome {
            u: u0,
            modified,
            constraint_value: c0,
            feasible: true,
        };
    }

    let a_norm_sq = norm_sq(a);
    if a_norm_sq == 0.0 {
        // No control authority over the constraint.
        let modified = u0 != u_nom;
        return FilterOutcome {
            u: u0,
            modified,
            constraint_value: c0,
            feasible: false,
        };
    }

    match bounds {
        None => {
            let lambda = (cfg.margin - gen.eval(u_nom)) / a_norm_sq;
            let u: Vec<f64> = u_nom.iter().zip(a).map(|(v, ai)| v + lambda * ai).collect();
            let constraint_value = gen.eval(&u);
            if u.iter().all(|v| v.is_finite()) {
                FilterOutcome {
                    u,
                    modified: true,
                    constraint_value,
                    feasible: true,
                }
            } else {
                // The required correction overflowed; treat as infeasible.
                FilterOutcome {
                    u: u0,
                    modified: false,
                    constraint_value: c0,
                    feasible: false,
                }
            }
        }
        Some(bs) => {
            // Feasibility over the box: the constraint maximum is attained
            // at the corner selected by the signs of a.
            let mut best = gen.intercept;
            for (ai, (lo, hi)) in a.iter().zip(bs) {
                best += if *ai >= 0.0 { ai * hi } else { ai * lo };
            }
            if best < cfg.margin {
                // Least-violating control: the maximizing corner on the
                // coordinates with authority, the clamped nominal elsewhere.
                let u: Vec<f64> = a
                    .iter()
                    .zip(&u0)
                    .zip(bs)
                    .map(|((ai, v), (lo, hi))| {
                        if *ai > 0.0 {
                            *hi
                        } else if *ai < 0.0 {
                            *lo
                        } else {
                            *v
                        }
                    })
                    .collect();
                let modified = u != u_nom;
                let constraint_value = gen.eval(&u);
                return FilterOutcome {
                    u,
                    modified,
                    constraint_value,
                    feasible: false,
                };
            }

            // g(λ) = gen(clamp(u_nom + λ a)) is piecewise linear and
            // nondecreasing in λ >= 0. Each coordinate contributes up to two
            // kinks: where it leaves one clamp (a nominal outside the box)
            // and where it saturates at the other.
            let mut breakpoints: Vec<f64> = a
                .iter()
                .zip(u_nom)
                .zip(bs)
                .flat_map(|((ai, v), (lo, hi))| {
                    if *ai != 0.0 {
                        vec![(lo - v) / ai, (hi - v) / ai]
                    } else {
                        vec![]
                    }
                })
                .filter(|t| *t > 0.0)
                .collect();
            breakpoints.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoints"));

            let eval_at = |lambda: f64| -> Vec<f64> {
                u_nom
                    .iter()
                    .zip(a)
                    .zip(bs)
                    .map(|((v, ai), (lo, hi))| (v + lambda * ai).clamp(*lo, *hi))
                    .collect()
            };

            let mut lambda_prev = 0.0;
            let mut g_prev = gen.eval(&eval_at(0.0));
            for &bp in breakpoints.iter() {
                let g_bp = gen.eval(&eval_at(bp));
                if g_bp >= cfg.margin {
                    // Crossed inside (lambda_prev, bp]: the segment is
                    // linear, interpolate the exact multiplier.
                    let t = if g_bp > g_prev {
                        (cfg.margin - g_prev) / (g_bp - g_prev)
                    } else {
                        1.0
                    };
                    let lambda = lambda_prev + t * (bp - lambda_prev);
                    let u = eval_at(lambda);
                    let constraint_value = gen.eval(&u);
                    return FilterOutcome {
                        u,
                        modified: true,
                        constraint_value,
                        feasible: true,
                    };
                }
                lambda_prev = bp;
                g_prev = g_bp;
            }
            // Last open segment: slope is Σ a_i² over unsaturated coords.
            let u_last = eval_at(lambda_prev);
            let slope: f64 = a
                .iter()
                .zip(&u_last)
                .zip(bs)
                .filter(|((ai, v), (lo, hi))| {
                    (**ai > 0.0 && **v < *hi) || (**ai < 0.0 && **v > *lo)
                })
                .map(|((ai, _), _)| ai * ai)
                .sum();
            debug_assert!(slope > 0.0, "feasible but no free coordinate");
            let lambda = lambda_prev + (cfg.margin - g_prev) / slope;
            let u = eval_at(lambda);
            let constraint_value = gen.eval(&u);
            FilterOutcome {
                u,
                modified: true,
                constraint_value,
                feasible: true,
            }
        }
    }
}

/// Evaluate the configured generator source at `x` as an affine function of
/// the control.
pub fn affine_generator_at(
    source: &GeneratorSource,
    model: &SdeModel,
    barrier: &BarrierSpec,
    params: Option<&MlpParams>,
    x: &[f64],
) -> Result<AffineGenerator> {
    let (lf, lg) = lie_parts(model, barrier, x);
    let intercept = match source {
        GeneratorSource::TrueGenerator => lf + trace_correction_true(model, barrier, x)?,
        GeneratorSource::Learned => {
            let p = params.ok_or_else(|| {
                Error::config("params", "learned generator source requires trained weights")
            })?;
            lf + mlp_forward(p, x)
        }
        GeneratorSource::DeterministicLie { decay_rate } => lf + decay_rate * barrier.value(x),
    };
    Ok(AffineGenerator {
        intercept,
        slope: lg,
    })
}

/// Wrap a nominal controller in the safety filter, producing a policy for
/// the simulator. Construction fails early if the source's requirements are
/// not met (missing weights, or a hidden diffusion for the true-generator
/// source), so the returned closure itself cannot violate visibility.
pub fn make_policy(
    cfg: &SafetyFilterConfig,
    model: &SdeModel,
    barrier: &BarrierSpec,
    params: Option<&MlpParams>,
    nominal: NominalController,
) -> Result<Policy> {
    make_policy_counted(cfg, model, barrier, params, nominal, Arc::new(AtomicU64::new(0)))
}

/// As [`make_policy`], incrementing `infeasible_steps` every time the filter
/// cannot meet the constraint (under both infeasibility actions, so reports
/// can audit best-effort runs).
pub fn make_policy_counted(
    cfg: &SafetyFilterConfig,
    model: &SdeModel,
    barrier: &BarrierSpec,
    params: Option<&MlpParams>,
    nominal: NominalController,
    infeasible_steps: Arc<AtomicU64>,
) -> Result<Policy> {
    match cfg.generator_source {
        GeneratorSource::Learned => {
            if params.is_none() {
                return Err(Error::config(
                    "params",
                    "learned generator source requires trained weights",
                ));
            }
        }
        GeneratorSource::TrueGenerator => {
            if model.diffusion_visibility() != DiffusionVisibility::Known {
                return Err(Error::VisibilityViolation);
            }
        }
        GeneratorSource::DeterministicLie { .. } => {}
    }

    let cfg = cfg.clone();
    let model = model.clone();
    let barrier = barrier.clone();
    let params = params.cloned();

    Ok(Arc::new(move |x: &[f64]| {
        let gen = affine_generator_at(&cfg.generator_source, &model, &barrier, params.as_ref(), x)
            .expect("source requirements checked at construction");
        let u_nom = nominal(x);
        let outcome = filter_control(&u_nom, &gen, &cfg);
        if outcome.feasible {
            Some(outcome.u)
        } else {
            infeasible_steps.fetch_add(1, Ordering::Relaxed);
            match cfg.infeasible_action {
                InfeasibleAction::Terminate => None,
                InfeasibleAction::BestEffort => Some(outcome.u),
            }
        }
    }))
}

/// Proportional-derivative nominal for the pendulum: `u = -k1 θ - k2 ω`.
/// Deliberately too weak to stabilize the upright equilibrium on its own at
/// the default gains, so safety rests entirely on the filter.
pub fn pendulum_nominal(k1: f64, k2: f64) -> NominalController {
    Arc::new(move |x: &[f64]| vec![-k1 * x[0] - k2 * x[1]])
}

pub const PENDULUM_PD_GAINS: (f64, f64) = (4.0, 4.0);

/// Min-norm control-Lyapunov nominal for the cubic system with
/// `V = ½‖x‖²`: picks the smallest `u` with `V̇ <= -γ V`, and `u = 0` on the
/// uncontrollable slice `|x2| < 1e-6`.
pub fn cubic_clf_nominal(gamma: f64) -> NominalController {
    Arc::new(move |x: &[f64]| {
        let (x1, x2) = (x[0], x[1]);
        if x2.abs() < 1e-6 {
            return vec![0.0];
        }
        let v = 0.5 * (x1 * x1 + x2 * x2);
        let vdot_drift = -0.6 * x1 * x1 - x1 * x2 + x1 * x1 * x1 * x2;
        let budget = -gamma * v - vdot_drift;
        if vdot_drift <= -gamma * v {
            vec![0.0]
        } else {
            vec![budget / (x2 * x2)]
        }
    })
}

pub const CUBIC_CLF_GAMMA: f64 = 1.0;
