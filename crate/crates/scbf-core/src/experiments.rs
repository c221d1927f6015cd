//! End-to-end benchmark studies: dataset build, training, and seeded Monte
//! Carlo evaluation of the three filter variants on the built-in systems,
//! with text/CSV emission for tables and figure data.

use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use rayon::prelude::*;

use crate::barrier::{self, BarrierSpec};
use crate::error::{Error, Result};
use crate::estimator::{build_dataset, GeneratorDataset, SamplingRegion};
use crate::filter::{
    cubic_clf_nominal, make_policy_counted, pendulum_nominal, GeneratorSource, InfeasibleAction,
    NominalController, SafetyFilterConfig, CUBIC_CLF_GAMMA, PENDULUM_PD_GAINS,
};
use crate::format;
use crate::learner::{mlp_forward, train, MlpParams, TrainConfig};
use crate::presets;
use crate::rng::{streams, RngStream};
use crate::sde::{simulate, DiffusionVisibility, SdeModel, TerminationReason, Trajectory};

/// Decay rate of the drift-only baseline's class-K relaxation.
pub const CBF_DECAY_RATE: f64 = 1.0;

/// Which benchmark system an experiment runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    Pendulum,
    Cubic2d,
}

impl ExampleId {
    pub fn label(&self) -> &'static str {
        match self {
            ExampleId::Pendulum => "pendulum",
            ExampleId::Cubic2d => "cubic2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(ExampleId::Pendulum),
            "cubic2d" => Ok(ExampleId::Cubic2d),
            other => Err(Error::config(
                "example",
                format!("unknown example `{other}` (expected pendulum or cubic2d)"),
            )),
        }
    }
}

/// Controller variant under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// True-generator filter (needs the visible diffusion; benchmark
    /// reference).
    Scbf,
    /// Learned-generator filter (works against hidden dynamics).
    Ddscbf,
    /// Drift-only classical barrier filter (ignores the diffusion).
    Cbf,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Scbf, Variant::Ddscbf, Variant::Cbf];

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Scbf => "scbf",
            Variant::Ddscbf => "ddscbf",
            Variant::Cbf => "cbf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scbf" => Ok(Variant::Scbf),
            "ddscbf" => Ok(Variant::Ddscbf),
            "cbf" => Ok(Variant::Cbf),
            other => Err(Error::config(
                "variant",
                format!("unknown variant `{other}` (expected scbf, ddscbf or cbf)"),
            )),
        }
    }

    fn index(&self) -> u64 {
        match self {
            Variant::Scbf => 0,
            Variant::Ddscbf => 1,
            Variant::Cbf => 2,
        }
    }
}

/// How Monte Carlo trials pick their initial state.
#[derive(Debug, Clone, PartialEq)]
pub enum StartMode {
    /// Every trial starts from the same state.
    Fixed(Vec<f64>),
    /// Each trial draws its start uniformly from the safe set (rejection
    /// sampling over the example's region box). Starts are keyed by the
    /// trial index alone, so all variants face the same start sequence.
    RandomInSafeSet,
}

/// Which nominal controller the Monte Carlo trials wrap in the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialNominal {
    /// The example's objective controller (pendulum PD, cubic CLF).
    Objective,
    /// Zero control: the trials measure the filters alone against the
    /// uncontrolled drift.
    Zero,
}

/// Full experiment configuration. Defaults reproduce the built-in studies:
/// 200 sample points with 50000 transitions each at dt = 0.01, a 500-epoch
/// fit, and 1000 ten-second trials per variant from random safe starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub example: ExampleId,
    /// Noise gain for the cubic system (0.1 or 0.15); ignored by the
    /// pendulum, whose diffusion is fixed.
    pub cubic_noise: f64,
    pub point_count: usize,
    pub transitions: usize,
    pub dt: f64,
    pub epochs: usize,
    pub trials: usize,
    /// Base robustness margin ε: the exact-generator filter enforces
    /// `Âh >= margin`.
    pub margin: f64,
    /// Extra allowance ς for the learned generator's approximation error;
    /// the learned filter enforces `Âh >= margin + learned_margin_extra`.
    pub learned_margin_extra: f64,
    pub horizon_steps: usize,
    pub seed: u64,
    pub start: StartMode,
    /// Minimum barrier value of random start states; keeps trials from
    /// beginning within one noise step of the boundary.
    pub start_clearance: f64,
    /// Box that random starts are drawn from; defaults to the example's
    /// sampling region.
    pub start_box: Option<Vec<(f64, f64)>>,
    /// Nominal controller used by the trials.
    pub trial_nominal: TrialNominal,
    /// Admissible control box for the filter; `None` leaves it unbounded.
    pub filter_bounds: Option<Vec<(f64, f64)>>,
    /// What filtered policies do at constraint-infeasible states.
    pub infeasible_action: InfeasibleAction,
    /// Class-K slope of the drift-only baseline's relaxation.
    pub cbf_decay: f64,
    /// Margin of the drift-only baseline's constraint.
    pub cbf_margin: f64,
}

impl ExperimentConfig {
    pub fn new(example: ExampleId) -> Self {
        let (x0, trial_nominal, filter_bounds, infeasible_action) = match example {
            // The pendulum's weak PD never saturates and its trials never
            // hit an infeasible state from the default start, so they run
            // unbounded with terminal infeasibility.
            ExampleId::Pendulum => (
                presets::PENDULUM_X0.to_vec(),
                TrialNominal::Objective,
                None,
                InfeasibleAction::Terminate,
            ),
            // The cubic system loses control authority on the whole slice
            // x2 = 0, so its trials bound the filter and continue with the
            // least-violating control there, counting every such step. The
            // trials measure the filters against the bare drift; the
            // objective controller is strong enough to mask the noise
            // entirely.
            ExampleId::Cubic2d => (
                presets::CUBIC_X0.to_vec(),
                TrialNominal::Zero,
                Some(vec![(-5.0, 5.0)]),
                InfeasibleAction::BestEffort,
            ),
        };
        Self {
            example,
            cubic_noise: 0.1,
            point_count: 200,
            transitions: 50_000,
            dt: 0.01,
            epochs: match example {
                ExampleId::Pendulum => 500,
                // The cubic correction has a larger amplitude over its
                // region and needs a somewhat longer fit.
                ExampleId::Cubic2d => 800,
            },
            trials: 1000,
            margin: 0.001,
            learned_margin_extra: 0.0021,
            horizon_steps: 1000,
            seed: 0,
            start: StartMode::Fixed(x0),
            start_clearance: 0.02,
            start_box: None,
            trial_nominal,
            filter_bounds,
            infeasible_action,
            cbf_decay: CBF_DECAY_RATE,
            cbf_margin: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.example == ExampleId::Cubic2d
            && self.cubic_noise != 0.1
            && self.cubic_noise != 0.15
        {
            return Err(Error::config(
                "noise",
                format!(
                    "cubic2d supports noise gains 0.1 and 0.15, got {}",
                    self.cubic_noise
                ),
            ));
        }
        for (name, ok) in [
            ("N", self.point_count >= 1),
            ("n", self.transitions >= 1),
            ("dt", self.dt > 0.0),
            ("epochs", self.epochs >= 1),
            ("trials", self.trials >= 1),
            ("margin", self.margin >= 0.0),
            ("horizon_steps", self.horizon_steps >= 1),
        ] {
            if !ok {
                return Err(Error::config(name, "must be positive"));
            }
        }
        Ok(())
    }

    fn noise_label(&self) -> String {
        match self.example {
            ExampleId::Pendulum => "0.1theta".to_string(),
            ExampleId::Cubic2d => format!("{}x2", self.cubic_noise),
        }
    }
}

/// A benchmark system bundle: true dynamics (visible diffusion), barrier
/// with its supremum resolved, sampling region, start state and nominal
/// controller.
pub struct ExampleSystem {
    pub model: SdeModel,
    pub barrier: BarrierSpec,
    pub region: SamplingRegion,
    pub x0: Vec<f64>,
    pub nominal: NominalController,
}

/// Build the system for a configuration. The cubic barrier's supremum is not
/// analytic and is bounded on a dense grid over the sampling box.
pub fn build_example(cfg: &ExperimentConfig) -> ExampleSystem {
    match cfg.example {
        ExampleId::Pendulum => ExampleSystem {
            model: presets::pendulum_model(DiffusionVisibility::Known),
            barrier: presets::pendulum_barrier(),
            region: presets::pendulum_region(),
            x0: presets::PENDULUM_X0.to_vec(),
            nominal: pendulum_nominal(PENDULUM_PD_GAINS.0, PENDULUM_PD_GAINS.1),
        },
        ExampleId::Cubic2d => {
            let barrier = presets::cubic_barrier();
            let region = presets::cubic_region();
            let sup = barrier::sup_on_grid(&barrier, region.bounds(), 0.01);
            ExampleSystem {
                model: presets::cubic_model(cfg.cubic_noise, DiffusionVisibility::Known),
                barrier: barrier.with_sup(sup.max_h),
                region,
                x0: presets::CUBIC_X0.to_vec(),
                nominal: cubic_clf_nominal(CUBIC_CLF_GAMMA),
            }
        }
    }
}

/// The nominal the trials wrap, per configuration.
fn trial_nominal(
    cfg: &ExperimentConfig,
    sys: &ExampleSystem,
) -> NominalController {
    match cfg.trial_nominal {
        TrialNominal::Objective => sys.nominal.clone(),
        TrialNominal::Zero => {
            let p = sys.model.control_dim();
            Arc::new(move |_: &[f64]| vec![0.0; p])
        }
    }
}

/// Build the training dataset for a configuration.
pub fn build_experiment_dataset(cfg: &ExperimentConfig) -> Result<GeneratorDataset> {
    cfg.validate()?;
    let sys = build_example(cfg);
    build_dataset(
        &sys.model,
        &sys.barrier,
        &sys.region,
        cfg.point_count,
        cfg.transitions,
        cfg.dt,
        cfg.seed,
        cfg.example.label(),
    )
}

/// Train the correction network for a configuration (dataset built
/// in-pipeline).
pub fn train_experiment_model(cfg: &ExperimentConfig) -> Result<(MlpParams, Vec<f64>)> {
    let dataset = build_experiment_dataset(cfg)?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    train(&dataset, &train_cfg)
}

/// Monte Carlo safety results for one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyReport {
    pub example: String,
    pub noise: String,
    pub variant: Variant,
    pub trials: usize,
    pub safe_count: usize,
    pub unsafe_count: usize,
    /// Trials terminated because the filter was infeasible (terminal mode).
    pub infeasible_count: usize,
    /// Total constraint-infeasible steps across all trials (any mode).
    pub infeasible_steps: u64,
    pub safe_rate: f64,
    pub theoretical_bound: f64,
    /// Mean time of exit among unsafe runs, when any.
    pub mean_exit_time: Option<f64>,
}

/// The filter configuration a variant runs with. The generator-backed
/// variants enforce the margin; the drift-only baseline uses the classical
/// relaxed condition with zero margin.
pub fn variant_filter_config(cfg: &ExperimentConfig, variant: Variant) -> SafetyFilterConfig {
    let mut filter_cfg = match variant {
        Variant::Scbf => SafetyFilterConfig::new(cfg.margin, GeneratorSource::TrueGenerator),
        Variant::Ddscbf => SafetyFilterConfig::new(
            cfg.margin + cfg.learned_margin_extra,
            GeneratorSource::Learned,
        ),
        Variant::Cbf => SafetyFilterConfig::new(
            cfg.cbf_margin,
            GeneratorSource::DeterministicLie {
                decay_rate: cfg.cbf_decay,
            },
        ),
    };
    if let Some(bounds) = &cfg.filter_bounds {
        filter_cfg = filter_cfg.with_bounds(bounds.clone());
    }
    filter_cfg.with_infeasible_action(cfg.infeasible_action)
}

/// Build the policy a variant uses. Only the true-generator variant sees the
/// visible model; the learned and drift-only variants are constructed
/// against the hidden view and structurally cannot evaluate the diffusion.
pub fn variant_policy(
    cfg: &ExperimentConfig,
    variant: Variant,
    sys: &ExampleSystem,
    params: Option<&MlpParams>,
) -> Result<crate::sde::Policy> {
    variant_policy_counted(cfg, variant, sys, params, Arc::new(AtomicU64::new(0)))
}

/// As [`variant_policy`], counting constraint-infeasible steps.
pub fn variant_policy_counted(
    cfg: &ExperimentConfig,
    variant: Variant,
    sys: &ExampleSystem,
    params: Option<&MlpParams>,
    infeasible_steps: Arc<AtomicU64>,
) -> Result<crate::sde::Policy> {
    let filter_cfg = variant_filter_config(cfg, variant);
    let model_view = match variant {
        Variant::Scbf => sys.model.clone(),
        Variant::Ddscbf | Variant::Cbf => sys.model.with_hidden_diffusion(),
    };
    make_policy_counted(
        &filter_cfg,
        &model_view,
        &sys.barrier,
        params,
        trial_nominal(cfg, sys),
        infeasible_steps,
    )
}

/// Draw a start state uniformly from the safe-set interior by rejection
/// over the region box. Keyed by `(seed, trial)` alone so every variant
/// faces the same start sequence.
pub fn trial_start(
    cfg: &ExperimentConfig,
    sys: &ExampleSystem,
    trial: usize,
) -> Vec<f64> {
    match &cfg.start {
        StartMode::Fixed(x0) => x0.clone(),
        StartMode::RandomInSafeSet => {
            let bounds = cfg
                .start_box
                .as_deref()
                .unwrap_or_else(|| sys.region.bounds());
            let mut rng = RngStream::new(cfg.seed, streams::TRIAL_STARTS + trial as u64);
            loop {
                let x: Vec<f64> = bounds
                    .iter()
                    .map(|(lo, hi)| rng.uniform_in(*lo, *hi))
                    .collect();
                if sys.barrier.value(&x) > cfg.start_clearance {
                    return x;
                }
            }
        }
    }
}

/// Run the seeded Monte Carlo trials of one variant against the true noisy
/// dynamics. `params` must be provided for the learned variant.
///
/// The reported bound is the worst-case invariance probability averaged over
/// the trial start states (for a fixed start this is just `h(x0)/sup h`).
pub fn run_variant_with(
    cfg: &ExperimentConfig,
    variant: Variant,
    params: Option<&MlpParams>,
) -> Result<SafetyReport> {
    cfg.validate()?;
    let sys = build_example(cfg);
    let infeasible_steps = Arc::new(AtomicU64::new(0));
    let policy = variant_policy_counted(cfg, variant, &sys, params, infeasible_steps.clone())?;

    let starts: Vec<Vec<f64>> = (0..cfg.trials)
        .map(|trial| trial_start(cfg, &sys, trial))
        .collect();
    let bound = starts
        .iter()
        .map(|x0| barrier::worst_case_bound(&sys.barrier, x0))
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum::<f64>()
        / cfg.trials as f64;

    let trajectories: Result<Vec<Trajectory>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let stream_id =
                streams::TRIALS + variant.index() * streams::VARIANT_STRIDE + trial as u64;
            let mut rng = RngStream::new(cfg.seed, stream_id);
            simulate(
                &sys.model,
                &policy,
                &starts[trial],
                cfg.dt,
                cfg.horizon_steps,
                &sys.barrier,
                &mut rng,
            )
        })
        .collect();
    let trajectories = trajectories?;

    let mut safe = 0usize;
    let mut infeasible = 0usize;
    let mut exit_times = Vec::new();
    for t in &trajectories {
        match t.terminated {
            TerminationReason::HorizonReached => safe += 1,
            TerminationReason::FilterInfeasible => infeasible += 1,
            TerminationReason::ExitedSafeSet => {
                let step = t.exit_step.expect("unsafe trajectory records its exit");
                exit_times.push(step as f64 * cfg.dt);
            }
        }
    }
    let unsafe_count = exit_times.len();
    let mean_exit_time = if exit_times.is_empty() {
        None
    } else {
        Some(exit_times.iter().sum::<f64>() / exit_times.len() as f64)
    };

    Ok(SafetyReport {
        example: cfg.example.label().to_string(),
        noise: cfg.noise_label(),
        variant,
        trials: cfg.trials,
        safe_count: safe,
        unsafe_count,
        infeasible_count: infeasible,
        infeasible_steps: infeasible_steps.load(std::sync::atomic::Ordering::Relaxed),
        safe_rate: safe as f64 / cfg.trials as f64,
        theoretical_bound: bound,
        mean_exit_time,
    })
}

/// As [`run_variant_with`], training the correction network in-pipeline when
/// the learned variant asks for it.
pub fn run_variant(cfg: &ExperimentConfig, variant: Variant) -> Result<SafetyReport> {
    match variant {
        Variant::Ddscbf => {
            let (params, _) = train_experiment_model(cfg)?;
            run_variant_with(cfg, variant, Some(&params))
        }
        _ => run_variant_with(cfg, variant, None),
    }
}

/// A full comparison table: every variant, and for the cubic system both
/// noise gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentTable {
    pub reports: Vec<SafetyReport>,
}

/// Run the complete study for a configuration: per noise setting, build the
/// dataset, fit the correction, then evaluate all three variants.
pub fn reproduce_table(cfg: &ExperimentConfig) -> Result<ExperimentTable> {
    cfg.validate()?;
    let noise_settings: Vec<f64> = match cfg.example {
        ExampleId::Pendulum => vec![cfg.cubic_noise],
        ExampleId::Cubic2d => vec![0.1, 0.15],
    };
    let mut reports = Vec::new();
    for noise in noise_settings {
        let mut cell_cfg = cfg.clone();
        cell_cfg.cubic_noise = noise;
        let (params, _) = train_experiment_model(&cell_cfg)?;
        for variant in Variant::ALL {
            reports.push(run_variant_with(&cell_cfg, variant, Some(&params))?);
        }
    }
    Ok(ExperimentTable { reports })
}

impl ExperimentTable {
    /// Aligned text table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:<10} {:<8} {:>7} {:>6} {:>8} {:>11} {:>12} {:>7} {:>8} {:>13}\n",
            "example",
            "noise",
            "variant",
            "trials",
            "safe",
            "unsafe",
            "infeas_runs",
            "infeas_steps",
            "rate%",
            "bound%",
            "mean_exit_s"
        ));
        for r in &self.reports {
            out.push_str(&format!(
                "{:<10} {:<10} {:<8} {:>7} {:>6} {:>8} {:>11} {:>12} {:>7.1} {:>8.1} {:>13}\n",
                r.example,
                r.noise,
                r.variant.label(),
                r.trials,
                r.safe_count,
                r.unsafe_count,
                r.infeasible_count,
                r.infeasible_steps,
                100.0 * r.safe_rate,
                100.0 * r.theoretical_bound,
                r.mean_exit_time
                    .map(|t| format!("{t:.2}"))
                    .unwrap_or_else(|| "-".to_string()),
            ));
        }
        out
    }

    /// CSV with one row per report.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "example,noise,variant,trials,safe_count,unsafe_count,infeasible_count,infeasible_steps,safe_rate,theoretical_bound,mean_exit_time\n",
        );
        for r in &self.reports {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.example,
                r.noise,
                r.variant.label(),
                r.trials,
                r.safe_count,
                r.unsafe_count,
                r.infeasible_count,
                r.infeasible_steps,
                format::float(r.safe_rate),
                format::float(r.theoretical_bound),
                r.mean_exit_time.map(format::float).unwrap_or_default(),
            ));
        }
        out
    }
}

/// Aligned series for the correction-fit figure: for each dataset sample,
/// the relevant coordinate, the training target, the analytic correction,
/// and the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct FitFigureData {
    /// Index of the coordinate the correction effectively depends on.
    pub coord_index: usize,
    /// Rows `(coordinate, target, analytic, network)`, sorted by coordinate.
    pub rows: Vec<(f64, f64, f64, f64)>,
}

/// Compute the fit-figure series. Needs the visible model for the analytic
/// column; this is harness-side visibility, the network itself never saw the
/// diffusion.
pub fn emit_fit_figure_data(
    example: ExampleId,
    sys: &ExampleSystem,
    params: &MlpParams,
    dataset: &GeneratorDataset,
) -> Result<FitFigureData> {
    let coord_index = match example {
        ExampleId::Pendulum => 0,
        ExampleId::Cubic2d => 1,
    };
    let mut rows = Vec::with_capacity(dataset.len());
    for (x, target) in &dataset.samples {
        let analytic = barrier::trace_correction_true(&sys.model, &sys.barrier, x)?;
        let network = mlp_forward(params, x);
        rows.push((x[coord_index], *target, analytic, network));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite coordinates"));
    Ok(FitFigureData { coord_index, rows })
}

impl FitFigureData {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("coord,target,analytic,network\n");
        for (c, t, a, n) in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                format::float(*c),
                format::float(*t),
                format::float(*a),
                format::float(*n)
            ));
        }
        out
    }
}

/// One seeded rollout for trajectory figures.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFigureData {
    pub trajectory: Trajectory,
    pub barrier_values: Vec<f64>,
}

/// Simulate a single rollout of a variant and collect `h` along it.
pub fn emit_trajectory_figure_data(
    cfg: &ExperimentConfig,
    variant: Variant,
    params: Option<&MlpParams>,
    seed: u64,
) -> Result<TrajectoryFigureData> {
    cfg.validate()?;
    let sys = build_example(cfg);
    let policy = variant_policy(cfg, variant, &sys, params)?;
    let mut rng = RngStream::new(seed, streams::FIGURES);
    let trajectory = simulate(
        &sys.model,
        &policy,
        &sys.x0,
        cfg.dt,
        cfg.horizon_steps,
        &sys.barrier,
        &mut rng,
    )?;
    let barrier_values = trajectory
        .states
        .iter()
        .map(|x| sys.barrier.value(x))
        .collect();
    Ok(TrajectoryFigureData {
        trajectory,
        barrier_values,
    })
}

/// Deterministic rollout of the example's objective controller on the
/// noise-free dynamics, optionally behind the drift-only filter, from the
/// regulation demo start. This is the baseline sanity picture: without noise
/// the drift-only filter keeps the trajectory safe and the objective
/// controller converges.
pub fn emit_objective_demo_data(
    cfg: &ExperimentConfig,
    filtered: bool,
) -> Result<TrajectoryFigureData> {
    cfg.validate()?;
    let sys = build_example(cfg);
    let model = sys.model.with_zero_diffusion();
    let x0 = match cfg.example {
        ExampleId::Pendulum => presets::PENDULUM_X0.to_vec(),
        ExampleId::Cubic2d => presets::CUBIC_CLF_DEMO_X0.to_vec(),
    };
    let policy: crate::sde::Policy = if filtered {
        let filter_cfg = SafetyFilterConfig::new(
            cfg.cbf_margin,
            GeneratorSource::DeterministicLie {
                decay_rate: cfg.cbf_decay,
            },
        );
        make_policy_counted(
            &filter_cfg,
            &model.with_hidden_diffusion(),
            &sys.barrier,
            None,
            sys.nominal.clone(),
            Arc::new(AtomicU64::new(0)),
        )?
    } else {
        let nominal = sys.nominal.clone();
        Arc::new(move |x: &[f64]| Some(nominal(x)))
    };
    let mut rng = RngStream::new(cfg.seed, streams::FIGURES);
    let trajectory = simulate(
        &model,
        &policy,
        &x0,
        cfg.dt,
        cfg.horizon_steps,
        &sys.barrier,
        &mut rng,
    )?;
    let barrier_values = trajectory
        .states
        .iter()
        .map(|x| sys.barrier.value(x))
        .collect();
    Ok(TrajectoryFigureData {
        trajectory,
        barrier_values,
    })
}

impl TrajectoryFigureData {
    pub fn to_csv(&self) -> String {
        let t = &self.trajectory;
        let n = t.states[0].len();
        let p = if t.controls.is_empty() {
            0
        } else {
            t.controls[0].len()
        };
        let mut header = String::from("t");
        for i in 0..n {
            header.push_str(&format!(",x{}", i + 1));
        }
        for j in 0..p {
            header.push_str(&format!(",u{}", j + 1));
        }
        header.push_str(",h\n");
        let mut out = header;
        for (k, x) in t.states.iter().enumerate() {
            out.push_str(&format::float(t.times[k]));
            for v in x {
                out.push(',');
                out.push_str(&format::float(*v));
            }
            for j in 0..p {
                out.push(',');
                // Controls are one per step; the final state repeats the
                // last applied control for alignment.
                let row = k.min(t.controls.len().saturating_sub(1));
                out.push_str(&format::float(t.controls[row][j]));
            }
            out.push(',');
            out.push_str(&format::float(self.barrier_values[k]));
            out.push('\n');
        }
        out
    }

    pub fn min_barrier_value(&self) -> f64 {
        self.barrier_values
            .iter()
            .fold(f64::INFINITY, |a, b| a.min(*b))
    }
}
