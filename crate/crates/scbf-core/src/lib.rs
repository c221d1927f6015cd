//! Safety-critical control of stochastic systems whose diffusion is unknown.
//!
//! The toolkit simulates controlled Itô diffusions, estimates the barrier
//! generator from one-step transition samples, learns the diffusion
//! correction Δ(x) with a small network, and wraps nominal controllers in a
//! min-norm safety filter backed by the true, learned, or drift-only
//! generator. Two benchmark systems (an inverted pendulum and a planar cubic
//! system) ship as presets, together with seeded Monte Carlo studies that
//! compare the filter variants.

pub mod barrier;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod filter;
pub mod format;
pub mod learner;
pub mod mat;
pub mod presets;
pub mod rng;
pub mod sde;

pub use barrier::{
    generator_true, lie_parts, trace_correction_true, worst_case_bound, BarrierSpec,
};
pub use error::{Error, Result};
pub use estimator::{
    build_dataset, estimate_generator_at, lln_l1_curve, GeneratorDataset, SampleMode,
    SamplingRegion,
};
pub use experiments::{
    reproduce_table, run_variant, ExampleId, ExperimentConfig, ExperimentTable, SafetyReport,
    Variant,
};
pub use filter::{
    filter_control, make_policy, AffineGenerator, FilterOutcome, GeneratorSource,
    SafetyFilterConfig,
};
pub use learner::{
    learned_generator, load_params, loss_and_grad, mlp_forward, save_params, train, MlpParams,
    TrainConfig,
};
pub use rng::RngStream;
pub use sde::{
    em_step, sample_transitions, simulate, DiffusionVisibility, Policy, SdeModel,
    TerminationReason, Trajectory,
};
