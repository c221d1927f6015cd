//! Deterministic, splittable random number streams.
//!
//! Every stochastic component draws from an [`RngStream`] identified by a
//! `(seed, stream_id)` pair. Equal identifiers reproduce the same variate
//! sequence bit-for-bit on a given platform; distinct stream ids give
//! statistically independent sequences, so Monte Carlo trials and dataset
//! points can run in parallel without sharing generator state and without the
//! result depending on scheduling.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stage tags that carve the 64-bit stream-id space into non-overlapping
/// namespaces. Callers combine a tag with a within-stage index.
pub mod streams {
    /// Sampling of dataset base points.
    pub const DATASET_POINTS: u64 = 1 << 56;
    /// One stream per dataset point for its transition batch; add the point
    /// index.
    pub const DATASET_TRANSITIONS: u64 = 2 << 56;
    /// One stream per Monte Carlo trial; add `VARIANT_STRIDE * variant` plus
    /// the trial index.
    pub const TRIALS: u64 = 3 << 56;
    /// Estimator diagnostics (convergence and bias sweeps).
    pub const DIAGNOSTICS: u64 = 4 << 56;
    /// Network weight initialization.
    pub const WEIGHT_INIT: u64 = 5 << 56;
    /// Single rollouts exported as figure data.
    pub const FIGURES: u64 = 6 << 56;
    /// Per-trial start states, shared across variants so the comparison is
    /// paired.
    pub const TRIAL_STARTS: u64 = 7 << 56;

    /// Offset between per-variant blocks inside the `TRIALS` namespace.
    pub const VARIANT_STRIDE: u64 = 1 << 40;
}

/// A seeded, independently addressable Gaussian/uniform stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw on the open interval (0, 1).
    ///
    /// Uses the top 53 bits of one 64-bit word, offset by half a step, so the
    /// endpoints are never produced and the quantile transform stays finite.
    pub fn uniform_open(&mut self) -> f64 {
        let k = self.rng.next_u64() >> 11;
        (k as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0) // 2^-53
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_open()
    }

    /// Standard normal draw via the inverse CDF. One uniform per variate, no
    /// rejection and no cached spare, so consumption is exactly countable.
    pub fn normal(&mut self) -> f64 {
        standard_normal_quantile(self.uniform_open())
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }
}

/// Rational approximation to the standard normal quantile (Acklam's
/// coefficients), with absolute relative error below 1.2e-9 on (0, 1).
pub fn standard_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument must lie in (0, 1)");

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    }
}
