//! Monte-Carlo coverage estimation with exact binomial certificates.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::BoundError;
use crate::gp::{GpModel, StateBox};

/// Trials per RNG stream. Each chunk derives its own ChaCha stream from the
/// base seed, so the hit count is independent of how rayon schedules chunks.
const CHUNK: u64 = 4096;

/// An error envelope around the posterior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", content = "values", rename_all = "snake_case")]
pub enum Envelope {
    /// Fixed per-dimension widths: a point is covered when
    /// `|f_i(x) - mean_i(x)| <= w_i` for every `i`.
    Constant(Vec<f64>),
    /// Per-dimension multiples of the posterior std-dev: covered when
    /// `|f_i(x) - mean_i(x)| <= s_i * std_i(x)` for every `i`.
    Pointwise(Vec<f64>),
}

impl Envelope {
    fn values(&self) -> &[f64] {
        match self {
            Envelope::Constant(v) | Envelope::Pointwise(v) => v,
        }
    }

    pub fn dim(&self) -> usize {
        self.values().len()
    }

    fn validate(&self, n: usize) -> Result<(), BoundError> {
        if self.dim() != n {
            return Err(BoundError::DimensionMismatch(format!(
                "envelope has {} dimensions but the model has {n}",
                self.dim()
            )));
        }
        if let Some(v) = self.values().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(BoundError::InvalidParameter(format!(
                "envelope entries must be finite and non-negative, got {v}"
            )));
        }
        Ok(())
    }
}

/// Outcome of a Monte-Carlo coverage run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// The envelope that was tested (widths or std-dev multiples).
    pub envelope: Envelope,
    pub hits: u64,
    pub trials: u64,
    /// Clopper-Pearson interval on the coverage probability.
    pub interval: [f64; 2],
    /// Confidence level of the interval.
    pub confidence_level: f64,
    pub seed: u64,
}

impl CoverageReport {
    /// Raw hit rate.
    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }
}

/// Estimates the probability that a state drawn uniformly from `domain` has
/// its true drift inside the envelope around the posterior mean, jointly
/// over all dimensions, and certifies the estimate with a Clopper-Pearson
/// interval at `confidence_level`.
///
/// Deterministic for a fixed seed: trials are split into fixed-size chunks,
/// each chunk runs its own counter-mode RNG stream, and hit counts are summed
/// exactly, so the result does not depend on thread scheduling.
pub fn monte_carlo_coverage(
    model: &GpModel,
    truth: &(dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
    domain: &StateBox,
    envelope: &Envelope,
    trials: u64,
    confidence_level: f64,
    seed: u64,
) -> Result<CoverageReport, BoundError> {
    envelope.validate(model.state_dim())?;
    if domain.dim() != model.state_dim() {
        return Err(BoundError::DimensionMismatch(format!(
            "model has state dimension {} but domain box has {}",
            model.state_dim(),
            domain.dim()
        )));
    }
    if trials == 0 {
        return Err(BoundError::InvalidParameter(
            "need at least one trial".into(),
        ));
    }
    if !(confidence_level > 0.0 && confidence_level < 1.0) {
        return Err(BoundError::InvalidParameter(format!(
            "confidence level must lie in (0, 1), got {confidence_level}"
        )));
    }
    let n = model.state_dim();
    let n_chunks = trials.div_ceil(CHUNK);
    let hits: u64 = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(chunk + 1);
            let count = CHUNK.min(trials - chunk * CHUNK);
            let mut hits = 0u64;
            for _ in 0..count {
                let x = domain.sample(&mut rng);
                let f = truth(&x);
                let hit = match envelope {
                    Envelope::Constant(w) => {
                        let mean = model.posterior_mean(&x);
                        (0..n).all(|i| (f[i] - mean[i]).abs() <= w[i])
                    }
                    Envelope::Pointwise(s) => {
                        let (mean, std) = model.posterior(&x);
                        (0..n).all(|i| (f[i] - mean[i]).abs() <= s[i] * std[i])
                    }
                };
                if hit {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(CoverageReport {
        envelope: envelope.clone(),
        hits,
        trials,
        interval: clopper_pearson(hits, trials, confidence_level),
        confidence_level,
        seed,
    })
}

/// Per-dimension maximum of `|f_i(x) - mean_i(x)|` over uniformly sampled
/// states; useful for calibrating a constant envelope before measuring its
/// coverage. Deterministic for a fixed seed, with the same chunking scheme
/// as [`monte_carlo_coverage`].
pub fn max_abs_error_envelope(
    model: &GpModel,
    truth: &(dyn Fn(&DVector<f64>) -> DVector<f64> + Sync),
    domain: &StateBox,
    samples: u64,
    seed: u64,
) -> Result<Vec<f64>, BoundError> {
    if domain.dim() != model.state_dim() {
        return Err(BoundError::DimensionMismatch(format!(
            "model has state dimension {} but domain box has {}",
            model.state_dim(),
            domain.dim()
        )));
    }
    if samples == 0 {
        return Err(BoundError::InvalidParameter(
            "need at least one sample".into(),
        ));
    }
    let n = model.state_dim();
    let n_chunks = samples.div_ceil(CHUNK);
    let maxima = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(chunk + 1);
            let count = CHUNK.min(samples - chunk * CHUNK);
            let mut m = vec![0.0f64; n];
            for _ in 0..count {
                let x = domain.sample(&mut rng);
                let f = truth(&x);
                let mean = model.posterior_mean(&x);
                for i in 0..n {
                    m[i] = m[i].max((f[i] - mean[i]).abs());
                }
            }
            m
        })
        .reduce(
            || vec![0.0f64; n],
            |mut a, b| {
                for i in 0..n {
                    a[i] = a[i].max(b[i]);
                }
                a
            },
        );
    Ok(maxima)
}

/// Exact (Clopper-Pearson) two-sided confidence interval for a binomial
/// proportion, from `hits` successes out of `trials`.
///
/// The endpoints are the usual beta quantiles: the lower endpoint solves
/// `I_p(hits, trials - hits + 1) = alpha / 2` and the upper endpoint solves
/// `I_p(hits + 1, trials - hits) = 1 - alpha / 2`, with the conventions
/// `lower = 0` for zero hits and `upper = 1` for all hits.
pub fn clopper_pearson(hits: u64, trials: u64, confidence_level: f64) -> [f64; 2] {
    assert!(trials >= 1, "need at least one trial");
    assert!(hits <= trials, "hits cannot exceed trials");
    assert!(
        confidence_level > 0.0 && confidence_level < 1.0,
        "confidence level must lie in (0, 1)"
    );
    let alpha = 1.0 - confidence_level;
    let lower = if hits == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, hits as f64, (trials - hits) as f64 + 1.0)
    };
    // The upper endpoint is the beta quantile at 1 - alpha/2, which is ill
    // conditioned for tiny alpha; Beta(a, b) symmetry turns it into the
    // complementary count's lower endpoint, keeping the quantile small.
    let upper = if hits == trials {
        1.0
    } else {
        1.0 - beta_quantile(alpha / 2.0, (trials - hits) as f64, hits as f64 + 1.0)
    };
    [lower, upper]
}

/// Quantile of the Beta(a, b) distribution by bisection on the regularized
/// incomplete beta function, which is strictly increasing in `x`.
fn beta_quantile(q: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid {
            break;
        }
    }
    0.5 * (lo + hi)
}
