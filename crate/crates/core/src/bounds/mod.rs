//! Uniform error envelopes for a fitted GP model.
//!
//! Three routes produce a scaling `beta_i` such that
//! `|f_i(x) - mean_i(x)| <= beta_i * std_i(x)` holds uniformly over the
//! domain, with different kinds of guarantees:
//!
//! * [`beta_probabilistic`]: holds with probability at least `1 - epsilon`
//!   per dimension, assuming `f_i` lies in the kernel's RKHS with known norm
//!   bound and known information-gain bound.
//! * [`beta_deterministic`]: holds surely, assuming an RKHS norm bound
//!   derived from a Lipschitz-style constant of `f_i`.
//! * [`coverage::monte_carlo_coverage`]: estimates the actual coverage of a
//!   candidate envelope empirically and certifies it with a Clopper-Pearson
//!   interval. This route needs a ground-truth oracle, so it applies to
//!   benchmark systems rather than truly unknown plants.

pub mod coverage;

pub use coverage::{
    clopper_pearson, max_abs_error_envelope, monte_carlo_coverage, CoverageReport, Envelope,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{Dataset, GpModel, SeKernel, StateBox};

/// Errors from envelope calibration.
#[derive(Debug, Error)]
pub enum BoundError {
    /// An argument violates its domain constraint.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// Two containers that must agree on dimensions do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// The deterministic bound's radicand went negative.
    #[error(
        "deterministic bound is infeasible for dimension {dim}: \
         B^2 + N - y^T (K + sigma_f^2 I)^{{-1}} y = {radicand} < 0; \
         the RKHS norm bound B = {b} is too small for the observed data \
         (quadratic form {quad}); increase the Lipschitz constant or its safety factor"
    )]
    InfeasibleRadicand {
        dim: usize,
        b: f64,
        quad: f64,
        radicand: f64,
    },
}

/// How an envelope scaling was produced, together with its guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundKind {
    /// RKHS concentration bound; holds with probability `1 - epsilon` per dimension.
    Probabilistic { epsilon: f64 },
    /// Deterministic RKHS interpolation bound; holds surely.
    Deterministic,
    /// Empirical coverage with a Clopper-Pearson certificate on the hit rate.
    MonteCarlo {
        interval: [f64; 2],
        confidence_level: f64,
    },
}

/// A per-dimension envelope scaling `beta` with its provenance.
///
/// The envelope around the posterior mean is `beta_i * std_i(x)` pointwise;
/// `confidence` is the joint confidence the construction supports (1 for the
/// deterministic route, `(1 - epsilon)^n` for the probabilistic one, and the
/// certified lower coverage bound for the Monte-Carlo route).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSet {
    pub kind: BoundKind,
    pub scale: Vec<f64>,
    pub confidence: f64,
}

impl BoundSet {
    fn check_scales(scale: &[f64]) -> Result<(), BoundError> {
        if scale.is_empty() {
            return Err(BoundError::InvalidParameter(
                "bound set needs at least one dimension".into(),
            ));
        }
        if let Some(s) = scale.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(BoundError::InvalidParameter(format!(
                "envelope scales must be positive and finite, got {s}"
            )));
        }
        Ok(())
    }

    /// Probabilistic bound with per-dimension failure probability `epsilon`.
    pub fn probabilistic(scale: Vec<f64>, epsilon: f64) -> Result<Self, BoundError> {
        Self::check_scales(&scale)?;
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(BoundError::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        let confidence = (1.0 - epsilon).powi(scale.len() as i32);
        Ok(Self {
            kind: BoundKind::Probabilistic { epsilon },
            scale,
            confidence,
        })
    }

    /// Deterministic bound (confidence 1).
    pub fn deterministic(scale: Vec<f64>) -> Result<Self, BoundError> {
        Self::check_scales(&scale)?;
        Ok(Self {
            kind: BoundKind::Deterministic,
            scale,
            confidence: 1.0,
        })
    }

    /// Monte-Carlo calibrated bound; `interval` is the Clopper-Pearson
    /// interval on the coverage probability and the certified confidence is
    /// its lower endpoint.
    pub fn monte_carlo(
        scale: Vec<f64>,
        interval: [f64; 2],
        confidence_level: f64,
    ) -> Result<Self, BoundError> {
        Self::check_scales(&scale)?;
        if !(0.0..=1.0).contains(&interval[0])
            || !(0.0..=1.0).contains(&interval[1])
            || interval[0] > interval[1]
        {
            return Err(BoundError::InvalidParameter(format!(
                "coverage interval [{}, {}] is not an ordered subinterval of [0, 1]",
                interval[0], interval[1]
            )));
        }
        if !(confidence_level > 0.0 && confidence_level < 1.0) {
            return Err(BoundError::InvalidParameter(format!(
                "confidence level must lie in (0, 1), got {confidence_level}"
            )));
        }
        Ok(Self {
            kind: BoundKind::MonteCarlo {
                interval,
                confidence_level,
            },
            scale,
            confidence: interval[0],
        })
    }

    /// Number of dimensions the bound covers.
    pub fn dim(&self) -> usize {
        self.scale.len()
    }
}

/// Probabilistic envelope scaling
/// `beta = sqrt(2 ||f||_k^2 + 300 gamma ln^3((N + 1) / epsilon))`.
///
/// `rkhs_norm` bounds the RKHS norm of the unknown component, `gamma` bounds
/// the information gain of `n_samples` measurements, and `epsilon` is the
/// per-dimension failure probability.
pub fn beta_probabilistic(
    rkhs_norm: f64,
    gamma: f64,
    n_samples: usize,
    epsilon: f64,
) -> Result<f64, BoundError> {
    if !(rkhs_norm.is_finite() && rkhs_norm >= 0.0) {
        return Err(BoundError::InvalidParameter(format!(
            "RKHS norm bound must be finite and non-negative, got {rkhs_norm}"
        )));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(BoundError::InvalidParameter(format!(
            "information gain must be finite and non-negative, got {gamma}"
        )));
    }
    if n_samples == 0 {
        return Err(BoundError::InvalidParameter(
            "need at least one sample".into(),
        ));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(BoundError::InvalidParameter(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let log_term = (((n_samples as f64) + 1.0) / epsilon).ln();
    Ok((2.0 * rkhs_norm * rkhs_norm + 300.0 * gamma * log_term.powi(3)).sqrt())
}

/// How an information-gain figure was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoGainMethod {
    /// Greedy log-det over-approximation computed by [`info_gain_greedy`].
    GreedyOverapprox,
    /// Value supplied by the caller (e.g. from an analytic kernel-specific bound).
    UserSupplied,
}

/// Per-dimension information-gain bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoGain {
    pub gamma: Vec<f64>,
    pub method: InfoGainMethod,
}

/// Greedy upper bound on the maximum information gain of `budget`
/// measurements for output dimension `dim`.
///
/// Greedily maximizes `F(S) = 1/2 ln det(I + sigma_f^{-2} K_S)` over subsets
/// of a uniform candidate grid on `domain` (about 500 candidates) and scales
/// the greedy value by `1 / (1 - 1/e)`, which dominates the true maximum by
/// submodularity of `F`.
pub fn info_gain_greedy(
    model: &GpModel,
    domain: &StateBox,
    budget: usize,
    dim: usize,
) -> Result<f64, BoundError> {
    if domain.dim() != model.state_dim() {
        return Err(BoundError::DimensionMismatch(format!(
            "model has state dimension {} but domain box has {}",
            model.state_dim(),
            domain.dim()
        )));
    }
    let per_dim = ((500f64).powf(1.0 / domain.dim() as f64).ceil() as usize).max(2);
    let candidates = domain.grid(per_dim);
    let greedy = greedy_log_det(
        model.params().kernel(dim),
        model.noise_std(),
        &candidates,
        budget,
    )?;
    Ok(greedy / (1.0 - (-1.0f64).exp()))
}

/// Greedy value `F(S)` itself, without the submodularity correction factor.
///
/// Exposed for callers that want the raw greedy log-det; candidate order
/// breaks ties (first maximizer wins), so the result is deterministic.
pub fn greedy_log_det(
    kern: &SeKernel,
    noise_std: f64,
    candidates: &[DVector<f64>],
    budget: usize,
) -> Result<f64, BoundError> {
    if !(noise_std.is_finite() && noise_std > 0.0) {
        return Err(BoundError::InvalidParameter(format!(
            "information gain needs a positive noise std, got {noise_std}"
        )));
    }
    if budget == 0 {
        return Err(BoundError::InvalidParameter(
            "information-gain budget must be at least 1".into(),
        ));
    }
    if candidates.is_empty() {
        return Err(BoundError::InvalidParameter(
            "need at least one candidate point".into(),
        ));
    }
    let noise_var = noise_std * noise_std;
    let mut selected: Vec<usize> = Vec::new();
    let mut total = 0.0;
    for _ in 0..budget.min(candidates.len()) {
        // Posterior variance at each candidate given the selected set, using
        // a Cholesky factor of K_S + sigma_f^2 I rebuilt per round.
        let chol = if selected.is_empty() {
            None
        } else {
            let m = selected.len();
            let mut gram = nalgebra::DMatrix::zeros(m, m);
            for a in 0..m {
                for b in a..m {
                    let v = kern.eval(&candidates[selected[a]], &candidates[selected[b]]);
                    gram[(a, b)] = v;
                    gram[(b, a)] = v;
                }
                gram[(a, a)] += noise_var;
            }
            Some(nalgebra::Cholesky::new(gram).ok_or_else(|| {
                BoundError::InvalidParameter(
                    "greedy selection produced a singular Gram matrix".into(),
                )
            })?)
        };
        let mut best: Option<(usize, f64)> = None;
        for (c, x) in candidates.iter().enumerate() {
            if selected.contains(&c) {
                continue;
            }
            let var = match &chol {
                None => kern.prior_variance(),
                Some(chol) => {
                    let ks = DVector::from_fn(selected.len(), |j, _| {
                        kern.eval(x, &candidates[selected[j]])
                    });
                    let solved = chol.solve(&ks);
                    (kern.prior_variance() - ks.dot(&solved)).max(0.0)
                }
            };
            let gain = 0.5 * (1.0 + var / noise_var).ln();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((c, gain));
            }
        }
        let (c, gain) = best.expect("at least one unselected candidate");
        selected.push(c);
        total += gain;
    }
    Ok(total)
}

/// Per-dimension RKHS norm bounds together with the ingredients they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkhsBound {
    pub b: Vec<f64>,
    pub lipschitz: Vec<f64>,
}

/// RKHS norm bound `B = L / sqrt(2 * sup |dk/dx|)` from a sqrt-Holder
/// constant `L` of the target component and the kernel's gradient supremum.
pub fn rkhs_bound(lipschitz: f64, kern: &SeKernel) -> Result<f64, BoundError> {
    if !(lipschitz.is_finite() && lipschitz > 0.0) {
        return Err(BoundError::InvalidParameter(format!(
            "Lipschitz constant must be positive and finite, got {lipschitz}"
        )));
    }
    Ok(lipschitz / (2.0 * kern.grad_sup()).sqrt())
}

/// Estimates the sqrt-Holder constant of output dimension `dim` from data:
/// the largest observed slope `|y_j - y_k| / sqrt(||x_j - x_k||)` over all
/// sample pairs with distinct inputs.
pub fn estimate_lipschitz_sqrt(data: &Dataset, dim: usize) -> Result<f64, BoundError> {
    if data.n_samples() < 2 {
        return Err(BoundError::InvalidParameter(
            "need at least two samples to estimate a slope".into(),
        ));
    }
    if dim >= data.state_dim() {
        return Err(BoundError::DimensionMismatch(format!(
            "output dimension {dim} out of range for state dimension {}",
            data.state_dim()
        )));
    }
    let y = data.target_column(dim);
    let mut best = 0.0f64;
    let mut seen_pair = false;
    for j in 0..data.n_samples() {
        let xj = data.input_point(j);
        for k in (j + 1)..data.n_samples() {
            let dist = (&xj - data.input_point(k)).norm();
            if dist == 0.0 {
                continue;
            }
            seen_pair = true;
            let slope = (y[j] - y[k]).abs() / dist.sqrt();
            if slope > best {
                best = slope;
            }
        }
    }
    if !seen_pair {
        return Err(BoundError::InvalidParameter(
            "all sample inputs coincide; cannot estimate a slope".into(),
        ));
    }
    Ok(best)
}

/// Deterministic envelope scaling
/// `beta = sqrt(B^2 - y^T (K + sigma_f^2 I)^{-1} y + N)` for output
/// dimension `dim` of a fitted model.
pub fn beta_deterministic(b: f64, model: &GpModel, dim: usize) -> Result<f64, BoundError> {
    if !(b.is_finite() && b > 0.0) {
        return Err(BoundError::InvalidParameter(format!(
            "RKHS norm bound must be positive and finite, got {b}"
        )));
    }
    if dim >= model.state_dim() {
        return Err(BoundError::DimensionMismatch(format!(
            "output dimension {dim} out of range for state dimension {}",
            model.state_dim()
        )));
    }
    let quad = model.data_quadratic_form(dim);
    let radicand = b * b - quad + model.data().n_samples() as f64;
    if radicand < 0.0 {
        return Err(BoundError::InfeasibleRadicand {
            dim,
            b,
            quad,
            radicand,
        });
    }
    Ok(radicand.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Dataset, GpModel, KernelParams, StateBox};
    use approx::assert_relative_eq;

    #[test]
    fn probabilistic_beta_hand_values() {
        // epsilon = (N + 1) / e makes the log term exactly 1; N = 1 keeps
        // epsilon inside (0, 1).
        let eps = 2.0 / std::f64::consts::E;
        let beta = beta_probabilistic(1.0, 1.0, 1, eps).unwrap();
        assert_relative_eq!(beta, 302.0f64.sqrt(), max_relative = 1e-12);
        // gamma = 0 collapses to sqrt(2) * norm.
        let beta0 = beta_probabilistic(3.0, 0.0, 9, 0.5).unwrap();
        assert_relative_eq!(beta0, 18.0f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn probabilistic_beta_monotone() {
        let mut prev = 0.0;
        for g in [0.0, 0.5, 1.0, 2.0, 10.0] {
            let b = beta_probabilistic(1.0, g, 50, 0.01).unwrap();
            assert!(b > prev);
            prev = b;
        }
        let tight = beta_probabilistic(1.0, 1.0, 50, 0.1).unwrap();
        let loose = beta_probabilistic(1.0, 1.0, 50, 0.001).unwrap();
        assert!(loose > tight);
    }

    #[test]
    fn probabilistic_beta_rejects_bad_arguments() {
        assert!(beta_probabilistic(-1.0, 1.0, 10, 0.1).is_err());
        assert!(beta_probabilistic(1.0, -1.0, 10, 0.1).is_err());
        assert!(beta_probabilistic(1.0, 1.0, 0, 0.1).is_err());
        assert!(beta_probabilistic(1.0, 1.0, 10, 0.0).is_err());
        assert!(beta_probabilistic(1.0, 1.0, 10, 1.0).is_err());
    }

    fn unit_model(sigma_k: f64, sigma_f: f64) -> GpModel {
        let data = Dataset::from_rows(&[vec![0.0]], &[vec![0.0]], sigma_f).unwrap();
        let params =
            KernelParams::new(vec![SeKernel::new(sigma_k, vec![1.0]).unwrap()]).unwrap();
        GpModel::fit(data, params, StateBox::cube(-1.0, 1.0, 1).unwrap()).unwrap()
    }

    #[test]
    fn greedy_single_pick_is_prior_gain() {
        let kern = SeKernel::new(2.0, vec![1.0]).unwrap();
        let cands = vec![
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![0.5]),
            DVector::from_vec(vec![-0.5]),
        ];
        let f1 = greedy_log_det(&kern, 0.5, &cands, 1).unwrap();
        assert_relative_eq!(f1, 0.5 * 17.0f64.ln(), max_relative = 1e-14);

        let model = unit_model(2.0, 0.5);
        let gamma = info_gain_greedy(&model, model.domain(), 1, 0).unwrap();
        let eratio = 1.0 - (-1.0f64).exp();
        assert_relative_eq!(gamma, 0.5 * 17.0f64.ln() / eratio, max_relative = 1e-14);
    }

    #[test]
    fn greedy_is_monotone_in_budget() {
        let model = unit_model(1.0, 0.1);
        let mut prev = 0.0;
        for budget in 1..=6 {
            let g = info_gain_greedy(&model, model.domain(), budget, 0).unwrap();
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn greedy_rejects_zero_noise_and_zero_budget() {
        let kern = SeKernel::new(1.0, vec![1.0]).unwrap();
        let cands = vec![DVector::from_vec(vec![0.0])];
        assert!(greedy_log_det(&kern, 0.0, &cands, 1).is_err());
        assert!(greedy_log_det(&kern, 0.1, &cands, 0).is_err());
        assert!(greedy_log_det(&kern, 0.1, &[], 1).is_err());
    }

    #[test]
    fn rkhs_bound_closed_form() {
        let kern = SeKernel::new(1.0, vec![1.0]).unwrap();
        let b = rkhs_bound(1.0, &kern).unwrap();
        let expect = 1.0 / (2.0 * (-0.5f64).exp()).sqrt();
        assert_relative_eq!(b, expect, max_relative = 1e-14);
        assert!(rkhs_bound(0.0, &kern).is_err());
    }

    #[test]
    fn sqrt_slope_estimator_hand_data() {
        let data = Dataset::from_rows(
            &[vec![0.0], vec![4.0], vec![5.0]],
            &[vec![0.0], vec![3.0], vec![3.0]],
            0.0,
        )
        .unwrap();
        // Pairs: (0,4): 3/sqrt(4) = 1.5; (0,5): 3/sqrt(5); (4,5): 0.
        let l = estimate_lipschitz_sqrt(&data, 0).unwrap();
        assert_relative_eq!(l, 1.5, max_relative = 1e-15);
    }

    #[test]
    fn sqrt_slope_estimator_needs_distinct_points() {
        let data = Dataset::from_rows(&[vec![1.0], vec![1.0]], &[vec![0.0], vec![2.0]], 0.1)
            .unwrap();
        assert!(estimate_lipschitz_sqrt(&data, 0).is_err());
    }

    #[test]
    fn deterministic_beta_with_zero_targets() {
        // y = 0 makes the quadratic form vanish: beta = sqrt(B^2 + N).
        let model = unit_model(1.0, 0.5);
        let beta = beta_deterministic(2.0, &model, 0).unwrap();
        assert_relative_eq!(beta, 5.0f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn deterministic_beta_reports_infeasible_radicand() {
        let data = Dataset::from_rows(&[vec![0.0]], &[vec![50.0]], 0.01).unwrap();
        let params = KernelParams::new(vec![SeKernel::new(1.0, vec![1.0]).unwrap()]).unwrap();
        let model =
            GpModel::fit(data, params, StateBox::cube(-1.0, 1.0, 1).unwrap()).unwrap();
        // Quadratic form is 2500 / (1 + 1e-4) >> B^2 + 1.
        let err = beta_deterministic(1.0, &model, 0);
        assert!(matches!(err, Err(BoundError::InfeasibleRadicand { .. })));
        let msg = format!("{}", err.unwrap_err());
        assert!(msg.contains("increase the Lipschitz constant"));
    }

    #[test]
    fn bound_set_constructors_compute_confidence() {
        let p = BoundSet::probabilistic(vec![1.0, 2.0], 0.01).unwrap();
        assert_relative_eq!(p.confidence, 0.99f64.powi(2), max_relative = 1e-15);
        assert!(matches!(p.kind, BoundKind::Probabilistic { epsilon } if epsilon == 0.01));

        let d = BoundSet::deterministic(vec![7.0878, 7.0710]).unwrap();
        assert_eq!(d.confidence, 1.0);

        let m = BoundSet::monte_carlo(vec![1.8, 0.65], [0.9894, 0.9907], 1.0 - 1e-10).unwrap();
        assert_eq!(m.confidence, 0.9894);
        assert_eq!(m.dim(), 2);

        assert!(BoundSet::probabilistic(vec![0.0], 0.01).is_err());
        assert!(BoundSet::monte_carlo(vec![1.0], [0.9, 0.8], 0.95).is_err());
        assert!(BoundSet::monte_carlo(vec![1.0], [0.9, 1.1], 0.95).is_err());
    }
}
