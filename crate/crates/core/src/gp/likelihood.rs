//! Log marginal likelihood (evidence) and gradient-based hyperparameter search.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{Dataset, GpError, KernelParams, SeKernel};

/// Bounds on log-hyperparameters during optimization, keeping iterates in a
/// numerically sane range.
const LOG_PARAM_MIN: f64 = -13.8; // approx ln(1e-6)
const LOG_PARAM_MAX: f64 = 13.8; // approx ln(1e6)

/// Evidence and its gradient for one output dimension.
///
/// Returns the log marginal likelihood
/// `-1/2 y^T A^{-1} y - 1/2 log det A - N/2 log(2 pi)` with
/// `A = K + sigma_f^2 I`, together with its gradient with respect to the
/// *logarithms* of `[signal_std, l_1, ..., l_n]`. Differentiating in log
/// space keeps the positivity constraints implicit.
pub fn log_marginal_likelihood(
    data: &Dataset,
    params: &KernelParams,
    dim: usize,
) -> Result<(f64, DVector<f64>), GpError> {
    if params.n_outputs() != data.state_dim() || params.input_dim() != data.state_dim() {
        return Err(GpError::DimensionMismatch(format!(
            "data has state dimension {} but kernel set has {} outputs on {} inputs",
            data.state_dim(),
            params.n_outputs(),
            params.input_dim()
        )));
    }
    if dim >= data.state_dim() {
        return Err(GpError::DimensionMismatch(format!(
            "output dimension {dim} out of range for state dimension {}",
            data.state_dim()
        )));
    }
    evidence_dim(data, params.kernel(dim), dim)
}

fn evidence_dim(
    data: &Dataset,
    kern: &SeKernel,
    dim: usize,
) -> Result<(f64, DVector<f64>), GpError> {
    let nn = data.n_samples();
    let d = data.state_dim();
    let train: Vec<Vec<f64>> = (0..nn)
        .map(|j| data.inputs().row(j).iter().cloned().collect())
        .collect();
    let noise_var = data.noise_std().powi(2);

    let mut k = DMatrix::zeros(nn, nn);
    for a in 0..nn {
        for b in a..nn {
            let v = kern.eval_slices(&train[a], &train[b]);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    let mut a_mat = k.clone();
    for j in 0..nn {
        a_mat[(j, j)] += noise_var;
    }
    let chol = Cholesky::new(a_mat).ok_or(GpError::FactorizationFailure { dim, jitter: 0.0 })?;
    let y = data.target_column(dim);
    let alpha = chol.solve(&y);
    let l = chol.l();
    let mut ln_det = 0.0;
    for j in 0..nn {
        ln_det += l[(j, j)].ln();
    }
    ln_det *= 2.0;
    let value = -0.5 * y.dot(&alpha)
        - 0.5 * ln_det
        - 0.5 * (nn as f64) * (2.0 * std::f64::consts::PI).ln();

    // Gradient: dL/dtheta = 1/2 alpha^T G alpha - 1/2 tr(A^{-1} G) with
    // G = dK/dtheta. For theta = log(signal_std), G = 2K; for
    // theta = log(l_j), G = K .* ((x_aj - x_bj)/l_j)^2.
    let a_inv = chol.inverse();
    let mut grad = DVector::zeros(1 + d);
    let mut fit_term = 0.0;
    let mut trace_term = 0.0;
    for a in 0..nn {
        for b in 0..nn {
            let g = 2.0 * k[(a, b)];
            fit_term += alpha[a] * g * alpha[b];
            trace_term += a_inv[(a, b)] * g;
        }
    }
    grad[0] = 0.5 * (fit_term - trace_term);
    for j in 0..d {
        let lj = kern.lengthscales()[j];
        let mut fit_term = 0.0;
        let mut trace_term = 0.0;
        for a in 0..nn {
            for b in 0..nn {
                let r = (train[a][j] - train[b][j]) / lj;
                let g = k[(a, b)] * r * r;
                fit_term += alpha[a] * g * alpha[b];
                trace_term += a_inv[(a, b)] * g;
            }
        }
        grad[1 + j] = 0.5 * (fit_term - trace_term);
    }
    Ok((value, grad))
}

/// Options for [`optimize_hyperparams`].
#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    /// Gradient-ascent iterations per restart.
    pub iterations: usize,
    /// Number of starting points; the first is the initial guess itself,
    /// the rest are log-space perturbations of it.
    pub restarts: usize,
    /// Seed for the restart perturbations.
    pub seed: u64,
    /// Adam step size in log-parameter space.
    pub step: f64,
    /// Standard deviation of the log-space restart perturbations.
    pub perturb_std: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            iterations: 150,
            restarts: 8,
            seed: 0,
            step: 0.08,
            perturb_std: 0.7,
        }
    }
}

/// Result of a hyperparameter search.
#[derive(Debug, Clone)]
pub struct HyperFit {
    /// Selected kernels, per output dimension the best of initial guess and
    /// all restart outcomes.
    pub params: KernelParams,
    /// Evidence at the selected kernels.
    pub evidence: Vec<f64>,
    /// Evidence at the initial guess.
    pub evidence_init: Vec<f64>,
    /// Whether the search strictly improved on the initial guess, per
    /// output dimension. A `false` entry means the initial kernel was kept.
    pub improved: Vec<bool>,
}

impl HyperFit {
    /// True when at least one output dimension improved.
    pub fn any_improved(&self) -> bool {
        self.improved.iter().any(|b| *b)
    }
}

fn log_params(kern: &SeKernel) -> Vec<f64> {
    let mut t = Vec::with_capacity(1 + kern.input_dim());
    t.push(kern.signal_std().ln());
    t.extend(kern.lengthscales().iter().map(|l| l.ln()));
    t
}

fn kernel_from_log(theta: &[f64]) -> Result<SeKernel, GpError> {
    SeKernel::new(theta[0].exp(), theta[1..].iter().map(|t| t.exp()).collect())
}

/// One Adam ascent run from `theta0`; returns the best iterate seen.
fn ascend(
    data: &Dataset,
    dim: usize,
    theta0: &[f64],
    opts: &OptimizeOptions,
) -> Option<(f64, Vec<f64>)> {
    let mut theta = theta0.to_vec();
    let kern = kernel_from_log(&theta).ok()?;
    let (mut best_val, mut grad) = evidence_dim(data, &kern, dim).ok()?;
    let mut best_theta = theta.clone();
    let p = theta.len();
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    for it in 1..=opts.iterations {
        for j in 0..p {
            m[j] = b1 * m[j] + (1.0 - b1) * grad[j];
            v[j] = b2 * v[j] + (1.0 - b2) * grad[j] * grad[j];
            let mh = m[j] / (1.0 - b1.powi(it as i32));
            let vh = v[j] / (1.0 - b2.powi(it as i32));
            theta[j] =
                (theta[j] + opts.step * mh / (vh.sqrt() + eps)).clamp(LOG_PARAM_MIN, LOG_PARAM_MAX);
        }
        let kern = match kernel_from_log(&theta) {
            Ok(k) => k,
            Err(_) => break,
        };
        match evidence_dim(data, &kern, dim) {
            Ok((val, g)) => {
                if val > best_val {
                    best_val = val;
                    best_theta = theta.clone();
                }
                grad = g;
            }
            // An indefinite Gram matrix at this iterate; keep the best so far.
            Err(_) => break,
        }
    }
    Some((best_val, best_theta))
}

/// Multi-start evidence maximization, one search per output dimension.
///
/// The returned kernels are guaranteed to have evidence at least as high as
/// `init`: every dimension whose search fails to strictly improve keeps its
/// initial kernel and reports `improved = false`. The search is deterministic
/// for a fixed seed; restarts run in parallel but are selected in index
/// order.
pub fn optimize_hyperparams(
    data: &Dataset,
    init: &KernelParams,
    opts: &OptimizeOptions,
) -> Result<HyperFit, GpError> {
    if init.n_outputs() != data.state_dim() || init.input_dim() != data.state_dim() {
        return Err(GpError::DimensionMismatch(format!(
            "data has state dimension {} but kernel set has {} outputs on {} inputs",
            data.state_dim(),
            init.n_outputs(),
            init.input_dim()
        )));
    }
    if opts.restarts == 0 {
        return Err(GpError::InvalidParameter(
            "optimizer needs at least one restart (the initial guess)".into(),
        ));
    }
    let n = data.state_dim();
    let mut kernels = Vec::with_capacity(n);
    let mut evidence = Vec::with_capacity(n);
    let mut evidence_init = Vec::with_capacity(n);
    let mut improved = Vec::with_capacity(n);
    for i in 0..n {
        let kern0 = init.kernel(i);
        let (init_val, _) = evidence_dim(data, kern0, i)?;
        let theta0 = log_params(kern0);
        let starts: Vec<Vec<f64>> = (0..opts.restarts)
            .map(|r| {
                if r == 0 {
                    theta0.clone()
                } else {
                    let mut rng =
                        ChaCha12Rng::seed_from_u64(opts.seed ^ ((i as u64) << 32 | r as u64));
                    let normal = Normal::new(0.0, opts.perturb_std).unwrap();
                    theta0
                        .iter()
                        .map(|t| {
                            (t + normal.sample(&mut rng)).clamp(LOG_PARAM_MIN, LOG_PARAM_MAX)
                        })
                        .collect()
                }
            })
            .collect();
        let outcomes: Vec<Option<(f64, Vec<f64>)>> = starts
            .par_iter()
            .map(|start| ascend(data, i, start, opts))
            .collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for out in outcomes.into_iter().flatten() {
            let better = match &best {
                Some((bv, _)) => out.0 > *bv,
                None => true,
            };
            if better {
                best = Some(out);
            }
        }
        match best {
            Some((val, theta)) if val > init_val => {
                kernels.push(kernel_from_log(&theta)?);
                evidence.push(val);
                evidence_init.push(init_val);
                improved.push(true);
            }
            _ => {
                kernels.push(kern0.clone());
                evidence.push(init_val);
                evidence_init.push(init_val);
                improved.push(false);
            }
        }
    }
    Ok(HyperFit {
        params: KernelParams::new(kernels)?,
        evidence,
        evidence_init,
        improved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn params1(sigma: f64, ls: Vec<f64>) -> KernelParams {
        KernelParams::new(vec![SeKernel::new(sigma, ls).unwrap()]).unwrap()
    }

    #[test]
    fn single_sample_zero_target_closed_form() {
        // N = 1, y = 0: evidence = -1/2 ln(sigma_k^2 + sigma_f^2) - 1/2 ln(2 pi),
        // gradient wrt log signal_std = -sigma_k^2 / (sigma_k^2 + sigma_f^2) * 2 / 2,
        // gradient wrt log lengthscale = 0 (no pairwise distances).
        let data = Dataset::from_rows(&[vec![0.7]], &[vec![0.0]], 1.0).unwrap();
        let params = params1(2.0, vec![1.0]);
        let (val, grad) = log_marginal_likelihood(&data, &params, 0).unwrap();
        let expect = -0.5 * 5.0f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(val, expect, max_relative = 1e-14);
        assert_relative_eq!(grad[0], -0.8, max_relative = 1e-14);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..8)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let ys: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| vec![x[0].sin() + 0.3 * x[1], x[1].cos()])
            .collect();
        let data = Dataset::from_rows(&xs, &ys, 0.1).unwrap();
        let theta = [0.3f64, -0.2, 0.5];
        for dim in 0..2 {
            let kern = kernel_from_log(&theta).unwrap();
            let params = KernelParams::new(vec![kern.clone(), kern]).unwrap();
            let (_, grad) = log_marginal_likelihood(&data, &params, dim).unwrap();
            let h = 1e-6;
            for j in 0..3 {
                let mut tp = theta;
                tp[j] += h;
                let mut tm = theta;
                tm[j] -= h;
                let kp = kernel_from_log(&tp).unwrap();
                let km = kernel_from_log(&tm).unwrap();
                let (vp, _) = evidence_dim(&data, &kp, dim).unwrap();
                let (vm, _) = evidence_dim(&data, &km, dim).unwrap();
                let fd = (vp - vm) / (2.0 * h);
                assert_relative_eq!(grad[j], fd, max_relative = 1e-5, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn optimizer_improves_mismatched_lengthscale() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let xs: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![(2.0 * x[0]).sin()]).collect();
        let data = Dataset::from_rows(&xs, &ys, 0.05).unwrap();
        let init = params1(0.3, vec![5.0]);
        let opts = OptimizeOptions {
            iterations: 120,
            restarts: 4,
            seed: 1,
            ..OptimizeOptions::default()
        };
        let fit = optimize_hyperparams(&data, &init, &opts).unwrap();
        assert!(fit.improved[0]);
        assert!(fit.evidence[0] > fit.evidence_init[0]);
        // The fitted lengthscale should move toward the wavelength of the target.
        assert!(fit.params.kernel(0).lengthscales()[0] < 3.0);
    }

    #[test]
    fn optimizer_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let xs: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] * x[0]]).collect();
        let data = Dataset::from_rows(&xs, &ys, 0.02).unwrap();
        let init = params1(1.0, vec![1.0]);
        let opts = OptimizeOptions {
            iterations: 40,
            restarts: 3,
            seed: 42,
            ..OptimizeOptions::default()
        };
        let a = optimize_hyperparams(&data, &init, &opts).unwrap();
        let b = optimize_hyperparams(&data, &init, &opts).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.evidence, b.evidence);
    }

    #[test]
    fn optimizer_returns_init_when_nothing_improves() {
        let data = Dataset::from_rows(&[vec![0.0]], &[vec![0.0]], 0.5).unwrap();
        let init = params1(1.3, vec![2.0]);
        let opts = OptimizeOptions {
            iterations: 0,
            restarts: 1,
            seed: 0,
            ..OptimizeOptions::default()
        };
        let fit = optimize_hyperparams(&data, &init, &opts).unwrap();
        assert!(!fit.improved[0]);
        assert!(!fit.any_improved());
        assert_eq!(fit.params, init);
        assert_eq!(fit.evidence[0], fit.evidence_init[0]);
    }
}
