//! Fitted GP posterior with cached factorizations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Dataset, GpError, KernelParams, StateBox};

/// Per-output-dimension factorization of `K_i + sigma_f^2 I`.
#[derive(Debug, Clone)]
struct DimFactor {
    chol: Cholesky<f64, Dyn>,
    /// `(K_i + sigma_f^2 I)^{-1} y_i`
    weights: DVector<f64>,
}

/// A fitted multi-output GP regressor over a state domain.
///
/// Fitting factorizes one Gram matrix per output dimension; queries reuse
/// the factorizations and never mutate the model. The posterior for output
/// dimension `i` at a point `x` is
///
/// ```text
/// mean_i(x) = kbar_i(x)^T (K_i + sigma_f^2 I)^{-1} y_i
/// var_i(x)  = k_i(x, x) - kbar_i(x)^T (K_i + sigma_f^2 I)^{-1} kbar_i(x)
/// ```
///
/// where `kbar_i(x)` stacks the kernel values between `x` and the training
/// inputs.
#[derive(Debug, Clone)]
pub struct GpModel {
    data: Dataset,
    params: KernelParams,
    domain: StateBox,
    /// Training inputs, one row-vector per sample, copied out for cheap access.
    train: Vec<Vec<f64>>,
    dims: Vec<DimFactor>,
}

impl GpModel {
    /// Fits the model without any regularization beyond the measurement noise.
    pub fn fit(data: Dataset, params: KernelParams, domain: StateBox) -> Result<Self, GpError> {
        Self::fit_with_jitter(data, params, domain, 0.0)
    }

    /// Fits the model, adding `jitter` to the Gram diagonal on top of
    /// `sigma_f^2`.
    ///
    /// Jitter is an explicit caller decision; it biases the posterior like
    /// extra observation noise and is mainly useful for noise-free data with
    /// nearly duplicate inputs. A failed factorization reports the jitter
    /// actually used instead of silently retrying with more.
    pub fn fit_with_jitter(
        data: Dataset,
        params: KernelParams,
        domain: StateBox,
        jitter: f64,
    ) -> Result<Self, GpError> {
        let n = data.state_dim();
        if params.n_outputs() != n || params.input_dim() != n {
            return Err(GpError::DimensionMismatch(format!(
                "data has state dimension {n} but kernel set has {} outputs on {} inputs",
                params.n_outputs(),
                params.input_dim()
            )));
        }
        if domain.dim() != n {
            return Err(GpError::DimensionMismatch(format!(
                "data has state dimension {n} but domain box has {}",
                domain.dim()
            )));
        }
        if !(jitter.is_finite() && jitter >= 0.0) {
            return Err(GpError::InvalidParameter(format!(
                "jitter must be finite and non-negative, got {jitter}"
            )));
        }
        let nn = data.n_samples();
        let train: Vec<Vec<f64>> = (0..nn)
            .map(|j| data.inputs().row(j).iter().cloned().collect())
            .collect();
        let diag = data.noise_std().powi(2) + jitter;
        let mut dims = Vec::with_capacity(n);
        for i in 0..n {
            let kern = params.kernel(i);
            let mut gram = DMatrix::zeros(nn, nn);
            for a in 0..nn {
                for b in a..nn {
                    let v = kern.eval_slices(&train[a], &train[b]);
                    gram[(a, b)] = v;
                    gram[(b, a)] = v;
                }
                gram[(a, a)] += diag;
            }
            let chol = Cholesky::new(gram)
                .ok_or(GpError::FactorizationFailure { dim: i, jitter })?;
            let weights = chol.solve(&data.target_column(i));
            dims.push(DimFactor { chol, weights });
        }
        Ok(Self {
            data,
            params,
            domain,
            train,
            dims,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn domain(&self) -> &StateBox {
        &self.domain
    }

    /// State dimension `n` (inputs, outputs, and domain all share it).
    pub fn state_dim(&self) -> usize {
        self.data.state_dim()
    }

    /// Measurement noise standard deviation the model was fit with.
    pub fn noise_std(&self) -> f64 {
        self.data.noise_std()
    }

    fn kbar(&self, i: usize, x: &[f64]) -> DVector<f64> {
        let kern = self.params.kernel(i);
        DVector::from_fn(self.train.len(), |j, _| kern.eval_slices(x, &self.train[j]))
    }

    /// Posterior mean of output dimension `i` at `x`.
    pub fn posterior_mean_dim(&self, i: usize, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.state_dim(), "query dimension mismatch");
        self.kbar(i, x.as_slice()).dot(&self.dims[i].weights)
    }

    /// Posterior variance before clamping; tiny negative values can occur
    /// through rounding when `x` is (numerically) a training input.
    pub(crate) fn posterior_var_raw_dim(&self, i: usize, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.state_dim(), "query dimension mismatch");
        let kb = self.kbar(i, x.as_slice());
        let solved = self.dims[i].chol.solve(&kb);
        self.params.kernel(i).prior_variance() - kb.dot(&solved)
    }

    /// Posterior standard deviation of output dimension `i` at `x`.
    ///
    /// The variance is clamped at zero before the square root.
    pub fn posterior_std_dim(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.posterior_var_raw_dim(i, x).max(0.0).sqrt()
    }

    /// Posterior mean of all output dimensions at `x`.
    pub fn posterior_mean(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.state_dim(), |i, _| self.posterior_mean_dim(i, x))
    }

    /// Posterior standard deviation of all output dimensions at `x`.
    pub fn posterior_std(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.state_dim(), |i, _| self.posterior_std_dim(i, x))
    }

    /// Posterior mean and standard deviation in one pass, sharing the kernel
    /// vector between the two queries.
    pub fn posterior(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        assert_eq!(x.len(), self.state_dim(), "query dimension mismatch");
        let n = self.state_dim();
        let mut mean = DVector::zeros(n);
        let mut std = DVector::zeros(n);
        for i in 0..n {
            let kb = self.kbar(i, x.as_slice());
            mean[i] = kb.dot(&self.dims[i].weights);
            let solved = self.dims[i].chol.solve(&kb);
            let var = self.params.kernel(i).prior_variance() - kb.dot(&solved);
            std[i] = var.max(0.0).sqrt();
        }
        (mean, std)
    }

    /// Per-dimension maximum of the posterior standard deviation over a
    /// uniform grid on `domain` with `points_per_dim` nodes per axis
    /// (endpoints included).
    ///
    /// This under-approximates the true supremum; the gap shrinks with the
    /// grid spacing reported by [`StateBox::grid_cell`], so callers that need
    /// margin should account for that spacing.
    pub fn max_std(&self, domain: &StateBox, points_per_dim: usize) -> DVector<f64> {
        assert_eq!(domain.dim(), self.state_dim(), "domain dimension mismatch");
        assert!(points_per_dim >= 2, "need at least two grid points per axis");
        let mut best = DVector::zeros(self.state_dim());
        for x in domain.grid(points_per_dim) {
            for i in 0..self.state_dim() {
                let s = self.posterior_std_dim(i, &x);
                if s > best[i] {
                    best[i] = s;
                }
            }
        }
        best
    }

    /// Quadratic form `y_i^T (K_i + sigma_f^2 I)^{-1} y_i` of the training
    /// targets for output dimension `i`.
    pub fn data_quadratic_form(&self, i: usize) -> f64 {
        self.data.target_column(i).dot(&self.dims[i].weights)
    }
}
