//! Squared-exponential kernels with per-dimension (ARD) lengthscales.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::GpError;

/// Squared-exponential ARD kernel
/// `k(x, x') = signal_std^2 * exp(-1/2 * sum_j ((x_j - x'_j) / l_j)^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    signal_std: f64,
    lengthscales: Vec<f64>,
}

impl SeKernel {
    /// Builds a kernel; `signal_std` and every lengthscale must be positive and finite.
    pub fn new(signal_std: f64, lengthscales: Vec<f64>) -> Result<Self, GpError> {
        if !(signal_std.is_finite() && signal_std > 0.0) {
            return Err(GpError::InvalidParameter(format!(
                "kernel signal std must be positive and finite, got {signal_std}"
            )));
        }
        if lengthscales.is_empty() {
            return Err(GpError::InvalidParameter(
                "kernel needs at least one lengthscale".into(),
            ));
        }
        if let Some(l) = lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(GpError::InvalidParameter(format!(
                "kernel lengthscales must be positive and finite, got {l}"
            )));
        }
        Ok(Self {
            signal_std,
            lengthscales,
        })
    }

    /// Isotropic kernel on an `input_dim`-dimensional space.
    pub fn isotropic(signal_std: f64, lengthscale: f64, input_dim: usize) -> Result<Self, GpError> {
        Self::new(signal_std, vec![lengthscale; input_dim])
    }

    pub fn signal_std(&self) -> f64 {
        self.signal_std
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    /// Input dimension the kernel operates on.
    pub fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Kernel value on raw slices; both must have length `input_dim`.
    #[inline]
    pub fn eval_slices(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.lengthscales.len());
        debug_assert_eq!(y.len(), self.lengthscales.len());
        let mut q = 0.0;
        for j in 0..x.len() {
            let r = (x[j] - y[j]) / self.lengthscales[j];
            q += r * r;
        }
        self.signal_std * self.signal_std * (-0.5 * q).exp()
    }

    /// Kernel value `k(x, y)`.
    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.eval_slices(x.as_slice(), y.as_slice())
    }

    /// Prior variance `k(x, x) = signal_std^2`, independent of `x`.
    pub fn prior_variance(&self) -> f64 {
        self.signal_std * self.signal_std
    }

    /// Supremum of the partial-derivative magnitude `sup_{x,x',j} |d k(x,x') / d x_j|`.
    ///
    /// For the squared-exponential kernel the supremum over any one coordinate
    /// is `signal_std^2 * exp(-1/2) / l_j`, attained at `|x_j - x'_j| = l_j`
    /// with all other coordinates equal, so the overall supremum uses the
    /// smallest lengthscale.
    pub fn grad_sup(&self) -> f64 {
        let l_min = self
            .lengthscales
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        self.signal_std * self.signal_std * (-0.5f64).exp() / l_min
    }
}

/// One [`SeKernel`] per output dimension of a vector-valued regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    kernels: Vec<SeKernel>,
}

impl KernelParams {
    /// Builds the parameter set; all kernels must share the same input dimension.
    pub fn new(kernels: Vec<SeKernel>) -> Result<Self, GpError> {
        if kernels.is_empty() {
            return Err(GpError::InvalidParameter(
                "need at least one output kernel".into(),
            ));
        }
        let d = kernels[0].input_dim();
        if kernels.iter().any(|k| k.input_dim() != d) {
            return Err(GpError::DimensionMismatch(
                "all output kernels must share the same input dimension".into(),
            ));
        }
        Ok(Self { kernels })
    }

    /// Number of output dimensions.
    pub fn n_outputs(&self) -> usize {
        self.kernels.len()
    }

    /// Input dimension shared by all kernels.
    pub fn input_dim(&self) -> usize {
        self.kernels[0].input_dim()
    }

    /// Kernel of output dimension `i`.
    pub fn kernel(&self, i: usize) -> &SeKernel {
        &self.kernels[i]
    }

    pub fn kernels(&self) -> &[SeKernel] {
        &self.kernels
    }

    /// Kernel value for output dimension `i`.
    pub fn eval(&self, i: usize, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.kernels[i].eval(x, y)
    }
}
