//! The closed-form funnel-based reachability control law.
//!
//! The law combines four ingredients evaluated at the current state and
//! time: the learned drift mean, a sign-weighted robustness term that
//! dominates the learning error, the transformed funnel error, and a
//! proportional pull toward the attractor. The input map is inverted
//! through its Gram matrix, so any full-row-rank `g` is admissible.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::bounds::BoundSet;
use crate::funnel::{FunnelError, FunnelSpec};
use crate::gp::GpModel;

/// State-dependent input map `x -> g(x)` with `n` rows and `m` columns.
pub type InputMap = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Errors from control law construction and evaluation.
#[derive(Debug, Error)]
pub enum ControlError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// `g(x) g(x)^T` is not positive definite at the queried state.
    #[error(
        "input map Gram matrix g g^T is singular at the queried state \
         (n = {n}, m = {m}); the input map does not have full row rank there"
    )]
    SingularInputMap { n: usize, m: usize },
    #[error(transparent)]
    Funnel(#[from] FunnelError),
}

/// Immutable time-varying feedback law; safe to evaluate concurrently.
pub struct ControlLaw {
    model: Arc<GpModel>,
    bound: BoundSet,
    spec: FunnelSpec,
    g_map: InputMap,
    sign_smoothing: Option<f64>,
}

impl ControlLaw {
    /// Assembles the law and checks that the model, the error bound, and the
    /// funnel agree on the state dimension.
    pub fn new(
        model: Arc<GpModel>,
        bound: BoundSet,
        spec: FunnelSpec,
        g_map: InputMap,
    ) -> Result<Self, ControlError> {
        let n = model.state_dim();
        if bound.dim() != n || spec.dim() != n {
            return Err(ControlError::DimensionMismatch(format!(
                "model has {n} state dimensions but bound has {} and funnel has {}",
                bound.dim(),
                spec.dim()
            )));
        }
        Ok(Self {
            model,
            bound,
            spec,
            g_map,
            sign_smoothing: None,
        })
    }

    /// Replaces the discontinuous sign with `tanh((x_i - eta_i) / width)`.
    ///
    /// Smoothing trades away the containment argument, which relies on the
    /// robustness term dominating the learning error at full magnitude
    /// arbitrarily close to the switching surface; keep it off for anything
    /// that feeds the guarantee.
    pub fn with_sign_smoothing(mut self, width: f64) -> Self {
        assert!(width > 0.0, "smoothing width must be positive");
        self.sign_smoothing = Some(width);
        self
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn bound(&self) -> &BoundSet {
        &self.bound
    }

    pub fn spec(&self) -> &FunnelSpec {
        &self.spec
    }

    fn sign(&self, z: f64) -> f64 {
        match self.sign_smoothing {
            Some(w) => (z / w).tanh(),
            None => {
                if z < 0.0 {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Evaluates the feedback `u = -g^T (g g^T)^{-1} v` with
    /// `v_i = mu_i(x) + sign(x_i - eta_i) beta_i sigma_i(x) + xi_i + eps_bar (x_i - eta_i)`.
    pub fn control(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>, ControlError> {
        let te = self.spec.transform(x, t)?;
        let (mu, sigma) = self.model.posterior(x);
        let eps_bar = self.spec.eps_bar();
        let n = x.len();
        let v = DVector::from_fn(n, |i, _| {
            let off = x[i] - self.spec.dim_params(i).eta;
            mu[i] + self.sign(off) * self.bound.scale[i] * sigma[i] + te.xi[i] + eps_bar * off
        });
        let g = (self.g_map)(x);
        if g.nrows() != n {
            return Err(ControlError::DimensionMismatch(format!(
                "input map returned {} rows for an {n}-dimensional state",
                g.nrows()
            )));
        }
        let m = g.ncols();
        let gram = &g * g.transpose();
        let chol =
            Cholesky::new(gram).ok_or(ControlError::SingularInputMap { n, m })?;
        let z = chol.solve(&v);
        Ok(-(g.transpose() * z))
    }

    /// The learning-error compensation `sign(x_i - eta_i) beta_i sigma_i(x)`,
    /// exposed for diagnostics.
    pub fn robustness_term(&self, x: &DVector<f64>) -> DVector<f64> {
        let (_, sigma) = self.model.posterior(x);
        DVector::from_fn(x.len(), |i, _| {
            self.sign(x[i] - self.spec.dim_params(i).eta) * self.bound.scale[i] * sigma[i]
        })
    }

    /// Returns `V = xi^T xi / 2` and the certified decrement bound
    /// `-xi^T Phi_t xi`, with `Phi_t = diag(phi_i)`.
    pub fn lyapunov_value(&self, x: &DVector<f64>, t: f64) -> Result<(f64, f64), ControlError> {
        let te = self.spec.transform(x, t)?;
        let v = 0.5 * te.xi.dot(&te.xi);
        let dec = -(0..x.len()).map(|i| te.phi[i] * te.xi[i] * te.xi[i]).sum::<f64>();
        Ok((v, dec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::BoundKind;
    use crate::funnel::FunnelDim;
    use crate::gp::{Dataset, KernelParams, SeKernel, StateBox};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Scalar model with one training point at x = 0.2: mu(0.2) = 1,
    /// sigma(0.2) = sqrt(0.5) (signal 1, noise 1, target 2).
    fn scalar_model() -> Arc<GpModel> {
        let data = Dataset::from_rows(&[vec![0.2]], &[vec![2.0]], 1.0).unwrap();
        let params = KernelParams::new(vec![SeKernel::new(1.0, vec![1.0]).unwrap()]).unwrap();
        let domain = StateBox::cube(-2.0, 2.0, 1).unwrap();
        Arc::new(GpModel::fit(data, params, domain).unwrap())
    }

    fn scalar_spec() -> FunnelSpec {
        FunnelSpec::new(vec![FunnelDim {
            eta: 0.0,
            rho0: 0.3,
            rho_inf: 0.1,
            eps: 1.0,
            c: 1.0,
            d: 1.0,
        }])
        .unwrap()
    }

    fn constant_g(g: DMatrix<f64>) -> InputMap {
        Arc::new(move |_x: &DVector<f64>| g.clone())
    }

    fn identity_g(n: usize) -> InputMap {
        Arc::new(move |_x: &DVector<f64>| DMatrix::identity(n, n))
    }

    #[test]
    fn scalar_hand_value() {
        // At x = 0.2, t = 0: mu = 1, beta sigma = 0.5, rho(0) = 0.4 so
        // x_hat = 0.5 and xi = ln 3, eps_bar (x - eta) = 0.2, g = 2, hence
        // u = -(1 + 0.5 + ln 3 + 0.2) / 2.
        let beta = 0.5f64 / 0.5f64.sqrt();
        let law = ControlLaw::new(
            scalar_model(),
            BoundSet {
                kind: BoundKind::Deterministic,
                scale: vec![beta],
                confidence: 1.0,
            },
            scalar_spec(),
            constant_g(DMatrix::from_element(1, 1, 2.0)),
        )
        .unwrap();
        let u = law.control(&DVector::from_vec(vec![0.2]), 0.0).unwrap();
        let expect = -(1.0 + 0.5 + 3.0f64.ln() + 0.2) / 2.0;
        assert_relative_eq!(u[0], expect, max_relative = 1e-12);
        assert_relative_eq!(u[0], -1.3993061443340549, max_relative = 1e-12);
    }

    #[test]
    fn at_attractor_control_is_minus_mean_plus_robustness() {
        // x = eta: xi = 0, proportional term 0, sign(0) = +1, g = I.
        let law = ControlLaw::new(
            scalar_model(),
            BoundSet {
                kind: BoundKind::Deterministic,
                scale: vec![2.0],
                confidence: 1.0,
            },
            scalar_spec(),
            identity_g(1),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.0]);
        let u = law.control(&x, 0.0).unwrap();
        let (mu, sigma) = law.model().posterior(&x);
        assert_relative_eq!(u[0], -(mu[0] + 2.0 * sigma[0]), max_relative = 1e-12);
    }

    #[test]
    fn zero_bound_gives_pure_funnel_feedback() {
        let law = ControlLaw::new(
            scalar_model(),
            BoundSet {
                kind: BoundKind::Deterministic,
                scale: vec![0.0],
                confidence: 1.0,
            },
            scalar_spec(),
            identity_g(1),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.1]);
        let t = 0.3;
        let u = law.control(&x, t).unwrap();
        let te = law.spec().transform(&x, t).unwrap();
        let (mu, _) = law.model().posterior(&x);
        assert_relative_eq!(u[0], -(mu[0] + te.xi[0] + 1.0 * 0.1), max_relative = 1e-12);
    }

    #[test]
    fn robustness_term_signs_and_magnitude() {
        let data = Dataset::from_rows(
            &[vec![0.5, -0.5]],
            &[vec![1.0, -1.0]],
            0.1,
        )
        .unwrap();
        let params = KernelParams::new(vec![
            SeKernel::new(1.0, vec![1.0, 1.0]).unwrap(),
            SeKernel::new(2.0, vec![1.0, 1.0]).unwrap(),
        ])
        .unwrap();
        let domain = StateBox::cube(-2.0, 2.0, 2).unwrap();
        let model = Arc::new(GpModel::fit(data, params, domain).unwrap());
        let spec = FunnelSpec::new(vec![
            FunnelDim { eta: 0.0, rho0: 1.0, rho_inf: 1.0, eps: 1.0, c: 1.0, d: 1.0 },
            FunnelDim { eta: 0.0, rho0: 1.0, rho_inf: 1.0, eps: 1.0, c: 1.0, d: 1.0 },
        ])
        .unwrap();
        let beta = vec![1.5, 0.5];
        let law = ControlLaw::new(
            model,
            BoundSet {
                kind: BoundKind::Deterministic,
                scale: beta.clone(),
                confidence: 1.0,
            },
            spec,
            identity_g(2),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.3, -0.3]);
        let r = law.robustness_term(&x);
        let (_, sigma) = law.model().posterior(&x);
        assert_relative_eq!(r[0], beta[0] * sigma[0], max_relative = 1e-12);
        assert_relative_eq!(r[1], -beta[1] * sigma[1], max_relative = 1e-12);
        // Flipping one coordinate flips only that component's sign.
        let x2 = DVector::from_vec(vec![-0.3, -0.3]);
        let r2 = law.robustness_term(&x2);
        let (_, sigma2) = law.model().posterior(&x2);
        assert_relative_eq!(r2[0], -beta[0] * sigma2[0], max_relative = 1e-12);
        assert_relative_eq!(r2[1], -beta[1] * sigma2[1], max_relative = 1e-12);
        // sign(0) = +1.
        let r0 = law.robustness_term(&DVector::zeros(2));
        assert!(r0[0] > 0.0 && r0[1] > 0.0);
    }

    #[test]
    fn switching_surface_jump_is_twice_beta_sigma() {
        let law = ControlLaw::new(
            scalar_model(),
            BoundSet {
                kind: BoundKind::Deterministic,
                scale: vec![1.2],
                confidence: 1.0,
            },
            scalar_spec(),
            identity_g(1),
        )
        .unwrap();
        let h = 1e-12;
        let up = law.control(&DVector::from_vec(vec![h]), 0.0).unwrap()[0];
        let dn = law.control(&DVector::from_vec(vec![-h]), 0.0).unwrap()[0];
        let (_, sigma) = law.model().posterior(&DVector::from_vec(vec![0.0]));
        assert_relative_eq!((up - dn).abs(), 2.0 * 1.2 * sigma[0], max_relative = 1e-3);
    }

    #[test]
    fn tanh_smoothing_removes_the_jump() {
        let law = ControlLaw::new(
            scalar_model(),
            BoundSet {
                kind: BoundKind::Deterministic,
                scale: vec![1.2],
                confidence: 1.0,
            },
            scalar_spec(),
            identity_g(1),
        )
        .unwrap()
        .with_sign_smoothing(0.05);
        let h = 1e-9;
        let up = law.control(&DVector::from_vec(vec![h]), 0.0).unwrap()[0];
        let dn = law.control(&DVector::from_vec(vec![-h]), 0.0).unwrap()[0];
        assert!((up - dn).abs() < 1e-6);
    }

    #[test]
    fn pseudoinverse_consistency_on_random_wide_maps() {
        // g u = -v exactly for full-row-rank g: the law cancels v through g.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..200 {
            let n = rng.random_range(1..=4usize);
            let m = rng.random_range(n..=4usize);
            let g = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
            let chol = match Cholesky::new(&g * g.transpose()) {
                Some(c) => c,
                None => continue,
            };
            // Skip near-singular draws so the residual tolerance stays tight.
            if (0..n).map(|i| chol.l_dirty()[(i, i)]).fold(f64::INFINITY, f64::min) < 1e-2 {
                continue;
            }
            let v = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let u = -(g.transpose() * chol.solve(&v));
            let back = &g * &u;
            for i in 0..n {
                assert_relative_eq!(back[i], -v[i], epsilon = 1e-8, max_relative = 1e-8);
            }
            checked += 1;
        }
        assert!(checked > 150, "only {checked} draws were well-conditioned");
    }

    #[test]
    fn control_cancels_v_through_the_input_map() {
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let law = ControlLaw::new(
            scalar_model(),
            BoundSet {
                kind: BoundKind::Deterministic,
                scale: vec![0.7],
                confidence: 1.0,
            },
            scalar_spec(),
            constant_g(g.clone()),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.15]);
        let t = 0.2;
        let u = law.control(&x, t).unwrap();
        assert_eq!(u.len(), 2);
        let te = law.spec().transform(&x, t).unwrap();
        let (mu, sigma) = law.model().posterior(&x);
        let v = mu[0] + 0.7 * sigma[0] + te.xi[0] + 1.0 * 0.15;
        assert_relative_eq!((&g * &u)[0], -v, max_relative = 1e-12);
    }

    #[test]
    fn singular_input_map_is_reported() {
        let law = ControlLaw::new(
            scalar_model(),
            BoundSet {
                kind: BoundKind::Deterministic,
                scale: vec![0.7],
                confidence: 1.0,
            },
            scalar_spec(),
            constant_g(DMatrix::zeros(1, 2)),
        )
        .unwrap();
        let err = law.control(&DVector::from_vec(vec![0.1]), 0.0);
        assert!(matches!(
            err,
            Err(ControlError::SingularInputMap { n: 1, m: 2 })
        ));
    }

    #[test]
    fn outside_funnel_propagates() {
        let law = ControlLaw::new(
            scalar_model(),
            BoundSet {
                kind: BoundKind::Deterministic,
                scale: vec![0.7],
                confidence: 1.0,
            },
            scalar_spec(),
            identity_g(1),
        )
        .unwrap();
        // rho(0) = 0.4, corridor (-0.4, 0.4).
        let err = law.control(&DVector::from_vec(vec![0.5]), 0.0);
        assert!(matches!(
            err,
            Err(ControlError::Funnel(FunnelError::OutsideFunnel { dim: 0, .. }))
        ));
    }

    #[test]
    fn lyapunov_zero_at_attractor_and_decreasing_bound() {
        let law = ControlLaw::new(
            scalar_model(),
            BoundSet {
                kind: BoundKind::Deterministic,
                scale: vec![0.7],
                confidence: 1.0,
            },
            scalar_spec(),
            identity_g(1),
        )
        .unwrap();
        let (v0, d0) = law
            .lyapunov_value(&DVector::from_vec(vec![0.0]), 0.0)
            .unwrap();
        assert_eq!(v0, 0.0);
        assert_eq!(d0, 0.0);
        let (v, d) = law
            .lyapunov_value(&DVector::from_vec(vec![0.2]), 0.0)
            .unwrap();
        assert!(v > 0.0 && d < 0.0);
        // V matches xi computed by the transform, and the bound matches
        // -phi xi^2 for the diagonal case.
        let te = law.spec().transform(&DVector::from_vec(vec![0.2]), 0.0).unwrap();
        assert_relative_eq!(v, 0.5 * te.xi[0] * te.xi[0], max_relative = 1e-14);
        assert_relative_eq!(d, -te.phi[0] * te.xi[0] * te.xi[0], max_relative = 1e-14);
    }

    #[test]
    fn dimension_agreement_is_enforced() {
        let spec2 = FunnelSpec::new(vec![
            FunnelDim { eta: 0.0, rho0: 1.0, rho_inf: 0.1, eps: 1.0, c: 1.0, d: 1.0 },
            FunnelDim { eta: 0.0, rho0: 1.0, rho_inf: 0.1, eps: 1.0, c: 1.0, d: 1.0 },
        ])
        .unwrap();
        let bad = ControlLaw::new(
            scalar_model(),
            BoundSet {
                kind: BoundKind::Deterministic,
                scale: vec![0.7],
                confidence: 1.0,
            },
            spec2,
            identity_g(1),
        );
        assert!(matches!(bad, Err(ControlError::DimensionMismatch(_))));
    }
}
