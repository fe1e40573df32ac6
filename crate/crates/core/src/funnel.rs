//! Performance funnels, the error transformation, and funnel synthesis.
//!
//! A funnel prescribes, per state dimension, a shrinking open corridor
//! `-c_i rho_i(t) < x_i - eta_i < d_i rho_i(t)` around an attractor point
//! `eta`, with radius `rho_i(t) = rho0_i e^{-eps_i t} + rho_inf_i`. The
//! transformation `T_i` maps the corridor onto the whole real line; keeping
//! the transformed error finite certifies containment.
//!
//! [`synthesize`] constructs all funnel parameters from a start box, a goal
//! box, and the state domain so that the funnel starts covering the start box
//! and ends strictly inside the goal box.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::StateBox;

/// Smallest admissible value of `min(c_i, d_i)` before synthesis adjusts the
/// attractor; keeps the transform away from a division by (near) zero.
const MIN_SIDE: f64 = 1e-3;

/// Relative margin by which the attractor must clear the goal boundary.
const GOAL_MARGIN: f64 = 0.01;

/// Errors from funnel construction and evaluation.
#[derive(Debug, Error)]
pub enum FunnelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// No admissible attractor exists in the goal interior.
    #[error("infeasible goal: {0}")]
    InfeasibleGoal(String),
    /// Start and goal leave no room for a funnel in dimension `dim`.
    #[error("degenerate dimension {dim}: start and goal collapse to a single point")]
    DegenerateDim { dim: usize },
    /// A state left the funnel corridor.
    #[error(
        "state outside funnel in dimension {dim} at t = {time}: \
         x - eta = {offset} not within (-c rho, d rho) = ({lower}, {upper})"
    )]
    OutsideFunnel {
        dim: usize,
        time: f64,
        offset: f64,
        lower: f64,
        upper: f64,
    },
}

/// Funnel parameters of one state dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunnelDim {
    /// Attractor coordinate the error is measured against.
    pub eta: f64,
    /// Decaying part of the radius.
    pub rho0: f64,
    /// Asymptotic radius.
    pub rho_inf: f64,
    /// Exponential decay rate.
    pub eps: f64,
    /// Lower corridor width factor.
    pub c: f64,
    /// Upper corridor width factor.
    pub d: f64,
}

impl FunnelDim {
    fn validate(&self, i: usize) -> Result<(), FunnelError> {
        let fin = self.eta.is_finite()
            && self.rho0.is_finite()
            && self.rho_inf.is_finite()
            && self.eps.is_finite()
            && self.c.is_finite()
            && self.d.is_finite();
        if !fin {
            return Err(FunnelError::InvalidParameter(format!(
                "funnel dimension {i} has non-finite parameters: {self:?}"
            )));
        }
        if self.rho0 <= 0.0 || self.rho_inf <= 0.0 || self.eps <= 0.0 {
            return Err(FunnelError::InvalidParameter(format!(
                "funnel dimension {i} needs rho0, rho_inf, eps > 0, got \
                 rho0 = {}, rho_inf = {}, eps = {}",
                self.rho0, self.rho_inf, self.eps
            )));
        }
        // The transform divides by both c and d, so they must be strictly
        // positive, not merely c + d > 0.
        if self.c <= 0.0 || self.d <= 0.0 {
            return Err(FunnelError::InvalidParameter(format!(
                "funnel dimension {i} needs c, d > 0 for a well-posed transform, \
                 got c = {}, d = {}",
                self.c, self.d
            )));
        }
        Ok(())
    }
}

/// A complete per-dimension funnel description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelSpec {
    dims: Vec<FunnelDim>,
}

/// The transformed error with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedError {
    /// `xi_i = T_i(x_hat_i)`, the unconstrained error coordinate.
    pub xi: DVector<f64>,
    /// Modulated error `x_hat_i = (x_i - eta_i) / rho_i(t)`, inside `(-c_i, d_i)`.
    pub x_hat: DVector<f64>,
    /// `phi_i = (1 / rho_i(t)) dT_i/dx_hat_i > 0`.
    pub phi: DVector<f64>,
    /// `alpha_i = -rho_dot_i(t) / rho_i(t)`, in `(0, eps_i]`.
    pub alpha: DVector<f64>,
}

impl FunnelSpec {
    /// Builds a funnel from per-dimension parameters, validating positivity.
    pub fn new(dims: Vec<FunnelDim>) -> Result<Self, FunnelError> {
        if dims.is_empty() {
            return Err(FunnelError::InvalidParameter(
                "funnel needs at least one dimension".into(),
            ));
        }
        for (i, d) in dims.iter().enumerate() {
            d.validate(i)?;
        }
        Ok(Self { dims })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[FunnelDim] {
        &self.dims
    }

    pub fn dim_params(&self, i: usize) -> &FunnelDim {
        &self.dims[i]
    }

    /// Largest decay rate `max_i eps_i`, the proportional gain of the control law.
    pub fn eps_bar(&self) -> f64 {
        self.dims.iter().map(|d| d.eps).fold(0.0, f64::max)
    }

    /// Attractor point `eta`.
    pub fn eta(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.dims[i].eta)
    }

    /// Funnel radius `rho_i(t) = rho0_i e^{-eps_i t} + rho_inf_i`.
    pub fn rho(&self, i: usize, t: f64) -> f64 {
        assert!(t >= 0.0, "funnel radius is defined for t >= 0");
        let d = &self.dims[i];
        d.rho0 * (-d.eps * t).exp() + d.rho_inf
    }

    /// Radius derivative `rho_dot_i(t) = -eps_i rho0_i e^{-eps_i t}`.
    pub fn rho_dot(&self, i: usize, t: f64) -> f64 {
        assert!(t >= 0.0, "funnel radius is defined for t >= 0");
        let d = &self.dims[i];
        -d.eps * d.rho0 * (-d.eps * t).exp()
    }

    /// Open corridor `(eta_i - c_i rho_i(t), eta_i + d_i rho_i(t))` of
    /// dimension `i` at time `t`.
    pub fn interval(&self, i: usize, t: f64) -> (f64, f64) {
        let d = &self.dims[i];
        let r = self.rho(i, t);
        (d.eta - d.c * r, d.eta + d.d * r)
    }

    /// Strict membership of `x` in the funnel corridor at time `t`.
    pub fn contains(&self, x: &DVector<f64>, t: f64) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| {
                let (lo, hi) = self.interval(i, t);
                lo < x[i] && x[i] < hi
            })
    }

    /// Closure of the funnel cross-section at `t = 0`; covers the start box
    /// after synthesis.
    pub fn initial_box(&self) -> StateBox {
        let lo = (0..self.dim()).map(|i| self.interval(i, 0.0).0).collect();
        let hi = (0..self.dim()).map(|i| self.interval(i, 0.0).1).collect();
        StateBox::new(lo, hi).expect("funnel intervals are ordered")
    }

    /// Limit cross-section `prod_i [eta_i - c_i rho_inf_i, eta_i + d_i rho_inf_i]`;
    /// contained in the goal box after synthesis.
    pub fn terminal_box(&self) -> StateBox {
        let lo = (0..self.dim())
            .map(|i| self.dims[i].eta - self.dims[i].c * self.dims[i].rho_inf)
            .collect();
        let hi = (0..self.dim())
            .map(|i| self.dims[i].eta + self.dims[i].d * self.dims[i].rho_inf)
            .collect();
        StateBox::new(lo, hi).expect("funnel intervals are ordered")
    }

    /// Applies the transformation directly to a modulated error, dimension
    /// by dimension: `xi_i = ln(d_i (c_i + x_hat_i) / (c_i (d_i - x_hat_i)))`.
    ///
    /// This is the bijection `(-c, d) -> R` that [`FunnelSpec::transform`]
    /// composes with the time-dependent normalization. Errors with
    /// [`FunnelError::OutsideFunnel`] when a component is not strictly
    /// inside `(-c_i, d_i)`; the error then reports modulated units and
    /// time 0.
    pub fn transform_modulated(&self, x_hat: &DVector<f64>) -> Result<DVector<f64>, FunnelError> {
        if x_hat.len() != self.dim() {
            return Err(FunnelError::DimensionMismatch(format!(
                "modulated error has {} dimensions but funnel has {}",
                x_hat.len(),
                self.dim()
            )));
        }
        let mut xi = DVector::zeros(self.dim());
        for i in 0..self.dim() {
            let d = &self.dims[i];
            let h = x_hat[i];
            if !(-d.c < h && h < d.d) {
                return Err(FunnelError::OutsideFunnel {
                    dim: i,
                    time: 0.0,
                    offset: h,
                    lower: -d.c,
                    upper: d.d,
                });
            }
            xi[i] = ((d.d * (d.c + h)) / (d.c * (d.d - h))).ln();
        }
        Ok(xi)
    }

    /// Maps a state to the transformed error
    /// `xi_i = ln(d_i (c_i + x_hat_i) / (c_i (d_i - x_hat_i)))` with its
    /// diagnostics. Errors with [`FunnelError::OutsideFunnel`] when any
    /// `x_hat_i` is not strictly inside `(-c_i, d_i)`.
    pub fn transform(&self, x: &DVector<f64>, t: f64) -> Result<TransformedError, FunnelError> {
        if x.len() != self.dim() {
            return Err(FunnelError::DimensionMismatch(format!(
                "state has {} dimensions but funnel has {}",
                x.len(),
                self.dim()
            )));
        }
        let n = self.dim();
        let mut xi = DVector::zeros(n);
        let mut x_hat = DVector::zeros(n);
        let mut phi = DVector::zeros(n);
        let mut alpha = DVector::zeros(n);
        for i in 0..n {
            let d = &self.dims[i];
            let r = self.rho(i, t);
            let h = (x[i] - d.eta) / r;
            if !(-d.c < h && h < d.d) {
                return Err(FunnelError::OutsideFunnel {
                    dim: i,
                    time: t,
                    offset: x[i] - d.eta,
                    lower: -d.c * r,
                    upper: d.d * r,
                });
            }
            x_hat[i] = h;
            xi[i] = ((d.d * (d.c + h)) / (d.c * (d.d - h))).ln();
            phi[i] = (d.c + d.d) / (r * (d.c + h) * (d.d - h));
            alpha[i] = -self.rho_dot(i, t) / r;
        }
        Ok(TransformedError {
            xi,
            x_hat,
            phi,
            alpha,
        })
    }

    /// Analytic inverse of the transformation:
    /// `x_hat = c d (e^xi - 1) / (d + c e^xi)`, evaluated in the
    /// exponentially stable direction so large `|xi|` does not overflow.
    ///
    /// The result is strictly inside `(-c, d)` while `e^{-|xi|}` stays above
    /// the underflow threshold (|xi| up to about 700); beyond that it
    /// saturates at the corridor boundary.
    pub fn inverse_transform(&self, xi: &DVector<f64>) -> DVector<f64> {
        assert_eq!(xi.len(), self.dim(), "dimension mismatch");
        DVector::from_fn(self.dim(), |i, _| {
            let d = &self.dims[i];
            if xi[i] >= 0.0 {
                let e = (-xi[i]).exp();
                d.c * d.d * (1.0 - e) / (d.d * e + d.c)
            } else {
                let e = xi[i].exp();
                d.c * d.d * (e - 1.0) / (d.d + d.c * e)
            }
        })
    }

    /// Writes the funnel bounds over `[0, t_end]` as CSV with columns
    /// `t, lb_1, ub_1, ..., lb_n, ub_n` and `steps + 1` rows.
    pub fn write_bounds_csv<W: Write>(
        &self,
        w: W,
        t_end: f64,
        steps: usize,
    ) -> std::io::Result<()> {
        assert!(t_end >= 0.0 && steps >= 1, "need t_end >= 0 and steps >= 1");
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        for i in 1..=self.dim() {
            header.push(format!("lb_{i}"));
            header.push(format!("ub_{i}"));
        }
        wtr.write_record(&header)
            .map_err(std::io::Error::other)?;
        for k in 0..=steps {
            let t = t_end * k as f64 / steps as f64;
            let mut rec = vec![t.to_string()];
            for i in 0..self.dim() {
                let (lo, hi) = self.interval(i, t);
                rec.push(lo.to_string());
                rec.push(hi.to_string());
            }
            wtr.write_record(&rec).map_err(std::io::Error::other)?;
        }
        wtr.flush()
    }
}

/// How the attractor is chosen inside the admissible interval.
#[derive(Debug, Clone, PartialEq)]
pub enum EtaPolicy {
    /// Midpoint of the admissible interval (default).
    Midpoint,
    /// Caller-supplied attractor; must lie inside the goal interior margin.
    Fixed(Vec<f64>),
}

/// A synthesized funnel together with any adjustments made along the way.
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub spec: FunnelSpec,
    /// Human-readable notes about fallbacks (attractor moved, start-interval
    /// branch abandoned, unusually thin corridor sides).
    pub warnings: Vec<String>,
}

/// Which interval the width factors are measured against.
#[derive(Clone, Copy, PartialEq)]
enum Branch {
    /// Start and goal ranges overlap: the funnel starts exactly on the
    /// start range `[al, au]`.
    Start,
    /// Disjoint ranges: the funnel starts on the hull of start and goal.
    Hull,
}

/// Constructs a funnel that initially covers `start`, asymptotically sits
/// strictly inside `goal`, and decays at the given per-dimension rates.
///
/// Per dimension, the attractor is placed in the overlap of the start and
/// goal ranges when that overlap meets the goal interior (with a 1% margin),
/// otherwise in the goal interior alone; the radius and width factors follow
/// from the distances of the attractor to the relevant interval endpoints.
/// `theta` in `(0, 1]` scales the asymptotic radius relative to the largest
/// value that keeps the terminal box inside the goal.
pub fn synthesize(
    start: &StateBox,
    goal: &StateBox,
    domain: &StateBox,
    eps: &[f64],
    theta: f64,
    eta_policy: &EtaPolicy,
) -> Result<SynthesisResult, FunnelError> {
    let n = domain.dim();
    if start.dim() != n || goal.dim() != n {
        return Err(FunnelError::DimensionMismatch(format!(
            "domain has {n} dimensions but start has {} and goal has {}",
            start.dim(),
            goal.dim()
        )));
    }
    if eps.len() != n {
        return Err(FunnelError::DimensionMismatch(format!(
            "need {n} decay rates, got {}",
            eps.len()
        )));
    }
    if let Some(e) = eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(FunnelError::InvalidParameter(format!(
            "decay rates must be positive and finite, got {e}"
        )));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(FunnelError::InvalidParameter(format!(
            "shrink factor theta must lie in (0, 1], got {theta}"
        )));
    }
    if !start.is_subset_of(domain) || !goal.is_subset_of(domain) {
        return Err(FunnelError::InfeasibleGoal(
            "start and goal boxes must lie inside the state domain".into(),
        ));
    }
    if !goal.has_interior() {
        return Err(FunnelError::InfeasibleGoal(
            "goal box must have nonempty interior in every dimension".into(),
        ));
    }
    if let EtaPolicy::Fixed(v) = eta_policy {
        if v.len() != n {
            return Err(FunnelError::DimensionMismatch(format!(
                "fixed attractor has {} dimensions, expected {n}",
                v.len()
            )));
        }
    }

    let mut dims = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for i in 0..n {
        let (al, au) = start.interval(i);
        let (bl, bu) = goal.interval(i);
        let margin = GOAL_MARGIN * (bu - bl);
        // Attractor candidates must clear the goal boundary by the margin.
        let (g_lo, g_hi) = (bl + margin, bu - margin);

        let overlap = (al.max(bl), au.min(bu));
        let mut branch = if overlap.0 <= overlap.1 {
            Branch::Start
        } else {
            Branch::Hull
        };
        let mut adm = if branch == Branch::Start {
            let a = (overlap.0.max(g_lo), overlap.1.min(g_hi));
            if a.0 > a.1 {
                warnings.push(format!(
                    "dimension {i}: start/goal overlap [{}, {}] misses the goal \
                     interior margin; using the hull construction instead",
                    overlap.0, overlap.1
                ));
                branch = Branch::Hull;
                (g_lo, g_hi)
            } else {
                a
            }
        } else {
            (g_lo, g_hi)
        };

        let mut eta = match eta_policy {
            EtaPolicy::Midpoint => 0.5 * (adm.0 + adm.1),
            EtaPolicy::Fixed(v) => {
                let e = v[i];
                if !(g_lo <= e && e <= g_hi) {
                    return Err(FunnelError::InfeasibleGoal(format!(
                        "fixed attractor {e} in dimension {i} violates the goal \
                         interior margin [{g_lo}, {g_hi}]"
                    )));
                }
                if branch == Branch::Start && !(adm.0 <= e && e <= adm.1) {
                    warnings.push(format!(
                        "dimension {i}: fixed attractor {e} lies outside the \
                         start/goal overlap; using the hull construction instead"
                    ));
                    branch = Branch::Hull;
                    adm = (g_lo, g_hi);
                }
                e
            }
        };

        // Width factors from the distances to the branch interval endpoints;
        // retry ladder: recenter within the admissible interval, then abandon
        // the start-interval branch, before accepting a thin corridor.
        let bounds = |branch: Branch| match branch {
            Branch::Start => (al, au),
            Branch::Hull => (al.min(bl), au.max(bu)),
        };
        let widths = |eta: f64, branch: Branch| {
            let (lo, hi) = bounds(branch);
            let rho0 = (eta - lo).max(hi - eta);
            if rho0 > 0.0 {
                (rho0, (eta - lo) / rho0, (hi - eta) / rho0)
            } else {
                (0.0, 0.0, 0.0)
            }
        };

        let (mut rho0, mut c, mut d) = widths(eta, branch);
        if rho0 == 0.0 || c.min(d) < MIN_SIDE {
            let (lo, hi) = bounds(branch);
            let centered = (0.5 * (lo + hi)).clamp(adm.0, adm.1);
            if centered != eta && matches!(eta_policy, EtaPolicy::Midpoint) {
                warnings.push(format!(
                    "dimension {i}: attractor moved from {eta} to {centered} to \
                     keep both corridor sides usable"
                ));
                eta = centered;
                (rho0, c, d) = widths(eta, branch);
            }
        }
        if (rho0 == 0.0 || c.min(d) < MIN_SIDE) && branch == Branch::Start {
            warnings.push(format!(
                "dimension {i}: start-interval construction leaves a degenerate \
                 corridor side; using the hull construction instead"
            ));
            branch = Branch::Hull;
            adm = (g_lo, g_hi);
            if matches!(eta_policy, EtaPolicy::Midpoint) {
                eta = 0.5 * (adm.0 + adm.1);
            }
            (rho0, c, d) = widths(eta, branch);
        }
        if rho0 == 0.0 {
            return Err(FunnelError::DegenerateDim { dim: i });
        }
        if c.min(d) < MIN_SIDE {
            // The hull construction guarantees c, d > 0 (the attractor clears
            // the goal boundary by the margin), so a thin side is usable,
            // just stiff.
            warnings.push(format!(
                "dimension {i}: corridor side ratio {:.3e} is below {MIN_SIDE}; \
                 the transform will be stiff near the thin side",
                c.min(d)
            ));
        }

        // Largest asymptotic radius that keeps the terminal interval inside
        // the goal, shrunk by theta.
        let rho_inf = theta * (eta - bl).min(bu - eta) / c.max(d);
        dims.push(FunnelDim {
            eta,
            rho0,
            rho_inf,
            eps: eps[i],
            c,
            d,
        });
    }

    let spec = FunnelSpec::new(dims)?;
    debug_assert!(
        spec.initial_box().dim() == n && {
            let ib = spec.initial_box();
            start.is_subset_of(&ib)
        },
        "synthesized funnel must cover the start box at t = 0"
    );
    debug_assert!(
        spec.terminal_box().is_subset_of(goal),
        "synthesized funnel must end inside the goal box"
    );
    Ok(SynthesisResult { spec, warnings })
}
