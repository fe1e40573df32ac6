//! Axis-aligned boxes used as state domains, start sets, and goal sets.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GpError;

/// An axis-aligned hyperrectangle `[lower_1, upper_1] x ... x [lower_n, upper_n]`.
///
/// Bounds are inclusive; `lower_i <= upper_i` is enforced at construction
/// (degenerate intervals with `lower_i == upper_i` are allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl StateBox {
    /// Builds a box from per-dimension bounds.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GpError> {
        if lower.len() != upper.len() {
            return Err(GpError::DimensionMismatch(format!(
                "box lower has {} entries but upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.is_empty() {
            return Err(GpError::InvalidParameter(
                "box must have at least one dimension".into(),
            ));
        }
        for i in 0..lower.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(GpError::InvalidParameter(format!(
                    "box bounds must be finite, got [{}, {}] in dimension {i}",
                    lower[i], upper[i]
                )));
            }
            if lower[i] > upper[i] {
                return Err(GpError::InvalidParameter(format!(
                    "box lower bound {} exceeds upper bound {} in dimension {i}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Convenience constructor for the common cube `[lo, hi]^n`.
    pub fn cube(lo: f64, hi: f64, n: usize) -> Result<Self, GpError> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    /// Number of dimensions.
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Interval `[lower_i, upper_i]` of dimension `i`.
    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.lower[i], self.upper[i])
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Componentwise membership with inclusive bounds.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| self.lower[i] <= x[i] && x[i] <= self.upper[i])
    }

    /// Strict membership in the interior (every coordinate strictly between the bounds).
    pub fn contains_interior(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| self.lower[i] < x[i] && x[i] < self.upper[i])
    }

    /// True when `self` is contained in `other` (inclusive on both sides).
    pub fn is_subset_of(&self, other: &StateBox) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| other.lower[i] <= self.lower[i] && self.upper[i] <= other.upper[i])
    }

    /// True when every dimension has positive width.
    pub fn has_interior(&self) -> bool {
        (0..self.dim()).all(|i| self.lower[i] < self.upper[i])
    }

    /// Center point of the box.
    pub fn center(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| 0.5 * (self.lower[i] + self.upper[i]))
    }

    /// A point drawn uniformly from the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            if self.lower[i] == self.upper[i] {
                self.lower[i]
            } else {
                rng.random_range(self.lower[i]..self.upper[i])
            }
        })
    }

    /// All points of the uniform grid with `points_per_dim` nodes per axis,
    /// endpoints included. With `points_per_dim == 1` the center is returned.
    ///
    /// The grid is enumerated in row-major order (last dimension fastest),
    /// so the output is deterministic.
    pub fn grid(&self, points_per_dim: usize) -> Vec<DVector<f64>> {
        let n = self.dim();
        if points_per_dim == 0 {
            return Vec::new();
        }
        if points_per_dim == 1 {
            return vec![self.center()];
        }
        let axis = |i: usize, k: usize| {
            let (lo, hi) = self.interval(i);
            lo + (hi - lo) * (k as f64) / ((points_per_dim - 1) as f64)
        };
        let total = points_per_dim.pow(n as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        loop {
            out.push(DVector::from_fn(n, |i, _| axis(i, idx[i])));
            let mut i = n;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                idx[i] += 1;
                if idx[i] < points_per_dim {
                    break;
                }
                idx[i] = 0;
            }
        }
    }

    /// Per-dimension spacing of the grid produced by [`StateBox::grid`].
    pub fn grid_cell(&self, points_per_dim: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let (lo, hi) = self.interval(i);
                if points_per_dim <= 1 {
                    hi - lo
                } else {
                    (hi - lo) / ((points_per_dim - 1) as f64)
                }
            })
            .collect()
    }
}
