//! True plant definitions and noisy measurement generation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::InputMap;
use crate::gp::{Dataset, GpError, StateBox};

/// Drift field `x -> f(x)`.
pub type DriftMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A control-affine plant `x_dot = f(x) + g(x) u` on a box-shaped domain.
///
/// The drift is ground truth for simulation and calibration only; the
/// controller sees it exclusively through learned models.
#[derive(Clone)]
pub struct Plant {
    f: DriftMap,
    g: InputMap,
    state_box: StateBox,
}

impl Plant {
    pub fn new(f: DriftMap, g: InputMap, state_box: StateBox) -> Self {
        Self { f, g, state_box }
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }

    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.g)(x)
    }

    /// Shared handle to the input map, for building a control law on the
    /// same `g` the plant uses.
    pub fn input_map(&self) -> InputMap {
        Arc::clone(&self.g)
    }

    pub fn state_box(&self) -> &StateBox {
        &self.state_box
    }

    pub fn state_dim(&self) -> usize {
        self.state_box.dim()
    }
}

/// The two-dimensional benchmark plant: a locally destabilizing drift with a
/// shifted sigmoid cross-coupling and an identity input map on `[-5, 5]^2`.
///
/// `f_1 = x_1 + (cos(x_1) - 1) x_2`, `f_2 = -s(x_1) + x_2` with
/// `s(z) = 1 / (1 + e^{-2z}) - 1/2`.
pub fn case_study_plant() -> Plant {
    let f: DriftMap = Arc::new(|x: &DVector<f64>| {
        let s = 1.0 / (1.0 + (-2.0 * x[0]).exp()) - 0.5;
        DVector::from_vec(vec![x[0] + (x[0].cos() - 1.0) * x[1], -s + x[1]])
    });
    let g: InputMap = Arc::new(|_x: &DVector<f64>| DMatrix::identity(2, 2));
    Plant::new(f, g, StateBox::cube(-5.0, 5.0, 2).expect("valid box"))
}

fn noise_draws(rng: &mut ChaCha12Rng, n: usize, sigma_f: f64) -> Vec<f64> {
    if sigma_f == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, sigma_f).expect("positive noise std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Draws `n` training pairs `(x, f(x) + w)` with states uniform over `sample_box`
/// and `w ~ N(0, sigma_f^2 I)`, deterministically per seed.
pub fn sample_measurements(
    plant: &Plant,
    sample_box: &StateBox,
    n: usize,
    sigma_f: f64,
    seed: u64,
) -> Result<Dataset, GpError> {
    if n == 0 {
        return Err(GpError::InvalidData(
            "measurement sampling needs n >= 1".into(),
        ));
    }
    if !(sigma_f.is_finite() && sigma_f >= 0.0) {
        return Err(GpError::InvalidParameter(format!(
            "noise std must be finite and nonnegative, got {sigma_f}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dim = sample_box.dim();
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_box.sample(&mut rng);
        let w = noise_draws(&mut rng, dim, sigma_f);
        let y = plant.drift(&x);
        inputs.push(x.iter().copied().collect::<Vec<f64>>());
        targets.push((0..dim).map(|i| y[i] + w[i]).collect::<Vec<f64>>());
    }
    Dataset::from_rows(&inputs, &targets, sigma_f)
}

/// Draws `n` training pairs along open-loop drift trajectories: start states
/// are uniform over `sample_box`, each trajectory is integrated with
/// fourth-order Runge-Kutta at step `dt`, and every visited state still
/// inside the box contributes one measurement. A trajectory ends after
/// `steps_per_start` steps or when it leaves the box, whichever comes first.
pub fn sample_measurements_from_trajectories(
    plant: &Plant,
    sample_box: &StateBox,
    n: usize,
    sigma_f: f64,
    seed: u64,
    dt: f64,
    steps_per_start: usize,
) -> Result<Dataset, GpError> {
    if n == 0 {
        return Err(GpError::InvalidData(
            "measurement sampling needs n >= 1".into(),
        ));
    }
    if !(sigma_f.is_finite() && sigma_f >= 0.0) {
        return Err(GpError::InvalidParameter(format!(
            "noise std must be finite and nonnegative, got {sigma_f}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) || steps_per_start == 0 {
        return Err(GpError::InvalidParameter(format!(
            "trajectory sampling needs dt > 0 and steps_per_start >= 1, \
             got dt = {dt}, steps_per_start = {steps_per_start}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dim = sample_box.dim();
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    'outer: loop {
        let mut x = sample_box.sample(&mut rng);
        for _ in 0..steps_per_start {
            if !sample_box.contains(&x) || !x.iter().all(|v| v.is_finite()) {
                break;
            }
            let w = noise_draws(&mut rng, dim, sigma_f);
            let y = plant.drift(&x);
            inputs.push(x.iter().copied().collect::<Vec<f64>>());
            targets.push((0..dim).map(|i| y[i] + w[i]).collect::<Vec<f64>>());
            if inputs.len() == n {
                break 'outer;
            }
            let k1 = plant.drift(&x);
            let k2 = plant.drift(&(&x + &k1 * (dt / 2.0)));
            let k3 = plant.drift(&(&x + &k2 * (dt / 2.0)));
            let k4 = plant.drift(&(&x + &k3 * dt));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
    }
    Dataset::from_rows(&inputs, &targets, sigma_f)
}
