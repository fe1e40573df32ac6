//! Closed-loop simulation, reach detection, and funnel auditing.
//!
//! [`integrate`] runs the plant under a feedback law on a fixed time grid,
//! recording states, inputs, the transformed error, and the funnel corridor
//! at every grid point. Leaving the funnel is a hard error: it falsifies the
//! containment event the controller certifies, so it must surface rather
//! than be clamped away.

mod plant;

pub use plant::{
    case_study_plant, sample_measurements, sample_measurements_from_trajectories, DriftMap,
    Plant,
};

use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControlError, ControlLaw};
use crate::funnel::{FunnelError, FunnelSpec};
use crate::gp::StateBox;

/// Errors from closed-loop simulation and trajectory I/O.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    /// The state left the funnel corridor; the containment event failed or
    /// the step size is too coarse for the commanded decay.
    #[error("state left the funnel in dimension {dim} at step {step} (t = {time})")]
    FunnelExit { step: usize, time: f64, dim: usize },
    #[error("state became non-finite at step {step} (t = {time})")]
    NumericalBlowup { step: usize, time: f64 },
    #[error(transparent)]
    Control(ControlError),
    #[error("trajectory file error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory data: {0}")]
    Parse(String),
}

/// Time stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk4,
    Euler,
}

/// Fixed-step closed-loop simulation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub integrator: Integrator,
    /// Stop at the first grid point inside `goal` instead of running to
    /// `t_max`; requires `goal`.
    pub stop_on_reach: bool,
    pub seed: u64,
    /// Goal box for reach detection at grid points.
    pub goal: Option<StateBox>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_max: 10.0,
            integrator: Integrator::Rk4,
            stop_on_reach: false,
            seed: 0,
            goal: None,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.t_max.is_finite() && self.dt > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "need finite 0 < dt <= t_max, got dt = {}, t_max = {}",
                self.dt, self.t_max
            )));
        }
        if self.dt > self.t_max {
            return Err(SimError::InvalidConfig(format!(
                "step dt = {} exceeds horizon t_max = {}",
                self.dt, self.t_max
            )));
        }
        if self.stop_on_reach && self.goal.is_none() {
            return Err(SimError::InvalidConfig(
                "stop_on_reach requires a goal box".into(),
            ));
        }
        Ok(())
    }
}

/// A recorded closed-loop run on a fixed time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    inputs: Vec<DVector<f64>>,
    xis: Vec<DVector<f64>>,
    lyapunov: Vec<f64>,
    /// Funnel corridor `(lower, upper)` per dimension at each grid point.
    bounds: Vec<Vec<(f64, f64)>>,
    reach_time: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn xis(&self) -> &[DVector<f64>] {
        &self.xis
    }

    pub fn lyapunov(&self) -> &[f64] {
        &self.lyapunov
    }

    pub fn bounds(&self) -> &[Vec<(f64, f64)>] {
        &self.bounds
    }

    /// First grid time with the state inside the goal box, if detection was
    /// enabled during integration.
    pub fn reach_time(&self) -> Option<f64> {
        self.reach_time
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    /// Writes the run as CSV with columns
    /// `t, x_1.., u_1.., xi_1.., V, lb_1, ub_1, ..`. The reach time is not
    /// part of the record stream; recompute it with [`reach_check`].
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.extend((1..=n).map(|i| format!("xi_{i}")));
        header.push("V".to_string());
        for i in 1..=n {
            header.push(format!("lb_{i}"));
            header.push(format!("ub_{i}"));
        }
        wtr.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![self.times[k].to_string()];
            rec.extend(self.states[k].iter().map(|v| v.to_string()));
            rec.extend(self.inputs[k].iter().map(|v| v.to_string()));
            rec.extend(self.xis[k].iter().map(|v| v.to_string()));
            rec.push(self.lyapunov[k].to_string());
            for &(lo, hi) in &self.bounds[k] {
                rec.push(lo.to_string());
                rec.push(hi.to_string());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a run back from [`Trajectory::write_csv`] output, inferring the
    /// state and input dimensions from the header.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let n = cols.iter().filter(|c| c.starts_with("x_")).count();
        let m = cols.iter().filter(|c| c.starts_with("u_")).count();
        let expected = 1 + n + m + n + 1 + 2 * n;
        if n == 0 || cols.len() != expected || cols[0] != "t" {
            return Err(SimError::Parse(format!(
                "unexpected trajectory header: {cols:?}"
            )));
        }
        let mut traj = Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            inputs: Vec::new(),
            xis: Vec::new(),
            lyapunov: Vec::new(),
            bounds: Vec::new(),
            reach_time: None,
        };
        for record in rdr.records() {
            let record = record?;
            let vals: Vec<f64> = record
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| SimError::Parse(format!("bad number {v:?}: {e}")))
                })
                .collect::<Result<_, _>>()?;
            if vals.len() != expected {
                return Err(SimError::Parse(format!(
                    "row has {} fields, expected {expected}",
                    vals.len()
                )));
            }
            let mut at = 0usize;
            let mut take = |k: usize| {
                let s = &vals[at..at + k];
                at += k;
                s.to_vec()
            };
            traj.times.push(take(1)[0]);
            traj.states.push(DVector::from_vec(take(n)));
            traj.inputs.push(DVector::from_vec(take(m)));
            traj.xis.push(DVector::from_vec(take(n)));
            traj.lyapunov.push(take(1)[0]);
            let b = take(2 * n);
            traj.bounds
                .push((0..n).map(|i| (b[2 * i], b[2 * i + 1])).collect());
        }
        if traj.is_empty() {
            return Err(SimError::Parse("trajectory file has no rows".into()));
        }
        Ok(traj)
    }

    pub fn write_csv_path(&self, path: &std::path::Path) -> Result<(), SimError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv_path(path: &std::path::Path) -> Result<Self, SimError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

enum FieldError {
    NonFinite { time: f64 },
    Control(ControlError),
}

fn closed_loop_field(
    plant: &Plant,
    law: &ControlLaw,
    x: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>, FieldError> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(FieldError::NonFinite { time: t });
    }
    let u = law.control(x, t).map_err(FieldError::Control)?;
    Ok(plant.drift(x) + plant.input_matrix(x) * u)
}

/// Simulates `x_dot = f(x) + g(x) u(x, t)` from `x0` on the fixed grid of
/// `cfg`, recording diagnostics at every grid point.
///
/// The run ends at `t_max`, at the first grid point inside `cfg.goal` when
/// `stop_on_reach` is set, or with an error: [`SimError::FunnelExit`] when
/// the state (or an integration stage) leaves the funnel,
/// [`SimError::NumericalBlowup`] when it becomes non-finite.
pub fn integrate(
    plant: &Plant,
    law: &ControlLaw,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    if x0.len() != plant.state_dim() {
        return Err(SimError::InvalidConfig(format!(
            "initial state has {} dimensions, plant has {}",
            x0.len(),
            plant.state_dim()
        )));
    }
    let spec: &FunnelSpec = law.spec();
    let n_full = (cfg.t_max / cfg.dt).floor() as usize;
    let rem = cfg.t_max - n_full as f64 * cfg.dt;
    let final_partial = rem > 1e-9 * cfg.dt;

    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        inputs: Vec::new(),
        xis: Vec::new(),
        lyapunov: Vec::new(),
        bounds: Vec::new(),
        reach_time: None,
    };
    let mut x = x0.clone();
    let mut step = 0usize;
    loop {
        let t = if step <= n_full {
            step as f64 * cfg.dt
        } else {
            cfg.t_max
        };
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SimError::NumericalBlowup { step, time: t });
        }
        let te = match spec.transform(&x, t) {
            Ok(te) => te,
            Err(FunnelError::OutsideFunnel { dim, .. }) => {
                return Err(SimError::FunnelExit { step, time: t, dim })
            }
            Err(e) => return Err(SimError::Control(ControlError::Funnel(e))),
        };
        let u = match law.control(&x, t) {
            Ok(u) => u,
            Err(ControlError::Funnel(FunnelError::OutsideFunnel { dim, .. })) => {
                return Err(SimError::FunnelExit { step, time: t, dim })
            }
            Err(e) => return Err(SimError::Control(e)),
        };
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.inputs.push(u.clone());
        traj.lyapunov.push(0.5 * te.xi.dot(&te.xi));
        traj.xis.push(te.xi);
        traj.bounds
            .push((0..spec.dim()).map(|i| spec.interval(i, t)).collect());

        if traj.reach_time.is_none() {
            if let Some(goal) = &cfg.goal {
                if goal.contains(&x) {
                    traj.reach_time = Some(t);
                    if cfg.stop_on_reach {
                        break;
                    }
                }
            }
        }
        let last = if final_partial { n_full + 1 } else { n_full };
        if step >= last {
            break;
        }
        let h = if step < n_full { cfg.dt } else { rem };
        let map_err = |e: FieldError, step: usize| match e {
            FieldError::NonFinite { time } => SimError::NumericalBlowup { step, time },
            FieldError::Control(ControlError::Funnel(FunnelError::OutsideFunnel {
                dim,
                time,
                ..
            })) => SimError::FunnelExit { step, time, dim },
            FieldError::Control(e) => SimError::Control(e),
        };
        x = match cfg.integrator {
            Integrator::Euler => {
                let k1 = closed_loop_field(plant, law, &x, t).map_err(|e| map_err(e, step))?;
                x + k1 * h
            }
            Integrator::Rk4 => {
                let k1 = closed_loop_field(plant, law, &x, t).map_err(|e| map_err(e, step))?;
                let k2 = closed_loop_field(plant, law, &(&x + &k1 * (h / 2.0)), t + h / 2.0)
                    .map_err(|e| map_err(e, step))?;
                let k3 = closed_loop_field(plant, law, &(&x + &k2 * (h / 2.0)), t + h / 2.0)
                    .map_err(|e| map_err(e, step))?;
                let k4 = closed_loop_field(plant, law, &(&x + &k3 * h), t + h)
                    .map_err(|e| map_err(e, step))?;
                x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
            }
        };
        step += 1;
    }
    Ok(traj)
}

/// Smallest recorded grid time whose state lies inside `goal`.
pub fn reach_check(traj: &Trajectory, goal: &StateBox) -> Option<f64> {
    traj.times
        .iter()
        .zip(&traj.states)
        .find(|(_, x)| goal.contains(x))
        .map(|(t, _)| *t)
}

/// Containment audit of a recorded run against a funnel.
#[derive(Debug, Clone)]
pub struct FunnelAudit {
    /// `margins[k][i]`: distance of `x_i(t_k)` to the nearer corridor wall;
    /// positive inside.
    pub margins: Vec<Vec<f64>>,
    pub min_margin: f64,
    /// `(step, dimension)` pairs with margin <= 0.
    pub violations: Vec<(usize, usize)>,
}

impl FunnelAudit {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Recomputes the funnel corridor along the trajectory times and measures
/// the state's distance to both walls in every dimension.
pub fn funnel_audit(traj: &Trajectory, spec: &FunnelSpec) -> FunnelAudit {
    let n = spec.dim();
    let mut margins = Vec::with_capacity(traj.len());
    let mut min_margin = f64::INFINITY;
    let mut violations = Vec::new();
    for k in 0..traj.len() {
        let t = traj.times[k];
        let x = &traj.states[k];
        let mut row = Vec::with_capacity(n);
        for i in 0..n {
            let p = spec.dim_params(i);
            let r = spec.rho(i, t);
            let off = x[i] - p.eta;
            let margin = (p.d * r - off).min(off + p.c * r);
            if margin <= 0.0 {
                violations.push((k, i));
            }
            min_margin = min_margin.min(margin);
            row.push(margin);
        }
        margins.push(row);
    }
    FunnelAudit {
        margins,
        min_margin,
        violations,
    }
}
