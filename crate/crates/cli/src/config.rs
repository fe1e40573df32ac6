//! Run configuration: a sectioned TOML file with strict key checking.
//!
//! Unknown keys are rejected rather than ignored, so a typo in a tolerance
//! fails loudly instead of silently running with a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use reachfunnel::gp::{KernelParams, SeKernel, StateBox};
use reachfunnel::sim::{case_study_plant, Plant};

use crate::pipeline::CliError;

fn default_out_dir() -> PathBuf {
    PathBuf::from("artifacts")
}

fn default_true() -> bool {
    true
}

fn default_trials() -> u64 {
    1_000_000
}

fn default_confidence() -> f64 {
    1.0 - 1e-10
}

fn default_calibration_points() -> usize {
    20_000
}

fn default_padding() -> f64 {
    1.2
}

fn default_lipschitz_safety() -> f64 {
    2.0
}

fn default_traj_dt() -> f64 {
    0.01
}

fn default_traj_steps() -> usize {
    25
}

/// Top-level configuration consumed by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory all artifacts are written to; `--out` overrides it.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub plant: PlantSection,
    pub dataset: DatasetSection,
    pub kernel: KernelSection,
    pub bound: BoundSection,
    pub funnel: FunnelSection,
    pub sim: SimSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    /// Name of a built-in plant. Currently `case_study` is the only one.
    pub name: String,
}

/// How measurement inputs are drawn from the sampling box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Uniform,
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_samples: usize,
    pub noise_std: f64,
    /// Master seed; stage seeds are derived from it by fixed offsets.
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
    /// Optional CSV to load instead of collecting from the plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Step size for trajectory-mode collection.
    #[serde(default = "default_traj_dt")]
    pub traj_dt: f64,
    /// Samples recorded per trajectory restart in trajectory mode.
    #[serde(default = "default_traj_steps")]
    pub traj_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// Maximize the evidence starting from the listed values. When off, the
    /// listed values are used verbatim.
    #[serde(default = "default_true")]
    pub fit: bool,
    /// Initial signal standard deviation, one entry per state dimension.
    pub signal_std: Vec<f64>,
    /// Initial lengthscales, one row per state dimension.
    pub lengthscales: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    Probabilistic,
    Deterministic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub method: BoundMethod,
    /// Monte-Carlo trial count for coverage certification.
    #[serde(default = "default_trials")]
    pub trials: u64,
    /// Confidence level of the coverage interval.
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Per-dimension failure probability of the probabilistic bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Optional constant envelope half-width whose coverage is also
    /// reported, for comparison against published figures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<f64>,
    /// Probe points used to calibrate the Monte-Carlo envelope scale.
    #[serde(default = "default_calibration_points")]
    pub calibration_points: usize,
    /// Multiplier applied to the calibrated scale as a safety margin.
    #[serde(default = "default_padding")]
    pub padding: f64,
    /// Multiplier on the data-estimated Lipschitz constant before it enters
    /// the RKHS norm bound (the estimate is a lower bound on the truth).
    #[serde(default = "default_lipschitz_safety")]
    pub lipschitz_safety: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSection {
    pub fn to_state_box(&self, what: &str) -> Result<StateBox, CliError> {
        StateBox::new(self.lower.clone(), self.upper.clone())
            .map_err(|e| CliError::Input(format!("{what}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelSection {
    /// Per-dimension contraction rates.
    pub eps: Vec<f64>,
    /// Fraction of the goal clearance kept as the terminal corridor radius.
    pub theta: f64,
    /// Optional attractor override; defaults to the admissible midpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    pub start: BoxSection,
    pub goal: BoxSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub t_max: f64,
    #[serde(default = "default_true")]
    pub stop_on_reach: bool,
    /// Initial state for a single run; `--grid K` replaces it with a K x K
    /// grid over the start box.
    pub x0: Vec<f64>,
}

impl RunConfig {
    /// Parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Input(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| {
            CliError::Input(format!("invalid config {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds the configured plant.
    pub fn plant(&self) -> Result<Plant, CliError> {
        match self.plant.name.as_str() {
            "case_study" => Ok(case_study_plant()),
            other => Err(CliError::Input(format!(
                "unknown plant \"{other}\"; available plants: case_study"
            ))),
        }
    }

    /// Builds the kernel set from the `[kernel]` section.
    pub fn kernel_params(&self) -> Result<KernelParams, CliError> {
        let kernels = self
            .kernel
            .signal_std
            .iter()
            .zip(&self.kernel.lengthscales)
            .map(|(s, ls)| SeKernel::new(*s, ls.clone()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(format!("kernel section: {e}")))?;
        KernelParams::new(kernels).map_err(|e| CliError::Input(format!("kernel section: {e}")))
    }

    pub fn start_box(&self) -> Result<StateBox, CliError> {
        self.funnel.start.to_state_box("funnel.start")
    }

    pub fn goal_box(&self) -> Result<StateBox, CliError> {
        self.funnel.goal.to_state_box("funnel.goal")
    }

    /// Cross-field validation with actionable messages.
    pub fn validate(&self) -> Result<(), CliError> {
        let plant = self.plant()?;
        let n = plant.state_dim();
        let err = |msg: String| Err(CliError::Input(msg));

        if self.dataset.n_samples == 0 {
            return err("dataset.n_samples must be at least 1".into());
        }
        if !(self.dataset.noise_std.is_finite() && self.dataset.noise_std >= 0.0) {
            return err(format!(
                "dataset.noise_std must be finite and non-negative, got {}",
                self.dataset.noise_std
            ));
        }
        if self.dataset.sampling == Sampling::Trajectory {
            if !(self.dataset.traj_dt.is_finite() && self.dataset.traj_dt > 0.0) {
                return err(format!(
                    "dataset.traj_dt must be positive, got {}",
                    self.dataset.traj_dt
                ));
            }
            if self.dataset.traj_steps == 0 {
                return err("dataset.traj_steps must be at least 1".into());
            }
        }

        if self.kernel.signal_std.len() != n {
            return err(format!(
                "kernel.signal_std must list {n} entries (one per state dimension), got {}",
                self.kernel.signal_std.len()
            ));
        }
        if self.kernel.lengthscales.len() != n {
            return err(format!(
                "kernel.lengthscales must list {n} rows (one per state dimension), got {}",
                self.kernel.lengthscales.len()
            ));
        }
        for (i, row) in self.kernel.lengthscales.iter().enumerate() {
            if row.len() != n {
                return err(format!(
                    "kernel.lengthscales[{i}] must list {n} lengthscales, got {}",
                    row.len()
                ));
            }
        }
        self.kernel_params()?;

        if self.bound.trials == 0 {
            return err("bound.trials must be at least 1".into());
        }
        if !(self.bound.confidence > 0.0 && self.bound.confidence < 1.0) {
            return err(format!(
                "bound.confidence must lie in (0, 1), got {}",
                self.bound.confidence
            ));
        }
        if let Some(eps) = self.bound.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return err(format!("bound.epsilon must lie in (0, 1), got {eps}"));
            }
        }
        if self.bound.method == BoundMethod::Probabilistic && self.bound.epsilon.is_none() {
            return err(
                "bound.method = \"probabilistic\" requires bound.epsilon (the per-dimension \
                 failure probability)"
                    .into(),
            );
        }
        if let Some(env) = self.bound.envelope {
            if !(env.is_finite() && env > 0.0) {
                return err(format!("bound.envelope must be positive, got {env}"));
            }
        }
        if self.bound.calibration_points == 0 {
            return err("bound.calibration_points must be at least 1".into());
        }
        if !(self.bound.padding.is_finite() && self.bound.padding >= 1.0) {
            return err(format!(
                "bound.padding must be at least 1, got {}",
                self.bound.padding
            ));
        }
        if !(self.bound.lipschitz_safety.is_finite() && self.bound.lipschitz_safety >= 1.0) {
            return err(format!(
                "bound.lipschitz_safety must be at least 1, got {}",
                self.bound.lipschitz_safety
            ));
        }

        if self.funnel.eps.len() != n {
            return err(format!(
                "funnel.eps must list {n} rates, got {}",
                self.funnel.eps.len()
            ));
        }
        if self.funnel.eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return err("funnel.eps entries must be positive".into());
        }
        if !(self.funnel.theta > 0.0 && self.funnel.theta <= 1.0) {
            return err(format!(
                "funnel.theta must lie in (0, 1], got {}",
                self.funnel.theta
            ));
        }
        if let Some(eta) = &self.funnel.eta {
            if eta.len() != n {
                return err(format!(
                    "funnel.eta must list {n} coordinates, got {}",
                    eta.len()
                ));
            }
        }
        let start = self.start_box()?;
        let goal = self.goal_box()?;
        let domain = plant.state_box();
        if start.dim() != n || goal.dim() != n {
            return err(format!(
                "funnel.start and funnel.goal must be {n}-dimensional boxes"
            ));
        }
        if !start.is_subset_of(domain) || !goal.is_subset_of(domain) {
            return err(format!(
                "funnel.start and funnel.goal must lie inside the plant domain \
                 [{:?}, {:?}]",
                domain.lower(),
                domain.upper()
            ));
        }

        if !(self.sim.dt.is_finite() && self.sim.dt > 0.0) {
            return err(format!("sim.dt must be positive, got {}", self.sim.dt));
        }
        if !(self.sim.t_max.is_finite() && self.sim.t_max >= self.sim.dt) {
            return err(format!(
                "sim.t_max must be at least sim.dt, got {}",
                self.sim.t_max
            ));
        }
        if self.sim.x0.len() != n {
            return err(format!(
                "sim.x0 must list {n} coordinates, got {}",
                self.sim.x0.len()
            ));
        }
        Ok(())
    }
}

/// The built-in benchmark configuration used by `reproduce`.
pub fn case_study(out_dir: PathBuf) -> RunConfig {
    RunConfig {
        out_dir,
        plant: PlantSection {
            name: "case_study".into(),
        },
        dataset: DatasetSection {
            n_samples: 50,
            noise_std: 0.01,
            seed: 18,
            sampling: Sampling::Uniform,
            csv: None,
            traj_dt: default_traj_dt(),
            traj_steps: default_traj_steps(),
        },
        kernel: KernelSection {
            fit: false,
            signal_std: vec![316.0, 25.3],
            lengthscales: vec![vec![2.9, 177.0], vec![1.67, 50.5]],
        },
        bound: BoundSection {
            method: BoundMethod::MonteCarlo,
            trials: default_trials(),
            confidence: default_confidence(),
            epsilon: None,
            envelope: Some(0.04),
            calibration_points: default_calibration_points(),
            padding: default_padding(),
            lipschitz_safety: default_lipschitz_safety(),
        },
        funnel: FunnelSection {
            eps: vec![1.0, 1.0],
            theta: 0.5,
            eta: None,
            start: BoxSection {
                lower: vec![-3.0, -3.0],
                upper: vec![-2.0, -2.0],
            },
            goal: BoxSection {
                lower: vec![1.0, 1.0],
                upper: vec![3.0, 3.0],
            },
        },
        sim: SimSection {
            dt: 1e-3,
            t_max: 10.0,
            stop_on_reach: true,
            x0: vec![-2.5, -2.5],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = case_study(PathBuf::from("artifacts"));
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        back.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys() {
        let cfg = case_study(PathBuf::from("artifacts"));
        let mut text = toml::to_string_pretty(&cfg).unwrap();
        text.push_str("\n[dataset2]\nn_samples = 3\n");
        let err = toml::from_str::<RunConfig>(&text).unwrap_err();
        assert!(err.to_string().contains("dataset2"), "{err}");

        let typo = text.replace("n_samples = 50", "n_sampels = 50");
        let err = toml::from_str::<RunConfig>(&typo).unwrap_err();
        assert!(err.to_string().contains("n_sampels"), "{err}");
    }

    #[test]
    fn validation_messages_name_the_field() {
        let mut cfg = case_study(PathBuf::from("artifacts"));
        cfg.sim.dt = -1.0;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("sim.dt"), "{err}");

        let mut cfg = case_study(PathBuf::from("artifacts"));
        cfg.funnel.theta = 1.5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("funnel.theta"), "{err}");

        let mut cfg = case_study(PathBuf::from("artifacts"));
        cfg.kernel.lengthscales[1] = vec![1.0];
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("lengthscales[1]"), "{err}");

        let mut cfg = case_study(PathBuf::from("artifacts"));
        cfg.plant.name = "pendulum".into();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("pendulum"), "{err}");

        let mut cfg = case_study(PathBuf::from("artifacts"));
        cfg.bound.method = BoundMethod::Probabilistic;
        cfg.bound.epsilon = None;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("bound.epsilon"), "{err}");
    }

    #[test]
    fn probabilistic_epsilon_range_is_checked() {
        let mut cfg = case_study(PathBuf::from("artifacts"));
        cfg.bound.method = BoundMethod::Probabilistic;
        cfg.bound.epsilon = Some(1.5);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("bound.epsilon"), "{err}");
        cfg.bound.epsilon = Some(0.01);
        cfg.validate().unwrap();
    }
}
