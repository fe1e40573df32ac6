//! Command implementations. Each command reads its inputs from the output
//! directory (or collects them), writes versioned artifacts plus
//! human-readable reports, and returns its products so composite commands
//! can chain them without re-reading disk.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use reachfunnel::bounds::{
    beta_deterministic, beta_probabilistic, estimate_lipschitz_sqrt, info_gain_greedy,
    monte_carlo_coverage, rkhs_bound, BoundError, BoundSet, CoverageReport, Envelope,
};
use reachfunnel::controller::{ControlError, ControlLaw};
use reachfunnel::funnel::{synthesize, EtaPolicy, FunnelError, SynthesisResult};
use reachfunnel::gp::{optimize_hyperparams, Dataset, GpError, GpModel, OptimizeOptions};
use reachfunnel::sim::{
    funnel_audit, integrate, sample_measurements, sample_measurements_from_trajectories,
    FunnelAudit, SimConfig, SimError, Trajectory,
};

use crate::artifacts::{
    bound_path, funnel_path, load_bound, load_funnel, load_model, model_path, save_toml,
    write_metadata, BoundFile, FunnelFile, ModelFile, FORMAT_VERSION,
};
use crate::config::{BoundMethod, RunConfig, Sampling};
use crate::plot;

/// Seed offsets from the master seed, one per randomized stage.
const SEED_OFF_COVERAGE: u64 = 1;
const SEED_OFF_CALIBRATION: u64 = 2;
const SEED_OFF_FIT: u64 = 3;

/// Published reference values for the bundled benchmark, used by
/// `reproduce` to fill the comparison columns of its summary.
const PUBLISHED_SIGMA_BAR_MAX: f64 = 0.0616;
const PUBLISHED_COVERAGE: [f64; 2] = [0.9894, 0.9907];
const PUBLISHED_BETA_TILDE: [f64; 2] = [7.0878, 7.0710];

/// Error carrying the process exit code: 2 input, 3 infeasibility, 4
/// violated runtime guarantee.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Guarantee(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Guarantee(_) => 4,
        }
    }

    fn prefixed(self, prefix: &str) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{prefix}: {m}")),
            CliError::Infeasible(m) => CliError::Infeasible(format!("{prefix}: {m}")),
            CliError::Guarantee(m) => CliError::Guarantee(format!("{prefix}: {m}")),
        }
    }
}

impl From<GpError> for CliError {
    fn from(e: GpError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<BoundError> for CliError {
    fn from(e: BoundError) -> Self {
        match e {
            BoundError::InfeasibleRadicand { .. } => CliError::Infeasible(format!(
                "{e}; raise bound.lipschitz_safety to enlarge the RKHS norm bound"
            )),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<FunnelError> for CliError {
    fn from(e: FunnelError) -> Self {
        match e {
            FunnelError::InfeasibleGoal(_) => CliError::Infeasible(e.to_string()),
            FunnelError::OutsideFunnel { .. } => CliError::Guarantee(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Funnel(f) => f.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::FunnelExit { .. } | SimError::NumericalBlowup { .. } => {
                CliError::Guarantee(e.to_string())
            }
            SimError::Control(c) => c.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

/// Resolved invocation context shared by all commands.
pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub out: PathBuf,
    pub quiet: bool,
    pub master_seed: u64,
}

impl<'a> Ctx<'a> {
    pub fn new(
        cfg: &'a RunConfig,
        out_override: Option<PathBuf>,
        quiet: bool,
        seed_override: Option<u64>,
    ) -> Result<Self, CliError> {
        let out = out_override.unwrap_or_else(|| cfg.out_dir.clone());
        std::fs::create_dir_all(&out).map_err(|e| {
            CliError::Input(format!("cannot create output directory {}: {e}", out.display()))
        })?;
        Ok(Self {
            cfg,
            out,
            quiet,
            master_seed: seed_override.unwrap_or(cfg.dataset.seed),
        })
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        std::fs::write(&path, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        self.say(format!("wrote {}", path.display()));
        Ok(path)
    }
}

pub struct LearnOutcome {
    pub model: GpModel,
    pub sigma_bar: DVector<f64>,
}

/// Collects or loads the dataset, optionally fits hyperparameters, and
/// writes the model artifact plus a fit report.
pub fn cmd_learn(ctx: &Ctx, no_fit: bool) -> Result<LearnOutcome, CliError> {
    let cfg = ctx.cfg;
    let plant = cfg.plant()?;
    let domain = plant.state_box().clone();

    let data = match &cfg.dataset.csv {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Input(format!(
                    "dataset file not found: {}",
                    path.display()
                )));
            }
            Dataset::read_csv_path(path, cfg.dataset.noise_std)?
        }
        None => match cfg.dataset.sampling {
            Sampling::Uniform => sample_measurements(
                &plant,
                &domain,
                cfg.dataset.n_samples,
                cfg.dataset.noise_std,
                ctx.master_seed,
            )?,
            Sampling::Trajectory => sample_measurements_from_trajectories(
                &plant,
                &domain,
                cfg.dataset.n_samples,
                cfg.dataset.noise_std,
                ctx.master_seed,
                cfg.dataset.traj_dt,
                cfg.dataset.traj_steps,
            )?,
        },
    };
    let data_path = ctx.out.join("dataset.csv");
    data.write_csv_path(&data_path)?;
    ctx.say(format!("wrote {}", data_path.display()));

    let init = cfg.kernel_params()?;
    let fit = if cfg.kernel.fit && !no_fit {
        let opts = OptimizeOptions {
            seed: ctx.master_seed.wrapping_add(SEED_OFF_FIT),
            ..OptimizeOptions::default()
        };
        Some(optimize_hyperparams(&data, &init, &opts)?)
    } else {
        None
    };
    let params = fit.as_ref().map_or(init, |f| f.params.clone());
    let model = GpModel::fit(data, params, domain.clone())?;
    let sigma_bar = model.max_std(&domain, 50);

    save_toml(&model_path(&ctx.out), &ModelFile::from_model(&model))?;
    ctx.say(format!("wrote {}", model_path(&ctx.out).display()));

    let mut report = String::new();
    match &fit {
        Some(f) => {
            let _ = writeln!(
                report,
                "hyperparameters: fitted by evidence maximization (seed {})",
                ctx.master_seed.wrapping_add(SEED_OFF_FIT)
            );
            for i in 0..model.state_dim() {
                let _ = writeln!(
                    report,
                    "dim {}: evidence {:.4} (initial {:.4}, {})",
                    i + 1,
                    f.evidence[i],
                    f.evidence_init[i],
                    if f.improved[i] {
                        "improved"
                    } else {
                        "kept initial"
                    }
                );
            }
        }
        None => {
            let _ = writeln!(report, "hyperparameters: pinned from config (no fit)");
        }
    }
    for i in 0..model.state_dim() {
        let k = model.params().kernel(i);
        let _ = writeln!(
            report,
            "dim {}: signal_std = {}, lengthscales = {:?}, sigma_bar = {:.6}",
            i + 1,
            k.signal_std(),
            k.lengthscales(),
            sigma_bar[i]
        );
    }
    ctx.write_text("fit_report.txt", &report)?;
    ctx.say(report.trim_end());
    write_metadata(&ctx.out, "learn", ctx.master_seed)?;

    Ok(LearnOutcome { model, sigma_bar })
}

pub struct CalibrateOutcome {
    pub envelope_report: Option<CoverageReport>,
}

fn rkhs_norm_bound(model: &GpModel, dim: usize, safety: f64) -> Result<f64, CliError> {
    let lip = estimate_lipschitz_sqrt(model.data(), dim)?;
    Ok(rkhs_bound(safety * lip, model.params().kernel(dim))?)
}

/// Calibrates the envelope scale by the configured method and writes the
/// bound artifact, a report, and (for the Monte-Carlo route) coverage CSV.
pub fn cmd_calibrate(ctx: &Ctx, trials_override: Option<u64>) -> Result<CalibrateOutcome, CliError> {
    let cfg = ctx.cfg;
    let model = load_model(&ctx.out)?;
    let n = model.state_dim();
    let trials = trials_override.unwrap_or(cfg.bound.trials);
    let confidence = cfg.bound.confidence;
    let mut report = String::new();
    let mut coverage_rows: Vec<(String, Vec<f64>, &CoverageReport)> = Vec::new();

    let (bound, pointwise_report, envelope_report);
    match cfg.bound.method {
        BoundMethod::Probabilistic => {
            let eps = cfg.bound.epsilon.expect("validated");
            let mut scales = Vec::with_capacity(n);
            let _ = writeln!(report, "method = probabilistic (epsilon = {eps})");
            for i in 0..n {
                let b = rkhs_norm_bound(&model, i, cfg.bound.lipschitz_safety)?;
                let gamma = info_gain_greedy(&model, model.domain(), model.data().n_samples(), i)?;
                let beta = beta_probabilistic(b, gamma, model.data().n_samples(), eps)?;
                let _ = writeln!(
                    report,
                    "dim {}: B = {b:.6}, gamma = {gamma:.6}, beta = {beta:.6}",
                    i + 1
                );
                scales.push(beta);
            }
            bound = BoundSet::probabilistic(scales, eps)?;
            pointwise_report = None;
            envelope_report = None;
        }
        BoundMethod::Deterministic => {
            let mut scales = Vec::with_capacity(n);
            let _ = writeln!(report, "method = deterministic");
            for i in 0..n {
                let b = rkhs_norm_bound(&model, i, cfg.bound.lipschitz_safety)?;
                let beta = beta_deterministic(b, &model, i)?;
                let _ = writeln!(report, "dim {}: B = {b:.6}, beta~ = {beta:.6}", i + 1);
                scales.push(beta);
            }
            bound = BoundSet::deterministic(scales)?;
            pointwise_report = None;
            envelope_report = None;
        }
        BoundMethod::MonteCarlo => {
            let plant = cfg.plant()?;
            let mut rng =
                ChaCha12Rng::seed_from_u64(ctx.master_seed.wrapping_add(SEED_OFF_CALIBRATION));
            let mut scale = vec![0.0f64; n];
            for _ in 0..cfg.bound.calibration_points {
                let x = model.domain().sample(&mut rng);
                let truth = plant.drift(&x);
                let (mu, sig) = model.posterior(&x);
                for i in 0..n {
                    scale[i] = scale[i].max((truth[i] - mu[i]).abs() / sig[i]);
                }
            }
            for s in &mut scale {
                *s *= cfg.bound.padding;
            }
            let seed = ctx.master_seed.wrapping_add(SEED_OFF_COVERAGE);
            let rep = monte_carlo_coverage(
                &model,
                &|x| plant.drift(x),
                model.domain(),
                &Envelope::Pointwise(scale.clone()),
                trials,
                confidence,
                seed,
            )?;
            let _ = writeln!(report, "method = monte_carlo");
            let _ = writeln!(
                report,
                "scale = {scale:?} (calibrated over {} probe points, padding {})",
                cfg.bound.calibration_points, cfg.bound.padding
            );
            let _ = writeln!(
                report,
                "coverage: rate {:.6}, interval [{:.6}, {:.6}] at confidence {}, {} trials, \
                 seed {seed}",
                rep.rate(),
                rep.interval[0],
                rep.interval[1],
                confidence,
                trials
            );
            bound = BoundSet::monte_carlo(scale.clone(), rep.interval, confidence)?;
            envelope_report = match cfg.bound.envelope {
                Some(half_width) => {
                    let env = vec![half_width; n];
                    let rep = monte_carlo_coverage(
                        &model,
                        &|x| plant.drift(x),
                        model.domain(),
                        &Envelope::Constant(env),
                        trials,
                        confidence,
                        seed,
                    )?;
                    let _ = writeln!(
                        report,
                        "constant envelope {half_width}: rate {:.6}, interval [{:.6}, {:.6}]",
                        rep.rate(),
                        rep.interval[0],
                        rep.interval[1]
                    );
                    Some(rep)
                }
                None => None,
            };
            pointwise_report = Some((rep, scale));
        }
    }

    let (pointwise_report, scale_for_csv) = match pointwise_report {
        Some((rep, scale)) => (Some(rep), Some(scale)),
        None => (None, None),
    };
    if let (Some(rep), Some(scale)) = (&pointwise_report, &scale_for_csv) {
        coverage_rows.push(("pointwise".into(), scale.clone(), rep));
    }
    if let Some(rep) = &envelope_report {
        let half_width = cfg.bound.envelope.expect("present when report exists");
        coverage_rows.push(("constant".into(), vec![half_width; n], rep));
    }
    if !coverage_rows.is_empty() {
        let mut csv = String::from(
            "envelope_kind,envelope,hits,trials,rate,interval_lower,interval_upper,\
             confidence_level,seed\n",
        );
        for (kind, envelope, rep) in &coverage_rows {
            let env: Vec<String> = envelope.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                csv,
                "{kind},{},{},{},{},{},{},{},{}",
                env.join(";"),
                rep.hits,
                rep.trials,
                rep.rate(),
                rep.interval[0],
                rep.interval[1],
                rep.confidence_level,
                rep.seed
            );
        }
        ctx.write_text("coverage.csv", &csv)?;
    }

    save_toml(
        &bound_path(&ctx.out),
        &BoundFile {
            format_version: FORMAT_VERSION,
            bound: bound.clone(),
        },
    )?;
    ctx.say(format!("wrote {}", bound_path(&ctx.out).display()));
    ctx.write_text("calibrate_report.txt", &report)?;
    ctx.say(report.trim_end());
    write_metadata(&ctx.out, "calibrate", ctx.master_seed)?;

    Ok(CalibrateOutcome { envelope_report })
}

/// Synthesizes the corridor for the configured boxes and writes the funnel
/// artifact plus a parameter table.
pub fn cmd_synthesize(ctx: &Ctx) -> Result<SynthesisResult, CliError> {
    let cfg = ctx.cfg;
    let plant = cfg.plant()?;
    let start = cfg.start_box()?;
    let goal = cfg.goal_box()?;
    let policy = match &cfg.funnel.eta {
        Some(eta) => EtaPolicy::Fixed(eta.clone()),
        None => EtaPolicy::Midpoint,
    };
    let res = synthesize(
        &start,
        &goal,
        plant.state_box(),
        &cfg.funnel.eps,
        cfg.funnel.theta,
        &policy,
    )?;
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }

    save_toml(&funnel_path(&ctx.out), &FunnelFile::from_spec(&res.spec))?;
    ctx.say(format!("wrote {}", funnel_path(&ctx.out).display()));

    let mut table = format!(
        "{:<6}{:<12}{:<12}{:<12}{:<12}{:<12}{:<12}\n",
        "dim", "eta", "rho0", "rho_inf", "eps", "c", "d"
    );
    for (i, d) in res.spec.dims().iter().enumerate() {
        let _ = writeln!(
            table,
            "{:<6}{:<12}{:<12}{:<12}{:<12}{:<12}{:<12}",
            i + 1,
            d.eta,
            d.rho0,
            d.rho_inf,
            d.eps,
            d.c,
            d.d
        );
    }
    ctx.write_text("funnel_table.txt", &table)?;
    ctx.say(table.trim_end());
    write_metadata(&ctx.out, "synthesize", ctx.master_seed)?;
    Ok(res)
}

pub struct SimulateOutcome {
    pub trajectories: Vec<Trajectory>,
    pub audits: Vec<FunnelAudit>,
}

/// Integrates the closed loop from one start (or a grid of starts), writes
/// trajectory CSVs, the audit report, and the two figures.
pub fn cmd_simulate(ctx: &Ctx, grid: Option<usize>) -> Result<SimulateOutcome, CliError> {
    let cfg = ctx.cfg;
    let plant = cfg.plant()?;
    let model = Arc::new(load_model(&ctx.out)?);
    let bound = load_bound(&ctx.out)?;
    let spec = load_funnel(&ctx.out)?;
    let goal = cfg.goal_box()?;
    let law = ControlLaw::new(Arc::clone(&model), bound, spec.clone(), plant.input_map())?;

    let starts: Vec<DVector<f64>> = match grid {
        Some(0) => {
            return Err(CliError::Input("--grid must be at least 1".into()));
        }
        Some(k) => cfg.start_box()?.grid(k),
        None => vec![DVector::from_vec(cfg.sim.x0.clone())],
    };
    let sim_cfg = SimConfig {
        dt: cfg.sim.dt,
        t_max: cfg.sim.t_max,
        stop_on_reach: cfg.sim.stop_on_reach,
        goal: Some(goal.clone()),
        ..SimConfig::default()
    };

    let mut trajectories = Vec::with_capacity(starts.len());
    let mut audits = Vec::with_capacity(starts.len());
    let mut audit_text = String::new();
    let mut reached = 0usize;
    let mut total_violations = 0usize;
    for (i, x0) in starts.iter().enumerate() {
        let traj = integrate(&plant, &law, x0, &sim_cfg).map_err(|e| {
            CliError::from(e).prefixed(&format!("run {i:02} from {:?}", x0.as_slice()))
        })?;
        let path = ctx.out.join(format!("trajectory_{i:02}.csv"));
        traj.write_csv_path(&path)?;
        ctx.say(format!("wrote {}", path.display()));
        let audit = funnel_audit(&traj, &spec);
        let reach = traj.reach_time();
        if reach.is_some() {
            reached += 1;
        }
        total_violations += audit.violations.len();
        let _ = writeln!(
            audit_text,
            "run {i:02}: x0 = {:?}, reach_t = {}, min_margin = {:.6}, violations = {}",
            x0.as_slice(),
            reach.map_or("-".to_string(), |t| format!("{t:.3}")),
            audit.min_margin,
            audit.violations.len()
        );
        trajectories.push(traj);
        audits.push(audit);
    }
    let _ = writeln!(
        audit_text,
        "summary: {reached}/{} runs reached the goal; violations total = {total_violations}",
        starts.len()
    );
    ctx.write_text("audit.txt", &audit_text)?;
    ctx.say(audit_text.trim_end());

    let eta: Vec<f64> = spec.eta().iter().copied().collect();
    let traj_refs: Vec<&Trajectory> = trajectories.iter().collect();
    let fig = plot::state_space(
        plant.state_box(),
        &cfg.start_box()?,
        &goal,
        &eta,
        &traj_refs,
    );
    ctx.write_text("state_space.svg", &fig)?;
    let fig = plot::timeseries(&trajectories[0]);
    ctx.write_text("timeseries.svg", &fig)?;
    write_metadata(&ctx.out, "simulate", ctx.master_seed)?;

    Ok(SimulateOutcome {
        trajectories,
        audits,
    })
}

fn stage<T>(name: &str, r: Result<T, CliError>) -> Result<T, CliError> {
    r.map_err(|e| e.prefixed(&format!("stage {name}")))
}

/// Runs the bundled benchmark end to end (learn, calibrate, synthesize,
/// simulate over a start grid) and writes a summary comparing the produced
/// numbers with the published reference values.
pub fn cmd_reproduce(
    out_override: Option<PathBuf>,
    quiet: bool,
    seed: Option<u64>,
    trials: Option<u64>,
    grid: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = crate::config::case_study(
        out_override
            .clone()
            .unwrap_or_else(|| PathBuf::from("artifacts")),
    );
    if let Some(s) = seed {
        cfg.dataset.seed = s;
    }
    cfg.validate()?;
    let ctx = Ctx::new(&cfg, out_override, quiet, None)?;
    let cfg_text = toml::to_string_pretty(&cfg)
        .map_err(|e| CliError::Input(format!("cannot serialize config: {e}")))?;
    ctx.write_text("config.toml", &cfg_text)?;

    let learn = stage("learn", cmd_learn(&ctx, false))?;
    let cal = stage("calibrate", cmd_calibrate(&ctx, trials))?;
    let _syn = stage("synthesize", cmd_synthesize(&ctx))?;
    let sim = stage("simulate", cmd_simulate(&ctx, Some(grid.unwrap_or(4))))?;

    let sigma_bar_max = learn.sigma_bar.max();
    let interval = cal
        .envelope_report
        .as_ref()
        .map(|r| r.interval)
        .expect("benchmark config sets bound.envelope");
    let beta_tilde: Vec<Option<f64>> = (0..learn.model.state_dim())
        .map(|i| {
            let b = rkhs_norm_bound(&learn.model, i, cfg.bound.lipschitz_safety)?;
            match beta_deterministic(b, &learn.model, i) {
                Ok(v) => Ok(Some(v)),
                Err(BoundError::InfeasibleRadicand { .. }) => Ok(None),
                Err(e) => Err(CliError::from(e)),
            }
        })
        .collect::<Result<_, CliError>>()?;

    let mut summary = String::from("quantity,produced,published,deviation\n");
    let mut row = |name: &str, produced: Option<f64>, published: f64| {
        let _ = match produced {
            Some(v) => writeln!(
                summary,
                "{name},{v:.6},{published},{:.6}",
                v - published
            ),
            None => writeln!(summary, "{name},infeasible,{published},"),
        };
    };
    row("sigma_bar_max", Some(sigma_bar_max), PUBLISHED_SIGMA_BAR_MAX);
    row("coverage_lower", Some(interval[0]), PUBLISHED_COVERAGE[0]);
    row("coverage_upper", Some(interval[1]), PUBLISHED_COVERAGE[1]);
    row("beta_tilde_1", beta_tilde[0], PUBLISHED_BETA_TILDE[0]);
    row("beta_tilde_2", beta_tilde[1], PUBLISHED_BETA_TILDE[1]);
    ctx.write_text("summary.csv", &summary)?;
    ctx.say(summary.trim_end());

    let reached = sim
        .trajectories
        .iter()
        .filter(|t| t.reach_time().is_some())
        .count();
    let violations: usize = sim.audits.iter().map(|a| a.violations.len()).sum();
    ctx.say(format!(
        "reproduction complete: {reached}/{} runs reached the goal, \
         corridor violations total = {violations}",
        sim.trajectories.len()
    ));
    write_metadata(&ctx.out, "reproduce", ctx.master_seed)?;
    Ok(())
}
