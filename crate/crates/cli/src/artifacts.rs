//! Versioned on-disk artifact formats: model, bound, and funnel files are
//! plain TOML with a `format_version` field, and every run also writes a
//! metadata file. The metadata file is the only artifact carrying a
//! timestamp, so all other outputs are byte-identical across reruns with the
//! same config and seed.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use reachfunnel::bounds::BoundSet;
use reachfunnel::funnel::{FunnelDim, FunnelSpec};
use reachfunnel::gp::{Dataset, GpModel, KernelParams, SeKernel, StateBox};

use crate::pipeline::CliError;

pub const FORMAT_VERSION: u32 = 1;

/// Serialized Gaussian-process model: kernels, noise level, domain box, and
/// the training data itself. Loading refits the factorization, which is
/// cheap at the dataset sizes this tool targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub noise_std: f64,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    pub kernels: Vec<KernelEntry>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelEntry {
    pub signal_std: f64,
    pub lengthscales: Vec<f64>,
}

impl ModelFile {
    pub fn from_model(model: &GpModel) -> Self {
        let data = model.data();
        let n = data.state_dim();
        let inputs = (0..data.n_samples())
            .map(|j| data.input_point(j).iter().copied().collect())
            .collect();
        let targets = (0..data.n_samples())
            .map(|j| (0..n).map(|i| data.targets()[(j, i)]).collect())
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            noise_std: data.noise_std(),
            domain_lower: model.domain().lower().to_vec(),
            domain_upper: model.domain().upper().to_vec(),
            kernels: model
                .params()
                .kernels()
                .iter()
                .map(|k| KernelEntry {
                    signal_std: k.signal_std(),
                    lengthscales: k.lengthscales().to_vec(),
                })
                .collect(),
            inputs,
            targets,
        }
    }

    pub fn to_model(&self) -> Result<GpModel, CliError> {
        let data = Dataset::from_rows(&self.inputs, &self.targets, self.noise_std)
            .map_err(|e| CliError::Input(format!("model file data: {e}")))?;
        let kernels = self
            .kernels
            .iter()
            .map(|k| SeKernel::new(k.signal_std, k.lengthscales.clone()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(format!("model file kernels: {e}")))?;
        let params = KernelParams::new(kernels)
            .map_err(|e| CliError::Input(format!("model file kernels: {e}")))?;
        let domain = StateBox::new(self.domain_lower.clone(), self.domain_upper.clone())
            .map_err(|e| CliError::Input(format!("model file domain: {e}")))?;
        GpModel::fit(data, params, domain)
            .map_err(|e| CliError::Input(format!("model file does not refit: {e}")))
    }
}

/// Serialized envelope scaling with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundFile {
    pub format_version: u32,
    pub bound: BoundSet,
}

/// Serialized funnel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelFile {
    pub format_version: u32,
    pub dims: Vec<FunnelDim>,
}

impl FunnelFile {
    pub fn from_spec(spec: &FunnelSpec) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            dims: spec.dims().to_vec(),
        }
    }

    pub fn to_spec(&self) -> Result<FunnelSpec, CliError> {
        FunnelSpec::new(self.dims.clone())
            .map_err(|e| CliError::Input(format!("funnel file: {e}")))
    }
}

pub fn save_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = toml::to_string_pretty(value)
        .map_err(|e| CliError::Input(format!("cannot serialize {}: {e}", path.display())))?;
    std::fs::write(path, text)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn load_toml<T: DeserializeOwned>(path: &Path, producer: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Input(format!(
            "cannot read {}: {e} (run `reachfunnel {producer}` first?)",
            path.display()
        ))
    })?;
    toml::from_str(&text)
        .map_err(|e| CliError::Input(format!("invalid artifact {}: {e}", path.display())))
}

fn check_version(version: u32, path: &Path) -> Result<(), CliError> {
    if version != FORMAT_VERSION {
        return Err(CliError::Input(format!(
            "{} has format version {version}, this build reads version {FORMAT_VERSION}",
            path.display()
        )));
    }
    Ok(())
}

pub fn model_path(out: &Path) -> PathBuf {
    out.join("model.toml")
}

pub fn bound_path(out: &Path) -> PathBuf {
    out.join("bound.toml")
}

pub fn funnel_path(out: &Path) -> PathBuf {
    out.join("funnel.toml")
}

pub fn load_model(out: &Path) -> Result<GpModel, CliError> {
    let path = model_path(out);
    let file: ModelFile = load_toml(&path, "learn")?;
    check_version(file.format_version, &path)?;
    file.to_model()
}

pub fn load_bound(out: &Path) -> Result<BoundSet, CliError> {
    let path = bound_path(out);
    let file: BoundFile = load_toml(&path, "calibrate")?;
    check_version(file.format_version, &path)?;
    Ok(file.bound)
}

pub fn load_funnel(out: &Path) -> Result<FunnelSpec, CliError> {
    let path = funnel_path(out);
    let file: FunnelFile = load_toml(&path, "synthesize")?;
    check_version(file.format_version, &path)?;
    file.to_spec()
}

/// Writes `metadata.txt`, the one artifact that carries a timestamp.
pub fn write_metadata(out: &Path, command: &str, master_seed: u64) -> Result<(), CliError> {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let text = format!(
        "command = {command}\n\
         tool_version = {}\n\
         timestamp_unix = {stamp}\n\
         master_seed = {master_seed}\n\
         seed_offsets = coverage +1, calibration probe +2, hyperparameter fit +3\n",
        env!("CARGO_PKG_VERSION")
    );
    let path = out.join("metadata.txt");
    std::fs::write(&path, text)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}
