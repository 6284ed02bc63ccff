//! Run configuration files.

use std::path::{Path, PathBuf};

use gbs_core::dataset::Detector;
use gbs_core::gaussian_state::{FitModel, SqueezerBank, TransmissionMatrix};
use gbs_core::matrix_io::read_matrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Smallest sample count accepted for chi-square tests without
/// `--override-min-n`.
pub const MIN_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    pub instance: InstanceConfig,
    pub sampler: SamplerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub r: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub transmission: TransmissionSpec,
    pub t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum TransmissionSpec {
    /// Matrix file, relative to the config file.
    Path(PathBuf),
    Haar { modes: usize, loss: f64, seed: u64 },
    Identity { modes: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub samples: usize,
    pub seed: u64,
    pub eta_max: usize,
    pub detector: Detector,
    pub c_max: u8,
    pub block_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    TotalGcd,
    Gcd2d,
    Marginals,
    Xeb,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub tests: Vec<TestKind>,
    #[serde(default)]
    pub marginal_orders: Vec<usize>,
    pub subset_seed: u64,
    #[serde(default = "default_pnr_cap")]
    pub pnr_cap: usize,
    /// Samples and seed of the positive-P ensemble used as an ensemble truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_ensemble: Option<EnsembleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xeb_seed: Option<u64>,
}

fn default_pnr_cap() -> usize {
    4
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub samples: usize,
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    gbs_core::gcd::DEFAULT_BATCH_SIZE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum FitConfig {
    Exact,
    Ensemble(EnsembleSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// A parsed configuration with its location and content hash.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
    pub sha256: String,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        if config.config_version != CONFIG_VERSION {
            return Err(CliError::config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                config.config_version
            )));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolved = serde_json::to_vec(&config).expect("config serialises");
        let sha256 = hex::encode(Sha256::digest(&resolved));
        Ok(Loaded { config, base, sha256 })
    }

    pub fn bank(&self) -> Result<SqueezerBank, CliError> {
        let i = &self.config.instance;
        Ok(SqueezerBank::new(i.r.clone(), i.epsilon.clone())?)
    }

    pub fn transmission(&self) -> Result<TransmissionMatrix, CliError> {
        let i = &self.config.instance;
        let base = match &i.transmission {
            TransmissionSpec::Path(p) => {
                let p = if p.is_absolute() { p.clone() } else { self.base.join(p) };
                if !p.exists() {
                    return Err(CliError::config(format!("transmission matrix {} does not exist", p.display())));
                }
                TransmissionMatrix::new(read_matrix(&p)?, 1.0)?
            }
            TransmissionSpec::Haar { modes, loss, seed } => TransmissionMatrix::haar_lossy(*modes, *loss, *seed)?,
            TransmissionSpec::Identity { modes } => TransmissionMatrix::identity(*modes),
        };
        Ok(base.with_t(i.t)?)
    }

    pub fn validation(&self) -> Result<&ValidationConfig, CliError> {
        self.config.validation.as_ref().ok_or_else(|| CliError::config("config has no validation section"))
    }

    pub fn fit_model(&self) -> FitModel {
        match self.config.fit {
            Some(FitConfig::Ensemble(e)) => FitModel::Ensemble { samples: e.samples, seed: e.seed, batch_size: e.batch_size },
            _ => FitModel::Exact,
        }
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        match (flag, &self.config.output) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(o)) if o.dir.is_absolute() => o.dir.clone(),
            (None, Some(o)) => self.base.join(&o.dir),
            (None, None) => PathBuf::from("."),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "config_version": 1,
        "instance": {"r": [0.5, 0.5], "epsilon": [0, 0], "transmission": {"identity": {"modes": 2}}, "t": 1},
        "sampler": {"samples": 10, "seed": 1, "eta_max": 0, "detector": "threshold", "c_max": 1, "block_size": 4}
    }"#;

    fn load(text: &str) -> Result<Loaded, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, text).unwrap();
        Loaded::read(&p)
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = load(MINIMAL).unwrap();
        let b = load(&MINIMAL.replace('\n', " ")).unwrap();
        assert_eq!(a.sha256, b.sha256);
        assert_eq!(a.sha256.len(), 64);
    }

    #[test]
    fn physical_parameters_are_required() {
        assert!(load(&MINIMAL.replace(r#""seed": 1, "#, "")).is_err());
        assert!(load(&MINIMAL.replace(r#""detector": "threshold", "#, "")).is_err());
        assert!(load(&MINIMAL.replace(r#""config_version": 1"#, r#""config_version": 2"#)).is_err());
    }
}
