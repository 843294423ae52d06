//! Run configuration: a TOML file with one table per concern.
//!
//! ```toml
//! [data]
//! inputs = "lorenz_observed.csv"
//! truth = "lorenz_truth.csv"
//! lead = 3
//! test_len = 75
//!
//! [embedding]
//! tau = 2
//! m = 4
//!
//! [priors]
//! profile = "lorenz"
//! [priors.overrides]
//! a_w = 0.2
//!
//! [mcmc]
//! n_h = 20
//! iterations = 100000
//! burn_in = 25000
//! thin = 5
//! seed = 11
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::EsnConfig;
use crate::error::{Error, Result};
use crate::lorenz96::LorenzConfig;
use crate::priors::{default_hyperparams, HyperParams, Profile};
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Input series, rows are times and columns locations.
    pub inputs: Option<PathBuf>,
    /// Response series; the inputs are used when absent.
    pub responses: Option<PathBuf>,
    /// Noise-free signal aligned with the responses, scored in addition to
    /// the observed responses when present.
    pub truth: Option<PathBuf>,
    /// Input at time `t` predicts the response at `t + lead`.
    pub lead: usize,
    /// Trailing periods held out for forecasting.
    pub test_len: usize,
    pub standardize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            inputs: None,
            responses: None,
            truth: None,
            lead: 1,
            test_len: 0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub tau: usize,
    pub m: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection { tau: 1, m: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub taus: Vec<usize>,
    pub ms: Vec<usize>,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            taus: vec![1, 2, 3, 4],
            ms: vec![0, 1, 2, 3, 4, 5],
        }
    }
}

impl CvSection {
    pub fn grid(&self) -> Vec<(usize, usize)> {
        self.taus
            .iter()
            .flat_map(|&t| self.ms.iter().map(move |&m| (t, m)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub profile: Profile,
    /// Field-by-field replacements applied on top of the profile defaults.
    pub overrides: toml::Table,
}

impl PriorSection {
    /// Profile defaults for the given input layout, with overrides applied.
    pub fn resolve(&self, n_x: usize, m: usize) -> Result<HyperParams> {
        let base = default_hyperparams(self.profile, n_x, m);
        if self.overrides.is_empty() {
            return Ok(base);
        }
        let mut table = toml::Table::try_from(&base).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for (k, v) in &self.overrides {
            table.insert(k.clone(), v.clone());
        }
        let hp: HyperParams = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(format!("priors.overrides: {e}")))?;
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub seed: u64,
    /// Monte Carlo samples per cell for the baselines.
    pub n_samples: usize,
}

impl Default for ForecastSection {
    fn default() -> Self {
        ForecastSection { seed: 3, n_samples: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EofSection {
    /// Field series, rows are times and columns grid cells.
    pub fields: Option<PathBuf>,
    pub n_b: usize,
    /// Leading periods used to fit the basis (all when absent).
    pub train_len: Option<usize>,
}

impl Default for EofSection {
    fn default() -> Self {
        EofSection {
            fields: None,
            n_b: 10,
            train_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Any of `bastrnn`, `linear_dstm`, `gqn`, `e_qesn`.
    pub models: Vec<String>,
    /// Report CRPS per cell instead of summed.
    pub average: bool,
    pub region_name: String,
    /// Column indices of the response locations averaged into a regional index.
    pub region: Vec<usize>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            models: vec!["bastrnn".into()],
            average: false,
            region_name: "index".into(),
            region: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub embedding: EmbeddingSection,
    pub cv: CvSection,
    pub priors: PriorSection,
    pub mcmc: SamplerConfig,
    pub forecast: ForecastSection,
    pub eof: EofSection,
    pub lorenz: LorenzConfig,
    pub esn: EsnConfig,
    pub evaluate: EvaluateSection,
    pub output: OutputSection,
    /// Directory relative paths resolve against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Sets every seed in the file to `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.mcmc.seed = seed;
        self.lorenz.seed = seed;
        self.esn.seed = seed;
        self.forecast.seed = seed;
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolved path of an optional file setting, or an error naming it.
    pub fn required(&self, p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let p = p
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("missing setting {key}")))?;
        let full = self.resolve(p);
        if !full.is_file() {
            return Err(Error::InvalidConfig(format!("{key}: file {} does not exist", full.display())));
        }
        Ok(full)
    }

    /// Hex SHA-256 of the effective configuration (as serialized TOML).
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
