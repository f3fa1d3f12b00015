//! TOML configuration file and the resolved per-command settings.
//!
//! ```toml
//! [kernel]
//! family = "exponential"
//! phi = 17.65
//!
//! [noise]
//! delta2 = 0.0876
//!
//! [grid]
//! phi = [2.1, 212.0, 10]      # lo, hi, levels
//! delta2 = [0.001, 1000.0, 10]
//!
//! [run]
//! m = 10
//! seed = 7
//! folds = 5
//! draws = 300
//! refine = 1
//! a_sigma = 2.0
//! b_sigma = 1.0
//! cg_tol = 1e-8
//! model = "latent"
//! ```
//!
//! Command-line flags override the file, which overrides built-in defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::HyperGrid;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub family: Option<String>,
    pub phi: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub delta2: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub phi: Option<(f64, f64, usize)>,
    pub delta2: Option<(f64, f64, usize)>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub m: Option<usize>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub draws: Option<usize>,
    pub refine: Option<usize>,
    pub a_sigma: Option<f64>,
    pub b_sigma: Option<f64>,
    pub cg_tol: Option<f64>,
    pub model: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Grid from `[grid]`; both axes are required.
    pub fn grid(&self) -> Result<Option<HyperGrid>> {
        match (self.grid.phi, self.grid.delta2) {
            (Some(p), Some(d)) => HyperGrid::log_spaced(p, d).map(Some),
            (None, None) => Ok(None),
            _ => Err(Error::Format("[grid] needs both phi and delta2 as [lo, hi, levels]".into())),
        }
    }
}

/// Settings actually used by a command, serialized next to its outputs.
/// The worker thread count is deliberately not part of it: outputs do not
/// depend on it.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub command: String,
    pub version: String,
    pub settings: toml::Table,
}

impl Resolved {
    pub fn new(command: &str) -> Self {
        Self { command: command.into(), version: crate::io::VERSION.into(), settings: toml::Table::new() }
    }

    pub fn set(&mut self, key: &str, value: impl Into<toml::Value>) -> &mut Self {
        self.settings.insert(key.into(), value.into());
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the serialized settings.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Writes `<output>.config.toml`.
    pub fn write_beside(&self, output: &Path) -> Result<()> {
        let mut name = output.as_os_str().to_owned();
        name.push(".config.toml");
        std::fs::write(Path::new(&name), self.to_toml())?;
        Ok(())
    }
}
