use std::path::Path;

use facetpath_core::{HyperParams, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Setting this variable to anything but `0` or the empty string turns on
/// per-op finiteness checks on the tape.
pub const CHECK_FINITE_ENV: &str = "FACETPATH_CHECK_FINITE";

/// Contents of `cfg.json`. Missing fields take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub hyper: HyperParams,
}

impl RunConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        let cfg = Self::from_json(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.hyper.validate()?;
        Ok(())
    }

    /// Apply [`CHECK_FINITE_ENV`].
    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var(CHECK_FINITE_ENV) {
            if check_finite_value(&v) {
                self.train.check_finite = true;
            }
        }
    }
}

fn check_finite_value(v: &str) -> bool {
    !(v.is_empty() || v == "0")
}
