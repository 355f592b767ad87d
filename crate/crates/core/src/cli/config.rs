use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perceptual::FeatureExtractorSpec;
use crate::physics::SimulationConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub low_dose: PathBuf,
    pub normal_dose: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    pub weights: PathBuf,
    #[serde(default = "default_widths")]
    pub widths: [usize; 4],
}

fn default_widths() -> [usize; 4] {
    [64, 128, 256, 512]
}

impl ExtractorConfig {
    pub fn spec(&self) -> FeatureExtractorSpec {
        FeatureExtractorSpec::with_widths(self.widths)
    }
}

/// Everything a run needs. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub simulation: SimulationConfig,
    pub data: Option<DataConfig>,
    pub extractor: Option<ExtractorConfig>,
    /// Directory receiving the checkpoint and loss log.
    pub output: Option<PathBuf>,
}

impl RunConfig {
    /// Parses and validates; relative paths are taken from the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut cfg.data {
            fix(&mut d.low_dose);
            fix(&mut d.normal_dose);
        }
        if let Some(e) = &mut cfg.extractor {
            fix(&mut e.weights);
        }
        if let Some(o) = &mut cfg.output {
            fix(o);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        validate_simulation(&self.simulation)
    }
}

pub fn validate_simulation(s: &SimulationConfig) -> Result<()> {
    if !(s.i0.is_finite() && s.i0 > 0.0) {
        return Err(Error::Config(format!(
            "simulation.i0 must be > 0, got {}",
            s.i0
        )));
    }
    if s.angles == 0 {
        return Err(Error::Config("simulation.angles must be >= 1".into()));
    }
    if !(s.mu_water.is_finite() && s.mu_water > 0.0) {
        return Err(Error::Config(format!(
            "simulation.mu_water must be > 0, got {}",
            s.mu_water
        )));
    }
    Ok(())
}
