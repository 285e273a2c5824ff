use std::fs;
use std::path::{Path, PathBuf};

use maskface::augment::MaskPolicy;
use maskface::verifeval::ThresholdGrid;
use maskface::MaskType;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Contents of the `--config` TOML file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub assets: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub far_target: Option<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub step: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub mask_types: Option<Vec<String>>,
    pub keep_original: Option<bool>,
    pub pattern_probability: Option<f64>,
    pub pattern_intensity: Option<f64>,
    pub max_residual_px: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }
}

/// Settings after applying defaults, then the config file, then flags.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub assets: Option<PathBuf>,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub far_target: f64,
    pub grid: ThresholdGrid,
    pub mask_types: Vec<MaskType>,
    pub keep_original: bool,
    pub pattern_probability: f64,
    pub pattern_intensity: f64,
    pub max_residual_px: f64,
}

pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Resolved {
    pub fn build(file: FileConfig, flags: Overrides) -> Result<Self, CliError> {
        let policy = MaskPolicy::default();
        let mask_types = match file.policy.mask_types {
            Some(names) => names
                .iter()
                .map(|n| n.parse::<MaskType>())
                .collect::<Result<Vec<_>, _>>()?,
            None => policy.candidate_types.clone(),
        };
        let default_grid = ThresholdGrid::default();
        let grid = ThresholdGrid::new(
            file.grid.start.unwrap_or(default_grid.start),
            file.grid.stop.unwrap_or(default_grid.value(default_grid.count - 1)),
            file.grid.step.unwrap_or(default_grid.step),
        )?;
        let r = Resolved {
            assets: file.assets,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            workers: flags.workers.or(file.workers).unwrap_or(1),
            out: flags.out.or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            far_target: file.far_target.unwrap_or(0.001),
            grid,
            mask_types,
            keep_original: file.policy.keep_original.unwrap_or(policy.keep_original),
            pattern_probability: file.policy.pattern_probability.unwrap_or(policy.pattern_probability),
            pattern_intensity: file.policy.pattern_intensity.unwrap_or(policy.pattern_intensity),
            max_residual_px: file.policy.max_residual_px.unwrap_or(policy.max_residual_px),
        };
        if r.workers == 0 {
            return Err(CliError::Invalid("workers must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&r.far_target) {
            return Err(CliError::Invalid(format!("far_target must lie in [0, 1], got {}", r.far_target)));
        }
        r.policy().validate()?;
        Ok(r)
    }

    pub fn policy(&self) -> MaskPolicy {
        MaskPolicy {
            candidate_types: self.mask_types.clone(),
            keep_original: self.keep_original,
            pattern_probability: self.pattern_probability,
            pattern_intensity: self.pattern_intensity,
            pattern: None,
            color: None,
            max_residual_px: self.max_residual_px,
            seed: self.seed,
        }
    }
}
