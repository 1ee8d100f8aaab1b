//! Run configuration file.
//!
//! A single TOML file drives every subcommand; unknown keys are rejected
//! so typos fail loudly. Command-line flags override file values. The
//! resolved configuration is echoed verbatim into the output directory of
//! each run for provenance.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stereo_selftrain::model::ModelConfig;
use stereo_selftrain::selftrain::{SelfTrainConfig, EMA_NEVER};
use stereo_selftrain::synth::SyntheticConfig;

/// Manifest paths used by the training/eval commands.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub labeled: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub eval: Option<PathBuf>,
}

/// Synthetic-data generation counts for `gen-data`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Texture preset: "custom" keeps `[synthetic]` as written;
    /// "domain-a" / "domain-b" swap in the corresponding preset's texture
    /// and layer count while keeping dimensions, disparity range and seed.
    pub preset: String,
    /// Samples written with ground truth.
    pub labeled: usize,
    /// Samples written without ground truth.
    pub unlabeled: usize,
    /// First per-sample seed.
    pub first_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            preset: "custom".into(),
            labeled: 8,
            unlabeled: 0,
            first_seed: 0,
        }
    }
}

/// One cell of the ablation grid: named overrides on the base train config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateCell {
    pub name: String,
    /// "baseline" (no self-training), "unfiltered", "hard", or "soft".
    pub mode: String,
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Which consistency filters stay enabled: "resolution", "iteration"
    /// or "both" (default).
    #[serde(default)]
    pub filters: Option<String>,
    /// Steps between teacher refreshes; 0 disables EMA refreshes.
    #[serde(default)]
    pub ema_interval: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
    pub cells: Vec<AblateCell>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: SelfTrainConfig,
    pub data: DataPaths,
    pub synthetic: SyntheticConfig,
    pub gen: GenConfig,
    pub ablate: AblateConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("config not found: {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("config {} is malformed", path.display()))?;
        Ok(cfg)
    }

    /// Applies CLI overrides and propagates the run seed into sub-configs.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out_dir = Some(o);
        }
        self.train.seed = self.seed;
        self.synthetic.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synthetic.validate()?;
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path> {
        match &self.out_dir {
            Some(p) => Ok(p),
            None => bail!("no output directory: set out_dir in the config or pass --out"),
        }
    }

    /// Echoes the resolved config into the output directory.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = toml::to_string_pretty(self).context("config serialization")?;
        std::fs::write(dir.join("resolved_config.toml"), text)?;
        Ok(())
    }
}

/// Builds a cell's self-train config from the base one.
pub fn cell_config(base: &SelfTrainConfig, cell: &AblateCell) -> Result<SelfTrainConfig> {
    use stereo_selftrain::selftrain::WeightingMode;
    let mut cfg = base.clone();
    match cell.mode.as_str() {
        "baseline" => {
            cfg.steps_selftrain = 0;
        }
        "unfiltered" => {
            cfg.weighting = WeightingMode::Unfiltered;
        }
        "hard" => {
            cfg.weighting = WeightingMode::Hard {
                threshold: cell.threshold.unwrap_or(0.5),
            };
        }
        "soft" => {
            cfg.weighting = WeightingMode::Soft;
        }
        other => bail!("unknown ablation mode {other:?} in cell {:?}", cell.name),
    }
    if let Some(filters) = &cell.filters {
        match filters.as_str() {
            "both" => {}
            "resolution" => cfg.csf.enable_iteration = false,
            "iteration" => cfg.csf.enable_resolution = false,
            other => bail!("unknown filter selection {other:?} in cell {:?}", cell.name),
        }
    }
    if let Some(k) = cell.ema_interval {
        cfg.ema_interval = if k == 0 { EMA_NEVER } else { k };
    }
    Ok(cfg)
}
