//! The run config: one TOML file, one section per subsystem. Every section is
//! optional and falls back to the library defaults.

use std::path::Path;

use eventdepth::depth_extrap::{ExtrapTrainConfig, SamplingConfig, DEFAULT_FPS_SET};
use eventdepth::event_core::Micros;
use eventdepth::keyframe::{DetectorTrainConfig, KeyframeRuleConfig};
use eventdepth::pipeline::PipelineConfig;
use eventdepth::scene_sim::{ScenarioConfig, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub count: usize,
    /// Trailing sequences held out for validation by the training commands.
    pub val_sequences: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            count: 10,
            val_sequences: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframeSection {
    pub window_us: Micros,
    pub rules: KeyframeRuleConfig,
    pub train: DetectorTrainConfig,
}

impl Default for KeyframeSection {
    fn default() -> Self {
        Self {
            window_us: 20_000,
            rules: KeyframeRuleConfig::default(),
            train: DetectorTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrapSection {
    /// Named model variant; replaces `train.model` when set.
    pub variant: Option<String>,
    pub sampling: SamplingConfig,
    pub train: ExtrapTrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Fixed rates, one row per method and rate.
    pub fps: Vec<f64>,
    /// Also score the adaptive protocol over `fps_set`.
    pub adaptive: bool,
    pub fps_set: Vec<f64>,
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            fps: DEFAULT_FPS_SET.to_vec(),
            adaptive: true,
            fps_set: DEFAULT_FPS_SET.to_vec(),
            batch_size: 16,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub scene: SceneConfig,
    pub scenario: ScenarioConfig,
    pub dataset: DatasetSection,
    pub keyframe: KeyframeSection,
    pub extrap: ExtrapSection,
    pub eval: EvalSection,
    pub pipeline: PipelineConfig,
}

/// A parsed config plus the text it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: Option<String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Applies a global seed to every seeded component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.keyframe.train.seed = seed;
        self.extrap.train.seed = seed;
        self.extrap.sampling.seed = seed;
    }

    pub fn base_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn resolve_variant(&mut self) -> CliResult<()> {
        if let Some(name) = &self.extrap.variant {
            let mut model = eventdepth::depth_extrap::ExtrapolatorConfig::variant(name)?;
            model.bins = self.extrap.train.model.bins;
            model.max_range_m = self.extrap.train.model.max_range_m;
            self.extrap.train.model = model;
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.scene.validate()?;
        self.scenario.validate()?;
        self.keyframe.rules.validate()?;
        self.keyframe.train.validate()?;
        if self.keyframe.window_us == 0 {
            return Err(CliError::Config("keyframe.window_us must be positive".into()));
        }
        self.extrap.sampling.validate()?;
        self.extrap.train.validate()?;
        if self.extrap.sampling.bins != self.extrap.train.model.bins {
            return Err(CliError::Config(format!(
                "extrap.sampling.bins = {} but extrap.train.model.bins = {}",
                self.extrap.sampling.bins, self.extrap.train.model.bins
            )));
        }
        if self.eval.batch_size == 0 {
            return Err(CliError::Config("eval.batch_size must be positive".into()));
        }
        self.pipeline.validate()?;
        Ok(())
    }
}

pub fn load(path: Option<&Path>, seed: Option<u64>) -> CliResult<LoadedConfig> {
    let text = match path {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let mut config = match &text {
        Some(t) => RunConfig::parse(t)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed.or(config.seed) {
        config.apply_seed(s);
    }
    config.resolve_variant()?;
    config.validate()?;
    Ok(LoadedConfig { config, text })
}
