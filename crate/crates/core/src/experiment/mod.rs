//! Experiment configuration files and the ablation grid driver.
//!
//! A config is TOML with a `schema_version`, a `[model]` table, optional
//! `[pretrain]` / `[finetune]` phases, `[[eval]]` sets, optional `[splits]`
//! and an optional `[grid]` whose axes expand the pre-training phase.

mod grid;

pub use grid::{run_grid, GridCell, GridReport, GridRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, ModelConfig};
use crate::data::{shifted_policy, train_policy, AugmentPolicy, DataError, DatasetMixture, ScenePolicy, SplitMode};
use crate::metrics::EvalError;
use crate::train::{EvalSet, LossConfig, LrSchedule, TrainError, TrainPlan};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Where a phase or evaluation set draws its samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// The default synthetic scene policy.
    Synthetic,
    /// Five-source fine-tuning mixture.
    Standard,
    /// Small-motion policy shared by training and in-distribution validation.
    InDistribution,
    /// Large-motion policy used for out-of-distribution validation.
    Shifted,
    /// Always the same scene.
    Fixed(u64),
}

impl DataSource {
    pub fn mixture(&self) -> DatasetMixture {
        let single = |name: &str, p: ScenePolicy, fixed| DatasetMixture::single(name, p, fixed).expect("built-in policies are valid");
        match *self {
            DataSource::Synthetic => single("synthetic", ScenePolicy::default(), None),
            DataSource::Standard => DatasetMixture::standard(),
            DataSource::InDistribution => single("in-distribution", train_policy(), None),
            DataSource::Shifted => single("shifted", shifted_policy(), None),
            DataSource::Fixed(s) => single("fixed", ScenePolicy::default(), Some(s)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DataSource::Fixed(s) => format!("fixed-{s}"),
            other => serde_json::to_value(other)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
        }
    }
}

/// A clipping threshold or `"none"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Clip {
    Threshold(f64),
    Off(NoClip),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoClip {
    None,
}

impl Clip {
    pub fn threshold(&self) -> Option<f64> {
        match self {
            Clip::Threshold(t) => Some(*t),
            Clip::Off(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Clip::Threshold(t) => format!("clip {t}"),
            Clip::Off(_) => "no clip".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub base_lr: Option<f64>,
    pub schedule: LrSchedule,
    pub clip: Clip,
    pub weight_decay: f64,
    pub augment: AugmentPolicy,
    pub data: DataSource,
    /// `[height, width]` of generated samples.
    pub size: [usize; 2],
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub loss: LossConfig,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        let p = TrainPlan::default();
        Self {
            steps: p.total_steps,
            batch_size: p.batch_size,
            peak_lr: p.peak_lr,
            base_lr: None,
            schedule: p.schedule,
            clip: Clip::Threshold(1.0),
            weight_decay: p.weight_decay,
            augment: p.augment,
            data: DataSource::Synthetic,
            size: [p.size.0, p.size.1],
            eval_every: 0,
            checkpoint_every: 0,
            loss: p.loss,
        }
    }
}

impl PhaseConfig {
    pub fn plan(&self, seed: u64, eval_sets: Vec<EvalSet>) -> TrainPlan {
        TrainPlan {
            total_steps: self.steps,
            batch_size: self.batch_size,
            peak_lr: self.peak_lr,
            base_lr: self.base_lr,
            schedule: self.schedule.clone(),
            clip: self.clip.threshold(),
            weight_decay: self.weight_decay,
            augment: self.augment.clone(),
            mixture: self.data.mixture(),
            size: (self.size[0], self.size[1]),
            eval_every: self.eval_every,
            eval_sets,
            checkpoint_every: self.checkpoint_every,
            seed,
            loss: self.loss.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub name: String,
    pub data: DataSource,
    pub count: u64,
    /// Defaults to a stream derived from the experiment seed and the name.
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub train: usize,
    pub val: usize,
    pub size: [usize; 2],
    /// Histogram bin width in pixels.
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
    /// Upper edge of the last bin.
    #[serde(default = "default_bin_max")]
    pub bin_max: f64,
}

fn default_bin_width() -> f64 {
    4.0
}

fn default_bin_max() -> f64 {
    40.0
}

/// Axes of an ablation grid; each non-empty axis replaces the matching
/// pre-training setting, and the grid is their Cartesian product.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub arch: Vec<crate::arch::Arch>,
    pub data: Vec<DataSource>,
    pub clip: Vec<Clip>,
    pub schedule: Vec<LrSchedule>,
    pub steps: Vec<u64>,
    pub peak_lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: Option<PhaseConfig>,
    #[serde(default)]
    pub finetune: Option<PhaseConfig>,
    #[serde(default)]
    pub eval: Vec<EvalConfig>,
    #[serde(default)]
    pub splits: Option<SplitConfig>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ExperimentError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model.validate()?;
        let mut names: Vec<&str> = self.eval.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(ExperimentError::Config("evaluation set names must be unique".into()));
        }
        if self.eval.iter().any(|e| e.count == 0) {
            return Err(ExperimentError::Config("evaluation sets must be non-empty".into()));
        }
        for phase in [&self.pretrain, &self.finetune].into_iter().flatten() {
            phase.plan(self.seed, Vec::new()).validate(&self.model)?;
        }
        if let Some(s) = &self.splits {
            if s.train == 0 || s.val == 0 || !(s.bin_width > 0.0 && s.bin_max > s.bin_width) {
                return Err(ExperimentError::Config("splits need samples and a positive bin width".into()));
            }
        }
        Ok(())
    }

    /// Evaluation sets, sized by the phase that uses them.
    pub fn eval_sets(&self) -> Vec<EvalSet> {
        self.eval
            .iter()
            .map(|e| EvalSet {
                name: e.name.clone(),
                mixture: e.data.mixture(),
                count: e.count,
                seed: e.seed.unwrap_or_else(|| crate::seed::derive(self.seed, &format!("eval/{}", e.name), 0)),
            })
            .collect()
    }

    /// Sample size used by evaluation: the pre-training phase's, else the
    /// fine-tuning phase's, else 64x96.
    pub fn eval_size(&self) -> (usize, usize) {
        let phase = self.pretrain.as_ref().or(self.finetune.as_ref());
        phase.map_or((64, 96), |p| p.plan(self.seed, Vec::new()).input_size())
    }

    /// Mixture and size for dataset generation.
    pub fn data_phase(&self) -> PhaseConfig {
        self.pretrain.clone().or_else(|| self.finetune.clone()).unwrap_or_default()
    }

    pub fn pretrain_plan(&self) -> Result<TrainPlan, ExperimentError> {
        let p = self
            .pretrain
            .as_ref()
            .ok_or_else(|| ExperimentError::Config("no [pretrain] phase".into()))?;
        Ok(p.plan(self.seed, self.eval_sets()))
    }

    pub fn finetune_plan(&self) -> Result<TrainPlan, ExperimentError> {
        let p = self
            .finetune
            .as_ref()
            .ok_or_else(|| ExperimentError::Config("no [finetune] phase".into()))?;
        Ok(p.plan(self.seed, self.eval_sets()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
schema_version = 1
seed = 3

[model]
arch = "pwc"

[pretrain]
steps = 100
clip = "none"
data = { fixed = 7 }
schedule = { kind = "piecewise", boundaries = [50], factors = [0.5] }

[[eval]]
name = "val"
data = "shifted"
count = 4

[grid]
clip = [1.0, "none"]
schedule = [{ kind = "one-cycle", peak_fraction = 0.2 }, { kind = "piecewise", boundaries = [50], factors = [0.5] }]
"#;

    #[test]
    fn parses_the_documented_shape() {
        let c = ExperimentConfig::parse(EXAMPLE).unwrap();
        let p = c.pretrain_plan().unwrap();
        assert_eq!(p.clip, None);
        assert_eq!(p.total_steps, 100);
        assert_eq!(p.mixture.sources()[0].fixed_seed, Some(7));
        assert_eq!(c.grid.as_ref().unwrap().clip, vec![Clip::Threshold(1.0), Clip::Off(NoClip::None)]);
        let again = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_versions_and_fields() {
        assert!(ExperimentConfig::parse(&EXAMPLE.replace("schema_version = 1", "schema_version = 2")).is_err());
        assert!(ExperimentConfig::parse(&EXAMPLE.replace("steps = 100", "stepz = 100")).is_err());
        assert!(ExperimentConfig::parse(&EXAMPLE.replace("count = 4", "count = 0")).is_err());
    }
}
