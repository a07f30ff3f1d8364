//! Probability-weighted interleaving of scene sources.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{generate_sample, Jitter, SceneSpec, ScenePolicy};
use super::{DataError, FlowSample};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSource {
    pub name: String,
    pub probability: f64,
    pub policy: ScenePolicy,
    /// Every draw from this source reuses one scene.
    #[serde(default)]
    pub fixed_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMixture {
    sources: Vec<MixtureSource>,
}

/// One drawn item: which source, and the scene that regenerates it.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub source: usize,
    pub scene_seed: u64,
    pub spec: SceneSpec,
}

impl DatasetMixture {
    pub fn new(sources: Vec<MixtureSource>) -> Result<Self, DataError> {
        let m = Self { sources };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.sources.is_empty() {
            return Err(DataError::Mixture("no sources".into()));
        }
        for s in &self.sources {
            if s.name.is_empty() {
                return Err(DataError::Mixture("source with empty name".into()));
            }
            if !(s.probability.is_finite() && s.probability > 0.0) {
                return Err(DataError::Mixture(format!("source {:?} has probability {}", s.name, s.probability)));
            }
            s.policy.validate()?;
        }
        let total: f64 = self.sources.iter().map(|s| s.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DataError::Mixture(format!("probabilities sum to {total}")));
        }
        Ok(())
    }

    pub fn single(name: &str, policy: ScenePolicy, fixed_seed: Option<u64>) -> Result<Self, DataError> {
        Self::new(vec![MixtureSource {
            name: name.into(),
            probability: 1.0,
            policy,
            fixed_seed,
        }])
    }

    /// Five sources with distinct motion and texture statistics standing in
    /// for the fine-tuning datasets, weighted 0.4 / 0.2 / 0.2 / 0.08 / 0.12.
    pub fn standard() -> Self {
        let base = ScenePolicy::default();
        let presets = [
            ("sintel", 0.4, ScenePolicy {
                translation: (0.0, 10.0),
                radius: (0.2, 0.45),
                motion_blur: true,
                ..base.clone()
            }),
            ("kitti", 0.2, ScenePolicy {
                layers: (1, 2),
                translation: (2.0, 14.0),
                background_translation: (1.0, 8.0),
                wavelength: (24.0, 64.0),
                ..base.clone()
            }),
            ("viper", 0.2, ScenePolicy {
                translation: (0.0, 8.0),
                jitter: Some(Jitter {
                    brightness: 0.1,
                    contrast: 0.15,
                }),
                ..base.clone()
            }),
            ("hd1k", 0.08, ScenePolicy {
                layers: (1, 2),
                translation: (0.0, 4.0),
                background_translation: (0.0, 2.0),
                ..base.clone()
            }),
            ("things", 0.12, ScenePolicy {
                layers: (3, 4),
                translation: (0.0, 16.0),
                radius: (0.1, 0.3),
                polygon_prob: 0.8,
                ..base
            }),
        ];
        Self::new(
            presets
                .into_iter()
                .map(|(name, probability, policy)| MixtureSource {
                    name: name.into(),
                    probability,
                    policy,
                    fixed_seed: None,
                })
                .collect(),
        )
        .expect("preset mixture is valid")
    }

    pub fn sources(&self) -> &[MixtureSource] {
        &self.sources
    }

    pub fn fingerprint(&self) -> String {
        seed::fingerprint(&serde_json::to_vec(self).expect("mixtures serialize"))
    }

    /// Source of the `k`-th draw; depends only on `(seed, k)`.
    pub fn pick(&self, seed_value: u64, k: u64) -> usize {
        let u: f64 = seed::stream(seed_value, "mixture", k).gen();
        let mut acc = 0.0;
        for (i, s) in self.sources.iter().enumerate() {
            acc += s.probability;
            if u < acc {
                return i;
            }
        }
        self.sources.len() - 1
    }

    pub fn draw(&self, seed_value: u64, k: u64) -> Draw {
        let source = self.pick(seed_value, k);
        let s = &self.sources[source];
        let scene_seed = s.fixed_seed.unwrap_or_else(|| seed::derive(seed_value, "scene", k));
        Draw {
            source,
            scene_seed,
            spec: s.policy.draw(scene_seed),
        }
    }

    pub fn sample(&self, seed_value: u64, k: u64, size: (usize, usize)) -> Result<(usize, FlowSample), DataError> {
        let d = self.draw(seed_value, k);
        Ok((d.source, generate_sample(&d.spec, size, d.scene_seed)?))
    }

    /// Endless stream of `(source, sample)`.
    pub fn stream(
        &self,
        seed_value: u64,
        size: (usize, usize),
    ) -> impl Iterator<Item = Result<(usize, FlowSample), DataError>> + '_ {
        (0u64..).map(move |k| self.sample(seed_value, k, size))
    }
}
