//! Dataset manifests: enough to regenerate every sample bit-exactly.

use serde::{Deserialize, Serialize};

use super::mixture::DatasetMixture;
use super::scene::generate_sample;
use super::{DataError, FlowSample};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: u64,
    pub source: String,
    pub seed: u64,
    pub spec_fingerprint: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub mixture_fingerprint: String,
    pub mixture: DatasetMixture,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn build(mixture: &DatasetMixture, seed: u64, count: u64, size: (usize, usize)) -> Self {
        let records = (0..count)
            .map(|k| {
                let d = mixture.draw(seed, k);
                ManifestRecord {
                    index: k,
                    source: mixture.sources()[d.source].name.clone(),
                    seed: d.scene_seed,
                    spec_fingerprint: d.spec.fingerprint(),
                    height: size.0,
                    width: size.1,
                }
            })
            .collect();
        Self {
            version: MANIFEST_VERSION,
            seed,
            mixture_fingerprint: mixture.fingerprint(),
            mixture: mixture.clone(),
            records,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifests serialize")
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| DataError::Manifest(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(DataError::Manifest(format!("unsupported version {}", m.version)));
        }
        m.mixture.validate()?;
        if m.mixture.fingerprint() != m.mixture_fingerprint {
            return Err(DataError::Manifest("mixture fingerprint mismatch".into()));
        }
        for r in &m.records {
            if r.height == 0 || r.width == 0 || r.height.saturating_mul(r.width) > 1 << 24 {
                return Err(DataError::Manifest(format!("record {} has size {}x{}", r.index, r.height, r.width)));
            }
            if !m.mixture.sources().iter().any(|s| s.name == r.source) {
                return Err(DataError::Manifest(format!("record {} names unknown source {:?}", r.index, r.source)));
            }
        }
        Ok(m)
    }

    /// Regenerates record `i`, verifying the scene fingerprint.
    pub fn regenerate(&self, i: usize) -> Result<FlowSample, DataError> {
        let r = self.records.get(i).ok_or(DataError::Manifest(format!("no record {i}")))?;
        let source = self
            .mixture
            .sources()
            .iter()
            .find(|s| s.name == r.source)
            .ok_or_else(|| DataError::Manifest(format!("unknown source {:?}", r.source)))?;
        let spec = source.policy.draw(r.seed);
        let got = spec.fingerprint();
        if got != r.spec_fingerprint {
            return Err(DataError::Fingerprint {
                index: r.index,
                expected: r.spec_fingerprint.clone(),
                got,
            });
        }
        generate_sample(&spec, (r.height, r.width), r.seed)
    }
}
