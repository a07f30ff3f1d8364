//! PWC-mini, IRR-mini and RAFT-mini on a common interface.

mod checkpoint;
mod init;
mod net;
mod pyramid;
mod raft;

pub use checkpoint::{Checkpoint, OptimizerState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{Bound, GraphOutputs};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::FlowField;
use crate::seed;
use crate::tensor::{Graph, Scalar, Tensor, TensorError, Var};

/// Default refusal threshold for all-pairs cost volumes, in entries.
pub const DEFAULT_ALLPAIRS_BUDGET: u64 = 1 << 26;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input {height}x{width} is not divisible by {divisor}")]
    Divisibility { height: usize, width: usize, divisor: usize },
    #[error("expected {expected} parameters, found {found}")]
    Parameters { expected: String, found: String },
    #[error("architecture mismatch: model is {model:?}, requested {requested:?}")]
    WrongArch { model: Arch, requested: Arch },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl ArchError {
    pub fn is_budget(&self) -> bool {
        matches!(self, ArchError::Tensor(TensorError::BudgetExceeded { .. }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Pwc,
    Irr,
    Raft,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Pwc, Arch::Irr, Arch::Raft];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Pwc => "pwc",
            Arch::Irr => "irr",
            Arch::Raft => "raft",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pwc" => Ok(Arch::Pwc),
            "irr" => Ok(Arch::Irr),
            "raft" => Ok(Arch::Raft),
            other => Err(ArchError::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Pyramid depth (pwc/irr).
    pub levels: usize,
    /// Feature width per pyramid level, finest first (pwc/irr).
    pub widths: Vec<usize>,
    /// Local correlation radius (pwc/irr).
    pub search_radius: usize,
    /// Decoder hidden widths (pwc/irr).
    pub decoder_widths: [usize; 2],
    /// Shared decoder input adapter width (irr).
    pub irr_adapter: usize,
    pub raft_iterations: usize,
    pub raft_lookup_radius: usize,
    pub raft_corr_levels: usize,
    /// Feature downsampling and convex upsampling factor (raft).
    pub upsample_factor: usize,
    pub raft_feature: usize,
    pub raft_hidden: usize,
    pub raft_context: usize,
    pub raft_motion: usize,
    /// Stop gradients through the flow fed into each refinement (raft).
    /// Disabling it makes the backward pass the exact derivative.
    pub raft_detach_flow: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(Arch::Pwc)
    }
}

impl ModelConfig {
    pub fn new(arch: Arch) -> Self {
        Self {
            arch,
            levels: 4,
            widths: vec![16, 32, 48, 64],
            search_radius: 4,
            decoder_widths: [32, 16],
            irr_adapter: 32,
            raft_iterations: 8,
            raft_lookup_radius: 3,
            raft_corr_levels: 3,
            upsample_factor: 4,
            raft_feature: 48,
            raft_hidden: 16,
            raft_context: 16,
            raft_motion: 32,
            raft_detach_flow: true,
        }
    }

    /// Smallest configuration of each architecture, for gradient checks.
    pub fn tiny(arch: Arch) -> Self {
        Self {
            arch,
            levels: 2,
            widths: vec![3, 4],
            search_radius: 1,
            decoder_widths: [4, 3],
            irr_adapter: 3,
            raft_iterations: 2,
            raft_lookup_radius: 1,
            raft_corr_levels: 2,
            upsample_factor: 2,
            raft_feature: 4,
            raft_hidden: 3,
            raft_context: 2,
            raft_motion: 5,
            raft_detach_flow: true,
        }
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let bad = |m: String| Err(ArchError::Config(m));
        match self.arch {
            Arch::Pwc | Arch::Irr => {
                if self.levels < 2 || self.levels > 8 {
                    return bad(format!("levels {} outside 2..=8", self.levels));
                }
                if self.widths.len() != self.levels {
                    return bad(format!("{} widths for {} levels", self.widths.len(), self.levels));
                }
                if self.widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) || self.irr_adapter == 0 {
                    return bad("widths must be positive".into());
                }
                if self.search_radius > 16 {
                    return bad(format!("search radius {} above 16", self.search_radius));
                }
            }
            Arch::Raft => {
                if self.raft_iterations == 0 {
                    return bad("raft iterations must be at least 1".into());
                }
                if self.raft_corr_levels == 0 || self.raft_corr_levels > 6 {
                    return bad(format!("correlation levels {} outside 1..=6", self.raft_corr_levels));
                }
                if !self.upsample_factor.is_power_of_two() || self.upsample_factor < 2 || self.upsample_factor > 16 {
                    return bad(format!("upsample factor {} must be a power of two in 2..=16", self.upsample_factor));
                }
                if self.raft_lookup_radius > 8 {
                    return bad(format!("lookup radius {} above 8", self.raft_lookup_radius));
                }
                let ws = [self.raft_feature, self.raft_hidden, self.raft_context];
                if ws.contains(&0) || self.raft_motion < 3 {
                    return bad("raft widths must be positive and motion width at least 3".into());
                }
            }
        }
        Ok(())
    }

    /// Both input dimensions must be multiples of this.
    pub fn divisor(&self) -> usize {
        match self.arch {
            Arch::Pwc | Arch::Irr => 1 << self.levels,
            Arch::Raft => self.upsample_factor << (self.raft_corr_levels - 1),
        }
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<(), ArchError> {
        let d = self.divisor();
        if height == 0 || width == 0 || !height.is_multiple_of(d) || !width.is_multiple_of(d) {
            return Err(ArchError::Divisibility { height, width, divisor: d });
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        seed::fingerprint(&serde_json::to_vec(self).expect("configs serialize"))
    }

    fn parameter_specs(&self) -> Vec<init::ParamSpec> {
        let mut specs = Vec::new();
        match self.arch {
            Arch::Pwc | Arch::Irr => pyramid::specs(self, &mut specs),
            Arch::Raft => raft::specs(self, &mut specs),
        }
        specs
    }

    /// Names and shapes of every parameter.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.parameter_specs().into_iter().map(|p| (p.name, p.shape)).collect()
    }
}

/// Named parameters of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    params: BTreeMap<String, Tensor<f32>>,
}

/// Deterministic initialization; each parameter draws from its own named stream.
pub fn build_model(config: &ModelConfig, seed_value: u64) -> Result<ModelState, ArchError> {
    config.validate()?;
    let params = config
        .parameter_specs()
        .into_iter()
        .map(|p| {
            let t = p.init.sample(&p.shape, seed_value, &p.name);
            (p.name, t)
        })
        .collect();
    Ok(ModelState {
        config: config.clone(),
        params,
    })
}

impl ModelState {
    pub fn from_parts(config: ModelConfig, params: BTreeMap<String, Tensor<f32>>) -> Result<Self, ArchError> {
        config.validate()?;
        let expected: BTreeMap<String, Vec<usize>> =
            config.parameter_shapes().into_iter().collect();
        let found: BTreeMap<String, Vec<usize>> = params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        if expected != found {
            let missing: Vec<_> = expected.iter().filter(|(k, v)| found.get(*k) != Some(v)).map(|(k, v)| format!("{k}{v:?}")).collect();
            let extra: Vec<_> = found.iter().filter(|(k, v)| expected.get(*k) != Some(v)).map(|(k, v)| format!("{k}{v:?}")).collect();
            return Err(ArchError::Parameters {
                expected: missing.join(", "),
                found: extra.join(", "),
            });
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<f32>)> {
        self.params.iter_mut()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Hash of the configuration and every parameter bit.
    pub fn fingerprint(&self) -> String {
        let mut bytes = serde_json::to_vec(&self.config).expect("configs serialize");
        for (name, t) in &self.params {
            bytes.extend_from_slice(name.as_bytes());
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        seed::fingerprint(&bytes)
    }

    /// Registers every parameter as a graph leaf in name order.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>) -> Bound {
        let vars = self.params.values().map(|t| g.param(t.cast::<T>())).collect();
        Bound::new(self.params.keys().cloned().collect(), vars)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub allpairs_budget: u64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            allpairs_budget: DEFAULT_ALLPAIRS_BUDGET,
        }
    }
}

/// Builds the forward pass on `g`; frames are `[N, 3, H, W]` in `[0, 1]`.
pub fn forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    config: &ModelConfig,
    params: &Bound,
    frame1: Var,
    frame2: Var,
    opts: &ForwardOptions,
) -> Result<GraphOutputs, ArchError> {
    let shape = g.shape(frame1).to_vec();
    if shape.len() != 4 || shape[1] != 3 || g.shape(frame2) != shape.as_slice() {
        return Err(ArchError::Tensor(TensorError::ShapeMismatch {
            op: "forward",
            lhs: shape,
            rhs: g.shape(frame2).to_vec(),
        }));
    }
    config.check_input(shape[2], shape[3])?;
    match config.arch {
        Arch::Pwc | Arch::Irr => pyramid::forward(g, config, params, frame1, frame2),
        Arch::Raft => raft::forward(g, config, params, frame1, frame2, opts),
    }
}

/// One flow estimate at its native resolution, in native-resolution pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Intermediate {
    pub flow: FlowField,
    /// Input resolution divided by native resolution.
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowPrediction {
    pub final_flow: FlowField,
    /// Coarse to fine (pwc/irr) or first to last iteration (raft).
    pub intermediates: Vec<Intermediate>,
}

fn tensor_flows(t: &Tensor<f32>) -> Vec<FlowField> {
    let s = t.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    t.data()
        .chunks(2 * h * w)
        .take(n)
        .map(|c| FlowField::from_planar(w, h, c).expect("planar flow has two channels"))
        .collect()
}

/// Runs the model without gradients; one prediction per batch element.
pub fn predict(
    state: &ModelState,
    frame1: &Tensor<f32>,
    frame2: &Tensor<f32>,
    opts: &ForwardOptions,
) -> Result<Vec<FlowPrediction>, ArchError> {
    let mut g = Graph::<f32>::new();
    let p = state.bind(&mut g);
    let (a, b) = (g.constant(frame1.clone()), g.constant(frame2.clone()));
    let out = forward_graph(&mut g, &state.config, &p, a, b, opts)?;
    let finals = tensor_flows(g.value(out.final_flow));
    let levels: Vec<Vec<FlowField>> = out.intermediates.iter().map(|&(v, _)| tensor_flows(g.value(v))).collect();
    Ok(finals
        .into_iter()
        .enumerate()
        .map(|(i, final_flow)| FlowPrediction {
            final_flow,
            intermediates: levels
                .iter()
                .zip(&out.intermediates)
                .map(|(l, &(_, scale))| Intermediate {
                    flow: l[i].clone(),
                    scale,
                })
                .collect(),
        })
        .collect())
}

fn predict_as(
    arch: Arch,
    state: &ModelState,
    frame1: &Tensor<f32>,
    frame2: &Tensor<f32>,
    opts: &ForwardOptions,
) -> Result<Vec<FlowPrediction>, ArchError> {
    if state.arch() != arch {
        return Err(ArchError::WrongArch {
            model: state.arch(),
            requested: arch,
        });
    }
    predict(state, frame1, frame2, opts)
}

pub fn forward_pwc(state: &ModelState, frame1: &Tensor<f32>, frame2: &Tensor<f32>) -> Result<Vec<FlowPrediction>, ArchError> {
    predict_as(Arch::Pwc, state, frame1, frame2, &ForwardOptions::default())
}

pub fn forward_irr(state: &ModelState, frame1: &Tensor<f32>, frame2: &Tensor<f32>) -> Result<Vec<FlowPrediction>, ArchError> {
    predict_as(Arch::Irr, state, frame1, frame2, &ForwardOptions::default())
}

pub fn forward_raft(
    state: &ModelState,
    frame1: &Tensor<f32>,
    frame2: &Tensor<f32>,
    opts: &ForwardOptions,
) -> Result<Vec<FlowPrediction>, ArchError> {
    predict_as(Arch::Raft, state, frame1, frame2, opts)
}
