//! The step loop with evaluation and checkpoint/resume.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::clip::clip_gradients;
use super::loss::{model_loss, LossConfig};
use super::optim::{AdamConfig, AdamW};
use super::schedule::{learning_rate, LrSchedule, ONECYCLE_DIVISOR};
use super::TrainError;
use crate::arch::{build_model, forward_graph, Checkpoint, ForwardOptions, ModelConfig, ModelState};
use crate::data::{augment, batch, AugmentPolicy, DatasetMixture, FlowSample, ScenePolicy};
use crate::metrics::evaluate;
use crate::seed;
use crate::tensor::Graph;

/// A deterministic evaluation set drawn from a mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub name: String,
    pub mixture: DatasetMixture,
    pub count: u64,
    pub seed: u64,
}

impl EvalSet {
    pub fn samples(&self, size: (usize, usize)) -> Result<Vec<FlowSample>, TrainError> {
        (0..self.count)
            .map(|k| Ok(self.mixture.sample(self.seed, k, size)?.1))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub total_steps: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    /// Defaults to `peak_lr / 25`.
    pub base_lr: Option<f64>,
    pub schedule: LrSchedule,
    /// Global-norm threshold; `None` disables clipping.
    pub clip: Option<f64>,
    pub weight_decay: f64,
    pub augment: AugmentPolicy,
    pub mixture: DatasetMixture,
    /// `(height, width)` of generated samples.
    pub size: (usize, usize),
    /// Evaluate every this many steps (0: only at the end).
    pub eval_every: u64,
    pub eval_sets: Vec<EvalSet>,
    /// Save a checkpoint every this many steps (0: never).
    pub checkpoint_every: u64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            batch_size: 1,
            peak_lr: 4e-4,
            base_lr: None,
            schedule: LrSchedule::default(),
            clip: Some(1.0),
            weight_decay: 0.0,
            augment: AugmentPolicy::default(),
            mixture: DatasetMixture::single("synthetic", ScenePolicy::default(), None).expect("default policy is valid"),
            size: (64, 96),
            eval_every: 0,
            eval_sets: Vec::new(),
            checkpoint_every: 0,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainPlan {
    pub fn base_lr(&self) -> f64 {
        self.base_lr.unwrap_or(self.peak_lr / ONECYCLE_DIVISOR)
    }

    /// Spatial size fed to the model (after cropping).
    pub fn input_size(&self) -> (usize, usize) {
        self.augment.crop.unwrap_or(self.size)
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<(), TrainError> {
        self.schedule.validate()?;
        let bad = |m: String| Err(TrainError::Plan(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        let base = self.base_lr();
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) || base.is_nan() || base < 0.0 {
            return bad("learning rates must be finite and nonnegative".into());
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip threshold {c} must be positive"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay < 1.0) {
            return bad(format!("weight decay {} outside [0, 1)", self.weight_decay));
        }
        self.mixture.validate()?;
        let (h, w) = self.input_size();
        model.check_input(h, w)?;
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        seed::fingerprint(&serde_json::to_vec(self).expect("plans serialize"))
    }
}

/// Learning rate of `plan` at `step`.
pub fn lr_at(plan: &TrainPlan, step: u64) -> Result<f64, TrainError> {
    learning_rate(&plan.schedule, plan.peak_lr, plan.base_lr(), plan.total_steps, step)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainRecord {
    Step {
        step: u64,
        lr: f64,
        loss: f64,
        grad_norm: f64,
        clipped_norm: f64,
    },
    Eval {
        step: u64,
        set: String,
        aepe: f64,
        fl_all: f64,
        wauc: f64,
    },
}

impl TrainRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    pub fn parse_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    step: u64,
    plan: String,
}

pub struct Trainer {
    plan: TrainPlan,
    state: ModelState,
    opt: AdamW,
    step: u64,
    opts: ForwardOptions,
    checkpoint_dir: Option<PathBuf>,
    last_checkpoint: Option<u64>,
    eval_cache: Option<Vec<(String, Vec<FlowSample>)>>,
}

impl Trainer {
    pub fn new(state: ModelState, plan: TrainPlan) -> Result<Self, TrainError> {
        plan.validate(state.config())?;
        let opt = AdamW::new(
            AdamConfig {
                weight_decay: plan.weight_decay,
                ..AdamConfig::default()
            },
            &state,
        );
        Ok(Self {
            plan,
            state,
            opt,
            step: 0,
            opts: ForwardOptions::default(),
            checkpoint_dir: None,
            last_checkpoint: None,
            eval_cache: None,
        })
    }

    /// Continues a run from a checkpoint written by the same plan.
    pub fn resume(ckpt: Checkpoint, plan: TrainPlan) -> Result<Self, TrainError> {
        let meta: Meta = serde_json::from_str(&ckpt.meta).map_err(|e| TrainError::Mismatch(format!("metadata: {e}")))?;
        if meta.plan != plan.fingerprint() {
            return Err(TrainError::Mismatch("checkpoint was written by a different plan".into()));
        }
        let opt_state = ckpt
            .optimizer
            .ok_or_else(|| TrainError::Mismatch("checkpoint carries no optimizer state".into()))?;
        let mut t = Self::new(ckpt.state, plan)?;
        t.opt = AdamW::from_state(t.opt.config, opt_state);
        t.step = meta.step;
        t.last_checkpoint = Some(meta.step);
        Ok(t)
    }

    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn with_options(mut self, opts: ForwardOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = Meta {
            step: self.step,
            plan: self.plan.fingerprint(),
        };
        Checkpoint {
            state: self.state.clone(),
            optimizer: Some(self.opt.state().clone()),
            meta: serde_json::to_string(&meta).expect("metadata serializes"),
        }
    }

    fn save(&mut self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        let bytes = self.checkpoint().to_bytes();
        let tmp = dir.join("latest.flck.tmp");
        std::fs::write(&tmp, &bytes)?;
        std::fs::write(dir.join(format!("step-{:08}.flck", self.step)), &bytes)?;
        std::fs::rename(tmp, dir.join("latest.flck"))?;
        self.last_checkpoint = Some(self.step);
        Ok(())
    }

    /// Samples for step `step`; item `b` is mixture draw `step * B + b`.
    pub fn batch_samples(&self, step: u64) -> Result<Vec<FlowSample>, TrainError> {
        let p = &self.plan;
        (0..p.batch_size as u64)
            .map(|b| {
                let k = step * p.batch_size as u64 + b;
                let (_, s) = p.mixture.sample(p.seed, k, p.size)?;
                let (s, _) = augment(&s, &p.augment, seed::derive(p.seed, "augment", k))?;
                Ok(s)
            })
            .collect()
    }

    fn diverged(&self, reason: String) -> TrainError {
        TrainError::Diverged {
            step: self.step,
            reason,
            last_checkpoint: self.last_checkpoint,
        }
    }

    /// Forward, backward, clip and update for the current step.
    pub fn train_step(&mut self) -> Result<TrainRecord, TrainError> {
        let samples = self.batch_samples(self.step)?;
        let refs: Vec<&FlowSample> = samples.iter().collect();
        let (f1, f2, gt) = batch(&refs)?;
        let cfg = self.state.config().clone();
        let mut g = Graph::<f32>::new();
        let p = self.state.bind(&mut g);
        let (a, b, t) = (g.constant(f1), g.constant(f2), g.constant(gt));
        let out = forward_graph(&mut g, &cfg, &p, a, b, &self.opts)?;
        let loss = model_loss(&mut g, cfg.arch, &out, t, &self.plan.loss)?;
        let loss_value = g.value(loss).item() as f64;
        if !loss_value.is_finite() {
            return Err(self.diverged(format!("loss is {loss_value}")));
        }
        let grads = g.backward(loss)?;
        let mut named: BTreeMap<String, Vec<f32>> =
            p.iter().map(|(name, &v)| (name.clone(), grads.get(v).into_vec())).collect();
        let stats = match clip_gradients(&mut named, self.plan.clip) {
            Err(TrainError::NonFinite { parameter }) => {
                return Err(self.diverged(format!("non-finite gradient in {parameter}")))
            }
            other => other?,
        };
        let lr = lr_at(&self.plan, self.step)?;
        self.opt.step(&mut self.state, &named, lr);
        let record = TrainRecord::Step {
            step: self.step,
            lr,
            loss: loss_value,
            grad_norm: stats.pre_norm,
            clipped_norm: stats.post_norm,
        };
        self.step += 1;
        Ok(record)
    }

    /// Evaluates every configured set at the current step.
    pub fn evaluate(&mut self) -> Result<Vec<TrainRecord>, TrainError> {
        if self.eval_cache.is_none() {
            let size = self.plan.input_size();
            let sets = self
                .plan
                .eval_sets
                .iter()
                .map(|s| Ok((s.name.clone(), s.samples(size)?)))
                .collect::<Result<Vec<_>, TrainError>>()?;
            self.eval_cache = Some(sets);
        }
        let sets = self.eval_cache.as_ref().expect("filled above");
        let mut out = Vec::with_capacity(sets.len());
        for (name, samples) in sets {
            let r = evaluate(&self.state, samples, &self.opts)?.report;
            out.push(TrainRecord::Eval {
                step: self.step,
                set: name.clone(),
                aepe: r.aepe,
                fl_all: r.fl_all,
                wauc: r.wauc,
            });
        }
        Ok(out)
    }

    /// Trains until `stop_at` (or the end of the plan), emitting records.
    pub fn run(&mut self, stop_at: Option<u64>, sink: &mut dyn FnMut(&TrainRecord)) -> Result<(), TrainError> {
        let total = self.plan.total_steps;
        let end = stop_at.unwrap_or(total).min(total);
        if total == 0 {
            for r in self.evaluate()? {
                sink(&r);
            }
            return Ok(());
        }
        while self.step < end {
            let r = self.train_step()?;
            sink(&r);
            let done = self.step;
            let every = self.plan.eval_every;
            if !self.plan.eval_sets.is_empty() && ((every > 0 && done.is_multiple_of(every)) || done == total) {
                for r in self.evaluate()? {
                    sink(&r);
                }
            }
            if let Some(dir) = self.checkpoint_dir.clone() {
                let every = self.plan.checkpoint_every;
                if (every > 0 && done.is_multiple_of(every)) || done == end {
                    self.save(&dir)?;
                }
            }
        }
        Ok(())
    }
}

/// Trains a freshly initialized model; the init seed derives from the plan seed.
pub fn pretrain(config: &ModelConfig, plan: &TrainPlan) -> Result<(ModelState, Vec<TrainRecord>), TrainError> {
    let state = build_model(config, seed::derive(plan.seed, "init", 0))?;
    finetune(state, plan)
}

/// Continues training `initial`; a zero-step plan only evaluates.
pub fn finetune(initial: ModelState, plan: &TrainPlan) -> Result<(ModelState, Vec<TrainRecord>), TrainError> {
    let mut records = Vec::new();
    let mut t = Trainer::new(initial, plan.clone())?;
    t.run(None, &mut |r| records.push(r.clone()))?;
    Ok((t.into_state(), records))
}

