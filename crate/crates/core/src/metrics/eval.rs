//! Model evaluation over a sample set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{aepe, MetricAccumulator, MetricReport};
use crate::arch::{predict, ForwardOptions, ModelState};
use crate::data::FlowSample;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty evaluation set")]
    Empty,
    #[error("sample {index}: {message}")]
    Sample { index: usize, message: String },
    #[error("sample {index}: {source}")]
    Model {
        index: usize,
        #[source]
        source: crate::arch::ArchError,
    },
}

impl EvalError {
    /// The all-pairs volume was refused by the element budget.
    pub fn is_budget(&self) -> bool {
        matches!(self, EvalError::Model { source, .. } if source.is_budget())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub pixels: u64,
    pub aepe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub report: MetricReport,
    pub per_sample: Vec<SampleScore>,
}

/// Pixel-weighted metrics of `state` over `samples`, evaluated one at a time
/// in order.
pub fn evaluate(state: &ModelState, samples: &[FlowSample], opts: &ForwardOptions) -> Result<EvalOutcome, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut acc = MetricAccumulator::default();
    let mut per_sample = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        let fail = |message: String| EvalError::Sample { index, message };
        let (h, w) = s.size();
        let f1 = s.frame1.reshape([1, 3, h, w]).map_err(|e| fail(e.to_string()))?;
        let f2 = s.frame2.reshape([1, 3, h, w]).map_err(|e| fail(e.to_string()))?;
        let pred = predict(state, &f1, &f2, opts).map_err(|source| EvalError::Model { index, source })?;
        let flow = &pred[0].final_flow;
        acc.add(flow, &s.flow, None).map_err(|e| fail(e.to_string()))?;
        per_sample.push(SampleScore {
            pixels: s.flow.valid_count() as u64,
            aepe: aepe(flow, &s.flow).map_err(|e| fail(e.to_string()))?,
        });
    }
    let report = acc.report().map_err(|e| EvalError::Sample {
        index: 0,
        message: e.to_string(),
    })?;
    Ok(EvalOutcome { report, per_sample })
}

/// Markdown row `| label | AEPE | Fl-all | WAUC |`.
pub fn table_row(label: &str, r: &MetricReport) -> String {
    format!("| {label} | {:.3} | {:.2} | {:.2} |", r.aepe, r.fl_all, r.wauc)
}

/// Evaluates GT as its own prediction; useful to validate a pipeline.
pub fn identity_report(samples: &[FlowSample]) -> Result<MetricReport, EvalError> {
    let mut acc = MetricAccumulator::default();
    for (index, s) in samples.iter().enumerate() {
        acc.add(&s.flow, &s.flow, None).map_err(|e| EvalError::Sample {
            index,
            message: e.to_string(),
        })?;
    }
    acc.report().map_err(|_| EvalError::Empty)
}

