//! Cartesian ablation grids over the pre-training phase.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Clip, DataSource, ExperimentConfig, ExperimentError};
use crate::arch::{Arch, ModelConfig};
use crate::train::{pretrain, LrSchedule, TrainPlan, TrainRecord};

/// One point of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub arch: Arch,
    pub data: DataSource,
    pub clip: Clip,
    pub schedule: LrSchedule,
    pub steps: u64,
    pub peak_lr: f64,
    pub weight_decay: f64,
}

impl GridCell {
    pub fn label(&self) -> String {
        let schedule = match &self.schedule {
            LrSchedule::OneCycle { peak_fraction } => format!("onecycle {peak_fraction}"),
            LrSchedule::Piecewise { .. } => "piecewise".into(),
            LrSchedule::Constant => "constant".into(),
        };
        format!(
            "{} | {} | {} | {} | {}",
            self.arch.name(),
            self.data.label(),
            self.clip.label(),
            schedule,
            self.steps
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalColumn {
    pub set: String,
    pub aepe: f64,
    pub fl_all: f64,
    pub wauc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell: GridCell,
    pub plan_fingerprint: String,
    pub parameter_fingerprint: String,
    pub final_loss: f64,
    pub step_records: u64,
    /// Metrics of the last evaluation of each set.
    pub eval: Vec<EvalColumn>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub seed: u64,
    pub rows: Vec<GridRow>,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl ExperimentConfig {
    /// Grid cells in row-major order over the axes arch, data, clip,
    /// schedule, steps, peak-lr, weight-decay.
    pub fn grid_cells(&self) -> Result<Vec<GridCell>, ExperimentError> {
        let base = self
            .pretrain
            .clone()
            .ok_or_else(|| ExperimentError::Config("a grid needs a [pretrain] phase".into()))?;
        let g = self.grid.clone().unwrap_or_default();
        let mut cells = Vec::new();
        for &arch in &axis(&g.arch, self.model.arch) {
            for &data in &axis(&g.data, base.data) {
                for &clip in &axis(&g.clip, base.clip) {
                    for schedule in &axis(&g.schedule, base.schedule.clone()) {
                        for &steps in &axis(&g.steps, base.steps) {
                            for &peak_lr in &axis(&g.peak_lr, base.peak_lr) {
                                for &weight_decay in &axis(&g.weight_decay, base.weight_decay) {
                                    cells.push(GridCell {
                                        arch,
                                        data,
                                        clip,
                                        schedule: schedule.clone(),
                                        steps,
                                        peak_lr,
                                        weight_decay,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    pub fn cell_setup(&self, cell: &GridCell) -> Result<(ModelConfig, TrainPlan), ExperimentError> {
        let mut phase = self
            .pretrain
            .clone()
            .ok_or_else(|| ExperimentError::Config("a grid needs a [pretrain] phase".into()))?;
        phase.data = cell.data;
        phase.clip = cell.clip;
        phase.schedule = cell.schedule.clone();
        phase.steps = cell.steps;
        phase.peak_lr = cell.peak_lr;
        phase.weight_decay = cell.weight_decay;
        let mut model = self.model.clone();
        model.arch = cell.arch;
        model.validate()?;
        Ok((model, phase.plan(self.seed, self.eval_sets())))
    }
}

/// Runs every cell with the same seed; `on_record` sees each cell's records.
pub fn run_grid(
    config: &ExperimentConfig,
    on_record: &mut dyn FnMut(usize, &TrainRecord),
) -> Result<GridReport, ExperimentError> {
    let mut rows = Vec::new();
    for (i, cell) in config.grid_cells()?.into_iter().enumerate() {
        let (model, plan) = config.cell_setup(&cell)?;
        let (state, records) = pretrain(&model, &plan)?;
        let mut final_loss = f64::NAN;
        let mut step_records = 0;
        let mut eval: Vec<EvalColumn> = Vec::new();
        for r in &records {
            on_record(i, r);
            match r {
                TrainRecord::Step { loss, .. } => {
                    final_loss = *loss;
                    step_records += 1;
                }
                TrainRecord::Eval {
                    set, aepe, fl_all, wauc, ..
                } => {
                    let col = EvalColumn {
                        set: set.clone(),
                        aepe: *aepe,
                        fl_all: *fl_all,
                        wauc: *wauc,
                    };
                    match eval.iter_mut().find(|c| c.set == *set) {
                        Some(c) => *c = col,
                        None => eval.push(col),
                    }
                }
            }
        }
        rows.push(GridRow {
            cell,
            plan_fingerprint: plan.fingerprint(),
            parameter_fingerprint: state.fingerprint(),
            final_loss,
            step_records,
            eval,
        });
    }
    Ok(GridReport { seed: config.seed, rows })
}

impl GridReport {
    /// One row per cell; per evaluation set an AEPE, Fl-all and WAUC column.
    pub fn table(&self) -> String {
        let sets: Vec<String> = self
            .rows
            .first()
            .map(|r| r.eval.iter().map(|c| c.set.clone()).collect())
            .unwrap_or_default();
        let mut out = String::from("| arch | data | clipping | schedule | steps | train loss |");
        for s in &sets {
            let _ = write!(out, " {s} AEPE | {s} Fl-all | {s} WAUC |");
        }
        out.push_str("\n|---|---|---|---|---|---|");
        out.push_str(&"---|".repeat(3 * sets.len()));
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "| {} | {:.4} |", r.cell.label(), r.final_loss);
            for s in &sets {
                match r.eval.iter().find(|c| &c.set == s) {
                    Some(c) => {
                        let _ = write!(out, " {:.3} | {:.2} | {:.2} |", c.aepe, c.fl_all, c.wauc);
                    }
                    None => out.push_str(" n/a | n/a | n/a |"),
                }
            }
            out.push('\n');
        }
        out
    }
}
