//! Cost-volume scaling: analytic element counts, allocation-accounted
//! measurements of the model forwards, and log-log slope fits.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{build_model, predict, Arch, ArchError, ForwardOptions, ModelConfig};
use crate::data::{batch, generate_sample, ScenePolicy};
use crate::tensor::alloc::MeasureSession;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("resolution {height}x{width} must be at least 1x1")]
    Resolution { height: usize, width: usize },
    #[error("element count overflows at {height}x{width}")]
    Overflow { height: usize, width: usize },
    #[error("at least 2 repetitions are needed, got {0}")]
    Repetitions(usize),
    #[error("a fit needs at least 3 distinct resolutions, got {0}")]
    Degenerate(usize),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    /// Window of radius `radius` around each pixel.
    Local { radius: usize },
    AllPairs,
    /// Separate horizontal and vertical volumes.
    OneDim,
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Local { radius } => format!("local(d={radius})"),
            Strategy::AllPairs => "all-pairs".into(),
            Strategy::OneDim => "one-dim".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub strategy: Strategy,
    /// Feature width `D`.
    pub feature_width: usize,
}

impl CostModel {
    /// Cost-volume entries for an `H x W` feature map:
    /// `HW(2d+1)^2`, `(HW)^2` or `HW(H+W)`.
    pub fn elements(&self, height: usize, width: usize) -> Result<u64, ProfileError> {
        analytic_elements(self, height, width)
    }

    /// Multiply-adds to fill the volume: elements times `D`.
    pub fn operations(&self, height: usize, width: usize) -> Result<u64, ProfileError> {
        self.elements(height, width)?
            .checked_mul(self.feature_width as u64)
            .ok_or(ProfileError::Overflow { height, width })
    }

    /// Whether the volume would exceed an element budget. Only all-pairs
    /// volumes are budgeted.
    pub fn exceeds(&self, height: usize, width: usize, budget: u64) -> bool {
        matches!(self.strategy, Strategy::AllPairs) && self.elements(height, width).map_or(true, |e| e > budget)
    }
}

pub fn analytic_elements(model: &CostModel, height: usize, width: usize) -> Result<u64, ProfileError> {
    if height == 0 || width == 0 {
        return Err(ProfileError::Resolution { height, width });
    }
    let overflow = ProfileError::Overflow { height, width };
    let hw = (height as u64).checked_mul(width as u64).ok_or(ProfileError::Overflow { height, width })?;
    match model.strategy {
        Strategy::Local { radius } => {
            let k = 2 * radius as u64 + 1;
            hw.checked_mul(k * k).ok_or(overflow)
        }
        Strategy::AllPairs => hw.checked_mul(hw).ok_or(overflow),
        Strategy::OneDim => hw.checked_mul(height as u64 + width as u64).ok_or(overflow),
    }
}

/// Cost model of an architecture and the input-to-feature downscale at which
/// its largest volume is built.
pub fn model_cost(config: &ModelConfig) -> (CostModel, usize) {
    match config.arch {
        Arch::Pwc | Arch::Irr => (
            CostModel {
                strategy: Strategy::Local {
                    radius: config.search_radius,
                },
                feature_width: config.widths[0],
            },
            2,
        ),
        Arch::Raft => (
            CostModel {
                strategy: Strategy::AllPairs,
                feature_width: config.raft_feature,
            },
            config.upsample_factor,
        ),
    }
}

/// Timing and allocation peaks over the measured repetitions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub runs: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Largest live tensor bytes during any measured run.
    pub peak_bytes: u64,
    /// Largest live cost-volume bytes during any measured run.
    pub peak_cost_volume_bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    Measured(Measurement),
    /// The all-pairs volume was refused by the element budget.
    OverBudget { requested: u64, budget: u64 },
}

/// Runs `run` `repetitions` times, discarding the first as warm-up.
/// A budget refusal becomes [`Outcome::OverBudget`].
pub fn measure<F>(mut run: F, repetitions: usize) -> Result<Outcome, ProfileError>
where
    F: FnMut() -> Result<(), ArchError>,
{
    if repetitions < 2 {
        return Err(ProfileError::Repetitions(repetitions));
    }
    let mut session = MeasureSession::begin();
    let mut times = Vec::with_capacity(repetitions - 1);
    let (mut peak, mut peak_cv) = (0, 0);
    for i in 0..repetitions {
        session.restart();
        let baseline = session.peaks().live;
        let start = Instant::now();
        match run() {
            Ok(()) => {}
            Err(ArchError::Tensor(crate::tensor::TensorError::BudgetExceeded { requested, budget })) => {
                return Ok(Outcome::OverBudget { requested, budget })
            }
            Err(e) => return Err(e.into()),
        }
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if i == 0 {
            continue;
        }
        let p = session.peaks();
        peak = peak.max(p.peak.saturating_sub(baseline));
        peak_cv = peak_cv.max(p.peak_cost_volume);
        times.push(elapsed);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(Outcome::Measured(Measurement {
        runs: times.len(),
        mean_ms: mean,
        std_ms: var.sqrt(),
        peak_bytes: peak,
        peak_cost_volume_bytes: peak_cv,
    }))
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

/// Fits `y ~ x^slope` over points `(x, y)`, e.g. `(HW, elements)`.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<Fit, ProfileError> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(ProfileError::Degenerate(xs.len()));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Fit {
        slope,
        intercept,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub arch: Arch,
    pub strategy: Strategy,
    pub height: usize,
    pub width: usize,
    /// Analytic entries of the largest volume at feature resolution.
    pub analytic_elements: u64,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchFit {
    pub arch: Arch,
    pub analytic: Fit,
    /// Fit of the measured peak cost-volume bytes; absent with fewer than
    /// three measured resolutions.
    pub measured: Option<Fit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub repetitions: usize,
    pub budget: u64,
    pub rows: Vec<ScalingRow>,
    pub fits: Vec<ArchFit>,
}

/// Profiles the forward pass of each architecture's default configuration
/// at every resolution.
pub fn profile(
    archs: &[Arch],
    resolutions: &[(usize, usize)],
    repetitions: usize,
    opts: &ForwardOptions,
    seed: u64,
) -> Result<ScalingReport, ProfileError> {
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &arch in archs {
        let config = ModelConfig::new(arch);
        let state = build_model(&config, seed)?;
        let (cost, down) = model_cost(&config);
        let mut analytic = Vec::new();
        let mut measured = Vec::new();
        for &(h, w) in resolutions {
            config.check_input(h, w)?;
            let elements = cost.elements(h / down, w / down)?;
            let spec = ScenePolicy::default().draw(seed);
            let sample = generate_sample(&spec, (h, w), seed).map_err(|e| ArchError::Config(e.to_string()))?;
            let (f1, f2, _) = batch(&[&sample]).map_err(|e| ArchError::Config(e.to_string()))?;
            let outcome = measure(|| predict(&state, &f1, &f2, opts).map(|_| ()), repetitions)?;
            let hw = (h * w) as f64;
            analytic.push((hw, elements as f64));
            if let Outcome::Measured(m) = outcome {
                measured.push((hw, m.peak_cost_volume_bytes as f64));
            }
            rows.push(ScalingRow {
                arch,
                strategy: cost.strategy,
                height: h,
                width: w,
                analytic_elements: elements,
                outcome,
            });
        }
        fits.push(ArchFit {
            arch,
            analytic: fit_scaling(&analytic)?,
            measured: fit_scaling(&measured).ok(),
        });
    }
    Ok(ScalingReport {
        repetitions,
        budget: opts.allpairs_budget,
        rows,
        fits,
    })
}

impl ScalingReport {
    /// Time columns then memory columns, one per resolution; refused cells
    /// read `OOM`.
    pub fn table(&self) -> String {
        let mut res: Vec<(usize, usize)> = Vec::new();
        for r in &self.rows {
            if !res.contains(&(r.height, r.width)) {
                res.push((r.height, r.width));
            }
        }
        let mut out = String::from("| model |");
        for (h, w) in &res {
            let _ = write!(out, " time {w}x{h} (ms) |");
        }
        for (h, w) in &res {
            let _ = write!(out, " cost volume {w}x{h} (KiB) |");
        }
        out.push_str(" slope |\n|---|");
        out.push_str(&"---|".repeat(2 * res.len() + 1));
        out.push('\n');
        let mut archs: Vec<Arch> = Vec::new();
        for r in &self.rows {
            if !archs.contains(&r.arch) {
                archs.push(r.arch);
            }
        }
        for arch in archs {
            let cells: Vec<Option<&ScalingRow>> = res
                .iter()
                .map(|&(h, w)| self.rows.iter().find(|r| r.arch == arch && r.height == h && r.width == w))
                .collect();
            let _ = write!(out, "| {} |", arch.name());
            for c in &cells {
                match c.map(|r| r.outcome) {
                    Some(Outcome::Measured(m)) => {
                        let _ = write!(out, " {:.1} ± {:.1} |", m.mean_ms, m.std_ms);
                    }
                    Some(Outcome::OverBudget { .. }) => out.push_str(" OOM |"),
                    None => out.push_str(" n/a |"),
                }
            }
            for c in &cells {
                match c.map(|r| r.outcome) {
                    Some(Outcome::Measured(m)) => {
                        let _ = write!(out, " {:.1} |", m.peak_cost_volume_bytes as f64 / 1024.0);
                    }
                    Some(Outcome::OverBudget { .. }) => out.push_str(" OOM |"),
                    None => out.push_str(" n/a |"),
                }
            }
            match self.fits.iter().find(|f| f.arch == arch).and_then(|f| f.measured) {
                Some(f) => {
                    let _ = writeln!(out, " {:.3} |", f.slope);
                }
                None => out.push_str(" n/a |\n"),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_formulas() {
        let ap = CostModel {
            strategy: Strategy::AllPairs,
            feature_width: 8,
        };
        assert_eq!(ap.elements(2, 2).unwrap(), 16);
        assert_eq!(ap.operations(2, 2).unwrap(), 128);
        let local = CostModel {
            strategy: Strategy::Local { radius: 4 },
            feature_width: 8,
        };
        assert_eq!(local.elements(3, 5).unwrap(), 15 * 81);
        let one = CostModel {
            strategy: Strategy::OneDim,
            feature_width: 8,
        };
        assert_eq!(one.elements(3, 5).unwrap(), 15 * 8);
        assert!(ap.elements(0, 4).is_err());
        assert!(matches!(ap.elements(1 << 20, 1 << 20), Err(ProfileError::Overflow { .. })));
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        assert!(fit_scaling(&[(4.0, 16.0), (4.0, 16.0), (4.0, 16.0)]).is_err());
        assert!(fit_scaling(&[(1.0, 1.0), (2.0, 4.0)]).is_err());
        let f = fit_scaling(&[(1.0, 3.0), (2.0, 12.0), (4.0, 48.0)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && f.residual < 1e-12);
    }
}
