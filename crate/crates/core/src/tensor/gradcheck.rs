//! Central finite-difference gradient checking in 64-bit precision.

use super::{Graph, Tensor, TensorError, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
    /// Coordinates whose stencil straddles a kink: the central difference
    /// misses the analytic gradient, the one-sided slopes disagree, and the
    /// analytic gradient matches one of them. Excluded from the maxima.
    pub kinks: usize,
}

impl GradCheck {
    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            max_abs_error: self.max_abs_error.max(other.max_abs_error),
            coordinates: self.coordinates + other.coordinates,
            kinks: self.kinks + other.kinks,
        }
    }
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            coordinates: 0,
            kinks: 0,
        }
    }
}

/// Relative error with a small floor so that coordinates where both
/// gradients vanish do not divide by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

const KINK_TOLERANCE: f64 = 1e-3;

/// Checks `d f / d inputs` for every coordinate (or the listed subset) of
/// every input. `f` builds a scalar on a fresh graph from leaf vars.
pub fn check<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    coordinates: Option<&[(usize, usize)]>,
    f: F,
) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let center = g.value(out).item();
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get(v)).collect();

    let all: Vec<(usize, usize)>;
    let coords = match coordinates {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };

    let mut report = GradCheck::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for &(i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + step;
        let plus = eval(&work)?;
        work[i].data_mut()[j] = orig - step;
        let minus = eval(&work)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i].data()[j];
        report.coordinates += 1;
        if relative_error(a, numeric) >= KINK_TOLERANCE {
            let left = (center - minus) / step;
            let right = (plus - center) / step;
            let one_sided = relative_error(a, left).min(relative_error(a, right));
            if relative_error(left, right) >= KINK_TOLERANCE && one_sided < KINK_TOLERANCE {
                report.kinks += 1;
                continue;
            }
        }
        report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
    }
    Ok(report)
}
