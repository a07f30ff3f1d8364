//! Graph-building helpers shared by the architectures.

use std::collections::BTreeMap;

use super::ArchError;
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub(crate) const LEAKY_SLOPE: f64 = 0.1;

/// Parameter leaves of one graph, addressable by name.
#[derive(Clone, Debug)]
pub struct Bound {
    index: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(names: Vec<String>, vars: Vec<Var>) -> Self {
        Self {
            index: names.into_iter().zip(vars).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var, ArchError> {
        self.index.get(name).copied().ok_or_else(|| ArchError::Parameters {
            expected: name.to_string(),
            found: "nothing".into(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.index.iter()
    }
}

/// Final flow `[N, 2, H, W]` and every intermediate with its scale factor.
#[derive(Clone, Debug)]
pub struct GraphOutputs {
    pub final_flow: Var,
    pub intermediates: Vec<(Var, usize)>,
}

/// Same-padded convolution using `{name}.weight` / `{name}.bias`.
pub(crate) fn conv<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var, ArchError> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    let k = g.shape(w)[2];
    Ok(g.conv2d(x, w, Some(b), 1, k / 2)?)
}

pub(crate) fn conv_leaky<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var, ArchError> {
    let y = conv(g, p, name, x)?;
    Ok(g.leaky_relu(y, LEAKY_SLOPE))
}

pub(crate) fn conv_relu<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var, ArchError> {
    let y = conv(g, p, name, x)?;
    Ok(g.relu(y))
}

/// Absolute pixel coordinates `[N, 2, H, W]` (x plane then y plane).
pub(crate) fn pixel_grid<T: Scalar>(g: &mut Graph<T>, n: usize, h: usize, w: usize) -> Var {
    let mut data = Vec::with_capacity(n * 2 * h * w);
    for _ in 0..n {
        data.extend((0..h * w).map(|i| T::from_f64((i % w) as f64)));
        data.extend((0..h * w).map(|i| T::from_f64((i / w) as f64)));
    }
    g.constant(Tensor::from_vec([n, 2, h, w], data).expect("grid length matches"))
}

pub(crate) fn zeros<T: Scalar>(g: &mut Graph<T>, shape: &[usize]) -> Var {
    g.constant(Tensor::zeros(shape.to_vec()))
}
