//! Parameter shapes and deterministic initializers.

use rand::Rng;

use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Uniform with variance `gain^2 / fan_in`.
    Kaiming { fan_in: usize, gain: f64 },
    Zeros,
}

impl Init {
    pub fn sample(self, shape: &[usize], seed_value: u64, name: &str) -> Tensor<f32> {
        let n: usize = shape.iter().product();
        let data = match self {
            Init::Zeros => vec![0.0; n],
            Init::Kaiming { fan_in, gain } => {
                let bound = gain * (3.0 / fan_in as f64).sqrt();
                let mut rng = seed::stream(seed_value, &format!("init/{name}"), 0);
                (0..n).map(|_| rng.gen_range(-bound..=bound) as f32).collect()
            }
        };
        Tensor::from_vec(shape.to_vec(), data).expect("spec shape matches data")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Gain for a leaky ReLU with the given negative slope.
pub(crate) fn leaky_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

/// Appends `{name}.weight` `[cout, cin, k, k]` and a zero `{name}.bias`.
pub(crate) fn conv(specs: &mut Vec<ParamSpec>, name: &str, cin: usize, cout: usize, k: usize, gain: f64) {
    let fan_in = cin * k * k;
    specs.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![cout, cin, k, k],
        init: Init::Kaiming { fan_in, gain },
    });
    specs.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![cout],
        init: Init::Zeros,
    });
}
