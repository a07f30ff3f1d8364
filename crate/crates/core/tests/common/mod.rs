#![allow(dead_code)]

use flowlab::tensor::{Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Builder = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>>;

/// One randomized primitive gradient-check instance.
pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Builder,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero (for kinked activations).
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Sample positions whose fractional parts stay away from the bilinear kinks.
pub fn sample_coords(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let mut data = Vec::with_capacity(n * 2 * h * w);
    for _ in 0..n * 2 * h * w {
        let base = rng.gen_range(lo.floor() as i64..hi.ceil() as i64) as f64;
        data.push(base + rng.gen_range(0.05..0.95));
    }
    Tensor::from_vec(vec![n, 2, h, w], data).unwrap()
}

/// Reduces any tensor to a scalar through a fixed random projection so the
/// upstream gradient is not uniform.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = g.shape(out).to_vec();
    let mut r = rng(seed);
    let w = uniform(&mut r, &shape, -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn case(name: &'static str, inputs: Vec<Tensor<f64>>, build: Builder) -> Case {
    Case { name, inputs, build }
}

/// Every differentiable primitive, instantiated with random shapes/values.
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    let p = seed.wrapping_mul(31).wrapping_add(7);
    let n = r.gen_range(1..3);
    let c = r.gen_range(1..4);
    let h = r.gen_range(3..6);
    let w = r.gen_range(3..6);
    let s4 = [n, c, h, w];
    let mut cases = Vec::new();

    cases.push(case(
        "add",
        vec![uniform(&mut r, &s4, -1.0, 1.0), uniform(&mut r, &s4, -1.0, 1.0)],
        Box::new(move |g, v| {
            let o = g.add(v[0], v[1])?;
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "sub",
        vec![uniform(&mut r, &s4, -1.0, 1.0), uniform(&mut r, &s4, -1.0, 1.0)],
        Box::new(move |g, v| {
            let o = g.sub(v[0], v[1])?;
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "mul",
        vec![uniform(&mut r, &s4, -1.0, 1.0), uniform(&mut r, &s4, -1.0, 1.0)],
        Box::new(move |g, v| {
            let o = g.mul(v[0], v[1])?;
            project(g, o, p)
        }),
    ));
    let factor = r.gen_range(-2.0..2.0);
    cases.push(case(
        "scale+offset",
        vec![uniform(&mut r, &s4, -1.0, 1.0)],
        Box::new(move |g, v| {
            let o = g.scale(v[0], factor);
            let o = g.add_scalar(o, 0.3);
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "leaky_relu",
        vec![away_from_zero(&mut r, &s4)],
        Box::new(move |g, v| {
            let o = g.leaky_relu(v[0], 0.1);
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "relu",
        vec![away_from_zero(&mut r, &s4)],
        Box::new(move |g, v| {
            let o = g.relu(v[0]);
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "tanh",
        vec![uniform(&mut r, &s4, -2.0, 2.0)],
        Box::new(move |g, v| {
            let o = g.tanh(v[0]);
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "sigmoid",
        vec![uniform(&mut r, &s4, -3.0, 3.0)],
        Box::new(move |g, v| {
            let o = g.sigmoid(v[0]);
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "sqrt",
        vec![uniform(&mut r, &s4, 0.1, 2.0)],
        Box::new(move |g, v| {
            let o = g.sqrt(v[0])?;
            project(g, o, p)
        }),
    ));

    let f = r.gen_range(1..4);
    let k = if r.gen_bool(0.5) { 3 } else { 1 };
    let pad = k / 2;
    cases.push(case(
        "conv2d",
        vec![
            uniform(&mut r, &s4, -1.0, 1.0),
            uniform(&mut r, &[f, c, k, k], -1.0, 1.0),
            uniform(&mut r, &[f], -1.0, 1.0),
        ],
        Box::new(move |g, v| {
            let o = g.conv2d(v[0], v[1], Some(v[2]), 1, pad)?;
            project(g, o, p)
        }),
    ));
    // stride 2 needs an odd padded extent
    cases.push(case(
        "conv2d_stride2",
        vec![uniform(&mut r, &[n, c, 5, 7], -1.0, 1.0), uniform(&mut r, &[f, c, 3, 3], -1.0, 1.0)],
        Box::new(move |g, v| {
            let o = g.conv2d(v[0], v[1], None, 2, 1)?;
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "dense",
        vec![
            uniform(&mut r, &s4, -1.0, 1.0),
            uniform(&mut r, &[f, c * h * w], -1.0, 1.0),
            uniform(&mut r, &[f], -1.0, 1.0),
        ],
        Box::new(move |g, v| {
            let o = g.dense(v[0], v[1], Some(v[2]))?;
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "concat+slice",
        vec![uniform(&mut r, &s4, -1.0, 1.0), uniform(&mut r, &[n, 2, h, w], -1.0, 1.0)],
        Box::new(move |g, v| {
            let cat = g.concat(&[v[0], v[1], v[0]])?;
            let s = g.slice_channels(cat, 1, c)?;
            let o = g.reshape(s, &[n * c, h * w])?;
            let t = project(g, o, p)?;
            let u = project(g, cat, p + 1)?;
            g.add(t, u)
        }),
    ));
    let (he, we) = (2 * (h / 2).max(1), 2 * (w / 2).max(1));
    cases.push(case(
        "avg_pool2",
        vec![uniform(&mut r, &[n, c, he, we], -1.0, 1.0)],
        Box::new(move |g, v| {
            let o = g.avg_pool2(v[0])?;
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "upsample2",
        vec![uniform(&mut r, &s4, -1.0, 1.0)],
        Box::new(move |g, v| {
            let o = g.upsample2(v[0])?;
            project(g, o, p)
        }),
    ));
    let axis = r.gen_range(0..4);
    cases.push(case(
        "softmax",
        vec![uniform(&mut r, &s4, -2.0, 2.0)],
        Box::new(move |g, v| {
            let o = g.softmax(v[0], axis)?;
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "sum+mean+sum_channels",
        vec![uniform(&mut r, &s4, -1.0, 1.0)],
        Box::new(move |g, v| {
            let sc = g.sum_channels(v[0])?;
            let a = project(g, sc, p)?;
            let sq = g.mul(v[0], v[0])?;
            let m = g.mean(sq);
            let s = g.sum(v[0]);
            let t = g.add(a, m)?;
            g.add(t, s)
        }),
    ));
    let (ho, wo) = (r.gen_range(2..5), r.gen_range(2..5));
    cases.push(case(
        "bilinear_sample",
        vec![
            uniform(&mut r, &s4, -1.0, 1.0),
            sample_coords(&mut r, n, ho, wo, -1.5, w.max(h) as f64 + 0.5),
        ],
        Box::new(move |g, v| {
            let o = g.bilinear_sample(v[0], v[1])?;
            project(g, o, p)
        }),
    ));
    let radius = r.gen_range(0..2);
    let (hc, wc) = (h.max(3), w.max(3));
    cases.push(case(
        "local_correlation",
        vec![uniform(&mut r, &[n, c, hc, wc], -1.0, 1.0), uniform(&mut r, &[n, c, hc, wc], -1.0, 1.0)],
        Box::new(move |g, v| {
            let o = g.local_correlation(v[0], v[1], radius)?;
            project(g, o, p)
        }),
    ));
    cases.push(case(
        "all_pairs_correlation",
        vec![uniform(&mut r, &s4, -1.0, 1.0), uniform(&mut r, &s4, -1.0, 1.0)],
        Box::new(move |g, v| {
            let o = g.all_pairs_correlation(v[0], v[1], u64::MAX)?;
            project(g, o, p)
        }),
    ));
    // lookup coordinates are scaled by 0.5 before sampling
    let lr = r.gen_range(0..2);
    let mut coords = sample_coords(&mut r, n, h, w, -1.0, w.max(h) as f64);
    coords.data_mut().iter_mut().for_each(|x| *x *= 2.0);
    cases.push(case(
        "corr_lookup",
        vec![uniform(&mut r, &[n, h * w, h, w], -1.0, 1.0), coords],
        Box::new(move |g, v| {
            let o = g.corr_lookup(v[0], v[1], lr, 0.5)?;
            project(g, o, p)
        }),
    ));
    let factor = r.gen_range(1..4);
    cases.push(case(
        "convex_upsample",
        vec![
            uniform(&mut r, &[n, 2, h, w], -2.0, 2.0),
            uniform(&mut r, &[n, 9 * factor * factor, h, w], -2.0, 2.0),
        ],
        Box::new(move |g, v| {
            let m = g.reshape(v[1], &[n, 9, factor * factor, h, w])?;
            let m = g.softmax(m, 1)?;
            let o = g.convex_upsample(v[0], m, factor)?;
            project(g, o, p)
        }),
    ));
    cases
}

/// conv -> leaky-relu -> bilinear_sample -> mean, with kinks kept at a distance.
pub fn composite_case(seed: u64) -> Case {
    let mut r = rng(seed);
    loop {
        let x = uniform(&mut r, &[1, 2, 5, 5], -1.0, 1.0);
        let k = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        let coords = sample_coords(&mut r, 1, 4, 4, -0.5, 4.5);
        // reject instances whose pre-activations sit close to the leaky-relu kink
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let kv = g.constant(k.clone());
        let pre = g.conv2d(xv, kv, None, 1, 1).unwrap();
        if g.value(pre).data().iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        return case(
            "composite",
            vec![x, k, coords],
            Box::new(|g, v| {
                let o = g.conv2d(v[0], v[1], None, 1, 1)?;
                let o = g.leaky_relu(o, 0.1);
                let o = g.bilinear_sample(o, v[2])?;
                Ok(g.mean(o))
            }),
        );
    }
}

/// End-to-end case for a tiny model: inputs are every parameter (name order)
/// followed by both frames; the output is a projection of the final flow and
/// every intermediate.
pub fn model_case(arch: flowlab::arch::Arch, seed: u64) -> Case {
    use flowlab::arch::{build_model, forward_graph, Bound, ForwardOptions, ModelConfig};
    let cfg = ModelConfig {
        raft_detach_flow: false,
        ..ModelConfig::tiny(arch)
    };
    let state = build_model(&cfg, seed).unwrap();
    let names: Vec<String> = state.params().keys().cloned().collect();
    let d = cfg.divisor();
    let (h, w) = (2 * d, 2 * d);
    let mut r = rng(seed ^ 0x5eed);
    // zero biases put every relu fed by the zero initial flow exactly on its
    // kink; random biases move the check to a generic point
    let mut inputs: Vec<Tensor<f64>> = state
        .params()
        .iter()
        .map(|(name, t)| {
            if name.ends_with(".bias") {
                away_from_zero(&mut r, t.shape())
            } else {
                t.cast::<f64>()
            }
        })
        .collect();
    inputs.push(uniform(&mut r, &[1, 3, h, w], 0.0, 1.0));
    inputs.push(uniform(&mut r, &[1, 3, h, w], 0.0, 1.0));
    let n = names.len();
    case(
        arch.name(),
        inputs,
        Box::new(move |g, v| {
            let p = Bound::new(names.clone(), v[..n].to_vec());
            let out = forward_graph(g, &cfg, &p, v[n], v[n + 1], &ForwardOptions::default())
                .map_err(|e| match e {
                    flowlab::arch::ArchError::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
            let mut total = project(g, out.final_flow, seed)?;
            for (i, &(f, _)) in out.intermediates.iter().enumerate() {
                let s = project(g, f, seed + 1 + i as u64)?;
                total = g.add(total, s)?;
            }
            Ok(total)
        }),
    )
}
