//! Coarse-to-fine warping networks: PWC-mini and its weight-shared IRR variant.

use super::init::{conv, leaky_gain, ParamSpec};
use super::net::{conv as apply_conv, conv_leaky, pixel_grid, zeros, Bound, GraphOutputs, LEAKY_SLOPE};
use super::{Arch, ArchError, ModelConfig};
use crate::tensor::{Graph, Scalar, Var};

/// Gain of the layer emitting the flow residual; keeps initial updates small.
const FLOW_HEAD_GAIN: f64 = 0.1;

fn corr_channels(c: &ModelConfig) -> usize {
    (2 * c.search_radius + 1).pow(2)
}

fn decoder_specs(specs: &mut Vec<ParamSpec>, prefix: &str, cin: usize, c: &ModelConfig) {
    let [a, b] = c.decoder_widths;
    let gain = leaky_gain(LEAKY_SLOPE);
    conv(specs, &format!("{prefix}.conv0"), cin, a, 3, gain);
    conv(specs, &format!("{prefix}.conv1"), a, b, 3, gain);
    conv(specs, &format!("{prefix}.conv2"), b, 2, 3, FLOW_HEAD_GAIN);
}

pub(crate) fn specs(c: &ModelConfig, specs: &mut Vec<ParamSpec>) {
    let gain = leaky_gain(LEAKY_SLOPE);
    for (l, &w) in c.widths.iter().enumerate() {
        let cin = if l == 0 { 3 } else { c.widths[l - 1] };
        conv(specs, &format!("enc.{l}.conv0"), cin, w, 3, gain);
        conv(specs, &format!("enc.{l}.conv1"), w, w, 3, gain);
    }
    let k = corr_channels(c);
    match c.arch {
        Arch::Irr => {
            for (l, &w) in c.widths.iter().enumerate() {
                conv(specs, &format!("adapt.{l}"), w, c.irr_adapter, 1, gain);
            }
            decoder_specs(specs, "dec", k + c.irr_adapter + 2, c);
        }
        _ => {
            for (l, &w) in c.widths.iter().enumerate() {
                decoder_specs(specs, &format!("dec.{l}"), k + w + 2, c);
            }
        }
    }
}

/// Feature pyramid, finest (1/2) level first.
fn encode<T: Scalar>(g: &mut Graph<T>, c: &ModelConfig, p: &Bound, frame: Var) -> Result<Vec<Var>, ArchError> {
    let x = g.scale(frame, 2.0);
    let mut x = g.add_scalar(x, -1.0);
    let mut out = Vec::with_capacity(c.levels);
    for l in 0..c.levels {
        x = g.avg_pool2(x)?;
        x = conv_leaky(g, p, &format!("enc.{l}.conv0"), x)?;
        x = conv_leaky(g, p, &format!("enc.{l}.conv1"), x)?;
        out.push(x);
    }
    Ok(out)
}

pub(crate) fn forward<T: Scalar>(
    g: &mut Graph<T>,
    c: &ModelConfig,
    p: &Bound,
    frame1: Var,
    frame2: Var,
) -> Result<GraphOutputs, ArchError> {
    let f1 = encode(g, c, p, frame1)?;
    let f2 = encode(g, c, p, frame2)?;
    let shared = c.arch == Arch::Irr;
    let mut flow: Option<Var> = None;
    let mut intermediates = Vec::with_capacity(c.levels);
    for l in (0..c.levels).rev() {
        let s = g.shape(f1[l]).to_vec();
        let (n, h, w) = (s[0], s[2], s[3]);
        let (up, target) = match flow {
            Some(coarse) => {
                let up = g.upsample2(coarse)?;
                let up = g.scale(up, 2.0);
                let grid = pixel_grid(g, n, h, w);
                let coords = g.add(grid, up)?;
                (up, g.bilinear_sample(f2[l], coords)?)
            }
            None => (zeros(g, &[n, 2, h, w]), f2[l]),
        };
        let corr = g.local_correlation(f1[l], target, c.search_radius)?;
        let corr = g.leaky_relu(corr, LEAKY_SLOPE);
        let (feat, prefix) = if shared {
            (conv_leaky(g, p, &format!("adapt.{l}"), f1[l])?, "dec".to_string())
        } else {
            (f1[l], format!("dec.{l}"))
        };
        let x = g.concat(&[corr, feat, up])?;
        let x = conv_leaky(g, p, &format!("{prefix}.conv0"), x)?;
        let x = conv_leaky(g, p, &format!("{prefix}.conv1"), x)?;
        let residual = apply_conv(g, p, &format!("{prefix}.conv2"), x)?;
        let estimate = g.add(up, residual)?;
        intermediates.push((estimate, 2usize << l));
        flow = Some(estimate);
    }
    let finest = flow.expect("at least two levels");
    let up = g.upsample2(finest)?;
    let final_flow = g.scale(up, 2.0);
    Ok(GraphOutputs {
        final_flow,
        intermediates,
    })
}
