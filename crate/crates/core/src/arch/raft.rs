//! RAFT-mini: all-pairs correlation pyramid, convolutional GRU refinement and
//! convex upsampling.

use super::init::{conv, ParamSpec};
use super::net::{conv as apply_conv, conv_relu, pixel_grid, zeros, Bound, GraphOutputs};
use super::{ArchError, ForwardOptions, ModelConfig};
use crate::tensor::{Graph, Scalar, Var};

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
const FLOW_HEAD_GAIN: f64 = 0.1;
/// Scale applied to the upsampling mask logits.
const MASK_SCALE: f64 = 0.25;

fn stages(c: &ModelConfig) -> usize {
    c.upsample_factor.trailing_zeros() as usize
}

/// Channel widths of an encoder ending at `out`, one per resolution.
fn encoder_widths(c: &ModelConfig, out: usize) -> Vec<usize> {
    let s = stages(c);
    (0..=s).map(|i| (out * (i + 1)).div_ceil(s + 1)).collect()
}

fn encoder_specs(specs: &mut Vec<ParamSpec>, prefix: &str, c: &ModelConfig, out: usize) {
    let widths = encoder_widths(c, out);
    conv(specs, &format!("{prefix}.stem"), 3, widths[0], 3, RELU_GAIN);
    for s in 1..widths.len() {
        conv(specs, &format!("{prefix}.stage{s}"), widths[s - 1], widths[s], 3, RELU_GAIN);
    }
    conv(specs, &format!("{prefix}.out"), widths[widths.len() - 1], out, 1, 1.0);
}

fn corr_channels(c: &ModelConfig) -> usize {
    c.raft_corr_levels * (2 * c.raft_lookup_radius + 1).pow(2)
}

pub(crate) fn specs(c: &ModelConfig, specs: &mut Vec<ParamSpec>) {
    let (hd, cc, m) = (c.raft_hidden, c.raft_context, c.raft_motion);
    encoder_specs(specs, "fnet", c, c.raft_feature);
    encoder_specs(specs, "cnet", c, hd + cc);
    let half = m.div_ceil(2);
    conv(specs, "menc.corr", corr_channels(c), m, 1, RELU_GAIN);
    conv(specs, "menc.flow", 2, half, 3, RELU_GAIN);
    conv(specs, "menc.out", m + half, m - 2, 3, RELU_GAIN);
    let gru_in = hd + cc + m;
    for gate in ["z", "r", "q"] {
        conv(specs, &format!("gru.{gate}"), gru_in, hd, 3, 1.0);
    }
    conv(specs, "head.conv0", hd, 2 * hd, 3, RELU_GAIN);
    conv(specs, "head.conv1", 2 * hd, 2, 3, FLOW_HEAD_GAIN);
    let f = c.upsample_factor;
    conv(specs, "mask.conv0", hd, 2 * hd, 3, RELU_GAIN);
    conv(specs, "mask.conv1", 2 * hd, 9 * f * f, 1, 1.0);
}

fn encode<T: Scalar>(g: &mut Graph<T>, c: &ModelConfig, p: &Bound, prefix: &str, frame: Var) -> Result<Var, ArchError> {
    let x = g.scale(frame, 2.0);
    let x = g.add_scalar(x, -1.0);
    let mut x = conv_relu(g, p, &format!("{prefix}.stem"), x)?;
    for s in 1..=stages(c) {
        x = g.avg_pool2(x)?;
        x = conv_relu(g, p, &format!("{prefix}.stage{s}"), x)?;
    }
    apply_conv(g, p, &format!("{prefix}.out"), x)
}

pub(crate) fn forward<T: Scalar>(
    g: &mut Graph<T>,
    c: &ModelConfig,
    p: &Bound,
    frame1: Var,
    frame2: Var,
    opts: &ForwardOptions,
) -> Result<GraphOutputs, ArchError> {
    let fmap1 = encode(g, c, p, "fnet", frame1)?;
    let fmap2 = encode(g, c, p, "fnet", frame2)?;
    let s = g.shape(fmap1).to_vec();
    let (n, h, w) = (s[0], s[2], s[3]);

    let volume = g.all_pairs_correlation(fmap1, fmap2, opts.allpairs_budget)?;
    let mut pyramid = vec![g.reshape(volume, &[n, h * w, h, w])?];
    for _ in 1..c.raft_corr_levels {
        let next = g.avg_pool2(pyramid[pyramid.len() - 1])?;
        pyramid.push(next);
    }

    let ctx = encode(g, c, p, "cnet", frame1)?;
    let hidden = g.slice_channels(ctx, 0, c.raft_hidden)?;
    let mut hidden = g.tanh(hidden);
    let context = g.slice_channels(ctx, c.raft_hidden, c.raft_context)?;
    let context = g.relu(context);

    let grid = pixel_grid(g, n, h, w);
    let mut flow = zeros(g, &[n, 2, h, w]);
    let f = c.upsample_factor;
    let mut intermediates = Vec::with_capacity(c.raft_iterations);
    for _ in 0..c.raft_iterations {
        let prior = if c.raft_detach_flow { g.detach(flow) } else { flow };
        let coords = g.add(grid, prior)?;
        let mut taps = Vec::with_capacity(pyramid.len());
        for (i, &level) in pyramid.iter().enumerate() {
            taps.push(g.corr_lookup(level, coords, c.raft_lookup_radius, 0.5f64.powi(i as i32))?);
        }
        let corr = g.concat(&taps)?;

        let cf = conv_relu(g, p, "menc.corr", corr)?;
        let ff = conv_relu(g, p, "menc.flow", prior)?;
        let both = g.concat(&[cf, ff])?;
        let m = conv_relu(g, p, "menc.out", both)?;
        let x = g.concat(&[context, m, prior])?;

        let hx = g.concat(&[hidden, x])?;
        let z = apply_conv(g, p, "gru.z", hx)?;
        let z = g.sigmoid(z);
        let r = apply_conv(g, p, "gru.r", hx)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, hidden)?;
        let rhx = g.concat(&[rh, x])?;
        let q = apply_conv(g, p, "gru.q", rhx)?;
        let q = g.tanh(q);
        let step = g.sub(q, hidden)?;
        let step = g.mul(z, step)?;
        hidden = g.add(hidden, step)?;

        let d = conv_relu(g, p, "head.conv0", hidden)?;
        let delta = apply_conv(g, p, "head.conv1", d)?;
        flow = g.add(prior, delta)?;

        let mk = conv_relu(g, p, "mask.conv0", hidden)?;
        let mk = apply_conv(g, p, "mask.conv1", mk)?;
        let mk = g.scale(mk, MASK_SCALE);
        let mk = g.reshape(mk, &[n, 9, f * f, h, w])?;
        let weights = g.softmax(mk, 1)?;
        intermediates.push((g.convex_upsample(flow, weights, f)?, 1));
    }
    let final_flow = intermediates[intermediates.len() - 1].0;
    Ok(GraphOutputs {
        final_flow,
        intermediates,
    })
}
