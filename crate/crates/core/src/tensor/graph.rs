use super::alloc::MemClass;
use super::kernels::conv::{self, ConvGeom};
use super::kernels::corr::{self, CorrDims};
use super::kernels::resample::{self, ConvexDims};
use super::kernels::sample::{self, LookupDims, SampleDims};
use super::{Scalar, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Concat(Vec<Var>),
    SliceChannels {
        input: Var,
        start: usize,
    },
    Reshape(Var),
    AvgPool2(Var),
    Upsample2(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    SumChannels(Var),
    BilinearSample {
        source: Var,
        coords: Var,
    },
    LocalCorrelation {
        f1: Var,
        f2: Var,
        radius: usize,
    },
    AllPairsCorrelation {
        f1: Var,
        f2: Var,
    },
    CorrLookup {
        volume: Var,
        coords: Var,
        radius: usize,
        scale: f64,
    },
    ConvexUpsample {
        flow: Var,
        weights: Var,
        factor: usize,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
///
/// A graph has a single owner; independent graphs may live on different
/// threads.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `var`; zero-filled when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor<T> {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::with_class(shape, g.clone(), MemClass::General),
            None => Tensor::zeros(shape),
        }
    }

    /// Raw gradient buffer, if any contribution reached `var`.
    pub fn raw(&self, var: Var) -> Option<&[T]> {
        self.grads[var.0].as_deref()
    }
}

fn dims4(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(TensorError::Rank {
            op,
            expected: 4,
            shape: shape.to_vec(),
        }),
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn softmax_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op, inputs: &[Var]) -> Var {
        self.derived_class(shape, data, op, inputs, MemClass::General)
    }

    fn derived_class(
        &mut self,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op,
        inputs: &[Var],
        class: MemClass,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Tensor::with_class(shape, data, class), op, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(sa.to_vec())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect()
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Vec<T> {
        self.data(a).iter().map(|&x| f(x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let shape = self.same_shape("add", a, b)?;
        let data = self.zip_map(a, b, |x, y| x + y);
        Ok(self.derived(shape, data, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let shape = self.same_shape("sub", a, b)?;
        let data = self.zip_map(a, b, |x, y| x - y);
        Ok(self.derived(shape, data, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let shape = self.same_shape("mul", a, b)?;
        let data = self.zip_map(a, b, |x, y| x * y);
        Ok(self.derived(shape, data, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let data = self.map(a, |x| x * f);
        let shape = self.shape(a).to_vec();
        self.derived(shape, data, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let o = T::from_f64(offset);
        let data = self.map(a, |x| x + o);
        let shape = self.shape(a).to_vec();
        self.derived(shape, data, Op::Offset(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        let data = self.map(a, |x| if x > T::zero() { x } else { x * s });
        let shape = self.shape(a).to_vec();
        self.derived(shape, data, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.map(a, |x| x.max(T::zero()));
        let shape = self.shape(a).to_vec();
        self.derived(shape, data, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.map(a, |x| x.tanh());
        let shape = self.shape(a).to_vec();
        self.derived(shape, data, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.map(a, |x| T::one() / (T::one() + (-x).exp()));
        let shape = self.shape(a).to_vec();
        self.derived(shape, data, Op::Sigmoid(a), &[a])
    }

    /// Elementwise square root; the gradient at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Result<Var, TensorError> {
        if self.data(a).iter().any(|&x| x < T::zero()) {
            return Err(TensorError::InvalidArgument {
                op: "sqrt",
                reason: "negative input".into(),
            });
        }
        let data = self.map(a, |x| x.sqrt());
        let shape = self.shape(a).to_vec();
        Ok(self.derived(shape, data, Op::Sqrt(a), &[a]))
    }

    /// 2-d cross-correlation of `[N,C,H,W]` input with `[F,C,kh,kw]` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), stride, padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.f] {
                return Err(mismatch("conv2d bias", self.shape(b), &[geom.f]));
            }
        }
        let data = conv::forward(
            self.data(input),
            self.data(kernel),
            bias.map(|b| self.data(b)),
            &geom,
        );
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.derived(
            vec![geom.n, geom.f, geom.ho, geom.wo],
            data,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &inputs,
        ))
    }

    /// Fully connected layer on the flattened trailing dimensions:
    /// `[N, ...] x [M, K]^T + [M] -> [N, M]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let n = *xs.first().ok_or_else(|| mismatch("dense", &xs, &ws))?;
        let k = self.value(input).numel().checked_div(n).unwrap_or(0);
        let &[m, wk] = ws.as_slice() else {
            return Err(mismatch("dense", &xs, &ws));
        };
        if wk != k {
            return Err(mismatch("dense", &xs, &ws));
        }
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(mismatch("dense bias", self.shape(b), &[m]));
            }
        }
        let mut out = vec![T::zero(); n * m];
        T::gemm(n, k, m, self.data(input), false, self.data(weight), true, T::zero(), &mut out);
        if let Some(b) = bias {
            let bd = self.data(b);
            out.chunks_mut(m).for_each(|row| row.iter_mut().zip(bd).for_each(|(o, &bb)| *o += bb));
        }
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.derived(vec![n, m], out, Op::Dense { input, weight, bias }, &inputs))
    }

    /// Concatenation of `[N,Ci,H,W]` tensors along channels.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        let (n, _, h, w) = dims4(self.shape(first), "concat")?;
        let mut total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = dims4(self.shape(p), "concat")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(mismatch("concat", self.shape(first), self.shape(p)));
            }
            total += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for &p in parts {
                let c = self.shape(p)[1];
                data.extend_from_slice(&self.data(p)[b * c * hw..(b + 1) * c * hw]);
            }
        }
        Ok(self.derived(vec![n, total, h, w], data, Op::Concat(parts.to_vec()), parts))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (n, c, h, w) = dims4(self.shape(input), "slice_channels")?;
        if start + len > c || len == 0 {
            return Err(TensorError::InvalidArgument {
                op: "slice_channels",
                reason: format!("range {start}..{} of {c} channels", start + len),
            });
        }
        let hw = h * w;
        let src = self.data(input);
        let mut data = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            data.extend_from_slice(&src[(b * c + start) * hw..(b * c + start + len) * hw]);
        }
        Ok(self.derived(vec![n, len, h, w], data, Op::SliceChannels { input, start }, &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let from = self.shape(input);
        if shape.iter().product::<usize>() != from.iter().product::<usize>() {
            return Err(mismatch("reshape", from, shape));
        }
        let class = self.value(input).mem_class();
        let data = self.data(input).to_vec();
        Ok(self.derived_class(shape.to_vec(), data, Op::Reshape(input), &[input], class))
    }

    /// 2x2 average pooling; output inherits the input's accounting class.
    pub fn avg_pool2(&mut self, input: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = dims4(self.shape(input), "avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::InvalidArgument {
                op: "avg_pool2",
                reason: format!("odd spatial size {h}x{w}"),
            });
        }
        let class = self.value(input).mem_class();
        let data = resample::avg_pool2_forward(self.data(input), n * c, h, w);
        Ok(self.derived_class(vec![n, c, h / 2, w / 2], data, Op::AvgPool2(input), &[input], class))
    }

    /// Bilinear x2 upsampling (half-pixel centers, clamped edges).
    pub fn upsample2(&mut self, input: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = dims4(self.shape(input), "upsample2")?;
        let data = resample::upsample2_forward(self.data(input), n * c, h, w);
        Ok(self.derived(vec![n, c, 2 * h, 2 * w], data, Op::Upsample2(input), &[input]))
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidArgument {
                op: "softmax",
                reason: format!("axis {axis} out of range for {shape:?}"),
            });
        }
        let (outer, len, inner) = softmax_split(&shape, axis);
        let src = self.data(input);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| src[idx(k)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for k in 0..len {
                    let e = (src[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[idx(k)] = out[idx(k)] / z;
                }
            }
        }
        Ok(self.derived(shape, out, Op::Softmax { input, axis }, &[input]))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.data(input).iter().copied().sum::<T>();
        self.derived(Vec::new(), vec![s], Op::Sum(input), &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).numel().max(1);
        let s = self.data(input).iter().copied().sum::<T>() / T::from_f64(n as f64);
        self.derived(Vec::new(), vec![s], Op::Mean(input), &[input])
    }

    /// `[N,C,H,W] -> [N,1,H,W]`.
    pub fn sum_channels(&mut self, input: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = dims4(self.shape(input), "sum_channels")?;
        let hw = h * w;
        let src = self.data(input);
        let mut out = vec![T::zero(); n * hw];
        for b in 0..n {
            for ch in 0..c {
                let plane = &src[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                out[b * hw..(b + 1) * hw].iter_mut().zip(plane).for_each(|(o, &v)| *o += v);
            }
        }
        Ok(self.derived(vec![n, 1, h, w], out, Op::SumChannels(input), &[input]))
    }

    /// Samples `source` at absolute pixel positions `coords[:,0]` (x) and
    /// `coords[:,1]` (y); positions outside the image read zeros.
    pub fn bilinear_sample(&mut self, source: Var, coords: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = dims4(self.shape(source), "bilinear_sample")?;
        let (cn, cc, ho, wo) = dims4(self.shape(coords), "bilinear_sample")?;
        if cn != n || cc != 2 {
            return Err(mismatch("bilinear_sample", self.shape(source), self.shape(coords)));
        }
        let dims = SampleDims { n, c, h, w, ho, wo };
        let data = sample::bilinear_forward(self.data(source), self.data(coords), &dims);
        Ok(self.derived(
            vec![n, c, ho, wo],
            data,
            Op::BilinearSample { source, coords },
            &[source, coords],
        ))
    }

    /// Local cost volume with `(2r+1)^2` channels, normalized by the feature width.
    pub fn local_correlation(&mut self, f1: Var, f2: Var, radius: usize) -> Result<Var, TensorError> {
        let shape = self.same_shape("local_correlation", f1, f2)?;
        let (n, d, h, w) = dims4(&shape, "local_correlation")?;
        let dims = CorrDims { n, d, h, w };
        let data = corr::local_forward(self.data(f1), self.data(f2), radius, &dims);
        let k = (2 * radius + 1) * (2 * radius + 1);
        Ok(self.derived_class(
            vec![n, k, h, w],
            data,
            Op::LocalCorrelation { f1, f2, radius },
            &[f1, f2],
            MemClass::CostVolume,
        ))
    }

    /// Dense `[N,H,W,H,W]` cost volume, normalized by `sqrt(D)`.
    ///
    /// Refuses to allocate more than `budget` entries.
    pub fn all_pairs_correlation(&mut self, f1: Var, f2: Var, budget: u64) -> Result<Var, TensorError> {
        let shape = self.same_shape("all_pairs_correlation", f1, f2)?;
        let (n, d, h, w) = dims4(&shape, "all_pairs_correlation")?;
        let requested = all_pairs_entries(n, h, w).ok_or(TensorError::BudgetExceeded {
            requested: u64::MAX,
            budget,
        })?;
        if requested > budget {
            return Err(TensorError::BudgetExceeded { requested, budget });
        }
        let dims = CorrDims { n, d, h, w };
        let data = corr::all_pairs_forward(self.data(f1), self.data(f2), &dims);
        Ok(self.derived_class(
            vec![n, h, w, h, w],
            data,
            Op::AllPairsCorrelation { f1, f2 },
            &[f1, f2],
            MemClass::CostVolume,
        ))
    }

    /// Bilinear lookup of a `(2r+1)^2` window in a correlation level.
    ///
    /// `volume` is `[N, H*W, VH, VW]` (one plane per query pixel), `coords`
    /// is `[N, 2, H, W]` in finest-level pixels and is multiplied by `scale`
    /// before sampling.
    pub fn corr_lookup(
        &mut self,
        volume: Var,
        coords: Var,
        radius: usize,
        scale: f64,
    ) -> Result<Var, TensorError> {
        let (n, p, vh, vw) = dims4(self.shape(volume), "corr_lookup")?;
        let (cn, cc, h, w) = dims4(self.shape(coords), "corr_lookup")?;
        if cn != n || cc != 2 || p != h * w {
            return Err(mismatch("corr_lookup", self.shape(volume), self.shape(coords)));
        }
        let dims = LookupDims {
            n,
            h,
            w,
            vh,
            vw,
            radius,
        };
        let data = sample::lookup_forward(self.data(volume), self.data(coords), T::from_f64(scale), &dims);
        Ok(self.derived(
            vec![n, dims.window(), h, w],
            data,
            Op::CorrLookup {
                volume,
                coords,
                radius,
                scale,
            },
            &[volume, coords],
        ))
    }

    /// Convex combination of the 3x3 coarse neighborhood for each of the
    /// `factor x factor` fine pixels. `weights` is `[N, 9, f*f, H, W]` and
    /// must already be normalized over axis 1; flow vectors are multiplied by
    /// `factor`.
    pub fn convex_upsample(&mut self, flow: Var, weights: Var, factor: usize) -> Result<Var, TensorError> {
        let (n, c, h, w) = dims4(self.shape(flow), "convex_upsample")?;
        let expect = [n, 9, factor * factor, h, w];
        if c != 2 || self.shape(weights) != expect {
            return Err(mismatch("convex_upsample", self.shape(flow), self.shape(weights)));
        }
        let dims = ConvexDims { n, h, w, factor };
        let data = resample::convex_forward(self.data(flow), self.data(weights), &dims);
        Ok(self.derived(
            vec![n, 2, h * factor, w * factor],
            data,
            Op::ConvexUpsample {
                flow,
                weights,
                factor,
            },
            &[flow, weights],
        ))
    }

    /// Reverse-mode pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let loss_shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        grads[loss.0] = Some(vec![T::one()]);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| add_into(d, g));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |d| {
                    d.iter_mut().zip(g).zip(bv).for_each(|((x, &gg), &o)| *x += gg * o)
                });
                self.accumulate(grads, *b, |d| {
                    d.iter_mut().zip(g).zip(av).for_each(|((x, &gg), &o)| *x += gg * o)
                });
            }
            Op::Scale(a, f) => {
                let f = T::from_f64(*f);
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(x, &gg)| *x += gg * f));
            }
            Op::Offset(a) | Op::Reshape(a) => self.accumulate(grads, *a, |d| add_into(d, g)),
            Op::LeakyRelu(a, s) => {
                let s = T::from_f64(*s);
                let av = self.data(*a);
                self.accumulate(grads, *a, |d| {
                    for ((x, &gg), &v) in d.iter_mut().zip(g).zip(av) {
                        *x += if v > T::zero() { gg } else { gg * s };
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.data(*a);
                self.accumulate(grads, *a, |d| {
                    for ((x, &gg), &v) in d.iter_mut().zip(g).zip(av) {
                        if v > T::zero() {
                            *x += gg;
                        }
                    }
                });
            }
            Op::Tanh(a) => self.accumulate(grads, *a, |d| {
                for ((x, &gg), &y) in d.iter_mut().zip(g).zip(out) {
                    *x += gg * (T::one() - y * y);
                }
            }),
            Op::Sigmoid(a) => self.accumulate(grads, *a, |d| {
                for ((x, &gg), &y) in d.iter_mut().zip(g).zip(out) {
                    *x += gg * y * (T::one() - y);
                }
            }),
            Op::Sqrt(a) => self.accumulate(grads, *a, |d| {
                let half = T::from_f64(0.5);
                for ((x, &gg), &y) in d.iter_mut().zip(g).zip(out) {
                    if y > T::zero() {
                        *x += gg * half / y;
                    }
                }
            }),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let (input, kernel) = (*input, *kernel);
                let mut dx = self.take_slot(grads, input);
                let mut dk = self.take_slot(grads, kernel);
                let mut db = bias.and_then(|b| self.take_slot(grads, b));
                conv::backward(
                    self.data(input),
                    self.data(kernel),
                    g,
                    geom,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                restore(grads, input, dx);
                restore(grads, kernel, dk);
                if let Some(b) = bias {
                    restore(grads, *b, db);
                }
            }
            Op::Dense { input, weight, bias } => {
                let (n, m) = (self.shape(Var(id))[0], self.shape(Var(id))[1]);
                let k = self.value(*input).numel() / n.max(1);
                let wv = self.data(*weight);
                let xv = self.data(*input);
                self.accumulate(grads, *input, |d| T::gemm(n, m, k, g, false, wv, false, T::one(), d));
                self.accumulate(grads, *weight, |d| T::gemm(m, n, k, g, true, xv, false, T::one(), d));
                if let Some(b) = bias {
                    self.accumulate(grads, *b, |d| {
                        g.chunks(m).for_each(|row| add_into(d, row));
                    });
                }
            }
            Op::Concat(parts) => {
                let (n, total, h, w) = dims4(node.value.shape(), "concat").expect("concat output is 4-d");
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    self.accumulate(grads, p, |d| {
                        for b in 0..n {
                            let src = &g[(b * total + offset) * hw..(b * total + offset + c) * hw];
                            add_into(&mut d[b * c * hw..(b + 1) * c * hw], src);
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceChannels { input, start } => {
                let (n, c, h, w) = dims4(self.shape(*input), "slice").expect("4-d");
                let len = node.value.shape()[1];
                let hw = h * w;
                self.accumulate(grads, *input, |d| {
                    for b in 0..n {
                        let dst = &mut d[(b * c + start) * hw..(b * c + start + len) * hw];
                        add_into(dst, &g[b * len * hw..(b + 1) * len * hw]);
                    }
                });
            }
            Op::AvgPool2(a) => {
                let (n, c, h, w) = dims4(self.shape(*a), "avg_pool2").expect("4-d");
                self.accumulate(grads, *a, |d| resample::avg_pool2_backward(g, n * c, h, w, d));
            }
            Op::Upsample2(a) => {
                let (n, c, h, w) = dims4(self.shape(*a), "upsample2").expect("4-d");
                self.accumulate(grads, *a, |d| resample::upsample2_backward(g, n * c, h, w, d));
            }
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = softmax_split(node.value.shape(), *axis);
                self.accumulate(grads, *input, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + i;
                            let dot = (0..len).map(|k| g[idx(k)] * out[idx(k)]).sum::<T>();
                            for k in 0..len {
                                d[idx(k)] += out[idx(k)] * (g[idx(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g[0];
                self.accumulate(grads, *a, |d| d.iter_mut().for_each(|x| *x += gv));
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel().max(1);
                let gv = g[0] / T::from_f64(n as f64);
                self.accumulate(grads, *a, |d| d.iter_mut().for_each(|x| *x += gv));
            }
            Op::SumChannels(a) => {
                let (n, c, h, w) = dims4(self.shape(*a), "sum_channels").expect("4-d");
                let hw = h * w;
                self.accumulate(grads, *a, |d| {
                    for b in 0..n {
                        for ch in 0..c {
                            add_into(&mut d[(b * c + ch) * hw..(b * c + ch + 1) * hw], &g[b * hw..(b + 1) * hw]);
                        }
                    }
                });
            }
            Op::BilinearSample { source, coords } => {
                let (n, c, h, w) = dims4(self.shape(*source), "bilinear_sample").expect("4-d");
                let (_, _, ho, wo) = dims4(self.shape(*coords), "bilinear_sample").expect("4-d");
                let dims = SampleDims { n, c, h, w, ho, wo };
                let mut ds = self.take_slot(grads, *source);
                let mut dc = self.take_slot(grads, *coords);
                sample::bilinear_backward(
                    self.data(*source),
                    self.data(*coords),
                    g,
                    &dims,
                    ds.as_deref_mut(),
                    dc.as_deref_mut(),
                );
                restore(grads, *source, ds);
                restore(grads, *coords, dc);
            }
            Op::LocalCorrelation { f1, f2, radius } => {
                let (n, d, h, w) = dims4(self.shape(*f1), "local_correlation").expect("4-d");
                let dims = CorrDims { n, d, h, w };
                let mut d1 = self.take_slot(grads, *f1);
                let mut d2 = if f1 == f2 { None } else { self.take_slot(grads, *f2) };
                if f1 == f2 {
                    // self-correlation: both operand gradients land in one buffer
                    let mut tmp = d1.as_ref().map(|v| vec![T::zero(); v.len()]);
                    corr::local_backward(
                        self.data(*f1),
                        self.data(*f2),
                        *radius,
                        g,
                        &dims,
                        d1.as_deref_mut(),
                        tmp.as_deref_mut(),
                    );
                    if let (Some(a), Some(b)) = (d1.as_mut(), tmp) {
                        add_into(a, &b);
                    }
                } else {
                    corr::local_backward(
                        self.data(*f1),
                        self.data(*f2),
                        *radius,
                        g,
                        &dims,
                        d1.as_deref_mut(),
                        d2.as_deref_mut(),
                    );
                }
                restore(grads, *f1, d1);
                if f1 != f2 {
                    restore(grads, *f2, d2.take());
                }
            }
            Op::AllPairsCorrelation { f1, f2 } => {
                let (n, d, h, w) = dims4(self.shape(*f1), "all_pairs").expect("4-d");
                let dims = CorrDims { n, d, h, w };
                let mut d1 = self.take_slot(grads, *f1);
                let mut tmp = if f1 == f2 {
                    d1.as_ref().map(|v| vec![T::zero(); v.len()])
                } else {
                    self.take_slot(grads, *f2)
                };
                corr::all_pairs_backward(
                    self.data(*f1),
                    self.data(*f2),
                    g,
                    &dims,
                    d1.as_deref_mut(),
                    tmp.as_deref_mut(),
                );
                if f1 == f2 {
                    if let (Some(a), Some(b)) = (d1.as_mut(), tmp) {
                        add_into(a, &b);
                    }
                    restore(grads, *f1, d1);
                } else {
                    restore(grads, *f1, d1);
                    restore(grads, *f2, tmp);
                }
            }
            Op::CorrLookup {
                volume,
                coords,
                radius,
                scale,
            } => {
                let (n, _, vh, vw) = dims4(self.shape(*volume), "corr_lookup").expect("4-d");
                let (_, _, h, w) = dims4(self.shape(*coords), "corr_lookup").expect("4-d");
                let dims = LookupDims {
                    n,
                    h,
                    w,
                    vh,
                    vw,
                    radius: *radius,
                };
                let mut dv = self.take_slot(grads, *volume);
                let mut dc = self.take_slot(grads, *coords);
                sample::lookup_backward(
                    self.data(*volume),
                    self.data(*coords),
                    T::from_f64(*scale),
                    g,
                    &dims,
                    dv.as_deref_mut(),
                    dc.as_deref_mut(),
                );
                restore(grads, *volume, dv);
                restore(grads, *coords, dc);
            }
            Op::ConvexUpsample {
                flow,
                weights,
                factor,
            } => {
                let (n, _, h, w) = dims4(self.shape(*flow), "convex_upsample").expect("4-d");
                let dims = ConvexDims {
                    n,
                    h,
                    w,
                    factor: *factor,
                };
                let mut df = self.take_slot(grads, *flow);
                let mut dw = self.take_slot(grads, *weights);
                resample::convex_backward(
                    self.data(*flow),
                    self.data(*weights),
                    g,
                    &dims,
                    df.as_deref_mut(),
                    dw.as_deref_mut(),
                );
                restore(grads, *flow, df);
                restore(grads, *weights, dw);
            }
        }
    }

    /// Removes (or creates zeroed) the gradient buffer of `v` when it needs one.
    fn take_slot(&self, grads: &mut [Option<Vec<T>>], v: Var) -> Option<Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(
            grads[v.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); self.nodes[v.0].value.numel()]),
        )
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if let Some(mut slot) = self.take_slot(grads, v) {
            f(&mut slot);
            grads[v.0] = Some(slot);
        }
    }
}

fn restore<T>(grads: &mut [Option<Vec<T>>], v: Var, slot: Option<Vec<T>>) {
    if slot.is_some() {
        grads[v.0] = slot;
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

/// `n * (h*w)^2`, or `None` on overflow.
pub(crate) fn all_pairs_entries(n: usize, h: usize, w: usize) -> Option<u64> {
    let hw = (h as u64).checked_mul(w as u64)?;
    hw.checked_mul(hw)?.checked_mul(n as u64)
}
