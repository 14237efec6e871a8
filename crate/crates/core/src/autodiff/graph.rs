//! Operation tape over tensors.
//!
//! A [`Graph`] records every differentiable operation executed through it
//! (a dynamic tape). [`Graph::backward`] replays the record in reverse,
//! accumulating gradients additively into the `grad` slot of every tensor
//! that requires them. One backward pass consumes the graph.

use std::cell::{Cell, RefCell};

use super::conv::{conv3d_backward, conv3d_forward, out_extent, ConvDims};
use super::norm::{
    backward_train, channel_stats, BatchNormMode, BatchNormSaved, BatchNormState,
};
use super::resample::{trilinear_backward, trilinear_forward, voxel_shuffle_map};
use super::tensor::Tensor;
use crate::error::{Error, Result};

enum Op {
    Conv3d {
        dims: ConvDims,
    },
    VoxelShuffle {
        r: usize,
    },
    BatchNormTrain {
        saved: BatchNormSaved,
        b: usize,
        c: usize,
        spatial: usize,
    },
    BatchNormEval {
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        b: usize,
        c: usize,
        spatial: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Relu,
    Trilinear {
        bc: usize,
        from: [usize; 3],
        to: [usize; 3],
    },
    Add {
        plan: BroadcastPlan,
    },
    Sub {
        plan: BroadcastPlan,
    },
    Mul {
        plan: BroadcastPlan,
    },
    ScalarMul {
        factor: f64,
    },
    ScalarAdd,
    Exp,
    Log1p,
    Square,
    Powf {
        exponent: f64,
    },
    Clamp {
        lo: f64,
        hi: f64,
    },
    Sum,
    Mean,
    ChannelAffine {
        scale: Vec<f64>,
        b: usize,
        c: usize,
        spatial: usize,
    },
    ConcatChannels {
        channels: Vec<usize>,
        b: usize,
        spatial: usize,
    },
    ConcatBatch {
        batches: Vec<usize>,
        stride: usize,
    },
    SliceBatch {
        index: usize,
        stride: usize,
    },
    PadSpatial {
        from: [usize; 3],
        to: [usize; 3],
        bc: usize,
    },
    CropSpatial {
        from: [usize; 3],
        to: [usize; 3],
        bc: usize,
    },
    GatherCells {
        batch: usize,
        channel: usize,
        cells: Vec<usize>,
        chan_stride: usize,
        batch_stride: usize,
    },
    Gather1d {
        idxs: Vec<usize>,
    },
}

#[derive(Clone, Copy, PartialEq)]
enum BroadcastPlan {
    Same,
    /// rhs has `tail` fewer varying elements: rhs index = lhs index / tail.
    RhsRepeat {
        tail: usize,
    },
    LhsRepeat {
        tail: usize,
    },
}

struct Node {
    inputs: Vec<Tensor>,
    output: Tensor,
    op: Op,
}

/// Dynamic tape. Confined to one thread together with its tensors;
/// independent graphs may run on different threads.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite(t: &Tensor, op: &str) {
    #[cfg(debug_assertions)]
    {
        debug_assert!(
            t.is_finite(),
            "non-finite value produced by {op} (debug check)"
        );
    }
    #[cfg(not(debug_assertions))]
    {
        let _ = (t, op);
    }
}

impl Graph {
    /// Recording graph for training / gradient evaluation.
    pub fn new() -> Graph {
        Graph {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            recording: true,
        }
    }

    /// Forward-only graph: operations execute but nothing is recorded,
    /// so `backward` is unavailable. Use for inference rollouts.
    pub fn inference() -> Graph {
        Graph {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            recording: false,
        }
    }

    pub fn num_recorded(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn push(&self, inputs: Vec<Tensor>, output: &Tensor, op: Op) {
        let any_grad = inputs.iter().any(|t| t.requires_grad());
        if any_grad {
            output.set_requires_grad(true);
            if self.recording {
                self.nodes.borrow_mut().push(Node {
                    inputs,
                    output: output.clone(),
                    op,
                });
            }
        }
    }

    /// Reverse pass from a scalar loss. Gradients accumulate additively
    /// into existing `grad` slots. Consumes the graph: a second call is
    /// an error, as is a non-scalar loss.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::Graph(
                "backward called twice on a consumed graph".into(),
            ));
        }
        if loss.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !self.recording {
            return Err(Error::Graph(
                "backward on an inference graph (nothing recorded)".into(),
            ));
        }
        self.consumed.set(true);
        loss.accumulate_grad(&[1.0]);
        let mut nodes = self.nodes.borrow_mut();
        for node in nodes.iter().rev() {
            let dout = match node.output.grad() {
                Some(g) => g,
                None => continue, // not on any path to the loss
            };
            backward_node(node, &dout);
        }
        nodes.clear();
        Ok(())
    }

    // ---- convolution ----

    pub fn conv3d(
        &self,
        input: &Tensor,
        kernel: &Tensor,
        bias: &Tensor,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Tensor> {
        let ishape = input.shape();
        let kshape = kernel.shape();
        if ishape.len() != 5 {
            return Err(Error::Shape(format!(
                "conv3d input must be 5-D [B,C,D,H,W], got {ishape:?}"
            )));
        }
        if kshape.len() != 5 {
            return Err(Error::Shape(format!(
                "conv3d kernel must be 5-D [Cout,Cin,kd,kh,kw], got {kshape:?}"
            )));
        }
        if kshape[1] != ishape[1] {
            return Err(Error::Shape(format!(
                "conv3d channel axis: kernel expects Cin={}, input has {}",
                kshape[1], ishape[1]
            )));
        }
        if bias.shape() != vec![kshape[0]] {
            return Err(Error::Shape(format!(
                "conv3d bias axis: expected [{}], got {:?}",
                kshape[0],
                bias.shape()
            )));
        }
        let axis_names = ["depth", "height", "width"];
        for a in 0..3 {
            let k = kshape[2 + a];
            if k % 2 == 0 {
                return Err(Error::Shape(format!(
                    "conv3d {} axis: kernel extent {} must be odd",
                    axis_names[a], k
                )));
            }
            if stride[a] < 1 {
                return Err(Error::Shape(format!(
                    "conv3d {} axis: stride must be >= 1",
                    axis_names[a]
                )));
            }
            if ishape[2 + a] + 2 * pad[a] < k {
                return Err(Error::Shape(format!(
                    "conv3d {} axis: padded extent {} smaller than kernel {}",
                    axis_names[a],
                    ishape[2 + a] + 2 * pad[a],
                    k
                )));
            }
        }
        let dims = ConvDims {
            b: ishape[0],
            cin: ishape[1],
            cout: kshape[0],
            id: [ishape[2], ishape[3], ishape[4]],
            kd: [kshape[2], kshape[3], kshape[4]],
            od: [
                out_extent(ishape[2], kshape[2], stride[0], pad[0]),
                out_extent(ishape[3], kshape[3], stride[1], pad[1]),
                out_extent(ishape[4], kshape[4], stride[2], pad[2]),
            ],
            stride,
            pad,
        };
        let out_shape = dims.out_shape();
        let mut out = vec![0.0; out_shape.iter().product()];
        input.with_data(|x| {
            kernel.with_data(|k| bias.with_data(|bv| conv3d_forward(x, k, bv, &dims, &mut out)))
        });
        let output = Tensor::from_vec(&out_shape, out)?;
        check_finite(&output, "conv3d");
        self.push(
            vec![input.clone(), kernel.clone(), bias.clone()],
            &output,
            Op::Conv3d { dims },
        );
        Ok(output)
    }

    // ---- voxel shuffle ----

    /// `[B, C*r^3, D, H, W] -> [B, C, rD, rH, rW]` channel-to-space map.
    pub fn voxel_shuffle(&self, input: &Tensor, r: usize) -> Result<Tensor> {
        let shape = input.shape();
        if shape.len() != 5 {
            return Err(Error::Shape(format!(
                "voxel_shuffle input must be 5-D, got {shape:?}"
            )));
        }
        let r3 = r * r * r;
        if r == 0 || shape[1] % r3 != 0 {
            return Err(Error::Shape(format!(
                "voxel_shuffle channel axis: {} channels not divisible by r^3={}",
                shape[1], r3
            )));
        }
        let c_out = shape[1] / r3;
        let out_shape = vec![shape[0], c_out, shape[2] * r, shape[3] * r, shape[4] * r];
        let mut out = vec![0.0; out_shape.iter().product()];
        input.with_data(|x| {
            voxel_shuffle_map(x, shape[0], c_out, r, shape[2], shape[3], shape[4], &mut out, false)
        });
        let output = Tensor::from_vec(&out_shape, out)?;
        self.push(vec![input.clone()], &output, Op::VoxelShuffle { r });
        Ok(output)
    }

    // ---- batch norm ----

    /// Batch normalization over `[B, C, ...]`. Train mode uses batch
    /// statistics and updates `state` by exponential moving average;
    /// eval mode uses the stored running statistics and leaves `state`
    /// untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &self,
        input: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        state: &mut BatchNormState,
        mode: BatchNormMode,
        eps: f64,
        momentum: f64,
    ) -> Result<Tensor> {
        let shape = input.shape();
        if shape.len() < 2 {
            return Err(Error::Shape(format!(
                "batch_norm input must be [B,C,...], got {shape:?}"
            )));
        }
        let (b, c) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product::<usize>().max(1);
        if gamma.numel() != c || beta.numel() != c {
            return Err(Error::Shape(format!(
                "batch_norm channel axis: gamma/beta must have {c} elements"
            )));
        }
        if state.running_mean.len() != c {
            return Err(Error::Shape(format!(
                "batch_norm state has {} channels, input has {c}",
                state.running_mean.len()
            )));
        }
        let gv = gamma.data();
        let bv = beta.data();
        let x = input.data();
        let mut out = vec![0.0; x.len()];

        match mode {
            BatchNormMode::Train => {
                if b * spatial < 2 {
                    return Err(Error::Validation(
                        "batch_norm train mode needs at least 2 values per channel".into(),
                    ));
                }
                let (mean, var) = channel_stats(&x, b, c, spatial);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut xhat = vec![0.0; x.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * spatial;
                        let m = mean[ci];
                        let is = inv_std[ci];
                        for i in base..base + spatial {
                            let h = (x[i] - m) * is;
                            xhat[i] = h;
                            out[i] = gv[ci] * h + bv[ci];
                        }
                    }
                }
                if state.initialized {
                    for ci in 0..c {
                        state.running_mean[ci] =
                            (1.0 - momentum) * state.running_mean[ci] + momentum * mean[ci];
                        state.running_var[ci] =
                            (1.0 - momentum) * state.running_var[ci] + momentum * var[ci];
                    }
                } else {
                    state.running_mean.copy_from_slice(&mean);
                    state.running_var.copy_from_slice(&var);
                    state.initialized = true;
                }
                let output = Tensor::from_vec(&shape, out)?;
                check_finite(&output, "batch_norm");
                let saved = BatchNormSaved {
                    xhat,
                    inv_std,
                    count: b * spatial,
                };
                self.push(
                    vec![input.clone(), gamma.clone(), beta.clone()],
                    &output,
                    Op::BatchNormTrain {
                        saved,
                        b,
                        c,
                        spatial,
                    },
                );
                Ok(output)
            }
            BatchNormMode::Eval => {
                if !state.initialized {
                    return Err(Error::Validation(
                        "batch_norm eval mode before any train-mode call (uninitialized running stats)"
                            .into(),
                    ));
                }
                let inv_std: Vec<f64> = state
                    .running_var
                    .iter()
                    .map(|v| 1.0 / (v + eps).sqrt())
                    .collect();
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * spatial;
                        let m = state.running_mean[ci];
                        let is = inv_std[ci];
                        for i in base..base + spatial {
                            out[i] = gv[ci] * (x[i] - m) * is + bv[ci];
                        }
                    }
                }
                let output = Tensor::from_vec(&shape, out)?;
                check_finite(&output, "batch_norm");
                self.push(
                    vec![input.clone(), gamma.clone(), beta.clone()],
                    &output,
                    Op::BatchNormEval {
                        inv_std,
                        mean: state.running_mean.clone(),
                        b,
                        c,
                        spatial,
                    },
                );
                Ok(output)
            }
        }
    }

    // ---- elementwise nonlinearities ----

    pub fn leaky_relu(&self, input: &Tensor, slope: f64) -> Result<Tensor> {
        if !(0.0 < slope && slope < 1.0) {
            return Err(Error::Validation(format!(
                "leaky_relu slope must be in (0,1), got {slope}"
            )));
        }
        let out: Vec<f64> = input
            .with_data(|x| x.iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect());
        let output = Tensor::from_vec(&input.shape(), out)?;
        self.push(vec![input.clone()], &output, Op::LeakyRelu { slope });
        Ok(output)
    }

    /// max(x, 0) with zero gradient in the clamped region.
    pub fn relu(&self, input: &Tensor) -> Result<Tensor> {
        let out: Vec<f64> = input.with_data(|x| x.iter().map(|&v| v.max(0.0)).collect());
        let output = Tensor::from_vec(&input.shape(), out)?;
        self.push(vec![input.clone()], &output, Op::Relu);
        Ok(output)
    }

    // ---- trilinear upsampling ----

    /// Corner-aligned linear upsampling by integer factors per axis.
    pub fn trilinear_upsample(&self, input: &Tensor, factor: [usize; 3]) -> Result<Tensor> {
        let shape = input.shape();
        if shape.len() != 5 {
            return Err(Error::Shape(format!(
                "trilinear_upsample input must be 5-D, got {shape:?}"
            )));
        }
        if factor.iter().any(|&f| f < 1) {
            return Err(Error::Validation("upsample factor must be >= 1 per axis".into()));
        }
        let from = [shape[2], shape[3], shape[4]];
        let to = [from[0] * factor[0], from[1] * factor[1], from[2] * factor[2]];
        self.trilinear_resize(input, to)
    }

    /// Corner-aligned resize to explicit target extents.
    pub fn trilinear_resize(&self, input: &Tensor, to: [usize; 3]) -> Result<Tensor> {
        let shape = input.shape();
        if shape.len() != 5 {
            return Err(Error::Shape(format!(
                "trilinear_resize input must be 5-D, got {shape:?}"
            )));
        }
        let bc = shape[0] * shape[1];
        let from = [shape[2], shape[3], shape[4]];
        let out_shape = vec![shape[0], shape[1], to[0], to[1], to[2]];
        let mut out = vec![0.0; out_shape.iter().product()];
        input.with_data(|x| {
            trilinear_forward(x, bc, from[0], from[1], from[2], to[0], to[1], to[2], &mut out)
        });
        let output = Tensor::from_vec(&out_shape, out)?;
        self.push(vec![input.clone()], &output, Op::Trilinear { bc, from, to });
        Ok(output)
    }

    // ---- pointwise suite ----

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let plan = broadcast_plan(&a.shape(), &b.shape())?;
        let out = apply_binary(a, b, plan, |x, y| x + y);
        let output = Tensor::from_vec(&broadcast_shape(a, b, plan), out)?;
        check_finite(&output, "add");
        self.push(vec![a.clone(), b.clone()], &output, Op::Add { plan });
        Ok(output)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let plan = broadcast_plan(&a.shape(), &b.shape())?;
        let out = apply_binary(a, b, plan, |x, y| x - y);
        let output = Tensor::from_vec(&broadcast_shape(a, b, plan), out)?;
        check_finite(&output, "sub");
        self.push(vec![a.clone(), b.clone()], &output, Op::Sub { plan });
        Ok(output)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let plan = broadcast_plan(&a.shape(), &b.shape())?;
        let out = apply_binary(a, b, plan, |x, y| x * y);
        let output = Tensor::from_vec(&broadcast_shape(a, b, plan), out)?;
        check_finite(&output, "mul");
        self.push(vec![a.clone(), b.clone()], &output, Op::Mul { plan });
        Ok(output)
    }

    pub fn scalar_mul(&self, a: &Tensor, factor: f64) -> Result<Tensor> {
        let out: Vec<f64> = a.with_data(|x| x.iter().map(|v| v * factor).collect());
        let output = Tensor::from_vec(&a.shape(), out)?;
        check_finite(&output, "scalar_mul");
        self.push(vec![a.clone()], &output, Op::ScalarMul { factor });
        Ok(output)
    }

    pub fn scalar_add(&self, a: &Tensor, addend: f64) -> Result<Tensor> {
        let out: Vec<f64> = a.with_data(|x| x.iter().map(|v| v + addend).collect());
        let output = Tensor::from_vec(&a.shape(), out)?;
        check_finite(&output, "scalar_add");
        self.push(vec![a.clone()], &output, Op::ScalarAdd);
        Ok(output)
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        let out: Vec<f64> = a.with_data(|x| x.iter().map(|v| v.exp()).collect());
        let output = Tensor::from_vec(&a.shape(), out)?;
        check_finite(&output, "exp");
        self.push(vec![a.clone()], &output, Op::Exp);
        Ok(output)
    }

    pub fn log1p(&self, a: &Tensor) -> Result<Tensor> {
        let bad = a.with_data(|x| x.iter().any(|&v| v <= -1.0));
        if bad {
            return Err(Error::Validation("log1p of a value <= -1".into()));
        }
        let out: Vec<f64> = a.with_data(|x| x.iter().map(|v| v.ln_1p()).collect());
        let output = Tensor::from_vec(&a.shape(), out)?;
        check_finite(&output, "log1p");
        self.push(vec![a.clone()], &output, Op::Log1p);
        Ok(output)
    }

    pub fn square(&self, a: &Tensor) -> Result<Tensor> {
        let out: Vec<f64> = a.with_data(|x| x.iter().map(|v| v * v).collect());
        let output = Tensor::from_vec(&a.shape(), out)?;
        check_finite(&output, "square");
        self.push(vec![a.clone()], &output, Op::Square);
        Ok(output)
    }

    /// Elementwise x^n for x >= 0 (used by Corey relative permeabilities;
    /// inputs are clamped to [0,1] upstream).
    pub fn powf(&self, a: &Tensor, exponent: f64) -> Result<Tensor> {
        let bad = a.with_data(|x| x.iter().any(|&v| v < 0.0));
        if bad {
            return Err(Error::Validation("powf of a negative value".into()));
        }
        let out: Vec<f64> = a.with_data(|x| x.iter().map(|v| v.powf(exponent)).collect());
        let output = Tensor::from_vec(&a.shape(), out)?;
        check_finite(&output, "powf");
        self.push(vec![a.clone()], &output, Op::Powf { exponent });
        Ok(output)
    }

    /// Clamp to [lo, hi]; gradient is 1 strictly inside, 0 at and beyond
    /// the bounds.
    pub fn clamp(&self, a: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
        if lo > hi {
            return Err(Error::Validation(format!("clamp bounds inverted: {lo} > {hi}")));
        }
        let out: Vec<f64> = a.with_data(|x| x.iter().map(|v| v.clamp(lo, hi)).collect());
        let output = Tensor::from_vec(&a.shape(), out)?;
        self.push(vec![a.clone()], &output, Op::Clamp { lo, hi });
        Ok(output)
    }

    pub fn sum(&self, a: &Tensor) -> Result<Tensor> {
        let s = a.with_data(|x| x.iter().sum::<f64>());
        let output = Tensor::scalar(s);
        check_finite(&output, "sum");
        self.push(vec![a.clone()], &output, Op::Sum);
        Ok(output)
    }

    pub fn mean(&self, a: &Tensor) -> Result<Tensor> {
        if a.numel() == 0 {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let s = a.with_data(|x| x.iter().sum::<f64>()) / a.numel() as f64;
        let output = Tensor::scalar(s);
        check_finite(&output, "mean");
        self.push(vec![a.clone()], &output, Op::Mean);
        Ok(output)
    }

    /// mean((a - b)^2), built from the registered primitives.
    pub fn mse(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let d = self.sub(a, b)?;
        let sq = self.square(&d)?;
        self.mean(&sq)
    }

    /// Per-channel affine y = x*scale[c] + shift[c] on `[B, C, ...]`.
    /// Scale and shift are plain constants (used for normalization), so
    /// gradients flow only to the input.
    pub fn channel_affine(&self, a: &Tensor, scale: &[f64], shift: &[f64]) -> Result<Tensor> {
        let shape = a.shape();
        if shape.len() < 2 {
            return Err(Error::Shape(format!(
                "channel_affine input must be [B,C,...], got {shape:?}"
            )));
        }
        let (b, c) = (shape[0], shape[1]);
        if scale.len() != c || shift.len() != c {
            return Err(Error::Shape(format!(
                "channel_affine channel axis: expected {c} scale/shift entries"
            )));
        }
        let spatial: usize = shape[2..].iter().product::<usize>().max(1);
        let mut out = vec![0.0; a.numel()];
        a.with_data(|x| {
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * spatial;
                    for i in base..base + spatial {
                        out[i] = x[i] * scale[ci] + shift[ci];
                    }
                }
            }
        });
        let output = Tensor::from_vec(&shape, out)?;
        check_finite(&output, "channel_affine");
        self.push(
            vec![a.clone()],
            &output,
            Op::ChannelAffine {
                scale: scale.to_vec(),
                b,
                c,
                spatial,
            },
        );
        Ok(output)
    }

    // ---- structural ops ----

    /// Concatenate along the channel axis of `[B, C_i, D, H, W]` tensors.
    pub fn concat_channels(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_channels of zero tensors".into()));
        }
        let first = parts[0].shape();
        if first.len() != 5 {
            return Err(Error::Shape("concat_channels expects 5-D tensors".into()));
        }
        let b = first[0];
        let spatial: usize = first[2..].iter().product();
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.len() != 5 || s[0] != b || s[2..] != first[2..] {
                return Err(Error::Shape(format!(
                    "concat_channels shape mismatch: {s:?} vs {first:?}"
                )));
            }
            channels.push(s[1]);
        }
        let c_total: usize = channels.iter().sum();
        let mut out = vec![0.0; b * c_total * spatial];
        let mut c_off = 0;
        for (p, &c) in parts.iter().zip(&channels) {
            p.with_data(|x| {
                for bi in 0..b {
                    let src = bi * c * spatial;
                    let dst = (bi * c_total + c_off) * spatial;
                    out[dst..dst + c * spatial].copy_from_slice(&x[src..src + c * spatial]);
                }
            });
            c_off += c;
        }
        let out_shape = vec![b, c_total, first[2], first[3], first[4]];
        let output = Tensor::from_vec(&out_shape, out)?;
        self.push(
            parts.iter().map(|p| (*p).clone()).collect(),
            &output,
            Op::ConcatChannels {
                channels,
                b,
                spatial,
            },
        );
        Ok(output)
    }

    /// Concatenate along the batch axis.
    pub fn concat_batch(&self, parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_batch of zero tensors".into()));
        }
        let first = parts[0].shape();
        let stride: usize = first[1..].iter().product();
        let mut batches = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.len() != first.len() || s[1..] != first[1..] {
                return Err(Error::Shape(format!(
                    "concat_batch shape mismatch: {s:?} vs {first:?}"
                )));
            }
            batches.push(s[0]);
        }
        let b_total: usize = batches.iter().sum();
        let mut out = Vec::with_capacity(b_total * stride);
        for p in parts {
            p.with_data(|x| out.extend_from_slice(x));
        }
        let mut out_shape = first.clone();
        out_shape[0] = b_total;
        let output = Tensor::from_vec(&out_shape, out)?;
        self.push(
            parts.iter().map(|p| (*p).clone()).collect(),
            &output,
            Op::ConcatBatch { batches, stride },
        );
        Ok(output)
    }

    /// Extract batch entry `index` as a `[1, ...]` tensor.
    pub fn slice_batch(&self, a: &Tensor, index: usize) -> Result<Tensor> {
        let shape = a.shape();
        if shape.is_empty() || index >= shape[0] {
            return Err(Error::Shape(format!(
                "slice_batch index {index} out of range for shape {shape:?}"
            )));
        }
        let stride: usize = shape[1..].iter().product();
        let out = a.with_data(|x| x[index * stride..(index + 1) * stride].to_vec());
        let mut out_shape = shape.clone();
        out_shape[0] = 1;
        let output = Tensor::from_vec(&out_shape, out)?;
        self.push(vec![a.clone()], &output, Op::SliceBatch { index, stride });
        Ok(output)
    }

    /// Zero-pad the spatial axes of `[B, C, D, H, W]` up to `to` extents
    /// (high side only).
    pub fn pad_spatial(&self, a: &Tensor, to: [usize; 3]) -> Result<Tensor> {
        let shape = a.shape();
        if shape.len() != 5 {
            return Err(Error::Shape("pad_spatial expects a 5-D tensor".into()));
        }
        let from = [shape[2], shape[3], shape[4]];
        for i in 0..3 {
            if to[i] < from[i] {
                return Err(Error::Shape(format!(
                    "pad_spatial target {:?} smaller than input {:?}",
                    to, from
                )));
            }
        }
        if to == from {
            // still record an identity-shaped copy so gradients route
            let output = Tensor::from_vec(&shape, a.data())?;
            self.push(
                vec![a.clone()],
                &output,
                Op::PadSpatial {
                    from,
                    to,
                    bc: shape[0] * shape[1],
                },
            );
            return Ok(output);
        }
        let bc = shape[0] * shape[1];
        let out_shape = vec![shape[0], shape[1], to[0], to[1], to[2]];
        let mut out = vec![0.0; out_shape.iter().product()];
        a.with_data(|x| copy_block(x, from, &mut out, to, bc, false));
        let output = Tensor::from_vec(&out_shape, out)?;
        self.push(vec![a.clone()], &output, Op::PadSpatial { from, to, bc });
        Ok(output)
    }

    /// Crop the spatial axes down to `to` extents (keeping the low corner).
    pub fn crop_spatial(&self, a: &Tensor, to: [usize; 3]) -> Result<Tensor> {
        let shape = a.shape();
        if shape.len() != 5 {
            return Err(Error::Shape("crop_spatial expects a 5-D tensor".into()));
        }
        let from = [shape[2], shape[3], shape[4]];
        for i in 0..3 {
            if to[i] > from[i] {
                return Err(Error::Shape(format!(
                    "crop_spatial target {:?} larger than input {:?}",
                    to, from
                )));
            }
        }
        let bc = shape[0] * shape[1];
        let out_shape = vec![shape[0], shape[1], to[0], to[1], to[2]];
        let mut out = vec![0.0; out_shape.iter().product()];
        a.with_data(|x| copy_block(x, from, &mut out, to, bc, true));
        let output = Tensor::from_vec(&out_shape, out)?;
        self.push(vec![a.clone()], &output, Op::CropSpatial { from, to, bc });
        Ok(output)
    }

    /// Gather flat-spatial cells of one (batch, channel) slice of a
    /// `[B, C, D, H, W]` tensor into a 1-D tensor.
    pub fn gather_cells(
        &self,
        a: &Tensor,
        batch: usize,
        channel: usize,
        cells: &[usize],
    ) -> Result<Tensor> {
        let shape = a.shape();
        if shape.len() != 5 {
            return Err(Error::Shape("gather_cells expects a 5-D tensor".into()));
        }
        let spatial = shape[2] * shape[3] * shape[4];
        if batch >= shape[0] || channel >= shape[1] {
            return Err(Error::Shape(format!(
                "gather_cells batch/channel ({batch},{channel}) out of range for {shape:?}"
            )));
        }
        for &cell in cells {
            if cell >= spatial {
                return Err(Error::Shape(format!(
                    "gather_cells cell index {cell} outside spatial size {spatial}"
                )));
            }
        }
        let base = (batch * shape[1] + channel) * spatial;
        let out: Vec<f64> = a.with_data(|x| cells.iter().map(|&c| x[base + c]).collect());
        let output = Tensor::from_vec(&[cells.len()], out)?;
        self.push(
            vec![a.clone()],
            &output,
            Op::GatherCells {
                batch,
                channel,
                cells: cells.to_vec(),
                chan_stride: spatial,
                batch_stride: shape[1] * spatial,
            },
        );
        Ok(output)
    }

    /// Gather entries of a 1-D tensor.
    pub fn gather_1d(&self, a: &Tensor, idxs: &[usize]) -> Result<Tensor> {
        let n = a.numel();
        if a.shape().len() != 1 {
            return Err(Error::Shape("gather_1d expects a 1-D tensor".into()));
        }
        for &i in idxs {
            if i >= n {
                return Err(Error::Shape(format!(
                    "gather_1d index {i} outside length {n}"
                )));
            }
        }
        let out: Vec<f64> = a.with_data(|x| idxs.iter().map(|&i| x[i]).collect());
        let output = Tensor::from_vec(&[idxs.len()], out)?;
        self.push(
            vec![a.clone()],
            &output,
            Op::Gather1d {
                idxs: idxs.to_vec(),
            },
        );
        Ok(output)
    }
}

/// Copy between a `[bc, from]` block and a `[bc, to]` block; `crop`
/// selects direction (true: out is the smaller block).
fn copy_block(src: &[f64], from: [usize; 3], dst: &mut [f64], to: [usize; 3], bc: usize, crop: bool) {
    let (small, big) = if crop { (to, from) } else { (from, to) };
    let small_plane = small[0] * small[1] * small[2];
    let big_plane = big[0] * big[1] * big[2];
    for p in 0..bc {
        for z in 0..small[0] {
            for y in 0..small[1] {
                let small_row = p * small_plane + (z * small[1] + y) * small[2];
                let big_row = p * big_plane + (z * big[1] + y) * big[2];
                if crop {
                    dst[small_row..small_row + small[2]]
                        .copy_from_slice(&src[big_row..big_row + small[2]]);
                } else {
                    dst[big_row..big_row + small[2]]
                        .copy_from_slice(&src[small_row..small_row + small[2]]);
                }
            }
        }
    }
}

fn broadcast_plan(a: &[usize], b: &[usize]) -> Result<BroadcastPlan> {
    if a == b {
        return Ok(BroadcastPlan::Same);
    }
    let an: usize = a.iter().product();
    let bn: usize = b.iter().product();
    if bn == 1 {
        return Ok(BroadcastPlan::RhsRepeat { tail: an });
    }
    if an == 1 {
        return Ok(BroadcastPlan::LhsRepeat { tail: bn });
    }
    // trailing singleton axes: same rank, equal prefix, rhs (or lhs)
    // all-ones suffix
    if a.len() == b.len() {
        if let Some(tail) = trailing_tail(a, b) {
            return Ok(BroadcastPlan::RhsRepeat { tail });
        }
        if let Some(tail) = trailing_tail(b, a) {
            return Ok(BroadcastPlan::LhsRepeat { tail });
        }
    }
    Err(Error::Shape(format!(
        "shapes {a:?} and {b:?} are not broadcastable (only trailing singleton axes broadcast)"
    )))
}

/// If `small` equals `big` on a prefix and is all ones afterwards,
/// return the product of `big`'s suffix extents.
fn trailing_tail(big: &[usize], small: &[usize]) -> Option<usize> {
    let mut split = big.len();
    while split > 0 && small[split - 1] == 1 && big[split - 1] != 1 {
        split -= 1;
    }
    if big[..split] == small[..split] && small[split..].iter().all(|&x| x == 1) {
        Some(big[split..].iter().product())
    } else {
        None
    }
}

fn broadcast_shape(a: &Tensor, b: &Tensor, plan: BroadcastPlan) -> Vec<usize> {
    match plan {
        BroadcastPlan::LhsRepeat { .. } => b.shape(),
        _ => a.shape(),
    }
}

fn apply_binary(a: &Tensor, b: &Tensor, plan: BroadcastPlan, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.with_data(|x| {
        b.with_data(|y| match plan {
            BroadcastPlan::Same => x.iter().zip(y).map(|(&u, &v)| f(u, v)).collect(),
            BroadcastPlan::RhsRepeat { tail } => (0..x.len())
                .map(|i| f(x[i], y[i / tail]))
                .collect(),
            BroadcastPlan::LhsRepeat { tail } => (0..y.len())
                .map(|i| f(x[i / tail], y[i]))
                .collect(),
        })
    })
}

/// Sum `g` over the repeated tail to match the broadcast operand.
fn reduce_broadcast(g: &[f64], tail: usize, out_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_len];
    for (i, v) in g.iter().enumerate() {
        out[i / tail] += v;
    }
    out
}

fn backward_node(node: &Node, dout: &[f64]) {
    match &node.op {
        Op::Conv3d { dims } => {
            let input = &node.inputs[0];
            let kernel = &node.inputs[1];
            let bias = &node.inputs[2];
            let mut din = if input.requires_grad() {
                vec![0.0; input.numel()]
            } else {
                Vec::new()
            };
            let mut dk = if kernel.requires_grad() {
                vec![0.0; kernel.numel()]
            } else {
                Vec::new()
            };
            let mut db = if bias.requires_grad() {
                vec![0.0; bias.numel()]
            } else {
                Vec::new()
            };
            input.with_data(|x| {
                kernel.with_data(|k| {
                    conv3d_backward(x, k, dout, dims, &mut din, &mut dk, &mut db)
                })
            });
            if !din.is_empty() {
                input.accumulate_grad(&din);
            }
            if !dk.is_empty() {
                kernel.accumulate_grad(&dk);
            }
            if !db.is_empty() {
                bias.accumulate_grad(&db);
            }
        }
        Op::VoxelShuffle { r } => {
            let input = &node.inputs[0];
            if input.requires_grad() {
                let shape = input.shape();
                let c_out = shape[1] / (r * r * r);
                let mut din = vec![0.0; input.numel()];
                voxel_shuffle_map(
                    dout, shape[0], c_out, *r, shape[2], shape[3], shape[4], &mut din, true,
                );
                input.accumulate_grad(&din);
            }
        }
        Op::BatchNormTrain {
            saved,
            b,
            c,
            spatial,
        } => {
            let input = &node.inputs[0];
            let gamma = &node.inputs[1];
            let beta = &node.inputs[2];
            let mut dx = if input.requires_grad() {
                vec![0.0; input.numel()]
            } else {
                Vec::new()
            };
            let mut dgamma = if gamma.requires_grad() {
                vec![0.0; *c]
            } else {
                Vec::new()
            };
            let mut dbeta = if beta.requires_grad() {
                vec![0.0; *c]
            } else {
                Vec::new()
            };
            gamma.with_data(|gv| {
                backward_train(dout, saved, gv, *b, *c, *spatial, &mut dx, &mut dgamma, &mut dbeta)
            });
            if !dx.is_empty() {
                input.accumulate_grad(&dx);
            }
            if !dgamma.is_empty() {
                gamma.accumulate_grad(&dgamma);
            }
            if !dbeta.is_empty() {
                beta.accumulate_grad(&dbeta);
            }
        }
        Op::BatchNormEval {
            inv_std,
            mean,
            b,
            c,
            spatial,
        } => {
            let input = &node.inputs[0];
            let gamma = &node.inputs[1];
            let beta = &node.inputs[2];
            let gv = gamma.data();
            if input.requires_grad() {
                let mut dx = vec![0.0; input.numel()];
                for bi in 0..*b {
                    for ci in 0..*c {
                        let base = (bi * c + ci) * spatial;
                        let s = gv[ci] * inv_std[ci];
                        for i in base..base + spatial {
                            dx[i] = dout[i] * s;
                        }
                    }
                }
                input.accumulate_grad(&dx);
            }
            if gamma.requires_grad() || beta.requires_grad() {
                let mut dgamma = vec![0.0; *c];
                let mut dbeta = vec![0.0; *c];
                input.with_data(|x| {
                    for bi in 0..*b {
                        for ci in 0..*c {
                            let base = (bi * c + ci) * spatial;
                            for i in base..base + spatial {
                                dgamma[ci] += dout[i] * (x[i] - mean[ci]) * inv_std[ci];
                                dbeta[ci] += dout[i];
                            }
                        }
                    }
                });
                if gamma.requires_grad() {
                    gamma.accumulate_grad(&dgamma);
                }
                if beta.requires_grad() {
                    beta.accumulate_grad(&dbeta);
                }
            }
        }
        Op::LeakyRelu { slope } => {
            let input = &node.inputs[0];
            if input.requires_grad() {
                let din: Vec<f64> = input.with_data(|x| {
                    x.iter()
                        .zip(dout)
                        .map(|(&v, &g)| if v >= 0.0 { g } else { g * slope })
                        .collect()
                });
                input.accumulate_grad(&din);
            }
        }
        Op::Relu => {
            let input = &node.inputs[0];
            if input.requires_grad() {
                let din: Vec<f64> = input.with_data(|x| {
                    x.iter()
                        .zip(dout)
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect()
                });
                input.accumulate_grad(&din);
            }
        }
        Op::Trilinear { bc, from, to } => {
            let input = &node.inputs[0];
            if input.requires_grad() {
                let mut din = vec![0.0; input.numel()];
                trilinear_backward(
                    dout, *bc, from[0], from[1], from[2], to[0], to[1], to[2], &mut din,
                );
                input.accumulate_grad(&din);
            }
        }
        Op::Add { plan } => {
            let (a, b) = (&node.inputs[0], &node.inputs[1]);
            if a.requires_grad() {
                match plan {
                    BroadcastPlan::LhsRepeat { tail } => {
                        a.accumulate_grad(&reduce_broadcast(dout, *tail, a.numel()))
                    }
                    _ => a.accumulate_grad(dout),
                }
            }
            if b.requires_grad() {
                match plan {
                    BroadcastPlan::RhsRepeat { tail } => {
                        b.accumulate_grad(&reduce_broadcast(dout, *tail, b.numel()))
                    }
                    _ => b.accumulate_grad(dout),
                }
            }
        }
        Op::Sub { plan } => {
            let (a, b) = (&node.inputs[0], &node.inputs[1]);
            if a.requires_grad() {
                match plan {
                    BroadcastPlan::LhsRepeat { tail } => {
                        a.accumulate_grad(&reduce_broadcast(dout, *tail, a.numel()))
                    }
                    _ => a.accumulate_grad(dout),
                }
            }
            if b.requires_grad() {
                let neg: Vec<f64> = dout.iter().map(|g| -g).collect();
                match plan {
                    BroadcastPlan::RhsRepeat { tail } => {
                        b.accumulate_grad(&reduce_broadcast(&neg, *tail, b.numel()))
                    }
                    _ => b.accumulate_grad(&neg),
                }
            }
        }
        Op::Mul { plan } => {
            let (a, b) = (&node.inputs[0], &node.inputs[1]);
            if a.requires_grad() {
                let da: Vec<f64> = b.with_data(|y| match plan {
                    BroadcastPlan::Same => dout.iter().zip(y).map(|(g, v)| g * v).collect(),
                    BroadcastPlan::RhsRepeat { tail } => {
                        (0..dout.len()).map(|i| dout[i] * y[i / tail]).collect()
                    }
                    BroadcastPlan::LhsRepeat { tail } => {
                        let prod: Vec<f64> =
                            (0..dout.len()).map(|i| dout[i] * y[i]).collect();
                        reduce_broadcast(&prod, *tail, a.numel())
                    }
                });
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let db: Vec<f64> = a.with_data(|x| match plan {
                    BroadcastPlan::Same => dout.iter().zip(x).map(|(g, v)| g * v).collect(),
                    BroadcastPlan::LhsRepeat { tail } => {
                        (0..dout.len()).map(|i| dout[i] * x[i / tail]).collect()
                    }
                    BroadcastPlan::RhsRepeat { tail } => {
                        let prod: Vec<f64> =
                            (0..dout.len()).map(|i| dout[i] * x[i]).collect();
                        reduce_broadcast(&prod, *tail, b.numel())
                    }
                });
                b.accumulate_grad(&db);
            }
        }
        Op::ScalarMul { factor } => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let da: Vec<f64> = dout.iter().map(|g| g * factor).collect();
                a.accumulate_grad(&da);
            }
        }
        Op::ScalarAdd => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                a.accumulate_grad(dout);
            }
        }
        Op::Exp => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let da: Vec<f64> =
                    node.output.with_data(|y| dout.iter().zip(y).map(|(g, v)| g * v).collect());
                a.accumulate_grad(&da);
            }
        }
        Op::Log1p => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let da: Vec<f64> = a.with_data(|x| {
                    dout.iter().zip(x).map(|(g, v)| g / (1.0 + v)).collect()
                });
                a.accumulate_grad(&da);
            }
        }
        Op::Square => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let da: Vec<f64> =
                    a.with_data(|x| dout.iter().zip(x).map(|(g, v)| 2.0 * g * v).collect());
                a.accumulate_grad(&da);
            }
        }
        Op::Powf { exponent } => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let n = *exponent;
                let da: Vec<f64> = a.with_data(|x| {
                    dout.iter()
                        .zip(x)
                        .map(|(g, &v)| {
                            if v == 0.0 {
                                // n > 1: zero slope; n == 1: identity
                                if n == 1.0 {
                                    *g
                                } else {
                                    0.0
                                }
                            } else {
                                g * n * v.powf(n - 1.0)
                            }
                        })
                        .collect()
                });
                a.accumulate_grad(&da);
            }
        }
        Op::Clamp { lo, hi } => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let da: Vec<f64> = a.with_data(|x| {
                    dout.iter()
                        .zip(x)
                        .map(|(g, &v)| if v > *lo && v < *hi { *g } else { 0.0 })
                        .collect()
                });
                a.accumulate_grad(&da);
            }
        }
        Op::Sum => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                a.accumulate_grad(&vec![dout[0]; a.numel()]);
            }
        }
        Op::Mean => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let g = dout[0] / a.numel() as f64;
                a.accumulate_grad(&vec![g; a.numel()]);
            }
        }
        Op::ChannelAffine {
            scale,
            b,
            c,
            spatial,
        } => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let mut da = vec![0.0; a.numel()];
                for bi in 0..*b {
                    for ci in 0..*c {
                        let base = (bi * c + ci) * spatial;
                        for i in base..base + spatial {
                            da[i] = dout[i] * scale[ci];
                        }
                    }
                }
                a.accumulate_grad(&da);
            }
        }
        Op::ConcatChannels {
            channels,
            b,
            spatial,
        } => {
            let c_total: usize = channels.iter().sum();
            let mut c_off = 0;
            for (part, &c) in node.inputs.iter().zip(channels) {
                if part.requires_grad() {
                    let mut dp = vec![0.0; part.numel()];
                    for bi in 0..*b {
                        let src = (bi * c_total + c_off) * spatial;
                        let dst = bi * c * spatial;
                        dp[dst..dst + c * spatial]
                            .copy_from_slice(&dout[src..src + c * spatial]);
                    }
                    part.accumulate_grad(&dp);
                }
                c_off += c;
            }
        }
        Op::ConcatBatch { batches, stride } => {
            let mut off = 0;
            for (part, &nb) in node.inputs.iter().zip(batches) {
                let len = nb * stride;
                if part.requires_grad() {
                    part.accumulate_grad(&dout[off..off + len]);
                }
                off += len;
            }
        }
        Op::SliceBatch { index, stride } => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let mut da = vec![0.0; a.numel()];
                da[index * stride..(index + 1) * stride].copy_from_slice(dout);
                a.accumulate_grad(&da);
            }
        }
        Op::PadSpatial { from, to, bc } => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let mut da = vec![0.0; a.numel()];
                copy_block(dout, *to, &mut da, *from, *bc, true);
                a.accumulate_grad(&da);
            }
        }
        Op::CropSpatial { from, to, bc } => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let mut da = vec![0.0; a.numel()];
                copy_block(dout, *to, &mut da, *from, *bc, false);
                a.accumulate_grad(&da);
            }
        }
        Op::GatherCells {
            batch,
            channel,
            cells,
            chan_stride,
            batch_stride,
        } => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let mut da = vec![0.0; a.numel()];
                let base = batch * batch_stride + channel * chan_stride;
                for (j, &cell) in cells.iter().enumerate() {
                    da[base + cell] += dout[j];
                }
                a.accumulate_grad(&da);
            }
        }
        Op::Gather1d { idxs } => {
            let a = &node.inputs[0];
            if a.requires_grad() {
                let mut da = vec![0.0; a.numel()];
                for (j, &i) in idxs.iter().enumerate() {
                    da[i] += dout[j];
                }
                a.accumulate_grad(&da);
            }
        }
    }
}
