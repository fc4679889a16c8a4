//! Reverse-mode differentiation tape.
//!
//! Every op appends a node holding its value and an [`OpRecord`]; nodes only
//! reference earlier nodes, so the record list is a DAG in topological
//! order and `backward` is a single reverse sweep.

use super::conv::{self, ConvGeom};
use super::norm::{self, BnSaved, ChannelStats, RunningStats};
use super::ops::{self, ActKind, PoolKind};
use super::sample;
use super::{Shape4, Tensor4};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub enum OpKind {
    Leaf,
    Conv2d { geom: ConvGeom, bias: bool },
    BatchNorm(BnState),
    Activation(ActKind),
    ChannelShuffle { src_of: Vec<usize> },
    BilinearSample,
    PoolGlobal { kind: PoolKind, argmax: Vec<usize> },
    ChannelReduce { kind: PoolKind, argmax: Vec<usize> },
    Dropout { mask: Vec<f64> },
    Concat { channels: Vec<usize> },
    SliceChannels { start: usize },
    Add,
    Mul,
    Upsample2x,
    Sum,
    /// Scalar produced outside the tape with precomputed partials, one
    /// buffer per input.
    External { grads: Vec<Vec<f64>> },
}

pub struct BnState(BnSaved);

impl std::fmt::Debug for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            OpKind::Leaf => "Leaf",
            OpKind::Conv2d { .. } => "Conv2d",
            OpKind::BatchNorm(_) => "BatchNorm",
            OpKind::Activation(_) => "Activation",
            OpKind::ChannelShuffle { .. } => "ChannelShuffle",
            OpKind::BilinearSample => "BilinearSample",
            OpKind::PoolGlobal { .. } => "PoolGlobal",
            OpKind::ChannelReduce { .. } => "ChannelReduce",
            OpKind::Dropout { .. } => "Dropout",
            OpKind::Concat { .. } => "Concat",
            OpKind::SliceChannels { .. } => "SliceChannels",
            OpKind::Add => "Add",
            OpKind::Mul => "Mul",
            OpKind::Upsample2x => "Upsample2x",
            OpKind::Sum => "Sum",
            OpKind::External { .. } => "External",
        };
        f.write_str(name)
    }
}

#[derive(Debug)]
pub struct OpRecord {
    pub kind: OpKind,
    pub inputs: Vec<Var>,
}

struct Node {
    value: Tensor4,
    record: OpRecord,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor4, kind: OpKind, inputs: Vec<Var>) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad());
        value.set_requires_grad(rg);
        value.zero_grad();
        self.nodes.push(Node {
            value,
            record: OpRecord { kind, inputs },
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input or parameter; `t.requires_grad()` decides whether it
    /// receives a gradient.
    pub fn leaf(&mut self, t: Tensor4) -> Var {
        self.nodes.push(Node {
            value: t,
            record: OpRecord {
                kind: OpKind::Leaf,
                inputs: Vec::new(),
            },
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, mut t: Tensor4) -> Var {
        t.set_requires_grad(true);
        self.leaf(t)
    }

    pub fn constant(&mut self, mut t: Tensor4) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape4 {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn record(&self, v: Var) -> &OpRecord {
        &self.nodes[v.0].record
    }

    /// Every discrete choice made while recording: max-pool winners, ReLU
    /// signs and bilinear sample cells. Two recordings of the same graph
    /// with equal signatures lie on the same smooth piece.
    pub fn selections(&self) -> Vec<i64> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let ins = &node.record.inputs;
            match &node.record.kind {
                OpKind::PoolGlobal { argmax, .. } | OpKind::ChannelReduce { argmax, .. } => {
                    out.extend(argmax.iter().map(|&i| i as i64));
                }
                OpKind::Activation(ActKind::Relu) => {
                    out.extend(self.value(ins[0]).data().iter().map(|&t| i64::from(t > 0.0)));
                }
                OpKind::BilinearSample => {
                    out.extend(self.value(ins[1]).data().iter().map(|&t| t.floor() as i64));
                }
                _ => {}
            }
        }
        out
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let geom = ConvGeom {
            stride,
            pad,
            groups,
        };
        let out = conv::forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            geom,
        )?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            out,
            OpKind::Conv2d {
                geom,
                bias: bias.is_some(),
            },
            inputs,
        ))
    }

    /// Per-channel convolution; `weight` has shape `(c, 1, k, k)`.
    pub fn depthwise_conv2d(&mut self, x: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let c = self.shape(x).c;
        let ws = self.shape(weight);
        if ws.n != c || ws.c != 1 {
            return Err(Error::Dimension(format!(
                "depthwise weight {ws} does not match {c} input channels"
            )));
        }
        self.conv2d(x, weight, None, stride, pad, c)
    }

    /// Returns the normalized output and, in training mode, the batch
    /// statistics to fold into the running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
        training: bool,
        eps: f64,
    ) -> Result<(Var, Option<ChannelStats>)> {
        let (out, saved, stats) = norm::forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running,
            training,
            eps,
        )?;
        let v = self.push(out, OpKind::BatchNorm(BnState(saved)), vec![x, gamma, beta]);
        Ok((v, stats))
    }

    pub fn activation(&mut self, x: Var, kind: ActKind) -> Var {
        let out = self.value(x).map(|t| kind.apply(t));
        self.push(out, OpKind::Activation(kind), vec![x])
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.activation(x, ActKind::Silu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, ActKind::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, ActKind::Relu)
    }

    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let src_of = ops::shuffle_permutation(self.shape(x).c, groups)?;
        let out = ops::permute_channels(self.value(x), &src_of);
        Ok(self.push(out, OpKind::ChannelShuffle { src_of }, vec![x]))
    }

    pub fn bilinear_sample(&mut self, x: Var, coords: Var) -> Result<Var> {
        let out = sample::forward(self.value(x), self.value(coords))?;
        Ok(self.push(out, OpKind::BilinearSample, vec![x, coords]))
    }

    pub fn pool_global(&mut self, x: Var, kind: PoolKind) -> Var {
        let (out, argmax) = ops::pool_global(self.value(x), kind);
        self.push(out, OpKind::PoolGlobal { kind, argmax }, vec![x])
    }

    /// Mean or max across channels, giving shape `(n, 1, h, w)`.
    pub fn channel_reduce(&mut self, x: Var, kind: PoolKind) -> Var {
        let (out, argmax) = ops::channel_reduce(self.value(x), kind);
        self.push(out, OpKind::ChannelReduce { kind, argmax }, vec![x])
    }

    /// Inverted dropout. Identity (the same handle) for `p == 0` or when not
    /// training.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let mask = ops::dropout_mask(self.value(x).numel(), p, seed);
        let src = self.value(x);
        let mut out = Tensor4::zeros(src.shape());
        out.data_mut()
            .iter_mut()
            .zip(src.data().iter().zip(&mask))
            .for_each(|(o, (v, m))| *o = v * m);
        Ok(self.push(out, OpKind::Dropout { mask }, vec![x]))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        let parts: Vec<&Tensor4> = xs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat(&parts)?;
        let channels = xs.iter().map(|&v| self.shape(v).c).collect();
        Ok(self.push(out, OpKind::Concat { channels }, xs.to_vec()))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = ops::slice_channels(self.value(x), start, len)?;
        Ok(self.push(out, OpKind::SliceChannels { start }, vec![x]))
    }

    /// Splits into channels `[0, at)` and `[at, c)`.
    pub fn split_channels(&mut self, x: Var, at: usize) -> Result<(Var, Var)> {
        let c = self.shape(x).c;
        if at == 0 || at >= c {
            return Err(Error::Dimension(format!(
                "split point {at} must lie strictly inside 0..{c}"
            )));
        }
        Ok((self.slice_channels(x, 0, at)?, self.slice_channels(x, at, c - at)?))
    }

    /// `a + b`, with `b` broadcast over any of its unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let st = ops::broadcast_strides(sa, sb)?;
        let mut out = self.value(a).clone();
        let bd = self.value(b).data();
        let od = out.data_mut();
        ops::for_each_broadcast(sa, st, |i, j| od[i] += bd[j]);
        Ok(self.push(out, OpKind::Add, vec![a, b]))
    }

    /// `a * b` elementwise, with `b` broadcast over any of its unit
    /// dimensions.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let st = ops::broadcast_strides(sa, sb)?;
        let mut out = self.value(a).clone();
        let bd = self.value(b).data();
        let od = out.data_mut();
        ops::for_each_broadcast(sa, st, |i, j| od[i] *= bd[j]);
        Ok(self.push(out, OpKind::Mul, vec![a, b]))
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let out = ops::upsample2x(self.value(x));
        self.push(out, OpKind::Upsample2x, vec![x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor4::scalar(s), OpKind::Sum, vec![x])
    }

    /// Records a scalar computed outside the tape together with its partial
    /// derivatives with respect to each input.
    pub fn external_scalar(&mut self, inputs: &[Var], value: f64, grads: Vec<Vec<f64>>) -> Result<Var> {
        if grads.len() != inputs.len() {
            return Err(Error::Contract("one gradient buffer per input required".into()));
        }
        for (v, g) in inputs.iter().zip(&grads) {
            if self.value(*v).numel() != g.len() {
                return Err(Error::Dimension(format!(
                    "external gradient length {} does not match input {}",
                    g.len(),
                    self.shape(*v)
                )));
            }
        }
        Ok(self.push(Tensor4::scalar(value), OpKind::External { grads }, inputs.to_vec()))
    }

    /// Populates `∂root/∂leaf` on every reachable leaf that requires a
    /// gradient. Leaf gradients accumulate across calls; intermediate
    /// gradients are recomputed.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {}",
                self.shape(root)
            )));
        }
        for node in &mut self.nodes[..=root.0] {
            if !matches!(node.record.kind, OpKind::Leaf) {
                node.value.zero_grad();
            }
        }
        if !self.value(root).requires_grad() {
            return Ok(());
        }
        let leaf_root = matches!(self.nodes[root.0].record.kind, OpKind::Leaf);
        if leaf_root {
            self.nodes[root.0].value.accumulate_grad(&[1.0]);
            return Ok(());
        }
        self.nodes[root.0].value.put_grad(Some(vec![1.0]));
        for i in (0..=root.0).rev() {
            if matches!(self.nodes[i].record.kind, OpKind::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].value.take_grad() else {
                continue;
            };
            let input_grads = self.local_grads(i, &g);
            self.nodes[i].value.put_grad(Some(g));
            let inputs = self.nodes[i].record.inputs.clone();
            for (v, ig) in inputs.into_iter().zip(input_grads) {
                if let Some(ig) = ig {
                    let node = &mut self.nodes[v.0].value;
                    if node.requires_grad() {
                        node.accumulate_grad(&ig);
                    }
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let node = &self.nodes[i];
        let ins = &node.record.inputs;
        match &node.record.kind {
            OpKind::Leaf => Vec::new(),
            OpKind::Conv2d { geom, bias } => {
                let need = [
                    self.needs(ins[0]),
                    self.needs(ins[1]),
                    *bias && self.needs(ins[2]),
                ];
                let gr = conv::backward(self.value(ins[0]), self.value(ins[1]), g, *geom, need);
                let mut out = vec![gr.x, gr.w];
                if *bias {
                    out.push(gr.b);
                }
                out
            }
            OpKind::BatchNorm(BnState(saved)) => {
                let (gx, gg, gb) = norm::backward(saved, self.value(ins[1]), g, self.shape(ins[0]));
                vec![Some(gx), Some(gg), Some(gb)]
            }
            OpKind::Activation(kind) => {
                let x = self.value(ins[0]).data();
                vec![Some(x.iter().zip(g).map(|(&t, &gi)| gi * kind.derivative(t)).collect())]
            }
            OpKind::ChannelShuffle { src_of } => {
                vec![Some(ops::unpermute_channels(g, self.shape(ins[0]), src_of))]
            }
            OpKind::BilinearSample => {
                let (gx, gc) = sample::backward(
                    self.value(ins[0]),
                    self.value(ins[1]),
                    g,
                    [self.needs(ins[0]), self.needs(ins[1])],
                );
                vec![gx, gc]
            }
            OpKind::PoolGlobal { kind, argmax } => {
                let s = self.shape(ins[0]);
                let plane = s.plane();
                let mut gx = vec![0.0; s.numel()];
                for nc in 0..s.n * s.c {
                    match kind {
                        PoolKind::Avg => gx[nc * plane..(nc + 1) * plane]
                            .iter_mut()
                            .for_each(|v| *v = g[nc] / plane as f64),
                        PoolKind::Max => gx[nc * plane + argmax[nc]] = g[nc],
                    }
                }
                vec![Some(gx)]
            }
            OpKind::ChannelReduce { kind, argmax } => {
                let s = self.shape(ins[0]);
                let plane = s.plane();
                let mut gx = vec![0.0; s.numel()];
                for n in 0..s.n {
                    for p in 0..plane {
                        let gi = g[n * plane + p];
                        match kind {
                            PoolKind::Avg => {
                                for c in 0..s.c {
                                    gx[(n * s.c + c) * plane + p] = gi / s.c as f64;
                                }
                            }
                            PoolKind::Max => {
                                gx[(n * s.c + argmax[n * plane + p]) * plane + p] = gi
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }
            OpKind::Dropout { mask } => {
                vec![Some(g.iter().zip(mask).map(|(a, m)| a * m).collect())]
            }
            OpKind::Concat { channels } => {
                let s = node.value.shape();
                let plane = s.plane();
                let mut out: Vec<Vec<f64>> =
                    channels.iter().map(|c| Vec::with_capacity(s.n * c * plane)).collect();
                for n in 0..s.n {
                    let mut off = 0;
                    for (k, &c) in channels.iter().enumerate() {
                        let start = (n * s.c + off) * plane;
                        out[k].extend_from_slice(&g[start..start + c * plane]);
                        off += c;
                    }
                }
                out.into_iter().map(Some).collect()
            }
            OpKind::SliceChannels { start } => {
                let s = self.shape(ins[0]);
                let len = node.value.shape().c;
                let plane = s.plane();
                let mut gx = vec![0.0; s.numel()];
                for n in 0..s.n {
                    let dst = (n * s.c + start) * plane;
                    gx[dst..dst + len * plane]
                        .copy_from_slice(&g[n * len * plane..(n + 1) * len * plane]);
                }
                vec![Some(gx)]
            }
            OpKind::Add => {
                let (sa, sb) = (self.shape(ins[0]), self.shape(ins[1]));
                let gb = self.needs(ins[1]).then(|| {
                    let mut gb = vec![0.0; sb.numel()];
                    let st = ops::broadcast_strides(sa, sb).expect("validated in forward");
                    ops::for_each_broadcast(sa, st, |i, j| gb[j] += g[i]);
                    gb
                });
                vec![Some(g.to_vec()), gb]
            }
            OpKind::Mul => {
                let (sa, sb) = (self.shape(ins[0]), self.shape(ins[1]));
                let st = ops::broadcast_strides(sa, sb).expect("validated in forward");
                let (a, b) = (self.value(ins[0]).data(), self.value(ins[1]).data());
                let ga = self.needs(ins[0]).then(|| {
                    let mut ga = vec![0.0; sa.numel()];
                    ops::for_each_broadcast(sa, st, |i, j| ga[i] = g[i] * b[j]);
                    ga
                });
                let gb = self.needs(ins[1]).then(|| {
                    let mut gb = vec![0.0; sb.numel()];
                    ops::for_each_broadcast(sa, st, |i, j| gb[j] += g[i] * a[i]);
                    gb
                });
                vec![ga, gb]
            }
            OpKind::Upsample2x => vec![Some(ops::upsample2x_backward(g, self.shape(ins[0])))],
            OpKind::Sum => vec![Some(vec![g[0]; self.value(ins[0]).numel()])],
            OpKind::External { grads } => grads
                .iter()
                .map(|gr| Some(gr.iter().map(|v| v * g[0]).collect()))
                .collect(),
        }
    }
}
