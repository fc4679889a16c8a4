//! Elementwise, reduction and layout kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Shape4, Tensor4};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActKind {
    Silu,
    Sigmoid,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Avg,
    Max,
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl ActKind {
    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            ActKind::Silu => t * sigmoid(t),
            ActKind::Sigmoid => sigmoid(t),
            ActKind::Relu => t.max(0.0),
        }
    }

    /// Derivative expressed through the input `t`.
    #[inline]
    pub fn derivative(self, t: f64) -> f64 {
        match self {
            ActKind::Silu => {
                let s = sigmoid(t);
                s * (1.0 + t * (1.0 - s))
            }
            ActKind::Sigmoid => {
                let s = sigmoid(t);
                s * (1.0 - s)
            }
            ActKind::Relu => {
                if t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Source channel for every output channel of a shuffle over `groups`.
pub(crate) fn shuffle_permutation(c: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || c % groups != 0 {
        return Err(Error::Config(format!(
            "channel count {c} not divisible by shuffle groups {groups}"
        )));
    }
    let per = c / groups;
    // view as (groups, per), transpose to (per, groups), flatten
    Ok((0..c).map(|o| (o % groups) * per + o / groups).collect())
}

pub(crate) fn permute_channels(x: &Tensor4, src_of: &[usize]) -> Tensor4 {
    let s = x.shape();
    let plane = s.plane();
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for (o, &src) in src_of.iter().enumerate() {
            let dst = (n * s.c + o) * plane;
            out.data_mut()[dst..dst + plane].copy_from_slice(x.plane(n, src));
        }
    }
    out
}

/// Inverse of `permute_channels` applied to a gradient.
pub(crate) fn unpermute_channels(g: &[f64], s: Shape4, src_of: &[usize]) -> Vec<f64> {
    let plane = s.plane();
    let mut out = vec![0.0; g.len()];
    for n in 0..s.n {
        for (o, &src) in src_of.iter().enumerate() {
            let from = (n * s.c + o) * plane;
            let to = (n * s.c + src) * plane;
            out[to..to + plane].copy_from_slice(&g[from..from + plane]);
        }
    }
    out
}

pub(crate) fn pool_global(x: &Tensor4, kind: PoolKind) -> (Tensor4, Vec<usize>) {
    let s = x.shape();
    let mut out = Tensor4::zeros(Shape4::new(s.n, s.c, 1, 1));
    let mut argmax = Vec::new();
    for n in 0..s.n {
        for c in 0..s.c {
            let p = x.plane(n, c);
            let v = match kind {
                PoolKind::Avg => p.iter().sum::<f64>() / p.len() as f64,
                PoolKind::Max => {
                    let (i, m) = p
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |(bi, bm), (i, &v)| {
                            if v > bm {
                                (i, v)
                            } else {
                                (bi, bm)
                            }
                        });
                    argmax.push(i);
                    m
                }
            };
            out.data_mut()[n * s.c + c] = v;
        }
    }
    (out, argmax)
}

/// Reduces over the channel axis to a single-channel map.
pub(crate) fn channel_reduce(x: &Tensor4, kind: PoolKind) -> (Tensor4, Vec<usize>) {
    let s = x.shape();
    let plane = s.plane();
    let mut out = Tensor4::zeros(Shape4::new(s.n, 1, s.h, s.w));
    let mut argmax = vec![0; if kind == PoolKind::Max { s.n * plane } else { 0 }];
    for n in 0..s.n {
        for i in 0..plane {
            let v = match kind {
                PoolKind::Avg => {
                    (0..s.c).map(|c| x.data()[(n * s.c + c) * plane + i]).sum::<f64>()
                        / s.c as f64
                }
                PoolKind::Max => {
                    let mut best = (0, f64::NEG_INFINITY);
                    for c in 0..s.c {
                        let v = x.data()[(n * s.c + c) * plane + i];
                        if v > best.1 {
                            best = (c, v);
                        }
                    }
                    argmax[n * plane + i] = best.0;
                    best.1
                }
            };
            out.data_mut()[n * plane + i] = v;
        }
    }
    (out, argmax)
}

/// Inverted-dropout multiplier mask: 0 or `1/(1-p)` per element.
pub(crate) fn dropout_mask(len: usize, p: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

pub(crate) fn concat(parts: &[&Tensor4]) -> Result<Tensor4> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?
        .shape();
    let mut c_total = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::Dimension(format!(
                "concat spatial/batch mismatch: {s} vs {first}"
            )));
        }
        c_total += s.c;
    }
    let out_shape = first.with_c(c_total);
    let plane = first.plane();
    let mut out = Tensor4::zeros(out_shape);
    for n in 0..first.n {
        let mut off = 0;
        for p in parts {
            let c = p.shape().c;
            let src = &p.data()[n * c * plane..(n + 1) * c * plane];
            let dst = (n * c_total + off) * plane;
            out.data_mut()[dst..dst + c * plane].copy_from_slice(src);
            off += c;
        }
    }
    Ok(out)
}

pub(crate) fn slice_channels(x: &Tensor4, start: usize, len: usize) -> Result<Tensor4> {
    let s = x.shape();
    if len == 0 || start + len > s.c {
        return Err(Error::Dimension(format!(
            "channel slice {start}..{} out of range for {s}",
            start + len
        )));
    }
    let plane = s.plane();
    let mut out = Tensor4::zeros(s.with_c(len));
    for n in 0..s.n {
        let src = &x.data()[(n * s.c + start) * plane..(n * s.c + start + len) * plane];
        out.data_mut()[n * len * plane..(n + 1) * len * plane].copy_from_slice(src);
    }
    Ok(out)
}

/// Strides that map an index of `full` onto a broadcast operand of shape `b`.
pub(crate) fn broadcast_strides(full: Shape4, b: Shape4) -> Result<[usize; 4]> {
    let fd = full.dims();
    let bd = b.dims();
    let mut strides = [0; 4];
    let mut acc = 1;
    for i in (0..4).rev() {
        if bd[i] != fd[i] && bd[i] != 1 {
            return Err(Error::Dimension(format!(
                "shape {b} does not broadcast onto {full}"
            )));
        }
        strides[i] = if bd[i] == 1 { 0 } else { acc };
        acc *= bd[i];
    }
    Ok(strides)
}

/// Calls `f(full_index, broadcast_index)` for every element of `full`.
pub(crate) fn for_each_broadcast(full: Shape4, st: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let mut i = 0;
    for n in 0..full.n {
        for c in 0..full.c {
            for y in 0..full.h {
                let base = n * st[0] + c * st[1] + y * st[2];
                for x in 0..full.w {
                    f(i, base + x * st[3]);
                    i += 1;
                }
            }
        }
    }
}

pub(crate) fn upsample2x(x: &Tensor4) -> Tensor4 {
    let s = x.shape();
    let os = Shape4::new(s.n, s.c, 2 * s.h, 2 * s.w);
    Tensor4::from_fn(os, |n, c, y, xx| x.at(n, c, y / 2, xx / 2))
}

pub(crate) fn upsample2x_backward(g: &[f64], s: Shape4) -> Vec<f64> {
    let mut out = vec![0.0; s.numel()];
    let (oh, ow) = (2 * s.h, 2 * s.w);
    for n in 0..s.n {
        for c in 0..s.c {
            let gbase = (n * s.c + c) * oh * ow;
            for y in 0..oh {
                for x in 0..ow {
                    out[s.index(n, c, y / 2, x / 2)] += g[gbase + y * ow + x];
                }
            }
        }
    }
    out
}
