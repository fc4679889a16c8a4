//! Grouped 2-D cross-correlation. General groups go through im2col + GEMM;
//! the depthwise case (one input and one output channel per group) uses
//! direct loops.

use super::{Shape4, Tensor4};
use crate::error::{Error, Result};

/// Convolution hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
    pub cin_g: usize,
    pub cout_g: usize,
}

impl ConvDims {
    fn depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }

    fn col_rows(&self) -> usize {
        self.cin_g * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn pointwise(&self, g: ConvGeom) -> bool {
        self.k == 1 && g.stride == 1 && g.pad == 0
    }
}

impl ConvDims {
    fn out_shape(&self) -> Shape4 {
        Shape4::new(self.n, self.c_out, self.ho, self.wo)
    }
}

pub(crate) fn dims(x: Shape4, w: Shape4, g: ConvGeom) -> Result<ConvDims> {
    if g.groups == 0 || g.stride == 0 {
        return Err(Error::Config("groups and stride must be >= 1".into()));
    }
    if x.c % g.groups != 0 || w.n % g.groups != 0 {
        return Err(Error::Config(format!(
            "groups {} must divide c_in {} and c_out {}",
            g.groups, x.c, w.n
        )));
    }
    if w.h != w.w {
        return Err(Error::Dimension(format!("kernel must be square, got {w}")));
    }
    let cin_g = x.c / g.groups;
    if w.c != cin_g {
        return Err(Error::Dimension(format!(
            "weight {w} expects {} input channels per group, input has {cin_g}",
            w.c
        )));
    }
    let k = w.h;
    if k > x.h + 2 * g.pad || k > x.w + 2 * g.pad {
        return Err(Error::Dimension(format!(
            "kernel {k} larger than padded input {x} (pad {})",
            g.pad
        )));
    }
    Ok(ConvDims {
        n: x.n,
        c_in: x.c,
        h: x.h,
        w: x.w,
        c_out: w.n,
        k,
        ho: (x.h + 2 * g.pad - k) / g.stride + 1,
        wo: (x.w + 2 * g.pad - k) / g.stride + 1,
        cin_g,
        cout_g: w.n / g.groups,
    })
}

/// Output positions `o` whose input index `o·stride + tap − pad` lies in
/// `[0, len)`.
fn valid_range(len: usize, out: usize, tap: usize, stride: usize, pad: usize) -> std::ops::Range<usize> {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = if len + pad > tap { ((len + pad - tap - 1) / stride + 1).min(out) } else { 0 };
    lo..hi.max(lo)
}

fn im2col(src: &[f64], d: &ConvDims, g: ConvGeom, col: &mut [f64]) {
    let (k, ho, wo, s) = (d.k, d.ho, d.wo, g.stride);
    let plane = d.h * d.w;
    let mut row = 0;
    for ci in 0..d.cin_g {
        let img = &src[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            let ys = valid_range(d.h, ho, ky, s, g.pad);
            for kx in 0..k {
                let xs = valid_range(d.w, wo, kx, s, g.pad);
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if !ys.contains(&oy) || xs.is_empty() {
                        line.fill(0.0);
                        continue;
                    }
                    let iy = oy * s + ky - g.pad;
                    let src_row = &img[iy * d.w..(iy + 1) * d.w];
                    line[..xs.start].fill(0.0);
                    line[xs.end..].fill(0.0);
                    let x0 = xs.start * s + kx - g.pad;
                    if s == 1 {
                        line[xs.clone()].copy_from_slice(&src_row[x0..x0 + xs.len()]);
                    } else {
                        for (j, v) in line[xs.clone()].iter_mut().enumerate() {
                            *v = src_row[x0 + j * s];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im_add(col: &[f64], d: &ConvDims, g: ConvGeom, dst: &mut [f64]) {
    let (k, ho, wo, s) = (d.k, d.ho, d.wo, g.stride);
    let plane = d.h * d.w;
    let mut row = 0;
    for ci in 0..d.cin_g {
        let img = &mut dst[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            let ys = valid_range(d.h, ho, ky, s, g.pad);
            for kx in 0..k {
                let xs = valid_range(d.w, wo, kx, s, g.pad);
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                row += 1;
                if xs.is_empty() {
                    continue;
                }
                for oy in ys.clone() {
                    let iy = oy * s + ky - g.pad;
                    let x0 = xs.start * s + kx - g.pad;
                    let line = &src[oy * wo + xs.start..oy * wo + xs.end];
                    let img_row = &mut img[iy * d.w..(iy + 1) * d.w];
                    if s == 1 {
                        for (v, c) in img_row[x0..x0 + line.len()].iter_mut().zip(line) {
                            *v += c;
                        }
                    } else {
                        for (j, c) in line.iter().enumerate() {
                            img_row[x0 + j * s] += c;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c (m x n) = a (m x k) * b (k x n) + beta * c`, with optional
/// transposition expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover the addressed ranges for the given dims and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn forward(
    x: &Tensor4,
    w: &Tensor4,
    bias: Option<&Tensor4>,
    g: ConvGeom,
) -> Result<Tensor4> {
    let d = dims(x.shape(), w.shape(), g)?;
    if let Some(b) = bias {
        if b.numel() != d.c_out {
            return Err(Error::Dimension(format!(
                "bias has {} entries, expected {}",
                b.numel(),
                d.c_out
            )));
        }
    }
    let mut out = Tensor4::zeros(d.out_shape());
    if d.depthwise() {
        depthwise_forward(x, w, &d, g, out.data_mut());
    } else {
        let in_len = d.c_in * d.h * d.w;
        let out_len = d.c_out * d.out_plane();
        let wlen = d.cout_g * d.col_rows();
        let mut col = if d.pointwise(g) {
            Vec::new()
        } else {
            vec![0.0; d.col_rows() * d.out_plane()]
        };
        for b in 0..d.n {
            for gi in 0..g.groups {
                let src = &x.data()[b * in_len + gi * d.cin_g * d.h * d.w..][..d.cin_g * d.h * d.w];
                let wg = &w.data()[gi * wlen..(gi + 1) * wlen];
                let dst = &mut out.data_mut()[b * out_len + gi * d.cout_g * d.out_plane()..]
                    [..d.cout_g * d.out_plane()];
                let colref: &[f64] = if d.pointwise(g) {
                    src
                } else {
                    im2col(src, &d, g, &mut col);
                    &col
                };
                gemm(
                    d.cout_g,
                    d.col_rows(),
                    d.out_plane(),
                    wg,
                    false,
                    colref,
                    false,
                    0.0,
                    dst,
                );
            }
        }
    }
    if let Some(bias) = bias {
        let plane = d.out_plane();
        let data = out.data_mut();
        for b in 0..d.n {
            for co in 0..d.c_out {
                let bv = bias.data()[co];
                let start = (b * d.c_out + co) * plane;
                data[start..start + plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

fn depthwise_forward(x: &Tensor4, w: &Tensor4, d: &ConvDims, g: ConvGeom, out: &mut [f64]) {
    let (k, s) = (d.k, g.stride);
    for b in 0..d.n {
        for c in 0..d.c_in {
            let img = x.plane(b, c);
            let ker = &w.data()[c * k * k..(c + 1) * k * k];
            let dst = &mut out[(b * d.c_out + c) * d.ho * d.wo..][..d.ho * d.wo];
            for ky in 0..k {
                let ys = valid_range(d.h, d.ho, ky, s, g.pad);
                for kx in 0..k {
                    let xs = valid_range(d.w, d.wo, kx, s, g.pad);
                    if xs.is_empty() {
                        continue;
                    }
                    let kv = ker[ky * k + kx];
                    let x0 = xs.start * s + kx - g.pad;
                    for oy in ys.clone() {
                        let row = &img[(oy * s + ky - g.pad) * d.w..][..d.w];
                        let line = &mut dst[oy * d.wo + xs.start..oy * d.wo + xs.end];
                        if s == 1 {
                            for (v, r) in line.iter_mut().zip(&row[x0..x0 + xs.len()]) {
                                *v += r * kv;
                            }
                        } else {
                            for (j, v) in line.iter_mut().enumerate() {
                                *v += row[x0 + j * s] * kv;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGrads {
    pub x: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
}

pub(crate) fn backward(
    x: &Tensor4,
    w: &Tensor4,
    grad_out: &[f64],
    g: ConvGeom,
    need: [bool; 3],
) -> ConvGrads {
    let d = dims(x.shape(), w.shape(), g).expect("shapes validated in forward");
    let plane = d.out_plane();
    let gb = need[2].then(|| {
        let mut gb = vec![0.0; d.c_out];
        for b in 0..d.n {
            for (co, acc) in gb.iter_mut().enumerate() {
                let start = (b * d.c_out + co) * plane;
                *acc += grad_out[start..start + plane].iter().sum::<f64>();
            }
        }
        gb
    });
    if d.depthwise() {
        let (gx, gw) = depthwise_backward(x, w, &d, g, grad_out, need[0], need[1]);
        return ConvGrads { x: gx, w: gw, b: gb };
    }
    let mut gx = need[0].then(|| vec![0.0; x.numel()]);
    let mut gw = need[1].then(|| vec![0.0; w.numel()]);
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * plane;
    let wlen = d.cout_g * d.col_rows();
    let gin_len = d.cin_g * d.h * d.w;
    let mut col = vec![0.0; d.col_rows() * plane];
    let mut gcol = vec![0.0; d.col_rows() * plane];
    for b in 0..d.n {
        for gi in 0..g.groups {
            let src = &x.data()[b * in_len + gi * gin_len..][..gin_len];
            let gout = &grad_out[b * out_len + gi * d.cout_g * plane..][..d.cout_g * plane];
            if let Some(gw) = gw.as_mut() {
                let colref: &[f64] = if d.pointwise(g) {
                    src
                } else {
                    im2col(src, &d, g, &mut col);
                    &col
                };
                gemm(
                    d.cout_g,
                    plane,
                    d.col_rows(),
                    gout,
                    false,
                    colref,
                    true,
                    1.0,
                    &mut gw[gi * wlen..(gi + 1) * wlen],
                );
            }
            if let Some(gx) = gx.as_mut() {
                let wg = &w.data()[gi * wlen..(gi + 1) * wlen];
                let dst = &mut gx[b * in_len + gi * gin_len..][..gin_len];
                if d.pointwise(g) {
                    gemm(d.col_rows(), d.cout_g, plane, wg, true, gout, false, 1.0, dst);
                } else {
                    gemm(
                        d.col_rows(),
                        d.cout_g,
                        plane,
                        wg,
                        true,
                        gout,
                        false,
                        0.0,
                        &mut gcol,
                    );
                    col2im_add(&gcol, &d, g, dst);
                }
            }
        }
    }
    ConvGrads { x: gx, w: gw, b: gb }
}

fn depthwise_backward(
    x: &Tensor4,
    w: &Tensor4,
    d: &ConvDims,
    g: ConvGeom,
    grad_out: &[f64],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (k, s) = (d.k, g.stride);
    let mut gx = need_x.then(|| vec![0.0; x.numel()]);
    let mut gw = need_w.then(|| vec![0.0; w.numel()]);
    let plane_in = d.h * d.w;
    for b in 0..d.n {
        for c in 0..d.c_in {
            let img = x.plane(b, c);
            let ker = &w.data()[c * k * k..(c + 1) * k * k];
            let gout = &grad_out[(b * d.c_out + c) * d.ho * d.wo..][..d.ho * d.wo];
            for ky in 0..k {
                let ys = valid_range(d.h, d.ho, ky, s, g.pad);
                for kx in 0..k {
                    let xs = valid_range(d.w, d.wo, kx, s, g.pad);
                    if xs.is_empty() {
                        continue;
                    }
                    let x0 = xs.start * s + kx - g.pad;
                    let kv = ker[ky * k + kx];
                    let mut acc = 0.0;
                    for oy in ys.clone() {
                        let iy = oy * s + ky - g.pad;
                        let go = &gout[oy * d.wo + xs.start..oy * d.wo + xs.end];
                        let row = &img[iy * d.w..(iy + 1) * d.w];
                        if need_w {
                            if s == 1 {
                                acc += go.iter().zip(&row[x0..x0 + go.len()]).map(|(a, b)| a * b).sum::<f64>();
                            } else {
                                acc += go.iter().enumerate().map(|(j, a)| a * row[x0 + j * s]).sum::<f64>();
                            }
                        }
                        if let Some(gx) = gx.as_mut() {
                            let grow = &mut gx[(b * d.c_in + c) * plane_in + iy * d.w..][..d.w];
                            if s == 1 {
                                for (v, a) in grow[x0..x0 + go.len()].iter_mut().zip(go) {
                                    *v += a * kv;
                                }
                            } else {
                                for (j, a) in go.iter().enumerate() {
                                    grow[x0 + j * s] += a * kv;
                                }
                            }
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[c * k * k + ky * k + kx] += acc;
                    }
                }
            }
        }
    }
    (gx, gw)
}
