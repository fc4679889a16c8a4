//! Bilinear gathering at arbitrary real coordinates with zero padding.
//!
//! `coords` has shape `(n, 2K, ho, wo)`: channel `2k` holds the row and
//! channel `2k + 1` the column of sampling point `k` for every output
//! location. The result has shape `(n, c*K, ho, wo)` with channel `c*K + k`
//! holding point `k` of input channel `c`.

use super::{Shape4, Tensor4};
use crate::error::{Error, Result};

/// Corner weights and indices for one sampling location. Corners outside the
/// image carry no index.
struct Corners {
    idx: [Option<usize>; 4],
    wts: [f64; 4],
    // d weight / d y and d weight / d x for each corner
    dy: [f64; 4],
    dx: [f64; 4],
}

fn corners(y: f64, x: f64, h: usize, w: usize) -> Corners {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let (y0, x0) = (y0 as i64, x0 as i64);
    let pts = [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)];
    let wts = [
        (1.0 - fy) * (1.0 - fx),
        (1.0 - fy) * fx,
        fy * (1.0 - fx),
        fy * fx,
    ];
    let dy = [-(1.0 - fx), -fx, 1.0 - fx, fx];
    let dx = [-(1.0 - fy), 1.0 - fy, -fy, fy];
    let mut idx = [None; 4];
    for (slot, &(py, px)) in idx.iter_mut().zip(&pts) {
        if py >= 0 && px >= 0 && (py as usize) < h && (px as usize) < w {
            *slot = Some(py as usize * w + px as usize);
        }
    }
    Corners { idx, wts, dy, dx }
}

fn points(coords: Shape4) -> Result<usize> {
    if coords.c % 2 != 0 {
        return Err(Error::Dimension(format!(
            "coordinate tensor needs an even channel count, got {coords}"
        )));
    }
    Ok(coords.c / 2)
}

pub(crate) fn forward(x: &Tensor4, coords: &Tensor4) -> Result<Tensor4> {
    let xs = x.shape();
    let cs = coords.shape();
    if cs.n != xs.n {
        return Err(Error::Dimension(format!(
            "coordinate batch {} does not match input batch {}",
            cs.n, xs.n
        )));
    }
    let k = points(cs)?;
    if let Some(bad) = coords.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite sampling coordinate {bad}")));
    }
    let out_shape = Shape4::new(xs.n, xs.c * k, cs.h, cs.w);
    let mut out = Tensor4::zeros(out_shape);
    let oplane = cs.plane();
    for b in 0..xs.n {
        for p in 0..k {
            for loc in 0..oplane {
                let y = coords.data()[(b * cs.c + 2 * p) * oplane + loc];
                let xx = coords.data()[(b * cs.c + 2 * p + 1) * oplane + loc];
                let cr = corners(y, xx, xs.h, xs.w);
                for c in 0..xs.c {
                    let img = x.plane(b, c);
                    let mut v = 0.0;
                    for q in 0..4 {
                        if let Some(i) = cr.idx[q] {
                            v += cr.wts[q] * img[i];
                        }
                    }
                    out.data_mut()[(b * out_shape.c + c * k + p) * oplane + loc] = v;
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn backward(
    x: &Tensor4,
    coords: &Tensor4,
    grad_out: &[f64],
    need: [bool; 2],
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let xs = x.shape();
    let cs = coords.shape();
    let k = cs.c / 2;
    let oc = xs.c * k;
    let oplane = cs.plane();
    let iplane = xs.plane();
    let mut gx = need[0].then(|| vec![0.0; x.numel()]);
    let mut gc = need[1].then(|| vec![0.0; coords.numel()]);
    for b in 0..xs.n {
        for p in 0..k {
            for loc in 0..oplane {
                let yi = (b * cs.c + 2 * p) * oplane + loc;
                let xi = (b * cs.c + 2 * p + 1) * oplane + loc;
                let cr = corners(coords.data()[yi], coords.data()[xi], xs.h, xs.w);
                let (mut acc_y, mut acc_x) = (0.0, 0.0);
                for c in 0..xs.c {
                    let go = grad_out[(b * oc + c * k + p) * oplane + loc];
                    if go == 0.0 {
                        continue;
                    }
                    let img = x.plane(b, c);
                    for q in 0..4 {
                        if let Some(i) = cr.idx[q] {
                            if let Some(gx) = gx.as_mut() {
                                gx[(b * xs.c + c) * iplane + i] += go * cr.wts[q];
                            }
                            acc_y += go * cr.dy[q] * img[i];
                            acc_x += go * cr.dx[q] * img[i];
                        }
                    }
                }
                if let Some(gc) = gc.as_mut() {
                    gc[yi] += acc_y;
                    gc[xi] += acc_x;
                }
            }
        }
    }
    (gx, gc)
}
