use super::Tensor4;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean and variance used in inference mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(c: usize) -> Self {
        RunningStats {
            mean: vec![0.0; c],
            var: vec![1.0; c],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving update from one batch; the variance is stored
    /// unbiased.
    pub fn absorb(&mut self, batch: &ChannelStats, momentum: f64) {
        let count = batch.count as f64;
        let unbias = if batch.count > 1 { count / (count - 1.0) } else { 1.0 };
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - momentum) * self.mean[c] + momentum * batch.mean[c];
            self.var[c] = (1.0 - momentum) * self.var[c] + momentum * batch.var[c] * unbias;
        }
    }
}

/// Biased batch statistics of one training-mode normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

pub(crate) struct BnSaved {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub training: bool,
}

pub(crate) fn forward(
    x: &Tensor4,
    gamma: &Tensor4,
    beta: &Tensor4,
    running: &RunningStats,
    training: bool,
    eps: f64,
) -> Result<(Tensor4, BnSaved, Option<ChannelStats>)> {
    let s = x.shape();
    if gamma.numel() != s.c || beta.numel() != s.c || running.channels() != s.c {
        return Err(Error::Dimension(format!(
            "batch norm parameters must have {} entries",
            s.c
        )));
    }
    let count = s.n * s.plane();
    if training && count == 1 {
        return Err(Error::DegenerateVariance(
            "training-mode batch norm over a single value per channel".into(),
        ));
    }
    let plane = s.plane();
    let (mean, var) = if training {
        let mut mean = vec![0.0; s.c];
        let mut var = vec![0.0; s.c];
        for c in 0..s.c {
            let mut acc = 0.0;
            for n in 0..s.n {
                acc += x.plane(n, c).iter().sum::<f64>();
            }
            let m = acc / count as f64;
            let mut sq = 0.0;
            for n in 0..s.n {
                sq += x.plane(n, c).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
            mean[c] = m;
            var[c] = sq / count as f64;
        }
        (mean, var)
    } else {
        (running.mean.clone(), running.var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = Tensor4::zeros(s);
    let mut xhat = vec![0.0; s.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let start = (n * s.c + c) * plane;
            let (g, b) = (gamma.data()[c], beta.data()[c]);
            for i in start..start + plane {
                let xh = (x.data()[i] - mean[c]) * inv_std[c];
                xhat[i] = xh;
                out.data_mut()[i] = g * xh + b;
            }
        }
    }
    let stats = training.then_some(ChannelStats { mean, var, count });
    Ok((out, BnSaved { xhat, inv_std, training }, stats))
}

pub(crate) fn backward(
    saved: &BnSaved,
    gamma: &Tensor4,
    grad_out: &[f64],
    shape: super::Shape4,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = shape.plane();
    let count = (shape.n * plane) as f64;
    let mut gx = vec![0.0; shape.numel()];
    let mut gg = vec![0.0; shape.c];
    let mut gb = vec![0.0; shape.c];
    for c in 0..shape.c {
        let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
        for n in 0..shape.n {
            let start = (n * shape.c + c) * plane;
            for i in start..start + plane {
                sum_dy += grad_out[i];
                sum_dy_xh += grad_out[i] * saved.xhat[i];
            }
        }
        gg[c] = sum_dy_xh;
        gb[c] = sum_dy;
        let scale = gamma.data()[c] * saved.inv_std[c];
        for n in 0..shape.n {
            let start = (n * shape.c + c) * plane;
            for i in start..start + plane {
                gx[i] = if saved.training {
                    scale * (grad_out[i] - sum_dy / count - saved.xhat[i] * sum_dy_xh / count)
                } else {
                    scale * grad_out[i]
                };
            }
        }
    }
    (gx, gg, gb)
}
