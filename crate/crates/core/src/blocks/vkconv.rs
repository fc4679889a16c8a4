use super::{join, BatchNorm, Block, Builder, Conv, Ctx};
use crate::complexity::{LayerDesc, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::param::ParamId;
use crate::tensor::{Shape4, Tensor4, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VkConfig {
    pub c_in: usize,
    pub c_out: usize,
    /// Number of sampling points.
    pub num_points: usize,
    pub stride: usize,
    /// Initial value of the learned offset scale.
    pub offset_scale: f64,
}

impl VkConfig {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        VkConfig {
            c_in,
            c_out,
            num_points: 5,
            stride: 1,
            offset_scale: 0.1,
        }
    }
}

/// Row-major lattice points `(i / side, i % side)` with `side = ⌈√k⌉`.
pub fn vk_lattice(k: usize) -> Vec<(usize, usize)> {
    let side = (k as f64).sqrt().ceil() as usize;
    (0..k).map(|i| (i / side, i % side)).collect()
}

/// The lattice shifted so its centroid sits at the origin.
pub fn vk_base_coords(k: usize) -> Vec<(f64, f64)> {
    let pts = vk_lattice(k);
    let n = pts.len().max(1) as f64;
    let my = pts.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let mx = pts.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    pts.iter().map(|&(y, x)| (y as f64 - my, x as f64 - mx)).collect()
}

/// Variable-kernel convolution: bilinear gathers at a base pattern plus
/// learned, scaled offsets, a per-channel weighting of the gathered points,
/// then a pointwise projection with normalization and SiLU.
#[derive(Clone, Debug)]
pub struct VkConv {
    pub name: String,
    pub cfg: VkConfig,
    pub offset: Conv,
    pub alpha: ParamId,
    /// Grouped pointwise conv over `c_in · K` gathered channels, one group
    /// per input channel.
    pub point_weights: Conv,
    pub project: Conv,
    pub bn: BatchNorm,
}

impl VkConv {
    pub fn new(b: &mut Builder, name: &str, cfg: VkConfig) -> Result<Self> {
        if cfg.num_points == 0 {
            return Err(Error::Config(format!("{name}: needs at least one sampling point")));
        }
        if !(cfg.offset_scale > 0.0 && cfg.offset_scale.is_finite()) {
            return Err(Error::Config(format!(
                "{name}: offset scale {} must be positive",
                cfg.offset_scale
            )));
        }
        let k = cfg.num_points;
        let offset = Conv::new(b, &join(name, "offset"), cfg.c_in, 2 * k, 3, cfg.stride, 1, true)?;
        // offsets start at zero so the initial pattern is the base lattice
        b.store.value_mut(offset.weight).data_mut().fill(0.0);
        let alpha = b.constant(&join(name, "alpha"), Shape4::scalar(), cfg.offset_scale);
        Ok(VkConv {
            name: name.to_string(),
            cfg,
            offset,
            alpha,
            point_weights: Conv::new(b, &join(name, "points"), cfg.c_in * k, cfg.c_in, 1, 1, cfg.c_in, false)?,
            project: Conv::new(b, &join(name, "project"), cfg.c_in, cfg.c_out, 1, 1, 1, false)?,
            bn: BatchNorm::new(b, &join(name, "bn"), cfg.c_out),
        })
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let s = self.offset.out_shape(Shape4::new(1, self.cfg.c_in, h, w));
        (s.h, s.w)
    }

    /// Output-location origin plus base pattern, shape `(1, 2K, ho, wo)`;
    /// channel `2k` holds rows and `2k + 1` columns.
    pub fn anchor_coords(&self, h: usize, w: usize) -> Tensor4 {
        let (ho, wo) = self.out_hw(h, w);
        let base = vk_base_coords(self.cfg.num_points);
        let s = self.cfg.stride as f64;
        Tensor4::from_fn(Shape4::new(1, 2 * base.len(), ho, wo), |_, c, i, j| {
            let (py, px) = base[c / 2];
            if c % 2 == 0 {
                i as f64 * s + py
            } else {
                j as f64 * s + px
            }
        })
    }

    /// Scaled offsets `α · offset(x)`, shape `(n, 2K, ho, wo)`.
    pub fn displacement(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        cx.expect_channels(x, self.cfg.c_in, &self.name)?;
        let raw = self.offset.forward(cx, x)?;
        let alpha = cx.param(self.alpha);
        cx.tape.mul(raw, alpha)
    }

    /// Sampling coordinates in input pixels.
    pub fn sample_coords(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let s = cx.tape.shape(x);
        let dp = self.displacement(cx, x)?;
        let anchor = cx.tape.constant(self.anchor_coords(s.h, s.w));
        cx.tape.add(dp, anchor)
    }
}

impl Block for VkConv {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let coords = self.sample_coords(cx, x)?;
        let gathered = cx.tape.bilinear_sample(x, coords)?;
        let mixed = self.point_weights.forward(cx, gathered)?;
        let y = self.project.forward(cx, mixed)?;
        let y = self.bn.forward(cx, y)?;
        Ok(cx.tape.silu(y))
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        let off = self.offset.describe(input, out)?;
        out.push(LayerDesc::new(join(&self.name, "alpha"), LayerKind::Scale { numel: off.numel() }));
        out.push(LayerDesc::new(
            join(&self.name, "anchor"),
            LayerKind::Elementwise { numel: off.numel() },
        ));
        out.push(LayerDesc::new(
            join(&self.name, "gather"),
            LayerKind::Bilinear {
                c: self.cfg.c_in,
                k: self.cfg.num_points,
                h_out: off.h,
                w_out: off.w,
            },
        ));
        let gathered = Shape4::new(input.n, self.cfg.c_in * self.cfg.num_points, off.h, off.w);
        let s = self.point_weights.describe(gathered, out)?;
        let s = self.project.describe(s, out)?;
        self.bn.describe(s, out)
    }
}
