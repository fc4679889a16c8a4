use super::{join, Block, Builder, Cbs, Conv, Ctx, GsBottleneck, VkConfig, VkConv};
use crate::complexity::{LayerDesc, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AvcStemConfig {
    pub c_in: usize,
    pub c_out: usize,
    /// Width of each branch; even, since the bottleneck halves it.
    pub branch_width: usize,
    pub num_points: usize,
    pub offset_scale: f64,
}

impl AvcStemConfig {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        AvcStemConfig {
            c_in,
            c_out,
            branch_width: (c_out / 2).next_multiple_of(2).max(2),
            num_points: 5,
            offset_scale: 0.1,
        }
    }
}

/// Two parallel branches (pointwise CBS, gated GS bottleneck on a pointwise
/// reduction) fused by a variable-kernel convolution.
#[derive(Clone, Debug)]
pub struct AvcStem {
    pub name: String,
    pub cfg: AvcStemConfig,
    pub branch_a: Cbs,
    pub reduce_b: Cbs,
    pub branch_b: GsBottleneck,
    pub gate_point: Conv,
    pub gate_spatial: Conv,
    pub fuse: VkConv,
}

impl AvcStem {
    pub fn new(b: &mut Builder, name: &str, cfg: AvcStemConfig) -> Result<Self> {
        if cfg.branch_width == 0 || cfg.branch_width % 2 != 0 {
            return Err(Error::Config(format!(
                "{name}: branch width {} must be positive and even",
                cfg.branch_width
            )));
        }
        let vk = VkConfig {
            num_points: cfg.num_points,
            offset_scale: cfg.offset_scale,
            ..VkConfig::new(2 * cfg.branch_width, cfg.c_out)
        };
        Ok(AvcStem {
            name: name.to_string(),
            cfg,
            branch_a: Cbs::new(b, &join(name, "branch_a"), cfg.c_in, cfg.branch_width, 1, 1)?,
            reduce_b: Cbs::new(b, &join(name, "reduce_b"), cfg.c_in, cfg.branch_width, 1, 1)?,
            branch_b: GsBottleneck::new(b, &join(name, "branch_b"), cfg.branch_width)?,
            gate_point: Conv::new(b, &join(name, "gate1x1"), cfg.c_in, cfg.branch_width, 1, 1, 1, false)?,
            gate_spatial: Conv::new(b, &join(name, "gate3x3"), cfg.c_in, cfg.branch_width, 3, 1, 1, false)?,
            fuse: VkConv::new(b, &join(name, "vk"), vk)?,
        })
    }

    /// `sigmoid(conv1×1(x) ⊙ conv3×3(x))`
    pub fn gate(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let p = self.gate_point.forward(cx, x)?;
        let s = self.gate_spatial.forward(cx, x)?;
        let prod = cx.tape.mul(p, s)?;
        Ok(cx.tape.sigmoid(prod))
    }
}

impl Block for AvcStem {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        cx.expect_channels(x, self.cfg.c_in, &self.name)?;
        let a = self.branch_a.forward(cx, x)?;
        let reduced = self.reduce_b.forward(cx, x)?;
        let bottleneck = self.branch_b.forward(cx, reduced)?;
        let gate = self.gate(cx, x)?;
        let gated = cx.tape.mul(bottleneck, gate)?;
        let both = cx.tape.concat_channels(&[a, gated])?;
        self.fuse.forward(cx, both)
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        let a = self.branch_a.describe(input, out)?;
        let r = self.reduce_b.describe(input, out)?;
        let bb = self.branch_b.describe(r, out)?;
        self.gate_point.describe(input, out)?;
        self.gate_spatial.describe(input, out)?;
        // gate product and its application to the bottleneck branch
        out.push(LayerDesc::new(
            join(&self.name, "gate"),
            LayerKind::Elementwise {
                numel: 2 * bb.numel(),
            },
        ));
        self.fuse.describe(a.with_c(a.c + bb.c), out)
    }
}
