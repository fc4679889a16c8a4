use super::{join, Block, Builder, Cbs, Conv, Ctx};
use crate::complexity::{LayerDesc, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GsConfig {
    pub c_in: usize,
    /// Width of each pathway; the block emits twice this many channels.
    pub c_out: usize,
    pub stride: usize,
    pub shuffle_groups: usize,
}

impl GsConfig {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        GsConfig {
            c_in,
            c_out,
            stride: 2,
            shuffle_groups: 2,
        }
    }

    pub fn out_channels(&self) -> usize {
        2 * self.c_out
    }
}

/// Dense 3×3 pathway plus a depthwise pathway on its output, concatenated
/// and channel-shuffled.
#[derive(Clone, Debug)]
pub struct GsConv {
    pub name: String,
    pub cfg: GsConfig,
    pub dense: Cbs,
    pub depthwise: Conv,
}

impl GsConv {
    pub fn new(b: &mut Builder, name: &str, cfg: GsConfig) -> Result<Self> {
        if cfg.shuffle_groups == 0 || cfg.out_channels() % cfg.shuffle_groups != 0 {
            return Err(Error::Config(format!(
                "{name}: {} shuffle groups do not divide {} channels",
                cfg.shuffle_groups,
                cfg.out_channels()
            )));
        }
        Ok(GsConv {
            name: name.to_string(),
            cfg,
            dense: Cbs::new(b, &join(name, "dense"), cfg.c_in, cfg.c_out, 3, cfg.stride)?,
            depthwise: Conv::new(b, &join(name, "dw"), cfg.c_out, cfg.c_out, 3, 1, cfg.c_out, false)?,
        })
    }
}

impl Block for GsConv {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let fc = self.dense.forward(cx, x)?;
        let fd = self.depthwise.forward(cx, fc)?;
        let both = cx.tape.concat_channels(&[fc, fd])?;
        cx.tape.channel_shuffle(both, self.cfg.shuffle_groups)
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        let s = self.dense.describe(input, out)?;
        self.depthwise.describe(s, out)?;
        Ok(s.with_c(self.cfg.out_channels()))
    }
}

/// Two stride-1 GSConv stages with a skip connection.
#[derive(Clone, Debug)]
pub struct GsBottleneck {
    pub name: String,
    pub c: usize,
    pub first: GsConv,
    pub second: GsConv,
}

impl GsBottleneck {
    pub fn new(b: &mut Builder, name: &str, c: usize) -> Result<Self> {
        if c < 2 || c % 2 != 0 {
            return Err(Error::Config(format!(
                "{name}: width {c} cannot be split into two equal pathways"
            )));
        }
        let cfg = GsConfig {
            stride: 1,
            ..GsConfig::new(c, c / 2)
        };
        Ok(GsBottleneck {
            name: name.to_string(),
            c,
            first: GsConv::new(b, &join(name, "gs1"), cfg)?,
            second: GsConv::new(b, &join(name, "gs2"), cfg)?,
        })
    }
}

impl Block for GsBottleneck {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        cx.expect_channels(x, self.c, &self.name)?;
        let h = self.first.forward(cx, x)?;
        let h = self.second.forward(cx, h)?;
        cx.tape.add(x, h)
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        let s = self.first.describe(input, out)?;
        let s = self.second.describe(s, out)?;
        out.push(LayerDesc::new(
            join(&self.name, "residual"),
            LayerKind::Elementwise { numel: s.numel() },
        ));
        Ok(s)
    }
}
