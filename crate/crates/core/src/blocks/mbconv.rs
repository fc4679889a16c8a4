use super::{join, BatchNorm, Block, Builder, Cbam, Conv, Ctx};
use crate::complexity::{LayerDesc, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MbConvConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub expansion: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dropout_p: f64,
    pub attention_reduction: usize,
}

impl MbConvConfig {
    pub fn new(c_in: usize, c_out: usize, stride: usize) -> Self {
        MbConvConfig {
            c_in,
            c_out,
            expansion: 6,
            kernel: 3,
            stride,
            dropout_p: 0.1,
            attention_reduction: 4,
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.expansion * self.c_in
    }

    pub fn has_residual(&self) -> bool {
        self.c_in == self.c_out && self.stride == 1
    }
}

/// Inverted bottleneck: expand, depthwise, attention, linear projection.
#[derive(Clone, Debug)]
pub struct MbConv {
    pub name: String,
    pub cfg: MbConvConfig,
    /// Absent at expansion 1.
    expand: Option<(Conv, BatchNorm)>,
    depthwise: Conv,
    bn_dw: BatchNorm,
    attention: Cbam,
    pub project: Conv,
    bn_project: BatchNorm,
}

impl MbConv {
    pub fn new(b: &mut Builder, name: &str, cfg: MbConvConfig) -> Result<Self> {
        if cfg.expansion == 0 {
            return Err(Error::Config(format!("{name}: expansion must be at least 1")));
        }
        if cfg.kernel % 2 == 0 {
            return Err(Error::Config(format!("{name}: kernel {} is not odd", cfg.kernel)));
        }
        if !(0.0..1.0).contains(&cfg.dropout_p) {
            return Err(Error::Config(format!("{name}: dropout {} outside [0, 1)", cfg.dropout_p)));
        }
        let hidden = cfg.hidden_width();
        let expand = if cfg.expansion > 1 {
            Some((
                Conv::new(b, &join(name, "expand"), cfg.c_in, hidden, 1, 1, 1, false)?,
                BatchNorm::new(b, &join(name, "expand_bn"), hidden),
            ))
        } else {
            None
        };
        Ok(MbConv {
            name: name.to_string(),
            cfg,
            expand,
            depthwise: Conv::new(b, &join(name, "dw"), hidden, hidden, cfg.kernel, cfg.stride, hidden, false)?,
            bn_dw: BatchNorm::new(b, &join(name, "dw_bn"), hidden),
            attention: Cbam::new(b, &join(name, "cbam"), hidden, cfg.attention_reduction)?,
            project: Conv::new(b, &join(name, "project"), hidden, cfg.c_out, 1, 1, 1, false)?,
            bn_project: BatchNorm::new(b, &join(name, "project_bn"), cfg.c_out),
        })
    }

    /// Output of the expansion stage (the input itself at expansion 1).
    pub fn expanded(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        cx.expect_channels(x, self.cfg.c_in, &self.name)?;
        match &self.expand {
            Some((conv, bn)) => {
                let h = conv.forward(cx, x)?;
                let h = bn.forward(cx, h)?;
                Ok(cx.tape.silu(h))
            }
            None => Ok(x),
        }
    }
}

impl Block for MbConv {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.expanded(cx, x)?;
        let h = self.depthwise.forward(cx, h)?;
        let h = self.bn_dw.forward(cx, h)?;
        let h = cx.tape.silu(h);
        let h = self.attention.forward(cx, h)?;
        let h = self.project.forward(cx, h)?;
        let h = self.bn_project.forward(cx, h)?;
        let h = cx.dropout(h, self.cfg.dropout_p)?;
        if self.cfg.has_residual() {
            cx.tape.add(x, h)
        } else {
            Ok(h)
        }
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        let mut s = input;
        if let Some((conv, bn)) = &self.expand {
            s = conv.describe(s, out)?;
            s = bn.describe(s, out)?;
        }
        s = self.depthwise.describe(s, out)?;
        s = self.bn_dw.describe(s, out)?;
        s = self.attention.describe(s, out)?;
        s = self.project.describe(s, out)?;
        s = self.bn_project.describe(s, out)?;
        if self.cfg.has_residual() {
            out.push(LayerDesc::new(
                join(&self.name, "residual"),
                LayerKind::Elementwise { numel: s.numel() },
            ));
        }
        Ok(s)
    }
}
