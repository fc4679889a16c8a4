use super::{join, Block, Builder, Ctx};
use crate::complexity::{LayerDesc, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::param::{BufferId, ParamId};
use crate::tensor::{Shape4, Var, BN_EPS};

/// Square-kernel convolution with zero padding `k / 2`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub groups: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut Builder,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 || k == 0 || stride == 0 || groups == 0 {
            return Err(Error::Config(format!("{name}: zero-sized convolution")));
        }
        if c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::Config(format!(
                "{name}: {groups} groups do not divide {c_in} -> {c_out} channels"
            )));
        }
        let weight = b.conv_weight(&join(name, "weight"), Shape4::new(c_out, c_in / groups, k, k));
        let bias = bias.then(|| b.constant(&join(name, "bias"), Shape4::new(1, c_out, 1, 1), 0.0));
        Ok(Conv {
            name: name.to_string(),
            weight,
            bias,
            c_in,
            c_out,
            k,
            stride,
            groups,
        })
    }

    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_shape(&self, input: Shape4) -> Shape4 {
        let p = self.pad();
        Shape4::new(
            input.n,
            self.c_out,
            (input.h + 2 * p - self.k) / self.stride + 1,
            (input.w + 2 * p - self.k) / self.stride + 1,
        )
    }
}

impl Block for Conv {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        cx.expect_channels(x, self.c_in, &self.name)?;
        let w = cx.param(self.weight);
        let b = self.bias.map(|id| cx.param(id));
        cx.tape.conv2d(x, w, b, self.stride, self.pad(), self.groups)
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        if input.c != self.c_in {
            return Err(Error::Dimension(format!(
                "{} expects {} channels, got {}",
                self.name, self.c_in, input.c
            )));
        }
        let o = self.out_shape(input);
        out.push(LayerDesc::new(
            &self.name,
            LayerKind::Conv {
                c_in: self.c_in,
                c_out: self.c_out,
                k: self.k,
                groups: self.groups,
                bias: self.bias.is_some(),
                h_out: o.h,
                w_out: o.w,
            },
        ));
        Ok(o)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BufferId,
    pub c: usize,
}

impl BatchNorm {
    pub fn new(b: &mut Builder, name: &str, c: usize) -> Self {
        let s = Shape4::new(1, c, 1, 1);
        BatchNorm {
            name: name.to_string(),
            gamma: b.constant(&join(name, "gamma"), s, 1.0),
            beta: b.constant(&join(name, "beta"), s, 0.0),
            stats: b.buffer(name, c),
            c,
        }
    }
}

impl Block for BatchNorm {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        cx.expect_channels(x, self.c, &self.name)?;
        let g = cx.param(self.gamma);
        let b = cx.param(self.beta);
        let training = cx.training();
        let running = cx.store().buffer(self.stats).clone();
        let (y, stats) = cx.tape.batch_norm(x, g, b, &running, training, BN_EPS)?;
        if let Some(s) = stats {
            cx.push_bn_update(self.stats, s);
        }
        Ok(y)
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        out.push(LayerDesc::new(&self.name, LayerKind::BatchNorm { c: self.c }));
        Ok(input)
    }
}

/// Convolution without bias, then normalization, then SiLU.
#[derive(Clone, Debug)]
pub struct Cbs {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl Cbs {
    pub fn new(b: &mut Builder, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(Cbs {
            conv: Conv::new(b, &join(name, "conv"), c_in, c_out, k, stride, 1, false)?,
            bn: BatchNorm::new(b, &join(name, "bn"), c_out),
        })
    }
}

impl Block for Cbs {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let y = self.conv.forward(cx, x)?;
        let y = self.bn.forward(cx, y)?;
        Ok(cx.tape.silu(y))
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        let s = self.conv.describe(input, out)?;
        self.bn.describe(s, out)
    }
}
