use super::{join, Block, Builder, Conv, Ctx};
use crate::complexity::{LayerDesc, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{PoolKind, Shape4, Var};

/// Channel attention followed by spatial attention.
#[derive(Clone, Debug)]
pub struct Cbam {
    pub name: String,
    pub c: usize,
    fc1: Conv,
    fc2: Conv,
    spatial: Conv,
}

/// Intermediate gate values of one forward pass.
pub struct CbamGates {
    pub output: Var,
    /// `(n, c, 1, 1)`
    pub channel: Var,
    /// `(n, 1, h, w)`
    pub spatial: Var,
}

impl Cbam {
    pub fn new(b: &mut Builder, name: &str, c: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || c < reduction || c % reduction != 0 {
            return Err(Error::Config(format!(
                "{name}: {c} channels not divisible into reduction {reduction}"
            )));
        }
        let hidden = c / reduction;
        Ok(Cbam {
            name: name.to_string(),
            c,
            fc1: Conv::new(b, &join(name, "mlp1"), c, hidden, 1, 1, 1, false)?,
            fc2: Conv::new(b, &join(name, "mlp2"), hidden, c, 1, 1, 1, false)?,
            spatial: Conv::new(b, &join(name, "spatial"), 2, 1, 7, 1, 1, false)?,
        })
    }

    fn mlp(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.fc1.forward(cx, x)?;
        let h = cx.tape.relu(h);
        self.fc2.forward(cx, h)
    }

    pub fn forward_gates(&self, cx: &mut Ctx, x: Var) -> Result<CbamGates> {
        cx.expect_channels(x, self.c, &self.name)?;
        let avg = cx.tape.pool_global(x, PoolKind::Avg);
        let max = cx.tape.pool_global(x, PoolKind::Max);
        let a = self.mlp(cx, avg)?;
        let m = self.mlp(cx, max)?;
        let logits = cx.tape.add(a, m)?;
        let channel = cx.tape.sigmoid(logits);
        let y = cx.tape.mul(x, channel)?;

        let mean = cx.tape.channel_reduce(y, PoolKind::Avg);
        let peak = cx.tape.channel_reduce(y, PoolKind::Max);
        let pair = cx.tape.concat_channels(&[mean, peak])?;
        let logits = self.spatial.forward(cx, pair)?;
        let spatial = cx.tape.sigmoid(logits);
        let output = cx.tape.mul(y, spatial)?;
        Ok(CbamGates {
            output,
            channel,
            spatial,
        })
    }
}

impl Block for Cbam {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        Ok(self.forward_gates(cx, x)?.output)
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        let numel = input.numel();
        out.push(LayerDesc::new(join(&self.name, "pool"), LayerKind::Pool { numel: 2 * numel }));
        // the shared MLP sees the two pooled vectors as a 1×2 map
        let pooled = Shape4::new(input.n, input.c, 1, 2);
        let h = self.fc1.describe(pooled, out)?;
        self.fc2.describe(h, out)?;
        out.push(LayerDesc::new(
            join(&self.name, "channel_gate"),
            LayerKind::Elementwise {
                numel: input.n * input.c + numel,
            },
        ));
        out.push(LayerDesc::new(join(&self.name, "reduce"), LayerKind::Pool { numel: 2 * numel }));
        self.spatial.describe(input.with_c(2), out)?;
        out.push(LayerDesc::new(join(&self.name, "spatial_gate"), LayerKind::Elementwise { numel }));
        Ok(input)
    }
}
