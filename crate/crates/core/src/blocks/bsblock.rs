use super::{join, Block, Builder, Conv, Ctx};
use crate::complexity::{partial_channels, LayerDesc, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BsConfig {
    pub c: usize,
    pub partial_ratio: f64,
    pub mlp_expansion: usize,
    pub dropout_p: f64,
}

impl BsConfig {
    pub fn new(c: usize) -> Self {
        BsConfig {
            c,
            partial_ratio: 0.25,
            mlp_expansion: 2,
            dropout_p: 0.2,
        }
    }

    pub fn partial_channels(&self) -> usize {
        partial_channels(self.c, self.partial_ratio)
    }
}

/// 3×3 convolution over the leading `⌈r·c⌉` channels; the rest pass through.
#[derive(Clone, Debug)]
pub struct PConv {
    pub name: String,
    pub c: usize,
    pub cp: usize,
    pub conv: Conv,
}

impl PConv {
    pub fn new(b: &mut Builder, name: &str, c: usize, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Config(format!("{name}: partial ratio {ratio} outside (0, 1]")));
        }
        let cp = partial_channels(c, ratio);
        if cp == 0 {
            return Err(Error::Config(format!("{name}: no channels to convolve")));
        }
        Ok(PConv {
            name: name.to_string(),
            c,
            cp,
            conv: Conv::new(b, &join(name, "conv"), cp, cp, 3, 1, 1, false)?,
        })
    }
}

impl Block for PConv {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        cx.expect_channels(x, self.c, &self.name)?;
        if self.cp == self.c {
            return self.conv.forward(cx, x);
        }
        let (head, rest) = cx.tape.split_channels(x, self.cp)?;
        let head = self.conv.forward(cx, head)?;
        cx.tape.concat_channels(&[head, rest])
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        let mut layers = Vec::new();
        self.conv.describe(input.with_c(self.cp), &mut layers)?;
        let (num, den) = reduce(self.cp * self.cp, self.c * self.c);
        let note = format!("partial {}/{} channels, ratio {num}/{den}", self.cp, self.c);
        out.extend(layers.into_iter().map(|l| l.with_note(note.clone())));
        Ok(input)
    }
}

/// `x + Drop(MLP(PConv(x)))` with a two-layer pointwise MLP.
#[derive(Clone, Debug)]
pub struct BsBlock {
    pub name: String,
    pub cfg: BsConfig,
    pub pconv: PConv,
    fc1: Conv,
    pub fc2: Conv,
}

impl BsBlock {
    pub fn new(b: &mut Builder, name: &str, cfg: BsConfig) -> Result<Self> {
        if cfg.mlp_expansion == 0 {
            return Err(Error::Config(format!("{name}: MLP expansion must be positive")));
        }
        if !(0.0..1.0).contains(&cfg.dropout_p) {
            return Err(Error::Config(format!("{name}: dropout {} outside [0, 1)", cfg.dropout_p)));
        }
        let hidden = cfg.mlp_expansion * cfg.c;
        Ok(BsBlock {
            name: name.to_string(),
            cfg,
            pconv: PConv::new(b, &join(name, "pconv"), cfg.c, cfg.partial_ratio)?,
            fc1: Conv::new(b, &join(name, "mlp1"), cfg.c, hidden, 1, 1, 1, false)?,
            fc2: Conv::new(b, &join(name, "mlp2"), hidden, cfg.c, 1, 1, 1, false)?,
        })
    }
}

impl Block for BsBlock {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        cx.expect_channels(x, self.cfg.c, &self.name)?;
        let h = self.pconv.forward(cx, x)?;
        let h = self.fc1.forward(cx, h)?;
        let h = cx.tape.silu(h);
        let h = self.fc2.forward(cx, h)?;
        let h = cx.dropout(h, self.cfg.dropout_p)?;
        cx.tape.add(x, h)
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        let s = self.pconv.describe(input, out)?;
        let s = self.fc1.describe(s, out)?;
        let s = self.fc2.describe(s, out)?;
        out.push(LayerDesc::new(
            join(&self.name, "residual"),
            LayerKind::Elementwise { numel: s.numel() },
        ));
        Ok(s)
    }
}

fn reduce(a: usize, b: usize) -> (usize, usize) {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    (a / x, b / x)
}
