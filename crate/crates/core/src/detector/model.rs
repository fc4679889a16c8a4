use crate::blocks::{
    AvcStem, AvcStemConfig, Block, BsBlock, BsConfig, Builder, Cbs, Conv, Ctx, GsConfig, GsConv, MbConv, MbConvConfig,
};
use crate::complexity::{LayerDesc, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::param::ParamStore;
use crate::tensor::{Shape4, Var};

/// Classification bias start value: `sigmoid(-4.6) ≈ 0.01`.
pub const CLS_PRIOR_BIAS: f64 = -4.6;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub stem_width: usize,
    /// Channels at strides 4, 8, 16 and 32.
    pub widths: [usize; 4],
    /// MBConv repeats in the stride-4 and stride-8 stages.
    pub depths: [usize; 2],
    pub expansion: usize,
    pub kernel: usize,
    /// BSblock repeats in the stride-16 and stride-32 stages.
    pub deep_depth: usize,
    pub strides: [usize; 3],
    pub reg_bins: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 96,
            in_channels: 1,
            stem_width: 8,
            widths: [8, 16, 32, 64],
            depths: [1, 2],
            expansion: 6,
            kernel: 3,
            deep_depth: 1,
            strides: [8, 16, 32],
            reg_bins: 8,
            num_classes: 1,
        }
    }
}

impl ModelConfig {
    /// Stage widths in the style of the nano-scale reference detector at
    /// 640×640.
    pub fn full_scale() -> Self {
        ModelConfig {
            input_size: 640,
            in_channels: 3,
            stem_width: 16,
            widths: [32, 64, 128, 256],
            ..ModelConfig::default()
        }
    }

    pub fn head_channels(&self) -> usize {
        self.num_classes + 4 * self.reg_bins
    }

    pub fn grid(&self, scale: usize) -> usize {
        self.input_size / self.strides[scale]
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides != [8, 16, 32] {
            return Err(Error::Config(format!(
                "head strides must be (8, 16, 32), got {:?}",
                self.strides
            )));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if self.widths.iter().chain([&self.stem_width, &self.in_channels]).any(|&w| w == 0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.depths != [1, 2] && self.depths != [3, 6] {
            return Err(Error::Config(format!(
                "MBConv depths must be (1, 2) or (3, 6), got {:?}",
                self.depths
            )));
        }
        if self.reg_bins < 2 || self.num_classes == 0 {
            return Err(Error::Config("need at least 2 regression bins and 1 class".into()));
        }
        if self.widths.iter().any(|w| w % 2 != 0) {
            return Err(Error::Config("stage widths must be even".into()));
        }
        Ok(())
    }
}

/// Downsampling CBS followed by repeated blocks.
#[derive(Clone, Debug)]
struct Stage {
    down: Cbs,
    blocks: Vec<StageBlock>,
}

#[derive(Clone, Debug)]
enum StageBlock {
    Mb(MbConv),
    Bs(BsBlock),
}

impl Block for StageBlock {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        match self {
            StageBlock::Mb(b) => b.forward(cx, x),
            StageBlock::Bs(b) => b.forward(cx, x),
        }
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        match self {
            StageBlock::Mb(b) => b.describe(input, out),
            StageBlock::Bs(b) => b.describe(input, out),
        }
    }
}

impl Block for Stage {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = self.down.forward(cx, x)?;
        for b in &self.blocks {
            h = b.forward(cx, h)?;
        }
        Ok(h)
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        let mut s = self.down.describe(input, out)?;
        for b in &self.blocks {
            s = b.describe(s, out)?;
        }
        Ok(s)
    }
}

/// Decoupled head: classification and box-side bin branches.
#[derive(Clone, Debug)]
struct Head {
    cls_stem: Cbs,
    cls_out: Conv,
    reg_stem: Cbs,
    reg_out: Conv,
}

impl Block for Head {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let c = self.cls_stem.forward(cx, x)?;
        let c = self.cls_out.forward(cx, c)?;
        let r = self.reg_stem.forward(cx, x)?;
        let r = self.reg_out.forward(cx, r)?;
        cx.tape.concat_channels(&[c, r])
    }

    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4> {
        let c = self.cls_stem.describe(input, out)?;
        let c = self.cls_out.describe(c, out)?;
        let r = self.reg_stem.describe(input, out)?;
        let r = self.reg_out.describe(r, out)?;
        Ok(c.with_c(c.c + r.c))
    }
}

/// Backbone, top-down/bottom-up neck and three decoupled heads.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    stem: Cbs,
    stages: [Stage; 4],
    td4: AvcStem,
    td3: AvcStem,
    down3: GsConv,
    bu4: AvcStem,
    down4: GsConv,
    bu5: AvcStem,
    heads: [Head; 3],
}

/// Builds the model and its freshly initialised parameters.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let model = {
        let mut b = Builder::new(&mut store, seed);
        Model::new(&mut b, cfg)?
    };
    Ok((model, store))
}

impl Model {
    pub fn new(b: &mut Builder, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let [w0, w1, w2, w3] = cfg.widths;
        let stem = Cbs::new(b, "stem", cfg.in_channels, cfg.stem_width, 3, 2)?;
        let mut stages = Vec::new();
        let mut c_prev = cfg.stem_width;
        for (i, &w) in cfg.widths.iter().enumerate() {
            let name = format!("stage{}", i + 1);
            let down = Cbs::new(b, &format!("{name}.down"), c_prev, w, 3, 2)?;
            let mut blocks = Vec::new();
            if i < 2 {
                for d in 0..cfg.depths[i] {
                    let mb = MbConvConfig {
                        expansion: cfg.expansion,
                        kernel: cfg.kernel,
                        ..MbConvConfig::new(w, w, 1)
                    };
                    blocks.push(StageBlock::Mb(MbConv::new(b, &format!("{name}.mb{d}"), mb)?));
                }
            } else {
                for d in 0..cfg.deep_depth {
                    blocks.push(StageBlock::Bs(BsBlock::new(b, &format!("{name}.bs{d}"), BsConfig::new(w))?));
                }
            }
            stages.push(Stage { down, blocks });
            c_prev = w;
        }
        let stages: [Stage; 4] = stages.try_into().expect("four stages");

        let td4 = AvcStem::new(b, "neck.td4", AvcStemConfig::new(w3 + w2, w2))?;
        let td3 = AvcStem::new(b, "neck.td3", AvcStemConfig::new(w2 + w1, w1))?;
        let down3 = GsConv::new(b, "neck.down3", GsConfig::new(w1, w1 / 2))?;
        let bu4 = AvcStem::new(b, "neck.bu4", AvcStemConfig::new(w1 + w2, w2))?;
        let down4 = GsConv::new(b, "neck.down4", GsConfig::new(w2, w2 / 2))?;
        let bu5 = AvcStem::new(b, "neck.bu5", AvcStemConfig::new(w2 + w3, w3))?;

        let mut heads = Vec::new();
        for (i, &c) in [w1, w2, w3].iter().enumerate() {
            let name = format!("head{}", i + 3);
            let hc = c.max(cfg.num_classes.min(100));
            let hr = 16.max(c / 4).max(4 * cfg.reg_bins);
            let cls_out = Conv::new(b, &format!("{name}.cls_out"), hc, cfg.num_classes, 1, 1, 1, true)?;
            let bias = cls_out.bias.expect("classification bias");
            b.store.value_mut(bias).data_mut().fill(CLS_PRIOR_BIAS);
            heads.push(Head {
                cls_stem: Cbs::new(b, &format!("{name}.cls_stem"), c, hc, 3, 1)?,
                cls_out,
                reg_stem: Cbs::new(b, &format!("{name}.reg_stem"), c, hr, 3, 1)?,
                reg_out: Conv::new(b, &format!("{name}.reg_out"), hr, 4 * cfg.reg_bins, 1, 1, 1, true)?,
            });
        }
        let _ = w0;
        Ok(Model {
            cfg: cfg.clone(),
            stem,
            stages,
            td4,
            td3,
            down3,
            bu4,
            down4,
            bu5,
            heads: heads.try_into().expect("three heads"),
        })
    }

    fn check_input(&self, s: Shape4) -> Result<()> {
        let c = &self.cfg;
        if s.c != c.in_channels || s.h != c.input_size || s.w != c.input_size {
            return Err(Error::Dimension(format!(
                "model expects (n, {}, {}, {}), got {s}",
                c.in_channels, c.input_size, c.input_size
            )));
        }
        Ok(())
    }

    /// Head outputs at strides 8, 16 and 32, each `(n, N + 4B, g, g)`.
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<[Var; 3]> {
        self.check_input(cx.tape.shape(x))?;
        let mut h = self.stem.forward(cx, x)?;
        let mut feats = Vec::with_capacity(4);
        for st in &self.stages {
            h = st.forward(cx, h)?;
            feats.push(h);
        }
        let (p3, p4, p5) = (feats[1], feats[2], feats[3]);

        let up = cx.tape.upsample2x(p5);
        let cat = cx.tape.concat_channels(&[up, p4])?;
        let t4 = self.td4.forward(cx, cat)?;
        let up = cx.tape.upsample2x(t4);
        let cat = cx.tape.concat_channels(&[up, p3])?;
        let n3 = self.td3.forward(cx, cat)?;
        let d = self.down3.forward(cx, n3)?;
        let cat = cx.tape.concat_channels(&[d, t4])?;
        let n4 = self.bu4.forward(cx, cat)?;
        let d = self.down4.forward(cx, n4)?;
        let cat = cx.tape.concat_channels(&[d, p5])?;
        let n5 = self.bu5.forward(cx, cat)?;

        Ok([
            self.heads[0].forward(cx, n3)?,
            self.heads[1].forward(cx, n4)?,
            self.heads[2].forward(cx, n5)?,
        ])
    }

    /// Every primitive layer for a single input image.
    pub fn describe(&self) -> Result<Vec<LayerDesc>> {
        let c = &self.cfg;
        let mut out = Vec::new();
        let input = Shape4::new(1, c.in_channels, c.input_size, c.input_size);
        let mut s = self.stem.describe(input, &mut out)?;
        let mut feats = Vec::new();
        for st in &self.stages {
            s = st.describe(s, &mut out)?;
            feats.push(s);
        }
        let (p3, p4, p5) = (feats[1], feats[2], feats[3]);
        let upsample = |name: &str, out: &mut Vec<LayerDesc>| out.push(LayerDesc::new(name, LayerKind::Free));

        upsample("neck.up5", &mut out);
        let t4 = self.td4.describe(p4.with_c(p4.c + p5.c), &mut out)?;
        upsample("neck.up4", &mut out);
        let n3 = self.td3.describe(p3.with_c(p3.c + t4.c), &mut out)?;
        let d = self.down3.describe(n3, &mut out)?;
        let n4 = self.bu4.describe(t4.with_c(t4.c + d.c), &mut out)?;
        let d = self.down4.describe(n4, &mut out)?;
        let n5 = self.bu5.describe(p5.with_c(p5.c + d.c), &mut out)?;
        for (head, n) in self.heads.iter().zip([n3, n4, n5]) {
            head.describe(n, &mut out)?;
        }
        Ok(out)
    }
}
