use irstd_core::blocks::{
    calibrate, check_block_gradients, vk_base_coords, AvcStem, AvcStemConfig, Block, BsBlock, BsConfig, Builder, Cbam, Ctx,
    GsBottleneck, GsConfig, GsConv, MbConv, MbConvConfig, Mode, PConv, VkConfig, VkConv,
};
use irstd_core::complexity::CostReport;
use irstd_core::tensor::gradcheck::GradCheckOptions;
use irstd_core::tensor::param::ParamStore;
use irstd_core::tensor::BN_EPS;
use irstd_core::{Error, Result, Shape4, Tape, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: Shape4, seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::uniform(shape, -1.0, 1.0, &mut rng)
}

fn build<T>(seed: u64, f: impl FnOnce(&mut Builder) -> Result<T>) -> (ParamStore, T) {
    let mut store = ParamStore::new();
    let block = {
        let mut b = Builder::new(&mut store, seed);
        f(&mut b).unwrap()
    };
    (store, block)
}

fn run<B: Block>(store: &ParamStore, block: &B, x: &Tensor4, mode: Mode) -> Tensor4 {
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, store, mode, 3);
    let xv = cx.tape.constant(x.clone());
    let y = block.forward(&mut cx, xv).unwrap();
    tape.value(y).clone()
}

fn zero_all(store: &mut ParamStore) {
    for p in store.params_mut() {
        p.param.value.data_mut().fill(0.0);
    }
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

// ---------- CBAM ----------

#[test]
fn cbam_zero_weights_quarter_input() {
    let (mut store, cbam) = build(1, |b| Cbam::new(b, "cbam", 8, 4));
    zero_all(&mut store);
    let x = rand_tensor(Shape4::new(2, 8, 5, 6), 2);
    let y = run(&store, &cbam, &x, Mode::Infer);
    assert_eq!(y.shape(), x.shape());
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - 0.25 * b).abs() < 1e-15);
    }
}

#[test]
fn cbam_gates_in_open_unit_interval() {
    let (store, cbam) = build(3, |b| Cbam::new(b, "cbam", 8, 2));
    for seed in 0..5 {
        let x = rand_tensor(Shape4::new(1, 8, 6, 7), 10 + seed).map(|v| 3.0 * v);
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, Mode::Infer, 0);
        let xv = cx.tape.constant(x.clone());
        let g = cbam.forward_gates(&mut cx, xv).unwrap();
        assert_eq!(tape.shape(g.output), x.shape());
        assert_eq!(tape.shape(g.channel), Shape4::new(1, 8, 1, 1));
        assert_eq!(tape.shape(g.spatial), Shape4::new(1, 1, 6, 7));
        for v in tape.value(g.channel).data().iter().chain(tape.value(g.spatial).data()) {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }
}

#[test]
fn cbam_reduction_errors() {
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 0);
    assert!(matches!(Cbam::new(&mut b, "c", 2, 4), Err(Error::Config(_))));
    assert!(matches!(Cbam::new(&mut b, "c", 6, 4), Err(Error::Config(_))));
}

// ---------- MBConv ----------

#[test]
fn mbconv_hidden_width_is_six_times_input() {
    let cfg = MbConvConfig::new(16, 16, 1);
    assert_eq!(cfg.hidden_width(), 96);
    let (store, block) = build(4, |b| MbConv::new(b, "mb", cfg));
    let x = rand_tensor(Shape4::new(1, 16, 4, 4), 5);
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, &store, Mode::Infer, 0);
    let xv = cx.tape.constant(x);
    let h = block.expanded(&mut cx, xv).unwrap();
    assert_eq!(tape.shape(h).c, 96);
}

#[test]
fn mbconv_residual_rule_is_structural() {
    assert!(MbConvConfig::new(8, 8, 1).has_residual());
    assert!(!MbConvConfig::new(8, 8, 2).has_residual());
    assert!(!MbConvConfig::new(16, 32, 1).has_residual());
}

#[test]
fn mbconv_zero_projection_is_pure_residual() {
    let (mut store, block) = build(6, |b| MbConv::new(b, "mb", MbConvConfig::new(8, 8, 1)));
    store.value_mut(block.project.weight).data_mut().fill(0.0);
    let x = rand_tensor(Shape4::new(2, 8, 6, 6), 7);
    assert_eq!(run(&store, &block, &x, Mode::Infer), x);
}

#[test]
fn mbconv_without_residual_ignores_skip() {
    let (mut store, block) = build(8, |b| MbConv::new(b, "mb", MbConvConfig::new(16, 32, 1)));
    store.value_mut(block.project.weight).data_mut().fill(0.0);
    // with the main branch silenced, any leak of x would show up here
    let x = rand_tensor(Shape4::new(1, 16, 5, 5), 9);
    let y = run(&store, &block, &x, Mode::Infer);
    assert_eq!(y.shape(), Shape4::new(1, 32, 5, 5));
    assert!(y.data().iter().all(|&v| v == 0.0));
    let x2 = x.map(|v| v + 5.0);
    assert_eq!(run(&store, &block, &x2, Mode::Infer), y);
}

#[test]
fn mbconv_channel_mismatch_and_stride() {
    let (store, block) = build(10, |b| MbConv::new(b, "mb", MbConvConfig::new(8, 16, 2)));
    let x = rand_tensor(Shape4::new(1, 8, 8, 8), 11);
    assert_eq!(run(&store, &block, &x, Mode::Train).shape(), Shape4::new(1, 16, 4, 4));
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, &store, Mode::Infer, 0);
    let bad = cx.tape.constant(Tensor4::zeros(Shape4::new(1, 4, 8, 8)));
    assert!(matches!(block.forward(&mut cx, bad), Err(Error::Dimension(_))));
}

// ---------- PConv / BSblock ----------

#[test]
fn pconv_pass_through_and_partial_count() {
    let (store, pconv) = build(12, |b| PConv::new(b, "p", 8, 0.25));
    assert_eq!(pconv.cp, 2);
    let x = rand_tensor(Shape4::new(2, 8, 5, 5), 13);
    let y = run(&store, &pconv, &x, Mode::Infer);
    for n in 0..2 {
        for c in 2..8 {
            let a: Vec<u64> = y.plane(n, c).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = x.plane(n, c).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn pconv_delta_kernels_are_identity() {
    let (mut store, pconv) = build(14, |b| PConv::new(b, "p", 8, 0.25));
    let w = store.value_mut(pconv.conv.weight);
    w.data_mut().fill(0.0);
    for c in 0..2 {
        w.set(c, c, 1, 1, 1.0);
    }
    let x = rand_tensor(Shape4::new(1, 8, 4, 6), 15);
    assert_eq!(run(&store, &pconv, &x, Mode::Infer), x);
}

#[test]
fn pconv_ratio_errors() {
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 0);
    assert!(matches!(PConv::new(&mut b, "p", 8, 0.0), Err(Error::Config(_))));
    assert!(matches!(PConv::new(&mut b, "p", 8, 1.5), Err(Error::Config(_))));
}

#[test]
fn bsblock_zero_branch_and_identity_jacobian() {
    let (mut store, block) = build(16, |b| BsBlock::new(b, "bs", BsConfig::new(8)));
    store.value_mut(block.fc2.weight).data_mut().fill(0.0);
    let x = rand_tensor(Shape4::new(1, 8, 6, 6), 17);
    assert_eq!(run(&store, &block, &x, Mode::Infer), x);

    // finite-difference Jacobian columns equal unit vectors
    let h = 1e-3;
    for e in [0usize, 37, 143, 287] {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.data_mut()[e] += h;
        xm.data_mut()[e] -= h;
        let yp = run(&store, &block, &xp, Mode::Infer);
        let ym = run(&store, &block, &xm, Mode::Infer);
        for i in 0..x.numel() {
            let d = (yp.data()[i] - ym.data()[i]) / (2.0 * h);
            let want = if i == e { 1.0 } else { 0.0 };
            assert!((d - want).abs() < 1e-9);
        }
    }
}

#[test]
fn bsblock_shape_and_mismatch() {
    for c in [4, 6, 8, 12] {
        let (store, block) = build(c as u64, |b| BsBlock::new(b, "bs", BsConfig::new(c)));
        let x = rand_tensor(Shape4::new(2, c, 5, 4), 18);
        assert_eq!(run(&store, &block, &x, Mode::Train).shape(), x.shape());
    }
    let (store, block) = build(19, |b| BsBlock::new(b, "bs", BsConfig::new(8)));
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, &store, Mode::Infer, 0);
    let bad = cx.tape.constant(Tensor4::zeros(Shape4::new(1, 6, 4, 4)));
    assert!(matches!(block.forward(&mut cx, bad), Err(Error::Dimension(_))));
}

// ---------- GSConv ----------

#[test]
fn gsconv_output_shape() {
    for (h, w) in [(8, 8), (7, 9), (6, 5)] {
        let (store, block) = build(20, |b| GsConv::new(b, "gs", GsConfig::new(6, 5)));
        let x = rand_tensor(Shape4::new(2, 6, h, w), 21);
        let y = run(&store, &block, &x, Mode::Train);
        // 3×3 pad-1 stride-2 output size (h + 1) / 2, which is h / 2 for even h
        assert_eq!(y.shape(), Shape4::new(2, 10, h.div_ceil(2), w.div_ceil(2)));
    }
    let (store, block) = build(22, |b| GsConv::new(b, "gs", GsConfig::new(4, 4)));
    let y = run(&store, &block, &rand_tensor(Shape4::new(1, 4, 8, 8), 23), Mode::Infer);
    assert_eq!(y.shape(), Shape4::new(1, 8, 4, 4));
}

#[test]
fn gsconv_delta_depthwise_duplicates_channels() {
    let (mut store, block) = build(24, |b| GsConv::new(b, "gs", GsConfig::new(4, 3)));
    let w = store.value_mut(block.depthwise.weight);
    w.data_mut().fill(0.0);
    for c in 0..3 {
        w.set(c, 0, 1, 1, 1.0);
    }
    let x = rand_tensor(Shape4::new(1, 4, 6, 6), 25);
    let y = run(&store, &block, &x, Mode::Infer);
    for i in 0..3 {
        assert_eq!(y.plane(0, 2 * i), y.plane(0, 2 * i + 1));
    }
}

#[test]
fn gsconv_single_group_is_plain_concat() {
    let cfg = GsConfig {
        shuffle_groups: 1,
        ..GsConfig::new(4, 3)
    };
    let (store, block) = build(26, |b| GsConv::new(b, "gs", cfg));
    let x = rand_tensor(Shape4::new(1, 4, 6, 6), 27);
    let y = run(&store, &block, &x, Mode::Infer);
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, &store, Mode::Infer, 0);
    let xv = cx.tape.constant(x);
    let fc = block.dense.forward(&mut cx, xv).unwrap();
    let fd = block.depthwise.forward(&mut cx, fc).unwrap();
    let cat = cx.tape.concat_channels(&[fc, fd]).unwrap();
    assert_eq!(tape.value(cat), &y);
}

#[test]
fn gs_bottleneck_residual_and_gradient_paths() {
    let (mut store, block) = build(28, |b| GsBottleneck::new(b, "gsb", 8));
    let x = rand_tensor(Shape4::new(1, 8, 6, 6), 29);
    assert_eq!(run(&store, &block, &x, Mode::Infer).shape(), x.shape());

    // input gradient of the full block versus the branch alone
    let probe = |store: &ParamStore, skip: bool| {
        let h = 1e-3;
        let e = 50;
        let eval = |xv: &Tensor4| {
            let mut tape = Tape::new();
            let mut cx = Ctx::new(&mut tape, store, Mode::Infer, 0);
            let v = cx.tape.constant(xv.clone());
            let out = if skip {
                block.forward(&mut cx, v).unwrap()
            } else {
                let a = block.first.forward(&mut cx, v).unwrap();
                block.second.forward(&mut cx, a).unwrap()
            };
            tape.value(out).data()[e]
        };
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.data_mut()[e] += h;
        xm.data_mut()[e] -= h;
        (eval(&xp) - eval(&xm)) / (2.0 * h)
    };
    let full = probe(&store, true);
    let branch = probe(&store, false);
    assert!((full - branch - 1.0).abs() < 1e-6);

    let second = block.second.dense.conv.weight;
    store.value_mut(second).data_mut().fill(0.0);
    assert_eq!(run(&store, &block, &x, Mode::Infer), x);
}

#[test]
fn gs_bottleneck_rejects_odd_width() {
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 0);
    assert!(matches!(GsBottleneck::new(&mut b, "g", 7), Err(Error::Config(_))));
}

// ---------- VKConv ----------

#[test]
fn vk_base_pattern() {
    let raw = irstd_core::blocks::vk_lattice(5);
    assert_eq!(raw, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]);
    let c = vk_base_coords(5);
    assert_eq!(c.len(), 5);
    let (sy, sx) = c.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    assert!(sy.abs() < 1e-12 && sx.abs() < 1e-12);
    assert!((c[0].0 + 0.4).abs() < 1e-12 && (c[0].1 + 0.8).abs() < 1e-12);
    assert_eq!(vk_base_coords(1), vec![(0.0, 0.0)]);
    for k in 1..40 {
        let pts = irstd_core::blocks::vk_lattice(k);
        let side = (k as f64).sqrt().ceil() as usize;
        let mut uniq = pts.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), k);
        assert!(pts.iter().all(|&(r, c)| r < side && c < side));
        assert_eq!(pts.iter().map(|p| p.1).max().unwrap() + 1, side.min(k));
    }
}

fn bilinear_oracle(x: &Tensor4, n: usize, c: usize, y: f64, xx: f64) -> f64 {
    let (h, w) = (x.shape().h as i64, x.shape().w as i64);
    let (y0, x0) = (y.floor() as i64, xx.floor() as i64);
    let (fy, fx) = (y - y0 as f64, xx - x0 as f64);
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (yy, xc) = (y0 + dy, x0 + dx);
            if yy >= 0 && yy < h && xc >= 0 && xc < w {
                acc += wy * wx * x.at(n, c, yy as usize, xc as usize);
            }
        }
    }
    acc
}

#[test]
fn vkconv_zero_offsets_match_gather_oracle() {
    for stride in [1, 2] {
        let cfg = VkConfig {
            stride,
            ..VkConfig::new(3, 4)
        };
        let (store, vk) = build(30, |b| VkConv::new(b, "vk", cfg));
        let x = rand_tensor(Shape4::new(2, 3, 7, 6), 31);
        let y = run(&store, &vk, &x, Mode::Infer);
        let base = vk_base_coords(5);
        let wp = store.value(vk.point_weights.weight);
        let proj = store.value(vk.project.weight);
        let ho = (7 - 1) / stride + 1;
        let wo = (6 - 1) / stride + 1;
        assert_eq!(y.shape(), Shape4::new(2, 4, ho, wo));
        for n in 0..2 {
            for i in 0..ho {
                for j in 0..wo {
                    let mixed: Vec<f64> = (0..3)
                        .map(|c| {
                            base.iter()
                                .enumerate()
                                .map(|(k, &(py, px))| {
                                    let s = bilinear_oracle(&x, n, c, (i * stride) as f64 + py, (j * stride) as f64 + px);
                                    wp.at(c, k, 0, 0) * s
                                })
                                .sum()
                        })
                        .collect();
                    for o in 0..4 {
                        let z: f64 = (0..3).map(|c| proj.at(o, c, 0, 0) * mixed[c]).sum();
                        let want = silu(z / (1.0 + BN_EPS).sqrt());
                        assert!((y.at(n, o, i, j) - want).abs() <= 1e-6);
                    }
                }
            }
        }
    }
}

#[test]
fn vkconv_offset_channels_and_alpha_linearity() {
    let (mut store, vk) = build(32, |b| VkConv::new(b, "vk", VkConfig::new(4, 6)));
    assert_eq!(store.value(vk.offset.weight).shape().n, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let s = store.value(vk.offset.weight).shape();
    *store.value_mut(vk.offset.weight) = Tensor4::uniform(s, -1.0, 1.0, &mut rng);
    let x = rand_tensor(Shape4::new(1, 4, 6, 6), 34);
    let disp = |store: &ParamStore| {
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, store, Mode::Infer, 0);
        let xv = cx.tape.constant(x.clone());
        let d = vk.displacement(&mut cx, xv).unwrap();
        tape.value(d).clone()
    };
    let d1 = disp(&store);
    assert_eq!(d1.shape(), Shape4::new(1, 10, 6, 6));
    assert!(d1.data().iter().any(|&v| v != 0.0));
    store.value_mut(vk.alpha).data_mut()[0] = 0.2;
    let d2 = disp(&store);
    for (a, b) in d1.data().iter().zip(d2.data()) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn vkconv_rejects_bad_config_and_nan_offsets() {
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 0);
    let bad = VkConfig {
        offset_scale: 0.0,
        ..VkConfig::new(2, 2)
    };
    assert!(matches!(VkConv::new(&mut b, "v", bad), Err(Error::Config(_))));
    let bad = VkConfig {
        num_points: 0,
        ..VkConfig::new(2, 2)
    };
    assert!(matches!(VkConv::new(&mut b, "v", bad), Err(Error::Config(_))));

    let (mut store, vk) = build(35, |b| VkConv::new(b, "vk", VkConfig::new(2, 2)));
    store.value_mut(vk.alpha).data_mut()[0] = f64::NAN;
    let mut tape = Tape::new();
    let mut cx = Ctx::new(&mut tape, &store, Mode::Infer, 0);
    let xv = cx.tape.constant(rand_tensor(Shape4::new(1, 2, 4, 4), 36));
    assert!(matches!(vk.forward(&mut cx, xv), Err(Error::Numeric(_))));
}

// ---------- AVCStem ----------

#[test]
fn avcstem_gate_behaviour_and_shape() {
    let (mut store, stem) = build(37, |b| AvcStem::new(b, "avc", AvcStemConfig::new(8, 6)));
    for (h, w) in [(6, 6), (9, 5)] {
        let x = rand_tensor(Shape4::new(2, 8, h, w), 38);
        assert_eq!(run(&store, &stem, &x, Mode::Train).shape(), Shape4::new(2, 6, h, w));
    }
    let x = rand_tensor(Shape4::new(1, 8, 6, 6), 39).map(|v| 2.0 * v);
    let gate_of = |store: &ParamStore| {
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, store, Mode::Infer, 0);
        let xv = cx.tape.constant(x.clone());
        let g = stem.gate(&mut cx, xv).unwrap();
        tape.value(g).clone()
    };
    assert!(gate_of(&store).data().iter().all(|&v| v > 0.0 && v < 1.0));
    store.value_mut(stem.gate_point.weight).data_mut().fill(0.0);
    store.value_mut(stem.gate_spatial.weight).data_mut().fill(0.0);
    assert!(gate_of(&store).data().iter().all(|&v| v == 0.5));
}

#[test]
fn avcstem_rejects_odd_branch_width() {
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 0);
    let cfg = AvcStemConfig {
        branch_width: 3,
        ..AvcStemConfig::new(7, 8)
    };
    assert!(matches!(AvcStem::new(&mut b, "a", cfg), Err(Error::Config(_))));
    assert!(AvcStem::new(&mut b, "b", AvcStemConfig::new(7, 8)).is_ok());
}

// ---------- gradients, purity, accounting ----------

const OPTS: GradCheckOptions = GradCheckOptions::extrapolated(1e-3, 1e-5);

/// Inference is checked with running statistics calibrated on `x`, so no
/// branch is dwarfed by a residual path.
fn assert_grads<B: Block>(name: &str, store: &ParamStore, block: &B, x: Tensor4) {
    let mut calibrated = store.clone();
    calibrate(&mut calibrated, block, &x).unwrap();
    for (mode, store) in [(Mode::Train, store), (Mode::Infer, &calibrated)] {
        let rep = check_block_gradients(store, block, &x, mode, OPTS).unwrap();
        assert!(
            rep.passed(),
            "{name} {mode:?}: rel err {} at {:?}",
            rep.max_rel_error,
            rep.worst
        );
    }
}

#[test]
fn block_gradients_cbam_mbconv_bsblock() {
    let (s, b) = build(40, |b| Cbam::new(b, "cbam", 8, 4));
    assert_grads("cbam", &s, &b, rand_tensor(Shape4::new(1, 8, 6, 6), 41));
    let (s, b) = build(42, |b| MbConv::new(b, "mb", MbConvConfig::new(4, 4, 1)));
    assert_grads("mbconv", &s, &b, rand_tensor(Shape4::new(1, 4, 6, 6), 43));
    let (s, b) = build(44, |b| MbConv::new(b, "mb", MbConvConfig::new(4, 8, 2)));
    assert_grads("mbconv_s2", &s, &b, rand_tensor(Shape4::new(1, 4, 8, 8), 45));
    let (s, b) = build(46, |b| BsBlock::new(b, "bs", BsConfig::new(8)));
    assert_grads("bsblock", &s, &b, rand_tensor(Shape4::new(1, 8, 6, 7), 47));
}

#[test]
fn block_gradients_gsconv_family() {
    let (s, b) = build(48, |b| GsConv::new(b, "gs", GsConfig::new(6, 4)));
    assert_grads("gsconv", &s, &b, rand_tensor(Shape4::new(1, 6, 8, 8), 49));
    let (s, b) = build(50, |b| GsBottleneck::new(b, "gsb", 6));
    assert_grads("gs_bottleneck", &s, &b, rand_tensor(Shape4::new(1, 6, 6, 6), 51));
}

#[test]
fn block_gradients_vkconv_avcstem() {
    let (mut s, b) = build(52, |b| VkConv::new(b, "vk", VkConfig::new(4, 6)));
    let shape = s.value(b.offset.weight).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    *s.value_mut(b.offset.weight) = Tensor4::uniform(shape, -0.5, 0.5, &mut rng);
    assert_grads("vkconv", &s, &b, rand_tensor(Shape4::new(1, 4, 6, 6), 54));
    let (s, b) = build(55, |b| AvcStem::new(b, "avc", AvcStemConfig::new(6, 4)));
    assert_grads("avcstem", &s, &b, rand_tensor(Shape4::new(1, 6, 6, 6), 56));
}

#[test]
fn inference_is_pure() {
    let (s, b) = build(57, |b| AvcStem::new(b, "avc", AvcStemConfig::new(8, 8)));
    let x = rand_tensor(Shape4::new(1, 8, 7, 7), 58);
    let a = run(&s, &b, &x, Mode::Infer);
    let c = run(&s, &b, &x, Mode::Infer);
    let bits = |t: &Tensor4| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&c));
    let (s, b) = build(59, |b| MbConv::new(b, "mb", MbConvConfig::new(8, 8, 1)));
    let x = rand_tensor(Shape4::new(1, 8, 7, 7), 60);
    assert_eq!(bits(&run(&s, &b, &x, Mode::Infer)), bits(&run(&s, &b, &x, Mode::Infer)));
}

#[test]
fn described_params_equal_allocated_params() {
    let input = Shape4::new(1, 8, 12, 12);
    let check = |store: &ParamStore, layers: Vec<_>| {
        let r = CostReport::tally(&layers).unwrap();
        assert_eq!(r.total_params as usize, store.trainable_scalars());
        assert_eq!(r.total_params, r.rows.iter().map(|x| x.params).sum::<u64>());
        assert_eq!(r.total_flops, r.rows.iter().map(|x| x.flops).sum::<u64>());
    };
    let (s, b) = build(61, |b| MbConv::new(b, "mb", MbConvConfig::new(8, 8, 1)));
    let mut l = Vec::new();
    assert_eq!(b.describe(input, &mut l).unwrap(), input);
    check(&s, l);
    let (s, b) = build(62, |b| BsBlock::new(b, "bs", BsConfig::new(8)));
    let mut l = Vec::new();
    b.describe(input, &mut l).unwrap();
    assert!(l.iter().any(|d| d.note.as_deref().is_some_and(|n| n.ends_with("ratio 1/16"))));
    check(&s, l);
    let (s, b) = build(63, |b| GsConv::new(b, "gs", GsConfig::new(8, 8)));
    let mut l = Vec::new();
    assert_eq!(b.describe(input, &mut l).unwrap(), Shape4::new(1, 16, 6, 6));
    check(&s, l);
    let (s, b) = build(64, |b| AvcStem::new(b, "avc", AvcStemConfig::new(8, 6)));
    let mut l = Vec::new();
    assert_eq!(b.describe(input, &mut l).unwrap(), input.with_c(6));
    check(&s, l);
}
