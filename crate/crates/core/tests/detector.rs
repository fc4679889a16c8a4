use std::f64::consts::LN_2;

use irstd_core::blocks::{Ctx, Mode};
use irstd_core::detector::*;
use irstd_core::tensor::gradcheck::relative_error;
use irstd_core::tensor::param::ParamTensor;
use irstd_core::{Error, Shape4, Tape, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro_config() -> ModelConfig {
    ModelConfig {
        input_size: 64,
        stem_width: 4,
        widths: [4, 4, 8, 8],
        reg_bins: 4,
        ..ModelConfig::default()
    }
}

fn rand_image(shape: Shape4, seed: u64) -> Tensor4 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::uniform(shape, 0.0, 1.0, &mut rng)
}

fn labeled(x1: f64, y1: f64, x2: f64, y2: f64) -> LabeledBox {
    LabeledBox {
        bbox: BBox::new(x1, y1, x2, y2),
        class: 0,
    }
}

/// Head outputs with every classification logit at `cls` and every bin
/// logit at zero.
fn flat_heads(cfg: &ModelConfig, n: usize, cls: f64) -> Vec<Tensor4> {
    (0..3)
        .map(|s| {
            let g = cfg.grid(s);
            Tensor4::from_fn(Shape4::new(n, cfg.head_channels(), g, g), |_, c, _, _| {
                if c < cfg.num_classes {
                    cls
                } else {
                    0.0
                }
            })
        })
        .collect()
}

fn random_heads(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Tensor4> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|s| {
            let g = cfg.grid(s);
            Tensor4::uniform(Shape4::new(n, cfg.head_channels(), g, g), -2.0, 2.0, &mut rng)
        })
        .collect()
}

// ---------- model ----------

#[test]
fn tiny_model_grids_and_channels() {
    let cfg = ModelConfig::default();
    assert_eq!([cfg.grid(0), cfg.grid(1), cfg.grid(2)], [12, 6, 3]);
    assert_eq!(cfg.head_channels(), 1 + 4 * 8);
    let (model, store) = build_model(&cfg, 0).unwrap();
    let heads = infer(&model, &store, &rand_image(Shape4::new(1, 1, 96, 96), 1)).unwrap();
    for (h, g) in heads.iter().zip([12, 6, 3]) {
        assert_eq!(h.shape(), Shape4::new(1, 33, g, g));
        assert!(h.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn classification_bias_starts_at_prior() {
    let (_, store) = build_model(&ModelConfig::default(), 0).unwrap();
    for s in 3..6 {
        let id = store.find(&format!("head{s}.cls_out.bias")).unwrap();
        assert!(store.value(id).data().iter().all(|&v| v == CLS_PRIOR_BIAS));
    }
}

#[test]
fn invalid_configs_rejected() {
    let base = ModelConfig::default();
    for cfg in [
        ModelConfig {
            depths: [2, 2],
            ..base.clone()
        },
        ModelConfig {
            strides: [4, 8, 16],
            ..base.clone()
        },
        ModelConfig {
            input_size: 100,
            ..base.clone()
        },
        ModelConfig {
            widths: [8, 0, 32, 64],
            ..base.clone()
        },
    ] {
        assert!(matches!(build_model(&cfg, 0), Err(Error::Config(_))), "{cfg:?}");
    }
    assert!(build_model(
        &ModelConfig {
            depths: [3, 6],
            ..base.clone()
        },
        0
    )
    .is_ok());
}

#[test]
fn wrong_input_shape_is_dimension_error() {
    let (model, store) = build_model(&ModelConfig::default(), 0).unwrap();
    let err = infer(&model, &store, &rand_image(Shape4::new(1, 1, 64, 64), 1)).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}

// ---------- losses ----------

#[test]
fn bce_scalar_cases() {
    assert!((bce_loss(&[0.5], &[1.0]).unwrap() - LN_2).abs() < 1e-9);
    assert!(bce_loss(&[1.0], &[1.0]).unwrap() < 1e-6);
    assert!(bce_loss(&[0.0], &[0.0]).unwrap() < 1e-6);
    // clamping keeps saturated mistakes finite
    let worst = bce_loss(&[0.0], &[1.0]).unwrap();
    assert!((worst + PROB_CLAMP.ln()).abs() < 1e-9);
    let mean = bce_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
    assert!((mean - LN_2).abs() < 1e-12);
    assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
}

#[test]
fn ciou_worked_disjoint_squares() {
    let a = BBox::from_center(0.0, 0.0, 1.0, 1.0);
    let b = BBox::from_center(2.0, 0.0, 1.0, 1.0);
    let p = ciou_parts(&a, &b).unwrap();
    assert_eq!(p.iou, 0.0);
    assert!((p.distance - 0.4).abs() < 1e-12);
    assert_eq!(p.aspect, 0.0);
    assert!((ciou_loss(&a, &b).unwrap() - 1.4).abs() < 1e-9);
}

#[test]
fn ciou_self_is_zero_on_random_boxes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let x = rng.random_range(-50.0..50.0);
        let y = rng.random_range(-50.0..50.0);
        let b = BBox::new(x, y, x + rng.random_range(0.1..30.0), y + rng.random_range(0.1..30.0));
        assert!(ciou_loss(&b, &b).unwrap().abs() < 1e-12);
    }
}

#[test]
fn ciou_equal_aspect_has_no_shape_term() {
    let a = BBox::new(0.0, 0.0, 4.0, 2.0);
    let b = BBox::new(1.0, 0.5, 9.0, 4.5);
    let p = ciou_parts(&a, &b).unwrap();
    assert!(p.aspect.abs() < 1e-15);
    assert!((p.loss - (1.0 - p.iou + p.distance)).abs() < 1e-15);
}

#[test]
fn ciou_zero_area_ground_truth_is_error() {
    let a = BBox::new(0.0, 0.0, 1.0, 1.0);
    for gt in [BBox::new(0.0, 0.0, 0.0, 1.0), BBox::new(0.0, 0.0, 1.0, 0.0)] {
        assert!(matches!(ciou_loss(&a, &gt), Err(Error::DegenerateBox(_))));
    }
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (-40.0..40.0f64, -40.0..40.0f64, 0.05..25.0f64, 0.05..25.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn ciou_parts_in_range(a in arb_box(), b in arb_box()) {
        let p = ciou_parts(&a, &b).unwrap();
        prop_assert!(p.loss >= 0.0);
        prop_assert!((0.0..1.0).contains(&p.distance));
        prop_assert!((0.0..=1.0).contains(&p.aspect));
        prop_assert!((0.0..=1.0).contains(&p.iou));
    }

    #[test]
    fn ciou_translation_invariant(a in arb_box(), b in arb_box(), dx in -30.0..30.0f64, dy in -30.0..30.0f64) {
        let l0 = ciou_loss(&a, &b).unwrap();
        let l1 = ciou_loss(&a.translate(dx, dy), &b.translate(dx, dy)).unwrap();
        prop_assert!((l0 - l1).abs() < 1e-9);
    }

    #[test]
    fn bce_decreasing_in_p_for_positive(p in 0.01..0.98f64, d in 0.001..0.01f64) {
        prop_assert!(bce_loss(&[p + d], &[1.0]).unwrap() < bce_loss(&[p], &[1.0]).unwrap());
        prop_assert!(bce_loss(&[p], &[1.0]).unwrap() >= 0.0);
    }

    #[test]
    fn dfl_decreasing_in_p_at_integer_target(p in 0.01..0.98f64, d in 0.001..0.01f64, t in 0usize..7) {
        let fp = FocalParams::default();
        let dist = |q: f64| {
            let mut v = vec![(1.0 - q) / 7.0; 8];
            v[t] = q;
            v
        };
        let lo = dfl_loss(&dist(p), t as f64, fp).unwrap().0;
        let hi = dfl_loss(&dist(p + d), t as f64, fp).unwrap().0;
        prop_assert!(lo >= 0.0 && hi < lo);
    }

    #[test]
    fn nms_output_pairwise_below_threshold(
        raw in proptest::collection::vec((0.0..40.0f64, 0.0..40.0f64, 1.0..15.0f64, 0.3..1.0f64, 0usize..2), 0..25)
    ) {
        let dets: Vec<Detection> = raw
            .iter()
            .map(|&(x, y, s, score, class)| Detection { bbox: BBox::new(x, y, x + s, y + s), score, class })
            .collect();
        let kept = nms(dets, DEFAULT_NMS_IOU);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.class != b.class || iou(&a.bbox, &b.bbox) < DEFAULT_NMS_IOU);
                prop_assert!(a.score >= b.score);
            }
        }
    }
}

#[test]
fn focal_scalar_cases() {
    let unit = FocalParams { alpha: 1.0, gamma: 2.0 };
    assert!((focal_term(0.5, unit) - 0.25 * LN_2).abs() < 1e-9);
    let ce = FocalParams { alpha: 1.0, gamma: 0.0 };
    for p in [0.1, 0.5, 0.9] {
        assert!((focal_term(p, ce) + p.ln()).abs() < 1e-15);
    }
    assert_eq!(FocalParams::default(), FocalParams { alpha: 0.25, gamma: 2.0 });
}

#[test]
fn dfl_perfect_bin_and_interpolation() {
    let fp = FocalParams::default();
    let mut p = vec![0.0; 8];
    p[3] = 1.0;
    assert_eq!(dfl_loss(&p, 3.0, fp).unwrap(), (0.0, false));
    // fractional target weights the two bracketing bins linearly
    let q = vec![0.125; 8];
    let (v, _) = dfl_loss(&q, 2.25, fp).unwrap();
    assert!((v - focal_term(0.125, fp)).abs() < 1e-15);
    let unit = FocalParams { alpha: 1.0, gamma: 2.0 };
    let mut r = vec![0.0; 8];
    r[2] = 0.5;
    r[3] = 0.5;
    assert!((dfl_loss(&r, 2.5, unit).unwrap().0 - 0.25 * LN_2).abs() < 1e-9);
    assert!(dfl_loss(&q, 9.0, fp).unwrap().1);
    assert!(dfl_loss(&q, -1.0, fp).unwrap().1);
}

#[test]
fn loss_weight_defaults() {
    assert_eq!(
        LossWeights::default(),
        LossWeights {
            cls: 0.02,
            iou: 0.49,
            dfl: 0.49
        }
    );
    assert!(LossWeights {
        cls: -1.0,
        iou: 0.0,
        dfl: 0.0
    }
    .validate()
    .is_err());
}

fn sample_assignments(cfg: &ModelConfig) -> Vec<Assignment> {
    vec![
        assign_targets(&[labeled(20.0, 22.0, 26.0, 27.0), labeled(60.0, 40.0, 64.0, 46.0)], cfg).unwrap(),
        assign_targets(&[labeled(30.0, 60.0, 70.0, 90.0)], cfg).unwrap(),
    ]
}

#[test]
fn total_loss_projection_and_linearity() {
    let cfg = ModelConfig::default();
    let heads = random_heads(&cfg, 2, 3);
    let refs: Vec<&Tensor4> = heads.iter().collect();
    let asg = sample_assignments(&cfg);
    let fp = FocalParams::default();
    let at = |w: LossWeights| total_loss(&refs, &asg, &cfg, w, fp).unwrap().breakdown;

    let b = at(LossWeights::default());
    assert!(b.positives == 3 && b.bce > 0.0 && b.ciou > 0.0 && b.dfl > 0.0);
    let cls_only = at(LossWeights {
        cls: 1.0,
        iou: 0.0,
        dfl: 0.0,
    });
    assert_eq!(cls_only.total, cls_only.bce);

    let w = LossWeights {
        cls: 0.3,
        iou: 0.7,
        dfl: 1.1,
    };
    let expect = 0.3 * b.bce + 0.7 * b.ciou + 1.1 * b.dfl;
    assert!((at(w).total - expect).abs() < 1e-12);
    let d = LossWeights::default();
    let doubled = at(LossWeights {
        cls: 2.0 * d.cls,
        iou: 2.0 * d.iou,
        dfl: 2.0 * d.dfl,
    });
    assert!((doubled.total - 2.0 * b.total).abs() < 1e-12);
}

#[test]
fn total_loss_without_positives_keeps_classification() {
    let cfg = ModelConfig::default();
    let heads = flat_heads(&cfg, 1, 0.0);
    let refs: Vec<&Tensor4> = heads.iter().collect();
    let out = total_loss(&refs, &[Assignment::default()], &cfg, LossWeights::default(), FocalParams::default()).unwrap();
    let b = out.breakdown;
    assert_eq!((b.ciou, b.dfl, b.positives), (0.0, 0.0, 0));
    assert!((b.bce - LN_2).abs() < 1e-12);
    assert!((b.total - 0.02 * LN_2).abs() < 1e-12);
}

#[test]
fn total_loss_gradient_matches_difference() {
    let cfg = ModelConfig::default();
    let heads = random_heads(&cfg, 2, 11);
    let asg = sample_assignments(&cfg);
    let (w, fp) = (LossWeights::default(), FocalParams::default());
    let value = |hs: &[Tensor4]| {
        let r: Vec<&Tensor4> = hs.iter().collect();
        total_loss(&r, &asg, &cfg, w, fp).unwrap().breakdown.total
    };
    let grads = {
        let r: Vec<&Tensor4> = heads.iter().collect();
        total_loss(&r, &asg, &cfg, w, fp).unwrap().grads
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // all positive-cell channels plus a random sample elsewhere
    let mut probes = Vec::new();
    for a in &asg {
        for t in &a.targets {
            for c in 0..cfg.head_channels() {
                let sh = heads[t.scale].shape();
                for img in 0..2 {
                    probes.push((t.scale, sh.index(img, c, t.row, t.col)));
                }
            }
        }
    }
    for _ in 0..50 {
        let s = rng.random_range(0..3);
        probes.push((s, rng.random_range(0..heads[s].numel())));
    }
    for (s, i) in probes {
        let h = 1e-5;
        let mut plus = heads.clone();
        plus[s].data_mut()[i] += h;
        let mut minus = heads.clone();
        minus[s].data_mut()[i] -= h;
        let num = (value(&plus) - value(&minus)) / (2.0 * h);
        let err = relative_error(num, grads[s][i]);
        assert!(err < 1e-5, "scale {s} index {i}: numeric {num}, analytic {}", grads[s][i]);
    }
}

// ---------- assignment ----------

#[test]
fn scale_ranges() {
    let st = [8, 16, 32];
    assert_eq!(scale_for_size(10.0, &st), 0);
    assert_eq!(scale_for_size(3.0, &st), 0);
    assert_eq!(scale_for_size(63.9, &st), 0);
    assert_eq!(scale_for_size(64.0, &st), 1);
    assert_eq!(scale_for_size(127.0, &st), 1);
    assert_eq!(scale_for_size(200.0, &st), 2);
    assert_eq!(scale_for_size(500.0, &st), 2);
}

#[test]
fn ten_pixel_box_goes_to_stride_eight() {
    let cfg = ModelConfig::default();
    let a = assign_targets(&[labeled(40.0, 40.0, 50.0, 50.0)], &cfg).unwrap();
    assert_eq!(a.targets.len(), 1);
    let t = a.targets[0];
    assert_eq!((t.scale, t.row, t.col), (0, 5, 5));
}

#[test]
fn distinct_cells_give_two_positives() {
    let cfg = ModelConfig::default();
    let a = assign_targets(&[labeled(2.0, 2.0, 6.0, 6.0), labeled(50.0, 70.0, 56.0, 75.0)], &cfg).unwrap();
    assert_eq!(a.targets.len(), 2);
    assert!(a.at(0, 0, 0).is_some() && a.at(0, 9, 6).is_some());
}

#[test]
fn shared_cell_goes_to_larger_box() {
    let cfg = ModelConfig::default();
    let small = labeled(41.0, 41.0, 44.0, 44.0);
    let large = labeled(40.0, 40.0, 46.0, 46.0);
    for gts in [[small, large], [large, small]] {
        let a = assign_targets(&gts, &cfg).unwrap();
        assert_eq!(a.targets.len(), 1);
        assert_eq!(a.targets[0].bbox, large.bbox);
    }
}

#[test]
fn zero_area_ground_truth_rejected() {
    let cfg = ModelConfig::default();
    assert!(matches!(
        assign_targets(&[labeled(4.0, 4.0, 4.0, 9.0)], &cfg),
        Err(Error::DegenerateBox(_))
    ));
}

// ---------- decoding ----------

#[test]
fn saturated_negative_logits_decode_to_nothing() {
    let cfg = ModelConfig::default();
    let heads = flat_heads(&cfg, 1, -1e3);
    let refs: Vec<&Tensor4> = heads.iter().collect();
    assert!(decode(&refs, 0, &cfg, DEFAULT_SCORE_THRESH, DEFAULT_NMS_IOU).unwrap().is_empty());
}

#[test]
fn one_hot_cell_decodes_one_box() {
    let cfg = ModelConfig::default();
    let mut heads = flat_heads(&cfg, 1, -20.0);
    heads[0].set(0, 0, 4, 7, 3.0);
    // left side peaked at bin 2, others uniform (expectation 3.5)
    heads[0].set(0, 1 + 2, 4, 7, 40.0);
    let refs: Vec<&Tensor4> = heads.iter().collect();
    let dets = decode(&refs, 0, &cfg, DEFAULT_SCORE_THRESH, DEFAULT_NMS_IOU).unwrap();
    assert_eq!(dets.len(), 1);
    let (cx, cy) = (7.5 * 8.0, 4.5 * 8.0);
    let b = dets[0].bbox;
    assert!((b.x1 - (cx - 2.0 * 8.0)).abs() < 1e-9);
    assert!((b.y1 - (cy - 3.5 * 8.0)).abs() < 1e-12);
    assert!((b.x2 - (cx + 3.5 * 8.0)).abs() < 1e-12);
    assert!((dets[0].score - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-15);
}

#[test]
fn nms_hand_trace() {
    let b = BBox::new(0.0, 0.0, 10.0, 10.0);
    let kept = nms(
        vec![
            Detection {
                bbox: b,
                score: 0.8,
                class: 0,
            },
            Detection {
                bbox: b,
                score: 0.9,
                class: 0,
            },
        ],
        0.45,
    );
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].score, 0.9);
}

#[test]
fn decode_rejects_bad_thresholds() {
    let cfg = ModelConfig::default();
    let heads = flat_heads(&cfg, 1, 0.0);
    let refs: Vec<&Tensor4> = heads.iter().collect();
    assert!(decode(&refs, 0, &cfg, 0.0, 0.45).is_err());
    assert!(decode(&refs, 0, &cfg, 0.25, 1.0).is_err());
}

// ---------- schedule and optimizer ----------

#[test]
fn schedule_endpoints() {
    let tc = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let s = Schedule::new(&tc, 10);
    assert_eq!(s.warmup_steps, 30);
    assert!((s.lr(0) - 0.001 / 30.0).abs() < 1e-18);
    assert!((s.lr(29) - 0.001).abs() < 1e-15);
    assert!((s.lr(30) - 0.001).abs() < 1e-15);
    assert!((s.lr(199) - 0.0005).abs() < 1e-15);
    assert!((s.beta1(0) - 0.8).abs() < 1e-15);
    assert_eq!(s.beta1(30), 0.937);
    for step in 30..199 {
        assert!(s.lr(step + 1) <= s.lr(step));
    }
    for step in 0..29 {
        assert!(s.lr(step + 1) > s.lr(step) && s.beta1(step + 1) > s.beta1(step));
    }
}

#[test]
fn train_config_validation() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    assert_eq!((ok.batch, ok.lr0, ok.weight_decay, ok.warmup_epochs), (16, 0.001, 0.0005, 3));
    for bad in [
        TrainConfig { lr0: 0.0, ..ok.clone() },
        TrainConfig {
            epochs: 2,
            warmup_epochs: 3,
            ..ok.clone()
        },
        TrainConfig {
            momentum: 1.0,
            ..ok.clone()
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn adamw_minimises_quadratic() {
    // f(x) = (x - 3)^2
    let opt = AdamW {
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut p = ParamTensor::new(Tensor4::scalar(0.0));
    let mut prod1 = 1.0;
    for t in 0..200 {
        let x = p.value.data()[0];
        let beta1 = 0.9;
        prod1 *= beta1;
        let bc = BiasCorrection {
            first: 1.0 - prod1,
            second: 1.0 - 0.999f64.powi(t + 1),
        };
        opt.update(&mut p, &[2.0 * (x - 3.0)], 0.1, beta1, bc, false);
    }
    assert!((p.value.data()[0] - 3.0).abs() < 0.05, "{}", p.value.data()[0]);
}

#[test]
fn weight_decay_only_shrinks_decayed_parameters() {
    let opt = AdamW {
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.5,
    };
    let bc = BiasCorrection { first: 1.0, second: 1.0 };
    let mut a = ParamTensor::new(Tensor4::scalar(2.0));
    let mut b = ParamTensor::new(Tensor4::scalar(2.0));
    opt.update(&mut a, &[0.0], 0.1, 0.9, bc, true);
    opt.update(&mut b, &[0.0], 0.1, 0.9, bc, false);
    assert!((a.value.data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    assert_eq!(b.value.data()[0], 2.0);
}

// ---------- whole pipeline ----------

#[test]
fn pipeline_gradients_match_differences() {
    let cfg = micro_config();
    let (model, mut store) = build_model(&cfg, 21).unwrap();
    let x = rand_image(Shape4::new(1, 1, 64, 64), 22);
    let asg = vec![assign_targets(&[labeled(20.0, 26.0, 27.0, 31.0), labeled(40.0, 8.0, 60.0, 24.0)], &cfg).unwrap()];
    let (w, fp) = (LossWeights::default(), FocalParams::default());
    let seed = 99;
    let grads = compute_gradients(&model, &store, &x, &asg, w, fp, seed).unwrap();
    let loss = |store: &_| compute_gradients(&model, store, &x, &asg, w, fp, seed).unwrap().loss.total;

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (id, g) in &grads.params {
        for _ in 0..2 {
            let i = rng.random_range(0..g.len());
            let h = 1e-5;
            let orig = store.value(*id).data()[i];
            store.value_mut(*id).data_mut()[i] = orig + h;
            let up = loss(&store);
            store.value_mut(*id).data_mut()[i] = orig - h;
            let down = loss(&store);
            store.value_mut(*id).data_mut()[i] = orig;
            let num = (up - down) / (2.0 * h);
            let err = relative_error(num, g[i]);
            assert!(err <= 1e-3, "{}[{i}]: numeric {num}, analytic {}", store.name(*id), g[i]);
            worst = worst.max(err);
            checked += 1;
        }
    }
    assert!(checked > 200);
    eprintln!("pipeline gradient check: {checked} entries, worst rel error {worst:.2e}");
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let cfg = micro_config();
    let x = rand_image(Shape4::new(2, 1, 64, 64), 31);
    let gts = vec![vec![labeled(20.0, 26.0, 27.0, 31.0)], vec![labeled(40.0, 8.0, 47.0, 14.0)]];
    let tc = TrainConfig {
        epochs: 12,
        warmup_epochs: 1,
        lr0: 0.01,
        batch: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let run = || {
        let (model, mut store) = build_model(&cfg, 3).unwrap();
        let sched = Schedule::new(&tc, 1);
        let mut st = TrainState::new(tc.seed);
        (0..tc.epochs)
            .map(|_| train_step(&model, &mut store, &mut st, &sched, &tc, &x, &gts).unwrap().loss.total)
            .collect::<Vec<f64>>()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert!(a.last().unwrap() < &a[0], "{a:?}");
}

#[test]
fn inference_forward_is_pure() {
    let cfg = micro_config();
    let (model, store) = build_model(&cfg, 8).unwrap();
    let x = rand_image(Shape4::new(2, 1, 64, 64), 9);
    let once = || {
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, Mode::Infer, 1);
        let xv = cx.tape.constant(x.clone());
        let heads = model.forward(&mut cx, xv).unwrap();
        heads.map(|h| tape.value(h).data().to_vec())
    };
    assert_eq!(once(), once());
}
