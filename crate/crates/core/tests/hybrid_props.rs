mod common;

use common::*;
use jbsv::corpus::Label;
use jbsv::hybrid::*;
use jbsv::jb::{score_llr, JbModel};
use jbsv::synth::{generate, SynthConfig};
use jbsv::transform::{fit_lda, LdaTransform};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-5;

fn small_problem(seed: u64, variant: Variant) -> (SiameseModel, DMatrix<f64>, Vec<Pair>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (l, d) = (6, 4);
    let mut model = init_random(l, d, seed, variant).with_mean(randv(l, &mut rng) * 0.1).unwrap();
    // move the calibration away from its trivial starting point
    match &mut model.head {
        Head::TwoBranch { alpha, beta, .. } => {
            *alpha = 0.8 + rng.random::<f64>();
            *beta = rng.random::<f64>() - 0.5;
        }
        Head::Mahalanobis { d0, lambda, .. } => {
            *d0 = 0.5 + rng.random::<f64>();
            *lambda = 0.8 + rng.random::<f64>();
        }
    }
    let x = randn(16, l, &mut rng);
    let batch = (0..8)
        .map(|k| Pair {
            i: 2 * k,
            j: 2 * k + 1,
            label: if k % 3 == 0 { Label::Same } else { Label::Different },
        })
        .collect();
    (model, x, batch)
}

#[test]
fn gradients_match_finite_differences() {
    for variant in [Variant::TwoBranch, Variant::Mahalanobis] {
        for kind in [LossKind::Bce, LossKind::Wbce, LossKind::Dem] {
            for seed in 0..3 {
                let (model, x, batch) = small_problem(seed, variant);
                let cfg = LossConfig {
                    kind,
                    p_tar: 0.3,
                    c_miss: 1.0,
                    c_fa: 2.0,
                    w_s: 0.4,
                };
                for (param, err) in fd_check(&model, &x, &batch, &cfg, FD_STEP) {
                    assert!(err < FD_TOL, "{variant} {kind} seed {seed} {param}: rel err {err:.3e}");
                }
            }
        }
    }
}

fn pipeline_pair(seed: u64) -> (LdaTransform, JbModel, jbsv::EmbeddingSet) {
    let (set, _) = generate(&SynthConfig::gaussian(60, 4, 8, seed)).unwrap();
    let lda = fit_lda(&set, 5).unwrap();
    let h = lda.transform_set(&set, true).unwrap();
    let jb = jbsv::jb::fit_jb_em(h.vectors(), h.speakers(), &Default::default()).unwrap();
    (lda, jb, set)
}

#[test]
fn init_reproduces_generative_scores() {
    let (lda, jb, set) = pipeline_pair(1);
    let model = init_from_generative(&lda, &jb).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for _ in 0..100 {
        let i = rng.random_range(0..set.len());
        let j = rng.random_range(0..set.len());
        let (xi, xj) = (set.vector(i), set.vector(j));
        let (r, f) = forward(&model, &xi, &xj).unwrap();
        let expect = score_llr(&jb, &lda.pipeline(&xi).unwrap(), &lda.pipeline(&xj).unwrap()).unwrap();
        assert!((r - expect).abs() < 1e-10, "{r} vs {expect}");
        assert!(f > 0.0 && f < 1.0);
    }
}

#[test]
fn a_equals_g_is_negated_distance() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let base = init_random(7, 5, 3, Variant::TwoBranch).with_mean(randv(7, &mut rng)).unwrap();
    let Head::TwoBranch { p_a, p_g, .. } = &base.head else { unreachable!() };
    for (mode, p) in [(RestrictMode::GFromA, p_a.clone()), (RestrictMode::AFromG, p_g.clone())] {
        let tied = restrict(&base, mode).unwrap();
        let md = to_mahalanobis(&base, p).unwrap();
        for _ in 0..200 {
            let (xi, xj) = (randv(7, &mut rng), randv(7, &mut rng));
            let (r, _) = forward(&tied, &xi, &xj).unwrap();
            let (d, _) = forward_md(&md, &xi, &xj).unwrap();
            assert!((r + d).abs() < 1e-10);
            assert!(d >= 0.0);
        }
    }
}

#[test]
fn restricted_scores_follow_formulas() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let base = init_random(5, 3, 9, Variant::TwoBranch);
    let Head::TwoBranch { p_a, p_g, .. } = &base.head else { unreachable!() };
    let g_only = restrict(&base, RestrictMode::GOnly).unwrap();
    let a_only = restrict(&base, RestrictMode::AOnly).unwrap();
    for _ in 0..100 {
        let (xi, xj) = (randv(5, &mut rng), randv(5, &mut rng));
        let ui = base.w.tr_mul(&xi).normalize();
        let uj = base.w.tr_mul(&xj).normalize();
        let expect_g = 2.0 * p_g.tr_mul(&ui).dot(&p_g.tr_mul(&uj));
        let expect_a = -p_a.tr_mul(&ui).norm_squared() - p_a.tr_mul(&uj).norm_squared();
        assert!((forward(&g_only, &xi, &xj).unwrap().0 - expect_g).abs() < 1e-10);
        assert!((forward(&a_only, &xi, &xj).unwrap().0 - expect_a).abs() < 1e-10);
    }
}

#[test]
fn sampler_labels_audit() {
    let (set, _) = generate(&SynthConfig::gaussian(40, 3, 2, 5)).unwrap();
    let cfg = TrainConfig {
        batch_size: 1000,
        ..Default::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let mut violations = 0;
    for _ in 0..10 {
        let batch = sample_minibatch(&set, &cfg, &mut rng).unwrap();
        assert_eq!(batch.len(), 1000);
        assert_eq!(batch.iter().filter(|p| p.label.is_same()).count(), 100);
        for p in &batch {
            let same = set.speakers()[p.i] == set.speakers()[p.j];
            if same != p.label.is_same() || p.i == p.j {
                violations += 1;
            }
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn adam_is_deterministic_and_lr_zero_is_noop() {
    let (model, x, batch) = small_problem(7, Variant::TwoBranch);
    let cfg = LossConfig::new(LossKind::Dem);
    let (_, g) = grad(&model, &x, &batch, &cfg, &[]).unwrap();
    let mut a = model.clone();
    let mut b = model.clone();
    let mut sa = AdamState::new(&model);
    let mut sb = AdamState::new(&model);
    adam_step(&mut a, &g, &mut sa, 0.01).unwrap();
    adam_step(&mut b, &g, &mut sb, 0.01).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    let mut c = model.clone();
    adam_step(&mut c, &g, &mut AdamState::new(&model), 0.0).unwrap();
    assert_eq!(c, model);
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let (model, x, batch) = small_problem(8, Variant::TwoBranch);
    let (_, g) = grad(&model, &x, &batch, &LossConfig::new(LossKind::Bce), &[]).unwrap();
    let mut bad = g.as_model().clone();
    if let Head::TwoBranch { p_g, .. } = &mut bad.head {
        p_g[(0, 0)] = f64::NAN;
    }
    let bad = Gradients::from_values(bad);
    let mut m = model.clone();
    let err = adam_step(&mut m, &bad, &mut AdamState::new(&model), 0.01).unwrap_err();
    assert!(err.to_string().contains("P_G"), "{err}");
}

#[test]
fn train_zero_epochs_is_identity() {
    let (set, _) = generate(&SynthConfig::gaussian(20, 4, 3, 9)).unwrap();
    let model = init_random(3, 2, 1, Variant::TwoBranch);
    let cfg = TrainConfig {
        epochs: 0,
        ..Default::default()
    };
    let out = train(&model, &set, &cfg, &LossConfig::default()).unwrap();
    assert_eq!(out.model, model);
    assert!(out.history.is_empty());
}

#[test]
fn train_is_deterministic_and_never_worse() {
    let (lda, jb, set) = pipeline_pair(10);
    let init = init_from_generative(&lda, &jb).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 256,
        lr: 0.002,
        seed: 3,
        ..Default::default()
    };
    let lcfg = LossConfig::new(LossKind::Dem);
    let a = train(&init, &set, &cfg, &lcfg).unwrap();
    let b = train(&init, &set, &cfg, &lcfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(history_csv(&a.history), history_csv(&b.history));
    assert_eq!(a.history.len(), 5);
    assert!(a.best_val_loss().unwrap() <= a.initial_val_loss.unwrap());
    let c = train(&init, &set, &TrainConfig { seed: 4, ..cfg.clone() }, &lcfg).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn frozen_parameters_stay_put() {
    let (lda, jb, set) = pipeline_pair(11);
    let init = init_from_generative(&lda, &jb).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 128,
        lr: 0.01,
        freeze: vec![Param::W, Param::Alpha, Param::Beta],
        ..Default::default()
    };
    let out = train(&init, &set, &cfg, &LossConfig::new(LossKind::Bce)).unwrap();
    assert_eq!(out.model.w, init.w);
    if let (Head::TwoBranch { alpha, beta, .. }, Head::TwoBranch { p_a, .. }) = (&out.model.head, &init.head) {
        assert_eq!((*alpha, *beta), (1.0, 0.0));
        if out.best_epoch > 0 {
            let Head::TwoBranch { p_a: trained, .. } = &out.model.head else { unreachable!() };
            assert_ne!(trained, p_a);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn calibration_is_monotone(
        seed in 0u64..1000,
        alpha in 0.01f64..5.0,
        beta in -3.0f64..3.0,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut m = init_random(4, 3, seed, Variant::TwoBranch);
        if let Head::TwoBranch { alpha: a, beta: b, .. } = &mut m.head {
            *a = alpha;
            *b = beta;
        }
        let pairs: Vec<(DVector<f64>, DVector<f64>)> = (0..6).map(|_| (randv(4, &mut rng), randv(4, &mut rng))).collect();
        let mut scored: Vec<(f64, f64)> = pairs.iter().map(|(a, b)| forward(&m, a, b).unwrap()).collect();
        scored.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        for w in scored.windows(2) {
            prop_assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn dem_loss_is_bounded(
        fs in prop::collection::vec(0.0f64..=1.0, 2..20),
        p_tar in 0.001f64..0.999,
        c_miss in 0.0f64..5.0,
        c_fa in 0.01f64..5.0,
    ) {
        let batch: Vec<Scored> = fs.iter().enumerate().map(|(k, &f)| Scored {
            r: 0.0,
            f,
            label: if k == 0 { Label::Same } else if k == 1 { Label::Different } else if k % 2 == 0 { Label::Same } else { Label::Different },
        }).collect();
        let cfg = LossConfig { kind: LossKind::Dem, p_tar, c_miss, c_fa, w_s: 0.5 };
        let v = loss(&batch, &cfg).unwrap();
        prop_assert!(v >= 0.0 && v <= cfg.dem_max() + 1e-12);
    }

    #[test]
    fn restrict_tied_matches_mahalanobis(seed in 0u64..1000) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let base = init_random(5, 4, seed, Variant::TwoBranch);
        let Head::TwoBranch { p_a, .. } = &base.head else { unreachable!() };
        let tied = restrict(&base, RestrictMode::GFromA).unwrap();
        let md = to_mahalanobis(&base, p_a.clone()).unwrap();
        let (xi, xj) = (randv(5, &mut rng), randv(5, &mut rng));
        let r = forward(&tied, &xi, &xj).unwrap().0;
        let d = forward_md(&md, &xi, &xj).unwrap().0;
        prop_assert!((r + d).abs() < 1e-10);
    }

    #[test]
    fn model_text_roundtrip(seed in 0u64..1000, mahalanobis in any::<bool>()) {
        let variant = if mahalanobis { Variant::Mahalanobis } else { Variant::TwoBranch };
        let m = init_random(4, 3, seed, variant);
        prop_assert_eq!(SiameseModel::from_text(&m.to_text()).unwrap(), m);
    }
}
