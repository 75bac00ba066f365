#![allow(clippy::needless_range_loop)]

mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{central_diff, train_head, LinearGaussian};
use snapuq::model::{ModelConfig, SnapModel};
use snapuq::nnet::{BackboneSpec, Tensor};
use snapuq::rng::seeded;
use snapuq::train::{clip_global_norm, compute_gradients, fit, fit_classifier, TrainConfig};

fn toy_model(seed: u64) -> SnapModel {
    let mut spec = BackboneSpec::mlp_default(2, 2);
    spec.widths = vec![2, 2];
    let mut model = SnapModel::init(&ModelConfig::new(spec), seed).unwrap();
    let mut rng = seeded(seed + 1);
    for p in model.params_mut() {
        p.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    model
}

fn toy_batch(n: usize, seed: u64) -> Vec<(Tensor, usize)> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let x = Tensor::from_vec(vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]);
            (x, rng.random_range(0..2))
        })
        .collect()
}

#[test]
fn joint_gradient_matches_finite_differences() {
    let cfg = TrainConfig {
        alpha_var: 0.05,
        alpha_wd: 0.01,
        ..TrainConfig::default()
    };
    let (lss, lreg) = (0.7, 0.3);
    for seed in 0..5 {
        let model = toy_model(seed);
        let batch = toy_batch(4, 100 + seed);
        let count: usize = model.params().iter().map(|p| p.len()).sum();
        assert!((25..=35).contains(&count), "toy has {count} parameters");
        let total = compute_gradients(&model, &batch, &cfg, false)
            .unwrap()
            .combine(lss, lreg);
        let flat: Vec<f64> = model
            .params()
            .iter()
            .flat_map(|p| p.data().to_vec())
            .collect();
        let loss_at = |w: &[f64]| {
            let mut m = model.clone();
            let mut off = 0;
            for p in m.params_mut() {
                let n = p.len();
                p.data_mut().copy_from_slice(&w[off..off + n]);
                off += n;
            }
            compute_gradients(&m, &batch, &cfg, false)
                .unwrap()
                .total_loss(lss, lreg)
        };
        let analytic: Vec<f64> = total.iter().flat_map(|t| t.data().to_vec()).collect();
        for j in 0..flat.len() {
            let fd = central_diff(&flat, j, 1e-6, loss_at);
            let err = (analytic[j] - fd).abs() / analytic[j].abs().max(fd.abs()).max(1e-3);
            assert!(
                err < 1e-5,
                "seed {seed} param {j}: analytic {} vs fd {fd}",
                analytic[j]
            );
        }
    }
}

#[test]
fn zero_auxiliary_weight_reproduces_classifier_training() {
    let cfg = TrainConfig {
        lambda_ss: 0.0,
        lambda_reg: 0.0,
        epochs: 3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let data = toy_batch(40, 7);
    let mut joint = toy_model(3);
    let mut plain = joint.backbone.clone();
    let log = fit(&mut joint, &data, None, &cfg).unwrap();
    let losses = fit_classifier(&mut plain, &data, &cfg).unwrap();
    for (a, b) in joint.backbone.params().iter().zip(plain.params()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    for (r, l) in log.records.iter().zip(&losses) {
        assert_eq!(r.clf_loss.to_bits(), l.to_bits());
    }
}

#[test]
fn detached_auxiliary_terms_leave_backbone_untouched() {
    let cfg = TrainConfig {
        alpha_var: 0.05,
        ..TrainConfig::default()
    };
    let model = toy_model(11);
    let nb = model.backbone_param_count();
    let batch = toy_batch(6, 12);
    let det = compute_gradients(&model, &batch, &cfg, true).unwrap();
    let att = compute_gradients(&model, &batch, &cfg, false).unwrap();
    for g in det.ss[..nb].iter().chain(&det.reg[..nb]) {
        assert!(g.data().iter().all(|v| *v == 0.0));
    }
    assert!(att.ss[..nb].iter().any(|g| g.sq_norm() > 0.0));
    // Head gradients do not depend on detaching.
    for (a, b) in det.ss[nb..].iter().zip(&att.ss[nb..]) {
        assert_eq!(a, b);
    }
}

proptest! {
    #[test]
    fn clipping_bounds_the_norm_and_keeps_direction(
        vals in prop::collection::vec(-50.0f64..50.0, 1..20),
        max_norm in 0.01f64..10.0,
    ) {
        let split = vals.len() / 2;
        let mut grads = vec![Tensor::from_vec(vals[..split].to_vec()), Tensor::from_vec(vals[split..].to_vec())];
        let before: f64 = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        let reported = clip_global_norm(&mut grads, max_norm);
        prop_assert!((reported - before).abs() <= 1e-9 * before.max(1.0));
        let after: Vec<f64> = grads.iter().flat_map(|t| t.data().to_vec()).collect();
        let norm = after.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= max_norm * (1.0 + 1e-12) || before <= max_norm);
        if before <= max_norm {
            prop_assert_eq!(&after, &vals);
        } else {
            let k = max_norm / before;
            for (a, v) in after.iter().zip(&vals) {
                prop_assert!((a - v * k).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }
}

#[test]
fn surprisal_loss_falls_on_linear_gaussian_dynamics() {
    let epochs = 30;
    let mut thirds = Vec::new();
    for seed in [13u64, 17, 23] {
        let dynamics = LinearGaussian::new(6, 6, seed);
        let data = dynamics.sample(600, &mut seeded(seed + 1000));
        let (_, losses) = train_head(&data, 6, epochs, seed);
        let third = epochs / 3;
        thirds.push(
            (0..3)
                .map(|k| losses[k * third..(k + 1) * third].iter().sum::<f64>() / third as f64)
                .collect::<Vec<_>>(),
        );
    }
    let median = |k: usize| {
        let mut v: Vec<f64> = thirds.iter().map(|t| t[k]).collect();
        v.sort_by(f64::total_cmp);
        v[1]
    };
    assert!(median(0) > median(1) && median(1) > median(2), "{thirds:?}");
}
