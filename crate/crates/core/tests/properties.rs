use proptest::prelude::*;

use srr_core::data::{normalize, split, synth_clusters};
use srr_core::genharness::{shift_weights, slope_stats, weighted_accuracy, ShiftTrial, ShiftTrialTable};
use srr_core::hvp::ObjectiveModel;
use srr_core::linalg::{dot, norm, scale, Matrix};
use srr_core::net::{Activation, LossKind};
use srr_core::oracle::AnalyticObjective;
use srr_core::spectral::{power_iteration, PowerIterationConfig};
use srr_core::validation::random_net_objective;

fn small_net(seed: u64) -> (srr_core::NetObjective, Vec<f64>) {
    random_net_objective(seed, 3, &[4], 2, Activation::Tanh, LossKind::MeanSquaredError, 5).unwrap()
}

fn direction(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (phase + 0.91 * i as f64).sin()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hvp_is_linear_in_direction(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0, p in 0.0f64..6.0) {
        let (obj, w) = small_net(seed);
        let n = obj.dim();
        let u = direction(n, p);
        let v = direction(n, p + 1.7);
        let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let lhs = obj.hvp(&w, &combo).unwrap();
        let hu = obj.hvp(&w, &u).unwrap();
        let hv = obj.hvp(&w, &v).unwrap();
        let rhs: Vec<f64> = hu.iter().zip(&hv).map(|(x, y)| a * x + b * y).collect();
        let scale_ref = norm(&hu).max(norm(&hv)) * (a.abs() + b.abs()) + 1e-12;
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - r).abs() <= 1e-10 * scale_ref);
        }
    }

    #[test]
    fn hessian_is_symmetric(seed in 0u64..1000, p in 0.0f64..6.0) {
        let (obj, w) = small_net(seed);
        let u = direction(obj.dim(), p);
        let v = direction(obj.dim(), p + 2.3);
        let uhv = dot(&u, &obj.hvp(&w, &v).unwrap());
        let vhu = dot(&v, &obj.hvp(&w, &u).unwrap());
        prop_assert!((uhv - vhu).abs() <= 1e-10 * (1.0 + uhv.abs()));
    }

    #[test]
    fn third_form_scales_quadratically(seed in 0u64..1000, c in -4.0f64..4.0, p in 0.0f64..6.0) {
        prop_assume!(c.abs() > 1e-3);
        let (obj, w) = small_net(seed);
        let v = direction(obj.dim(), p);
        let base = obj.third_form(&w, &v).unwrap();
        let scaled = obj.third_form(&w, &scale(c, &v)).unwrap();
        let want = scale(c * c, &base);
        let err = norm(&scaled.iter().zip(&want).map(|(a, b)| a - b).collect::<Vec<_>>());
        prop_assert!(err <= 1e-10 * norm(&want).max(1e-300));
    }

    #[test]
    fn batch_hvp_is_mean_of_sample_hvps(seed in 0u64..1000, p in 0.0f64..6.0) {
        let (obj, w) = small_net(seed);
        let v = direction(obj.dim(), p);
        let full = obj.hvp(&w, &v).unwrap();
        let rows = obj.inputs().rows();
        let mut mean = vec![0.0; obj.dim()];
        for r in 0..rows {
            let hv = obj.subset(&[r]).unwrap().hvp(&w, &v).unwrap();
            for (m, h) in mean.iter_mut().zip(hv) {
                *m += h / rows as f64;
            }
        }
        for (a, b) in full.iter().zip(&mean) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn rho_ignores_start_sign(seed in 0u64..1000, p in 0.0f64..6.0) {
        let (obj, w) = small_net(seed);
        let v = direction(obj.dim(), p);
        let v = scale(1.0 / norm(&v), &v);
        let neg = scale(-1.0, &v);
        let cfg = PowerIterationConfig { eps: 1e-10, max_iters: 200_000, ..Default::default() };
        let a = power_iteration(&obj, &w, &cfg, Some(&v)).unwrap();
        let b = power_iteration(&obj, &w, &cfg, Some(&neg)).unwrap();
        prop_assert!((a.rho - b.rho).abs() <= 1e-12 * (1.0 + a.rho));
        // Rayleigh consistency at exit.
        let q = dot(&a.v, &obj.hvp(&w, &a.v).unwrap());
        prop_assert!((q - a.lambda).abs() <= cfg.eps * (1.0 + a.lambda.abs()));
    }

    #[test]
    fn split_preserves_rows(seed in 0u64..1000, n in 10usize..60) {
        let ds = synth_clusters(n, 2, 2, 2.0, seed).unwrap();
        let (a, b, c) = split(&ds, (0.64, 0.16, 0.20), seed).unwrap();
        let mut rows: Vec<Vec<u64>> = Vec::new();
        for part in [&a, &b, &c] {
            for r in 0..part.len() {
                rows.push(part.features.row(r).iter().map(|x| x.to_bits()).collect());
            }
        }
        let mut orig: Vec<Vec<u64>> = (0..ds.len())
            .map(|r| ds.features.row(r).iter().map(|x| x.to_bits()).collect())
            .collect();
        rows.sort();
        orig.sort();
        prop_assert_eq!(rows, orig);
    }

    #[test]
    fn normalize_is_idempotent(seed in 0u64..1000) {
        let ds = synth_clusters(20, 3, 3, 5.0, seed).unwrap();
        let (_, once) = normalize(&ds).unwrap();
        let (_, twice) = normalize(&once).unwrap();
        for (a, b) in once.features.as_slice().iter().zip(twice.features.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn shift_weights_ignore_unshifted_columns(
        x in proptest::collection::vec(-3.0f64..3.0, 12),
        extra in proptest::collection::vec(-50.0f64..50.0, 6),
        d in proptest::collection::vec(-0.2f64..0.2, 2),
    ) {
        let base = Matrix::from_vec(6, 2, x.clone()).unwrap();
        let mut wide = Vec::new();
        for r in 0..6 {
            wide.extend_from_slice(&x[2 * r..2 * r + 2]);
            wide.push(extra[r]);
        }
        let wide = Matrix::from_vec(6, 3, wide).unwrap();
        let a = shift_weights(&base, &d).unwrap().weights;
        let b = shift_weights(&wide, &[d[0], d[1], 0.0]).unwrap().weights;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn equal_weights_give_plain_accuracy(correct in proptest::collection::vec(any::<bool>(), 1..200), w in 0.01f64..100.0) {
        let weights = vec![w; correct.len()];
        let hits = correct.iter().filter(|c| **c).count();
        let got = weighted_accuracy(&correct, &weights).unwrap();
        let want = hits as f64 / correct.len() as f64;
        if w == 1.0 {
            prop_assert_eq!(got, want);
        }
        prop_assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn self_comparison_slope_is_zero(accs in proptest::collection::vec(0.0f64..1.0, 3..40)) {
        let trials = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| ShiftTrial {
                trial_id: i,
                delta: vec![0.01 * i as f64],
                l1_norm: 0.01 * i as f64,
                accuracies: vec![a, a],
            })
            .collect();
        let table = ShiftTrialTable {
            model_names: vec!["m".into(), "m".into()],
            trials,
            unnormalized_columns: vec![],
        };
        let report = slope_stats(&table).unwrap();
        prop_assert_eq!(report.pairwise[0].fit.slope, 0.0);
        prop_assert_eq!(report.pairwise[0].fit.p_value, 1.0);
        prop_assert!(report.models.iter().all(|(_, f)| (0.0..=1.0).contains(&f.p_value)));
    }
}

#[test]
fn iterations_track_eigenvalue_ratio() {
    // Error shrinks like ratio^k, so squaring the ratio halves the count.
    let cfg = PowerIterationConfig {
        eps: 1e-10,
        max_iters: 10_000,
        ..Default::default()
    };
    let start = {
        let v = [1.0, 1.0, 1.0];
        scale(1.0 / norm(&v), &v)
    };
    let iters = |r: f64| {
        let obj = AnalyticObjective::diag_quadratic(&[1.0, r, r * r]);
        power_iteration(&obj, &[0.0; 3], &cfg, Some(&start)).unwrap().iters as f64
    };
    let slow = iters(0.8);
    let fast = iters(0.64);
    assert!((slow / fast - 2.0).abs() < 0.2, "{slow} vs {fast}");
}

#[test]
fn residual_is_monotone_on_constant_hessian() {
    let obj = AnalyticObjective::diag_quadratic(&[3.0, -2.0, 1.0, 0.5]);
    let v = scale(0.5, &[1.0, 1.0, 1.0, 1.0]);
    let mut last = f64::INFINITY;
    for k in 2..40 {
        let cfg = PowerIterationConfig {
            eps: 1e-300,
            max_iters: k,
            ..Default::default()
        };
        let r = power_iteration(&obj, &[0.0; 4], &cfg, Some(&v)).unwrap().residual;
        assert!(r <= last * (1.0 + 1e-12));
        last = r;
    }
}
