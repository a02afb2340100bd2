use srr_core::data::synth_clusters;
use srr_core::hvp::ObjectiveModel;
use srr_core::net::{Activation, LayerSpec, LossKind, Network};
use srr_core::oracle::AnalyticObjective;
use srr_core::seeds::{self, Stream};
use srr_core::train::{
    epoch_order, gd_train, sgd_train, sgd_train_observed, LrSchedule, Observe, RegularizerConfig, TrainConfig,
};
use srr_core::{Error, NetObjective};

fn cluster_net(d: usize, out: usize, seed: u64) -> Network {
    let specs = [
        LayerSpec::new(6, Activation::Tanh),
        LayerSpec::new(out, Activation::Identity),
    ];
    Network::init(d, &specs, &mut seeds::rng(seed, Stream::Init, 0)).unwrap()
}

#[test]
fn unregularized_sgd_matches_reference_loop() {
    let ds = synth_clusters(30, 3, 2, 2.0, 4).unwrap();
    let net = cluster_net(3, 1, 1);
    let targets = ds.targets();
    let cfg = TrainConfig {
        batch_size: 16,
        max_epochs: 4,
        seed: 9,
        convergence_grad_tol: 0.0,
        ..Default::default()
    };
    let report = sgd_train(&ds.features, &targets, &net, LossKind::SigmoidBinaryCrossEntropy, &cfg).unwrap();

    let full = NetObjective::new(net.clone(), ds.features.clone(), targets, LossKind::SigmoidBinaryCrossEntropy).unwrap();
    let mut w = net.params();
    for epoch in 1..=cfg.max_epochs {
        let alpha = cfg.alpha0 / epoch as f64;
        for chunk in epoch_order(cfg.seed, epoch, ds.len()).chunks(cfg.batch_size) {
            let g = full.subset(chunk).unwrap().gradient(&w).unwrap();
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= alpha * gi;
            }
        }
    }
    assert_eq!(report.final_weights, w);
    for rec in &report.records {
        assert_eq!(rec.h, rec.f);
        assert!(rec.rho > 0.0);
    }
}

#[test]
fn full_batch_sgd_agrees_with_gradient_descent() {
    let ds = synth_clusters(10, 2, 2, 2.0, 2).unwrap();
    let net = cluster_net(2, 1, 3);
    let targets = ds.targets();
    let cfg = TrainConfig {
        batch_size: ds.len(),
        max_epochs: 5,
        convergence_grad_tol: 0.0,
        ..Default::default()
    };
    let sgd = sgd_train(&ds.features, &targets, &net, LossKind::MeanSquaredError, &cfg).unwrap();
    let obj = NetObjective::new(net.clone(), ds.features.clone(), targets, LossKind::MeanSquaredError).unwrap();
    let gd = gd_train(&obj, &net.params(), &cfg).unwrap();
    assert_eq!(gd.steps, 5);
    for (a, b) in sgd.final_weights.iter().zip(&gd.final_weights) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn regularization_lowers_sharpness() {
    let ds = synth_clusters(40, 4, 2, 3.0, 6).unwrap();
    let targets = ds.targets();
    let run = |mu: f64| {
        let cfg = TrainConfig {
            batch_size: 20,
            max_epochs: 15,
            alpha0: 1.0,
            reg: RegularizerConfig::new(mu, 0.0),
            convergence_grad_tol: 0.0,
            record_exact_rho: true,
            ..Default::default()
        };
        let net = cluster_net(4, 1, 0);
        sgd_train(&ds.features, &targets, &net, LossKind::SigmoidBinaryCrossEntropy, &cfg).unwrap()
    };
    let plain = run(0.0);
    let reg = run(0.5);
    let last = |r: &srr_core::TrainReport| r.records.last().unwrap().rho_exact.unwrap();
    assert!(last(&reg) < last(&plain), "{} vs {}", last(&reg), last(&plain));
    for rec in &reg.records {
        assert!(rec.h >= rec.f);
    }
}

#[test]
fn observer_can_stop_early() {
    let ds = synth_clusters(10, 2, 2, 2.0, 0).unwrap();
    let net = cluster_net(2, 1, 0);
    let cfg = TrainConfig {
        batch_size: 5,
        max_epochs: 50,
        convergence_grad_tol: 0.0,
        ..Default::default()
    };
    let mut seen = 0;
    let report = sgd_train_observed(&ds.features, &ds.targets(), &net, LossKind::MeanSquaredError, &cfg, |rec, _| {
        seen += 1;
        Ok(if rec.epoch == 3 { Observe::Stop } else { Observe::Continue })
    })
    .unwrap();
    assert_eq!(seen, 3);
    assert_eq!(report.records.len(), 3);
}

#[test]
fn runaway_step_reports_divergence() {
    let obj = AnalyticObjective::monomial(1.0, 4);
    let cfg = TrainConfig {
        alpha0: 10.0,
        schedule: LrSchedule::Constant,
        max_epochs: 50,
        convergence_grad_tol: 0.0,
        ..Default::default()
    };
    match gd_train(&obj, &[3.0], &cfg) {
        Err(Error::Divergence { step }) => assert!(step > 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn training_is_reproducible() {
    let ds = synth_clusters(25, 3, 3, 2.5, 1).unwrap();
    let net = cluster_net(3, 3, 2);
    let cfg = TrainConfig {
        batch_size: 10,
        max_epochs: 3,
        reg: RegularizerConfig::new(0.01, 0.0),
        convergence_grad_tol: 0.0,
        ..Default::default()
    };
    let a = sgd_train(&ds.features, &ds.targets(), &net, LossKind::SigmoidBinaryCrossEntropy, &cfg).unwrap();
    let b = sgd_train(&ds.features, &ds.targets(), &net, LossKind::SigmoidBinaryCrossEntropy, &cfg).unwrap();
    assert_eq!(a.final_weights, b.final_weights);
    let strip = |r: &srr_core::TrainReport| r.records.iter().map(|e| (e.f, e.rho, e.h)).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
}
