//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process exits nonzero if any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use srr_cli::checkpoint::Checkpoint;
use srr_cli::commands;
use srr_cli::config::RunConfig;
use srr_core::data::{holdout, normalize, synth_clusters, synth_digits};
use srr_core::genharness::{
    evaluate, run_augmented_eval, run_shift_trials_with, shift_weights, simulated_table, slope_stats, AugmentConfig,
    Classifier,
};
use srr_core::hvp::Fault;
use srr_core::linalg::Matrix;
use srr_core::net::{Activation, LayerSpec, LossKind, Network};
use srr_core::seeds::{self, Stream};
use srr_core::train::{sgd_train, RegularizerConfig, TrainConfig};
use srr_core::validation::{
    check_descent, check_eigen, check_hvp, check_radius_gradient, check_third_form, check_third_form_quadratic,
};

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn report(id: usize, title: &str, elapsed: Duration, outcome: Outcome) -> bool {
    let (passed, detail) = match outcome {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} [{id:>2}] {title}: {detail} ({:.1} s)",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    passed
}

fn hvp_exactness() -> Outcome {
    let start = Instant::now();
    let r = check_hvp(20, 1e-6, Fault::None).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        r.passed && secs < 10.0,
        format!("max rel err {:.2e} (tol 1e-6) over {}, {secs:.2} s (limit 10 s)", r.measured, r.detail),
    ))
}

fn third_form_exactness() -> Outcome {
    let fd = check_third_form(20, 3, 1e-5, Fault::None).map_err(err)?;
    let quad = check_third_form_quadratic(10, 1e-12, Fault::None).map_err(err)?;
    Ok((
        fd.passed && quad.passed,
        format!(
            "directional rel err {:.2e} (tol 1e-5); quadratic max norm {:.1e} (tol 1e-12)",
            fd.measured, quad.measured
        ),
    ))
}

fn eigen_agreement() -> Outcome {
    let r = check_eigen(20, 20).map_err(err)?;
    Ok((
        r.iter().all(|c| c.passed),
        format!(
            "rho abs err {:.2e} (tol 1e-6); alignment defect {:.2e} (tol 1e-8) on {}",
            r[0].measured, r[1].measured, r[1].detail
        ),
    ))
}

fn radius_gradient() -> Outcome {
    let r = check_radius_gradient(5, 10, 1.5, 1e-4).map_err(err)?;
    Ok((r.passed, format!("max rel err {:.2e} (tol 1e-4), {}", r.measured, r.detail)))
}

fn descent() -> Outcome {
    let r = check_descent(200).map_err(err)?;
    Ok((r.passed, format!("quartic and 2-3-1 tanh net, mu in {{0, 0.01, 0.1}}: {}", r.detail)))
}

fn regularization_effect() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let mut rho = [0.0; 2];
        for (slot, mu) in [0.0, 0.01].into_iter().enumerate() {
            let mut cfg = RunConfig {
                seed,
                out_dir: dir.path().join(format!("s{seed}_{slot}")),
                ..Default::default()
            };
            cfg.train.max_epochs = 20;
            cfg.train.convergence_grad_tol = 0.0;
            cfg.train.regularizer = RegularizerConfig::new(mu, 0.0);
            rho[slot] = commands::train(&cfg).map_err(err)?.last.rho;
        }
        wins += usize::from(rho[1] < rho[0]);
        pairs.push(format!("{:.3}/{:.3}", rho[0], rho[1]));
    }
    Ok((
        wins >= 4,
        format!("regularized rho lower in {wins}/5 seeds (need 4); rho mu=0/mu=0.01: {}", pairs.join(" ")),
    ))
}

fn shift_identity() -> Outcome {
    let test = normalize(&synth_clusters(100, 4, 3, 2.0, 11).map_err(err)?).map_err(err)?.1;
    let specs = [LayerSpec::new(6, Activation::Tanh), LayerSpec::new(3, Activation::Identity)];
    let nets: Vec<Network> = (0..4)
        .map(|s| Network::init(4, &specs, &mut seeds::rng(s, Stream::Init, 0)))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let models: Vec<(&str, &dyn Classifier)> = nets.iter().map(|n| ("m", n as &dyn Classifier)).collect();
    let table = run_shift_trials_with(&models, &test, &[vec![0.0; 4]]).map_err(err)?;
    let mut exact = true;
    for (k, net) in nets.iter().enumerate() {
        exact &= table.trials[0].accuracies[k].to_bits() == evaluate(net, &test).map_err(err)?.to_bits();
    }
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut worst: f64 = 0.0;
    for i in 0..41 {
        for j in 0..41 {
            let x = -4.0 + 0.2 * i as f64;
            let d = -0.5 + 0.025 * j as f64;
            let m = Matrix::from_rows(&[vec![x]]).map_err(err)?;
            let w = shift_weights(&m, &[d]).map_err(err)?.weights[0];
            let direct = pdf(x - d) / pdf(x);
            worst = worst.max((w - direct).abs() / direct);
        }
    }
    Ok((
        exact && worst <= 1e-12,
        format!(
            "zero shift bit-exact for {} models: {exact}; pdf quotient rel err {worst:.2e} (tol 1e-12)",
            nets.len()
        ),
    ))
}

fn slope_calibration() -> Outcome {
    let table = simulated_table(-0.02, 0.01, 1000, 10, 42).map_err(err)?;
    let fit = slope_stats(&table).map_err(err)?.models[0].1;
    let z = (fit.slope + 0.02).abs() / fit.std_err;
    let mut rejections = 0;
    for s in 0..1000 {
        let t = simulated_table(0.0, 0.01, 1000, 10, 1000 + s).map_err(err)?;
        rejections += usize::from(slope_stats(&t).map_err(err)?.models[0].1.p_value < 0.05);
    }
    let rate = rejections as f64 / 1000.0;
    Ok((
        z <= 2.0 && (0.03..=0.07).contains(&rate),
        format!(
            "planted slope -0.02 recovered as {:.5} ({z:.2} SE, limit 2); null rejection rate {rate:.3} (range [0.03, 0.07])",
            fit.slope
        ),
    ))
}

fn augmentation_ordering() -> Outcome {
    let specs = [
        LayerSpec::new(20, Activation::Tanh),
        LayerSpec::new(20, Activation::Tanh),
        LayerSpec::new(20, Activation::Tanh),
        LayerSpec::new(1, Activation::Identity),
    ];
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let (train, test) = holdout(&synth_digits(300, seed).map_err(err)?, 0.3, seed).map_err(err)?;
        let mut drop = [0.0; 2];
        for (slot, mu) in [0.0, 0.01].into_iter().enumerate() {
            let net = Network::init(256, &specs, &mut seeds::rng(seed, Stream::Init, 0)).map_err(err)?;
            let cfg = TrainConfig {
                max_epochs: 20,
                seed,
                reg: RegularizerConfig::new(mu, 10.0),
                convergence_grad_tol: 0.0,
                ..Default::default()
            };
            let rep = sgd_train(&train.features, &train.targets(), &net, LossKind::SigmoidBinaryCrossEntropy, &cfg)
                .map_err(err)?;
            let trained = net.with_params(&rep.final_weights).map_err(err)?;
            let plain = evaluate(&trained, &test).map_err(err)?;
            let at2 = run_augmented_eval(&trained, &test, &AugmentConfig::tier(2, 30.0, seed)).map_err(err)?;
            drop[slot] = plain - at2;
        }
        wins += usize::from(drop[1] < drop[0]);
        rows.push(format!("{:.3}/{:.3}", drop[0], drop[1]));
    }
    Ok((
        wins >= 4,
        format!(
            "Test-AT2 drop smaller with mu=0.01 (K=10) in {wins}/5 seeds (need 4); drops mu=0/mu>0: {}",
            rows.join(" ")
        ),
    ))
}

fn run_srr(args: &[&str], cwd: &Path) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_srr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(err)
}

fn determinism_and_persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = "seed = 5\n[data]\nn_per_class = 80\n[model]\nhidden = [12, 12]\n\
               [train]\nbatch_size = 32\nmax_epochs = 6\n[train.regularizer]\nmu = 0.01\nk = 0.0\n";
    std::fs::write(dir.path().join("run.toml"), cfg).map_err(err)?;
    for out in ["a", "b"] {
        let o = run_srr(&["train", "--config", "run.toml", "--out", out], dir.path())?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).trim().to_string());
        }
    }
    let a = std::fs::read(dir.path().join("a/metrics.csv")).map_err(err)?;
    let b = std::fs::read(dir.path().join("b/metrics.csv")).map_err(err)?;
    let identical = a == b && !a.is_empty();

    let path = dir.path().join("a/final.ckpt");
    let bytes = std::fs::read(&path).map_err(err)?;
    let ck = Checkpoint::load(&path).map_err(err)?;
    let reloaded = Checkpoint::from_bytes(&ck.to_bytes()).map_err(err)?;
    let bits = |c: &Checkpoint| c.network.params().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let round_trip = ck.to_bytes() == bytes && bits(&reloaded) == bits(&ck);

    let start = Instant::now();
    let v = run_srr(&["validate"], dir.path())?;
    let secs = start.elapsed().as_secs_f64();
    let validate_ok = v.status.success() && secs < 60.0;
    Ok((
        identical && round_trip && validate_ok,
        format!(
            "metrics byte-identical: {identical}; checkpoint bit-exact: {round_trip}; validate exit {} in {secs:.1} s (limit 60 s)",
            v.status.code().unwrap_or(-1)
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("Hvp exactness", hvp_exactness),
        ("third-order form exactness", third_form_exactness),
        ("eigen agreement", eigen_agreement),
        ("spectral-radius gradient", radius_gradient),
        ("monotone descent on h", descent),
        ("regularization lowers batch rho", regularization_effect),
        ("shift-harness identity", shift_identity),
        ("slope statistics calibration", slope_calibration),
        ("augmentation robustness ordering", augmentation_ordering),
        ("determinism and persistence", determinism_and_persistence),
    ];
    let mut failed = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        failed += usize::from(!report(i + 1, title, start.elapsed(), outcome));
    }
    println!("acceptance: {}/10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
