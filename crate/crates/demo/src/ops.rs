use srr_core::data::{normalize, synth_clusters, synth_digits, DIGIT_SIDE};
use srr_core::genharness::{augment, AugmentConfig};
use srr_core::linalg::Matrix;
use srr_core::net::{Activation, LayerSpec, LossKind, Network};
use srr_core::oracle::AnalyticObjective;
use srr_core::seeds::{self, Stream};
use srr_core::spectral::{power_iteration, PowerIterationConfig};
use srr_core::train::{sgd_train, RegularizerConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct PowerTrace {
    /// `[lambda, v0, v1, residual]` after each iteration.
    pub steps: Vec<[f64; 4]>,
    /// Exact eigenvalues, larger magnitude first.
    pub exact: [f64; 2],
}

impl PowerTrace {
    pub fn flatten(&self) -> Vec<f64> {
        self.steps.iter().flatten().chain(&self.exact).copied().collect()
    }
}

pub fn power_trace(a: f64, b: f64, c: f64, steps: usize) -> Result<PowerTrace, String> {
    if !(1..=500).contains(&steps) {
        return Err("steps must be between 1 and 500".into());
    }
    let m = Matrix::from_rows(&[vec![a, b], vec![b, c]]).map_err(|e| e.to_string())?;
    let obj = AnalyticObjective::quadratic(m).map_err(|e| e.to_string())?;
    // Fixed off-axis start so the trace is the same on every call.
    let start = [0.6, 0.8];
    let mut out = Vec::with_capacity(steps);
    for k in 1..=steps {
        let cfg = PowerIterationConfig {
            eps: f64::MIN_POSITIVE,
            max_iters: k,
            ..Default::default()
        };
        let est = power_iteration(&obj, &[0.0, 0.0], &cfg, Some(&start)).map_err(|e| e.to_string())?;
        out.push([est.lambda, est.v[0], est.v[1], est.residual]);
    }
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (p, q) = (mid + rad, mid - rad);
    let exact = if p.abs() >= q.abs() { [p, q] } else { [q, p] };
    Ok(PowerTrace { steps: out, exact })
}

pub fn train_clusters(mu: f64, k: f64, epochs: usize, seed: u64) -> Result<Vec<[f64; 3]>, String> {
    if !(1..=200).contains(&epochs) {
        return Err("epochs must be between 1 and 200".into());
    }
    let run = || -> srr_core::Result<Vec<[f64; 3]>> {
        let (_, ds) = normalize(&synth_clusters(80, 4, 3, 3.0, seed)?)?;
        let specs = [
            LayerSpec::new(12, Activation::Tanh),
            LayerSpec::new(12, Activation::Tanh),
            LayerSpec::new(ds.output_dim(), Activation::Identity),
        ];
        let net = Network::init(ds.n_features(), &specs, &mut seeds::rng(seed, Stream::Init, 0))?;
        let cfg = TrainConfig {
            batch_size: 32,
            max_epochs: epochs,
            seed,
            reg: RegularizerConfig::new(mu, k),
            convergence_grad_tol: 0.0,
            ..Default::default()
        };
        let report = sgd_train(&ds.features, &ds.targets(), &net, LossKind::SigmoidBinaryCrossEntropy, &cfg)?;
        Ok(report.records.iter().map(|r| [r.f, r.rho, r.h]).collect())
    };
    run().map_err(|e| e.to_string())
}

pub fn augment_digit(
    class: usize,
    max_crop_px: usize,
    max_rot_deg: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), String> {
    if class > 1 {
        return Err("class must be 0 or 1".into());
    }
    let ds = synth_digits(1, seed).map_err(|e| e.to_string())?;
    let labels = ds.class_labels().expect("digits carry class labels");
    let row = labels.iter().position(|&l| l == class).expect("one image per class");
    let pixels = ds.features.row(row).to_vec();
    let image = Matrix::from_vec(DIGIT_SIDE, DIGIT_SIDE, pixels.clone()).map_err(|e| e.to_string())?;
    let cfg = AugmentConfig::tier(max_crop_px, max_rot_deg, seed);
    let out = augment(&image, &cfg, &mut seeds::rng(seed, Stream::Augment, 0)).map_err(|e| e.to_string())?;
    Ok((pixels, out.as_slice().to_vec()))
}
