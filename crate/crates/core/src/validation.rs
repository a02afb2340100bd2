//! Operator-versus-oracle checks on seeded random instances.
//!
//! Each check compares a fast operator against an independent reference
//! from [`crate::oracle`] and reports the worst error it saw next to the
//! tolerance it was held to.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::hvp::{hessian_vector_product, third_order_form, Fault, NetObjective, ObjectiveModel};
use crate::linalg::{axpy, dot, norm, rel_err, scale, Matrix};
use crate::net::{Activation, LayerSpec, LossKind, Network};
use crate::oracle::{
    dense_hessian, fd_curvature_derivative, fd_gradient, fd_hvp, sym_eigen, AnalyticObjective, DenseMatrix,
    FD_STEP, FD_STEP_NESTED,
};
use crate::seeds::{self, Stream};
use crate::spectral::{exact_estimate, power_iteration, spectral_radius_gradient, PowerIterationConfig};
use crate::train::{gd_train, regularized_value_and_grad, LrSchedule, RegularizerConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst error observed across the check's instances.
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} measured={:.3e} tol={:.1e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

fn unit<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    scale(1.0 / norm(&v), &v)
}

/// A seeded random network objective: Gaussian inputs, `hidden` layers of
/// `activation`, identity output, targets drawn to suit the loss. Returns
/// the objective and its initial weights.
pub fn random_net_objective(
    seed: u64,
    input_dim: usize,
    hidden: &[usize],
    output_dim: usize,
    activation: Activation,
    loss: LossKind,
    n_samples: usize,
) -> Result<(NetObjective, Vec<f64>)> {
    let mut specs: Vec<LayerSpec> = hidden.iter().map(|&w| LayerSpec::new(w, activation)).collect();
    specs.push(LayerSpec::new(output_dim, Activation::Identity));
    let mut rng = seeds::rng(seed, Stream::Init, 0);
    let net = Network::init(input_dim, &specs, &mut rng)?;
    let mut rng = seeds::rng(seed, Stream::Synth, 0);
    let inputs: Vec<f64> = (0..n_samples * input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let targets: Vec<f64> = (0..n_samples * output_dim)
        .map(|_| match loss {
            LossKind::MeanSquaredError => StandardNormal.sample(&mut rng),
            LossKind::SigmoidBinaryCrossEntropy => f64::from(u8::from(rng.random_bool(0.5))),
        })
        .collect();
    let w = net.params();
    let obj = NetObjective::new(
        net,
        Matrix::from_vec(n_samples, input_dim, inputs)?,
        Matrix::from_vec(n_samples, output_dim, targets)?,
        loss,
    )?;
    Ok((obj, w))
}

/// The mid-size fixture: 10 inputs, three tanh layers of 20, one output,
/// squared error (1,081 parameters).
pub fn mlp_fixture(seed: u64, fault: Fault) -> Result<(NetObjective, Vec<f64>)> {
    let (obj, w) = random_net_objective(seed, 10, &[20, 20, 20], 1, Activation::Tanh, LossKind::MeanSquaredError, 16)?;
    Ok((obj.with_fault(fault), w))
}

/// Tiny nets (at most 60 parameters) for dense comparisons.
pub fn tiny_fixture(seed: u64, fault: Fault) -> Result<(NetObjective, Vec<f64>)> {
    let mut rng = seeds::rng(seed, Stream::Synth, 7);
    let input = rng.random_range(2..=4);
    let hidden = rng.random_range(2..=6);
    let output = rng.random_range(1..=2);
    let act = [Activation::Tanh, Activation::Sigmoid, Activation::Softplus][rng.random_range(0..3)];
    let loss = if rng.random_bool(0.5) {
        LossKind::MeanSquaredError
    } else {
        LossKind::SigmoidBinaryCrossEntropy
    };
    let (obj, w) = random_net_objective(seed, input, &[hidden], output, act, loss, 12)?;
    Ok((obj.with_fault(fault), w))
}

/// Random symmetric matrix with standard normal entries.
pub fn random_symmetric(seed: u64, n: usize) -> Matrix {
    let mut rng = seeds::rng(seed, Stream::Synth, 11);
    let mut m = Matrix::zeros(n, n);
    for r in 0..n {
        for c in r..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            m[(r, c)] = x;
            m[(c, r)] = x;
        }
    }
    m
}

/// Network gradients against central differences of the loss, across
/// activations and both losses.
pub fn check_gradient(n_instances: usize, tol: f64) -> Result<CheckResult> {
    let acts = [Activation::Tanh, Activation::Sigmoid, Activation::Softplus, Activation::Identity];
    let losses = [LossKind::MeanSquaredError, LossKind::SigmoidBinaryCrossEntropy];
    let mut worst: f64 = 0.0;
    for i in 0..n_instances {
        let act = acts[i % acts.len()];
        let loss = losses[(i / acts.len()) % 2];
        let (obj, w) = random_net_objective(100 + i as u64, 3, &[4, 3], 2, act, loss, 6)?;
        let g = obj.gradient(&w)?;
        let fd = fd_gradient(&obj, &w, FD_STEP)?;
        worst = worst.max(rel_err(&g, &fd, 1e-8));
    }
    Ok(CheckResult::new(
        "gradient_vs_fd",
        worst,
        tol,
        format!("{n_instances} nets, relative error in norm"),
    ))
}

/// `H(w)v` against differences of the analytic gradient (step `1e-5`) on
/// the mid-size fixtures.
pub fn check_hvp(n_nets: usize, tol: f64, fault: Fault) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..n_nets {
        let (obj, w) = mlp_fixture(i as u64, fault)?;
        let v = unit(obj.dim(), &mut seeds::rng(i as u64, Stream::Synth, 3));
        let hv = hessian_vector_product(&obj, &w, &v)?;
        let fd = fd_hvp(&obj, &w, &v, FD_STEP)?;
        worst = worst.max(rel_err(&hv, &fd, 1e-12));
    }
    Ok(CheckResult::new(
        "hvp_vs_fd",
        worst,
        tol,
        format!("{n_nets} nets of 1081 parameters"),
    ))
}

/// `uᵀ·(vᵀ∇H(w)v)` against central differences of `vᵀH(·)v` along `u`.
pub fn check_third_form(n_nets: usize, dirs_per_net: usize, tol: f64, fault: Fault) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..n_nets {
        let (obj, w) = mlp_fixture(i as u64, fault)?;
        let mut rng = seeds::rng(i as u64, Stream::Synth, 4);
        let v = unit(obj.dim(), &mut rng);
        let t = third_order_form(&obj, &w, &v)?;
        for _ in 0..dirs_per_net {
            let u = unit(obj.dim(), &mut rng);
            let exact = dot(&u, &t);
            let fd = fd_curvature_derivative(&obj, &w, &v, &u, FD_STEP_NESTED)?;
            worst = worst.max((exact - fd).abs() / fd.abs().max(1e-12));
        }
    }
    Ok(CheckResult::new(
        "third_form_vs_fd",
        worst,
        tol,
        format!("{n_nets} nets × {dirs_per_net} directions"),
    ))
}

/// The third-order form vanishes on quadratic objectives: dense quadratics
/// and a single linear layer under squared error.
pub fn check_third_form_quadratic(n_instances: usize, tol: f64, fault: Fault) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..n_instances {
        let seed = 200 + i as u64;
        let n = 2 + i % 7;
        let obj = AnalyticObjective::quadratic(random_symmetric(seed, n))?;
        let mut rng = seeds::rng(seed, Stream::Synth, 5);
        let w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v = unit(n, &mut rng);
        let t = third_order_form(&obj, &w, &v)?;
        worst = worst.max(norm(&t));

        let (net, w) = random_net_objective(seed, 3, &[], 2, Activation::Identity, LossKind::MeanSquaredError, 5)?;
        let net = net.with_fault(fault);
        let v = unit(net.dim(), &mut rng);
        let t = third_order_form(&net, &w, &v)?;
        worst = worst.max(norm(&t));
    }
    Ok(CheckResult::new(
        "third_form_quadratic",
        worst,
        tol,
        format!("{} quadratic objectives, max norm", 2 * n_instances),
    ))
}

fn tight_pi(seed: u64) -> PowerIterationConfig {
    PowerIterationConfig {
        eps: 1e-10,
        max_iters: 500_000,
        seed,
        ..Default::default()
    }
}

/// Outcome of comparing power iteration with the dense eigensolver.
#[derive(Clone, Debug, Default)]
pub struct EigenAgreement {
    pub max_rho_err: f64,
    pub min_alignment: f64,
    pub aligned_instances: usize,
    pub instances: usize,
}

/// Power iteration's `ρ` and eigenvector against a full Jacobi solve on
/// tiny nets and random constant Hessians. Alignment is only scored when
/// `|λ₁|/|λ₂| > gap`.
pub fn eigen_agreement(n_nets: usize, n_matrices: usize, gap: f64) -> Result<EigenAgreement> {
    let mut out = EigenAgreement {
        min_alignment: 1.0,
        ..Default::default()
    };
    let mut score = |obj: &dyn ObjectiveModelDyn, w: &[f64], dense: DenseMatrix, seed: u64| -> Result<()> {
        let eig = sym_eigen(&dense)?;
        let est = obj.power(w, &tight_pi(seed))?;
        out.max_rho_err = out.max_rho_err.max((est.rho - eig.values[0].abs()).abs());
        if eig.gap_ratio() > gap {
            let align = dot(&est.v, &eig.vector(0)).abs();
            out.min_alignment = out.min_alignment.min(align);
            out.aligned_instances += 1;
        }
        out.instances += 1;
        Ok(())
    };
    for i in 0..n_nets {
        let (obj, w) = tiny_fixture(300 + i as u64, Fault::None)?;
        let dense = dense_hessian(&obj, &w, 60)?;
        score(&obj, &w, dense, i as u64)?;
    }
    for i in 0..n_matrices {
        let n = 2 + i % 11;
        let m = random_symmetric(400 + i as u64, n);
        let obj = AnalyticObjective::quadratic(m.clone())?;
        score(&obj, &vec![0.0; n], DenseMatrix::new(m)?, i as u64)?;
    }
    Ok(out)
}

// Object-safe shim so nets and analytic objectives share one closure.
trait ObjectiveModelDyn {
    fn power(&self, w: &[f64], cfg: &PowerIterationConfig) -> Result<crate::spectral::SpectralEstimate>;
}

impl<T: ObjectiveModel> ObjectiveModelDyn for T {
    fn power(&self, w: &[f64], cfg: &PowerIterationConfig) -> Result<crate::spectral::SpectralEstimate> {
        power_iteration(self, w, cfg, None)
    }
}

pub fn check_eigen(n_nets: usize, n_matrices: usize) -> Result<Vec<CheckResult>> {
    let a = eigen_agreement(n_nets, n_matrices, 1.1)?;
    Ok(vec![
        CheckResult::new(
            "power_iteration_rho",
            a.max_rho_err,
            1e-6,
            format!("{} instances, absolute error", a.instances),
        ),
        CheckResult::new(
            "power_iteration_vector",
            1.0 - a.min_alignment,
            1e-8,
            format!("{} instances with gap > 1.1, 1 - |<v, v_ref>|", a.aligned_instances),
        ),
    ])
}

/// `uᵀ∇ρ` against central differences of the exact `ρ` on tiny nets whose
/// top eigenvalue is well separated (`|λ₁|/|λ₂| ≥ min_gap`).
pub fn check_radius_gradient(n_instances: usize, dirs: usize, min_gap: f64, tol: f64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut used = 0;
    let mut seed = 500;
    while used < n_instances {
        seed += 1;
        if seed > 500 + 50 * n_instances as u64 {
            break;
        }
        let (obj, w) = tiny_fixture(seed, Fault::None)?;
        let dense = dense_hessian(&obj, &w, 60)?;
        if sym_eigen(&dense)?.gap_ratio() < min_gap {
            continue;
        }
        used += 1;
        let est = power_iteration(&obj, &w, &tight_pi(seed), None)?;
        let g = spectral_radius_gradient(&obj, &w, &est)?;
        let mut rng = seeds::rng(seed, Stream::Synth, 6);
        for _ in 0..dirs {
            let u = unit(obj.dim(), &mut rng);
            let eps = FD_STEP_NESTED;
            let wp: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a + eps * b).collect();
            let wm: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a - eps * b).collect();
            let fd = (exact_estimate(&obj, &wp, 60)?.rho - exact_estimate(&obj, &wm, 60)?.rho) / (2.0 * eps);
            worst = worst.max((dot(&u, &g) - fd).abs() / fd.abs().max(1e-12));
        }
    }
    Ok(CheckResult::new(
        "radius_gradient_vs_fd",
        worst,
        tol,
        format!("{used} instances × {dirs} directions, gap ≥ {min_gap}"),
    ))
}

/// Largest `|eigenvalue|` of the symmetrized finite-difference Jacobian of
/// `∇ρ` at `w`, using exact eigenpairs.
pub fn radius_gradient_lipschitz<O: ObjectiveModel + ?Sized>(obj: &O, w: &[f64], cap: usize) -> Result<f64> {
    let n = w.len();
    let grad_rho = |x: &[f64]| -> Result<Vec<f64>> {
        let est = exact_estimate(obj, x, cap)?;
        spectral_radius_gradient(obj, x, &est)
    };
    let eps = FD_STEP;
    let mut jac = Matrix::zeros(n, n);
    let mut probe = w.to_vec();
    for j in 0..n {
        probe[j] = w[j] + eps;
        let gp = grad_rho(&probe)?;
        probe[j] = w[j] - eps;
        let gm = grad_rho(&probe)?;
        probe[j] = w[j];
        for i in 0..n {
            jac[(i, j)] = (gp[i] - gm[i]) / (2.0 * eps);
        }
    }
    for r in 0..n {
        for c in r + 1..n {
            let m = 0.5 * (jac[(r, c)] + jac[(c, r)]);
            jac[(r, c)] = m;
            jac[(c, r)] = m;
        }
    }
    Ok(sym_eigen(&DenseMatrix::new(jac)?)?.values[0].abs())
}

/// Result of a constant-step descent run on `h`.
#[derive(Clone, Debug)]
pub struct DescentOutcome {
    pub alpha: f64,
    pub l1: f64,
    pub l2: f64,
    pub steps: usize,
    /// Largest `(h_{k+1} − h_k) / |h_k|`; non-positive means monotone.
    pub worst_rise: f64,
}

/// Runs gradient descent on `h = f + μ·max(0, ρ − K)` with `α = 1/(L₁+μL₂)`.
///
/// `L₁` (largest `|eig H|`) and `L₂` (largest `|eig|` of the Jacobian of
/// `∇ρ`) are maxima sampled along the trajectory itself; the run repeats
/// with the smaller step until the sampled bounds stop growing.
pub fn descent_run<O: ObjectiveModel + ?Sized>(obj: &O, w0: &[f64], mu: f64, k: f64, steps: usize) -> Result<DescentOutcome> {
    let cap = obj.dim().max(1);
    let sample = |w: &[f64]| -> Result<(f64, f64)> {
        let l1 = exact_estimate(obj, w, cap)?.rho;
        let l2 = if mu > 0.0 { radius_gradient_lipschitz(obj, w, cap)? } else { 0.0 };
        Ok((l1, l2))
    };
    let (mut l1, mut l2) = sample(w0)?;
    let every = (steps / 20).max(1);
    for _ in 0..8 {
        let alpha = 1.0 / (l1 + mu * l2);
        let cfg = TrainConfig {
            alpha0: alpha,
            schedule: LrSchedule::Constant,
            max_epochs: steps,
            reg: RegularizerConfig::new(mu, k),
            convergence_grad_tol: 0.0,
            exact_cap: cap,
            ..Default::default()
        };
        let report = gd_train(obj, w0, &cfg)?;
        // Replay the trajectory and sample the bounds along it.
        let mut w = w0.to_vec();
        let (mut n1, mut n2) = (l1, l2);
        for step in 0..report.steps {
            let est = exact_estimate(obj, &w, cap)?;
            if step % every == 0 {
                n1 = n1.max(est.rho);
                if mu > 0.0 {
                    n2 = n2.max(radius_gradient_lipschitz(obj, &w, cap)?);
                }
            }
            let (_, g) = regularized_value_and_grad(obj, &w, &cfg.reg, &est)?;
            axpy(-alpha, &g, &mut w);
        }
        let (a, b) = sample(&report.final_weights)?;
        n1 = n1.max(a);
        n2 = n2.max(b);
        if n1 <= l1 * (1.0 + 1e-9) && n2 <= l2 * (1.0 + 1e-9) {
            let worst_rise = report
                .records
                .windows(2)
                .map(|p| (p[1].h - p[0].h) / p[0].h.abs().max(f64::MIN_POSITIVE))
                .fold(f64::NEG_INFINITY, f64::max);
            return Ok(DescentOutcome {
                alpha,
                l1,
                l2,
                steps: report.steps,
                worst_rise,
            });
        }
        l1 = n1;
        l2 = n2;
    }
    Err(crate::error::Error::Validation(
        "curvature bounds kept growing along the descent trajectory".into(),
    ))
}

/// The 2-3-1 tanh fixture for descent checks (13 parameters).
pub fn descent_net_fixture() -> Result<(NetObjective, Vec<f64>)> {
    random_net_objective(77, 2, &[3], 1, Activation::Tanh, LossKind::MeanSquaredError, 8)
}

/// Monotone decrease of `h` on the scalar quartic and the small tanh net
/// for `μ ∈ {0, 0.01, 0.1}`.
pub fn check_descent(steps: usize) -> Result<CheckResult> {
    let quartic = AnalyticObjective::monomial(1.0, 4);
    let (net, w_net) = descent_net_fixture()?;
    let mut worst = f64::NEG_INFINITY;
    let mut min_steps = usize::MAX;
    for mu in [0.0, 0.01, 0.1] {
        for out in [
            descent_run(&quartic, &[1.0], mu, 0.0, steps)?,
            descent_run(&net, &w_net, mu, 0.0, steps)?,
        ] {
            worst = worst.max(out.worst_rise);
            min_steps = min_steps.min(out.steps);
        }
    }
    let mut r = CheckResult::new(
        "descent_monotone",
        worst.max(0.0),
        1e-12,
        format!("6 runs, ≥ {min_steps} steps each, worst relative rise {worst:.2e}"),
    );
    r.passed &= min_steps >= steps;
    Ok(r)
}

/// Which checks to run and whether to inject a fault into the network
/// passes.
#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub fault: Fault,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { fault: Fault::None }
    }
}

/// The full operator-versus-oracle suite.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut out = vec![
        check_gradient(8, 1e-6)?,
        check_hvp(20, 1e-6, opts.fault)?,
        check_third_form(20, 3, 1e-5, opts.fault)?,
        check_third_form_quadratic(10, 1e-12, opts.fault)?,
    ];
    out.extend(check_eigen(20, 20)?);
    out.push(check_radius_gradient(5, 10, 1.5, 1e-4)?);
    out.push(check_descent(200)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_sizes() {
        let (obj, w) = mlp_fixture(0, Fault::None).unwrap();
        assert_eq!(obj.dim(), 1081);
        assert_eq!(w.len(), 1081);
        for s in 0..20 {
            assert!(tiny_fixture(s, Fault::None).unwrap().0.dim() <= 60);
        }
        assert_eq!(descent_net_fixture().unwrap().0.dim(), 13);
    }

    #[test]
    fn quartic_lipschitz_bound() {
        let obj = AnalyticObjective::monomial(1.0, 4);
        let l2 = radius_gradient_lipschitz(&obj, &[0.7], 1).unwrap();
        assert!((l2 - 24.0).abs() < 1e-6);
    }
}
