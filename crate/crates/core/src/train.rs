//! The regularized objective `h(w) = f(w) + μ·max{0, ρ(w) − K}` and the two
//! optimizers that minimize it.
//!
//! [`gd_train`] uses the exact dominant eigenpair of a dense Hessian at every
//! step and is limited to small models. [`sgd_train`] works on mini-batches
//! and estimates the eigenpair with warm-started power iteration on the
//! frozen batch.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvp::{NetObjective, ObjectiveModel};
use crate::linalg::{axpy, norm, Matrix};
use crate::net::{LossKind, Network};
use crate::oracle::DEFAULT_EXACT_CAP;
use crate::seeds::{self, Stream};
use crate::spectral::{
    exact_estimate, power_iteration, spectral_radius_gradient, PowerIterationConfig, SpectralEstimate,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerConfig {
    pub mu: f64,
    /// Target radius: the penalty is inactive while `ρ ≤ k`.
    pub k: f64,
}

impl RegularizerConfig {
    pub fn new(mu: f64, k: f64) -> Self {
        Self { mu, k }
    }

    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) || !(self.k >= 0.0) {
            return Err(Error::Config("regularizer mu and k must be non-negative".into()));
        }
        Ok(())
    }

    pub fn is_active(&self, rho: f64) -> bool {
        self.mu > 0.0 && rho > self.k
    }

    pub fn penalty(&self, rho: f64) -> f64 {
        if self.mu == 0.0 {
            0.0
        } else {
            self.mu * (rho - self.k).max(0.0)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `alpha0 / epoch` with 1-based epochs. `Σ 1/k` diverges while
    /// `Σ 1/k²` converges.
    #[default]
    InverseEpoch,
}

impl LrSchedule {
    pub fn rate(self, alpha0: f64, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant => alpha0,
            LrSchedule::InverseEpoch => alpha0 / epoch.max(1) as f64,
        }
    }
}

/// Parameter update applied to `∇h`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UpdateRule {
    #[default]
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct Updater {
    rule: UpdateRule,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Updater {
    fn new(rule: UpdateRule, n: usize) -> Self {
        let (m, v) = match rule {
            UpdateRule::Sgd => (Vec::new(), Vec::new()),
            UpdateRule::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        Self { rule, m, v, t: 0 }
    }

    fn step(&mut self, w: &mut [f64], grad: &[f64], alpha: f64) {
        match self.rule {
            UpdateRule::Sgd => {
                for (wi, gi) in w.iter_mut().zip(grad) {
                    *wi -= alpha * gi;
                }
            }
            UpdateRule::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..w.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    w[i] -= alpha * mh / (vh.sqrt() + epsilon);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha0: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub pi: PowerIterationConfig,
    pub reg: RegularizerConfig,
    pub seed: u64,
    pub convergence_grad_tol: f64,
    pub update: UpdateRule,
    /// Largest model for which dense Hessians are allowed.
    pub exact_cap: usize,
    /// Also record the exact full-data ρ each epoch (small models only).
    pub record_exact_rho: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            schedule: LrSchedule::InverseEpoch,
            batch_size: 128,
            max_epochs: 100,
            pi: PowerIterationConfig::default(),
            reg: RegularizerConfig::disabled(),
            seed: 0,
            convergence_grad_tol: 1e-6,
            update: UpdateRule::Sgd,
            exact_cap: DEFAULT_EXACT_CAP,
            record_exact_rho: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) {
            return Err(Error::Config("alpha0 must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if !(self.convergence_grad_tol >= 0.0) {
            return Err(Error::Config("convergence_grad_tol must be non-negative".into()));
        }
        self.pi.validate()?;
        self.reg.validate()
    }
}

/// One row of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub f: f64,
    pub rho: f64,
    pub h: f64,
    pub grad_norm: f64,
    pub pi_iters: usize,
    pub pi_residual: f64,
    pub wall_ms: f64,
    pub rho_exact: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub final_weights: Vec<f64>,
    /// Parameter updates taken.
    pub steps: usize,
}

#[cfg(not(target_arch = "wasm32"))]
fn clock() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64() * 1e3
}

#[cfg(target_arch = "wasm32")]
fn clock() -> impl Fn() -> f64 {
    || 0.0
}

/// `h(w)` and `∇h(w)` given a spectral estimate taken at `w`.
///
/// On the inactive branch (`ρ ≤ K`, including the boundary) the penalty's
/// subgradient is taken as zero, so `∇h = ∇f`.
pub fn regularized_value_and_grad<O: ObjectiveModel + ?Sized>(
    obj: &O,
    w: &[f64],
    reg: &RegularizerConfig,
    est: &SpectralEstimate,
) -> Result<(f64, Vec<f64>)> {
    let (f, mut grad) = obj.value_and_gradient(w)?;
    let h = f + reg.penalty(est.rho);
    if reg.is_active(est.rho) {
        let grad_rho = spectral_radius_gradient(obj, w, est)?;
        axpy(reg.mu, &grad_rho, &mut grad);
    }
    Ok((h, grad))
}

/// Gradient descent on `h` with the exact eigenpair at every iterate.
///
/// Records one row per visited point, starting with `w0` (epoch 0). Stops
/// once `‖∇h‖ ≤ convergence_grad_tol` or after `max_epochs` updates.
pub fn gd_train<O: ObjectiveModel + ?Sized>(obj: &O, w0: &[f64], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = obj.dim();
    if n > cfg.exact_cap {
        return Err(Error::Config(format!(
            "exact gradient descent is limited to {} parameters, model has {n}",
            cfg.exact_cap
        )));
    }
    if w0.len() != n {
        return Err(Error::shape("gd_train w0", n, w0.len()));
    }
    let elapsed = clock();
    let mut w = w0.to_vec();
    let mut records = Vec::new();
    let mut steps = 0;
    loop {
        let est = exact_estimate(obj, &w, cfg.exact_cap)?;
        let (h, grad_h) = regularized_value_and_grad(obj, &w, &cfg.reg, &est)?;
        let f = h - cfg.reg.penalty(est.rho);
        if !h.is_finite() {
            return Err(Error::Divergence { step: steps });
        }
        let grad_norm = norm(&grad_h);
        records.push(EpochRecord {
            epoch: steps,
            f,
            rho: est.rho,
            h,
            grad_norm,
            pi_iters: 0,
            pi_residual: est.residual,
            wall_ms: elapsed(),
            rho_exact: Some(est.rho),
        });
        if grad_norm <= cfg.convergence_grad_tol || steps == cfg.max_epochs {
            break;
        }
        let alpha = cfg.schedule.rate(cfg.alpha0, steps + 1);
        axpy(-alpha, &grad_h, &mut w);
        steps += 1;
    }
    Ok(TrainReport {
        records,
        final_weights: w,
        steps,
    })
}

/// Seeded visiting order for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeds::rng(seed, Stream::Shuffle, epoch as u64));
    idx
}

/// Rows of the batch used for the end-of-epoch ρ measurement.
pub fn report_batch(seed: u64, epoch: usize, n: usize, batch_size: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let (chosen, _) = idx.partial_shuffle(&mut seeds::rng(seed, Stream::ReportBatch, epoch as u64), batch_size.min(n));
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    chosen
}

/// Control returned by an epoch observer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observe {
    Continue,
    Stop,
}

/// Mini-batch stochastic gradient descent on `h`.
pub fn sgd_train(
    inputs: &Matrix,
    targets: &Matrix,
    net: &Network,
    loss: LossKind,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    sgd_train_observed(inputs, targets, net, loss, cfg, |_, _| Ok(Observe::Continue))
}

/// [`sgd_train`] with a callback after every epoch.
pub fn sgd_train_observed<F>(
    inputs: &Matrix,
    targets: &Matrix,
    net: &Network,
    loss: LossKind,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<TrainReport>
where
    F: FnMut(&EpochRecord, &Network) -> Result<Observe>,
{
    cfg.validate()?;
    let n_samples = inputs.rows();
    if n_samples == 0 {
        return Err(Error::Validation("training set is empty".into()));
    }
    if cfg.batch_size > n_samples {
        return Err(Error::Validation(format!(
            "batch_size {} exceeds dataset size {n_samples}",
            cfg.batch_size
        )));
    }
    let full = NetObjective::new(net.clone(), inputs.clone(), targets.clone(), loss)?;
    let mut w = net.params();
    let mut updater = Updater::new(cfg.update, w.len());
    let mut warm: Option<Vec<f64>> = None;
    let mut report_warm: Option<Vec<f64>> = None;
    let mut records = Vec::new();
    let mut steps = 0usize;
    let elapsed = clock();
    let regularized = cfg.reg.mu > 0.0;

    for epoch in 1..=cfg.max_epochs {
        let alpha = cfg.schedule.rate(cfg.alpha0, epoch);
        let eps = cfg.pi.eps_for_epoch(epoch);
        for chunk in epoch_order(cfg.seed, epoch, n_samples).chunks(cfg.batch_size) {
            let batch = full.subset(chunk)?;
            let (f_b, mut grad_h) = batch.value_and_gradient(&w)?;
            let mut h_b = f_b;
            if regularized {
                let pi = PowerIterationConfig {
                    eps,
                    seed: seeds::derive(cfg.seed, Stream::PowerIteration, steps as u64),
                    ..cfg.pi
                };
                let start = if cfg.pi.warm_start { warm.as_deref() } else { None };
                let est = power_iteration(&batch, &w, &pi, start)?;
                h_b += cfg.reg.penalty(est.rho);
                if cfg.reg.is_active(est.rho) {
                    let grad_rho = spectral_radius_gradient(&batch, &w, &est)?;
                    axpy(cfg.reg.mu, &grad_rho, &mut grad_h);
                }
                warm = Some(est.v);
            }
            if !h_b.is_finite() || !grad_h.iter().all(|g| g.is_finite()) {
                return Err(Error::Divergence { step: steps });
            }
            updater.step(&mut w, &grad_h, alpha);
            steps += 1;
        }

        let (f, mut grad_h) = full.value_and_gradient(&w)?;
        let rows = report_batch(cfg.seed, epoch, n_samples, cfg.batch_size);
        let report = full.subset(&rows)?;
        let pi = PowerIterationConfig {
            eps,
            seed: seeds::derive(cfg.seed, Stream::ReportBatch, epoch as u64),
            ..cfg.pi
        };
        let start = if cfg.pi.warm_start { report_warm.as_deref() } else { None };
        let est = power_iteration(&report, &w, &pi, start)?;
        if cfg.reg.is_active(est.rho) {
            let grad_rho = spectral_radius_gradient(&report, &w, &est)?;
            axpy(cfg.reg.mu, &grad_rho, &mut grad_h);
        }
        let h = f + cfg.reg.penalty(est.rho);
        if !h.is_finite() {
            return Err(Error::Divergence { step: steps });
        }
        let rho_exact = if cfg.record_exact_rho && w.len() <= cfg.exact_cap {
            Some(exact_estimate(&full, &w, cfg.exact_cap)?.rho)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            f,
            rho: est.rho,
            h,
            grad_norm: norm(&grad_h),
            pi_iters: est.iters,
            pi_residual: est.residual,
            wall_ms: elapsed(),
            rho_exact,
        };
        report_warm = Some(est.v);
        let current = net.with_params(&w)?;
        let control = observer(&record, &current)?;
        let converged = record.grad_norm <= cfg.convergence_grad_tol;
        records.push(record);
        if converged || control == Observe::Stop {
            break;
        }
    }

    Ok(TrainReport {
        records,
        final_weights: w,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::AnalyticObjective;
    use approx::assert_abs_diff_eq;

    fn est(rho: f64, lambda: f64, v: Vec<f64>) -> SpectralEstimate {
        SpectralEstimate {
            lambda,
            rho,
            v,
            iters: 1,
            residual: 0.0,
        }
    }

    #[test]
    fn hinge_inactive_and_active() {
        let obj = AnalyticObjective::SeparablePoly {
            coeffs: vec![vec![1.0]],
        };
        let (h, g) =
            regularized_value_and_grad(&obj, &[0.0], &RegularizerConfig::new(0.1, 5.0), &est(3.0, 3.0, vec![1.0]))
                .unwrap();
        assert_eq!(h, 1.0);
        assert_eq!(g, obj.gradient(&[0.0]).unwrap());
        let (h, _) =
            regularized_value_and_grad(&obj, &[0.0], &RegularizerConfig::new(0.1, 1.0), &est(3.0, 3.0, vec![1.0]))
                .unwrap();
        assert_abs_diff_eq!(h, 1.2, epsilon = 1e-15);
    }

    #[test]
    fn boundary_takes_zero_subgradient() {
        let obj = AnalyticObjective::monomial(1.0, 4);
        let e = est(3.0, 3.0, vec![1.0]);
        let (h, g) = regularized_value_and_grad(&obj, &[0.5], &RegularizerConfig::new(0.5, 3.0), &e).unwrap();
        assert_eq!(h, 0.0625);
        assert_eq!(g, vec![0.5]);
    }

    #[test]
    fn quartic_composition() {
        let obj = AnalyticObjective::monomial(1.0, 4);
        let e = exact_estimate(&obj, &[0.5], 10).unwrap();
        let (h, g) = regularized_value_and_grad(&obj, &[0.5], &RegularizerConfig::new(0.01, 0.0), &e).unwrap();
        assert_abs_diff_eq!(h, 0.0925, epsilon = 1e-15);
        assert_abs_diff_eq!(g[0], 0.62, epsilon = 1e-15);
    }

    #[test]
    fn gd_linear_contraction() {
        let obj = AnalyticObjective::monomial(0.5, 2);
        let cfg = TrainConfig {
            alpha0: 0.5,
            schedule: LrSchedule::Constant,
            max_epochs: 4,
            convergence_grad_tol: 0.0,
            ..Default::default()
        };
        let rep = gd_train(&obj, &[1.0], &cfg).unwrap();
        let traj: Vec<f64> = rep.records.iter().map(|r| r.grad_norm).collect();
        assert_eq!(traj, vec![1.0, 0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(rep.final_weights, vec![0.0625]);
    }

    #[test]
    fn gd_at_critical_point_stops_immediately() {
        let obj = AnalyticObjective::diag_quadratic(&[1.0, 2.0]);
        let rep = gd_train(&obj, &[0.0, 0.0], &TrainConfig::default()).unwrap();
        assert_eq!(rep.steps, 0);
        assert_eq!(rep.records.len(), 1);
        assert_eq!(rep.final_weights, vec![0.0, 0.0]);
    }

    #[test]
    fn gd_rejects_large_models() {
        let obj = AnalyticObjective::diag_quadratic(&[1.0; 8]);
        let cfg = TrainConfig {
            exact_cap: 4,
            ..Default::default()
        };
        assert!(matches!(gd_train(&obj, &[0.0; 8], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn quartic_descent_is_monotone() {
        let obj = AnalyticObjective::monomial(1.0, 4);
        let cfg = TrainConfig {
            alpha0: 0.01,
            schedule: LrSchedule::Constant,
            max_epochs: 500,
            convergence_grad_tol: 1e-6,
            reg: RegularizerConfig::new(0.01, 0.0),
            ..Default::default()
        };
        let rep = gd_train(&obj, &[1.0], &cfg).unwrap();
        assert!(rep.records.last().unwrap().grad_norm <= 1e-6 || rep.steps == 500);
        for pair in rep.records.windows(2) {
            assert!(pair[1].h < pair[0].h);
        }
    }

    #[test]
    fn inverse_epoch_schedule() {
        assert_eq!(LrSchedule::InverseEpoch.rate(0.5, 1), 0.5);
        assert_eq!(LrSchedule::InverseEpoch.rate(0.5, 4), 0.125);
        assert_eq!(LrSchedule::Constant.rate(0.5, 4), 0.5);
    }

    #[test]
    fn report_batch_is_seeded_subset() {
        let a = report_batch(3, 2, 50, 10);
        assert_eq!(a, report_batch(3, 2, 50, 10));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|p| p[0] < p[1]));
        let order = epoch_order(3, 1, 20);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn bad_configs_rejected() {
        let bad = TrainConfig {
            reg: RegularizerConfig::new(-1.0, 0.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
