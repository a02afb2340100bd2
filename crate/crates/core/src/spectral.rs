//! Dominant Hessian eigenpair by power iteration, and the gradient of the
//! spectral radius built from it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvp::ObjectiveModel;
use crate::linalg::{dot, norm, scale, sub};
use crate::oracle::{dense_hessian, sym_eigen};
use crate::seeds::{self, Stream};

/// How the residual tolerance evolves across epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsSchedule {
    #[default]
    Fixed,
    /// `eps / sqrt(epoch)`, which drives the tolerance to zero.
    InverseSqrtEpoch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerIterationConfig {
    pub eps: f64,
    pub max_iters: usize,
    pub eps_schedule: EpsSchedule,
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for PowerIterationConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_iters: 10_000,
            eps_schedule: EpsSchedule::Fixed,
            warm_start: true,
            seed: 0,
        }
    }
}

impl PowerIterationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Config("power iteration eps must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("power iteration max_iters must be at least 1".into()));
        }
        Ok(())
    }

    /// Tolerance in force during the given 1-based epoch.
    pub fn eps_for_epoch(&self, epoch: usize) -> f64 {
        match self.eps_schedule {
            EpsSchedule::Fixed => self.eps,
            EpsSchedule::InverseSqrtEpoch => self.eps / (epoch.max(1) as f64).sqrt(),
        }
    }
}

/// Signed dominant eigenvalue `lambda`, `rho = |lambda|`, and the unit
/// vector `v` whose Rayleigh quotient is `lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEstimate {
    pub lambda: f64,
    pub rho: f64,
    pub v: Vec<f64>,
    pub iters: usize,
    /// `‖Hv − λv‖` for the returned pair.
    pub residual: f64,
}

impl SpectralEstimate {
    pub fn converged(&self, eps: f64) -> bool {
        self.residual <= eps
    }
}

fn random_unit<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nv = norm(&v);
        if nv > 1e-8 {
            return scale(1.0 / nv, &v);
        }
    }
}

/// Iterates `u ← Hv, λ ← uᵀv, v ← u/‖u‖` until `‖u − λv‖ ≤ eps` or the
/// iteration cap.
///
/// The returned `v` is the iterate that produced `u`, so `λ = vᵀHv` and
/// `residual = ‖Hv − λv‖` hold for the returned pair. Hitting the cap is
/// not an error: the residual stays above `eps`. If `Hv` vanishes the
/// iteration restarts once from a fresh seeded direction.
pub fn power_iteration<O: ObjectiveModel + ?Sized>(
    obj: &O,
    w: &[f64],
    cfg: &PowerIterationConfig,
    warm: Option<&[f64]>,
) -> Result<SpectralEstimate> {
    cfg.validate()?;
    let n = obj.dim();
    if n == 0 {
        return Err(Error::Validation("objective has no parameters".into()));
    }
    if w.len() != n {
        return Err(Error::shape("power_iteration weights", n, w.len()));
    }
    let mut v = match warm {
        Some(start) => {
            if start.len() != n {
                return Err(Error::shape("warm start", n, start.len()));
            }
            if (norm(start) - 1.0).abs() > 1e-8 {
                return Err(Error::Validation("warm start must be a unit vector".into()));
            }
            start.to_vec()
        }
        None => random_unit(n, &mut seeds::rng(cfg.seed, Stream::PowerIteration, 0)),
    };

    let mut restarted = false;
    let mut iters = 0;
    loop {
        let u = obj.hvp(w, &v)?;
        iters += 1;
        let un = norm(&u);
        if un == 0.0 {
            if restarted {
                return Err(Error::DegenerateSpectrum);
            }
            restarted = true;
            v = random_unit(n, &mut seeds::rng(cfg.seed, Stream::PowerIteration, 1));
            continue;
        }
        let lambda = dot(&u, &v);
        let residual = norm(&sub(&u, &scale(lambda, &v)));
        if residual <= cfg.eps || iters >= cfg.max_iters {
            return Ok(SpectralEstimate {
                lambda,
                rho: lambda.abs(),
                v,
                iters,
                residual,
            });
        }
        v = scale(1.0 / un, &u);
    }
}

/// `∇ρ = sign(λ) · vᵀ∇H(w)v`.
pub fn spectral_radius_gradient<O: ObjectiveModel + ?Sized>(
    obj: &O,
    w: &[f64],
    est: &SpectralEstimate,
) -> Result<Vec<f64>> {
    let sign = if est.lambda < 0.0 { -1.0 } else { 1.0 };
    let third = obj.third_form(w, &est.v)?;
    Ok(scale(sign, &third))
}

/// Dominant eigenpair from a dense Hessian and a full Jacobi solve.
pub fn exact_estimate<O: ObjectiveModel + ?Sized>(obj: &O, w: &[f64], cap: usize) -> Result<SpectralEstimate> {
    let h = dense_hessian(obj, w, cap)?;
    let eig = sym_eigen(&h)?;
    let lambda = eig.values[0];
    let v = eig.vector(0);
    let hv = h.matrix.matvec(&v);
    let residual = norm(&sub(&hv, &scale(lambda, &v)));
    Ok(SpectralEstimate {
        lambda,
        rho: lambda.abs(),
        v,
        iters: 0,
        residual,
    })
}
