//! Slow, independent reference paths: closed-form toy objectives, central
//! finite differences, a dense Hessian assembled column by column, and a
//! cyclic Jacobi eigensolver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvp::ObjectiveModel;
use crate::linalg::{dot, sub, Matrix};

/// Largest parameter count for which dense Hessians are assembled.
pub const DEFAULT_EXACT_CAP: usize = 500;

/// Default central-difference step for first-order checks.
pub const FD_STEP: f64 = 1e-5;

/// Default step for differences of second-order quantities.
pub const FD_STEP_NESTED: f64 = 1e-4;

/// Toy objectives with closed-form derivatives of every order used here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AnalyticObjective {
    /// `½ wᵀAw` with symmetric `A`.
    Quadratic { a: Matrix },
    /// Scalar `c·wᵖ`.
    Monomial { c: f64, p: u32 },
    /// `Σ_i Σ_k coeffs[i][k] · w_iᵏ`.
    SeparablePoly { coeffs: Vec<Vec<f64>> },
}

/// Value and first three derivatives of `Σ_k c_k xᵏ`.
fn poly_derivs(coeffs: &[f64], x: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (k, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let k = k as i32;
        for (d, slot) in out.iter_mut().enumerate() {
            let d = d as i32;
            if k < d {
                break;
            }
            let falling: f64 = (0..d).map(|i| (k - i) as f64).product();
            *slot += c * falling * x.powi(k - d);
        }
    }
    out
}

impl AnalyticObjective {
    pub fn quadratic(a: Matrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::shape("quadratic form", a.rows(), a.cols()));
        }
        if a.asymmetry() > 1e-12 * a.max_abs().max(1.0) {
            return Err(Error::Validation("quadratic form must be symmetric".into()));
        }
        Ok(AnalyticObjective::Quadratic { a })
    }

    pub fn diag_quadratic(diag: &[f64]) -> Self {
        AnalyticObjective::Quadratic {
            a: Matrix::from_diag(diag),
        }
    }

    pub fn monomial(c: f64, p: u32) -> Self {
        AnalyticObjective::Monomial { c, p }
    }

    /// Per-coordinate `(d1, d2, d3)` for the separable kinds.
    fn coord_derivs(&self, i: usize, x: f64) -> [f64; 4] {
        match self {
            AnalyticObjective::Monomial { c, p } => {
                let mut coeffs = vec![0.0; *p as usize + 1];
                coeffs[*p as usize] = *c;
                poly_derivs(&coeffs, x)
            }
            AnalyticObjective::SeparablePoly { coeffs } => poly_derivs(&coeffs[i], x),
            AnalyticObjective::Quadratic { .. } => unreachable!("quadratic is not separable"),
        }
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::shape("analytic objective", self.dim(), w.len()));
        }
        Ok(())
    }
}

impl ObjectiveModel for AnalyticObjective {
    fn dim(&self) -> usize {
        match self {
            AnalyticObjective::Quadratic { a } => a.rows(),
            AnalyticObjective::Monomial { .. } => 1,
            AnalyticObjective::SeparablePoly { coeffs } => coeffs.len(),
        }
    }

    fn value(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        Ok(match self {
            AnalyticObjective::Quadratic { a } => 0.5 * dot(w, &a.matvec(w)),
            _ => w
                .iter()
                .enumerate()
                .map(|(i, &x)| self.coord_derivs(i, x)[0])
                .sum(),
        })
    }

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        Ok(match self {
            AnalyticObjective::Quadratic { a } => a.matvec(w),
            _ => w
                .iter()
                .enumerate()
                .map(|(i, &x)| self.coord_derivs(i, x)[1])
                .collect(),
        })
    }

    fn hvp(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        self.check(v)?;
        Ok(match self {
            AnalyticObjective::Quadratic { a } => a.matvec(v),
            _ => w
                .iter()
                .zip(v)
                .enumerate()
                .map(|(i, (&x, &vi))| self.coord_derivs(i, x)[2] * vi)
                .collect(),
        })
    }

    fn third_form(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        self.check(v)?;
        Ok(match self {
            AnalyticObjective::Quadratic { a } => vec![0.0; a.rows()],
            _ => w
                .iter()
                .zip(v)
                .enumerate()
                .map(|(i, (&x, &vi))| self.coord_derivs(i, x)[3] * vi * vi)
                .collect(),
        })
    }
}

/// Square matrix materialized by the exact paths.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub matrix: Matrix,
    pub symmetric: bool,
}

impl DenseMatrix {
    /// Marks the matrix symmetric if `max |A_ij − A_ji| ≤ 1e-9·max|A|`.
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(Error::shape("DenseMatrix", matrix.rows(), matrix.cols()));
        }
        let symmetric = matrix.asymmetry() <= 1e-9 * matrix.max_abs();
        Ok(Self { matrix, symmetric })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

/// Central differences of `f` along each coordinate.
pub fn fd_gradient<O: ObjectiveModel + ?Sized>(obj: &O, w: &[f64], eps: f64) -> Result<Vec<f64>> {
    let mut probe = w.to_vec();
    let mut out = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        probe[i] = w[i] + eps;
        let fp = obj.value(&probe)?;
        probe[i] = w[i] - eps;
        let fm = obj.value(&probe)?;
        probe[i] = w[i];
        out.push((fp - fm) / (2.0 * eps));
    }
    Ok(out)
}

/// `(∇f(w+εv) − ∇f(w−εv)) / 2ε` from the analytic gradient.
pub fn fd_hvp<O: ObjectiveModel + ?Sized>(obj: &O, w: &[f64], v: &[f64], eps: f64) -> Result<Vec<f64>> {
    if v.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; w.len()]);
    }
    let wp: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + eps * b).collect();
    let wm: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - eps * b).collect();
    let gp = obj.gradient(&wp)?;
    let gm = obj.gradient(&wm)?;
    Ok(sub(&gp, &gm).into_iter().map(|d| d / (2.0 * eps)).collect())
}

/// `(vᵀH(w+εu)v − vᵀH(w−εu)v) / 2ε`, the directional derivative of the
/// curvature along `v`, using the objective's own Hessian-vector product.
pub fn fd_curvature_derivative<O: ObjectiveModel + ?Sized>(
    obj: &O,
    w: &[f64],
    v: &[f64],
    u: &[f64],
    eps: f64,
) -> Result<f64> {
    let wp: Vec<f64> = w.iter().zip(u).map(|(a, b)| a + eps * b).collect();
    let wm: Vec<f64> = w.iter().zip(u).map(|(a, b)| a - eps * b).collect();
    let cp = dot(v, &obj.hvp(&wp, v)?);
    let cm = dot(v, &obj.hvp(&wm, v)?);
    Ok((cp - cm) / (2.0 * eps))
}

/// Dense Hessian: column `i` is `H(w)e_i`, then symmetrized.
pub fn dense_hessian<O: ObjectiveModel + ?Sized>(obj: &O, w: &[f64], cap: usize) -> Result<DenseMatrix> {
    let n = obj.dim();
    if n > cap {
        return Err(Error::Config(format!(
            "dense Hessian needs n ≤ {cap}, objective has {n} parameters"
        )));
    }
    if w.len() != n {
        return Err(Error::shape("dense_hessian weights", n, w.len()));
    }
    let mut h = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for i in 0..n {
        e[i] = 1.0;
        let col = obj.hvp(w, &e)?;
        h.set_column(i, &col);
        e[i] = 0.0;
    }
    for r in 0..n {
        for c in (r + 1)..n {
            let m = 0.5 * (h[(r, c)] + h[(c, r)]);
            h[(r, c)] = m;
            h[(c, r)] = m;
        }
    }
    DenseMatrix::new(h)
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Sorted by descending absolute value.
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: Matrix,
    pub sweeps: usize,
}

impl SymEigen {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i)
    }

    /// `|λ₁| / |λ₂|`, infinite for 1×1 matrices.
    pub fn gap_ratio(&self) -> f64 {
        match self.values.as_slice() {
            [a, b, ..] => a.abs() / b.abs(),
            _ => f64::INFINITY,
        }
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops to
/// `1e-12·‖A‖_F`.
pub fn sym_eigen(a: &DenseMatrix) -> Result<SymEigen> {
    if !a.symmetric {
        return Err(Error::Validation("sym_eigen requires a symmetric matrix".into()));
    }
    let n = a.dim();
    let mut m = a.matrix.clone();
    let mut v = Matrix::identity(n);
    let total = m.frobenius_norm();
    let target = 1e-12 * total;

    let off_norm = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in 0..n {
                if r != c {
                    s += m[(r, c)] * m[(r, c)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&m) > target {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Validation(format!(
                "Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    let np = c * akp - s * akq;
                    let nq = s * akp + c * akq;
                    m[(k, p)] = np;
                    m[(p, k)] = np;
                    m[(k, q)] = nq;
                    m[(q, k)] = nq;
                }
                m[(p, p)] -= t * apq;
                m[(q, q)] += t * apq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (m[(i, i)], m[(j, j)]);
        b.abs().total_cmp(&a.abs()).then(b.total_cmp(&a))
    });
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(SymEigen {
        values,
        vectors,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Matrix::zeros(n, n);
        for r in 0..n {
            for c in r..n {
                let x = rng.random_range(-1.0..1.0);
                a[(r, c)] = x;
                a[(c, r)] = x;
            }
        }
        a
    }

    #[test]
    fn fd_gradient_of_square() {
        let obj = AnalyticObjective::monomial(1.0, 2);
        let g = fd_gradient(&obj, &[1.0], 1e-4).unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-7);
    }

    #[test]
    fn fd_gradient_of_constant_is_zero() {
        let obj = AnalyticObjective::SeparablePoly {
            coeffs: vec![vec![3.0], vec![-1.0]],
        };
        assert_eq!(fd_gradient(&obj, &[0.4, -2.0], 1e-5).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dense_hessian_of_quadratic() {
        let obj = AnalyticObjective::diag_quadratic(&[1.0, 3.0]);
        let h = dense_hessian(&obj, &[0.2, -0.1], DEFAULT_EXACT_CAP).unwrap();
        assert!(h.symmetric);
        assert_eq!(h.matrix.as_slice(), &[1.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn dense_hessian_of_quartic() {
        let obj = AnalyticObjective::monomial(1.0, 4);
        let h = dense_hessian(&obj, &[0.5], DEFAULT_EXACT_CAP).unwrap();
        assert_eq!(h.matrix.as_slice(), &[3.0]);
    }

    #[test]
    fn dense_hessian_cap_enforced() {
        let obj = AnalyticObjective::diag_quadratic(&[1.0; 4]);
        let err = dense_hessian(&obj, &[0.0; 4], 3).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn sym_eigen_diag() {
        let a = DenseMatrix::new(Matrix::from_diag(&[1.0, 3.0])).unwrap();
        let e = sym_eigen(&a).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
    }

    #[test]
    fn sym_eigen_classic_two_by_two() {
        let a = DenseMatrix::new(Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap()).unwrap();
        let e = sym_eigen(&a).unwrap();
        assert_abs_diff_eq!(e.values[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vector(0);
        let v1 = e.vector(1);
        assert_abs_diff_eq!(dot(&v0, &[s, s]).abs(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(dot(&v1, &[s, -s]).abs(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn sym_eigen_reconstructs() {
        for seed in 0..5 {
            let a = random_symmetric(12, seed);
            let e = sym_eigen(&DenseMatrix::new(a.clone()).unwrap()).unwrap();
            let lam = Matrix::from_diag(&e.values);
            let rec = e.vectors.matmul(&lam).unwrap().matmul(&e.vectors.transpose()).unwrap();
            let diff: Vec<f64> = sub(rec.as_slice(), a.as_slice());
            assert!(norm(&diff) <= 1e-9 * a.frobenius_norm());
            let vtv = e.vectors.transpose().matmul(&e.vectors).unwrap();
            let id = Matrix::identity(12);
            assert!(norm(&sub(vtv.as_slice(), id.as_slice())) < 1e-12);
            for w in e.values.windows(2) {
                assert!(w[0].abs() >= w[1].abs());
            }
        }
    }

    #[test]
    fn sym_eigen_rejects_asymmetric() {
        let a = DenseMatrix::new(Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap()).unwrap();
        assert!(!a.symmetric);
        assert!(matches!(sym_eigen(&a), Err(Error::Validation(_))));
    }

    #[test]
    fn fd_hvp_quadratic_and_zero_direction() {
        let obj = AnalyticObjective::diag_quadratic(&[1.0, 3.0]);
        let hv = fd_hvp(&obj, &[0.3, 0.7], &[1.0, 1.0], 1e-5).unwrap();
        assert_abs_diff_eq!(hv[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(hv[1], 3.0, epsilon = 1e-8);
        assert_eq!(fd_hvp(&obj, &[0.3, 0.7], &[0.0, 0.0], 1e-5).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn analytic_closed_forms_match_finite_differences() {
        let obj = AnalyticObjective::SeparablePoly {
            coeffs: vec![vec![0.1, -0.5, 0.3, 0.2, 0.05], vec![0.0, 1.0, -1.0, 0.0, 0.25]],
        };
        let w = [0.6, -0.9];
        let v = [0.8, -0.3];
        let g = obj.gradient(&w).unwrap();
        let fd = fd_gradient(&obj, &w, FD_STEP).unwrap();
        assert!(crate::linalg::rel_err(&fd, &g, 1e-12) < 1e-8);
        let hv = obj.hvp(&w, &v).unwrap();
        let fdh = fd_hvp(&obj, &w, &v, FD_STEP).unwrap();
        assert!(crate::linalg::rel_err(&fdh, &hv, 1e-12) < 1e-8);
        let third = obj.third_form(&w, &v).unwrap();
        for i in 0..2 {
            let mut u = [0.0; 2];
            u[i] = 1.0;
            let fdt = fd_curvature_derivative(&obj, &w, &v, &u, FD_STEP).unwrap();
            assert!((fdt - third[i]).abs() <= 1e-8 * third[i].abs().max(1e-3));
        }
    }

    #[test]
    fn quartic_values() {
        let obj = AnalyticObjective::monomial(1.0, 4);
        assert_eq!(obj.hvp(&[0.5], &[2.0]).unwrap(), vec![6.0]);
        assert_eq!(obj.third_form(&[0.5], &[1.0]).unwrap(), vec![12.0]);
    }
}
