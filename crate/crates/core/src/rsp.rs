//! Regularized symmetric Procrustes problem.
//!
//! ```text
//! Z* = argmin_{Z = Zᵀ} ‖Z A − D‖²_F + (λ/2) ‖Z − Z_ref‖²_F
//! ```
//!
//! With the thin SVD `A = V₁ Σ Uᵀ` and `P = V₁V₁ᵀ` the minimizer is
//!
//! ```text
//! Z* = V₁ Z₁ V₁ᵀ + V₁ Z₂ + Z₂ᵀ V₁ᵀ + (I − P) Z_ref (I − P)
//! Z₁ = S ⊙ V₁ᵀ (A Dᵀ + D Aᵀ + λ Z_ref) V₁,     S_ij = 1 / (σᵢ² + σⱼ² + λ)
//! Z₂ = (Σ² + λI)⁻¹ V₁ᵀ (A Dᵀ + λ Z_ref) (I − P)
//! ```
//!
//! [`RspFactors`] stores only `V₁`, `Σ`, `Z₁`, `Z₂` and the reference operator, so
//! products with `Z*` and `Z*⁻¹` cost `O(r d)` after an `O(m² d)` factorization.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, LinearOperator};

/// Singular values at or below this fraction of `σ_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-12;
/// Largest condition number accepted for the core matrix of the inverse.
pub const MAX_CORE_CONDITION: f64 = 1e14;
/// Dimension limit of [`brute_force_oracle`].
pub const ORACLE_MAX_DIM: usize = 40;

/// Symmetric reference operator `Z_ref`.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceOperator {
    /// `c · I` in any dimension.
    ScaledIdentity(f64),
    /// Dense symmetric matrix with its cached spectrum bounds and inverse.
    Dense {
        matrix: DMatrix<f64>,
        inverse: Option<DMatrix<f64>>,
        min_eigenvalue: f64,
    },
}

impl ReferenceOperator {
    pub fn scaled_identity(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "reference scale must be positive and finite, got {c}"
            )));
        }
        Ok(Self::ScaledIdentity(c))
    }

    /// Wraps a dense matrix, replacing it by its symmetric part.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "reference matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("reference matrix has non-finite entries".into()));
        }
        let matrix = linalg::symmetric_part(&matrix);
        let n = matrix.nrows();
        if n == 0 {
            return Ok(Self::Dense {
                matrix,
                inverse: None,
                min_eigenvalue: f64::INFINITY,
            });
        }
        let eig = matrix.clone().symmetric_eigen();
        let min_eigenvalue = eig.eigenvalues.min();
        let amax = eig.eigenvalues.amax();
        let amin = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &e| a.min(e.abs()));
        let inverse = (amin > 0.0 && amax / amin <= MAX_CORE_CONDITION).then(|| {
            let inv = eig.eigenvalues.map(|e| 1.0 / e);
            &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
        });
        Ok(Self::Dense {
            matrix,
            inverse,
            min_eigenvalue,
        })
    }

    /// Fixed dimension of a dense reference, `None` for a scaled identity.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::ScaledIdentity(_) => None,
            Self::Dense { matrix, .. } => Some(matrix.nrows()),
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            Self::ScaledIdentity(c) => *c,
            Self::Dense { min_eigenvalue, .. } => *min_eigenvalue,
        }
    }

    pub fn is_invertible(&self) -> bool {
        match self {
            Self::ScaledIdentity(_) => true,
            Self::Dense { inverse, .. } => inverse.is_some(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::ScaledIdentity(c) => v * *c,
            Self::Dense { matrix, .. } => matrix * v,
        }
    }

    pub fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::ScaledIdentity(c) => m * *c,
            Self::Dense { matrix, .. } => matrix * m,
        }
    }

    /// `Z_ref⁻¹ v`.
    pub fn apply_inverse(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::ScaledIdentity(c) => Ok(v / *c),
            Self::Dense { inverse: Some(w), .. } => Ok(w * v),
            Self::Dense { .. } => Err(singular_reference()),
        }
    }

    pub fn apply_inverse_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Self::ScaledIdentity(c) => Ok(m / *c),
            Self::Dense { inverse: Some(w), .. } => Ok(w * m),
            Self::Dense { .. } => Err(singular_reference()),
        }
    }

    /// `Z_ref + δ I`.
    pub fn shifted(&self, delta: f64) -> Result<Self> {
        match self {
            Self::ScaledIdentity(c) => Self::scaled_identity(c + delta),
            Self::Dense { matrix, .. } => {
                let n = matrix.nrows();
                Self::dense(matrix + DMatrix::identity(n, n) * delta)
            }
        }
    }

    pub fn to_dense(&self, d: usize) -> DMatrix<f64> {
        match self {
            Self::ScaledIdentity(c) => DMatrix::identity(d, d) * *c,
            Self::Dense { matrix, .. } => matrix.clone(),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self.dim() {
            Some(n) if n != d => Err(Error::DimensionMismatch {
                expected: d,
                found: n,
            }),
            _ => Ok(()),
        }
    }
}

fn singular_reference() -> Error {
    Error::SingularCore {
        condition: f64::INFINITY,
    }
}

/// `λ = λ̄ · σ_max(A)²`, the regularization used by the optimizers.
pub fn relative_lambda(lambda_bar: f64, a: &DMatrix<f64>) -> f64 {
    let s = linalg::spectral_norm(a);
    lambda_bar * s * s
}

/// Inputs of the Procrustes problem.
#[derive(Debug, Clone)]
pub struct RspProblem {
    a: DMatrix<f64>,
    d: DMatrix<f64>,
    lambda: f64,
    zref: ReferenceOperator,
}

impl RspProblem {
    pub fn new(a: DMatrix<f64>, d: DMatrix<f64>, lambda: f64, zref: ReferenceOperator) -> Result<Self> {
        if a.shape() != d.shape() {
            return Err(Error::ShapeMismatch(format!(
                "A is {}x{} but D is {}x{}",
                a.nrows(),
                a.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        if a.ncols() > a.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "more secant columns ({}) than dimensions ({})",
                a.ncols(),
                a.nrows()
            )));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        zref.check_dim(a.nrows())?;
        Ok(Self { a, d, lambda, zref })
    }

    /// Same as [`RspProblem::new`] with `λ = λ̄ σ_max(A)²`.
    pub fn with_relative_lambda(
        a: DMatrix<f64>,
        d: DMatrix<f64>,
        lambda_bar: f64,
        zref: ReferenceOperator,
    ) -> Result<Self> {
        let lambda = relative_lambda(lambda_bar, &a);
        Self::new(a, d, lambda, zref)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn reference(&self) -> &ReferenceOperator {
        &self.zref
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `‖Z A − D‖² + (λ/2)‖Z − Z_ref‖²` for a dense candidate `z`.
    pub fn objective(&self, z: &DMatrix<f64>) -> f64 {
        let fit = (z * &self.a - &self.d).norm_squared();
        let reg = (z - self.zref.to_dense(self.dim())).norm_squared();
        fit + 0.5 * self.lambda * reg
    }

    pub fn factorize(&self) -> Result<RspFactors> {
        factorize(self)
    }

    /// Like [`factorize`], but with `λ = 0` drops numerically zero singular values of `A`
    /// instead of failing, which solves the problem for the truncated `A`.
    pub fn factorize_truncated(&self) -> Result<RspFactors> {
        factorize_impl(self, true)
    }
}

/// Factored solution of an [`RspProblem`].
#[derive(Debug, Clone)]
pub struct RspFactors {
    v1: DMatrix<f64>,
    sigma: DVector<f64>,
    z1: DMatrix<f64>,
    z2: DMatrix<f64>,
    zref: ReferenceOperator,
    lambda: f64,
    inverse: OnceLock<Result<InverseParts>>,
}

#[derive(Debug, Clone)]
struct InverseParts {
    complement: ComplementInverse,
    e: DMatrix<f64>,
    core_inv: DMatrix<f64>,
}

/// `N = V₂ (V₂ᵀ Z_ref V₂)⁻¹ V₂ᵀ`, applied without forming `V₂`:
/// `N = (I−P) W (I−P) − (I−P) W V₁ (V₁ᵀ W V₁)⁻¹ V₁ᵀ W (I−P)` with `W = Z_ref⁻¹`.
#[derive(Debug, Clone)]
struct ComplementInverse {
    v1: DMatrix<f64>,
    zref: ReferenceOperator,
    wv1: DMatrix<f64>,
    h11_inv: DMatrix<f64>,
}

impl ComplementInverse {
    fn new(v1: &DMatrix<f64>, zref: &ReferenceOperator) -> Result<Self> {
        let wv1 = zref.apply_inverse_columns(v1)?;
        let h11 = linalg::symmetric_part(&v1.tr_mul(&wv1));
        let h11_inv = if h11.is_empty() {
            h11
        } else {
            symmetric_inverse(&h11).ok_or(Error::SingularCore {
                condition: linalg::symmetric_condition(&h11),
            })?
        };
        Ok(Self {
            v1: v1.clone(),
            zref: zref.clone(),
            wv1,
            h11_inv,
        })
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let u = linalg::project_out(&self.v1, v);
        let w = self
            .zref
            .apply_inverse(&u)
            .expect("reference inverse checked at construction");
        let corr = &self.wv1 * (&self.h11_inv * self.v1.tr_mul(&w));
        linalg::project_out(&self.v1, &(w - corr))
    }

    fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (j, col) in m.column_iter().enumerate() {
            out.set_column(j, &self.apply(&col.into_owned()));
        }
        out
    }
}

/// Inverse of a symmetric matrix via its eigendecomposition, `None` above [`MAX_CORE_CONDITION`].
fn symmetric_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = linalg::symmetric_part(m).symmetric_eigen();
    let amax = eig.eigenvalues.amax();
    let amin = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &e| a.min(e.abs()));
    if !(amin > 0.0) || amax / amin > MAX_CORE_CONDITION {
        return None;
    }
    let inv = eig.eigenvalues.map(|e| 1.0 / e);
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// Solves the problem and returns the factored minimizer.
///
/// With `λ = 0`, `A` must have full column rank and the result is the limit of
/// the regularized solutions as `λ → 0`.
pub fn factorize(problem: &RspProblem) -> Result<RspFactors> {
    factorize_impl(problem, false)
}

fn factorize_impl(problem: &RspProblem, truncate: bool) -> Result<RspFactors> {
    let (a, d, lambda) = (&problem.a, &problem.d, problem.lambda);
    let (dim, m) = a.shape();

    let (v1, sigma, ut) = if m == 0 {
        (DMatrix::zeros(dim, 0), DVector::zeros(0), DMatrix::zeros(0, 0))
    } else {
        let svd = linalg::thin_svd(a);
        let r = svd.rank(RANK_TOL);
        if lambda == 0.0 && r < m && !truncate {
            return Err(Error::RankDeficient {
                sigma_min: svd.s[m - 1],
                sigma_max: svd.s[0],
            });
        }
        (
            svd.u.columns(0, r).into_owned(),
            svd.s.rows(0, r).into_owned(),
            svd.v.columns(0, r).transpose(),
        )
    };
    let r = sigma.len();

    // ΣUᵀ, the coordinates of A in the V₁ basis.
    let mut su = ut;
    for i in 0..r {
        su.row_mut(i).scale_mut(sigma[i]);
    }
    let dt_v1 = d.tr_mul(&v1);
    let k = &su * &dt_v1;
    let zref_v1 = problem.zref.apply_columns(&v1);
    let g11 = v1.tr_mul(&zref_v1);

    let mut z1 = &k + k.transpose() + &g11 * lambda;
    for i in 0..r {
        for j in 0..r {
            let den = sigma[i] * sigma[i] + sigma[j] * sigma[j] + lambda;
            z1[(i, j)] = if den > 0.0 { z1[(i, j)] / den } else { 0.0 };
        }
    }
    let z1 = linalg::symmetric_part(&z1);

    let mut z2 = &su * d.transpose() + zref_v1.transpose() * lambda;
    let z2_v1 = &z2 * &v1;
    z2 -= z2_v1 * v1.transpose();
    for i in 0..r {
        let den = sigma[i] * sigma[i] + lambda;
        z2.row_mut(i).scale_mut(if den > 0.0 { 1.0 / den } else { 0.0 });
    }

    Ok(RspFactors {
        v1,
        sigma,
        z1,
        z2,
        zref: problem.zref.clone(),
        lambda,
        inverse: OnceLock::new(),
    })
}

impl RspFactors {
    /// Assembles factors from explicit parts (checked for shape consistency only).
    pub fn from_parts(
        v1: DMatrix<f64>,
        sigma: DVector<f64>,
        z1: DMatrix<f64>,
        z2: DMatrix<f64>,
        zref: ReferenceOperator,
        lambda: f64,
    ) -> Result<Self> {
        let (d, r) = v1.shape();
        if sigma.len() != r || z1.shape() != (r, r) || z2.shape() != (r, d) {
            return Err(Error::ShapeMismatch(format!(
                "inconsistent factor shapes: V1 {}x{}, sigma {}, Z1 {}x{}, Z2 {}x{}",
                d,
                r,
                sigma.len(),
                z1.nrows(),
                z1.ncols(),
                z2.nrows(),
                z2.ncols()
            )));
        }
        zref.check_dim(d)?;
        Ok(Self {
            v1,
            sigma,
            z1,
            z2,
            zref,
            lambda,
            inverse: OnceLock::new(),
        })
    }

    pub fn v1(&self) -> &DMatrix<f64> {
        &self.v1
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn z1(&self) -> &DMatrix<f64> {
        &self.z1
    }

    pub fn z2(&self) -> &DMatrix<f64> {
        &self.z2
    }

    pub fn reference(&self) -> &ReferenceOperator {
        &self.zref
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Effective rank `r` of `A`.
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn dim(&self) -> usize {
        self.v1.nrows()
    }

    fn check_vec(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(())
    }

    /// `Z* v`.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_vec(v)?;
        Ok(self.apply_unchecked(v))
    }

    fn apply_unchecked(&self, v: &DVector<f64>) -> DVector<f64> {
        let p = self.v1.tr_mul(v);
        let u = linalg::project_out(&self.v1, v);
        let top = &self.z1 * &p + &self.z2 * v;
        let mut out = linalg::project_out(&self.v1, &self.zref.apply(&u));
        out.gemv(1.0, &self.v1, &top, 1.0);
        out.gemv_tr(1.0, &self.z2, &p, 1.0);
        out
    }

    fn inverse_parts(&self) -> Result<&InverseParts> {
        self.inverse
            .get_or_init(|| {
                let complement = ComplementInverse::new(&self.v1, &self.zref)?;
                let n_z2t = complement.apply_columns(&self.z2.transpose());
                let core = &self.z1 - &self.z2 * &n_z2t;
                let core_inv = if core.is_empty() {
                    core
                } else {
                    symmetric_inverse(&core).ok_or(Error::SingularCore {
                        condition: linalg::symmetric_condition(&core),
                    })?
                };
                Ok(InverseParts {
                    complement,
                    e: &self.v1 - n_z2t,
                    core_inv,
                })
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// `Z*⁻¹ v`, or [`Error::SingularCore`] when the small core matrix is ill-conditioned.
    pub fn apply_inverse(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_vec(v)?;
        let parts = self.inverse_parts()?;
        let mut out = parts.complement.apply(v);
        let t = &parts.core_inv * parts.e.tr_mul(v);
        out.gemv(1.0, &parts.e, &t, 1.0);
        Ok(out)
    }

    /// Borrowed operator view of `Z*⁻¹`, after checking that it exists.
    pub fn inverse(&self) -> Result<RspInverse<'_>> {
        self.inverse_parts()?;
        Ok(RspInverse(self))
    }

    /// Condition number of the core matrix `Z₁ − Z₂ N Z₂ᵀ` of the inverse.
    pub fn core_condition(&self) -> Result<f64> {
        let complement = ComplementInverse::new(&self.v1, &self.zref)?;
        let core = &self.z1 - &self.z2 * complement.apply_columns(&self.z2.transpose());
        Ok(if core.is_empty() {
            1.0
        } else {
            linalg::symmetric_condition(&core)
        })
    }

    /// Dense `d × d` matrix of `Z*`. Test and diagnostic scale only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        linalg::materialize(self)
    }

    /// Replaces `Z₁` so that the full operator satisfies `Z ⪰ σ I`.
    ///
    /// With `N_σ` the complement inverse built from `Z_ref − σI`, the condition is
    /// `Z₁ − Z₂ N_σ Z₂ᵀ ⪰ σ I`; the eigenvalues of that `r × r` matrix are clamped
    /// at `σ` and `Z₂ N_σ Z₂ᵀ` is added back. Requires `σ < λ_min(Z_ref)`.
    pub fn psd_project(&self, sigma_floor: f64) -> Result<RspFactors> {
        if !(sigma_floor.is_finite() && sigma_floor >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma floor must be finite and nonnegative, got {sigma_floor}"
            )));
        }
        if !self.zref.is_positive_definite() {
            return Err(Error::NotPositiveDefinite(format!(
                "reference operator has minimum eigenvalue {:e}",
                self.zref.min_eigenvalue()
            )));
        }
        if sigma_floor >= self.zref.min_eigenvalue() {
            return Err(Error::InvalidArgument(format!(
                "sigma floor {sigma_floor:e} must be below the smallest reference eigenvalue {:e}",
                self.zref.min_eigenvalue()
            )));
        }
        if self.rank() == 0 {
            return Ok(self.clone());
        }
        let shifted = self.zref.shifted(-sigma_floor)?;
        let complement = ComplementInverse::new(&self.v1, &shifted)?;
        let coupling = linalg::symmetric_part(&(&self.z2 * complement.apply_columns(&self.z2.transpose())));
        let chi = linalg::symmetric_part(&(&self.z1 - &coupling));
        let eig = chi.symmetric_eigen();
        if eig.eigenvalues.iter().all(|&e| e >= sigma_floor) {
            return Ok(self.clone());
        }
        let clamped = eig.eigenvalues.map(|e| e.max(sigma_floor));
        let chi_star = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        let z1 = linalg::symmetric_part(&(chi_star + coupling));
        Self::from_parts(
            self.v1.clone(),
            self.sigma.clone(),
            z1,
            self.z2.clone(),
            self.zref.clone(),
            self.lambda,
        )
    }
}

impl LinearOperator for RspFactors {
    fn dim(&self) -> usize {
        self.v1.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply_unchecked(v)
    }
}

/// Operator view of `Z*⁻¹` obtained from [`RspFactors::inverse`].
#[derive(Debug, Clone, Copy)]
pub struct RspInverse<'a>(&'a RspFactors);

impl LinearOperator for RspInverse<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.0
            .apply_inverse(v)
            .expect("inverse parts validated when the view was created")
    }
}

/// Dense minimizer from the vectorized least-squares formulation.
///
/// Works in an orthonormal basis `{E_ii, (E_ij + E_ji)/√2}` of symmetric matrices,
/// so the problem becomes `min ‖H y − vec D‖² + (λ/2)‖y − y_ref‖²`. The deviation
/// `y − y_ref` is computed from the SVD of `H`; zero singular directions stay at the
/// reference, which gives the `λ → 0` limit when `λ = 0`.
pub fn brute_force_oracle(problem: &RspProblem) -> Result<DMatrix<f64>> {
    let d = problem.dim();
    if d > ORACLE_MAX_DIM {
        return Err(Error::TooLarge {
            dim: d,
            max: ORACLE_MAX_DIM,
        });
    }
    let a = &problem.a;
    let m = a.ncols();
    let basis = symmetric_basis(d);
    let n = basis.len();
    let zref = problem.zref.to_dense(d);

    let mut h = DMatrix::zeros(d * m, n);
    let mut y_ref = DVector::zeros(n);
    for (k, &(i, j)) in basis.iter().enumerate() {
        // B_k A only touches rows i and j.
        let (w, col) = if i == j {
            (1.0, DMatrix::from_fn(d, m, |r, c| if r == i { a[(i, c)] } else { 0.0 }))
        } else {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            (
                2.0 * s,
                DMatrix::from_fn(d, m, |r, c| {
                    if r == i {
                        s * a[(j, c)]
                    } else if r == j {
                        s * a[(i, c)]
                    } else {
                        0.0
                    }
                }),
            )
        };
        h.set_column(k, &DVector::from_column_slice(col.as_slice()));
        y_ref[k] = w * zref[(i, j)];
    }
    let target = DVector::from_column_slice(problem.d.as_slice());
    let residual = target - &h * &y_ref;

    let delta = if h.is_empty() {
        DVector::zeros(n)
    } else {
        let svd = linalg::thin_svd(&h);
        let r = svd.rank(RANK_TOL);
        let half_lambda = 0.5 * problem.lambda;
        let coef = svd.u.columns(0, r).tr_mul(&residual);
        let scaled = DVector::from_fn(r, |k, _| {
            let s = svd.s[k];
            coef[k] * s / (s * s + half_lambda)
        });
        svd.v.columns(0, r) * scaled
    };
    let y = y_ref + delta;

    let mut z = DMatrix::zeros(d, d);
    for (k, &(i, j)) in basis.iter().enumerate() {
        if i == j {
            z[(i, i)] = y[k];
        } else {
            let v = y[k] * std::f64::consts::FRAC_1_SQRT_2;
            z[(i, j)] = v;
            z[(j, i)] = v;
        }
    }
    Ok(z)
}

fn symmetric_basis(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            out.push((i, j));
        }
    }
    out
}

/// Measured `‖Z*(λ) − Z*(0)‖_F` and the bound `5λ‖Z*(0) − Z_ref‖_F / (σ_min(A)² + λ)`.
///
/// Both factorizations must come from the same `A`, `D` and reference.
pub fn bias_bound(factors_lambda: &RspFactors, factors_zero: &RspFactors) -> Result<(f64, f64)> {
    if factors_lambda.dim() != factors_zero.dim() {
        return Err(Error::DimensionMismatch {
            expected: factors_zero.dim(),
            found: factors_lambda.dim(),
        });
    }
    let d = factors_zero.dim();
    let z_lambda = factors_lambda.to_dense();
    let z_zero = factors_zero.to_dense();
    let measured = (&z_lambda - &z_zero).norm();
    let lambda = factors_lambda.lambda();
    if lambda == 0.0 {
        return Ok((measured, 0.0));
    }
    let sigma_min = factors_zero.sigma().iter().copied().fold(f64::INFINITY, f64::min);
    let sigma_min = if sigma_min.is_finite() { sigma_min } else { 0.0 };
    let dist = (&z_zero - factors_zero.reference().to_dense(d)).norm();
    Ok((measured, 5.0 * lambda * dist / (sigma_min * sigma_min + lambda)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, gaussian_vector, random_spd, random_symmetric};
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    fn random_problem(rng: &mut ChaCha8Rng, d: usize, m: usize, lambda: f64, dense: bool) -> RspProblem {
        let a = gaussian_matrix(rng, d, m);
        let dmat = gaussian_matrix(rng, d, m);
        let zref = if dense {
            ReferenceOperator::dense(random_spd(rng, d, 0.5, 2.0)).unwrap()
        } else {
            ReferenceOperator::scaled_identity(rng.random_range(0.5..2.0)).unwrap()
        };
        RspProblem::new(a, dmat, lambda, zref).unwrap()
    }

    #[test]
    fn identity_case() {
        let e1 = dmatrix![1.0; 0.0];
        let p = RspProblem::new(e1.clone(), e1, 0.0, ReferenceOperator::scaled_identity(1.0).unwrap()).unwrap();
        let f = p.factorize().unwrap();
        assert!((f.z1()[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(f.z2().norm() < 1e-14);
        assert!((f.to_dense() - DMatrix::identity(2, 2)).norm() < 1e-14);
        let v = DVector::from_vec(vec![0.3, -1.7]);
        assert!((f.apply_inverse(&v).unwrap() - &v).norm() < 1e-14);
    }

    #[test]
    fn huge_lambda_returns_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = gaussian_matrix(&mut rng, 7, 3);
        let d = gaussian_matrix(&mut rng, 7, 3);
        let p = RspProblem::new(a, d, 1e12, ReferenceOperator::scaled_identity(2.0).unwrap()).unwrap();
        let f = p.factorize().unwrap();
        for _ in 0..5 {
            let v = gaussian_vector(&mut rng, 7);
            assert!((f.apply(&v).unwrap() - &v * 2.0).norm() <= 1e-6 * v.norm());
        }
        let z = brute_force_oracle(&p).unwrap();
        assert!((z - DMatrix::identity(7, 7) * 2.0).amax() < 1e-4);
    }

    #[test]
    fn matches_oracle_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_problem(&mut rng, 8, 3, 0.1, true);
        let f = p.factorize().unwrap();
        let z = brute_force_oracle(&p).unwrap();
        assert!(rel(&f.to_dense(), &z) < 1e-10);
    }

    #[test]
    fn oracle_consistent_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = gaussian_matrix(&mut rng, 6, 3);
        let p = RspProblem::new(a.clone(), a.clone(), 0.0, ReferenceOperator::scaled_identity(1.0).unwrap()).unwrap();
        let z = brute_force_oracle(&p).unwrap();
        assert!((z * &a - &a).norm() < 1e-10);
    }

    #[test]
    fn oracle_is_local_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = random_problem(&mut rng, 6, 2, 0.3, false);
        let z = brute_force_oracle(&p).unwrap();
        let f0 = p.objective(&z);
        for _ in 0..20 {
            let mut e = random_symmetric(&mut rng, 6);
            e *= 1e-3 / e.norm();
            assert!(f0 <= p.objective(&(&z + e)) + 1e-9);
        }
    }

    #[test]
    fn oracle_rejects_large_dimension() {
        let p = RspProblem::new(
            DMatrix::zeros(41, 1),
            DMatrix::zeros(41, 1),
            1.0,
            ReferenceOperator::scaled_identity(1.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(brute_force_oracle(&p), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn rank_deficient_without_regularization() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let c = gaussian_vector(&mut rng, 5);
        let a = DMatrix::from_columns(&[c.clone(), c * 2.0]);
        let d = gaussian_matrix(&mut rng, 5, 2);
        let zref = ReferenceOperator::scaled_identity(1.0).unwrap();
        let p = RspProblem::new(a.clone(), d.clone(), 0.0, zref.clone()).unwrap();
        assert!(matches!(p.factorize(), Err(Error::RankDeficient { .. })));
        let p = RspProblem::new(a, d, 0.5, zref).unwrap();
        let f = p.factorize().unwrap();
        assert_eq!(f.rank(), 1);
        assert!(rel(&f.to_dense(), &brute_force_oracle(&p).unwrap()) < 1e-10);
    }

    #[test]
    fn truncated_factorization_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let c = gaussian_matrix(&mut rng, 6, 2);
        let a = DMatrix::from_columns(&[c.column(0).into_owned(), c.column(1).into_owned(), c.column(0) + c.column(1)]);
        let d = gaussian_matrix(&mut rng, 6, 3);
        let p = RspProblem::new(a, d, 0.0, ReferenceOperator::scaled_identity(2.0).unwrap()).unwrap();
        assert!(p.factorize().is_err());
        let f = p.factorize_truncated().unwrap();
        assert_eq!(f.rank(), 2);
        assert!(rel(&f.to_dense(), &brute_force_oracle(&p).unwrap()) < 1e-8);
    }

    #[test]
    fn empty_secants_give_reference() {
        let zref = ReferenceOperator::scaled_identity(3.0).unwrap();
        let p = RspProblem::new(DMatrix::zeros(4, 0), DMatrix::zeros(4, 0), 0.0, zref).unwrap();
        let f = p.factorize().unwrap();
        assert_eq!(f.rank(), 0);
        assert!((f.to_dense() - DMatrix::identity(4, 4) * 3.0).norm() < 1e-15);
        let v = DVector::from_element(4, 3.0);
        assert!((f.apply_inverse(&v).unwrap() - DVector::from_element(4, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let zref = ReferenceOperator::scaled_identity(1.0).unwrap();
        assert!(RspProblem::new(DMatrix::zeros(3, 2), DMatrix::zeros(3, 1), 0.0, zref.clone()).is_err());
        assert!(RspProblem::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 3), 0.0, zref.clone()).is_err());
        assert!(RspProblem::new(DMatrix::zeros(3, 1), DMatrix::zeros(3, 1), -1.0, zref).is_err());
        let dense = ReferenceOperator::dense(DMatrix::identity(4, 4)).unwrap();
        assert!(RspProblem::new(DMatrix::zeros(3, 1), DMatrix::zeros(3, 1), 0.0, dense).is_err());
    }

    #[test]
    fn apply_checks_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let f = random_problem(&mut rng, 5, 2, 0.1, false).factorize().unwrap();
        assert!(f.apply(&DVector::zeros(4)).is_err());
        assert!(f.apply_inverse(&DVector::zeros(6)).is_err());
    }

    #[test]
    fn dense_inverse_cross_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = random_problem(&mut rng, 8, 3, 0.05, true);
        let f = p.factorize().unwrap();
        let inv = f.to_dense().try_inverse().unwrap();
        let inv_op = linalg::materialize(&f.inverse().unwrap());
        assert!(rel(&inv_op, &inv) < 1e-8);
    }

    #[test]
    fn singular_core_detected() {
        // Z1 = 0 and Z2 = 0 make the core exactly zero.
        let v1 = dmatrix![1.0; 0.0; 0.0];
        let f = RspFactors::from_parts(
            v1,
            DVector::from_element(1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 3),
            ReferenceOperator::scaled_identity(1.0).unwrap(),
            0.0,
        )
        .unwrap();
        assert!(matches!(f.apply_inverse(&DVector::zeros(3)), Err(Error::SingularCore { .. })));
    }

    #[test]
    fn psd_projection_inactive_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let q = random_spd(&mut rng, 6, 1.0, 2.0);
        let a = gaussian_matrix(&mut rng, 6, 2);
        let d = &q * &a;
        let p = RspProblem::new(a, d, 1e-3, ReferenceOperator::scaled_identity(1.5).unwrap()).unwrap();
        let f = p.factorize().unwrap();
        let g = f.psd_project(0.0).unwrap();
        assert!((f.z1() - g.z1()).norm() <= 1e-12);
        assert!((f.z2() - g.z2()).norm() <= 1e-12);
    }

    #[test]
    fn psd_projection_with_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let p = random_problem(&mut rng, 7, 3, 0.01, false);
            let p = RspProblem::new(p.a().clone(), p.d().clone(), p.lambda(), ReferenceOperator::scaled_identity(1.0).unwrap())
                .unwrap();
            let f = p.factorize().unwrap();
            for floor in [0.0, 0.1] {
                let g = f.psd_project(floor).unwrap();
                let eig = linalg::symmetric_eigenvalues(&g.to_dense());
                assert!(eig[0] >= floor - 1e-10, "min eig {} below {floor}", eig[0]);
            }
        }
    }

    #[test]
    fn psd_projection_requires_definite_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let p = random_problem(&mut rng, 5, 2, 0.1, false);
        let indefinite = ReferenceOperator::dense(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0, 1.0, 1.0]))).unwrap();
        let p = RspProblem::new(p.a().clone(), p.d().clone(), 0.1, indefinite).unwrap();
        let f = p.factorize().unwrap();
        assert!(matches!(f.psd_project(0.0), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn bias_bound_zero_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = random_problem(&mut rng, 6, 2, 0.0, false).factorize().unwrap();
        let (measured, bound) = bias_bound(&f, &f).unwrap();
        assert_eq!((measured, bound), (0.0, 0.0));
    }

    #[test]
    fn bias_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let p0 = random_problem(&mut rng, 8, 3, 0.0, true);
        let f0 = p0.factorize().unwrap();
        let p = RspProblem::new(p0.a().clone(), p0.d().clone(), 1e-3, p0.reference().clone()).unwrap();
        let (measured, bound) = bias_bound(&p.factorize().unwrap(), &f0).unwrap();
        assert!(measured > 0.0 && measured <= bound);
    }

    #[test]
    fn dense_reference_is_symmetrized() {
        let r = ReferenceOperator::dense(dmatrix![2.0, 1.0; 0.0, 2.0]).unwrap();
        assert_eq!(r.to_dense(2), dmatrix![2.0, 0.5; 0.5, 2.0]);
        let v = DVector::from_vec(vec![1.0, -2.0]);
        assert!((r.apply_inverse(&r.apply(&v)).unwrap() - v).norm() < 1e-12);
    }

    #[test]
    fn relative_lambda_uses_squared_norm() {
        let a = dmatrix![3.0, 0.0; 0.0, 1.0; 0.0, 0.0];
        assert!((relative_lambda(0.5, &a) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn mutated_factor_breaks_oracle_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = random_problem(&mut rng, 7, 3, 0.2, false);
        let f = p.factorize().unwrap();
        let z = brute_force_oracle(&p).unwrap();
        let broken = RspFactors::from_parts(
            f.v1().clone(),
            f.sigma().clone(),
            f.z1().clone(),
            -f.z2(),
            f.reference().clone(),
            f.lambda(),
        )
        .unwrap();
        assert!(rel(&broken.to_dense(), &z) > 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn factorization_matches_oracle(
            seed in any::<u64>(),
            d in 4usize..=10,
            m in 1usize..=4,
            li in 0usize..4,
            dense in any::<bool>(),
        ) {
            let lambda = [0.0, 1e-6, 1e-2, 1.0][li];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng, d, m, lambda, dense);
            let f = p.factorize().unwrap();
            let z = brute_force_oracle(&p).unwrap();
            prop_assert!(rel(&f.to_dense(), &z) <= 1e-8);
        }

        #[test]
        fn factor_invariants(seed in any::<u64>(), d in 3usize..=12, m in 1usize..=3, dense in any::<bool>()) {
            let m = m.min(d);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_problem(&mut rng, d, m, 0.1, dense).factorize().unwrap();
            let r = f.rank();
            prop_assert!((f.v1().tr_mul(f.v1()) - DMatrix::identity(r, r)).amax() <= 1e-12);
            prop_assert!(linalg::asymmetry(f.z1()) <= 1e-12);
            prop_assert!((f.z2() * f.v1()).amax() <= 1e-10);
            let v = gaussian_vector(&mut rng, d);
            let w = gaussian_vector(&mut rng, d);
            let lhs = v.dot(&f.apply(&w).unwrap());
            let rhs = w.dot(&f.apply(&v).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            let dense_z = f.to_dense();
            prop_assert!((f.apply(&v).unwrap() - &dense_z * &v).amax() <= 1e-12 * (1.0 + dense_z.amax() * v.amax()));
        }

        #[test]
        fn exact_symmetric_secants_are_interpolated(seed in any::<u64>(), d in 3usize..=12, m in 1usize..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_symmetric(&mut rng, d);
            let a = gaussian_matrix(&mut rng, d, m);
            let dm = &q * &a;
            let p = RspProblem::new(a.clone(), dm.clone(), 0.0, ReferenceOperator::scaled_identity(1.0).unwrap()).unwrap();
            let f = p.factorize().unwrap();
            let res = (f.to_dense() * &a - &dm).norm() / dm.norm();
            prop_assert!(res <= 1e-8);
        }

        #[test]
        fn inverse_composes_to_identity(seed in any::<u64>(), d in 3usize..=12, m in 1usize..=3, dense in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_spd(&mut rng, d, 0.5, 2.0);
            let a = gaussian_matrix(&mut rng, d, m);
            let dm = &q * &a;
            let zref = if dense {
                ReferenceOperator::dense(random_spd(&mut rng, d, 0.5, 2.0)).unwrap()
            } else {
                ReferenceOperator::scaled_identity(1.0).unwrap()
            };
            let f = RspProblem::new(a, dm, 1e-2, zref).unwrap().factorize().unwrap();
            prop_assume!(f.core_condition().unwrap() <= 1e8);
            let v = gaussian_vector(&mut rng, d);
            let back = f.apply(&f.apply_inverse(&v).unwrap()).unwrap();
            prop_assert!((back - &v).norm() <= 1e-8 * v.norm());
        }

        #[test]
        fn reference_operator_properties(seed in any::<u64>(), d in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = ReferenceOperator::dense(random_spd(&mut rng, d, 0.3, 3.0)).unwrap();
            let v = gaussian_vector(&mut rng, d);
            let w = gaussian_vector(&mut rng, d);
            prop_assert!((v.dot(&r.apply(&w)) - w.dot(&r.apply(&v))).abs() <= 1e-12 * (1.0 + v.norm() * w.norm()));
            prop_assert!((r.apply_inverse(&r.apply(&v)).unwrap() - &v).norm() <= 1e-10 * v.norm().max(1.0));
        }
    }
}
