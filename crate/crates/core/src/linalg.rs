//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A square linear map `v ↦ M v` that never needs to be stored densely.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;

    /// Applies the operator to every column of `m`.
    fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), m.ncols());
        for (j, col) in m.column_iter().enumerate() {
            out.set_column(j, &self.apply(&col.into_owned()));
        }
        out
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self * v
    }

    fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self * m
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        (**self).apply(v)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        (**self).apply(v)
    }
}

/// Builds the dense matrix of `op` column by column. Test and diagnostic scale only.
pub fn materialize<O: LinearOperator + ?Sized>(op: &O) -> DMatrix<f64> {
    let d = op.dim();
    let mut out = DMatrix::zeros(d, d);
    let mut e = DVector::zeros(d);
    for j in 0..d {
        e[j] = 1.0;
        out.set_column(j, &op.apply(&e));
        e[j] = 0.0;
    }
    out
}

pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `‖M − Mᵀ‖_F`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    thin_svd(m).s[0]
}

/// Thin SVD `M = U diag(s) Vᵀ` with `k = min(rows, cols)` triplets, `s` descending.
///
/// Singular vectors paired with numerically zero singular values are unspecified.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    /// Number of singular values above `rel_tol · s_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        match self.s.len() {
            0 => 0,
            _ => self.s.iter().filter(|&&x| x > rel_tol * self.s[0] && x > 0.0).count(),
        }
    }

    pub fn recompose(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.s) * self.v.transpose()
    }
}

/// Computes a [`ThinSvd`].
///
/// The input is first reduced to a small square factor by QR. nalgebra's SVD of
/// that factor occasionally stalls on clustered singular values and returns
/// inaccurate vectors, so the result is verified and, if needed, recomputed from
/// the symmetric eigendecomposition of `[[0, R], [Rᵀ, 0]]`.
pub fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    let (rows, cols) = m.shape();
    if rows < cols {
        let t = thin_svd(&m.transpose());
        return ThinSvd { u: t.v, s: t.s, v: t.u };
    }
    if cols == 0 {
        return ThinSvd {
            u: DMatrix::zeros(rows, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(0, 0),
        };
    }
    let qr = m.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let (ur, s, v) = small_svd(&r);
    ThinSvd { u: q * ur, s, v }
}

fn small_svd(r: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let k = r.nrows();
    let scale = r.norm().max(f64::MIN_POSITIVE);
    let svd = r.clone().svd(true, true);
    if let (Some(u), Some(vt)) = (svd.u, svd.v_t) {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = u.select_columns(&order);
        let v = vt.transpose().select_columns(&order);
        let s = DVector::from_iterator(k, order.iter().map(|&i| svd.singular_values[i]));
        let id = DMatrix::<f64>::identity(k, k);
        let rec = &u * DMatrix::from_diagonal(&s) * v.transpose();
        if (rec - r).norm() <= 1e-13 * scale
            && (u.tr_mul(&u) - &id).amax() <= 1e-12
            && (v.tr_mul(&v) - &id).amax() <= 1e-12
        {
            return (u, s, v);
        }
    }
    let mut j = DMatrix::zeros(2 * k, 2 * k);
    j.view_mut((0, k), (k, k)).copy_from(r);
    j.view_mut((k, 0), (k, k)).copy_from(&r.transpose());
    let eig = j.symmetric_eigen();
    let mut order: Vec<usize> = (0..2 * k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut u = DMatrix::zeros(k, k);
    let mut v = DMatrix::zeros(k, k);
    let mut s = DVector::zeros(k);
    let root2 = std::f64::consts::SQRT_2;
    for (col, &i) in order.iter().take(k).enumerate() {
        s[col] = eig.eigenvalues[i].max(0.0);
        let w = eig.eigenvectors.column(i);
        u.set_column(col, &(w.rows(0, k) * root2));
        v.set_column(col, &(w.rows(k, k) * root2));
    }
    (u, s, v)
}

/// Moore–Penrose pseudo-inverse, dropping singular values at or below `rel_tol · s_max`.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = thin_svd(m);
    let k = svd.rank(rel_tol);
    let mut vs = svd.v.columns(0, k).into_owned();
    for j in 0..k {
        vs.column_mut(j).scale_mut(1.0 / svd.s[j]);
    }
    vs * svd.u.columns(0, k).transpose()
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    if m.iter().any(|v| !v.is_finite()) {
        return vec![f64::NAN; m.nrows()];
    }
    let mut eig: Vec<f64> = symmetric_part(m).symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    eig
}

/// Iteration cap for one Schur attempt in [`general_eigenvalues`].
const SCHUR_MAX_ITERS: usize = 2_000;

/// Eigenvalues `(re, im)` of a general square matrix, unsorted.
///
/// nalgebra's Schur iteration can stall forever at machine-precision tolerance (heavily
/// repeated eigenvalues are typical for `h₀I + low rank`), so every attempt is capped and
/// the deflation tolerance is relaxed step by step, retrying on a random orthogonal
/// similarity transform of `m` if all of them stall.
pub fn general_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch(format!("eigenvalues of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("eigenvalues of a non-finite matrix".into()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1ab1e);
    let mut a = m.clone();
    for _ in 0..4 {
        for eps in [f64::EPSILON, 1e-14, 1e-12, 1e-10] {
            if let Some(schur) = a.clone().try_schur(eps, SCHUR_MAX_ITERS) {
                return Ok(schur.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect());
            }
        }
        let q = random_orthogonal(&mut rng, n);
        a = &q * m * q.transpose();
    }
    Err(Error::InvalidArgument("Schur decomposition did not converge".into()))
}

/// Ratio of the extreme absolute eigenvalues of a symmetric matrix (`∞` if singular).
pub fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = symmetric_eigenvalues(m);
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &e| {
        (lo.min(e.abs()), hi.max(e.abs()))
    });
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `(I − V Vᵀ) v` for `V` with orthonormal columns.
pub fn project_out(v1: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if v1.ncols() == 0 {
        return v.clone();
    }
    v - v1 * (v1.tr_mul(v))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    random_orthonormal_columns(rng, n, n)
}

/// `rows × cols` matrix with orthonormal columns, `cols ≤ rows`.
pub fn random_orthonormal_columns<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
) -> DMatrix<f64> {
    assert!(cols <= rows);
    let qr = gaussian_matrix(rng, rows, cols).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, n);
    let eig = DVector::from_fn(n, |_, _| rng.random_range(lo..=hi));
    &q * DMatrix::from_diagonal(&eig) * q.transpose()
}

/// Random symmetric matrix with standard Gaussian entries.
pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    symmetric_part(&gaussian_matrix(rng, n, n))
}
