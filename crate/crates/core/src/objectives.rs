//! Test problems, gradient oracles and the recovery-experiment helpers.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, LinearOperator};

/// A differentiable function `ℝᵈ → ℝ`.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.value(x), self.gradient(x))
    }

    /// Upper bound on the Lipschitz constant of the gradient.
    fn lipschitz(&self) -> f64;
}

/// `f(x) = ½ (x − x⋆)ᵀ Q (x − x⋆) + f⋆`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    q: DMatrix<f64>,
    x_star: DVector<f64>,
    f_star: f64,
    eig_min: f64,
    eig_max: f64,
}

impl QuadraticObjective {
    pub fn new(q: DMatrix<f64>, x_star: DVector<f64>, f_star: f64) -> Result<Self> {
        if !q.is_square() || q.nrows() != x_star.len() {
            return Err(Error::ShapeMismatch(format!(
                "Q is {}x{} but x⋆ has length {}",
                q.nrows(),
                q.ncols(),
                x_star.len()
            )));
        }
        if linalg::asymmetry(&q) > 1e-12 * q.norm().max(1.0) {
            return Err(Error::InvalidArgument("Q is not symmetric".into()));
        }
        let q = linalg::symmetric_part(&q);
        let eig = linalg::symmetric_eigenvalues(&q);
        let (eig_min, eig_max) = (eig.first().copied().unwrap_or(1.0), eig.last().copied().unwrap_or(1.0));
        if eig_min <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!("Q has eigenvalue {eig_min:e}")));
        }
        Ok(Self {
            q,
            x_star,
            f_star,
            eig_min,
            eig_max,
        })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn x_star(&self) -> &DVector<f64> {
        &self.x_star
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    /// `(ℓ, L)`, the extreme eigenvalues of `Q`.
    pub fn eigenvalue_bounds(&self) -> (f64, f64) {
        (self.eig_min, self.eig_max)
    }

    pub fn condition(&self) -> f64 {
        self.eig_max / self.eig_min
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.x_star.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let e = x - &self.x_star;
        0.5 * e.dot(&(&self.q * &e)) + self.f_star
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * (x - &self.x_star)
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let e = x - &self.x_star;
        let g = &self.q * &e;
        (0.5 * e.dot(&g) + self.f_star, g)
    }

    fn lipschitz(&self) -> f64 {
        self.eig_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `½ (z − b)²`.
    Square,
    /// `log(1 + exp(−b z))` with `b ∈ {−1, +1}`.
    Logistic,
}

impl Loss {
    pub fn value(self, z: f64, b: f64) -> f64 {
        match self {
            Loss::Square => 0.5 * (z - b) * (z - b),
            Loss::Logistic => softplus(-b * z),
        }
    }

    /// `∂ℓ/∂z`.
    pub fn derivative(self, z: f64, b: f64) -> f64 {
        match self {
            Loss::Square => z - b,
            Loss::Logistic => -b * sigmoid(-b * z),
        }
    }

    /// Bound on `∂²ℓ/∂z²`.
    pub fn curvature_bound(self) -> f64 {
        match self {
            Loss::Square => 1.0,
            Loss::Logistic => 0.25,
        }
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `f(x) = (1/N) Σ ℓ(aᵢᵀx, bᵢ) + (τ/2)‖x‖²`.
#[derive(Debug, Clone)]
pub struct RegressionObjective {
    data: DMatrix<f64>,
    labels: DVector<f64>,
    loss: Loss,
    tau: f64,
    lipschitz: f64,
}

impl RegressionObjective {
    pub fn new(data: DMatrix<f64>, labels: DVector<f64>, loss: Loss, tau: f64) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::InvalidArgument("regression needs at least one sample".into()));
        }
        if data.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                found: labels.len(),
            });
        }
        if data.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entries in regression data".into()));
        }
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be nonnegative, got {tau}")));
        }
        if loss == Loss::Logistic && labels.iter().any(|&b| b != 1.0 && b != -1.0) {
            return Err(Error::InvalidArgument("logistic labels must be -1 or +1".into()));
        }
        let s = linalg::spectral_norm(&data);
        let lipschitz = s * s / data.nrows() as f64 * loss.curvature_bound() + tau;
        Ok(Self {
            data,
            labels,
            loss,
            tau,
            lipschitz,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn num_samples(&self) -> usize {
        self.data.nrows()
    }

    /// `ℓ'(aᵢᵀx, bᵢ)`.
    pub fn sample_derivative(&self, i: usize, x: &DVector<f64>) -> f64 {
        let z = self.data.row(i).transpose().dot(x);
        self.loss.derivative(z, self.labels[i])
    }

    /// `maxᵢ L_i` with `L_i = ‖aᵢ‖² sup ℓ'' + τ`, the smoothness of the worst single term.
    pub fn max_sample_lipschitz(&self) -> f64 {
        let row_max = self.data.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max);
        row_max * self.loss.curvature_bound() + self.tau
    }

    /// Gradient of the `i`-th term `ℓ(aᵢᵀx, bᵢ) + (τ/2)‖x‖²`.
    pub fn sample_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        self.data.row(i).transpose() * self.sample_derivative(i, x) + x * self.tau
    }
}

impl Objective for RegressionObjective {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let z = &self.data * x;
        let total: f64 = z.iter().zip(self.labels.iter()).map(|(&z, &b)| self.loss.value(z, b)).sum();
        total / self.num_samples() as f64 + 0.5 * self.tau * x.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.num_samples() as f64;
        let z = &self.data * x;
        let mut total = 0.0;
        let mut dz = DVector::zeros(z.len());
        for i in 0..z.len() {
            total += self.loss.value(z[i], self.labels[i]);
            dz[i] = self.loss.derivative(z[i], self.labels[i]);
        }
        let mut g = self.data.tr_mul(&dz) / n;
        g.axpy(self.tau, x, 1.0);
        (total / n + 0.5 * self.tau * x.norm_squared(), g)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// SAGA gradient table for linear models.
///
/// Each stored per-sample gradient is `αᵢ aᵢ` (plus the exact ridge term), so only the
/// scalars `αᵢ` and the mean `(1/N) Σ αᵢ aᵢ` are kept.
#[derive(Debug, Clone)]
pub struct SagaState {
    table: DVector<f64>,
    table_mean: DVector<f64>,
    batch_size: usize,
    rng: ChaCha8Rng,
    updates_since_refresh: usize,
}

impl SagaState {
    /// Table of zeros; the first estimates are plain minibatch gradients scaled by `|B|/N`
    /// until every sample has been visited.
    pub fn new(obj: &RegressionObjective, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(Self {
            table: DVector::zeros(obj.num_samples()),
            table_mean: DVector::zeros(obj.dim()),
            batch_size: batch_size.min(obj.num_samples()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            updates_since_refresh: 0,
        })
    }

    /// Table populated with the per-sample gradients at `x`.
    pub fn new_at(obj: &RegressionObjective, x: &DVector<f64>, batch_size: usize, seed: u64) -> Result<Self> {
        let mut s = Self::new(obj, batch_size, seed)?;
        for i in 0..obj.num_samples() {
            s.table[i] = obj.sample_derivative(i, x);
        }
        s.refresh_mean(obj);
        Ok(s)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn table(&self) -> &DVector<f64> {
        &self.table
    }

    pub fn table_mean(&self) -> &DVector<f64> {
        &self.table_mean
    }

    fn refresh_mean(&mut self, obj: &RegressionObjective) {
        self.table_mean = obj.data().tr_mul(&self.table) / obj.num_samples() as f64;
        self.updates_since_refresh = 0;
    }

    /// `(1/|B|) Σ_{i∈B} (∇fᵢ(x) − tableᵢ) + mean(table)` without touching the table.
    pub fn estimate(&self, obj: &RegressionObjective, x: &DVector<f64>, batch: &[usize]) -> DVector<f64> {
        let mut g = self.table_mean.clone();
        let w = 1.0 / batch.len() as f64;
        for &i in batch {
            let delta = obj.sample_derivative(i, x) - self.table[i];
            g += obj.data().row(i).transpose() * (w * delta);
        }
        g.axpy(obj.tau(), x, 1.0);
        g
    }

    /// Draws a batch without replacement, returns the estimate and updates the table.
    pub fn step(&mut self, obj: &RegressionObjective, x: &DVector<f64>) -> DVector<f64> {
        let n = obj.num_samples();
        let batch = index::sample(&mut self.rng, n, self.batch_size).into_vec();
        let mut g = self.table_mean.clone();
        let w = 1.0 / batch.len() as f64;
        let inv_n = 1.0 / n as f64;
        for &i in &batch {
            let alpha = obj.sample_derivative(i, x);
            let delta = alpha - self.table[i];
            let row = obj.data().row(i).transpose();
            g.axpy(w * delta, &row, 1.0);
            self.table_mean.axpy(inv_n * delta, &row, 1.0);
            self.table[i] = alpha;
        }
        g.axpy(obj.tau(), x, 1.0);
        self.updates_since_refresh += batch.len();
        if self.updates_since_refresh >= n {
            self.refresh_mean(obj);
        }
        g
    }
}

/// Shrinks every singular value of `m` by `ε σ₁(m)` and clamps at zero.
pub fn corrupt_worst_case(m: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps must lie in [0, 1], got {eps}")));
    }
    if m.is_empty() {
        return Ok(m.clone());
    }
    let mut svd = linalg::thin_svd(m);
    let shift = eps * svd.s[0];
    svd.s.apply(|s| *s = (*s - shift).max(0.0));
    Ok(svd.recompose())
}

/// `‖H ΔG − ΔX‖_F / ‖ΔX‖_F`.
pub fn recovery_error<O: LinearOperator + ?Sized>(estimate: &O, dg: &DMatrix<f64>, dx: &DMatrix<f64>) -> Result<f64> {
    if dg.shape() != dx.shape() || estimate.dim() != dx.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "operator of size {} with ΔG {}x{} and ΔX {}x{}",
            estimate.dim(),
            dg.nrows(),
            dg.ncols(),
            dx.nrows(),
            dx.ncols()
        )));
    }
    let norm = dx.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("recovery error undefined for ΔX = 0".into()));
    }
    Ok((estimate.apply_columns(dg) - dx).norm() / norm)
}

/// `d` eigenvalues in `[1/κ, 1]`: both ends pinned, interior log-uniform.
fn log_uniform_spectrum(rng: &mut ChaCha8Rng, d: usize, kappa: f64) -> Vec<f64> {
    let lo = 1.0 / kappa;
    (0..d)
        .map(|i| match i {
            0 => 1.0,
            1 => lo,
            _ => (rng.random_range(0.0..=1.0) * kappa.ln()).exp() * lo,
        })
        .collect()
}

/// Random SPD quadratic with `L = 1`, `κ(Q) = kappa` and Gaussian `x⋆`, `f⋆ = 0`.
pub fn synthetic_quadratic(d: usize, kappa: f64, seed: u64) -> QuadraticObjective {
    assert!(kappa >= 1.0, "kappa must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eig = log_uniform_spectrum(&mut rng, d, kappa);
    quadratic_from_rng(&mut rng, &eig)
}

/// Random rotation of `diag(eigenvalues)` with Gaussian `x⋆`, `f⋆ = 0`.
pub fn quadratic_with_spectrum(eigenvalues: &[f64], seed: u64) -> Result<QuadraticObjective> {
    if eigenvalues.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::NotPositiveDefinite("eigenvalues must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(quadratic_from_rng(&mut rng, eigenvalues))
}

fn quadratic_from_rng(rng: &mut ChaCha8Rng, eig: &[f64]) -> QuadraticObjective {
    let d = eig.len();
    let r = linalg::random_orthogonal(rng, d);
    let q = linalg::symmetric_part(&(&r * DMatrix::from_diagonal(&DVector::from_column_slice(eig)) * r.transpose()));
    let x_star = linalg::gaussian_vector(rng, d);
    QuadraticObjective::new(q, x_star, 0.0).expect("constructed SPD")
}

/// Random regression problem whose Hessian proxy `AᵀA/N + τI` has eigenvalues log-spread on
/// `[μ, κμ]` with `μ = max(1/κ, τ)`, so its condition number is exactly `κ`.
///
/// Needs `n ≥ d`. Square-loss labels are `A x_true + 0.1·noise`; logistic labels are their signs.
pub fn synthetic_regression(
    n: usize,
    d: usize,
    kappa: f64,
    loss: Loss,
    tau: f64,
    seed: u64,
) -> Result<RegressionObjective> {
    if kappa < 1.0 {
        return Err(Error::InvalidArgument(format!("kappa must be at least 1, got {kappa}")));
    }
    if n < d {
        return Err(Error::InvalidArgument(format!("need at least d = {d} samples, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (tau * kappa).max(1.0);
    let mu: Vec<f64> = log_uniform_spectrum(&mut rng, d, kappa).iter().map(|m| m * scale).collect();
    let s = DVector::from_iterator(d, mu.iter().map(|&m| (m - tau).max(0.0).sqrt()));
    let qn = linalg::random_orthonormal_columns(&mut rng, n, d);
    let r = linalg::random_orthogonal(&mut rng, d);
    let data = qn * DMatrix::from_diagonal(&s) * r.transpose() * (n as f64).sqrt();
    let x_true = linalg::gaussian_vector(&mut rng, d) / (d as f64).sqrt();
    let noise = linalg::gaussian_vector(&mut rng, n) * 0.1;
    let z = &data * x_true + noise;
    let labels = match loss {
        Loss::Square => z,
        Loss::Logistic => z.map(|v| if v >= 0.0 { 1.0 } else { -1.0 }),
    };
    RegressionObjective::new(data, labels, loss, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn finite_difference<O: Objective>(obj: &O, x: &DVector<f64>) -> DVector<f64> {
        let h = 1e-6;
        DVector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (obj.value(&xp) - obj.value(&xm)) / (2.0 * h)
        })
    }

    #[test]
    fn quadratic_minimum() {
        let obj = synthetic_quadratic(6, 10.0, 1);
        let x = obj.x_star().clone();
        assert_eq!(obj.value(&x), obj.f_star());
        assert_eq!(obj.gradient(&x).norm(), 0.0);
    }

    #[test]
    fn square_loss_zero_at_origin() {
        let obj = RegressionObjective::new(dmatrix![1.0, 2.0; 3.0, 4.0], DVector::zeros(2), Loss::Square, 0.0).unwrap();
        assert_eq!(obj.value(&DVector::zeros(2)), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for loss in [Loss::Square, Loss::Logistic] {
            for tau in [0.0, 0.1] {
                let obj = synthetic_regression(40, 6, 20.0, loss, tau, 3).unwrap();
                let x = linalg::gaussian_vector(&mut rng, 6);
                let err = (obj.gradient(&x) - finite_difference(&obj, &x)).amax();
                assert!(err <= 1e-5, "{loss:?} tau={tau}: {err}");
            }
        }
        let q = synthetic_quadratic(7, 50.0, 4);
        let x = linalg::gaussian_vector(&mut rng, 7);
        assert!((q.gradient(&x) - finite_difference(&q, &x)).amax() <= 1e-5);
    }

    #[test]
    fn logistic_is_stable_for_large_margins() {
        assert!(Loss::Logistic.value(1e4, -1.0).is_finite());
        assert!((Loss::Logistic.value(1e4, 1.0)).abs() < 1e-300);
        assert!((Loss::Logistic.derivative(-1e4, 1.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn logistic_labels_validated() {
        let r = RegressionObjective::new(dmatrix![1.0; 2.0], DVector::from_vec(vec![0.0, 1.0]), Loss::Logistic, 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn saga_full_batch_is_exact() {
        let obj = synthetic_regression(30, 5, 10.0, Loss::Logistic, 0.01, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x0 = linalg::gaussian_vector(&mut rng, 5);
        let x = linalg::gaussian_vector(&mut rng, 5);
        let mut s = SagaState::new_at(&obj, &x0, 30, 7).unwrap();
        assert!((s.step(&obj, &x) - obj.gradient(&x)).amax() < 1e-12);
    }

    #[test]
    fn saga_zero_variance_at_table_point() {
        let obj = synthetic_regression(25, 4, 10.0, Loss::Square, 0.1, 8).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.2, 1.0, 0.5]);
        let s = SagaState::new_at(&obj, &x, 3, 9).unwrap();
        let g = obj.gradient(&x);
        for batch in [[0usize, 1, 2], [5, 17, 24], [3, 4, 9]] {
            assert!((s.estimate(&obj, &x, &batch) - &g).amax() < 1e-12);
        }
    }

    #[test]
    fn saga_mean_tracks_table() {
        let obj = synthetic_regression(20, 4, 10.0, Loss::Logistic, 0.0, 10).unwrap();
        let mut s = SagaState::new(&obj, 3, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..15 {
            let x = linalg::gaussian_vector(&mut rng, 4);
            s.step(&obj, &x);
            let exact = obj.data().tr_mul(s.table()) / 20.0;
            assert!((s.table_mean() - exact).amax() < 1e-10);
        }
    }

    #[test]
    fn saga_deterministic_under_seed() {
        let obj = synthetic_regression(20, 3, 10.0, Loss::Square, 0.0, 13).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let mut a = SagaState::new(&obj, 4, 99).unwrap();
        let mut b = SagaState::new(&obj, 4, 99).unwrap();
        for _ in 0..5 {
            assert_eq!(a.step(&obj, &x), b.step(&obj, &x));
        }
    }

    #[test]
    fn corruption_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let m = linalg::gaussian_matrix(&mut rng, 6, 3);
        assert!((corrupt_worst_case(&m, 0.0).unwrap() - &m).amax() < 1e-12);
        assert_eq!(corrupt_worst_case(&m, 1.0).unwrap().amax(), 0.0);
        let c = corrupt_worst_case(&dmatrix![2.0, 0.0; 0.0, 1.0], 0.5).unwrap();
        assert!((c - dmatrix![1.0, 0.0; 0.0, 0.0]).amax() < 1e-14);
        assert!(corrupt_worst_case(&m, 1.5).is_err());
    }

    #[test]
    fn recovery_error_extremes() {
        let obj = synthetic_quadratic(5, 10.0, 15);
        let qinv = obj.q().clone().try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let dx = linalg::gaussian_matrix(&mut rng, 5, 2);
        let dg = obj.q() * &dx;
        assert!(recovery_error(&qinv, &dg, &dx).unwrap() < 1e-12);
        assert_eq!(recovery_error(&DMatrix::zeros(5, 5), &dg, &dx).unwrap(), 1.0);
        assert!(recovery_error(&qinv, &dg, &DMatrix::zeros(5, 2)).is_err());
    }

    #[test]
    fn diagonal_baseline_regression_constant() {
        // Three gradient-descent iterates with step 1/L on Q = diag(1, 10) from (1, 1).
        let q = dmatrix![1.0, 0.0; 0.0, 10.0];
        let obj = QuadraticObjective::new(q, DVector::zeros(2), 0.0).unwrap();
        let mut xs = vec![DVector::from_vec(vec![1.0, 1.0])];
        for _ in 0..2 {
            let x = xs.last().unwrap();
            xs.push(x - obj.gradient(x) / 10.0);
        }
        let dx = DMatrix::from_columns(&[&xs[1] - &xs[0], &xs[2] - &xs[1]]);
        let dg = obj.q() * &dx;
        let baseline = DMatrix::identity(2, 2) / 10.0;
        // x₁ = (0.9, 0), x₂ = (0.81, 0): ΔX = [(-0.1, -1), (-0.09, 0)], ΔG = [(-0.1, -10), (-0.09, 0)].
        // Residual columns (0.09, 0) and (0.081, 0) over ‖ΔX‖ = sqrt(1.0181).
        let expected = (0.09f64 * 0.09 + 0.081 * 0.081).sqrt() / 1.0181f64.sqrt();
        assert!((recovery_error(&baseline, &dg, &dx).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn synthetic_quadratic_properties() {
        let a = synthetic_quadratic(10, 1.0, 17);
        assert!((a.q() - DMatrix::identity(10, 10)).amax() < 1e-12);
        let b = synthetic_quadratic(12, 300.0, 18);
        let c = synthetic_quadratic(12, 300.0, 18);
        assert_eq!(b.q(), c.q());
        assert_eq!(b.x_star(), c.x_star());
        assert!(b.condition() >= 150.0 && b.condition() <= 600.0);
    }

    #[test]
    fn synthetic_regression_condition() {
        let obj = synthetic_regression(200, 10, 100.0, Loss::Square, 1e-3, 19).unwrap();
        let h = obj.data().tr_mul(obj.data()) / 200.0 + DMatrix::identity(10, 10) * 1e-3;
        let kappa = linalg::symmetric_condition(&h);
        assert!((50.0..=200.0).contains(&kappa), "{kappa}");
        assert!((obj.lipschitz() - 1.0).abs() < 1e-10);

        // τ above 1/κ: the spectrum is lifted to [τ, τκ].
        let obj = synthetic_regression(300, 8, 1e3, Loss::Square, 1e-2, 20).unwrap();
        let h = obj.data().tr_mul(obj.data()) / 300.0 + DMatrix::identity(8, 8) * 1e-2;
        assert!((linalg::symmetric_condition(&h) / 1e3 - 1.0).abs() < 1e-8);
        assert!(obj.max_sample_lipschitz() >= obj.lipschitz());
    }

    fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        if n < k {
            return vec![];
        }
        let mut out = combinations(n - 1, k);
        for mut c in combinations(n - 1, k - 1) {
            c.push(n - 1);
            out.push(c);
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn saga_is_unbiased(seed in any::<u64>(), n in 4usize..=12, k in 1usize..=4, logistic in any::<bool>()) {
            let k = k.min(n);
            let loss = if logistic { Loss::Logistic } else { Loss::Square };
            let obj = synthetic_regression(n, 3, 10.0, loss, 0.05, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let x0 = linalg::gaussian_vector(&mut rng, 3);
            let x = linalg::gaussian_vector(&mut rng, 3);
            let state = SagaState::new_at(&obj, &x0, k, 0).unwrap();
            let batches = combinations(n, k);
            let mut mean = DVector::zeros(3);
            for b in &batches {
                mean += state.estimate(&obj, &x, b);
            }
            mean /= batches.len() as f64;
            prop_assert!((mean - obj.gradient(&x)).amax() <= 1e-10);
        }

        #[test]
        fn corruption_is_nonexpansive(seed in any::<u64>(), eps in 0.0..=1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = linalg::gaussian_matrix(&mut rng, 7, 3);
            let c = corrupt_worst_case(&m, eps).unwrap();
            let s1 = linalg::spectral_norm(&m);
            prop_assert!(linalg::spectral_norm(&c) <= s1 * (1.0 + 1e-12));
            prop_assert!(linalg::spectral_norm(&(&m - &c)) <= eps * s1 * (1.0 + 1e-12) + 1e-14);
        }
    }
}
