//! Sliding window of `(x, ∇f(x))` pairs and the multisecant blocks built from it.
//!
//! With `m+1` stored points `X = [x₀ … x_m]`, `G = [g₀ … g_m]` and a difference
//! matrix `C` of shape `(m+1) × m` whose columns sum to zero, the secant blocks
//! are `ΔX = X C` and `ΔG = G C`. The default `C` takes consecutive differences.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const AFFINE_TOL: f64 = 1e-12;

/// How secant columns are formed from the stored points.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum DifferenceOperator {
    /// Column `j` is `x_{j+1} − x_j`.
    #[default]
    Consecutive,
    /// Arbitrary `(n) × (n−1)` matrix with zero column sums and full column rank.
    Explicit(DMatrix<f64>),
}

impl DifferenceOperator {
    /// Validates `c` (zero column sums, full column rank) and wraps it.
    pub fn explicit(c: DMatrix<f64>) -> Result<Self> {
        let scale = c.amax().max(1.0);
        for (j, col) in c.column_iter().enumerate() {
            let s = col.sum();
            if s.abs() > AFFINE_TOL * scale * c.nrows() as f64 {
                return Err(Error::InvalidArgument(format!(
                    "column {j} of the difference matrix sums to {s:e}, expected 0"
                )));
            }
        }
        if c.ncols() > 0 {
            let sv = c.singular_values();
            let tol = 1e-12 * sv.max();
            if sv.iter().filter(|&&s| s > tol).count() < c.ncols() {
                return Err(Error::InvalidArgument(
                    "difference matrix is not full column rank".into(),
                ));
            }
        }
        Ok(Self::Explicit(c))
    }

    /// The consecutive-difference matrix for `n` points: `−1` on the diagonal, `+1` below it.
    pub fn consecutive_matrix(n: usize) -> DMatrix<f64> {
        let k = n.saturating_sub(1);
        let mut c = DMatrix::zeros(n, k);
        for j in 0..k {
            c[(j, j)] = -1.0;
            c[(j + 1, j)] = 1.0;
        }
        c
    }
}

/// Bounded buffer holding at most `capacity + 1` points (hence `capacity` secant pairs).
#[derive(Debug, Clone)]
pub struct SecantHistory {
    capacity: usize,
    dim: usize,
    entries: VecDeque<(DVector<f64>, DVector<f64>)>,
}

impl SecantHistory {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("memory must be positive".into()));
        }
        Ok(Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of secant columns currently available.
    pub fn num_secants(&self) -> usize {
        self.entries.len().saturating_sub(1)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Appends a point, evicting the oldest one once `capacity + 1` points are held.
    pub fn push(&mut self, x: DVector<f64>, g: DVector<f64>) -> Result<()> {
        for v in [&x, &g] {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: v.len(),
                });
            }
        }
        self.entries.push_back((x, g));
        if self.entries.len() > self.capacity + 1 {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn latest(&self) -> Option<(&DVector<f64>, &DVector<f64>)> {
        self.entries.back().map(|(x, g)| (x, g))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&DVector<f64>, &DVector<f64>)> {
        self.entries.iter().map(|(x, g)| (x, g))
    }

    /// `X = [x_oldest … x_latest]`.
    pub fn iterates(&self) -> DMatrix<f64> {
        self.stack(|(x, _)| x)
    }

    /// `G = [g_oldest … g_latest]`.
    pub fn gradients(&self) -> DMatrix<f64> {
        self.stack(|(_, g)| g)
    }

    fn stack(&self, pick: impl Fn(&(DVector<f64>, DVector<f64>)) -> &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.entries.len());
        for (j, e) in self.entries.iter().enumerate() {
            out.set_column(j, pick(e));
        }
        out
    }

    /// Returns `(ΔX, ΔG)`. Fewer than two points give `d × 0` blocks.
    pub fn deltas(&self, diff: &DifferenceOperator) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match diff {
            DifferenceOperator::Consecutive => {
                let k = self.num_secants();
                let mut dx = DMatrix::zeros(self.dim, k);
                let mut dg = DMatrix::zeros(self.dim, k);
                for j in 0..k {
                    let (x0, g0) = &self.entries[j];
                    let (x1, g1) = &self.entries[j + 1];
                    dx.set_column(j, &(x1 - x0));
                    dg.set_column(j, &(g1 - g0));
                }
                Ok((dx, dg))
            }
            DifferenceOperator::Explicit(c) => {
                if c.nrows() != self.entries.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "difference matrix has {} rows but the history holds {} points",
                        c.nrows(),
                        self.entries.len()
                    )));
                }
                Ok((self.iterates() * c, self.gradients() * c))
            }
        }
    }

    /// Consecutive-difference blocks restricted to the most recent `max_cols` columns.
    pub fn recent_deltas(&self, max_cols: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let (dx, dg) = self
            .deltas(&DifferenceOperator::Consecutive)
            .expect("consecutive differences never fail");
        let k = dx.ncols();
        if k <= max_cols {
            (dx, dg)
        } else {
            let start = k - max_cols;
            (
                dx.columns(start, max_cols).into_owned(),
                dg.columns(start, max_cols).into_owned(),
            )
        }
    }

    /// Affine combinations `(X v, G v)`; `v` must sum to one.
    pub fn combine(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if v.len() != self.entries.len() {
            return Err(Error::DimensionMismatch {
                expected: self.entries.len(),
                found: v.len(),
            });
        }
        let s = v.sum();
        if (s - 1.0).abs() > AFFINE_TOL {
            return Err(Error::InvalidArgument(format!(
                "combination weights sum to {s}, expected 1"
            )));
        }
        let mut xv = DVector::zeros(self.dim);
        let mut gv = DVector::zeros(self.dim);
        for ((x, g), &w) in self.entries.iter().zip(v.iter()) {
            xv.axpy(w, x, 1.0);
            gv.axpy(w, g, 1.0);
        }
        Ok((xv, gv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn filled(points: &[(Vec<f64>, Vec<f64>)], capacity: usize) -> SecantHistory {
        let dim = points[0].0.len();
        let mut h = SecantHistory::new(capacity, dim).unwrap();
        for (x, g) in points {
            h.push(DVector::from_vec(x.clone()), DVector::from_vec(g.clone()))
                .unwrap();
        }
        h
    }

    #[test]
    fn single_entry_has_no_secants() {
        let h = filled(&[(vec![0.0, 0.0], vec![1.0, 0.0])], 3);
        let (dx, dg) = h.deltas(&DifferenceOperator::Consecutive).unwrap();
        assert_eq!((dx.shape(), dg.shape()), ((2, 0), (2, 0)));
    }

    #[test]
    fn one_difference() {
        let h = filled(
            &[(vec![0.0, 0.0], vec![1.0, 0.0]), (vec![1.0, 2.0], vec![0.0, 1.0])],
            3,
        );
        let (dx, dg) = h.deltas(&DifferenceOperator::Consecutive).unwrap();
        assert_eq!(dx.column(0).into_owned(), dvector![1.0, 2.0]);
        assert_eq!(dg.column(0).into_owned(), dvector![-1.0, 1.0]);
    }

    #[test]
    fn eviction_keeps_most_recent() {
        let pts: Vec<_> = (0..4).map(|i| (vec![i as f64], vec![-(i as f64)])).collect();
        let h = filled(&pts, 2);
        assert_eq!(h.len(), 3);
        assert_eq!(h.iterates(), DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut h = SecantHistory::new(2, 2).unwrap();
        let err = h.push(dvector![1.0, 2.0, 3.0], dvector![1.0, 2.0, 3.0]);
        assert!(matches!(err, Err(Error::DimensionMismatch { expected: 2, found: 3 })));
        let err = h.push(dvector![1.0, 2.0], dvector![1.0]);
        assert!(err.is_err());
    }

    #[test]
    fn explicit_matrix_row_count_checked() {
        let h = filled(&[(vec![0.0], vec![0.0]), (vec![1.0], vec![1.0])], 3);
        let c = DifferenceOperator::explicit(DifferenceOperator::consecutive_matrix(3)).unwrap();
        assert!(matches!(h.deltas(&c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn explicit_matrix_validation() {
        let bad = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(DifferenceOperator::explicit(bad).is_err());
        let rank_deficient = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, -1.0, 0.0, 0.0]);
        assert!(DifferenceOperator::explicit(rank_deficient).is_err());
    }

    #[test]
    fn combine_latest_and_mean() {
        let h = filled(
            &[
                (vec![0.0, 1.0], vec![2.0, 0.0]),
                (vec![2.0, 3.0], vec![0.0, 4.0]),
                (vec![4.0, 5.0], vec![1.0, 1.0]),
            ],
            5,
        );
        let (x, g) = h.combine(&dvector![0.0, 0.0, 1.0]).unwrap();
        assert_eq!((x, g), (dvector![4.0, 5.0], dvector![1.0, 1.0]));
        let third = 1.0 / 3.0;
        let (x, g) = h.combine(&dvector![third, third, third]).unwrap();
        assert!((x - dvector![2.0, 3.0]).norm() < 1e-14);
        assert!((g - dvector![1.0, 5.0 / 3.0]).norm() < 1e-14);
    }

    #[test]
    fn combine_rejects_bad_weights() {
        let h = filled(&[(vec![0.0], vec![0.0]), (vec![1.0], vec![1.0])], 2);
        assert!(h.combine(&dvector![0.5, 0.6]).is_err());
        assert!(h.combine(&dvector![1.0]).is_err());
    }

    fn arb_points() -> impl Strategy<Value = (usize, usize, Vec<Vec<f64>>)> {
        (1usize..5, 1usize..6, 1usize..9).prop_flat_map(|(dim, cap, n)| {
            (
                Just(dim),
                Just(cap),
                prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 2 * dim), n),
            )
        })
    }

    proptest! {
        #[test]
        fn consecutive_equals_explicit_product((dim, cap, raw) in arb_points()) {
            let pts: Vec<_> = raw.iter().map(|r| (r[..dim].to_vec(), r[dim..].to_vec())).collect();
            let h = filled(&pts, cap);
            prop_assert_eq!(h.num_secants(), pts.len().min(cap + 1) - 1);
            let (dx, dg) = h.deltas(&DifferenceOperator::Consecutive).unwrap();
            let c = DifferenceOperator::consecutive_matrix(h.len());
            prop_assert!((&dx - h.iterates() * &c).amax() == 0.0);
            prop_assert!((&dg - h.gradients() * &c).amax() == 0.0);
        }

        #[test]
        fn combine_matches_dense_product((dim, cap, raw) in arb_points(), w in prop::collection::vec(0.0..1.0f64, 9)) {
            let pts: Vec<_> = raw.iter().map(|r| (r[..dim].to_vec(), r[dim..].to_vec())).collect();
            let h = filled(&pts, cap);
            let n = h.len();
            let mut v = DVector::from_iterator(n, w.iter().take(n).map(|x| x + 0.1));
            let s = v.sum();
            v /= s;
            let (xv, gv) = h.combine(&v).unwrap();
            prop_assert!((xv - h.iterates() * &v).amax() <= 1e-14 * 10.0);
            prop_assert!((gv - h.gradients() * &v).amax() <= 1e-14 * 10.0);
        }
    }
}
