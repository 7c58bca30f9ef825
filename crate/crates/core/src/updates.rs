//! Quasi-Newton estimates and search directions.
//!
//! Every family is exposed through an [`Estimate`], a linear operator playing the
//! role of the inverse Hessian `H` (or `B⁻¹` for Type-I updates), so a direction is
//! always `d = −H g`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, LinearOperator};
use crate::linesearch::{self, LineSearchFlag, LineSearchPolicy};
use crate::objectives::Objective;
use crate::rsp::{ReferenceOperator, RspFactors, RspProblem};
use crate::secant_store::SecantHistory;

/// Pairs with `sᵀy ≤ CURVATURE_TOL ‖s‖‖y‖` are skipped by L-BFGS, BFGS and DFP.
pub const CURVATURE_TOL: f64 = 1e-12;
/// Largest condition number accepted for the small inner matrices of the Broyden updates.
pub const MAX_INNER_CONDITION: f64 = 1e12;
/// Dimension limit for methods carrying a dense `d × d` estimate.
pub const MAX_DENSE_DIM: usize = 2000;
/// Dimension limit of [`spectrum_diagnostic`].
pub const MAX_SPECTRUM_DIM: usize = 1000;
/// Default relative floor used by [`UpdateKind::with_psd_projection`].
pub const DEFAULT_PSD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Symmetric multisecant estimate of the Hessian, `d = −B⁻¹g`.
    SymMultisecantI,
    /// Symmetric multisecant estimate of the inverse Hessian, `d = −Hg`.
    SymMultisecantII,
    MultisecantBroydenI,
    MultisecantBroydenII,
    #[serde(rename = "lbfgs")]
    LBFGS,
    #[serde(rename = "bfgs")]
    BFGS,
    #[serde(rename = "dfp")]
    DFP,
    GradientDescent,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::SymMultisecantI,
        Method::SymMultisecantII,
        Method::MultisecantBroydenI,
        Method::MultisecantBroydenII,
        Method::LBFGS,
        Method::BFGS,
        Method::DFP,
        Method::GradientDescent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SymMultisecantI => "sym-multisecant-i",
            Method::SymMultisecantII => "sym-multisecant-ii",
            Method::MultisecantBroydenI => "multisecant-broyden-i",
            Method::MultisecantBroydenII => "multisecant-broyden-ii",
            Method::LBFGS => "lbfgs",
            Method::BFGS => "bfgs",
            Method::DFP => "dfp",
            Method::GradientDescent => "gradient-descent",
        }
    }

    /// Whether the estimate is symmetric by construction.
    pub fn is_symmetric(self) -> bool {
        !matches!(self, Method::MultisecantBroydenI | Method::MultisecantBroydenII)
    }

    fn is_dense_chain(self) -> bool {
        matches!(self, Method::BFGS | Method::DFP)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        let m = match key.as_str() {
            "sym-multisecant-i" | "sym1" | "symms-i" => Method::SymMultisecantI,
            "sym-multisecant-ii" | "sym2" | "symms-ii" => Method::SymMultisecantII,
            "multisecant-broyden-i" | "broyden1" | "broyden-i" => Method::MultisecantBroydenI,
            "multisecant-broyden-ii" | "broyden2" | "broyden-ii" => Method::MultisecantBroydenII,
            "lbfgs" | "l-bfgs" => Method::LBFGS,
            "bfgs" => Method::BFGS,
            "dfp" => Method::DFP,
            "gradient-descent" | "gd" => Method::GradientDescent,
            _ => return Err(Error::InvalidArgument(format!("unknown method `{s}`"))),
        };
        Ok(m)
    }
}

/// Update family together with its options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateKind {
    pub method: Method,
    /// Relative regularization `λ̄`; the solver uses `λ = λ̄ σ_max(A)²`.
    pub lambda_bar: f64,
    /// Eigenvalue floor relative to the smallest reference eigenvalue (symmetric multisecant only).
    pub psd_floor: Option<f64>,
    /// `s` in `B_ref = s I`, `H_ref = I / s`.
    pub reference_scale: f64,
}

impl UpdateKind {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            lambda_bar: 0.0,
            psd_floor: None,
            reference_scale: 1.0,
        }
    }

    pub fn with_lambda_bar(mut self, lambda_bar: f64) -> Self {
        self.lambda_bar = lambda_bar;
        self
    }

    pub fn with_reference_scale(mut self, scale: f64) -> Self {
        self.reference_scale = scale;
        self
    }

    pub fn with_psd_floor(mut self, floor: Option<f64>) -> Self {
        self.psd_floor = floor;
        self
    }

    pub fn with_psd_projection(self) -> Self {
        self.with_psd_floor(Some(DEFAULT_PSD_FLOOR))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_bar.is_finite() && self.lambda_bar >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda_bar must be finite and nonnegative, got {}",
                self.lambda_bar
            )));
        }
        if !(self.reference_scale.is_finite() && self.reference_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "reference scale must be positive, got {}",
                self.reference_scale
            )));
        }
        if let Some(p) = self.psd_floor {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("psd floor must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }

    /// Scale `h₀` of the reference inverse-Hessian `H_ref = h₀ I`.
    pub fn reference_inverse_scale(&self) -> f64 {
        1.0 / self.reference_scale
    }
}

/// An inverse-Hessian estimate `H` applied as a linear operator.
#[derive(Debug, Clone)]
pub enum Estimate {
    /// `H = h₀ I`.
    Reference { dim: usize, h0: f64 },
    /// `H = Z⁻¹` with `Z` the Procrustes solution for `(ΔX, ΔG, B_ref)`.
    SymmetricTypeI(RspFactors),
    /// `H = Z` with `Z` the Procrustes solution for `(ΔG, ΔX, H_ref)`.
    SymmetricTypeII(RspFactors),
    /// `H = h₀I + (ΔX − h₀ΔG)(h₀ΔXᵀΔG)⁻¹ h₀ΔXᵀ`.
    BroydenI {
        h0: f64,
        dx: DMatrix<f64>,
        dg: DMatrix<f64>,
        inner_inv: DMatrix<f64>,
    },
    /// `H = ΔX ΔG⁺ + h₀ (I − ΔG ΔG⁺)`.
    BroydenII {
        h0: f64,
        dx: DMatrix<f64>,
        dg: DMatrix<f64>,
        dg_pinv: DMatrix<f64>,
    },
    /// Two-loop recursion over curvature pairs `(s, y, 1/sᵀy)`, oldest first.
    Lbfgs {
        dim: usize,
        h0: f64,
        pairs: Vec<(DVector<f64>, DVector<f64>, f64)>,
    },
    Dense(DMatrix<f64>),
}

impl Estimate {
    pub fn reference(dim: usize, kind: &UpdateKind) -> Self {
        Estimate::Reference {
            dim,
            h0: kind.reference_inverse_scale(),
        }
    }

    /// Builds the estimate of `kind` from secant blocks, using at most `d` columns.
    ///
    /// BFGS and DFP chain their rank-two updates through the columns from left to right.
    pub fn fit(kind: &UpdateKind, dx: &DMatrix<f64>, dg: &DMatrix<f64>) -> Result<Self> {
        kind.validate()?;
        if dx.shape() != dg.shape() {
            return Err(Error::ShapeMismatch(format!(
                "ΔX is {}x{} but ΔG is {}x{}",
                dx.nrows(),
                dx.ncols(),
                dg.nrows(),
                dg.ncols()
            )));
        }
        let d = dx.nrows();
        let k = dx.ncols().min(d);
        let start = dx.ncols() - k;
        let dx = dx.columns(start, k).into_owned();
        let dg = dg.columns(start, k).into_owned();
        let h0 = kind.reference_inverse_scale();
        if k == 0 || kind.method == Method::GradientDescent {
            return Ok(Self::reference(d, kind));
        }
        match kind.method {
            Method::SymMultisecantI => {
                let zref = ReferenceOperator::scaled_identity(kind.reference_scale)?;
                let mut f = RspProblem::with_relative_lambda(dx, dg, kind.lambda_bar, zref)?.factorize_truncated()?;
                if let Some(p) = kind.psd_floor {
                    f = f.psd_project(p * f.reference().min_eigenvalue())?;
                }
                f.inverse()?;
                Ok(Estimate::SymmetricTypeI(f))
            }
            Method::SymMultisecantII => {
                let zref = ReferenceOperator::scaled_identity(h0)?;
                let mut f = RspProblem::with_relative_lambda(dg, dx, kind.lambda_bar, zref)?.factorize_truncated()?;
                if let Some(p) = kind.psd_floor {
                    f = f.psd_project(p * f.reference().min_eigenvalue())?;
                }
                Ok(Estimate::SymmetricTypeII(f))
            }
            Method::MultisecantBroydenI => {
                let inner = dx.tr_mul(&dg) * h0;
                let cond = condition(&inner);
                if cond > MAX_INNER_CONDITION {
                    return Err(Error::SingularInnerMatrix { condition: cond });
                }
                let inner_inv = inner
                    .try_inverse()
                    .ok_or(Error::SingularInnerMatrix { condition: f64::INFINITY })?;
                Ok(Estimate::BroydenI { h0, dx, dg, inner_inv })
            }
            Method::MultisecantBroydenII => {
                let svd = linalg::thin_svd(&dg);
                if svd.rank(1.0 / MAX_INNER_CONDITION) < k {
                    return Err(Error::SingularInnerMatrix {
                        condition: svd.s[0] / svd.s[k - 1],
                    });
                }
                let dg_pinv = linalg::pseudo_inverse(&dg, 1.0 / MAX_INNER_CONDITION);
                Ok(Estimate::BroydenII { h0, dx, dg, dg_pinv })
            }
            Method::LBFGS => {
                let pairs = (0..k)
                    .filter_map(|j| {
                        let s = dx.column(j).into_owned();
                        let y = dg.column(j).into_owned();
                        curvature(&s, &y).map(|sy| (s, y, 1.0 / sy))
                    })
                    .collect();
                Ok(Estimate::Lbfgs { dim: d, h0, pairs })
            }
            Method::BFGS | Method::DFP => {
                if d > MAX_DENSE_DIM {
                    return Err(Error::TooLarge { dim: d, max: MAX_DENSE_DIM });
                }
                let mut h = DMatrix::identity(d, d) * h0;
                for j in 0..k {
                    let s = dx.column(j).into_owned();
                    let y = dg.column(j).into_owned();
                    chain_update(kind.method, &mut h, &s, &y);
                }
                Ok(Estimate::Dense(h))
            }
            Method::GradientDescent => unreachable!("handled above"),
        }
    }

    pub fn is_reference(&self) -> bool {
        matches!(self, Estimate::Reference { .. })
    }
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let s = linalg::thin_svd(m).s;
    let smin = s.min();
    if smin > 0.0 {
        s.max() / smin
    } else {
        f64::INFINITY
    }
}

/// `sᵀy` when it passes the curvature filter.
fn curvature(s: &DVector<f64>, y: &DVector<f64>) -> Option<f64> {
    let sy = s.dot(y);
    (sy > CURVATURE_TOL * s.norm() * y.norm() && sy > 0.0).then_some(sy)
}

/// One BFGS or DFP update of a dense inverse-Hessian estimate; filtered pairs leave `h` unchanged.
fn chain_update(method: Method, h: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> bool {
    let Some(sy) = curvature(s, y) else {
        return false;
    };
    match method {
        Method::BFGS => {
            // (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ, expanded to rank-one corrections.
            let rho = 1.0 / sy;
            let hy = &*h * y;
            let yhy = y.dot(&hy);
            h.ger(-rho, &hy, s, 1.0);
            h.ger(-rho, s, &hy, 1.0);
            h.ger(rho * rho * yhy + rho, s, s, 1.0);
        }
        Method::DFP => {
            let hy = &*h * y;
            let yhy = y.dot(&hy);
            if !(yhy > 0.0) {
                return false;
            }
            h.ger(-1.0 / yhy, &hy, &hy, 1.0);
            h.ger(1.0 / sy, s, s, 1.0);
        }
        _ => unreachable!("only dense chains are updated here"),
    }
    true
}

impl LinearOperator for Estimate {
    fn dim(&self) -> usize {
        match self {
            Estimate::Reference { dim, .. } | Estimate::Lbfgs { dim, .. } => *dim,
            Estimate::SymmetricTypeI(f) | Estimate::SymmetricTypeII(f) => f.dim(),
            Estimate::BroydenI { dx, .. } | Estimate::BroydenII { dx, .. } => dx.nrows(),
            Estimate::Dense(h) => h.nrows(),
        }
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Estimate::Reference { h0, .. } => v * *h0,
            Estimate::SymmetricTypeI(f) => f
                .apply_inverse(v)
                .expect("inverse validated when the estimate was built"),
            Estimate::SymmetricTypeII(f) => LinearOperator::apply(f, v),
            Estimate::BroydenI { h0, dx, dg, inner_inv } => {
                let t = inner_inv * (dx.tr_mul(v) * *h0);
                let mut out = v * *h0;
                out.gemv(1.0, dx, &t, 1.0);
                out.gemv(-*h0, dg, &t, 1.0);
                out
            }
            Estimate::BroydenII { h0, dx, dg, dg_pinv } => {
                let c = dg_pinv * v;
                let mut out = v * *h0;
                out.gemv(-*h0, dg, &c, 1.0);
                out.gemv(1.0, dx, &c, 1.0);
                out
            }
            Estimate::Lbfgs { h0, pairs, .. } => {
                let mut q = v.clone();
                let mut alpha = vec![0.0; pairs.len()];
                for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
                    alpha[i] = rho * s.dot(&q);
                    q.axpy(-alpha[i], y, 1.0);
                }
                q *= *h0;
                for (i, (s, y, rho)) in pairs.iter().enumerate() {
                    let beta = rho * y.dot(&q);
                    q.axpy(alpha[i] - beta, s, 1.0);
                }
                q
            }
            Estimate::Dense(h) => h * v,
        }
    }
}

/// A search direction and, if the estimate could not be formed, the reason the reference step was used.
#[derive(Debug, Clone)]
pub struct Direction {
    pub vector: DVector<f64>,
    pub fallback: Option<Error>,
}

/// Optimizer-side state: the secant window plus any dense carry.
#[derive(Debug, Clone)]
pub struct QnState {
    history: SecantHistory,
    kind: UpdateKind,
    dense: Option<DMatrix<f64>>,
}

impl QnState {
    pub fn new(kind: UpdateKind, memory: usize, dim: usize) -> Result<Self> {
        kind.validate()?;
        let dense = if kind.method.is_dense_chain() {
            if dim > MAX_DENSE_DIM {
                return Err(Error::TooLarge { dim, max: MAX_DENSE_DIM });
            }
            Some(DMatrix::identity(dim, dim) * kind.reference_inverse_scale())
        } else {
            None
        };
        Ok(Self {
            history: SecantHistory::new(memory, dim)?,
            kind,
            dense,
        })
    }

    pub fn kind(&self) -> &UpdateKind {
        &self.kind
    }

    pub fn history(&self) -> &SecantHistory {
        &self.history
    }

    pub fn dim(&self) -> usize {
        self.history.dim()
    }

    /// Records a new `(x, ∇f(x))` pair.
    pub fn push(&mut self, x: DVector<f64>, g: DVector<f64>) -> Result<()> {
        let prev = self.history.latest().map(|(x0, g0)| (x0.clone(), g0.clone()));
        self.history.push(x, g)?;
        if let (Some(h), Some((x0, g0))) = (self.dense.as_mut(), prev) {
            let (x1, g1) = self.history.latest().expect("just pushed");
            chain_update(self.kind.method, h, &(x1 - x0), &(g1 - g0));
        }
        Ok(())
    }

    /// Current inverse-Hessian estimate; errors when the secant data is numerically unusable.
    pub fn estimate(&self) -> Result<Estimate> {
        if let Some(h) = &self.dense {
            return Ok(Estimate::Dense(h.clone()));
        }
        let (dx, dg) = self.history.recent_deltas(self.history.capacity().min(self.dim()));
        Estimate::fit(&self.kind, &dx, &dg)
    }

    /// `−H g`, falling back to `−H_ref g` when the estimate cannot be formed.
    pub fn direction(&self, g: &DVector<f64>) -> Result<Direction> {
        if g.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: g.len(),
            });
        }
        match self.estimate() {
            Ok(est) => Ok(Direction {
                vector: -est.apply(g),
                fallback: None,
            }),
            Err(err) if is_numerical(&err) => Ok(Direction {
                vector: -g * self.kind.reference_inverse_scale(),
                fallback: Some(err),
            }),
            Err(err) => Err(err),
        }
    }
}

fn is_numerical(err: &Error) -> bool {
    matches!(
        err,
        Error::SingularCore { .. }
            | Error::SingularInnerMatrix { .. }
            | Error::RankDeficient { .. }
            | Error::NotPositiveDefinite(_)
    )
}

/// Result of [`generalized_step`].
#[derive(Debug, Clone)]
pub struct GeneralizedStep {
    pub x_new: DVector<f64>,
    pub step: f64,
    pub direction: Direction,
    pub line_search_flag: Option<LineSearchFlag>,
    pub gradient_evals: usize,
}

/// `x₊ = Xv + h d` with `d = −H (Gv)` and `h` from `policy`, searched from `Xv`.
pub fn generalized_step<O: Objective + ?Sized>(
    state: &QnState,
    v: &DVector<f64>,
    policy: &LineSearchPolicy,
    obj: &O,
) -> Result<GeneralizedStep> {
    let (xv, gv) = state.history.combine(v)?;
    let direction = state.direction(&gv)?;
    let ls = linesearch::step(policy, obj, &xv, &direction.vector, None);
    let mut x_new = xv;
    x_new.axpy(ls.h, &direction.vector, 1.0);
    Ok(GeneralizedStep {
        x_new,
        step: ls.h,
        direction,
        line_search_flag: ls.flag,
        gradient_evals: ls.gradient_evals,
    })
}

/// Type-II semi-implicit preconditioned estimate
/// `H = W⁻¹ΔG T₁⁻¹ ΔGᵀW⁻¹ + (I − P₁)ᵀ H_ref (I − P₁)`, `T₁ = ΔGᵀW⁻¹ΔG`,
/// `P₁ = ΔG T₁⁻¹ ΔGᵀ W⁻¹`. It satisfies `W H ΔG = ΔG`.
#[derive(Debug, Clone)]
pub struct SemiImplicitTypeII {
    dg: DMatrix<f64>,
    winv_dg: DMatrix<f64>,
    t1_inv: DMatrix<f64>,
    href: ReferenceOperator,
}

pub fn semi_implicit_type2(
    dg: &DMatrix<f64>,
    w: &ReferenceOperator,
    href: &ReferenceOperator,
) -> Result<SemiImplicitTypeII> {
    check_preconditioner(dg, w, href)?;
    let winv_dg = w.apply_inverse_columns(dg)?;
    let t1 = linalg::symmetric_part(&dg.tr_mul(&winv_dg));
    let t1_inv = inner_inverse(&t1)?;
    Ok(SemiImplicitTypeII {
        dg: dg.clone(),
        winv_dg,
        t1_inv,
        href: href.clone(),
    })
}

impl LinearOperator for SemiImplicitTypeII {
    fn dim(&self) -> usize {
        self.dg.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        // P₁v = ΔG T₁⁻¹ (W⁻¹ΔG)ᵀ v and P₁ᵀu = W⁻¹ΔG T₁⁻¹ ΔGᵀ u.
        let c = &self.t1_inv * self.winv_dg.tr_mul(v);
        let mut u = v.clone();
        u.gemv(-1.0, &self.dg, &c, 1.0);
        let hu = self.href.apply(&u);
        let c2 = &self.t1_inv * self.dg.tr_mul(&hu);
        let mut out = hu;
        out.gemv(-1.0, &self.winv_dg, &c2, 1.0);
        out.gemv(1.0, &self.winv_dg, &c, 1.0);
        out
    }
}

/// Inverse of the Type-I semi-implicit estimate,
/// `B⁻¹ = ΔX T₂⁻¹ ΔXᵀ + B_ref⁻¹ − B_ref⁻¹WΔX (ΔXᵀW B_ref⁻¹ WΔX)⁻¹ ΔXᵀW B_ref⁻¹`,
/// `T₂ = ΔXᵀWΔX`. It satisfies `B⁻¹ W ΔX = ΔX`.
#[derive(Debug, Clone)]
pub struct SemiImplicitTypeI {
    dx: DMatrix<f64>,
    t2_inv: DMatrix<f64>,
    binv_wdx: DMatrix<f64>,
    t3_inv: DMatrix<f64>,
    bref: ReferenceOperator,
}

pub fn semi_implicit_type1(
    dx: &DMatrix<f64>,
    w: &ReferenceOperator,
    bref: &ReferenceOperator,
) -> Result<SemiImplicitTypeI> {
    check_preconditioner(dx, w, bref)?;
    let wdx = w.apply_columns(dx);
    let t2_inv = inner_inverse(&linalg::symmetric_part(&dx.tr_mul(&wdx)))?;
    let binv_wdx = bref.apply_inverse_columns(&wdx)?;
    let t3_inv = inner_inverse(&linalg::symmetric_part(&wdx.tr_mul(&binv_wdx)))?;
    Ok(SemiImplicitTypeI {
        dx: dx.clone(),
        t2_inv,
        binv_wdx,
        t3_inv,
        bref: bref.clone(),
    })
}

impl LinearOperator for SemiImplicitTypeI {
    fn dim(&self) -> usize {
        self.dx.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.bref.apply_inverse(v).expect("reference inverse checked at construction");
        let a = &self.t2_inv * self.dx.tr_mul(v);
        out.gemv(1.0, &self.dx, &a, 1.0);
        let b = &self.t3_inv * self.binv_wdx.tr_mul(v);
        out.gemv(-1.0, &self.binv_wdx, &b, 1.0);
        out
    }
}

fn check_preconditioner(block: &DMatrix<f64>, w: &ReferenceOperator, r: &ReferenceOperator) -> Result<()> {
    let d = block.nrows();
    for op in [w, r] {
        if let Some(n) = op.dim() {
            if n != d {
                return Err(Error::DimensionMismatch { expected: d, found: n });
            }
        }
    }
    if !w.is_positive_definite() {
        return Err(Error::NotPositiveDefinite("preconditioner W".into()));
    }
    if !r.is_invertible() {
        return Err(Error::SingularInnerMatrix { condition: f64::INFINITY });
    }
    Ok(())
}

fn inner_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = condition(m);
    if cond > MAX_INNER_CONDITION {
        return Err(Error::SingularInnerMatrix { condition: cond });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::SingularInnerMatrix { condition: cond })
}

/// One eigenvalue of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

/// Eigenvalues of a materialized estimate, ascending by real part.
pub fn estimate_spectrum(est: &Estimate, symmetric: bool) -> Result<Vec<Eigenvalue>> {
    let d = est.dim();
    if d > MAX_SPECTRUM_DIM {
        return Err(Error::TooLarge { dim: d, max: MAX_SPECTRUM_DIM });
    }
    let m = linalg::materialize(est);
    let mut out: Vec<Eigenvalue> = if symmetric {
        linalg::symmetric_eigenvalues(&m)
            .into_iter()
            .map(|re| Eigenvalue { re, im: 0.0 })
            .collect()
    } else {
        linalg::general_eigenvalues(&m)?
            .into_iter()
            .map(|(re, im)| Eigenvalue { re, im })
            .collect()
    };
    out.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(out)
}

/// Spectrum of the state's current estimate (real and imaginary parts).
pub fn spectrum_diagnostic(state: &QnState) -> Result<Vec<Eigenvalue>> {
    let est = state
        .estimate()
        .unwrap_or_else(|_| Estimate::reference(state.dim(), state.kind()));
    estimate_spectrum(&est, state.kind().method.is_symmetric())
}

/// Drops eigenvalues within `rel_tol` (relative) of the reference value `h_ref`.
pub fn exclude_reference_spike(eigs: &[Eigenvalue], h_ref: f64, rel_tol: f64) -> Vec<Eigenvalue> {
    eigs.iter()
        .copied()
        .filter(|e| (e.re - h_ref).abs() > rel_tol * h_ref.abs() || e.im.abs() > rel_tol * h_ref.abs())
        .collect()
}
