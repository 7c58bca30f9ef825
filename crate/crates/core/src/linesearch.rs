//! Step-size policies.

use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::Objective;

/// Cap on the number of doublings used to bracket the minimizer.
const MAX_EXPANSIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LineSearchPolicy {
    #[default]
    Unit,
    /// Doubling bracket on the sign of `φ'(h)`, then bisection until the bracket is
    /// shorter than `tol · (1 + h)` or `max_iters` bisections were done.
    Dichotomy { max_iters: usize, bracket_growth: f64, tol: f64 },
    /// Backtracking on the sufficient-decrease condition.
    Armijo { c1: f64, backtrack: f64, max_iters: usize },
}

impl LineSearchPolicy {
    pub fn dichotomy() -> Self {
        LineSearchPolicy::Dichotomy {
            max_iters: 30,
            bracket_growth: 2.0,
            tol: 1e-8,
        }
    }

    pub fn armijo() -> Self {
        LineSearchPolicy::Armijo {
            c1: 1e-4,
            backtrack: 0.5,
            max_iters: 40,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LineSearchPolicy::Unit => Ok(()),
            LineSearchPolicy::Dichotomy { bracket_growth, tol, .. } => {
                if !(tol > 0.0) || !(bracket_growth > 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "dichotomy needs tol > 0 and growth > 1, got tol={tol}, growth={bracket_growth}"
                    )));
                }
                Ok(())
            }
            LineSearchPolicy::Armijo { c1, backtrack, .. } => {
                if !(c1 > 0.0 && c1 < 1.0) || !(backtrack > 0.0 && backtrack < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "armijo needs c1 and backtrack in (0, 1), got c1={c1}, backtrack={backtrack}"
                    )));
                }
                Ok(())
            }
        }
    }
}

impl FromStr for LineSearchPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unit" | "none" => Ok(LineSearchPolicy::Unit),
            "dichotomy" => Ok(LineSearchPolicy::dichotomy()),
            "armijo" => Ok(LineSearchPolicy::armijo()),
            _ => Err(Error::InvalidArgument(format!("unknown line search `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LineSearchFlag {
    /// No tried step decreased `f`; the returned step is zero.
    NoDecrease,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub h: f64,
    pub f_new: f64,
    pub gradient_evals: usize,
    pub value_evals: usize,
    pub flag: Option<LineSearchFlag>,
}

/// Chooses a step along `d` from `x`. `start` optionally supplies `f(x)` and `∇f(x)`.
pub fn step<O: Objective + ?Sized>(
    policy: &LineSearchPolicy,
    obj: &O,
    x: &DVector<f64>,
    d: &DVector<f64>,
    start: Option<(f64, &DVector<f64>)>,
) -> StepResult {
    match *policy {
        LineSearchPolicy::Unit => StepResult {
            h: 1.0,
            f_new: obj.value(&(x + d)),
            gradient_evals: 0,
            value_evals: 1,
            flag: None,
        },
        LineSearchPolicy::Dichotomy {
            max_iters,
            bracket_growth,
            tol,
        } => dichotomy(obj, x, d, start.map(|s| s.0), max_iters, bracket_growth, tol),
        LineSearchPolicy::Armijo { c1, backtrack, max_iters } => armijo(obj, x, d, start, c1, backtrack, max_iters),
    }
}

struct Probe<'a, O: ?Sized> {
    obj: &'a O,
    x: &'a DVector<f64>,
    d: &'a DVector<f64>,
    gradient_evals: usize,
    value_evals: usize,
    best: (f64, f64),
}

impl<O: Objective + ?Sized> Probe<'_, O> {
    /// `(φ(h), φ'(h))`, recording the best finite value seen.
    fn eval(&mut self, h: f64) -> (f64, f64) {
        let (f, g) = self.obj.value_and_gradient(&(self.x + self.d * h));
        self.gradient_evals += 1;
        let slope = g.dot(self.d);
        if f.is_finite() && f < self.best.1 {
            self.best = (h, f);
        }
        (f, slope)
    }
}

fn dichotomy<O: Objective + ?Sized>(
    obj: &O,
    x: &DVector<f64>,
    d: &DVector<f64>,
    f0: Option<f64>,
    max_iters: usize,
    growth: f64,
    tol: f64,
) -> StepResult {
    let (f0, value_evals) = match f0 {
        Some(f) => (f, 0),
        None => (obj.value(x), 1),
    };
    let mut p = Probe {
        obj,
        x,
        d,
        gradient_evals: 0,
        value_evals,
        best: (0.0, f0),
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..MAX_EXPANSIONS {
        let (f, slope) = p.eval(hi);
        if !f.is_finite() || !slope.is_finite() || slope >= 0.0 {
            break;
        }
        lo = hi;
        hi *= growth;
    }
    for _ in 0..max_iters {
        if hi - lo <= tol * (1.0 + hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (f, slope) = p.eval(mid);
        if f.is_finite() && slope.is_finite() && slope < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (h, f_new) = p.best;
    StepResult {
        h,
        f_new,
        gradient_evals: p.gradient_evals,
        value_evals: p.value_evals,
        flag: (h == 0.0).then_some(LineSearchFlag::NoDecrease),
    }
}

fn armijo<O: Objective + ?Sized>(
    obj: &O,
    x: &DVector<f64>,
    d: &DVector<f64>,
    start: Option<(f64, &DVector<f64>)>,
    c1: f64,
    backtrack: f64,
    max_iters: usize,
) -> StepResult {
    let (mut gradient_evals, mut value_evals) = (0, 0);
    let (f0, slope) = match start {
        Some((f, g)) => (f, g.dot(d)),
        None => {
            let (f, g) = obj.value_and_gradient(x);
            gradient_evals += 1;
            (f, g.dot(d))
        }
    };
    let mut h = 1.0;
    for _ in 0..max_iters {
        let f = obj.value(&(x + d * h));
        value_evals += 1;
        if f.is_finite() && f <= f0 + c1 * h * slope.min(0.0) && f <= f0 {
            return StepResult {
                h,
                f_new: f,
                gradient_evals,
                value_evals,
                flag: None,
            };
        }
        h *= backtrack;
    }
    StepResult {
        h: 0.0,
        f_new: f0,
        gradient_evals,
        value_evals,
        flag: Some(LineSearchFlag::NoDecrease),
    }
}
