//! Optimization loops and their per-iteration log.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linesearch::{self, LineSearchFlag, LineSearchPolicy};
use crate::objectives::{Objective, RegressionObjective, SagaState};
use crate::updates::{QnState, UpdateKind};

/// Runs whose objective exceeds this value are declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e10;

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iter: usize,
    /// Objective at the iterate, or at the running average of iterates when averaging.
    pub f: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub cum_grad_evals: usize,
    pub wall_ms: f64,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    BudgetExhausted,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: UpdateKind,
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once `‖∇f(x)‖ ≤ tol`.
    pub tol: f64,
    pub line_search: LineSearchPolicy,
    /// Report `f` at the cumulative mean of all iterates so far.
    pub average_iterates: bool,
    /// Record `wall_ms = 0` so that logs are reproducible byte for byte.
    pub record_wall_time: bool,
}

impl OptimizerConfig {
    pub fn new(kind: UpdateKind, memory: usize) -> Self {
        Self {
            kind,
            memory,
            max_iters: 100,
            tol: 1e-8,
            line_search: LineSearchPolicy::Unit,
            average_iterates: false,
            record_wall_time: true,
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_line_search(mut self, policy: LineSearchPolicy) -> Self {
        self.line_search = policy;
        self
    }

    pub fn with_average_iterates(mut self, on: bool) -> Self {
        self.average_iterates = on;
        self
    }

    pub fn with_wall_time(mut self, on: bool) -> Self {
        self.record_wall_time = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        self.line_search.validate()?;
        if self.memory == 0 {
            return Err(Error::InvalidArgument("memory must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be nonnegative, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub x: DVector<f64>,
    pub termination: Termination,
    pub records: Vec<RunRecord>,
}

impl RunResult {
    pub fn last(&self) -> &RunRecord {
        self.records.last().expect("every run logs iteration 0")
    }
}

struct Logger {
    start: Instant,
    record_wall_time: bool,
    records: Vec<RunRecord>,
    average: Option<(DVector<f64>, usize)>,
}

impl Logger {
    fn new(config: &OptimizerConfig) -> Self {
        Self {
            start: Instant::now(),
            record_wall_time: config.record_wall_time,
            records: Vec::new(),
            average: config.average_iterates.then(|| (DVector::zeros(0), 0)),
        }
    }

    /// Reported objective: at `x`, or at the updated running mean.
    fn reported_f<O: Objective + ?Sized>(&mut self, obj: &O, x: &DVector<f64>, f: f64) -> f64 {
        match &mut self.average {
            None => f,
            Some((mean, n)) => {
                if *n == 0 {
                    *mean = x.clone();
                } else {
                    *mean += (x - &*mean) / (*n + 1) as f64;
                }
                *n += 1;
                obj.value(mean)
            }
        }
    }

    fn log(
        &mut self,
        iter: usize,
        f: f64,
        grad_norm: f64,
        step: f64,
        cum_grad_evals: usize,
        flag: Option<String>,
    ) -> &RunRecord {
        let wall_ms = if self.record_wall_time {
            self.start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let rec = RunRecord {
            iter,
            f,
            grad_norm,
            step,
            cum_grad_evals,
            wall_ms,
            flag,
        };
        self.records.push(rec);
        self.records.last().unwrap()
    }
}

fn diverged(f: f64) -> bool {
    !f.is_finite() || f > DIVERGENCE_THRESHOLD
}

fn join_flags(flags: Vec<String>) -> Option<String> {
    (!flags.is_empty()).then(|| flags.join(";"))
}

/// Deterministic quasi-Newton loop with full gradients.
///
/// Each iteration costs one gradient evaluation plus those spent by the line search.
/// When an estimate is numerically unusable the reference step is taken and the
/// record is flagged `fallback:<reason>`.
pub fn minimize<O, F>(obj: &O, x0: &DVector<f64>, config: &OptimizerConfig, mut callback: F) -> Result<RunResult>
where
    O: Objective + ?Sized,
    F: FnMut(&RunRecord),
{
    minimize_observed(obj, x0, config, |r, _| callback(r))
}

/// [`minimize`] with a callback that also sees the quasi-Newton state after each record.
pub fn minimize_observed<O, F>(obj: &O, x0: &DVector<f64>, config: &OptimizerConfig, mut callback: F) -> Result<RunResult>
where
    O: Objective + ?Sized,
    F: FnMut(&RunRecord, &QnState),
{
    config.validate()?;
    if x0.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            found: x0.len(),
        });
    }
    let mut log = Logger::new(config);
    let mut state = QnState::new(config.kind, config.memory, obj.dim())?;
    let mut x = x0.clone();
    let (mut f, mut g) = obj.value_and_gradient(&x);
    let mut evals = 1;
    state.push(x.clone(), g.clone())?;
    let f_rep = log.reported_f(obj, &x, f);
    callback(log.log(0, f_rep, g.norm(), 0.0, evals, None), &state);
    if diverged(f) {
        return Ok(finish(x, Termination::Diverged, log));
    }

    for iter in 1..=config.max_iters {
        if g.norm() <= config.tol {
            return Ok(finish(x, Termination::Converged, log));
        }
        let mut flags = Vec::new();
        let dir = state.direction(&g)?;
        if let Some(err) = &dir.fallback {
            flags.push(format!("fallback:{err}"));
        }
        let mut d = dir.vector;
        let mut ls = linesearch::step(&config.line_search, obj, &x, &d, Some((f, &g)));
        if ls.flag == Some(LineSearchFlag::NoDecrease) {
            flags.push("no-decrease".to_string());
            d = -&g * config.kind.reference_inverse_scale();
            let retry = linesearch::step(&config.line_search, obj, &x, &d, Some((f, &g)));
            ls.gradient_evals += retry.gradient_evals;
            ls = linesearch::StepResult {
                gradient_evals: ls.gradient_evals,
                ..retry
            };
        }
        x.axpy(ls.h, &d, 1.0);
        let (f_new, g_new) = obj.value_and_gradient(&x);
        f = f_new;
        g = g_new;
        evals += 1 + ls.gradient_evals;
        if diverged(f) {
            flags.push("diverged".to_string());
            callback(log.log(iter, f, g.norm(), ls.h, evals, join_flags(flags)), &state);
            return Ok(finish(x, Termination::Diverged, log));
        }
        if ls.h != 0.0 {
            state.push(x.clone(), g.clone())?;
        }
        let f_rep = log.reported_f(obj, &x, f);
        callback(log.log(iter, f_rep, g.norm(), ls.h, evals, join_flags(flags)), &state);
    }
    let termination = if g.norm() <= config.tol {
        Termination::Converged
    } else {
        Termination::BudgetExhausted
    };
    Ok(finish(x, termination, log))
}

/// Stochastic loop with SAGA gradient estimates and unit steps.
///
/// The SAGA table starts at zero, so every iteration costs exactly `batch_size`
/// per-sample gradients. `f` and `grad_norm` in the log are exact full-batch values
/// and are not counted as gradient evaluations. The configured line search is ignored.
pub fn minimize_stochastic<F>(
    obj: &RegressionObjective,
    x0: &DVector<f64>,
    config: &OptimizerConfig,
    batch_size: usize,
    seed: u64,
    mut callback: F,
) -> Result<RunResult>
where
    F: FnMut(&RunRecord),
{
    minimize_stochastic_observed(obj, x0, config, batch_size, seed, |r, _| callback(r))
}

/// [`minimize_stochastic`] with a callback that also sees the quasi-Newton state.
pub fn minimize_stochastic_observed<F>(
    obj: &RegressionObjective,
    x0: &DVector<f64>,
    config: &OptimizerConfig,
    batch_size: usize,
    seed: u64,
    mut callback: F,
) -> Result<RunResult>
where
    F: FnMut(&RunRecord, &QnState),
{
    config.validate()?;
    if x0.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            found: x0.len(),
        });
    }
    let mut saga = SagaState::new(obj, batch_size, seed)?;
    let batch = saga.batch_size();
    let mut log = Logger::new(config);
    let mut state = QnState::new(config.kind, config.memory, obj.dim())?;
    let mut x = x0.clone();
    let (f, g) = obj.value_and_gradient(&x);
    let mut grad_norm = g.norm();
    let f_rep = log.reported_f(obj, &x, f);
    callback(log.log(0, f_rep, grad_norm, 0.0, 0, None), &state);
    if diverged(f) {
        return Ok(finish(x, Termination::Diverged, log));
    }

    for iter in 1..=config.max_iters {
        if grad_norm <= config.tol {
            return Ok(finish(x, Termination::Converged, log));
        }
        let g_est = saga.step(obj, &x);
        state.push(x.clone(), g_est.clone())?;
        let dir = state.direction(&g_est)?;
        let flag = dir.fallback.as_ref().map(|e| format!("fallback:{e}"));
        x += dir.vector;
        let (f, g) = obj.value_and_gradient(&x);
        grad_norm = g.norm();
        if diverged(f) {
            let flag = Some(flag.map_or("diverged".to_string(), |s| format!("{s};diverged")));
            callback(log.log(iter, f, grad_norm, 1.0, batch * iter, flag), &state);
            return Ok(finish(x, Termination::Diverged, log));
        }
        let f_rep = log.reported_f(obj, &x, f);
        callback(log.log(iter, f_rep, grad_norm, 1.0, batch * iter, flag), &state);
    }
    let termination = if grad_norm <= config.tol {
        Termination::Converged
    } else {
        Termination::BudgetExhausted
    };
    Ok(finish(x, termination, log))
}

fn finish(x: DVector<f64>, termination: Termination, log: Logger) -> RunResult {
    RunResult {
        x,
        termination,
        records: log.records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{synthetic_quadratic, synthetic_regression, Loss};
    use crate::updates::Method;

    #[test]
    fn gradient_descent_decreases_monotonically() {
        let obj = synthetic_quadratic(15, 50.0, 1);
        let kind = UpdateKind::new(Method::GradientDescent).with_reference_scale(obj.lipschitz());
        let run = minimize(&obj, &DVector::zeros(15), &OptimizerConfig::new(kind, 1).with_max_iters(50), |_| {}).unwrap();
        assert!(run.records.windows(2).all(|w| w[1].f < w[0].f));
        assert_eq!(run.termination, Termination::BudgetExhausted);
        assert_eq!(run.last().cum_grad_evals, 51);
    }

    #[test]
    fn type1_terminates_on_quadratic() {
        let obj = synthetic_quadratic(20, 10.0, 2);
        let kind = UpdateKind::new(Method::SymMultisecantI).with_reference_scale(obj.lipschitz());
        let config = OptimizerConfig::new(kind, 20).with_max_iters(21).with_tol(1e-8);
        let run = minimize(&obj, &DVector::zeros(20), &config, |_| {}).unwrap();
        assert_eq!(run.termination, Termination::Converged);
        assert!(run.records.len() <= 22);
    }

    #[test]
    fn iterations_strictly_increase_and_callback_sees_all() {
        let obj = synthetic_quadratic(6, 10.0, 3);
        let kind = UpdateKind::new(Method::LBFGS).with_reference_scale(obj.lipschitz());
        let mut seen = 0;
        let config = OptimizerConfig::new(kind, 3).with_line_search(LineSearchPolicy::dichotomy());
        let run = minimize(&obj, &DVector::zeros(6), &config, |_| seen += 1).unwrap();
        assert_eq!(seen, run.records.len());
        assert!(run.records.windows(2).all(|w| w[1].iter == w[0].iter + 1));
        assert!(run.records.windows(2).all(|w| w[1].cum_grad_evals > w[0].cum_grad_evals + 1));
    }

    #[test]
    fn divergence_is_detected() {
        let obj = synthetic_quadratic(5, 10.0, 4);
        // A step of 3/L overshoots along the top eigenvector and blows up.
        let kind = UpdateKind::new(Method::GradientDescent).with_reference_scale(obj.lipschitz() / 3.0);
        let x0 = DVector::from_element(5, 10.0);
        let run = minimize(&obj, &x0, &OptimizerConfig::new(kind, 1).with_max_iters(500), |_| {}).unwrap();
        assert_eq!(run.termination, Termination::Diverged);
        assert!(run.last().flag.as_deref().unwrap().contains("diverged"));
    }

    #[test]
    fn stochastic_accounting_and_averaging() {
        let obj = synthetic_regression(100, 5, 10.0, Loss::Square, 0.01, 5).unwrap();
        let kind = UpdateKind::new(Method::GradientDescent).with_reference_scale(3.0 * obj.lipschitz());
        let config = OptimizerConfig::new(kind, 1).with_max_iters(20).with_tol(0.0).with_average_iterates(true);
        let run = minimize_stochastic(&obj, &DVector::zeros(5), &config, 8, 6, |_| {}).unwrap();
        assert_eq!(run.records.len(), 21);
        for r in &run.records {
            assert_eq!(r.cum_grad_evals, 8 * r.iter);
        }
        let again = minimize_stochastic(&obj, &DVector::zeros(5), &config.clone().with_wall_time(false), 8, 6, |_| {}).unwrap();
        assert_eq!(run.x, again.x);
    }

    #[test]
    fn rejects_bad_config() {
        let obj = synthetic_quadratic(3, 2.0, 7);
        let kind = UpdateKind::new(Method::LBFGS);
        assert!(minimize(&obj, &DVector::zeros(3), &OptimizerConfig::new(kind, 0), |_| {}).is_err());
        assert!(minimize(&obj, &DVector::zeros(2), &OptimizerConfig::new(kind, 2), |_| {}).is_err());
    }
}
