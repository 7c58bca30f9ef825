//! Optimization runs and eigenvalue dumps, streamed as CSV.

use std::io::Write;

use nalgebra::DVector;
use serde_json::{json, Value};

use rsqn::driver::{minimize_observed, minimize_stochastic_observed, RunRecord, RunResult, Termination};
use rsqn::updates::{exclude_reference_spike, spectrum_diagnostic, QnState, MAX_SPECTRUM_DIM};

use crate::config::{ExperimentConfig, Problem};
use crate::error::{CliError, Result};
use crate::output::{self, OPTIMIZE_COLUMNS, SPECTRUM_COLUMNS};
use crate::recover::derive_seed;

/// Relative distance to `H_ref` below which an eigenvalue counts as part of the reference spike.
pub const SPIKE_REL_TOL: f64 = 1e-9;

fn header_extra(config: &ExperimentConfig) -> Value {
    json!({
        "x0": "zeros",
        "f_reported": if config.average_iterates {
            "objective at the cumulative mean of iterates 0..k"
        } else {
            "objective at the iterate"
        },
        "gradient": if config.batch_size.is_some() { "saga" } else { "full" },
    })
}

/// Loads the problem, resolves defaults and runs the optimizer, handing every record
/// and the state behind it to `observe`.
fn run<F>(config: &ExperimentConfig, mut observe: F) -> Result<(ExperimentConfig, RunResult)>
where
    F: FnMut(&ExperimentConfig, &RunRecord, &QnState) -> Result<()>,
{
    config.validate()?;
    let problem = config.dataset.load(config.seed)?;
    let mut resolved = config.clone();
    resolved.resolve(&problem);
    let opt = resolved.optimizer_config();
    let x0 = DVector::zeros(problem.dim());
    let mut failure = None;
    let mut cb = |r: &RunRecord, s: &QnState| {
        if failure.is_none() {
            failure = observe(&resolved, r, s).err();
        }
    };
    let result = match (&problem, resolved.batch_size) {
        (Problem::Regression(obj), Some(batch)) => {
            let saga_seed = derive_seed(resolved.seed, 2);
            minimize_stochastic_observed(obj, &x0, &opt, batch, saga_seed, &mut cb)?
        }
        _ => minimize_observed(problem.objective(), &x0, &opt, &mut cb)?,
    };
    match failure {
        Some(e) => Err(e),
        None => Ok((resolved, result)),
    }
}

/// Runs the configured optimizer without writing anything.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    Ok(run(config, |_, _, _| Ok(()))?.1)
}

/// Runs the configured optimizer and writes one CSV row per iteration.
pub fn run_optimize<W: Write>(config: &ExperimentConfig, out: &mut W) -> Result<Termination> {
    let mut header_done = false;
    let (_, result) = run(config, |cfg, rec, _| {
        if !header_done {
            output::write_header(out, "optimize", OPTIMIZE_COLUMNS, cfg, header_extra(cfg))?;
            header_done = true;
        }
        output::write_record(out, rec)
    })?;
    Ok(result.termination)
}

/// Eigenvalues of the estimate after every iteration, without the reference spike.
/// Imaginary parts are only nonzero for the Broyden estimates.
pub fn run_spectrum<W: Write>(config: &ExperimentConfig, out: &mut W) -> Result<Termination> {
    let mut header_done = false;
    let (_, result) = run(config, |cfg, rec, state| {
        if state.dim() > MAX_SPECTRUM_DIM {
            return Err(CliError::Input(format!(
                "spectrum needs d ≤ {MAX_SPECTRUM_DIM}, got {}",
                state.dim()
            )));
        }
        if !header_done {
            let mut extra = header_extra(cfg);
            extra["spike_excluded"] = json!({
                "h_ref": state.kind().reference_inverse_scale(),
                "rel_tol": SPIKE_REL_TOL,
            });
            output::write_header(out, "spectrum", SPECTRUM_COLUMNS, cfg, extra)?;
            header_done = true;
        }
        let eigs = spectrum_diagnostic(state)?;
        let h_ref = state.kind().reference_inverse_scale();
        for e in exclude_reference_spike(&eigs, h_ref, SPIKE_REL_TOL) {
            writeln!(out, "{},{},{}", rec.iter, e.re, e.im)?;
        }
        Ok(())
    })?;
    Ok(result.termination)
}
