//! Experiment configuration, serialized into the header of every output file.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use rsqn::driver::OptimizerConfig;
use rsqn::linesearch::LineSearchPolicy;
use rsqn::objectives::{synthetic_quadratic, synthetic_regression, Loss, Objective, QuadraticObjective, RegressionObjective};
use rsqn::updates::{Method, UpdateKind};

use crate::error::{CliError, Result};
use crate::ingest::{self, FileFormat, IngestOptions};

/// Where the objective comes from.
///
/// Textual forms: `quadratic:d=20,kappa=100`, `ridge:n=2000,d=50,kappa=1e3,tau=1e-2`,
/// `logistic:n=…,d=…,kappa=…,tau=…`, or a path to a CSV/LIBSVM file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Quadratic {
        d: usize,
        kappa: f64,
    },
    Regression {
        n: usize,
        d: usize,
        kappa: f64,
        loss: Loss,
        tau: f64,
    },
    File {
        path: PathBuf,
        format: FileFormat,
        loss: Loss,
        tau: f64,
        dim: Option<usize>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Quadratic { d: 20, kappa: 100.0 }
    }
}

fn parse_params(body: &str) -> Result<Vec<(String, String)>> {
    body.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim().to_string()))
                .ok_or_else(|| CliError::Input(format!("expected key=value, found `{kv}`")))
        })
        .collect()
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CliError::Input(format!("invalid value `{v}` for `{key}`")))
}

fn usize_value(key: &str, v: &str) -> Result<usize> {
    // Accept `1e3` style counts as well.
    if let Ok(n) = v.parse::<usize>() {
        return Ok(n);
    }
    let f: f64 = value(key, v)?;
    if f >= 0.0 && f.fract() == 0.0 && f <= usize::MAX as f64 {
        Ok(f as usize)
    } else {
        Err(CliError::Input(format!("`{key}` must be a nonnegative integer, got `{v}`")))
    }
}

impl FromStr for DatasetSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let (head, body) = s.split_once(':').unwrap_or((s, ""));
        let loss = match head.to_ascii_lowercase().as_str() {
            "quadratic" => None,
            "ridge" | "square" => Some(Loss::Square),
            "logistic" => Some(Loss::Logistic),
            _ => {
                let path = PathBuf::from(s);
                return Ok(DatasetSpec::File {
                    format: FileFormat::from_extension(&path),
                    path,
                    loss: Loss::Square,
                    tau: 1e-2,
                    dim: None,
                });
            }
        };
        let (mut n, mut d, mut kappa, mut tau): (usize, usize, f64, f64) = (2000, 20, 100.0, 1e-2);
        for (k, v) in parse_params(body)? {
            match k.as_str() {
                "n" => n = usize_value(&k, &v)?,
                "d" => d = usize_value(&k, &v)?,
                "kappa" => kappa = value(&k, &v)?,
                "tau" => tau = value(&k, &v)?,
                _ => return Err(CliError::Input(format!("unknown dataset parameter `{k}`"))),
            }
        }
        if d == 0 || !(kappa >= 1.0) || !kappa.is_finite() {
            return Err(CliError::Input("dataset needs d ≥ 1 and finite kappa ≥ 1".into()));
        }
        Ok(match loss {
            None => DatasetSpec::Quadratic { d, kappa },
            Some(loss) => DatasetSpec::Regression { n, d, kappa, loss, tau },
        })
    }
}

/// A loaded objective.
#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic(QuadraticObjective),
    Regression(RegressionObjective),
}

impl Problem {
    pub fn objective(&self) -> &dyn Objective {
        match self {
            Problem::Quadratic(q) => q,
            Problem::Regression(r) => r,
        }
    }

    pub fn dim(&self) -> usize {
        self.objective().dim()
    }
}

impl DatasetSpec {
    /// Builds the objective; synthetic data is drawn from `seed`.
    pub fn load(&self, seed: u64) -> Result<Problem> {
        Ok(match self {
            DatasetSpec::Quadratic { d, kappa } => Problem::Quadratic(synthetic_quadratic(*d, *kappa, seed)),
            DatasetSpec::Regression { n, d, kappa, loss, tau } => {
                Problem::Regression(synthetic_regression(*n, *d, *kappa, *loss, *tau, seed)?)
            }
            DatasetSpec::File {
                path,
                format,
                loss,
                tau,
                dim,
            } => Problem::Regression(ingest::ingest(
                path,
                &IngestOptions {
                    format: *format,
                    loss: *loss,
                    tau: *tau,
                    dim: *dim,
                },
            )?),
        })
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub memory: usize,
    pub lambda_bar: f64,
    /// Relative eigenvalue floor for the symmetric multisecant estimates.
    pub psd_floor: Option<f64>,
    /// `s` in `B_ref = sI`; chosen from the objective when absent.
    pub reference_scale: Option<f64>,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    /// Stochastic SAGA run with this batch size; full gradients when absent.
    pub batch_size: Option<usize>,
    pub line_search: LineSearchPolicy,
    pub dataset: DatasetSpec,
    /// Report `f` at the cumulative mean of the iterates, starting from iteration 0.
    pub average_iterates: bool,
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::SymMultisecantI,
            memory: 10,
            lambda_bar: 0.0,
            psd_floor: None,
            reference_scale: None,
            seed: 0,
            max_iters: 100,
            tol: 1e-8,
            batch_size: None,
            line_search: LineSearchPolicy::Unit,
            dataset: DatasetSpec::default(),
            average_iterates: false,
            record_wall_time: true,
        }
    }
}

impl ExperimentConfig {
    /// Reference scale used when none is given.
    ///
    /// Stochastic runs use `3 maxᵢ Lᵢ`, deterministic runs without line search use `L`
    /// and runs with a line search use `1`.
    pub fn default_reference_scale(&self, problem: &Problem) -> f64 {
        match (problem, self.batch_size, &self.line_search) {
            (Problem::Regression(r), Some(_), _) => 3.0 * r.max_sample_lipschitz(),
            (_, _, LineSearchPolicy::Unit) => problem.objective().lipschitz(),
            _ => 1.0,
        }
    }

    /// Fills in the reference scale so the serialized config is self-contained.
    pub fn resolve(&mut self, problem: &Problem) {
        if self.reference_scale.is_none() {
            self.reference_scale = Some(self.default_reference_scale(problem));
        }
    }

    pub fn update_kind(&self) -> UpdateKind {
        UpdateKind::new(self.method)
            .with_lambda_bar(self.lambda_bar)
            .with_psd_floor(self.psd_floor)
            .with_reference_scale(self.reference_scale.unwrap_or(1.0))
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig::new(self.update_kind(), self.memory)
            .with_max_iters(self.max_iters)
            .with_tol(self.tol)
            .with_line_search(self.line_search)
            .with_average_iterates(self.average_iterates)
            .with_wall_time(self.record_wall_time)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer_config().validate()?;
        if self.batch_size == Some(0) {
            return Err(CliError::Input("batch size must be positive".into()));
        }
        if self.batch_size.is_some() && matches!(self.dataset, DatasetSpec::Quadratic { .. }) {
            return Err(CliError::Input("stochastic runs need a regression dataset".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_specs_parse() {
        assert_eq!(
            "quadratic:d=30,kappa=1e3".parse::<DatasetSpec>().unwrap(),
            DatasetSpec::Quadratic { d: 30, kappa: 1e3 }
        );
        assert_eq!(
            "ridge:n=2e3,d=50,kappa=1000,tau=0.01".parse::<DatasetSpec>().unwrap(),
            DatasetSpec::Regression {
                n: 2000,
                d: 50,
                kappa: 1000.0,
                loss: Loss::Square,
                tau: 0.01
            }
        );
        match "data/train.csv".parse::<DatasetSpec>().unwrap() {
            DatasetSpec::File { format, .. } => assert_eq!(format, FileFormat::Csv),
            other => panic!("{other:?}"),
        }
        assert!("quadratic:d=0".parse::<DatasetSpec>().is_err());
        assert!("ridge:q=1".parse::<DatasetSpec>().is_err());
        assert!("logistic:n=1.5".parse::<DatasetSpec>().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig {
            batch_size: Some(64),
            line_search: LineSearchPolicy::armijo(),
            dataset: "logistic:n=100,d=5".parse().unwrap(),
            ..ExperimentConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn reference_scale_defaults() {
        let mut cfg = ExperimentConfig {
            dataset: "ridge:n=200,d=5,kappa=10".parse().unwrap(),
            batch_size: Some(8),
            ..ExperimentConfig::default()
        };
        let problem = cfg.dataset.load(1).unwrap();
        let Problem::Regression(r) = &problem else { unreachable!() };
        assert_eq!(cfg.default_reference_scale(&problem), 3.0 * r.max_sample_lipschitz());
        cfg.batch_size = None;
        assert_eq!(cfg.default_reference_scale(&problem), r.lipschitz());
        cfg.line_search = LineSearchPolicy::dichotomy();
        assert_eq!(cfg.default_reference_scale(&problem), 1.0);
        cfg.resolve(&problem);
        assert_eq!(cfg.reference_scale, Some(1.0));
    }

    #[test]
    fn stochastic_quadratic_is_rejected() {
        let cfg = ExperimentConfig {
            batch_size: Some(4),
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
