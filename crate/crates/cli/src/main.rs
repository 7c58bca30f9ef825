use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rsqn::linesearch::LineSearchPolicy;
use rsqn::objectives::Loss;
use rsqn::updates::Method;
use rsqn_cli::config::{DatasetSpec, ExperimentConfig};
use rsqn_cli::error::{termination_exit_code, CliError, Result, EXIT_INPUT, EXIT_OK};
use rsqn_cli::ingest::FileFormat;
use rsqn_cli::optimize::{run_optimize, run_spectrum};
use rsqn_cli::recover::{run_recover, write_recover, RecoverConfig};
use rsqn_cli::selftest::{run_selftest, write_reports};

/// Symmetric multisecant quasi-Newton experiments.
#[derive(Parser)]
#[command(name = "rsqn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hessian-recovery sweep over corruption levels.
    Recover(RecoverArgs),
    /// Run an optimizer and log every iteration.
    Optimize(RunArgs),
    /// Dump the eigenvalues of the estimate after every iteration.
    Spectrum(RunArgs),
    /// Run the acceptance suite.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RecoverArgs {
    /// Use d = 250, m = 50 instead of the desk-scale defaults.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Comma-separated corruption levels in [0, 1].
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    num_seeds: Option<usize>,
    /// λ̄ of the regularized symmetric estimates.
    #[arg(long)]
    lambda_bar: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Square,
    Logistic,
}

impl From<LossArg> for Loss {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Square => Loss::Square,
            LossArg::Logistic => Loss::Logistic,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "sym-multisecant-i")]
    method: Method,
    #[arg(long, default_value_t = 10)]
    memory: usize,
    #[arg(long, default_value_t = 0.0)]
    lambda_bar: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Stochastic SAGA gradients with this batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// unit, dichotomy or armijo.
    #[arg(long, default_value = "unit")]
    line_search: LineSearchPolicy,
    /// `quadratic:d=..,kappa=..`, `ridge:n=..,d=..,kappa=..,tau=..`, `logistic:...` or a file.
    #[arg(long, default_value = "quadratic:d=20,kappa=100")]
    dataset: DatasetSpec,
    /// Format of a dataset file; guessed from the extension otherwise.
    #[arg(long)]
    format: Option<FileFormat>,
    /// Loss for a dataset file.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Ridge parameter for regression datasets.
    #[arg(long)]
    tau: Option<f64>,
    /// Feature dimension of a LIBSVM file.
    #[arg(long)]
    dim: Option<usize>,
    /// `s` in `B_ref = sI`.
    #[arg(long)]
    reference_scale: Option<f64>,
    /// Relative eigenvalue floor for the symmetric multisecant estimates.
    #[arg(long)]
    psd_floor: Option<f64>,
    /// Report f at the running mean of the iterates.
    #[arg(long)]
    average_iterates: bool,
    /// Write wall_ms = 0 so the output is reproducible byte for byte.
    #[arg(long)]
    no_wall_clock: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Comma-separated criterion ids; all when omitted.
    #[arg(long, value_delimiter = ',')]
    only: Vec<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut dataset = self.dataset.clone();
        match &mut dataset {
            DatasetSpec::File { format, loss, tau, dim, .. } => {
                *format = self.format.unwrap_or(*format);
                *loss = self.loss.map_or(*loss, Loss::from);
                *tau = self.tau.unwrap_or(*tau);
                *dim = self.dim.or(*dim);
            }
            DatasetSpec::Regression { loss, tau, .. } => {
                *loss = self.loss.map_or(*loss, Loss::from);
                *tau = self.tau.unwrap_or(*tau);
            }
            DatasetSpec::Quadratic { .. } => {
                if self.loss.is_some() || self.tau.is_some() || self.format.is_some() || self.dim.is_some() {
                    return Err(CliError::Input(
                        "--loss, --tau, --format and --dim need a regression dataset".into(),
                    ));
                }
            }
        }
        Ok(ExperimentConfig {
            method: self.method,
            memory: self.memory,
            lambda_bar: self.lambda_bar,
            psd_floor: self.psd_floor,
            reference_scale: self.reference_scale,
            seed: self.seed,
            max_iters: self.max_iters,
            tol: self.tol,
            batch_size: self.batch_size,
            line_search: self.line_search,
            dataset,
            average_iterates: self.average_iterates,
            record_wall_time: !self.no_wall_clock,
        })
    }
}

impl RecoverArgs {
    fn config(&self) -> RecoverConfig {
        let base = if self.full_scale {
            RecoverConfig::full_scale()
        } else {
            RecoverConfig::default()
        };
        RecoverConfig {
            d: self.d.unwrap_or(base.d),
            m: self.m.unwrap_or(base.m),
            kappa: self.kappa.unwrap_or(base.kappa),
            eps: self.eps.clone().unwrap_or(base.eps),
            seed: self.seed,
            num_seeds: self.num_seeds.unwrap_or(base.num_seeds),
            lambda_bar: self.lambda_bar.unwrap_or(base.lambda_bar),
        }
    }
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Recover(args) => {
            let config = args.config();
            let rows = run_recover(&config)?;
            let mut out = open_output(&args.out)?;
            write_recover(&mut out, &config, &rows)?;
            out.flush()?;
            Ok(EXIT_OK)
        }
        Command::Optimize(args) => {
            let config = args.config()?;
            let mut out = open_output(&args.out)?;
            let t = run_optimize(&config, &mut out)?;
            out.flush()?;
            Ok(termination_exit_code(t))
        }
        Command::Spectrum(args) => {
            let config = args.config()?;
            let mut out = open_output(&args.out)?;
            let t = run_spectrum(&config, &mut out)?;
            out.flush()?;
            Ok(termination_exit_code(t))
        }
        Command::Selftest(args) => {
            let reports = run_selftest(&args.only);
            write_reports(&mut io::stdout().lock(), &reports)?;
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("rsqn: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
