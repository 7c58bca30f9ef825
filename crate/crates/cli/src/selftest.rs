//! The acceptance suite, runnable from the binary (`rsqn selftest`) and from the test harness.

use std::fmt;
use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rsqn::driver::{minimize, OptimizerConfig, Termination};
use rsqn::linalg::{self, gaussian_matrix, gaussian_vector, random_spd, random_symmetric, LinearOperator};
use rsqn::linesearch::LineSearchPolicy;
use rsqn::objectives::{
    quadratic_with_spectrum, synthetic_quadratic, synthetic_regression, Loss, Objective, QuadraticObjective,
    RegressionObjective, SagaState,
};
use rsqn::rsp::{bias_bound, brute_force_oracle, ReferenceOperator, RspFactors, RspProblem, RANK_TOL};
use rsqn::updates::{generalized_step, semi_implicit_type1, semi_implicit_type2, Estimate, Method, QnState, UpdateKind};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::optimize::run_experiment;
use crate::recover::{lookup, run_recover, RecoverConfig};

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{:>2}] {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

type Check = fn() -> Result<(bool, String)>;

/// Every criterion as `(id, name, check)`.
pub const CRITERIA: [(usize, &str, Check); 15] = [
    (1, "oracle equivalence", oracle_equivalence),
    (2, "inverse formula", inverse_formula),
    (3, "linear cost in d", complexity),
    (4, "finite termination", finite_termination),
    (5, "minimal-polynomial termination", minimal_polynomial),
    (6, "rate envelope", rate_envelope),
    (7, "v-invariance", v_invariance),
    (8, "regularization bias bound", bias_bound_suite),
    (9, "stability scaling", stability_scaling),
    (10, "recovery ordering", recovery_ordering),
    (11, "stochastic comparison", stochastic_comparison),
    (12, "secant and symmetry invariants", secant_symmetry),
    (13, "PSD projection floor", psd_projection),
    (14, "preconditioned constraints", preconditioned_constraints),
    (15, "gradient correctness", gradient_correctness),
];

/// Runs the criteria whose ids are in `only` (all when empty), in order.
pub fn run_selftest(only: &[usize]) -> Vec<CriterionReport> {
    CRITERIA
        .iter()
        .filter(|(id, _, _)| only.is_empty() || only.contains(id))
        .map(|&(id, name, check)| {
            let start = Instant::now();
            let (passed, detail) = match check() {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CriterionReport {
                id,
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// Prints one line per report; fails with the number of failed criteria.
pub fn write_reports<W: Write>(out: &mut W, reports: &[CriterionReport]) -> Result<()> {
    for r in reports {
        writeln!(out, "{r}")?;
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    writeln!(out, "{} passed, {failed} failed", reports.len() - failed)?;
    if failed > 0 {
        return Err(CliError::SelftestFailed(failed));
    }
    Ok(())
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn random_reference(rng: &mut ChaCha8Rng, d: usize, dense: bool) -> ReferenceOperator {
    if dense {
        ReferenceOperator::dense(random_spd(rng, d, 0.5, 2.0)).expect("SPD")
    } else {
        ReferenceOperator::scaled_identity(rng.random_range(0.5..2.0)).expect("positive")
    }
}

fn full_column_rank(a: &DMatrix<f64>) -> bool {
    linalg::thin_svd(a).rank(RANK_TOL) == a.ncols()
}

fn oracle_equivalence() -> Result<(bool, String)> {
    oracle_equivalence_with(|f| f)
}

/// Criterion 1 with a hook that can tamper with the factors, so that a broken
/// formula can be shown to fail.
pub fn oracle_equivalence_with(mutate: impl Fn(RspFactors) -> RspFactors) -> Result<(bool, String)> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x01);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 200 {
        let d = rng.random_range(4..=10);
        let m = rng.random_range(1..=4);
        let lambda = [0.0, 1e-6, 1e-2, 1.0][done % 4];
        let dense = (done / 4) % 2 == 1;
        let a = gaussian_matrix(&mut rng, d, m);
        let dm = gaussian_matrix(&mut rng, d, m);
        let zref = random_reference(&mut rng, d, dense);
        if lambda == 0.0 && !full_column_rank(&a) {
            continue;
        }
        let p = RspProblem::new(a, dm, lambda, zref)?;
        let z = mutate(p.factorize()?).to_dense();
        worst = worst.max(rel(&z, &brute_force_oracle(&p)?));
        done += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-8 && secs <= 30.0,
        format!("200 instances, worst relative error {worst:.2e} (≤ 1e-8), {secs:.1} s (≤ 30 s)"),
    ))
}

fn inverse_formula() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x02);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let d = rng.random_range(4..=20);
        let m = rng.random_range(1..=4.min(d));
        let q = random_spd(&mut rng, d, 0.5, 2.0);
        let a = gaussian_matrix(&mut rng, d, m);
        let dm = &q * &a;
        let zref = random_reference(&mut rng, d, done % 2 == 1);
        let f = RspProblem::new(a, dm, 1e-2, zref)?.factorize()?;
        if f.core_condition()? > 1e8 {
            continue;
        }
        let v = gaussian_vector(&mut rng, d);
        let back = f.apply(&f.apply_inverse(&v)?)?;
        worst = worst.max((back - &v).norm() / v.norm());
        done += 1;
    }
    let mut dense_worst: f64 = 0.0;
    for dense in [false, true] {
        let a = gaussian_matrix(&mut rng, 8, 3);
        let dm = gaussian_matrix(&mut rng, 8, 3);
        let zref = random_reference(&mut rng, 8, dense);
        let f = RspProblem::new(a, dm, 0.05, zref)?.factorize()?;
        let inv = f
            .to_dense()
            .try_inverse()
            .ok_or_else(|| CliError::Input("dense cross-check matrix is singular".into()))?;
        dense_worst = dense_worst.max(rel(&linalg::materialize(&f.inverse()?), &inv));
    }
    Ok((
        worst <= 1e-8 && dense_worst <= 1e-8,
        format!("round trip {worst:.2e}, dense inverse at d=8 {dense_worst:.2e} (both ≤ 1e-8)"),
    ))
}

fn timed_applications(f: &RspFactors, v: &DVector<f64>, reps: usize) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..reps {
        black_box(f.apply(black_box(v))?);
        black_box(f.apply_inverse(black_box(v))?);
    }
    Ok(start.elapsed().as_secs_f64())
}

fn complexity() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x03);
    let m = 20;
    let mut setups = Vec::new();
    for d in [1000, 2000] {
        let a = gaussian_matrix(&mut rng, d, m);
        let dm = gaussian_matrix(&mut rng, d, m);
        let f = RspProblem::with_relative_lambda(a, dm, 1e-2, ReferenceOperator::scaled_identity(1.0)?)?.factorize()?;
        let v = gaussian_vector(&mut rng, d);
        f.apply_inverse(&v)?;
        setups.push((f, v));
    }
    // Size the batch so one sample at d = 1000 takes about 20 ms.
    let probe = timed_applications(&setups[0].0, &setups[0].1, 10)?.max(1e-6);
    let reps = ((0.02 / probe * 10.0) as usize).clamp(10, 100_000);
    let mut samples = [Vec::new(), Vec::new()];
    for _ in 0..9 {
        for (i, (f, v)) in setups.iter().enumerate() {
            samples[i].push(timed_applications(f, v, reps)?);
        }
    }
    let median = |s: &mut Vec<f64>| {
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    let t1 = median(&mut samples[0]) / reps as f64;
    let t2 = median(&mut samples[1]) / reps as f64;
    let ratio = t2 / t1;
    Ok((
        ratio <= 2.5,
        format!(
            "apply+apply_inverse {:.1} µs at d=1000, {:.1} µs at d=2000, ratio {ratio:.2} (≤ 2.5)",
            t1 * 1e6,
            t2 * 1e6
        ),
    ))
}

/// Iterations until `‖∇f‖ ≤ rel_tol ‖∇f(x₀)‖` with unit steps, full memory and
/// `B_ref = scale·I`, or `None`.
fn iterations_to(
    obj: &QuadraticObjective,
    method: Method,
    scale: f64,
    rel_tol: f64,
    budget: usize,
) -> Result<Option<usize>> {
    let d = obj.dim();
    let x0 = DVector::zeros(d);
    let g0 = obj.gradient(&x0).norm();
    let kind = UpdateKind::new(method).with_reference_scale(scale);
    let config = OptimizerConfig::new(kind, d).with_max_iters(budget).with_tol(rel_tol * g0);
    let run = minimize(obj, &x0, &config, |_| {})?;
    Ok((run.termination == Termination::Converged).then(|| run.last().iter))
}

fn finite_termination() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut ok = true;
    let mut worst = Vec::new();
    for d in [10, 20] {
        for method in [Method::SymMultisecantI, Method::SymMultisecantII] {
            let mut most = 0;
            for seed in 0..5 {
                let q = synthetic_quadratic(d, 10.0, 400 + seed);
                // Geometric mean of the extreme eigenvalues. With B_ref = L·I the last
                // difference blocks reach condition numbers near 1e12 and double precision
                // needs one to three extra steps.
                let (mu, l) = q.eigenvalue_bounds();
                match iterations_to(&q, method, (mu * l).sqrt(), 1e-10, d + 1)? {
                    Some(k) => most = most.max(k),
                    None => {
                        ok = false;
                        most = usize::MAX;
                    }
                }
            }
            let shown = if most == usize::MAX { "none".to_string() } else { most.to_string() };
            worst.push(format!("{} d={d}: {shown}", method.name()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        ok && secs <= 10.0,
        format!("max iterations to 1e-10 relative gradient (≤ d+1): {}", worst.join(", ")),
    ))
}

fn minimal_polynomial() -> Result<(bool, String)> {
    let eig: Vec<f64> = (0..50).map(|i| [1.0, 3.0, 10.0][i % 3]).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for method in [Method::SymMultisecantI, Method::SymMultisecantII] {
        for seed in 0..3 {
            let q = quadratic_with_spectrum(&eig, 500 + seed)?;
            let k = iterations_to(&q, method, q.lipschitz(), 1e-8, 5)?;
            ok &= k.is_some();
            parts.push(format!("{}: {}", method.name(), k.map_or("none".into(), |k| k.to_string())));
        }
    }
    Ok((ok, format!("three eigenvalues, d=50, iterations to 1e-8 (≤ 5): {}", parts.join(", "))))
}

/// Least-squares slope of `log ‖∇f(x_k)‖` against `k`.
fn log_slope(norms: &[f64]) -> f64 {
    let n = norms.len() as f64;
    let ys: Vec<f64> = norms.iter().map(|g| g.ln()).collect();
    let xm = (n - 1.0) / 2.0;
    let ym = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dx = k as f64 - xm;
        sxy += dx * (y - ym);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn rate_envelope() -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for kappa in [10.0_f64, 100.0] {
        let rate = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
        let allowed = 0.9 * rate.ln();
        for method in [Method::SymMultisecantI, Method::SymMultisecantII] {
            let mut flattest = f64::NEG_INFINITY;
            for seed in 0..5 {
                let q = synthetic_quadratic(30, kappa, 600 + seed);
                let kind = UpdateKind::new(method).with_reference_scale(q.lipschitz());
                let config = OptimizerConfig::new(kind, 30).with_max_iters(15).with_tol(0.0);
                let mut norms = Vec::new();
                minimize(&q, &DVector::zeros(30), &config, |r| norms.push(r.grad_norm))?;
                flattest = flattest.max(log_slope(&norms));
            }
            ok &= flattest <= allowed;
            parts.push(format!("κ={kappa} {}: {flattest:.3}", method.name()));
        }
        parts.push(format!("κ={kappa} allowed ≤ {allowed:.3}"));
    }
    Ok((ok, format!("log-gradient slopes over 15 iterations: {}", parts.join(", "))))
}

fn v_invariance() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x07);
    let mut worst: f64 = 0.0;
    for (i, method) in [Method::SymMultisecantI, Method::SymMultisecantII, Method::MultisecantBroydenII]
        .into_iter()
        .cycle()
        .take(12)
        .enumerate()
    {
        let d = 12;
        let q = synthetic_quadratic(d, 10.0, 700 + i as u64);
        let mut state = QnState::new(UpdateKind::new(method), 6, d)?;
        for _ in 0..6 {
            let x = gaussian_vector(&mut rng, d);
            let g = q.gradient(&x);
            state.push(x, g)?;
        }
        let mut steps = Vec::new();
        for _ in 0..5 {
            let raw = DVector::from_fn(6, |_, _| rng.random_range(0.1..1.0));
            let v = &raw / raw.sum();
            steps.push(generalized_step(&state, &v, &LineSearchPolicy::Unit, &q)?.x_new);
        }
        for s in &steps[1..] {
            worst = worst.max((s - &steps[0]).norm() / steps[0].norm());
        }
    }
    Ok((worst <= 1e-10, format!("worst relative spread of x₊ over 5 weightings {worst:.2e} (≤ 1e-10)")))
}

fn bias_bound_suite() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x08);
    let lambdas = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];
    let mut worst_ratio: f64 = 0.0;
    for i in 0..100 {
        let d = rng.random_range(4..=12);
        let m = rng.random_range(1..=4);
        let a = gaussian_matrix(&mut rng, d, m);
        let dm = gaussian_matrix(&mut rng, d, m);
        let zref = random_reference(&mut rng, d, i % 2 == 1);
        let f0 = RspProblem::new(a.clone(), dm.clone(), 0.0, zref.clone())?.factorize()?;
        let lambda = lambdas[i % lambdas.len()];
        let f = RspProblem::new(a, dm, lambda, zref)?.factorize()?;
        let (measured, bound) = bias_bound(&f, &f0)?;
        worst_ratio = worst_ratio.max(measured / bound);
    }
    Ok((
        worst_ratio <= 1.0,
        format!("100 instances, worst measured/bound {worst_ratio:.3} (≤ 1)"),
    ))
}

fn unit_direction(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let e = gaussian_matrix(rng, rows, cols);
    let n = e.norm();
    e / n
}

fn stability_scaling() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x09);
    let lambdas = [1e-3, 1e-2];
    let deltas = [1e-4, 1e-3, 1e-2];
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let d = 10;
        let m = 3;
        let a = gaussian_matrix(&mut rng, d, m);
        let a = &a / a.norm();
        let dm = gaussian_matrix(&mut rng, d, m);
        let dm = &dm / dm.norm();
        let zref = random_reference(&mut rng, d, i % 2 == 1);
        let ea = unit_direction(&mut rng, d, m);
        let ed = unit_direction(&mut rng, d, m);
        // err[l][k] for λ = lambdas[l] and δ = deltas[k]
        let mut err = [[0.0; 3]; 2];
        for (l, &lambda) in lambdas.iter().enumerate() {
            let z = RspProblem::new(a.clone(), dm.clone(), lambda, zref.clone())?.factorize()?.to_dense();
            for (k, &delta) in deltas.iter().enumerate() {
                let zt = RspProblem::new(&a + &ea * delta, &dm + &ed * delta, lambda, zref.clone())?
                    .factorize()?
                    .to_dense();
                err[l][k] = (zt - &z).norm();
            }
        }
        let k_fit = (0..2)
            .map(|l| err[l][0] * lambdas[l] / deltas[0])
            .fold(0.0, f64::max);
        for (l, &lambda) in lambdas.iter().enumerate() {
            for (k, &delta) in deltas.iter().enumerate().skip(1) {
                worst = worst.max(err[l][k] / (3.0 * k_fit * delta / lambda));
            }
        }
    }
    Ok((
        worst <= 1.0,
        format!("10 instances, worst error/(3Kδ/λ) at δ ∈ {{1e-3, 1e-2}} is {worst:.3} (≤ 1)"),
    ))
}

fn recovery_ordering() -> Result<(bool, String)> {
    let config = RecoverConfig {
        eps: vec![0.3],
        ..RecoverConfig::default()
    };
    let rows = run_recover(&config)?;
    let lb = config.lambda_bar;
    let get = |s, m, l| lookup(&rows, s, 0.3, m, l).unwrap_or(f64::NAN);
    let (mut reg_wins, mut bfgs_worse, mut type1_wins) = (0, 0, 0);
    for s in config.trial_seeds() {
        let reg = get(s, Method::SymMultisecantII, lb);
        reg_wins += (reg <= get(s, Method::SymMultisecantII, 0.0)) as usize;
        bfgs_worse += (get(s, Method::BFGS, 0.0) >= reg) as usize;
        type1_wins += (get(s, Method::SymMultisecantI, lb) <= get(s, Method::SymMultisecantI, 0.0)) as usize;
    }
    let n = config.num_seeds;
    Ok((
        reg_wins >= 4 && bfgs_worse >= 4,
        format!(
            "d=60, m=20, ε=0.3: regularized ≤ unregularized sym-multisecant-ii on {reg_wins}/{n}, \
             bfgs ≥ regularized on {bfgs_worse}/{n} (both need ≥ 4); \
             sym-multisecant-i regularized ≤ unregularized on {type1_wins}/{n} (informational)"
        ),
    ))
}

fn stochastic_comparison() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let base = ExperimentConfig {
            memory: 25,
            lambda_bar: 1e-2,
            seed,
            max_iters: 300,
            tol: 0.0,
            batch_size: Some(64),
            dataset: DatasetSpec::Regression {
                n: 2000,
                d: 50,
                kappa: 1e3,
                loss: Loss::Square,
                tau: 1e-2,
            },
            average_iterates: true,
            record_wall_time: false,
            ..ExperimentConfig::default()
        };
        let qn = run_experiment(&ExperimentConfig {
            method: Method::SymMultisecantI,
            ..base.clone()
        })?;
        let sg = run_experiment(&ExperimentConfig {
            method: Method::GradientDescent,
            ..base
        })?;
        let (a, b) = (qn.last(), sg.last());
        if a.cum_grad_evals != b.cum_grad_evals {
            return Ok((false, "gradient budgets differ".into()));
        }
        wins += (a.f <= b.f) as usize;
        parts.push(format!("{:.4e} vs {:.4e}", a.f, b.f));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        wins >= 3 && secs <= 120.0,
        format!(
            "averaged f, sym-multisecant-i vs saga after 300 steps: {}; wins {wins}/5 (≥ 3), {secs:.1} s (≤ 120 s)",
            parts.join(", ")
        ),
    ))
}

fn secant_symmetry() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0c);
    let (mut secant, mut asym, mut witness) = (0.0_f64, 0.0_f64, f64::INFINITY);
    for _ in 0..20 {
        let d = rng.random_range(6..=15);
        let m = rng.random_range(1..=4);
        let q = random_spd(&mut rng, d, 0.2, 5.0);
        let dx = gaussian_matrix(&mut rng, d, m);
        let dg = &q * &dx;
        for method in [
            Method::SymMultisecantI,
            Method::SymMultisecantII,
            Method::MultisecantBroydenI,
            Method::MultisecantBroydenII,
        ] {
            let kind = UpdateKind::new(method).with_reference_scale(rng.random_range(0.5..2.0));
            let h = Estimate::fit(&kind, &dx, &dg)?;
            secant = secant.max((h.apply_columns(&dg) - &dx).norm() / dx.norm());
            if method.is_symmetric() {
                let hm = linalg::materialize(&h);
                asym = asym.max(linalg::asymmetry(&hm) / hm.norm());
            }
        }
        // ΔG from a nonsymmetric map, so ΔXᵀΔG is not symmetric.
        let mut nonsym = random_symmetric(&mut rng, d);
        nonsym += gaussian_matrix(&mut rng, d, d);
        let dx = gaussian_matrix(&mut rng, d, m.max(2));
        let dg = &nonsym * &dx;
        let h = Estimate::fit(&UpdateKind::new(Method::MultisecantBroydenII), &dx, &dg)?;
        let hm = linalg::materialize(&h);
        witness = witness.min(linalg::asymmetry(&hm) / hm.norm());
    }
    Ok((
        secant <= 1e-8 && asym <= 1e-10 && witness > 0.0,
        format!(
            "worst secant residual {secant:.2e} (≤ 1e-8), worst relative asymmetry {asym:.2e} (≤ 1e-10), \
             smallest broyden-ii asymmetry {witness:.2e} (> 0)"
        ),
    ))
}

fn psd_projection() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0d);
    let mut worst = f64::INFINITY;
    for i in 0..40 {
        let d = rng.random_range(5..=30);
        let m = rng.random_range(1..=5);
        let a = gaussian_matrix(&mut rng, d, m);
        let dm = gaussian_matrix(&mut rng, d, m) * 3.0;
        let zref = random_reference(&mut rng, d, i % 2 == 1);
        let lambda = [0.0, 1e-2, 1.0][i % 3];
        let f = RspProblem::new(a, dm, lambda, zref)?.factorize()?;
        let lo = f.reference().min_eigenvalue();
        for frac in [0.0, 0.1, 0.5] {
            let floor = frac * lo;
            let g = f.psd_project(floor)?;
            let min = linalg::symmetric_eigenvalues(&g.to_dense())[0];
            worst = worst.min(min - floor);
        }
    }
    Ok((
        worst >= -1e-10,
        format!("smallest λ_min(Z) − floor over 120 projections {worst:.2e} (≥ −1e-10)"),
    ))
}

fn preconditioned_constraints() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0e);
    let (mut worst2, mut worst1) = (0.0_f64, 0.0_f64);
    for i in 0..50 {
        let d = rng.random_range(5..=20);
        let m = rng.random_range(1..=4);
        let w = ReferenceOperator::dense(random_spd(&mut rng, d, 0.5, 2.0))?;
        let r = random_reference(&mut rng, d, i % 2 == 1);
        let dg = gaussian_matrix(&mut rng, d, m);
        let h = semi_implicit_type2(&dg, &w, &r)?;
        let lhs = w.apply_columns(&h.apply_columns(&dg));
        worst2 = worst2.max((lhs - &dg).norm() / dg.norm());
        let dx = gaussian_matrix(&mut rng, d, m);
        let binv = semi_implicit_type1(&dx, &w, &r)?;
        let lhs = binv.apply_columns(&w.apply_columns(&dx));
        worst1 = worst1.max((lhs - &dx).norm() / dx.norm());
    }
    Ok((
        worst2 <= 1e-10 && worst1 <= 1e-10,
        format!("‖WHΔG − ΔG‖/‖ΔG‖ ≤ {worst2:.2e}, ‖B⁻¹WΔX − ΔX‖/‖ΔX‖ ≤ {worst1:.2e} (both ≤ 1e-10)"),
    ))
}

fn fd_error(obj: &dyn Objective, x: &DVector<f64>) -> f64 {
    let g = obj.gradient(x);
    let h = 1e-5;
    let mut fd = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        fd[i] = (obj.value(&xp) - obj.value(&xm)) / (2.0 * h);
    }
    (&g - fd).norm() / g.norm().max(1.0)
}

/// Every subset of `0..n` of size `k`, in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

fn gradient_correctness() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0f);
    let mut fd: f64 = 0.0;
    let quad = synthetic_quadratic(8, 50.0, 1500);
    let ridge = synthetic_regression(40, 6, 20.0, Loss::Square, 1e-2, 1501)?;
    let logistic = synthetic_regression(40, 6, 20.0, Loss::Logistic, 1e-2, 1502)?;
    let objs: [(&dyn Objective, usize); 3] = [(&quad, 8), (&ridge, 6), (&logistic, 6)];
    for (obj, d) in objs {
        for _ in 0..5 {
            fd = fd.max(fd_error(obj, &gaussian_vector(&mut rng, d)));
        }
    }
    let mut saga: f64 = 0.0;
    for (loss, seed) in [(Loss::Square, 1503), (Loss::Logistic, 1504)] {
        let data = gaussian_matrix(&mut rng, 12, 4);
        let labels = match loss {
            Loss::Square => gaussian_vector(&mut rng, 12),
            Loss::Logistic => DVector::from_fn(12, |i, _| if i % 3 == 0 { 1.0 } else { -1.0 }),
        };
        let obj = RegressionObjective::new(data, labels, loss, 0.1)?;
        let x = gaussian_vector(&mut rng, 4);
        let table_point = gaussian_vector(&mut rng, 4);
        let full = obj.gradient(&x);
        for batch in 1..=4 {
            let state = SagaState::new_at(&obj, &table_point, batch, seed)?;
            let all = subsets(12, batch);
            let mut mean = DVector::zeros(4);
            for b in &all {
                mean += state.estimate(&obj, &x, b);
            }
            mean /= all.len() as f64;
            saga = saga.max((mean - &full).norm() / full.norm());
        }
    }
    Ok((
        fd <= 1e-5 && saga <= 1e-10,
        format!("finite-difference error {fd:.2e} (≤ 1e-5), SAGA bias over all batches {saga:.2e} (≤ 1e-10)"),
    ))
}
