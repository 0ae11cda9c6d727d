//! Maximization of a criterion over the parameters, and Monte Carlo
//! validation of the asymptotic covariance.
//!
//! The ascent is BFGS on `-f` with an Armijo backtracking line search. Each
//! accepted step satisfies the sufficient-increase condition, so the
//! criterion is non-decreasing along the path. Iteration order is fixed,
//! which makes a fit bitwise reproducible.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    criterion_derivatives, population_derivatives, population_grad, Derivatives, EstimatorKind,
    EstimatorSpec, Order,
};
use crate::models::{
    check_theta, exact_distribution, Dataset, Energy, ParameterVector, ProbabilityTable,
    TableSampler,
};
use crate::par::Execution;
use crate::rng;

/// Starting point of the first restart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Given(ParameterVector),
    /// `0.5 * N(0, I)` drawn from the given seed.
    Random { seed: u64 },
}

/// Backtracking line search parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub initial_step: f64,
    pub shrink: f64,
    /// Armijo constant `c` in `f(t + a d) >= f(t) + c a g.d`.
    pub sufficient_increase: f64,
    pub max_shrinks: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_increase: 1e-4,
            max_shrinks: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on `|grad|_inf`.
    pub grad_tol: f64,
    /// Number of extra randomized starts; `None` picks 4 for the non-convex
    /// presets (RM, GSM) and 0 otherwise.
    pub restarts: Option<usize>,
    pub init: Init,
    /// Seed for the randomized restarts.
    pub restart_seed: u64,
    pub step: StepControl,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            grad_tol: 1e-8,
            restarts: None,
            init: Init::Zeros,
            restart_seed: 0,
            step: StepControl::default(),
        }
    }
}

/// Randomized restarts used when `FitOptions::restarts` is `None`.
pub const NONCONVEX_RESTARTS: usize = 4;
/// Scale of the randomized starting points.
pub const RANDOM_INIT_SCALE: f64 = 0.5;

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let s = &self.step;
        if self.max_iterations == 0 {
            return Err(Error::InvalidOption("max_iterations must be positive".into()));
        }
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return Err(Error::InvalidOption("grad_tol must be positive".into()));
        }
        if !(s.shrink > 0.0 && s.shrink < 1.0) {
            return Err(Error::InvalidOption(format!(
                "shrink factor {} outside (0, 1)",
                s.shrink
            )));
        }
        if !(s.sufficient_increase > 0.0 && s.sufficient_increase <= 0.5) {
            return Err(Error::InvalidOption(format!(
                "sufficient-increase constant {} outside (0, 0.5]",
                s.sufficient_increase
            )));
        }
        if !(s.initial_step > 0.0 && s.initial_step.is_finite()) {
            return Err(Error::InvalidOption("initial step must be positive".into()));
        }
        Ok(())
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = Some(restarts);
        self
    }

    fn restart_count(&self, spec: &EstimatorSpec) -> usize {
        self.restarts.unwrap_or(match spec.kind() {
            Some(EstimatorKind::Rm | EstimatorKind::Gsm) => NONCONVEX_RESTARTS,
            _ => 0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ParameterVector,
    pub criterion_value: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restart_index: usize,
    /// Criterion at the start point and after every accepted step.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

fn random_start(p: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, stream);
    (0..p)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            RANDOM_INIT_SCALE * z
        })
        .collect()
}

fn starting_points(p: usize, spec: &EstimatorSpec, options: &FitOptions) -> Result<Vec<Vec<f64>>> {
    let first = match &options.init {
        Init::Zeros => vec![0.0; p],
        Init::Given(theta) => {
            if theta.len() != p {
                return Err(Error::ParameterLength {
                    expected: p,
                    got: theta.len(),
                });
            }
            theta.to_vec()
        }
        Init::Random { seed } => random_start(p, *seed, 0),
    };
    let mut starts = vec![first];
    for r in 1..=options.restart_count(spec) {
        starts.push(random_start(p, options.restart_seed, r as u64));
    }
    Ok(starts)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// A trial point is usable only if it evaluates to a finite value.
fn trial_value<F>(objective: &F, theta: &[f64]) -> Option<f64>
where
    F: Fn(&[f64], Order) -> Result<Derivatives>,
{
    match objective(theta, Order::Value) {
        Ok(d) if d.value.is_finite() => Some(d.value),
        _ => None,
    }
}

/// BFGS ascent from one starting point.
fn ascend<F>(objective: &F, start: Vec<f64>, options: &FitOptions) -> Result<FitResult>
where
    F: Fn(&[f64], Order) -> Result<Derivatives>,
{
    let p = start.len();
    let step = options.step;
    let mut theta = DVector::from_vec(start);
    let eval = |theta: &DVector<f64>, iteration: usize| -> Result<(f64, DVector<f64>)> {
        let d = objective(theta.as_slice(), Order::Gradient)?;
        let g = d.grad.expect("gradient requested");
        if !d.value.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::FitNonFinite {
                iteration,
                theta: theta.as_slice().to_vec(),
            });
        }
        Ok((d.value, g))
    };
    let (mut f, mut g) = eval(&theta, 0)?;
    let mut trace = vec![f];
    // inverse Hessian approximation of -f
    let mut inv = DMatrix::<f64>::identity(p, p);
    let mut fresh = true;
    let mut iterations = 0;

    while iterations < options.max_iterations && inf_norm(&g) > options.grad_tol {
        let mut dir = &inv * &g;
        let mut slope = g.dot(&dir);
        if slope.is_nan() || slope <= 0.0 {
            inv = DMatrix::identity(p, p);
            fresh = true;
            dir = g.clone();
            slope = g.dot(&g);
        }

        let mut alpha = step.initial_step;
        let mut accepted = None;
        let mut shrinks = 0;
        while shrinks <= step.max_shrinks {
            let cand = &theta + &dir * alpha;
            if let Some(fc) = trial_value(objective, cand.as_slice()) {
                if fc >= f + step.sufficient_increase * alpha * slope {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            alpha *= step.shrink;
            shrinks += 1;
        }

        let (cand, _) = match accepted {
            Some(a) => a,
            None if !fresh => {
                // the quasi-Newton direction failed; retry along the gradient
                inv = DMatrix::identity(p, p);
                fresh = true;
                continue;
            }
            None => {
                return Err(Error::LineSearch {
                    iteration: iterations,
                    shrinks,
                })
            }
        };

        iterations += 1;
        let (fc, gc) = eval(&cand, iterations)?;
        let s = &cand - &theta;
        // gradient change of -f
        let y = &g - &gc;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if fresh {
                inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let iy = &inv * &y;
            let yiy = y.dot(&iy);
            // H+ = H - rho (s (Hy)^T + (Hy) s^T) + (rho^2 y^T H y + rho) s s^T
            inv.ger(-rho, &s, &iy, 1.0);
            inv.ger(-rho, &iy, &s, 1.0);
            inv.ger(rho * rho * yiy + rho, &s, &s, 1.0);
            fresh = false;
        }
        theta = cand;
        f = fc;
        g = gc;
        trace.push(f);
    }

    let grad_inf_norm = inf_norm(&g);
    Ok(FitResult {
        theta_hat: ParameterVector::new(theta.as_slice().to_vec())?,
        criterion_value: f,
        grad_inf_norm,
        iterations,
        converged: grad_inf_norm <= options.grad_tol,
        restart_index: 0,
        trace,
    })
}

fn maximize<F>(
    objective: F,
    spec: &EstimatorSpec,
    p: usize,
    options: &FitOptions,
) -> Result<FitResult>
where
    F: Fn(&[f64], Order) -> Result<Derivatives>,
{
    options.validate()?;
    let mut best: Option<FitResult> = None;
    let mut first_error = None;
    for (r, start) in starting_points(p, spec, options)?.into_iter().enumerate() {
        match ascend(&objective, start, options) {
            Ok(mut res) => {
                res.restart_index = r;
                let better = match &best {
                    None => true,
                    Some(b) => res.criterion_value > b.criterion_value,
                };
                if better {
                    best = Some(res);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match (best, first_error) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one starting point"),
    }
}

fn warn_if_unidentifiable<M: Energy + ?Sized>(model: &M) {
    if !model.is_identifiable() {
        warn!(
            "model with {} parameters is not identifiable; the fitted parameters are one of several equivalent optima",
            model.param_count()
        );
    }
}

/// Maximizes the data criterion `(1/N) sum_n m(x_n)`.
pub fn fit<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    data: &Dataset,
    options: &FitOptions,
) -> Result<FitResult> {
    if data.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: data.dim(),
        });
    }
    warn_if_unidentifiable(model);
    maximize(
        |theta, order| criterion_derivatives(spec, model, theta, data, order),
        spec,
        model.param_count(),
        options,
    )
}

/// Maximizes the population criterion `sum_x P*(x) m(x)`, locating the
/// population optimum.
pub fn fit_population<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    p_star: &ProbabilityTable,
    options: &FitOptions,
) -> Result<FitResult> {
    warn_if_unidentifiable(model);
    maximize(
        |theta, order| population_derivatives(spec, model, theta, p_star, order),
        spec,
        model.param_count(),
        options,
    )
}

/// Outcome of one Monte Carlo trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub converged: bool,
    /// `None` when the fit returned an error.
    pub theta_hat: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct MonteCarloReport {
    pub cases_per_trial: usize,
    /// Sample covariance of `sqrt(N) (theta_hat - theta_true)` over the
    /// converged trials.
    pub covariance: DMatrix<f64>,
    /// Mean of the scaled deviations over the converged trials.
    pub mean_deviation: DVector<f64>,
    pub trials: Vec<TrialRecord>,
    pub converged: usize,
    pub not_converged: usize,
    pub failed: usize,
}

/// Largest tolerated fraction of trials ending in a fit error.
pub const MAX_FAILED_FRACTION: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct MonteCarloSettings {
    pub cases_per_trial: usize,
    pub trials: usize,
    pub seed: u64,
    /// Fit options for every trial; `None` starts each fit at the true
    /// parameters with default settings.
    pub options: Option<FitOptions>,
    pub execution: Execution,
}

impl MonteCarloSettings {
    pub fn new(cases_per_trial: usize, trials: usize, seed: u64) -> Self {
        Self {
            cases_per_trial,
            trials,
            seed,
            options: None,
            execution: Execution::default(),
        }
    }
}

/// Fits `trials` independent datasets drawn from `P_theta_true` and
/// returns the empirical covariance of the scaled deviations.
///
/// Trial `t` samples with stream `t` of the seed. Trials run in parallel;
/// the covariance is accumulated afterwards in trial order.
pub fn monte_carlo_covariance<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta_true: &[f64],
    settings: &MonteCarloSettings,
) -> Result<MonteCarloReport> {
    check_theta(model, theta_true)?;
    if settings.cases_per_trial == 0 || settings.trials < 2 {
        return Err(Error::InvalidOption(
            "Monte Carlo needs at least one case per trial and two trials".into(),
        ));
    }
    let dist = exact_distribution(model, theta_true)?;
    let grad_inf = population_grad(spec, model, theta_true, dist.table())?.amax();
    if grad_inf.is_nan() || grad_inf >= crate::asymptotics::STATIONARITY_TOL {
        return Err(Error::NotStationary { grad_inf });
    }
    let options = settings.options.clone().unwrap_or_else(|| {
        FitOptions::default().with_init(Init::Given(
            ParameterVector::new(theta_true.to_vec()).expect("checked finite"),
        ))
    });
    options.validate()?;
    let sampler = TableSampler::new(dist.table());
    let n = settings.cases_per_trial;

    let records = settings.execution.map_range(settings.trials, |t| {
        let mut rng = rng::stream(settings.seed, t as u64);
        let outcome = sampler
            .draw_dataset(n, &mut rng)
            .and_then(|data| fit(spec, model, &data, &options));
        match outcome {
            Ok(res) => TrialRecord {
                trial: t,
                converged: res.converged,
                theta_hat: Some(res.theta_hat.into_inner()),
                error: None,
            },
            Err(e) => TrialRecord {
                trial: t,
                converged: false,
                theta_hat: None,
                error: Some(e.to_string()),
            },
        }
    });

    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed as f64 > MAX_FAILED_FRACTION * settings.trials as f64 {
        return Err(Error::TooManyFailures {
            failed,
            total: settings.trials,
        });
    }
    let scale = (n as f64).sqrt();
    let p = model.param_count();
    let deviations: Vec<DVector<f64>> = records
        .iter()
        .filter(|r| r.converged)
        .filter_map(|r| r.theta_hat.as_ref())
        .map(|th| DVector::from_iterator(p, th.iter().zip(theta_true).map(|(a, b)| scale * (a - b))))
        .collect();
    let converged = deviations.len();
    if converged < 2 {
        return Err(Error::TooManyFailures {
            failed: settings.trials - converged,
            total: settings.trials,
        });
    }
    let mut mean = DVector::zeros(p);
    for d in &deviations {
        mean += d;
    }
    mean /= converged as f64;
    let mut cov = DMatrix::zeros(p, p);
    for d in &deviations {
        let c = d - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (converged - 1) as f64;

    Ok(MonteCarloReport {
        cases_per_trial: n,
        covariance: cov,
        mean_deviation: mean,
        not_converged: settings.trials - converged - failed,
        converged,
        failed,
        trials: records,
    })
}
