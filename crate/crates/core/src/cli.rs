//! The `debm` command line tool.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::asymptotics::{relative_frobenius, well_specified_report, CovarianceReport, MatrixJson};
use crate::efficiency::{
    bound_quantities, check_theorem_bound, logdet_gap, psd_order, BoundReport, PsdOrder,
    TheoremCheck, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, EstimatorSpec};
use crate::fitting::{fit, monte_carlo_covariance, FitOptions, FitResult, Init, MonteCarloSettings};
use crate::io;
use crate::models::{sample_dataset, Energy, EnergyModel, ParameterVector};
use crate::rng::GENERATOR_ID;
use crate::simulation::{figure2, Figure2Settings};

#[derive(Debug, Parser)]
#[command(name = "debm", version, about = "Asymptotic efficiency of estimators for discrete energy-based models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Ml,
    Pl,
    Rm,
    Gsm,
}

impl From<EstimatorArg> for EstimatorKind {
    fn from(a: EstimatorArg) -> Self {
        match a {
            EstimatorArg::Ml => EstimatorKind::Ml,
            EstimatorArg::Pl => EstimatorKind::Pl,
            EstimatorArg::Rm => EstimatorKind::Rm,
            EstimatorArg::Gsm => EstimatorKind::Gsm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    /// Start from the parameters in the model spec.
    Spec,
    Zeros,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Asymptotic covariance of one estimator at the spec parameters.
    Covariance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        estimator: EstimatorArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ML, PL and RM covariances, the ratio matching bound and its check.
    Compare {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized comparison on the third-order Boltzmann machine (CSV).
    Figure2 {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standard deviation of the parameter draws.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact samples from the spec distribution, one case per line.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fits a dataset; the model spec gives the shape and starting point.
    Fit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        estimator: EstimatorArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = InitArg::Spec)]
        init: InitArg,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        /// Seed for randomized restarts.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        require_converged: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo check of the asymptotic covariance.
    McValidate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        estimator: EstimatorArg,
        /// Cases per trial.
        #[arg(long, default_value_t = 5000)]
        n: usize,
        /// Number of trials.
        #[arg(long, default_value_t = 2000)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        require_converged: bool,
        /// JSON summary.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-trial CSV.
        #[arg(long)]
        trials_out: Option<PathBuf>,
    },
}

fn load_model(path: &Path) -> Result<(EnergyModel, ParameterVector)> {
    io::read_model_spec(path)?.build()
}

fn report_for(
    kind: EstimatorKind,
    model: &EnergyModel,
    theta: &[f64],
) -> Result<CovarianceReport> {
    let spec = EstimatorSpec::preset(kind, model.dim())?;
    well_specified_report(&spec, model, theta)
}

#[derive(Debug, Serialize)]
pub struct CompareBundle {
    pub ml: CovarianceReport,
    pub pl: CovarianceReport,
    pub rm: CovarianceReport,
    pub bound: BoundReport,
    /// Eigenvalues of `Sigma_RM - Sigma_PL`, descending.
    pub spectrum_rm_minus_pl: Vec<f64>,
    pub order_pl_rm: PsdOrder,
    pub theorem: TheoremCheck,
    pub verdict: &'static str,
}

pub fn compare(model: &EnergyModel, theta: &[f64]) -> Result<CompareBundle> {
    let ml = report_for(EstimatorKind::Ml, model, theta)?;
    let pl = report_for(EstimatorKind::Pl, model, theta)?;
    let rm = report_for(EstimatorKind::Rm, model, theta)?;
    let mut bound = bound_quantities(model, theta)?;
    bound.observed_gap = Some(logdet_gap(&pl.sigma, &rm.sigma)?);
    let order = psd_order(&pl.sigma, &rm.sigma, DEFAULT_TOL)?;
    let theorem = check_theorem_bound(&pl.sigma, &rm.sigma, &bound, DEFAULT_TOL)?;
    Ok(CompareBundle {
        verdict: if theorem.pass { "pass" } else { "fail" },
        ml,
        pl,
        rm,
        bound,
        spectrum_rm_minus_pl: order.spectrum,
        order_pl_rm: order.order,
        theorem,
    })
}

#[derive(Debug, Serialize)]
pub struct McSummary {
    pub estimator: String,
    pub cases_per_trial: usize,
    pub trials: usize,
    pub seed: u64,
    pub generator: &'static str,
    pub converged: usize,
    pub not_converged: usize,
    pub failed: usize,
    pub empirical_covariance: MatrixJson,
    pub analytic_sigma: MatrixJson,
    pub relative_frobenius: f64,
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Covariance {
            model,
            estimator,
            out,
        } => {
            let (m, theta) = load_model(&model)?;
            let report = report_for(estimator.into(), &m, &theta).map_err(|e| match e {
                Error::Singular {
                    what,
                    eigenvalue,
                    scale,
                } if !m.is_identifiable() => Error::Singular {
                    what: format!("{what} (the model is not identifiable)"),
                    eigenvalue,
                    scale,
                },
                other => other,
            })?;
            io::write_json(io::output(out.as_deref())?, &report)
        }
        Command::Compare { model, out } => {
            let (m, theta) = load_model(&model)?;
            let bundle = compare(&m, &theta)?;
            eprintln!(
                "spectrum of Sigma_RM - Sigma_PL: {}",
                fmt_list(&bundle.spectrum_rm_minus_pl)
            );
            eprintln!(
                "ordering: {}; bound check: {} (l = {:.6}, h = {:.6})",
                bundle.order_pl_rm, bundle.verdict, bundle.bound.l, bundle.bound.h
            );
            io::write_json(io::output(out.as_deref())?, &bundle)
        }
        Command::Figure2 {
            trials,
            seed,
            sigma,
            out,
        } => {
            let run = figure2(&Figure2Settings {
                trials,
                seed,
                sigma,
                ..Figure2Settings::default()
            })?;
            io::write_figure2_csv(io::output(out.as_deref())?, &run.rows)?;
            let (lo, hi) = run.bound_width_range();
            eprintln!(
                "{} rows ({} skipped); delta_rm_pl > 0 in {:.3} of rows; bound_width in [{lo:.4}, {hi:.4}]",
                run.rows.len(),
                run.skipped,
                run.positive_fraction()
            );
            Ok(())
        }
        Command::Sample {
            model,
            n,
            seed,
            out,
        } => {
            let (m, theta) = load_model(&model)?;
            if n == 0 {
                return Err(Error::InvalidOption("--n must be positive".into()));
            }
            let data = sample_dataset(&m, &theta, n, seed)?;
            let mut w = io::output(out.as_deref())?;
            writeln!(w, "# {n} draws, seed {seed}, generator {GENERATOR_ID}")?;
            io::write_dataset(w, &data)
        }
        Command::Fit {
            model,
            estimator,
            data,
            init,
            max_iterations,
            restarts,
            seed,
            require_converged,
            out,
        } => {
            let (m, theta) = load_model(&model)?;
            let dataset = io::read_dataset(&data, Some(m.dim()))?;
            let spec = EstimatorSpec::preset(estimator.into(), m.dim())?;
            let mut options = FitOptions {
                init: match init {
                    InitArg::Spec => Init::Given(theta),
                    InitArg::Zeros => Init::Zeros,
                },
                restarts,
                restart_seed: seed,
                ..FitOptions::default()
            };
            if let Some(it) = max_iterations {
                options.max_iterations = it;
            }
            let result: FitResult = fit(&spec, &m, &dataset, &options)?;
            io::write_json(io::output(out.as_deref())?, &result)?;
            if require_converged && !result.converged {
                return Err(Error::NotConverged {
                    grad_inf: result.grad_inf_norm,
                    iterations: result.iterations,
                });
            }
            Ok(())
        }
        Command::McValidate {
            model,
            estimator,
            n,
            m: trials,
            seed,
            require_converged,
            out,
            trials_out,
        } => {
            let (m, theta) = load_model(&model)?;
            let kind: EstimatorKind = estimator.into();
            let spec = EstimatorSpec::preset(kind, m.dim())?;
            let analytic = well_specified_report(&spec, &m, &theta)?;
            let mc = monte_carlo_covariance(&spec, &m, &theta, &MonteCarloSettings::new(n, trials, seed))?;
            if let Some(path) = trials_out {
                io::write_trials_csv(io::output(Some(&path))?, &mc.trials, m.param_count())?;
            }
            let summary = McSummary {
                estimator: kind.to_string(),
                cases_per_trial: n,
                trials,
                seed,
                generator: GENERATOR_ID,
                converged: mc.converged,
                not_converged: mc.not_converged,
                failed: mc.failed,
                relative_frobenius: relative_frobenius(&mc.covariance, &analytic.sigma),
                empirical_covariance: MatrixJson::from(&mc.covariance),
                analytic_sigma: MatrixJson::from(&analytic.sigma),
            };
            eprintln!(
                "{}: relative Frobenius distance {:.4} over {} converged trials",
                summary.estimator, summary.relative_frobenius, summary.converged
            );
            io::write_json(io::output(out.as_deref())?, &summary)?;
            if require_converged && mc.not_converged + mc.failed > 0 {
                return Err(Error::NotConverged {
                    grad_inf: f64::NAN,
                    iterations: 0,
                });
            }
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn compare_uniform() {
        let m = EnergyModel::third_order_bm();
        let b = compare(&m, &[0.0; 6]).unwrap();
        assert!(b.spectrum_rm_minus_pl.iter().all(|l| l.abs() < 1e-10));
        assert_eq!(b.verdict, "pass");
        assert!((b.bound.l - 1.0).abs() < 1e-12 && (b.bound.h - 1.0).abs() < 1e-12);
    }
}
