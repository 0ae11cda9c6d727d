//! Randomized comparison of ML, PL and RM on the third-order Boltzmann
//! machine.
//!
//! Each trial draws `theta ~ N(0, sigma^2 I)` from its own stream, computes
//! the three asymptotic covariances and the ratio matching bound
//! coefficients, and records the pairwise log-determinant gaps.

use log::warn;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::asymptotics::well_specified_report;
use crate::efficiency::{bound_quantities, check_theorem_bound, TheoremCheck, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::estimators::EstimatorSpec;
use crate::models::EnergyModel;
use crate::par::Execution;
use crate::rng;

pub const THETA_LEN: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure2Row {
    pub trial: usize,
    pub theta: [f64; THETA_LEN],
    pub logdet_ml: f64,
    pub logdet_pl: f64,
    pub logdet_rm: f64,
    pub delta_pl_ml: f64,
    pub delta_rm_ml: f64,
    pub delta_rm_pl: f64,
    pub log_l: f64,
    pub log_h: f64,
    /// `D_theta (log h - log l)`.
    pub bound_width: f64,
    /// Matrix bracket check for this draw; not part of the CSV output.
    #[serde(skip)]
    pub theorem: Option<TheoremCheck>,
}

impl Figure2Row {
    /// Magnitude used to scale the row tolerances: the largest absolute
    /// log-determinant or bound end, and at least one.
    pub fn scale(&self) -> f64 {
        let d = THETA_LEN as f64;
        [
            self.logdet_ml,
            self.logdet_pl,
            self.logdet_rm,
            d * self.log_l,
            d * self.log_h,
        ]
        .iter()
        .fold(1.0f64, |m, v| m.max(v.abs()))
    }

    /// ML dominance and the log-determinant bracket, each within
    /// `tol * scale`.
    pub fn invariants_hold(&self, tol: f64) -> bool {
        let slack = tol * self.scale();
        let d = THETA_LEN as f64;
        self.delta_pl_ml >= -slack
            && self.delta_rm_ml >= -slack
            && self.delta_rm_pl >= d * self.log_l - slack
            && self.delta_rm_pl <= d * self.log_h + slack
    }
}

#[derive(Clone, Debug)]
pub struct Figure2Run {
    pub rows: Vec<Figure2Row>,
    /// Trials dropped because some covariance was singular.
    pub skipped: usize,
}

impl Figure2Run {
    pub fn positive_fraction(&self) -> f64 {
        let pos = self.rows.iter().filter(|r| r.delta_rm_pl > 0.0).count();
        pos as f64 / self.rows.len().max(1) as f64
    }

    pub fn bound_width_range(&self) -> (f64, f64) {
        self.rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.bound_width), hi.max(r.bound_width))
        })
    }
}

#[derive(Clone, Debug)]
pub struct Figure2Settings {
    pub trials: usize,
    pub seed: u64,
    pub sigma: f64,
    pub execution: Execution,
}

impl Default for Figure2Settings {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            sigma: 1.0,
            execution: Execution::default(),
        }
    }
}

/// Parameters of trial `t`.
pub fn trial_theta(seed: u64, trial: usize, sigma: f64) -> Result<[f64; THETA_LEN]> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidOption(format!("sigma must be positive, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidOption(format!("sigma {sigma}: {e}")))?;
    let mut rng = rng::stream(seed, trial as u64);
    let mut theta = [0.0; THETA_LEN];
    for v in theta.iter_mut() {
        *v = normal.sample(&mut rng);
    }
    Ok(theta)
}

/// Computes one row at the given parameters.
pub fn figure2_row(trial: usize, theta: [f64; THETA_LEN]) -> Result<Figure2Row> {
    let model = EnergyModel::third_order_bm();
    let report = |spec: EstimatorSpec| well_specified_report(&spec, &model, &theta);
    let ml = report(EstimatorSpec::ml(3)?)?;
    let pl = report(EstimatorSpec::pl(3)?)?;
    let rm = report(EstimatorSpec::rm(3)?)?;
    let bound = bound_quantities(&model, &theta)?;
    let theorem = check_theorem_bound(&pl.sigma, &rm.sigma, &bound, DEFAULT_TOL)?;
    let (log_l, log_h) = (bound.l.ln(), bound.h.ln());
    Ok(Figure2Row {
        trial,
        theta,
        logdet_ml: ml.logdet_sigma,
        logdet_pl: pl.logdet_sigma,
        logdet_rm: rm.logdet_sigma,
        delta_pl_ml: pl.logdet_sigma - ml.logdet_sigma,
        delta_rm_ml: rm.logdet_sigma - ml.logdet_sigma,
        delta_rm_pl: rm.logdet_sigma - pl.logdet_sigma,
        log_l,
        log_h,
        bound_width: THETA_LEN as f64 * (log_h - log_l),
        theorem: Some(theorem),
    })
}

/// Runs all trials; rows come back in trial order.
pub fn figure2(settings: &Figure2Settings) -> Result<Figure2Run> {
    if settings.trials == 0 {
        return Err(Error::InvalidOption("trials must be at least 1".into()));
    }
    trial_theta(settings.seed, 0, settings.sigma)?;
    let results = settings.execution.map_range(settings.trials, |t| {
        trial_theta(settings.seed, t, settings.sigma).and_then(|theta| figure2_row(t, theta))
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for (t, r) in results.into_iter().enumerate() {
        match r {
            Ok(row) => rows.push(row),
            Err(e @ Error::Singular { .. }) => {
                warn!("trial {t} skipped: {e}");
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        warn!("{skipped} of {} trials skipped", settings.trials);
    }
    Ok(Figure2Run { rows, skipped })
}
