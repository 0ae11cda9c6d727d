//! Relative efficiency of ratio matching and pseudolikelihood.
//!
//! For a well-specified model the ratio matching covariance is bracketed
//! by multiples of the pseudolikelihood covariance,
//! `l * Sigma_PL <= Sigma_RM <= h * Sigma_PL` in the positive semidefinite
//! order, with `l = V_min^2 / q_max^4` and `h = V_max^2 / q_min^4` built
//! from the extreme one-coordinate conditionals `q` and Bernoulli variances
//! `V = q (1 - q)`. Taking log-determinants gives
//! `D_theta log l <= logdet Sigma_RM - logdet Sigma_PL <= D_theta log h`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{relative_asymmetry, sorted_eigenvalues, symmetrize};
use crate::configspace::iter_space;
use crate::error::{Error, Result};
use crate::models::{check_theta, exact_distribution, Energy};

/// Default relative tolerance for ordering tests.
pub const DEFAULT_TOL: f64 = 1e-7;
/// `logdet_gap` rejects matrices with `min eig <= PD_RATIO * max eig`.
pub const PD_RATIO: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub q_min: f64,
    pub q_max: f64,
    /// Largest conditional not exceeding one half.
    pub q_mid: f64,
    #[serde(rename = "V_min")]
    pub v_min: f64,
    #[serde(rename = "V_max")]
    pub v_max: f64,
    pub l: f64,
    pub h: f64,
    #[serde(rename = "D_theta")]
    pub d_theta: usize,
    pub logdet_gap_lower: f64,
    pub logdet_gap_upper: f64,
    /// `logdet Sigma_RM - logdet Sigma_PL`, when computed.
    pub observed_gap: Option<f64>,
}

/// Scans every `(x, d)` conditional of `P_theta`.
pub fn bound_quantities<M: Energy + ?Sized>(model: &M, theta: &[f64]) -> Result<BoundReport> {
    check_theta(model, theta)?;
    let dist = exact_distribution(model, theta)?;
    let dim = model.dim();
    let mut q_min = f64::INFINITY;
    let mut q_max = f64::NEG_INFINITY;
    let mut q_mid = f64::NEG_INFINITY;
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for x in iter_space(dim) {
        for d in 0..dim {
            let q = dist.conditional_unchecked(x, x.flip_unchecked(d));
            let v = q * (1.0 - q);
            q_min = q_min.min(q);
            q_max = q_max.max(q);
            if q <= 0.5 {
                q_mid = q_mid.max(q);
            }
            v_min = v_min.min(v);
            v_max = v_max.max(v);
        }
    }
    assert!(
        q_mid.is_finite(),
        "complementary conditionals guarantee one at most 1/2"
    );
    let l = v_min * v_min / q_max.powi(4);
    let h = v_max * v_max / q_min.powi(4);
    let d_theta = model.param_count();
    Ok(BoundReport {
        q_min,
        q_max,
        q_mid,
        v_min,
        v_max,
        l,
        h,
        d_theta,
        logdet_gap_lower: d_theta as f64 * l.ln(),
        logdet_gap_upper: d_theta as f64 * h.ln(),
        observed_gap: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsdOrder {
    ABelowB,
    BBelowA,
    Equal,
    Incomparable,
}

impl std::fmt::Display for PsdOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PsdOrder::ABelowB => "A_below_B",
            PsdOrder::BBelowA => "B_below_A",
            PsdOrder::Equal => "equal",
            PsdOrder::Incomparable => "incomparable",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdComparison {
    pub order: PsdOrder,
    /// Eigenvalues of `B - A`, descending.
    pub spectrum: Vec<f64>,
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    Ok(())
}

/// Classifies `A` against `B` from the spectrum of `B - A`, treating
/// eigenvalues within `tol * max |eig|` of zero as zero.
pub fn psd_order(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<PsdComparison> {
    check_pair(a, b)?;
    for m in [a, b] {
        let asymmetry = relative_asymmetry(m);
        if asymmetry > tol {
            return Err(Error::Asymmetric { asymmetry });
        }
    }
    let spectrum = sorted_eigenvalues(&symmetrize(&(b - a)));
    let thr = tol * spectrum.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let above = spectrum.iter().all(|l| *l >= -thr);
    let below = spectrum.iter().all(|l| *l <= thr);
    let order = match (above, below) {
        (true, true) => PsdOrder::Equal,
        (true, false) => PsdOrder::ABelowB,
        (false, true) => PsdOrder::BBelowA,
        (false, false) => PsdOrder::Incomparable,
    };
    Ok(PsdComparison { order, spectrum })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub pass: bool,
    /// Smallest eigenvalue of `Sigma_RM - l Sigma_PL`.
    pub lower_witness: f64,
    /// Smallest eigenvalue of `h Sigma_PL - Sigma_RM`.
    pub upper_witness: f64,
    /// Largest `|eig|` across both differences.
    pub scale: f64,
}

/// Tests `l Sigma_PL <= Sigma_RM <= h Sigma_PL`.
pub fn check_theorem_bound(
    sigma_pl: &DMatrix<f64>,
    sigma_rm: &DMatrix<f64>,
    bound: &BoundReport,
    tol: f64,
) -> Result<TheoremCheck> {
    check_pair(sigma_pl, sigma_rm)?;
    let lower = SymmetricEigen::new(symmetrize(&(sigma_rm - sigma_pl * bound.l))).eigenvalues;
    let upper = SymmetricEigen::new(symmetrize(&(sigma_pl * bound.h - sigma_rm))).eigenvalues;
    let scale = lower.amax().max(upper.amax());
    let lower_witness = lower.min();
    let upper_witness = upper.min();
    Ok(TheoremCheck {
        pass: lower_witness >= -tol * scale && upper_witness >= -tol * scale,
        lower_witness,
        upper_witness,
        scale,
    })
}

fn logdet_pd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let max = ev.max();
    let min = ev.min();
    if max.is_nan() || max <= 0.0 || min <= PD_RATIO * max {
        return Err(Error::Singular {
            what: what.into(),
            eigenvalue: min,
            scale: max,
        });
    }
    Ok(ev.iter().map(|l| l.ln()).sum())
}

/// `logdet B - logdet A` for positive definite `A`, `B`.
pub fn logdet_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    check_pair(a, b)?;
    Ok(logdet_pd(b, "second covariance")? - logdet_pd(a, "first covariance")?)
}
