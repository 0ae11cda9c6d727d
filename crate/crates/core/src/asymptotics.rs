//! Asymptotic covariance of the generalized estimator.
//!
//! With `H = E_P*[d2m]` and `J = E_P*[dm dm^T]` evaluated at the population
//! optimum, `sqrt(N) (theta_hat - theta_inf)` is asymptotically normal with
//! covariance `H^-1 J H^-1`. All expectations are exact sums over the
//! sample space.
//!
//! The closed forms at the bottom of this module hold in the well-specified
//! case (`P* = P_theta`) and serve as cross-checks of the generic path.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::configspace::iter_space;
use crate::error::{Error, Result};
use crate::estimators::{population_grad, population_grad_outer, population_hess, EstimatorSpec};
use crate::fitting::{fit_population, FitOptions};
use crate::models::{exact_distribution, check_theta, Energy, ParameterVector, ProbabilityTable};

/// Relative asymmetry tolerated in `H` before symmetrization.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// `H` is singular when `min |lambda| <= SINGULAR_RATIO * max |lambda|`.
pub const SINGULAR_RATIO: f64 = 1e-10;
/// Eigenvalues of `Sigma` below this fraction of the largest are left out of
/// the log-determinant.
pub const RANK_RATIO: f64 = 1e-14;
/// Largest admissible `|grad|_inf` of the population criterion at a
/// well-specified parameter point.
pub const STATIONARITY_TOL: f64 = 1e-8;

/// Row-major square matrix with an explicit dimension, for JSON output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let data = (0..dim)
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Self { dim, data }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.dim * self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim * self.dim,
                got: self.data.len(),
            });
        }
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &self.data))
    }
}

pub(crate) mod matrix_serde {
    use super::MatrixJson;
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        MatrixJson::deserialize(d)?
            .to_matrix()
            .map_err(serde::de::Error::custom)
    }
}

/// `H`, `J`, `Sigma` and derived scalars for one estimator at one point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceReport {
    #[serde(rename = "estimator_name")]
    pub estimator: String,
    pub theta_star: ParameterVector,
    #[serde(rename = "H", with = "matrix_serde")]
    pub h: DMatrix<f64>,
    #[serde(rename = "J", with = "matrix_serde")]
    pub j: DMatrix<f64>,
    #[serde(rename = "Sigma", with = "matrix_serde")]
    pub sigma: DMatrix<f64>,
    #[serde(rename = "logdet_Sigma")]
    pub logdet_sigma: f64,
    /// Some eigenvalue of `Sigma` was below `RANK_RATIO` of the largest.
    pub rank_deficient: bool,
    /// `max |lambda(H)| / min |lambda(H)|`.
    #[serde(rename = "H_condition")]
    pub h_condition: f64,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub(crate) fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(m - m.transpose())) / scale
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `E_P*[d2m]` at `theta`.
pub fn compute_h<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    p_star: &ProbabilityTable,
) -> Result<DMatrix<f64>> {
    let h = population_hess(spec, model, theta, p_star)?;
    let asymmetry = relative_asymmetry(&h);
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::Asymmetric { asymmetry });
    }
    Ok(symmetrize(&h))
}

/// `E_P*[dm dm^T]` at `theta`.
pub fn compute_j<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    p_star: &ProbabilityTable,
) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&population_grad_outer(spec, model, theta, p_star)?))
}

/// Output of [`sandwich`].
#[derive(Clone, Debug)]
pub struct Sandwich {
    pub sigma: DMatrix<f64>,
    pub logdet: f64,
    pub rank_deficient: bool,
    pub h_condition: f64,
}

/// Eigenvalues sorted in descending order.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// `Sigma = H^-1 J H^-1`, inverting `H` through its eigendecomposition.
pub fn sandwich(h: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<Sandwich> {
    if h.shape() != j.shape() || !h.is_square() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            got: j.nrows(),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(h));
    let (min_pos, min_abs) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, l)| (i, l.abs()))
        .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
    let max_abs = eig.eigenvalues.amax();
    if max_abs == 0.0 || min_abs <= SINGULAR_RATIO * max_abs {
        return Err(Error::Singular {
            what: "H".into(),
            eigenvalue: eig.eigenvalues[min_pos],
            scale: max_abs,
        });
    }
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
    let h_inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let sigma = symmetrize(&(&h_inv * j * &h_inv));
    let (logdet, rank_deficient) = logdet_clamped(&sigma);
    Ok(Sandwich {
        sigma,
        logdet,
        rank_deficient,
        h_condition: max_abs / min_abs,
    })
}

/// Log-determinant from the eigenvalues above `RANK_RATIO * max`.
fn logdet_clamped(sigma: &DMatrix<f64>) -> (f64, bool) {
    let ev = SymmetricEigen::new(sigma.clone()).eigenvalues;
    let max = ev.max();
    let mut logdet = 0.0;
    let mut deficient = false;
    for l in ev.iter() {
        if max > 0.0 && *l > RANK_RATIO * max {
            logdet += l.ln();
        } else {
            deficient = true;
        }
    }
    (logdet, deficient)
}

/// The full report at `theta_star` against an arbitrary `P*`.
///
/// No stationarity check is made; `theta_star` is assumed to be the
/// optimum of the population criterion.
pub fn covariance_report<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta_star: &[f64],
    p_star: &ProbabilityTable,
) -> Result<CovarianceReport> {
    let h = compute_h(spec, model, theta_star, p_star)?;
    let j = compute_j(spec, model, theta_star, p_star)?;
    let s = sandwich(&h, &j).map_err(|e| match e {
        Error::Singular {
            eigenvalue, scale, ..
        } => Error::Singular {
            what: format!("H for estimator '{}'", spec.name()),
            eigenvalue,
            scale,
        },
        other => other,
    })?;
    Ok(CovarianceReport {
        estimator: spec.name().to_string(),
        theta_star: ParameterVector::new(theta_star.to_vec())?,
        h,
        j,
        sigma: s.sigma,
        logdet_sigma: s.logdet,
        rank_deficient: s.rank_deficient,
        h_condition: s.h_condition,
    })
}

/// Report with `P* = P_theta`, after checking that `theta` is stationary for
/// the population criterion.
pub fn well_specified_report<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
) -> Result<CovarianceReport> {
    let dist = exact_distribution(model, theta)?;
    let grad_inf = population_grad(spec, model, theta, dist.table())?.amax();
    if grad_inf.is_nan() || grad_inf >= STATIONARITY_TOL {
        return Err(Error::NotStationary { grad_inf });
    }
    covariance_report(spec, model, theta, dist.table())
}

/// Report at the population optimum for an arbitrary `P*`, located by
/// maximizing the population criterion.
pub fn misspecified_report<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    p_star: &ProbabilityTable,
    options: &FitOptions,
) -> Result<CovarianceReport> {
    let fit = fit_population(spec, model, p_star, options)?;
    if !fit.converged {
        return Err(Error::NotConverged {
            grad_inf: fit.grad_inf_norm,
            iterations: fit.iterations,
        });
    }
    covariance_report(spec, model, &fit.theta_hat, p_star)
}

/// `Cov_P(dE)`, the Fisher information of `P_theta`.
pub fn fisher_information<M: Energy + ?Sized>(model: &M, theta: &[f64]) -> Result<DMatrix<f64>> {
    let dist = exact_distribution(model, theta)?;
    let p = model.param_count();
    let mut mean = DVector::zeros(p);
    let mut second = DMatrix::zeros(p, p);
    for x in iter_space(model.dim()) {
        let w = dist.prob(&x);
        let g = model.grad(theta, x);
        mean.axpy(w, &g, 1.0);
        second.ger(w, &g, &g, 1.0);
    }
    second.ger(-1.0, &mean, &mean, 1.0);
    Ok(symmetrize(&second))
}

/// Per `(x, d)` quantities shared by the closed forms.
struct ConditionalTerm {
    prob: f64,
    /// `P(x_d | x_-d)`
    cond: f64,
    /// `E_{P(x_d|x_-d)}[dE] - dE(x)`
    centered: DVector<f64>,
    /// `Cov_{P(x_d|x_-d)}(dE)`
    cond_cov: DMatrix<f64>,
}

fn conditional_terms<M: Energy + ?Sized>(
    model: &M,
    theta: &[f64],
) -> Result<Vec<Vec<ConditionalTerm>>> {
    check_theta(model, theta)?;
    let dist = exact_distribution(model, theta)?;
    let dim = model.dim();
    Ok(iter_space(dim)
        .map(|x| {
            let gx = model.grad(theta, x);
            (0..dim)
                .map(|d| {
                    let y = x.flip_unchecked(d);
                    let gy = model.grad(theta, y);
                    let p = dist.conditional_unchecked(x, y);
                    let mean = &gx * p + &gy * (1.0 - p);
                    let dx = &gx - &mean;
                    let dy = &gy - &mean;
                    let cond_cov = &dx * dx.transpose() * p + &dy * dy.transpose() * (1.0 - p);
                    ConditionalTerm {
                        prob: dist.prob(&x),
                        cond: p,
                        centered: &mean - &gx,
                        cond_cov,
                    }
                })
                .collect()
        })
        .collect())
}

/// Pseudolikelihood `H` in the well-specified case:
/// `-E_P*[(1/D) sum_d Cov_{P(x_d|x_-d)}(dE)]`.
pub fn closed_form_h_pl<M: Energy + ?Sized>(model: &M, theta: &[f64]) -> Result<DMatrix<f64>> {
    let p = model.param_count();
    let dim = model.dim() as f64;
    let mut h = DMatrix::zeros(p, p);
    for terms in conditional_terms(model, theta)? {
        for t in terms {
            h -= &t.cond_cov * (t.prob / dim);
        }
    }
    Ok(h)
}

/// Pseudolikelihood `J` in the well-specified case. The two `(1/D) sum_d`
/// factors are averaged separately and their outer product taken inside
/// the expectation, which is `E[dm dm^T]`.
pub fn closed_form_j_pl<M: Energy + ?Sized>(model: &M, theta: &[f64]) -> Result<DMatrix<f64>> {
    let p = model.param_count();
    let dim = model.dim() as f64;
    let mut j = DMatrix::zeros(p, p);
    for terms in conditional_terms(model, theta)? {
        let prob = terms[0].prob;
        let mut avg = DVector::zeros(p);
        for t in &terms {
            avg.axpy(1.0 / dim, &t.centered, 1.0);
        }
        j.ger(prob, &avg, &avg, 1.0);
    }
    Ok(j)
}

/// Ratio matching `H` in the well-specified case:
/// `-(2/D) sum_d E_P*[P(x_d|x_-d)^2 u_d u_d^T]` with
/// `u_d = E_{P(x_d|x_-d)}[dE] - dE(x)`.
pub fn closed_form_h_rm<M: Energy + ?Sized>(model: &M, theta: &[f64]) -> Result<DMatrix<f64>> {
    let p = model.param_count();
    let dim = model.dim() as f64;
    let mut h = DMatrix::zeros(p, p);
    for terms in conditional_terms(model, theta)? {
        for t in terms {
            h.ger(-2.0 / dim * t.prob * t.cond * t.cond, &t.centered, &t.centered, 1.0);
        }
    }
    Ok(h)
}

/// Ratio matching `J` in the well-specified case: the outer product of
/// `(2/D) sum_d V_d u_d` under `P*`, with `V_d` the conditional Bernoulli
/// variance.
pub fn closed_form_j_rm<M: Energy + ?Sized>(model: &M, theta: &[f64]) -> Result<DMatrix<f64>> {
    let p = model.param_count();
    let dim = model.dim() as f64;
    let mut j = DMatrix::zeros(p, p);
    for terms in conditional_terms(model, theta)? {
        let prob = terms[0].prob;
        let mut avg = DVector::zeros(p);
        for t in &terms {
            let v = t.cond * (1.0 - t.cond);
            avg.axpy(2.0 / dim * v, &t.centered, 1.0);
        }
        j.ger(prob, &avg, &avg, 1.0);
    }
    Ok(j)
}

/// `|A - B|_F / max(|A|_F, |B|_F)`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}
