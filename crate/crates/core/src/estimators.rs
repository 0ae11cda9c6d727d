//! The generalized ratio estimator.
//!
//! A criterion is the data average of
//!
//! ```text
//! m(x) = (1/C) sum_c g_c(R(x, N_c(x))),   R(x, A) = Q(x) / sum_{x' in A} Q(x')
//! ```
//!
//! with `Q = exp(-E)`. Everything here works with unnormalized
//! probabilities only; the partition function never appears. Ratios are
//! computed in log space with max subtraction.
//!
//! Writing `v = E_R[dE] - dE(x)` for the ratio-centered energy gradient,
//! the per-component derivatives are
//!
//! ```text
//! dm   = g'(R) R v
//! d2m  = (g''(R) R^2 + g'(R) R) v v^T
//!      + g'(R) R (E_R[d2E] - d2E(x))
//!      - g'(R) R Cov_R(dE)
//! ```

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::configspace::{
    check_dimension, full_neighborhood, iter_space, Configuration, Neighborhood,
};
use crate::error::{Error, Result};
use crate::models::{check_config, check_theta, Dataset, Energy, ProbabilityTable, TABLE_SUM_TOL};
use crate::par::Execution;

/// Smallest distance from the GSM singularities at `R = 0` and `R = 1`.
pub const GSM_GUARD: f64 = 1e-300;

/// A user-supplied transfer function with analytic derivatives.
#[derive(Clone, Copy)]
pub struct CustomTransfer {
    pub name: &'static str,
    pub eval: fn(f64) -> f64,
    pub deriv1: fn(f64) -> f64,
    pub deriv2: fn(f64) -> f64,
}

impl fmt::Debug for CustomTransfer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomTransfer").field("name", &self.name).finish()
    }
}

/// The scalar map `g` applied to a ratio, together with `g'` and `g''`.
#[derive(Clone, Copy, Debug)]
pub enum TransferFunction {
    /// `g(R) = log R`
    Log,
    /// `g(R) = -(1 - R)^2`
    RatioMatching,
    /// `g(R) = 2 R/(1-R) - (R/(1-R))^-2`, signed so that the criterion is
    /// maximized at the truth like the other presets.
    GeneralizedScoreMatching,
    Custom(CustomTransfer),
}

impl TransferFunction {
    pub fn name(&self) -> &'static str {
        match self {
            TransferFunction::Log => "log",
            TransferFunction::RatioMatching => "ratio_matching",
            TransferFunction::GeneralizedScoreMatching => "generalized_score_matching",
            TransferFunction::Custom(c) => c.name,
        }
    }

    fn check(&self, r: f64) -> Result<()> {
        match self {
            TransferFunction::Log if r <= 0.0 => Err(Error::NumericDomain {
                what: "log transfer",
                value: r,
            }),
            TransferFunction::GeneralizedScoreMatching if r < GSM_GUARD || 1.0 - r < GSM_GUARD => {
                Err(Error::NumericDomain {
                    what: "generalized score matching transfer",
                    value: r,
                })
            }
            _ if !r.is_finite() => Err(Error::NumericDomain {
                what: "transfer argument",
                value: r,
            }),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        Ok(match self {
            TransferFunction::Log => r.ln(),
            TransferFunction::RatioMatching => -(1.0 - r).powi(2),
            TransferFunction::GeneralizedScoreMatching => {
                let odds = r / (1.0 - r);
                2.0 * odds - odds.powi(-2)
            }
            TransferFunction::Custom(c) => (c.eval)(r),
        })
    }

    pub fn deriv1(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        Ok(match self {
            TransferFunction::Log => 1.0 / r,
            TransferFunction::RatioMatching => 2.0 * (1.0 - r),
            TransferFunction::GeneralizedScoreMatching => {
                let s = 1.0 - r;
                2.0 * s / r.powi(3) + 2.0 / (s * s)
            }
            TransferFunction::Custom(c) => (c.deriv1)(r),
        })
    }

    pub fn deriv2(&self, r: f64) -> Result<f64> {
        self.check(r)?;
        Ok(match self {
            TransferFunction::Log => -1.0 / (r * r),
            TransferFunction::RatioMatching => -2.0,
            TransferFunction::GeneralizedScoreMatching => {
                let s = 1.0 - r;
                4.0 / s.powi(3) - 2.0 / r.powi(3) - 6.0 * s / r.powi(4)
            }
            TransferFunction::Custom(c) => (c.deriv2)(r),
        })
    }

    /// `g'(R) R`; exactly 1 for the log transfer.
    pub fn grad_weight(&self, r: f64) -> Result<f64> {
        match self {
            TransferFunction::Log => self.check(r).map(|_| 1.0),
            TransferFunction::RatioMatching => self.check(r).map(|_| 2.0 * (1.0 - r) * r),
            _ => Ok(self.deriv1(r)? * r),
        }
    }

    /// `g''(R) R^2 + g'(R) R`; exactly 0 for the log transfer.
    pub fn curvature_weight(&self, r: f64) -> Result<f64> {
        match self {
            TransferFunction::Log => self.check(r).map(|_| 0.0),
            TransferFunction::RatioMatching => {
                self.check(r).map(|_| 2.0 * r * (1.0 - r) - 2.0 * r * r)
            }
            _ => Ok(self.deriv2(r)? * r * r + self.deriv1(r)? * r),
        }
    }
}

pub type CustomNeighborhoodFn = dyn Fn(usize, Configuration) -> Result<Neighborhood> + Send + Sync;

/// How the neighborhood `N_c(x)` is built.
#[derive(Clone)]
pub enum NeighborhoodRule {
    /// `N_1(x) = X`.
    Full,
    /// `N_d(x) = {x, flip(x, d)}`, one component per dimension.
    OneFlip,
    /// `N_c(x) = {x}`.
    SinglePoint,
    Custom(Arc<CustomNeighborhoodFn>),
}

impl fmt::Debug for NeighborhoodRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NeighborhoodRule::Full => write!(f, "Full"),
            NeighborhoodRule::OneFlip => write!(f, "OneFlip"),
            NeighborhoodRule::SinglePoint => write!(f, "SinglePoint"),
            NeighborhoodRule::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// The named presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ml,
    Pl,
    Rm,
    Gsm,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Ml,
        EstimatorKind::Pl,
        EstimatorKind::Rm,
        EstimatorKind::Gsm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Ml => "ml",
            EstimatorKind::Pl => "pl",
            EstimatorKind::Rm => "rm",
            EstimatorKind::Gsm => "gsm",
        }
    }

    /// Whether the criterion is concave in the parameters of a log-linear
    /// model.
    pub fn is_concave_for_log_linear(&self) -> bool {
        matches!(self, EstimatorKind::Ml | EstimatorKind::Pl)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml" => Ok(EstimatorKind::Ml),
            "pl" => Ok(EstimatorKind::Pl),
            "rm" => Ok(EstimatorKind::Rm),
            "gsm" => Ok(EstimatorKind::Gsm),
            other => Err(Error::Parse(format!(
                "unknown estimator '{other}' (expected ml, pl, rm or gsm)"
            ))),
        }
    }
}

/// `(C, g_c, N_c)`: a complete description of one estimator.
#[derive(Clone, Debug)]
pub struct EstimatorSpec {
    name: String,
    kind: Option<EstimatorKind>,
    dim: usize,
    transfers: Vec<TransferFunction>,
    rule: NeighborhoodRule,
    full_space: Option<Arc<Neighborhood>>,
}

impl EstimatorSpec {
    /// A spec with one transfer per component.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        transfers: Vec<TransferFunction>,
        rule: NeighborhoodRule,
    ) -> Result<Self> {
        check_dimension(dim)?;
        if transfers.is_empty() {
            return Err(Error::InvalidOption("an estimator needs at least one component".into()));
        }
        match rule {
            NeighborhoodRule::Full if transfers.len() != 1 => {
                return Err(Error::InvalidOption(
                    "the full-space neighborhood rule has exactly one component".into(),
                ))
            }
            NeighborhoodRule::OneFlip if transfers.len() != dim => {
                return Err(Error::InvalidOption(format!(
                    "the one-flip neighborhood rule needs {dim} components, got {}",
                    transfers.len()
                )))
            }
            _ => {}
        }
        let full_space = match rule {
            NeighborhoodRule::Full => Some(Arc::new(full_neighborhood(dim)?)),
            _ => None,
        };
        Ok(Self {
            name: name.into(),
            kind: None,
            dim,
            transfers,
            rule,
            full_space,
        })
    }

    pub fn preset(kind: EstimatorKind, dim: usize) -> Result<Self> {
        let (rule, transfer, count) = match kind {
            EstimatorKind::Ml => (NeighborhoodRule::Full, TransferFunction::Log, 1),
            EstimatorKind::Pl => (NeighborhoodRule::OneFlip, TransferFunction::Log, dim),
            EstimatorKind::Rm => (NeighborhoodRule::OneFlip, TransferFunction::RatioMatching, dim),
            EstimatorKind::Gsm => (
                NeighborhoodRule::OneFlip,
                TransferFunction::GeneralizedScoreMatching,
                dim,
            ),
        };
        let mut spec = Self::new(kind.as_str(), dim, vec![transfer; count], rule)?;
        spec.kind = Some(kind);
        Ok(spec)
    }

    pub fn ml(dim: usize) -> Result<Self> {
        Self::preset(EstimatorKind::Ml, dim)
    }

    pub fn pl(dim: usize) -> Result<Self> {
        Self::preset(EstimatorKind::Pl, dim)
    }

    pub fn rm(dim: usize) -> Result<Self> {
        Self::preset(EstimatorKind::Rm, dim)
    }

    pub fn gsm(dim: usize) -> Result<Self> {
        Self::preset(EstimatorKind::Gsm, dim)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> Option<EstimatorKind> {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn component_count(&self) -> usize {
        self.transfers.len()
    }

    pub fn transfer(&self, c: usize) -> &TransferFunction {
        &self.transfers[c]
    }

    pub fn rule(&self) -> &NeighborhoodRule {
        &self.rule
    }

    /// `N_c(x)`.
    pub fn neighborhood(&self, c: usize, x: Configuration) -> Result<Neighborhood> {
        let members = self.members(c, x)?;
        match members {
            Cow::Borrowed(_) => Ok(self.full_space.as_deref().cloned().expect("full rule")),
            Cow::Owned(m) => Neighborhood::new(m),
        }
    }

    fn members(&self, c: usize, x: Configuration) -> Result<Cow<'_, [Configuration]>> {
        if c >= self.component_count() {
            return Err(Error::IndexOutOfRange {
                index: c,
                dim: self.component_count(),
            });
        }
        Ok(match &self.rule {
            NeighborhoodRule::Full => {
                Cow::Borrowed(self.full_space.as_ref().expect("full rule").members())
            }
            NeighborhoodRule::OneFlip => Cow::Owned(vec![x, x.flip(c)?]),
            NeighborhoodRule::SinglePoint => Cow::Owned(vec![x]),
            NeighborhoodRule::Custom(f) => {
                let n = f(c, x)?;
                if n.dim() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        got: n.dim(),
                    });
                }
                Cow::Owned(n.members().to_vec())
            }
        })
    }
}

fn check_shapes<M: Energy + ?Sized>(spec: &EstimatorSpec, model: &M, theta: &[f64]) -> Result<()> {
    if spec.dim != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: spec.dim,
        });
    }
    check_theta(model, theta)
}

/// Normalized ratio weights of every member of `members`.
fn ratio_weights<M: Energy + ?Sized>(model: &M, theta: &[f64], members: &[Configuration]) -> Vec<f64> {
    let neg: Vec<f64> = members.iter().map(|m| -model.eval(theta, *m)).collect();
    let max = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = neg.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

fn locate(members: &[Configuration], x: &Configuration) -> Result<usize> {
    members
        .iter()
        .position(|m| m == x)
        .ok_or(Error::NotInNeighborhood { index: x.index() })
}

fn check_neighborhood<M: Energy + ?Sized>(
    model: &M,
    theta: &[f64],
    x: &Configuration,
    a: &Neighborhood,
) -> Result<usize> {
    check_theta(model, theta)?;
    check_config(model, x)?;
    if a.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: a.dim(),
        });
    }
    locate(a.members(), x)
}

/// `R(x, A) = Q(x) / sum_{x' in A} Q(x')`.
pub fn ratio<M: Energy + ?Sized>(
    model: &M,
    theta: &[f64],
    x: Configuration,
    a: &Neighborhood,
) -> Result<f64> {
    let pos = check_neighborhood(model, theta, &x, a)?;
    Ok(ratio_weights(model, theta, a.members())[pos])
}

/// `E_R[f] = sum_{x' in A} R(x', A) f(x')`.
pub fn ratio_expectation<M, F>(
    model: &M,
    theta: &[f64],
    x: Configuration,
    a: &Neighborhood,
    f: F,
) -> Result<DVector<f64>>
where
    M: Energy + ?Sized,
    F: Fn(Configuration) -> DVector<f64>,
{
    check_neighborhood(model, theta, &x, a)?;
    let w = ratio_weights(model, theta, a.members());
    let mut acc: Option<DVector<f64>> = None;
    for (m, wi) in a.members().iter().zip(&w) {
        let v = f(*m) * *wi;
        acc = Some(match acc {
            Some(s) => s + v,
            None => v,
        });
    }
    Ok(acc.expect("neighborhoods are non-empty"))
}

/// Which derivatives to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// `m`, and optionally its gradient and Hessian, at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub grad: Option<DVector<f64>>,
    pub hess: Option<DMatrix<f64>>,
}

impl Derivatives {
    fn zero(p: usize, order: Order) -> Self {
        Self {
            value: 0.0,
            grad: (order >= Order::Gradient).then(|| DVector::zeros(p)),
            hess: (order >= Order::Hessian).then(|| DMatrix::zeros(p, p)),
        }
    }

    fn add_scaled(&mut self, other: &Derivatives, w: f64) {
        self.value += w * other.value;
        if let (Some(a), Some(b)) = (self.grad.as_mut(), other.grad.as_ref()) {
            a.axpy(w, b, 1.0);
        }
        if let (Some(a), Some(b)) = (self.hess.as_mut(), other.hess.as_ref()) {
            a.zip_apply(b, |s, o| *s += w * o);
        }
    }

    fn scale(&mut self, w: f64) {
        self.value *= w;
        if let Some(g) = self.grad.as_mut() {
            *g *= w;
        }
        if let Some(h) = self.hess.as_mut() {
            *h *= w;
        }
    }
}

/// Per-case evaluation without input validation.
fn evaluate_case<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    x: Configuration,
    order: Order,
) -> Result<Derivatives> {
    let p = model.param_count();
    let mut out = Derivatives::zero(p, order);
    for c in 0..spec.component_count() {
        let g = spec.transfer(c);
        let members = spec.members(c, x)?;
        let pos = locate(&members, &x)?;
        let w = ratio_weights(model, theta, &members);
        let r = w[pos];
        out.value += g.eval(r)?;
        if order == Order::Value {
            continue;
        }

        let grads: Vec<DVector<f64>> = members.iter().map(|m| model.grad(theta, *m)).collect();
        let mut mean = DVector::zeros(p);
        for (gi, wi) in grads.iter().zip(&w) {
            mean.axpy(*wi, gi, 1.0);
        }
        let v = &mean - &grads[pos];
        let gw = g.grad_weight(r)?;
        if let Some(acc) = out.grad.as_mut() {
            acc.axpy(gw, &v, 1.0);
        }

        if let Some(acc) = out.hess.as_mut() {
            let cw = g.curvature_weight(r)?;
            if cw != 0.0 {
                acc.ger(cw, &v, &v, 1.0);
            }
            if !model.is_log_linear() && gw != 0.0 {
                let mut centered = -model.hess(theta, x);
                for (m, wi) in members.iter().zip(&w) {
                    centered.zip_apply(&model.hess(theta, *m), |s, h| *s += wi * h);
                }
                acc.zip_apply(&centered, |s, h| *s += gw * h);
            }
            if gw != 0.0 {
                for (gi, wi) in grads.iter().zip(&w) {
                    let dev = gi - &mean;
                    acc.ger(-gw * wi, &dev, &dev, 1.0);
                }
            }
        }
    }
    out.scale(1.0 / spec.component_count() as f64);
    Ok(out)
}

/// `m(x)` with the requested derivatives.
pub fn m_derivatives<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    x: Configuration,
    order: Order,
) -> Result<Derivatives> {
    check_shapes(spec, model, theta)?;
    check_config(model, &x)?;
    evaluate_case(spec, model, theta, x, order)
}

pub fn m_value<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    x: Configuration,
) -> Result<f64> {
    Ok(m_derivatives(spec, model, theta, x, Order::Value)?.value)
}

pub fn m_grad<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    x: Configuration,
) -> Result<DVector<f64>> {
    Ok(m_derivatives(spec, model, theta, x, Order::Gradient)?
        .grad
        .expect("gradient requested"))
}

pub fn m_hess<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    x: Configuration,
) -> Result<DMatrix<f64>> {
    Ok(m_derivatives(spec, model, theta, x, Order::Hessian)?
        .hess
        .expect("hessian requested"))
}

/// `sum_x weight(x) m(x)` over the listed states, reduced in list order.
fn weighted_sum<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    states: &[(Configuration, f64)],
    order: Order,
) -> Result<Derivatives> {
    let parts = Execution::for_states(states.len()).map_range(states.len(), |i| {
        evaluate_case(spec, model, theta, states[i].0, order)
    });
    let mut total = Derivatives::zero(model.param_count(), order);
    for ((_, w), part) in states.iter().zip(parts) {
        total.add_scaled(&part?, *w);
    }
    Ok(total)
}

/// Criterion `(1/N) sum_n m(x_n)` with the requested derivatives.
///
/// Cases are grouped by state and summed in state order, which is the
/// same quantity written as an expectation under the empirical
/// distribution.
pub fn criterion_derivatives<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    data: &Dataset,
    order: Order,
) -> Result<Derivatives> {
    check_shapes(spec, model, theta)?;
    if data.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: data.dim(),
        });
    }
    let n = data.len() as f64;
    let states: Vec<(Configuration, f64)> = data
        .counts()
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c > 0)
        .map(|(i, c)| (Configuration::new_unchecked(i, data.dim()), c as f64 / n))
        .collect();
    weighted_sum(spec, model, theta, &states, order)
}

pub fn criterion<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<f64> {
    Ok(criterion_derivatives(spec, model, theta, data, Order::Value)?.value)
}

pub fn criterion_grad<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<DVector<f64>> {
    Ok(criterion_derivatives(spec, model, theta, data, Order::Gradient)?
        .grad
        .expect("gradient requested"))
}

pub fn criterion_hess<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<DMatrix<f64>> {
    Ok(criterion_derivatives(spec, model, theta, data, Order::Hessian)?
        .hess
        .expect("hessian requested"))
}

/// `f*(theta) = sum_x P*(x) m(x)` with the requested derivatives.
pub fn population_derivatives<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    p_star: &ProbabilityTable,
    order: Order,
) -> Result<Derivatives> {
    check_shapes(spec, model, theta)?;
    if p_star.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: p_star.dim(),
        });
    }
    let sum: f64 = p_star.probs().iter().sum();
    if (sum - 1.0).abs() > TABLE_SUM_TOL {
        return Err(Error::NotNormalized { sum });
    }
    let states: Vec<(Configuration, f64)> = iter_space(p_star.dim())
        .zip(p_star.probs().iter().copied())
        .filter(|(_, p)| *p > 0.0)
        .collect();
    weighted_sum(spec, model, theta, &states, order)
}

/// `sum_x P*(x) dm(x) dm(x)^T`.
pub fn population_grad_outer<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    p_star: &ProbabilityTable,
) -> Result<DMatrix<f64>> {
    check_shapes(spec, model, theta)?;
    if p_star.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: p_star.dim(),
        });
    }
    let states: Vec<(Configuration, f64)> = p_star.support().collect();
    let grads = Execution::for_states(states.len()).map_range(states.len(), |i| {
        evaluate_case(spec, model, theta, states[i].0, Order::Gradient)
    });
    let p = model.param_count();
    let mut out = DMatrix::zeros(p, p);
    for ((_, w), d) in states.iter().zip(grads) {
        let g = d?.grad.expect("gradient requested");
        out.ger(*w, &g, &g, 1.0);
    }
    Ok(out)
}

pub fn population_criterion<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    p_star: &ProbabilityTable,
) -> Result<f64> {
    Ok(population_derivatives(spec, model, theta, p_star, Order::Value)?.value)
}

pub fn population_grad<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    p_star: &ProbabilityTable,
) -> Result<DVector<f64>> {
    Ok(population_derivatives(spec, model, theta, p_star, Order::Gradient)?
        .grad
        .expect("gradient requested"))
}

pub fn population_hess<M: Energy + ?Sized>(
    spec: &EstimatorSpec,
    model: &M,
    theta: &[f64],
    p_star: &ProbabilityTable,
) -> Result<DMatrix<f64>> {
    Ok(population_derivatives(spec, model, theta, p_star, Order::Hessian)?
        .hess
        .expect("hessian requested"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::{enumerate_space, one_flip_neighborhood, single_point_neighborhood};
    use crate::models::{exact_distribution, sample_dataset, EnergyModel};
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn cfg(bits: &[u8]) -> Configuration {
        Configuration::from_bits(bits).unwrap()
    }

    /// Constant-offset wrapper used to check partition-free behavior.
    struct Shifted<'a>(&'a EnergyModel, f64);

    impl Energy for Shifted<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn param_count(&self) -> usize {
            self.0.param_count()
        }
        fn is_log_linear(&self) -> bool {
            self.0.is_log_linear()
        }
        fn eval(&self, theta: &[f64], x: Configuration) -> f64 {
            self.0.eval(theta, x) + self.1
        }
        fn grad(&self, theta: &[f64], x: Configuration) -> DVector<f64> {
            self.0.grad(theta, x)
        }
        fn hess(&self, theta: &[f64], x: Configuration) -> DMatrix<f64> {
            self.0.hess(theta, x)
        }
    }

    #[test]
    fn transfer_definitions() {
        let r = 0.3;
        assert_relative_eq!(TransferFunction::Log.eval(r).unwrap(), r.ln());
        assert_relative_eq!(TransferFunction::RatioMatching.eval(r).unwrap(), -0.49);
        let odds = 0.3 / 0.7;
        assert_relative_eq!(
            TransferFunction::GeneralizedScoreMatching.eval(r).unwrap(),
            2.0 * odds - 1.0 / (odds * odds),
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_transfer_identities_are_exact() {
        for r in [1e-6, 0.1, 0.5, 0.77, 1.0] {
            assert_eq!(TransferFunction::Log.grad_weight(r).unwrap(), 1.0);
            assert_eq!(TransferFunction::Log.curvature_weight(r).unwrap(), 0.0);
            assert_relative_eq!(TransferFunction::Log.deriv1(r).unwrap() * r, 1.0, epsilon = 1e-15);
            assert_relative_eq!(
                TransferFunction::Log.deriv2(r).unwrap() * r * r,
                -1.0,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn transfer_derivatives_match_finite_differences() {
        let custom = TransferFunction::Custom(CustomTransfer {
            name: "cube",
            eval: |r| r * r * r,
            deriv1: |r| 3.0 * r * r,
            deriv2: |r| 6.0 * r,
        });
        let h = 1e-5;
        for g in [
            TransferFunction::Log,
            TransferFunction::RatioMatching,
            TransferFunction::GeneralizedScoreMatching,
            custom,
        ] {
            for i in 1..=99 {
                let r = i as f64 / 100.0;
                let h = h * r.min(1.0 - r);
                let fd1 = (g.eval(r + h).unwrap() - g.eval(r - h).unwrap()) / (2.0 * h);
                let fd2 = (g.deriv1(r + h).unwrap() - g.deriv1(r - h).unwrap()) / (2.0 * h);
                let d1 = g.deriv1(r).unwrap();
                let d2 = g.deriv2(r).unwrap();
                assert!((d1 - fd1).abs() <= 1e-6 * d1.abs().max(1.0), "{} g' at {r}", g.name());
                assert!((d2 - fd2).abs() <= 1e-6 * d2.abs().max(1.0), "{} g'' at {r}: {d2} vs {fd2}", g.name());
                let gw = g.grad_weight(r).unwrap();
                let cw = g.curvature_weight(r).unwrap();
                assert!((gw - d1 * r).abs() <= 1e-12 * gw.abs().max(1.0));
                assert!((cw - (d2 * r * r + d1 * r)).abs() <= 1e-10 * cw.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gsm_guard() {
        let g = TransferFunction::GeneralizedScoreMatching;
        assert!(matches!(g.eval(1.0), Err(Error::NumericDomain { .. })));
        assert!(matches!(g.deriv1(0.0), Err(Error::NumericDomain { .. })));
        // single-point neighborhoods give R = 1, which GSM rejects
        let spec = EstimatorSpec::new(
            "gsm-point",
            3,
            vec![g],
            NeighborhoodRule::SinglePoint,
        )
        .unwrap();
        let m = EnergyModel::third_order_bm();
        assert!(matches!(
            m_value(&spec, &m, &[0.0; 6], cfg(&[0, 0, 0])),
            Err(Error::NumericDomain { .. })
        ));
    }

    #[test]
    fn ratio_examples() {
        let m = EnergyModel::binary_mrf(2).unwrap();
        let theta = [0.0, 1.0, 0.0];
        let x = cfg(&[1, 1]);
        assert_eq!(ratio(&m, &theta, x, &single_point_neighborhood(x)).unwrap(), 1.0);
        let a = Neighborhood::new(vec![cfg(&[1, 1]), cfg(&[0, 1])]).unwrap();
        let e2 = 2f64.exp();
        assert_relative_eq!(ratio(&m, &theta, x, &a).unwrap(), e2 / (e2 + 1.0), epsilon = 1e-14);
        assert_relative_eq!(ratio(&m, &theta, x, &a).unwrap(), 0.880797, epsilon = 1e-6);

        let full = full_neighborhood(2).unwrap();
        assert_relative_eq!(ratio(&m, &[0.0; 3], x, &full).unwrap(), 0.25, epsilon = 1e-15);

        let outside = Neighborhood::new(vec![cfg(&[0, 0])]).unwrap();
        assert!(matches!(
            ratio(&m, &theta, x, &outside),
            Err(Error::NotInNeighborhood { .. })
        ));
    }

    #[test]
    fn ratio_expectation_examples() {
        let m = EnergyModel::third_order_bm();
        let theta = [0.4, -1.0, 0.3, 2.0, -0.5, 0.1];
        let x = cfg(&[1, 0, 0]);
        let a = full_neighborhood(3).unwrap();
        let v = DVector::from_vec(vec![1.5, -2.0]);
        let e = ratio_expectation(&m, &theta, x, &a, |_| v.clone()).unwrap();
        assert_relative_eq!(e, v, epsilon = 1e-12);

        let point = single_point_neighborhood(x);
        let e = ratio_expectation(&m, &theta, x, &point, |c| m.grad(&theta, c)).unwrap();
        assert_eq!(e, m.grad(&theta, x));

        let pair = one_flip_neighborhood(x, 1).unwrap();
        let zero = [0.0; 6];
        let e = ratio_expectation(&m, &zero, x, &pair, |c| m.grad(&zero, c)).unwrap();
        let mid = (m.grad(&zero, x) + m.grad(&zero, x.flip(1).unwrap())) * 0.5;
        assert_relative_eq!(e, mid, epsilon = 1e-15);
    }

    #[test]
    fn ratio_normalizes_and_matches_probability() {
        let m = EnergyModel::binary_mrf(3).unwrap();
        let theta = [0.3, -0.8, 1.2, 0.5, -0.1, 0.9];
        let dist = exact_distribution(&m, &theta).unwrap();
        let full = full_neighborhood(3).unwrap();
        let mut total = 0.0;
        for x in enumerate_space(3).unwrap() {
            let r = ratio(&m, &theta, x, &full).unwrap();
            assert_relative_eq!(r, dist.prob(&x), epsilon = 1e-12);
            total += r;
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        let a = Neighborhood::new(vec![cfg(&[0, 0, 1]), cfg(&[1, 1, 0]), cfg(&[0, 1, 0])]).unwrap();
        let s: f64 = a.members().iter().map(|x| ratio(&m, &theta, *x, &a).unwrap()).sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn preset_values_match_reduced_forms() {
        let m = EnergyModel::third_order_bm();
        let theta = [0.7, -1.3, 0.2, 1.9, -0.6, 0.4];
        let dist = exact_distribution(&m, &theta).unwrap();
        let (ml, pl, rm, gsm) = (
            EstimatorSpec::ml(3).unwrap(),
            EstimatorSpec::pl(3).unwrap(),
            EstimatorSpec::rm(3).unwrap(),
            EstimatorSpec::gsm(3).unwrap(),
        );
        for x in enumerate_space(3).unwrap() {
            assert_relative_eq!(
                m_value(&ml, &m, &theta, x).unwrap(),
                dist.prob(&x).ln(),
                epsilon = 1e-12
            );
            let conds: Vec<f64> = (0..3).map(|d| dist.conditional(x, d).unwrap()).collect();
            let pl_ref = conds.iter().map(|p| p.ln()).sum::<f64>() / 3.0;
            assert_relative_eq!(m_value(&pl, &m, &theta, x).unwrap(), pl_ref, epsilon = 1e-10);
            let rm_ref = -conds.iter().map(|p| (1.0 - p).powi(2)).sum::<f64>() / 3.0;
            assert_relative_eq!(m_value(&rm, &m, &theta, x).unwrap(), rm_ref, epsilon = 1e-10);
            let gsm_ref = -conds
                .iter()
                .map(|p| {
                    let odds = p / (1.0 - p);
                    odds.powi(-2) - 2.0 * odds
                })
                .sum::<f64>()
                / 3.0;
            assert_relative_eq!(
                m_value(&gsm, &m, &theta, x).unwrap(),
                gsm_ref,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn uniform_values() {
        let m = EnergyModel::third_order_bm();
        for x in enumerate_space(3).unwrap() {
            assert_relative_eq!(
                m_value(&EstimatorSpec::rm(3).unwrap(), &m, &[0.0; 6], x).unwrap(),
                -0.25,
                epsilon = 1e-15
            );
            assert_relative_eq!(
                m_value(&EstimatorSpec::pl(3).unwrap(), &m, &[0.0; 6], x).unwrap(),
                -std::f64::consts::LN_2,
                epsilon = 1e-15
            );
        }
        let u = ProbabilityTable::uniform(3).unwrap();
        let v = population_criterion(&EstimatorSpec::rm(3).unwrap(), &m, &[0.0; 6], &u).unwrap();
        assert_relative_eq!(v, -0.25, epsilon = 1e-15);
    }

    /// Ratio matching written with the extra sum over both values of the
    /// flipped bit and the empirical conditionals; per case it reduces to
    /// the one-term form up to the factor 2 and a data-only constant.
    #[test]
    fn ratio_matching_unreduced_form() {
        let m = EnergyModel::third_order_bm();
        let spec = EstimatorSpec::rm(3).unwrap();
        let data = sample_dataset(&m, &[0.5, -0.2, 0.9, -1.1, 0.3, 0.0], 300, 5).unwrap();
        let pn = data.empirical_table();
        let unreduced = |theta: &[f64]| {
            let dist = exact_distribution(&m, theta).unwrap();
            let mut total = 0.0;
            for x in data.cases() {
                for d in 0..3 {
                    let y = x.flip(d).unwrap();
                    let pn_x = pn.prob(x) / (pn.prob(x) + pn.prob(&y));
                    let pt_x = dist.conditional(*x, d).unwrap();
                    // xi = x_d and xi = 1 - x_d
                    total += (pn_x - pt_x).powi(2) + ((1.0 - pn_x) - (1.0 - pt_x)).powi(2);
                }
            }
            -total / (3.0 * data.len() as f64)
        };
        let reduced = |theta: &[f64]| criterion(&spec, &m, theta, &data).unwrap();
        // The two forms differ by 2x plus a term that does not depend on theta.
        let t1 = [0.5, -0.2, 0.9, -1.1, 0.3, 0.0];
        let t2 = [-0.4, 1.0, 0.1, 0.6, -0.9, 1.3];
        let lhs = unreduced(&t1) - unreduced(&t2);
        let rhs = 2.0 * (reduced(&t1) - reduced(&t2));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    fn fd_grad<F: Fn(&[f64]) -> f64>(f: F, theta: &[f64]) -> DVector<f64> {
        let h = 1e-5;
        DVector::from_iterator(
            theta.len(),
            (0..theta.len()).map(|i| {
                let mut tp = theta.to_vec();
                let mut tm = theta.to_vec();
                tp[i] += h;
                tm[i] -= h;
                (f(&tp) - f(&tm)) / (2.0 * h)
            }),
        )
    }

    fn rel_close(a: &[f64], b: &[f64], rel: f64) -> bool {
        let scale = a.iter().chain(b).fold(1e-3f64, |m, v| m.max(v.abs()));
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * scale)
    }

    #[test]
    fn criterion_derivatives_match_finite_differences() {
        let m = EnergyModel::binary_mrf(3).unwrap();
        let theta = [0.2, -0.5, 0.7, 0.1, 0.4, -0.3];
        let data = sample_dataset(&m, &theta, 500, 9).unwrap();
        for kind in EstimatorKind::ALL {
            let spec = EstimatorSpec::preset(kind, 3).unwrap();
            let g = criterion_grad(&spec, &m, &theta, &data).unwrap();
            let fd = fd_grad(|t| criterion(&spec, &m, t, &data).unwrap(), &theta);
            assert!(rel_close(g.as_slice(), fd.as_slice(), 1e-6), "{kind} grad");
            let h = criterion_hess(&spec, &m, &theta, &data).unwrap();
            for i in 0..6 {
                let fdi = fd_grad(|t| criterion_grad(&spec, &m, t, &data).unwrap()[i], &theta);
                assert!(rel_close(h.row(i).transpose().as_slice(), fdi.as_slice(), 1e-6), "{kind} hess");
            }
        }
    }

    #[test]
    fn criterion_properties() {
        let m = EnergyModel::third_order_bm();
        let theta = [0.3, 0.2, -0.4, 0.8, -0.1, 0.5];
        let data = sample_dataset(&m, &theta, 200, 1).unwrap();
        let single = Dataset::new(3, vec![cfg(&[1, 0, 1])]).unwrap();
        let dist = exact_distribution(&m, &theta).unwrap();
        for kind in EstimatorKind::ALL {
            let spec = EstimatorSpec::preset(kind, 3).unwrap();
            assert_eq!(
                criterion(&spec, &m, &theta, &single).unwrap(),
                m_value(&spec, &m, &theta, cfg(&[1, 0, 1])).unwrap()
            );
            assert_eq!(
                criterion_grad(&spec, &m, &theta, &single).unwrap(),
                m_grad(&spec, &m, &theta, cfg(&[1, 0, 1])).unwrap()
            );
            assert_eq!(
                criterion_hess(&spec, &m, &theta, &single).unwrap(),
                m_hess(&spec, &m, &theta, cfg(&[1, 0, 1])).unwrap()
            );
            let doubled = data.concat(&data).unwrap();
            assert_relative_eq!(
                criterion(&spec, &m, &theta, &doubled).unwrap(),
                criterion(&spec, &m, &theta, &data).unwrap(),
                epsilon = 1e-14
            );
            let pn = data.empirical_table();
            assert_relative_eq!(
                population_criterion(&spec, &m, &theta, &pn).unwrap(),
                criterion(&spec, &m, &theta, &data).unwrap(),
                epsilon = 1e-12
            );
        }
        let ml = EstimatorSpec::ml(3).unwrap();
        let mean_ll = data.cases().iter().map(|x| dist.prob(x).ln()).sum::<f64>() / data.len() as f64;
        assert_relative_eq!(criterion(&ml, &m, &theta, &data).unwrap(), mean_ll, epsilon = 1e-12);
    }

    #[test]
    fn single_point_neighborhoods_are_flat() {
        let spec = EstimatorSpec::new(
            "point",
            3,
            vec![TransferFunction::RatioMatching; 2],
            NeighborhoodRule::SinglePoint,
        )
        .unwrap();
        let m = EnergyModel::binary_rbm(3, 2).unwrap();
        let theta = [0.3, -0.2, 0.5, 0.1, -0.7, 0.4, 0.2, -0.3];
        for x in enumerate_space(3).unwrap() {
            assert_eq!(m_value(&spec, &m, &theta, x).unwrap(), 0.0);
            assert!(m_grad(&spec, &m, &theta, x).unwrap().iter().all(|v| *v == 0.0));
            assert!(m_hess(&spec, &m, &theta, x).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn custom_neighborhoods_must_contain_x() {
        let rule = NeighborhoodRule::Custom(Arc::new(|_, x: Configuration| {
            Neighborhood::new(vec![x.flip(0)?])
        }));
        let spec = EstimatorSpec::new("bad", 2, vec![TransferFunction::Log], rule).unwrap();
        let m = EnergyModel::binary_mrf(2).unwrap();
        assert!(matches!(
            m_value(&spec, &m, &[0.0; 3], cfg(&[0, 1])),
            Err(Error::NotInNeighborhood { .. })
        ));
    }

    #[test]
    fn custom_pair_neighborhood_matches_conditional_structure() {
        // component 0: flip bits 0 and 1 together
        let rule = NeighborhoodRule::Custom(Arc::new(|_, x: Configuration| {
            Neighborhood::new(vec![x, x.flip(0)?.flip(1)?])
        }));
        let spec = EstimatorSpec::new("pair", 3, vec![TransferFunction::Log], rule).unwrap();
        let m = EnergyModel::third_order_bm();
        let theta = [0.3, -0.9, 0.4, 1.1, 0.0, -0.6];
        let x = cfg(&[1, 0, 1]);
        let dist = exact_distribution(&m, &theta).unwrap();
        let y = cfg(&[0, 1, 1]);
        let expected = (dist.prob(&x) / (dist.prob(&x) + dist.prob(&y))).ln();
        assert_relative_eq!(m_value(&spec, &m, &theta, x).unwrap(), expected, epsilon = 1e-12);
        let g = m_grad(&spec, &m, &theta, x).unwrap();
        let fd = fd_grad(|t| m_value(&spec, &m, t, x).unwrap(), &theta);
        assert!(rel_close(g.as_slice(), fd.as_slice(), 1e-6));
    }

    #[test]
    fn log_transfer_drops_first_hessian_line() {
        // Assemble with the first line included explicitly (using g''R^2 + g'R
        // evaluated from g' and g'') and compare against the production path.
        let m = EnergyModel::binary_rbm(3, 2).unwrap();
        let theta = [0.4, -0.3, 0.8, 0.2, -0.5, 0.6, -0.1, 0.3];
        let spec = EstimatorSpec::pl(3).unwrap();
        let g = TransferFunction::Log;
        for x in enumerate_space(3).unwrap() {
            let production = m_hess(&spec, &m, &theta, x).unwrap();
            let mut explicit = DMatrix::zeros(8, 8);
            for d in 0..3 {
                let members = [x, x.flip(d).unwrap()];
                let w = ratio_weights(&m, &theta, &members);
                let r = w[0];
                let grads: Vec<_> = members.iter().map(|c| m.grad(&theta, *c)).collect();
                let mean = &grads[0] * w[0] + &grads[1] * w[1];
                let v = &mean - &grads[0];
                let line1 = (g.deriv2(r).unwrap() * r * r + g.deriv1(r).unwrap() * r) * &v * v.transpose();
                let line2 = (m.hess(&theta, members[0]) * w[0] + m.hess(&theta, members[1]) * w[1]
                    - m.hess(&theta, x))
                    * (g.deriv1(r).unwrap() * r);
                let mut cov = DMatrix::zeros(8, 8);
                for (gi, wi) in grads.iter().zip(&w) {
                    let dev = gi - &mean;
                    cov += &dev * dev.transpose() * *wi;
                }
                explicit += line1 + line2 - cov * (g.deriv1(r).unwrap() * r);
            }
            explicit /= 3.0;
            assert!(rel_close(production.as_slice(), explicit.as_slice(), 1e-12));
        }
    }

    #[test]
    fn population_stationary_when_well_specified() {
        let m = EnergyModel::third_order_bm();
        let theta = [1.2, -0.7, 0.3, 0.9, -1.5, 0.2];
        let dist = exact_distribution(&m, &theta).unwrap();
        for kind in [EstimatorKind::Ml, EstimatorKind::Pl, EstimatorKind::Rm, EstimatorKind::Gsm] {
            let spec = EstimatorSpec::preset(kind, 3).unwrap();
            let g = population_grad(&spec, &m, &theta, dist.table()).unwrap();
            assert!(g.amax() < 1e-9, "{kind}: {}", g.amax());
        }
    }

    #[test]
    fn population_input_validation() {
        let m = EnergyModel::third_order_bm();
        let spec = EstimatorSpec::pl(3).unwrap();
        let wrong_dim = ProbabilityTable::uniform(2).unwrap();
        assert!(population_criterion(&spec, &m, &[0.0; 6], &wrong_dim).is_err());
        let spec2 = EstimatorSpec::pl(2).unwrap();
        let u = ProbabilityTable::uniform(3).unwrap();
        assert!(population_criterion(&spec2, &m, &[0.0; 6], &u).is_err());
    }

    #[test]
    fn preset_settings() {
        assert_eq!(EstimatorSpec::ml(4).unwrap().component_count(), 1);
        for k in [EstimatorKind::Pl, EstimatorKind::Rm, EstimatorKind::Gsm] {
            let s = EstimatorSpec::preset(k, 4).unwrap();
            assert_eq!(s.component_count(), 4);
            let x = Configuration::from_index(5, 4).unwrap();
            for c in 0..4 {
                let n = s.neighborhood(c, x).unwrap();
                assert_eq!(n.members(), &[x, x.flip(c).unwrap()]);
            }
        }
        let ml = EstimatorSpec::ml(3).unwrap();
        assert_eq!(ml.neighborhood(0, cfg(&[1, 1, 0])).unwrap().len(), 8);
        assert_eq!("RM".parse::<EstimatorKind>().unwrap(), EstimatorKind::Rm);
        assert!("ce".parse::<EstimatorKind>().is_err());
    }

    fn any_case() -> impl Strategy<Value = (EstimatorKind, EnergyModel, Vec<f64>, usize)> {
        let model = prop_oneof![
            Just(EnergyModel::third_order_bm()),
            (2usize..=3).prop_map(|d| EnergyModel::binary_mrf(d).unwrap()),
            (2usize..=3, 1usize..=2).prop_map(|(d, k)| EnergyModel::binary_rbm(d, k).unwrap()),
        ];
        let kind = prop::sample::select(EstimatorKind::ALL.to_vec());
        (kind, model).prop_flat_map(|(k, m)| {
            let p = m.param_count();
            let n = 1usize << m.dim();
            (Just(k), Just(m), proptest::collection::vec(-1.5f64..1.5, p), 0..n)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn m_derivatives_match_finite_differences((kind, m, theta, i) in any_case()) {
            let spec = EstimatorSpec::preset(kind, m.dim()).unwrap();
            let x = Configuration::from_index(i, m.dim()).unwrap();
            let g = m_grad(&spec, &m, &theta, x).unwrap();
            let fd = fd_grad(|t| m_value(&spec, &m, t, x).unwrap(), &theta);
            prop_assert!(rel_close(g.as_slice(), fd.as_slice(), 1e-6));
            let h = m_hess(&spec, &m, &theta, x).unwrap();
            prop_assert!(rel_close(h.as_slice(), h.transpose().as_slice(), 1e-12));
            for j in 0..theta.len() {
                let fdj = fd_grad(|t| m_grad(&spec, &m, t, x).unwrap()[j], &theta);
                prop_assert!(rel_close(h.row(j).transpose().as_slice(), fdj.as_slice(), 1e-6));
            }
        }

        #[test]
        fn energy_shift_invariance((kind, m, theta, i) in any_case(), shift in -50.0f64..50.0) {
            let spec = EstimatorSpec::preset(kind, m.dim()).unwrap();
            let x = Configuration::from_index(i, m.dim()).unwrap();
            let shifted = Shifted(&m, shift);
            let a = m_derivatives(&spec, &m, &theta, x, Order::Gradient).unwrap();
            let b = m_derivatives(&spec, &shifted, &theta, x, Order::Gradient).unwrap();
            prop_assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs().max(1.0));
            prop_assert!(rel_close(a.grad.unwrap().as_slice(), b.grad.unwrap().as_slice(), 1e-12));
        }

        #[test]
        fn pl_hessian_negative_semidefinite_for_log_linear(
            theta in proptest::collection::vec(-2.0f64..2.0, 6),
            seed in any::<u64>(),
        ) {
            let m = EnergyModel::third_order_bm();
            let spec = EstimatorSpec::pl(3).unwrap();
            let data = sample_dataset(&m, &[0.0; 6], 40, seed).unwrap();
            let h = criterion_hess(&spec, &m, &theta, &data).unwrap();
            let eig = SymmetricEigen::new(h.clone()).eigenvalues;
            let scale = eig.amax().max(1e-300);
            prop_assert!(eig.iter().all(|l| *l <= 1e-12 * scale));
        }
    }
}
