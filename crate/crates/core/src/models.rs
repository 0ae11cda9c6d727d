//! Energy models, exact normalized distributions and exact sampling.
//!
//! Probabilities follow `P(x) = exp(-E(x)) / Z`. Three model families are
//! provided:
//!
//! * `ThirdOrderBm`: a six-parameter log-linear model on three bits whose
//!   features are the indicator products of `(0,0,0)`, `(1,0,0)`, `(0,1,0)`,
//!   `(0,0,1)`, `(1,1,0)` and `(1,0,1)`, with `E = -sum_i W_i f_i(x)`.
//! * `BinaryMrf`: `E = -x^T W x` with symmetric `W`, parameterized by the
//!   upper triangle (diagonal included) in row-major order.
//! * `BinaryRbm`: the free energy `E = -sum_k log(1 + exp(x^T W_k + c_k))`
//!   of an RBM with `K` hidden units summed out; parameters are laid out as
//!   `(W_1.., c_1, W_2.., c_2, ..)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::configspace::{check_dimension, iter_space, space_size, Configuration};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rng;

/// Parameter values; every entry finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameter vector".into(),
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Vec<f64> {
        p.0
    }
}

/// An energy function with analytic parameter derivatives.
///
/// Implementations may assume `theta.len() == param_count()` and
/// `x.dim() == dim()`; the checked entry points in this module validate
/// those before calling in.
pub trait Energy: Sync {
    fn dim(&self) -> usize;
    fn param_count(&self) -> usize;
    /// True when the energy is linear in the parameters.
    fn is_log_linear(&self) -> bool;
    /// False when distinct parameter vectors give the same distribution.
    fn is_identifiable(&self) -> bool {
        true
    }
    fn eval(&self, theta: &[f64], x: Configuration) -> f64;
    fn grad(&self, theta: &[f64], x: Configuration) -> DVector<f64>;
    fn hess(&self, theta: &[f64], x: Configuration) -> DMatrix<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ThirdOrderBm,
    BinaryMrf,
    BinaryRbm,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EnergyModel {
    ThirdOrderBm,
    BinaryMrf { dim: usize },
    BinaryRbm { dim: usize, filters: usize },
}

impl EnergyModel {
    pub fn third_order_bm() -> Self {
        EnergyModel::ThirdOrderBm
    }

    pub fn binary_mrf(dim: usize) -> Result<Self> {
        check_dimension(dim)?;
        Ok(EnergyModel::BinaryMrf { dim })
    }

    pub fn binary_rbm(dim: usize, filters: usize) -> Result<Self> {
        check_dimension(dim)?;
        if filters == 0 {
            return Err(Error::InvalidOption("RBM needs at least one filter".into()));
        }
        Ok(EnergyModel::BinaryRbm { dim, filters })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            EnergyModel::ThirdOrderBm => ModelKind::ThirdOrderBm,
            EnergyModel::BinaryMrf { .. } => ModelKind::BinaryMrf,
            EnergyModel::BinaryRbm { .. } => ModelKind::BinaryRbm,
        }
    }

    /// Feature vector of a log-linear model (`E = -theta . features`).
    fn features(&self, x: Configuration) -> Vec<f64> {
        match *self {
            EnergyModel::ThirdOrderBm => third_order_features(x).to_vec(),
            EnergyModel::BinaryMrf { dim } => {
                let mut f = Vec::with_capacity(dim * (dim + 1) / 2);
                for i in 0..dim {
                    for j in i..dim {
                        let v = x.xf(i) * x.xf(j);
                        f.push(if i == j { v } else { 2.0 * v });
                    }
                }
                f
            }
            EnergyModel::BinaryRbm { .. } => unreachable!("RBM is not log-linear"),
        }
    }
}

fn third_order_features(x: Configuration) -> [f64; 6] {
    let (x1, x2, x3) = (x.xf(0), x.xf(1), x.xf(2));
    let (n1, n2, n3) = (1.0 - x1, 1.0 - x2, 1.0 - x3);
    [
        n1 * n2 * n3,
        x1 * n2 * n3,
        n1 * x2 * n3,
        n1 * n2 * x3,
        x1 * x2 * n3,
        x1 * n2 * x3,
    ]
}

/// `log(1 + exp(a))` without overflow.
pub(crate) fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

impl EnergyModel {
    fn rbm_activation(dim: usize, theta: &[f64], k: usize, x: Configuration) -> f64 {
        let base = k * (dim + 1);
        let mut a = theta[base + dim];
        for d in 0..dim {
            a += theta[base + d] * x.xf(d);
        }
        a
    }
}

impl Energy for EnergyModel {
    fn dim(&self) -> usize {
        match *self {
            EnergyModel::ThirdOrderBm => 3,
            EnergyModel::BinaryMrf { dim } | EnergyModel::BinaryRbm { dim, .. } => dim,
        }
    }

    fn param_count(&self) -> usize {
        match *self {
            EnergyModel::ThirdOrderBm => 6,
            EnergyModel::BinaryMrf { dim } => dim * (dim + 1) / 2,
            EnergyModel::BinaryRbm { dim, filters } => filters * (dim + 1),
        }
    }

    fn is_log_linear(&self) -> bool {
        !matches!(self, EnergyModel::BinaryRbm { .. })
    }

    /// Permuting RBM filters leaves the distribution unchanged.
    fn is_identifiable(&self) -> bool {
        !matches!(self, EnergyModel::BinaryRbm { .. })
    }

    fn eval(&self, theta: &[f64], x: Configuration) -> f64 {
        match *self {
            EnergyModel::BinaryRbm { dim, filters } => -(0..filters)
                .map(|k| softplus(Self::rbm_activation(dim, theta, k, x)))
                .sum::<f64>(),
            _ => -self
                .features(x)
                .iter()
                .zip(theta)
                .map(|(f, t)| f * t)
                .sum::<f64>(),
        }
    }

    fn grad(&self, theta: &[f64], x: Configuration) -> DVector<f64> {
        match *self {
            EnergyModel::BinaryRbm { dim, filters } => {
                let mut g = DVector::zeros(self.param_count());
                for k in 0..filters {
                    let s = sigmoid(Self::rbm_activation(dim, theta, k, x));
                    let base = k * (dim + 1);
                    for d in 0..dim {
                        g[base + d] = -s * x.xf(d);
                    }
                    g[base + dim] = -s;
                }
                g
            }
            _ => DVector::from_iterator(self.param_count(), self.features(x).into_iter().map(|f| -f)),
        }
    }

    fn hess(&self, theta: &[f64], x: Configuration) -> DMatrix<f64> {
        let p = self.param_count();
        let mut h = DMatrix::zeros(p, p);
        if let EnergyModel::BinaryRbm { dim, filters } = *self {
            for k in 0..filters {
                let s = sigmoid(Self::rbm_activation(dim, theta, k, x));
                let w = -s * (1.0 - s);
                let base = k * (dim + 1);
                let z = |i: usize| if i < dim { x.xf(i) } else { 1.0 };
                for i in 0..=dim {
                    for j in 0..=dim {
                        h[(base + i, base + j)] = w * z(i) * z(j);
                    }
                }
            }
        }
        h
    }
}

pub(crate) fn check_theta<M: Energy + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.param_count() {
        return Err(Error::ParameterLength {
            expected: model.param_count(),
            got: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "parameter vector".into(),
        });
    }
    Ok(())
}

pub(crate) fn check_config<M: Energy + ?Sized>(model: &M, x: &Configuration) -> Result<()> {
    if x.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x.dim(),
        });
    }
    Ok(())
}

/// `E_theta(x)`.
pub fn energy<M: Energy + ?Sized>(model: &M, theta: &[f64], x: Configuration) -> Result<f64> {
    check_theta(model, theta)?;
    check_config(model, &x)?;
    Ok(model.eval(theta, x))
}

/// Gradient of the energy with respect to the parameters.
pub fn energy_grad<M: Energy + ?Sized>(
    model: &M,
    theta: &[f64],
    x: Configuration,
) -> Result<DVector<f64>> {
    check_theta(model, theta)?;
    check_config(model, &x)?;
    Ok(model.grad(theta, x))
}

/// Hessian of the energy with respect to the parameters.
pub fn energy_hess<M: Energy + ?Sized>(
    model: &M,
    theta: &[f64],
    x: Configuration,
) -> Result<DMatrix<f64>> {
    check_theta(model, theta)?;
    check_config(model, &x)?;
    Ok(model.hess(theta, x))
}

/// A probability table over `{0,1}^D` in index order. Entries are
/// non-negative and sum to one within `1e-9`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityTable {
    dim: usize,
    probs: Vec<f64>,
}

pub(crate) const TABLE_SUM_TOL: f64 = 1e-9;

impl ProbabilityTable {
    pub fn new(dim: usize, probs: Vec<f64>) -> Result<Self> {
        check_dimension(dim)?;
        if probs.len() != space_size(dim) {
            return Err(Error::DimensionMismatch {
                expected: space_size(dim),
                got: probs.len(),
            });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::NonFinite {
                what: "probability table".into(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > TABLE_SUM_TOL {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self { dim, probs })
    }

    pub fn uniform(dim: usize) -> Result<Self> {
        check_dimension(dim)?;
        let n = space_size(dim);
        Ok(Self {
            dim,
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, x: &Configuration) -> f64 {
        self.probs[x.index()]
    }

    /// `(configuration, probability)` pairs with non-zero mass.
    pub fn support(&self) -> impl Iterator<Item = (Configuration, f64)> + '_ {
        iter_space(self.dim)
            .zip(self.probs.iter().copied())
            .filter(|(_, p)| *p > 0.0)
    }
}

/// The normalized distribution of a model at one parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    table: ProbabilityTable,
    log_partition: f64,
}

impl ExactDistribution {
    pub fn table(&self) -> &ProbabilityTable {
        &self.table
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.table.probs
    }

    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }

    pub fn prob(&self, x: &Configuration) -> f64 {
        self.table.probs[x.index()]
    }

    /// `P(x_d | x_{-d}) = P(x) / (P(x) + P(flip(x, d)))`.
    pub fn conditional(&self, x: Configuration, d: usize) -> Result<f64> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        let y = x.flip(d)?;
        Ok(self.conditional_unchecked(x, y))
    }

    pub(crate) fn conditional_unchecked(&self, x: Configuration, flipped: Configuration) -> f64 {
        let p = self.prob(&x);
        p / (p + self.prob(&flipped))
    }
}

impl AsRef<ProbabilityTable> for ExactDistribution {
    fn as_ref(&self) -> &ProbabilityTable {
        &self.table
    }
}

impl AsRef<ProbabilityTable> for ProbabilityTable {
    fn as_ref(&self) -> &ProbabilityTable {
        self
    }
}

/// Exact `P_theta` by enumeration, normalized with a max-shifted
/// log-sum-exp.
pub fn exact_distribution<M: Energy + ?Sized>(model: &M, theta: &[f64]) -> Result<ExactDistribution> {
    check_dimension(model.dim())?;
    check_theta(model, theta)?;
    let n = space_size(model.dim());
    let dim = model.dim();
    let neg_energy = Execution::for_states(n)
        .map_range(n, |i| -model.eval(theta, Configuration::new_unchecked(i, dim)));
    let max = neg_energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = neg_energy.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(ExactDistribution {
        table: ProbabilityTable { dim, probs },
        log_partition: max + total.ln(),
    })
}

/// `N` cases drawn independently from a table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    dim: usize,
    cases: Vec<Configuration>,
}

impl Dataset {
    pub fn new(dim: usize, cases: Vec<Configuration>) -> Result<Self> {
        check_dimension(dim)?;
        if cases.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(bad) = cases.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(Self { dim, cases })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cases(&self) -> &[Configuration] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Occurrence count of every state, in index order.
    pub fn counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; space_size(self.dim)];
        for c in &self.cases {
            counts[c.index()] += 1;
        }
        counts
    }

    /// The empirical distribution `P_N`.
    pub fn empirical_table(&self) -> ProbabilityTable {
        let n = self.cases.len() as f64;
        ProbabilityTable {
            dim: self.dim,
            probs: self.counts().into_iter().map(|c| c as f64 / n).collect(),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut cases = self.cases.clone();
        cases.extend_from_slice(&other.cases);
        Ok(Dataset { dim: self.dim, cases })
    }
}

/// Inverse-CDF sampler over a probability table.
#[derive(Clone, Debug)]
pub struct TableSampler {
    dim: usize,
    cumulative: Vec<f64>,
}

impl TableSampler {
    pub fn new(table: &ProbabilityTable) -> Self {
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = table
            .probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // Force the last state carrying mass to absorb rounding in the sum.
        if let Some(last) = table.probs.iter().rposition(|p| *p > 0.0) {
            for c in &mut cumulative[last..] {
                *c = f64::INFINITY;
            }
        }
        Self {
            dim: table.dim,
            cumulative,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        Configuration::new_unchecked(i, self.dim)
    }

    pub fn draw_dataset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        let cases = (0..n).map(|_| self.draw(rng)).collect();
        Dataset::new(self.dim, cases)
    }
}

/// `n` exact draws from `P_theta`, reproducible for a given seed.
pub fn sample_dataset<M: Energy + ?Sized>(
    model: &M,
    theta: &[f64],
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let dist = exact_distribution(model, theta)?;
    let mut rng = rng::seeded(seed);
    TableSampler::new(dist.table()).draw_dataset(n, &mut rng)
}
