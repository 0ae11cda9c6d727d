//! The binary sample space `{0,1}^D`.
//!
//! Configurations are identified with their little-endian index: bit `d`
//! contributes `bits[d] * 2^d`. Every table in the crate (probabilities,
//! counts, file formats) is laid out in this order.

use std::fmt;

use crate::error::{Error, Result};

/// Largest supported dimension; `2^20` states keep every exact table small.
pub const MAX_DIMENSION: usize = 20;

pub(crate) fn check_dimension(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIMENSION {
        return Err(Error::DimensionOutOfRange {
            dim,
            max: MAX_DIMENSION,
        });
    }
    Ok(())
}

/// Number of states in `{0,1}^dim`.
pub fn space_size(dim: usize) -> usize {
    1usize << dim
}

/// A point of `{0,1}^D`, stored as its index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    dim: u8,
    index: u32,
}

impl Configuration {
    pub fn from_index(index: usize, dim: usize) -> Result<Self> {
        check_dimension(dim)?;
        if index >= space_size(dim) {
            return Err(Error::IndexOutOfRange { index, dim });
        }
        Ok(Self::new_unchecked(index, dim))
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        check_dimension(bits.len())?;
        let mut index = 0usize;
        for (d, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => index |= 1 << d,
                other => {
                    return Err(Error::Parse(format!(
                        "bit {d} has value {other}, expected 0 or 1"
                    )))
                }
            }
        }
        Ok(Self::new_unchecked(index, bits.len()))
    }

    pub(crate) fn new_unchecked(index: usize, dim: usize) -> Self {
        debug_assert!((1..=MAX_DIMENSION).contains(&dim) && index < space_size(dim));
        Self {
            dim: dim as u8,
            index: index as u32,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn index(&self) -> usize {
        self.index as usize
    }

    /// Value of bit `d`. Panics if `d >= dim`.
    #[inline]
    pub fn bit(&self, d: usize) -> u8 {
        assert!(d < self.dim(), "bit {d} out of range for dimension {}", self.dim);
        ((self.index >> d) & 1) as u8
    }

    /// Bit `d` as a float, convenient for energy evaluation.
    #[inline]
    pub(crate) fn xf(&self, d: usize) -> f64 {
        ((self.index >> d) & 1) as f64
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.dim()).map(|d| self.bit(d)).collect()
    }

    /// The configuration with bit `d` negated.
    pub fn flip(&self, d: usize) -> Result<Self> {
        if d >= self.dim() {
            return Err(Error::IndexOutOfRange {
                index: d,
                dim: self.dim(),
            });
        }
        Ok(self.flip_unchecked(d))
    }

    #[inline]
    pub(crate) fn flip_unchecked(&self, d: usize) -> Self {
        Self {
            dim: self.dim,
            index: self.index ^ (1 << d),
        }
    }

    pub fn hamming(&self, other: &Configuration) -> u32 {
        (self.index ^ other.index).count_ones()
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for d in 0..self.dim() {
            if d > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", self.bit(d))?;
        }
        write!(f, ")")
    }
}

/// All `2^dim` configurations in index order.
pub fn enumerate_space(dim: usize) -> Result<Vec<Configuration>> {
    check_dimension(dim)?;
    Ok(iter_space(dim).collect())
}

pub(crate) fn iter_space(dim: usize) -> impl Iterator<Item = Configuration> + Clone {
    (0..space_size(dim)).map(move |i| Configuration::new_unchecked(i, dim))
}

/// A non-empty set of distinct configurations of one dimension, kept in
/// insertion order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhood {
    dim: usize,
    members: Vec<Configuration>,
}

impl Neighborhood {
    pub fn new(members: Vec<Configuration>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidNeighborhood("empty member list".into()))?;
        let dim = first.dim();
        let mut seen = vec![false; space_size(dim)];
        for m in &members {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.dim(),
                });
            }
            if std::mem::replace(&mut seen[m.index()], true) {
                return Err(Error::InvalidNeighborhood(format!(
                    "duplicate member {m:?}"
                )));
            }
        }
        Ok(Self { dim, members })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn members(&self) -> &[Configuration] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, x: &Configuration) -> bool {
        self.position(x).is_some()
    }

    pub fn position(&self, x: &Configuration) -> Option<usize> {
        self.members.iter().position(|m| m == x)
    }
}

/// `{x, flip(x, d)}` with `x` first.
pub fn one_flip_neighborhood(x: Configuration, d: usize) -> Result<Neighborhood> {
    let y = x.flip(d)?;
    Ok(Neighborhood {
        dim: x.dim(),
        members: vec![x, y],
    })
}

/// The whole space as a single neighborhood.
pub fn full_neighborhood(dim: usize) -> Result<Neighborhood> {
    Ok(Neighborhood {
        dim,
        members: enumerate_space(dim)?,
    })
}

/// `{x}`; makes every ratio identically one.
pub fn single_point_neighborhood(x: Configuration) -> Neighborhood {
    Neighborhood {
        dim: x.dim(),
        members: vec![x],
    }
}
