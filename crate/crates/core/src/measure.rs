//! Finite atomic measures on R^d and the transport distance with cemetery padding.
//!
//! A measure is stored as merged atoms: each distinct position (compared
//! bit-for-bit) carries a positive integer multiplicity.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::min_cost_assignment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unsupported transport order p = {0} (only 1 and 2)")]
    UnsupportedOrder(u32),
    #[error("padding mass {requested} is below the larger total mass {required}")]
    PaddingTooSmall { requested: u64, required: u64 },
    #[error("atom multiplicity must be positive")]
    ZeroMultiplicity,
}

/// Sum of unit point masses, with equal positions merged.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AtomicMeasure {
    dim: usize,
    positions: Vec<f64>,
    multiplicities: Vec<u64>,
}

/// One atom as it appears in the JSON form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: Vec<f64>,
    pub multiplicity: u64,
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

fn bit_equal(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

impl AtomicMeasure {
    /// The zero measure in dimension `dim`.
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            positions: Vec::new(),
            multiplicities: Vec::new(),
        }
    }

    /// Builds the measure from weighted atoms, merging bit-equal positions.
    pub fn from_atoms<'a, I>(dim: usize, atoms: I) -> Result<Self, MeasureError>
    where
        I: IntoIterator<Item = (&'a [f64], u64)>,
    {
        let mut out = Self::zero(dim);
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        for (x, m) in atoms {
            if x.len() != dim {
                return Err(MeasureError::DimensionMismatch {
                    expected: dim,
                    found: x.len(),
                });
            }
            if m == 0 {
                return Err(MeasureError::ZeroMultiplicity);
            }
            out.push_merged(x, m, &mut index);
        }
        Ok(out)
    }

    fn push_merged(&mut self, x: &[f64], m: u64, index: &mut HashMap<Vec<u64>, usize>) {
        // linear scan below the threshold, hashed lookup above it
        const SCAN_LIMIT: usize = 16;
        let found = if index.is_empty() {
            (0..self.num_atoms()).find(|&i| bit_equal(self.atom_position(i), x))
        } else {
            index.get(&key(x)).copied()
        };
        if let Some(i) = found {
            self.multiplicities[i] += m;
            return;
        }
        self.positions.extend_from_slice(x);
        self.multiplicities.push(m);
        let n = self.num_atoms();
        if !index.is_empty() {
            index.insert(key(x), n - 1);
        } else if n > SCAN_LIMIT {
            for i in 0..n {
                index.insert(key(self.atom_position(i)), i);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of distinct atoms.
    pub fn num_atoms(&self) -> usize {
        self.multiplicities.len()
    }

    /// Total mass <1, λ>.
    pub fn mass(&self) -> u64 {
        self.multiplicities.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.multiplicities.is_empty()
    }

    fn atom_position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], u64)> + '_ {
        (0..self.num_atoms()).map(move |i| (self.atom_position(i), self.multiplicities[i]))
    }

    /// Positions with multiplicities expanded into unit atoms.
    pub fn unit_atoms(&self) -> Vec<&[f64]> {
        self.atoms()
            .flat_map(|(x, m)| std::iter::repeat_n(x, m as usize))
            .collect()
    }

    /// <φ, λ> = Σ multiplicity · φ(position).
    pub fn integrate<F>(&self, phi: F) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        self.atoms().map(|(x, m)| m as f64 * phi(x)).sum()
    }

    pub fn to_atoms(&self) -> Vec<Atom> {
        self.atoms()
            .map(|(x, m)| Atom {
                position: x.to_vec(),
                multiplicity: m,
            })
            .collect()
    }

    fn check_compatible(&self, other: &Self) -> Result<(), MeasureError> {
        if self.is_zero() || other.is_zero() || self.dim == other.dim {
            Ok(())
        } else {
            Err(MeasureError::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            })
        }
    }
}

/// ι(x⃗) = Σ_i δ_{x_i}.
pub fn embed<P: AsRef<[f64]>>(dim: usize, positions: &[P]) -> Result<AtomicMeasure, MeasureError> {
    AtomicMeasure::from_atoms(dim, positions.iter().map(|p| (p.as_ref(), 1)))
}

impl Serialize for AtomicMeasure {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_atoms().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AtomicMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let atoms = Vec::<Atom>::deserialize(deserializer)?;
        let dim = atoms.first().map_or(0, |a| a.position.len());
        AtomicMeasure::from_atoms(dim, atoms.iter().map(|a| (a.position.as_slice(), a.multiplicity)))
            .map_err(serde::de::Error::custom)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A measure padded with cemetery mass at ∂, where d(x, ∂) = |x − x₀| + 1.
#[derive(Clone, Debug)]
pub struct PaddedMeasure<'a> {
    pub base: &'a AtomicMeasure,
    pub cemetery_mass: u64,
    pub anchor: &'a [f64],
}

impl<'a> PaddedMeasure<'a> {
    pub fn pad_to(base: &'a AtomicMeasure, mass: u64, anchor: &'a [f64]) -> Result<Self, MeasureError> {
        let own = base.mass();
        if mass < own {
            return Err(MeasureError::PaddingTooSmall {
                requested: mass,
                required: own,
            });
        }
        Ok(Self {
            base,
            cemetery_mass: mass - own,
            anchor,
        })
    }

    pub fn total_mass(&self) -> u64 {
        self.base.mass() + self.cemetery_mass
    }

    /// Unit atoms, with `None` standing for the cemetery point.
    fn unit_points(&self) -> Vec<Option<&'a [f64]>> {
        let mut pts: Vec<Option<&[f64]>> = self.base.unit_atoms().into_iter().map(Some).collect();
        pts.extend(std::iter::repeat_n(None, self.cemetery_mass as usize));
        pts
    }

    pub fn distance_to_cemetery(&self, x: &[f64]) -> f64 {
        euclid(x, self.anchor) + 1.0
    }
}

fn ground_cost(x: Option<&[f64]>, y: Option<&[f64]>, anchor: &[f64], p: u32) -> f64 {
    let d = match (x, y) {
        (None, None) => 0.0,
        (Some(a), None) | (None, Some(a)) => euclid(a, anchor) + 1.0,
        (Some(a), Some(b)) => euclid(a, b),
    };
    d.powi(p as i32)
}

/// Transport distance d_{p,E} computed with an explicit common padding mass `m`.
pub fn wasserstein_padded(
    lhs: &AtomicMeasure,
    rhs: &AtomicMeasure,
    p: u32,
    anchor: &[f64],
    m: u64,
) -> Result<f64, MeasureError> {
    if p != 1 && p != 2 {
        return Err(MeasureError::UnsupportedOrder(p));
    }
    lhs.check_compatible(rhs)?;
    let dim = if lhs.is_zero() { rhs.dim } else { lhs.dim };
    if !(lhs.is_zero() && rhs.is_zero()) && anchor.len() != dim {
        return Err(MeasureError::DimensionMismatch {
            expected: dim,
            found: anchor.len(),
        });
    }
    let a = PaddedMeasure::pad_to(lhs, m, anchor)?.unit_points();
    let b = PaddedMeasure::pad_to(rhs, m, anchor)?.unit_points();
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut cost = Vec::with_capacity(n * n);
    for x in &a {
        for y in &b {
            cost.push(ground_cost(*x, *y, anchor, p));
        }
    }
    let (total, _) = min_cost_assignment(&cost, n);
    Ok(total.max(0.0).powf(1.0 / p as f64))
}

/// Transport distance d_{p,E}, padding both measures to the larger mass.
pub fn wasserstein(lhs: &AtomicMeasure, rhs: &AtomicMeasure, p: u32, anchor: &[f64]) -> Result<f64, MeasureError> {
    let m = lhs.mass().max(rhs.mass());
    wasserstein_padded(lhs, rhs, p, anchor, m)
}
