//! Piecewise-linear coefficient tables in time.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("table has no knots")]
    Empty,
    #[error("knots and values differ in length ({knots} vs {values})")]
    LengthMismatch { knots: usize, values: usize },
    #[error("knots must be strictly increasing and finite")]
    Unsorted,
}

/// Values that can be linearly interpolated.
pub trait Lerp: Clone {
    fn lerp(a: &Self, b: &Self, w: f64) -> Self;
}

impl Lerp for f64 {
    fn lerp(a: &Self, b: &Self, w: f64) -> Self {
        a + (b - a) * w
    }
}

impl Lerp for DMatrix<f64> {
    fn lerp(a: &Self, b: &Self, w: f64) -> Self {
        a + (b - a) * w
    }
}

/// Piecewise-linear interpolant, held constant beyond the outermost knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table<V> {
    knots: Vec<f64>,
    values: Vec<V>,
}

pub type ScalarTable = Table<f64>;
pub type MatrixTable = Table<DMatrix<f64>>;

impl<V: Lerp> Table<V> {
    pub fn constant(value: V) -> Self {
        Self {
            knots: vec![0.0],
            values: vec![value],
        }
    }

    pub fn new(knots: Vec<f64>, values: Vec<V>) -> Result<Self, TableError> {
        if knots.is_empty() {
            return Err(TableError::Empty);
        }
        if knots.len() != values.len() {
            return Err(TableError::LengthMismatch {
                knots: knots.len(),
                values: values.len(),
            });
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TableError::Unsorted);
        }
        Ok(Self { knots, values })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn at(&self, t: f64) -> V {
        let n = self.knots.len();
        if n == 1 || t <= self.knots[0] {
            return self.values[0].clone();
        }
        if t >= self.knots[n - 1] {
            return self.values[n - 1].clone();
        }
        let k = self.knots.partition_point(|&s| s <= t) - 1;
        let w = (t - self.knots[k]) / (self.knots[k + 1] - self.knots[k]);
        V::lerp(&self.values[k], &self.values[k + 1], w)
    }

    pub fn map<W, F: Fn(&V) -> W>(&self, f: F) -> Table<W> {
        Table {
            knots: self.knots.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }
}

impl ScalarTable {
    /// Largest value; the supremum of a piecewise-linear function is attained at a knot.
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
