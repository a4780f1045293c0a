//! Finite attacker hyperparameter grids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid must have at least one axis")]
    NoAxes,
    #[error("axis `{0}` has no values")]
    EmptyAxis(String),
    #[error("axis `{axis}` has a non-finite value {value}")]
    NonFinite { axis: String, value: f64 },
    #[error("axis `{axis}` repeats value {value}")]
    DuplicateValue { axis: String, value: f64 },
    #[error("duplicate axis name `{0}`")]
    DuplicateAxis(String),
}

/// One named hyperparameter axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    axes: Vec<Axis>,
}

/// Cartesian product of named axes, indexed lexicographically (the first
/// axis varies slowest).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GridRepr")]
pub struct HyperGrid {
    axes: Vec<Axis>,
    #[serde(skip)]
    strides: Vec<usize>,
    #[serde(skip)]
    len: usize,
    #[serde(skip)]
    lookup: HashMap<Vec<u64>, usize>,
    #[serde(skip)]
    ranges: Vec<(f64, f64)>,
}

impl PartialEq for HyperGrid {
    fn eq(&self, other: &Self) -> bool {
        self.axes == other.axes
    }
}

impl TryFrom<GridRepr> for HyperGrid {
    type Error = GridError;

    fn try_from(repr: GridRepr) -> Result<Self, Self::Error> {
        HyperGrid::new(repr.axes)
    }
}

fn key(point: &[f64]) -> Vec<u64> {
    // Normalize -0.0 so that lookups are insensitive to the sign of zero.
    point.iter().map(|v| (v + 0.0).to_bits()).collect()
}

impl HyperGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        if axes.is_empty() {
            return Err(GridError::NoAxes);
        }
        for (i, axis) in axes.iter().enumerate() {
            if axis.values.is_empty() {
                return Err(GridError::EmptyAxis(axis.name.clone()));
            }
            if axes[..i].iter().any(|a| a.name == axis.name) {
                return Err(GridError::DuplicateAxis(axis.name.clone()));
            }
            for (j, &v) in axis.values.iter().enumerate() {
                if !v.is_finite() {
                    return Err(GridError::NonFinite {
                        axis: axis.name.clone(),
                        value: v,
                    });
                }
                if axis.values[..j].contains(&v) {
                    return Err(GridError::DuplicateValue {
                        axis: axis.name.clone(),
                        value: v,
                    });
                }
            }
        }

        let mut strides = vec![1usize; axes.len()];
        for d in (0..axes.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * axes[d + 1].values.len();
        }
        let len = strides[0] * axes[0].values.len();
        let ranges = axes
            .iter()
            .map(|a| {
                let lo = a.values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = a.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            })
            .collect();

        let mut grid = Self {
            axes,
            strides,
            len,
            lookup: HashMap::with_capacity(len),
            ranges,
        };
        for i in 0..len {
            let k = key(&grid.point(i));
            grid.lookup.insert(k, i);
        }
        Ok(grid)
    }

    /// A one-axis grid.
    pub fn single_axis(name: &str, values: Vec<f64>) -> Result<Self, GridError> {
        Self::new(vec![Axis::new(name, values)])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Per-axis indices of point `index`.
    pub fn coords(&self, index: usize) -> Vec<usize> {
        assert!(index < self.len, "grid index {index} out of range");
        self.strides
            .iter()
            .zip(&self.axes)
            .map(|(s, a)| (index / s) % a.values.len())
            .collect()
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        self.coords(index)
            .into_iter()
            .zip(&self.axes)
            .map(|(c, a)| a.values[c])
            .collect()
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len).map(|i| self.point(i))
    }

    /// Grid index of an exact grid point.
    pub fn index_of(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.dim() {
            return None;
        }
        self.lookup.get(&key(point)).copied()
    }

    /// Point `index` with each coordinate min-max scaled to `[0, 1]`.
    /// Axes with a single value map to 0.
    pub fn normalized(&self, index: usize) -> Vec<f64> {
        self.point(index)
            .into_iter()
            .zip(&self.ranges)
            .map(|(v, &(lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }
}
