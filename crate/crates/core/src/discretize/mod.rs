//! Uniform tensor grids on a truncated box, nodal fields, finite-difference
//! derivatives and action-space quadrature.
//!
//! Nodes are enumerated row-major: for a 2D grid the flat index of node
//! `(i, j)` is `i·n₂ + j`, so the last axis varies fastest.

mod io;
mod ops;
mod quadrature;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_field_binary, write_field_binary, write_field_csv};
pub use ops::{gradient, hessian, GradientScheme};
pub use quadrature::{build_action_quadrature, gauss_legendre, ActionQuadrature};

use crate::problem::MAX_DIM;

#[derive(Debug, Error)]
pub enum DiscretizeError {
    #[error("degenerate box on axis {axis}: [{lo}, {hi}]")]
    DegenerateBox { axis: usize, lo: f64, hi: f64 },
    #[error("axis {axis} has {n} nodes, at least 5 required")]
    TooFewNodes { axis: usize, n: usize },
    #[error("core fraction {0} outside (0, 1]")]
    CoreFraction(f64),
    #[error("unsupported dimension {0} (1 or 2)")]
    UnsupportedDim(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("quadrature needs at least 2 nodes per dimension, got {0}")]
    TooFewQuadratureNodes(usize),
    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },
    #[error("field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
    h: Vec<f64>,
    core_fraction: f64,
}

impl Grid {
    pub fn new(bounds: &[(f64, f64)], n: &[usize], core_fraction: f64) -> Result<Grid, DiscretizeError> {
        let d = bounds.len();
        if !(1..=MAX_DIM).contains(&d) {
            return Err(DiscretizeError::UnsupportedDim(d));
        }
        if n.len() != d {
            return Err(DiscretizeError::ShapeMismatch(format!(
                "{} node counts for a {d}-dimensional box",
                n.len()
            )));
        }
        for (axis, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(DiscretizeError::DegenerateBox { axis, lo, hi });
            }
            if n[axis] < 5 {
                return Err(DiscretizeError::TooFewNodes { axis, n: n[axis] });
            }
        }
        if !(core_fraction > 0.0 && core_fraction <= 1.0) {
            return Err(DiscretizeError::CoreFraction(core_fraction));
        }
        Ok(Grid {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
            h: bounds
                .iter()
                .zip(n)
                .map(|(b, &n)| (b.1 - b.0) / (n - 1) as f64)
                .collect(),
            n: n.to_vec(),
            core_fraction,
        })
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n(&self) -> &[usize] {
        &self.n
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn core_fraction(&self) -> f64 {
        self.core_fraction
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lo.iter().copied().zip(self.hi.iter().copied()).collect()
    }

    /// Centred sub-box whose side lengths are `core_fraction` times the box sides.
    pub fn core_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|k| {
                let mid = 0.5 * (self.lo[k] + self.hi[k]);
                let half = 0.5 * (self.hi[k] - self.lo[k]) * self.core_fraction;
                (mid - half, mid + half)
            })
            .collect()
    }

    /// Flat-index stride of axis `k`.
    pub fn stride(&self, k: usize) -> usize {
        self.n[k + 1..].iter().product()
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().enumerate().fold(0, |acc, (k, &i)| acc * self.n[k] + i)
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for k in (0..self.dim()).rev() {
            out[k] = flat % self.n[k];
            flat /= self.n[k];
        }
        out
    }

    pub fn axis_coord(&self, k: usize, i: usize) -> f64 {
        if i + 1 == self.n[k] {
            self.hi[k]
        } else {
            self.lo[k] + i as f64 * self.h[k]
        }
    }

    pub fn coord(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(flat);
        let mut out = [0.0; MAX_DIM];
        for (k, o) in out.iter_mut().enumerate().take(self.dim()) {
            *o = self.axis_coord(k, idx[k]);
        }
        out
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        let idx = self.multi_index(flat);
        (0..self.dim()).any(|k| idx[k] == 0 || idx[k] + 1 == self.n[k])
    }

    pub fn in_core(&self, flat: usize) -> bool {
        let x = self.coord(flat);
        self.core_bounds().iter().enumerate().all(|(k, &(lo, hi))| {
            let eps = 1e-9 * self.h[k];
            x[k] >= lo - eps && x[k] <= hi + eps
        })
    }

    pub fn core_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.in_core(i)).collect()
    }

    /// Grid with each spacing divided by `factor` (nested: every node of `self` is a node of the result).
    pub fn refined(&self, factor: usize) -> Grid {
        Grid {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            n: self.n.iter().map(|&n| (n - 1) * factor + 1).collect(),
            h: self.h.iter().map(|h| h / factor as f64).collect(),
            core_fraction: self.core_fraction,
        }
    }

    /// Integer refinement factor from `self` to `fine`, if the grids are nested.
    pub fn nesting_factor(&self, fine: &Grid) -> Option<usize> {
        if fine.dim() != self.dim() || fine.lo != self.lo || fine.hi != self.hi {
            return None;
        }
        let f = (fine.n[0] - 1) / (self.n[0] - 1);
        let ok = f >= 1 && (0..self.dim()).all(|k| (self.n[k] - 1) * f == fine.n[k] - 1);
        ok.then_some(f)
    }

    fn same_shape(&self, other: &Grid) -> bool {
        self.n == other.n && self.lo == other.lo && self.hi == other.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<ScalarField, DiscretizeError> {
        if values.len() != grid.len() {
            return Err(DiscretizeError::ShapeMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DiscretizeError::NonFinite { node, value });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: &Grid) -> ScalarField {
        ScalarField {
            values: vec![0.0; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        let d = grid.dim();
        ScalarField {
            values: (0..grid.len()).map(|i| f(&grid.coord(i)[..d])).collect(),
            grid: grid.clone(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Max of `|v|` over core nodes.
    pub fn core_sup_norm(&self) -> f64 {
        self.grid
            .core_indices()
            .iter()
            .fold(0.0f64, |m, &i| m.max(self.values[i].abs()))
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField, DiscretizeError> {
        if !self.grid.same_shape(&other.grid) {
            return Err(DiscretizeError::ShapeMismatch("fields on different grids".into()));
        }
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    /// Nodal injection onto a coarser nested grid.
    pub fn restrict_to(&self, coarse: &Grid) -> Result<ScalarField, DiscretizeError> {
        let f = coarse
            .nesting_factor(&self.grid)
            .ok_or_else(|| DiscretizeError::ShapeMismatch("grids are not nested".into()))?;
        let d = coarse.dim();
        let values = (0..coarse.len())
            .map(|i| {
                let idx = coarse.multi_index(i);
                let mut fine = [0; MAX_DIM];
                for k in 0..d {
                    fine[k] = idx[k] * f;
                }
                self.values[self.grid.index(&fine[..d])]
            })
            .collect();
        Ok(ScalarField {
            grid: coarse.clone(),
            values,
        })
    }

    /// Multilinear interpolation; points outside the box are clamped to it.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        interpolate_with(&self.grid, x, |i| self.values[i])
    }
}

/// Multilinear interpolation of a nodal quantity given by `value(flat index)`.
pub fn interpolate_with(grid: &Grid, x: &[f64], value: impl Fn(usize) -> f64) -> f64 {
    let d = grid.dim();
    let mut base = [0usize; MAX_DIM];
    let mut t = [0.0; MAX_DIM];
    for k in 0..d {
        let s = ((x[k] - grid.lo[k]) / grid.h[k]).clamp(0.0, (grid.n[k] - 1) as f64);
        let i = (s.floor() as usize).min(grid.n[k] - 2);
        base[k] = i;
        t[k] = s - i as f64;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = [0usize; MAX_DIM];
        for k in 0..d {
            let bit = (corner >> k) & 1;
            idx[k] = base[k] + bit;
            w *= if bit == 1 { t[k] } else { 1.0 - t[k] };
        }
        if w != 0.0 {
            acc += w * value(grid.index(&idx[..d]));
        }
    }
    acc
}

/// Per-node vector; only the leading `d` components are meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub values: Vec<[f64; MAX_DIM]>,
}

/// Per-node symmetric matrix; only the leading `d × d` block is meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    pub grid: Grid,
    pub values: Vec<[[f64; MAX_DIM]; MAX_DIM]>,
}
