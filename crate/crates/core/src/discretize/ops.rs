//! Finite-difference derivatives of nodal fields.

use super::{DiscretizeError, Grid, MatrixField, ScalarField, VectorField};
use crate::problem::MAX_DIM;

pub enum GradientScheme<'a> {
    /// Second-order central differences, one-sided second order at the boundary.
    Central,
    /// First-order one-sided differences: forward where the drift component is
    /// non-negative, backward where it is negative.
    Upwind(&'a VectorField),
}

/// Central first derivative along axis `k` at flat index `i`.
pub(crate) fn central_axis(grid: &Grid, values: &[f64], i: usize, k: usize) -> f64 {
    let n = grid.n()[k];
    let s = grid.stride(k);
    let h = grid.h()[k];
    let pos = grid.multi_index(i)[k];
    if pos == 0 {
        (4.0 * (values[i + s] - values[i]) - (values[i + 2 * s] - values[i])) / (2.0 * h)
    } else if pos + 1 == n {
        (4.0 * (values[i] - values[i - s]) - (values[i] - values[i - 2 * s])) / (2.0 * h)
    } else {
        (values[i + s] - values[i - s]) / (2.0 * h)
    }
}

fn upwind_axis(grid: &Grid, values: &[f64], i: usize, k: usize, drift: f64) -> f64 {
    let n = grid.n()[k];
    let s = grid.stride(k);
    let h = grid.h()[k];
    let pos = grid.multi_index(i)[k];
    let forward = (drift >= 0.0 && pos + 1 < n) || pos == 0;
    if forward {
        (values[i + s] - values[i]) / h
    } else {
        (values[i] - values[i - s]) / h
    }
}

/// Three-point second difference along axis `k`, shifted inward at the boundary.
fn second_axis(grid: &Grid, values: &[f64], i: usize, k: usize) -> f64 {
    let n = grid.n()[k];
    let s = grid.stride(k);
    let h = grid.h()[k];
    let pos = grid.multi_index(i)[k];
    let c = if pos == 0 {
        i + s
    } else if pos + 1 == n {
        i - s
    } else {
        i
    };
    (values[c + s] - 2.0 * values[c] + values[c - s]) / (h * h)
}

pub fn gradient(field: &ScalarField, scheme: GradientScheme<'_>) -> Result<VectorField, DiscretizeError> {
    let grid = &field.grid;
    let d = grid.dim();
    if let GradientScheme::Upwind(b) = &scheme {
        if b.grid.n() != grid.n() || b.values.len() != field.values.len() {
            return Err(DiscretizeError::ShapeMismatch(
                "drift field does not match the scalar field".into(),
            ));
        }
    }
    let values = (0..grid.len())
        .map(|i| {
            let mut g = [0.0; MAX_DIM];
            for (k, gk) in g.iter_mut().enumerate().take(d) {
                *gk = match &scheme {
                    GradientScheme::Central => central_axis(grid, &field.values, i, k),
                    GradientScheme::Upwind(b) => upwind_axis(grid, &field.values, i, k, b.values[i][k]),
                };
            }
            g
        })
        .collect();
    Ok(VectorField {
        grid: grid.clone(),
        values,
    })
}

/// Second derivatives: 3-point diagonal entries, cross entries as the central
/// derivative of the central derivative (the 4-point stencil at interior nodes).
pub fn hessian(field: &ScalarField) -> MatrixField {
    let grid = &field.grid;
    let d = grid.dim();
    let first: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            (0..grid.len())
                .map(|i| central_axis(grid, &field.values, i, k))
                .collect()
        })
        .collect();
    let values = (0..grid.len())
        .map(|i| {
            let mut m = [[0.0; MAX_DIM]; MAX_DIM];
            for k in 0..d {
                m[k][k] = second_axis(grid, &field.values, i, k);
            }
            if d == 2 {
                let c = 0.5 * (central_axis(grid, &first[0], i, 1) + central_axis(grid, &first[1], i, 0));
                m[0][1] = c;
                m[1][0] = c;
            }
            m
        })
        .collect();
    MatrixField {
        grid: grid.clone(),
        values,
    }
}
