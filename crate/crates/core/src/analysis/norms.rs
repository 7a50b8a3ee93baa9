//! Discrete Hölder seminorms, derivative sup norms and the weighted H¹ error.

use rayon::prelude::*;

use super::AnalysisError;
use crate::discretize::{gauss_legendre, gradient, hessian, interpolate_with, GradientScheme, Grid, ScalarField};

/// Closed ball `{|x − center| ≤ radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn unit(center: &[f64]) -> Ball {
        Ball {
            center: center.to_vec(),
            radius: 1.0,
        }
    }
}

/// Nodal values of every order-`k` derivative `D^a w`, `|a| = k`.
fn derivative_components(field: &ScalarField, order: usize) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let d = field.grid.dim();
    Ok(match order {
        0 => vec![field.values.clone()],
        1 => {
            let g = gradient(field, GradientScheme::Central)?;
            (0..d).map(|k| g.values.iter().map(|v| v[k]).collect()).collect()
        }
        2 => {
            let h = hessian(field);
            let mut out = Vec::new();
            for k in 0..d {
                for l in k..d {
                    out.push(h.values.iter().map(|m| m[k][l]).collect());
                }
            }
            out
        }
        _ => {
            return Err(AnalysisError::Invalid(format!(
                "derivative order {order} not in {{0, 1, 2}}"
            )))
        }
    })
}

fn nodes_in(grid: &Grid, region: &[(f64, f64)]) -> Vec<usize> {
    let d = grid.dim();
    (0..grid.len())
        .filter(|&i| {
            let x = grid.coord(i);
            (0..d).all(|k| {
                let eps = 1e-9 * grid.h()[k];
                x[k] >= region[k].0 - eps && x[k] <= region[k].1 + eps
            })
        })
        .collect()
}

/// `max |D^a w(x) − D^a w(y)| / |x − y|^α` over node pairs in `region` with `|x − y| ≤ 1`.
pub fn holder_seminorm(
    field: &ScalarField,
    order: usize,
    alpha: f64,
    region: &[(f64, f64)],
) -> Result<f64, AnalysisError> {
    let grid = &field.grid;
    let d = grid.dim();
    if region.len() != d {
        return Err(AnalysisError::Invalid(
            "region dimension does not match the grid".into(),
        ));
    }
    let comps = derivative_components(field, order)?;
    let nodes = nodes_in(grid, region);
    if nodes.is_empty() {
        return Err(AnalysisError::EmptyRegion);
    }
    let mut in_region = vec![false; grid.len()];
    for &i in &nodes {
        in_region[i] = true;
    }
    let h = grid.h();
    let reach: Vec<isize> = (0..d).map(|k| (1.0 / h[k] + 1e-9).floor() as isize).collect();
    let best = nodes
        .par_iter()
        .map(|&i| {
            let idx = grid.multi_index(i);
            let mut best = 0.0f64;
            let (r0, r1) = (reach[0], if d == 2 { reach[1] } else { 0 });
            for a in 0..=r0 {
                for b in -r1..=r1 {
                    // Each unordered pair once: positive first offset, or zero and positive second.
                    if a == 0 && b <= 0 {
                        continue;
                    }
                    let j0 = idx[0] as isize + a;
                    let j1 = idx[1] as isize + b;
                    if j0 >= grid.n()[0] as isize || (d == 2 && (j1 < 0 || j1 >= grid.n()[1] as isize)) {
                        continue;
                    }
                    let dist = if d == 2 {
                        ((a as f64 * h[0]).powi(2) + (b as f64 * h[1]).powi(2)).sqrt()
                    } else {
                        a as f64 * h[0]
                    };
                    if dist > 1.0 + 1e-12 {
                        continue;
                    }
                    let j = if d == 2 {
                        grid.index(&[j0 as usize, j1 as usize])
                    } else {
                        j0 as usize
                    };
                    if !in_region[j] {
                        continue;
                    }
                    let scale = dist.powf(alpha);
                    for c in &comps {
                        best = best.max((c[i] - c[j]).abs() / scale);
                    }
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// Max over region nodes of the largest order-`k` derivative in absolute value.
pub fn derivative_sup(field: &ScalarField, order: usize, region: &[(f64, f64)]) -> Result<f64, AnalysisError> {
    let comps = derivative_components(field, order)?;
    let nodes = nodes_in(&field.grid, region);
    if nodes.is_empty() {
        return Err(AnalysisError::EmptyRegion);
    }
    Ok(nodes
        .iter()
        .flat_map(|&i| comps.iter().map(move |c| c[i].abs()))
        .fold(0.0, f64::max))
}

/// `ρ∫_B |v − v_ref|² + ∫_B |D(v − v_ref)|²` over a ball inside the core.
///
/// 1D: composite trapezoid on the nodes inside the interval plus interpolated
/// end points. 2D: polar Gauss–Legendre × trapezoid rule on the bilinear
/// interpolant of the nodal difference and its central gradient.
pub fn weighted_h1_error(v: &ScalarField, v_ref: &ScalarField, rho: f64, ball: &Ball) -> Result<f64, AnalysisError> {
    let grid = &v.grid;
    let d = grid.dim();
    if ball.center.len() != d || !(ball.radius > 0.0) {
        return Err(AnalysisError::Invalid("ball does not match the grid".into()));
    }
    let core = grid.core_bounds();
    for (k, &(lo, hi)) in core.iter().enumerate() {
        let tol = 1e-9 * grid.h()[k];
        if ball.center[k] - ball.radius < lo - tol || ball.center[k] + ball.radius > hi + tol {
            return Err(AnalysisError::BallOutsideCore);
        }
    }
    let e = v.sub(v_ref)?;
    let de = gradient(&e, GradientScheme::Central)?;
    let integrand = |x: &[f64]| {
        let ev = e.interpolate(x);
        let mut g2 = 0.0;
        for k in 0..d {
            let gk = interpolate_with(grid, x, |i| de.values[i][k]);
            g2 += gk * gk;
        }
        rho * ev * ev + g2
    };
    if d == 1 {
        let (a, b) = (ball.center[0] - ball.radius, ball.center[0] + ball.radius);
        let mut xs = vec![a];
        xs.extend(
            (0..grid.len())
                .map(|i| grid.coord(i)[0])
                .filter(|&x| x > a + 1e-12 && x < b - 1e-12),
        );
        xs.push(b);
        let f: Vec<f64> = xs.iter().map(|&x| integrand(&[x])).collect();
        Ok(xs
            .windows(2)
            .zip(f.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum())
    } else {
        let hmin = grid.h().iter().fold(f64::INFINITY, |m, &h| m.min(h));
        let nr = ((2.0 * ball.radius / hmin).ceil() as usize).max(8);
        let ntheta = 4 * nr;
        let (rx, rw) = gauss_legendre(nr);
        let mut total = 0.0;
        for (t, w) in rx.iter().zip(&rw) {
            let r = 0.5 * ball.radius * (t + 1.0);
            let wr = 0.5 * ball.radius * w * r;
            let mut ring = 0.0;
            for m in 0..ntheta {
                let th = 2.0 * std::f64::consts::PI * m as f64 / ntheta as f64;
                let x = [ball.center[0] + r * th.cos(), ball.center[1] + r * th.sin()];
                ring += integrand(&x);
            }
            total += wr * ring * 2.0 * std::f64::consts::PI / ntheta as f64;
        }
        Ok(total)
    }
}
