//! Gauss–Legendre rules on `[0, 1]^L`.

use super::DiscretizeError;
use crate::problem::MAX_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct ActionQuadrature {
    pub dim: usize,
    pub nodes: Vec<[f64; MAX_DIM]>,
    pub weights: Vec<f64>,
}

impl ActionQuadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(u, w)| w * f(&u[..self.dim]))
            .sum()
    }
}

/// `n`-point Gauss–Legendre nodes and weights on `[−1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Chebyshev-type initial guess for the i-th largest root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor Gauss–Legendre rule on `[0, 1]^L` with weights summing to one.
pub fn build_action_quadrature(dim: usize, nodes_per_dim: usize) -> Result<ActionQuadrature, DiscretizeError> {
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(DiscretizeError::UnsupportedDim(dim));
    }
    if nodes_per_dim < 2 {
        return Err(DiscretizeError::TooFewQuadratureNodes(nodes_per_dim));
    }
    let (x, w) = gauss_legendre(nodes_per_dim);
    let x: Vec<f64> = x.iter().map(|t| 0.5 * (t + 1.0)).collect();
    let w: Vec<f64> = w.iter().map(|t| 0.5 * t).collect();
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    if dim == 1 {
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push([*xi, 0.0]);
            weights.push(*wi);
        }
    } else {
        for (xi, wi) in x.iter().zip(&w) {
            for (xj, wj) in x.iter().zip(&w) {
                nodes.push([*xi, *xj]);
                weights.push(wi * wj);
            }
        }
    }
    // Remove the last bits of rounding so the rule has unit mass.
    let total: f64 = weights.iter().sum();
    for wi in &mut weights {
        *wi /= total;
    }
    Ok(ActionQuadrature { dim, nodes, weights })
}
