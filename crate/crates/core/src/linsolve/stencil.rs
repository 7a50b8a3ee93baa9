//! Per-node difference stencils shared by the assembled operator and the
//! policy-improvement step, so both see the same discrete generator.

use super::BoundaryCondition;
use crate::discretize::Grid;
use crate::problem::MAX_DIM;

/// Linear functional `Σ w_k v[cols_k]` with at most four terms.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Stencil {
    cols: [usize; 4],
    w: [f64; 4],
    len: usize,
}

impl Stencil {
    fn push(&mut self, col: usize, w: f64) {
        self.cols[self.len] = col;
        self.w[self.len] = w;
        self.len += 1;
    }

    pub(crate) fn apply(&self, v: &[f64]) -> f64 {
        (0..self.len).map(|k| self.w[k] * v[self.cols[k]]).sum()
    }

    pub(crate) fn terms(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len).map(|k| (self.cols[k], self.w[k]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum NodeKind {
    Operator,
    Dirichlet,
    /// Periodic copy of the given canonical node.
    Duplicate(usize),
}

/// Difference stencils at one operator node.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct NodeStencils {
    pub d0: [Stencil; MAX_DIM],
    pub dp: [Stencil; MAX_DIM],
    pub dm: [Stencil; MAX_DIM],
    pub d2: [Stencil; MAX_DIM],
    pub d12: Stencil,
    /// Central drift differencing is available along the axis (false on a closed boundary).
    pub central_ok: [bool; MAX_DIM],
}

/// Coefficients of the generator at one node: `b`, its positive/negative parts, `Σ`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalCoefficients {
    pub b: [f64; MAX_DIM],
    pub b_plus: [f64; MAX_DIM],
    pub b_minus: [f64; MAX_DIM],
    pub sigma: [[f64; MAX_DIM]; MAX_DIM],
    pub central: [bool; MAX_DIM],
}

impl NodeStencils {
    /// Generator value `b·Dv + ½tr(ΣD²v)` with the drift scheme selected per axis.
    /// The diffusion part is skipped when `with_diffusion` is false.
    pub(crate) fn generator(&self, c: &LocalCoefficients, d: usize, v: &[f64], with_diffusion: bool) -> f64 {
        let mut g = 0.0;
        for k in 0..d {
            if c.central[k] && self.central_ok[k] {
                g += c.b[k] * self.d0[k].apply(v);
            } else {
                g += c.b_plus[k] * self.dp[k].apply(v) - c.b_minus[k] * self.dm[k].apply(v);
            }
            if with_diffusion {
                g += 0.5 * c.sigma[k][k] * self.d2[k].apply(v);
            }
        }
        if with_diffusion && d == 2 {
            g += 0.5 * (c.sigma[0][1] + c.sigma[1][0]) * self.d12.apply(v);
        }
        g
    }

    /// Appends the generator coefficients as `(column, weight)` terms.
    pub(crate) fn generator_terms(&self, c: &LocalCoefficients, d: usize, out: &mut Vec<(usize, f64)>) {
        for k in 0..d {
            if c.central[k] && self.central_ok[k] {
                out.extend(self.d0[k].terms().map(|(j, w)| (j, c.b[k] * w)));
            } else {
                out.extend(self.dp[k].terms().map(|(j, w)| (j, c.b_plus[k] * w)));
                out.extend(self.dm[k].terms().map(|(j, w)| (j, -c.b_minus[k] * w)));
            }
            out.extend(self.d2[k].terms().map(|(j, w)| (j, 0.5 * c.sigma[k][k] * w)));
        }
        if d == 2 {
            let s = 0.5 * (c.sigma[0][1] + c.sigma[1][0]);
            if s != 0.0 {
                out.extend(self.d12.terms().map(|(j, w)| (j, s * w)));
            }
        }
    }
}

pub(crate) struct Layout<'a> {
    pub grid: &'a Grid,
    pub bc: &'a BoundaryCondition,
}

impl Layout<'_> {
    fn periodic(&self) -> bool {
        matches!(self.bc, BoundaryCondition::Periodic)
    }

    pub(crate) fn kind(&self, i: usize) -> NodeKind {
        let g = self.grid;
        let idx = g.multi_index(i);
        let d = g.dim();
        if self.periodic() {
            if (0..d).any(|k| idx[k] + 1 == g.n()[k]) {
                let mut canon = idx;
                for k in 0..d {
                    if canon[k] + 1 == g.n()[k] {
                        canon[k] = 0;
                    }
                }
                return NodeKind::Duplicate(g.index(&canon[..d]));
            }
            return NodeKind::Operator;
        }
        let dirichlet = matches!(
            self.bc,
            BoundaryCondition::ZeroDirichlet | BoundaryCondition::BoundDirichlet { .. }
        );
        if dirichlet && g.is_boundary(i) {
            NodeKind::Dirichlet
        } else {
            NodeKind::Operator
        }
    }

    /// Neighbour of `i` at offset `delta` along axis `k`, wrapping on periodic grids.
    fn neighbor(&self, i: usize, k: usize, delta: isize) -> usize {
        let g = self.grid;
        let pos = g.multi_index(i)[k] as isize;
        let s = g.stride(k) as isize;
        let mut target = pos + delta;
        if self.periodic() {
            let m = g.n()[k] as isize - 1;
            target = target.rem_euclid(m);
        }
        (i as isize + (target - pos) * s) as usize
    }

    pub(crate) fn stencils(&self, i: usize) -> NodeStencils {
        let g = self.grid;
        let d = g.dim();
        let idx = g.multi_index(i);
        let periodic = self.periodic();
        let mut st = NodeStencils::default();
        let mut interior = [false; MAX_DIM];
        for k in 0..d {
            let h = g.h()[k];
            let n = g.n()[k];
            let at_lo = !periodic && idx[k] == 0;
            let at_hi = !periodic && idx[k] + 1 == n;
            interior[k] = !(at_lo || at_hi);
            let here = i;
            if interior[k] {
                let up = self.neighbor(i, k, 1);
                let dn = self.neighbor(i, k, -1);
                st.d0[k].push(up, 0.5 / h);
                st.d0[k].push(dn, -0.5 / h);
                st.dp[k].push(up, 1.0 / h);
                st.dp[k].push(here, -1.0 / h);
                st.dm[k].push(here, 1.0 / h);
                st.dm[k].push(dn, -1.0 / h);
                st.d2[k].push(up, 1.0 / (h * h));
                st.d2[k].push(here, -2.0 / (h * h));
                st.d2[k].push(dn, 1.0 / (h * h));
                st.central_ok[k] = true;
            } else if at_lo {
                // Inward one-sided difference; outward drift and normal curvature dropped.
                let up = self.neighbor(i, k, 1);
                st.dp[k].push(up, 1.0 / h);
                st.dp[k].push(here, -1.0 / h);
            } else {
                let dn = self.neighbor(i, k, -1);
                st.dm[k].push(here, 1.0 / h);
                st.dm[k].push(dn, -1.0 / h);
            }
        }
        if d == 2 && interior[0] && interior[1] {
            let w = 1.0 / (4.0 * g.h()[0] * g.h()[1]);
            let p0 = self.neighbor(i, 0, 1);
            let m0 = self.neighbor(i, 0, -1);
            st.d12.push(self.neighbor(p0, 1, 1), w);
            st.d12.push(self.neighbor(p0, 1, -1), -w);
            st.d12.push(self.neighbor(m0, 1, 1), -w);
            st.d12.push(self.neighbor(m0, 1, -1), w);
        }
        st
    }
}
