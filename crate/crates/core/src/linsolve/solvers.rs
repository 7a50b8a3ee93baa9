//! Banded LU with partial pivoting and Jacobi-preconditioned BiCGSTAB.

use super::sparse::CsrMatrix;

/// LU factors in LAPACK band layout: `a(i, j)` lives at `ab[kl + ku + i − j + j·ldab]`.
pub(crate) struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    /// Factors `P·A·Pᵀ` where `perm[i]` is the new position of row/column `i`.
    pub(crate) fn factor(a: &CsrMatrix, perm: &[usize]) -> Result<BandLu, usize> {
        let n = a.n;
        let (mut kl, mut ku) = (0usize, 0usize);
        for i in 0..n {
            for (c, _) in a.row(i) {
                let (pi, pc) = (perm[i], perm[c]);
                if pi > pc {
                    kl = kl.max(pi - pc);
                } else {
                    ku = ku.max(pc - pi);
                }
            }
        }
        let ldab = 2 * kl + ku + 1;
        let mut lu = BandLu {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
            piv: vec![0; n],
        };
        for i in 0..n {
            for (c, v) in a.row(i) {
                let k = lu.at(perm[i], perm[c]);
                lu.ab[k] += v;
            }
        }
        lu.factorize()?;
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        self.kl + self.ku + i - j + j * self.ldab
    }

    fn factorize(&mut self) -> Result<(), usize> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.ab[self.at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.ab[self.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.piv[k] = p;
            if best == 0.0 {
                return Err(k);
            }
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.at(k, j), self.at(p, j));
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.at(k, k)];
            for i in k + 1..=last_row {
                let ik = self.at(i, k);
                let l = self.ab[ik] / pivot;
                self.ab[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let kj = self.ab[self.at(k, j)];
                        let ij = self.at(i, j);
                        self.ab[ij] -= l * kj;
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves in the permuted ordering.
    fn solve_permuted(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] -= self.ab[self.at(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.ab[self.at(k, j)] * b[j];
            }
            b[k] = s / self.ab[self.at(k, k)];
        }
    }

    pub(crate) fn solve(&self, perm: &[usize], rhs: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.n];
        for (i, &p) in perm.iter().enumerate() {
            b[p] = rhs[i];
        }
        self.solve_permuted(&mut b);
        perm.iter().map(|&p| b[p]).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) struct KrylovOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub converged: bool,
}

/// BiCGSTAB with Jacobi preconditioning; stops at relative residual `tol`.
pub(crate) fn bicgstab(a: &CsrMatrix, b: &[f64], x0: &[f64], tol: f64, max_iter: usize) -> KrylovOutcome {
    let n = a.n;
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.diag(i);
            if d != 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let bnorm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r_hat = r.clone();
    let mut history = vec![dot(&r, &r).sqrt() / bnorm];
    if history[0] <= tol {
        return KrylovOutcome {
            x,
            iterations: 0,
            history,
            converged: true,
        };
    }
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = inv_diag[i] * p[i];
        }
        a.matvec(&y, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            break;
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let snorm = dot(&s, &s).sqrt() / bnorm;
        if snorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            history.push(snorm);
            return KrylovOutcome {
                x,
                iterations: it,
                history,
                converged: true,
            };
        }
        for i in 0..n {
            z[i] = inv_diag[i] * s[i];
        }
        a.matvec(&z, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            break;
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        let rn = dot(&r, &r).sqrt() / bnorm;
        history.push(rn);
        if rn <= tol {
            return KrylovOutcome {
                x,
                iterations: it,
                history,
                converged: true,
            };
        }
        if !rn.is_finite() {
            break;
        }
    }
    let iterations = history.len() - 1;
    KrylovOutcome {
        x,
        iterations,
        history,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_banded(n: usize, bw: usize, seed: u64) -> CsrMatrix {
        let mut state = seed;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let rows = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(bw);
                let hi = (i + bw).min(n - 1);
                (lo..=hi).map(|j| (j, next())).collect()
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn band_lu_solves_with_pivoting() {
        // Random matrices need pivoting: diagonal entries are not dominant.
        for seed in 1..6 {
            let a = random_banded(40, 3, seed);
            let x_true: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut b = vec![0.0; 40];
            a.matvec(&x_true, &mut b);
            let perm: Vec<usize> = (0..40).collect();
            let lu = BandLu::factor(&a, &perm).unwrap();
            let x = lu.solve(&perm, &b);
            for (u, v) in x.iter().zip(&x_true) {
                assert!((u - v).abs() < 1e-9, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn band_lu_with_permutation() {
        let a = random_banded(12, 2, 9);
        let perm: Vec<usize> = (0..12).rev().collect();
        let b: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let lu = BandLu::factor(&a, &perm).unwrap();
        let x = lu.solve(&perm, &b);
        assert!(a.residual_norm(&x, &b) < 1e-10);
    }

    #[test]
    fn singular_matrix_reports_column() {
        let a = CsrMatrix::from_rows(vec![vec![(0, 1.0)], vec![(1, 0.0)], vec![(2, 1.0)]]);
        let perm = vec![0, 1, 2];
        assert_eq!(BandLu::factor(&a, &perm).err(), Some(1));
    }

    #[test]
    fn bicgstab_on_diagonally_dominant() {
        let n = 200;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 4.0 + (i % 3) as f64)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.5));
                }
                r
            })
            .collect();
        let a = CsrMatrix::from_rows(rows);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let out = bicgstab(&a, &b, &vec![0.0; n], 1e-12, 500);
        assert!(out.converged);
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(a.residual_norm(&out.x, &b) / bn < 1e-11);
    }
}
