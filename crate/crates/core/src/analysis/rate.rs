//! Least-squares fits of `e_n ≈ C·qⁿ + f`.

use std::ops::RangeInclusive;

use serde::Serialize;

use super::AnalysisError;

/// Fitted geometric decay with a floor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub q: f64,
    pub floor: f64,
    pub c: f64,
    /// Root mean square of `(model − e_n)/e_n` over the window.
    pub residual: f64,
    pub window: (usize, usize),
    /// The floor came from a detected plateau rather than the least-squares search.
    pub plateau: bool,
}

impl RateFit {
    pub fn model(&self, n: usize) -> f64 {
        self.c * self.q.powi(n as i32) + self.floor
    }
}

/// Log-linear least squares `ln y = a + n ln q`; returns `(C, q)`.
fn log_linear(points: &[(f64, f64)]) -> (f64, f64) {
    let m = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y.ln()));
    let (mx, my) = (sx / m, sy / m);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y.ln() - my);
    }
    let slope = sxy / sxx;
    ((my - slope * mx).exp(), slope.exp())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Fits `e_n ≈ C·qⁿ + f` over `window` (indices into `errors`, which holds `e_0, e_1, …`).
///
/// When the trailing quarter of the window is flat (spread within 25% of its
/// median) the floor is that median and `q` is fitted on `e_n − f` for the
/// points well above it. Otherwise the floor is chosen by a one-dimensional
/// search minimising the log-linear residual.
pub fn fit_geometric_rate(errors: &[f64], window: Option<RangeInclusive<usize>>) -> Result<RateFit, AnalysisError> {
    let window = window.unwrap_or(0..=errors.len().saturating_sub(1));
    let (n0, n1) = (*window.start(), *window.end());
    if errors.is_empty() || n1 >= errors.len() || n1 < n0 || n1 - n0 + 1 < 5 {
        let got = if n0 <= n1 && n1 < errors.len() { n1 - n0 + 1 } else { 0 };
        return Err(AnalysisError::TooFewPoints { got });
    }
    let pts: Vec<(f64, f64)> = (n0..=n1).map(|n| (n as f64, errors[n])).collect();
    if let Some(&(n, e)) = pts.iter().find(|p| !(p.1 > 0.0 && p.1.is_finite())) {
        return Err(AnalysisError::NonPositive {
            index: n as usize,
            value: e,
        });
    }
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if hi - lo <= 1e-14 * hi {
        return Err(AnalysisError::Degenerate("all errors equal".into()));
    }

    let tail_len = (pts.len() / 4).max(2);
    let tail: Vec<f64> = pts[pts.len() - tail_len..].iter().map(|p| p.1).collect();
    let tail_med = median(&tail);
    let tail_spread = tail.iter().fold(0.0f64, |m, &e| m.max(e)) - tail.iter().fold(f64::INFINITY, |m, &e| m.min(e));
    let plateau = tail_spread <= 0.25 * tail_med && tail_med < 0.5 * pts[0].1;

    let rel_residual = |c: f64, q: f64, f: f64| {
        (pts.iter()
            .map(|&(n, e)| ((c * q.powf(n) + f - e) / e).powi(2))
            .sum::<f64>()
            / pts.len() as f64)
            .sqrt()
    };
    let fit_above = |f: f64, factor: f64| -> Option<(f64, f64)> {
        let shifted: Vec<(f64, f64)> = pts
            .iter()
            .filter(|p| p.1 > factor * f)
            .map(|&(n, e)| (n, e - f))
            .collect();
        (shifted.len() >= 2).then(|| log_linear(&shifted))
    };

    let (c, q, floor) = if plateau {
        let f = tail_med;
        // Last resort: anything clearly above the plateau's own jitter.
        let jitter = 1.0 + (4.0 * tail_spread / f).max(1e-6);
        let (c, q) = fit_above(f, 2.0)
            .or_else(|| fit_above(f, 1.25))
            .or_else(|| fit_above(f, jitter))
            .ok_or_else(|| AnalysisError::Degenerate("no transient above the floor".into()))?;
        (c, q, f)
    } else {
        let objective = |f: f64| {
            let (c, q) = fit_above(f, 1.0).expect("floor below every error");
            (rel_residual(c, q, f), c, q)
        };
        let cap = lo * (1.0 - 1e-9);
        let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
        for k in 0..100 {
            let f = cap * k as f64 / 100.0;
            let (r, c, q) = objective(f);
            if r < best.0 {
                best = (r, c, q, f);
            }
        }
        // Golden-section refinement inside the bracketing cell.
        let step = cap / 100.0;
        let (mut a, mut b) = ((best.3 - step).max(0.0), (best.3 + step).min(cap));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let x1 = b - g * (b - a);
            let x2 = a + g * (b - a);
            if objective(x1).0 <= objective(x2).0 {
                b = x2;
            } else {
                a = x1;
            }
        }
        let f = 0.5 * (a + b);
        let cand = objective(f);
        if cand.0 < best.0 {
            best = (cand.0, cand.1, cand.2, f);
        }
        (best.1, best.2, best.3)
    };
    if !(q > 0.0 && q <= 1.0 + 1e-12) {
        return Err(AnalysisError::Degenerate(format!("fitted ratio {q} outside (0, 1]")));
    }
    let q = q.min(1.0);
    Ok(RateFit {
        q,
        floor,
        c,
        residual: rel_residual(c, q, floor),
        window: (n0, n1),
        plateau,
    })
}
