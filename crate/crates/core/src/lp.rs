//! Dense tableau simplex for `max cᵀx  s.t.  Ax ≤ b, x ≥ 0` with `b ≥ 0`.
//!
//! The slack basis is feasible, so no phase one is needed. Bland's rule
//! prevents cycling; problem sizes here are a few hundred rows at most.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

const PIVOT_TOL: f64 = 1e-12;

/// `a` is row-major, `rows × c.len()`.
pub fn simplex_max(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let n = c.len();
    let m = a.len();
    if b.len() != m || a.iter().any(|r| r.len() != n) {
        return Err(Error::Lp("constraint matrix shape mismatch".into()));
    }
    if b.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Lp("right-hand side must be nonnegative".into()));
    }
    if c.iter().chain(a.iter().flatten()).chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Lp("non-finite data".into()));
    }
    let width = n + m + 1;
    // rows 0..m constraints, row m the reduced costs (negated objective)
    let mut t = vec![0.0; (m + 1) * width];
    for i in 0..m {
        t[i * width..i * width + n].copy_from_slice(&a[i]);
        t[i * width + n + i] = 1.0;
        t[i * width + width - 1] = b[i];
    }
    for j in 0..n {
        t[m * width + j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let scale = c.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let max_pivots = 50 * (n + m + 10);
    for _ in 0..max_pivots {
        // Bland: lowest index with negative reduced cost
        let Some(col) = (0..n + m).find(|&j| t[m * width + j] < -PIVOT_TOL * scale) else {
            let mut x = vec![0.0; n];
            for (i, &bv) in basis.iter().enumerate() {
                if bv < n {
                    x[bv] = t[i * width + width - 1].max(0.0);
                }
            }
            let value = c.iter().zip(&x).map(|(c, x)| c * x).sum();
            return Ok(LpSolution { x, value });
        };
        let mut pivot: Option<(usize, f64)> = None;
        for i in 0..m {
            let aij = t[i * width + col];
            if aij > PIVOT_TOL {
                let ratio = t[i * width + width - 1] / aij;
                let better = match pivot {
                    None => true,
                    Some((r, best)) => ratio < best - 1e-15 || (ratio <= best + 1e-15 && basis[i] < basis[r]),
                };
                if better {
                    pivot = Some((i, ratio));
                }
            }
        }
        let Some((row, _)) = pivot else {
            return Err(Error::Lp("objective is unbounded".into()));
        };
        let p = t[row * width + col];
        for j in 0..width {
            t[row * width + j] /= p;
        }
        for i in 0..=m {
            if i == row {
                continue;
            }
            let f = t[i * width + col];
            if f != 0.0 {
                for j in 0..width {
                    t[i * width + j] -= f * t[row * width + j];
                }
            }
        }
        basis[row] = col;
    }
    Err(Error::Lp("pivot limit exceeded".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let s = simplex_max(
            &[3.0, 5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
        )
        .unwrap();
        assert!((s.value - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_and_degenerate() {
        assert!(simplex_max(&[1.0, 1.0], &[vec![1.0, -1.0]], &[1.0]).is_err());
        let s = simplex_max(
            &[1.0, 1.0],
            &[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 0.0]],
            &[0.0, 0.0, 0.0],
        )
        .unwrap();
        assert_eq!(s.value, 0.0);
        assert!(simplex_max(&[1.0], &[vec![1.0]], &[-1.0]).is_err());
    }
}
