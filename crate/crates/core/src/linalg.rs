//! Small dense solves for the Newton/IRLS normal equations.

/// Solves `A x = b` for symmetric positive-definite `A` (row-major, `p × p`).
///
/// Retries once with a `1e-12 · max diag` jitter on the diagonal. Returns
/// `None` when `A` is not numerically positive definite.
pub(crate) fn solve_spd(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let p = b.len();
    debug_assert_eq!(a.len(), p * p);
    if let Some(l) = cholesky(a, p, 0.0, 0.0) {
        return Some(cholesky_solve(&l, b, p));
    }
    let scale = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max).max(1.0);
    cholesky(a, p, 1e-12 * scale, 0.0).map(|l| cholesky_solve(&l, b, p))
}

/// Numerical rank check: Cholesky of the unit-diagonal rescaling of `A`
/// with pivots required above `rel_tol`.
pub(crate) fn is_full_rank(a: &[f64], p: usize, rel_tol: f64) -> bool {
    let d: Vec<f64> = (0..p).map(|i| a[i * p + i].sqrt()).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return false;
    }
    let scaled: Vec<f64> = (0..p * p).map(|k| a[k] / (d[k / p] * d[k % p])).collect();
    cholesky(&scaled, p, 0.0, rel_tol).is_some()
}

fn cholesky(a: &[f64], p: usize, jitter: f64, min_pivot: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if !(s > min_pivot) || !s.is_finite() {
                    return None;
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    x
}
