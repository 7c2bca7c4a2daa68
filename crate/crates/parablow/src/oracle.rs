//! Independent reference computations used by the test suites. Everything
//! here is deliberately implemented by a different route than the engine it
//! cross-checks: dense elimination instead of Krylov/tridiagonal sweeps,
//! bisection instead of Newton, closed forms instead of time stepping.

/// Dense Gaussian elimination with partial pivoting. For cross-checking the
/// matrix-free solvers on grids of up to ~10³ unknowns.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("nonempty");
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        assert!(d != 0.0, "singular matrix");
        for row in col + 1..n {
            let f = a[row][col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Root of y + τ·y^q = x on [0, x] by bisection.
pub fn scalar_resolvent_bisection(x: f64, tau: f64, q: f64) -> f64 {
    assert!(x >= 0.0 && tau > 0.0 && q > 1.0);
    if x == 0.0 {
        return 0.0;
    }
    let g = |y: f64| y + tau * y.abs().powf(q) - x;
    let (mut lo, mut hi) = (0.0_f64, x);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact solution of the spatially constant flow u' + u^q = 0, u(0) = k:
/// u(t) = ((q−1)t + k^{1−q})^{−1/(q−1)}.
pub fn ode_exact(k: f64, q: f64, t: f64) -> f64 {
    ((q - 1.0) * t + k.powf(1.0 - q)).powf(-1.0 / (q - 1.0))
}

/// Linear heat equation on (a, b) with zero boundary data and constant
/// initial value k, by Fourier sine series (supersolution oracle).
pub fn linear_heat_constant_data(a: f64, b: f64, k: f64, x: f64, t: f64, terms: usize) -> f64 {
    use std::f64::consts::PI;
    let len = b - a;
    let xi = x - a;
    let mut acc = 0.0;
    for m in 0..terms {
        let n = (2 * m + 1) as f64; // odd modes only
        let lam = (n * PI / len).powi(2);
        acc += 4.0 * k / (n * PI) * (n * PI * xi / len).sin() * (-lam * t).exp();
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solve_identity_and_known_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = dense_solve(a, vec![5.0, 10.0]);
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn bisection_matches_quadratic_formula() {
        // u + u² = 1 has root (√5−1)/2
        let r = scalar_resolvent_bisection(1.0, 1.0, 2.0);
        assert!((r - 0.618_033_988_749_894_9).abs() < 1e-12);
    }

    #[test]
    fn ode_exact_q2() {
        // q=2, k=1: u(t) = 1/(1+t)
        assert!((ode_exact(1.0, 2.0, 0.5) - 2.0 / 3.0).abs() < 1e-15);
    }
}
