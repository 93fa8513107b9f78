//! Thomas algorithm for the tridiagonal systems of the implicit diffusion steps.

/// Solves `A x = rhs` in place, where `A` has sub-diagonal `lower` (`lower[0]`
/// unused), diagonal `diag` and super-diagonal `upper` (`upper[n-1]` unused).
///
/// No pivoting: callers only pass diagonally dominant M-matrices.
pub fn solve_in_place(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    debug_assert!(lower.len() == n && diag.len() == n && upper.len() == n);
    if n == 0 {
        return;
    }
    let mut c_prime = vec![0.0; n];

    let mut denom = diag[0];
    c_prime[0] = upper[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c_prime[i - 1];
        c_prime[i] = upper[i] / denom;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c_prime[i] * rhs[i + 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut v = diag[i] * x[i];
                if i > 0 {
                    v += lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += upper[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    #[test]
    fn identity_system() {
        let mut rhs = vec![1.0, 2.0, 3.0];
        solve_in_place(&[0.0; 3], &[1.0; 3], &[0.0; 3], &mut rhs);
        assert_eq!(rhs, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn laplacian_like_residual() {
        let n = 50;
        let lower = vec![-0.7; n];
        let upper = vec![-0.7; n];
        let diag: Vec<f64> = (0..n).map(|i| 2.4 + 0.01 * i as f64).collect();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut rhs = apply(&lower, &diag, &upper, &x_true);
        solve_in_place(&lower, &diag, &upper, &mut rhs);
        for (a, b) in rhs.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn single_unknown() {
        let mut rhs = vec![6.0];
        solve_in_place(&[0.0], &[3.0], &[0.0], &mut rhs);
        assert_eq!(rhs, vec![2.0]);
    }
}
