//! Thin dense linear-algebra helpers over `nalgebra`.
//!
//! Chains here are small (tens of states), so everything is a dense LU
//! solve with partial pivoting, followed by a residual check to catch
//! numerically singular systems.

use nalgebra::{DMatrix, DVector};

/// Relative residual above which a solve is declared numerically singular.
const RESIDUAL_TOL: f64 = 1e-8;

/// Solves `A x = b` for several right-hand sides via one LU factorization.
/// Returns `None` when the factorization fails or any residual
/// `||A x - b||_inf / max(1, ||b||_inf)` exceeds the tolerance.
pub(crate) fn solve_many(a: &DMatrix<f64>, rhs: &[DVector<f64>]) -> Option<Vec<DVector<f64>>> {
    let lu = a.clone().lu();
    let mut out = Vec::with_capacity(rhs.len());
    for b in rhs {
        let x = lu.solve(b)?;
        let resid = (a * &x - b).amax();
        let scale = b.amax().max(1.0);
        if !resid.is_finite() || resid > RESIDUAL_TOL * scale {
            return None;
        }
        out.push(x);
    }
    Some(out)
}

/// Solves `A x = b` once.
pub(crate) fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    solve_many(a, std::slice::from_ref(b)).map(|mut v| v.pop().unwrap())
}

/// Stationary distribution of an irreducible row-stochastic matrix `p`
/// (row vector `nu` with `nu P = nu`, `sum nu = 1`), by replacing one
/// equation of `(P^T - I) nu = 0` with the normalization row.
///
/// A direct solve is used rather than power iteration: the chains this is
/// applied to may be periodic, where power iteration oscillates.
pub(crate) fn stationary_distribution(p: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = p.nrows();
    if n == 0 {
        return None;
    }
    let mut a = p.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = solve(&a, &b)?;
    // Clamp away sign noise from the solve.
    let mut nu: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = nu.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return None;
    }
    for v in &mut nu {
        *v /= total;
    }
    Some(nu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_of_two_cycle() {
        // Periodic chain: power iteration would oscillate, the solve must not.
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let nu = stationary_distribution(&p).unwrap();
        assert!((nu[0] - 0.5).abs() < 1e-14);
        assert!((nu[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn stationary_matches_balance() {
        let p = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.2, 0.3, 0.5, 0.4, 0.0, 0.6]);
        let nu = stationary_distribution(&p).unwrap();
        for j in 0..3 {
            let flow: f64 = (0..3).map(|i| nu[i] * p[(i, j)]).sum();
            assert!((flow - nu[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_system_detected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        assert!(solve(&a, &b).is_none());
    }
}
