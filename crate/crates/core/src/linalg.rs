//! Small dense linear-algebra helpers on top of nalgebra.

use crate::{Error, Matrix, Result, Vector};

/// Checks that every eigenvalue of `a` has strictly negative real part.
pub fn check_hurwitz(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::dim(a.nrows(), a.ncols(), "state matrix must be square"));
    }
    let eigs = a.clone().complex_eigenvalues();
    // Report the rightmost eigenvalue, since that one decides stability.
    if let Some(worst) = eigs.iter().max_by(|p, q| p.re.total_cmp(&q.re)) {
        if worst.re >= 0.0 || !worst.re.is_finite() {
            return Err(Error::NotHurwitz {
                re: worst.re,
                im: worst.im,
            });
        }
    }
    Ok(())
}

/// Solves the continuous Lyapunov equation `Aᵀ P + P A = -Q` for symmetric `P`.
///
/// Uses the Kronecker form `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = -vec(Q)`, which is fine
/// for the handful of states these plants carry.
pub fn solve_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    check_hurwitz(a)?;
    let n = a.nrows();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::dim(n, q.nrows(), "Lyapunov right-hand side"));
    }
    let at = a.transpose();
    let eye = Matrix::identity(n, n);
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = Vector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator is singular".into()))?;
    let p = Matrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Induced ∞-norm (largest absolute row sum).
pub fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Componentwise-max norm of a vector.
pub fn sup_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Central-difference Jacobian of `f` at `x`.
pub fn numerical_jacobian(f: impl Fn(&Vector) -> Vector, x: &Vector, step: f64) -> Matrix {
    let fx = f(x);
    let mut jac = Matrix::zeros(fx.len(), x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (f(&xp) - f(&xm)) / (2.0 * step);
        jac.set_column(j, &col);
    }
    jac
}

pub(crate) fn check_len(v: &Vector, expected: usize, context: &'static str) -> Result<()> {
    if v.len() != expected {
        return Err(Error::dim(expected, v.len(), context));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lyapunov_scalar_cases() {
        let p = solve_lyapunov(&(-Matrix::identity(2, 2)), &Matrix::identity(2, 2)).unwrap();
        assert_relative_eq!(p, Matrix::identity(2, 2) * 0.5, epsilon = 1e-14);
        let p = solve_lyapunov(&(Matrix::identity(2, 2) * -2.0), &Matrix::identity(2, 2)).unwrap();
        assert_relative_eq!(p, Matrix::identity(2, 2) * 0.25, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_residual_nonsymmetric() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]);
        let p = solve_lyapunov(&a, &Matrix::identity(2, 2)).unwrap();
        let res = a.transpose() * &p + &p * &a + Matrix::identity(2, 2);
        assert!(res.norm() < 1e-12);
    }

    #[test]
    fn hurwitz_rejects_unstable() {
        let err = check_hurwitz(&Matrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::NotHurwitz { re, .. } if (re - 1.0).abs() < 1e-12));
        assert!(check_hurwitz(&Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0])).is_ok());
    }

    #[test]
    fn norms() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.5]);
        assert_eq!(inf_norm(&m), 3.0);
        assert_relative_eq!(spectral_norm(&Matrix::identity(3, 3)), 1.0, epsilon = 1e-14);
        assert_eq!(sup_norm(&Vector::from_vec(vec![1.0, -3.0])), 3.0);
    }
}
