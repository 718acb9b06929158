use crate::error::{Error, Result};
use crate::linalg::matrix::DenseMatrix;
use crate::linalg::svd::{singular_values, svd};
use crate::scalar::Scalar;

/// Relative cutoff below which singular values are dropped by the
/// pseudoinverse in [`solve_symmetric`].
pub const PINV_REL_CUTOFF: f64 = 1e-10;

/// Default relative tolerance for [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SymmetricSolve<T> {
    pub v: Vec<T>,
    /// `‖G v − b‖₂` against the symmetrized `G`.
    pub residual: T,
}

/// Minimum-norm least-squares solution of `G v = b` for symmetric `G`.
///
/// `G` is symmetrized as `(G + Gᵀ)/2` first. Singular values below
/// `1e-10 · s_max` are treated as zero.
pub fn solve_symmetric<T: Scalar>(g: &DenseMatrix<T>, b: &[T]) -> Result<SymmetricSolve<T>> {
    let n = g.rows();
    if g.cols() != n || b.len() != n {
        return Err(Error::DimensionMismatch {
            op: "solve_symmetric",
            left: g.shape(),
            right: (b.len(), 1),
        });
    }
    if n == 0 {
        return Ok(SymmetricSolve {
            v: Vec::new(),
            residual: T::zero(),
        });
    }
    let half = T::lit(0.5);
    let sym = DenseMatrix::from_fn(n, n, |i, j| half * (g[(i, j)] + g[(j, i)]));
    let dec = svd(&sym)?;
    let cutoff = dec.s[0] * T::lit(PINV_REL_CUTOFF);

    // v = V · S⁺ · Uᵀ b
    let utb = dec.u.transpose().mul_vec(b)?;
    let scaled: Vec<T> = utb
        .iter()
        .zip(&dec.s)
        .map(|(&c, &s)| if s > cutoff && s > T::zero() { c / s } else { T::zero() })
        .collect();
    let v = dec.v().mul_vec(&scaled)?;

    let gv = sym.mul_vec(&v)?;
    let residual = gv
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt();
    Ok(SymmetricSolve { v, residual })
}

/// Number of singular values strictly above `rel_tol · s_max`; 0 for the
/// zero matrix.
pub fn numerical_rank<T: Scalar>(a: &DenseMatrix<T>, rel_tol: T) -> Result<usize> {
    if rel_tol <= T::zero() {
        return Err(Error::InvalidParameter(format!(
            "rank tolerance must be positive, got {rel_tol}"
        )));
    }
    if a.is_empty() {
        return Ok(0);
    }
    let s = singular_values(a)?;
    let s_max = s[0];
    if s_max == T::zero() {
        return Ok(0);
    }
    let cutoff = rel_tol * s_max;
    Ok(s.iter().filter(|&&x| x > cutoff).count())
}
