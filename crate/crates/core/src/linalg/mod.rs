//! Dense real linear algebra: products, norms, SVD, symmetric solves and
//! numerical rank.

mod matrix;
mod solve;
mod svd;

pub use matrix::DenseMatrix;
pub use solve::{numerical_rank, solve_symmetric, SymmetricSolve, DEFAULT_RANK_TOL, PINV_REL_CUTOFF};
pub use svd::{singular_values, svd, SvdResult};

use crate::error::Result;
use crate::scalar::Scalar;

pub fn matmul<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    a.matmul(b)
}

pub fn frob_norm<T: Scalar>(a: &DenseMatrix<T>) -> T {
    a.frob_norm()
}

pub fn frob_inner<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<T> {
    a.frob_inner(b)
}

pub fn hadamard<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    a.hadamard(b)
}

pub fn row_norms_sq<T: Scalar>(a: &DenseMatrix<T>) -> Vec<T> {
    a.row_norms_sq()
}
