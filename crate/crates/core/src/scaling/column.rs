//! Column-wise scaling `Ã = A diag(α)`, `B̃ = B diag(β)`.
//!
//! Stationarity in `(φ, ψ) = (α∘², β∘²)` is the 2r×2r system
//! `[(S_Aᵀ S_A) ⊙ (S_Bᵀ S_B)] v = λ` with `S_A = [A, GB]`,
//! `S_B = [GᵀA, B]` and `λ` the squared row norms of `AᵀG` and `BᵀGᵀ`;
//! then `(φ, ψ) = v / (Lη)`.

use crate::error::Result;
use crate::linalg::{solve_symmetric, DenseMatrix};
use crate::scalar::Scalar;
use crate::scaling::norms::Projections;
use crate::scaling::{Hyper, NONNEG_TOL};

#[derive(Debug, Clone)]
pub struct ColumnSystem<T> {
    /// 2r×2r, symmetric positive semidefinite.
    pub gram: DenseMatrix<T>,
    pub lambda: Vec<T>,
    /// Minimum-norm solution of `gram · v = lambda`.
    pub v: Vec<T>,
    pub residual: T,
    pub nonneg: bool,
}

pub fn build_column_system<T: Scalar>(
    g: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
) -> Result<ColumnSystem<T>> {
    let proj = Projections::new(g, a, b)?;
    build_column_system_from(&proj, a, b)
}

pub fn build_column_system_from<T: Scalar>(
    proj: &Projections<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
) -> Result<ColumnSystem<T>> {
    let s_a = a.hstack(&proj.g_b)?;
    let s_b = proj.gt_a.hstack(b)?;
    let gram = s_a.t_matmul(&s_a)?.hadamard(&s_b.t_matmul(&s_b)?)?;
    let mut lambda = proj.gt_a.col_norms_sq();
    lambda.extend(proj.g_b.col_norms_sq());
    let sol = solve_symmetric(&gram, &lambda)?;
    let tol = T::lit(NONNEG_TOL);
    let nonneg = sol.v.iter().all(|&x| x >= -tol);
    Ok(ColumnSystem {
        gram,
        lambda,
        v: sol.v,
        residual: sol.residual,
        nonneg,
    })
}

/// `[α; β] = √(v / (Lη))` when `v ≥ 0`, otherwise `None`.
pub fn solve_column<T: Scalar>(system: &ColumnSystem<T>, hyper: &Hyper<T>) -> Option<(Vec<T>, Vec<T>)> {
    if !system.nonneg {
        return None;
    }
    let r = system.v.len() / 2;
    let root: Vec<T> = system
        .v
        .iter()
        .map(|&x| (x.max(T::zero()) / hyper.l_eta).sqrt())
        .collect();
    let beta = root[r..].to_vec();
    let mut alpha = root;
    alpha.truncate(r);
    Some((alpha, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::scalar::solve_scalar;

    type M = DenseMatrix<f64>;

    #[test]
    fn identity_gram_passes_lambda_through() {
        let sys = ColumnSystem {
            gram: M::identity(4),
            lambda: vec![1.0; 4],
            v: vec![1.0; 4],
            residual: 0.0,
            nonneg: true,
        };
        let (alpha, beta) = solve_column(&sys, &Hyper::unit()).unwrap();
        assert_eq!(alpha, vec![1.0, 1.0]);
        assert_eq!(beta, vec![1.0, 1.0]);
        let h = Hyper::new(4.0, 1.0).unwrap();
        let (alpha, _) = solve_column(&sys, &h).unwrap();
        assert_eq!(alpha, vec![0.5, 0.5]);
    }

    #[test]
    fn negative_entry_falls_back() {
        let sys = ColumnSystem {
            gram: M::identity(2),
            lambda: vec![1.0, -1e-3],
            v: vec![1.0, -1e-3],
            residual: 0.0,
            nonneg: false,
        };
        assert!(solve_column(&sys, &Hyper::unit()).is_none());
    }

    #[test]
    fn tiny_negative_entries_are_clamped() {
        let sys = ColumnSystem {
            gram: M::identity(2),
            lambda: vec![1.0, 0.0],
            v: vec![1.0, -1e-13],
            residual: 0.0,
            nonneg: true,
        };
        let (_, beta) = solve_column(&sys, &Hyper::unit()).unwrap();
        assert_eq!(beta, vec![0.0]);
    }

    #[test]
    fn zero_gradient_gives_zero_solution() {
        let a = M::from_fn(4, 2, |i, j| (i + j) as f64);
        let b = M::from_fn(3, 2, |i, j| (i * j) as f64 + 1.0);
        let sys = build_column_system(&M::zeros(4, 3), &a, &b).unwrap();
        assert!(sys.lambda.iter().all(|&x| x == 0.0));
        assert!(sys.v.iter().all(|&x| x == 0.0));
        assert!(sys.nonneg);
    }

    #[test]
    fn rank_one_matches_scalar_solution() {
        let g = M::from_fn(5, 4, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let a = M::from_fn(5, 1, |i, _| (i as f64 * 0.9).cos());
        let b = M::from_fn(4, 1, |i, _| (i as f64 * 0.4 + 0.3).sin());
        let h = Hyper::new(1.5, 1.0).unwrap();
        let sys = build_column_system(&g, &a, &b).unwrap();
        let scalar = solve_scalar(&g, &a, &b, &h).unwrap();
        if let Some((alpha, beta)) = solve_column(&sys, &h) {
            assert!((alpha[0] - scalar.alpha).abs() < 1e-9);
            assert!((beta[0] - scalar.beta).abs() < 1e-9);
        } else {
            panic!("expected a nonnegative rank-one solution");
        }
    }
}
