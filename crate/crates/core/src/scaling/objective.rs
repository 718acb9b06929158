use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, svd, DenseMatrix};
use crate::scalar::Scalar;
use crate::scaling::norms::check_shapes;
use crate::scaling::Hyper;

/// Upper-bound surrogate for a pair of alternative adapters:
/// `(L/2) ‖G/L − η G B̃ B̃ᵀ − η Ã Ãᵀ G‖²`, evaluated through the m×n
/// residual as `‖G − Lη (G B̃ B̃ᵀ + Ã Ãᵀ G)‖² / (2L)`.
pub fn adapter_objective<T: Scalar>(
    g: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    hyper: &Hyper<T>,
) -> Result<T> {
    check_shapes(g, a, b)?;
    let g_b_bt = g.matmul(b)?.matmul_t(b)?;
    let a_at_g = a.matmul(&a.t_matmul(g)?)?;
    let mut resid = g.clone();
    resid.axpy(-hyper.l_eta, &g_b_bt)?;
    resid.axpy(-hyper.l_eta, &a_at_g)?;
    Ok(resid.frob_norm_sq() / (T::lit(2.0) * hyper.lipschitz))
}

/// Surrogate under column-wise scaling `Ã = A diag(α)`, `B̃ = B diag(β)`.
pub fn column_objective<T: Scalar>(
    g: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    alpha: &[T],
    beta: &[T],
    hyper: &Hyper<T>,
) -> Result<T> {
    adapter_objective(g, &a.scale_columns(alpha)?, &b.scale_columns(beta)?, hyper)
}

/// Surrogate under scalar scaling; the column objective at constant vectors.
pub fn scalar_objective<T: Scalar>(
    g: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    alpha: T,
    beta: T,
    hyper: &Hyper<T>,
) -> Result<T> {
    let r = a.cols();
    column_objective(g, a, b, &vec![alpha; r], &vec![beta; r], hyper)
}

/// `ℓ(W) + ⟨G, ΔW⟩ + (L/2) ‖ΔW‖²`.
pub fn quad_upper_bound<T: Scalar>(
    loss_at_w: T,
    g: &DenseMatrix<T>,
    delta_w: &DenseMatrix<T>,
    lipschitz: T,
) -> Result<T> {
    if !(lipschitz > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "Lipschitz constant must be positive, got {lipschitz}"
        )));
    }
    Ok(loss_at_w + g.frob_inner(delta_w)? + lipschitz / T::lit(2.0) * delta_w.frob_norm_sq())
}

/// Unrestricted optimal adapters from the rank-2r truncated SVD of `G`:
/// `Ã = U[:, 0..r] / √(Lη)`, `B̃ = V[:, r..2r] / √(Lη)`.
///
/// Requires `numerical_rank(G, rank_tol) ≥ 2r`.
pub fn svd_oracle<T: Scalar>(
    g: &DenseMatrix<T>,
    rank: usize,
    hyper: &Hyper<T>,
    rank_tol: T,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let (m, n) = g.shape();
    let required = 2 * rank;
    if rank == 0 || required > m.min(n) {
        return Err(Error::RankOutOfRange { rank, rows: m, cols: n });
    }
    let found = numerical_rank(g, rank_tol)?;
    if found < required {
        return Err(Error::RankDeficient { required, found });
    }
    let dec = svd(g)?;
    let inv = T::one() / hyper.l_eta.sqrt();
    let a_opt = dec.u.columns(0..rank).scaled(inv);
    let b_opt = dec.v().columns(rank..required).scaled(inv);
    Ok((a_opt, b_opt))
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = DenseMatrix<f64>;

    fn fixture() -> (M, M, M) {
        let g = M::from_fn(5, 4, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let a = M::from_fn(5, 2, |i, j| ((i + j) as f64 * 0.9).cos());
        let b = M::from_fn(4, 2, |i, j| ((2 * i + 3 * j) as f64 * 0.4).sin());
        (g, a, b)
    }

    #[test]
    fn zero_scaling_gives_half_gradient_norm() {
        let (g, a, b) = fixture();
        let h = Hyper::new(1.0, 3.0).unwrap();
        let f = scalar_objective(&g, &a, &b, 0.0, 0.0, &h).unwrap();
        assert!((f - g.frob_norm_sq() / 6.0).abs() < 1e-14);
        let f = column_objective(&g, &a, &b, &[0.0; 2], &[0.0; 2], &h).unwrap();
        assert!((f - g.frob_norm_sq() / 6.0).abs() < 1e-14);
    }

    #[test]
    fn zero_gradient_gives_zero() {
        let (_, a, b) = fixture();
        let h = Hyper::unit();
        assert_eq!(scalar_objective(&M::zeros(5, 4), &a, &b, 1.3, 0.4, &h).unwrap(), 0.0);
    }

    #[test]
    fn constant_vectors_match_scalar_exactly() {
        let (g, a, b) = fixture();
        let h = Hyper::new(0.7, 2.0).unwrap();
        let s = scalar_objective(&g, &a, &b, 0.8, 1.9, &h).unwrap();
        let c = column_objective(&g, &a, &b, &[0.8, 0.8], &[1.9, 1.9], &h).unwrap();
        assert_eq!(s, c);
    }

    #[test]
    fn quad_bound_plugins() {
        let (g, _, _) = fixture();
        assert_eq!(quad_upper_bound(2.0, &g, &M::zeros(5, 4), 4.0).unwrap(), 2.0);
        let step = g.scaled(-0.25);
        let v = quad_upper_bound(2.0, &g, &step, 4.0).unwrap();
        assert!((v - (2.0 - g.frob_norm_sq() / 8.0)).abs() < 1e-13);
        assert!(quad_upper_bound(2.0, &g, &step, 0.0).is_err());
    }

    #[test]
    fn svd_oracle_rejects_low_rank_gradient() {
        // rank one gradient, r = 1 needs rank 2
        let u = M::from_fn(6, 1, |i, _| i as f64 + 1.0);
        let v = M::from_fn(5, 1, |i, _| 1.0 - i as f64 * 0.3);
        let g = u.matmul_t(&v).unwrap();
        let err = svd_oracle(&g, 1, &Hyper::unit(), 1e-6).unwrap_err();
        assert_eq!(err, Error::RankDeficient { required: 2, found: 1 });
        assert!(svd_oracle(&g, 3, &Hyper::unit(), 1e-6).is_err());
    }

    #[test]
    fn svd_oracle_reconstructs_exact_rank_gradient() {
        // exact rank 2r = 4 gradient in 7x6
        let u = M::from_fn(7, 4, |i, j| 1.0 / (i + j + 1) as f64);
        let v = M::from_fn(6, 4, |i, j| (0.3 * (i + 1) as f64).powi(j as i32));
        let g = u.matmul_t(&v).unwrap();
        let h = Hyper::new(2.0, 8.0).unwrap(); // η = 1/4
        let (a, b) = svd_oracle(&g, 2, &h, 1e-6).unwrap();
        let eta = 0.25;
        // −η(G b bᵀ + a aᵀ G) vs −(1/L) G
        let upd = g.matmul(&b).unwrap().matmul_t(&b).unwrap().add(&a.matmul(&a.t_matmul(&g).unwrap()).unwrap()).unwrap();
        let resid = upd.scaled(eta).sub(&g.scaled(1.0 / 8.0)).unwrap();
        assert!(resid.frob_norm() <= 1e-9);
        let scaled = a.scaled(2f64.sqrt());
        let gram = scaled.t_matmul(&scaled).unwrap();
        assert!(gram.sub(&M::identity(2)).unwrap().max_abs() < 1e-12);
    }
}
