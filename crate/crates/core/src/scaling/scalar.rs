//! Closed-form optimal scalar scaling `Ã = α A`, `B̃ = β B`.
//!
//! In `(p, q) = (α², β²)` the surrogate is a convex quadratic
//! `‖G‖² − 2Lη(p‖AᵀG‖² + q‖GB‖²) + (Lη)²(p²‖AAᵀG‖² + q²‖GBBᵀ‖² + 2pq‖AᵀGB‖²)`
//! (over 2L), and the optimum on `p, q ≥ 0` falls in one of three cases.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;
use crate::scaling::norms::{frob_norms_fast, Projections, ScalarCoefficients};
use crate::scaling::{gradients_vanish, Hyper, C_ZERO_REL_TOL};

/// Which branch produced a scalar solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarCase {
    /// `C > 0`, `C^A ≥ 0`, `C^B ≥ 0`: both factors nonzero.
    Both,
    /// Only `A` kept, `β = 0`.
    AlphaOnly,
    /// Only `B` kept, `α = 0`.
    BetaOnly,
}

/// Order in which the branches are tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CaseOrder {
    #[default]
    Standard,
    /// Deliberately wrong: takes the `A`-only branch whenever `AᵀG ≠ 0`.
    /// Exists so the self-test can prove it detects a broken solver.
    InjectedFault,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarSolution<T> {
    pub alpha: T,
    pub beta: T,
    pub case: ScalarCase,
    pub coefficients: ScalarCoefficients<T>,
}

pub fn solve_scalar<T: Scalar>(
    g: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    hyper: &Hyper<T>,
) -> Result<ScalarSolution<T>> {
    let proj = Projections::new(g, a, b)?;
    solve_scalar_from(&proj, a, b, g.frob_norm(), hyper, CaseOrder::Standard)
}

/// Solver entry point for callers that already hold the projections.
pub fn solve_scalar_from<T: Scalar>(
    proj: &Projections<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    g_norm: T,
    hyper: &Hyper<T>,
    order: CaseOrder,
) -> Result<ScalarSolution<T>> {
    let norms = frob_norms_fast(proj, a, b)?;
    if gradients_vanish(norms.at_g, norms.g_b, g_norm) {
        return Err(Error::ZeroGradients);
    }
    let coefficients = ScalarCoefficients::from_norms(norms);
    let ScalarCoefficients { c_a, c_b, c, .. } = coefficients;
    let zero = T::zero();
    let l_eta = hyper.l_eta;

    let alpha_only = || (norms.at_g / (l_eta * norms.a_at_g)).sqrt();
    let beta_only = || (norms.g_b / (l_eta * norms.g_b_bt)).sqrt();
    let has_a = norms.at_g > zero && norms.a_at_g > zero;
    let has_b = norms.g_b > zero && norms.g_b_bt > zero;

    let pick = |alpha, beta, case| ScalarSolution {
        alpha,
        beta,
        case,
        coefficients,
    };

    if order == CaseOrder::InjectedFault && has_a {
        return Ok(pick(alpha_only(), zero, ScalarCase::AlphaOnly));
    }

    // Cauchy-Schwarz gives C ≥ 0; treat it as zero relative to its scale.
    let c_is_zero = c <= T::lit(C_ZERO_REL_TOL) * norms.a_at_g * norms.g_b_bt;

    if !c_is_zero && c_a >= zero && c_b >= zero {
        let alpha = (c_a / (l_eta * c)).sqrt();
        let beta = (c_b / (l_eta * c)).sqrt();
        return Ok(pick(alpha, beta, ScalarCase::Both));
    }
    if has_a && ((c_a > zero && c_b <= zero) || c_is_zero) {
        return Ok(pick(alpha_only(), zero, ScalarCase::AlphaOnly));
    }
    if has_b && ((c_a <= zero && c_b > zero) || c_is_zero) {
        return Ok(pick(zero, beta_only(), ScalarCase::BetaOnly));
    }

    // Roundoff left both C^A and C^B marginally negative; compare the two
    // single-factor optima directly. Their reduction from f(0, 0) is
    // ‖AᵀG‖⁴ / ‖AAᵀG‖² and ‖GB‖⁴ / ‖GBBᵀ‖² respectively.
    let gain_a = if has_a { norms.at_g * norms.at_g / norms.a_at_g } else { zero };
    let gain_b = if has_b { norms.g_b * norms.g_b / norms.g_b_bt } else { zero };
    if gain_a >= gain_b && has_a {
        Ok(pick(alpha_only(), zero, ScalarCase::AlphaOnly))
    } else {
        Ok(pick(zero, beta_only(), ScalarCase::BetaOnly))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::objective::scalar_objective;

    type M = DenseMatrix<f64>;

    fn fixture() -> (M, M, M) {
        let g = M::from_fn(6, 5, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let a = M::from_fn(6, 2, |i, j| ((i + 4 * j) as f64 * 0.9).cos());
        let b = M::from_fn(5, 2, |i, j| ((2 * i + 3 * j) as f64 * 0.4).sin());
        (g, a, b)
    }

    #[test]
    fn zero_b_takes_alpha_only_branch() {
        let (g, a, _) = fixture();
        let b = M::zeros(5, 2);
        let h = Hyper::new(2.0, 1.0).unwrap();
        let sol = solve_scalar(&g, &a, &b, &h).unwrap();
        assert_eq!(sol.case, ScalarCase::AlphaOnly);
        assert_eq!(sol.beta, 0.0);
        assert_eq!((sol.coefficients.c_a, sol.coefficients.c_b, sol.coefficients.c), (0.0, 0.0, 0.0));
        let at_g = a.t_matmul(&g).unwrap();
        let expect = at_g.frob_norm() / (2f64.sqrt() * a.matmul(&at_g).unwrap().frob_norm());
        assert!((sol.alpha - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_a_takes_beta_only_branch() {
        let (g, _, b) = fixture();
        let sol = solve_scalar(&g, &M::zeros(6, 2), &b, &Hyper::unit()).unwrap();
        assert_eq!(sol.case, ScalarCase::BetaOnly);
        assert_eq!(sol.alpha, 0.0);
        assert!(sol.beta > 0.0);
    }

    #[test]
    fn vanishing_projections_error() {
        let (_, a, b) = fixture();
        let err = solve_scalar(&M::zeros(6, 5), &a, &b, &Hyper::unit()).unwrap_err();
        assert_eq!(err, Error::ZeroGradients);
    }

    #[test]
    fn generic_instance_is_stationary() {
        let (g, a, b) = fixture();
        let h = Hyper::unit();
        let sol = solve_scalar(&g, &a, &b, &h).unwrap();
        assert_eq!(sol.case, ScalarCase::Both);
        assert!(sol.coefficients.c > 0.0);
        let f0 = scalar_objective(&g, &a, &b, sol.alpha, sol.beta, &h).unwrap();
        for (da, db) in [(1e-4, 0.0), (-1e-4, 0.0), (0.0, 1e-4), (0.0, -1e-4)] {
            let f = scalar_objective(&g, &a, &b, sol.alpha + da, sol.beta + db, &h).unwrap();
            assert!(f >= f0 - 1e-15);
        }
    }

    #[test]
    fn injected_fault_changes_generic_answer() {
        let (g, a, b) = fixture();
        let proj = Projections::new(&g, &a, &b).unwrap();
        let h = Hyper::unit();
        let bad = solve_scalar_from(&proj, &a, &b, g.frob_norm(), &h, CaseOrder::InjectedFault).unwrap();
        let good = solve_scalar(&g, &a, &b, &h).unwrap();
        let f_bad = scalar_objective(&g, &a, &b, bad.alpha, bad.beta, &h).unwrap();
        let f_good = scalar_objective(&g, &a, &b, good.alpha, good.beta, &h).unwrap();
        assert!(f_bad > f_good);
    }
}
