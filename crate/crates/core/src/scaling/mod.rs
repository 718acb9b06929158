//! Optimal rescaling of the adapters before each merge-and-refactor.
//!
//! Every solver minimizes the quadratic upper bound on the next-step loss,
//! which reduces to matching `−(1/L)∇ℓ(W)` with the low-rank increment the
//! rescaled adapters would produce. [`choose_scaling`] tries the column-wise
//! system first and falls back to the scalar closed form.

mod column;
mod norms;
mod objective;
mod scalar;

pub use column::{build_column_system, build_column_system_from, solve_column, ColumnSystem};
pub use norms::{
    frob_norms_direct, frob_norms_fast, ProjectionNorms, Projections, ScalarCoefficients,
};
pub use objective::{
    adapter_objective, column_objective, quad_upper_bound, scalar_objective, svd_oracle,
};
pub use scalar::{solve_scalar, solve_scalar_from, CaseOrder, ScalarCase, ScalarSolution};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

/// Entries of `v` down to `-NONNEG_TOL` still count as nonnegative and are
/// clamped to zero.
pub const NONNEG_TOL: f64 = 1e-12;
/// Adapter gradients below `ZERO_GRAD_REL_TOL · ‖G‖` count as vanished.
pub const ZERO_GRAD_REL_TOL: f64 = 1e-14;
/// `C ≤ C_ZERO_REL_TOL · ‖AAᵀG‖²‖GBBᵀ‖²` is treated as `C = 0`.
pub const C_ZERO_REL_TOL: f64 = 1e-12;

/// Step-size knobs of the surrogate.
///
/// The minimizers only see the product `l_eta = L·η`; `lipschitz` sets the
/// overall `1/(2L)` factor of objective values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper<T> {
    pub l_eta: T,
    pub lipschitz: T,
}

impl<T: Scalar> Hyper<T> {
    pub fn new(l_eta: T, lipschitz: T) -> Result<Self> {
        for (name, x) in [("l_eta", l_eta), ("lipschitz", lipschitz)] {
            if !(x > T::zero()) || !x.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {x}")));
            }
        }
        Ok(Self { l_eta, lipschitz })
    }

    pub fn unit() -> Self {
        Self {
            l_eta: T::one(),
            lipschitz: T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// `AᵀG` and `GB` both vanish; nothing to rescale.
    ZeroGradients,
    /// Scaling is turned off for this step.
    Disabled,
}

/// Result of a scaling decision.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalingOutcome<T> {
    ColumnWise { alpha: Vec<T>, beta: Vec<T> },
    Scalar { alpha: T, beta: T },
    Skipped(SkipReason),
}

impl<T: Scalar> ScalingOutcome<T> {
    /// Short label used in metric output.
    pub fn mode(&self) -> &'static str {
        match self {
            ScalingOutcome::ColumnWise { .. } => "column",
            ScalingOutcome::Scalar { .. } => "scalar",
            ScalingOutcome::Skipped(SkipReason::Disabled) => "none",
            ScalingOutcome::Skipped(SkipReason::ZeroGradients) => "skipped",
        }
    }

    /// The rescaled adapters, or `None` when skipped.
    pub fn apply(
        &self,
        a: &DenseMatrix<T>,
        b: &DenseMatrix<T>,
    ) -> Result<Option<(DenseMatrix<T>, DenseMatrix<T>)>> {
        Ok(match self {
            ScalingOutcome::ColumnWise { alpha, beta } => {
                Some((a.scale_columns(alpha)?, b.scale_columns(beta)?))
            }
            ScalingOutcome::Scalar { alpha, beta } => Some((a.scaled(*alpha), b.scaled(*beta))),
            ScalingOutcome::Skipped(_) => None,
        })
    }
}

pub(crate) fn gradients_vanish<T: Scalar>(at_g_sq: T, g_b_sq: T, g_norm: T) -> bool {
    let tol = T::lit(ZERO_GRAD_REL_TOL) * g_norm;
    at_g_sq.sqrt() <= tol && g_b_sq.sqrt() <= tol
}

/// Column-wise scaling when its system has a nonnegative solution, otherwise
/// the scalar optimum; skipped when both adapter gradients vanish.
pub fn choose_scaling<T: Scalar>(
    g: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    hyper: &Hyper<T>,
) -> Result<ScalingOutcome<T>> {
    choose_scaling_with(g, a, b, hyper, CaseOrder::Standard)
}

pub fn choose_scaling_with<T: Scalar>(
    g: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    hyper: &Hyper<T>,
    order: CaseOrder,
) -> Result<ScalingOutcome<T>> {
    let proj = Projections::new(g, a, b)?;
    let g_norm = g.frob_norm();
    if gradients_vanish(proj.gt_a.frob_norm_sq(), proj.g_b.frob_norm_sq(), g_norm) {
        return Ok(ScalingOutcome::Skipped(SkipReason::ZeroGradients));
    }
    let system = build_column_system_from(&proj, a, b)?;
    if let Some((alpha, beta)) = solve_column(&system, hyper) {
        return Ok(ScalingOutcome::ColumnWise { alpha, beta });
    }
    match solve_scalar_from(&proj, a, b, g_norm, hyper, order) {
        Ok(sol) => Ok(ScalingOutcome::Scalar {
            alpha: sol.alpha,
            beta: sol.beta,
        }),
        Err(Error::ZeroGradients) => Ok(ScalingOutcome::Skipped(SkipReason::ZeroGradients)),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = DenseMatrix<f64>;

    #[test]
    fn hyper_validation() {
        assert!(Hyper::new(0.0, 1.0).is_err());
        assert!(Hyper::new(1.0, f64::INFINITY).is_err());
        assert!(Hyper::new(0.5, 2.0).is_ok());
    }

    #[test]
    fn zero_gradient_is_skipped() {
        let a = M::filled(3, 1, 1.0);
        let b = M::filled(2, 1, 1.0);
        let out = choose_scaling(&M::zeros(3, 2), &a, &b, &Hyper::unit()).unwrap();
        assert_eq!(out, ScalingOutcome::Skipped(SkipReason::ZeroGradients));
        assert_eq!(out.mode(), "skipped");
        assert!(out.apply(&a, &b).unwrap().is_none());
    }

    #[test]
    fn modes() {
        let col: ScalingOutcome<f64> = ScalingOutcome::ColumnWise { alpha: vec![], beta: vec![] };
        assert_eq!(col.mode(), "column");
        assert_eq!(ScalingOutcome::Scalar { alpha: 1.0, beta: 1.0 }.mode(), "scalar");
        assert_eq!(ScalingOutcome::<f64>::Skipped(SkipReason::Disabled).mode(), "none");
    }
}
