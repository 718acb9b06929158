use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

/// The two adapter-space projections of the gradient, `Gᵀ A` (n×r) and
/// `G B` (m×r). Everything the solvers need is built from these plus the
/// adapters themselves.
#[derive(Debug, Clone)]
pub struct Projections<T> {
    pub gt_a: DenseMatrix<T>,
    pub g_b: DenseMatrix<T>,
}

impl<T: Scalar> Projections<T> {
    pub fn new(g: &DenseMatrix<T>, a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<Self> {
        check_shapes(g, a, b)?;
        Ok(Self {
            gt_a: g.t_matmul(a)?,
            g_b: g.matmul(b)?,
        })
    }
}

pub(crate) fn check_shapes<T: Scalar>(
    g: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
) -> Result<()> {
    let (m, n) = g.shape();
    if a.rows() != m || b.rows() != n || a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            op: "adapter/gradient shapes",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Squared Frobenius norms entering the scalar scaling coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionNorms<T> {
    /// `‖Aᵀ G‖²`
    pub at_g: T,
    /// `‖G B‖²`
    pub g_b: T,
    /// `‖A Aᵀ G‖²`
    pub a_at_g: T,
    /// `‖G B Bᵀ‖²`
    pub g_b_bt: T,
    /// `‖Aᵀ G B‖²`
    pub at_g_b: T,
}

/// Computes the five norms in `O((m + n) r²)` once the projections exist,
/// using `‖A Aᵀ G‖² = Σ ((Gᵀ A)(Aᵀ A)) ⊙ (Gᵀ A)` and its mirror for `B`.
pub fn frob_norms_fast<T: Scalar>(
    proj: &Projections<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
) -> Result<ProjectionNorms<T>> {
    let ata = a.t_matmul(a)?;
    let btb = b.t_matmul(b)?;
    let a_at_g = proj.gt_a.matmul(&ata)?.hadamard(&proj.gt_a)?.sum();
    let g_b_bt = proj.g_b.matmul(&btb)?.hadamard(&proj.g_b)?.sum();
    let at_g_b = a.t_matmul(&proj.g_b)?.frob_norm_sq();
    Ok(ProjectionNorms {
        at_g: proj.gt_a.frob_norm_sq(),
        g_b: proj.g_b.frob_norm_sq(),
        // trace forms can dip below zero by roundoff
        a_at_g: a_at_g.max(T::zero()),
        g_b_bt: g_b_bt.max(T::zero()),
        at_g_b,
    })
}

/// Same quantities through explicit m×n products.
pub fn frob_norms_direct<T: Scalar>(
    g: &DenseMatrix<T>,
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
) -> Result<ProjectionNorms<T>> {
    check_shapes(g, a, b)?;
    let at_g = a.t_matmul(g)?;
    let g_b = g.matmul(b)?;
    Ok(ProjectionNorms {
        at_g: at_g.frob_norm_sq(),
        g_b: g_b.frob_norm_sq(),
        a_at_g: a.matmul(&at_g)?.frob_norm_sq(),
        g_b_bt: g_b.matmul_t(b)?.frob_norm_sq(),
        at_g_b: at_g.matmul(b)?.frob_norm_sq(),
    })
}

/// `C^A`, `C^B` and `C` of the scalar problem together with the norms they
/// were built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarCoefficients<T> {
    pub c_a: T,
    pub c_b: T,
    pub c: T,
    pub norms: ProjectionNorms<T>,
}

impl<T: Scalar> ScalarCoefficients<T> {
    pub fn from_norms(norms: ProjectionNorms<T>) -> Self {
        let ProjectionNorms {
            at_g,
            g_b,
            a_at_g,
            g_b_bt,
            at_g_b,
        } = norms;
        Self {
            c_a: at_g * g_b_bt - g_b * at_g_b,
            c_b: g_b * a_at_g - at_g * at_g_b,
            c: a_at_g * g_b_bt - at_g_b * at_g_b,
            norms,
        }
    }
}
