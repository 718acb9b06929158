//! Plain GD and AdamW over adapter pairs.
//!
//! Rescaling the adapters column-wise rescales their gradients column-wise,
//! so the moment estimators can be transformed in closed form instead of
//! being reset: `m_A ← m_A diag(β)`, `v_A ← v_A diag(β)²` and symmetrically
//! for `B` with `α`. The step counter is left alone.

use crate::adapter::{AdapterGrads, LoraLayer};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
}

impl<T: Scalar> Default for AdamParams<T> {
    fn default() -> Self {
        Self {
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            weight_decay: T::zero(),
        }
    }
}

/// Uncorrected exponential moving averages of one parameter's gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixMoments<T> {
    pub m: DenseMatrix<T>,
    pub v: DenseMatrix<T>,
}

impl<T: Scalar> MatrixMoments<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            m: DenseMatrix::zeros(rows, cols),
            v: DenseMatrix::zeros(rows, cols),
        }
    }

    fn accumulate(&mut self, g: &DenseMatrix<T>, params: &AdamParams<T>) {
        let one = T::one();
        let m = self.m.data_mut();
        for (mi, &gi) in m.iter_mut().zip(g.data()) {
            *mi = params.beta1 * *mi + (one - params.beta1) * gi;
        }
        let v = self.v.data_mut();
        for (vi, &gi) in v.iter_mut().zip(g.data()) {
            *vi = params.beta2 * *vi + (one - params.beta2) * gi * gi;
        }
    }

    fn scale_columns(&mut self, d: &[T]) -> Result<()> {
        let sq: Vec<T> = d.iter().map(|&x| x * x).collect();
        self.m = self.m.scale_columns(d)?;
        self.v = self.v.scale_columns(&sq)?;
        Ok(())
    }
}

/// AdamW state for the pair `(A, B)` of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState<T> {
    pub a: MatrixMoments<T>,
    pub b: MatrixMoments<T>,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub params: AdamParams<T>,
}

impl<T: Scalar> MomentState<T> {
    pub fn new(layer: &LoraLayer<T>, params: AdamParams<T>) -> Self {
        let (m, n) = layer.shape();
        let r = layer.rank();
        Self {
            a: MatrixMoments::zeros(m, r),
            b: MatrixMoments::zeros(n, r),
            step: 0,
            params,
        }
    }

    /// Moments after `Ã = α A`, `B̃ = β B`.
    pub fn rescale_scalar(&mut self, alpha: T, beta: T) {
        self.a.m.scale_mut(beta);
        self.a.v.scale_mut(beta * beta);
        self.b.m.scale_mut(alpha);
        self.b.v.scale_mut(alpha * alpha);
    }

    /// Moments after `Ã = A diag(α)`, `B̃ = B diag(β)`.
    pub fn rescale_columns(&mut self, alpha: &[T], beta: &[T]) -> Result<()> {
        let r = self.a.m.cols();
        if alpha.len() != r || beta.len() != r {
            return Err(Error::DimensionMismatch {
                op: "rescale_columns",
                left: (alpha.len(), beta.len()),
                right: (r, r),
            });
        }
        self.a.scale_columns(beta)?;
        self.b.scale_columns(alpha)?;
        Ok(())
    }
}

/// `param ← param − lr · grad`.
pub fn gd_update<T: Scalar>(param: &mut DenseMatrix<T>, grad: &DenseMatrix<T>, lr: T) -> Result<()> {
    param.axpy(-lr, grad)
}

/// One AdamW update of a single matrix; `step` is the 1-based count used for
/// bias correction.
pub fn adamw_update<T: Scalar>(
    param: &mut DenseMatrix<T>,
    grad: &DenseMatrix<T>,
    moments: &mut MatrixMoments<T>,
    params: &AdamParams<T>,
    step: u64,
    lr: T,
) -> Result<()> {
    if param.shape() != grad.shape() || moments.m.shape() != grad.shape() {
        return Err(Error::DimensionMismatch {
            op: "adamw_update",
            left: param.shape(),
            right: grad.shape(),
        });
    }
    moments.accumulate(grad, params);
    let t = i32::try_from(step).unwrap_or(i32::MAX);
    let bc1 = T::one() - params.beta1.powi(t);
    let bc2 = T::one() - params.beta2.powi(t);
    let decay = T::one() - lr * params.weight_decay;
    let (m, v) = (moments.m.data(), moments.v.data());
    for ((p, &mi), &vi) in param.data_mut().iter_mut().zip(m).zip(v) {
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        *p = *p * decay - lr * m_hat / (v_hat.sqrt() + params.eps);
    }
    Ok(())
}

/// `A ← A − lr·g_A`, `B ← B − lr·g_B`.
pub fn gd_step<T: Scalar>(layer: &mut LoraLayer<T>, grads: &AdapterGrads<T>, lr: T) -> Result<()> {
    check_grads(layer, grads)?;
    gd_update(&mut layer.a, &grads.g_a, lr)?;
    gd_update(&mut layer.b, &grads.g_b, lr)
}

/// Bias-corrected AdamW step on both adapters.
pub fn adamw_step<T: Scalar>(
    layer: &mut LoraLayer<T>,
    grads: &AdapterGrads<T>,
    state: &mut MomentState<T>,
    lr: T,
) -> Result<()> {
    check_grads(layer, grads)?;
    state.step += 1;
    let params = state.params;
    adamw_update(&mut layer.a, &grads.g_a, &mut state.a, &params, state.step, lr)?;
    adamw_update(&mut layer.b, &grads.g_b, &mut state.b, &params, state.step, lr)
}

pub fn rescale_moments_scalar<T: Scalar>(state: &mut MomentState<T>, alpha: T, beta: T) {
    state.rescale_scalar(alpha, beta);
}

pub fn rescale_moments_column<T: Scalar>(
    state: &mut MomentState<T>,
    alpha: &[T],
    beta: &[T],
) -> Result<()> {
    state.rescale_columns(alpha, beta)
}

fn check_grads<T: Scalar>(layer: &LoraLayer<T>, grads: &AdapterGrads<T>) -> Result<()> {
    if grads.g_a.shape() != layer.a.shape() || grads.g_b.shape() != layer.b.shape() {
        return Err(Error::DimensionMismatch {
            op: "adapter gradients",
            left: grads.g_a.shape(),
            right: grads.g_b.shape(),
        });
    }
    Ok(())
}
