use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adapter::LoraLayer;
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, singular_values, DenseMatrix};
use crate::scalar::Scalar;

/// `ℓ(W) = ½ ‖Y − W X‖²` with `X` n×k and `Y` m×k.
#[derive(Debug, Clone)]
pub struct LinRegTask<T> {
    pub x: DenseMatrix<T>,
    pub y: DenseMatrix<T>,
    /// `λ_max(X Xᵀ)`, the exact Lipschitz constant of the gradient.
    pub l_exact: T,
}

impl<T: Scalar> LinRegTask<T> {
    pub fn from_data(x: DenseMatrix<T>, y: DenseMatrix<T>) -> Result<Self> {
        if x.cols() != y.cols() {
            return Err(Error::DimensionMismatch {
                op: "linreg data",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let l_exact = if x.is_empty() {
            T::zero()
        } else {
            let s_max = singular_values(&x)?[0];
            s_max * s_max
        };
        Ok(Self { x, y, l_exact })
    }

    /// Standard Gaussian `X` (n×k) and `Y` (m×k) from a seeded generator.
    pub fn generate(m: usize, n: usize, k: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::InvalidParameter("linreg dimensions must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = || T::lit(StandardNormal.sample(&mut rng));
        let x = DenseMatrix::from_fn(n, k, |_, _| gauss());
        let y = DenseMatrix::from_fn(m, k, |_, _| gauss());
        Self::from_data(x, y)
    }

    /// Output dimension m.
    pub fn out_dim(&self) -> usize {
        self.y.rows()
    }

    /// Input dimension n.
    pub fn in_dim(&self) -> usize {
        self.x.rows()
    }

    pub fn samples(&self) -> usize {
        self.x.cols()
    }

    /// Loss and gradient `(W X − Y) Xᵀ`.
    pub fn loss_grad(&self, w: &DenseMatrix<T>) -> Result<(T, DenseMatrix<T>)> {
        let (hi, _, grad) = self.loss_grad_split(w)?;
        Ok((hi, grad))
    }

    pub fn loss(&self, w: &DenseMatrix<T>) -> Result<T> {
        Ok(self.loss_split(w)?.0)
    }

    /// The loss as an unevaluated sum `hi + lo` with `hi` the rounded value.
    /// The residual and its squared norm are accumulated with error-free
    /// transformations, so `hi` is accurate to about one ulp even when the
    /// loss has plateaued far above zero.
    pub fn loss_split(&self, w: &DenseMatrix<T>) -> Result<(T, T)> {
        let (_, hi, lo) = self.residual(w)?;
        Ok((hi, lo))
    }

    /// `loss_split` together with the gradient.
    pub fn loss_grad_split(&self, w: &DenseMatrix<T>) -> Result<(T, T, DenseMatrix<T>)> {
        let (resid, hi, lo) = self.residual(w)?;
        Ok((hi, lo, resid.matmul_t(&self.x)?))
    }

    fn residual(&self, w: &DenseMatrix<T>) -> Result<(DenseMatrix<T>, T, T)> {
        if w.cols() != self.x.rows() || w.rows() != self.y.rows() {
            return Err(Error::DimensionMismatch {
                op: "linreg residual",
                left: w.shape(),
                right: (self.y.rows(), self.x.rows()),
            });
        }
        let (m, n, k) = (w.rows(), w.cols(), self.x.cols());
        let factor = split_factor::<T>();
        let xs: Vec<(T, T)> = self.x.data().iter().map(|&v| split(v, factor)).collect();
        let mut resid = DenseMatrix::zeros(m, k);
        let (mut sum, mut comp) = (T::zero(), T::zero());
        let mut s = vec![T::zero(); k];
        let mut c = vec![T::zero(); k];
        for i in 0..m {
            for j in 0..k {
                s[j] = -self.y[(i, j)];
                c[j] = T::zero();
            }
            for p in 0..n {
                let wv = w[(i, p)];
                if wv == T::zero() {
                    continue;
                }
                let ws = split(wv, factor);
                let xrow = &xs[p * k..(p + 1) * k];
                let xraw = &self.x.data()[p * k..(p + 1) * k];
                for j in 0..k {
                    let (prod, e_prod) = two_prod(wv, ws, xraw[j], xrow[j]);
                    let (t, e_sum) = two_sum(s[j], prod);
                    s[j] = t;
                    c[j] += e_prod + e_sum;
                }
            }
            for j in 0..k {
                let (hi, lo) = fast_two_sum(s[j], c[j]);
                resid[(i, j)] = hi;
                let (sq, e_sq) = two_prod(hi, split(hi, factor), hi, split(hi, factor));
                let (t, e_sum) = two_sum(sum, sq);
                sum = t;
                comp += e_sum + e_sq + T::lit(2.0) * hi * lo;
            }
        }
        let (hi, lo) = fast_two_sum(sum, comp);
        let half = T::lit(0.5);
        Ok((resid, hi * half, lo * half))
    }

    /// Restriction to the sample columns in `idx`.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let x = DenseMatrix::from_fn(self.x.rows(), idx.len(), |i, j| self.x[(i, idx[j])]);
        let y = DenseMatrix::from_fn(self.y.rows(), idx.len(), |i, j| self.y[(i, idx[j])]);
        Self {
            x,
            y,
            l_exact: self.l_exact,
        }
    }
}

/// `2^⌈p/2⌉ + 1` for a `p`-bit significand.
fn split_factor<T: Scalar>() -> T {
    let digits = (-T::epsilon().log2()).round() + T::one();
    T::lit(2.0).powf((digits / T::lit(2.0)).ceil()) + T::one()
}

/// Dekker's split of `a` into two halves that multiply exactly.
fn split<T: Scalar>(a: T, factor: T) -> (T, T) {
    let t = factor * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

/// `a · b` and its rounding error, given the splits of both factors.
fn two_prod<T: Scalar>(a: T, (ah, al): (T, T), b: T, (bh, bl): (T, T)) -> (T, T) {
    let p = a * b;
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

fn two_sum<T: Scalar>(a: T, b: T) -> (T, T) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn fast_two_sum<T: Scalar>(a: T, b: T) -> (T, T) {
    let s = a + b;
    (s, b - (s - a))
}

pub fn make_linreg<T: Scalar>(m: usize, n: usize, k: usize, seed: u64) -> Result<LinRegTask<T>> {
    LinRegTask::generate(m, n, k, seed)
}

pub fn linreg_loss_grad<T: Scalar>(task: &LinRegTask<T>, w: &DenseMatrix<T>) -> Result<(T, DenseMatrix<T>)> {
    task.loss_grad(w)
}

/// Numerical rank of the loss gradient at the layer's effective weight.
pub fn grad_rank_check<T: Scalar>(task: &LinRegTask<T>, layer: &LoraLayer<T>, rank_tol: T) -> Result<usize> {
    let (_, g) = task.loss_grad(&layer.effective_weight())?;
    numerical_rank(&g, rank_tol)
}
