//! The adapter-parameterized layer `W = W_base + s · A Bᵀ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

/// Default standard deviation of the Gaussian `A` initialization.
pub const DEFAULT_INIT_SIGMA: f64 = 0.02;

/// Frozen base weight plus a trainable pair `(A, B)`.
///
/// `w_base` is m×n, `a` is m×r and `b` is n×r. Merges rewrite `w_base` in
/// place so the layer only ever holds one m×n matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer<T> {
    pub(crate) w_base: DenseMatrix<T>,
    pub(crate) a: DenseMatrix<T>,
    pub(crate) b: DenseMatrix<T>,
    pub(crate) lora_scale: T,
}

/// Gradients of the loss with respect to the adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads<T> {
    /// `s · ∇ℓ(W) · B`, m×r.
    pub g_a: DenseMatrix<T>,
    /// `s · ∇ℓ(W)ᵀ · A`, n×r.
    pub g_b: DenseMatrix<T>,
}

impl<T: Scalar> LoraLayer<T> {
    /// Assembles a layer from explicit parts, checking every shape invariant.
    pub fn from_parts(
        w_base: DenseMatrix<T>,
        a: DenseMatrix<T>,
        b: DenseMatrix<T>,
        lora_scale: T,
    ) -> Result<Self> {
        let (m, n) = w_base.shape();
        let rank = a.cols();
        if rank == 0 || rank > m.min(n) {
            return Err(Error::RankOutOfRange { rank, rows: m, cols: n });
        }
        if a.rows() != m {
            return Err(Error::DimensionMismatch {
                op: "LoraLayer: a",
                left: w_base.shape(),
                right: a.shape(),
            });
        }
        if b.rows() != n || b.cols() != rank {
            return Err(Error::DimensionMismatch {
                op: "LoraLayer: b",
                left: a.shape(),
                right: b.shape(),
            });
        }
        if !lora_scale.is_finite() {
            return Err(Error::InvalidParameter("lora_scale must be finite".into()));
        }
        Ok(Self {
            w_base,
            a,
            b,
            lora_scale,
        })
    }

    /// `A ~ N(0, sigma²)` entrywise from a seeded generator, `B = 0`, so the
    /// effective weight starts exactly at `w_pt`.
    pub fn init(w_pt: DenseMatrix<T>, rank: usize, sigma: T, seed: u64) -> Result<Self> {
        let (m, n) = w_pt.shape();
        if rank == 0 || rank > m.min(n) {
            return Err(Error::RankOutOfRange { rank, rows: m, cols: n });
        }
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("init sigma must be positive, got {sigma}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DenseMatrix::from_fn(m, rank, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * T::lit(z)
        });
        let b = DenseMatrix::zeros(n, rank);
        Ok(Self {
            w_base: w_pt,
            a,
            b,
            lora_scale: T::one(),
        })
    }

    pub fn with_lora_scale(mut self, lora_scale: T) -> Self {
        self.lora_scale = lora_scale;
        self
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w_base.shape()
    }

    pub fn w_base(&self) -> &DenseMatrix<T> {
        &self.w_base
    }

    pub fn a(&self) -> &DenseMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix<T> {
        &self.b
    }

    pub fn lora_scale(&self) -> T {
        self.lora_scale
    }

    /// `W_base + s · A Bᵀ`.
    pub fn effective_weight(&self) -> DenseMatrix<T> {
        let mut w = self.w_base.clone();
        if self.lora_scale != T::zero() {
            let ab = self.a.matmul_t(&self.b).expect("layer invariants");
            w.axpy(self.lora_scale, &ab).expect("layer invariants");
        }
        w
    }

    /// Chain rule through `W = W_base + s · A Bᵀ`.
    pub fn project_grads(&self, g_w: &DenseMatrix<T>) -> Result<AdapterGrads<T>> {
        if g_w.shape() != self.w_base.shape() {
            return Err(Error::DimensionMismatch {
                op: "project_grads",
                left: self.w_base.shape(),
                right: g_w.shape(),
            });
        }
        let mut g_a = g_w.matmul(&self.b)?;
        let mut g_b = g_w.t_matmul(&self.a)?;
        g_a.scale_mut(self.lora_scale);
        g_b.scale_mut(self.lora_scale);
        Ok(AdapterGrads { g_a, g_b })
    }

    /// Merges `A Bᵀ` into the base and factors out `new_a new_bᵀ`, leaving
    /// the effective weight unchanged.
    pub fn merge_factor(&mut self, new_a: DenseMatrix<T>, new_b: DenseMatrix<T>) -> Result<()> {
        if new_a.shape() != self.a.shape() || new_b.shape() != self.b.shape() {
            return Err(Error::DimensionMismatch {
                op: "merge_factor",
                left: new_a.shape(),
                right: new_b.shape(),
            });
        }
        let (m, n) = self.w_base.shape();
        let r = self.rank();
        let s = self.lora_scale;
        // w_base[i][j] += s · Σ_k (a[i][k] b[j][k] − a'[i][k] b'[j][k]), in place
        for i in 0..m {
            let a_old = self.a.row(i);
            let a_new = new_a.row(i);
            for j in 0..n {
                let b_old = self.b.row(j);
                let b_new = new_b.row(j);
                let mut acc = T::zero();
                for k in 0..r {
                    acc += a_old[k] * b_old[k] - a_new[k] * b_new[k];
                }
                self.w_base[(i, j)] += s * acc;
            }
        }
        self.a = new_a;
        self.b = new_b;
        Ok(())
    }

    /// Effective weight minus the original pre-trained weight.
    pub fn cumulative_update(&self, w_pt_original: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.effective_weight().sub(w_pt_original)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = DenseMatrix<f64>;

    fn sample_layer() -> LoraLayer<f64> {
        let w = M::from_fn(4, 3, |i, j| (i as f64) * 0.3 - (j as f64) * 0.7);
        let a = M::from_fn(4, 2, |i, j| ((i + 3 * j) as f64).cos());
        let b = M::from_fn(3, 2, |i, j| ((2 * i + j) as f64).sin());
        LoraLayer::from_parts(w, a, b, 1.0).unwrap()
    }

    #[test]
    fn init_keeps_pretrained_weight() {
        let w = M::from_fn(5, 6, |i, j| (i * j) as f64);
        let layer = LoraLayer::init(w.clone(), 3, 0.02, 7).unwrap();
        assert_eq!(layer.effective_weight(), w);
        assert_eq!(layer.b().max_abs(), 0.0);
        assert!(layer.a().max_abs() > 0.0);
    }

    #[test]
    fn init_is_reproducible() {
        let w = M::zeros(8, 8);
        let l1 = LoraLayer::init(w.clone(), 2, 0.02, 42).unwrap();
        let l2 = LoraLayer::init(w.clone(), 2, 0.02, 42).unwrap();
        let l3 = LoraLayer::init(w, 2, 0.02, 43).unwrap();
        assert_eq!(l1, l2);
        assert_ne!(l1.a(), l3.a());
    }

    #[test]
    fn init_rejects_bad_rank_and_sigma() {
        let w = M::zeros(3, 5);
        assert!(matches!(
            LoraLayer::init(w.clone(), 4, 0.02, 0),
            Err(Error::RankOutOfRange { rank: 4, .. })
        ));
        assert!(LoraLayer::init(w.clone(), 0, 0.02, 0).is_err());
        assert!(LoraLayer::init(w, 2, 0.0, 0).is_err());
    }

    #[test]
    fn effective_weight_degenerate_cases() {
        let mut layer = sample_layer();
        layer.lora_scale = 0.0;
        assert_eq!(layer.effective_weight(), *layer.w_base());
        let mut layer = sample_layer();
        layer.b = M::zeros(3, 2);
        assert_eq!(layer.effective_weight(), *layer.w_base());
    }

    #[test]
    fn effective_weight_matches_direct_sum() {
        let mut layer = sample_layer();
        layer.lora_scale = 2.5;
        let w = layer.effective_weight();
        for i in 0..4 {
            for j in 0..3 {
                let mut ab = 0.0;
                for k in 0..2 {
                    ab += layer.a()[(i, k)] * layer.b()[(j, k)];
                }
                let expect = layer.w_base()[(i, j)] + 2.5 * ab;
                assert!((w[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn project_grads_zero_cases() {
        let layer = LoraLayer::init(M::zeros(4, 3), 2, 0.1, 1).unwrap();
        let g = M::filled(4, 3, 1.0);
        let grads = layer.project_grads(&g).unwrap();
        assert_eq!(grads.g_a.max_abs(), 0.0);
        assert!(grads.g_b.max_abs() > 0.0);
        let grads = sample_layer().project_grads(&M::zeros(4, 3)).unwrap();
        assert_eq!(grads.g_a.max_abs(), 0.0);
        assert_eq!(grads.g_b.max_abs(), 0.0);
        assert!(layer.project_grads(&M::zeros(3, 4)).is_err());
    }

    #[test]
    fn merge_identity_keeps_base() {
        let mut layer = sample_layer();
        let before = layer.w_base().clone();
        let (a, b) = (layer.a().clone(), layer.b().clone());
        layer.merge_factor(a, b).unwrap();
        assert_eq!(*layer.w_base(), before);
    }

    #[test]
    fn full_merge_absorbs_product() {
        let mut layer = sample_layer();
        let w = layer.effective_weight();
        let a = layer.a().clone();
        layer.merge_factor(a, M::zeros(3, 2)).unwrap();
        assert!(layer.w_base().sub(&w).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn column_scaled_merge_preserves_weight() {
        let mut layer = sample_layer();
        let w_before = layer.effective_weight();
        let new_a = layer.a().scale_columns(&[0.3, 2.0]).unwrap();
        let new_b = layer.b().scale_columns(&[1.7, 0.0]).unwrap();
        layer.merge_factor(new_a, new_b).unwrap();
        let drift = layer.effective_weight().sub(&w_before).unwrap().frob_norm();
        assert!(drift <= 1e-12 * w_before.frob_norm());
    }

    #[test]
    fn merge_rejects_wrong_shapes() {
        let mut layer = sample_layer();
        assert!(layer.merge_factor(M::zeros(4, 3), M::zeros(3, 2)).is_err());
    }

    #[test]
    fn cumulative_update_is_zero_after_init() {
        let w = M::from_fn(6, 4, |i, j| (i + j) as f64);
        let layer = LoraLayer::init(w.clone(), 2, 0.02, 3).unwrap();
        assert_eq!(layer.cumulative_update(&w).unwrap().max_abs(), 0.0);
    }
}
