//! Reference computations that share no code path with the solvers they
//! check. Slow on purpose; only for small instances.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::DenseMatrix;

type M = DenseMatrix<f64>;

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> M {
    M::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Textbook triple loop.
pub fn naive_matmul(a: &M, b: &M) -> M {
    assert_eq!(a.cols(), b.rows());
    let mut out = M::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for k in 0..a.cols() {
                acc += a[(i, k)] * b[(k, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix by the classical two-sided cyclic
/// Jacobi method, sorted descending.
pub fn symmetric_eigenvalues(a: &M) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut s = M::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| s[(i, j)] * s[(i, j)])
            .sum();
        let scale: f64 = s.frob_norm_sq();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = s[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (s[(q, q)] - s[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let skp = s[(k, p)];
                    let skq = s[(k, q)];
                    s[(k, p)] = c * skp - sn * skq;
                    s[(k, q)] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[(p, k)];
                    let sqk = s[(q, k)];
                    s[(p, k)] = c * spk - sn * sqk;
                    s[(q, k)] = sn * spk + c * sqk;
                }
            }
        }
    }
    let mut ev = s.diag();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

/// Singular values as square roots of the eigenvalues of `AᵀA` (or `AAᵀ`).
pub fn singular_values_via_gram(a: &M) -> Vec<f64> {
    let gram = if a.rows() >= a.cols() {
        naive_matmul(&a.transpose(), a)
    } else {
        naive_matmul(a, &a.transpose())
    };
    symmetric_eigenvalues(&gram)
        .into_iter()
        .map(|x| x.max(0.0).sqrt())
        .collect()
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(sym: &M, iters: usize) -> f64 {
    let n = sym.rows();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618).fract()).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = sym.mul_vec(&v).unwrap();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / v.iter().map(|x| x * x).sum::<f64>();
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Gauss-Jordan inverse with partial pivoting. Panics on singular input.
pub fn dense_inverse(a: &M) -> M {
    let n = a.rows();
    let mut aug = M::from_fn(n, 2 * n, |i, j| if j < n { a[(i, j)] } else if j - n == i { 1.0 } else { 0.0 });
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aug[(i, col)].abs().partial_cmp(&aug[(j, col)].abs()).unwrap())
            .unwrap();
        assert!(aug[(piv, col)].abs() > 1e-300, "singular matrix");
        for j in 0..2 * n {
            let tmp = aug[(col, j)];
            aug[(col, j)] = aug[(piv, j)];
            aug[(piv, j)] = tmp;
        }
        let d = aug[(col, col)];
        for j in 0..2 * n {
            aug[(col, j)] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = aug[(i, col)];
                for j in 0..2 * n {
                    aug[(i, j)] -= f * aug[(col, j)];
                }
            }
        }
    }
    M::from_fn(n, n, |i, j| aug[(i, j + n)])
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn central_diff(x: &M, h: f64, mut f: impl FnMut(&M) -> f64) -> M {
    let mut out = M::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let up = f(&probe);
            probe[(i, j)] = orig - h;
            let down = f(&probe);
            probe[(i, j)] = orig;
            out[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    out
}

/// The scalar surrogate written literally:
/// `(L/2) ‖G/L − η β² G B Bᵀ − η α² A Aᵀ G‖²` with `η = l_eta / L`.
pub fn literal_scalar_objective(g: &M, a: &M, b: &M, alpha: f64, beta: f64, l_eta: f64, l: f64) -> f64 {
    let eta = l_eta / l;
    let gbbt = naive_matmul(&naive_matmul(g, b), &b.transpose());
    let aatg = naive_matmul(&naive_matmul(a, &a.transpose()), g);
    let mut sum = 0.0;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let r = g[(i, j)] / l - eta * beta * beta * gbbt[(i, j)] - eta * alpha * alpha * aatg[(i, j)];
            sum += r * r;
        }
    }
    0.5 * l * sum
}

#[derive(Debug, Clone, Copy)]
pub struct GridOptimum {
    pub value: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Minimizer of a quadratic in one variable from three samples at
/// `x0, x0 + s, x0 + 2s`, clamped to `x ≥ 0`.
fn parabola_argmin(x0: f64, s: f64, f0: f64, f1: f64, f2: f64) -> f64 {
    let curv = (f2 - 2.0 * f1 + f0) / (s * s);
    let slope = (f1 - f0) / s - 0.5 * curv * s; // derivative at x0
    if curv <= 0.0 {
        return if f2 < f0 { x0 + 2.0 * s } else { x0 };
    }
    (x0 - slope / curv).max(0.0)
}

/// 41×41 grid over `(α, β) ∈ [0, 3 α_ref]²`, then coordinate-wise exact
/// quadratic refinement in `(α², β²)` from the best grid point. Only ever
/// evaluates `objective`.
pub fn scalar_grid_oracle(objective: impl Fn(f64, f64) -> f64) -> GridOptimum {
    let f_pq = |p: f64, q: f64| objective(p.max(0.0).sqrt(), q.max(0.0).sqrt());

    // scale from the two single-factor line minima
    let f00 = f_pq(0.0, 0.0);
    let p_a = parabola_argmin(0.0, 1.0, f00, f_pq(1.0, 0.0), f_pq(2.0, 0.0));
    let q_b = parabola_argmin(0.0, 1.0, f00, f_pq(0.0, 1.0), f_pq(0.0, 2.0));
    let mut alpha_ref = p_a.max(q_b).sqrt();
    if !(alpha_ref > 0.0) || !alpha_ref.is_finite() {
        alpha_ref = 1.0;
    }
    let hi = 3.0 * alpha_ref;

    let mut best = GridOptimum { value: f64::INFINITY, alpha: 0.0, beta: 0.0 };
    for i in 0..41 {
        for j in 0..41 {
            let (al, be) = (hi * i as f64 / 40.0, hi * j as f64 / 40.0);
            let v = objective(al, be);
            if v < best.value {
                best = GridOptimum { value: v, alpha: al, beta: be };
            }
        }
    }

    let (mut p, mut q) = (best.alpha * best.alpha, best.beta * best.beta);
    let mut val = best.value;
    for _ in 0..2000 {
        let prev = val;
        let s = p.max(1e-3) * 0.5;
        p = parabola_argmin(p, s, f_pq(p, q), f_pq(p + s, q), f_pq(p + 2.0 * s, q));
        let s = q.max(1e-3) * 0.5;
        q = parabola_argmin(q, s, f_pq(p, q), f_pq(p, q + s), f_pq(p, q + 2.0 * s));
        val = f_pq(p, q);
        if prev - val <= 1e-16 * prev.abs() {
            break;
        }
    }
    if val < best.value {
        best = GridOptimum { value: val, alpha: p.sqrt(), beta: q.sqrt() };
    }
    best
}

#[derive(Debug, Clone)]
pub struct NnlsOptimum {
    pub value: f64,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

/// Accelerated projected gradient on `(φ, ψ) ≥ 0` for
/// `‖G − Lη(Σ φ_j a_j a_jᵀ G + Σ ψ_j G b_j b_jᵀ)‖² / (2L)`.
///
/// The quadratic's coefficients are inner products of the 2r explicit m×n
/// rank-one-projected gradients, not the Hadamard-product form.
pub fn column_nnls_oracle(g: &M, a: &M, b: &M, l_eta: f64, l: f64, iters: usize) -> NnlsOptimum {
    let r = a.cols();
    let mut basis: Vec<M> = Vec::with_capacity(2 * r);
    for j in 0..r {
        let aj = a.columns(j..j + 1);
        basis.push(naive_matmul(&naive_matmul(&aj, &aj.transpose()), g));
    }
    for j in 0..r {
        let bj = b.columns(j..j + 1);
        basis.push(naive_matmul(&naive_matmul(g, &bj), &bj.transpose()));
    }
    let d = 2 * r;
    let inner = |x: &M, y: &M| x.data().iter().zip(y.data()).map(|(p, q)| p * q).sum::<f64>();
    let h = M::from_fn(d, d, |i, j| inner(&basis[i], &basis[j]));
    let c: Vec<f64> = basis.iter().map(|bm| inner(g, bm)).collect();
    let g2 = g.frob_norm_sq();

    // f(x) = (g2 − 2 Lη cᵀx + (Lη)² xᵀHx) / (2L)
    let value = |x: &[f64]| {
        let hx = h.mul_vec(x).unwrap();
        let quad: f64 = x.iter().zip(&hx).map(|(a, b)| a * b).sum();
        let lin: f64 = x.iter().zip(&c).map(|(a, b)| a * b).sum();
        (g2 - 2.0 * l_eta * lin + l_eta * l_eta * quad) / (2.0 * l)
    };
    let grad = |x: &[f64]| {
        let hx = h.mul_vec(x).unwrap();
        hx.iter()
            .zip(&c)
            .map(|(hxi, ci)| (l_eta * l_eta * hxi - l_eta * ci) / l)
            .collect::<Vec<_>>()
    };
    let lip = l_eta * l_eta * power_iteration(&h, 500).max(1e-300) / l * 1.01;
    let step = 1.0 / lip;

    let mut x = vec![0.0; d];
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut best_x = x.clone();
    let mut best_v = value(&x);
    for _ in 0..iters {
        let gy = grad(&y);
        let x_new: Vec<f64> = y.iter().zip(&gy).map(|(yi, gi)| (yi - step * gi).max(0.0)).collect();
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = x_new
            .iter()
            .zip(&x)
            .map(|(xn, xo)| (xn + (t - 1.0) / t_new * (xn - xo)).max(0.0))
            .collect();
        x = x_new;
        t = t_new;
        let v = value(&x);
        if v < best_v {
            best_v = v;
            best_x = x.clone();
        }
    }
    // report the residual form at the minimizer; the expanded quadratic
    // cancels badly when the optimum is near zero
    let mut resid = g.clone();
    for (xi, bm) in best_x.iter().zip(&basis) {
        resid = resid.sub(&bm.scaled(l_eta * xi)).unwrap();
    }
    NnlsOptimum {
        value: resid.frob_norm_sq() / (2.0 * l),
        phi: best_x[..r].to_vec(),
        psi: best_x[r..].to_vec(),
    }
}

/// `(1−β₁) Σ β₁^{t−τ} g_τ` and `(1−β₂) Σ β₂^{t−τ} g_τ∘²` over a history,
/// summed directly rather than by recursion.
pub fn ema_replay(history: &[M], beta1: f64, beta2: f64) -> (M, M) {
    let (rows, cols) = history[0].shape();
    let t = history.len() - 1;
    let mut m = M::zeros(rows, cols);
    let mut v = M::zeros(rows, cols);
    for (tau, g) in history.iter().enumerate() {
        let w1 = (1.0 - beta1) * beta1.powi((t - tau) as i32);
        let w2 = (1.0 - beta2) * beta2.powi((t - tau) as i32);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] += w1 * g[(i, j)];
                v[(i, j)] += w2 * g[(i, j)] * g[(i, j)];
            }
        }
    }
    (m, v)
}
