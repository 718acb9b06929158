//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Deterministic for a fixed input: pairs are swept in cyclic order and the
//! output is sorted with a stable sort.

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, DenseMatrix};
use crate::scalar::Scalar;

const MAX_SWEEPS: usize = 80;

/// `a = u · diag(s) · vt`, with `p = min(m, n)`.
#[derive(Debug, Clone)]
pub struct SvdResult<T> {
    /// m×p, orthonormal columns.
    pub u: DenseMatrix<T>,
    /// Non-increasing, non-negative.
    pub s: Vec<T>,
    /// p×n, orthonormal rows.
    pub vt: DenseMatrix<T>,
}

impl<T: Scalar> SvdResult<T> {
    pub fn reconstruct(&self) -> DenseMatrix<T> {
        let us = self.u.scale_columns(&self.s).expect("shapes fixed by construction");
        us.matmul(&self.vt).expect("shapes fixed by construction")
    }

    /// Columns of `V` (rows of `vt`) as an n×p matrix.
    pub fn v(&self) -> DenseMatrix<T> {
        self.vt.transpose()
    }
}

/// Thin SVD of a nonempty matrix.
pub fn svd<T: Scalar>(a: &DenseMatrix<T>) -> Result<SvdResult<T>> {
    if a.is_empty() {
        return Err(Error::Empty);
    }
    if a.rows() >= a.cols() {
        let (u, s, v) = jacobi_tall(a)?;
        Ok(SvdResult { u, s, vt: v.transpose() })
    } else {
        let (u, s, v) = jacobi_tall(&a.transpose())?;
        Ok(SvdResult {
            u: v,
            s,
            vt: u.transpose(),
        })
    }
}

/// Singular values only, non-increasing. Householder bidiagonalization
/// followed by implicit-shift QR on the bidiagonal (Golub-Reinsch), which is
/// several times cheaper than the Jacobi path when vectors are not needed.
pub fn singular_values<T: Scalar>(a: &DenseMatrix<T>) -> Result<Vec<T>> {
    if a.is_empty() {
        return Err(Error::Empty);
    }
    let work = if a.rows() >= a.cols() { a.clone() } else { a.transpose() };
    let mut s = golub_reinsch_values(work)?;
    s.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(s)
}

const MAX_QR_ITERS: usize = 75;

fn with_sign<T: Scalar>(mag: T, sign_of: T) -> T {
    if sign_of >= T::zero() {
        mag.abs()
    } else {
        -mag.abs()
    }
}

/// Singular values of a tall matrix, unsorted.
fn golub_reinsch_values<T: Scalar>(mut a: DenseMatrix<T>) -> Result<Vec<T>> {
    let (m, n) = a.shape();
    let mut w = vec![T::zero(); n];
    let mut rv1 = vec![T::zero(); n];
    let (mut g, mut scale, mut anorm) = (T::zero(), T::zero(), T::zero());

    // bidiagonalization: diagonal in w, superdiagonal in rv1[1..]
    for i in 0..n {
        let l = i + 1;
        rv1[i] = scale * g;
        g = T::zero();
        scale = T::zero();
        for k in i..m {
            scale += a[(k, i)].abs();
        }
        if scale != T::zero() {
            let mut s = T::zero();
            for k in i..m {
                a[(k, i)] /= scale;
                s += a[(k, i)] * a[(k, i)];
            }
            let f = a[(i, i)];
            g = -with_sign(s.sqrt(), f);
            let h = f * g - s;
            a[(i, i)] = f - g;
            for j in l..n {
                let mut s = T::zero();
                for k in i..m {
                    s += a[(k, i)] * a[(k, j)];
                }
                let f = s / h;
                for k in i..m {
                    let aki = a[(k, i)];
                    a[(k, j)] += f * aki;
                }
            }
            for k in i..m {
                a[(k, i)] *= scale;
            }
        }
        w[i] = scale * g;

        g = T::zero();
        scale = T::zero();
        if i + 1 != n {
            for k in l..n {
                scale += a[(i, k)].abs();
            }
            if scale != T::zero() {
                let mut s = T::zero();
                for k in l..n {
                    a[(i, k)] /= scale;
                    s += a[(i, k)] * a[(i, k)];
                }
                let f = a[(i, l)];
                g = -with_sign(s.sqrt(), f);
                let h = f * g - s;
                a[(i, l)] = f - g;
                for k in l..n {
                    rv1[k] = a[(i, k)] / h;
                }
                for j in l..m {
                    let mut s = T::zero();
                    for k in l..n {
                        s += a[(j, k)] * a[(i, k)];
                    }
                    for k in l..n {
                        a[(j, k)] += s * rv1[k];
                    }
                }
                for k in l..n {
                    a[(i, k)] *= scale;
                }
            }
        }
        anorm = anorm.max(w[i].abs() + rv1[i].abs());
    }

    let negligible = |x: T| x.abs() + anorm == anorm;
    // diagonalize the bidiagonal from the bottom up
    for k in (0..n).rev() {
        let mut its = 0;
        loop {
            // find the top `l` of the unreduced block ending at k
            let mut l = k;
            let mut split_on_diag = false;
            loop {
                if l == 0 || negligible(rv1[l]) {
                    break;
                }
                if negligible(w[l - 1]) {
                    split_on_diag = true;
                    break;
                }
                l -= 1;
            }
            if split_on_diag {
                // w[l-1] is zero: chase rv1[l] out with rotations
                let (mut c, mut s) = (T::zero(), T::one());
                for i in l..=k {
                    let f = s * rv1[i];
                    rv1[i] = c * rv1[i];
                    if negligible(f) {
                        break;
                    }
                    let g = w[i];
                    let h = f.hypot(g);
                    w[i] = h;
                    c = g / h;
                    s = -f / h;
                }
            }
            let z = w[k];
            if l == k {
                if z < T::zero() {
                    w[k] = -z;
                }
                break;
            }
            if its == MAX_QR_ITERS {
                return Err(Error::SvdNoConvergence { iterations: its });
            }
            its += 1;

            // Wilkinson-type shift from the trailing 2x2
            let two = T::lit(2.0);
            let mut x = w[l];
            let nm = k - 1;
            let mut y = w[nm];
            let mut g = rv1[nm];
            let mut h = rv1[k];
            let mut f = ((y - z) * (y + z) + (g - h) * (g + h)) / (two * h * y);
            g = f.hypot(T::one());
            f = ((x - z) * (x + z) + h * ((y / (f + with_sign(g, f))) - h)) / x;

            let (mut c, mut s) = (T::one(), T::one());
            for j in l..=nm {
                let i = j + 1;
                g = rv1[i];
                y = w[i];
                h = s * g;
                g = c * g;
                let mut z = f.hypot(h);
                rv1[j] = z;
                c = f / z;
                s = h / z;
                f = x * c + g * s;
                g = g * c - x * s;
                h = y * s;
                y *= c;
                z = f.hypot(h);
                w[j] = z;
                if z != T::zero() {
                    c = f / z;
                    s = h / z;
                }
                f = c * g + s * y;
                x = c * y - s * g;
            }
            rv1[l] = T::zero();
            rv1[k] = f;
            w[k] = x;
        }
    }
    Ok(w)
}

/// One-sided Jacobi on a matrix with `rows >= cols`. Returns `(u, s, v)`
/// with `u` m×n and `v` n×n.
fn jacobi_tall<T: Scalar>(a: &DenseMatrix<T>) -> Result<(DenseMatrix<T>, Vec<T>, DenseMatrix<T>)> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();

    let eps = T::epsilon();
    // columns below this squared norm are rounding noise and never rotated
    let negligible = {
        let t = eps * T::of_usize(m.max(n)) * a.frob_norm();
        t * t
    };
    let tol = eps * T::of_usize(m);
    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::SvdNoConvergence { iterations: sweeps });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha <= negligible
                    || beta <= negligible
                    || gamma == T::zero()
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        converged = !rotated;
    }

    let norms: Vec<T> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));
    let s: Vec<T> = order.iter().map(|&j| norms[j]).collect();

    let s_max = s.first().copied().unwrap_or(T::zero());
    let cutoff = s_max * eps * T::of_usize(m.max(n));
    let mut ucols: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > cutoff && norms[j] > T::zero() {
            let inv = T::one() / norms[j];
            ucols.push(cols[j].iter().map(|&x| x * inv).collect());
        } else {
            ucols.push(vec![T::zero(); m]);
            missing.push(k);
        }
    }
    complete_basis(&mut ucols, &missing, m);

    let u = DenseMatrix::from_fn(m, n, |i, k| ucols[k][i]);
    let v = DenseMatrix::from_fn(n, n, |i, k| vcols[order[k]][i]);
    Ok((u, s, v))
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the columns listed in `missing` with unit vectors orthogonal to all
/// other columns, drawing candidates from the standard basis.
fn complete_basis<T: Scalar>(cols: &mut [Vec<T>], missing: &[usize], m: usize) {
    let mut candidate = 0;
    for &k in missing {
        loop {
            assert!(candidate < m, "basis completion ran out of candidates");
            let mut e = vec![T::zero(); m];
            e[candidate] = T::one();
            candidate += 1;
            // two rounds of Gram-Schmidt
            for _ in 0..2 {
                for (idx, c) in cols.iter().enumerate() {
                    if idx == k {
                        continue;
                    }
                    let proj = dot(&e, c);
                    for (ei, &ci) in e.iter_mut().zip(c) {
                        *ei -= proj * ci;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > T::lit(0.5) {
                let inv = T::one() / norm;
                cols[k] = e.into_iter().map(|x| x * inv).collect();
                break;
            }
        }
    }
}
