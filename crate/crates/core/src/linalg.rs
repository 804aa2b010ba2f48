//! Dense kernels for the small per-point matrices (n ≤ 5).

use crate::scalar::Real;

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert<T: Real>(n: usize, a: &[T]) -> Option<Vec<T>> {
    let mut m = a.to_vec();
    let mut inv = vec![T::zero(); n * n];
    for i in 0..n {
        inv[i * n + i] = T::one();
    }
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| m[x * n + c].abs().partial_cmp(&m[y * n + c].abs()).unwrap())?;
        if m[piv * n + c].abs() <= T::min_positive_value() || !m[piv * n + c].is_finite() {
            return None;
        }
        if piv != c {
            for k in 0..n {
                m.swap(piv * n + k, c * n + k);
                inv.swap(piv * n + k, c * n + k);
            }
        }
        let d = m[c * n + c];
        for k in 0..n {
            m[c * n + k] /= d;
            inv[c * n + k] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r * n + c];
                if f != T::zero() {
                    for k in 0..n {
                        let mk = m[c * n + k];
                        let ik = inv[c * n + k];
                        m[r * n + k] -= f * mk;
                        inv[r * n + k] -= f * ik;
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Lower Cholesky factor; `None` unless `a` is symmetric positive definite.
pub fn cholesky<T: Real>(n: usize, a: &[T]) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

pub fn matmul<T: Real>(n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut c = vec![T::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let a: [f64; 9] = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let inv = invert(3, &a).unwrap();
        let id = matmul(3, &a, &inv);
        for i in 0..3 {
            for j in 0..3 {
                let e: f64 = if i == j { 1.0 } else { 0.0 };
                assert!((id[i * 3 + j] - e).abs() < 1e-14);
            }
        }
        assert!(cholesky(3, &a).is_some());
        assert!(cholesky(2, &[1.0f64, 2.0, 2.0, 1.0]).is_none());
        assert!(invert(2, &[1.0f64, 2.0, 2.0, 4.0]).is_none());
    }
}
