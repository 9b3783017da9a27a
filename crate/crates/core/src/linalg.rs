//! Small dense linear algebra: Gaussian elimination and the cyclic Jacobi eigensolver.
//! Matrices are row-major `Vec<T>` with explicit dimension.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Solves `A x = b` by Gaussian elimination with partial pivoting. `a` is `n×n` row-major.
pub fn solve_dense<T: Real>(mut a: Vec<T>, mut b: Vec<T>, n: usize) -> Result<Vec<T>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let tiny = scale * T::epsilon() * T::from_usize(n.max(1)).unwrap();
    for col in 0..n {
        let (pivot, pmax) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .fold((col, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax <= tiny {
            return Err(Error::Factorization(format!("singular matrix at column {col}")));
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let factor = a[r * n + col] / d;
            if factor == T::zero() {
                continue;
            }
            for j in col..n {
                a[r * n + j] = a[r * n + j] - factor * a[col * n + j];
            }
            b[r] = b[r] - factor * b[col];
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for j in r + 1..n {
            acc = acc - a[r * n + j] * x[j];
        }
        x[r] = acc / a[r * n + r];
    }
    Ok(x)
}

/// Eigen-decomposition `A = V diag(λ) Vᵀ` of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order and the matching eigenvectors as columns of `V`.
pub fn symmetric_eigen<T: Real>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let frob = m.iter().map(|x| *x * *x).sum::<T>().sqrt();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off + m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= T::epsilon() * frob * T::lit(1e-2) || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].partial_cmp(&m[j * n + j]).unwrap());
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![T::zero(); n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + new] = v[k * n + old];
        }
    }
    (values, vectors)
}
