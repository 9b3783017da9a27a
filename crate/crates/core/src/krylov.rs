//! Restarted, right-preconditioned GMRES on Fourier coefficient arrays of real fields.
//! Arrays are Hermitian-symmetric, so the real inner product `Σ Re(x̄ y)` is the L² pairing
//! of the underlying fields and the Hessenberg recurrence stays real.

use num_complex::Complex;

use crate::scalar::Real;

pub(crate) type Coeffs<T> = Vec<Complex<T>>;

#[derive(Clone, Copy, Debug)]
pub struct GmresOptions {
    /// Absolute residual target in the coefficient (= L²) norm.
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions { tol: 1e-9, restart: 60, max_iter: 2000 }
    }
}

#[derive(Clone, Debug)]
pub struct GmresOutcome<T: Real> {
    pub x: Coeffs<T>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    pub converged: bool,
}

pub(crate) fn dot<T: Real>(x: &[Complex<T>], y: &[Complex<T>]) -> T {
    x.iter().zip(y).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

pub(crate) fn norm<T: Real>(x: &[Complex<T>]) -> T {
    dot(x, x).sqrt()
}

fn axpy<T: Real>(y: &mut [Complex<T>], alpha: T, x: &[Complex<T>]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + xi * alpha;
    }
}

/// Solves `A x = b` with right preconditioner `M⁻¹`, starting from `x0`.
pub fn gmres<T, A, P>(apply: A, precond: P, b: &[Complex<T>], x0: Coeffs<T>, opts: GmresOptions) -> GmresOutcome<T>
where
    T: Real,
    A: Fn(&[Complex<T>]) -> Coeffs<T>,
    P: Fn(&[Complex<T>]) -> Coeffs<T>,
{
    let tol = T::lit(opts.tol);
    let m = opts.restart.max(1);
    let mut x = x0;
    let mut history = Vec::new();
    let mut iterations = 0;

    let residual_of = |x: &[Complex<T>]| -> Coeffs<T> {
        let ax = apply(x);
        b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
    };

    let mut r = residual_of(&x);
    let mut beta = norm(&r);
    history.push(beta.as_f64());
    while beta > tol && iterations < opts.max_iter {
        let mut basis: Vec<Coeffs<T>> = Vec::with_capacity(m + 1);
        let mut h = vec![vec![T::zero(); m]; m + 1];
        let (mut cs, mut sn) = (vec![T::zero(); m], vec![T::zero(); m]);
        let mut g = vec![T::zero(); m + 1];
        g[0] = beta;
        basis.push(r.iter().map(|c| c / beta).collect());
        let mut used = 0;
        for j in 0..m {
            if iterations >= opts.max_iter {
                break;
            }
            iterations += 1;
            let mut w = apply(&precond(&basis[j]));
            // modified Gram-Schmidt with one reorthogonalisation pass
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let hij = dot(&w, v);
                    h[i][j] = h[i][j] + hij;
                    axpy(&mut w, -hij, v);
                }
            }
            let hnext = norm(&w);
            h[j + 1][j] = hnext;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if denom == T::zero() {
                cs[j] = T::one();
                sn[j] = T::zero();
            } else {
                cs[j] = h[j][j] / denom;
                sn[j] = h[j + 1][j] / denom;
            }
            h[j][j] = cs[j] * h[j][j] + sn[j] * h[j + 1][j];
            h[j + 1][j] = T::zero();
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j] * g[j];
            used = j + 1;
            history.push(g[j + 1].abs().as_f64());
            if g[j + 1].abs() <= tol || hnext == T::zero() {
                break;
            }
            basis.push(w.iter().map(|c| c / hnext).collect());
        }
        // back substitution for the least-squares coefficients
        let mut y = vec![T::zero(); used];
        for i in (0..used).rev() {
            let mut acc = g[i];
            for k in i + 1..used {
                acc = acc - h[i][k] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        let mut update = vec![Complex::new(T::zero(), T::zero()); b.len()];
        for (yi, v) in y.iter().zip(&basis) {
            axpy(&mut update, *yi, v);
        }
        let dx = precond(&update);
        axpy(&mut x, T::one(), &dx);
        r = residual_of(&x);
        let new_beta = norm(&r);
        if used == 0 || (new_beta >= beta && iterations >= opts.max_iter) {
            beta = new_beta;
            break;
        }
        beta = new_beta;
        *history.last_mut().unwrap() = beta.as_f64();
    }
    GmresOutcome { x, iterations, residual: beta.as_f64(), history, converged: beta <= tol }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_diagonal_system_without_preconditioner() {
        let diag: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let b: Vec<Complex<f64>> = (0..20).map(|i| Complex::new(1.0, i as f64 * 0.1)).collect();
        let apply = |x: &[Complex<f64>]| x.iter().zip(&diag).map(|(c, d)| c * *d).collect();
        let out = gmres(apply, |x: &[Complex<f64>]| x.to_vec(), &b, vec![Complex::new(0.0, 0.0); 20], GmresOptions {
            tol: 1e-12,
            restart: 25,
            max_iter: 100,
        });
        assert!(out.converged);
        for ((x, bi), d) in out.x.iter().zip(&b).zip(&diag) {
            assert!((x * *d - bi).norm() < 1e-11);
        }
    }

    #[test]
    fn exact_preconditioner_converges_in_one_step() {
        let diag: Vec<f64> = (1..=10).map(|i| (i * i) as f64).collect();
        let b: Vec<Complex<f64>> = (0..10).map(|i| Complex::new(i as f64, 0.0)).collect();
        let apply = |x: &[Complex<f64>]| x.iter().zip(&diag).map(|(c, d)| c * *d).collect();
        let pre = |x: &[Complex<f64>]| x.iter().zip(&diag).map(|(c, d)| c / *d).collect();
        let out = gmres(apply, pre, &b, vec![Complex::new(0.0, 0.0); 10], GmresOptions::default());
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
    }
}
