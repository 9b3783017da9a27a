//! The solution operator `L⁻¹` on μ-centred data, normalised to Lebesgue mean zero.
//!
//! The solve works on the mean-zero dealiased band: with `Q` removing the `k = 0` mode,
//! `QL` is invertible there, and for μ-centred `f` the solution of `QLu = Qf` satisfies
//! `Lu = f` because the `k = 0` component of `Lu − f` is then forced to vanish.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::generator::GeneratorOperator;
use crate::invariant::InvariantMeasure;
use crate::krylov::{gmres, GmresOptions};
use crate::linalg::solve_dense;
use crate::scalar::Real;
use crate::spectral::{besov_norm, negated_flat, sobolev_norm, BesovIndex, PeriodicField};

pub const DEFAULT_TOL: f64 = 1e-9;

/// Largest allowed `|∫ f dμ|` (relative to `max(1, ‖f‖)`) for a right-hand side.
pub const CENTERING_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct PoissonSolution<T: Real> {
    pub u: PeriodicField<T>,
    pub rhs: PeriodicField<T>,
    /// `‖Lu − f‖_{L²}`.
    pub residual: f64,
    pub iterations: usize,
}

/// `f − ∫ f dμ`.
pub fn center_mu<T: Real>(f: &PeriodicField<T>, mu: &InvariantMeasure<T>) -> Result<PeriodicField<T>> {
    let m = mu.expectation(f)?;
    Ok(f.add_constant(-m))
}

fn forward<T: Real>(op: &GeneratorOperator<T>) -> GeneratorOperator<T> {
    if op.is_adjoint() {
        op.dual()
    } else {
        op.clone()
    }
}

fn check_centered<T: Real>(f: &PeriodicField<T>, mu: &InvariantMeasure<T>) -> Result<()> {
    let m = mu.expectation(f)?.as_f64();
    if m.abs() > CENTERING_TOL * f.l2_norm().as_f64().max(1.0) {
        return Err(Error::NotCentered(m));
    }
    Ok(())
}

/// Solves `Lu = f`, `∫u dx = 0` by right-preconditioned GMRES with the constant-coefficient
/// operator built from the mean diffusivity as preconditioner.
pub fn solve_poisson<T: Real>(
    op: &GeneratorOperator<T>,
    f: &PeriodicField<T>,
    mu: &InvariantMeasure<T>,
    tol: f64,
) -> Result<PoissonSolution<T>> {
    let l = forward(op);
    if f.dim() != l.dim() || f.resolution() != l.resolution() {
        return Err(Error::GridMismatch("right-hand side not on the operator grid".into()));
    }
    check_centered(f, mu)?;
    let band = l.band_mask().to_vec();
    let zero = Complex::new(T::zero(), T::zero());
    let mut rhs: Vec<Complex<T>> = f.coeffs().iter().zip(&band).map(|(&c, &keep)| if keep { c } else { zero }).collect();
    rhs[0] = zero;
    let apply = |x: &[Complex<T>]| {
        let mut y = l.apply_coeffs(x);
        y[0] = zero;
        y
    };
    let precond = |x: &[Complex<T>]| -> Vec<Complex<T>> {
        x.iter()
            .enumerate()
            .map(|(flat, xi)| if band[flat] && flat != 0 { xi / l.mean_symbol(flat) } else { zero })
            .collect()
    };
    let opts = GmresOptions { tol: 0.5 * tol, restart: 80, max_iter: 4000 };
    let out = gmres(apply, precond, &rhs, vec![zero; rhs.len()], opts);
    if !out.converged {
        return Err(Error::NoConvergence { iterations: out.iterations, history: out.history });
    }
    let u = PeriodicField::from_coeffs(l.dim(), l.resolution(), out.x)?;
    let residual = l.apply(&u)?.sub(f).l2_norm().as_f64();
    Ok(PoissonSolution { u, rhs: f.clone(), residual, iterations: out.iterations })
}

/// Flat indices of one representative per conjugate pair of nonzero band modes.
fn half_band<T: Real>(l: &GeneratorOperator<T>) -> Vec<usize> {
    let (dim, n) = (l.dim(), l.resolution());
    l.band_mask()
        .iter()
        .enumerate()
        .filter(|&(flat, &keep)| keep && flat != 0 && negated_flat(flat, dim, n) > flat)
        .map(|(flat, _)| flat)
        .collect()
}

/// Dense-matrix oracle: applies `L` to every real Fourier basis function of the mean-zero
/// band, drops the `k = 0` equation and solves the square system by Gaussian elimination.
/// Limited to `n ≤ 64` for `d ≤ 2` and `n ≤ 16` for `d = 3`.
pub fn solve_poisson_dense<T: Real>(op: &GeneratorOperator<T>, f: &PeriodicField<T>) -> Result<PeriodicField<T>> {
    let l = forward(op);
    let (dim, n) = (l.dim(), l.resolution());
    if (dim <= 2 && n > 64) || (dim == 3 && n > 16) {
        return Err(Error::InvalidArgument(format!("dense oracle limited to small grids (got d={dim}, n={n})")));
    }
    f.ensure_same_grid(&PeriodicField::zeros(dim, n)?)?;
    let half = half_band(&l);
    let m = 2 * half.len();
    let zero = Complex::new(T::zero(), T::zero());
    let two = T::lit(2.0);
    let coords = |c: &[Complex<T>]| -> Vec<T> {
        half.iter().flat_map(|&flat| [two * c[flat].re, -two * c[flat].im]).collect()
    };
    let basis = |col: usize| -> Vec<Complex<T>> {
        let flat = half[col / 2];
        let neg = negated_flat(flat, dim, n);
        let h = T::lit(0.5);
        let mut c = vec![zero; n.pow(dim as u32)];
        if col % 2 == 0 {
            c[flat] = Complex::new(h, T::zero());
            c[neg] = Complex::new(h, T::zero());
        } else {
            c[flat] = Complex::new(T::zero(), -h);
            c[neg] = Complex::new(T::zero(), h);
        }
        c
    };
    let mut a = vec![T::zero(); m * m];
    for col in 0..m {
        let column = coords(&l.apply_coeffs(&basis(col)));
        for (row, v) in column.into_iter().enumerate() {
            a[row * m + col] = v;
        }
    }
    let y = solve_dense(a, coords(f.coeffs()), m)?;
    let mut c = vec![zero; n.pow(dim as u32)];
    for (col, &yc) in y.iter().enumerate() {
        for (ci, bi) in c.iter_mut().zip(basis(col)) {
            *ci = *ci + bi * yc;
        }
    }
    PeriodicField::from_coeffs(dim, n, c)
}

/// `‖L⁻¹f‖_{B^s_{pq}} / ‖f‖_{B^{s−2}_{pq}}`; Sobolev norms are used when `p = q = 2`.
pub fn smoothing_ratio<T: Real>(
    op: &GeneratorOperator<T>,
    mu: &InvariantMeasure<T>,
    f: &PeriodicField<T>,
    idx: BesovIndex,
    tol: f64,
) -> Result<f64> {
    if f.grid_sup() == T::zero() {
        return Err(Error::InvalidArgument("smoothing ratio undefined for f = 0".into()));
    }
    let u = solve_poisson(op, f, mu, tol)?.u;
    let lower = BesovIndex { s: idx.s - 2.0, ..idx };
    let (num, den) = if idx.p == 2.0 && idx.q == 2.0 {
        (sobolev_norm(&u, idx.s), sobolev_norm(f, lower.s))
    } else {
        (besov_norm(&u, idx), besov_norm(f, lower))
    };
    Ok(num.as_f64() / den.as_f64())
}

/// `min_k |⟨Au, e_k⟩| / ((2π)²λ|k|²|⟨u, e_k⟩|)` over nonzero modes with `|⟨u, e_k⟩| > 1e-12`,
/// where `A = Σ a_ij ∂_i∂_j`.
pub fn multiplier_lower_bound_check<T: Real>(op: &GeneratorOperator<T>, u: &PeriodicField<T>) -> Result<f64> {
    let au = op.apply_second_order(u)?;
    let lambda = op.lambda();
    let four_pi2 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
    let mut best: Option<f64> = None;
    for (flat, c) in u.coeffs().iter().enumerate() {
        let k = u.wavevector(flat);
        let r2: i64 = k.iter().map(|x| x * x).sum();
        let cu = c.norm().as_f64();
        if r2 == 0 || cu <= 1e-12 || !op.band_mask()[flat] {
            continue;
        }
        let ratio = au.coeffs()[flat].norm().as_f64() / (four_pi2 * lambda * r2 as f64 * cu);
        best = Some(best.map_or(ratio, |b: f64| b.min(ratio)));
    }
    best.ok_or_else(|| Error::InvalidArgument("field has no active nonzero modes".into()))
}
