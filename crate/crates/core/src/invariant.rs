//! Invariant density: the normalised solution of `L*μ = 0`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::generator::GeneratorOperator;
use crate::krylov::{gmres, norm, GmresOptions};
use crate::scalar::Real;
use crate::spectral::{synthesize, unravel, Mode, PeriodicField};

/// Negative grid values above this threshold are treated as roundoff and clamped to zero.
pub const NEGATIVE_DENSITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct InvariantMeasure<T: Real> {
    pub density: PeriodicField<T>,
    pub mass: f64,
    pub min_density: f64,
    pub max_density: f64,
    /// `‖L*μ‖_{L²}` of the returned density.
    pub residual: f64,
    pub iterations: usize,
    /// Residual history of the outer iteration.
    pub history: Vec<f64>,
    /// Maximal gradient norm over grid nodes (Lipschitz surrogate).
    pub max_gradient: f64,
}

impl<T: Real> InvariantMeasure<T> {
    /// Wraps a known density (normalised to unit mass).
    pub fn from_density(density: PeriodicField<T>) -> Result<Self> {
        let mass = density.mean();
        if !(mass > T::zero()) {
            return Err(Error::InvalidArgument("density must have positive mass".into()));
        }
        let density = density.scale(T::one() / mass);
        Ok(Self::summarise(density, f64::NAN, 0, Vec::new()))
    }

    /// Lebesgue measure on the given grid.
    pub fn uniform(dim: usize, n: usize) -> Result<Self> {
        Self::from_density(PeriodicField::constant(dim, n, T::one())?)
    }

    fn summarise(density: PeriodicField<T>, residual: f64, iterations: usize, history: Vec<f64>) -> Self {
        let (lo, hi) = density
            .values()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.as_f64()), hi.max(v.as_f64())));
        let grads = density.gradient();
        let max_gradient = (0..density.len())
            .map(|x| grads.iter().map(|g| g.values()[x].as_f64().powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        InvariantMeasure {
            mass: density.mean().as_f64(),
            min_density: lo,
            max_density: hi,
            residual,
            iterations,
            history,
            max_gradient,
            density,
        }
    }

    /// `∫ f μ dx`.
    pub fn expectation(&self, f: &PeriodicField<T>) -> Result<T> {
        self.density.ensure_same_grid(f)?;
        Ok(self.density.inner(f))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InvariantOptions {
    pub tol: f64,
    /// Shift `c > 0` of the inverse iteration `(L* − c)μ_{k+1} = −cμ_k`.
    pub shift: f64,
    pub max_outer: usize,
}

impl Default for InvariantOptions {
    fn default() -> Self {
        InvariantOptions { tol: 1e-10, shift: 1.0, max_outer: 200 }
    }
}

/// Solves `L*μ = 0`, `∫μ = 1` from the uniform initial density.
pub fn solve_invariant<T: Real>(adjoint: &GeneratorOperator<T>, tol: f64) -> Result<InvariantMeasure<T>> {
    let init = PeriodicField::constant(adjoint.dim(), adjoint.resolution(), T::one())?;
    solve_invariant_from(adjoint, &init, InvariantOptions { tol, ..Default::default() })
}

/// Shifted inverse iteration from an arbitrary positive-mass initial density. Accepts either
/// `L` or `L*`; the adjoint is always the operator iterated.
pub fn solve_invariant_from<T: Real>(
    op: &GeneratorOperator<T>,
    initial: &PeriodicField<T>,
    opts: InvariantOptions,
) -> Result<InvariantMeasure<T>> {
    let adjoint = if op.is_adjoint() { op.clone() } else { op.dual() };
    let (dim, n) = (adjoint.dim(), adjoint.resolution());
    if initial.dim() != dim || initial.resolution() != n {
        return Err(Error::GridMismatch("initial density not on the operator grid".into()));
    }
    if !(opts.shift > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("shift and tolerance must be positive".into()));
    }
    let c = T::lit(opts.shift);
    let band = adjoint.band_mask().to_vec();
    let zero = Complex::new(T::zero(), T::zero());
    let normalise = |mut v: Vec<Complex<T>>| {
        for (vi, &keep) in v.iter_mut().zip(&band) {
            if !keep {
                *vi = zero;
            }
        }
        let mass = v[0].re;
        v.iter().map(|x| x / mass).collect::<Vec<_>>()
    };
    if !(initial.mean() > T::zero()) {
        return Err(Error::InvalidArgument("initial density must have positive mass".into()));
    }
    let mut mu = normalise(initial.coeffs().to_vec());
    let shifted = |x: &[Complex<T>]| -> Vec<Complex<T>> {
        let lx = adjoint.apply_coeffs(x);
        lx.iter().zip(x).map(|(l, xi)| l - xi * c).collect()
    };
    let precond = |x: &[Complex<T>]| -> Vec<Complex<T>> {
        x.iter()
            .enumerate()
            .map(|(flat, xi)| if band[flat] { xi / (adjoint.mean_symbol(flat) - c) } else { zero })
            .collect()
    };
    let inner = GmresOptions { tol: 0.1 * opts.tol, restart: 60, max_iter: 2000 };
    let mut history = Vec::new();
    let mut residual = norm(&adjoint.apply_coeffs(&mu)).as_f64();
    history.push(residual);
    let mut iterations = 0;
    while residual > opts.tol {
        if iterations >= opts.max_outer {
            return Err(Error::NoConvergence { iterations, history });
        }
        let rhs: Vec<Complex<T>> = mu.iter().map(|m| -(m * c)).collect();
        let out = gmres(&shifted, &precond, &rhs, mu.clone(), inner);
        if !out.converged {
            return Err(Error::NoConvergence { iterations: iterations + out.iterations, history: out.history });
        }
        mu = normalise(out.x);
        iterations += 1;
        residual = norm(&adjoint.apply_coeffs(&mu)).as_f64();
        history.push(residual);
    }
    let density = PeriodicField::from_coeffs(dim, n, mu)?;
    let density = clamp_negative(density)?;
    let residual = adjoint.apply(&density)?.l2_norm().as_f64();
    Ok(InvariantMeasure::summarise(density, residual, iterations, history))
}

fn clamp_negative<T: Real>(density: PeriodicField<T>) -> Result<PeriodicField<T>> {
    let (flat, min) = density
        .values()
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v.as_f64() < acc.1 { (i, v.as_f64()) } else { acc });
    if min >= 0.0 {
        return Ok(density);
    }
    if min <= -NEGATIVE_DENSITY_TOLERANCE {
        let node = unravel(flat, density.dim(), density.resolution())[..density.dim()].to_vec();
        return Err(Error::NegativeDensity { node, value: min });
    }
    Ok(density.map_values(|v| v.max(T::zero())))
}

/// L² distance between solutions started from the uniform density and from a perturbed one.
pub fn restart_discrepancy<T: Real>(adjoint: &GeneratorOperator<T>, tol: f64) -> Result<f64> {
    let (dim, n) = (adjoint.dim(), adjoint.resolution());
    let a = solve_invariant(adjoint, tol)?;
    let mut k = vec![0; dim];
    k[dim - 1] = 1;
    let perturbed = synthesize(&[Mode::cos(&vec![0; dim], 1.0), Mode::new(&k, 0.5, 0.3)], dim, n)?;
    let b = solve_invariant_from(adjoint, &perturbed, InvariantOptions { tol, ..Default::default() })?;
    Ok(a.density.sub(&b.density).l2_norm().as_f64())
}

/// `max_φ |⟨Lφ, μ⟩|` over the test fields (weak form of `L*μ = 0`).
pub fn ergodic_pairing_check<T: Real>(
    mu: &InvariantMeasure<T>,
    op: &GeneratorOperator<T>,
    tests: &[PeriodicField<T>],
) -> Result<f64> {
    let l = if op.is_adjoint() { op.dual() } else { op.clone() };
    let mut worst = 0.0f64;
    for phi in tests {
        let lphi = l.apply(phi)?;
        worst = worst.max(lphi.inner(&mu.density).as_f64().abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{assemble, assemble_adjoint};
    use crate::presets;

    #[test]
    fn zero_drift_is_uniform() {
        let m = presets::zero_drift::<f64>(2, 32).unwrap();
        let mu = solve_invariant(&assemble_adjoint(&m.drift, &m.diffusivity).unwrap(), 1e-10).unwrap();
        assert!((mu.mass - 1.0).abs() < 1e-12);
        for v in mu.density.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_case_matches_closed_form() {
        // oracle: μ ∝ e^{2B} solves ½μ'' − (B'μ)' = 0
        for (dim, n) in [(1usize, 64usize), (2, 64)] {
            let m = presets::default_gradient::<f64>(dim, n).unwrap();
            let ls = assemble_adjoint(&m.drift, &m.diffusivity).unwrap();
            let mu = solve_invariant(&ls, 1e-11).unwrap();
            let exact = presets::gradient_density::<f64>(dim, n, &presets::default_potential(dim)).unwrap();
            let err = mu.density.sub(&exact).grid_sup();
            assert!(err < 1e-6, "dim {dim}: {err}");
            assert!((mu.mass - 1.0).abs() < 1e-10);
            assert!(mu.residual <= 1e-10);
        }
    }

    #[test]
    fn shear_density_is_positive_and_certified() {
        let m = presets::shear::<f64>(2, 32).unwrap();
        let ls = assemble_adjoint(&m.drift, &m.diffusivity).unwrap();
        let mu = solve_invariant(&ls, 1e-10).unwrap();
        assert!(mu.min_density > 0.0);
        // independent re-application of L*
        let again = assemble_adjoint(&m.drift, &m.diffusivity).unwrap();
        assert!(again.apply(&mu.density).unwrap().l2_norm() <= 1e-10);
        // non-uniform
        assert!(mu.max_density - mu.min_density > 0.05);
        assert!(restart_discrepancy(&ls, 1e-10).unwrap() <= 1e-9);
    }

    #[test]
    fn weak_form_and_resolution_stability() {
        let tol = 1e-10;
        for name in ["gradient", "modulated", "shear"] {
            let coarse = presets::by_name::<f64>(name, 2, 32).unwrap();
            let fine = presets::by_name::<f64>(name, 2, 64).unwrap();
            let mc = solve_invariant(&assemble_adjoint(&coarse.drift, &coarse.diffusivity).unwrap(), tol).unwrap();
            let mf = solve_invariant(&assemble_adjoint(&fine.drift, &fine.diffusivity).unwrap(), tol).unwrap();
            assert!(mc.density.refine(64).sub(&mf.density).l2_norm() <= 10.0 * tol, "{name}");
            let ratio_c = mc.max_density / mc.min_density;
            let ratio_f = mf.max_density / mf.min_density;
            assert!((ratio_c / ratio_f - 1.0).abs() < 0.05);
            let l = assemble(&coarse.drift, &coarse.diffusivity).unwrap();
            let mut tests = Vec::new();
            for k1 in -2i64..=2 {
                for k2 in 0i64..=1 {
                    tests.push(synthesize(&[Mode::new(&[k1, k2], 1.0, 0.5)], 2, 32).unwrap());
                }
            }
            assert!(ergodic_pairing_check(&mc, &l, &tests).unwrap() <= 10.0 * tol);
        }
    }

    #[test]
    fn constant_test_function_pairs_to_zero() {
        let m = presets::default_gradient::<f64>(1, 32).unwrap();
        let l = assemble(&m.drift, &m.diffusivity).unwrap();
        let mu = InvariantMeasure::uniform(1, 32).unwrap();
        let one = PeriodicField::constant(1, 32, 1.0).unwrap();
        assert_eq!(ergodic_pairing_check(&mu, &l, &[one]).unwrap(), 0.0);
    }

    #[test]
    fn clamping_and_rejection() {
        let f = PeriodicField::from_values(1, 4, vec![1.0, -1e-12, 1.0, 2.0]).unwrap();
        assert!(clamp_negative(f).unwrap().values().iter().all(|&v| v >= 0.0));
        let g = PeriodicField::from_values(1, 4, vec![1.0, -1e-3, 1.0, 2.0]).unwrap();
        match clamp_negative(g) {
            Err(Error::NegativeDensity { node, .. }) => assert_eq!(node, vec![1]),
            other => panic!("{other:?}"),
        }
    }
}
