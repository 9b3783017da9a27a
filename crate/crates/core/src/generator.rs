//! The generator `L = Σ a_ij ∂_i∂_j + Σ b_i ∂_i` of a periodic diffusion with `a = ½σσᵀ`,
//! and its L²-adjoint `L* = Σ ∂_i(a_ij ∂_j ·) − Σ b̃_i ∂_i · − (Σ ∂_i b̃_i)·` where
//! `b̃_i = b_i − Σ_j ∂_j a_ij`.
//!
//! Coefficients are projected onto the 2/3-dealiased band when assembled and every operator
//! output is projected again, so products never alias into the band and the discrete
//! duality `⟨Lu, v⟩ = ⟨u, L*v⟩` holds to roundoff for band-limited `u`, `v`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft;
use crate::linalg::symmetric_eigen;
use crate::scalar::Real;
use crate::spectral::{dealias_cutoff, unravel, PeriodicField, MAX_DIM};

/// Drift vector field `b = (b_1, …, b_d)`.
#[derive(Clone, Debug)]
pub struct DriftSpec<T: Real> {
    pub components: Vec<PeriodicField<T>>,
    /// Declared Hölder smoothness `β` of `b` (metadata only).
    pub declared_smoothness: f64,
}

impl<T: Real> DriftSpec<T> {
    pub fn new(components: Vec<PeriodicField<T>>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("drift needs at least one component".into()))?;
        if components.len() != first.dim() {
            return Err(Error::InvalidArgument(format!(
                "drift has {} components on a {}-dimensional grid",
                components.len(),
                first.dim()
            )));
        }
        for c in &components {
            first.ensure_same_grid(c)?;
        }
        Ok(DriftSpec { components, declared_smoothness: 1.0 })
    }

    pub fn zero(dim: usize, n: usize) -> Result<Self> {
        Self::new(vec![PeriodicField::zeros(dim, n)?; dim])
    }

    pub fn with_smoothness(mut self, beta: f64) -> Self {
        self.declared_smoothness = beta;
        self
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn resolution(&self) -> usize {
        self.components[0].resolution()
    }
}

/// Diffusion matrix `σ` (row-major `d×d` fields), the induced `a = ½σσᵀ` and its
/// ellipticity bounds `λ ≤ eig(a(x)) ≤ Λ` over grid nodes.
#[derive(Clone, Debug)]
pub struct DiffusivitySpec<T: Real> {
    dim: usize,
    sigma: Vec<PeriodicField<T>>,
    a: Vec<PeriodicField<T>>,
    lambda: f64,
    lambda_max: f64,
}

impl<T: Real> DiffusivitySpec<T> {
    /// Builds `a = ½σσᵀ` and rejects `σ` unless `λ > 1e-10`.
    pub fn new(sigma: Vec<PeriodicField<T>>) -> Result<Self> {
        let spec = Self::new_unchecked(sigma)?;
        if spec.lambda <= 1e-10 {
            let node = spec.min_eigen_node();
            return Err(Error::Ellipticity { node, min_eigenvalue: spec.lambda });
        }
        Ok(spec)
    }

    /// Same as [`DiffusivitySpec::new`] without the ellipticity gate; only for degenerate
    /// test dynamics such as `σ = 0`.
    pub fn new_unchecked(sigma: Vec<PeriodicField<T>>) -> Result<Self> {
        let dim = (sigma.len() as f64).sqrt() as usize;
        if dim == 0 || dim * dim != sigma.len() {
            return Err(Error::InvalidArgument(format!("σ needs d² entries, got {}", sigma.len())));
        }
        for s in &sigma {
            sigma[0].ensure_same_grid(s)?;
        }
        if sigma[0].dim() != dim {
            return Err(Error::InvalidArgument("σ matrix size does not match grid dimension".into()));
        }
        let (n, len) = (sigma[0].resolution(), sigma[0].len());
        let half = T::lit(0.5);
        let mut a_vals = vec![vec![T::zero(); len]; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                for (x, slot) in a_vals[i * dim + j].iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for k in 0..dim {
                        acc = acc + sigma[i * dim + k].values()[x] * sigma[j * dim + k].values()[x];
                    }
                    *slot = half * acc;
                }
                if i != j {
                    a_vals[j * dim + i] = a_vals[i * dim + j].clone();
                }
            }
        }
        let (lambda, lambda_max) = eigen_bounds(&a_vals, dim, len);
        let a = a_vals
            .into_iter()
            .map(|v| PeriodicField::from_values(dim, n, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(DiffusivitySpec { dim, sigma, a, lambda: lambda.0, lambda_max })
    }

    pub fn identity(dim: usize, n: usize) -> Result<Self> {
        Self::scaled_identity(dim, n, 1.0)
    }

    pub fn scaled_identity(dim: usize, n: usize, c: f64) -> Result<Self> {
        let mut sigma = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                let v = if i == j { T::lit(c) } else { T::zero() };
                sigma.push(PeriodicField::constant(dim, n, v)?);
            }
        }
        Self::new(sigma)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.sigma[0].resolution()
    }

    pub fn sigma(&self, i: usize, j: usize) -> &PeriodicField<T> {
        &self.sigma[i * self.dim + j]
    }

    pub fn sigma_entries(&self) -> &[PeriodicField<T>] {
        &self.sigma
    }

    pub fn a(&self, i: usize, j: usize) -> &PeriodicField<T> {
        &self.a[i * self.dim + j]
    }

    /// Uniform lower ellipticity bound `λ`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Uniform upper ellipticity bound `Λ`.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    fn min_eigen_node(&self) -> Vec<usize> {
        let len = self.a[0].len();
        let vals: Vec<Vec<T>> = self.a.iter().map(|f| f.values().to_vec()).collect();
        let ((_, flat), _) = eigen_bounds(&vals, self.dim, len);
        unravel(flat, self.dim, self.resolution())[..self.dim].to_vec()
    }
}

/// `((λ_min, node), λ_max)` over all grid nodes.
fn eigen_bounds<T: Real>(a: &[Vec<T>], dim: usize, len: usize) -> ((f64, usize), f64) {
    let mut lo = (f64::INFINITY, 0);
    let mut hi = f64::NEG_INFINITY;
    let mut m = vec![0.0f64; dim * dim];
    for x in 0..len {
        for (slot, entry) in m.iter_mut().zip(a) {
            *slot = entry[x].as_f64();
        }
        let (vals, _) = symmetric_eigen(&m, dim);
        if vals[0] < lo.0 {
            lo = (vals[0], x);
        }
        hi = hi.max(vals[dim - 1]);
    }
    (lo, hi)
}

/// Assembled generator `L` or its adjoint `L*`.
#[derive(Clone, Debug)]
pub struct GeneratorOperator<T: Real> {
    dim: usize,
    n: usize,
    drift: DriftSpec<T>,
    diffusivity: DiffusivitySpec<T>,
    adjoint: bool,
    // band-projected coefficient grids
    a_vals: Vec<Vec<T>>,
    b_vals: Vec<Vec<T>>,
    btilde: Vec<PeriodicField<T>>,
    btilde_vals: Vec<Vec<T>>,
    div_btilde_vals: Vec<T>,
    a_mean: Vec<T>,
    // per-flat-index wavevectors and band mask
    kvec: Vec<[i64; MAX_DIM]>,
    band: Vec<bool>,
}

/// Assembles `L` from `(b, σ)`.
pub fn assemble<T: Real>(drift: &DriftSpec<T>, diffusivity: &DiffusivitySpec<T>) -> Result<GeneratorOperator<T>> {
    GeneratorOperator::build(drift, diffusivity, false)
}

/// Assembles `L*` from `(b, σ)` using the adjoint formula.
pub fn assemble_adjoint<T: Real>(drift: &DriftSpec<T>, diffusivity: &DiffusivitySpec<T>) -> Result<GeneratorOperator<T>> {
    GeneratorOperator::build(drift, diffusivity, true)
}

impl<T: Real> GeneratorOperator<T> {
    fn build(drift: &DriftSpec<T>, diffusivity: &DiffusivitySpec<T>, adjoint: bool) -> Result<Self> {
        let dim = drift.dim();
        let n = drift.resolution();
        if diffusivity.dim() != dim || diffusivity.resolution() != n {
            return Err(Error::GridMismatch(format!(
                "drift on (dim {dim}, n {n}), diffusivity on (dim {}, n {})",
                diffusivity.dim(),
                diffusivity.resolution()
            )));
        }
        if diffusivity.lambda() <= 1e-10 {
            return Err(Error::Ellipticity {
                node: diffusivity.min_eigen_node(),
                min_eigenvalue: diffusivity.lambda(),
            });
        }
        let a: Vec<PeriodicField<T>> = diffusivity.a.iter().map(|f| f.dealias()).collect();
        let b: Vec<PeriodicField<T>> = drift.components.iter().map(|f| f.dealias()).collect();
        let btilde: Vec<PeriodicField<T>> = (0..dim)
            .map(|i| {
                let mut acc = b[i].clone();
                for j in 0..dim {
                    acc = acc.sub(&a[i * dim + j].derivative(j));
                }
                acc
            })
            .collect();
        let mut div = PeriodicField::zeros(dim, n)?;
        for (i, bt) in btilde.iter().enumerate() {
            div = div.add(&bt.derivative(i));
        }
        let len = n.pow(dim as u32);
        let kvec: Vec<[i64; MAX_DIM]> = (0..len).map(|flat| div.wavevector(flat)).collect();
        let cutoff = dealias_cutoff(n);
        let band = kvec.iter().map(|k| k.iter().all(|ki| ki.abs() <= cutoff)).collect();
        Ok(GeneratorOperator {
            dim,
            n,
            drift: drift.clone(),
            diffusivity: diffusivity.clone(),
            adjoint,
            a_mean: a.iter().map(|f| f.mean()).collect(),
            a_vals: a.iter().map(|f| f.values().to_vec()).collect(),
            b_vals: b.iter().map(|f| f.values().to_vec()).collect(),
            btilde_vals: btilde.iter().map(|f| f.values().to_vec()).collect(),
            btilde,
            div_btilde_vals: div.values().to_vec(),
            kvec,
            band,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn is_adjoint(&self) -> bool {
        self.adjoint
    }

    pub fn drift(&self) -> &DriftSpec<T> {
        &self.drift
    }

    pub fn diffusivity(&self) -> &DiffusivitySpec<T> {
        &self.diffusivity
    }

    /// `b̃_i = b_i − Σ_j ∂_j a_ij` (band-projected).
    pub fn btilde(&self) -> &[PeriodicField<T>] {
        &self.btilde
    }

    /// Spatial mean of `a_ij`.
    pub fn a_mean(&self, i: usize, j: usize) -> T {
        self.a_mean[i * self.dim + j]
    }

    pub fn lambda(&self) -> f64 {
        self.diffusivity.lambda()
    }

    pub fn lambda_max(&self) -> f64 {
        self.diffusivity.lambda_max()
    }

    /// The companion operator (`L*` for `L` and vice versa) sharing all coefficients.
    pub fn dual(&self) -> Self {
        let mut op = self.clone();
        op.adjoint = !self.adjoint;
        op
    }

    pub(crate) fn band_mask(&self) -> &[bool] {
        &self.band
    }

    pub fn apply(&self, u: &PeriodicField<T>) -> Result<PeriodicField<T>> {
        if u.dim() != self.dim || u.resolution() != self.n {
            return Err(Error::GridMismatch(format!(
                "operator on (dim {}, n {}), field on (dim {}, n {})",
                self.dim,
                self.n,
                u.dim(),
                u.resolution()
            )));
        }
        let out = self.apply_coeffs(u.coeffs());
        PeriodicField::from_coeffs(self.dim, self.n, out)
    }

    /// Applies the operator to a coefficient array; input and output are band-projected.
    pub(crate) fn apply_coeffs(&self, u: &[Complex<T>]) -> Vec<Complex<T>> {
        if self.adjoint {
            self.apply_adjoint_coeffs(u)
        } else {
            self.apply_forward_coeffs(u)
        }
    }

    /// Second-order part `A u = Σ a_ij ∂_i∂_j u` only.
    pub fn apply_second_order(&self, u: &PeriodicField<T>) -> Result<PeriodicField<T>> {
        let u_hat = self.project(u.coeffs());
        let mut acc = vec![T::zero(); u_hat.len()];
        self.accumulate_second_order(&u_hat, &mut acc);
        let mut out = fft::forward_real(&acc, self.dim, self.n);
        self.project_in_place(&mut out);
        PeriodicField::from_coeffs(self.dim, self.n, out)
    }

    fn project(&self, c: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut out = c.to_vec();
        self.project_in_place(&mut out);
        out
    }

    fn project_in_place(&self, c: &mut [Complex<T>]) {
        let zero = Complex::new(T::zero(), T::zero());
        for (ci, &keep) in c.iter_mut().zip(&self.band) {
            if !keep {
                *ci = zero;
            }
        }
    }

    /// Grid values of `∂_axis` applied to projected coefficients.
    fn derivative_values(&self, u_hat: &[Complex<T>], axes: &[usize]) -> Vec<T> {
        let tau = T::two_pi();
        let d: Vec<Complex<T>> = u_hat
            .iter()
            .zip(&self.kvec)
            .map(|(&c, k)| {
                let mut m = Complex::new(T::one(), T::zero());
                for &ax in axes {
                    m = m * Complex::new(T::zero(), tau * T::from_i64(k[ax]).unwrap());
                }
                c * m
            })
            .collect();
        fft::inverse_real(&d, self.dim, self.n)
    }

    fn accumulate_second_order(&self, u_hat: &[Complex<T>], acc: &mut [T]) {
        let two = T::lit(2.0);
        for i in 0..self.dim {
            for j in i..self.dim {
                let dij = self.derivative_values(u_hat, &[i, j]);
                let a = &self.a_vals[i * self.dim + j];
                let w = if i == j { T::one() } else { two };
                for ((slot, &d), &aij) in acc.iter_mut().zip(&dij).zip(a) {
                    *slot = *slot + w * aij * d;
                }
            }
        }
    }

    fn apply_forward_coeffs(&self, u: &[Complex<T>]) -> Vec<Complex<T>> {
        let u_hat = self.project(u);
        let mut acc = vec![T::zero(); u_hat.len()];
        self.accumulate_second_order(&u_hat, &mut acc);
        for i in 0..self.dim {
            let di = self.derivative_values(&u_hat, &[i]);
            for ((slot, &d), &bi) in acc.iter_mut().zip(&di).zip(&self.b_vals[i]) {
                *slot = *slot + bi * d;
            }
        }
        let mut out = fft::forward_real(&acc, self.dim, self.n);
        self.project_in_place(&mut out);
        out
    }

    fn apply_adjoint_coeffs(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        let v_hat = self.project(v);
        let len = v_hat.len();
        let grads: Vec<Vec<T>> = (0..self.dim).map(|j| self.derivative_values(&v_hat, &[j])).collect();
        let v_vals = fft::inverse_real(&v_hat, self.dim, self.n);
        let tau = T::two_pi();
        let mut out = vec![Complex::new(T::zero(), T::zero()); len];
        // Σ_i ∂_i P(Σ_j a_ij ∂_j v)
        for i in 0..self.dim {
            let mut flux = vec![T::zero(); len];
            for (j, g) in grads.iter().enumerate() {
                for ((slot, &gj), &aij) in flux.iter_mut().zip(g).zip(&self.a_vals[i * self.dim + j]) {
                    *slot = *slot + aij * gj;
                }
            }
            let flux_hat = fft::forward_real(&flux, self.dim, self.n);
            for ((o, f), k) in out.iter_mut().zip(&flux_hat).zip(&self.kvec) {
                *o = *o + f * Complex::new(T::zero(), tau * T::from_i64(k[i]).unwrap());
            }
        }
        // − Σ_i b̃_i ∂_i v − (Σ_i ∂_i b̃_i) v
        let mut lower = vec![T::zero(); len];
        for (x, slot) in lower.iter_mut().enumerate() {
            let mut acc = self.div_btilde_vals[x] * v_vals[x];
            for i in 0..self.dim {
                acc = acc + self.btilde_vals[i][x] * grads[i][x];
            }
            *slot = -acc;
        }
        let lower_hat = fft::forward_real(&lower, self.dim, self.n);
        for (o, l) in out.iter_mut().zip(&lower_hat) {
            *o = *o + l;
        }
        self.project_in_place(&mut out);
        // ∫L*v dx = ⟨L1, v⟩ = 0
        out[0] = Complex::new(T::zero(), T::zero());
        out
    }

    /// Constant-coefficient symbol `-4π² kᵀāk` of the mean second-order part at `flat`.
    pub(crate) fn mean_symbol(&self, flat: usize) -> T {
        let k = &self.kvec[flat];
        let mut q = T::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                q = q + self.a_mean[i * self.dim + j] * T::from_i64(k[i] * k[j]).unwrap();
            }
        }
        -T::lit(4.0) * T::PI() * T::PI() * q
    }
}
