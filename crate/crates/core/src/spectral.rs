//! Periodic fields on the unit torus `[0,1)^d` held simultaneously as grid values and
//! Fourier coefficients, together with Besov and Sobolev norms computed from dyadic
//! frequency blocks.
//!
//! Conventions: a field with resolution `n` stores `n^d` values in row-major order
//! (axis 0 slowest) at the nodes `x = idx / n`, and coefficients
//! `c_k = n^{-d} Σ_x f(x) e^{-2πik·x}` so that `f(x) = Σ_k c_k e^{2πik·x}`. The wavenumber of
//! storage index `i` along an axis is `i` for `i < n/2` and `i - n` otherwise, so the Nyquist
//! index carries `k = -n/2`.

use std::fmt::Write as _;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::scalar::Real;

pub const MAX_DIM: usize = 3;

/// One real Fourier mode `cos·cos(2πk·x) + sin·sin(2πk·x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl Mode {
    pub fn new(k: &[i64], cos: f64, sin: f64) -> Self {
        Mode { k: k.to_vec(), cos, sin }
    }

    pub fn cos(k: &[i64], amplitude: f64) -> Self {
        Self::new(k, amplitude, 0.0)
    }

    pub fn sin(k: &[i64], amplitude: f64) -> Self {
        Self::new(k, 0.0, amplitude)
    }
}

/// Declarative band-limited field: the flat serialisation format for coefficient fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub dim: usize,
    pub resolution: usize,
    #[serde(default)]
    pub coeff_list: Vec<Mode>,
}

impl FieldSpec {
    pub fn to_field<T: Real>(&self) -> Result<PeriodicField<T>> {
        synthesize(&self.coeff_list, self.dim, self.resolution)
    }
}

pub(crate) fn check_grid(dim: usize, n: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidGrid(format!("dimension {dim} outside 1..={MAX_DIM}")));
    }
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidGrid(format!("resolution {n} is not a power of two >= 2")));
    }
    Ok(())
}

#[inline]
pub(crate) fn wavenumber(idx: usize, n: usize) -> i64 {
    if idx < n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

#[inline]
fn storage_index(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}

/// Largest per-axis wavenumber kept by the 2/3 dealiasing rule: products of two fields
/// truncated to this band never alias back into it.
#[inline]
pub fn dealias_cutoff(n: usize) -> i64 {
    ((n - 1) / 3) as i64
}

/// Real-valued function on the d-torus in dual grid / Fourier representation.
#[derive(Clone, Debug)]
pub struct PeriodicField<T: Real> {
    dim: usize,
    n: usize,
    values: Vec<T>,
    coeffs: Vec<Complex<T>>,
}

impl<T: Real> PeriodicField<T> {
    pub fn zeros(dim: usize, n: usize) -> Result<Self> {
        Self::constant(dim, n, T::zero())
    }

    pub fn constant(dim: usize, n: usize, c: T) -> Result<Self> {
        check_grid(dim, n)?;
        let len = n.pow(dim as u32);
        let mut coeffs = vec![Complex::new(T::zero(), T::zero()); len];
        coeffs[0] = Complex::new(c, T::zero());
        Ok(PeriodicField { dim, n, values: vec![c; len], coeffs })
    }

    pub fn from_values(dim: usize, n: usize, values: Vec<T>) -> Result<Self> {
        check_grid(dim, n)?;
        if values.len() != n.pow(dim as u32) {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                n.pow(dim as u32),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite grid value".into()));
        }
        let coeffs = fft::forward_real(&values, dim, n);
        Ok(PeriodicField { dim, n, values, coeffs })
    }

    /// Samples `f` at every grid node.
    pub fn from_fn(dim: usize, n: usize, f: impl Fn(&[T]) -> T) -> Result<Self> {
        check_grid(dim, n)?;
        let len = n.pow(dim as u32);
        let mut x = vec![T::zero(); dim];
        let inv = T::one() / T::from_usize(n).unwrap();
        let values = (0..len)
            .map(|flat| {
                let idx = unravel(flat, dim, n);
                for a in 0..dim {
                    x[a] = T::from_usize(idx[a]).unwrap() * inv;
                }
                f(&x)
            })
            .collect();
        Self::from_values(dim, n, values)
    }

    /// Builds a field from coefficients, enforcing Hermitian symmetry by averaging `c_k`
    /// with `conj(c_{-k})`.
    pub fn from_coeffs(dim: usize, n: usize, mut coeffs: Vec<Complex<T>>) -> Result<Self> {
        check_grid(dim, n)?;
        if coeffs.len() != n.pow(dim as u32) {
            return Err(Error::InvalidGrid("coefficient array has wrong length".into()));
        }
        hermitian_symmetrize(&mut coeffs, dim, n);
        let values = fft::inverse_real(&coeffs, dim, n);
        Ok(PeriodicField { dim, n, values, coeffs })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    /// Wavevector of a flat storage index (unused axes are zero).
    #[inline]
    pub fn wavevector(&self, flat: usize) -> [i64; MAX_DIM] {
        let idx = unravel(flat, self.dim, self.n);
        let mut k = [0i64; MAX_DIM];
        for a in 0..self.dim {
            k[a] = wavenumber(idx[a], self.n);
        }
        k
    }

    /// Grid node coordinates of a flat index.
    pub fn node(&self, flat: usize) -> [T; MAX_DIM] {
        let idx = unravel(flat, self.dim, self.n);
        let inv = T::one() / T::from_usize(self.n).unwrap();
        let mut x = [T::zero(); MAX_DIM];
        for a in 0..self.dim {
            x[a] = T::from_usize(idx[a]).unwrap() * inv;
        }
        x
    }

    /// Coefficient of `e^{2πik·x}`; zero outside the representable band.
    pub fn coeff(&self, k: &[i64]) -> Complex<T> {
        let half = (self.n / 2) as i64;
        if k.len() != self.dim || k.iter().any(|&ki| ki.abs() > half) {
            return Complex::new(T::zero(), T::zero());
        }
        let mut flat = 0;
        for &ki in k {
            flat = flat * self.n + storage_index(ki, self.n);
        }
        self.coeffs[flat]
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n
    }

    pub fn ensure_same_grid(&self, other: &Self) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "(dim {}, n {}) vs (dim {}, n {})",
                self.dim, self.n, other.dim, other.n
            )))
        }
    }

    /// Applies a Fourier multiplier `c_k ↦ m(k) c_k`.
    pub fn map_coeffs(&self, m: impl Fn(&[i64; MAX_DIM], Complex<T>) -> Complex<T>) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(flat, &c)| m(&self.wavevector(flat), c))
            .collect();
        Self::from_coeffs(self.dim, self.n, coeffs).expect("grid already validated")
    }

    /// Pointwise map on the grid.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        let values = self.values.iter().map(|&v| f(v)).collect();
        Self::from_values(self.dim, self.n, values).expect("grid already validated")
    }

    /// Spectral partial derivative `∂_axis` (multiplier `2πik_axis`, Nyquist mode dropped).
    pub fn derivative(&self, axis: usize) -> Self {
        assert!(axis < self.dim, "axis {axis} out of range");
        let half = (self.n / 2) as i64;
        let tau = T::two_pi();
        self.map_coeffs(|k, c| {
            if k[axis].abs() == half {
                Complex::new(T::zero(), T::zero())
            } else {
                c * Complex::new(T::zero(), tau * T::from_i64(k[axis]).unwrap())
            }
        })
    }

    pub fn gradient(&self) -> Vec<Self> {
        (0..self.dim).map(|a| self.derivative(a)).collect()
    }

    /// Zeroes every mode with some `|k_i| > cutoff`.
    pub fn truncate(&self, cutoff: i64) -> Self {
        let zero = Complex::new(T::zero(), T::zero());
        self.map_coeffs(|k, c| if k.iter().any(|ki| ki.abs() > cutoff) { zero } else { c })
    }

    /// 2/3-rule projection.
    pub fn dealias(&self) -> Self {
        self.truncate(dealias_cutoff(self.n))
    }

    /// Grid product (no dealiasing).
    pub fn mul(&self, other: &Self) -> Self {
        assert!(self.same_grid(other), "grid mismatch in product");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).collect();
        Self::from_values(self.dim, self.n, values).expect("grid already validated")
    }

    pub fn add(&self, other: &Self) -> Self {
        self.axpy(T::one(), other)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-T::one(), other)
    }

    /// `self + alpha * other`, computed in both representations without a transform.
    pub fn axpy(&self, alpha: T, other: &Self) -> Self {
        assert!(self.same_grid(other), "grid mismatch in linear combination");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a + alpha * b).collect();
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| a + b * alpha).collect();
        PeriodicField { dim: self.dim, n: self.n, values, coeffs }
    }

    pub fn scale(&self, alpha: T) -> Self {
        PeriodicField {
            dim: self.dim,
            n: self.n,
            values: self.values.iter().map(|&v| v * alpha).collect(),
            coeffs: self.coeffs.iter().map(|&c| c * alpha).collect(),
        }
    }

    pub fn add_constant(&self, c: T) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v = *v + c;
        }
        out.coeffs[0] = out.coeffs[0] + Complex::new(c, T::zero());
        out
    }

    /// `∫ f dx` (exact for the grid trigonometric polynomial).
    pub fn mean(&self) -> T {
        self.coeffs[0].re
    }

    /// `∫ f g dx` by Parseval.
    pub fn inner(&self, other: &Self) -> T {
        assert!(self.same_grid(other), "grid mismatch in inner product");
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a * b.conj()).re).sum()
    }

    pub fn l2_norm(&self) -> T {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt()
    }

    /// Maximum absolute grid value.
    pub fn grid_sup(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Maximum absolute value on a grid refined by `factor` (power of two).
    pub fn refined_sup(&self, factor: usize) -> T {
        self.refine(self.n * factor).grid_sup()
    }

    /// Zero-padded resampling onto a finer grid; the Nyquist mode is split symmetrically.
    pub fn refine(&self, n_new: usize) -> Self {
        assert!(n_new >= self.n && n_new.is_power_of_two(), "refinement must increase resolution");
        if n_new == self.n {
            return self.clone();
        }
        let len = n_new.pow(self.dim as u32);
        let half = (self.n / 2) as i64;
        let mut coeffs = vec![Complex::new(T::zero(), T::zero()); len];
        for (flat, &c) in self.coeffs.iter().enumerate() {
            let k = self.wavevector(flat);
            let nyquist_axes: Vec<usize> = (0..self.dim).filter(|&a| k[a] == -half).collect();
            let copies = 1usize << nyquist_axes.len();
            let weight = T::one() / T::from_usize(copies).unwrap();
            for mask in 0..copies {
                let mut target = 0usize;
                for a in 0..self.dim {
                    let mut ka = k[a];
                    if let Some(pos) = nyquist_axes.iter().position(|&b| b == a) {
                        if mask & (1 << pos) != 0 {
                            ka = half;
                        }
                    }
                    target = target * n_new + storage_index(ka, n_new);
                }
                coeffs[target] = coeffs[target] + c * weight;
            }
        }
        Self::from_coeffs(self.dim, n_new, coeffs).expect("valid refinement")
    }

    /// Largest `|k_i|` among coefficients above `rel_tol · max|c|`.
    pub fn bandwidth(&self, rel_tol: T) -> i64 {
        let max = self.coeffs.iter().fold(T::zero(), |m, c| m.max(c.norm()));
        if max == T::zero() {
            return 0;
        }
        let thr = max * rel_tol;
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > thr)
            .map(|(flat, _)| self.wavevector(flat).iter().map(|k| k.abs()).max().unwrap())
            .max()
            .unwrap_or(0)
    }

    /// Sparse evaluator for off-grid values and gradients.
    pub fn evaluator(&self) -> SpectralEvaluator<T> {
        SpectralEvaluator::new(self)
    }

    /// Off-grid value by direct Fourier synthesis.
    pub fn eval(&self, x: &[T]) -> T {
        self.evaluator().value(x)
    }

    /// Grid dump with a header naming the axis order; rows follow the storage order.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for a in 0..self.dim {
            let _ = write!(out, "x{},", a + 1);
        }
        out.push_str("value\n");
        for flat in 0..self.len() {
            let x = self.node(flat);
            for xa in x.iter().take(self.dim) {
                let _ = write!(out, "{},", xa.as_f64());
            }
            let _ = writeln!(out, "{}", self.values[flat].as_f64());
        }
        out
    }
}

pub(crate) fn unravel(mut flat: usize, dim: usize, n: usize) -> [usize; MAX_DIM] {
    let mut idx = [0usize; MAX_DIM];
    for a in (0..dim).rev() {
        idx[a] = flat % n;
        flat /= n;
    }
    idx
}

pub(crate) fn negated_flat(flat: usize, dim: usize, n: usize) -> usize {
    let idx = unravel(flat, dim, n);
    let mut out = 0;
    for &i in idx.iter().take(dim) {
        out = out * n + (n - i) % n;
    }
    out
}

fn hermitian_symmetrize<T: Real>(coeffs: &mut [Complex<T>], dim: usize, n: usize) {
    let half = T::lit(0.5);
    for flat in 0..coeffs.len() {
        let neg = negated_flat(flat, dim, n);
        if neg < flat {
            continue;
        }
        if neg == flat {
            coeffs[flat] = Complex::new(coeffs[flat].re, T::zero());
        } else {
            let avg = (coeffs[flat] + coeffs[neg].conj()) * half;
            coeffs[flat] = avg;
            coeffs[neg] = avg.conj();
        }
    }
}

/// Builds `Σ (a_k cos(2πk·x) + b_k sin(2πk·x))` on a grid.
pub fn synthesize<T: Real>(modes: &[Mode], dim: usize, n: usize) -> Result<PeriodicField<T>> {
    check_grid(dim, n)?;
    let half = (n / 2) as i64;
    let len = n.pow(dim as u32);
    let mut coeffs = vec![Complex::new(T::zero(), T::zero()); len];
    for mode in modes {
        if mode.k.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "wavevector {:?} has {} components, expected {dim}",
                mode.k,
                mode.k.len()
            )));
        }
        if mode.k.iter().any(|ki| ki.abs() > half) {
            return Err(Error::FrequencyOutOfRange { k: mode.k.clone(), resolution: n });
        }
        if !mode.cos.is_finite() || !mode.sin.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite amplitude at k = {:?}", mode.k)));
        }
        let a = T::lit(mode.cos);
        let b = T::lit(mode.sin);
        let flat_of = |sign: i64| {
            mode.k.iter().fold(0usize, |acc, &ki| acc * n + storage_index(sign * ki, n))
        };
        if mode.k.iter().all(|&ki| ki == 0) {
            coeffs[0] = coeffs[0] + Complex::new(a, T::zero());
            continue;
        }
        let half_t = T::lit(0.5);
        let plus = flat_of(1);
        let minus = flat_of(-1);
        coeffs[plus] = coeffs[plus] + Complex::new(a * half_t, -b * half_t);
        coeffs[minus] = coeffs[minus] + Complex::new(a * half_t, b * half_t);
    }
    // Values straight from the coefficients; Nyquist sine parts vanish on the grid.
    let values = fft::inverse_real(&coeffs, dim, n);
    PeriodicField::from_values(dim, n, values)
}

/// Sparse real-form representation for evaluating a field and its gradient at arbitrary points.
#[derive(Clone, Debug)]
pub struct SpectralEvaluator<T: Real> {
    dim: usize,
    kmax: [usize; MAX_DIM],
    // (k, c) with f(x) = Σ Re(c e^{2πik·x}); conjugate pairs folded into one entry
    modes: Vec<([i64; MAX_DIM], Complex<T>)>,
}

impl<T: Real> SpectralEvaluator<T> {
    pub fn new(field: &PeriodicField<T>) -> Self {
        let max = field.coeffs.iter().fold(T::zero(), |m, c| m.max(c.norm()));
        let thr = max * T::epsilon();
        let mut modes = Vec::new();
        let mut kmax = [0usize; MAX_DIM];
        for (flat, &c) in field.coeffs.iter().enumerate() {
            if c.norm() <= thr {
                continue;
            }
            let neg = negated_flat(flat, field.dim, field.n);
            let weight = match neg.cmp(&flat) {
                std::cmp::Ordering::Less => continue,
                std::cmp::Ordering::Equal => T::one(),
                std::cmp::Ordering::Greater => T::lit(2.0),
            };
            let k = field.wavevector(flat);
            for a in 0..field.dim {
                kmax[a] = kmax[a].max(k[a].unsigned_abs() as usize);
            }
            modes.push((k, c * weight));
        }
        SpectralEvaluator { dim: field.dim, kmax, modes }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Largest `|k_a|` per axis among the retained modes.
    pub fn kmax(&self) -> [usize; MAX_DIM] {
        self.kmax
    }

    /// True when the field is a constant.
    pub fn constant_value(&self) -> Option<T> {
        match self.modes.as_slice() {
            [] => Some(T::zero()),
            [(k, c)] if *k == [0; MAX_DIM] => Some(c.re),
            _ => None,
        }
    }

    pub fn value(&self, x: &[T]) -> T {
        if let Some(c) = self.constant_value() {
            return c;
        }
        let mut tables = PhaseTables::new(self.dim, self.kmax);
        tables.update(x);
        self.value_at(&tables)
    }

    /// Value at the point the tables were last updated for.
    pub fn value_at(&self, tables: &PhaseTables<T>) -> T {
        self.modes.iter().map(|(k, c)| (c * tables.phase(k)).re).sum()
    }

    /// Value and gradient at `x`; the gradient is written into `grad[..dim]`.
    pub fn value_and_gradient(&self, x: &[T], grad: &mut [T]) -> T {
        let mut tables = PhaseTables::new(self.dim, self.kmax);
        tables.update(x);
        self.value_and_gradient_at(&tables, grad)
    }

    pub fn value_and_gradient_at(&self, tables: &PhaseTables<T>, grad: &mut [T]) -> T {
        for g in grad.iter_mut().take(self.dim) {
            *g = T::zero();
        }
        let tau = T::two_pi();
        let mut value = T::zero();
        for (k, c) in &self.modes {
            let z = c * tables.phase(k);
            value = value + z.re;
            // d/dx_a Re(z) = Re(2πik_a z) = -2πk_a Im(z)
            for a in 0..self.dim {
                grad[a] = grad[a] - tau * T::from_i64(k[a]).unwrap() * z.im;
            }
        }
        value
    }
}

/// Tables of `e^{2πimx_a}` for `|m| ≤ kmax_a`, shared by evaluators at one point.
#[derive(Clone, Debug)]
pub struct PhaseTables<T: Real> {
    dim: usize,
    kmax: [usize; MAX_DIM],
    tables: [Vec<Complex<T>>; MAX_DIM],
}

impl<T: Real> PhaseTables<T> {
    pub fn new(dim: usize, kmax: [usize; MAX_DIM]) -> Self {
        let tables = std::array::from_fn(|a| vec![Complex::new(T::one(), T::zero()); 2 * kmax[a] + 1]);
        PhaseTables { dim, kmax, tables }
    }

    /// Tables covering every evaluator in `evs`.
    pub fn covering(dim: usize, evs: &[&SpectralEvaluator<T>]) -> Self {
        let mut kmax = [0usize; MAX_DIM];
        for ev in evs {
            for a in 0..MAX_DIM {
                kmax[a] = kmax[a].max(ev.kmax[a]);
            }
        }
        Self::new(dim, kmax)
    }

    pub fn kmax(&self) -> [usize; MAX_DIM] {
        self.kmax
    }

    pub fn update(&mut self, x: &[T]) {
        for a in 0..self.dim {
            let km = self.kmax[a];
            let base = Complex::from_polar(T::one(), T::two_pi() * (x[a] - x[a].floor()));
            let table = &mut self.tables[a];
            let mut p = Complex::new(T::one(), T::zero());
            for m in 1..=km {
                p = p * base;
                table[km + m] = p;
                table[km - m] = p.conj();
            }
        }
    }

    #[inline]
    fn phase(&self, k: &[i64; MAX_DIM]) -> Complex<T> {
        let mut e = Complex::new(T::one(), T::zero());
        for a in 0..self.dim {
            e = e * self.tables[a][(self.kmax[a] as i64 + k[a]) as usize];
        }
        e
    }
}

/// Besov smoothness/integrability triple `(s, p, q)`; `p, q` may be `f64::INFINITY`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesovIndex {
    pub s: f64,
    pub p: f64,
    pub q: f64,
}

impl BesovIndex {
    pub fn new(s: f64, p: f64, q: f64) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::InvalidArgument("Besov smoothness must be finite".into()));
        }
        if !(p >= 1.0) || !(q >= 1.0) {
            return Err(Error::InvalidArgument(format!("Besov indices need p, q >= 1 (got p={p}, q={q})")));
        }
        Ok(BesovIndex { s, p, q })
    }

    /// `H^s = B^s_{22}`.
    pub fn sobolev(s: f64) -> Self {
        BesovIndex { s, p: 2.0, q: 2.0 }
    }

    /// `B^s_{∞∞}` (Hölder–Zygmund scale).
    pub fn holder(s: f64) -> Self {
        BesovIndex { s, p: f64::INFINITY, q: f64::INFINITY }
    }
}

/// Dyadic block index of a wavevector: `0` for `k = 0`, otherwise `j` with `2^{j-1} <= |k| < 2^j`.
pub fn dyadic_block(k: &[i64]) -> usize {
    let r2: i64 = k.iter().map(|x| x * x).sum();
    if r2 == 0 {
        return 0;
    }
    let mut j = 1;
    while r2 >= 1i64 << (2 * j) {
        j += 1;
    }
    j
}

/// `L^p` norm of a single dyadic block, given its nonzero coefficients.
fn block_lp_norm<T: Real>(dim: usize, kmax: usize, entries: &[([i64; MAX_DIM], Complex<T>)], p: f64) -> T {
    if entries.is_empty() {
        return T::zero();
    }
    if p == 2.0 {
        return entries.iter().map(|(_, c)| c.norm_sqr()).sum::<T>().sqrt();
    }
    let n = (4 * kmax.max(1)).next_power_of_two();
    let len = n.pow(dim as u32);
    let mut coeffs = vec![Complex::new(T::zero(), T::zero()); len];
    for (k, c) in entries {
        let flat = k.iter().take(dim).fold(0usize, |acc, &ki| acc * n + storage_index(ki, n));
        coeffs[flat] = *c;
    }
    let values = fft::inverse_real(&coeffs, dim, n);
    if p.is_infinite() {
        values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    } else {
        let pt = T::lit(p);
        let mean = values.iter().map(|v| v.abs().powf(pt)).sum::<T>() / T::from_usize(len).unwrap();
        mean.powf(T::one() / pt)
    }
}

/// Besov norm `(Σ_j 2^{jsq} ‖Δ_j f‖_p^q)^{1/q}` over sharp dyadic annuli (max over `j` when
/// `q = ∞`). Block sup-norms and general `L^p` norms are evaluated on a synthesis grid with at
/// least four points per period of the block's highest frequency.
pub fn besov_norm<T: Real>(f: &PeriodicField<T>, idx: BesovIndex) -> T {
    let max = f.coeffs.iter().fold(T::zero(), |m, c| m.max(c.norm()));
    if max == T::zero() {
        return T::zero();
    }
    // coefficients at roundoff level are dropped so the evaluation grid does not depend on n
    let thr = max * T::lit(1e-13);
    let mut blocks: Vec<Vec<([i64; MAX_DIM], Complex<T>)>> = Vec::new();
    for (flat, &c) in f.coeffs.iter().enumerate() {
        if c.norm() <= thr {
            continue;
        }
        let k = f.wavevector(flat);
        let j = dyadic_block(&k[..f.dim]);
        if blocks.len() <= j {
            blocks.resize(j + 1, Vec::new());
        }
        blocks[j].push((k, c));
    }
    let mut acc = T::zero();
    for (j, entries) in blocks.iter().enumerate() {
        // the block grid depends only on j and the field's band, so each block norm is a true norm
        let kmax = if j == 0 { 0 } else { ((1usize << j) - 1).min(f.n / 2) };
        let weighted = T::lit((j as f64 * idx.s).exp2()) * block_lp_norm(f.dim, kmax, entries, idx.p);
        if idx.q.is_infinite() {
            acc = acc.max(weighted);
        } else {
            acc = acc + weighted.powf(T::lit(idx.q));
        }
    }
    if idx.q.is_infinite() {
        acc
    } else {
        acc.powf(T::lit(1.0 / idx.q))
    }
}

/// Sobolev norm `(Σ_k (1+|k|²)^s |c_k|²)^{1/2}`.
pub fn sobolev_norm<T: Real>(f: &PeriodicField<T>, s: f64) -> T {
    let st = T::lit(s);
    f.coeffs
        .iter()
        .enumerate()
        .map(|(flat, c)| {
            let k = f.wavevector(flat);
            let r2: i64 = k.iter().map(|x| x * x).sum();
            (T::one() + T::from_i64(r2).unwrap()).powf(st) * c.norm_sqr()
        })
        .sum::<T>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    pub(crate) fn random_modes(rng: &mut impl Rng, dim: usize, kmax: i64, count: usize) -> Vec<Mode> {
        (0..count)
            .map(|_| {
                let k: Vec<i64> = (0..dim).map(|_| rng.random_range(-kmax..=kmax)).collect();
                Mode::new(&k, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            })
            .collect()
    }

    #[test]
    fn single_cosine_matches_grid() {
        let f: PeriodicField<f64> = synthesize(&[Mode::cos(&[1, 0], 1.0)], 2, 32).unwrap();
        for flat in 0..f.len() {
            let x = f.node(flat);
            assert_abs_diff_eq!(f.values()[flat], (2.0 * PI * x[0]).cos(), epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_list_is_zero() {
        let f: PeriodicField<f64> = synthesize(&[], 2, 32).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_mode_has_two_half_coefficients() {
        let f: PeriodicField<f64> = synthesize(&[Mode::sin(&[1, 1], 1.0)], 2, 64).unwrap();
        // oracle: direct DFT of the grid values
        let n = 64usize;
        let mut nonzero = Vec::new();
        for k1 in -32i64..32 {
            for k2 in -32i64..32 {
                let mut acc = Complex::new(0.0, 0.0);
                for flat in 0..f.len() {
                    let x = f.node(flat);
                    let th = -2.0 * PI * (k1 as f64 * x[0] + k2 as f64 * x[1]);
                    acc += Complex::from_polar(f.values()[flat], th);
                }
                acc /= (n * n) as f64;
                if acc.norm() > 1e-10 {
                    nonzero.push(((k1, k2), acc.norm()));
                }
            }
        }
        assert_eq!(nonzero.len(), 2);
        for ((k1, k2), modulus) in nonzero {
            assert!((k1, k2) == (1, 1) || (k1, k2) == (-1, -1));
            assert_abs_diff_eq!(modulus, 0.5, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(f.coeff(&[1, 1]).norm(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn out_of_range_frequency_is_rejected() {
        let err = synthesize::<f64>(&[Mode::cos(&[17, 0], 1.0)], 2, 32).unwrap_err();
        match err {
            Error::FrequencyOutOfRange { k, .. } => assert_eq!(k, vec![17, 0]),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn besov_examples() {
        let zero: PeriodicField<f64> = PeriodicField::zeros(2, 16).unwrap();
        assert_eq!(besov_norm(&zero, BesovIndex::holder(1.5)), 0.0);
        let f: PeriodicField<f64> = synthesize(&[Mode::cos(&[1], 1.0)], 1, 32).unwrap();
        assert_abs_diff_eq!(besov_norm(&f, BesovIndex::sobolev(0.0)), 0.5f64.sqrt(), epsilon = 1e-14);
        // sup-norm of the block containing |k| = 1 is exactly 1
        assert_abs_diff_eq!(besov_norm(&f, BesovIndex::holder(0.0)), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn sobolev_examples() {
        let one: PeriodicField<f64> = PeriodicField::constant(2, 16, 1.0).unwrap();
        assert_abs_diff_eq!(sobolev_norm(&one, 3.0), 1.0, epsilon = 1e-15);
        let f: PeriodicField<f64> = synthesize(&[Mode::cos(&[1, 0], 1.0)], 2, 16).unwrap();
        // two coefficients of modulus 1/2, each weighted by (1 + 1)^{-1}
        assert_abs_diff_eq!(sobolev_norm(&f, -1.0), (2.0 * 0.25 * 0.5f64).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(sobolev_norm(&f, 0.0), f.l2_norm(), epsilon = 1e-14);
        let c: PeriodicField<f64> = PeriodicField::constant(1, 8, -2.5).unwrap();
        for s in [-3.0, 0.0, 0.5, 4.0] {
            assert_abs_diff_eq!(sobolev_norm(&c, s), 2.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn parseval_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in 1..=3 {
            let n = if dim == 3 { 16 } else { 32 };
            let f: PeriodicField<f64> = synthesize(&random_modes(&mut rng, dim, 5, 12), dim, n).unwrap();
            let quad = f.values().iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
            let s0 = sobolev_norm(&f, 0.0);
            assert!((s0 * s0 - quad).abs() <= 1e-10 * quad);
            let back = PeriodicField::from_values(dim, n, f.values().to_vec()).unwrap();
            let g = PeriodicField::from_coeffs(dim, n, back.coeffs().to_vec()).unwrap();
            let scale = f.grid_sup();
            for (a, b) in f.values().iter().zip(g.values()) {
                assert!((a - b).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn hermitian_symmetry_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = PeriodicField::from_values(2, 8, values).unwrap();
        let g = f.derivative(0);
        for field in [&f, &g] {
            for k1 in -3i64..=3 {
                for k2 in -3i64..=3 {
                    let a = field.coeff(&[k1, k2]);
                    let b = field.coeff(&[-k1, -k2]).conj();
                    assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-15);
                    assert_abs_diff_eq!(a.im, b.im, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn evaluation_is_periodic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f: PeriodicField<f64> = synthesize(&random_modes(&mut rng, 2, 4, 8), 2, 16).unwrap();
        let ev = f.evaluator();
        let x = [0.3125, 0.75];
        let shifted = [1.3125, 0.75];
        assert_eq!(ev.value(&x), ev.value(&shifted));
        // on-grid evaluation reproduces the node value
        let flat = 5 * 16 + 12;
        assert_abs_diff_eq!(ev.value(&f.node(flat)[..2]), f.values()[flat], epsilon = 1e-12);
    }

    #[test]
    fn evaluator_gradient_matches_spectral_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f: PeriodicField<f64> = synthesize(&random_modes(&mut rng, 3, 3, 10), 3, 16).unwrap();
        let ev = f.evaluator();
        let dx: Vec<_> = f.gradient().iter().map(|g| g.evaluator()).collect();
        let x = [0.17, 0.61, 0.93];
        let mut grad = [0.0; 3];
        let v = ev.value_and_gradient(&x, &mut grad);
        assert_abs_diff_eq!(v, ev.value(&x), epsilon = 1e-12);
        for a in 0..3 {
            assert_abs_diff_eq!(grad[a], dx[a].value(&x), epsilon = 1e-10);
        }
    }

    #[test]
    fn refinement_preserves_off_grid_values() {
        let f: PeriodicField<f64> =
            synthesize(&[Mode::new(&[3, -2], 0.4, 0.7), Mode::cos(&[0, 1], 1.0)], 2, 16).unwrap();
        let g = f.refine(64);
        let x = [0.123, 0.456];
        assert_abs_diff_eq!(f.eval(&x), g.eval(&x), epsilon = 1e-12);
        assert_abs_diff_eq!(f.l2_norm(), g.l2_norm(), epsilon = 1e-13);
    }

    #[test]
    fn besov_norm_resolution_stability() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let modes = random_modes(&mut rng, 2, 4, 10);
        let a: PeriodicField<f64> = synthesize(&modes, 2, 16).unwrap();
        let b: PeriodicField<f64> = synthesize(&modes, 2, 32).unwrap();
        for idx in [
            BesovIndex::holder(0.5),
            BesovIndex::new(-0.5, 1.0, 2.0).unwrap(),
            BesovIndex::new(1.0, 3.0, 1.0).unwrap(),
            BesovIndex::sobolev(2.0),
        ] {
            let na = besov_norm(&a, idx);
            let nb = besov_norm(&b, idx);
            assert!((na - nb).abs() <= 1e-8 * na, "{idx:?}: {na} vs {nb}");
        }
    }

    #[test]
    fn f32_fields_work() {
        let f: PeriodicField<f32> = synthesize(&[Mode::cos(&[2], 1.0)], 1, 16).unwrap();
        let d2 = f.derivative(0).derivative(0);
        let expected = -(4.0 * std::f32::consts::PI).powi(2);
        assert!((d2.values()[0] - expected).abs() < 1e-3 * expected.abs());
    }

    fn field_strategy() -> impl Strategy<Value = (Vec<Mode>, Vec<Mode>)> {
        let mode = (proptest::collection::vec(-4i64..=4, 2), -1.0f64..1.0, -1.0f64..1.0)
            .prop_map(|(k, a, b)| Mode::new(&k, a, b));
        (
            proptest::collection::vec(mode.clone(), 1..8),
            proptest::collection::vec(mode, 1..8),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn norm_axioms((fm, gm) in field_strategy(), c in -3.0f64..3.0) {
            let f: PeriodicField<f64> = synthesize(&fm, 2, 32).unwrap();
            let g: PeriodicField<f64> = synthesize(&gm, 2, 32).unwrap();
            for idx in [BesovIndex::holder(-0.5), BesovIndex::new(1.0, 2.0, 1.0).unwrap(), BesovIndex::new(0.5, 1.0, 3.0).unwrap()] {
                let nf = besov_norm(&f, idx);
                let ng = besov_norm(&g, idx);
                let nfg = besov_norm(&f.add(&g), idx);
                prop_assert!(nfg <= (nf + ng) * (1.0 + 1e-12) + 1e-14);
                let scaled = besov_norm(&f.scale(c), idx);
                prop_assert!((scaled - c.abs() * nf).abs() <= 1e-10 * (1.0 + nf));
                // q-monotonicity of the block sums
                let inf = besov_norm(&f, BesovIndex::new(idx.s, idx.p, f64::INFINITY).unwrap());
                let one = besov_norm(&f, BesovIndex::new(idx.s, idx.p, 1.0).unwrap());
                prop_assert!(inf <= one * (1.0 + 1e-12));
            }
            for s in [-1.0, 0.0, 1.5] {
                let sf = sobolev_norm(&f, s);
                let sg = sobolev_norm(&g, s);
                prop_assert!(sobolev_norm(&f.add(&g), s) <= (sf + sg) * (1.0 + 1e-12));
                prop_assert!((sobolev_norm(&f.scale(c), s) - c.abs() * sf).abs() <= 1e-10 * (1.0 + sf));
                prop_assert!(sobolev_norm(&f, s) <= sobolev_norm(&f, s + 0.5) * (1.0 + 1e-12));
            }
        }
    }
}
