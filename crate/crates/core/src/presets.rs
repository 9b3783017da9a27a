//! Built-in coefficient models.

use crate::error::{Error, Result};
use crate::generator::{DiffusivitySpec, DriftSpec};
use crate::scalar::Real;
use crate::spectral::{synthesize, Mode, PeriodicField};

/// A named `(b, σ)` pair.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub name: String,
    pub drift: DriftSpec<T>,
    pub diffusivity: DiffusivitySpec<T>,
}

impl<T: Real> Model<T> {
    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn resolution(&self) -> usize {
        self.drift.resolution()
    }

    /// Builds a model from coefficient lists: `drift[i]` for `b_i`, `sigma[i*d + j]` for `σ_ij`.
    pub fn from_modes(name: &str, dim: usize, n: usize, drift: &[Vec<Mode>], sigma: &[Vec<Mode>]) -> Result<Self> {
        if drift.len() != dim {
            return Err(Error::InvalidArgument(format!("drift needs {dim} components, got {}", drift.len())));
        }
        if sigma.len() != dim * dim {
            return Err(Error::InvalidArgument(format!("σ needs {} entries, got {}", dim * dim, sigma.len())));
        }
        let b = drift.iter().map(|m| synthesize(m, dim, n)).collect::<Result<Vec<_>>>()?;
        let s = sigma.iter().map(|m| synthesize(m, dim, n)).collect::<Result<Vec<_>>>()?;
        Ok(Model { name: name.to_string(), drift: DriftSpec::new(b)?, diffusivity: DiffusivitySpec::new(s)? })
    }
}

fn unit(dim: usize, axis: usize, k: i64) -> Vec<i64> {
    let mut v = vec![0; dim];
    v[axis] = k;
    v
}

/// `b = 0`, `σ = I`: invariant measure is Lebesgue.
pub fn zero_drift<T: Real>(dim: usize, n: usize) -> Result<Model<T>> {
    Ok(Model {
        name: "zero-drift".into(),
        drift: DriftSpec::zero(dim, n)?,
        diffusivity: DiffusivitySpec::identity(dim, n)?,
    })
}

/// Default potential: `B = ½ sin(2πx₁)` plus `¼ cos(2πx₂)` when `d ≥ 2`.
pub fn default_potential(dim: usize) -> Vec<Mode> {
    let mut modes = vec![Mode::sin(&unit(dim, 0, 1), 0.5)];
    if dim >= 2 {
        modes.push(Mode::cos(&unit(dim, 1, 1), 0.25));
    }
    modes
}

/// Gradient drift `b = ∇B`, `σ = I`; the invariant density is `e^{2B} / ∫e^{2B}`.
pub fn gradient<T: Real>(dim: usize, n: usize, potential: &[Mode]) -> Result<Model<T>> {
    let tau = std::f64::consts::TAU;
    let components = (0..dim)
        .map(|i| {
            let modes: Vec<Mode> = potential
                .iter()
                .filter(|m| m.k.get(i).copied().unwrap_or(0) != 0)
                .map(|m| {
                    let ki = tau * m.k[i] as f64;
                    // ∂_i (a cos θ + b sin θ) = 2πk_i (b cos θ − a sin θ)
                    Mode::new(&m.k, ki * m.sin, -ki * m.cos)
                })
                .collect();
            synthesize(&modes, dim, n)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Model {
        name: "gradient".into(),
        drift: DriftSpec::new(components)?,
        diffusivity: DiffusivitySpec::identity(dim, n)?,
    })
}

pub fn default_gradient<T: Real>(dim: usize, n: usize) -> Result<Model<T>> {
    gradient(dim, n, &default_potential(dim))
}

/// Non-gradient drift with `σ = I` (`d ≥ 2`):
/// `b₁ = sin 2πx₂ + ½ sin 2πx₁`, `b₂ = ½ cos 2πx₁`, `b₃ = ½ sin 2πx₂`.
pub fn shear<T: Real>(dim: usize, n: usize) -> Result<Model<T>> {
    if dim < 2 {
        return Err(Error::InvalidArgument("the shear preset needs d >= 2".into()));
    }
    let e = |axis| unit(dim, axis, 1);
    let mut drift = vec![
        vec![Mode::sin(&e(1), 1.0), Mode::sin(&e(0), 0.5)],
        vec![Mode::cos(&e(0), 0.5)],
    ];
    if dim == 3 {
        drift.push(vec![Mode::sin(&e(1), 0.5)]);
    }
    let components = drift.iter().map(|m| synthesize(m, dim, n)).collect::<Result<Vec<_>>>()?;
    Ok(Model {
        name: "shear".into(),
        drift: DriftSpec::new(components)?,
        diffusivity: DiffusivitySpec::identity(dim, n)?,
    })
}

/// Zero drift with variable diffusivity
/// `σ_ij = δ_ij (1 + ¼ sin 2πx_{i+1}) + 0.1 (1 − δ_ij) cos 2πx₁` (axis index mod d).
pub fn modulated<T: Real>(dim: usize, n: usize) -> Result<Model<T>> {
    let mut sigma = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            let modes = if i == j {
                vec![Mode::cos(&vec![0; dim], 1.0), Mode::sin(&unit(dim, (i + 1) % dim, 1), 0.25)]
            } else {
                vec![Mode::cos(&unit(dim, 0, 1), 0.1)]
            };
            sigma.push(synthesize::<T>(&modes, dim, n)?);
        }
    }
    Ok(Model {
        name: "modulated".into(),
        drift: DriftSpec::zero(dim, n)?,
        diffusivity: DiffusivitySpec::new(sigma)?,
    })
}

/// Preset by name: `zero-drift`, `gradient`, `shear`, `modulated`.
pub fn by_name<T: Real>(name: &str, dim: usize, n: usize) -> Result<Model<T>> {
    match name {
        "zero-drift" => zero_drift(dim, n),
        "gradient" => default_gradient(dim, n),
        "shear" => shear(dim, n),
        "modulated" => modulated(dim, n),
        other => Err(Error::InvalidArgument(format!(
            "unknown preset '{other}' (expected zero-drift, gradient, shear or modulated)"
        ))),
    }
}

pub const PRESET_NAMES: [&str; 4] = ["zero-drift", "gradient", "shear", "modulated"];

/// Every preset available in dimension `dim`.
pub fn all_presets<T: Real>(dim: usize, n: usize) -> Result<Vec<Model<T>>> {
    let mut out = vec![zero_drift(dim, n)?, default_gradient(dim, n)?, modulated(dim, n)?];
    if dim >= 2 {
        out.push(shear(dim, n)?);
    }
    Ok(out)
}

/// `e^{2B}` normalised to unit mass on the grid.
pub fn gradient_density<T: Real>(dim: usize, n: usize, potential: &[Mode]) -> Result<PeriodicField<T>> {
    let b: PeriodicField<T> = synthesize(potential, dim, n)?;
    let w = b.map_values(|v| (T::lit(2.0) * v).exp());
    let mass = w.mean();
    Ok(w.scale(T::one() / mass))
}
