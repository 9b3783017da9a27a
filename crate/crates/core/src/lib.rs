pub mod entropy;
pub mod error;
mod fft;
pub mod generator;
pub mod invariant;
pub mod krylov;
pub mod limit;
pub mod linalg;
pub mod poisson;
pub mod presets;
pub mod rng;
pub mod scalar;
pub mod sde;
pub mod spectral;
pub mod stats;
pub mod wasserstein;

pub use error::{Error, Result};
pub use scalar::Real;
pub use spectral::{besov_norm, sobolev_norm, BesovIndex, FieldSpec, Mode, PeriodicField, PhaseTables, SpectralEvaluator};

pub type Field = PeriodicField<f64>;
pub type Generator = generator::GeneratorOperator<f64>;
pub type Drift = generator::DriftSpec<f64>;
pub type Diffusivity = generator::DiffusivitySpec<f64>;
pub type Model = presets::Model<f64>;
pub type Measure = invariant::InvariantMeasure<f64>;
pub type Trajectory = sde::DiffusionPath<f64>;
