//! Experiment configuration: JSON, every field optional, unknown fields rejected.

use serde::{Deserialize, Serialize};
use torus_clt::presets::{self, PRESET_NAMES};
use torus_clt::{Mode, Model};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub sde: SdeConfig,
    pub tests: TestsConfig,
    pub ot: OtConfig,
    pub entropy: EntropyConfig,
    pub seeds: SeedConfig,
    pub output: OutputConfig,
    pub suite: SuiteConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl ModeConfig {
    pub fn to_mode(&self) -> Mode {
        Mode::new(&self.k, self.cos, self.sin)
    }
}

/// A preset name, or explicit coefficient lists (`drift[i]` for `b_i`, `sigma[i*d+j]` for `σ_ij`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Option<String>,
    pub drift: Option<Vec<Vec<ModeConfig>>>,
    pub sigma: Option<Vec<Vec<ModeConfig>>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { preset: Some("zero-drift".into()), drift: None, sigma: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub resolution: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dim: 2, resolution: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    pub horizon: f64,
    pub step: f64,
    pub replications: usize,
    /// Initial point; the origin when absent.
    pub x0: Option<Vec<f64>>,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig { horizon: 200.0, step: 0.01, replications: 200, x0: None }
    }
}

/// Test functions as Fourier mode lists; `√2 cos(2πx₁)` when empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestsConfig {
    pub functions: Vec<Vec<ModeConfig>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtConfig {
    pub bins: usize,
    pub horizons: Vec<f64>,
    pub replications: usize,
    /// Time step of the rate experiment; `sde.step` when absent.
    pub step: Option<f64>,
    pub bias_replications: usize,
    pub max_refinements: usize,
    pub cap: usize,
    /// Frequency bound of the Lipschitz net used to sample the limit `‖G‖_F`.
    pub net_kmax: i64,
    pub net_draws: usize,
}

impl Default for OtConfig {
    fn default() -> Self {
        OtConfig {
            bins: 16,
            horizons: (5..=11).map(|j| 2f64.powi(j)).collect(),
            replications: 50,
            step: None,
            bias_replications: 5,
            max_refinements: 1,
            cap: torus_clt::wasserstein::EXACT_CELL_CAP,
            net_kmax: 2,
            net_draws: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    pub dim: usize,
    pub s: f64,
    /// Source ball integrability, `2` or `"inf"`.
    pub p: Exponent,
    pub radius: f64,
    /// Target smoothness `t`.
    pub t: f64,
    /// `"besov"` (`B^t_{p'∞}`) or `"sobolev"` (`H^t`).
    pub norm: String,
    pub norm_p: Exponent,
    pub truncation: usize,
    pub radius_hi: f64,
    pub radius_lo: f64,
    pub radius_count: usize,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            dim: 2,
            s: 1.0,
            p: Exponent::Inf,
            radius: 1.0,
            t: -0.5,
            norm: "besov".into(),
            norm_p: Exponent::Inf,
            truncation: 4096,
            radius_hi: 0.05,
            radius_lo: 0.005,
            radius_count: 11,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Finite(f64),
    #[serde(with = "inf_tag")]
    Inf,
}

impl Exponent {
    pub fn value(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Inf => f64::INFINITY,
        }
    }
}

mod inf_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("inf")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "inf" {
            Ok(())
        } else {
            Err(D::Error::custom(format!("expected a number or \"inf\", got {s:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub master: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { master: 20240611 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: "out".into() }
    }
}

/// `quick` shrinks every acceptance experiment to a smoke-test size; verdicts are then not meaningful.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub quick: bool,
}

fn bad(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config { path: path.into(), message: message.into() }
}

impl ExperimentConfig {
    /// Parses JSON; errors carry the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            bad(if path == "." { "<root>" } else { &path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn x0(&self) -> Vec<f64> {
        self.sde.x0.clone().unwrap_or_else(|| vec![0.0; self.dim()])
    }

    /// Checks shared by every subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = self.grid.dim;
        if d == 0 {
            return Err(bad("grid.dim", "must be at least 1"));
        }
        let n = self.grid.resolution;
        if n < 4 || !n.is_power_of_two() {
            return Err(bad("grid.resolution", format!("must be a power of two ≥ 4, got {n}")));
        }
        if !(self.sde.step > 0.0) {
            return Err(bad("sde.step", "must be positive"));
        }
        if !(self.sde.horizon >= self.sde.step) {
            return Err(bad("sde.horizon", "must be at least sde.step"));
        }
        if self.sde.replications == 0 {
            return Err(bad("sde.replications", "must be at least 1"));
        }
        if let Some(x0) = &self.sde.x0 {
            if x0.len() != d {
                return Err(bad("sde.x0", format!("needs {d} coordinates, got {}", x0.len())));
            }
        }
        match (&self.model.preset, &self.model.drift, &self.model.sigma) {
            (Some(p), None, None) => {
                if !PRESET_NAMES.contains(&p.as_str()) {
                    return Err(bad("model.preset", format!("unknown preset {p:?}; expected one of {PRESET_NAMES:?}")));
                }
            }
            (None, Some(b), Some(s)) => {
                if b.len() != d {
                    return Err(bad("model.drift", format!("needs {d} components, got {}", b.len())));
                }
                if s.len() != d * d {
                    return Err(bad("model.sigma", format!("needs {} entries, got {}", d * d, s.len())));
                }
                for (name, lists) in [("model.drift", b), ("model.sigma", s)] {
                    check_modes(name, lists, d)?;
                }
            }
            _ => return Err(bad("model", "give either `preset` or both `drift` and `sigma`")),
        }
        check_modes("tests.functions", &self.tests.functions, d)?;
        if self.ot.bins < 2 {
            return Err(bad("ot.bins", "must be at least 2"));
        }
        if self.ot.horizons.len() < 2 || self.ot.horizons.windows(2).any(|w| !(w[1] > w[0]) || !(w[0] > 0.0)) {
            return Err(bad("ot.horizons", "need two or more positive increasing horizons"));
        }
        if self.ot.replications < 2 {
            return Err(bad("ot.replications", "must be at least 2"));
        }
        if self.ot.net_kmax < 1 {
            return Err(bad("ot.net_kmax", "must be at least 1"));
        }
        if let Some(h) = self.ot.step {
            if !(h > 0.0) {
                return Err(bad("ot.step", "must be positive"));
            }
        }
        let e = &self.entropy;
        if !(1..=3).contains(&e.dim) {
            return Err(bad("entropy.dim", format!("must be 1, 2 or 3, got {}", e.dim)));
        }
        for (name, p) in [("entropy.p", e.p), ("entropy.norm_p", e.norm_p)] {
            if p != Exponent::Inf && p != Exponent::Finite(2.0) {
                return Err(bad(name, "must be 2 or \"inf\""));
            }
        }
        if e.norm != "besov" && e.norm != "sobolev" {
            return Err(bad("entropy.norm", format!("must be \"besov\" or \"sobolev\", got {:?}", e.norm)));
        }
        if !(e.radius_hi > e.radius_lo && e.radius_lo > 0.0) || e.radius_count < 3 {
            return Err(bad("entropy.radius_hi", "need radius_hi > radius_lo > 0 and radius_count ≥ 3"));
        }
        Ok(())
    }

    /// Extra rule of the Wasserstein rate experiment.
    pub fn validate_rate(&self) -> Result<(), CliError> {
        if self.grid.dim > 3 {
            return Err(bad(
                "grid.dim",
                format!(
                    "wasserstein-rate needs d ≤ 3: the √T Wasserstein limit is only established for d ≤ 3 (got {}); clt accepts any d ≥ 1",
                    self.grid.dim
                ),
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> torus_clt::Result<Model> {
        let (d, n) = (self.grid.dim, self.grid.resolution);
        match &self.model.preset {
            Some(p) => presets::by_name(p, d, n),
            None => {
                let to = |lists: &Option<Vec<Vec<ModeConfig>>>| -> Vec<Vec<Mode>> {
                    lists.iter().flatten().map(|l| l.iter().map(ModeConfig::to_mode).collect()).collect()
                };
                Model::from_modes("custom", d, n, &to(&self.model.drift), &to(&self.model.sigma))
            }
        }
    }

    pub fn test_modes(&self) -> Vec<Vec<Mode>> {
        if self.tests.functions.is_empty() {
            let mut k = vec![0; self.grid.dim];
            k[0] = 1;
            return vec![vec![Mode::cos(&k, std::f64::consts::SQRT_2)]];
        }
        self.tests.functions.iter().map(|l| l.iter().map(ModeConfig::to_mode).collect()).collect()
    }
}

fn check_modes(name: &str, lists: &[Vec<ModeConfig>], d: usize) -> Result<(), CliError> {
    for (i, list) in lists.iter().enumerate() {
        for (j, m) in list.iter().enumerate() {
            if m.k.len() != d {
                return Err(bad(&format!("{name}[{i}][{j}].k"), format!("needs {d} entries, got {}", m.k.len())));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_report_their_path() {
        let err = ExperimentConfig::from_json(r#"{"grid": {"dim": 2, "resolutoin": 16}}"#).unwrap_err();
        match err {
            CliError::Config { path, message } => {
                assert_eq!(path, "grid.resolutoin");
                assert!(message.contains("resolutoin"), "{message}");
            }
            e => panic!("{e:?}"),
        }
        let err = ExperimentConfig::from_json(r#"{"sde": {"step": "small"}}"#).unwrap_err();
        assert!(matches!(err, CliError::Config { ref path, .. } if path == "sde.step"), "{err:?}");
    }

    #[test]
    fn dimension_four_is_rate_only_error() {
        let cfg = ExperimentConfig::from_json(r#"{"grid": {"dim": 4}}"#).unwrap();
        let err = cfg.validate_rate().unwrap_err();
        assert!(err.to_string().contains("d ≤ 3"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn exponents_accept_inf() {
        let cfg = ExperimentConfig::from_json(r#"{"entropy": {"p": 2, "norm_p": "inf"}}"#).unwrap();
        assert_eq!(cfg.entropy.p.value(), 2.0);
        assert!(cfg.entropy.norm_p.value().is_infinite());
        assert!(ExperimentConfig::from_json(r#"{"entropy": {"p": 3}}"#).is_err());
    }

    #[test]
    fn explicit_model_checks_shapes() {
        let ok = r#"{"model": {"preset": null, "drift": [[{"k": [1], "sin": 0.5}]], "sigma": [[{"k": [0], "cos": 1.0}]]},
                     "grid": {"dim": 1}}"#;
        let cfg = ExperimentConfig::from_json(ok).unwrap();
        assert_eq!(cfg.model().unwrap().dim(), 1);
        let bad = r#"{"model": {"preset": null, "drift": [[{"k": [1, 0]}]], "sigma": [[{"k": [0]}]]}, "grid": {"dim": 1}}"#;
        let err = ExperimentConfig::from_json(bad).unwrap_err();
        assert!(matches!(err, CliError::Config { ref path, .. } if path == "model.drift[0][0].k"), "{err:?}");
    }
}
