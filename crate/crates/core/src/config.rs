//! Run specifications read from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{LatticeConfig, LatticeError, LatticeParams};
use crate::states::{InitialState, StateError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("missing required key `{key}` for mode {mode}")]
    Missing { key: &'static str, mode: Mode },
    #[error("config mode {config} does not match subcommand {command}")]
    ModeMismatch { config: Mode, command: Mode },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Spectral,
    Verify,
    Sweep,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Simulate => "simulate",
            Mode::Spectral => "spectral",
            Mode::Verify => "verify",
            Mode::Sweep => "sweep",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Fock,
    #[default]
    Slater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Lemma6,
    Lemma7,
    Lemma8,
    Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: SweepKind,
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub tau_ratios: Vec<f64>,
    /// One-dimensional momenta (lemma6).
    #[serde(default)]
    pub momenta: Vec<i64>,
    /// Lattice dimensions (lemma7).
    #[serde(default)]
    pub dims: Vec<usize>,
    /// Boxes per axis `n` (lemma8, fraction).
    #[serde(default)]
    pub boxes_per_axis: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub mode: Option<Mode>,
    pub dim: Option<usize>,
    pub size: Option<usize>,
    pub box_side: Option<usize>,
    pub rho_bar: Option<f64>,
    pub epsilon: Option<f64>,
    pub tau: Option<f64>,
    #[serde(default)]
    pub engine: Engine,
    pub initial_state: Option<String>,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub m_cut: Option<i64>,
    pub seed: Option<u64>,
    /// Threshold for the nonequilibrium fraction; defaults to `delta_{1/2}(tau, L)`.
    pub delta: Option<f64>,
    pub out: Option<PathBuf>,
    pub sweep: Option<SweepSpec>,
}

pub const DEFAULT_EPSILON: f64 = 0.1;

impl RunSpec {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run spec serialises")
    }

    fn require<T: Copy>(v: Option<T>, key: &'static str, mode: Mode) -> Result<T, ConfigError> {
        v.ok_or(ConfigError::Missing { key, mode })
    }

    pub fn lattice(&self, mode: Mode) -> Result<Arc<LatticeConfig>, ConfigError> {
        let params = LatticeParams {
            dim: Self::require(self.dim, "dim", mode)?,
            size: Self::require(self.size, "size", mode)?,
            box_side: Self::require(self.box_side, "box_side", mode)?,
            rho_bar: Self::require(self.rho_bar, "rho_bar", mode)?,
            epsilon: self.epsilon.unwrap_or(DEFAULT_EPSILON),
        };
        Ok(Arc::new(LatticeConfig::derive(params)?))
    }

    /// Initial state with a bare `random_slater` / `random_fock` taking
    /// `seed`; an explicit `seed` also replaces a parenthesised one.
    pub fn initial(&self) -> Result<InitialState, ConfigError> {
        let raw = self.initial_state.as_deref().unwrap_or("concentrated").trim();
        let seed = self.seed.unwrap_or(0);
        let parsed = match raw {
            "random_slater" => InitialState::RandomSlater(seed),
            "random_fock" => InitialState::RandomFock(seed),
            _ => raw.parse()?,
        };
        Ok(match (parsed, self.seed) {
            (InitialState::RandomSlater(_), Some(s)) => InitialState::RandomSlater(s),
            (InitialState::RandomFock(_), Some(s)) => InitialState::RandomFock(s),
            (p, _) => p,
        })
    }

    fn positive(v: Option<f64>, key: &'static str) -> Result<(), ConfigError> {
        match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => {
                Err(ConfigError::Invalid { key, reason: format!("{x} is not positive") })
            }
            _ => Ok(()),
        }
    }

    /// Mode-specific validation, run before any computation.
    pub fn validate(&self, mode: Mode) -> Result<(), ConfigError> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(ConfigError::ModeMismatch { config: m, command: mode });
            }
        }
        Self::positive(self.tau, "tau")?;
        Self::positive(self.dt, "dt")?;
        Self::positive(self.t_max, "t_max")?;
        Self::positive(self.delta, "delta")?;
        if let Some(m) = self.m_cut {
            if m <= 0 {
                return Err(ConfigError::Invalid { key: "m_cut", reason: format!("{m} must be at least 1") });
            }
        }
        match mode {
            Mode::Simulate => {
                self.lattice(mode)?;
                self.initial()?;
                Self::require(self.dt, "dt", mode)?;
                Self::require(self.t_max, "t_max", mode)?;
            }
            Mode::Spectral => {
                self.lattice(mode)?;
                Self::require(self.tau, "tau", mode)?;
            }
            Mode::Verify => {
                self.lattice(mode)?;
                self.initial()?;
                Self::require(self.tau, "tau", mode)?;
            }
            Mode::Sweep => {
                let sweep = self.sweep.as_ref().ok_or(ConfigError::Missing { key: "sweep", mode })?;
                for &l in &sweep.sizes {
                    if l < 3 || l % 2 == 0 {
                        return Err(ConfigError::Invalid {
                            key: "sweep.sizes",
                            reason: format!("{l} is not an odd size >= 3"),
                        });
                    }
                }
                for &r in &sweep.tau_ratios {
                    if !(r > 0.0) {
                        return Err(ConfigError::Invalid {
                            key: "sweep.tau_ratios",
                            reason: format!("{r} is not positive"),
                        });
                    }
                }
                for &d in &sweep.dims {
                    if d == 0 {
                        return Err(ConfigError::Invalid { key: "sweep.dims", reason: "dimension 0".into() });
                    }
                }
                for &n in &sweep.boxes_per_axis {
                    if n == 0 {
                        return Err(ConfigError::Invalid { key: "sweep.boxes_per_axis", reason: "n = 0".into() });
                    }
                }
                if sweep.kind == SweepKind::Fraction {
                    Self::require(self.rho_bar, "rho_bar", mode)?;
                    self.initial()?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates() {
        let spec = RunSpec::from_toml(
            r#"
            mode = "simulate"
            dim = 1
            size = 9
            box_side = 3
            rho_bar = 0.34
            dt = 0.5
            t_max = 2.0
            initial_state = "random_slater"
            seed = 5
            "#,
        )
        .unwrap();
        spec.validate(Mode::Simulate).unwrap();
        assert_eq!(spec.initial().unwrap(), InitialState::RandomSlater(5));
        assert!(matches!(spec.validate(Mode::Verify), Err(ConfigError::ModeMismatch { .. })));
        let round = RunSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(round, spec);
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        assert!(matches!(RunSpec::from_toml("sizee = 9"), Err(ConfigError::Parse(_))));
        let spec = RunSpec::from_toml("dim = 1\nsize = 9\nbox_side = 3\nrho_bar = 0.3").unwrap();
        assert!(matches!(spec.validate(Mode::Spectral), Err(ConfigError::Missing { key: "tau", .. })));
        let spec = RunSpec::from_toml("dim = 1\nsize = 8\nbox_side = 3\nrho_bar = 0.3\ntau = 3.0").unwrap();
        assert!(matches!(spec.validate(Mode::Spectral), Err(ConfigError::Lattice(_))));
        let spec = RunSpec::from_toml("[sweep]\nkind = \"lemma6\"\nsizes = [10]").unwrap();
        assert!(matches!(spec.validate(Mode::Sweep), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn explicit_seed_overrides_parenthesised_seed() {
        let spec = RunSpec { initial_state: Some("random_fock(3)".into()), seed: Some(9), ..Default::default() };
        assert_eq!(spec.initial().unwrap(), InitialState::RandomFock(9));
        let spec = RunSpec { initial_state: Some("random_fock(3)".into()), ..Default::default() };
        assert_eq!(spec.initial().unwrap(), InitialState::RandomFock(3));
    }
}
