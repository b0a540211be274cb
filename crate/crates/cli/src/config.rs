//! JSON run configuration.
//!
//! Unknown keys are rejected everywhere. Each experiment reads only the
//! `sim` blocks it needs; [`RunConfig::check_blocks`] reports the first
//! missing one by name.

use std::path::PathBuf;

use ibflab_core::model::SpectralModel;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Syntax(#[from] serde_json::Error),
    #[error("{0}")]
    Model(ibflab_core::Error),
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    CovCheck,
    Diffusivity,
    Lyapunov,
    StableNorm,
    Shape,
    Persistence,
    Support,
    Scaling,
    Suite,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::CovCheck => "cov-check",
            Experiment::Diffusivity => "diffusivity",
            Experiment::Lyapunov => "lyapunov",
            Experiment::StableNorm => "stable-norm",
            Experiment::Shape => "shape",
            Experiment::Persistence => "persistence",
            Experiment::Support => "support",
            Experiment::Scaling => "scaling",
            Experiment::Suite => "suite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: SpectralModel,
    #[serde(default)]
    pub sim: SimConfig,
    /// Skips the stable-norm estimate in experiments that consume `K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_hat: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_check: Option<CovCheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusivity: Option<DiffusivityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hitting: Option<HittingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable_norm: Option<StableNormConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<ShapeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistence: Option<PersistenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<SupportConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovCheckConfig {
    pub n_rotations: usize,
    pub n_points: usize,
    pub r_max: f64,
    pub r_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusivityConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_replicas: usize,
    pub renorm_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub dt: f64,
    pub h_max: f64,
    pub vertex_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HittingConfig {
    pub radius: f64,
    pub t_max_factor: f64,
    /// Rough linear speed for the timeouts; a pilot run estimates it when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_rough: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot: Option<PilotConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotConfig {
    pub distance: f64,
    pub n_replicas: usize,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableNormConfig {
    pub distances: Vec<f64>,
    pub n_replicas: usize,
    /// Equally spaced directions compared at the smallest distance.
    #[serde(default = "one")]
    pub directions: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeConfig {
    pub horizons: Vec<f64>,
    pub eps: f64,
    pub n_directions: usize,
    pub radius: f64,
    pub save_every: f64,
    pub n_replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersistenceConfig {
    pub horizons: Vec<f64>,
    /// Length of the initial segment along `e₁`.
    #[serde(default = "unit")]
    pub segment_length: f64,
    pub save_every: f64,
    pub n_replicas: usize,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportConfig {
    pub horizons: Vec<f64>,
    pub grid_points: usize,
    pub directions: usize,
    pub levels: usize,
    pub net_cap: usize,
    pub eps_tol: f64,
    pub poly_verts: usize,
    pub dt: f64,
    pub sample_points: usize,
    pub n_replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub r: f64,
    pub distances: Vec<f64>,
    pub n_replicas: usize,
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text)?;
    cfg.model.validate().map_err(ConfigError::Model)?;
    cfg.validate_sim()?;
    Ok(cfg)
}

fn positive(key: &str, x: f64) -> Result<(), ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive, got {x}")))
    }
}

fn at_least(key: &str, n: usize, min: usize) -> Result<(), ConfigError> {
    if n >= min {
        Ok(())
    } else {
        Err(invalid(key, format!("must be >= {min}, got {n}")))
    }
}

fn increasing(key: &str, xs: &[f64]) -> Result<(), ConfigError> {
    if xs.is_empty() || xs.iter().any(|x| !(*x > 0.0)) || xs.windows(2).any(|w| w[1] <= w[0]) {
        Err(invalid(key, "must be a nonempty increasing list of positive numbers"))
    } else {
        Ok(())
    }
}

impl RunConfig {
    fn validate_sim(&self) -> Result<(), ConfigError> {
        let s = &self.sim;
        if let Some(k) = self.k_hat {
            positive("k_hat", k)?;
        }
        if let Some(c) = &s.cov_check {
            at_least("cov_check.n_rotations", c.n_rotations, 1)?;
            at_least("cov_check.n_points", c.n_points, 1)?;
            at_least("cov_check.r_points", c.r_points, 1)?;
            positive("cov_check.r_max", c.r_max)?;
        }
        if let Some(c) = &s.diffusivity {
            positive("diffusivity.horizon", c.horizon)?;
            positive("diffusivity.dt", c.dt)?;
            at_least("diffusivity.n_replicas", c.n_replicas, 2)?;
        }
        if let Some(c) = &s.lyapunov {
            positive("lyapunov.horizon", c.horizon)?;
            positive("lyapunov.dt", c.dt)?;
            at_least("lyapunov.n_replicas", c.n_replicas, 2)?;
            at_least("lyapunov.renorm_every", c.renorm_every, 1)?;
        }
        if let Some(c) = &s.curve {
            positive("curve.dt", c.dt)?;
            positive("curve.h_max", c.h_max)?;
            at_least("curve.vertex_cap", c.vertex_cap, 2)?;
        }
        if let Some(c) = &s.hitting {
            if !(c.radius >= 1.0) {
                return Err(invalid("hitting.radius", "must be >= 1"));
            }
            positive("hitting.t_max_factor", c.t_max_factor)?;
            if let Some(k) = c.k_rough {
                positive("hitting.k_rough", k)?;
            }
            if let Some(p) = &c.pilot {
                positive("hitting.pilot.distance", p.distance)?;
                positive("hitting.pilot.t_max", p.t_max)?;
                at_least("hitting.pilot.n_replicas", p.n_replicas, 1)?;
            }
            if c.k_rough.is_none() && c.pilot.is_none() {
                return Err(invalid("hitting.pilot", "required when hitting.k_rough is absent"));
            }
        }
        if let Some(c) = &s.stable_norm {
            increasing("stable_norm.distances", &c.distances)?;
            if c.distances[0] < 10.0 {
                return Err(invalid("stable_norm.distances", "must be >= 10"));
            }
            at_least("stable_norm.n_replicas", c.n_replicas, 2)?;
            at_least("stable_norm.directions", c.directions, 1)?;
        }
        if let Some(c) = &s.shape {
            increasing("shape.horizons", &c.horizons)?;
            if !(0.0..=1.0).contains(&c.eps) {
                return Err(invalid("shape.eps", "must lie in [0, 1]"));
            }
            at_least("shape.n_directions", c.n_directions, 1)?;
            positive("shape.radius", c.radius)?;
            positive("shape.save_every", c.save_every)?;
            at_least("shape.n_replicas", c.n_replicas, 2)?;
        }
        if let Some(c) = &s.persistence {
            increasing("persistence.horizons", &c.horizons)?;
            if !(c.segment_length >= 1.0) {
                return Err(invalid("persistence.segment_length", "must be >= 1"));
            }
            positive("persistence.save_every", c.save_every)?;
            at_least("persistence.n_replicas", c.n_replicas, 2)?;
        }
        if let Some(c) = &s.support {
            increasing("support.horizons", &c.horizons)?;
            at_least("support.grid_points", c.grid_points, 2)?;
            at_least("support.directions", c.directions, 1)?;
            at_least("support.levels", c.levels, 1)?;
            at_least("support.net_cap", c.net_cap, 1)?;
            positive("support.eps_tol", c.eps_tol)?;
            at_least("support.poly_verts", c.poly_verts, 16)?;
            positive("support.dt", c.dt)?;
            at_least("support.sample_points", c.sample_points, 1)?;
            at_least("support.n_replicas", c.n_replicas, 1)?;
        }
        if let Some(c) = &s.scaling {
            if !(c.r > 0.0 && c.r <= 1.0) {
                return Err(invalid("scaling.r", "must lie in (0, 1]"));
            }
            increasing("scaling.distances", &c.distances)?;
            if c.distances[0] < 10.0 {
                return Err(invalid("scaling.distances", "must be >= 10"));
            }
            at_least("scaling.n_replicas", c.n_replicas, 2)?;
        }
        Ok(())
    }

    /// Ensure every block needed by `exp` is present.
    pub fn check_blocks(&self, exp: Experiment) -> Result<(), ConfigError> {
        let s = &self.sim;
        let need = |present: bool, key: &str| {
            if present {
                Ok(())
            } else {
                Err(invalid(&format!("sim.{key}"), format!("block required by {}", exp.name())))
            }
        };
        let k_source = |cfg: &RunConfig| -> Result<(), ConfigError> {
            if cfg.k_hat.is_none() {
                need(s.stable_norm.is_some(), "stable_norm")?;
                need(s.hitting.is_some(), "hitting")?;
                need(s.curve.is_some(), "curve")?;
            }
            Ok(())
        };
        match exp {
            Experiment::CovCheck => need(s.cov_check.is_some(), "cov_check"),
            Experiment::Diffusivity => need(s.diffusivity.is_some(), "diffusivity"),
            Experiment::Lyapunov => need(s.lyapunov.is_some(), "lyapunov"),
            Experiment::StableNorm => {
                need(s.stable_norm.is_some(), "stable_norm")?;
                need(s.hitting.is_some(), "hitting")?;
                need(s.curve.is_some(), "curve")
            }
            Experiment::Shape => {
                need(s.shape.is_some(), "shape")?;
                need(s.curve.is_some(), "curve")?;
                k_source(self)
            }
            Experiment::Persistence => {
                need(s.persistence.is_some(), "persistence")?;
                need(s.curve.is_some(), "curve")
            }
            Experiment::Support => {
                need(s.support.is_some(), "support")?;
                k_source(self)
            }
            Experiment::Scaling => {
                need(s.scaling.is_some(), "scaling")?;
                need(s.hitting.is_some(), "hitting")?;
                need(s.curve.is_some(), "curve")
            }
            Experiment::Suite => Ok(()),
        }
    }

    /// Experiments whose blocks are present, in suite order.
    pub fn suite_members(&self) -> Vec<Experiment> {
        [
            Experiment::CovCheck,
            Experiment::Diffusivity,
            Experiment::Lyapunov,
            Experiment::StableNorm,
            Experiment::Shape,
            Experiment::Persistence,
            Experiment::Support,
            Experiment::Scaling,
        ]
        .into_iter()
        .filter(|&e| {
            let own = match e {
                Experiment::CovCheck => self.sim.cov_check.is_some(),
                Experiment::Diffusivity => self.sim.diffusivity.is_some(),
                Experiment::Lyapunov => self.sim.lyapunov.is_some(),
                Experiment::StableNorm => self.sim.stable_norm.is_some(),
                Experiment::Shape => self.sim.shape.is_some(),
                Experiment::Persistence => self.sim.persistence.is_some(),
                Experiment::Support => self.sim.support.is_some(),
                Experiment::Scaling => self.sim.scaling.is_some(),
                Experiment::Suite => false,
            };
            own && self.check_blocks(e).is_ok()
        })
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "master_seed": 1,
        "model": {"wavenumbers": [1.0], "weights": [1.0], "angular_order": 32, "solenoidal_fraction": 1.0},
        "sim": {"lyapunov": {"horizon": 5, "dt": 0.01, "n_replicas": 4, "renorm_every": 10}}
    }"#;

    #[test]
    fn minimal_parses() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.master_seed, 1);
        assert!(cfg.check_blocks(Experiment::Lyapunov).is_ok());
        assert_eq!(cfg.suite_members(), vec![Experiment::Lyapunov]);
    }

    #[test]
    fn missing_block_is_named() {
        let cfg = parse_config(MINIMAL).unwrap();
        let err = cfg.check_blocks(Experiment::Support).unwrap_err().to_string();
        assert!(err.contains("sim.support"), "{err}");
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in [Experiment::CovCheck, Experiment::StableNorm, Experiment::Suite] {
            let json = serde_json::to_string(&e).unwrap();
            assert_eq!(json, format!("\"{}\"", e.name()));
        }
    }

    #[test]
    fn hitting_needs_speed_source() {
        let text = MINIMAL.replace(
            r#""sim": {"#,
            r#""sim": {"hitting": {"radius": 4, "t_max_factor": 2},"#,
        );
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.starts_with("hitting.pilot"), "{err}");
    }
}
