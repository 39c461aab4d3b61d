//! Pipeline configuration: one TOML file with sections, shared by the CLI and the service.
//!
//! ```toml
//! source = "footage/run1"
//! n_interval = 10
//! output_dir = "out"
//!
//! [geometry]
//! cx = 960.0
//! cy = 540.0
//! r_min = 150.0
//! r_max = 500.0
//!
//! [unwrap]
//! w = 500
//! h = 250
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::{blenders, BlendSpec};
use crate::ingest::source_backends;
use crate::registration::{detectors, motion_models, RegistrationParams};
use crate::unwrap::{AnnulusGeometry, UnwrapSpec};

/// Frame intervals inside this range give the best speed/overlap trade-off.
pub const RECOMMENDED_INTERVAL: std::ops::RangeInclusive<usize> = 5..=20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlendConfig {
    pub band_width: f64,
    pub method: String,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            band_width: BlendSpec::default().band_width,
            method: "linear".into(),
        }
    }
}

impl BlendConfig {
    pub fn spec(&self) -> BlendSpec {
        BlendSpec {
            band_width: self.band_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Image directory or video file.
    pub source: String,
    /// Force a source backend instead of probing.
    pub source_backend: Option<String>,
    pub n_interval: usize,
    pub output_dir: PathBuf,
    pub save_keyframes: bool,
    /// Axial advance in strip pixels assumed for pairs that cannot be registered.
    pub nominal_advance: f64,
    /// Write match overlays for every registered pair.
    pub debug: bool,
    pub geometry: AnnulusGeometry,
    pub unwrap: UnwrapSpec,
    pub blend: BlendConfig,
    pub registration: RegistrationParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source: String::new(),
            source_backend: None,
            n_interval: 10,
            output_dir: PathBuf::from("pipescope-out"),
            save_keyframes: true,
            nominal_advance: 75.0,
            debug: false,
            geometry: AnnulusGeometry::default(),
            unwrap: UnwrapSpec::default(),
            blend: BlendConfig::default(),
            registration: RegistrationParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    /// Checks every field and returns the warnings of an otherwise valid configuration.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.source.trim().is_empty() {
            return invalid("source is empty".into());
        }
        if self.n_interval < 1 {
            return invalid("n_interval must be at least 1".into());
        }
        self.geometry
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.unwrap
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.blend
            .spec()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !self.nominal_advance.is_finite() {
            return invalid("nominal_advance must be finite".into());
        }
        if let Some(b) = &self.source_backend {
            if !source_backends().contains(b) {
                return invalid(format!("unknown source backend '{b}'"));
            }
        }
        if !blenders().contains(&self.blend.method) {
            return invalid(format!("unknown blend method '{}'", self.blend.method));
        }
        let r = &self.registration;
        if !detectors().contains(&r.detector) {
            return invalid(format!("unknown feature detector '{}'", r.detector));
        }
        if !motion_models().contains(&r.model) {
            return invalid(format!("unknown motion model '{}'", r.model));
        }
        if !(r.ratio > 0.0 && r.ratio <= 1.0) {
            return invalid(format!("registration.ratio must be in (0, 1], got {}", r.ratio));
        }
        if r.inlier_threshold.is_nan() || r.inlier_threshold <= 0.0 {
            return invalid("registration.inlier_threshold must be positive".into());
        }
        if r.min_inliers < 1 || r.iterations < 1 {
            return invalid("registration.min_inliers and iterations must be at least 1".into());
        }
        if r.octaves < 1 || r.scales_per_octave < 1 || r.sigma.is_nan() || r.sigma <= 0.0 {
            return invalid("registration octaves, scales_per_octave and sigma must be positive".into());
        }

        let mut warnings = Vec::new();
        if !RECOMMENDED_INTERVAL.contains(&self.n_interval) {
            warnings.push(format!(
                "n_interval {} is outside the recommended range {}..={}",
                self.n_interval,
                RECOMMENDED_INTERVAL.start(),
                RECOMMENDED_INTERVAL.end()
            ));
        }
        Ok(warnings)
    }
}
