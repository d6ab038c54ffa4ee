use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotator::ControlTable;
use crate::diffusion::{StepperKind, DEFAULT_RHO, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN};
use crate::error::{Error, Result};
use crate::guidance::{ControlKind, ControlSettings, DEFAULT_OMEGA};
use crate::identity_pool::{ImagePromptMode, NoCandidatePolicy, DEFAULT_MIN_SWAP_DISTANCE};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Annotated template covering every key.
pub const CONFIG_TEMPLATE: &str = include_str!("../../config/anonymize.toml");

/// Anonymization scale presets for the base variant.
pub const BASE_A_S_PRESETS: [f64; 2] = [1.0, 1.25];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Base,
    Light,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Light => "light",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "light" => Ok(Variant::Light),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected \"base\" or \"light\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    Skip,
    Abort,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub variant: Variant,
    pub a_s: f64,
    pub omega: f64,
    pub steps: usize,
    pub noise_strength: f64,
    pub resolution: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub stepper: StepperKind,
    pub seed: u64,
    pub negative_prompt: String,
    pub pool_path: Option<PathBuf>,
    pub min_swap_distance: f64,
    pub swap_fallback: NoCandidatePolicy,
    pub image_prompt_mode: ImagePromptMode,
    pub failure_policy: FailurePolicy,
    pub workers: usize,
    pub cache_dir: Option<PathBuf>,
    pub controls: ControlTable,
}

/// Config file contents before variant defaults are applied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: Option<u32>,
    pub variant: Option<Variant>,
    pub a_s: Option<f64>,
    pub omega: Option<f64>,
    pub steps: Option<usize>,
    pub noise_strength: Option<f64>,
    pub resolution: Option<usize>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub rho: Option<f64>,
    pub stepper: Option<StepperKind>,
    pub seed: Option<u64>,
    pub negative_prompt: Option<String>,
    pub pool_path: Option<PathBuf>,
    pub min_swap_distance: Option<f64>,
    pub swap_fallback: Option<NoCandidatePolicy>,
    pub image_prompt_mode: Option<ImagePromptMode>,
    pub failure_policy: Option<FailurePolicy>,
    pub workers: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub controls: BTreeMap<ControlKind, ControlSettings>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut file = Self::parse(&text)?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut file.pool_path, &mut file.cache_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(file)
    }

    pub fn resolve(self) -> Result<PipelineConfig> {
        let schema_version = self.schema_version.unwrap_or(CONFIG_SCHEMA_VERSION);
        if schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {schema_version} is not supported (expected {CONFIG_SCHEMA_VERSION})"
            )));
        }
        let variant = self.variant.unwrap_or_default();
        let mut config = PipelineConfig::defaults(variant);
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { config.$field = v; } )* };
        }
        take!(
            a_s, omega, steps, noise_strength, resolution, sigma_min, sigma_max, rho, stepper,
            seed, negative_prompt, min_swap_distance, swap_fallback, image_prompt_mode,
            failure_policy, workers
        );
        config.pool_path = self.pool_path;
        config.cache_dir = self.cache_dir;
        for (kind, settings) in self.controls {
            config.controls.set(kind, settings);
        }
        config.validate()?;
        Ok(config)
    }
}

impl PipelineConfig {
    pub fn defaults(variant: Variant) -> Self {
        let (steps, noise_strength) = match variant {
            Variant::Base => (16, 0.9),
            Variant::Light => (30, 0.6),
        };
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            variant,
            a_s: 1.0,
            omega: DEFAULT_OMEGA,
            steps,
            noise_strength,
            resolution: 768,
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
            rho: DEFAULT_RHO,
            stepper: StepperKind::default(),
            seed: 0,
            negative_prompt: String::new(),
            pool_path: None,
            min_swap_distance: DEFAULT_MIN_SWAP_DISTANCE,
            swap_fallback: NoCandidatePolicy::default(),
            image_prompt_mode: ImagePromptMode::default(),
            failure_policy: FailurePolicy::default(),
            workers: 0,
            cache_dir: None,
            controls: ControlTable::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.a_s >= 0.0 && self.a_s.is_finite()) {
            return bad(format!("a_s must be a finite value >= 0, got {}", self.a_s));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return bad(format!("omega must be > 0, got {}", self.omega));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.noise_strength > 0.0 && self.noise_strength <= 1.0) {
            return bad(format!("noise_strength must lie in (0, 1], got {}", self.noise_strength));
        }
        if self.resolution == 0 || !self.resolution.is_multiple_of(8) {
            return bad(format!(
                "resolution must be a positive multiple of 8, got {}",
                self.resolution
            ));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return bad("sigma range must satisfy 0 < sigma_min < sigma_max".into());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be > 0".into());
        }
        if !(self.min_swap_distance >= 0.0 && self.min_swap_distance.is_finite()) {
            return bad("min_swap_distance must be >= 0".into());
        }
        self.controls.validate()
    }

    /// SHA-256 of the canonical JSON form; equal configs hash equally.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn latent_side(&self) -> usize {
        self.resolution / 8
    }
}
