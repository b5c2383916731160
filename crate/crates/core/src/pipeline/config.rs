use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{BackendSelection, Capability, RetryPolicy};
use crate::error::{Error, Result};
use crate::generation::GenerationConfig;
use crate::imaging::{DEFAULT_OPACITY, DEFAULT_WORKING_SIDE};
use crate::segmentation::DetectionQuery;

/// Which vocabulary the detector sees for an image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabularyMode {
    /// The whole configured vocabulary for every image.
    #[default]
    Full,
    /// Only the image's manifest category, when it is known.
    Category,
}

/// Generation parameters shared by every image; the per-image seed is
/// derived from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub control_strength: f64,
    pub steps: u32,
    pub guidance: f64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        let d = GenerationConfig::default();
        Self {
            control_strength: d.control_strength,
            steps: d.steps,
            guidance: d.guidance,
        }
    }
}

impl GenerationSettings {
    pub fn with_seed(&self, seed: u64) -> GenerationConfig {
        GenerationConfig {
            control_strength: self.control_strength,
            seed,
            steps: self.steps,
            guidance: self.guidance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Run seed. When absent one is generated and recorded.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub working_side: u32,
    pub opacity: f64,
    pub feather_radius: u32,
    /// Animals requested from the interpreter; the first drives generation.
    pub candidates: u32,
    pub vocabulary_mode: VocabularyMode,
    pub query: DetectionQuery,
    pub generation: GenerationSettings,
    pub backends: BackendSelection,
    /// Instance-pool size per capability (concurrent calls allowed).
    pub pool: BTreeMap<Capability, u32>,
    pub retry: RetryPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: PathBuf::from("out"),
            working_side: DEFAULT_WORKING_SIDE,
            opacity: DEFAULT_OPACITY,
            feather_radius: 0,
            candidates: 1,
            vocabulary_mode: VocabularyMode::Full,
            query: DetectionQuery::default(),
            generation: GenerationSettings::default(),
            backends: BackendSelection::default(),
            pool: BTreeMap::from([(Capability::Generate, 1)]),
            retry: RetryPolicy::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::Config(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        if self.working_side == 0 {
            return Err(Error::Config("working_side must be positive".into()));
        }
        if self.candidates == 0 {
            return Err(Error::Config("candidates must be at least 1".into()));
        }
        if let Some((cap, _)) = self.pool.iter().find(|(_, &n)| n == 0) {
            return Err(Error::Config(format!("pool size for {cap} must be at least 1")));
        }
        self.query.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.generation.with_seed(0).validate()?;
        self.retry.validate()
    }

    /// The run seed, generating and storing one when unset.
    pub fn resolve_seed(&mut self) -> u64 {
        *self.seed.get_or_insert_with(rand::random)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = PipelineConfig::from_toml(
            r#"
            seed = 7
            opacity = 0.25
            [backends]
            detect = "fake-fixed"
            [query]
            vocabulary = ["cloud"]
            [pool]
            interpret = 2
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.backends.detect, "fake-fixed");
        assert_eq!(c.backends.segment, BackendSelection::default().segment);
        assert_eq!(c.query.confidence_floor, 0.3);
        assert_eq!(c.pool.get(&Capability::Interpret), Some(&2));
        assert_eq!(c.working_side, 1024);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::from_toml("opactiy = 0.5").is_err());
        let bad = PipelineConfig { opacity: 1.5, ..PipelineConfig::default() };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig { working_side: 0, ..PipelineConfig::default() };
        assert!(bad.validate().is_err());
        let mut bad = PipelineConfig::default();
        bad.retry.max_attempts = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seed_is_generated_once() {
        let mut c = PipelineConfig::default();
        let s = c.resolve_seed();
        assert_eq!(c.resolve_seed(), s);
    }
}
