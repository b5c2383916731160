//! Depth estimation from the original image and depth-controlled inpainting of
//! the silhouette region.

use serde::{Deserialize, Serialize};

use crate::backends::{with_retries, DepthEstimator, Generator, RetryPolicy};
use crate::concept::AnimalConcept;
use crate::error::{Error, Result};
use crate::imaging::{normalize_depth, DepthMap, Mask, Raster};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Depth-control strength α in `[0, 1]`.
    pub control_strength: f64,
    pub seed: u64,
    pub steps: u32,
    pub guidance: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            control_strength: 1.0,
            seed: 0,
            steps: 30,
            guidance: 7.5,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.control_strength) {
            return Err(Error::Config(format!(
                "control strength {} outside [0, 1]",
                self.control_strength
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("generation steps must be at least 1".into()));
        }
        if !(self.guidance >= 0.0 && self.guidance.is_finite()) {
            return Err(Error::Config(format!("guidance {} must be a nonnegative number", self.guidance)));
        }
        Ok(())
    }
}

/// Everything a generator backend receives.
#[derive(Clone, Copy, Debug)]
pub struct GenerationRequest<'a> {
    pub image: &'a Raster,
    pub mask: &'a Mask,
    pub depth: &'a DepthMap,
    pub prompt: &'a str,
    pub config: &'a GenerationConfig,
}

/// Contents of `<stem>.genmeta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub control_strength: f64,
    pub seed: u64,
    pub steps: u32,
    pub guidance: f64,
    pub backend: String,
}

impl GenerationMeta {
    pub fn new(config: &GenerationConfig, backend: impl Into<String>) -> Self {
        Self {
            control_strength: config.control_strength,
            seed: config.seed,
            steps: config.steps,
            guidance: config.guidance,
            backend: backend.into(),
        }
    }
}

pub fn estimate_depth(estimator: &dyn DepthEstimator, image: &Raster, retry: &RetryPolicy) -> Result<DepthMap> {
    let raw = with_retries(retry, |_| estimator.estimate(image))?.value;
    normalize_depth(&raw, image.width(), image.height())
}

pub fn generate(
    generator: &dyn Generator,
    image: &Raster,
    mask: &Mask,
    depth: &DepthMap,
    concept: &AnimalConcept,
    config: &GenerationConfig,
    retry: &RetryPolicy,
) -> Result<Raster> {
    config.validate()?;
    concept.validate()?;
    let dims = image.dims();
    if mask.dims() != dims {
        return Err(Error::Shape { operand: "mask", expected: dims, found: mask.dims() });
    }
    if depth.dims() != dims {
        return Err(Error::Shape { operand: "depth", expected: dims, found: depth.dims() });
    }
    let request = GenerationRequest {
        image,
        mask,
        depth,
        prompt: &concept.render_prompt,
        config,
    };
    let out = with_retries(retry, |_| generator.generate(&request))?.value;
    if out.dims() != dims {
        return Err(Error::Shape { operand: "generator output", expected: dims, found: out.dims() });
    }
    Ok(out)
}
