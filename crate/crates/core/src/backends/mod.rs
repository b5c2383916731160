//! Adapter contracts for the five external capabilities, plus the registry
//! that resolves them by id, the retry wrapper, deterministic fakes and the
//! HTTP reference adapters.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concept::ConceptRequest;
use crate::generation::GenerationRequest;
use crate::imaging::{BoundingBox, Mask, Raster};

pub mod fakes;
mod pool;
mod registry;
pub mod remote;
mod retry;

pub use registry::{AnyBackend, BackendSelection, BackendSet, Registry};
pub use retry::{with_retries, with_retries_using, Attempted, RetryPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Detect,
    Segment,
    Interpret,
    Depth,
    Generate,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::Detect,
        Capability::Segment,
        Capability::Interpret,
        Capability::Depth,
        Capability::Generate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Detect => "detect",
            Capability::Segment => "segment",
            Capability::Interpret => "interpret",
            Capability::Depth => "depth",
            Capability::Generate => "generate",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Capability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Capability::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown capability `{s}` (expected detect, segment, interpret, depth or generate)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Determinism {
    Deterministic,
    StochasticWithSeed,
    Stochastic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub capability: Capability,
    pub id: String,
    pub determinism: Determinism,
    /// When false the registry serializes calls through a single-instance pool.
    pub thread_safe: bool,
    /// Upper bound on concurrent calls, if the service imposes one.
    pub max_in_flight: Option<u32>,
    pub requests_per_minute: Option<u32>,
}

impl BackendDescriptor {
    pub fn new(capability: Capability, id: impl Into<String>, determinism: Determinism) -> Self {
        Self {
            capability,
            id: id.into(),
            determinism,
            thread_safe: true,
            max_in_flight: None,
            requests_per_minute: None,
        }
    }

    pub fn not_thread_safe(mut self) -> Self {
        self.thread_safe = false;
        self
    }

    pub fn max_in_flight(mut self, n: u32) -> Self {
        self.max_in_flight = Some(n);
        self
    }

    pub fn requests_per_minute(mut self, n: u32) -> Self {
        self.requests_per_minute = Some(n);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorClass {
    Timeout,
    RateLimit,
    Transient,
    /// Credentials or endpoint missing; never retried.
    Unavailable,
    /// The backend answered but the answer violates its contract.
    InvalidResponse,
    Parse,
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorClass::Timeout => "timeout",
            ErrorClass::RateLimit => "rate-limit",
            ErrorClass::Transient => "transient",
            ErrorClass::Unavailable => "unavailable",
            ErrorClass::InvalidResponse => "invalid-response",
            ErrorClass::Parse => "parse",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("backend `{backend}` failed ({class}) after {attempts} attempt(s): {message}")]
pub struct BackendError {
    pub backend: String,
    pub class: ErrorClass,
    pub message: String,
    pub attempts: u32,
}

impl BackendError {
    pub fn new(backend: impl Into<String>, class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            backend: backend.into(),
            class,
            message: message.into(),
            attempts: 1,
        }
    }
}

pub trait Detector: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Boxes for any of the vocabulary terms. Scores are raw backend
    /// confidences; filtering happens in the caller.
    fn detect(&self, image: &Raster, vocabulary: &[String]) -> Result<Vec<BoundingBox>, BackendError>;
}

pub trait Segmenter: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Mask of the object prompted by `prompt`, same size as `image`.
    fn segment(&self, image: &Raster, prompt: &BoundingBox) -> Result<Mask, BackendError>;
}

pub trait Interpreter: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Raw text reply to the structured query.
    fn interpret(&self, request: &ConceptRequest) -> Result<String, BackendError>;
}

pub trait DepthEstimator: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Unnormalized depth, row-major, one value per pixel of `image`.
    fn estimate(&self, image: &Raster) -> Result<Vec<f32>, BackendError>;
}

pub trait Generator: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Raster, BackendError>;
}
