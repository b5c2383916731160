//! Reference adapters.
//!
//! Detection, segmentation, depth and generation talk JSON over HTTP to a
//! model server (`S2A_MODEL_SERVER`) that hosts Grounding-DINO, SAM, MiDaS and
//! SDXL-inpainting-with-depth-ControlNet class models. Interpretation calls a
//! hosted Gemini endpoint with the key in `S2A_VLM_API_KEY`. All images cross
//! the wire as base64 PNG.
//!
//! Adapters fail at resolution time when their endpoint or credential is
//! missing, so a batch never starts in an unusable configuration.

use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    BackendDescriptor, BackendError, Capability, DepthEstimator, Detector, Determinism, ErrorClass,
    Generator, Interpreter, Registry, Segmenter,
};
use crate::concept::ConceptRequest;
use crate::error::{Error, Result};
use crate::generation::GenerationRequest;
use crate::imaging::{BoundingBox, Mask, Raster};

pub const GROUNDING_DINO: &str = "grounding-dino";
pub const SAM: &str = "sam";
pub const MIDAS: &str = "midas";
pub const SDXL_DEPTH_INPAINT: &str = "sdxl-depth-inpaint";
pub const GEMINI: &str = "gemini";

pub const MODEL_SERVER_ENV: &str = "S2A_MODEL_SERVER";
pub const DEVICE_ENV: &str = "S2A_DEVICE";
pub const VLM_KEY_ENV: &str = "S2A_VLM_API_KEY";
pub const VLM_MODEL_ENV: &str = "S2A_VLM_MODEL";
pub const VLM_ENDPOINT_ENV: &str = "S2A_VLM_ENDPOINT";

const DEFAULT_VLM_MODEL: &str = "gemini-2.5-flash";
const DEFAULT_VLM_ENDPOINT: &str = "https://generativelanguage.googleapis.com";
const RESPONSE_LIMIT: u64 = 256 * 1024 * 1024;

fn env_nonempty(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn map_ureq(id: &str, err: ureq::Error) -> BackendError {
    let class = match &err {
        ureq::Error::StatusCode(429) => ErrorClass::RateLimit,
        ureq::Error::StatusCode(408 | 504) | ureq::Error::Timeout(_) => ErrorClass::Timeout,
        ureq::Error::StatusCode(s) if *s >= 500 => ErrorClass::Transient,
        ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            ErrorClass::Transient
        }
        _ => ErrorClass::InvalidResponse,
    };
    BackendError::new(id, class, err.to_string())
}

fn invalid(id: &str, message: impl Into<String>) -> BackendError {
    BackendError::new(id, ErrorClass::InvalidResponse, message)
}

fn decode_png_raster(id: &str, b64: &str) -> Result<Raster, BackendError> {
    let bytes = B64.decode(b64).map_err(|e| invalid(id, format!("bad base64 image: {e}")))?;
    Raster::decode(&bytes).map_err(|e| invalid(id, format!("bad image payload: {e}")))
}

/// Client for the JSON model server.
pub struct ModelServer {
    base: String,
    device: Option<String>,
    agent: ureq::Agent,
}

impl ModelServer {
    pub fn new(base: impl Into<String>, device: Option<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            device,
            agent: agent(Duration::from_secs(600)),
        }
    }

    pub fn from_env(adapter: &str) -> Result<Self> {
        let base = env_nonempty(MODEL_SERVER_ENV).ok_or_else(|| {
            Error::Config(format!(
                "backend `{adapter}` needs a model server; set {MODEL_SERVER_ENV} (or pick a fake backend)"
            ))
        })?;
        Ok(Self::new(base, env_nonempty(DEVICE_ENV)))
    }

    fn call<T: DeserializeOwned>(&self, id: &str, route: &str, mut body: Value) -> Result<T, BackendError> {
        body["model"] = json!(id);
        if let Some(device) = &self.device {
            body["device"] = json!(device);
        }
        let url = format!("{}/v1/{route}", self.base);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(&body)
            .map_err(|e| map_ureq(id, e))?;
        resp.body_mut()
            .with_config()
            .limit(RESPONSE_LIMIT)
            .read_json::<T>()
            .map_err(|e| invalid(id, format!("malformed response from {url}: {e}")))
    }
}

fn image_field(image: &Raster) -> String {
    B64.encode(image.encode_png())
}

pub struct RemoteDetector {
    server: Arc<ModelServer>,
}

impl RemoteDetector {
    pub fn new(server: Arc<ModelServer>) -> Self {
        Self { server }
    }
}

#[derive(Deserialize)]
struct DetectResponse {
    boxes: Vec<BoundingBox>,
}

impl Detector for RemoteDetector {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(Capability::Detect, GROUNDING_DINO, Determinism::Deterministic)
    }

    fn detect(&self, image: &Raster, vocabulary: &[String]) -> Result<Vec<BoundingBox>, BackendError> {
        let resp: DetectResponse = self.server.call(
            GROUNDING_DINO,
            "detect",
            json!({ "image_png_b64": image_field(image), "terms": vocabulary }),
        )?;
        Ok(resp.boxes)
    }
}

pub struct RemoteSegmenter {
    server: Arc<ModelServer>,
}

impl RemoteSegmenter {
    pub fn new(server: Arc<ModelServer>) -> Self {
        Self { server }
    }
}

#[derive(Deserialize)]
struct SegmentResponse {
    mask_png_b64: String,
}

impl Segmenter for RemoteSegmenter {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(Capability::Segment, SAM, Determinism::Deterministic)
    }

    fn segment(&self, image: &Raster, prompt: &BoundingBox) -> Result<Mask, BackendError> {
        let resp: SegmentResponse = self.server.call(
            SAM,
            "segment",
            json!({ "image_png_b64": image_field(image), "box": prompt }),
        )?;
        let bytes = B64
            .decode(&resp.mask_png_b64)
            .map_err(|e| invalid(SAM, format!("bad base64 mask: {e}")))?;
        let img = image::load_from_memory(&bytes).map_err(|e| invalid(SAM, format!("bad mask payload: {e}")))?;
        Mask::from_gray8(&img.to_luma8()).map_err(|e| invalid(SAM, e.to_string()))
    }
}

pub struct RemoteDepth {
    server: Arc<ModelServer>,
}

impl RemoteDepth {
    pub fn new(server: Arc<ModelServer>) -> Self {
        Self { server }
    }
}

/// Raw depth as little-endian `f32`, row-major.
#[derive(Deserialize)]
struct DepthResponse {
    width: u32,
    height: u32,
    depth_f32le_b64: String,
}

impl DepthEstimator for RemoteDepth {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(Capability::Depth, MIDAS, Determinism::Deterministic)
    }

    fn estimate(&self, image: &Raster) -> Result<Vec<f32>, BackendError> {
        let resp: DepthResponse =
            self.server.call(MIDAS, "depth", json!({ "image_png_b64": image_field(image) }))?;
        if (resp.width, resp.height) != (image.width(), image.height()) {
            return Err(invalid(
                MIDAS,
                format!(
                    "depth is {}x{}, image is {}",
                    resp.width,
                    resp.height,
                    image.dims()
                ),
            ));
        }
        let bytes = B64
            .decode(&resp.depth_f32le_b64)
            .map_err(|e| invalid(MIDAS, format!("bad base64 depth: {e}")))?;
        if bytes.len() != image.dims().pixels() * 4 {
            return Err(invalid(MIDAS, format!("depth payload has {} bytes", bytes.len())));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

pub struct RemoteGenerator {
    server: Arc<ModelServer>,
}

impl RemoteGenerator {
    pub fn new(server: Arc<ModelServer>) -> Self {
        Self { server }
    }
}

#[derive(Deserialize)]
struct GenerateResponse {
    image_png_b64: String,
}

impl Generator for RemoteGenerator {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(Capability::Generate, SDXL_DEPTH_INPAINT, Determinism::StochasticWithSeed)
            .not_thread_safe()
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Raster, BackendError> {
        let resp: GenerateResponse = self.server.call(
            SDXL_DEPTH_INPAINT,
            "generate",
            json!({
                "image_png_b64": image_field(req.image),
                "mask_png_b64": B64.encode(req.mask.encode_png()),
                "depth_png_b64": B64.encode(req.depth.encode_png()),
                "prompt": req.prompt,
                "control_strength": req.config.control_strength,
                "seed": req.config.seed,
                "steps": req.config.steps,
                "guidance": req.config.guidance,
            }),
        )?;
        decode_png_raster(SDXL_DEPTH_INPAINT, &resp.image_png_b64)
    }
}

/// Hosted Gemini `generateContent` client.
pub struct GeminiInterpreter {
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
}

impl GeminiInterpreter {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: api_key.into(),
            agent: agent(Duration::from_secs(120)),
        }
    }

    pub fn from_env() -> Result<Self> {
        let key = env_nonempty(VLM_KEY_ENV).ok_or_else(|| {
            Error::Config(format!(
                "backend `{GEMINI}` needs an API key in {VLM_KEY_ENV}; offline runs must select a fake interpreter"
            ))
        })?;
        Ok(Self::new(
            env_nonempty(VLM_ENDPOINT_ENV).unwrap_or_else(|| DEFAULT_VLM_ENDPOINT.into()),
            env_nonempty(VLM_MODEL_ENV).unwrap_or_else(|| DEFAULT_VLM_MODEL.into()),
            key,
        ))
    }

    pub fn request_body(request: &ConceptRequest) -> Value {
        json!({
            "contents": [{
                "parts": [
                    { "text": request.instruction },
                    { "inline_data": { "mime_type": "image/png", "data": B64.encode(request.silhouette.encode_png()) } }
                ]
            }],
            "generationConfig": {
                "responseMimeType": "application/json",
                "responseSchema": request.response_schema,
            }
        })
    }

    /// Concatenated text parts of the first candidate.
    pub fn extract_text(body: &Value) -> Option<String> {
        let parts = body.pointer("/candidates/0/content/parts")?.as_array()?;
        let text: String = parts.iter().filter_map(|p| p["text"].as_str()).collect();
        (!text.is_empty()).then_some(text)
    }
}

impl Interpreter for GeminiInterpreter {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(Capability::Interpret, GEMINI, Determinism::Stochastic)
            .max_in_flight(4)
            .requests_per_minute(60)
    }

    fn interpret(&self, request: &ConceptRequest) -> Result<String, BackendError> {
        let url = format!("{}/v1beta/models/{}:generateContent", self.endpoint, self.model);
        let mut resp = self
            .agent
            .post(&url)
            .header("x-goog-api-key", &self.api_key)
            .send_json(Self::request_body(request))
            .map_err(|e| map_ureq(GEMINI, e))?;
        let body: Value = resp
            .body_mut()
            .with_config()
            .limit(RESPONSE_LIMIT)
            .read_json()
            .map_err(|e| invalid(GEMINI, format!("malformed response: {e}")))?;
        Self::extract_text(&body).ok_or_else(|| invalid(GEMINI, "response carries no text candidate"))
    }
}

pub(crate) fn register(r: &mut Registry) -> Result<()> {
    let probe = |id: &str| -> Result<Arc<ModelServer>> { ModelServer::from_env(id).map(Arc::new) };

    r.register_detector(
        BackendDescriptor::new(Capability::Detect, GROUNDING_DINO, Determinism::Deterministic),
        move || Ok(Arc::new(RemoteDetector::new(probe(GROUNDING_DINO)?))),
    )?;
    r.register_segmenter(
        BackendDescriptor::new(Capability::Segment, SAM, Determinism::Deterministic),
        move || Ok(Arc::new(RemoteSegmenter::new(probe(SAM)?))),
    )?;
    r.register_depth(
        BackendDescriptor::new(Capability::Depth, MIDAS, Determinism::Deterministic),
        move || Ok(Arc::new(RemoteDepth::new(probe(MIDAS)?))),
    )?;
    r.register_generator(
        BackendDescriptor::new(Capability::Generate, SDXL_DEPTH_INPAINT, Determinism::StochasticWithSeed)
            .not_thread_safe(),
        move || Ok(Arc::new(RemoteGenerator::new(probe(SDXL_DEPTH_INPAINT)?))),
    )?;
    r.register_interpreter(
        BackendDescriptor::new(Capability::Interpret, GEMINI, Determinism::Stochastic)
            .max_in_flight(4)
            .requests_per_minute(60),
        || Ok(Arc::new(GeminiInterpreter::from_env()?)),
    )?;
    Ok(())
}
