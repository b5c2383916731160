//! Deterministic stand-ins for every capability. They ship with the library
//! so that the pipeline, the CLI and the evaluation harness can run end to end
//! without models; each is a pure function of its inputs (and seed).

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    BackendDescriptor, BackendError, Capability, DepthEstimator, Detector, Determinism, ErrorClass,
    Generator, Interpreter, Registry, Segmenter,
};
use crate::concept::ConceptRequest;
use crate::error::Result;
use crate::generation::GenerationRequest;
use crate::imaging::{BoundingBox, Dims, Mask, Raster};

pub const FIXED: &str = "fake-fixed";
pub const SALIENT: &str = "fake-salient";
pub const EMPTY: &str = "fake-empty";
pub const FULL_FRAME: &str = "fake-full-frame";
pub const IDENTITY: &str = "fake-identity";
pub const BOX_FILL: &str = "fake-box-fill";
pub const THRESHOLD: &str = "fake-threshold";
pub const SHAPE: &str = "fake-shape";
pub const MALFORMED: &str = "fake-malformed";
pub const LUMINANCE: &str = "fake-luminance";
pub const TEXTURE: &str = "fake-texture";

/// Minimum luminance distance from the background estimate for a pixel to
/// count as foreground in the salient fakes.
const SALIENT_CONTRAST: f32 = 0.1;

fn descriptor(capability: Capability, id: &str) -> BackendDescriptor {
    BackendDescriptor::new(capability, id, Determinism::Deterministic)
}

fn first_term(vocabulary: &[String]) -> String {
    vocabulary.first().cloned().unwrap_or_default()
}

pub(crate) fn register(r: &mut Registry) -> Result<()> {
    use Capability::*;
    r.register_detector(descriptor(Detect, FIXED), || Ok(Arc::new(FixedDetector::centered(0.9))))?;
    r.register_detector(descriptor(Detect, SALIENT), || Ok(Arc::new(SalientDetector)))?;
    r.register_detector(descriptor(Detect, EMPTY), || Ok(Arc::new(EmptyDetector)))?;
    r.register_detector(descriptor(Detect, FULL_FRAME), || Ok(Arc::new(FullFrameDetector)))?;
    r.register_detector(descriptor(Detect, IDENTITY), || {
        Ok(Arc::new(IdentityDetector(Arc::default())))
    })?;

    r.register_segmenter(descriptor(Segment, BOX_FILL), || Ok(Arc::new(BoxFillSegmenter)))?;
    r.register_segmenter(descriptor(Segment, THRESHOLD), || Ok(Arc::new(ThresholdSegmenter)))?;
    r.register_segmenter(descriptor(Segment, EMPTY), || Ok(Arc::new(EmptySegmenter)))?;
    r.register_segmenter(descriptor(Segment, IDENTITY), || {
        Ok(Arc::new(IdentitySegmenter(Arc::default())))
    })?;

    r.register_interpreter(descriptor(Interpret, FIXED), || Ok(Arc::new(FixedInterpreter::fox())))?;
    r.register_interpreter(descriptor(Interpret, SHAPE), || Ok(Arc::new(ShapeInterpreter)))?;
    r.register_interpreter(descriptor(Interpret, MALFORMED), || Ok(Arc::new(MalformedInterpreter)))?;

    r.register_depth(descriptor(Depth, LUMINANCE), || Ok(Arc::new(LuminanceDepth)))?;

    r.register_generator(
        BackendDescriptor::new(Generate, TEXTURE, Determinism::StochasticWithSeed),
        || Ok(Arc::new(TextureGenerator)),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Detectors

/// Returns a fixed list of boxes verbatim, or a single centered box covering
/// the middle half of each axis.
#[derive(Clone, Debug)]
pub struct FixedDetector {
    boxes: Option<Vec<BoundingBox>>,
    centered_score: f32,
}

impl FixedDetector {
    pub fn new(boxes: Vec<BoundingBox>) -> Self {
        Self {
            boxes: Some(boxes),
            centered_score: 0.0,
        }
    }

    pub fn centered(score: f32) -> Self {
        Self {
            boxes: None,
            centered_score: score,
        }
    }
}

impl Detector for FixedDetector {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Detect, FIXED)
    }

    fn detect(&self, image: &Raster, vocabulary: &[String]) -> Result<Vec<BoundingBox>, BackendError> {
        if let Some(boxes) = &self.boxes {
            return Ok(boxes.clone());
        }
        let (w, h) = (image.width(), image.height());
        Ok(vec![BoundingBox::new(
            w / 4,
            h / 4,
            w - w / 4,
            h - h / 4,
            self.centered_score,
            first_term(vocabulary),
        )])
    }
}

pub struct EmptyDetector;

impl Detector for EmptyDetector {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Detect, EMPTY)
    }

    fn detect(&self, _: &Raster, _: &[String]) -> Result<Vec<BoundingBox>, BackendError> {
        Ok(Vec::new())
    }
}

/// One box spanning the whole image at score 1.
pub struct FullFrameDetector;

impl Detector for FullFrameDetector {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Detect, FULL_FRAME)
    }

    fn detect(&self, image: &Raster, vocabulary: &[String]) -> Result<Vec<BoundingBox>, BackendError> {
        Ok(vec![BoundingBox::new(
            0,
            0,
            image.width(),
            image.height(),
            1.0,
            first_term(vocabulary),
        )])
    }
}

/// Pixels whose luminance differs from the mean border luminance by more than
/// [`SALIENT_CONTRAST`].
fn salient_foreground(image: &Raster) -> (Vec<bool>, Vec<f32>) {
    let lum = image.luminance_plane();
    let (w, h) = (image.width() as usize, image.height() as usize);
    let (mut sum, mut n) = (0.0f64, 0usize);
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                sum += f64::from(lum[y * w + x]);
                n += 1;
            }
        }
    }
    let background = (sum / n as f64) as f32;
    let contrast: Vec<f32> = lum.iter().map(|&l| (l - background).abs()).collect();
    (contrast.iter().map(|&c| c > SALIENT_CONTRAST).collect(), contrast)
}

/// Boxes the region that stands out from the border color. Uniform images
/// yield no detection.
pub struct SalientDetector;

impl Detector for SalientDetector {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Detect, SALIENT)
    }

    fn detect(&self, image: &Raster, vocabulary: &[String]) -> Result<Vec<BoundingBox>, BackendError> {
        let (fg, contrast) = salient_foreground(image);
        let w = image.width();
        let data: Vec<f32> = fg.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        let mask = Mask::new(w, image.height(), data)
            .map_err(|e| BackendError::new(SALIENT, ErrorClass::InvalidResponse, e.to_string()))?;
        let Some((x0, y0, x1, y1)) = mask.bounds() else {
            return Ok(Vec::new());
        };
        let (sum, n) = contrast
            .iter()
            .zip(&fg)
            .filter(|(_, &f)| f)
            .fold((0.0f64, 0usize), |(s, n), (&c, _)| (s + f64::from(c), n + 1));
        let score = (0.5 + 0.5 * (sum / n as f64)).min(1.0) as f32;
        Ok(vec![BoundingBox::new(x0, y0, x1, y1, score, first_term(vocabulary))])
    }
}

// ---------------------------------------------------------------------------
// Segmenters

/// Fills the prompt box.
pub struct BoxFillSegmenter;

impl Segmenter for BoxFillSegmenter {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Segment, BOX_FILL)
    }

    fn segment(&self, image: &Raster, prompt: &BoundingBox) -> Result<Mask, BackendError> {
        prompt
            .to_mask(image.dims())
            .map_err(|e| BackendError::new(BOX_FILL, ErrorClass::InvalidResponse, e.to_string()))
    }
}

/// Salient pixels inside the prompt box.
pub struct ThresholdSegmenter;

impl Segmenter for ThresholdSegmenter {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Segment, THRESHOLD)
    }

    fn segment(&self, image: &Raster, prompt: &BoundingBox) -> Result<Mask, BackendError> {
        let (fg, _) = salient_foreground(image);
        let w = image.width();
        Mask::from_fn(w, image.height(), |x, y| {
            prompt.contains(x, y) && fg[y as usize * w as usize + x as usize]
        })
        .map_err(|e| BackendError::new(THRESHOLD, ErrorClass::InvalidResponse, e.to_string()))
    }
}

pub struct EmptySegmenter;

impl Segmenter for EmptySegmenter {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Segment, EMPTY)
    }

    fn segment(&self, image: &Raster, _: &BoundingBox) -> Result<Mask, BackendError> {
        Mask::empty(image.width(), image.height())
            .map_err(|e| BackendError::new(EMPTY, ErrorClass::InvalidResponse, e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Identity re-segmentation

/// Masks keyed by the 8-bit content of the image they belong to.
#[derive(Default)]
pub struct ReferenceMasks {
    by_image: HashMap<[u8; 32], Mask>,
}

impl ReferenceMasks {
    pub fn new(pairs: impl IntoIterator<Item = (Raster, Mask)>) -> Self {
        Self {
            by_image: pairs.into_iter().map(|(r, m)| (fingerprint(&r), m)).collect(),
        }
    }

    fn lookup(&self, image: &Raster, id: &str) -> Result<&Mask, BackendError> {
        self.by_image.get(&fingerprint(image)).ok_or_else(|| {
            BackendError::new(id, ErrorClass::InvalidResponse, "no reference mask registered for this image")
        })
    }
}

pub fn fingerprint(image: &Raster) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(image.width().to_le_bytes());
    h.update(image.height().to_le_bytes());
    h.update(image.to_rgb8().as_raw());
    h.finalize().into()
}

/// Detector half of the identity re-segmenter: boxes the registered mask.
pub struct IdentityDetector(pub Arc<ReferenceMasks>);

impl Detector for IdentityDetector {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Detect, IDENTITY)
    }

    fn detect(&self, image: &Raster, vocabulary: &[String]) -> Result<Vec<BoundingBox>, BackendError> {
        let mask = self.0.lookup(image, IDENTITY)?;
        Ok(mask
            .bounds()
            .map(|(x0, y0, x1, y1)| BoundingBox::new(x0, y0, x1, y1, 1.0, first_term(vocabulary)))
            .into_iter()
            .collect())
    }
}

/// Segmenter half of the identity re-segmenter: returns the registered mask
/// verbatim.
pub struct IdentitySegmenter(pub Arc<ReferenceMasks>);

impl Segmenter for IdentitySegmenter {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Segment, IDENTITY)
    }

    fn segment(&self, image: &Raster, _: &BoundingBox) -> Result<Mask, BackendError> {
        self.0.lookup(image, IDENTITY).cloned()
    }
}

/// Detector/segmenter pair that reproduces each registered mask exactly.
pub fn identity_resegmenter(
    pairs: impl IntoIterator<Item = (Raster, Mask)>,
) -> (Arc<dyn Detector>, Arc<dyn Segmenter>) {
    let book = Arc::new(ReferenceMasks::new(pairs));
    (
        Arc::new(IdentityDetector(book.clone())),
        Arc::new(IdentitySegmenter(book)),
    )
}

// ---------------------------------------------------------------------------
// Interpreters

pub struct FixedInterpreter {
    pub label: String,
    pub prompt: String,
}

impl FixedInterpreter {
    pub fn new(label: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            prompt: prompt.into(),
        }
    }

    pub fn fox() -> Self {
        Self::new(
            "fox",
            "A red fox curled up filling the shape, russet fur with a white-tipped tail. No background.",
        )
    }
}

impl Interpreter for FixedInterpreter {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Interpret, FIXED)
    }

    fn interpret(&self, _: &ConceptRequest) -> Result<String, BackendError> {
        Ok(serde_json::json!({ "label": self.label, "prompt": self.prompt }).to_string())
    }
}

pub struct MalformedInterpreter;

impl Interpreter for MalformedInterpreter {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Interpret, MALFORMED)
    }

    fn interpret(&self, _: &ConceptRequest) -> Result<String, BackendError> {
        Ok("Looks a bit like a fox to me!".into())
    }
}

const SHAPE_CATALOGUE: [(&str, &str); 6] = [
    ("crocodile", "A long crocodile stretched along the shape, ridged olive scales run the full length and the snout points to one end"),
    ("giraffe", "A tall giraffe filling the shape, the neck rises to the top edge and tan patches cover the coat"),
    ("turtle", "A detailed sea turtle filling the shape, patterned green and brown shell texture covers the oval, a grey flipper shows at one edge"),
    ("octopus", "An octopus spread across the shape, curling tentacles reach into every lobe, mottled orange skin"),
    ("elephant", "A grey elephant filling the shape, the trunk curls along the lower edge and wrinkled skin covers the body"),
    ("rabbit", "A crouching rabbit filling the shape, soft brown fur, the ears follow the upper outline"),
];

/// Picks an animal from the silhouette's bounding-box aspect ratio and fill
/// ratio. Reply format matches the structured schema.
pub struct ShapeInterpreter;

impl ShapeInterpreter {
    fn choose(silhouette: &Raster) -> usize {
        let data: Vec<f32> = silhouette.data().chunks_exact(3).map(|p| p[0]).collect();
        let mask = Mask::new(silhouette.width(), silhouette.height(), data)
            .unwrap_or_else(|_| Mask::empty(1, 1).expect("1x1 mask"));
        let Some((x0, y0, x1, y1)) = mask.bounds() else {
            return 5;
        };
        let (bw, bh) = (f64::from(x1 - x0), f64::from(y1 - y0));
        let aspect = bw / bh;
        let fill = mask.data().iter().filter(|&&v| v >= 0.5).count() as f64 / (bw * bh);
        if aspect >= 1.8 {
            0
        } else if aspect <= 0.55 {
            1
        } else if fill >= 0.72 {
            2
        } else if fill < 0.45 {
            3
        } else if aspect > 1.0 {
            4
        } else {
            5
        }
    }
}

impl Interpreter for ShapeInterpreter {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Interpret, SHAPE)
    }

    fn interpret(&self, request: &ConceptRequest) -> Result<String, BackendError> {
        let first = Self::choose(&request.silhouette);
        let pick = |k: usize| {
            let (label, body) = SHAPE_CATALOGUE[(first + k) % SHAPE_CATALOGUE.len()];
            serde_json::json!({ "label": label, "prompt": format!("{body}. No background.") })
        };
        let n = request.candidates.max(1) as usize;
        Ok(if n == 1 {
            pick(0).to_string()
        } else {
            serde_json::json!({ "candidates": (0..n).map(pick).collect::<Vec<_>>() }).to_string()
        })
    }
}

// ---------------------------------------------------------------------------
// Depth

/// Raw depth equal to luminance.
pub struct LuminanceDepth;

impl DepthEstimator for LuminanceDepth {
    fn descriptor(&self) -> BackendDescriptor {
        descriptor(Capability::Depth, LUMINANCE)
    }

    fn estimate(&self, image: &Raster) -> Result<Vec<f32>, BackendError> {
        Ok(image.luminance_plane())
    }
}

// ---------------------------------------------------------------------------
// Generator

/// Seeded texture inpainting.
///
/// For mask weight `m`, depth `d`, control strength `α`, a prompt-derived tint
/// `t_c` in `[0.25, 1]` and a uniform sample `u` drawn per pixel and channel
/// from ChaCha8 seeded with `seed ^ prompt_key`:
///
/// `out_c = m·(α·d·t_c + (1−α)·u) + (1−m)·orig_c`
///
/// so pixels with `m = 0` are copied exactly.
pub struct TextureGenerator;

impl TextureGenerator {
    pub fn prompt_key(prompt: &str) -> [u8; 32] {
        Sha256::digest(prompt.as_bytes()).into()
    }

    pub fn tint(prompt: &str) -> [f64; 3] {
        let k = Self::prompt_key(prompt);
        [0, 1, 2].map(|i| 0.25 + 0.75 * f64::from(k[i]) / 255.0)
    }

    pub fn rng(seed: u64, prompt: &str) -> ChaCha8Rng {
        let k = Self::prompt_key(prompt);
        let key = u64::from_le_bytes(k[..8].try_into().expect("8 bytes"));
        ChaCha8Rng::seed_from_u64(seed ^ key)
    }
}

impl Generator for TextureGenerator {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(Capability::Generate, TEXTURE, Determinism::StochasticWithSeed)
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Raster, BackendError> {
        let dims: Dims = req.image.dims();
        let alpha = req.config.control_strength;
        let tint = Self::tint(req.prompt);
        let mut rng = Self::rng(req.config.seed, req.prompt);
        let mut data = Vec::with_capacity(dims.pixels() * 3);
        for (i, orig) in req.image.data().chunks_exact(3).enumerate() {
            let m = f64::from(req.mask.data()[i]);
            let d = f64::from(req.depth.data()[i]);
            for c in 0..3 {
                let u: f64 = rng.random();
                let fill = alpha * d * tint[c] + (1.0 - alpha) * u;
                let v = m * fill + (1.0 - m) * f64::from(orig[c]);
                data.push((v as f32).clamp(0.0, 1.0));
            }
        }
        Raster::new(dims.width, dims.height, data)
            .map_err(|e| BackendError::new(TEXTURE, ErrorClass::InvalidResponse, e.to_string()))
    }
}
