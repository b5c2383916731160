//! End-to-end orchestration: resize, silhouette extraction, concept
//! interpretation alongside depth estimation, generation, and blending.
//!
//! Every stage persists its artifacts under `<output_dir>/<id>/` and records a
//! content-addressed cache key. A rerun reuses a stage when the previous record
//! holds an `ok` entry with the same key and its files are still present.
//! Stage outputs are snapped to the 8-bit grid before use so that a cached
//! artifact and a freshly computed one are indistinguishable downstream.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

mod config;
mod record;

pub use config::{GenerationSettings, PipelineConfig, VocabularyMode};
pub use record::{Outcome, PipelineRecord, Stage, StageEntry, StageStatus};

use crate::backends::{BackendSelection, BackendSet, Capability, Registry};
use crate::concept::{interpret, AnimalConcept, ConceptCandidate};
use crate::error::{Error, Result};
use crate::evaluation::DatasetManifest;
use crate::generation::{estimate_depth, generate, GenerationMeta};
use crate::imaging::{blend_composite, resize_to_working, write_file, BoundingBox, DepthMap, Mask, Raster};
use crate::segmentation::{extract_silhouette, DetectionQuery, SilhouetteResult};

const CACHE_VERSION: &str = "s2a-cache-v1";

/// Contents of `<stem>.detection.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionArtifact {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub score: f32,
    pub term: String,
}

impl DetectionArtifact {
    fn from_silhouette(s: &SilhouetteResult) -> Self {
        let d = &s.detection;
        Self {
            x0: d.x0,
            y0: d.y0,
            x1: d.x1,
            y1: d.y1,
            score: d.score,
            term: s.query_term.clone(),
        }
    }

    pub fn to_box(&self) -> BoundingBox {
        BoundingBox::new(self.x0, self.y0, self.x1, self.y1, self.score, self.term.clone())
    }
}

/// Contents of `<stem>.concept.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptArtifact {
    pub label: String,
    pub render_prompt: String,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<ConceptCandidate>,
    pub backend: String,
}

impl ConceptArtifact {
    pub fn new(concept: &AnimalConcept, backend: impl Into<String>) -> Self {
        Self {
            label: concept.label.clone(),
            render_prompt: concept.render_prompt.clone(),
            raw_response: concept.raw_response.clone(),
            alternatives: concept.alternatives.clone(),
            backend: backend.into(),
        }
    }

    pub fn into_concept(self) -> Result<AnimalConcept> {
        let concept = AnimalConcept {
            label: self.label,
            render_prompt: self.render_prompt,
            raw_response: self.raw_response,
            alternatives: self.alternatives,
        };
        concept.validate()?;
        Ok(concept)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// An image entering the pipeline.
#[derive(Clone, Debug)]
pub struct ImageInput {
    pub id: String,
    pub image: Raster,
    pub source: Option<PathBuf>,
    pub category: Option<String>,
}

impl ImageInput {
    pub fn new(id: impl Into<String>, image: Raster) -> Self {
        Self {
            id: id.into(),
            image,
            source: None,
            category: None,
        }
    }

    /// Loads an image file; the id is the file stem.
    pub fn load(path: impl AsRef<Path>, category: Option<String>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self {
            id: image_id_for(path),
            image: Raster::load(path)?,
            source: Some(path.to_path_buf()),
            category,
        })
    }
}

pub fn image_id_for(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Stable per-image seed: the run seed mixed with a hash of the image id.
pub fn derive_seed(run_seed: u64, image_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(image_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn raster_hash(r: &Raster) -> String {
    let mut h = Sha256::new();
    h.update(r.width().to_le_bytes());
    h.update(r.height().to_le_bytes());
    h.update(r.to_rgb8().as_raw());
    hex::encode(h.finalize())
}

fn mask_hash(m: &Mask) -> String {
    let mut h = Sha256::new();
    h.update(m.width().to_le_bytes());
    h.update(m.height().to_le_bytes());
    h.update(m.to_gray8().as_raw());
    hex::encode(h.finalize())
}

fn depth_hash(d: &DepthMap) -> String {
    hex::encode(Sha256::digest(d.encode_png()))
}

fn cache_key(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.as_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Errors that abort a run instead of being recorded against a stage.
fn is_abort(e: &Error) -> bool {
    matches!(e, Error::Io { .. } | Error::Config(_))
}

fn failure_status(e: &Error) -> StageStatus {
    match e {
        Error::NoDetection | Error::EmptyMask => StageStatus::Skipped(e.tag().to_string()),
        other => StageStatus::Error(format!("{}: {other}", other.tag())),
    }
}

struct StageRun<T> {
    value: Option<T>,
    entry: StageEntry,
    fresh: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub image_id: String,
    pub outcome: Outcome,
    pub detail: Option<String>,
    pub cached: bool,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub run_seed: u64,
    pub total: usize,
    pub ok: usize,
    pub skipped: usize,
    pub error: usize,
    pub not_started: usize,
    pub interrupted: bool,
    pub images: Vec<ImageSummary>,
}

impl BatchSummary {
    fn count(&mut self, r: &PipelineRecord) {
        match r.outcome() {
            Outcome::Ok => self.ok += 1,
            Outcome::Skipped => self.skipped += 1,
            Outcome::Error => self.error += 1,
        }
    }

    pub fn triple(&self) -> (usize, usize, usize) {
        (self.ok, self.skipped, self.error)
    }
}

#[derive(Clone, Debug)]
pub struct BatchOptions {
    pub parallelism: usize,
    pub force: bool,
    /// Set to stop scheduling new images; in-flight images finish.
    pub stop: Option<Arc<AtomicBool>>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            force: false,
            stop: None,
        }
    }
}

pub struct BatchOutcome {
    pub records: Vec<PipelineRecord>,
    pub summary: BatchSummary,
}

struct ArtifactPaths {
    mask: PathBuf,
    detection: PathBuf,
    concept: PathBuf,
    depth: PathBuf,
    gen: PathBuf,
    genmeta: PathBuf,
    final_image: PathBuf,
}

impl ArtifactPaths {
    fn new(dir: &Path, stem: &str) -> Self {
        let p = |suffix: &str| dir.join(format!("{stem}.{suffix}"));
        Self {
            mask: p("mask.png"),
            detection: p("detection.json"),
            concept: p("concept.json"),
            depth: p("depth.png"),
            gen: p("gen.png"),
            genmeta: p("genmeta.json"),
            final_image: p("final.png"),
        }
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    run_seed: u64,
    backends: BackendSet,
}

impl Pipeline {
    /// Validates the configuration and fixes the run seed. The recorded
    /// backend selection is taken from the adapters actually supplied.
    pub fn new(mut config: PipelineConfig, backends: BackendSet) -> Result<Self> {
        config.validate()?;
        let run_seed = config.resolve_seed();
        let mut selection = BackendSelection::default();
        for cap in Capability::ALL {
            selection.set(cap, backends.id(cap));
        }
        config.backends = selection;
        Ok(Self {
            config,
            run_seed,
            backends,
        })
    }

    pub fn from_registry(config: PipelineConfig, registry: &Registry) -> Result<Self> {
        config.validate()?;
        let set = registry.resolve_set(&config.backends, &config.pool)?;
        Self::new(config, set)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn run_seed(&self) -> u64 {
        self.run_seed
    }

    pub fn backends(&self) -> &BackendSet {
        &self.backends
    }

    pub fn image_seed(&self, image_id: &str) -> u64 {
        derive_seed(self.run_seed, image_id)
    }

    /// Detection query for an image, honoring the vocabulary mode.
    pub fn query_for(&self, category: Option<&str>) -> DetectionQuery {
        match (self.config.vocabulary_mode, category) {
            (VocabularyMode::Category, Some(c)) if !c.is_empty() && c != "other" => DetectionQuery {
                vocabulary: vec![c.to_string()],
                confidence_floor: self.config.query.confidence_floor,
            },
            _ => self.config.query.clone(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run_stage<T>(
        &self,
        stage: Stage,
        stem: &str,
        dir: &Path,
        key: String,
        previous: Option<&StageEntry>,
        load: impl FnOnce() -> Result<T>,
        compute: impl FnOnce() -> Result<T>,
    ) -> Result<StageRun<T>> {
        let started = Instant::now();
        let artifacts = stage.artifact_names(stem);
        let reusable = previous.is_some_and(|p| {
            p.status.is_ok()
                && p.cache_key.as_deref() == Some(key.as_str())
                && artifacts.iter().all(|a| dir.join(a).is_file())
        });
        let entry = |status: StageStatus, cached: bool| StageEntry {
            stage,
            status,
            artifacts: artifacts.clone(),
            cache_key: Some(key.clone()),
            cached,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            completed_at: Some(chrono::Utc::now()),
        };
        if reusable {
            match load() {
                Ok(v) => {
                    return Ok(StageRun {
                        value: Some(v),
                        entry: entry(StageStatus::Ok, true),
                        fresh: false,
                    })
                }
                Err(e) => tracing::warn!(%stage, "cached artifacts unusable, recomputing: {e}"),
            }
        }
        match compute() {
            Ok(v) => Ok(StageRun {
                value: Some(v),
                entry: entry(StageStatus::Ok, false),
                fresh: true,
            }),
            Err(e) if is_abort(&e) => Err(e),
            Err(e) => {
                let mut failed = entry(failure_status(&e), false);
                failed.artifacts.clear();
                Ok(StageRun {
                    value: None,
                    entry: failed,
                    fresh: true,
                })
            }
        }
    }

    fn finish(&self, mut record: PipelineRecord) -> Result<PipelineRecord> {
        // Drop artifacts a previous run left for stages that did not complete now.
        let stale: Vec<Stage> = record
            .stages()
            .iter()
            .filter(|s| !s.status.is_ok())
            .map(|s| s.stage)
            .collect();
        for stage in stale {
            for name in stage.artifact_names(record.image_id()) {
                let p = record.dir().join(name);
                if p.exists() {
                    std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
            let mut e = record.stage(stage).clone();
            e.artifacts.clear();
            record.set_stage(e);
        }
        debug_assert!(record.stage_order_holds());
        record.save()?;
        Ok(record)
    }

    /// Runs every stage for one image, reusing cached artifacts unless
    /// `force` is set. Stage failures are recorded; only configuration and
    /// I/O problems return an error.
    pub fn run_single(&self, input: &ImageInput, force: bool) -> Result<PipelineRecord> {
        let stem = input.id.as_str();
        if stem.is_empty() || stem.contains(['/', '\\']) || stem == "." || stem == ".." {
            return Err(Error::Config(format!("`{stem}` is not a usable image id")));
        }
        let dir = self.config.output_dir.join(stem);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let previous = if force {
            None
        } else {
            PipelineRecord::load(dir.join("record.json")).ok()
        };
        let prev = |s: Stage| previous.as_ref().map(|r| r.stage(s));
        let seed = self.image_seed(stem);
        let paths = ArtifactPaths::new(&dir, stem);
        let retry = &self.config.retry;
        let b = &self.backends;
        let ids = &self.config.backends;

        let mut snapshot = self.config.clone();
        snapshot.seed = Some(self.run_seed);
        let mut record = PipelineRecord::new(
            stem.to_string(),
            dir.clone(),
            input.source.clone(),
            input.category.clone(),
            seed,
            snapshot,
        );

        // Resize
        let started = Instant::now();
        let image = resize_to_working(&input.image, self.config.working_side)?.quantized();
        record.set_stage(StageEntry {
            status: StageStatus::Ok,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            completed_at: Some(chrono::Utc::now()),
            ..StageEntry::not_run(Stage::Resize)
        });
        let image_key = raster_hash(&image);

        // Segment
        let query = self.query_for(input.category.as_deref());
        let query_json = serde_json::to_string(&query).expect("query serializes");
        let key = cache_key(&["segment", &image_key, &query_json, &ids.detect, &ids.segment]);
        let run = self.run_stage(
            Stage::Segment,
            stem,
            &dir,
            key,
            prev(Stage::Segment),
            || {
                let mask = Mask::load(&paths.mask)?;
                let det: DetectionArtifact = read_json(&paths.detection)?;
                if mask.dims() != image.dims() {
                    return Err(Error::Validation("cached mask has the wrong size".into()));
                }
                Ok(SilhouetteResult {
                    mask,
                    query_term: det.term.clone(),
                    detection: det.to_box(),
                })
            },
            || extract_silhouette(b.detector.as_ref(), b.segmenter.as_ref(), &image, &query, retry),
        )?;
        if run.fresh {
            if let Some(s) = &run.value {
                s.mask.save_png(&paths.mask)?;
                write_json(&paths.detection, &DetectionArtifact::from_silhouette(s))?;
            }
        }
        record.set_stage(run.entry);
        let Some(silhouette) = run.value else {
            return self.finish(record);
        };
        let mask = &silhouette.mask;
        let mask_key = mask_hash(mask);

        // Interpret and depth, concurrently.
        let candidates = self.config.candidates.to_string();
        let interpret_key = cache_key(&["interpret", &mask_key, &candidates, &ids.interpret]);
        let depth_key = cache_key(&["depth", &image_key, &ids.depth]);
        let (concept_run, depth_run) = rayon::join(
            || {
                self.run_stage(
                    Stage::Interpret,
                    stem,
                    &dir,
                    interpret_key,
                    prev(Stage::Interpret),
                    || ConceptArtifact::load(&paths.concept)?.into_concept(),
                    || interpret(b.interpreter.as_ref(), mask, self.config.candidates, retry),
                )
            },
            || {
                self.run_stage(
                    Stage::Depth,
                    stem,
                    &dir,
                    depth_key,
                    prev(Stage::Depth),
                    || {
                        let d = DepthMap::load(&paths.depth)?;
                        if d.dims() != image.dims() {
                            return Err(Error::Validation("cached depth has the wrong size".into()));
                        }
                        Ok(d)
                    },
                    || Ok(estimate_depth(b.depth.as_ref(), &image, retry)?.quantized()),
                )
            },
        );
        let (concept_run, mut depth_run) = (concept_run?, depth_run?);
        if concept_run.value.is_none() {
            // Depth ran alongside but an earlier stage failed; it is not kept.
            depth_run = StageRun {
                value: None,
                entry: StageEntry::not_run(Stage::Depth),
                fresh: false,
            };
        }
        if concept_run.fresh {
            if let Some(c) = &concept_run.value {
                write_json(&paths.concept, &ConceptArtifact::new(c, &ids.interpret))?;
            }
        }
        if depth_run.fresh {
            if let Some(d) = &depth_run.value {
                d.save_png(&paths.depth)?;
            }
        }
        record.set_stage(concept_run.entry);
        record.set_stage(depth_run.entry);
        let (Some(concept), Some(depth)) = (concept_run.value, depth_run.value) else {
            return self.finish(record);
        };

        // Generate
        let gen_config = self.config.generation.with_seed(seed);
        let gen_json = serde_json::to_string(&gen_config).expect("config serializes");
        let key = cache_key(&[
            "generate",
            &image_key,
            &mask_key,
            &depth_hash(&depth),
            &concept.render_prompt,
            &gen_json,
            &ids.generate,
        ]);
        let run = self.run_stage(
            Stage::Generate,
            stem,
            &dir,
            key,
            prev(Stage::Generate),
            || {
                let g = Raster::load(&paths.gen)?;
                let _: GenerationMeta = read_json(&paths.genmeta)?;
                if g.dims() != image.dims() {
                    return Err(Error::Validation("cached generation has the wrong size".into()));
                }
                Ok(g)
            },
            || {
                Ok(generate(b.generator.as_ref(), &image, mask, &depth, &concept, &gen_config, retry)?
                    .quantized())
            },
        )?;
        if run.fresh {
            if let Some(g) = &run.value {
                g.save_png(&paths.gen)?;
                write_json(&paths.genmeta, &GenerationMeta::new(&gen_config, &ids.generate))?;
            }
        }
        record.set_stage(run.entry);
        let Some(generated) = run.value else {
            return self.finish(record);
        };

        // Blend
        let key = cache_key(&[
            "blend",
            &raster_hash(&generated),
            &image_key,
            &mask_key,
            &self.config.opacity.to_bits().to_string(),
            &self.config.feather_radius.to_string(),
        ]);
        let run = self.run_stage(
            Stage::Blend,
            stem,
            &dir,
            key,
            prev(Stage::Blend),
            || Raster::load(&paths.final_image),
            || {
                let blend_mask = mask.feathered(self.config.feather_radius);
                Ok(blend_composite(&generated, &image, &blend_mask, self.config.opacity)?.quantized())
            },
        )?;
        if run.fresh {
            if let Some(f) = &run.value {
                f.save_png(&paths.final_image)?;
            }
        }
        record.set_stage(run.entry);
        self.finish(record)
    }

    fn failed_record(&self, id: String, source: Option<PathBuf>, category: Option<String>, err: &Error) -> PipelineRecord {
        let dir = self.config.output_dir.join(&id);
        let mut snapshot = self.config.clone();
        snapshot.seed = Some(self.run_seed);
        let seed = self.image_seed(&id);
        let mut record = PipelineRecord::new(id, dir, source, category, seed, snapshot);
        record.set_stage(StageEntry {
            status: StageStatus::Error(format!("{}: {err}", err.tag())),
            completed_at: Some(chrono::Utc::now()),
            ..StageEntry::not_run(Stage::Resize)
        });
        if let Err(e) = record.save() {
            tracing::warn!("could not persist failure record: {e}");
        }
        record
    }

    /// Runs every manifest entry with up to `parallelism` images in flight.
    /// Per-image problems end up in that image's record; the batch always
    /// completes and writes `summary.json`.
    pub fn run_batch(&self, manifest: &DatasetManifest, options: &BatchOptions) -> Result<BatchOutcome> {
        if options.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        let mut ids: Vec<String> = manifest.entries.iter().map(|e| e.image_id()).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("manifest has two images with id `{}`", w[0])));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

        let total = manifest.entries.len();
        let progress = Mutex::new(BatchSummary {
            run_seed: self.run_seed,
            total,
            ..BatchSummary::default()
        });
        let stopped = || options.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst));

        let results: Vec<Option<PipelineRecord>> = pool.install(|| {
            use rayon::prelude::*;
            manifest
                .entries
                .par_iter()
                .map(|entry| {
                    if stopped() {
                        return None;
                    }
                    let id = entry.image_id();
                    let category = Some(entry.category.as_str().to_string());
                    let record = match ImageInput::load(&entry.path, category.clone()) {
                        Ok(input) => self.run_single(&input, options.force).unwrap_or_else(|e| {
                            self.failed_record(id.clone(), Some(entry.path.clone()), category, &e)
                        }),
                        Err(e) => self.failed_record(id.clone(), Some(entry.path.clone()), category, &e),
                    };
                    let mut p = progress.lock().unwrap_or_else(|p| p.into_inner());
                    p.count(&record);
                    let done = p.ok + p.skipped + p.error;
                    tracing::info!("[{done}/{total}] {id}: {:?}", record.outcome());
                    Some(record)
                })
                .collect()
        });

        let mut summary = progress.into_inner().unwrap_or_else(|p| p.into_inner());
        summary.not_started = results.iter().filter(|r| r.is_none()).count();
        summary.interrupted = summary.not_started > 0;
        let records: Vec<PipelineRecord> = results.into_iter().flatten().collect();
        summary.images = records
            .iter()
            .map(|r| ImageSummary {
                image_id: r.image_id().to_string(),
                outcome: r.outcome(),
                detail: r.failure().map(|(s, st)| format!("{s}: {st}")),
                cached: r.fully_cached(),
            })
            .collect();
        write_json(&self.config.output_dir.join("summary.json"), &summary)?;
        Ok(BatchOutcome { records, summary })
    }
}
