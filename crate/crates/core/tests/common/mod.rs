#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use shape2animal::backends::fakes::{
    LuminanceDepth, SalientDetector, ShapeInterpreter, TextureGenerator, ThresholdSegmenter,
};
use shape2animal::backends::{
    BackendDescriptor, BackendError, BackendSelection, BackendSet, Capability, Determinism, ErrorClass, Generator,
    RetryPolicy,
};
use shape2animal::evaluation::{Category, DatasetManifest, ManifestEntry};
use shape2animal::generation::GenerationRequest;
use shape2animal::imaging::Raster;
use shape2animal::pipeline::PipelineConfig;

/// An ellipse on a flat background; `k` varies size, placement and colors.
pub fn blob_image(w: u32, h: u32, k: u32) -> Raster {
    let (fw, fh) = (w as f32, h as f32);
    let rx = fw * (0.18 + 0.03 * (k % 5) as f32);
    let ry = fh * (0.12 + 0.04 * (k % 4) as f32);
    let cx = fw * (0.45 + 0.02 * (k % 3) as f32);
    let cy = fh * (0.5 - 0.02 * (k % 2) as f32);
    let bg = [0.1, 0.15 + 0.01 * (k % 7) as f32, 0.25];
    let fg = [0.85, 0.7 + 0.02 * (k % 5) as f32, 0.6];
    Raster::from_fn(w, h, |x, y| {
        let dx = (x as f32 + 0.5 - cx) / rx;
        let dy = (y as f32 + 0.5 - cy) / ry;
        let shade = (x + y) as f32 / (fw + fh) * 0.1;
        if dx * dx + dy * dy <= 1.0 {
            [fg[0] - shade, fg[1] - shade, fg[2]]
        } else {
            bg
        }
    })
    .unwrap()
}

pub fn uniform_image(w: u32, h: u32) -> Raster {
    Raster::filled(w, h, [0.4, 0.4, 0.4]).unwrap()
}

pub fn fake_selection() -> BackendSelection {
    BackendSelection::fakes()
}

pub fn fake_config(out: &Path, side: u32) -> PipelineConfig {
    PipelineConfig {
        seed: Some(7),
        output_dir: out.to_path_buf(),
        working_side: side,
        backends: fake_selection(),
        retry: RetryPolicy::immediate(1),
        ..PipelineConfig::default()
    }
}

pub fn fake_set() -> BackendSet {
    BackendSet {
        detector: Arc::new(SalientDetector),
        segmenter: Arc::new(ThresholdSegmenter),
        interpreter: Arc::new(ShapeInterpreter),
        depth: Arc::new(LuminanceDepth),
        generator: Arc::new(TextureGenerator),
    }
}

/// Always fails with the given class.
pub struct BrokenGenerator(pub ErrorClass);

impl Generator for BrokenGenerator {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(Capability::Generate, "broken", Determinism::Deterministic)
    }

    fn generate(&self, _: &GenerationRequest<'_>) -> Result<Raster, BackendError> {
        Err(BackendError::new("broken", self.0, "out of memory"))
    }
}

/// Writes `counts[c]` blob images per category plus a manifest declaring
/// those counts; returns the manifest path.
pub fn write_dataset(dir: &Path, counts: &[(Category, usize)], side: u32) -> PathBuf {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let mut entries = Vec::new();
    let mut k = 0;
    for &(category, n) in counts {
        for i in 0..n {
            let path = images.join(format!("{category}_{i:02}.png"));
            blob_image(side, side, k).save_png(&path).unwrap();
            entries.push(ManifestEntry { path, category });
            k += 1;
        }
    }
    let manifest = DatasetManifest {
        entries,
        declared: counts.iter().copied().collect::<BTreeMap<_, _>>(),
    };
    let path = dir.join("manifest.csv");
    manifest.save(&path).unwrap();
    path
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}
