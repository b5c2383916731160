//! Shape preservation: re-extract the silhouette from each final image and
//! compare it with the mask the image was generated from.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{Detector, RetryPolicy, Segmenter};
use crate::error::{Error, Result};
use crate::imaging::{iou, resize_to_working, Mask, Raster};
use crate::pipeline::{Outcome, PipelineRecord};
use crate::segmentation::{extract_silhouette, DetectionQuery};

pub const DEFAULT_RESEGMENT_TERM: &str = "an animal";

pub fn default_resegment_query() -> DetectionQuery {
    DetectionQuery::single(DEFAULT_RESEGMENT_TERM)
}

/// A final image paired with the mask it was generated from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeSample {
    pub image_id: String,
    pub final_image: PathBuf,
    pub source_mask: PathBuf,
}

impl ShapeSample {
    /// Loads the image (resized onto the mask's grid if needed) and the mask.
    pub fn load(&self) -> Result<(Raster, Mask)> {
        let mask = Mask::load(&self.source_mask)?;
        let mut image = Raster::load(&self.final_image)?;
        if image.dims() != mask.dims() {
            if mask.width() != mask.height() {
                return Err(Error::Shape {
                    operand: "final image",
                    expected: mask.dims(),
                    found: image.dims(),
                });
            }
            image = resize_to_working(&image, mask.width())?.quantized();
        }
        Ok((image, mask))
    }
}

/// Samples for every record whose run completed.
pub fn samples_from_records(records: &[PipelineRecord]) -> Vec<ShapeSample> {
    records
        .iter()
        .filter(|r| r.outcome() == Outcome::Ok)
        .filter_map(|r| {
            Some(ShapeSample {
                image_id: r.image_id().to_string(),
                final_image: r.final_image()?,
                source_mask: r.mask_path()?,
            })
        })
        .collect()
}

/// Reads `<dir>/<id>/record.json` for every subdirectory that has one,
/// ordered by id.
pub fn load_run_records(output_dir: impl AsRef<Path>) -> Result<Vec<PipelineRecord>> {
    let dir = output_dir.as_ref();
    let read = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::new();
    for entry in read {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path().join("record.json");
        if path.is_file() {
            records.push(PipelineRecord::load(&path)?);
        }
    }
    records.sort_by(|a, b| a.image_id().cmp(b.image_id()));
    Ok(records)
}

/// Pairs images produced elsewhere (`<dir>/<id>.<ext>`) with the source masks
/// of matching records. Records without an image in `dir` are left out.
pub fn samples_from_external(dir: impl AsRef<Path>, records: &[PipelineRecord]) -> Result<Vec<ShapeSample>> {
    let dir = dir.as_ref();
    let read = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in read {
        files.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    files.sort();
    Ok(records
        .iter()
        .filter_map(|r| {
            let mask = r.mask_path()?;
            let image = files.iter().find(|f| {
                f.is_file() && f.file_stem().is_some_and(|s| s.to_string_lossy() == r.image_id())
            })?;
            Some(ShapeSample {
                image_id: r.image_id().to_string(),
                final_image: image.clone(),
                source_mask: mask,
            })
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoURow {
    pub image_id: String,
    pub iou: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub rows: Vec<IoURow>,
    /// Over successful rows only; absent when there are none.
    pub mean: Option<f64>,
    /// Population standard deviation over successful rows.
    pub std: Option<f64>,
    pub n: usize,
}

/// Two-pass mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl IoUReport {
    pub fn from_rows(model: Option<String>, rows: Vec<IoURow>) -> Self {
        let values: Vec<f64> = rows.iter().filter_map(|r| r.iou).collect();
        let stats = mean_std(&values);
        Self {
            model,
            n: values.len(),
            mean: stats.map(|s| s.0),
            std: stats.map(|s| s.1),
            rows,
        }
    }

    pub fn failures(&self) -> usize {
        self.rows.len() - self.n
    }

    /// `mean ± std` to three decimals, or `n/a`.
    pub fn summary_cell(&self) -> String {
        match (self.mean, self.std) {
            (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
            _ => "n/a".into(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::pipeline::write_json(path.as_ref(), self)
    }
}

/// Console table with one line per report, plus per-image rows when
/// `detailed`.
pub fn render_iou_table(reports: &[IoUReport], detailed: bool) -> String {
    let mut out = format!("{:<24}{:>6}{:>10}  {}\n", "model", "n", "failed", "IoU (mean ± std)");
    for r in reports {
        let model = r.model.as_deref().unwrap_or("-");
        out.push_str(&format!("{model:<24}{:>6}{:>10}  {}\n", r.n, r.failures(), r.summary_cell()));
    }
    if detailed {
        for r in reports {
            out.push('\n');
            for row in &r.rows {
                match (row.iou, &row.failure) {
                    (Some(v), _) => out.push_str(&format!("  {:<30}{v:.3}\n", row.image_id)),
                    (None, Some(f)) => out.push_str(&format!("  {:<30}failed: {f}\n", row.image_id)),
                    (None, None) => out.push_str(&format!("  {:<30}failed\n", row.image_id)),
                }
            }
        }
    }
    out
}

fn score(
    sample: &ShapeSample,
    query: &DetectionQuery,
    detector: &dyn Detector,
    segmenter: &dyn Segmenter,
    retry: &RetryPolicy,
) -> Result<f64> {
    let (image, source) = sample.load()?;
    let again = extract_silhouette(detector, segmenter, &image, query, retry)?;
    iou(&source, &again.mask)
}

/// Re-segments every sample in parallel. A sample that cannot be scored is
/// kept as a failure row and left out of the aggregates.
pub fn eval_shape_preservation(
    samples: &[ShapeSample],
    query: &DetectionQuery,
    detector: &dyn Detector,
    segmenter: &dyn Segmenter,
    retry: &RetryPolicy,
    model: Option<String>,
) -> Result<IoUReport> {
    query.validate()?;
    let rows = samples
        .par_iter()
        .map(|s| match score(s, query, detector, segmenter, retry) {
            Ok(v) => IoURow { image_id: s.image_id.clone(), iou: Some(v), failure: None },
            Err(e) => IoURow {
                image_id: s.image_id.clone(),
                iou: None,
                failure: Some(format!("{}: {e}", e.tag())),
            },
        })
        .collect();
    Ok(IoUReport::from_rows(model, rows))
}
