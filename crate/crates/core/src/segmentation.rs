//! Silhouette extraction: open-vocabulary detection, highest-confidence box
//! selection, then promptable segmentation of the chosen box.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::backends::{with_retries, BackendError, Detector, ErrorClass, RetryPolicy, Segmenter};
use crate::error::{Error, Result};
use crate::imaging::{binarize, BoundingBox, Mask, MaskKind, Raster, DEFAULT_THRESHOLD};

pub const DEFAULT_CONFIDENCE_FLOOR: f32 = 0.3;
pub const DEFAULT_VOCABULARY: [&str; 3] = ["stone", "cloud", "fire"];
/// Minimum share of mask pixels that must fall inside the detection box.
pub const MIN_BOX_CONTAINMENT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionQuery {
    pub vocabulary: Vec<String>,
    pub confidence_floor: f32,
}

impl Default for DetectionQuery {
    fn default() -> Self {
        Self {
            vocabulary: DEFAULT_VOCABULARY.iter().map(|s| s.to_string()).collect(),
            confidence_floor: DEFAULT_CONFIDENCE_FLOOR,
        }
    }
}

impl DetectionQuery {
    pub fn new(vocabulary: impl IntoIterator<Item = impl Into<String>>, confidence_floor: f32) -> Result<Self> {
        let q = Self {
            vocabulary: vocabulary.into_iter().map(Into::into).collect(),
            confidence_floor,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn single(term: impl Into<String>) -> Self {
        Self {
            vocabulary: vec![term.into()],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocabulary.is_empty() {
            return Err(Error::Precondition("detection vocabulary is empty".into()));
        }
        if let Some(i) = self.vocabulary.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::Precondition(format!("vocabulary term {i} is blank")));
        }
        if !(0.0..1.0).contains(&self.confidence_floor) {
            return Err(Error::Precondition(format!(
                "confidence floor {} outside [0, 1)",
                self.confidence_floor
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteResult {
    pub mask: Mask,
    pub detection: BoundingBox,
    pub query_term: String,
}

/// Detector output clipped to the image and filtered by the confidence floor.
pub fn detect(
    detector: &dyn Detector,
    image: &Raster,
    query: &DetectionQuery,
    retry: &RetryPolicy,
) -> Result<Vec<BoundingBox>> {
    query.validate()?;
    let id = detector.descriptor().id;
    let raw = with_retries(retry, |_| detector.detect(image, &query.vocabulary))?.value;
    let (w, h) = (image.width(), image.height());
    let mut out = Vec::with_capacity(raw.len());
    for mut b in raw {
        if !(0.0..=1.0).contains(&b.score) {
            return Err(BackendError::new(
                id,
                ErrorClass::InvalidResponse,
                format!("detection score {} outside [0, 1]", b.score),
            )
            .into());
        }
        b.x1 = b.x1.min(w);
        b.y1 = b.y1.min(h);
        if b.x0 >= b.x1 || b.y0 >= b.y1 {
            tracing::debug!(?b, "dropping empty detection");
            continue;
        }
        if b.score >= query.confidence_floor {
            out.push(b);
        }
    }
    Ok(out)
}

/// Total order over detections, best first: higher score, then larger area,
/// then smaller `(y0, x0)`, then smaller `(y1, x1)`, then label.
pub fn detection_order(a: &BoundingBox, b: &BoundingBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.area().cmp(&a.area()))
        .then_with(|| (a.y0, a.x0).cmp(&(b.y0, b.x0)))
        .then_with(|| (a.y1, a.x1).cmp(&(b.y1, b.x1)))
        .then_with(|| a.label.cmp(&b.label))
}

/// Highest-confidence detection; the result does not depend on input order.
pub fn select_best(detections: &[BoundingBox]) -> Result<BoundingBox> {
    detections
        .iter()
        .min_by(|a, b| detection_order(a, b))
        .cloned()
        .ok_or(Error::NoDetection)
}

/// Binary mask for `prompt`, same size as `image`.
pub fn segment(
    segmenter: &dyn Segmenter,
    image: &Raster,
    prompt: &BoundingBox,
    retry: &RetryPolicy,
) -> Result<Mask> {
    prompt.validate(image.dims())?;
    let mask = with_retries(retry, |_| segmenter.segment(image, prompt))?.value;
    if mask.dims() != image.dims() {
        return Err(Error::Shape {
            operand: "segmenter output",
            expected: image.dims(),
            found: mask.dims(),
        });
    }
    let mask = match mask.kind() {
        MaskKind::Binary => mask,
        MaskKind::Soft => binarize(&mask, DEFAULT_THRESHOLD)?,
    };
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}

/// Share of foreground pixels lying inside the box.
pub fn box_containment(mask: &Mask, b: &BoundingBox) -> f64 {
    let (mut inside, mut total) = (0usize, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) > 0.0 {
                total += 1;
                inside += usize::from(b.contains(x, y));
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    }
}

pub fn extract_silhouette(
    detector: &dyn Detector,
    segmenter: &dyn Segmenter,
    image: &Raster,
    query: &DetectionQuery,
    retry: &RetryPolicy,
) -> Result<SilhouetteResult> {
    let detections = detect(detector, image, query, retry)?;
    let best = select_best(&detections)?;
    let mask = segment(segmenter, image, &best, retry)?;
    let containment = box_containment(&mask, &best);
    if containment < MIN_BOX_CONTAINMENT {
        return Err(Error::IncoherentSegmentation { containment });
    }
    Ok(SilhouetteResult {
        mask,
        query_term: best.label.clone(),
        detection: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::fakes::{BoxFillSegmenter, EmptyDetector, EmptySegmenter, FixedDetector};
    use crate::imaging::iou;

    fn bx(x0: u32, y0: u32, x1: u32, y1: u32, score: f32, label: &str) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1, score, label)
    }

    fn img(w: u32, h: u32) -> Raster {
        Raster::filled(w, h, [0.5; 3]).unwrap()
    }

    fn retry() -> RetryPolicy {
        RetryPolicy::immediate(1)
    }

    #[test]
    fn detect_passes_fixed_boxes_through() {
        let boxes = vec![bx(0, 0, 4, 4, 0.5, "stone"), bx(2, 2, 8, 8, 0.95, "cloud")];
        let d = FixedDetector::new(boxes.clone());
        let q = DetectionQuery::new(["stone", "cloud"], 0.0).unwrap();
        assert_eq!(detect(&d, &img(8, 8), &q, &retry()).unwrap(), boxes);
    }

    #[test]
    fn detect_applies_confidence_floor() {
        let d = FixedDetector::new(vec![bx(0, 0, 4, 4, 0.5, "a"), bx(2, 2, 8, 8, 0.95, "a")]);
        let q = DetectionQuery::new(["a"], 0.9).unwrap();
        let out = detect(&d, &img(8, 8), &q, &retry()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.95);
    }

    #[test]
    fn query_validation() {
        assert!(DetectionQuery::new(Vec::<String>::new(), 0.3).is_err());
        assert!(DetectionQuery::new(["  "], 0.3).is_err());
        assert!(DetectionQuery::new(["x"], 1.0).is_err());
        assert!(DetectionQuery::new(["x"], 0.0).is_ok());
        let bad = DetectionQuery { vocabulary: vec![], confidence_floor: 0.3 };
        let d = FixedDetector::centered(0.9);
        assert!(matches!(detect(&d, &img(4, 4), &bad, &retry()), Err(Error::Precondition(_))));
    }

    #[test]
    fn detect_clips_to_image() {
        let d = FixedDetector::new(vec![bx(4, 4, 20, 20, 0.9, "a"), bx(9, 0, 12, 3, 0.9, "a")]);
        let out = detect(&d, &img(8, 8), &DetectionQuery::single("a"), &retry()).unwrap();
        assert_eq!(out, vec![bx(4, 4, 8, 8, 0.9, "a")]);
    }

    #[test]
    fn select_best_examples() {
        let list = [bx(0, 0, 1, 1, 0.2, "a"), bx(0, 0, 1, 1, 0.9, "b"), bx(0, 0, 1, 1, 0.5, "c")];
        assert_eq!(select_best(&list).unwrap().label, "b");
        // equal scores: area 100 vs 400
        let tie = [bx(0, 0, 10, 10, 0.8, "small"), bx(0, 0, 20, 20, 0.8, "large")];
        assert_eq!(select_best(&tie).unwrap().label, "large");
        let one = [bx(1, 2, 3, 4, 0.1, "only")];
        assert_eq!(select_best(&one).unwrap(), one[0]);
        assert!(matches!(select_best(&[]), Err(Error::NoDetection)));
    }

    #[test]
    fn select_best_corner_tiebreak() {
        let a = bx(5, 0, 7, 2, 0.8, "a");
        let b = bx(0, 1, 2, 3, 0.8, "b");
        assert_eq!(select_best(&[a.clone(), b.clone()]).unwrap(), a);
        assert_eq!(select_best(&[b, a.clone()]).unwrap(), a);
    }

    #[test]
    fn segment_box_fill_and_edges() {
        let b = bx(0, 0, 3, 8, 0.9, "a");
        let m = segment(&BoxFillSegmenter, &img(8, 8), &b, &retry()).unwrap();
        assert_eq!(m.dims(), img(8, 8).dims());
        assert_eq!(iou(&m, &b.to_mask(m.dims()).unwrap()).unwrap(), 1.0);
        assert_eq!(m.foreground_count(), 24);
        assert!(matches!(
            segment(&EmptySegmenter, &img(8, 8), &b, &retry()),
            Err(Error::EmptyMask)
        ));
        let outside = bx(0, 0, 9, 8, 0.9, "a");
        assert!(matches!(
            segment(&BoxFillSegmenter, &img(8, 8), &outside, &retry()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn extract_silhouette_compositions() {
        let d = FixedDetector::new(vec![bx(2, 2, 6, 6, 0.9, "cloud")]);
        let s = extract_silhouette(&d, &BoxFillSegmenter, &img(8, 8), &DetectionQuery::default(), &retry()).unwrap();
        assert_eq!(s.query_term, "cloud");
        assert_eq!(s.mask.foreground_count(), 16);

        let none = extract_silhouette(&EmptyDetector, &BoxFillSegmenter, &img(8, 8), &DetectionQuery::default(), &retry());
        assert!(matches!(none, Err(Error::NoDetection)));

        let d = FixedDetector::new(vec![bx(0, 0, 4, 4, 0.6, "cloud"), bx(4, 4, 8, 8, 0.85, "stone")]);
        let s = extract_silhouette(&d, &BoxFillSegmenter, &img(8, 8), &DetectionQuery::default(), &retry()).unwrap();
        assert_eq!(s.query_term, "stone");
        assert_eq!((s.detection.x0, s.detection.y0), (4, 4));
    }
}
