//! Dataset manifest validation, shape-preservation IoU and concept-study
//! metrics.

mod manifest;
mod shape;
mod study;

pub use manifest::{
    reference_counts, validate_manifest, Category, DatasetManifest, Finding, ManifestEntry, ValidationReport,
    REFERENCE_COUNTS,
};
pub use shape::{
    default_resegment_query, eval_shape_preservation, load_run_records, mean_std, render_iou_table,
    samples_from_external, samples_from_records, IoUReport, IoURow, ShapeSample, DEFAULT_RESEGMENT_TERM,
};
pub use study::{
    concept_agreement_tally, eval_concept_agreement, eval_plausibility_rate, plausibility_tally, ConceptLabel,
    StudyResponses, StudyRow, SynonymTable, Tally, Task,
};
