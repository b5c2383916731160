use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::config::PipelineConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Resize,
    Segment,
    Interpret,
    Depth,
    Generate,
    Blend,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Resize,
        Stage::Segment,
        Stage::Interpret,
        Stage::Depth,
        Stage::Generate,
        Stage::Blend,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Resize => "resize",
            Stage::Segment => "segment",
            Stage::Interpret => "interpret",
            Stage::Depth => "depth",
            Stage::Generate => "generate",
            Stage::Blend => "blend",
        }
    }

    /// Artifact file suffixes written by the stage, appended to the image stem.
    pub fn artifact_suffixes(self) -> &'static [&'static str] {
        match self {
            Stage::Resize => &[],
            Stage::Segment => &["mask.png", "detection.json"],
            Stage::Interpret => &["concept.json"],
            Stage::Depth => &["depth.png"],
            Stage::Generate => &["gen.png", "genmeta.json"],
            Stage::Blend => &["final.png"],
        }
    }

    pub fn artifact_names(self, stem: &str) -> Vec<String> {
        self.artifact_suffixes()
            .iter()
            .map(|s| format!("{stem}.{s}"))
            .collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Serialized as `ok`, `skipped:<reason>`, `error:<detail>` or `not-run`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Ok,
    Skipped(String),
    Error(String),
    NotRun,
}

impl StageStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, StageStatus::Ok)
    }
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageStatus::Ok => f.write_str("ok"),
            StageStatus::Skipped(r) => write!(f, "skipped:{r}"),
            StageStatus::Error(d) => write!(f, "error:{d}"),
            StageStatus::NotRun => f.write_str("not-run"),
        }
    }
}

impl FromStr for StageStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ok" => Ok(StageStatus::Ok),
            "not-run" => Ok(StageStatus::NotRun),
            _ => {
                if let Some(r) = s.strip_prefix("skipped:") {
                    Ok(StageStatus::Skipped(r.to_string()))
                } else if let Some(d) = s.strip_prefix("error:") {
                    Ok(StageStatus::Error(d.to_string()))
                } else {
                    Err(format!("unknown stage status `{s}`"))
                }
            }
        }
    }
}

impl Serialize for StageStatus {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StageStatus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: Stage,
    pub status: StageStatus,
    /// File names inside the record directory.
    pub artifacts: Vec<String>,
    pub cache_key: Option<String>,
    /// True when the artifacts were reused from an earlier run.
    pub cached: bool,
    pub elapsed_ms: f64,
    pub completed_at: Option<DateTime<Utc>>,
}

impl StageEntry {
    pub(crate) fn not_run(stage: Stage) -> Self {
        Self {
            stage,
            status: StageStatus::NotRun,
            artifacts: Vec::new(),
            cache_key: None,
            cached: false,
            elapsed_ms: 0.0,
            completed_at: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Skipped,
    Error,
}

/// Per-image run record, persisted as `record.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineRecord {
    image_id: String,
    dir: PathBuf,
    source: Option<PathBuf>,
    category: Option<String>,
    seed: u64,
    config: PipelineConfig,
    stages: Vec<StageEntry>,
}

impl PipelineRecord {
    pub(crate) fn new(
        image_id: String,
        dir: PathBuf,
        source: Option<PathBuf>,
        category: Option<String>,
        seed: u64,
        config: PipelineConfig,
    ) -> Self {
        Self {
            image_id,
            dir,
            source,
            category,
            seed,
            config,
            stages: Stage::ALL.iter().map(|&s| StageEntry::not_run(s)).collect(),
        }
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn category(&self) -> Option<&str> {
        self.category.as_deref()
    }

    /// Per-image generation seed.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn stages(&self) -> &[StageEntry] {
        &self.stages
    }

    pub fn stage(&self, stage: Stage) -> &StageEntry {
        &self.stages[stage as usize]
    }

    pub(crate) fn set_stage(&mut self, entry: StageEntry) {
        let i = entry.stage as usize;
        self.stages[i] = entry;
    }

    pub fn outcome(&self) -> Outcome {
        if self.stages.iter().any(|s| matches!(s.status, StageStatus::Error(_))) {
            Outcome::Error
        } else if self.stages.iter().all(|s| s.status.is_ok()) {
            Outcome::Ok
        } else {
            Outcome::Skipped
        }
    }

    /// First non-ok status, if any.
    pub fn failure(&self) -> Option<(&Stage, &StageStatus)> {
        self.stages
            .iter()
            .find(|s| !s.status.is_ok())
            .map(|s| (&s.stage, &s.status))
    }

    /// A stage is ok only if every earlier stage is ok.
    pub fn stage_order_holds(&self) -> bool {
        let mut seen_failure = false;
        for s in &self.stages {
            if s.status.is_ok() && seen_failure {
                return false;
            }
            seen_failure |= !s.status.is_ok();
        }
        true
    }

    /// True when every stage that ran was served from cache.
    pub fn fully_cached(&self) -> bool {
        self.stages
            .iter()
            .filter(|s| s.stage != Stage::Resize && s.status.is_ok())
            .all(|s| s.cached)
    }

    pub fn artifact_path(&self, stage: Stage, suffix: &str) -> PathBuf {
        debug_assert!(stage.artifact_suffixes().contains(&suffix));
        self.dir.join(format!("{}.{suffix}", self.image_id))
    }

    pub fn final_image(&self) -> Option<PathBuf> {
        self.stage(Stage::Blend)
            .status
            .is_ok()
            .then(|| self.artifact_path(Stage::Blend, "final.png"))
    }

    pub fn mask_path(&self) -> Option<PathBuf> {
        self.stage(Stage::Segment)
            .status
            .is_ok()
            .then(|| self.artifact_path(Stage::Segment, "mask.png"))
    }

    pub fn record_path(&self) -> PathBuf {
        self.dir.join("record.json")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("record serializes");
        crate::imaging::write_file(&self.record_path(), text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> PipelineRecord {
        PipelineRecord::new("img".into(), "out/img".into(), None, None, 1, PipelineConfig::default())
    }

    fn ok(stage: Stage) -> StageEntry {
        StageEntry { status: StageStatus::Ok, ..StageEntry::not_run(stage) }
    }

    #[test]
    fn status_strings_round_trip() {
        for s in [
            StageStatus::Ok,
            StageStatus::NotRun,
            StageStatus::Skipped("no-detection".into()),
            StageStatus::Error("backend: boom".into()),
        ] {
            assert_eq!(s.to_string().parse::<StageStatus>().unwrap(), s);
        }
        assert!("weird".parse::<StageStatus>().is_err());
    }

    #[test]
    fn outcome_and_order() {
        let mut r = record();
        for s in Stage::ALL {
            r.set_stage(ok(s));
        }
        assert_eq!(r.outcome(), Outcome::Ok);
        assert!(r.stage_order_holds());

        let mut r = record();
        r.set_stage(ok(Stage::Resize));
        r.set_stage(StageEntry {
            status: StageStatus::Skipped("no-detection".into()),
            ..StageEntry::not_run(Stage::Segment)
        });
        assert_eq!(r.outcome(), Outcome::Skipped);
        assert!(r.stage_order_holds());
        r.set_stage(ok(Stage::Depth));
        assert!(!r.stage_order_holds());
    }

    #[test]
    fn record_json_round_trip() {
        let r = record();
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<PipelineRecord>(&text).unwrap(), r);
    }
}
