mod common;

use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use common::*;
use shape2animal::backends::fakes::{EmptyDetector, MalformedInterpreter};
use shape2animal::backends::{BackendSet, ErrorClass, Registry};
use shape2animal::evaluation::{Category, DatasetManifest};
use shape2animal::imaging::{Mask, Raster};
use shape2animal::pipeline::{
    BatchOptions, ConceptArtifact, ImageInput, Outcome, Pipeline, PipelineRecord, Stage, StageStatus,
};

const ARTIFACTS: [&str; 7] = [
    "mask.png",
    "detection.json",
    "concept.json",
    "depth.png",
    "gen.png",
    "genmeta.json",
    "final.png",
];

fn mtime(p: &std::path::Path) -> SystemTime {
    std::fs::metadata(p).unwrap().modified().unwrap()
}

#[test]
fn single_run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(fake_config(dir.path(), 48), fake_set()).unwrap();
    let rec = p.run_single(&ImageInput::new("blob", blob_image(64, 40, 1)), false).unwrap();
    assert_eq!(rec.outcome(), Outcome::Ok, "{rec:?}");
    assert!(rec.stage_order_holds());
    for suffix in ARTIFACTS {
        assert!(dir.path().join("blob").join(format!("blob.{suffix}")).is_file(), "{suffix}");
    }
    let final_img = Raster::load(rec.final_image().unwrap()).unwrap();
    assert_eq!((final_img.width(), final_img.height()), (48, 48));
    let mask = Mask::load(rec.mask_path().unwrap()).unwrap();
    assert!(!mask.is_empty());

    let back = PipelineRecord::load(rec.record_path()).unwrap();
    assert_eq!(back, rec);
    assert_eq!(back.config().seed, Some(7));
    assert_eq!(back.config().backends.generate, "fake-texture");
}

#[test]
fn final_image_matches_blend_of_persisted_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(fake_config(dir.path(), 32), fake_set()).unwrap();
    let img = blob_image(32, 32, 3);
    let rec = p.run_single(&ImageInput::new("b", img.clone()), false).unwrap();
    let d = dir.path().join("b");
    let gen = Raster::load(d.join("b.gen.png")).unwrap();
    let mask = Mask::load(d.join("b.mask.png")).unwrap();
    let fin = Raster::load(rec.final_image().unwrap()).unwrap();
    let orig = img.quantized();
    for y in 0..32 {
        for x in 0..32 {
            if mask.get(x, y) == 0.0 {
                assert_eq!(fin.pixel(x, y), orig.pixel(x, y));
            } else {
                let (g, o, f) = (gen.pixel(x, y), orig.pixel(x, y), fin.pixel(x, y));
                for c in 0..3 {
                    let want = ((0.5 * g[c] as f64 + 0.5 * o[c] as f64) * 255.0).round() / 255.0;
                    assert!((f[c] as f64 - want).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn rerun_is_served_from_cache_and_force_recomputes() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(fake_config(dir.path(), 32), fake_set()).unwrap();
    let input = ImageInput::new("c", blob_image(32, 32, 2));
    let first = p.run_single(&input, false).unwrap();
    assert!(first.stages().iter().all(|s| !s.cached));
    let final_path = first.final_image().unwrap();
    let before = mtime(&final_path);
    let bytes = read(&final_path);

    std::thread::sleep(Duration::from_millis(20));
    let second = p.run_single(&input, false).unwrap();
    assert!(second.fully_cached());
    assert!(second.stages().iter().skip(1).all(|s| s.cached));
    assert_eq!(mtime(&final_path), before);
    assert_eq!(read(&final_path), bytes);

    std::thread::sleep(Duration::from_millis(20));
    let third = p.run_single(&input, true).unwrap();
    assert!(third.stages().iter().all(|s| !s.cached));
    assert!(mtime(&final_path) > before);
    assert_eq!(read(&final_path), bytes);
}

#[test]
fn changed_settings_invalidate_downstream_only() {
    let dir = tempfile::tempdir().unwrap();
    let input = ImageInput::new("d", blob_image(32, 32, 4));
    Pipeline::new(fake_config(dir.path(), 32), fake_set())
        .unwrap()
        .run_single(&input, false)
        .unwrap();
    let mut cfg = fake_config(dir.path(), 32);
    cfg.opacity = 0.75;
    let rec = Pipeline::new(cfg, fake_set()).unwrap().run_single(&input, false).unwrap();
    for s in [Stage::Segment, Stage::Interpret, Stage::Depth, Stage::Generate] {
        assert!(rec.stage(s).cached, "{s}");
    }
    assert!(!rec.stage(Stage::Blend).cached);
}

#[test]
fn deleted_artifact_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(fake_config(dir.path(), 32), fake_set()).unwrap();
    let input = ImageInput::new("e", blob_image(32, 32, 5));
    p.run_single(&input, false).unwrap();
    std::fs::remove_file(dir.path().join("e/e.depth.png")).unwrap();
    let rec = p.run_single(&input, false).unwrap();
    assert!(!rec.stage(Stage::Depth).cached);
    assert!(rec.stage(Stage::Interpret).cached);
    assert_eq!(rec.outcome(), Outcome::Ok);
}

#[test]
fn no_detection_skips_and_leaves_later_stages_unrun() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(fake_config(dir.path(), 32), fake_set()).unwrap();
    let rec = p.run_single(&ImageInput::new("flat", uniform_image(32, 32)), false).unwrap();
    assert_eq!(rec.outcome(), Outcome::Skipped);
    assert_eq!(rec.stage(Stage::Segment).status, StageStatus::Skipped("no-detection".into()));
    for s in [Stage::Interpret, Stage::Depth, Stage::Generate, Stage::Blend] {
        assert_eq!(rec.stage(s).status, StageStatus::NotRun);
    }
    assert!(rec.stage_order_holds());
    assert!(!dir.path().join("flat/flat.final.png").exists());
    assert!(dir.path().join("flat/record.json").is_file());

    let set = BackendSet { detector: Arc::new(EmptyDetector), ..fake_set() };
    let p = Pipeline::new(fake_config(dir.path(), 32), set).unwrap();
    let rec = p.run_single(&ImageInput::new("blob", blob_image(32, 32, 0)), false).unwrap();
    assert_eq!(rec.failure().unwrap().1, &StageStatus::Skipped("no-detection".into()));
}

#[test]
fn interpret_failure_discards_concurrent_depth() {
    let dir = tempfile::tempdir().unwrap();
    let set = BackendSet { interpreter: Arc::new(MalformedInterpreter), ..fake_set() };
    let p = Pipeline::new(fake_config(dir.path(), 32), set).unwrap();
    let rec = p.run_single(&ImageInput::new("m", blob_image(32, 32, 0)), false).unwrap();
    assert_eq!(rec.outcome(), Outcome::Error);
    assert!(matches!(&rec.stage(Stage::Interpret).status, StageStatus::Error(m) if m.starts_with("parse")));
    assert_eq!(rec.stage(Stage::Depth).status, StageStatus::NotRun);
    assert!(rec.stage_order_holds());
    assert!(dir.path().join("m/m.mask.png").is_file());
    assert!(!dir.path().join("m/m.depth.png").exists());
}

#[test]
fn failure_after_success_removes_stale_downstream_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let input = ImageInput::new("s", blob_image(32, 32, 1));
    Pipeline::new(fake_config(dir.path(), 32), fake_set())
        .unwrap()
        .run_single(&input, false)
        .unwrap();
    assert!(dir.path().join("s/s.gen.png").is_file());
    let set = BackendSet { generator: Arc::new(BrokenGenerator(ErrorClass::Unavailable)), ..fake_set() };
    let mut cfg = fake_config(dir.path(), 32);
    cfg.generation.steps = 12;
    let rec = Pipeline::new(cfg, set).unwrap().run_single(&input, false).unwrap();
    assert!(matches!(rec.stage(Stage::Generate).status, StageStatus::Error(_)));
    assert_eq!(rec.stage(Stage::Blend).status, StageStatus::NotRun);
    assert!(!dir.path().join("s/s.gen.png").exists());
    assert!(!dir.path().join("s/s.final.png").exists());
    assert!(dir.path().join("s/s.depth.png").is_file());
}

#[test]
fn candidates_are_recorded_and_first_drives_generation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fake_config(dir.path(), 32);
    cfg.candidates = 3;
    let p = Pipeline::new(cfg, fake_set()).unwrap();
    p.run_single(&ImageInput::new("k", blob_image(32, 32, 0)), false).unwrap();
    let c = ConceptArtifact::load(dir.path().join("k/k.concept.json")).unwrap();
    assert_eq!(c.alternatives.len(), 2);
    assert_ne!(c.alternatives[0].label, c.label);
    assert!(c.render_prompt.ends_with("No background."));
}

#[test]
fn generation_seed_depends_on_run_seed_and_id() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(fake_config(dir.path(), 32), fake_set()).unwrap();
    let a = p.image_seed("a");
    assert_eq!(a, p.image_seed("a"));
    assert_ne!(a, p.image_seed("b"));
    let rec = p.run_single(&ImageInput::new("a", blob_image(32, 32, 0)), false).unwrap();
    assert_eq!(rec.seed(), a);
    let meta: serde_json::Value = serde_json::from_slice(&read(dir.path().join("a/a.genmeta.json"))).unwrap();
    assert_eq!(meta["seed"], a);
    assert_eq!(meta["backend"], "fake-texture");
}

#[test]
fn bad_ids_and_unknown_backends_abort() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(fake_config(dir.path(), 32), fake_set()).unwrap();
    assert!(p.run_single(&ImageInput::new("../x", blob_image(8, 8, 0)), false).is_err());
    let mut cfg = fake_config(dir.path(), 32);
    cfg.backends.detect = "nope".into();
    let e = Pipeline::from_registry(cfg, &Registry::with_defaults()).err().unwrap();
    assert!(e.to_string().contains("fake-salient"), "{e}");
}

#[test]
fn batch_counts_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = write_dataset(dir.path(), &[(Category::Stone, 2), (Category::Cloud, 1)], 40);
    let manifest = DatasetManifest::load(&manifest_path).unwrap();
    let out = dir.path().join("out");
    let p = Pipeline::from_registry(fake_config(&out, 32), &Registry::with_defaults()).unwrap();
    let options = BatchOptions { parallelism: 2, ..BatchOptions::default() };
    let batch = p.run_batch(&manifest, &options).unwrap();
    assert_eq!(batch.summary.triple(), (3, 0, 0));
    assert_eq!(batch.records.len(), 3);
    let ids: Vec<&str> = batch.records.iter().map(|r| r.image_id()).collect();
    assert_eq!(ids, ["stone_00", "stone_01", "cloud_00"]);
    assert_eq!(batch.records[2].category(), Some("cloud"));
    let summary: serde_json::Value = serde_json::from_slice(&read(out.join("summary.json"))).unwrap();
    assert_eq!(summary["ok"], 3);
    assert_eq!(summary["run_seed"], 7);
}

#[test]
fn batch_confines_failures_to_their_records() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = write_dataset(dir.path(), &[(Category::Fire, 3)], 32);
    let mut manifest = DatasetManifest::load(&manifest_path).unwrap();
    uniform_image(32, 32).save_png(&manifest.entries[1].path).unwrap();
    std::fs::write(dir.path().join("images/broken.png"), b"not a png").unwrap();
    manifest.entries.push(shape2animal::evaluation::ManifestEntry {
        path: dir.path().join("images/broken.png"),
        category: Category::Other,
    });
    let out = dir.path().join("out");
    let p = Pipeline::new(fake_config(&out, 32), fake_set()).unwrap();
    let batch = p.run_batch(&manifest, &BatchOptions { parallelism: 3, ..BatchOptions::default() }).unwrap();
    assert_eq!(batch.summary.triple(), (2, 1, 1));
    let broken = batch.records.iter().find(|r| r.image_id() == "broken").unwrap();
    assert!(matches!(broken.stage(Stage::Resize).status, StageStatus::Error(_)));
    assert!(out.join("broken/record.json").is_file());
}

#[test]
fn batch_output_is_independent_of_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::load(write_dataset(dir.path(), &[(Category::Cloud, 6)], 36)).unwrap();
    let mut finals = Vec::new();
    for (n, par) in [1usize, 4].into_iter().enumerate() {
        let out = dir.path().join(format!("out{n}"));
        let p = Pipeline::new(fake_config(&out, 32), fake_set()).unwrap();
        let b = p.run_batch(&manifest, &BatchOptions { parallelism: par, ..BatchOptions::default() }).unwrap();
        finals.push(
            b.records
                .iter()
                .map(|r| (r.image_id().to_string(), read(r.final_image().unwrap())))
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(finals[0], finals[1]);
}

#[test]
fn stop_flag_leaves_images_unstarted() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest::load(write_dataset(dir.path(), &[(Category::Stone, 3)], 32)).unwrap();
    let p = Pipeline::new(fake_config(&dir.path().join("out"), 32), fake_set()).unwrap();
    let stop = Arc::new(AtomicBool::new(true));
    let b = p
        .run_batch(&manifest, &BatchOptions { parallelism: 1, force: false, stop: Some(stop) })
        .unwrap();
    assert!(b.summary.interrupted);
    assert_eq!(b.summary.not_started, 3);
    assert!(b.records.is_empty());
    assert!(dir.path().join("out/summary.json").is_file());
}

#[test]
fn duplicate_ids_abort_a_batch() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = DatasetManifest::load(write_dataset(dir.path(), &[(Category::Stone, 1)], 16)).unwrap();
    manifest.entries.push(manifest.entries[0].clone());
    let p = Pipeline::new(fake_config(&dir.path().join("out"), 16), fake_set()).unwrap();
    assert!(p.run_batch(&manifest, &BatchOptions::default()).is_err());
}
