//! Invariants checked over generated inputs.

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::sample::subsequence;
use shape2animal::concept::{parse_concept_response, AnimalConcept};
use shape2animal::evaluation::{
    eval_concept_agreement, eval_plausibility_rate, mean_std, StudyResponses, StudyRow, Task,
};
use shape2animal::imaging::{binarize, blend_composite, iou, normalize_depth, BoundingBox, Mask, MaskKind, Raster};
use shape2animal::segmentation::select_best;

const SIDE: u32 = 8;
const N: usize = (SIDE * SIDE) as usize;

fn samples(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(0.0f32..=1.0, len)
}

fn raster() -> impl Strategy<Value = Raster> {
    samples(N * 3).prop_map(|d| Raster::new(SIDE, SIDE, d).unwrap())
}

fn soft_mask() -> impl Strategy<Value = Mask> {
    samples(N).prop_map(|d| Mask::new(SIDE, SIDE, d).unwrap())
}

fn binary_mask() -> impl Strategy<Value = Mask> {
    prop::collection::vec(any::<bool>(), N)
        .prop_map(|b| Mask::new(SIDE, SIDE, b.into_iter().map(|v| if v { 1.0 } else { 0.0 }).collect()).unwrap())
}

fn detection() -> impl Strategy<Value = BoundingBox> {
    // Few distinct scores and coordinates so ties are common.
    (0u32..4, 0u32..3, 0u32..3, 1u32..3, 1u32..3, prop::sample::select(vec!["stone", "cloud"]))
        .prop_map(|(s, x0, y0, w, h, l)| BoundingBox::new(x0, y0, x0 + w, y0 + h, s as f32 / 4.0, l))
}

fn welford(values: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &v) in values.iter().enumerate() {
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    (mean, (m2 / values.len() as f64).sqrt())
}

fn row(id: usize, task: Task, answer: &str) -> StudyRow {
    StudyRow {
        image_id: format!("img{id}"),
        participant_id: "p".into(),
        task,
        answer: answer.into(),
    }
}

proptest! {
    #[test]
    fn blend_stays_between_inputs(g in raster(), o in raster(), m in soft_mask(), a in 0.0f64..=1.0) {
        let out = blend_composite(&g, &o, &m, a).unwrap();
        for ((v, gv), ov) in out.data().iter().zip(g.data()).zip(o.data()) {
            prop_assert!((0.0..=1.0).contains(v));
            prop_assert!(*v >= gv.min(*ov) - 1e-6 && *v <= gv.max(*ov) + 1e-6);
        }
    }

    #[test]
    fn blend_leaves_background_untouched(g in raster(), o in raster(), a in 0.0f64..=1.0) {
        let out = blend_composite(&g, &o, &Mask::empty(SIDE, SIDE).unwrap(), a).unwrap();
        prop_assert_eq!(out.data(), o.data());
    }

    #[test]
    fn blend_of_identical_images_is_identity(o in raster(), m in soft_mask(), a in 0.0f64..=1.0) {
        let out = blend_composite(&o, &o, &m, a).unwrap();
        for (v, ov) in out.data().iter().zip(o.data()) {
            prop_assert!((v - ov).abs() <= f32::EPSILON);
        }
    }

    #[test]
    fn iou_is_symmetric_and_matches_counting(a in binary_mask(), b in binary_mask()) {
        let inter = a.data().iter().zip(b.data()).filter(|(x, y)| **x == 1.0 && **y == 1.0).count();
        let union = a.data().iter().zip(b.data()).filter(|(x, y)| **x == 1.0 || **y == 1.0).count();
        match iou(&a, &b) {
            Ok(v) => {
                prop_assert_eq!(v, inter as f64 / union as f64);
                prop_assert_eq!(iou(&b, &a).unwrap(), v);
                prop_assert!((0.0..=1.0).contains(&v));
            }
            Err(_) => prop_assert_eq!(union, 0),
        }
    }

    #[test]
    fn binarize_is_idempotent(m in soft_mask(), t in 0.01f32..=1.0) {
        let once = binarize(&m, t).unwrap();
        prop_assert_eq!(once.kind(), MaskKind::Binary);
        let twice = binarize(&once, t).unwrap();
        prop_assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn normalized_depth_spans_unit_interval(raw in prop::collection::vec(-1e3f32..1e3, 1..64)) {
        let d = normalize_depth(&raw, raw.len() as u32, 1).unwrap();
        let lo = d.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = d.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        if raw.iter().all(|v| *v == raw[0]) {
            prop_assert!(d.data().iter().all(|v| *v == 0.5));
        } else {
            prop_assert_eq!(lo, 0.0);
            prop_assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn select_best_ignores_input_order(
        (boxes, perm) in prop::collection::vec(detection(), 1..12)
            .prop_flat_map(|b| { let n = b.len(); (Just(b), Just((0..n).collect::<Vec<_>>()).prop_shuffle()) })
    ) {
        let shuffled: Vec<_> = perm.iter().map(|&i| boxes[i].clone()).collect();
        let best = select_best(&boxes).unwrap();
        prop_assert_eq!(&select_best(&shuffled).unwrap(), &best);
        prop_assert!(boxes.iter().all(|b| b.score <= best.score));
    }

    #[test]
    fn concept_round_trips(
        label in "[A-Za-z][A-Za-z ]{0,15}",
        prompt in "[A-Za-z][A-Za-z ,]{0,40}",
        alts in prop::collection::vec(("[a-z]{1,8}", "[A-Za-z ]{1,20}"), 0..3),
    ) {
        prop_assume!(!label.trim().is_empty() && !prompt.trim().is_empty());
        prop_assume!(alts.iter().all(|(_, p)| !p.trim().is_empty()));
        let mut c = AnimalConcept::new(&label, &prompt, "").unwrap();
        for (l, p) in &alts {
            c.alternatives.push(shape2animal::concept::ConceptCandidate::new(l, p).unwrap());
        }
        let text = c.to_structured();
        let back = parse_concept_response(&text).unwrap();
        prop_assert_eq!(&back.label, &c.label);
        prop_assert_eq!(&back.render_prompt, &c.render_prompt);
        prop_assert_eq!(&back.alternatives, &c.alternatives);
        prop_assert_eq!(back.raw_response, text);
    }

    #[test]
    fn mean_std_agrees_with_streaming(values in prop::collection::vec(0.0f64..=1.0, 1..200)) {
        let (m, s) = mean_std(&values).unwrap();
        let (wm, ws) = welford(&values);
        prop_assert!((m - wm).abs() < 1e-12);
        prop_assert!((s - ws).abs() < 1e-12);
    }

    #[test]
    fn rates_ignore_row_order(
        answers in prop::collection::vec((0usize..5, any::<bool>(), any::<bool>()), 1..60),
        seed in any::<u64>(),
    ) {
        let labels: BTreeMap<String, &str> = (0..5).map(|i| (format!("img{i}"), "cat")).collect();
        let rows: Vec<StudyRow> = answers
            .iter()
            .flat_map(|&(id, hit, yes)| {
                [row(id, Task::Match, if hit { " Cat " } else { "dog" }), row(id, Task::Plausibility, if yes { "yes" } else { "no" })]
            })
            .collect();
        let mut shuffled = rows.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let a = StudyResponses::new(rows).unwrap();
        let b = StudyResponses::new(shuffled).unwrap();
        let hits = answers.iter().filter(|a| a.1).count() as f64 / answers.len() as f64;
        let yes = answers.iter().filter(|a| a.2).count() as f64 / answers.len() as f64;
        prop_assert_eq!(eval_concept_agreement(&a, &labels, None).unwrap(), hits);
        prop_assert_eq!(eval_concept_agreement(&b, &labels, None).unwrap(), hits);
        prop_assert_eq!(eval_plausibility_rate(&a).unwrap(), yes);
        prop_assert_eq!(eval_plausibility_rate(&b).unwrap(), yes);
    }

    #[test]
    fn subsets_of_a_mask_never_beat_themselves(a in binary_mask(), keep in subsequence((0..N).collect::<Vec<_>>(), 1..N)) {
        // IoU(sub, a) = |sub| / |a| when sub ⊆ a.
        prop_assume!(keep.iter().any(|&i| a.data()[i] == 1.0));
        let sub: Vec<f32> = (0..N).map(|i| if keep.contains(&i) { a.data()[i] } else { 0.0 }).collect();
        let sub = Mask::new(SIDE, SIDE, sub).unwrap();
        let v = iou(&sub, &a).unwrap();
        prop_assert_eq!(v, sub.foreground_count() as f64 / a.foreground_count() as f64);
    }
}
