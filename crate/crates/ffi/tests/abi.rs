use std::ffi::{CStr, CString};
use std::ptr;

use shape2animal_ffi::*;

fn last_error() -> String {
    let p = s2a_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn raster(w: u32, h: u32, f: impl Fn(usize) -> f32) -> *mut S2aRaster {
    let data: Vec<f32> = (0..(w * h * 3) as usize).map(f).collect();
    let mut out = ptr::null_mut();
    assert_eq!(s2a_raster_new(w, h, data.as_ptr(), data.len(), &mut out), S2aStatus::Ok);
    out
}

unsafe fn mask(w: u32, h: u32, f: impl Fn(u32, u32) -> bool) -> *mut S2aMask {
    let data: Vec<f32> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y) as u8 as f32).collect();
    let mut out = ptr::null_mut();
    assert_eq!(s2a_mask_new(w, h, data.as_ptr(), data.len(), &mut out), S2aStatus::Ok);
    out
}

#[test]
fn blend_through_the_abi() {
    unsafe {
        let gen = raster(4, 3, |_| 1.0);
        let orig = raster(4, 3, |i| (i % 7) as f32 / 7.0);
        let m = mask(4, 3, |x, _| x < 2);
        let mut out = ptr::null_mut();
        assert_eq!(s2a_blend_composite(gen, orig, m, 0.5, &mut out), S2aStatus::Ok);
        assert_eq!((s2a_raster_width(out), s2a_raster_height(out)), (4, 3));
        let mut got = vec![0f32; 36];
        let mut src = vec![0f32; 36];
        assert_eq!(s2a_raster_copy_data(out, got.as_mut_ptr(), got.len()), S2aStatus::Ok);
        assert_eq!(s2a_raster_copy_data(orig, src.as_mut_ptr(), src.len()), S2aStatus::Ok);
        for y in 0..3 {
            for x in 0..4 {
                for c in 0..3 {
                    let i = (y * 4 + x) * 3 + c;
                    let want = if x < 2 { (0.5 * 1.0 + 0.5 * src[i] as f64) as f32 } else { src[i] };
                    assert!((got[i] - want).abs() <= f32::EPSILON, "{i}");
                }
            }
        }
        assert_eq!(s2a_raster_copy_data(out, got.as_mut_ptr(), 5), S2aStatus::InvalidArgument);
        s2a_raster_free(out);
        s2a_raster_free(gen);
        s2a_raster_free(orig);
        s2a_mask_free(m);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let gen = raster(4, 4, |_| 0.0);
        let orig = raster(4, 3, |_| 0.0);
        let m = mask(4, 3, |_, _| true);
        let mut out = ptr::null_mut();
        assert_eq!(s2a_blend_composite(gen, orig, m, 0.5, &mut out), S2aStatus::Shape);
        assert!(out.is_null());
        assert!(last_error().contains("gen"));
        assert_eq!(s2a_blend_composite(ptr::null(), orig, m, 0.5, &mut out), S2aStatus::NullArgument);
        assert_eq!(s2a_blend_composite(orig, orig, m, 1.5, &mut out), S2aStatus::Config);

        let empty = mask(4, 3, |_, _| false);
        let mut v = 0.0;
        assert_eq!(s2a_iou(empty, empty, &mut v), S2aStatus::Degenerate);
        assert_eq!(s2a_iou(m, empty, &mut v), S2aStatus::Ok);
        assert_eq!(v, 0.0);
        assert_eq!(s2a_iou(m, m, &mut v), S2aStatus::Ok);
        assert_eq!(v, 1.0);

        let bad = [0.5f32, f32::NAN];
        let mut d = ptr::null_mut();
        assert_eq!(s2a_depth_normalize(bad.as_ptr(), 2, 2, 1, &mut d), S2aStatus::Numeric);
        for p in [gen, orig] {
            s2a_raster_free(p);
        }
        s2a_mask_free(m);
        s2a_mask_free(empty);
    }
}

#[test]
fn depth_binarize_and_resize() {
    unsafe {
        let raw = [2.0f32, 4.0, 6.0, 10.0];
        let mut d = ptr::null_mut();
        assert_eq!(s2a_depth_normalize(raw.as_ptr(), 4, 2, 2, &mut d), S2aStatus::Ok);
        let mut got = [0f32; 4];
        assert_eq!(s2a_depth_copy_data(d, got.as_mut_ptr(), 4), S2aStatus::Ok);
        assert_eq!(got, [0.0, 0.25, 0.5, 1.0]);
        s2a_depth_free(d);

        let soft = [0.2f32, 0.5, 0.7, 1.0];
        let mut m = ptr::null_mut();
        assert_eq!(s2a_mask_new(2, 2, soft.as_ptr(), 4, &mut m), S2aStatus::Ok);
        let mut b = ptr::null_mut();
        assert_eq!(s2a_mask_binarize(m, 0.5, &mut b), S2aStatus::Ok);
        let mut bits = [0f32; 4];
        assert_eq!(s2a_mask_copy_data(b, bits.as_mut_ptr(), 4), S2aStatus::Ok);
        assert_eq!(bits, [0.0, 1.0, 1.0, 1.0]);
        assert_eq!(s2a_mask_binarize(m, 0.0, &mut b), S2aStatus::Config);
        s2a_mask_free(m);
        s2a_mask_free(b);

        let img = raster(6, 3, |i| (i % 5) as f32 / 5.0);
        let mut r = ptr::null_mut();
        assert_eq!(s2a_resize_to_working(img, 8, &mut r), S2aStatus::Ok);
        assert_eq!((s2a_raster_width(r), s2a_raster_height(r)), (8, 8));
        s2a_raster_free(r);
        s2a_raster_free(img);
    }
}

#[test]
fn selection_and_concepts() {
    unsafe {
        let boxes = [
            S2aBox { x0: 0, y0: 0, x1: 4, y1: 4, score: 0.8 },
            S2aBox { x0: 2, y0: 2, x1: 10, y1: 10, score: 0.8 },
            S2aBox { x0: 0, y0: 0, x1: 2, y1: 2, score: 0.5 },
        ];
        let mut idx = usize::MAX;
        assert_eq!(s2a_select_best(boxes.as_ptr(), 3, &mut idx), S2aStatus::Ok);
        assert_eq!(idx, 1);
        assert_eq!(s2a_select_best(boxes.as_ptr(), 0, &mut idx), S2aStatus::NoDetection);

        let raw = CString::new(r#"{"label": " Turtle ", "prompt": "A turtle. No background."}"#).unwrap();
        let (mut label, mut prompt) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(s2a_parse_concept(raw.as_ptr(), &mut label, &mut prompt), S2aStatus::Ok);
        assert_eq!(CStr::from_ptr(label).to_str().unwrap(), "turtle");
        assert_eq!(CStr::from_ptr(prompt).to_str().unwrap(), "A turtle. No background.");
        s2a_string_free(label);
        s2a_string_free(prompt);

        let junk = CString::new("a fox, probably").unwrap();
        assert_eq!(s2a_parse_concept(junk.as_ptr(), &mut label, &mut prompt), S2aStatus::Parse);
    }
}

#[test]
fn pipeline_round_trip_with_fakes() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("blob.png");
    let out_dir = dir.path().join("out");
    unsafe {
        let img = raster(32, 32, |i| {
            let p = i / 3;
            let (x, y) = (p % 32, p / 32);
            if (8..24).contains(&x) && (10..22).contains(&y) { 0.9 } else { 0.1 }
        });
        let path = CString::new(img_path.to_str().unwrap()).unwrap();
        assert_eq!(s2a_raster_save_png(img, path.as_ptr()), S2aStatus::Ok);
        s2a_raster_free(img);

        let toml = format!(
            "seed = 5\nworking_side = 32\noutput_dir = {:?}\n[backends]\ndetect = \"fake-salient\"\nsegment = \"fake-threshold\"\ninterpret = \"fake-shape\"\ndepth = \"fake-luminance\"\ngenerate = \"fake-texture\"\n",
            out_dir.to_str().unwrap()
        );
        let toml = CString::new(toml).unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(s2a_pipeline_new(toml.as_ptr(), &mut p), S2aStatus::Ok, "{}", last_error());
        assert_eq!(s2a_pipeline_seed(p), 5);
        let mut json = ptr::null_mut();
        assert_eq!(s2a_pipeline_run(p, path.as_ptr(), false, &mut json), S2aStatus::Ok, "{}", last_error());
        let record: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        s2a_string_free(json);
        let stages = record["stages"].as_array().unwrap();
        assert!(stages.iter().all(|s| s["status"] == "ok"), "{record}");
        assert!(out_dir.join("blob").join("blob.final.png").is_file());

        let missing = CString::new(dir.path().join("nope.png").to_str().unwrap()).unwrap();
        assert_eq!(s2a_pipeline_run(p, missing.as_ptr(), false, &mut json), S2aStatus::Io);
        s2a_pipeline_free(p);

        let bad = CString::new("opacity = 3.0").unwrap();
        assert_eq!(s2a_pipeline_new(bad.as_ptr(), &mut p), S2aStatus::Config);
    }
}
