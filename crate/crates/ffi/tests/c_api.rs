use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use cueing_ffi::*;

fn last_error() -> String {
    let p = cueing_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_model(tokens: usize, w: usize, h: usize, seed: u64) -> *mut CueingModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { cueing_model_new(tokens, w, h, seed, &mut m) }, CueingStatus::Ok);
    assert!(!m.is_null());
    m
}

fn ramp_image(w: usize, h: usize) -> Vec<f32> {
    (0..3 * w * h).map(|i| (i % 97) as f32 / 96.0).collect()
}

#[test]
fn default_model_reports_shape_and_params() {
    let m = new_model(256, 1280, 720, 0);
    let (mut t, mut w, mut h, mut n) = (0, 0, 0, 0);
    unsafe {
        assert_eq!(cueing_model_shape(m, &mut t, &mut w, &mut h), CueingStatus::Ok);
        assert_eq!(cueing_model_param_count(m, false, &mut n), CueingStatus::Ok);
        cueing_model_free(m);
    }
    assert_eq!((t, w, h), (256, 1280, 720));
    assert_eq!(n, 102_183);
}

#[test]
fn predict_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let m = new_model(16, 64, 64, 3);
    let img = ramp_image(64, 64);
    let mut a = vec![0f32; 16];
    let mut b = vec![0f32; 16];
    unsafe {
        assert_eq!(cueing_model_predict(m, img.as_ptr(), 64, 64, a.as_mut_ptr(), 16), CueingStatus::Ok);
        assert_eq!(cueing_model_save(m, path.as_ptr()), CueingStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(cueing_model_load(path.as_ptr(), &mut loaded), CueingStatus::Ok);
        assert_eq!(cueing_model_predict(loaded, img.as_ptr(), 64, 64, b.as_mut_ptr(), 16), CueingStatus::Ok);
        cueing_model_free(loaded);
        cueing_model_free(m);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn errors_carry_codes_and_messages() {
    let m = new_model(16, 64, 64, 0);
    let img = ramp_image(64, 64);
    let mut out = vec![0f32; 9];
    unsafe {
        assert_eq!(cueing_model_predict(m, img.as_ptr(), 64, 64, out.as_mut_ptr(), 9), CueingStatus::Dimension);
        assert!(last_error().contains("16"), "{}", last_error());
        let mut out16 = vec![0f32; 16];
        assert_eq!(cueing_model_predict(m, img.as_ptr(), 32, 32, out16.as_mut_ptr(), 16), CueingStatus::Dimension);
        assert_eq!(cueing_model_predict(ptr::null(), img.as_ptr(), 64, 64, out16.as_mut_ptr(), 16), CueingStatus::NullPointer);
        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(cueing_model_load(missing.as_ptr(), &mut h), CueingStatus::Io);
        assert!(h.is_null());
        assert!(last_error().contains("/nonexistent/model.ckpt"));
        assert_eq!(cueing_model_new(8, 64, 64, 0, &mut h), CueingStatus::Config);
        cueing_model_free(m);
        cueing_model_free(ptr::null_mut());
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ckpt");
    std::fs::write(&p, b"CUEINGCK\x09\x00\x00\x00").unwrap();
    let path = CString::new(p.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cueing_model_load(path.as_ptr(), &mut h) }, CueingStatus::Checkpoint);
}

#[test]
fn upsample_and_metrics() {
    let points = vec![0.25f32; 16];
    let mut map = vec![0f32; 32 * 48];
    unsafe {
        assert_eq!(cueing_upsample(points.as_ptr(), 16, 32, 48, 2.0, map.as_mut_ptr()), CueingStatus::Ok);
        assert_eq!(cueing_upsample(points.as_ptr(), 15, 32, 48, 2.0, map.as_mut_ptr()), CueingStatus::Dimension);
        assert_eq!(cueing_upsample(points.as_ptr(), 16, 32, 48, -1.0, map.as_mut_ptr()), CueingStatus::InvalidArgument);
    }
    assert!(map.iter().all(|&v| (v - 0.25).abs() < 1e-6));

    let gt: Vec<f32> = (0..64).map(|i| ((i * 7) % 11) as f32 / 10.0).collect();
    let (mut kl, mut cc, mut defined) = (f64::NAN, f64::NAN, false);
    unsafe {
        assert_eq!(cueing_pixel_metrics(gt.as_ptr(), gt.as_ptr(), 8, 8, &mut kl, &mut cc, &mut defined), CueingStatus::Ok);
    }
    assert!(kl.abs() <= 1e-6);
    assert!(defined && (cc - 1.0).abs() < 1e-9);
    let flat = vec![0.5f32; 64];
    unsafe {
        assert_eq!(cueing_pixel_metrics(flat.as_ptr(), gt.as_ptr(), 8, 8, &mut kl, &mut cc, &mut defined), CueingStatus::Ok);
    }
    assert!(!defined && cc.is_nan() && kl > 0.0);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/cueing.h")).unwrap();
    for f in [
        "cueing_last_error",
        "cueing_version",
        "cueing_model_new",
        "cueing_model_load",
        "cueing_model_save",
        "cueing_model_free",
        "cueing_model_shape",
        "cueing_model_param_count",
        "cueing_model_predict",
        "cueing_upsample",
        "cueing_pixel_metrics",
        "typedef struct CueingModel CueingModel",
        "CUEING_STATUS_DIMENSION = 5",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "cueing.h"

int main(void) {
    CueingModel *m = NULL;
    if (cueing_model_new(16, 64, 64, 1, &m) != CUEING_STATUS_OK) return 1;
    size_t n = 0;
    if (cueing_model_param_count(m, false, &n) != CUEING_STATUS_OK) return 2;
    static float img[3 * 64 * 64];
    for (int i = 0; i < 3 * 64 * 64; i++) img[i] = (float)(i % 13) / 12.0f;
    float pts[16];
    if (cueing_model_predict(m, img, 64, 64, pts, 16) != CUEING_STATUS_OK) return 3;
    if (cueing_model_predict(m, img, 64, 64, pts, 4) != CUEING_STATUS_DIMENSION) return 4;
    if (cueing_last_error() == NULL) return 5;
    cueing_model_free(m);
    printf("%zu %.6f\n", n, pts[0]);
    return 0;
}
"#;

/// Compile a small C program against the generated header and static library.
#[test]
fn c_program_links_against_header() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libcueing_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    let m = new_model(16, 64, 64, 1);
    let mut n = 0;
    let mut pts = vec![0f32; 16];
    let img: Vec<f32> = (0..3 * 64 * 64).map(|i| (i % 13) as f32 / 12.0).collect();
    unsafe {
        cueing_model_param_count(m, false, &mut n);
        cueing_model_predict(m, img.as_ptr(), 64, 64, pts.as_mut_ptr(), 16);
        cueing_model_free(m);
    }
    assert_eq!(text.trim(), format!("{n} {:.6}", pts[0]));
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc);
        }
    }
    Err(())
}
