use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use infosel_ffi::*;

fn table(ids: &[u64], labels: &[u32], features: &[f32], dim: usize, k: usize, logits: Option<&[f32]>) -> *mut InfoselTable {
    let mut out = ptr::null_mut();
    let status = unsafe {
        infosel_table_new(
            ids.len(),
            dim,
            k,
            ids.as_ptr(),
            labels.as_ptr(),
            features.as_ptr(),
            logits.map_or(ptr::null(), |l| l.as_ptr()),
            &mut out,
        )
    };
    assert_eq!(status, InfoselStatus::Ok);
    out
}

fn last_code() -> String {
    let p = infosel_last_error_code();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn two_clusters() -> *mut InfoselTable {
    table(
        &[5, 1, 3, 0, 4, 2],
        &[0, 0, 0, 1, 1, 1],
        &[0., 0., 1., 0., 4., 0., 10., 10., 11., 10., 14., 10.],
        2,
        2,
        None,
    )
}

#[test]
fn score_select_round_trip() {
    let t = two_clusters();
    unsafe {
        assert_eq!(infosel_table_len(t), 6);
        assert_eq!(infosel_table_dim(t), 2);
        assert_eq!(infosel_table_n_classes(t), 2);
        let mut ids = [0u64; 6];
        assert_eq!(infosel_table_ids(t, ids.as_mut_ptr(), 6), 6);
        assert_eq!(ids, [0, 1, 2, 3, 4, 5]);

        let mut scores = ptr::null_mut();
        assert_eq!(infosel_score(t, ptr::null(), InfoselIndicator::Metric, &mut scores), InfoselStatus::Ok);
        assert_eq!(infosel_scores_len(scores), 6);
        let (mut id, mut label, mut score) = (0u64, 0u32, 0f64);
        assert_eq!(infosel_scores_get(scores, 2, &mut id, &mut label, &mut score), InfoselStatus::Ok);
        // Row 2 is id 2 = (14, 10); class 1 mean is (35/3, 10).
        assert_eq!((id, label), (2, 1));
        assert!((score - (14.0 - 35.0 / 3.0)).abs() < 1e-9);
        assert_eq!(infosel_scores_get(scores, 6, &mut id, &mut label, &mut score), InfoselStatus::Validation);

        let mut plan = ptr::null_mut();
        assert_eq!(
            infosel_select(scores, 2, InfoselScheme::Balanced, InfoselDirection::Goodset, &mut plan),
            InfoselStatus::Ok
        );
        assert_eq!(infosel_plan_ids(plan, ptr::null_mut(), 0), 2);
        let mut picked = [0u64; 2];
        infosel_plan_ids(plan, picked.as_mut_ptr(), 2);
        // Farthest from each class mean: id 3 at (4, 0) and id 2 at (14, 10).
        assert_eq!(picked, [3, 2]);
        infosel_plan_free(plan);
        infosel_scores_free(scores);
        infosel_table_free(t);
    }
}

#[test]
fn errors_carry_codes() {
    let t = two_clusters();
    unsafe {
        let mut scores = ptr::null_mut();
        let s = infosel_score(t, ptr::null(), InfoselIndicator::ProbabilityEntropy, &mut scores);
        assert_eq!(s, InfoselStatus::Validation);
        assert!(scores.is_null());
        assert_eq!(last_code(), "MISSING_LOGITS");

        let missing = CString::new("/nonexistent/dir/x.emb1").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(infosel_table_load(missing.as_ptr(), &mut out), InfoselStatus::Io);
        assert_eq!(last_code(), "IO_ERROR");

        assert_eq!(infosel_table_load(ptr::null(), &mut out), InfoselStatus::NullPointer);
        assert_eq!(last_code(), "NULL_POINTER");

        let mut plan = ptr::null_mut();
        infosel_score(t, ptr::null(), InfoselIndicator::Metric, &mut scores);
        assert_eq!(
            infosel_select(scores, 99, InfoselScheme::Balanced, InfoselDirection::Goodset, &mut plan),
            InfoselStatus::Validation
        );
        assert_eq!(last_code(), "INSUFFICIENT_POOL");

        infosel_scores_free(scores);
        assert_eq!(infosel_score(t, ptr::null(), InfoselIndicator::Metric, &mut scores), InfoselStatus::Ok);
        assert!(infosel_last_error_code().is_null());
        infosel_scores_free(scores);
        infosel_table_free(t);
        infosel_table_free(ptr::null_mut());
    }
}

#[test]
fn save_load_split_eval() {
    let dir = tempfile::tempdir().unwrap();
    let train = two_clusters();
    // Test domain sits at the right edge of each training class.
    let test = table(&[100, 101, 102, 103], &[0, 0, 1, 1], &[4., 0., 4., 0.2, 14., 10., 14., 10.2], 2, 2, None);
    unsafe {
        let path = CString::new(dir.path().join("t.emb1").to_str().unwrap()).unwrap();
        assert_eq!(infosel_table_save(train, path.as_ptr()), InfoselStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(infosel_table_load(path.as_ptr(), &mut loaded), InfoselStatus::Ok);
        assert_eq!(infosel_table_len(loaded), 6);

        let mut split = ptr::null_mut();
        assert_eq!(infosel_split(loaded, test, 1.0 / 3.0, true, &mut split), InfoselStatus::Ok);
        let mut pos = [0u64; 2];
        assert_eq!(infosel_split_positive_ids(split, pos.as_mut_ptr(), 2), 2);
        assert_eq!(pos, [2, 3]);
        assert_eq!(infosel_split_negative_ids(split, ptr::null_mut(), 0), 4);

        let mut cfg = infosel_probe_config_default();
        assert_eq!(cfg.epochs, 200);
        cfg.kind = InfoselProbeKind::NearestPrototype;
        let mut acc = -1.0;
        assert_eq!(infosel_eval(loaded, test, &cfg, &mut acc), InfoselStatus::Ok);
        assert_eq!(acc, 1.0);

        assert_eq!(infosel_split(loaded, test, 0.0, true, &mut split), InfoselStatus::Validation);
        infosel_split_free(split);
        infosel_table_free(loaded);
        infosel_table_free(train);
        infosel_table_free(test);
    }
    let v = unsafe { CStr::from_ptr(infosel_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/infosel.h")).unwrap();
    let source = std::fs::read_to_string(root.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

/// Compiles and runs `tests/smoke.c` against the static library when a C
/// compiler is on PATH.
#[test]
fn c_program_links_and_runs() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libinfosel_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(root.join("include"))
        .arg(root.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke test failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke exited {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.trim(), format!("{} 1 4", env!("CARGO_PKG_VERSION")));
}
