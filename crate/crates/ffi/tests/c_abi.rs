use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use fluxrnn::checkpoint::{save_checkpoint, CheckpointFile};
use fluxrnn::features::Standardizer;
use fluxrnn::rnn::{init_params, predict, Architecture, CellType};
use fluxrnn_ffi::*;

const WINDOW: usize = 12;
const N_FEATURES: usize = 3;

fn checkpoint() -> CheckpointFile {
    let arch = Architecture::new(CellType::Gru, vec![6, 4]);
    CheckpointFile {
        params: init_params(&arch, N_FEATURES, 31).unwrap(),
        window: WINDOW,
        feature_names: vec!["RAD".into(), "PC1".into(), "MOD11A1_dt".into()],
        pca: None,
        standardizer: Some(Standardizer { means: vec![150.0, 0.0, 12.0], scales: vec![80.0, 1.5, 6.0] }),
        monitored_score: 0.1,
        epoch: 9,
    }
}

fn saved(dir: &tempfile::TempDir) -> (CString, CheckpointFile) {
    let path = dir.path().join("m.ckpt");
    let ck = checkpoint();
    save_checkpoint(&path, &ck).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), ck)
}

fn raw_window(offset: usize) -> Vec<f64> {
    (0..WINDOW * N_FEATURES)
        .map(|i| match i % N_FEATURES {
            0 => 150.0 + 60.0 * ((i + offset) as f64 * 0.2).sin(),
            1 => ((i + offset) as f64 * 0.7).cos(),
            _ => 12.0 + 4.0 * ((i + offset) as f64 * 0.1).sin(),
        })
        .collect()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(flux_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn load_predict_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ck) = saved(&dir);
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(flux_model_load(path.as_ptr(), &mut model), FluxStatus::Ok, "{}", last_error());
        assert_eq!(flux_model_window(model), WINDOW);
        assert_eq!(flux_model_n_features(model), N_FEATURES);
        assert_eq!(CStr::from_ptr(flux_model_feature_name(model, 2)).to_str().unwrap(), "MOD11A1_dt");
        assert!(flux_model_feature_name(model, 3).is_null());

        let x = raw_window(0);
        let mut got = 0.0;
        assert_eq!(flux_model_predict(model, x.as_ptr(), x.len(), &mut got), FluxStatus::Ok);
        let mut z = x.clone();
        ck.standardizer.as_ref().unwrap().apply_window(&mut z);
        assert_eq!(got.to_bits(), predict(&ck.params, &z).unwrap().to_bits());

        let batch: Vec<f64> = (0..3).flat_map(raw_window).collect();
        let mut out = [0.0; 3];
        assert_eq!(flux_model_predict_batch(model, batch.as_ptr(), batch.len(), out.as_mut_ptr(), 3), FluxStatus::Ok);
        assert_eq!(out[0].to_bits(), got.to_bits());
        for (k, o) in out.iter().enumerate() {
            let mut one = 0.0;
            let w = raw_window(k);
            flux_model_predict(model, w.as_ptr(), w.len(), &mut one);
            assert_eq!(o.to_bits(), one.to_bits());
        }

        assert_eq!(flux_model_predict(model, x.as_ptr(), x.len() - 1, &mut got), FluxStatus::InvalidArgument);
        assert!(last_error().contains("length mismatch"));
        assert_eq!(flux_model_predict(model, ptr::null(), x.len(), &mut got), FluxStatus::NullPointer);
        assert_eq!(flux_model_predict(ptr::null(), x.as_ptr(), x.len(), &mut got), FluxStatus::NullPointer);
        flux_model_free(model);
        flux_model_free(ptr::null_mut());
    }
}

#[test]
fn load_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(flux_model_load(missing.as_ptr(), &mut model), FluxStatus::Io);
        assert!(model.is_null());
        assert!(!last_error().is_empty());

        let (path, _) = saved(&dir);
        let p = Path::new(path.to_str().unwrap());
        let bytes = std::fs::read(p).unwrap();
        std::fs::write(p, &bytes[..bytes.len() / 2]).unwrap();
        assert_eq!(flux_model_load(path.as_ptr(), &mut model), FluxStatus::BadCheckpoint);
        assert_eq!(last_error(), "checkpoint file is truncated");
        std::fs::write(p, b"FLUXRNN9").unwrap();
        assert_eq!(flux_model_load(path.as_ptr(), &mut model), FluxStatus::BadCheckpoint);
        assert!(model.is_null());

        assert_eq!(flux_model_load(ptr::null(), &mut model), FluxStatus::NullPointer);
        assert_eq!(flux_model_load(path.as_ptr(), ptr::null_mut()), FluxStatus::NullPointer);
        assert_eq!(flux_model_window(ptr::null()), 0);
    }
}

#[test]
fn error_message_clears_on_success() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(flux_nrmse([1.0].as_ptr(), [1.0].as_ptr(), 1, &mut v), FluxStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        assert_eq!(flux_nrmse([1.0, 2.0].as_ptr(), [1.0, 3.0].as_ptr(), 2, &mut v), FluxStatus::Ok);
        assert_eq!(last_error(), "");
    }
}

#[test]
fn nrmse_values() {
    let preds = [1.0, 2.0, 3.0, 5.0];
    let obs = [1.0, 2.0, 4.0, 5.0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(flux_nrmse(preds.as_ptr(), obs.as_ptr(), 4, &mut v), FluxStatus::Ok);
        assert!((v - 0.5 / 4.0).abs() < 1e-15);
        assert_eq!(flux_nrmse(preds.as_ptr(), [2.0; 4].as_ptr(), 4, &mut v), FluxStatus::ZeroRange);
        assert_eq!(flux_nrmse(preds.as_ptr(), obs.as_ptr(), 4, ptr::null_mut()), FluxStatus::NullPointer);
    }
}

#[test]
fn clearsky_values() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(flux_clearsky_mean(0.0, 80, 0.75, &mut v), FluxStatus::Ok);
        assert!(v > 300.0 && v < 330.0, "{v}");
        assert_eq!(flux_clearsky_mean(80.0, 355, 0.75, &mut v), FluxStatus::Ok);
        assert_eq!(v, 0.0);
        assert_eq!(flux_clearsky_mean(51.0, 366, 0.75, &mut v), FluxStatus::Ok);
        assert_eq!(flux_clearsky_mean(51.0, 0, 0.75, &mut v), FluxStatus::InvalidArgument);
        assert_eq!(flux_clearsky_mean(51.0, 367, 0.75, &mut v), FluxStatus::InvalidArgument);
        assert_eq!(flux_clearsky_mean(95.0, 100, 0.75, &mut v), FluxStatus::InvalidArgument);
        assert_eq!(flux_clearsky_mean(51.0, 100, 0.0, &mut v), FluxStatus::InvalidArgument);
    }
}

#[test]
fn flag_extremes_runs_and_missing_days() {
    // 30 days: a run of 6 deep negatives, a run of 3, and a NaN splitting a
    // second run of 6 into 3 + 2.
    let mut a = vec![0.5; 30];
    for v in &mut a[2..8] {
        *v = -3.0;
    }
    for v in &mut a[12..15] {
        *v = -3.0;
    }
    for v in &mut a[20..26] {
        *v = -3.0;
    }
    a[23] = f64::NAN;
    let mut flags = vec![9u8; 30];
    let mut threshold = 0.0;
    unsafe {
        let st =
            flux_flag_extremes(a.as_ptr(), a.len(), 0.48, 3, FluxTail::Full as u32, flags.as_mut_ptr(), &mut threshold);
        assert_eq!(st, FluxStatus::Ok, "{}", last_error());
    }
    let on: Vec<usize> = (0..30).filter(|&i| flags[i] == 1).collect();
    assert_eq!(on, vec![2, 3, 4, 5, 6, 7, 12, 13, 14, 20, 21, 22]);
    assert!(flags.iter().all(|&f| f <= 1));
    // 14 of 29 present values sit at -3; the 0.48 quantile lies between the levels.
    assert!((threshold - (-3.0 + 0.44 * 3.5)).abs() < 1e-12, "{threshold}");

    unsafe {
        let st = flux_flag_extremes(a.as_ptr(), a.len(), 0.48, 3, 7, flags.as_mut_ptr(), ptr::null_mut());
        assert_eq!(st, FluxStatus::InvalidArgument);
        let st = flux_flag_extremes(a.as_ptr(), 9, 0.1, 3, 0, flags.as_mut_ptr(), ptr::null_mut());
        assert_eq!(st, FluxStatus::InsufficientData);
        let st = flux_flag_extremes(a.as_ptr(), a.len(), 0.5, 3, 0, flags.as_mut_ptr(), ptr::null_mut());
        assert_eq!(st, FluxStatus::InvalidArgument);
    }
}

#[test]
fn negative_only_without_negatives_has_no_threshold() {
    let a = [1.0; 20];
    let mut flags = vec![1u8; 20];
    let mut threshold = 0.0;
    unsafe {
        let st = flux_flag_extremes(
            a.as_ptr(),
            a.len(),
            0.1,
            5,
            FluxTail::NegativeOnly as u32,
            flags.as_mut_ptr(),
            &mut threshold,
        );
        assert_eq!(st, FluxStatus::Ok);
    }
    assert!(flags.iter().all(|&f| f == 0));
    assert!(threshold.is_nan());
}

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_the_exported_symbols() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fluxrnn.h")).unwrap();
    for name in [
        "typedef struct FluxModel FluxModel;",
        "FLUX_STATUS_OK = 0",
        "FLUX_STATUS_PANIC = 10",
        "FLUX_TAIL_NEGATIVE_ONLY = 1",
        "flux_last_error_message(void)",
        "flux_model_load(const char *path, struct FluxModel **out)",
        "void flux_model_free(struct FluxModel *model)",
        "flux_model_predict_batch(",
        "flux_clearsky_mean(",
        "flux_nrmse(",
        "flux_flag_extremes(",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_against_static_library() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler found; skipping");
        return;
    }
    // `cargo test` only builds the rlib; produce the archive explicitly.
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let build = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "--lib", "--manifest-path"])
        .arg(manifest.join("Cargo.toml"))
        .env("CARGO_TARGET_DIR", target_dir().parent().unwrap())
        .status()
        .unwrap();
    assert!(build.success());
    let lib = target_dir().join("libfluxrnn_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());

    let (path, ck) = saved(&dir);
    let out = Command::new(&exe).arg(path.to_str().unwrap()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let (name, value) = text.trim().split_once(' ').unwrap();
    assert_eq!(name, "RAD");
    let mut x: Vec<f64> = (0..WINDOW * N_FEATURES).map(|i| (0.1 * i as f64).sin()).collect();
    ck.standardizer.as_ref().unwrap().apply_window(&mut x);
    let want = predict(&ck.params, &x).unwrap();
    assert_eq!(value.parse::<f64>().unwrap().to_bits(), want.to_bits());
}
