use std::ffi::{CStr, CString};
use std::ptr;

use owrlab_ffi::*;

const SMALL: &str = r#"
seeds = [4]

[benchmark]
num_classes = 12
instances_per_class = 3
samples_per_instance = 4

[schedule]
known_fraction = 0.5
base_count = 4
step_size = 2
test_domains = [0, 2]

[[methods]]
variant = "bdoc"
epochs_base = 2
epochs_incremental = 1
tau_epochs = 5
"#;

fn config(text: &str) -> *mut OwrlabConfig {
    let c = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { owrlab_config_from_toml(c.as_ptr(), &mut cfg) }, OwrlabStatus::Ok);
    assert!(!cfg.is_null());
    cfg
}

fn last_error() -> String {
    let p = owrlab_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(owrlab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { owrlab_config_from_toml(ptr::null(), &mut cfg) }, OwrlabStatus::InvalidArgument);
    assert!(last_error().contains("null"));
    assert_eq!(unsafe { owrlab_config_validate(ptr::null()) }, OwrlabStatus::InvalidArgument);
    unsafe {
        owrlab_config_free(ptr::null_mut());
        owrlab_run_free(ptr::null_mut());
        owrlab_model_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_status_codes() {
    let bad = CString::new("seeds = \"x\"").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { owrlab_config_from_toml(bad.as_ptr(), &mut cfg) }, OwrlabStatus::Parse);
    assert!(cfg.is_null());
    assert!(last_error().contains("seeds"));

    let missing = CString::new("/nonexistent/owrlab.toml").unwrap();
    assert_eq!(unsafe { owrlab_config_load(missing.as_ptr(), &mut cfg) }, OwrlabStatus::Io);

    let cfg = config(SMALL);
    assert_eq!(unsafe { owrlab_config_set_seeds(cfg, ptr::null(), 0) }, OwrlabStatus::Ok);
    assert_eq!(unsafe { owrlab_config_validate(cfg) }, OwrlabStatus::Config);
    assert!(last_error().contains("seeds"));
    unsafe { owrlab_config_free(cfg) };
}

#[test]
fn success_clears_the_last_error() {
    let mut cfg = ptr::null_mut();
    unsafe { owrlab_config_from_toml(ptr::null(), &mut cfg) };
    assert!(!owrlab_last_error().is_null());
    let cfg = config(SMALL);
    assert!(owrlab_last_error().is_null());
    unsafe { owrlab_config_free(cfg) };
}

#[test]
fn run_exposes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(SMALL);
    let out_dir = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(owrlab_config_set_output_dir(cfg, out_dir.as_ptr()), OwrlabStatus::Ok);
        let mut run = ptr::null_mut();
        assert_eq!(owrlab_run(cfg, 1, &mut run), OwrlabStatus::Ok, "{}", last_error());
        // two test domains, two steps
        assert_eq!(owrlab_run_row_count(run), 4);
        let mut row = OwrlabRow::default();
        assert_eq!(owrlab_run_get_row(run, cfg, 3, &mut row), OwrlabStatus::Ok);
        assert_eq!((row.test_domain, row.seed, row.step), (2, 4, 1));
        assert!((0.0..=1.0).contains(&row.owr_h));
        assert_eq!(owrlab_run_get_row(run, cfg, 4, &mut row), OwrlabStatus::InvalidArgument);
        let path = CStr::from_ptr(owrlab_run_results_path(run)).to_str().unwrap();
        assert!(std::path::Path::new(path).exists());
        owrlab_run_free(run);
        owrlab_config_free(cfg);
    }
}

#[test]
fn trained_model_classifies() {
    let cfg = config(SMALL);
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(owrlab_model_train(cfg, 0, 0, 4, &mut model), OwrlabStatus::Ok, "{}", last_error());
        let n = owrlab_model_input_len(model);
        let px = vec![0.5f32; 3 * n];
        let mut labels = [i64::MIN; 3];
        assert_eq!(owrlab_model_classify(model, px.as_ptr(), 3, 0, labels.as_mut_ptr()), OwrlabStatus::Ok);
        assert!(labels.iter().all(|&l| (0..12).contains(&l)), "{labels:?}");
        assert_eq!(labels[0], labels[1]);
        assert_eq!(
            owrlab_model_classify(model, ptr::null(), 1, 0, labels.as_mut_ptr()),
            OwrlabStatus::InvalidArgument
        );
        owrlab_model_free(model);
        owrlab_config_free(cfg);
    }
}

#[test]
fn selftest_reports_no_failures() {
    let mut failed = u32::MAX;
    assert_eq!(unsafe { owrlab_selftest(&mut failed) }, OwrlabStatus::Ok);
    assert_eq!(failed, 0);
}
