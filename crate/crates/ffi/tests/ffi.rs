use std::ffi::{c_char, CString};
use std::ptr;

use wdm_diffractive_ffi::*;

fn new_model(seed: u64) -> *mut WdmModel {
    let mut m = ptr::null_mut();
    assert_eq!(wdm_model_new(2, 8, 2, 2, ptr::null(), seed, &mut m), WdmStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let len = wdm_last_error_message(ptr::null_mut(), 0);
    let mut buf = vec![0 as c_char; len];
    wdm_last_error_message(buf.as_mut_ptr(), len);
    let bytes: Vec<u8> = buf.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn unit_input(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2 * n];
    v[2 * k] = 1.0;
    v
}

#[test]
fn model_reports_its_shape() {
    let m = new_model(1);
    assert_eq!(wdm_model_n_channels(m), 2);
    assert_eq!(wdm_model_fov_pixels(m), 4);
    wdm_model_free(m);
    assert_eq!(wdm_model_n_channels(ptr::null()), 0);
}

#[test]
fn transform_columns_match_forward_of_unit_inputs() {
    let m = new_model(3);
    let n = wdm_model_fov_pixels(m);
    let mut a = vec![0.0; 2 * n * n];
    assert_eq!(wdm_model_extract_transform(m, 1, a.as_mut_ptr()), WdmStatus::Ok);
    for k in [0, 2, n - 1] {
        let mut out = vec![0.0; 2 * n];
        assert_eq!(
            wdm_model_forward(m, 1, unit_input(n, k).as_ptr(), out.as_mut_ptr()),
            WdmStatus::Ok
        );
        let col = &a[2 * n * k..2 * n * (k + 1)];
        for (x, y) in col.iter().zip(&out) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
    wdm_model_free(m);
}

#[test]
fn metrics_of_identical_matrices() {
    let m = new_model(4);
    let n = wdm_model_fov_pixels(m);
    let mut a = vec![0.0; 2 * n * n];
    wdm_model_extract_transform(m, 0, a.as_mut_ptr());
    let scaled: Vec<f64> = a.iter().map(|x| 3.0 * x).collect();
    let (mut mse, mut cos) = (f64::NAN, f64::NAN);
    assert_eq!(
        wdm_mse_transformation(a.as_ptr(), scaled.as_ptr(), n, n, &mut mse),
        WdmStatus::Ok
    );
    assert_eq!(
        wdm_cosine_similarity(a.as_ptr(), scaled.as_ptr(), n, n, &mut cos),
        WdmStatus::Ok
    );
    assert!(mse < 1e-20, "{mse}");
    assert!((cos - 1.0).abs() < 1e-12, "{cos}");

    let t = unit_input(n, 3);
    let o: Vec<f64> = t.iter().map(|x| 0.25 * x).collect();
    let mut loss = f64::NAN;
    assert_eq!(wdm_channel_loss(t.as_ptr(), o.as_ptr(), n, &mut loss), WdmStatus::Ok);
    assert!(loss.abs() < 1e-15);
    wdm_model_free(m);
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.bin").to_str().unwrap()).unwrap();
    let m = new_model(7);
    assert_eq!(wdm_model_set_bit_depth(m, 4), WdmStatus::Ok);
    assert_eq!(wdm_model_save(m, path.as_ptr()), WdmStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(wdm_model_load(path.as_ptr(), &mut loaded), WdmStatus::Ok);

    let n = wdm_model_fov_pixels(m);
    let input: Vec<f64> = (0..2 * n).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
    let mut x = vec![0.0; 2 * n];
    let mut y = vec![0.0; 2 * n];
    wdm_model_forward(m, 0, input.as_ptr(), x.as_mut_ptr());
    wdm_model_forward(loaded, 0, input.as_ptr(), y.as_mut_ptr());
    assert_eq!(x, y);
    wdm_model_free(m);
    wdm_model_free(loaded);
}

#[test]
fn null_pointers_are_reported() {
    let n = 4;
    let buf = vec![0.0; 2 * n];
    let mut out = vec![0.0; 2 * n];
    assert_eq!(
        wdm_model_forward(ptr::null(), 0, buf.as_ptr(), out.as_mut_ptr()),
        WdmStatus::NullPointer
    );
    assert!(last_error().contains("model"));
    assert_eq!(
        wdm_model_new(2, 8, 2, 2, ptr::null(), 1, ptr::null_mut()),
        WdmStatus::NullPointer
    );
    assert_eq!(
        wdm_model_load(ptr::null(), &mut ptr::null_mut()),
        WdmStatus::NullPointer
    );
    let m = new_model(1);
    assert_eq!(
        wdm_model_forward(m, 0, ptr::null(), out.as_mut_ptr()),
        WdmStatus::NullPointer
    );
    assert!(last_error().contains("input"));
    wdm_model_free(m);
    wdm_model_free(ptr::null_mut());
}

#[test]
fn invalid_arguments_map_to_status_codes() {
    let mut m = ptr::null_mut();
    assert_eq!(wdm_model_new(2, 8, 2, 0, ptr::null(), 1, &mut m), WdmStatus::Config);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    let m = new_model(2);
    assert_eq!(wdm_model_set_bit_depth(m, 40), WdmStatus::InvalidArgument);
    let n = wdm_model_fov_pixels(m);
    let input = unit_input(n, 0);
    let mut out = vec![0.0; 2 * n];
    assert_eq!(
        wdm_model_forward(m, 9, input.as_ptr(), out.as_mut_ptr()),
        WdmStatus::InvalidArgument
    );

    let zero = vec![0.0; 2 * n * n];
    let mut cos = 0.0;
    assert_eq!(
        wdm_cosine_similarity(zero.as_ptr(), zero.as_ptr(), n, n, &mut cos),
        WdmStatus::Numerical
    );

    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("absent.bin").to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(wdm_model_load(missing.as_ptr(), &mut h), WdmStatus::Io);
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(wdm_model_load(junk.as_ptr(), &mut h), WdmStatus::Format);
    wdm_model_free(m);
}

#[test]
fn explicit_wavelengths_are_used() {
    let wl = [0.9, 1.1];
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    assert_eq!(wdm_model_new(2, 8, 2, 2, wl.as_ptr(), 5, &mut a), WdmStatus::Ok);
    assert_eq!(wdm_model_new(2, 8, 2, 2, ptr::null(), 5, &mut b), WdmStatus::Ok);
    let n = wdm_model_fov_pixels(a);
    let input = unit_input(n, 1);
    let mut x = vec![0.0; 2 * n];
    let mut y = vec![0.0; 2 * n];
    wdm_model_forward(a, 0, input.as_ptr(), x.as_mut_ptr());
    wdm_model_forward(b, 0, input.as_ptr(), y.as_mut_ptr());
    assert_ne!(x, y);
    wdm_model_free(a);
    wdm_model_free(b);
}

#[test]
fn truncated_error_buffer_is_terminated() {
    wdm_model_forward(ptr::null(), 0, ptr::null(), ptr::null_mut());
    let full = wdm_last_error_message(ptr::null_mut(), 0);
    let mut buf = [1 as c_char; 4];
    assert_eq!(wdm_last_error_message(buf.as_mut_ptr(), buf.len()), full);
    assert_eq!(buf[3], 0);
}

#[test]
fn header_declares_the_surface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/wdm_diffractive.h")).unwrap();
    for name in [
        "WDM_STATUS_OK",
        "typedef struct WdmModel WdmModel",
        "wdm_model_new",
        "wdm_model_free",
        "wdm_model_forward",
        "wdm_model_extract_transform",
        "wdm_last_error_message",
        "wdm_cosine_similarity",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
