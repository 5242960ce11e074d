use std::ffi::{CStr, CString};
use std::ptr;

use descpress_ffi::*;

fn last_error() -> String {
    let p = dp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Three classes of two rows each, with a clear class structure.
fn small_set() -> *mut DpDescriptors {
    let rows: Vec<f64> = (0..6)
        .flat_map(|i| {
            let c = (i / 2) as f64;
            [c, 1.0 - c, 0.1 * (i % 2) as f64, 0.5]
        })
        .collect();
    let labels = [0u32, 0, 1, 1, 2, 2];
    let seqs = [0u32, 1, 0, 1, 0, 1];
    let mut out = ptr::null_mut();
    let s = unsafe { dp_descriptors_from_rows(rows.as_ptr(), 6, 4, labels.as_ptr(), seqs.as_ptr(), &mut out) };
    assert_eq!(s, DpStatus::Ok);
    out
}

#[test]
fn descriptor_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("d.ddr").to_str().unwrap()).unwrap();
    let set = small_set();
    unsafe {
        assert_eq!(dp_descriptors_save(set, path.as_ptr(), DpPrecision::F64), DpStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(dp_descriptors_load(path.as_ptr(), &mut back), DpStatus::Ok);
        assert_eq!((dp_descriptors_len(back), dp_descriptors_dim(back)), (6, 4));
        let mut a = vec![0.0; 24];
        let mut b = vec![0.0; 24];
        assert_eq!(dp_descriptors_copy(set, a.as_mut_ptr(), 24), DpStatus::Ok);
        assert_eq!(dp_descriptors_copy(back, b.as_mut_ptr(), 24), DpStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(dp_descriptors_copy(back, b.as_mut_ptr(), 23), DpStatus::Shape);
        dp_descriptors_free(back);
        dp_descriptors_free(set);
    }
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(dp_descriptors_load(ptr::null(), &mut out), DpStatus::InvalidArgument);
        assert!(out.is_null());
        assert!(last_error().contains("path"));
        assert_eq!(dp_descriptors_len(ptr::null()), 0);
        dp_descriptors_free(ptr::null_mut());
        dp_encoder_free(ptr::null_mut());
        dp_pca_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.dnn").to_str().unwrap()).unwrap();
    let garbage_path = dir.path().join("bad.dnn");
    std::fs::write(&garbage_path, b"XXXX1234").unwrap();
    let garbage = CString::new(garbage_path.to_str().unwrap()).unwrap();
    let set = small_set();
    unsafe {
        let mut enc = ptr::null_mut();
        assert_eq!(dp_encoder_load(missing.as_ptr(), &mut enc), DpStatus::Io);
        assert_eq!(dp_encoder_load(garbage.as_ptr(), &mut enc), DpStatus::Format);
        assert!(last_error().contains("byte 0"));
        assert!(enc.is_null());
        let mut pca = ptr::null_mut();
        assert_eq!(dp_pca_fit(set, 5, &mut pca), DpStatus::Config);
        let scheme = CString::new("xx").unwrap();
        assert_eq!(dp_train(set, scheme.as_ptr(), 2, ptr::null(), &mut enc), DpStatus::Config);
        dp_descriptors_free(set);
    }
}

#[test]
fn train_reduce_and_project() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = CString::new(dir.path().join("m.dnn").to_str().unwrap()).unwrap();
    let set = small_set();
    let scheme = CString::new("sv").unwrap();
    let config = CString::new("# tiny\nepochs=2\nbatch_size=3\nhidden=8\nseed=5\n").unwrap();
    unsafe {
        let mut enc = ptr::null_mut();
        let s = dp_train(set, scheme.as_ptr(), 2, config.as_ptr(), &mut enc);
        assert_eq!(s, DpStatus::Ok, "{}", last_error());
        assert_eq!((dp_encoder_input_dim(enc), dp_encoder_output_dim(enc)), (4, 2));

        let mut reduced = ptr::null_mut();
        assert_eq!(dp_encoder_reduce(enc, set, &mut reduced), DpStatus::Ok);
        let mut exact = vec![0.0; 12];
        assert_eq!(dp_descriptors_copy(reduced, exact.as_mut_ptr(), 12), DpStatus::Ok);

        let mut x = vec![0.0; 24];
        dp_descriptors_copy(set, x.as_mut_ptr(), 24);
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let mut yf = vec![0f32; 12];
        assert_eq!(dp_encoder_project_f32(enc, xf.as_ptr(), 6, yf.as_mut_ptr()), DpStatus::Ok);
        for (a, b) in exact.iter().zip(&yf) {
            assert!((a - *b as f64).abs() < 1e-4, "{a} vs {b}");
        }

        assert_eq!(dp_encoder_save(enc, model_path.as_ptr()), DpStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(dp_encoder_load(model_path.as_ptr(), &mut loaded), DpStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(dp_encoder_reduce(loaded, set, &mut again), DpStatus::Ok);
        let mut exact2 = vec![0.0; 12];
        dp_descriptors_copy(again, exact2.as_mut_ptr(), 12);
        assert_eq!(exact, exact2);

        let mut map = -1.0;
        assert_eq!(dp_evaluate(reduced, DpTask::Retrieval, 0, &mut map), DpStatus::Ok);
        assert!((0.0..=1.0).contains(&map));

        dp_descriptors_free(again);
        dp_encoder_free(loaded);
        dp_descriptors_free(reduced);
        dp_encoder_free(enc);
        dp_descriptors_free(set);
    }
}

#[test]
fn pca_save_load_reduce() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("p.dpc").to_str().unwrap()).unwrap();
    let set = small_set();
    unsafe {
        let mut pca = ptr::null_mut();
        assert_eq!(dp_pca_fit(set, 2, &mut pca), DpStatus::Ok);
        assert_eq!(dp_pca_save(pca, path.as_ptr()), DpStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(dp_pca_load(path.as_ptr(), &mut loaded), DpStatus::Ok);
        let (mut r1, mut r2) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(dp_pca_reduce(pca, set, &mut r1), DpStatus::Ok);
        assert_eq!(dp_pca_reduce(loaded, set, &mut r2), DpStatus::Ok);
        let (mut a, mut b) = (vec![0.0; 12], vec![0.0; 12]);
        dp_descriptors_copy(r1, a.as_mut_ptr(), 12);
        dp_descriptors_copy(r2, b.as_mut_ptr(), 12);
        assert_eq!(a, b);
        for row in a.chunks(2) {
            let n = (row[0] * row[0] + row[1] * row[1]).sqrt();
            assert!((n - 1.0).abs() < 1e-9 || n == 0.0);
        }
        dp_descriptors_free(r1);
        dp_descriptors_free(r2);
        dp_pca_free(loaded);
        dp_pca_free(pca);
        dp_descriptors_free(set);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(dp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
