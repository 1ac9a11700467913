use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use fnode_ffi::*;

const TINY: &str = "seed = 3
latent_dim = 2
gamma_dim = 2
field_hidden = 8
hyper_hidden = 8
z0_encoder_hidden = 8
gamma_encoder_hidden = 8
decoder_hidden = 8
epochs = 2
batch_size = 8
kl_anneal_epochs = 1
gmm_components = 1..2
gmm_cov_types = diag,full
gmm_n_gamma = 1
gmm_max_iter = 20
";

fn last_error() -> String {
    let p = fnode_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn dataset() -> *mut FnodeDataset {
    let mut d = ptr::null_mut();
    let st = unsafe { fnode_dataset_generate(0, 4, 3, 6, 11, &mut d) };
    assert_eq!(st, FnodeStatus::Ok);
    d
}

fn trained(d: *const FnodeDataset) -> *mut FnodeModel {
    let cfg = CString::new(TINY).unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { fnode_train(d, cfg.as_ptr(), &mut m) };
    assert_eq!(st, FnodeStatus::Ok, "{}", last_error());
    m
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(fnode_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dataset_round_trip_through_a_file() {
    let d = dataset();
    assert_eq!(unsafe { fnode_dataset_len(d) }, 12);
    let mut n = 0;
    assert_eq!(unsafe { fnode_dataset_trajectory_len(d, 0, &mut n) }, FnodeStatus::Ok);
    assert_eq!(n, 6);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("d.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fnode_dataset_save(d, path.as_ptr()) }, FnodeStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { fnode_dataset_load(path.as_ptr(), &mut back) }, FnodeStatus::Ok);
    assert_eq!(unsafe { fnode_dataset_len(back) }, 12);
    unsafe {
        fnode_dataset_free(d);
        fnode_dataset_free(back);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut d = ptr::null_mut();
    assert_eq!(
        unsafe { fnode_dataset_generate(7, 4, 3, 6, 0, &mut d) },
        FnodeStatus::InvalidArgument
    );
    assert!(last_error().contains("unknown set"));
    assert!(d.is_null());

    assert_eq!(
        unsafe { fnode_dataset_load(ptr::null(), &mut d) },
        FnodeStatus::NullPointer
    );

    let bad = CString::new("not a dataset").unwrap();
    assert_eq!(unsafe { fnode_dataset_parse(bad.as_ptr(), &mut d) }, FnodeStatus::Parse);

    let missing = CString::new("/nonexistent/fnode/model.json").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { fnode_model_load(missing.as_ptr(), &mut m) }, FnodeStatus::Io);

    let d = dataset();
    let mut n = 0;
    assert_eq!(
        unsafe { fnode_dataset_trajectory_len(d, 99, &mut n) },
        FnodeStatus::InvalidArgument
    );
    let cfg = CString::new("no_such_key = 1").unwrap();
    assert_eq!(unsafe { fnode_train(d, cfg.as_ptr(), &mut m) }, FnodeStatus::Parse);
    unsafe { fnode_dataset_free(d) };
    // Null handles are tolerated by the infallible accessors.
    unsafe {
        fnode_dataset_free(ptr::null_mut());
        fnode_model_free(ptr::null_mut());
        assert_eq!(fnode_dataset_len(ptr::null()), 0);
        assert_eq!(fnode_model_has_mixture(ptr::null()), 0);
    }
}

#[test]
fn train_sample_score_and_band() {
    let d = dataset();
    let m = trained(d);
    let (mut p, mut g, mut o) = (0, 0, 0);
    assert_eq!(unsafe { fnode_model_dims(m, &mut p, &mut g, &mut o) }, FnodeStatus::Ok);
    assert_eq!((p, g, o), (2, 2, 1));
    assert_eq!(unsafe { fnode_model_has_mixture(m) }, 1);

    let mut gamma = [0.0; 2];
    assert_eq!(
        unsafe { fnode_encode_gamma(m, d, 0, gamma.as_mut_ptr(), 2) },
        FnodeStatus::Ok
    );
    assert!(gamma.iter().all(|v| v.is_finite()));
    assert_eq!(
        unsafe { fnode_encode_gamma(m, d, 0, gamma.as_mut_ptr(), 1) },
        FnodeStatus::BufferTooSmall
    );

    let times = [0.25, 0.5, 1.0];
    let mut out = vec![f64::NAN; 3 * 4];
    let st = unsafe { fnode_sample(m, d, 1, times.as_ptr(), 3, 4, 5, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, FnodeStatus::Ok, "{}", last_error());
    assert!(out.iter().all(|v| v.is_finite()));
    let mut again = vec![0.0; 12];
    unsafe { fnode_sample(m, d, 1, times.as_ptr(), 3, 4, 5, again.as_mut_ptr(), 12) };
    assert_eq!(out, again);

    let unsorted = [1.0, 0.5];
    let st = unsafe { fnode_sample(m, d, 1, unsorted.as_ptr(), 2, 1, 5, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, FnodeStatus::InvalidArgument);

    let mut score = f64::NAN;
    assert_eq!(unsafe { fnode_ood_score(m, d, 2, 4, 0, &mut score) }, FnodeStatus::Ok);
    assert!(score.is_finite());

    let (mut lo, mut mean, mut hi) = ([0.0; 3], [0.0; 3], [0.0; 3]);
    let st = unsafe {
        fnode_credible_band(
            m,
            d,
            0,
            times.as_ptr(),
            3,
            40,
            0.9,
            1,
            lo.as_mut_ptr(),
            mean.as_mut_ptr(),
            hi.as_mut_ptr(),
            3,
        )
    };
    assert_eq!(st, FnodeStatus::Ok, "{}", last_error());
    for i in 0..3 {
        assert!(lo[i] <= mean[i] && mean[i] <= hi[i]);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fnode_model_save(m, path.as_ptr()) }, FnodeStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { fnode_model_load(path.as_ptr(), &mut back) }, FnodeStatus::Ok);
    let mut gamma2 = [0.0; 2];
    unsafe { fnode_encode_gamma(back, d, 0, gamma2.as_mut_ptr(), 2) };
    assert_eq!(gamma, gamma2);
    unsafe {
        fnode_model_free(m);
        fnode_model_free(back);
        fnode_dataset_free(d);
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let src = "#include \"fnode.h\"\nint main(void) { return fnode_version() == 0; }\n";
    let dir = tempfile::tempdir().unwrap();
    for (file, compiler) in [("t.c", "cc"), ("t.cpp", "c++")] {
        let path = dir.path().join(file);
        std::fs::write(&path, src).unwrap();
        let status = match Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-I", include])
            .arg(&path)
            .status()
        {
            Ok(s) => s,
            Err(_) => {
                eprintln!("{compiler} not available; skipping");
                continue;
            }
        };
        assert!(status.success(), "{compiler} rejected the header");
    }
}
