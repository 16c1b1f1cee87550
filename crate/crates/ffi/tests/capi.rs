use std::ffi::{CStr, CString};
use std::ptr;

use spoofkit::audio::Waveform;
use spoofkit::detectors::{cm_train_cqcc_gmm, write_cqcc_gmm, CqccGmmConfig};
use spoofkit::enhancer::{build_segan, Enhancer, SeganConfig};
use spoofkit::harness::ExperimentConfig;
use spoofkit_ffi::*;

fn last_error() -> String {
    let p = sk_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tone(freq: f64, noise: f64, seed: u64, rate: u32) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    (0..rate as usize)
        .map(|i| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() + noise * u
        })
        .collect()
}

#[test]
fn eer_matches_the_library_and_reports_errors() {
    let pos = [0.9, 0.8, 0.3];
    let neg = [0.1, 0.2, 0.7];
    let (mut eer, mut thr) = (f64::NAN, f64::NAN);
    let s = unsafe { sk_eer(pos.as_ptr(), 3, neg.as_ptr(), 3, &mut eer, &mut thr) };
    assert_eq!(s, SkStatus::Ok);
    let (e, t) = spoofkit::metrics::eer(&pos, &neg).unwrap();
    assert_eq!((eer, thr), (e, t));

    let s = unsafe { sk_eer(pos.as_ptr(), 3, ptr::null(), 0, &mut eer, ptr::null_mut()) };
    assert_eq!(s, SkStatus::Data);
    assert!(!last_error().is_empty());

    let s = unsafe { sk_eer(ptr::null(), 3, neg.as_ptr(), 3, &mut eer, ptr::null_mut()) };
    assert_eq!(s, SkStatus::InvalidArgument);
    assert!(last_error().contains("positive"));
}

#[test]
fn min_tdcf_hits_the_perfect_and_reject_all_endpoints() {
    let tar_cm = [5.0; 10];
    let tar_asv = [3.0; 10];
    let non_cm = [5.0; 10];
    let non_asv = [-3.0; 10];
    let spf_cm = [-5.0; 10];
    let spf_asv = [3.0; 10];
    let t = SkTrialScores { cm: tar_cm.as_ptr(), asv: tar_asv.as_ptr(), len: 10 };
    let n = SkTrialScores { cm: non_cm.as_ptr(), asv: non_asv.as_ptr(), len: 10 };
    let s = SkTrialScores { cm: spf_cm.as_ptr(), asv: spf_asv.as_ptr(), len: 10 };
    let mut v = f64::NAN;
    let st = unsafe { sk_min_tdcf(t, n, s, ptr::null(), ptr::null(), &mut v) };
    assert_eq!(st, SkStatus::Ok);
    assert!(v.abs() < 1e-12, "{v}");

    let mut bad = sk_tdcf_default_params();
    bad.pi_tar = 0.5;
    let st = unsafe { sk_min_tdcf(t, n, s, &bad, ptr::null(), &mut v) };
    assert_eq!(st, SkStatus::Config);
    assert!(last_error().contains("priors"));
}

#[test]
fn cqcc_gmm_handle_scores_like_the_library() {
    let rate = 16_000;
    let genuine: Vec<Waveform> = (0..3).map(|i| Waveform::new(tone(300.0, 0.01, i, rate), rate).unwrap()).collect();
    let playback: Vec<Waveform> = (0..3).map(|i| Waveform::new(tone(300.0, 0.3, 10 + i, rate), rate).unwrap()).collect();
    let mut cfg: CqccGmmConfig = ExperimentConfig::desk().cqcc_gmm;
    cfg.em.components = 2;
    cfg.em.max_iters = 3;
    let cm = cm_train_cqcc_gmm(&genuine, &playback, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cm.skcm");
    write_cqcc_gmm(&cm, &path).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sk_cqcc_gmm_load(c_path.as_ptr(), &mut h) }, SkStatus::Ok);
    let probe = tone(300.0, 0.05, 99, rate);
    let mut score = f64::NAN;
    let st = unsafe { sk_cqcc_gmm_score(h, probe.as_ptr(), probe.len(), rate, &mut score) };
    assert_eq!(st, SkStatus::Ok);
    assert_eq!(score, cm.score(&Waveform::new(probe.clone(), rate).unwrap()).unwrap());

    let st = unsafe { sk_cqcc_gmm_score(h, probe.as_ptr(), 100, rate, &mut score) };
    assert_eq!(st, SkStatus::Data);
    unsafe { sk_cqcc_gmm_free(h) };

    let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sk_cqcc_gmm_load(missing.as_ptr(), &mut h) }, SkStatus::Data);
    assert!(h.is_null());
    let mut l = ptr::null_mut();
    assert_eq!(unsafe { sk_lcnn_load(missing.as_ptr(), &mut l) }, SkStatus::Data);
    unsafe { sk_lcnn_free(l) };
}

#[test]
fn enhancer_handle_is_shape_preserving_and_seeded() {
    let cfg = SeganConfig {
        chunk_len: 1024,
        hop: 512,
        encoder_depth: 2,
        filter_width: 15,
        channels: vec![2, 4],
        ..SeganConfig::paper()
    };
    let model: Enhancer = build_segan(&cfg, 1).unwrap().into();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.skgn");
    model.save(&path).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sk_enhancer_load(c_path.as_ptr(), &mut h) }, SkStatus::Ok);
    let rate = unsafe { sk_enhancer_sample_rate(h) };
    assert_eq!(rate, cfg.sample_rate);
    let x = tone(200.0, 0.1, 3, rate)[..2500].to_vec();
    let mut a = vec![0.0; x.len()];
    let mut b = vec![0.0; x.len()];
    unsafe {
        assert_eq!(sk_enhancer_enhance(h, x.as_ptr(), x.len(), rate, 7, a.as_mut_ptr()), SkStatus::Ok);
        assert_eq!(sk_enhancer_enhance(h, x.as_ptr(), x.len(), rate, 7, b.as_mut_ptr()), SkStatus::Ok);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite()));
    let st = unsafe { sk_enhancer_enhance(h, x.as_ptr(), x.len(), rate + 1, 7, b.as_mut_ptr()) };
    assert_eq!(st, SkStatus::Data);
    unsafe { sk_enhancer_free(h) };
    assert_eq!(unsafe { sk_enhancer_sample_rate(ptr::null()) }, 0);
}

#[test]
fn run_experiment_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "nonsense = 1\n").unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sk_run_experiment(c.as_ptr(), ptr::null()) }, SkStatus::Config);
    assert_eq!(unsafe { sk_run_experiment(ptr::null(), ptr::null()) }, SkStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/spoofkit.h");
    for name in [
        "sk_last_error_message",
        "sk_version",
        "sk_eer",
        "sk_min_tdcf",
        "sk_tdcf_default_params",
        "sk_cqcc_gmm_load",
        "sk_cqcc_gmm_score",
        "sk_cqcc_gmm_free",
        "sk_lcnn_load",
        "sk_lcnn_score",
        "sk_lcnn_free",
        "sk_enhancer_load",
        "sk_enhancer_sample_rate",
        "sk_enhancer_enhance",
        "sk_enhancer_free",
        "sk_run_experiment",
        "SK_STATUS_DATA = 3",
        "typedef struct SkCqccGmm SkCqccGmm",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let v = unsafe { CStr::from_ptr(sk_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
