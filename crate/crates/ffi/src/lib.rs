//! C ABI over spoofkit.
//!
//! Every fallible function returns an [`SkStatus`]; on failure the message
//! is available from [`sk_last_error_message`] on the same thread. Model
//! handles are opaque and must be released with their `_free` function.
//! Sample buffers are mono `double` arrays in [-1, 1].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use spoofkit::audio::Waveform;
use spoofkit::detectors::{read_cqcc_gmm, CqccGmmCm, LcnnCm};
use spoofkit::enhancer::{enhance, Enhancer};
use spoofkit::harness::{run_all, ExperimentConfig};
use spoofkit::metrics::{self, TdcfParams, TrialClass, TrialScoreSet};
use spoofkit::Error;

/// Result code of every fallible call. The numeric values of the error
/// classes match the exit codes of the command-line tool.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkStatus {
    Ok = 0,
    /// A null pointer, empty buffer or invalid UTF-8 string was passed.
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    /// The library panicked; the handle involved should be discarded.
    Internal = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SkStatus, msg: impl Into<String>) -> SkStatus {
    set_last_error(msg.into());
    status
}

fn from_error(e: Error) -> SkStatus {
    let status = match e.exit_code() {
        2 => SkStatus::Config,
        3 => SkStatus::Data,
        _ => SkStatus::Numeric,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), SkStatus>) -> SkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SkStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(SkStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, SkStatus>;
}

impl<T> OrStatus<T> for spoofkit::Result<T> {
    fn or_status(self) -> Result<T, SkStatus> {
        self.map_err(from_error)
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, SkStatus> {
    if p.is_null() {
        return Err(fail(SkStatus::InvalidArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(SkStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], SkStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SkStatus::InvalidArgument, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SkStatus> {
    p.as_mut()
        .ok_or_else(|| fail(SkStatus::InvalidArgument, format!("{what} is null")))
}

unsafe fn waveform_arg(samples: *const f64, n: usize, sample_rate: u32) -> Result<Waveform, SkStatus> {
    let s = slice_arg(samples, n, "samples")?;
    Waveform::new(s.to_vec(), sample_rate).or_status()
}

fn boxed<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Equal error rate of positive (bona fide) against negative scores.
///
/// # Safety
/// `positive` and `negative` must point to `n_positive` and `n_negative`
/// readable doubles; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sk_eer(
    positive: *const f64,
    n_positive: usize,
    negative: *const f64,
    n_negative: usize,
    out_eer: *mut f64,
    out_threshold: *mut f64,
) -> SkStatus {
    guard(|| {
        let pos = slice_arg(positive, n_positive, "positive")?;
        let neg = slice_arg(negative, n_negative, "negative")?;
        let out_eer = out_arg(out_eer, "out_eer")?;
        let (eer, thr) = metrics::eer(pos, neg).or_status()?;
        *out_eer = eer;
        if let Some(t) = out_threshold.as_mut() {
            *t = thr;
        }
        Ok(())
    })
}

/// Costs and priors of the tandem detection cost function.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SkTdcfParams {
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_fa_cm: f64,
    pub c_miss_cm: f64,
    pub pi_tar: f64,
    pub pi_non: f64,
    pub pi_spoof: f64,
}

impl From<SkTdcfParams> for TdcfParams {
    fn from(p: SkTdcfParams) -> Self {
        TdcfParams {
            c_miss_asv: p.c_miss_asv,
            c_fa_asv: p.c_fa_asv,
            c_fa_cm: p.c_fa_cm,
            c_miss_cm: p.c_miss_cm,
            pi_tar: p.pi_tar,
            pi_non: p.pi_non,
            pi_spoof: p.pi_spoof,
        }
    }
}

/// The default costs and priors.
#[no_mangle]
pub extern "C" fn sk_tdcf_default_params() -> SkTdcfParams {
    let d = TdcfParams::default();
    SkTdcfParams {
        c_miss_asv: d.c_miss_asv,
        c_fa_asv: d.c_fa_asv,
        c_fa_cm: d.c_fa_cm,
        c_miss_cm: d.c_miss_cm,
        pi_tar: d.pi_tar,
        pi_non: d.pi_non,
        pi_spoof: d.pi_spoof,
    }
}

/// Scores of one trial class: CM and ASV score per trial. `asv` may be null
/// for nontarget trials only.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SkTrialScores {
    pub cm: *const f64,
    pub asv: *const f64,
    pub len: usize,
}

unsafe fn push_class(set: &mut TrialScoreSet, class: TrialClass, t: &SkTrialScores) -> Result<(), SkStatus> {
    let cm = slice_arg(t.cm, t.len, "cm scores")?;
    let asv = if t.asv.is_null() && class == TrialClass::Nontarget {
        None
    } else {
        Some(slice_arg(t.asv, t.len, "asv scores")?)
    };
    for (i, c) in cm.iter().enumerate() {
        set.push(format!("{class}{i}"), class, *c, asv.map(|a| a[i])).or_status()?;
    }
    Ok(())
}

/// Minimum normalized t-DCF over the CM threshold. The ASV threshold is the
/// EER threshold of target against nontarget ASV scores unless
/// `asv_threshold` is non-null. `params` may be null for the defaults.
///
/// # Safety
/// Each [`SkTrialScores`] must describe readable arrays of `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sk_min_tdcf(
    target: SkTrialScores,
    nontarget: SkTrialScores,
    spoof: SkTrialScores,
    params: *const SkTdcfParams,
    asv_threshold: *const f64,
    out_min_tdcf: *mut f64,
) -> SkStatus {
    guard(|| {
        let out = out_arg(out_min_tdcf, "out_min_tdcf")?;
        let mut set = TrialScoreSet::new();
        push_class(&mut set, TrialClass::Target, &target)?;
        push_class(&mut set, TrialClass::Nontarget, &nontarget)?;
        push_class(&mut set, TrialClass::Spoof, &spoof)?;
        let p = params.as_ref().map_or_else(TdcfParams::default, |p| (*p).into());
        let thr = match asv_threshold.as_ref() {
            Some(t) => *t,
            None => metrics::asv_operating_point(&set).or_status()?,
        };
        *out = metrics::min_tdcf(&set, &p, thr).or_status()?;
        Ok(())
    })
}

/// A trained CQCC-GMM countermeasure.
pub struct SkCqccGmm {
    inner: CqccGmmCm,
}

/// Loads a CQCC-GMM model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sk_cqcc_gmm_load(path: *const c_char, out: *mut *mut SkCqccGmm) -> SkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = read_cqcc_gmm(path_arg(path, "path")?).or_status()?;
        boxed(out, SkCqccGmm { inner });
        Ok(())
    })
}

/// Log-likelihood ratio of bona fide against playback; higher is more
/// likely bona fide.
///
/// # Safety
/// `model` must come from [`sk_cqcc_gmm_load`]; `samples` must hold `n`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn sk_cqcc_gmm_score(
    model: *const SkCqccGmm,
    samples: *const f64,
    n: usize,
    sample_rate: u32,
    out_score: *mut f64,
) -> SkStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| fail(SkStatus::InvalidArgument, "model is null"))?;
        let out = out_arg(out_score, "out_score")?;
        *out = m.inner.score(&waveform_arg(samples, n, sample_rate)?).or_status()?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`sk_cqcc_gmm_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sk_cqcc_gmm_free(model: *mut SkCqccGmm) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// A trained LCNN countermeasure.
pub struct SkLcnn {
    inner: LcnnCm,
}

/// Loads an LCNN model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sk_lcnn_load(path: *const c_char, out: *mut *mut SkLcnn) -> SkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = LcnnCm::load(path_arg(path, "path")?).or_status()?;
        boxed(out, SkLcnn { inner });
        Ok(())
    })
}

/// Bona fide probability averaged over segments.
///
/// # Safety
/// `model` must come from [`sk_lcnn_load`]; `samples` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn sk_lcnn_score(
    model: *const SkLcnn,
    samples: *const f64,
    n: usize,
    sample_rate: u32,
    out_score: *mut f64,
) -> SkStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| fail(SkStatus::InvalidArgument, "model is null"))?;
        let out = out_arg(out_score, "out_score")?;
        *out = m.inner.score(&waveform_arg(samples, n, sample_rate)?).or_status()?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`sk_lcnn_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sk_lcnn_free(model: *mut SkLcnn) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// A trained speech enhancement generator.
pub struct SkEnhancer {
    inner: Enhancer,
}

/// Loads an enhancer checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sk_enhancer_load(path: *const c_char, out: *mut *mut SkEnhancer) -> SkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = Enhancer::load(path_arg(path, "path")?).or_status()?;
        boxed(out, SkEnhancer { inner });
        Ok(())
    })
}

/// Sample rate the enhancer was trained at, or 0 for a null handle.
///
/// # Safety
/// `model` must come from [`sk_enhancer_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sk_enhancer_sample_rate(model: *const SkEnhancer) -> u32 {
    model.as_ref().map_or(0, |m| m.inner.config.sample_rate)
}

/// Enhances `n` samples into `out`, which must have room for `n` doubles.
/// The same seed gives the same output.
///
/// # Safety
/// `model` must come from [`sk_enhancer_load`]; `samples` and `out` must
/// hold `n` doubles and may not overlap.
#[no_mangle]
pub unsafe extern "C" fn sk_enhancer_enhance(
    model: *const SkEnhancer,
    samples: *const f64,
    n: usize,
    sample_rate: u32,
    seed: u64,
    out: *mut f64,
) -> SkStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| fail(SkStatus::InvalidArgument, "model is null"))?;
        if out.is_null() {
            return Err(fail(SkStatus::InvalidArgument, "out is null"));
        }
        let y = enhance(&m.inner, &waveform_arg(samples, n, sample_rate)?, seed).or_status()?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(y.samples());
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`sk_enhancer_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sk_enhancer_free(model: *mut SkEnhancer) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs every stage of an experiment described by a TOML configuration.
/// `output_dir` overrides the configured one when non-null.
///
/// # Safety
/// Both arguments must be NUL-terminated strings (`output_dir` may be null).
#[no_mangle]
pub unsafe extern "C" fn sk_run_experiment(config_path: *const c_char, output_dir: *const c_char) -> SkStatus {
    guard(|| {
        let mut cfg = ExperimentConfig::load(path_arg(config_path, "config_path")?).or_status()?;
        if !output_dir.is_null() {
            cfg.output_dir = path_arg(output_dir, "output_dir")?;
        }
        run_all(&cfg).or_status()?;
        Ok(())
    })
}
