//! C ABI over the analysis core.
//!
//! Every function returns an [`LtStatus`]. Objects cross the boundary as
//! opaque handles that the caller releases with the matching `*_free`
//! function. After a failure, [`lt_last_error_message`] describes it.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::time::Duration;

use lifetaint::app_ir::{load_app, AppModel};
use lifetaint::cli::{analyze_app, AnalysisOptions, Models};
use lifetaint::detectors_report::{render_report, Format, Report};
use lifetaint::lifecycle_model::{load_model, LifecycleModel};
use lifetaint::taint_engine::{DetectMode, TaintConfig};

/// Report information leaks.
pub const LT_DETECT_LEAK: u32 = 1;
/// Report SMS misuse.
pub const LT_DETECT_SMS: u32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Analysis = 6,
    Panic = 7,
}

/// A life-cycle model.
pub struct LtModel(LifecycleModel);

/// A loaded app.
pub struct LtApp(AppModel);

/// The report of one analysed app.
pub struct LtReport(Report);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(LtStatus, String);

type Res<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> Res<()>) -> LtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LtStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Res<PathBuf> {
    if p.is_null() {
        return Err(Failure(LtStatus::NullPointer, "path is null".into()));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(LtStatus::InvalidUtf8, format!("path is not UTF-8: {e}")))?;
    Ok(PathBuf::from(s))
}

fn non_null<T>(p: *const T, what: &str) -> Res<()> {
    if p.is_null() {
        return Err(Failure(LtStatus::NullPointer, format!("{what} is null")));
    }
    Ok(())
}

/// Loads a life-cycle model from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_model_load(path: *const c_char, out: *mut *mut LtModel) -> LtStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let model = load_model(&path).map_err(|e| {
            use lifetaint::lifecycle_model::ModelError;
            let status = match &e {
                ModelError::Io { .. } => LtStatus::Io,
                ModelError::Schema(_) => LtStatus::Parse,
                _ => LtStatus::Validation,
            };
            Failure(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(LtModel(model)));
        Ok(())
    })
}

/// Number of event sequences derived from `model`.
///
/// # Safety
/// `model` must come from [`lt_model_load`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lt_model_sequence_count(
    model: *const LtModel,
    out: *mut usize,
) -> LtStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let seqs = (*model)
            .0
            .derive_event_sequences()
            .map_err(|e| Failure(LtStatus::Validation, e.to_string()))?;
        *out = seqs.len();
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`lt_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn lt_model_free(model: *mut LtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads an app from its IR file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_app_load(path: *const c_char, out: *mut *mut LtApp) -> LtStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let app = load_app(&path).map_err(|e| {
            use lifetaint::app_ir::IrError;
            let status = match &e {
                IrError::Io { .. } => LtStatus::Io,
                IrError::Schema(_) => LtStatus::Parse,
                _ => LtStatus::Validation,
            };
            Failure(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(LtApp(app)));
        Ok(())
    })
}

/// # Safety
/// `app` must come from [`lt_app_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn lt_app_free(app: *mut LtApp) {
    if !app.is_null() {
        drop(Box::from_raw(app));
    }
}

/// Analyses `app` with the bundled models, escalating the permutation width
/// up to `m_max`. `config_path` may be null for the bundled source and sink
/// list. `detect` is a mask of `LT_DETECT_*` flags.
///
/// # Safety
/// `app` must come from [`lt_app_load`]; `config_path` must be null or a
/// NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lt_analyze(
    app: *const LtApp,
    config_path: *const c_char,
    m_max: usize,
    budget_secs: u64,
    detect: u32,
    out: *mut *mut LtReport,
) -> LtStatus {
    guard(|| {
        non_null(app, "app")?;
        non_null(out, "out")?;
        if m_max == 0 || budget_secs == 0 {
            return Err(Failure(
                LtStatus::Validation,
                "m_max and budget_secs must be positive".into(),
            ));
        }
        let config = if config_path.is_null() {
            TaintConfig::bundled()
        } else {
            TaintConfig::load(path_arg(config_path)?)
                .map_err(|e| Failure(LtStatus::Parse, e.to_string()))?
        };
        let opts = AnalysisOptions {
            m_max,
            budget: Duration::from_secs(budget_secs),
            detect: DetectMode {
                leak: detect & LT_DETECT_LEAK != 0,
                sms: detect & LT_DETECT_SMS != 0,
            },
        };
        let report = analyze_app(&(*app).0, &Models::bundled(), &config, &opts);
        if let Some(e) = &report.error {
            return Err(Failure(LtStatus::Analysis, e.clone()));
        }
        *out = Box::into_raw(Box::new(LtReport(report)));
        Ok(())
    })
}

/// # Safety
/// `report` must come from [`lt_analyze`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lt_report_warning_count(
    report: *const LtReport,
    out: *mut usize,
) -> LtStatus {
    guard(|| {
        non_null(report, "report")?;
        non_null(out, "out")?;
        *out = (*report).0.warnings.len();
        Ok(())
    })
}

/// Whether the analysis ran out of time.
///
/// # Safety
/// `report` must come from [`lt_analyze`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lt_report_killed(report: *const LtReport, out: *mut bool) -> LtStatus {
    guard(|| {
        non_null(report, "report")?;
        non_null(out, "out")?;
        *out = (*report).0.stats.killed;
        Ok(())
    })
}

/// Renders the report as JSON. Release the string with [`lt_string_free`].
///
/// # Safety
/// `report` must come from [`lt_analyze`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lt_report_to_json(
    report: *const LtReport,
    out: *mut *mut c_char,
) -> LtStatus {
    guard(|| {
        non_null(report, "report")?;
        non_null(out, "out")?;
        let text = render_report(&(*report).0, Format::Json);
        *out = CString::new(text)
            .map_err(|e| Failure(LtStatus::Analysis, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `report` must come from [`lt_analyze`] or be null.
#[no_mangle]
pub unsafe extern "C" fn lt_report_free(report: *mut LtReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn lt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failure on this thread, or null after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn lt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
