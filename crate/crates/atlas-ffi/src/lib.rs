//! C ABI for the routing engine. Profiles cross the boundary as opaque
//! handles, strings as NUL-terminated UTF-8, and every fallible call
//! returns an [`AtlasStatus`]; the failure detail is retrievable per
//! thread through [`atlas_last_error_message`]. The matching C header
//! lives at `include/atlas.h` and is regenerated on every build.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use atlas_core::{format_reward_text, ClusterProfile};
use atlas_core::profile::ProfileError;

/// Outcome of a call across the C boundary.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtlasStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The input could not be parsed as a routing profile.
    ParseError = 3,
    /// Routing or scoring failed; see `atlas_last_error_message`.
    RouteError = 4,
    /// The profile file could not be read.
    IoError = 5,
    /// The library caught an internal panic at the boundary.
    InternalError = 6,
}

/// Opaque handle to a fitted routing profile. Created by
/// `atlas_profile_load` or `atlas_profile_from_json`, released by
/// `atlas_profile_free`.
pub struct AtlasProfile {
    inner: ClusterProfile,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(detail: impl Into<String>) {
    let text = detail.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn profile_status(error: &ProfileError) -> AtlasStatus {
    match error {
        ProfileError::Io { .. } => AtlasStatus::IoError,
        _ => AtlasStatus::ParseError,
    }
}

/// Reads `ptr` as a UTF-8 C string.
///
/// # Safety
/// `ptr` must be null or point to a NUL-terminated buffer.
unsafe fn required_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, AtlasStatus> {
    if ptr.is_null() {
        set_error(format!("{name} must not be null"));
        return Err(AtlasStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(text) => Ok(text),
        Err(_) => {
            set_error(format!("{name} is not valid UTF-8"));
            Err(AtlasStatus::InvalidUtf8)
        }
    }
}

fn guarded(body: impl FnOnce() -> AtlasStatus) -> AtlasStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic crossed the library boundary");
            AtlasStatus::InternalError
        }
    }
}

fn emit_profile(profile: ClusterProfile, out: *mut *mut AtlasProfile) -> AtlasStatus {
    let handle = Box::new(AtlasProfile { inner: profile });
    unsafe { *out = Box::into_raw(handle) };
    AtlasStatus::Ok
}

/// Library version as a static NUL-terminated string; never null, never
/// freed by the caller.
#[no_mangle]
pub extern "C" fn atlas_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Detail message for the most recent failure on this thread, or null when
/// the last call succeeded. The pointer stays valid until the next library
/// call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn atlas_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |text| text.as_ptr()))
}

/// Loads a routing profile from a JSON file on disk into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid location to
/// store the handle. On any status other than `Ok`, `*out` is untouched.
#[no_mangle]
pub unsafe extern "C" fn atlas_profile_load(
    path: *const c_char,
    out: *mut *mut AtlasProfile,
) -> AtlasStatus {
    guarded(|| {
        clear_error();
        if out.is_null() {
            set_error("out must not be null");
            return AtlasStatus::NullArgument;
        }
        let path = match required_str(path, "path") {
            Ok(text) => text,
            Err(status) => return status,
        };
        match ClusterProfile::load(Path::new(path)) {
            Ok(profile) => emit_profile(profile, out),
            Err(error) => {
                let status = profile_status(&error);
                set_error(error.to_string());
                status
            }
        }
    })
}

/// Parses a routing profile from a JSON string into `*out`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid location to
/// store the handle. On any status other than `Ok`, `*out` is untouched.
#[no_mangle]
pub unsafe extern "C" fn atlas_profile_from_json(
    json: *const c_char,
    out: *mut *mut AtlasProfile,
) -> AtlasStatus {
    guarded(|| {
        clear_error();
        if out.is_null() {
            set_error("out must not be null");
            return AtlasStatus::NullArgument;
        }
        let json = match required_str(json, "json") {
            Ok(text) => text,
            Err(status) => return status,
        };
        match ClusterProfile::from_json(json) {
            Ok(profile) => emit_profile(profile, out),
            Err(error) => {
                set_error(error.to_string());
                AtlasStatus::ParseError
            }
        }
    })
}

/// Releases a profile handle. Null is accepted and ignored.
///
/// # Safety
/// `profile` must be null or a handle produced by this library that has
/// not been freed already.
#[no_mangle]
pub unsafe extern "C" fn atlas_profile_free(profile: *mut AtlasProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// Routes one query through the profile and stores the decision as a JSON
/// string in `*out_json` (fields `model`, `tool`, `cluster_id`, `utility`,
/// `fallback_used`). The caller owns the string and must release it with
/// `atlas_string_free`.
///
/// # Safety
/// `profile` must be a live handle from this library, `query` a
/// NUL-terminated string, and `out_json` a valid location to store the
/// string. On any status other than `Ok`, `*out_json` is untouched.
#[no_mangle]
pub unsafe extern "C" fn atlas_route(
    profile: *const AtlasProfile,
    query: *const c_char,
    out_json: *mut *mut c_char,
) -> AtlasStatus {
    guarded(|| {
        clear_error();
        if profile.is_null() || out_json.is_null() {
            set_error("profile and out_json must not be null");
            return AtlasStatus::NullArgument;
        }
        let query = match required_str(query, "query") {
            Ok(text) => text,
            Err(status) => return status,
        };
        let decision = match (*profile).inner.route_query(query) {
            Ok(decision) => decision,
            Err(error) => {
                set_error(error.to_string());
                return AtlasStatus::RouteError;
            }
        };
        let json = match serde_json::to_string(&decision) {
            Ok(json) => json,
            Err(error) => {
                set_error(error.to_string());
                return AtlasStatus::InternalError;
            }
        };
        match CString::new(json) {
            Ok(text) => {
                *out_json = text.into_raw();
                AtlasStatus::Ok
            }
            Err(error) => {
                set_error(error.to_string());
                AtlasStatus::InternalError
            }
        }
    })
}

/// Scores a trajectory's structure against the profile's pool and stores
/// the format reward in `*out_reward`: 0 when the trajectory is
/// well-formed, -1 when any structural rule is violated.
///
/// # Safety
/// `profile` must be a live handle from this library, `trajectory` a
/// NUL-terminated string, and `out_reward` a valid location to store the
/// value. On any status other than `Ok`, `*out_reward` is untouched.
#[no_mangle]
pub unsafe extern "C" fn atlas_format_reward(
    profile: *const AtlasProfile,
    trajectory: *const c_char,
    out_reward: *mut f64,
) -> AtlasStatus {
    guarded(|| {
        clear_error();
        if profile.is_null() || out_reward.is_null() {
            set_error("profile and out_reward must not be null");
            return AtlasStatus::NullArgument;
        }
        let trajectory = match required_str(trajectory, "trajectory") {
            Ok(text) => text,
            Err(status) => return status,
        };
        *out_reward = format_reward_text(trajectory, (*profile).inner.pool());
        AtlasStatus::Ok
    })
}

/// Releases a string produced by this library. Null is accepted and
/// ignored.
///
/// # Safety
/// `text` must be null or a string produced by this library that has not
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn atlas_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}
