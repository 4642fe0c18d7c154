//! C ABI for the rate-splitting precoder optimization library.
//!
//! The surface follows the usual opaque-handle pattern: constructors hand
//! back `*mut` handles through an out-parameter and return a status code;
//! every handle has exactly one `_free` function; accessors take `const`
//! handles and cannot fail once the handle exists (string/array exports use
//! the two-call sizing convention instead of allocating).
//!
//! Thread safety: handles are not synchronized — share a handle between
//! threads only behind your own lock. The per-thread
//! [`falcon_last_error_message`] buffer holds the message of the most
//! recent failing call on that thread.
//!
//! The matching header is generated into `include/falcon.h` at build time.

use std::cell::RefCell;
use std::os::raw::c_char;

use falcon::channel::ChannelSet;
use falcon::falcon::{run_falcon, FalconConfig, RsMode, RsSolution, RunStatus};
use falcon::rates::ProblemParams;
use falcon::{analog, C64, CVector};

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FalconStatus {
    /// Success.
    Ok = 0,
    /// A parameter was out of range or inconsistent.
    ErrParameter = 1,
    /// The solver failed numerically beyond its internal retries.
    ErrNumerical = 2,
    /// A required pointer argument was null.
    ErrNullPointer = 3,
    /// An output buffer was too small; the required size was written to the
    /// size out-parameter.
    ErrBufferTooSmall = 4,
}

/// Terminal state of a solver run (mirrors the solver's status enum).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FalconRunStatus {
    Converged = 0,
    IterationCap = 1,
    Infeasible = 2,
    NumericalFailure = 3,
}

/// Analog front-end design to apply before solving.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FalconAnalogMode {
    /// `F = I`: digital precoders drive the antennas directly.
    FullyDigital = 0,
    /// Quantized per-entry conjugate matching (`l_tx`-phase alphabet).
    PhaseMatched = 1,
    /// Greedy assignment from a constant-modulus codebook.
    CodebookGreedy = 2,
}

/// Opaque set of user channels.
pub struct FalconChannels {
    inner: ChannelSet,
}

/// Opaque solver result.
pub struct FalconSolution {
    inner: RsSolution,
}

fn err_status(e: &falcon::Error) -> FalconStatus {
    set_error(e.to_string());
    match e {
        falcon::Error::Numerical(_) => FalconStatus::ErrNumerical,
        _ => FalconStatus::ErrParameter,
    }
}

/// Copies the current thread's last error message (NUL-terminated) into
/// `buf`. `*needed` receives the required buffer size including the NUL.
/// Returns `ErrBufferTooSmall` when `cap` is insufficient; the buffer is
/// untouched in that case.
///
/// # Safety
/// `buf` must point to `cap` writable bytes (or be null with `cap = 0`);
/// `needed` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn falcon_last_error_message(
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> FalconStatus {
    if needed.is_null() {
        return FalconStatus::ErrNullPointer;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let total = msg.len() + 1;
        unsafe { *needed = total };
        if cap < total || buf.is_null() {
            return FalconStatus::ErrBufferTooSmall;
        }
        unsafe {
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, msg.len());
            *buf.add(msg.len()) = 0;
        }
        FalconStatus::Ok
    })
}

/// Library version as a static NUL-terminated string (never freed).
#[no_mangle]
pub extern "C" fn falcon_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Draws `k_users` clustered-multipath channels over `n_tx` antennas with
/// `n_paths` paths per user. The draw is a pure function of `seed`.
///
/// # Safety
/// `out` must be a valid pointer; on `Ok` it receives a handle that must be
/// released with [`falcon_channels_free`].
#[no_mangle]
pub unsafe extern "C" fn falcon_channels_random(
    seed: u64,
    n_tx: usize,
    k_users: usize,
    n_paths: usize,
    out: *mut *mut FalconChannels,
) -> FalconStatus {
    if out.is_null() {
        return FalconStatus::ErrNullPointer;
    }
    match ChannelSet::saleh_valenzuela(seed, n_tx, k_users, n_paths) {
        Ok(set) => {
            unsafe { *out = Box::into_raw(Box::new(FalconChannels { inner: set })) };
            FalconStatus::Ok
        }
        Err(e) => err_status(&e),
    }
}

/// Builds channels from caller data: `values` holds `k_users × n_tx`
/// complex entries as interleaved `(re, im)` doubles, user-major (user 0's
/// antennas first).
///
/// # Safety
/// `values` must point to `2 * n_tx * k_users` readable doubles; `out` must
/// be a valid pointer and receives a handle to free with
/// [`falcon_channels_free`].
#[no_mangle]
pub unsafe extern "C" fn falcon_channels_from_array(
    values: *const f64,
    n_tx: usize,
    k_users: usize,
    out: *mut *mut FalconChannels,
) -> FalconStatus {
    if values.is_null() || out.is_null() {
        return FalconStatus::ErrNullPointer;
    }
    if n_tx == 0 || k_users == 0 {
        set_error("n_tx and k_users must be at least 1");
        return FalconStatus::ErrParameter;
    }
    let flat = unsafe { std::slice::from_raw_parts(values, 2 * n_tx * k_users) };
    let vectors: Vec<CVector> = (0..k_users)
        .map(|k| {
            CVector::from_fn(n_tx, |i, _| {
                let base = 2 * (k * n_tx + i);
                C64::new(flat[base], flat[base + 1])
            })
        })
        .collect();
    match ChannelSet::from_vectors(vectors) {
        Ok(set) => {
            unsafe { *out = Box::into_raw(Box::new(FalconChannels { inner: set })) };
            FalconStatus::Ok
        }
        Err(e) => err_status(&e),
    }
}

/// Releases a channels handle. Null is a no-op.
///
/// # Safety
/// `handle` must come from a `falcon_channels_*` constructor and must not
/// be used after this call.
#[no_mangle]
pub unsafe extern "C" fn falcon_channels_free(handle: *mut FalconChannels) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_impl(
    channels: &ChannelSet,
    analog_mode: FalconAnalogMode,
    l_tx: usize,
    codebook_size: usize,
    codebook_seed: u64,
    p_tx_mw: f64,
    sigma2_mw: f64,
    c0_min: f64,
    weights: Option<&[f64]>,
    use_ldm: bool,
) -> Result<RsSolution, falcon::Error> {
    let analog = match analog_mode {
        FalconAnalogMode::FullyDigital => analog::identity_analog(channels.n_tx()),
        FalconAnalogMode::PhaseMatched => {
            let alphabet = analog::PhaseShiftSet::new(l_tx, channels.k_users())?;
            analog::design_phase_matched(channels, &alphabet)
        }
        FalconAnalogMode::CodebookGreedy => {
            let alphabet = analog::PhaseShiftSet::new(l_tx, channels.k_users())?;
            let book =
                analog::build_codebook(channels.n_tx(), codebook_size, &alphabet, codebook_seed)?;
            analog::design_codebook_greedy(channels, &book)?
        }
    };
    let params = ProblemParams {
        p_tx_mw,
        sigma2_mw,
        c0_min,
        weights: match weights {
            Some(w) => w.to_vec(),
            None => vec![1.0; channels.k_users()],
        },
    };
    let config = FalconConfig {
        mode: if use_ldm { RsMode::Ldm } else { RsMode::Rs },
        ..FalconConfig::default()
    };
    run_falcon(channels, &analog, &params, &config)
}

/// Runs the relaxation solver on `channels`.
///
/// `l_tx`, `codebook_size`, and `codebook_seed` are read only for the
/// analog modes that need them. `weights` may be null for equal weights;
/// otherwise it must hold one positive weight per user. `use_ldm != 0`
/// disables the unicast common parts.
///
/// An infeasible instance is a *successful* call: inspect
/// [`falcon_solution_status`].
///
/// # Safety
/// `channels` must be a live handle; `weights` null or pointing to
/// `k_users` readable doubles; `out` valid, receiving a handle to free with
/// [`falcon_solution_free`].
#[no_mangle]
pub unsafe extern "C" fn falcon_solve(
    channels: *const FalconChannels,
    analog_mode: FalconAnalogMode,
    l_tx: usize,
    codebook_size: usize,
    codebook_seed: u64,
    p_tx_mw: f64,
    sigma2_mw: f64,
    c0_min: f64,
    weights: *const f64,
    use_ldm: i32,
    out: *mut *mut FalconSolution,
) -> FalconStatus {
    if channels.is_null() || out.is_null() {
        return FalconStatus::ErrNullPointer;
    }
    let ch = unsafe { &(*channels).inner };
    let w = if weights.is_null() {
        None
    } else {
        Some(unsafe { std::slice::from_raw_parts(weights, ch.k_users()) })
    };
    match solve_impl(
        ch,
        analog_mode,
        l_tx,
        codebook_size,
        codebook_seed,
        p_tx_mw,
        sigma2_mw,
        c0_min,
        w,
        use_ldm != 0,
    ) {
        Ok(sol) => {
            unsafe { *out = Box::into_raw(Box::new(FalconSolution { inner: sol })) };
            FalconStatus::Ok
        }
        Err(e) => err_status(&e),
    }
}

/// Releases a solution handle. Null is a no-op.
///
/// # Safety
/// `handle` must come from [`falcon_solve`] and must not be used after
/// this call.
#[no_mangle]
pub unsafe extern "C" fn falcon_solution_free(handle: *mut FalconSolution) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Terminal status of the run.
///
/// # Safety
/// `handle` must be a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn falcon_solution_status(handle: *const FalconSolution) -> FalconRunStatus {
    match unsafe { &(*handle).inner }.status {
        RunStatus::Converged => FalconRunStatus::Converged,
        RunStatus::IterationCap => FalconRunStatus::IterationCap,
        RunStatus::Infeasible => FalconRunStatus::Infeasible,
        RunStatus::NumericalFailure => FalconRunStatus::NumericalFailure,
    }
}

/// Weighted sum rate (bits/s/Hz); NaN when no iterate was produced.
///
/// # Safety
/// `handle` must be a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn falcon_solution_wsr(handle: *const FalconSolution) -> f64 {
    unsafe { &(*handle).inner }.wsr
}

/// Number of outer iterations the run used.
///
/// # Safety
/// `handle` must be a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn falcon_solution_iterations(handle: *const FalconSolution) -> usize {
    unsafe { &(*handle).inner }.iterations_used
}

/// Copies the per-user total unicast rates (private + common part) into
/// `buf`. `*needed` receives the user count. Returns `ErrBufferTooSmall`
/// when `cap` is insufficient; the buffer is untouched in that case.
///
/// # Safety
/// `handle` live; `buf` pointing to `cap` writable doubles (or null with
/// `cap = 0`); `needed` valid.
#[no_mangle]
pub unsafe extern "C" fn falcon_solution_unicast_rates(
    handle: *const FalconSolution,
    buf: *mut f64,
    cap: usize,
    needed: *mut usize,
) -> FalconStatus {
    if handle.is_null() || needed.is_null() {
        return FalconStatus::ErrNullPointer;
    }
    let rates = &unsafe { &(*handle).inner }.unicast_rate;
    unsafe { *needed = rates.len() };
    if cap < rates.len() || buf.is_null() {
        return FalconStatus::ErrBufferTooSmall;
    }
    unsafe { std::ptr::copy_nonoverlapping(rates.as_ptr(), buf, rates.len()) };
    FalconStatus::Ok
}

/// Serializes the full solution to JSON using the two-call sizing
/// convention: call with `cap = 0` to learn the required size (including
/// the terminating NUL), then call again with a buffer of that size.
///
/// # Safety
/// `handle` live; `buf` pointing to `cap` writable bytes (or null with
/// `cap = 0`); `needed` valid.
#[no_mangle]
pub unsafe extern "C" fn falcon_solution_json(
    handle: *const FalconSolution,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> FalconStatus {
    if handle.is_null() || needed.is_null() {
        return FalconStatus::ErrNullPointer;
    }
    let json = unsafe { &(*handle).inner }.to_json();
    let total = json.len() + 1;
    unsafe { *needed = total };
    if cap < total || buf.is_null() {
        return FalconStatus::ErrBufferTooSmall;
    }
    unsafe {
        std::ptr::copy_nonoverlapping(json.as_ptr(), buf as *mut u8, json.len());
        *buf.add(json.len()) = 0;
    }
    FalconStatus::Ok
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Drives the exported functions through their C signatures exactly as
    /// a foreign caller would.
    #[test]
    fn scalar_instance_through_the_c_abi() {
        unsafe {
            let mut ch: *mut FalconChannels = std::ptr::null_mut();
            // Single user, single antenna, |g|² = 1.
            let values = [1.0f64, 0.0];
            assert_eq!(
                falcon_channels_from_array(values.as_ptr(), 1, 1, &mut ch),
                FalconStatus::Ok
            );

            let mut sol: *mut FalconSolution = std::ptr::null_mut();
            assert_eq!(
                falcon_solve(
                    ch,
                    FalconAnalogMode::FullyDigital,
                    0,
                    0,
                    0,
                    1.0e5,
                    1.0e3,
                    1.0,
                    std::ptr::null(),
                    0,
                    &mut sol,
                ),
                FalconStatus::Ok
            );
            assert_eq!(falcon_solution_status(sol), FalconRunStatus::Converged);
            let wsr = falcon_solution_wsr(sol);
            let expect = 101f64.log2() - 1.0;
            assert!((wsr - expect).abs() < 1e-3, "wsr {wsr}");
            assert!(falcon_solution_iterations(sol) >= 1);

            let mut n = 0usize;
            assert_eq!(
                falcon_solution_unicast_rates(sol, std::ptr::null_mut(), 0, &mut n),
                FalconStatus::ErrBufferTooSmall
            );
            assert_eq!(n, 1);
            let mut rates = [0.0f64];
            assert_eq!(
                falcon_solution_unicast_rates(sol, rates.as_mut_ptr(), 1, &mut n),
                FalconStatus::Ok
            );
            assert!((rates[0] - wsr).abs() < 1e-9);

            falcon_solution_free(sol);
            falcon_channels_free(ch);
        }
    }

    #[test]
    fn json_export_uses_two_call_sizing() {
        unsafe {
            let mut ch: *mut FalconChannels = std::ptr::null_mut();
            assert_eq!(
                falcon_channels_random(5, 2, 2, 3, &mut ch),
                FalconStatus::Ok
            );
            let mut sol: *mut FalconSolution = std::ptr::null_mut();
            assert_eq!(
                falcon_solve(
                    ch,
                    FalconAnalogMode::FullyDigital,
                    0,
                    0,
                    0,
                    1.0e5,
                    1.0e3,
                    0.5,
                    std::ptr::null(),
                    0,
                    &mut sol,
                ),
                FalconStatus::Ok
            );

            let mut needed = 0usize;
            assert_eq!(
                falcon_solution_json(sol, std::ptr::null_mut(), 0, &mut needed),
                FalconStatus::ErrBufferTooSmall
            );
            assert!(needed > 2);
            let mut buf = vec![0u8; needed];
            assert_eq!(
                falcon_solution_json(sol, buf.as_mut_ptr() as *mut c_char, needed, &mut needed),
                FalconStatus::Ok
            );
            let text = std::ffi::CStr::from_ptr(buf.as_ptr() as *const c_char)
                .to_str()
                .unwrap();
            let parsed: serde_json::Value = serde_json::from_str(text).unwrap();
            assert!(parsed["wsr"].is_number());

            falcon_solution_free(sol);
            falcon_channels_free(ch);
        }
    }

    #[test]
    fn hybrid_modes_and_ldm_flow_through() {
        unsafe {
            let mut ch: *mut FalconChannels = std::ptr::null_mut();
            assert_eq!(
                falcon_channels_random(9, 4, 2, 3, &mut ch),
                FalconStatus::Ok
            );
            let mut rs: *mut FalconSolution = std::ptr::null_mut();
            let mut ldm: *mut FalconSolution = std::ptr::null_mut();
            assert_eq!(
                falcon_solve(
                    ch,
                    FalconAnalogMode::PhaseMatched,
                    8,
                    0,
                    0,
                    1.0e5,
                    1.0e3,
                    0.5,
                    std::ptr::null(),
                    0,
                    &mut rs,
                ),
                FalconStatus::Ok
            );
            assert_eq!(
                falcon_solve(
                    ch,
                    FalconAnalogMode::PhaseMatched,
                    8,
                    0,
                    0,
                    1.0e5,
                    1.0e3,
                    0.5,
                    std::ptr::null(),
                    1,
                    &mut ldm,
                ),
                FalconStatus::Ok
            );
            let (w_rs, w_ldm) = (falcon_solution_wsr(rs), falcon_solution_wsr(ldm));
            assert!(w_rs >= w_ldm - 1e-3, "rs {w_rs} < ldm {w_ldm}");
            falcon_solution_free(rs);
            falcon_solution_free(ldm);
            falcon_channels_free(ch);
        }
    }

    #[test]
    fn errors_set_codes_and_messages() {
        unsafe {
            let mut ch: *mut FalconChannels = std::ptr::null_mut();
            // Zero antennas is a parameter error.
            assert_eq!(
                falcon_channels_random(1, 0, 1, 3, &mut ch),
                FalconStatus::ErrParameter
            );
            let mut needed = 0usize;
            assert_eq!(
                falcon_last_error_message(std::ptr::null_mut(), 0, &mut needed),
                FalconStatus::ErrBufferTooSmall
            );
            assert!(needed > 1);
            let mut buf = vec![0u8; needed];
            assert_eq!(
                falcon_last_error_message(buf.as_mut_ptr() as *mut c_char, needed, &mut needed),
                FalconStatus::Ok
            );
            let msg = std::ffi::CStr::from_ptr(buf.as_ptr() as *const c_char)
                .to_str()
                .unwrap();
            assert!(msg.contains("n_tx"), "message: {msg}");

            // Null out-pointers are rejected, not dereferenced.
            assert_eq!(
                falcon_channels_random(1, 2, 1, 3, std::ptr::null_mut()),
                FalconStatus::ErrNullPointer
            );
        }
    }

    #[test]
    fn version_is_a_valid_c_string() {
        let ptr = falcon_version();
        let s = unsafe { std::ffi::CStr::from_ptr(ptr) }.to_str().unwrap();
        assert_eq!(s, env!("CARGO_PKG_VERSION"));
    }
}
