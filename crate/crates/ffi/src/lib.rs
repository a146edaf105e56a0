//! C ABI over the largen-sigma toolkit.
//!
//! Every function returns an `LsStatus` code; results go through out-pointers.
//! Handles are opaque and released with their `_free` function.
//! The message for the last failure on the calling thread is available from
//! [`ls_last_error_message`].

use largen_sigma::acceptance::{run_criterion, Profile};
use largen_sigma::expansion::{activity_threshold, mayer_connectivity, mayer_tree_formula, OverlapGraph};
use largen_sigma::kernels::{polarization_momentum_mode, radial_propagator, BubbleMode, CutoffSpec};
use largen_sigma::model::{derive_params, solve_gap_equation, ModelParams, Regulator};
use largen_sigma::regions::{build_regions, classify_squares, FieldConfig, LatticeGeometry};
use largen_sigma::twopoint::{estimate_s2, SamplerConfig};
use largen_sigma::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

pub type LsStatus = i32;

pub const LS_OK: LsStatus = 0;
pub const LS_ERR_NULL: LsStatus = 1;
pub const LS_ERR_INVALID: LsStatus = 2;
pub const LS_ERR_NUMERICAL: LsStatus = 3;
pub const LS_ERR_SIGN_PROBLEM: LsStatus = 4;
pub const LS_ERR_IO: LsStatus = 5;
pub const LS_ERR_PANIC: LsStatus = 6;
/// The output buffer was too small; the required length is reported.
pub const LS_ERR_BUFFER: LsStatus = 7;

pub const LS_REGULATOR_EXPONENTIAL: i32 = 0;
pub const LS_REGULATOR_SHARP: i32 = 1;

pub const LS_PROFILE_QUICK: i32 = 0;
pub const LS_PROFILE_FULL: i32 = 1;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LsStatus {
    match e {
        Error::InvalidParameter { .. } | Error::Config(_) | Error::Dimension(_) | Error::SizeGuard { .. } => {
            LS_ERR_INVALID
        }
        Error::SignProblem(_) => LS_ERR_SIGN_PROBLEM,
        Error::Io { .. } | Error::Format { .. } => LS_ERR_IO,
        _ => LS_ERR_NUMERICAL,
    }
}

fn guard(f: impl FnOnce() -> Result<(), LsStatus>) -> LsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LS_OK,
        Ok(Err(code)) => code,
        Err(_) => {
            set_error("internal panic".into());
            LS_ERR_PANIC
        }
    }
}

fn check<T>(r: largen_sigma::Result<T>) -> Result<T, LsStatus> {
    r.map_err(|e| {
        let code = status_of(&e);
        set_error(e.to_string());
        code
    })
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), LsStatus> {
    if p.is_null() {
        set_error(format!("null pointer `{name}`"));
        Err(LS_ERR_NULL)
    } else {
        Ok(())
    }
}

fn regulator(code: i32) -> Result<Regulator, LsStatus> {
    match code {
        LS_REGULATOR_EXPONENTIAL => Ok(Regulator::Exponential),
        LS_REGULATOR_SHARP => Ok(Regulator::Sharp),
        _ => {
            set_error(format!("unknown regulator code {code}"));
            Err(LS_ERR_INVALID)
        }
    }
}

/// Derived model parameters.
pub struct LsParams(ModelParams);

/// Field configuration on a square lattice region.
pub struct LsField(FieldConfig);

/// Copy the last error message of this thread into `buf` (NUL-terminated).
///
/// # Safety
/// `buf` must point to `len` writable bytes; `required` may be null.
#[no_mangle]
pub unsafe extern "C" fn ls_last_error_message(buf: *mut c_char, len: usize, required: *mut usize) -> LsStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone()).unwrap_or_default();
    let bytes = msg.as_bytes_with_nul();
    if !required.is_null() {
        *required = bytes.len();
    }
    if buf.is_null() || len < bytes.len() {
        return LS_ERR_BUFFER;
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
    LS_OK
}

/// Solve the gap equation for m².
///
/// # Safety
/// `m2` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn ls_gap_solve(lambda: f64, big_k: f64, regulator_code: i32, m2: *mut f64) -> LsStatus {
    guard(|| {
        non_null(m2, "m2")?;
        *m2 = check(solve_gap_equation(lambda, big_k, regulator(regulator_code)?))?;
        Ok(())
    })
}

/// Create a parameter handle from (λ, K, N).
///
/// # Safety
/// `out` must be a valid pointer; the handle is released with [`ls_params_free`].
#[no_mangle]
pub unsafe extern "C" fn ls_params_new(
    lambda: f64,
    big_k: f64,
    big_n: u64,
    regulator_code: i32,
    out: *mut *mut LsParams,
) -> LsStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = check(derive_params(lambda, big_k, big_n, regulator(regulator_code)?))?;
        *out = Box::into_raw(Box::new(LsParams(p)));
        Ok(())
    })
}

/// Replace the corridor width M of a parameter handle.
///
/// # Safety
/// `params` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_params_set_corridor(params: *mut LsParams, corridor_m: f64) -> LsStatus {
    guard(|| {
        non_null(params, "params")?;
        let p = &mut *params;
        p.0 = check(p.0.clone().with_corridor(corridor_m))?;
        Ok(())
    })
}

/// Read m, g, ε and c_m from a parameter handle; any out-pointer may be null.
///
/// # Safety
/// `params` must be a live handle; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_params_get(
    params: *const LsParams,
    m: *mut f64,
    g: *mut f64,
    epsilon: *mut f64,
    c_m: *mut f64,
) -> LsStatus {
    guard(|| {
        non_null(params, "params")?;
        let p = &(*params).0;
        for (ptr, v) in [(m, p.m), (g, p.g), (epsilon, p.epsilon), (c_m, p.c_m())] {
            if !ptr.is_null() {
                *ptr = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `params` must be null or a handle from [`ls_params_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_params_free(params: *mut LsParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Free propagator F(r) for mass m.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_propagator_radial(m: f64, r: f64, out: *mut f64) -> LsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = check(radial_propagator(m, r))?;
        Ok(())
    })
}

/// Unregulated bubble π̂(p²) at coupling λK and mass m.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_bubble(p2: f64, lambda_k: f64, m: f64, out: *mut f64) -> LsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = check(polarization_momentum_mode(p2, lambda_k, m, BubbleMode::Unregulated))?;
        Ok(())
    })
}

/// Field on Λ = [−n, n]² with `sites_per_side`² sites per unit square.
///
/// # Safety
/// `tau` must point to `len` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_field_new(
    n: usize,
    sites_per_side: usize,
    tau: *const f64,
    len: usize,
    out: *mut *mut LsField,
) -> LsStatus {
    guard(|| {
        non_null(tau, "tau")?;
        non_null(out, "out")?;
        let g = check(LatticeGeometry::new(n, sites_per_side))?;
        let values = std::slice::from_raw_parts(tau, len).to_vec();
        *out = Box::into_raw(Box::new(LsField(check(FieldConfig::new(g, values))?)));
        Ok(())
    })
}

/// Number of lattice sites of a field.
///
/// # Safety
/// `field` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ls_field_num_sites(field: *const LsField, out: *mut usize) -> LsStatus {
    guard(|| {
        non_null(field, "field")?;
        non_null(out, "out")?;
        *out = (*field).0.tau.len();
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle from [`ls_field_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_field_free(field: *mut LsField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Classify squares and build regions; report counts of large squares,
/// connected components and corridor squares.
///
/// # Safety
/// Handles must be live; out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn ls_decompose(
    params: *const LsParams,
    field: *const LsField,
    large: *mut usize,
    components: *mut usize,
    corridor: *mut usize,
) -> LsStatus {
    guard(|| {
        non_null(params, "params")?;
        non_null(field, "field")?;
        non_null(large, "large")?;
        non_null(components, "components")?;
        non_null(corridor, "corridor")?;
        let (p, f) = (&(*params).0, &(*field).0);
        let a = classify_squares(f, p);
        let r = check(build_regions(&a, &f.geometry, p.corridor_m))?;
        *large = a.large_squares().len();
        *components = r.components.len();
        *corridor = r.gamma.len();
        Ok(())
    })
}

/// Connectivity factor of an overlap graph, by graph sum and by tree formula.
///
/// # Safety
/// `edges` must point to `2 * n_edges` indices; out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn ls_mayer_factor(
    q: usize,
    edges: *const u32,
    n_edges: usize,
    by_graphs: *mut f64,
    by_trees: *mut f64,
) -> LsStatus {
    guard(|| {
        non_null(by_graphs, "by_graphs")?;
        non_null(by_trees, "by_trees")?;
        let pairs: Vec<(usize, usize)> = if n_edges == 0 {
            Vec::new()
        } else {
            non_null(edges, "edges")?;
            std::slice::from_raw_parts(edges, 2 * n_edges)
                .chunks(2)
                .map(|e| (e[0] as usize, e[1] as usize))
                .collect()
        };
        let g = check(OverlapGraph::new(q, pairs))?;
        *by_graphs = mayer_connectivity(&g);
        *by_trees = check(mayer_tree_formula(&g))?;
        Ok(())
    })
}

/// Largest polymer activity ρ* with the summed bound at most 1/2.
///
/// # Safety
/// Out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_activity_threshold(max_size: usize, rho: *mut f64, total: *mut f64) -> LsStatus {
    guard(|| {
        non_null(rho, "rho")?;
        non_null(total, "total")?;
        let a = check(activity_threshold(max_size, true))?;
        *rho = a.rho;
        *total = a.total();
        Ok(())
    })
}

/// Reweighted two-point estimate on Λ = [−n, n]²; returns the fitted m′ and m′/m.
///
/// # Safety
/// `params` must be a live handle; out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn ls_twopoint(
    params: *const LsParams,
    n: usize,
    sites_per_side: usize,
    samples: usize,
    seed: u64,
    window_lo: f64,
    window_hi: f64,
    mprime: *mut f64,
    ratio: *mut f64,
) -> LsStatus {
    guard(|| {
        non_null(params, "params")?;
        non_null(mprime, "mprime")?;
        non_null(ratio, "ratio")?;
        let g = check(LatticeGeometry::new(n, sites_per_side))?;
        let cfg = SamplerConfig {
            seed,
            n_samples: samples,
            window: Some((window_lo, window_hi)),
            ..Default::default()
        };
        let r = check(estimate_s2(&(*params).0, &g, &CutoffSpec::default(), &cfg))?;
        *mprime = r.fitted_mprime;
        *ratio = r.ratio();
        Ok(())
    })
}

/// Run one acceptance criterion (1–12); `passed` is set to 1 or 0.
///
/// # Safety
/// `passed` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_acceptance_run(criterion: u32, profile: i32, passed: *mut i32) -> LsStatus {
    guard(|| {
        non_null(passed, "passed")?;
        let profile = match profile {
            LS_PROFILE_QUICK => Profile::Quick,
            LS_PROFILE_FULL => Profile::Full,
            _ => {
                set_error(format!("unknown profile code {profile}"));
                return Err(LS_ERR_INVALID);
            }
        };
        let report = check(run_criterion(criterion, profile))?;
        *passed = report.pass() as i32;
        Ok(())
    })
}
