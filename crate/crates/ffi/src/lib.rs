//! C ABI for the igeo engine.
//!
//! Every fallible entry point returns an [`IgeoStatus`]. On failure the
//! message is kept per thread and read with [`igeo_last_error`]. Arrays are
//! caller-allocated: metrics are `n·n` and connections `n·n·n`, both
//! row-major. Connection entry `(i, j, k)` is at `(i·n + j)·n + k`.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use igeo::divergences::{divergence, DivergenceSpec};
use igeo::eguchi;
use igeo::laplace::{laplacian, ScalarField};
use igeo::models::{builtin, FamilyConfig, ModelFamily};
use igeo::priors::{hartigan_log_derivative, CovolumeField, PriorLabel};
use igeo::quadrature::QuadConfig;
use igeo::tensors::{self, GeometryLabel};
use igeo::Error;

/// Opaque handle to a parametric family.
pub struct IgeoFamily {
    inner: ModelFamily,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IgeoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownFamily = 3,
    Domain = 4,
    InvalidOrder = 5,
    Numerical = 6,
    Structure = 7,
    Config = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IgeoDivergence {
    Kl = 0,
    Alpha = 1,
    Renyi = 2,
    Bhattacharyya = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IgeoLabel {
    Fisher = 0,
    E = 1,
    M = 2,
    Lc = 3,
    Alpha = 4,
    AlphaDual = 5,
    Rho = 6,
    RhoDual = 7,
    Bhattacharyya = 8,
}

/// Scalar field callback: `theta` has `n` entries.
pub type IgeoScalarFn = Option<unsafe extern "C" fn(theta: *const f64, n: usize, user: *mut c_void) -> f64>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(IgeoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Domain { .. } | Error::StepTooLarge { .. } | Error::PathExitsDomain(_) => IgeoStatus::Domain,
            Error::UnknownFamily(_) => IgeoStatus::UnknownFamily,
            Error::InvalidOrder(_) => IgeoStatus::InvalidOrder,
            Error::StructureMismatch(_) => IgeoStatus::Structure,
            Error::Config(_) => IgeoStatus::Config,
            Error::Dimension { .. } => IgeoStatus::InvalidArgument,
            _ => IgeoStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IgeoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            IgeoStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            IgeoStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(IgeoStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn handle<'a>(ptr: *const IgeoFamily) -> Result<&'a ModelFamily, Failure> {
    ptr.as_ref().map(|f| &f.inner).ok_or_else(|| null("family"))
}

unsafe fn point<'a>(fam: &ModelFamily, theta: *const f64, n: usize) -> Result<&'a [f64], Failure> {
    if theta.is_null() {
        return Err(null("theta"));
    }
    if n != fam.dim() {
        return Err(Error::Dimension { expected: fam.dim(), got: n }.into());
    }
    Ok(slice::from_raw_parts(theta, n))
}

unsafe fn output<'a>(out: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(out, len))
}

unsafe fn string<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(IgeoStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

fn spec(kind: IgeoDivergence, order: f64) -> Result<DivergenceSpec, Failure> {
    let s = match kind {
        IgeoDivergence::Kl => DivergenceSpec::Kl,
        IgeoDivergence::Alpha => DivergenceSpec::Alpha(order),
        IgeoDivergence::Renyi => DivergenceSpec::Renyi(order),
        IgeoDivergence::Bhattacharyya => DivergenceSpec::Bhattacharyya,
    };
    s.validate()?;
    Ok(s)
}

fn label(kind: IgeoLabel, order: f64) -> Result<GeometryLabel, Failure> {
    let l = match kind {
        IgeoLabel::Fisher => GeometryLabel::Fisher,
        IgeoLabel::E => GeometryLabel::E,
        IgeoLabel::M => GeometryLabel::M,
        IgeoLabel::Lc => GeometryLabel::LC,
        IgeoLabel::Alpha => GeometryLabel::Alpha(order),
        IgeoLabel::AlphaDual => GeometryLabel::AlphaDual(order),
        IgeoLabel::Rho => GeometryLabel::Rho(order),
        IgeoLabel::RhoDual => GeometryLabel::RhoDual(order),
        IgeoLabel::Bhattacharyya => GeometryLabel::Bhattacharyya,
    };
    l.validate()?;
    Ok(l)
}

fn copy_matrix(m: &tensors::MetricTensor, out: &mut [f64]) {
    let n = m.g.nrows();
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = m.g[(i, j)];
        }
    }
}

fn copy_tensor(t: &tensors::Tensor3, out: &mut [f64]) {
    out.copy_from_slice(&t.data);
}

unsafe fn store_handle(out: *mut *mut IgeoFamily, fam: ModelFamily) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(IgeoFamily { inner: fam }));
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn igeo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn igeo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a built-in family such as `"bernoulli-mean"` or `"categorical-3"`.
/// `IGEO_QUAD_ORDER` is honoured.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn igeo_family_builtin(name: *const c_char, out: *mut *mut IgeoFamily) -> IgeoStatus {
    guard(|| {
        let fam = builtin(string(name, "name")?)?.with_quadrature(QuadConfig::from_env());
        store_handle(out, fam)
    })
}

/// Creates a family from a JSON definition (see `schemas/family-v1.json`).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn igeo_family_from_json(json: *const c_char, out: *mut *mut IgeoFamily) -> IgeoStatus {
    guard(|| {
        let fam = FamilyConfig::from_json(string(json, "json")?)?.build()?;
        store_handle(out, fam)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `family` must come from a constructor and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn igeo_family_free(family: *mut IgeoFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// Parameter dimension, or 0 for a null handle.
///
/// # Safety
/// `family` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn igeo_family_dim(family: *const IgeoFamily) -> usize {
    family.as_ref().map_or(0, |f| f.inner.dim())
}

/// `D[θ : θ′]`. `order` is α or ρ and ignored for KL and Bhattacharyya.
///
/// # Safety
/// `theta` and `theta_prime` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn igeo_divergence(
    family: *const IgeoFamily,
    kind: IgeoDivergence,
    order: f64,
    theta: *const f64,
    theta_prime: *const f64,
    n: usize,
    out: *mut f64,
) -> IgeoStatus {
    guard(|| {
        let fam = handle(family)?;
        let (t, tp) = (point(fam, theta, n)?, point(fam, theta_prime, n)?);
        let v = divergence(spec(kind, order)?, fam, t, tp)?;
        output(out, 1, "out")?[0] = v;
        Ok(())
    })
}

/// Fisher metric into `out[n·n]`.
///
/// # Safety
/// `theta` must hold `n` values and `out` `n·n`.
#[no_mangle]
pub unsafe extern "C" fn igeo_fisher(family: *const IgeoFamily, theta: *const f64, n: usize, out: *mut f64) -> IgeoStatus {
    guard(|| {
        let fam = handle(family)?;
        let g = tensors::fisher(fam, point(fam, theta, n)?)?;
        copy_matrix(&g, output(out, n * n, "out")?);
        Ok(())
    })
}

/// Analytic metric, first-kind connection and its dual for a geometry
/// label. Any of the outputs may be null to skip it.
///
/// # Safety
/// `theta` must hold `n` values; non-null outputs must hold `n·n` and `n·n·n`.
#[no_mangle]
pub unsafe extern "C" fn igeo_geometry(
    family: *const IgeoFamily,
    kind: IgeoLabel,
    order: f64,
    theta: *const f64,
    n: usize,
    metric: *mut f64,
    gamma: *mut f64,
    gamma_dual: *mut f64,
) -> IgeoStatus {
    guard(|| {
        let fam = handle(family)?;
        let s = tensors::analytic_snapshot(label(kind, order)?, fam, point(fam, theta, n)?)?;
        write_snapshot(&s, n, metric, gamma, gamma_dual)
    })
}

/// Metric and connections induced by a divergence through its mixed
/// partial derivatives on the diagonal. Outputs as in [`igeo_geometry`].
///
/// # Safety
/// As for [`igeo_geometry`].
#[no_mangle]
pub unsafe extern "C" fn igeo_induced_geometry(
    family: *const IgeoFamily,
    kind: IgeoDivergence,
    order: f64,
    theta: *const f64,
    n: usize,
    metric: *mut f64,
    gamma: *mut f64,
    gamma_dual: *mut f64,
) -> IgeoStatus {
    guard(|| {
        let fam = handle(family)?;
        let s = eguchi::snapshot(spec(kind, order)?, fam, point(fam, theta, n)?)?;
        write_snapshot(&s, n, metric, gamma, gamma_dual)
    })
}

unsafe fn write_snapshot(
    s: &eguchi::GeometrySnapshot,
    n: usize,
    metric: *mut f64,
    gamma: *mut f64,
    gamma_dual: *mut f64,
) -> Result<(), Failure> {
    if !metric.is_null() {
        copy_matrix(&s.metric, output(metric, n * n, "metric")?);
    }
    if !gamma.is_null() {
        copy_tensor(&s.gamma.gamma, output(gamma, n * n * n, "gamma")?);
    }
    if !gamma_dual.is_null() {
        copy_tensor(&s.gamma_dual.gamma, output(gamma_dual, n * n * n, "gamma_dual")?);
    }
    Ok(())
}

/// Log-derivative of Hartigan's prior with parameter `alpha_h`, into `out[n]`.
///
/// # Safety
/// `theta` and `out` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn igeo_hartigan(
    family: *const IgeoFamily,
    alpha_h: f64,
    theta: *const f64,
    n: usize,
    out: *mut f64,
) -> IgeoStatus {
    guard(|| {
        let fam = handle(family)?;
        let v = hartigan_log_derivative(fam, alpha_h, point(fam, theta, n)?)?;
        output(out, n, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Log of the covolume prior of a geometry label at `theta`, relative to
/// its value at the family anchor.
///
/// # Safety
/// `theta` must hold `n` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn igeo_log_prior(
    family: *const IgeoFamily,
    kind: IgeoLabel,
    order: f64,
    theta: *const f64,
    n: usize,
    out: *mut f64,
) -> IgeoStatus {
    guard(|| {
        let fam = handle(family)?;
        let field = CovolumeField::new(PriorLabel::Geometry(label(kind, order)?), fam)?;
        output(out, 1, "out")?[0] = field.log_value(point(fam, theta, n)?)?;
        Ok(())
    })
}

struct Callback {
    f: unsafe extern "C" fn(*const f64, usize, *mut c_void) -> f64,
    user: usize,
}

/// Laplacian `div ∘ grad` of a callback field under a geometry label.
/// Derivatives of the field are taken by finite differences, and the
/// callback is only invoked on the calling thread.
///
/// # Safety
/// `field` must be safe to call with `user` for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn igeo_laplacian(
    family: *const IgeoFamily,
    kind: IgeoLabel,
    order: f64,
    field: IgeoScalarFn,
    user: *mut c_void,
    theta: *const f64,
    n: usize,
    out: *mut f64,
) -> IgeoStatus {
    guard(|| {
        let fam = handle(family)?;
        let f = field.ok_or_else(|| null("field"))?;
        let cb = Callback { f, user: user as usize };
        let h = ScalarField::new(move |t: &[f64]| unsafe { (cb.f)(t.as_ptr(), t.len(), cb.user as *mut c_void) });
        output(out, 1, "out")?[0] = laplacian(label(kind, order)?, fam, &h, point(fam, theta, n)?)?;
        Ok(())
    })
}
