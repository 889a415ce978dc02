//! C ABI for the velflow library.
//!
//! Opaque handles, integer status codes, and flat f64 buffers, so any
//! language with a C FFI can load a trained model and evaluate the flow.
//! The matching header lives in `include/velflow.h` (kept in sync with
//! `cbindgen.toml`; regenerate with `cbindgen --config cbindgen.toml`).
//!
//! Conventions:
//! * every fallible function returns a [`VfStatus`]; outputs go through
//!   pointers;
//! * a returned `*mut VfModel` handle is owned by the caller and must be
//!   released with [`vf_model_free`];
//! * [`vf_last_error`] retrieves a UTF-8 description of the most recent
//!   failure on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::Path;
use std::ptr;

use velflow::io::{load_model, save_model, SavedFlow, SavedModel};
use velflow::rng::Rng;
use velflow::targets::BaseDistribution;
use velflow::Error;

/// Status codes mirroring the library's error taxonomy.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numeric = 3,
    Io = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> VfStatus {
    match err {
        Error::Io { .. } => VfStatus::Io,
        Error::NonFinite { .. }
        | Error::NonFiniteCell { .. }
        | Error::SingularCell { .. }
        | Error::SingularMatrix(_)
        | Error::Diverged { .. }
        | Error::StepUnderflow { .. } => VfStatus::Numeric,
        _ => VfStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> VfStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Copy the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `len` bytes). Returns the full message length.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn vf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Opaque handle: a loaded model document (flow plus base distribution).
pub struct VfModel {
    doc: SavedModel,
}

impl VfModel {
    fn dim(&self) -> usize {
        match &self.doc.flow {
            SavedFlow::Ddnf { spec, .. } => spec.dim,
            SavedFlow::Planar { dim, .. } => *dim,
        }
    }

    fn context_dim(&self) -> usize {
        match &self.doc.flow {
            SavedFlow::Ddnf { spec, .. } => spec.context_dim,
            SavedFlow::Planar { .. } => 0,
        }
    }
}

unsafe fn cstr_to_path<'a>(ptr: *const c_char) -> Result<&'a Path, VfStatus> {
    if ptr.is_null() {
        set_error("null path pointer");
        return Err(VfStatus::NullPointer);
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(VfStatus::InvalidArgument)
        }
    }
}

/// Load a model document written by `velflow fit` or [`vf_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vf_model_load(path: *const c_char, out: *mut *mut VfModel) -> VfStatus {
    if out.is_null() {
        set_error("null output pointer");
        return VfStatus::NullPointer;
    }
    let path = match unsafe { cstr_to_path(path) } {
        Ok(p) => p,
        Err(status) => return status,
    };
    match load_model(path) {
        Ok(doc) => {
            unsafe { *out = Box::into_raw(Box::new(VfModel { doc })) };
            VfStatus::Ok
        }
        Err(err) => fail(err),
    }
}

/// Write the model document to `path`.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vf_model_save(model: *const VfModel, path: *const c_char) -> VfStatus {
    let Some(model) = (unsafe { model.as_ref() }) else {
        set_error("null model handle");
        return VfStatus::NullPointer;
    };
    let path = match unsafe { cstr_to_path(path) } {
        Ok(p) => p,
        Err(status) => return status,
    };
    match save_model(&model.doc, path) {
        Ok(()) => VfStatus::Ok,
        Err(err) => fail(err),
    }
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must have come from [`vf_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vf_model_free(model: *mut VfModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Latent dimension of the flow (0 for a null handle).
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vf_model_dim(model: *const VfModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.dim())
}

/// Context dimension (0 for unconditioned flows or a null handle).
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vf_model_context_dim(model: *const VfModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.context_dim())
}

struct EvalRequest<'a> {
    z: &'a [f64],
    context: Option<&'a [f64]>,
}

unsafe fn eval_request<'a>(
    model: &VfModel,
    z: *const f64,
    dim: usize,
    context: *const f64,
    context_dim: usize,
) -> Result<EvalRequest<'a>, VfStatus> {
    if z.is_null() {
        set_error("null input buffer");
        return Err(VfStatus::NullPointer);
    }
    if dim != model.dim() {
        set_error(format!("dim {dim} does not match model dim {}", model.dim()));
        return Err(VfStatus::InvalidArgument);
    }
    let context = if context.is_null() {
        None
    } else {
        Some(unsafe { std::slice::from_raw_parts(context, context_dim) })
    };
    match (&context, model.context_dim()) {
        (None, 0) => {}
        (Some(c), expected) if expected > 0 && c.len() == expected => {}
        (Some(_), 0) => {
            set_error("model takes no context");
            return Err(VfStatus::InvalidArgument);
        }
        (None, expected) => {
            set_error(format!("model requires a context of length {expected}"));
            return Err(VfStatus::InvalidArgument);
        }
        (Some(c), expected) => {
            set_error(format!("context length {} != {expected}", c.len()));
            return Err(VfStatus::InvalidArgument);
        }
    }
    Ok(EvalRequest { z: unsafe { std::slice::from_raw_parts(z, dim) }, context })
}

/// Forward map: writes φ(z) to `out_z` (length `dim`) and the accumulated
/// log-determinant to `out_logdet` (may be null).
///
/// # Safety
/// Buffers must be valid for `dim` f64 reads/writes as documented.
#[no_mangle]
pub unsafe extern "C" fn vf_forward(
    model: *const VfModel,
    z: *const f64,
    dim: usize,
    context: *const f64,
    context_dim: usize,
    out_z: *mut f64,
    out_logdet: *mut f64,
) -> VfStatus {
    unsafe { vf_map(model, z, dim, context, context_dim, out_z, out_logdet, false) }
}

/// Inverse map: writes φ⁻¹(z) and the backward-pass log-determinant.
///
/// # Safety
/// Same contract as [`vf_forward`].
#[no_mangle]
pub unsafe extern "C" fn vf_inverse(
    model: *const VfModel,
    z: *const f64,
    dim: usize,
    context: *const f64,
    context_dim: usize,
    out_z: *mut f64,
    out_logdet: *mut f64,
) -> VfStatus {
    unsafe { vf_map(model, z, dim, context, context_dim, out_z, out_logdet, true) }
}

#[allow(clippy::too_many_arguments)]
unsafe fn vf_map(
    model: *const VfModel,
    z: *const f64,
    dim: usize,
    context: *const f64,
    context_dim: usize,
    out_z: *mut f64,
    out_logdet: *mut f64,
    inverse: bool,
) -> VfStatus {
    let Some(model) = (unsafe { model.as_ref() }) else {
        set_error("null model handle");
        return VfStatus::NullPointer;
    };
    if out_z.is_null() {
        set_error("null output buffer");
        return VfStatus::NullPointer;
    }
    let req = match unsafe { eval_request(model, z, dim, context, context_dim) } {
        Ok(r) => r,
        Err(status) => return status,
    };

    let result = match &model.doc.flow {
        SavedFlow::Ddnf { .. } => model.doc.clone().into_ddnf().and_then(|(flow, _)| {
            let r = if inverse {
                flow.inverse(req.z, req.context)?
            } else {
                flow.forward(req.z, req.context, false)?
            };
            Ok((r.z_out, r.sum_logdet))
        }),
        SavedFlow::Planar { .. } => model.doc.clone().into_planar().and_then(|(stack, _)| {
            if inverse {
                let mut current = req.z.to_vec();
                for layer in stack.layers()?.iter().rev() {
                    current = velflow::targets::planar_inverse(layer, &current);
                }
                let (_, logdet) = stack.forward(&current)?;
                Ok((current, -logdet))
            } else {
                stack.forward(req.z)
            }
        }),
    };

    match result {
        Ok((z_out, logdet)) => {
            unsafe {
                ptr::copy_nonoverlapping(z_out.as_ptr(), out_z, dim);
                if !out_logdet.is_null() {
                    *out_logdet = logdet;
                }
            }
            VfStatus::Ok
        }
        Err(err) => fail(err),
    }
}

/// Log-density of the pushforward distribution at `z`.
///
/// # Safety
/// Buffers must be valid as documented on [`vf_forward`].
#[no_mangle]
pub unsafe extern "C" fn vf_log_density(
    model: *const VfModel,
    z: *const f64,
    dim: usize,
    context: *const f64,
    context_dim: usize,
    out: *mut f64,
) -> VfStatus {
    let Some(model) = (unsafe { model.as_ref() }) else {
        set_error("null model handle");
        return VfStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output pointer");
        return VfStatus::NullPointer;
    }
    let req = match unsafe { eval_request(model, z, dim, context, context_dim) } {
        Ok(r) => r,
        Err(status) => return status,
    };
    let result = match &model.doc.flow {
        SavedFlow::Ddnf { .. } => model
            .doc
            .clone()
            .into_ddnf()
            .and_then(|(flow, base)| flow.log_density(&base, req.z, req.context)),
        SavedFlow::Planar { .. } => model
            .doc
            .clone()
            .into_planar()
            .and_then(|(stack, base)| stack.log_density(&base, req.z)),
    };
    match result {
        Ok(ld) => {
            unsafe { *out = ld };
            VfStatus::Ok
        }
        Err(err) => fail(err),
    }
}

/// Draw `count` pushforward samples into `out` (row-major `count x dim`),
/// deterministically per seed. Context-conditioned models are not supported
/// through this entry point.
///
/// # Safety
/// `out` must be valid for `count * dim` f64 writes.
#[no_mangle]
pub unsafe extern "C" fn vf_sample(
    model: *const VfModel,
    count: usize,
    seed: u64,
    out: *mut f64,
) -> VfStatus {
    let Some(model) = (unsafe { model.as_ref() }) else {
        set_error("null model handle");
        return VfStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output buffer");
        return VfStatus::NullPointer;
    }
    if model.context_dim() != 0 {
        set_error("vf_sample does not support context-conditioned models");
        return VfStatus::InvalidArgument;
    }
    let dim = model.dim();
    let mut rng = Rng::new(seed);

    enum Loaded {
        Ddnf(velflow::flow::FlowModel, BaseDistribution),
        Planar(velflow::targets::PlanarStack, BaseDistribution),
    }
    let loaded = match &model.doc.flow {
        SavedFlow::Ddnf { .. } => match model.doc.clone().into_ddnf() {
            Ok((flow, base)) => Loaded::Ddnf(flow, base),
            Err(err) => return fail(err),
        },
        SavedFlow::Planar { .. } => match model.doc.clone().into_planar() {
            Ok((stack, base)) => Loaded::Planar(stack, base),
            Err(err) => return fail(err),
        },
    };

    for i in 0..count {
        let z_k = match &loaded {
            Loaded::Ddnf(flow, base) => {
                let z0 = base.sample(&mut rng);
                match flow.forward(&z0, None, false) {
                    Ok(r) => r.z_out,
                    Err(err) => return fail(err),
                }
            }
            Loaded::Planar(stack, base) => {
                let z0 = base.sample(&mut rng);
                match stack.forward(&z0) {
                    Ok((z, _)) => z,
                    Err(err) => return fail(err),
                }
            }
        };
        unsafe { ptr::copy_nonoverlapping(z_k.as_ptr(), out.add(i * dim), dim) };
    }
    VfStatus::Ok
}
