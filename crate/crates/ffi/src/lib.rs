//! C ABI over `insitu-core`.
//!
//! Every function returns an [`InsituStatus`]. On failure a message is kept
//! per thread and can be read with [`insitu_last_error`]. Handles are opaque
//! and must be released with their `_free` function. Buffers returned by
//! Rust are released with [`insitu_buffer_free`] or [`insitu_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use insitu_core::compress::{compress_fields, reconstruct, Codec, CompressedArchive, TruncationSpec};
use insitu_core::engine::run;
use insitu_core::engine::InSituConfig;
use insitu_core::proxysim::{self, FieldKind, Mesh, MeshConfig, SimState};
use insitu_core::spectral::{dlt_forward, dlt_inverse, gll_basis, Basis1D, ElementField};
use insitu_core::workers::WorkerGroup;
use insitu_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsituStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Run = 4,
    Format = 5,
    Io = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> InsituStatus {
    match e.root() {
        Error::Config(_) | Error::InvalidOrder(_) => InsituStatus::Config,
        Error::Dimension(_) => InsituStatus::InvalidArgument,
        Error::Format(_) => InsituStatus::Format,
        Error::Io { .. } => InsituStatus::Io,
        _ => InsituStatus::Run,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> InsituStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => InsituStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            InsituStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(&msg);
            InsituStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside insitu");
            InsituStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    non_null(s, what)?;
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn insitu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// One-dimensional GLL basis.
pub struct InsituBasis {
    inner: Basis1D,
}

/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn insitu_basis_new(order: usize, out: *mut *mut InsituBasis) -> InsituStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = gll_basis(order)?;
        *out = Box::into_raw(Box::new(InsituBasis { inner }));
        Ok(())
    })
}

/// # Safety
/// `basis` must be null or a handle from [`insitu_basis_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn insitu_basis_free(basis: *mut InsituBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Nodes per axis, `p + 1`; 0 for a null handle.
///
/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn insitu_basis_len(basis: *const InsituBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.inner.len())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if len != src.len() {
        return Err(Failure::Arg(format!("buffer holds {len} values, need {}", src.len())));
    }
    slice_mut(out, len, "out")?.copy_from_slice(src);
    Ok(())
}

/// Copies the `p + 1` GLL nodes into `out`.
///
/// # Safety
/// `basis` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn insitu_basis_nodes(basis: *const InsituBasis, out: *mut f64, len: usize) -> InsituStatus {
    guard(|| {
        let b = basis.as_ref().ok_or(Failure::Null("basis"))?;
        copy_out(b.inner.nodes(), out, len)
    })
}

/// Copies the `p + 1` GLL weights into `out`.
///
/// # Safety
/// `basis` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn insitu_basis_weights(basis: *const InsituBasis, out: *mut f64, len: usize) -> InsituStatus {
    guard(|| {
        let b = basis.as_ref().ok_or(Failure::Null("basis"))?;
        copy_out(b.inner.weights(), out, len)
    })
}

unsafe fn element_pair<'a>(
    basis: *const InsituBasis,
    input: *const f64,
    output: *mut f64,
    len: usize,
) -> Result<(&'a Basis1D, &'a [f64], &'a mut [f64]), Failure> {
    let b = &basis.as_ref().ok_or(Failure::Null("basis"))?.inner;
    if len != b.element_len() {
        return Err(Failure::Arg(format!("element needs {} values, got {len}", b.element_len())));
    }
    Ok((b, slice(input, len, "input")?, slice_mut(output, len, "output")?))
}

/// Nodal values of one element (x fastest) to Legendre coefficients.
///
/// # Safety
/// `values` and `coeffs` must each hold `len = (p + 1)^3` doubles.
#[no_mangle]
pub unsafe extern "C" fn insitu_dlt_forward(
    basis: *const InsituBasis,
    values: *const f64,
    coeffs: *mut f64,
    len: usize,
) -> InsituStatus {
    guard(|| {
        let (b, input, output) = element_pair(basis, values, coeffs, len)?;
        let field = ElementField::new(b.order(), 0, input.to_vec())?;
        output.copy_from_slice(&dlt_forward(&field, b)?.coeffs);
        Ok(())
    })
}

/// Legendre coefficients of one element back to nodal values.
///
/// # Safety
/// `coeffs` and `values` must each hold `len = (p + 1)^3` doubles.
#[no_mangle]
pub unsafe extern "C" fn insitu_dlt_inverse(
    basis: *const InsituBasis,
    coeffs: *const f64,
    values: *mut f64,
    len: usize,
) -> InsituStatus {
    guard(|| {
        let (b, input, output) = element_pair(basis, coeffs, values, len)?;
        let block = insitu_core::spectral::SpectralBlock {
            order: b.order(),
            element_id: 0,
            coeffs: input.to_vec(),
            kept_mask: vec![true; len],
        };
        output.copy_from_slice(&dlt_inverse(&block, b)?.values);
        Ok(())
    })
}

/// Truncates and encodes `n_elements` elements of nodal values into an
/// archive. `codec` is 0 for raw, 1 for deflate. The archive is returned in
/// `*out_buf` / `*out_len` and must be released with [`insitu_buffer_free`].
///
/// # Safety
/// `values` must hold `n_elements * (p + 1)^3` doubles; `field_name` must be
/// NUL-terminated; `out_buf` and `out_len` valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn insitu_compress(
    basis: *const InsituBasis,
    values: *const f64,
    n_elements: usize,
    epsilon: f64,
    codec: u8,
    field_name: *const c_char,
    out_buf: *mut *mut u8,
    out_len: *mut usize,
) -> InsituStatus {
    guard(|| {
        let b = &basis.as_ref().ok_or(Failure::Null("basis"))?.inner;
        non_null(out_buf, "out_buf")?;
        non_null(out_len, "out_len")?;
        let name = str_arg(field_name, "field_name")?;
        let codec = Codec::from_id(codec).map_err(Error::from)?;
        let spec = TruncationSpec::new(epsilon)?;
        let n3 = b.element_len();
        let all = slice(values, n_elements * n3, "values")?;
        let fields = all
            .chunks(n3)
            .enumerate()
            .map(|(e, v)| ElementField::new(b.order(), e as u64, v.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let bytes = compress_fields(&fields, b, spec, name, codec)?.into_bytes().into_boxed_slice();
        *out_len = bytes.len();
        *out_buf = Box::into_raw(bytes) as *mut u8;
        Ok(())
    })
}

/// # Safety
/// `buf`/`len` must come from [`insitu_compress`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn insitu_buffer_free(buf: *mut u8, len: usize) {
    if !buf.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf, len)));
    }
}

/// Decodes an archive into nodal values. With `out` NULL only the required
/// number of doubles is stored in `*out_count`. A short buffer fails with
/// `INVALID_ARGUMENT` and also reports the required count.
///
/// # Safety
/// `bytes` must hold `len` bytes; `out` null or valid for `capacity` writes;
/// `out_count` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn insitu_decompress(
    bytes: *const u8,
    len: usize,
    out: *mut f64,
    capacity: usize,
    out_count: *mut usize,
) -> InsituStatus {
    guard(|| {
        non_null(out_count, "out_count")?;
        let data = slice(bytes, len, "bytes")?;
        let archive = CompressedArchive::from_bytes(data).map_err(Error::from)?;
        let order = archive.meta.order;
        let need = archive.element_count() * (order + 1).pow(3);
        *out_count = need;
        if out.is_null() {
            return Ok(());
        }
        if capacity < need {
            return Err(Failure::Arg(format!("buffer holds {capacity} values, need {need}")));
        }
        let basis = gll_basis(order)?;
        let (_, fields) = reconstruct(data, &basis)?;
        let dst = slice_mut(out, need, "out")?;
        for (chunk, f) in dst.chunks_mut(basis.element_len()).zip(&fields) {
            chunk.copy_from_slice(&f.values);
        }
        Ok(())
    })
}

/// Proxy simulation state plus its worker group.
pub struct InsituSim {
    state: SimState,
    workers: WorkerGroup,
}

/// Creates a simulation from a mesh config JSON object (`"{}"` for the
/// defaults), stepping on `workers` threads.
///
/// # Safety
/// `mesh_json` must be NUL-terminated; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn insitu_sim_new(
    mesh_json: *const c_char,
    workers: usize,
    out: *mut *mut InsituSim,
) -> InsituStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = str_arg(mesh_json, "mesh_json")?;
        let cfg: MeshConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("mesh JSON: {e}")))?;
        if workers == 0 {
            return Err(Failure::Arg("workers must be >= 1".into()));
        }
        let mesh = Arc::new(Mesh::new(cfg)?);
        let sim = InsituSim {
            state: SimState::from_mesh(mesh),
            workers: WorkerGroup::new(workers, "ffi-sim")?,
        };
        *out = Box::into_raw(Box::new(sim));
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a handle from [`insitu_sim_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn insitu_sim_free(sim: *mut InsituSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances the simulation by `steps` steps.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn insitu_sim_step(sim: *mut InsituSim, steps: u64) -> InsituStatus {
    guard(|| {
        let s = sim.as_mut().ok_or(Failure::Null("sim"))?;
        for _ in 0..steps {
            proxysim::step(&mut s.state, &s.workers);
        }
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn insitu_sim_element_count(sim: *const InsituSim) -> usize {
    sim.as_ref().map_or(0, |s| s.state.element_count())
}

/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn insitu_sim_step_index(sim: *const InsituSim) -> u64 {
    sim.as_ref().map_or(0, |s| s.state.step_index)
}

/// Copies one field (0 pressure, 1..3 velocity x..z), element by element.
///
/// # Safety
/// `sim` must be a live handle; `out` valid for `len` writes, where `len`
/// is element count times `(p + 1)^3`.
#[no_mangle]
pub unsafe extern "C" fn insitu_sim_copy_field(
    sim: *const InsituSim,
    field: u32,
    out: *mut f64,
    len: usize,
) -> InsituStatus {
    guard(|| {
        let s = sim.as_ref().ok_or(Failure::Null("sim"))?;
        let kind = *FieldKind::ALL
            .get(field as usize)
            .ok_or_else(|| Failure::Arg(format!("no field with index {field}")))?;
        let elements = s.state.field(kind);
        let n3 = s.state.mesh.basis.element_len();
        if len != elements.len() * n3 {
            return Err(Failure::Arg(format!("buffer holds {len} values, need {}", elements.len() * n3)));
        }
        let dst = slice_mut(out, len, "out")?;
        for (chunk, f) in dst.chunks_mut(n3).zip(elements) {
            chunk.copy_from_slice(&f.values);
        }
        Ok(())
    })
}

/// Runs an engine config given as JSON. On success `*summary_json` holds a
/// JSON object with the timing summary and output digests; release it with
/// [`insitu_string_free`].
///
/// # Safety
/// `config_json` must be NUL-terminated; `summary_json` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn insitu_run_config(
    config_json: *const c_char,
    summary_json: *mut *mut c_char,
) -> InsituStatus {
    guard(|| {
        non_null(summary_json, "summary_json")?;
        let cfg = InSituConfig::from_json(str_arg(config_json, "config_json")?)?;
        let (record, _) = run(&cfg)?;
        let value = serde_json::json!({
            "summary": record.summary(cfg.warmup_steps),
            "outputs_digest": record.outputs.content_digest(),
            "bytes_written": record.outputs.bytes_written(),
            "final_state_digest": record.final_state_digest,
        });
        let text = CString::new(value.to_string()).map_err(|e| Failure::Arg(e.to_string()))?;
        *summary_json = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn insitu_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
