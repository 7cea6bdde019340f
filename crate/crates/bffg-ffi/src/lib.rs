//! C interface to the `bffg` engine.
//!
//! Objects cross the boundary as opaque pointers. Each one is created by a
//! constructor such as [`bffg_graph_from_json`] and released by the matching
//! `*_free` call. Every fallible call returns a
//! [`BffgStatus`]; the text of the most recent failure on the calling thread
//! is available through [`bffg_last_error`]. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use bffg::graph::{TransitionGraph, VertexId};
use bffg::inference::evidence_estimate;
use bffg::kernel::passes::{
    run_backward_pass, run_forward_pass, BackwardPlan, BackwardResult, ForwardOutcome,
};
use bffg::seed::Seed;
use bffg::sir::{run_experiment, SirConfig};
use bffg::space::Value;
use bffg::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BffgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidGraph = 4,
    Unsupported = 5,
    Numerical = 6,
    ZeroWeight = 7,
    Config = 8,
    Io = 9,
    OutOfRange = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&Error> for BffgStatus {
    fn from(e: &Error) -> Self {
        use Error::*;
        match e {
            Parse(_) => BffgStatus::Parse,
            CycleDetected(_)
            | MissingKernel(_)
            | ObservationOnLatent(_)
            | SpaceMismatch(_)
            | InvalidGraph(_) => BffgStatus::InvalidGraph,
            UnsupportedPair { .. } | UnsupportedFusion(_) | UnsupportedTag(_) => {
                BffgStatus::Unsupported
            }
            ZeroDenominator | ImpossibleState | ZeroH | AllWeightsZero => BffgStatus::ZeroWeight,
            ConfigInvalid(_) => BffgStatus::Config,
            Io(_) => BffgStatus::Io,
            _ => BffgStatus::Numerical,
        }
    }
}

/// A validated transition graph.
pub struct BffgGraph {
    graph: Arc<TransitionGraph>,
}

/// Result of an exact backward pass; keeps its graph alive.
pub struct BffgBackward {
    graph: Arc<TransitionGraph>,
    result: BackwardResult,
}

/// One guided forward sample.
pub struct BffgSample {
    outcome: ForwardOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: BffgStatus, msg: impl Into<String>) -> BffgStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), BffgStatus>) -> BffgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BffgStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(BffgStatus::Panic, msg)
        }
    }
}

fn lift(e: Error) -> BffgStatus {
    fail(BffgStatus::from(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, BffgStatus> {
    if p.is_null() {
        return Err(fail(BffgStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(BffgStatus::InvalidUtf8, e.to_string()))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, BffgStatus> {
    p.as_ref()
        .ok_or_else(|| fail(BffgStatus::NullPointer, format!("{what} handle is null")))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, BffgStatus> {
    p.as_mut()
        .ok_or_else(|| fail(BffgStatus::NullPointer, "output pointer is null"))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL, or
/// 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bffg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Parses and validates a JSON graph document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `graph` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bffg_graph_from_json(
    json: *const c_char,
    graph: *mut *mut BffgGraph,
) -> BffgStatus {
    guard(|| {
        let slot = out(graph)?;
        *slot = ptr::null_mut();
        let g = TransitionGraph::from_json(str_arg(json)?).map_err(lift)?;
        *slot = Box::into_raw(Box::new(BffgGraph { graph: Arc::new(g) }));
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a handle from [`bffg_graph_from_json`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn bffg_graph_free(graph: *mut BffgGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Number of vertices, root and leaves included.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bffg_graph_vertex_count(
    graph: *const BffgGraph,
    count: *mut usize,
) -> BffgStatus {
    guard(|| {
        *out(count)? = obj(graph, "graph")?.graph.len();
        Ok(())
    })
}

/// Dense index of the vertex with the given id, as used by the sample
/// accessors.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bffg_graph_index_of(
    graph: *const BffgGraph,
    id: u64,
    index: *mut usize,
) -> BffgStatus {
    guard(|| {
        let g = &obj(graph, "graph")?.graph;
        *out(index)? = g
            .index_of(VertexId(id))
            .ok_or_else(|| fail(BffgStatus::OutOfRange, format!("no vertex with id {id}")))?;
        Ok(())
    })
}

/// Runs the backward pass with every guiding kernel equal to its forward
/// kernel.
///
/// # Safety
/// `graph` must be a live handle; `backward` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bffg_backward_exact(
    graph: *const BffgGraph,
    backward: *mut *mut BffgBackward,
) -> BffgStatus {
    guard(|| {
        let slot = out(backward)?;
        *slot = ptr::null_mut();
        let g = Arc::clone(&obj(graph, "graph")?.graph);
        let result = run_backward_pass(&g, &BackwardPlan::exact()).map_err(lift)?;
        *slot = Box::into_raw(Box::new(BffgBackward { graph: g, result }));
        Ok(())
    })
}

/// # Safety
/// `backward` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bffg_backward_free(backward: *mut BffgBackward) {
    if !backward.is_null() {
        drop(Box::from_raw(backward));
    }
}

/// `log h̃₀` at the root value.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bffg_backward_log_h0(
    backward: *const BffgBackward,
    log_h0: *mut f64,
) -> BffgStatus {
    guard(|| {
        *out(log_h0)? = obj(backward, "backward")?.result.log_h0;
        Ok(())
    })
}

/// Self-normalised evidence estimate from `draws` guided samples.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bffg_evidence_estimate(
    backward: *const BffgBackward,
    draws: usize,
    seed: u64,
    log_evidence: *mut f64,
    log_se: *mut f64,
) -> BffgStatus {
    guard(|| {
        let b = obj(backward, "backward")?;
        let (est, se) =
            evidence_estimate(&b.graph, &b.result, draws, Seed::new(seed)).map_err(lift)?;
        *out(log_evidence)? = est;
        *out(log_se)? = se;
        Ok(())
    })
}

/// Draws one guided forward sample.
///
/// # Safety
/// `backward` must be a live handle; `sample` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bffg_forward(
    backward: *const BffgBackward,
    seed: u64,
    sample: *mut *mut BffgSample,
) -> BffgStatus {
    guard(|| {
        let slot = out(sample)?;
        *slot = ptr::null_mut();
        let b = obj(backward, "backward")?;
        let outcome = run_forward_pass(&b.graph, &b.result, Seed::new(seed)).map_err(lift)?;
        *slot = Box::into_raw(Box::new(BffgSample { outcome }));
        Ok(())
    })
}

/// # Safety
/// `sample` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bffg_sample_free(sample: *mut BffgSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// `log Ψ` of the sample: `log h̃₀` plus the summed log-weights.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bffg_sample_log_psi(
    sample: *const BffgSample,
    log_psi: *mut f64,
) -> BffgStatus {
    guard(|| {
        *out(log_psi)? = obj(sample, "sample")?.outcome.log_psi;
        Ok(())
    })
}

/// Writes the value at vertex index `index` into `buf`. Real vectors are
/// copied as is; labels are written as doubles and tuples are
/// flattened in order. `written` receives the number of components, which is
/// also set when the buffer is too small.
///
/// # Safety
/// `buf` must point to `len` writable doubles; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bffg_sample_value(
    sample: *const BffgSample,
    index: usize,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> BffgStatus {
    guard(|| {
        let s = obj(sample, "sample")?;
        let n_out = out(written)?;
        let v = s.outcome.sample.value(index).ok_or_else(|| {
            fail(
                BffgStatus::OutOfRange,
                format!("no value at vertex index {index}"),
            )
        })?;
        let mut xs = Vec::new();
        flatten(v, &mut xs);
        *n_out = xs.len();
        if xs.len() > len {
            return Err(fail(
                BffgStatus::BufferTooSmall,
                format!("need {} doubles", xs.len()),
            ));
        }
        if buf.is_null() {
            return Err(fail(BffgStatus::NullPointer, "value buffer is null"));
        }
        ptr::copy_nonoverlapping(xs.as_ptr(), buf, xs.len());
        Ok(())
    })
}

fn flatten(v: &Value, xs: &mut Vec<f64>) {
    match v {
        Value::Real(x) => xs.extend(x.iter()),
        Value::Label(l) => xs.push(*l as f64),
        Value::Labels(ls) => xs.extend(ls.iter().map(|&l| l as f64)),
        Value::Tuple(parts) => parts.iter().for_each(|p| flatten(p, xs)),
    }
}

/// Runs the S/I/R experiment described by the JSON configuration (null for
/// defaults) and writes its artifacts into `out_dir`.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out_dir` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bffg_sir_run(
    config_json: *const c_char,
    out_dir: *const c_char,
) -> BffgStatus {
    guard(|| {
        let cfg = if config_json.is_null() {
            SirConfig::default()
        } else {
            SirConfig::from_json(str_arg(config_json)?).map_err(lift)?
        };
        cfg.validate().map_err(lift)?;
        let dir = str_arg(out_dir)?;
        run_experiment(&cfg, None, Some(Path::new(dir))).map_err(lift)?;
        Ok(())
    })
}
