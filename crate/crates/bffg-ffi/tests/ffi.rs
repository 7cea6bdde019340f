use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use bffg_ffi::*;

const HMM: &str = r#"{
  "vertices": [
    {"id": 0, "role": "root", "space": {"euclidean": 1}},
    {"id": 1, "role": "latent", "space": {"euclidean": 1}},
    {"id": 9, "role": "leaf", "space": {"euclidean": 1}}
  ],
  "edges": [[0, 1], [1, 9]],
  "kernels": [
    {"vertex": 1, "kind": "gaussian_affine", "phi": [[0.3]], "beta": [0.5], "q": [[1.0]]},
    {"vertex": 9, "kind": "gaussian_affine", "phi": [[1.0]], "beta": [0.0], "q": [[0.5]]}
  ],
  "observations": [{"vertex": 9, "value": {"real": [1.1]}}],
  "root": {"id": 0, "value": {"real": [0.0]}}
}"#;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { bffg_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(511)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn graph() -> *mut BffgGraph {
    let json = CString::new(HMM).unwrap();
    let mut g = ptr::null_mut();
    assert_eq!(
        unsafe { bffg_graph_from_json(json.as_ptr(), &mut g) },
        BffgStatus::Ok,
        "{}",
        last_error()
    );
    assert!(!g.is_null());
    g
}

#[test]
fn passes_through_the_c_interface() {
    unsafe {
        let g = graph();
        let mut n = 0;
        assert_eq!(bffg_graph_vertex_count(g, &mut n), BffgStatus::Ok);
        assert_eq!(n, 3);

        let mut bw = ptr::null_mut();
        assert_eq!(bffg_backward_exact(g, &mut bw), BffgStatus::Ok);

        let mut log_h0 = 0.0;
        assert_eq!(bffg_backward_log_h0(bw, &mut log_h0), BffgStatus::Ok);
        // y = x₁ + noise with x₁ ~ N(0.5, 1): y ~ N(0.5, 1.5)
        let want = -0.5 * (2.0 * std::f64::consts::PI * 1.5).ln() - 0.6f64.powi(2) / 3.0;
        assert!((log_h0 - want).abs() < 1e-12, "{log_h0} vs {want}");

        let mut s = ptr::null_mut();
        assert_eq!(bffg_forward(bw, 7, &mut s), BffgStatus::Ok);
        let mut log_psi = 0.0;
        assert_eq!(bffg_sample_log_psi(s, &mut log_psi), BffgStatus::Ok);
        assert!((log_psi - log_h0).abs() < 1e-12);

        let mut buf = [f64::NAN; 2];
        let mut written = 0;
        let mut v = 0;
        assert_eq!(bffg_graph_index_of(g, 1, &mut v), BffgStatus::Ok);
        assert_eq!(
            bffg_sample_value(s, v, buf.as_mut_ptr(), 2, &mut written),
            BffgStatus::Ok
        );
        assert_eq!(written, 1);
        assert!(buf[0].is_finite() && buf[1].is_nan());
        assert_eq!(bffg_last_error(ptr::null_mut(), 0), 0);
        bffg_sample_free(s);
        // the backward handle keeps the graph alive on its own
        bffg_graph_free(g);

        let (mut ev, mut se) = (0.0, 0.0);
        assert_eq!(
            bffg_evidence_estimate(bw, 100, 1, &mut ev, &mut se),
            BffgStatus::Ok
        );
        assert!((ev - log_h0).abs() < 1e-12 && se < 1e-12);
        bffg_backward_free(bw);
    }
}

#[test]
fn same_seed_same_sample() {
    unsafe {
        let g = graph();
        let mut bw = ptr::null_mut();
        assert_eq!(bffg_backward_exact(g, &mut bw), BffgStatus::Ok);
        let draw = |seed| {
            let mut s = ptr::null_mut();
            assert_eq!(bffg_forward(bw, seed, &mut s), BffgStatus::Ok);
            let mut x = [0.0];
            let mut n = 0;
            assert_eq!(
                bffg_sample_value(s, 1, x.as_mut_ptr(), 1, &mut n),
                BffgStatus::Ok
            );
            bffg_sample_free(s);
            x[0]
        };
        assert_eq!(draw(3).to_bits(), draw(3).to_bits());
        assert_ne!(draw(3), draw(4));
        bffg_backward_free(bw);
        bffg_graph_free(g);
    }
}

#[test]
fn failures_map_to_status_codes() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(
            bffg_graph_from_json(ptr::null(), &mut g),
            BffgStatus::NullPointer
        );
        assert!(g.is_null());

        let bad = CString::new("{\"vertices\": []").unwrap();
        assert_eq!(
            bffg_graph_from_json(bad.as_ptr(), &mut g),
            BffgStatus::Parse
        );
        assert!(last_error().contains("parse"));

        let cyclic =
            CString::new(HMM.replace("[[0, 1], [1, 9]]", "[[0, 1], [1, 9], [9, 1]]")).unwrap();
        assert_eq!(
            bffg_graph_from_json(cyclic.as_ptr(), &mut g),
            BffgStatus::InvalidGraph
        );

        let invalid = [0xffu8 as c_char, 0];
        assert_eq!(
            bffg_graph_from_json(invalid.as_ptr(), &mut g),
            BffgStatus::InvalidUtf8
        );

        let g = graph();
        let mut idx = 0;
        assert_eq!(bffg_graph_index_of(g, 9, &mut idx), BffgStatus::Ok);
        assert_eq!(bffg_graph_index_of(g, 42, &mut idx), BffgStatus::OutOfRange);
        assert!(last_error().contains("42"));

        let mut bw = ptr::null_mut();
        bffg_backward_exact(g, &mut bw);
        let mut s = ptr::null_mut();
        bffg_forward(bw, 1, &mut s);
        let mut written = 0;
        assert_eq!(
            bffg_sample_value(s, 1, ptr::null_mut(), 0, &mut written),
            BffgStatus::BufferTooSmall
        );
        assert_eq!(written, 1);
        assert_eq!(
            bffg_sample_value(s, 99, ptr::null_mut(), 0, &mut written),
            BffgStatus::OutOfRange
        );
        assert_eq!(
            bffg_backward_log_h0(ptr::null(), ptr::null_mut()),
            BffgStatus::NullPointer
        );

        // long messages are truncated but still terminated
        let mut tiny = [1 as c_char; 4];
        let full = bffg_last_error(tiny.as_mut_ptr(), tiny.len());
        assert!(full > 3);
        assert_eq!(tiny[3], 0);

        bffg_sample_free(s);
        bffg_backward_free(bw);
        bffg_graph_free(g);
        bffg_graph_free(ptr::null_mut());
    }
}

#[test]
fn sir_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().join("sir").to_str().unwrap()).unwrap();
    let cfg = CString::new(r#"{"mcmc": {"iterations": 40}}"#).unwrap();
    assert_eq!(
        unsafe { bffg_sir_run(cfg.as_ptr(), out.as_ptr()) },
        BffgStatus::Ok
    );
    assert!(dir.path().join("sir/summary.json").is_file());

    let bad = CString::new(r#"{"n": 0}"#).unwrap();
    assert_eq!(
        unsafe { bffg_sir_run(bad.as_ptr(), out.as_ptr()) },
        BffgStatus::Config
    );
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("bffg.h").is_file());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "bffg.h"
int run(const char *json) {
    BffgGraph *g = NULL;
    BffgBackward *bw = NULL;
    BffgSample *s = NULL;
    double log_h0 = 0.0, x[4];
    size_t n = 0;
    if (bffg_graph_from_json(json, &g) != BFFG_STATUS_OK) return 1;
    if (bffg_backward_exact(g, &bw) != BFFG_STATUS_OK) return 2;
    bffg_backward_log_h0(bw, &log_h0);
    bffg_forward(bw, 1u, &s);
    bffg_sample_value(s, 0, x, 4, &n);
    bffg_sample_free(s);
    bffg_backward_free(bw);
    bffg_graph_free(g);
    return log_h0 < 0.0 ? 0 : 3;
}
"#,
    )
    .unwrap();
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(status) = Command::new(cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(&include)
            .arg(&src)
            .status()
        else {
            eprintln!("{cc} not available; skipping");
            continue;
        };
        assert!(status.success(), "{cc} rejected the header");
    }
}
