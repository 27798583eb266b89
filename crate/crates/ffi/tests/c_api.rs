use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use schatten_lab::discrete_operators::{commutator, riesz_matrix, RieszMode};
use schatten_lab::dyadic_grid::GridWindow;
use schatten_lab::function_spaces::besov_continuous;
use schatten_lab::schatten_spectra::{schatten_norm, singular_values};
use schatten_lab::symbols::{symbol_library, SymbolSpec};
use schatten_lab::weights::{a2_constant, Weight, WeightSpec};
use schatten_lab_ffi::*;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// `target/<profile>`, where cargo leaves the shared library.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

struct Expected {
    s1: f64,
    weak: f64,
    besov: f64,
    a2: f64,
}

fn expected() -> Expected {
    let win = GridWindow::unit(2, 8).unwrap();
    let b = symbol_library(&SymbolSpec::Gaussian { width: 0.1 }, &win).unwrap();
    let w = Weight::from_spec(&win, &"power:0.5".parse::<WeightSpec>().unwrap()).unwrap();
    let op = commutator(&b, &riesz_matrix(1, &win, RieszMode::Filtered).unwrap()).unwrap().with_weight(&w).unwrap();
    let s = singular_values(&op).unwrap();
    Expected { s1: s.largest(), weak: schatten_norm(&s, 2.0, f64::INFINITY).unwrap(), besov: besov_continuous(&b, 4.0).unwrap(), a2: a2_constant(&w) }
}

#[test]
fn rust_calls_match_the_core() {
    let e = expected();
    unsafe {
        let mut win = ptr::null_mut();
        assert_eq!(sl_window_new(2, 8, &mut win), SlStatus::Ok);
        let mut b = ptr::null_mut();
        let spec = CString::new("gaussian:0.1").unwrap();
        assert_eq!(sl_function_from_symbol(win, spec.as_ptr(), &mut b), SlStatus::Ok);
        let mut w = ptr::null_mut();
        let wspec = CString::new("power:0.5").unwrap();
        assert_eq!(sl_weight_from_spec(win, wspec.as_ptr(), &mut w), SlStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(sl_commutator_spectrum(b, w, 1, SlRieszMode::Filtered, &mut s), SlStatus::Ok);
        let mut weak = 0.0;
        assert_eq!(sl_spectrum_schatten(s, 2.0, f64::INFINITY, &mut weak), SlStatus::Ok);
        assert_eq!(weak, e.weak);
        let mut vals = vec![0.0; 64];
        assert_eq!(sl_spectrum_values(s, vals.as_mut_ptr(), vals.len()), SlStatus::Ok);
        assert_eq!(vals[0], e.s1);

        // symbol samples round trip through from_values
        let mut samples = vec![0.0; 64];
        assert_eq!(sl_function_values(b, samples.as_mut_ptr(), 64), SlStatus::Ok);
        let mut b2 = ptr::null_mut();
        assert_eq!(sl_function_from_values(win, samples.as_ptr(), 64, &mut b2), SlStatus::Ok);
        let mut besov = 0.0;
        assert_eq!(sl_besov_continuous(b2, 4.0, &mut besov), SlStatus::Ok);
        assert_eq!(besov, e.besov);
        assert_eq!(sl_function_from_values(win, samples.as_ptr(), 63, &mut b2), SlStatus::InvalidArgument);

        // the weight lives on another window
        let mut other = ptr::null_mut();
        assert_eq!(sl_window_new(2, 4, &mut other), SlStatus::Ok);
        let mut w4 = ptr::null_mut();
        assert_eq!(sl_weight_from_spec(other, wspec.as_ptr(), &mut w4), SlStatus::Ok);
        let mut s2 = ptr::null_mut();
        assert_eq!(sl_commutator_spectrum(b, w4, 1, SlRieszMode::Filtered, &mut s2), SlStatus::IncompatibleGrids);
        assert!(s2.is_null());
        let msg = CStr::from_ptr(sl_last_error()).to_str().unwrap();
        assert!(msg.contains("window"), "{msg}");

        let bad = CString::new("[besov]\ngrid_sizes = [6]\n").unwrap();
        let mut report = ptr::null_mut();
        let mut passed = 0;
        assert_eq!(sl_verify(bad.as_ptr(), &mut report, &mut passed), SlStatus::Config);
        assert!(report.is_null());

        sl_spectrum_free(s);
        sl_weight_free(w);
        sl_weight_free(w4);
        sl_function_free(b);
        sl_function_free(b2);
        sl_window_free(win);
        sl_window_free(other);
    }
}

#[test]
fn verify_returns_reports_as_json() {
    let cfg = CString::new("[besov]\ngrid_sizes = [8, 16]\n[necessity]\ngrid_sizes = [16]\ncubes = 3\n").unwrap();
    let mut report = ptr::null_mut();
    let mut passed = 0;
    unsafe {
        assert_eq!(sl_verify(cfg.as_ptr(), &mut report, &mut passed), SlStatus::Ok);
        let text = CStr::from_ptr(report).to_str().unwrap().to_owned();
        sl_string_free(report);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let docs = v.as_array().unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(passed, 1);
        for d in docs {
            assert_eq!(d["passed"], true);
            assert_eq!(d["config_sha256"].as_str().unwrap().len(), 64);
        }
    }
}

#[test]
fn header_is_current_and_valid_c() {
    let header = std::fs::read_to_string(crate_dir().join("include/schatten_lab.h")).unwrap();
    for name in ["sl_window_new", "sl_commutator_spectrum", "sl_verify", "sl_last_error", "SL_STATUS_PANIC", "SL_RIESZ_MODE_FILTERED"] {
        assert!(header.contains(name), "{name} missing from header");
    }
    for std in ["-std=c99", "-std=c11"] {
        let out = Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Wextra", "-Werror", std, "-I"])
            .arg(crate_dir().join("include"))
            .arg(crate_dir().join("tests/c_client.c"))
            .output()
            .expect("a C compiler is installed");
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn c_client_links_and_agrees_with_rust() {
    let dir = artifact_dir();
    assert!(dir.join("libschatten_lab_ffi.so").exists(), "shared library not found in {}", dir.display());
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("c_client");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c_client.c"))
        .arg("-o")
        .arg(&exe)
        .arg(format!("-L{}", dir.display()))
        .arg(format!("-Wl,-rpath,{}", dir.display()))
        .args(["-lschatten_lab_ffi", "-lm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let field = |key: &str| -> String {
        stdout.lines().find_map(|l| l.strip_prefix(&format!("{key} "))).unwrap_or_else(|| panic!("{key} missing: {stdout}")).to_owned()
    };
    let e = expected();
    assert_eq!(field("version"), env!("CARGO_PKG_VERSION"));
    assert_eq!(field("window"), "64 0 2");
    assert_eq!(field("s1").parse::<f64>().unwrap(), e.s1);
    assert_eq!(field("weak").parse::<f64>().unwrap(), e.weak);
    assert_eq!(field("besov").parse::<f64>().unwrap(), e.besov);
    assert_eq!(field("a2").parse::<f64>().unwrap(), e.a2);
    assert_eq!(field("verify"), "1 1");
}
