use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use schatten_lab::discrete_operators::{commutator, riesz_matrix, RieszMode};
use schatten_lab::dyadic_grid::{GridWindow, Shift};
use schatten_lab::function_spaces::{besov_continuous, besov_dyadic};
use schatten_lab::schatten_spectra::singular_values;
use schatten_lab::symbols::{symbol_library, SymbolSpec};
use schatten_lab::weights::{Weight, WeightSpec};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schatten-lab")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn besov_reports_library_values() {
    let out = run(&["besov", "--p", "4", "--symbol", "gaussian", "--n", "2", "--N", "64"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let win = GridWindow::unit(2, 64).unwrap();
    let b = symbol_library(&SymbolSpec::Gaussian { width: 0.1 }, &win).unwrap();
    assert_eq!(v["continuous"].as_f64().unwrap(), besov_continuous(&b, 4.0).unwrap());
    assert_eq!(v["dyadic"].as_f64().unwrap(), besov_dyadic(&b, 4.0, &Shift::zero(2)).unwrap());
    assert_eq!(v["config"]["symbol"], "gaussian:0.1");
    assert_eq!(v["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(v["tool"], "schatten-lab");
}

#[test]
fn spectrum_writes_csv_plot_and_functional() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&["spectrum", "--op", "commutator", "--j", "1", "--weight", "power:0.5", "--N", "16", "--output", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let win = GridWindow::unit(2, 16).unwrap();
    let b = symbol_library(&SymbolSpec::Gaussian { width: 0.1 }, &win).unwrap();
    let w = Weight::from_spec(&win, &"power:0.5".parse::<WeightSpec>().unwrap()).unwrap();
    let op = commutator(&b, &riesz_matrix(1, &win, RieszMode::Filtered).unwrap()).unwrap().with_weight(&w).unwrap();
    let s = singular_values(&op).unwrap();

    let csv = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    let mut lines = csv.lines();
    let meta = lines.next().unwrap();
    assert!(meta.starts_with("# schatten-lab ") && meta.contains("config-sha256"));
    assert_eq!(lines.next().unwrap(), "k,s_k");
    let got: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(got, s.values);

    let svg = fs::read_to_string(dir.path().join("spectrum-plot.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.contains("stroke-dasharray") && svg.contains("k^-0.5"));
    assert!(svg.contains(meta.trim_start_matches("# ")));
    let plot = fs::read_to_string(dir.path().join("spectrum-plot.csv")).unwrap();
    assert!(plot.lines().nth(1).unwrap() == "k,s_k,reference");

    let f: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("spectrum.json")).unwrap()).unwrap();
    assert_eq!(f["p"], 2.0);
    assert_eq!(f["q"], "inf");
    assert!(f["value"].as_f64().unwrap() > 0.0);
    assert_eq!(f["config"]["weight"], "power:0.5");
}

#[test]
fn constant_symbol_verifies_to_a_zero_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[theorem12]\ngrid_sizes = [8]\nsymbols = [\"constant:2\"]\n");
    let outdir = dir.path().join("out");
    let out = run(&["verify", "theorem12", "--config", &cfg, "--output", outdir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(outdir.join("theorem12.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    let rows = report["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row["degenerate"], true);
        for v in row["values"].as_object().unwrap().values() {
            assert_eq!(v.as_f64().unwrap(), 0.0);
        }
    }
    let summary = run(&["report", outdir.join("theorem12.json").to_str().unwrap()]);
    assert_eq!(summary.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&summary.stdout).starts_with("PASS theorem12"));
}

#[test]
fn violated_threshold_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[tight]\nexperiment = \"theorem11\"\ngrid_sizes = [8]\nweights = [\"constant\"]\nsymbols = [\"gaussian\", \"sine:1,1\"]\n\
         [tight.thresholds]\nmax_spread = 1.0\n",
    );
    let out = run(&["verify", "all", "--config", &cfg, "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.starts_with("FAIL tight") && line.contains("spread"), "{line}");
    let report = run(&["report", dir.path().join("tight.json").to_str().unwrap()]);
    assert_eq!(report.status.code(), Some(1));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = write(dir.path(), "a.toml", "[theorem11]\ngrid = [8]\n");
    let bad_grid = write(dir.path(), "b.toml", "[theorem11]\ngrid_sizes = [12]\n");
    let bad_exponent = write(dir.path(), "c.toml", "[collapse]\np = 3\n");
    for cfg in [&bad_key, &bad_grid, &bad_exponent] {
        let out = run(&["verify", "all", "--config", cfg]);
        assert_eq!(out.status.code(), Some(2), "{cfg}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(run(&["verify", "all", "--config", "/nonexistent.toml"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "median", "--config", &write(dir.path(), "d.toml", "[besov]\n")]).status.code(), Some(2));
    assert_eq!(run(&["besov", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["besov", "--symbol", "wave"]).status.code(), Some(2));
    assert_eq!(run(&["grid-info", "--N", "12"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn verify_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[besov]\ngrid_sizes = [8, 16]\nsymbols = [\"default\"]\nseed = 7\n[median]\ngrid_sizes = [8]\nsymbols = [\"haar-random:0.3\"]\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = run(&["verify", "all", "--config", &cfg, "--output", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["besov.csv", "besov.json", "median.csv", "median.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let json: Value = serde_json::from_slice(&fs::read(a.join("besov.json")).unwrap()).unwrap();
    assert!(json["config"]["symbols"].as_array().unwrap().iter().any(|s| s == "haar-random:0.3:3:7"));
}

#[test]
fn haar_coefficients_csv_and_grid_info() {
    let dir = tempfile::tempdir().unwrap();
    let coeffs = dir.path().join("h.csv");
    let out = run(&["haar", "--n", "1", "--N", "8", "--symbol", "sine:1", "--coefficients", coeffs.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["coefficients"], 7);
    assert!(v["synthesis_max_error"].as_f64().unwrap() < 1e-14);
    let text = fs::read_to_string(&coeffs).unwrap();
    assert_eq!(text.lines().count(), 2 + 7);
    assert_eq!(text.lines().nth(1).unwrap(), "cube,signature,coefficient");

    let out = run(&["grid-info", "--n", "2", "--N", "16", "--shift", "1/3,2/3"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["config"]["shift"], "1/3,2/3");
    assert_eq!(v["k_max"], 3);
}
