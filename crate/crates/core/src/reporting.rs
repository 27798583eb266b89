//! Deterministic output files: CSV and JSON reports, spectrum plots, matrix export.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use faer::Mat;
use num_complex::Complex64 as c64;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::discrete_operators::{Entries, OperatorMatrix};
use crate::function_spaces::CubeSequence;
use crate::haar_system::HaarCoefficients;
use crate::error::{invalid, Error, Result};
use crate::schatten_spectra::{SchattenValue, SingularSpectrum};
use crate::verification_harness::RatioReport;

pub const TOOL_NAME: &str = "schatten-lab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Serializes through `serde_json::Value`, whose maps keep keys sorted.
pub fn sorted_json<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Numerical(format!("serialization failed: {e}")))
}

pub fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("a Value always serializes");
    s.push('\n');
    s
}

/// Hex SHA-256 of the compact sorted-key JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let text = serde_json::to_string(&sorted_json(config)?).expect("a Value always serializes");
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

/// `# schatten-lab <version> config-sha256 <hash>`.
pub fn metadata_line(hash: &str) -> String {
    format!("# {TOOL_NAME} {TOOL_VERSION} config-sha256 {hash}\n")
}

/// Writes to a temporary file in the target directory, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let name = path.file_name().ok_or_else(|| invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

/// Metadata line, then one row per report row; value columns are the sorted union of names.
pub fn report_csv(report: &RatioReport, hash: &str) -> Result<String> {
    let names: BTreeSet<&str> = report.rows.iter().flat_map(|r| r.values.keys().map(String::as_str)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["key", "symbol", "weight", "resolution", "ratio", "degenerate"];
    header.extend(names.iter().copied());
    w.write_record(&header).map_err(csv_err)?;
    for r in &report.rows {
        let mut rec = vec![
            r.key.clone(),
            r.symbol.clone(),
            r.weight.clone(),
            r.resolution.to_string(),
            r.ratio.map(number).unwrap_or_default(),
            r.degenerate.to_string(),
        ];
        rec.extend(names.iter().map(|n| r.values.get(*n).map(|&v| number(v)).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w, hash)
}

/// Report with tool version, config hash and the resolved config echoed back.
pub fn report_json<C: Serialize>(report: &RatioReport, config: &C) -> Result<String> {
    let hash = config_hash(config)?;
    let v = json!({
        "tool": TOOL_NAME,
        "version": TOOL_VERSION,
        "config_sha256": hash,
        "config": sorted_json(config)?,
        "passed": report.passed(),
        "report": sorted_json(report)?,
    });
    Ok(to_pretty(&v))
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json`.
pub fn write_report<C: Serialize>(dir: &Path, stem: &str, report: &RatioReport, config: &C) -> Result<(PathBuf, PathBuf)> {
    let hash = config_hash(config)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_atomic(&csv_path, report_csv(report, &hash)?.as_bytes())?;
    write_atomic(&json_path, report_json(report, config)?.as_bytes())?;
    Ok((csv_path, json_path))
}

/// `k, s_k` with `k` from 1.
pub fn spectrum_csv(s: &SingularSpectrum, hash: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "s_k"]).map_err(csv_err)?;
    for (k, v) in s.values.iter().enumerate() {
        w.write_record([(k + 1).to_string(), number(*v)]).map_err(csv_err)?;
    }
    finish_csv(w, hash)
}

/// Seventeen significant digits, enough to round-trip an `f64`.
fn full_precision(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        number(v)
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>, hash: &str) -> Result<String> {
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?).expect("csv output is utf-8");
    Ok(metadata_line(hash) + &body)
}

/// `cube, signature, coefficient` in index order, coarse averages excluded.
pub fn haar_csv(c: &HaarCoefficients, hash: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cube", "signature", "coefficient"]).map_err(csv_err)?;
    for (idx, v) in &c.entries {
        w.write_record([idx.cube.to_string(), idx.sig.to_string(), full_precision(*v)]).map_err(csv_err)?;
    }
    finish_csv(w, hash)
}

/// `cube, value` in cube order.
pub fn sequence_csv(seq: &CubeSequence, hash: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cube", "value"]).map_err(csv_err)?;
    for (q, v) in &seq.entries {
        w.write_record([q.to_string(), full_precision(*v)]).map_err(csv_err)?;
    }
    finish_csv(w, hash)
}

/// `{p, q, value, argmax_k}` plus provenance.
pub fn functional_json<C: Serialize>(v: &SchattenValue, config: &C) -> Result<String> {
    let mut out = sorted_json(v)?;
    let obj = out.as_object_mut().expect("struct serializes to an object");
    obj.insert("tool".into(), json!(TOOL_NAME));
    obj.insert("version".into(), json!(TOOL_VERSION));
    obj.insert("config_sha256".into(), json!(config_hash(config)?));
    obj.insert("config".into(), sorted_json(config)?);
    Ok(to_pretty(&out))
}

/// Least-squares slope of `log s_k` against `log k` over the positive values.
pub fn loglog_slope(values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = values.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(k, &v)| (((k + 1) as f64).ln(), v.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlotSummary {
    pub points: usize,
    pub fitted_slope: Option<f64>,
    pub reference_exponent: f64,
    pub svg: PathBuf,
    pub csv: PathBuf,
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Log-log scatter of `k ↦ s_k` with the line `s_1 k^{-reference_exponent}`; the
/// plotted data goes to a CSV next to the SVG.
pub fn emit_plot(s: &SingularSpectrum, reference_exponent: f64, path: &Path) -> Result<PlotSummary> {
    emit_plot_tagged(s, reference_exponent, path, None)
}

/// [`emit_plot`] with a config hash recorded in both files.
pub fn emit_plot_tagged(s: &SingularSpectrum, reference_exponent: f64, path: &Path, hash: Option<&str>) -> Result<PlotSummary> {
    if s.is_empty() {
        return Err(invalid("cannot plot an empty spectrum"));
    }
    let pts: Vec<(f64, f64)> = s.values.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(k, &v)| ((k + 1) as f64, v)).collect();
    if pts.is_empty() {
        return Err(invalid("spectrum has no positive values to plot"));
    }
    let s1 = s.largest();
    let kmax = pts.last().map(|p| p.0).unwrap_or(1.0).max(2.0);
    let lx = |k: f64| k.log10();
    let (x0, x1) = (0.0, lx(kmax));
    let reference = |k: f64| s1 * k.powf(-reference_exponent);
    let mut ylo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).min(reference(kmax));
    let mut yhi = s1.max(reference(1.0));
    if ylo == yhi {
        ylo /= 10.0;
        yhi *= 10.0;
    }
    let (y0, y1) = (ylo.log10().floor(), yhi.log10().ceil());
    let px = |k: f64| MARGIN + (lx(k) - x0) / (x1 - x0) * (PLOT_W - 2.0 * MARGIN);
    let py = |v: f64| PLOT_H - MARGIN - (v.log10() - y0) / (y1 - y0) * (PLOT_H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_W}" height="{PLOT_H}" viewBox="0 0 {PLOT_W} {PLOT_H}">"#);
    if let Some(h) = hash {
        let _ = writeln!(svg, "<!-- {TOOL_NAME} {TOOL_VERSION} config-sha256 {h} -->");
    }
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        PLOT_W - 2.0 * MARGIN,
        PLOT_H - 2.0 * MARGIN
    );
    for d in (y0 as i32)..=(y1 as i32) {
        let y = py(10f64.powi(d));
        let _ = writeln!(svg, r#"<text x="{}" y="{y:.2}" font-size="11" text-anchor="end">1e{d}</text>"#, MARGIN - 6.0);
    }
    let mut d = 0;
    while 10f64.powi(d) <= kmax {
        let x = px(10f64.powi(d));
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" font-size="11" text-anchor="middle">1e{d}</text>"#, PLOT_H - MARGIN + 16.0);
        d += 1;
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">k</text>"#, PLOT_W / 2.0, PLOT_H - 15.0);
    let _ = writeln!(svg, r#"<text x="15" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 15 {})">s_k</text>"#, PLOT_H / 2.0, PLOT_H / 2.0);
    let _ = writeln!(
        svg,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="red" stroke-dasharray="6 4"/>"#,
        px(1.0),
        py(reference(1.0)),
        px(kmax),
        py(reference(kmax))
    );
    for (k, v) in &pts {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="steelblue"/>"#, px(*k), py(*v));
    }
    let slope = loglog_slope(&s.values);
    let label = match slope {
        Some(m) => format!("fitted slope {m:.4}, reference k^-{reference_exponent}"),
        None => format!("reference k^-{reference_exponent}"),
    };
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{label}</text>"#, PLOT_W - MARGIN, MARGIN - 10.0);
    svg.push_str("</svg>\n");

    let csv_path = path.with_extension("csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "s_k", "reference"]).map_err(csv_err)?;
    for (k, v) in &pts {
        w.write_record([format!("{k}"), number(*v), number(reference(*k))]).map_err(csv_err)?;
    }
    let mut data = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    if let Some(h) = hash {
        data.splice(0..0, metadata_line(h).into_bytes());
    }
    write_atomic(path, svg.as_bytes())?;
    write_atomic(&csv_path, &data)?;
    Ok(PlotSummary { points: pts.len(), fitted_slope: slope, reference_exponent, svg: path.to_path_buf(), csv: csv_path })
}

pub const OPMX_MAGIC: &[u8; 4] = b"OPMX";
pub const OPMX_VERSION: u32 = 1;
pub const OPMX_REAL: u32 = 0;
pub const OPMX_COMPLEX: u32 = 1;

/// 32-byte header (magic, version, rows, cols, scalar type, reserved), then
/// little-endian column-major entries; complex entries as (re, im) pairs.
pub fn opmx_bytes(op: &OperatorMatrix) -> Vec<u8> {
    let d = op.dim();
    let kind = if op.is_real() { OPMX_REAL } else { OPMX_COMPLEX };
    let per = if op.is_real() { 8 } else { 16 };
    let mut out = Vec::with_capacity(32 + d * d * per);
    out.extend_from_slice(OPMX_MAGIC);
    out.extend_from_slice(&OPMX_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    match &op.entries {
        Entries::Real(a) => {
            for j in 0..d {
                for i in 0..d {
                    out.extend_from_slice(&a[(i, j)].to_le_bytes());
                }
            }
        }
        Entries::Complex(a) => {
            for j in 0..d {
                for i in 0..d {
                    out.extend_from_slice(&a[(i, j)].re.to_le_bytes());
                    out.extend_from_slice(&a[(i, j)].im.to_le_bytes());
                }
            }
        }
    }
    out
}

/// Inverse of [`opmx_bytes`].
pub fn parse_opmx(bytes: &[u8]) -> Result<Entries> {
    let bad = |m: &str| invalid(format!("not an OPMX file: {m}"));
    if bytes.len() < 32 || &bytes[..4] != OPMX_MAGIC {
        return Err(bad("missing magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    if u32_at(4) != OPMX_VERSION {
        return Err(bad("unsupported version"));
    }
    let (rows, cols, kind) = (u64_at(8) as usize, u64_at(16) as usize, u32_at(24));
    let per = match kind {
        OPMX_REAL => 8,
        OPMX_COMPLEX => 16,
        _ => return Err(bad("unknown scalar type")),
    };
    if bytes.len() != 32 + rows * cols * per {
        return Err(bad("length does not match the header"));
    }
    let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    Ok(match kind {
        OPMX_REAL => Entries::Real(Mat::from_fn(rows, cols, |i, j| f(32 + (j * rows + i) * 8))),
        _ => Entries::Complex(Mat::from_fn(rows, cols, |i, j| {
            let o = 32 + (j * rows + i) * 16;
            c64::new(f(o), f(o + 8))
        })),
    })
}

/// Writes `path` (binary) and `path.json` (label, window, blocks, weight and the resolved config).
pub fn write_opmx(op: &OperatorMatrix, path: &Path, config: Value) -> Result<PathBuf> {
    let win = &op.window;
    let sidecar = json!({
        "tool": TOOL_NAME,
        "version": TOOL_VERSION,
        "config_sha256": config_hash(&config)?,
        "label": op.label,
        "blocks": op.blocks,
        "rows": op.dim(),
        "cols": op.dim(),
        "scalar": if op.is_real() { "f64" } else { "c64" },
        "layout": "column-major little-endian",
        "window": {
            "dim": win.dim(),
            "origin": win.origin(),
            "side": win.side(),
            "samples_per_side": win.samples_per_side(),
            "k_min": win.k_min(),
            "k_max": win.k_max(),
        },
        "weight": op.ip_weight.as_ref().map(|w| w.spec.to_string()),
        "config": config,
    });
    let side = PathBuf::from(format!("{}.json", path.display()));
    write_atomic(path, &opmx_bytes(op))?;
    write_atomic(&side, to_pretty(&sidecar).as_bytes())?;
    Ok(side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic_grid::GridWindow;

    #[test]
    fn loglog_slope_of_halving_spectrum() {
        // independent closed form: x = ln 1, ln 2, ln 3 and y = 0, -ln 2, -2 ln 2
        let (l2, l3) = (2f64.ln(), 3f64.ln());
        let xs = [0.0, l2, l3];
        let ys = [0.0, -l2, -2.0 * l2];
        let mx = (l2 + l3) / 3.0;
        let my = -l2;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let got = loglog_slope(&[1.0, 0.5, 0.25]).unwrap();
        assert!((got - sxy / sxx).abs() < 1e-14);
        assert!(got < -1.0 && got > -1.3);
        assert!((loglog_slope(&[1.0, 0.5, 1.0 / 3.0, 0.25]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn plot_rejects_empty_and_draws_points() {
        let dir = tempfile::tempdir().unwrap();
        let empty = SingularSpectrum { values: vec![], source_dim: 0, numerical_rank: 0 };
        assert!(emit_plot(&empty, 0.5, &dir.path().join("e.svg")).is_err());
        let s = SingularSpectrum::from_values(vec![1.0, 0.5, 0.25], 3).unwrap();
        let out = emit_plot(&s, 0.5, &dir.path().join("s.svg")).unwrap();
        assert_eq!(out.points, 3);
        let svg = fs::read_to_string(&out.svg).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        let csv = fs::read_to_string(&out.csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        // reference line through s_1 with k^{-1/2}
        let last: Vec<f64> = lines[3].split(',').map(|t| t.parse().unwrap()).collect();
        assert_eq!(last[0], 3.0);
        assert!((last[2] - 3f64.powf(-0.5)).abs() < 1e-15);
        let first: Vec<f64> = lines[1].split(',').map(|t| t.parse().unwrap()).collect();
        assert_eq!(first[1], first[2]);
    }

    #[test]
    fn opmx_round_trip_real_and_complex() {
        let win = GridWindow::unit(1, 4).unwrap();
        let a = Mat::from_fn(4, 4, |i, j| (i * 4 + j) as f64 - 3.5);
        let op = OperatorMatrix::real(&win, 1, a.clone(), "a").unwrap();
        let bytes = opmx_bytes(&op);
        assert_eq!(bytes.len(), 32 + 16 * 8);
        assert_eq!(&bytes[..4], b"OPMX");
        // column-major: the second stored value is entry (1, 0)
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), a[(1, 0)]);
        match parse_opmx(&bytes).unwrap() {
            Entries::Real(b) => assert_eq!(b, a),
            _ => panic!("expected real"),
        }
        let c = Mat::from_fn(4, 4, |i, j| c64::new(i as f64, -(j as f64)));
        let op = OperatorMatrix::complex(&win, 1, c.clone(), "c").unwrap();
        match parse_opmx(&opmx_bytes(&op)).unwrap() {
            Entries::Complex(b) => assert_eq!(b, c),
            _ => panic!("expected complex"),
        }
        assert!(parse_opmx(&bytes[..31]).is_err());
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn config_hash_ignores_field_order_and_is_hex() {
        let a = json!({"b": 1, "a": [1, 2]});
        let b: Value = serde_json::from_str(r#"{"a":[1,2],"b":1}"#).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        let h = config_hash(&a).unwrap();
        assert_eq!(h.len(), 64);
        assert!(h.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn haar_and_sequence_csv_round_trip_values() {
        use crate::dyadic_grid::Shift;
        use crate::function_spaces::oscillation_sequence;
        use crate::haar_system::{haar_transform, SampledFunction};
        let win = GridWindow::unit(2, 8).unwrap();
        let b = SampledFunction::from_fn(&win, |x| (3.0 * x[0]).sin() + x[1] / 3.0);
        let hc = haar_transform(&b, &Shift::zero(2)).unwrap();
        let text = haar_csv(&hc, "h").unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# schatten-lab"));
        assert_eq!(lines.next().unwrap(), "cube,signature,coefficient");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), hc.len());
        for (line, (idx, c)) in rows.iter().zip(&hc.entries) {
            let f: Vec<&str> = line.split(',').collect();
            // cube ids contain commas, so CSV quoting applies
            assert!(line.starts_with(&format!("\"{}\"", idx.cube)));
            assert_eq!(f.last().unwrap().parse::<f64>().unwrap(), *c);
        }
        let seq = oscillation_sequence(&b, 1.0, 5.0).unwrap();
        let text = sequence_csv(&seq, "h").unwrap();
        assert_eq!(text.lines().count(), 2 + seq.entries.len());
    }

    #[test]
    fn spectrum_csv_has_metadata_and_rows() {
        let s = SingularSpectrum::from_values(vec![2.0, 1.0], 2).unwrap();
        let text = spectrum_csv(&s, "abc").unwrap();
        assert_eq!(text, format!("# {TOOL_NAME} {TOOL_VERSION} config-sha256 abc\nk,s_k\n1,2\n2,1\n"));
    }
}
