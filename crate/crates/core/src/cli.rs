//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::discrete_operators::{commutator, quantised_derivative_block, riesz_matrix, OperatorMatrix, RieszMode};
use crate::dyadic_grid::{cubes_at_level, whitney_pairs, GridWindow, Shift};
use crate::error::{Error, Result};
use crate::function_spaces::{besov_continuous, besov_dyadic, besov_dyadic_all_shifts, besov_dyadic_weighted};
use crate::haar_system::{haar_transform, synthesize};
use crate::reporting::{
    config_hash, emit_plot_tagged, functional_json, haar_csv, sorted_json, spectrum_csv, to_pretty, write_atomic, write_opmx, write_report, TOOL_NAME,
    TOOL_VERSION,
};
use crate::schatten_spectra::{schatten_functional, singular_values, SingularSpectrum};
use crate::symbols::{symbol_library, SymbolSpec};
use crate::verification_harness::{load_config, run_experiment_with, ExperimentKind, RatioReport, SpectrumCache};
use crate::weights::{a2_constant_with_cube, doubling_ratio, reverse_holder_index, Weight, WeightSpec, DEFAULT_RH_BOUND, DEFAULT_SIGMAS};

#[derive(Debug, Parser)]
#[command(name = "schatten-lab", version, about = "Discrete experiments on Riesz commutators in weighted Schatten classes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Dimension.
    #[arg(long = "n", default_value_t = 2)]
    pub dim: usize,
    /// Samples per side of the unit window.
    #[arg(long = "N", default_value_t = 64)]
    pub samples: usize,
}

impl GridArgs {
    fn window(&self) -> Result<GridWindow> {
        GridWindow::unit(self.dim, self.samples).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    /// `[b, R_j]`.
    Commutator,
    /// `R_j` itself.
    Riesz,
    /// The off-diagonal block of the quantised derivative (n = 2).
    Quantised,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Window geometry: levels, cube counts, Whitney pairs.
    GridInfo {
        #[command(flatten)]
        grid: GridArgs,
        /// Shift per axis, e.g. `0,1/3`; `0` is the standard system.
        #[arg(long, default_value = "0")]
        shift: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Haar transform of a symbol.
    Haar {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "gaussian")]
        symbol: String,
        #[arg(long, default_value = "0")]
        shift: String,
        /// Also write the coefficients as CSV here.
        #[arg(long)]
        coefficients: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Continuous and dyadic Besov norms of a symbol.
    Besov {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 4.0)]
        p: f64,
        #[arg(long, default_value = "gaussian")]
        symbol: String,
        /// Adds the weighted dyadic norm.
        #[arg(long)]
        weight: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// A₂ constant, reverse Hölder index and doubling ratio of a weight.
    A2 {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "power:0.5")]
        weight: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Singular values of an operator, with CSV, plot and functional JSON.
    Spectrum {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = OperatorKind::Commutator)]
        op: OperatorKind,
        /// One-based Riesz direction.
        #[arg(long, default_value_t = 1)]
        j: usize,
        #[arg(long, default_value = "gaussian")]
        symbol: String,
        #[arg(long, default_value = "constant")]
        weight: String,
        #[arg(long, default_value = "filtered")]
        mode: String,
        /// Schatten exponent; defaults to n.
        #[arg(long)]
        p: Option<f64>,
        /// Lorentz exponent; `inf` for the weak class.
        #[arg(long, default_value = "inf")]
        q: String,
        #[arg(long, default_value = ".")]
        output: PathBuf,
        #[arg(long, default_value = "spectrum")]
        stem: String,
        /// Export the operator matrix in OPMX format.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Runs experiments from a config file; `all` runs every section.
    Verify {
        experiment: String,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the per-section output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarizes JSON reports written by `verify`.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn parse_arg<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T> {
    s.parse().map_err(config_error)
}

fn parse_shift(s: &str, dim: usize) -> Result<Shift> {
    if s.trim() == "0" {
        return Ok(Shift::zero(dim));
    }
    let shift: Shift = parse_arg(s)?;
    if shift.dim() != dim {
        return Err(config_error(format!("shift {s} has dimension {} but n = {dim}", shift.dim())));
    }
    Ok(shift)
}

fn seeded_symbol(s: &str) -> Result<SymbolSpec> {
    Ok(parse_arg::<SymbolSpec>(s)?.with_default_seed(0))
}

/// JSON document with provenance; printed, or written atomically to `output`.
fn emit(output: Option<&Path>, config: &Value, body: Value) -> Result<()> {
    let mut doc = body;
    let obj = doc.as_object_mut().expect("bodies are objects");
    obj.insert("tool".into(), json!(TOOL_NAME));
    obj.insert("version".into(), json!(TOOL_VERSION));
    obj.insert("config_sha256".into(), json!(config_hash(config)?));
    obj.insert("config".into(), config.clone());
    let text = to_pretty(&doc);
    match output {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Exit status of a failed run: 2 for bad configuration or arguments, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

/// Parses `args` and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed invocation. `Ok(false)` means an acceptance check failed.
pub fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::GridInfo { grid, shift, output } => grid_info(grid, shift, output.as_deref()),
        Command::Haar { grid, symbol, shift, coefficients, output } => haar(grid, symbol, shift, coefficients.as_deref(), output.as_deref()),
        Command::Besov { grid, p, symbol, weight, output } => besov(grid, *p, symbol, weight.as_deref(), output.as_deref()),
        Command::A2 { grid, weight, output } => a2(grid, weight, output.as_deref()),
        Command::Spectrum { grid, op, j, symbol, weight, mode, p, q, output, stem, export } => {
            let args = SpectrumArgs { grid, op: *op, j: *j, symbol, weight, mode, p: *p, q, output, stem, export: export.as_deref() };
            spectrum(&args)
        }
        Command::Verify { experiment, config, output } => verify(experiment, config, output.as_deref()),
        Command::Report { inputs } => report(inputs),
    }
}

fn grid_info(grid: &GridArgs, shift: &str, output: Option<&Path>) -> Result<bool> {
    let win = grid.window()?;
    let sh = parse_shift(shift, grid.dim)?;
    let levels: Vec<Value> = (win.k_min()..=win.k_max())
        .map(|k| json!({"level": k, "contained_cubes": cubes_at_level(&win, &sh, k, true).len(), "side": 2f64.powi(-k)}))
        .collect();
    let config = json!({"command": "grid-info", "grid": grid, "shift": sh.to_string()});
    let body = json!({
        "dim": win.dim(),
        "samples_per_side": win.samples_per_side(),
        "samples": win.len(),
        "spacing": win.spacing(),
        "k_min": win.k_min(),
        "k_max": win.k_max(),
        "aligned": win.is_aligned(),
        "levels": levels,
        "whitney_pairs": whitney_pairs(&win).len(),
    });
    emit(output, &config, body)?;
    Ok(true)
}

fn haar(grid: &GridArgs, symbol: &str, shift: &str, coefficients: Option<&Path>, output: Option<&Path>) -> Result<bool> {
    let win = grid.window()?;
    let spec = seeded_symbol(symbol)?;
    let sh = parse_shift(shift, grid.dim)?;
    let b = symbol_library(&spec, &win)?;
    let hc = haar_transform(&b, &sh)?;
    let back = synthesize(&hc, true)?;
    let residual = back.values.iter().zip(&b.values).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
    let config = json!({"command": "haar", "grid": grid, "symbol": spec.to_string(), "shift": sh.to_string()});
    if let Some(path) = coefficients {
        write_atomic(path, haar_csv(&hc, &config_hash(&config)?)?.as_bytes())?;
    }
    let body = json!({
        "coefficients": hc.len(),
        "coarse_cubes": hc.coarse.len(),
        "path": format!("{:?}", hc.path).to_lowercase(),
        "energy": hc.energy(),
        "l2_norm_squared": b.norm_l2().powi(2),
        "synthesis_max_error": residual,
    });
    emit(output, &config, body)?;
    Ok(true)
}

fn besov(grid: &GridArgs, p: f64, symbol: &str, weight: Option<&str>, output: Option<&Path>) -> Result<bool> {
    let win = grid.window()?;
    let spec = seeded_symbol(symbol)?;
    let b = symbol_library(&spec, &win)?;
    let zero = Shift::zero(grid.dim);
    let mut body = json!({
        "p": p,
        "continuous": besov_continuous(&b, p)?,
        "dyadic": besov_dyadic(&b, p, &zero)?,
        "dyadic_all_shifts": besov_dyadic_all_shifts(&b, p)?,
    });
    let wspec = weight.map(parse_arg::<WeightSpec>).transpose()?;
    if let Some(ws) = &wspec {
        let w = Weight::from_spec(&win, ws)?;
        body["dyadic_weighted"] = json!(besov_dyadic_weighted(&b, &w, p, &zero)?);
    }
    let config = json!({"command": "besov", "grid": grid, "p": p, "symbol": spec.to_string(), "weight": wspec.map(|w| w.to_string())});
    emit(output, &config, body)?;
    Ok(true)
}

fn a2(grid: &GridArgs, weight: &str, output: Option<&Path>) -> Result<bool> {
    let win = grid.window()?;
    let ws: WeightSpec = parse_arg(weight)?;
    let w = Weight::from_spec(&win, &ws)?;
    let (a2, cube) = a2_constant_with_cube(&w);
    let (sigma, rh) = reverse_holder_index(&w, &DEFAULT_SIGMAS, DEFAULT_RH_BOUND)?;
    let config = json!({"command": "a2", "grid": grid, "weight": ws.to_string()});
    let body = json!({
        "a2": a2,
        "maximizing_cube": cube.map(|c| c.to_string()),
        "reverse_holder_sigma": sigma,
        "reverse_holder_constant": rh,
        "doubling_ratio": doubling_ratio(&w, 2.0)?,
        "clamp_radius": w.clamp_radius,
    });
    emit(output, &config, body)?;
    Ok(true)
}

struct SpectrumArgs<'a> {
    grid: &'a GridArgs,
    op: OperatorKind,
    j: usize,
    symbol: &'a str,
    weight: &'a str,
    mode: &'a str,
    p: Option<f64>,
    q: &'a str,
    output: &'a Path,
    stem: &'a str,
    export: Option<&'a Path>,
}

fn parse_exponent(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "infinity" | "∞" => Ok(f64::INFINITY),
        t => t.parse().map_err(|e| config_error(format!("bad exponent {t:?}: {e}"))),
    }
}

fn spectrum(a: &SpectrumArgs<'_>) -> Result<bool> {
    let win = a.grid.window()?;
    let n = a.grid.dim;
    if a.j == 0 || a.j > n {
        return Err(config_error(format!("Riesz direction {} not in 1..={n}", a.j)));
    }
    let spec = seeded_symbol(a.symbol)?;
    let ws: WeightSpec = parse_arg(a.weight)?;
    let mode: RieszMode = parse_arg(a.mode)?;
    let p = a.p.unwrap_or(n as f64);
    let q = parse_exponent(a.q)?;
    let w = Weight::from_spec(&win, &ws)?;
    let b = symbol_library(&spec, &win)?;
    let op: OperatorMatrix = match a.op {
        OperatorKind::Commutator => commutator(&b, &riesz_matrix(a.j, &win, mode)?)?.with_weight(&w)?,
        OperatorKind::Riesz => riesz_matrix(a.j, &win, mode)?.with_weight(&w)?,
        OperatorKind::Quantised => {
            if n != 2 {
                return Err(config_error("the quantised block needs n = 2"));
            }
            quantised_derivative_block(&b, if w.is_constant() { None } else { Some(&w) }, mode)?
        }
    };
    let s = singular_values(&op)?;
    let s = if a.op == OperatorKind::Quantised {
        SingularSpectrum::from_values(s.values.iter().flat_map(|&v| [v, v]).collect(), 2 * win.len())?
    } else {
        s
    };
    let config = json!({
        "command": "spectrum",
        "grid": a.grid,
        "op": a.op,
        "j": a.j,
        "symbol": spec.to_string(),
        "weight": ws.to_string(),
        "mode": mode.to_string(),
        "p": p,
        "q": if q.is_infinite() { json!("inf") } else { json!(q) },
    });
    let hash = config_hash(&config)?;
    let dir = a.output;
    write_atomic(&dir.join(format!("{}.csv", a.stem)), spectrum_csv(&s, &hash)?.as_bytes())?;
    let plot = emit_plot_tagged(&s, 1.0 / n as f64, &dir.join(format!("{}-plot.svg", a.stem)), Some(&hash))?;
    let functional = schatten_functional(&s, p, q)?;
    write_atomic(&dir.join(format!("{}.json", a.stem)), functional_json(&functional, &config)?.as_bytes())?;
    if let Some(path) = a.export {
        write_opmx(&op, path, config.clone())?;
    }
    let summary = json!({
        "largest": s.largest(),
        "numerical_rank": s.numerical_rank,
        "functional": sorted_json(&functional)?,
        "fitted_slope": plot.fitted_slope,
    });
    println!("{}", serde_json::to_string(&summary).expect("a Value always serializes"));
    Ok(true)
}

fn verify(experiment: &str, config: &Path, output: Option<&Path>) -> Result<bool> {
    let cfgs = load_config(config)?;
    let selected: Vec<_> = if experiment == "all" {
        cfgs
    } else {
        let kind = experiment.parse::<ExperimentKind>().ok();
        cfgs.into_iter().filter(|c| c.id == experiment || Some(c.experiment) == kind).collect()
    };
    if selected.is_empty() {
        return Err(config_error(format!("no section of {} runs {experiment:?}", config.display())));
    }
    let cache = SpectrumCache::new();
    let mut all = true;
    for cfg in &selected {
        let report = run_experiment_with(cfg, &cache)?;
        let dir = output.map(Path::to_path_buf).or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("."));
        let (csv, _) = write_report(&dir, &cfg.id, &report, cfg)?;
        println!("{}", summary_line(&report, &csv));
        all &= report.passed();
    }
    Ok(all)
}

fn summary_line(r: &RatioReport, path: &Path) -> String {
    let status = if r.exploratory {
        "EXPLORATORY"
    } else if r.passed() {
        "PASS"
    } else {
        "FAIL"
    };
    let failed: Vec<&str> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let mut line = format!("{status} {} ({}) rows={} spread={:.4} -> {}", r.id, r.experiment, r.rows.len(), r.summary.spread, path.display());
    if !failed.is_empty() {
        line.push_str(&format!(" failed: {}", failed.join(", ")));
    }
    line
}

fn report(inputs: &[PathBuf]) -> Result<bool> {
    let mut all = true;
    for path in inputs {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let r: RatioReport = serde_json::from_value(doc.get("report").cloned().unwrap_or(Value::Null))
            .map_err(|e| config_error(format!("{} is not a report: {e}", path.display())))?;
        println!("{}", summary_line(&r, path));
        for c in &r.checks {
            println!("  {} {:<40} {} {:?} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.value, c.relation, c.threshold);
        }
        for (k, v) in &r.notes {
            println!("  note {k} = {v}");
        }
        all &= r.passed();
    }
    Ok(all)
}
