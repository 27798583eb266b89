//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Exits nonzero when a criterion fails that is not listed in `KNOWN_FAILURES`;
//! set `ACCEPTANCE_STRICT=1` to fail on any criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use faer::Mat;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use schatten_lab::discrete_operators::{
    commutator, conjugate_by_weight, kernel_fourier_expansion, riesz_matrix, KernelCutoff, OperatorMatrix, RieszMode,
};
use schatten_lab::dyadic_grid::{enumerate_cubes, whitney_pairs, GridWindow, Shift};
use schatten_lab::function_spaces::{
    besov_continuous, besov_dyadic, besov_dyadic_weighted, far_mean_oscillation_sequence, mean_oscillation, oscillation_sequence,
    sobolev_seminorm, GradientScheme,
};
use schatten_lab::haar_system::{haar_coefficient, haar_function, haar_transform, synthesize, HaarIndex, SampledFunction, Signature};
use schatten_lab::reporting::{report_csv, report_json};
use schatten_lab::schatten_spectra::singular_values;
use schatten_lab::verification_harness::{run_experiment_with, ExperimentConfig, ExperimentKind, RatioReport, SpectrumCache, THREADS_ENV};
use schatten_lab::weights::Weight;

/// Criteria measured to fall short at desk scale; see the README.
const KNOWN_FAILURES: [usize; 1] = [6];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn checks_line(r: &RatioReport) -> String {
    r.checks
        .iter()
        .map(|c| format!("{} = {:.6e} ({})", c.name, c.value, if c.passed { "ok" } else { "violated" }))
        .collect::<Vec<_>>()
        .join("; ")
}

fn run_kind(kind: ExperimentKind, cache: &SpectrumCache, edit: impl FnOnce(&mut ExperimentConfig)) -> RatioReport {
    let mut cfg = ExperimentConfig::defaults(kind.name(), kind);
    edit(&mut cfg);
    run_experiment_with(&cfg, cache).expect("experiment runs")
}

fn c1_conjugation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let win = if trial % 2 == 0 { GridWindow::unit(1, 32).unwrap() } else { GridWindow::unit(2, 8).unwrap() };
        let m = win.len();
        let t = Mat::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let alpha = rng.random_range(-0.8..0.8);
        let w = Weight::power(&win, alpha, None).unwrap();
        let op = OperatorMatrix::real(&win, 1, t.clone(), "random").unwrap().with_weight(&w).unwrap();
        let got = singular_values(&op).unwrap();
        // s_k in ⟨·,·⟩_w are square roots of the eigenvalues of T*_w T = W⁻¹ Tᵀ W T
        let wv = w.values();
        let g = Mat::from_fn(m, m, |i, j| (0..m).map(|k| t[(k, i)] * wv[k] * t[(k, j)]).sum::<f64>() / wv[i]);
        let mut oracle: Vec<f64> = g.eigenvalues().unwrap().iter().map(|z| z.re.max(0.0).sqrt()).collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        let s1 = oracle[0];
        for (a, b) in got.values.iter().zip(&oracle) {
            worst = worst.max((a - b).abs() / s1);
        }
        // and the explicitly conjugated plain operator
        let plain = conjugate_by_weight(&OperatorMatrix::real(&win, 1, t, "random").unwrap(), &w).unwrap();
        let sp = singular_values(&plain).unwrap();
        for (a, b) in sp.values.iter().zip(&oracle) {
            worst = worst.max((a - b).abs() / s1);
        }
    }
    outcome(worst <= 1e-10, format!("20 operators, max deviation relative to s_1 = {worst:.3e} (≤ 1e-10)"))
}

fn haar_suite_for(n: usize) -> (f64, f64, f64, f64, f64) {
    let win = GridWindow::unit(n, 64).unwrap();
    let m = win.len();
    let h = win.cell_volume();
    let mut funcs: Vec<(HaarIndex, SampledFunction)> = Vec::new();
    for q in enumerate_cubes(&win, &Shift::zero(n)) {
        for sig in Signature::cancellative(n) {
            let idx = HaarIndex { cube: q.clone(), sig };
            let f = haar_function(&idx, &win).unwrap();
            funcs.push((idx, f));
        }
    }
    // orthonormality
    let cols = Mat::from_fn(m, funcs.len(), |i, j| funcs[j].1.values[i] * h.sqrt());
    let gram = cols.transpose() * &cols;
    let mut ortho: f64 = 0.0;
    for i in 0..funcs.len() {
        for j in 0..funcs.len() {
            let target = if i == j { 1.0 } else { 0.0 };
            ortho = ortho.max((gram[(i, j)] - target).abs());
        }
    }
    // zero mean and norm scaling
    let mut scaling: f64 = 0.0;
    let mut mean: f64 = 0.0;
    for (idx, f) in &funcs {
        let vol = idx.cube.volume();
        mean = mean.max((f.values.iter().sum::<f64>() * h).abs() / vol.sqrt());
        scaling = scaling.max((f.norm_lp(f64::INFINITY) * vol.sqrt() - 1.0).abs());
        scaling = scaling.max((f.norm_lp(1.0) / vol.sqrt() - 1.0).abs());
        scaling = scaling.max((f.norm_l2() - 1.0).abs());
    }
    // pyramid against direct quadrature, then Parseval and synthesis
    let b = SampledFunction::from_fn(&win, |x| x.iter().enumerate().map(|(i, v)| ((5.0 + i as f64) * v).sin() + v * v).sum());
    let hc = haar_transform(&b, &Shift::zero(n)).unwrap();
    let mut pyramid: f64 = 0.0;
    for (idx, c) in &hc.entries {
        pyramid = pyramid.max((c - haar_coefficient(&b, idx).unwrap()).abs());
    }
    let e = b.norm_l2().powi(2);
    let back = synthesize(&hc, true).unwrap();
    let synth = back.values.iter().zip(&b.values).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    let parseval = ((hc.energy() - e).abs() / e).max(synth);
    (ortho, mean, scaling, pyramid, parseval)
}

fn c2_haar_suite() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [1, 2] {
        let (ortho, mean, scaling, pyramid, parseval) = haar_suite_for(n);
        pass &= ortho <= 1e-12 && mean <= 1e-12 && scaling <= 1e-12 && pyramid <= 1e-12 && parseval <= 1e-8;
        parts.push(format!(
            "n={n}: gram {ortho:.1e}, mean {mean:.1e}, norms {scaling:.1e}, pyramid-direct {pyramid:.1e}, parseval {parseval:.1e}"
        ));
    }
    outcome(pass, format!("N=64; {}", parts.join(" | ")))
}

fn c3_constant_collapse() -> Outcome {
    let c = 3.7;
    let mut worst: f64 = 0.0;
    for (n, size) in [(1usize, 64usize), (2, 16)] {
        let win = GridWindow::unit(n, size).unwrap();
        let b = SampledFunction::constant(&win, c);
        let w = Weight::power(&win, 0.5, None).unwrap();
        for mode in [RieszMode::Periodic, RieszMode::Kernel, RieszMode::Filtered] {
            for j in 1..=n {
                let r = riesz_matrix(j, &win, mode).unwrap();
                let scale = c * r.max_abs();
                let k = commutator(&b, &r).unwrap();
                worst = worst.max(k.max_abs() / scale);
                worst = worst.max(conjugate_by_weight(&k, &w).unwrap().max_abs() / scale);
            }
        }
        let zero = Shift::zero(n);
        let mut vals = vec![
            besov_continuous(&b, 4.0).unwrap(),
            besov_dyadic_weighted(&b, &w, 4.0, &zero).unwrap(),
            sobolev_seminorm(&b, n as f64, GradientScheme::Centered).unwrap(),
            sobolev_seminorm(&b, n as f64, GradientScheme::Spectral).unwrap(),
        ];
        for s in Shift::all(n) {
            vals.push(besov_dyadic(&b, 4.0, &s).unwrap());
        }
        vals.extend(oscillation_sequence(&b, 1.0, 5.0).unwrap().values());
        vals.extend(far_mean_oscillation_sequence(&b, 0, win.k_max()).unwrap().values());
        for q in enumerate_cubes(&win, &zero) {
            vals.push(mean_oscillation(&b, &q).unwrap());
        }
        worst = worst.max(vals.iter().map(|v| v.abs()).fold(0.0, f64::max) / c);
    }
    outcome(worst <= 1e-12, format!("b = {c}: largest commutator entry or functional / scale = {worst:.3e} (≤ 1e-12)"))
}

fn c4_besov(cache: &SpectrumCache) -> Outcome {
    let r = run_kind(ExperimentKind::BesovEquivalence, cache, |_| {});
    outcome(r.passed(), format!("n=2, p=4, N ∈ {{32,64}}: {}", checks_line(&r)))
}

fn c5_theorem11(cache: &SpectrumCache) -> Outcome {
    let upper = run_kind(ExperimentKind::Theorem11Upper, cache, |_| {});
    let lower = run_kind(ExperimentKind::MedianLower, cache, |c| c.grid_sizes = vec![64]);
    let e_frac = lower.notes.get("e_fraction_max").copied().unwrap_or(f64::NAN);
    outcome(
        upper.passed() && lower.passed(),
        format!(
            "N=64, weights 1 and |x-c|^1/2: {} | lower bound: {}; largest E-set fraction of Q = {e_frac:.3}",
            checks_line(&upper),
            checks_line(&lower)
        ),
    )
}

fn c6_collapse(cache: &SpectrumCache) -> Outcome {
    let r = run_kind(ExperimentKind::Collapse, cache, |_| {});
    let sums: Vec<String> = r.rows.iter().filter_map(|row| row.value("osc_sum")).map(|v| format!("{v:.4}")).collect();
    let weak: Vec<String> = r.rows.iter().filter_map(|row| row.value("weak")).map(|v| format!("{v:.4}")).collect();
    outcome(r.passed(), format!("sqrt sums [{}], weak norms [{}]: {}", sums.join(", "), weak.join(", "), checks_line(&r)))
}

fn c7_theorem12(cache: &SpectrumCache) -> Outcome {
    let r = run_kind(ExperimentKind::Theorem12, cache, |_| {});
    let notes: Vec<String> = r.notes.iter().map(|(k, v)| format!("{k} = {v:.4}")).collect();
    outcome(r.passed(), format!("{} | {}", checks_line(&r), notes.join(", ")))
}

fn c8_quantised(cache: &SpectrumCache) -> Outcome {
    let r = run_kind(ExperimentKind::Quantised, cache, |_| {});
    let has_oracle = r.check("block oracle").is_some();
    outcome(r.passed() && has_oracle, format!("{}", checks_line(&r)))
}

fn c9_kernel_expansion() -> Outcome {
    let win = GridWindow::unit(1, 64).unwrap();
    let pairs = whitney_pairs(&win);
    let (mut res, mut exp) = (0.0f64, f64::INFINITY);
    let (mut sharp_res, mut sharp_exp) = (0.0f64, f64::INFINITY);
    for pair in &pairs {
        let e = kernel_fourier_expansion(pair, 1, 8, KernelCutoff::Smooth).unwrap();
        res = res.max(e.report.residual);
        exp = exp.min(e.report.exponent);
        let s = kernel_fourier_expansion(pair, 1, 8, KernelCutoff::Sharp).unwrap();
        sharp_res = sharp_res.max(s.report.residual);
        sharp_exp = sharp_exp.min(s.report.exponent);
    }
    outcome(
        res <= 0.05 && exp >= 2.0,
        format!(
            "{} pairs, L=8, smooth cutoff: worst residual {res:.4} (≤ 0.05), weakest decay exponent {exp:.3} (≥ 2); sharp cutoff for reference: {sharp_res:.4}, {sharp_exp:.3}",
            pairs.len()
        ),
    )
}

fn c10_necessity(cache: &SpectrumCache) -> Outcome {
    let r = run_kind(ExperimentKind::NecessityTrace, cache, |_| {});
    outcome(r.passed() && r.rows.len() == 30, format!("{} rows: {}", r.rows.len(), checks_line(&r)))
}

fn small_config(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(kind.name(), kind);
    cfg.grid_sizes = match kind {
        ExperimentKind::Collapse => vec![8, 16, 32],
        ExperimentKind::Theorem11Upper | ExperimentKind::NecessityTrace => vec![16],
        _ => vec![16, 32],
    };
    cfg
}

fn c11_determinism() -> Outcome {
    let render = |threads: Option<&str>| -> Vec<String> {
        match threads {
            Some(t) => std::env::set_var(THREADS_ENV, t),
            None => std::env::remove_var(THREADS_ENV),
        }
        let cache = SpectrumCache::new();
        ExperimentKind::ALL
            .iter()
            .flat_map(|&k| {
                let cfg = small_config(k);
                let r = run_experiment_with(&cfg, &cache).unwrap();
                [report_csv(&r, "fixed").unwrap(), report_json(&r, &cfg).unwrap()]
            })
            .collect()
    };
    let first = render(Some("1"));
    let second = render(Some("3"));
    std::env::remove_var(THREADS_ENV);
    let differing = first.iter().zip(&second).filter(|(a, b)| a != b).count();
    outcome(
        differing == 0,
        format!("{} experiments re-run with 1 and 3 workers: {differing} of {} outputs differ", ExperimentKind::ALL.len(), first.len()),
    )
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let cache = SpectrumCache::new();
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "exact weight conjugation", Box::new(c1_conjugation)),
        (2, "Haar suite", Box::new(c2_haar_suite)),
        (3, "constant collapse", Box::new(c3_constant_collapse)),
        (4, "dyadic and continuous Besov equivalence", Box::new(|| c4_besov(&cache))),
        (5, "two-sided Schatten/Besov comparison", Box::new(|| c5_theorem11(&cache))),
        (6, "collapse signature at p = n", Box::new(|| c6_collapse(&cache))),
        (7, "weak class against the gradient", Box::new(|| c7_theorem12(&cache))),
        (8, "quantised derivative", Box::new(|| c8_quantised(&cache))),
        (9, "kernel Fourier expansion", Box::new(c9_kernel_expansion)),
        (10, "necessity trace identity", Box::new(|| c10_necessity(&cache))),
        (11, "determinism", Box::new(c11_determinism)),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in &criteria {
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let status = if out.pass { "PASS" } else { "FAIL" };
        println!("{status} {id:>2} {name} [{:.1}s]: {}", start.elapsed().as_secs_f64(), out.detail);
        if !out.pass && (strict || !KNOWN_FAILURES.contains(id)) {
            unexpected.push(*id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
