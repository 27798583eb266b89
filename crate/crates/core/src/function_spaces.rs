//! Besov, Sobolev, oscillation and Lorentz functionals of sampled symbols.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dyadic_grid::{contained_cubes, far_cube, CubeId, Shift};
use crate::error::{invalid, Error, Result};
use crate::fourier::{fft_nd, signed_freq};
use crate::haar_system::{cube_average, haar_transform, integrate_box, SampledFunction};
use crate::weights::{weighted_measure, Weight};

/// `|x|^p`, using repeated multiplication for small integer `p`.
pub(crate) fn pow_abs(x: f64, p: f64) -> f64 {
    let a = x.abs();
    if p == p.trunc() && (1.0..=8.0).contains(&p) {
        a.powi(p as i32)
    } else {
        a.powf(p)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(invalid(format!("exponent {p} must be positive and finite")));
    }
    Ok(())
}

/// `(Σ_{x≠y} |b(x)-b(y)|^p / |x-y|^{2n} h^{2n})^{1/p}` over sample pairs.
pub fn besov_continuous(b: &SampledFunction, p: f64) -> Result<f64> {
    check_p(p)?;
    let win = &b.window;
    let n = win.dim();
    let ns = win.samples_per_side();
    let h = win.spacing();
    // |x-y|^{-2n} only depends on the absolute index offsets
    let mut kernel = vec![0.0; ns.pow(n as u32)];
    let mut m = vec![0usize; n];
    for (i, k) in kernel.iter_mut().enumerate() {
        win.multi_index(i, &mut m);
        let r2: f64 = m.iter().map(|&d| (d as f64 * h).powi(2)).sum();
        *k = if i == 0 { 0.0 } else { r2.powi(-(n as i32)) };
    }
    let len = win.len();
    let mut mx = vec![0usize; n];
    let mut my = vec![0usize; n];
    let mut total = 0.0;
    for x in 0..len {
        win.multi_index(x, &mut mx);
        let bx = b.values[x];
        let mut row = 0.0;
        for y in x + 1..len {
            win.multi_index(y, &mut my);
            let off = mx.iter().zip(&my).fold(0, |acc, (a, c)| acc * ns + a.abs_diff(*c));
            row += pow_abs(bx - b.values[y], p) * kernel[off];
        }
        total += row;
    }
    Ok((2.0 * total * h.powi(2 * n as i32)).powf(1.0 / p))
}

/// `(Σ (|⟨b,h^ε_Q⟩| |Q|^{-1/2})^p)^{1/p}` over the window cubes of one system.
pub fn besov_dyadic(b: &SampledFunction, p: f64, shift: &Shift) -> Result<f64> {
    check_p(p)?;
    let hc = haar_transform(b, shift)?;
    let s: f64 = hc.entries.iter().map(|(i, c)| pow_abs(c / i.cube.volume().sqrt(), p)).sum();
    Ok(s.powf(1.0 / p))
}

/// Sum of [`besov_dyadic`] over all `3^n` shifted systems.
pub fn besov_dyadic_all_shifts(b: &SampledFunction, p: f64) -> Result<f64> {
    Shift::all(b.window.dim()).iter().map(|s| besov_dyadic(b, p, s)).sum()
}

/// `(Σ (|⟨b,h^ε_Q⟩| |Q|^{1/2} / (w(Q) w^{-1}(Q))^{1/2})^p)^{1/p}`.
pub fn besov_dyadic_weighted(b: &SampledFunction, w: &Weight, p: f64, shift: &Shift) -> Result<f64> {
    check_p(p)?;
    b.same_grid(w.window())?;
    let hc = haar_transform(b, shift)?;
    let inv = w.inverse();
    let mut cache: BTreeMap<&CubeId, f64> = BTreeMap::new();
    let mut s = 0.0;
    for (i, c) in &hc.entries {
        let denom = match cache.get(&i.cube) {
            Some(&d) => d,
            None => {
                let d = (weighted_measure(w, &i.cube)? * weighted_measure(&inv, &i.cube)?).sqrt();
                cache.insert(&i.cube, d);
                d
            }
        };
        s += pow_abs(c * i.cube.volume().sqrt() / denom, p);
    }
    Ok(s.powf(1.0 / p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientScheme {
    /// Centered differences, one-sided at the window boundary.
    Centered,
    /// Exact derivative of the trigonometric interpolant; for periodic symbols.
    Spectral,
}

/// Gradient components at every sample.
pub fn gradient(b: &SampledFunction, scheme: GradientScheme) -> Vec<Vec<f64>> {
    let win = &b.window;
    let n = win.dim();
    let ns = win.samples_per_side();
    let h = win.spacing();
    match scheme {
        GradientScheme::Centered => (0..n)
            .map(|axis| {
                let stride = ns.pow((n - 1 - axis) as u32);
                (0..win.len())
                    .map(|i| {
                        let k = (i / stride) % ns;
                        let v = &b.values;
                        if k == 0 {
                            (v[i + stride] - v[i]) / h
                        } else if k == ns - 1 {
                            (v[i] - v[i - stride]) / h
                        } else {
                            (v[i + stride] - v[i - stride]) / (2.0 * h)
                        }
                    })
                    .collect()
            })
            .collect(),
        GradientScheme::Spectral => {
            let mut spec: Vec<Complex64> = b.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft_nd(&mut spec, ns, n, false);
            let two_pi_over_l = 2.0 * std::f64::consts::PI / win.side();
            let mut m = vec![0usize; n];
            (0..n)
                .map(|axis| {
                    let mut d: Vec<Complex64> = spec
                        .iter()
                        .enumerate()
                        .map(|(i, c)| {
                            win.multi_index(i, &mut m);
                            let k = signed_freq(m[axis], ns);
                            if 2 * k.unsigned_abs() as usize == ns {
                                return Complex64::new(0.0, 0.0);
                            }
                            c * Complex64::new(0.0, two_pi_over_l * k as f64)
                        })
                        .collect();
                    fft_nd(&mut d, ns, n, true);
                    let norm = win.len() as f64;
                    d.iter().map(|c| c.re / norm).collect()
                })
                .collect()
        }
    }
}

/// `(Σ_x |∇b(x)|_2^p h^n)^{1/p}`; `p` is the dimension in the critical case.
pub fn sobolev_seminorm(b: &SampledFunction, p: f64, scheme: GradientScheme) -> Result<f64> {
    check_p(p)?;
    let g = gradient(b, scheme);
    let s: f64 = (0..b.len()).map(|i| pow_abs(g.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt(), p)).sum();
    Ok((s * b.window.cell_volume()).powf(1.0 / p))
}

/// Oscillation value with the fraction of the dilate cut off by the window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Oscillation {
    pub value: f64,
    pub clip_fraction: f64,
}

/// `[|Q|^{-1} ∫_{KQ ∩ window} |b - ⟨b⟩_Q|^α]^{1/α}`.
pub fn oscillation(b: &SampledFunction, q: &CubeId, alpha: f64, dilation: f64) -> Result<Oscillation> {
    check_p(alpha)?;
    if dilation < 1.0 {
        return Err(invalid("dilation factor must be at least 1"));
    }
    let mean = cube_average(b, q)?;
    let big = q.dilate(dilation);
    let (s, measure) = integrate_box(&b.window, |i| pow_abs(b.values[i] - mean, alpha), &big)
        .ok_or_else(|| Error::OutsideWindow(q.to_string()))?;
    Ok(Oscillation { value: (s / q.volume()).powf(1.0 / alpha), clip_fraction: 1.0 - measure / big.volume() })
}

/// `|Q|^{-1} ∫_Q |b - ⟨b⟩_Q|`.
pub fn mean_oscillation(b: &SampledFunction, q: &CubeId) -> Result<f64> {
    let mean = cube_average(b, q)?;
    far_mean_deviation(b, q, mean)
}

/// `|Q|^{-1} ∫_Q |b - c|`.
fn far_mean_deviation(b: &SampledFunction, q: &CubeId, c: f64) -> Result<f64> {
    let (s, _) = integrate_box(&b.window, |i| (b.values[i] - c).abs(), &q.geometry())
        .ok_or_else(|| Error::OutsideWindow(q.to_string()))?;
    Ok(s / q.volume())
}

/// `|Q|^{-1} ∫_Q |b - ⟨b⟩_{Q̂}|` with `Q̂` the far cube along `axis`.
pub fn far_mean_oscillation(b: &SampledFunction, q: &CubeId, axis: usize) -> Result<f64> {
    let far = far_cube(q, axis, &b.window)?;
    far_mean_deviation(b, q, cube_average(b, &far)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceLabel {
    BesovTerm,
    Osc,
    MeanOsc,
    FarMeanOsc,
    Custom,
}

/// Nonnegative values indexed by window cubes.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeSequence {
    pub label: SequenceLabel,
    pub entries: BTreeMap<CubeId, f64>,
}

impl CubeSequence {
    pub fn values(&self) -> Vec<f64> {
        self.entries.values().copied().collect()
    }
}

/// `osc_α(b, Q)` over the standard window cubes.
pub fn oscillation_sequence(b: &SampledFunction, alpha: f64, dilation: f64) -> Result<CubeSequence> {
    let mut entries = BTreeMap::new();
    for q in contained_cubes(&b.window, &Shift::zero(b.window.dim())) {
        entries.insert(q.clone(), oscillation(b, &q, alpha, dilation)?.value);
    }
    Ok(CubeSequence { label: SequenceLabel::Osc, entries })
}

/// `|Q|^{-1} ∫_Q |b - ⟨b⟩_{Q̂}|` over standard window cubes whose far cube stays inside.
pub fn far_mean_oscillation_sequence(b: &SampledFunction, axis: usize, max_level: i32) -> Result<CubeSequence> {
    let mut entries = BTreeMap::new();
    for q in contained_cubes(&b.window, &Shift::zero(b.window.dim())) {
        if q.level > max_level {
            continue;
        }
        match far_mean_oscillation(b, &q, axis) {
            Ok(v) => {
                entries.insert(q, v);
            }
            Err(Error::OutsideWindow(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(CubeSequence { label: SequenceLabel::FarMeanOsc, entries })
}

/// Lorentz exponents; `q` may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzParams {
    pub p: f64,
    #[serde(with = "crate::exponent_serde")]
    pub q: f64,
}

impl LorentzParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) || !(q > 0.0) {
            return Err(invalid(format!("Lorentz exponents ({p}, {q}) must be positive with p finite")));
        }
        Ok(LorentzParams { p, q })
    }
}

/// Lorentz norm with the index `k` at which the weak-type supremum is attained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzValue {
    pub value: f64,
    pub argmax_k: Option<usize>,
}

/// `(Σ (a*_k)^q (1+k)^{q/p-1})^{1/q}`, or `sup a*_k (1+k)^{1/p}` for infinite `q`, with `k` from 1.
pub fn lorentz_norm(values: &[f64], params: LorentzParams) -> LorentzValue {
    let mut a: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    let LorentzParams { p, q } = params;
    if q.is_infinite() {
        let mut best = LorentzValue { value: 0.0, argmax_k: None };
        for (i, v) in a.iter().enumerate() {
            let k = i + 1;
            let t = v * ((1 + k) as f64).powf(1.0 / p);
            if t > best.value {
                best = LorentzValue { value: t, argmax_k: Some(k) };
            }
        }
        return best;
    }
    let e = q / p - 1.0;
    let s: f64 = a.iter().enumerate().map(|(i, v)| pow_abs(*v, q) * ((2 + i) as f64).powf(e)).sum();
    LorentzValue { value: s.powf(1.0 / q), argmax_k: None }
}

/// Constant `C` with `‖a‖_{p2,q2} ≤ C ‖a‖_{p1,q1}` for sequences of length at most `len`,
/// valid when `p1 ≤ p2` and `q1 ≤ q2`.
pub fn lorentz_inclusion_constant(from: LorentzParams, to: LorentzParams, len: usize) -> Result<f64> {
    if from.p > to.p || from.q > to.q {
        return Err(invalid("inclusion needs p1 <= p2 and q1 <= q2"));
    }
    // raising p at fixed q: (1+k)^{q/p2-1} ≤ 2^{q/p2-q/p1} (1+k)^{q/p1-1}
    let c_p = 2f64.powf(1.0 / to.p - 1.0 / from.p);
    if from.q == to.q {
        return Ok(c_p);
    }
    // weak-type bound at p2 from the partial sums of the (p2, q1) weights
    let (p, q1) = (to.p, from.q);
    let mut partial = 0.0;
    let mut c_inf: f64 = 0.0;
    for k in 1..=len.max(1) {
        partial += ((1 + k) as f64).powf(q1 / p - 1.0);
        c_inf = c_inf.max(((1 + k) as f64).powf(1.0 / p) / partial.powf(1.0 / q1));
    }
    let c_q = if to.q.is_infinite() { c_inf } else { c_inf.powf(1.0 - q1 / to.q) };
    Ok(c_q * c_p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic_grid::GridWindow;
    use crate::haar_system::{haar_function, HaarIndex, Signature};
    use proptest::prelude::*;

    fn bump1(x: &[f64]) -> f64 {
        (-(x[0] - 0.5).powi(2) / (2.0 * 0.08f64.powi(2))).exp()
    }

    #[test]
    fn besov_continuous_basic() {
        let w = GridWindow::unit(2, 16).unwrap();
        assert_eq!(besov_continuous(&SampledFunction::constant(&w, 3.0), 4.0).unwrap(), 0.0);
        let b = SampledFunction::from_fn(&w, |x| (x[0] * 6.0).sin() * x[1]);
        let a = besov_continuous(&b, 4.0).unwrap();
        let a3 = besov_continuous(&b.map(|v| -3.0 * v), 4.0).unwrap();
        assert!((a3 - 3.0 * a).abs() < 1e-12 * a3);
    }

    /// Plain double loop, no offset table.
    fn besov_brute(b: &SampledFunction, p: f64) -> f64 {
        let w = &b.window;
        let pts = w.points();
        let n = w.dim() as i32;
        let mut s = 0.0;
        for (i, x) in pts.iter().enumerate() {
            for (j, y) in pts.iter().enumerate() {
                if i == j {
                    continue;
                }
                let r2: f64 = x.iter().zip(y).map(|(a, c)| (a - c).powi(2)).sum();
                s += (b.values[i] - b.values[j]).abs().powf(p) / r2.powi(n);
            }
        }
        (s * w.cell_volume().powi(2)).powf(1.0 / p)
    }

    #[test]
    fn besov_continuous_matches_brute_force() {
        let w = GridWindow::unit(2, 8).unwrap();
        let b = SampledFunction::from_fn(&w, |x| (3.0 * x[0] - x[1]).cos());
        for p in [2.0, 2.5, 4.0] {
            let a = besov_continuous(&b, p).unwrap();
            let c = besov_brute(&b, p);
            assert!((a - c).abs() < 1e-12 * c);
        }
    }

    #[test]
    fn besov_continuous_refinement_1d() {
        let a = besov_continuous(&SampledFunction::from_fn(&GridWindow::unit(1, 128).unwrap(), bump1), 2.0).unwrap();
        let b = besov_continuous(&SampledFunction::from_fn(&GridWindow::unit(1, 256).unwrap(), bump1), 2.0).unwrap();
        assert!((a / b - 1.0).abs() < 0.25, "{a} {b}");
    }

    #[test]
    fn besov_dyadic_examples() {
        let w = GridWindow::unit(2, 16).unwrap();
        for s in Shift::all(2) {
            assert!(besov_dyadic(&SampledFunction::constant(&w, 2.0), 4.0, &s).unwrap() < 1e-12);
        }
        let idx = HaarIndex { cube: "0,0:2:1,2".parse().unwrap(), sig: Signature::new(vec![0, 1]).unwrap() };
        let h = haar_function(&idx, &w).unwrap();
        let v = besov_dyadic(&h, 4.0, &Shift::zero(2)).unwrap();
        assert!((v - idx.cube.volume().powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn weighted_besov_examples() {
        let w = GridWindow::unit(2, 16).unwrap();
        let b = SampledFunction::from_fn(&w, |x| (5.0 * x[0]).sin() + x[1] * x[1]);
        let one = Weight::constant(&w, 1.0).unwrap();
        for s in Shift::all(2) {
            let plain = besov_dyadic(&b, 4.0, &s).unwrap();
            let weighted = besov_dyadic_weighted(&b, &one, 4.0, &s).unwrap();
            assert!((plain - weighted).abs() <= 1e-12 * plain);
        }
        let pw = Weight::power(&w, 0.5, None).unwrap();
        assert!(besov_dyadic_weighted(&SampledFunction::constant(&w, 1.0), &pw, 4.0, &Shift::zero(2)).unwrap() < 1e-12);
        // per-term ratio is 1/sqrt(avg w avg w^{-1}) ∈ [[w]^{-1/2}, 1]
        let a2 = crate::weights::a2_constant(&pw);
        let hc = haar_transform(&b, &Shift::zero(2)).unwrap();
        let inv = pw.inverse();
        for (i, c) in &hc.entries {
            let plain = c.abs() / i.cube.volume().sqrt();
            let wt = c.abs() * i.cube.volume().sqrt()
                / (weighted_measure(&pw, &i.cube).unwrap() * weighted_measure(&inv, &i.cube).unwrap()).sqrt();
            if plain > 1e-14 {
                let r = wt / plain;
                assert!(r <= 1.0 + 1e-12 && r >= a2.powf(-0.5) * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn sobolev_examples() {
        let w = GridWindow::unit(1, 64).unwrap();
        assert_eq!(sobolev_seminorm(&SampledFunction::constant(&w, 1.0), 1.0, GradientScheme::Centered).unwrap(), 0.0);
        let b = SampledFunction::from_fn(&w, |x| x[0]);
        assert!((sobolev_seminorm(&b, 1.0, GradientScheme::Centered).unwrap() - 1.0).abs() < 1e-12);

        // ‖∇ exp(-|x-c|²/(2s²))‖_{L²(ℝ²)} = √π for every width s
        let w = GridWindow::unit(2, 256).unwrap();
        let s = 0.1;
        let g = SampledFunction::from_fn(&w, |x| (-((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)) / (2.0 * s * s)).exp());
        let v = sobolev_seminorm(&g, 2.0, GradientScheme::Centered).unwrap();
        assert!((v / std::f64::consts::PI.sqrt() - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn spectral_gradient_of_trig_polynomial() {
        let w = GridWindow::unit(2, 32).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let b = SampledFunction::from_fn(&w, |x| (tau * x[0]).sin() * (2.0 * tau * x[1]).cos());
        let g = gradient(&b, GradientScheme::Spectral);
        for (i, x) in w.points().iter().enumerate() {
            let gx = tau * (tau * x[0]).cos() * (2.0 * tau * x[1]).cos();
            let gy = -2.0 * tau * (tau * x[0]).sin() * (2.0 * tau * x[1]).sin();
            assert!((g[0][i] - gx).abs() < 1e-11 && (g[1][i] - gy).abs() < 1e-11);
        }
    }

    #[test]
    fn oscillation_examples() {
        let w = GridWindow::unit(1, 64).unwrap();
        let b = SampledFunction::from_fn(&w, |x| x[0]);
        let q: CubeId = "0:0:0".parse().unwrap();
        assert!((mean_oscillation(&b, &q).unwrap() - 0.25).abs() < 1e-15);
        let o = oscillation(&b, &q, 1.0, 1.0).unwrap();
        assert!((o.value - 0.25).abs() < 1e-15 && o.clip_fraction == 0.0);
        assert_eq!(mean_oscillation(&SampledFunction::constant(&w, 2.0), &q).unwrap(), 0.0);

        let w = GridWindow::unit(2, 32).unwrap();
        let b = SampledFunction::from_fn(&w, |x| (4.0 * x[0]).sin() + x[1].powi(3));
        let q: CubeId = "0,0:2:1,2".parse().unwrap();
        let mut prev = 0.0;
        for k in [1.0, 2.0, 3.0, 5.0, 9.0] {
            let o = oscillation(&b, &q, 3.0, k).unwrap();
            assert!(o.value >= prev);
            prev = o.value;
        }
        let big = oscillation(&b, &q, 2.0, 9.0).unwrap();
        assert!(big.clip_fraction > 0.0 && big.clip_fraction < 1.0);

        // shift invariance and the factor 2 against the best constant
        let shifted = b.map(|v| v + 11.0);
        let m = mean_oscillation(&b, &q).unwrap();
        assert!((mean_oscillation(&shifted, &q).unwrap() - m).abs() < 1e-12);
        let mut best = f64::INFINITY;
        for i in 0..=400 {
            let c = -1.0 + i as f64 * 0.01;
            best = best.min(far_mean_deviation(&b, &q, c).unwrap());
        }
        assert!(m <= 2.0 * best + 1e-12);
    }

    #[test]
    fn lorentz_examples() {
        let inf = LorentzParams::new(1.0, f64::INFINITY).unwrap();
        assert_eq!(lorentz_norm(&[], inf).value, 0.0);
        let a: Vec<f64> = (1..=50).map(|k| 1.0 / k as f64).collect();
        let v = lorentz_norm(&a, inf);
        assert_eq!(v.value, 2.0);
        assert_eq!(v.argmax_k, Some(1));
        let a = [0.3, 2.0, 1.0, 0.5];
        let v = lorentz_norm(&a, LorentzParams::new(3.0, 3.0).unwrap()).value;
        let plain = a.iter().map(|x: &f64| x.powi(3)).sum::<f64>().cbrt();
        assert!((v - plain).abs() < 1e-15);
        assert!(LorentzParams::new(f64::INFINITY, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn lorentz_inclusions(a in proptest::collection::vec(0.0f64..10.0, 1..60),
                              p1 in 0.5f64..4.0, dp in 0.0f64..3.0, q1 in 0.5f64..4.0, dq in 0.0f64..3.0, qinf in any::<bool>()) {
            let from = LorentzParams::new(p1, q1).unwrap();
            let to = LorentzParams::new(p1 + dp, if qinf { f64::INFINITY } else { q1 + dq }).unwrap();
            let c = lorentz_inclusion_constant(from, to, a.len()).unwrap();
            let lhs = lorentz_norm(&a, to).value;
            let rhs = lorentz_norm(&a, from).value;
            prop_assert!(lhs <= c * rhs * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn lorentz_homogeneous(a in proptest::collection::vec(-5.0f64..5.0, 0..40), s in -4.0f64..4.0, p in 0.5f64..4.0, q in 0.5f64..6.0) {
            let prm = LorentzParams::new(p, q).unwrap();
            let scaled: Vec<f64> = a.iter().map(|v| s * v).collect();
            let l = lorentz_norm(&scaled, prm).value;
            let r = s.abs() * lorentz_norm(&a, prm).value;
            prop_assert!((l - r).abs() <= 1e-12 * r.max(1e-300));
        }
    }
}
