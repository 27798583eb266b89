//! Tensor Haar functions on sampled grids.
//!
//! Samples are read as a piecewise-constant function on the sample cells, so an
//! inner product with an indicator or Haar function is the exact integral of
//! that interpolant. On standard cubes of an aligned window this is the plain
//! Riemann sum `Σ b h^ε_Q h^n`; on shifted cubes partial cells get fractional
//! weights, which keeps the vanishing mean of `h^ε_Q` exact.

use std::collections::BTreeMap;
use std::fmt;

use crate::dyadic_grid::{contained_cubes, cubes_at_level, BoxRegion, CubeId, GridWindow, Shift};
use crate::error::{invalid, Error, Result};

/// Samples on the cell centers of a window, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledFunction {
    pub window: GridWindow,
    pub values: Vec<f64>,
}

impl SampledFunction {
    pub fn new(window: GridWindow, values: Vec<f64>) -> Result<Self> {
        if values.len() != window.len() {
            return Err(invalid(format!("{} samples given, window has {}", values.len(), window.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(SampledFunction { window, values })
    }

    pub fn from_fn(window: &GridWindow, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..window.len()).map(|i| f(&window.point(i))).collect();
        SampledFunction { window: window.clone(), values }
    }

    pub fn constant(window: &GridWindow, c: f64) -> Self {
        SampledFunction { window: window.clone(), values: vec![c; window.len()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Σ f g h^n`.
    pub fn dot(&self, other: &SampledFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.window.cell_volume()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_lp(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.values.iter().fold(0.0, |m, v| m.max(v.abs()));
        }
        (self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * self.window.cell_volume()).powf(1.0 / p)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SampledFunction {
        SampledFunction { window: self.window.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub(crate) fn same_grid(&self, other: &GridWindow) -> Result<()> {
        if &self.window != other {
            return Err(Error::IncompatibleGrids("sampled function lives on a different window".into()));
        }
        Ok(())
    }
}

/// Haar signature; `eps[i] = 1` is the indicator factor along axis `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature(Vec<u8>);

impl Signature {
    pub fn new(eps: Vec<u8>) -> Result<Self> {
        if eps.is_empty() || eps.iter().any(|&e| e > 1) {
            return Err(invalid("signature entries must be 0 or 1"));
        }
        Ok(Signature(eps))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_cancellative(&self) -> bool {
        self.0.iter().any(|&e| e == 0)
    }

    /// The `2^n - 1` cancellative signatures in lexicographic order.
    pub fn cancellative(dim: usize) -> Vec<Signature> {
        (0..(1usize << dim) - 1)
            .map(|code| Signature((0..dim).map(|i| ((code >> (dim - 1 - i)) & 1) as u8).collect()))
            .collect()
    }

    /// Sign of `h^ε` on the child selected by `child_bits` (bit `n-1-i` set for the upper half along axis `i`).
    pub fn sign_on_child(&self, child_bits: usize) -> f64 {
        let n = self.dim();
        let mut s = 1.0;
        for i in 0..n {
            if self.0[i] == 0 && (child_bits >> (n - 1 - i)) & 1 == 1 {
                s = -s;
            }
        }
        s
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.0 {
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HaarIndex {
    pub cube: CubeId,
    pub sig: Signature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformPath {
    Pyramid,
    Direct,
}

/// Cancellative Haar coefficients of one shifted system plus the coarse averages.
#[derive(Clone, Debug)]
pub struct HaarCoefficients {
    pub window: GridWindow,
    pub shift: Shift,
    pub entries: BTreeMap<HaarIndex, f64>,
    /// `⟨b⟩_Q` for the window cubes at the coarsest level.
    pub coarse: BTreeMap<CubeId, f64>,
    pub path: TransformPath,
}

impl HaarCoefficients {
    pub fn get(&self, cube: &CubeId, sig: &Signature) -> Option<f64> {
        self.entries.get(&HaarIndex { cube: cube.clone(), sig: sig.clone() }).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `Σ c² + Σ |Q| ⟨b⟩_Q²` over the coarse cubes.
    pub fn energy(&self) -> f64 {
        let fine: f64 = self.entries.values().map(|c| c * c).sum();
        let coarse: f64 = self.coarse.iter().map(|(q, a)| q.volume() * a * a).sum();
        fine + coarse
    }
}

/// Per-axis quadrature weights over a contiguous run of cells.
#[derive(Clone, Debug)]
pub(crate) struct AxisFactor {
    pub start: usize,
    pub w: Vec<f64>,
}

pub(crate) fn indicator_factor(win: &GridWindow, axis: usize, lo: f64, hi: f64) -> Option<AxisFactor> {
    let (a, b) = win.cell_range(axis, lo, hi)?;
    let w: Vec<f64> = (a..=b).map(|i| win.cell_overlap(axis, i, lo, hi)).collect();
    if w.iter().all(|&v| v == 0.0) {
        return None;
    }
    Some(AxisFactor { start: a, w })
}

/// Quadrature factors for the indicator of a box, clipped to the window.
pub(crate) fn box_factors(win: &GridWindow, region: &BoxRegion) -> Option<Vec<AxisFactor>> {
    (0..win.dim()).map(|i| indicator_factor(win, i, region.lo[i], region.hi[i])).collect()
}

/// `∫ f(x) Π_i w_i(x_i) dx` for the piecewise-constant interpolant `f`.
pub(crate) fn contract(win: &GridWindow, f: impl Fn(usize) -> f64, factors: &[AxisFactor]) -> f64 {
    let n = win.dim();
    let ns = win.samples_per_side();
    let mut idx = vec![0usize; n];
    let mut total = 0.0;
    loop {
        let mut flat = 0;
        let mut w = 1.0;
        for a in 0..n {
            flat = flat * ns + factors[a].start + idx[a];
            w *= factors[a].w[idx[a]];
        }
        if w != 0.0 {
            total += w * f(flat);
        }
        let mut a = n;
        loop {
            if a == 0 {
                return total;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < factors[a].w.len() {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Visit the flat indices covered by `factors` together with their weight product.
pub(crate) fn for_each_cell(win: &GridWindow, factors: &[AxisFactor], mut visit: impl FnMut(usize, f64)) {
    let n = win.dim();
    let ns = win.samples_per_side();
    let mut idx = vec![0usize; n];
    loop {
        let mut flat = 0;
        let mut w = 1.0;
        for a in 0..n {
            flat = flat * ns + factors[a].start + idx[a];
            w *= factors[a].w[idx[a]];
        }
        if w != 0.0 {
            visit(flat, w);
        }
        let mut a = n;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < factors[a].w.len() {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// `∫_{region ∩ window} f` and the measure of the intersection.
pub(crate) fn integrate_box(win: &GridWindow, f: impl Fn(usize) -> f64, region: &BoxRegion) -> Option<(f64, f64)> {
    let fac = box_factors(win, region)?;
    let measure: f64 = fac.iter().map(|a| a.w.iter().sum::<f64>()).product();
    if measure <= 0.0 {
        return None;
    }
    Some((contract(win, f, &fac), measure))
}

fn check_resolvable(win: &GridWindow, q: &CubeId) -> Result<()> {
    if q.side() < 2.0 * win.spacing() * (1.0 - 1e-12) {
        return Err(Error::Unresolvable { cube: q.to_string(), side: q.side(), spacing: win.spacing() });
    }
    Ok(())
}

/// Integrals of `b` over the `2^n` children of `q`, indexed by child bits.
fn child_integrals(b: &SampledFunction, q: &CubeId) -> Vec<f64> {
    (0..1usize << q.dim())
        .map(|bits| {
            let c = q.child(bits).geometry();
            box_factors(&b.window, &c).map(|f| contract(&b.window, |i| b.values[i], &f)).unwrap_or(0.0)
        })
        .collect()
}

fn combine(children: &[f64], sig: &Signature, volume: f64) -> f64 {
    children.iter().enumerate().map(|(bits, s)| sig.sign_on_child(bits) * s).sum::<f64>() / volume.sqrt()
}

/// `h^ε_Q` evaluated at the sample points.
pub fn haar_function(idx: &HaarIndex, win: &GridWindow) -> Result<SampledFunction> {
    let q = &idx.cube;
    if q.dim() != win.dim() || idx.sig.dim() != win.dim() {
        return Err(invalid("Haar index dimension differs from window"));
    }
    check_resolvable(win, q)?;
    let geo = q.geometry();
    let amp = q.volume().sqrt().recip();
    let mid: Vec<f64> = (0..q.dim()).map(|i| geo.lo[i] + 0.5 * q.side()).collect();
    Ok(SampledFunction::from_fn(win, |x| {
        if !geo.contains_point(x) {
            return 0.0;
        }
        let mut v = amp;
        for i in 0..x.len() {
            if idx.sig.0[i] == 0 && x[i] >= mid[i] {
                v = -v;
            }
        }
        v
    }))
}

/// `⟨b, h^ε_Q⟩` by direct quadrature.
pub fn haar_coefficient(b: &SampledFunction, idx: &HaarIndex) -> Result<f64> {
    check_resolvable(&b.window, &idx.cube)?;
    if !idx.sig.is_cancellative() {
        // indicator-only signature: the normalized mean over the cube
        return Ok(cube_integral(b, &idx.cube) / idx.cube.volume().sqrt());
    }
    Ok(combine(&child_integrals(b, &idx.cube), &idx.sig, idx.cube.volume()))
}

fn cube_integral(b: &SampledFunction, q: &CubeId) -> f64 {
    box_factors(&b.window, &q.geometry()).map(|f| contract(&b.window, |i| b.values[i], &f)).unwrap_or(0.0)
}

/// `⟨b⟩_Q` over the part of `Q` inside the window.
pub fn cube_average(b: &SampledFunction, q: &CubeId) -> Result<f64> {
    let (s, m) = integrate_box(&b.window, |i| b.values[i], &q.geometry())
        .ok_or_else(|| Error::OutsideWindow(q.to_string()))?;
    Ok(s / m)
}

/// All cancellative coefficients of one shifted system over the window cubes
/// contained in the domain.
pub fn haar_transform(b: &SampledFunction, shift: &Shift) -> Result<HaarCoefficients> {
    let win = &b.window;
    if shift.dim() != win.dim() {
        return Err(invalid("shift dimension differs from window"));
    }
    if shift.is_zero() && win.is_aligned() {
        return Ok(pyramid(b));
    }
    let sigs = Signature::cancellative(win.dim());
    let mut entries = BTreeMap::new();
    for q in contained_cubes(win, shift) {
        let ch = child_integrals(b, &q);
        for s in &sigs {
            entries.insert(HaarIndex { cube: q.clone(), sig: s.clone() }, combine(&ch, s, q.volume()));
        }
    }
    let mut coarse = BTreeMap::new();
    for q in cubes_at_level(win, shift, win.k_min(), true) {
        coarse.insert(q.clone(), cube_integral(b, &q) / q.volume());
    }
    Ok(HaarCoefficients { window: win.clone(), shift: shift.clone(), entries, coarse, path: TransformPath::Direct })
}

fn pyramid(b: &SampledFunction) -> HaarCoefficients {
    let win = &b.window;
    let n = win.dim();
    let nch = 1usize << n;
    let sigs = Signature::cancellative(n);
    let shift = Shift::zero(n);
    let cell_level = (-win.spacing().log2()).round() as i32;
    let mut sums: Vec<f64> = b.values.iter().map(|v| v * win.cell_volume()).collect();
    let mut count = win.samples_per_side();
    let mut level = cell_level;
    let mut entries = BTreeMap::new();
    let mut mi = vec![0usize; n];
    let mut ci = vec![0usize; n];
    while level > win.k_min() {
        let pc = count / 2;
        let plevel = level - 1;
        let scale = crate::dyadic_grid::pow2(plevel);
        let base: Vec<i64> = win.origin().iter().map(|o| (o * scale).round() as i64).collect();
        let vol = crate::dyadic_grid::pow2(-plevel * n as i32);
        let mut parent = vec![0.0; pc.pow(n as u32)];
        let mut children = vec![0.0; nch];
        for (pidx, slot) in parent.iter_mut().enumerate() {
            let mut r = pidx;
            for a in (0..n).rev() {
                mi[a] = r % pc;
                r /= pc;
            }
            for (bits, c) in children.iter_mut().enumerate() {
                for a in 0..n {
                    ci[a] = 2 * mi[a] + ((bits >> (n - 1 - a)) & 1);
                }
                let flat = ci.iter().fold(0, |acc, &i| acc * count + i);
                *c = sums[flat];
            }
            *slot = children.iter().sum();
            if plevel <= win.k_max() {
                let offset: Vec<i64> = (0..n).map(|a| base[a] + mi[a] as i64).collect();
                let cube = CubeId { shift: shift.clone(), level: plevel, offset };
                for s in &sigs {
                    entries.insert(HaarIndex { cube: cube.clone(), sig: s.clone() }, combine(&children, s, vol));
                }
            }
        }
        sums = parent;
        count = pc;
        level = plevel;
    }
    let scale = crate::dyadic_grid::pow2(level);
    let base: Vec<i64> = win.origin().iter().map(|o| (o * scale).round() as i64).collect();
    let vol = crate::dyadic_grid::pow2(-level * n as i32);
    let mut coarse = BTreeMap::new();
    for (idx, s) in sums.iter().enumerate() {
        let mut r = idx;
        for a in (0..n).rev() {
            mi[a] = r % count;
            r /= count;
        }
        let offset = (0..n).map(|a| base[a] + mi[a] as i64).collect();
        coarse.insert(CubeId { shift: shift.clone(), level, offset }, s / vol);
    }
    HaarCoefficients { window: win.clone(), shift, entries, coarse, path: TransformPath::Pyramid }
}

/// Value of `h^ε_P` on a cube strictly inside `P`.
pub fn haar_value_on(p: &CubeId, sig: &Signature, q: &CubeId) -> f64 {
    let n = p.dim();
    let mut bits = 0usize;
    for i in 0..n {
        let mid = p.lower(i) + 0.5 * p.side();
        if q.lower(i) >= mid {
            bits |= 1 << (n - 1 - i);
        }
    }
    sig.sign_on_child(bits) / p.volume().sqrt()
}

/// `⟨b⟩_Q` rebuilt from the coarse average and the coefficients of the strict ancestors of `Q`.
pub fn average_from_coefficients(coeffs: &HaarCoefficients, q: &CubeId) -> Result<f64> {
    let kmin = coeffs.window.k_min();
    if q.level < kmin || q.level > coeffs.window.k_max() + 1 {
        return Err(invalid(format!("cube {q} outside the transformed level range")));
    }
    let mut anc = q.clone();
    let mut chain = Vec::new();
    while anc.level > kmin {
        anc = anc.parent();
        chain.push(anc.clone());
    }
    let mut avg = *coeffs.coarse.get(&anc).ok_or_else(|| Error::OutsideWindow(anc.to_string()))?;
    let sigs = Signature::cancellative(q.dim());
    for p in &chain {
        for s in &sigs {
            let c = coeffs.get(p, s).ok_or_else(|| Error::OutsideWindow(p.to_string()))?;
            avg += c * haar_value_on(p, s, q);
        }
    }
    Ok(avg)
}

/// `Σ c h^ε_Q`, optionally with the coarse averages added back.
pub fn synthesize(coeffs: &HaarCoefficients, with_coarse: bool) -> Result<SampledFunction> {
    let win = &coeffs.window;
    let mut out = SampledFunction::constant(win, 0.0);
    for (idx, c) in &coeffs.entries {
        add_haar(&mut out.values, win, &idx.cube, &idx.sig, *c);
    }
    if with_coarse {
        for (q, a) in &coeffs.coarse {
            let geo = q.geometry();
            for (i, v) in out.values.iter_mut().enumerate() {
                if geo.contains_point(&win.point(i)) {
                    *v += a;
                }
            }
        }
    }
    Ok(out)
}

fn add_haar(values: &mut [f64], win: &GridWindow, q: &CubeId, sig: &Signature, c: f64) {
    let geo = q.geometry();
    let Some(fac) = box_factors(win, &geo) else { return };
    let amp = c / q.volume().sqrt();
    let n = q.dim();
    let mid: Vec<f64> = (0..n).map(|i| geo.lo[i] + 0.5 * q.side()).collect();
    let mut m = vec![0usize; n];
    for_each_cell(win, &fac, |flat, _| {
        win.multi_index(flat, &mut m);
        let mut v = amp;
        for i in 0..n {
            let x = win.coord(i, m[i]);
            if !(geo.lo[i] <= x && x < geo.hi[i]) {
                return;
            }
            if sig.0[i] == 0 && x >= mid[i] {
                v = -v;
            }
        }
        values[flat] += v;
    });
}

/// Expansion of `(b - ⟨b⟩_Q) χ_Q` over the cancellative Haar functions of sub-cubes of `Q`.
#[derive(Clone, Debug)]
pub struct MeanOscillationExpansion {
    pub terms: Vec<(HaarIndex, f64)>,
    /// `L²` norm of the part not captured at resolvable scales.
    pub residual: f64,
}

pub fn expand_mean_oscillation(b: &SampledFunction, q: &CubeId) -> Result<MeanOscillationExpansion> {
    let win = &b.window;
    check_resolvable(win, q)?;
    if !win.contains_cube(q) {
        return Err(Error::OutsideWindow(q.to_string()));
    }
    let mean = cube_average(b, q)?;
    let finest = win.finest_resolvable_level();
    let sigs = Signature::cancellative(q.dim());
    let mut terms = Vec::new();
    let mut level_cubes = vec![q.clone()];
    let mut recon = SampledFunction::constant(win, 0.0);
    for _ in q.level..=finest {
        let mut next = Vec::new();
        for r in &level_cubes {
            let ch = child_integrals(b, r);
            for s in &sigs {
                let c = combine(&ch, s, r.volume());
                add_haar(&mut recon.values, win, r, s, c);
                terms.push((HaarIndex { cube: r.clone(), sig: s.clone() }, c));
            }
            next.extend(r.children());
        }
        level_cubes = next;
    }
    let geo = q.geometry();
    let mut err = 0.0;
    for (i, v) in b.values.iter().enumerate() {
        let target = if geo.contains_point(&win.point(i)) { v - mean } else { 0.0 };
        let d = target - recon.values[i];
        err += d * d;
    }
    Ok(MeanOscillationExpansion { terms, residual: (err * win.cell_volume()).sqrt() })
}

/// `f*(x) = sup_{Q ∋ x} |⟨f, e_Q⟩| / |Q|^{1/2}` over a family of functions adapted to cubes.
pub fn nwo_maximal(f: &SampledFunction, family: &[(CubeId, SampledFunction)]) -> Result<SampledFunction> {
    let win = &f.window;
    let mut out = SampledFunction::constant(win, 0.0);
    for (q, e) in family {
        e.same_grid(win)?;
        let v = f.dot(e).abs() / q.volume().sqrt();
        let geo = q.geometry();
        for (i, o) in out.values.iter_mut().enumerate() {
            if v > *o && geo.contains_point(&win.point(i)) {
                *o = v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic_grid::enumerate_cubes;
    use proptest::prelude::*;

    fn idx(s: &str, sig: &[u8]) -> HaarIndex {
        HaarIndex { cube: s.parse().unwrap(), sig: Signature::new(sig.to_vec()).unwrap() }
    }

    #[test]
    fn haar_function_examples() {
        let w = GridWindow::new(vec![0.0], 1.0, 0, 2, 8).unwrap();
        let h = haar_function(&idx("0:0:0", &[0]), &w).unwrap();
        assert_eq!(h.values, vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]);
        let r = 2f64.sqrt();
        let h = haar_function(&idx("0:1:0", &[0]), &w).unwrap();
        for (u, v) in h.values.iter().zip([r, r, -r, -r, 0.0, 0.0, 0.0, 0.0]) {
            assert!((u - v).abs() <= 4.0 * f64::EPSILON);
        }

        let w = GridWindow::new(vec![0.0], 1.0, 0, 1, 4).unwrap();
        assert!(matches!(haar_function(&idx("0:2:0", &[0]), &w), Err(Error::Unresolvable { .. })));
    }

    #[test]
    fn l1_times_sup_is_one() {
        let w = GridWindow::unit(2, 16).unwrap();
        for q in enumerate_cubes(&w, &Shift::zero(2)) {
            for s in Signature::cancellative(2) {
                let h = haar_function(&HaarIndex { cube: q.clone(), sig: s }, &w).unwrap();
                let l1 = h.norm_lp(1.0);
                let sup = h.norm_lp(f64::INFINITY);
                assert!((l1 * sup - 1.0).abs() < 1e-12);
                assert!((h.norm_l2() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coefficient_examples() {
        let w = GridWindow::new(vec![0.0], 1.0, 0, 2, 8).unwrap();
        let b = SampledFunction::constant(&w, 3.7);
        assert_eq!(haar_coefficient(&b, &idx("0:1:1", &[0])).unwrap(), 0.0);
        // b = x on [0,1), Q = [0,1): ∫_0^{1/2} x - ∫_{1/2}^1 x = -1/4, midpoint rule exact for linear
        let b = SampledFunction::from_fn(&w, |x| x[0]);
        let c = haar_coefficient(&b, &idx("0:0:0", &[0])).unwrap();
        assert!((c + 0.25).abs() < 1e-15);
        // 2D: b = x_1 with ε = (0,1) picks up the slope, ε = (1,0) sees none
        let w = GridWindow::unit(2, 8).unwrap();
        let b = SampledFunction::from_fn(&w, |x| x[0]);
        let c01 = haar_coefficient(&b, &idx("0,0:0:0,0", &[0, 1])).unwrap();
        let c10 = haar_coefficient(&b, &idx("0,0:0:0,0", &[1, 0])).unwrap();
        assert!((c01 + 0.25).abs() < 1e-15);
        assert!(c10.abs() < 1e-15);
    }

    #[test]
    fn constant_collapse_on_shifted_cubes() {
        let w = GridWindow::unit(2, 32).unwrap();
        let b = SampledFunction::constant(&w, -2.5);
        for shift in Shift::all(2) {
            let hc = haar_transform(&b, &shift).unwrap();
            assert!(!hc.is_empty() || !shift.is_zero());
            for c in hc.entries.values() {
                assert!(c.abs() < 1e-13, "{shift}: {c}");
            }
            for a in hc.coarse.values() {
                assert!((a + 2.5).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn pyramid_equals_direct() {
        let w = GridWindow::unit(2, 32).unwrap();
        let b = SampledFunction::from_fn(&w, |x| (7.0 * x[0]).sin() * (x[1] - 0.3).exp() + x[0] * x[1]);
        let hc = haar_transform(&b, &Shift::zero(2)).unwrap();
        assert_eq!(hc.path, TransformPath::Pyramid);
        for (i, c) in &hc.entries {
            let d = haar_coefficient(&b, i).unwrap();
            assert!((c - d).abs() <= 1e-12 * c.abs().max(1e-3), "{} {c} {d}", i.cube);
        }
        assert_eq!(hc.len(), 3 * (1 + 4 + 16 + 64 + 256));
    }

    #[test]
    fn parseval_when_levels_reach_the_cells() {
        for n in 1..=2 {
            let w = GridWindow::unit(n, 32).unwrap();
            let b = SampledFunction::from_fn(&w, |x| x.iter().map(|v| (11.0 * v).cos() + v * v).sum());
            let hc = haar_transform(&b, &Shift::zero(n)).unwrap();
            let e = b.norm_l2().powi(2);
            assert!((hc.energy() - e).abs() <= 1e-10 * e);
            let back = synthesize(&hc, true).unwrap();
            for (u, v) in back.values.iter().zip(&b.values) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn telescoping_averages() {
        let w = GridWindow::unit(2, 16).unwrap();
        let b = SampledFunction::from_fn(&w, |x| (x[0] * 5.0).sin() + x[1].powi(3));
        let hc = haar_transform(&b, &Shift::zero(2)).unwrap();
        for q in enumerate_cubes(&w, &Shift::zero(2)).iter().skip(3) {
            let direct = cube_average(&b, q).unwrap();
            let tele = average_from_coefficients(&hc, q).unwrap();
            assert!((direct - tele).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_oscillation_expansion_matches() {
        let w = GridWindow::unit(2, 16).unwrap();
        let b = SampledFunction::from_fn(&w, |x| (3.0 * x[0] + x[1]).sin());
        let q: CubeId = "0,0:1:1,0".parse().unwrap();
        let e = expand_mean_oscillation(&b, &q).unwrap();
        assert!(e.residual < 1e-12);
        // the expansion runs to the finest resolvable level, not the window k_max
        let w = GridWindow::unit(1, 32).unwrap().with_levels(0, 2).unwrap();
        let b = SampledFunction::from_fn(&w, |x| x[0] * x[0]);
        let e = expand_mean_oscillation(&b, &"0:0:0".parse().unwrap()).unwrap();
        assert!(e.residual < 1e-12);
    }

    #[test]
    fn nwo_indicator_family_is_dyadic_maximal() {
        let w = GridWindow::new(vec![0.0], 1.0, 0, 3, 16).unwrap();
        let f = SampledFunction::from_fn(&w, |x| if x[0] < 0.25 { 1.0 } else { -0.2 });
        let family: Vec<(CubeId, SampledFunction)> = enumerate_cubes(&w, &Shift::zero(1))
            .into_iter()
            .map(|q| {
                let g = q.geometry();
                let v = 1.0 / q.volume().sqrt();
                let e = SampledFunction::from_fn(&w, |x| if g.contains_point(x) { v } else { 0.0 });
                (q, e)
            })
            .collect();
        let m = nwo_maximal(&f, &family).unwrap();
        for (i, x) in w.points().iter().enumerate() {
            let mut best: f64 = 0.0;
            for (q, _) in &family {
                if q.contains_point(x) {
                    best = best.max(cube_average(&f, q).unwrap().abs());
                }
            }
            assert!((m.values[i] - best).abs() < 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // |⟨f,h_Q⟩|/|Q|^{1/2} ≤ ⟨|f|⟩_Q, so the Haar-family maximal function sits
        // under the dyadic maximal function of |f|, whose L⁴ bound is 4/3.
        #[test]
        fn nwo_haar_family_l4_bound(vals in proptest::collection::vec(-5.0f64..5.0, 32)) {
            let w = GridWindow::unit(1, 32).unwrap();
            let f = SampledFunction::new(w.clone(), vals).unwrap();
            let family: Vec<(CubeId, SampledFunction)> = enumerate_cubes(&w, &Shift::zero(1))
                .into_iter()
                .map(|q| {
                    let h = haar_function(&HaarIndex { cube: q.clone(), sig: Signature::new(vec![0]).unwrap() }, &w).unwrap();
                    (q, h)
                })
                .collect();
            let m = nwo_maximal(&f, &family).unwrap();
            prop_assert!(m.norm_lp(4.0) <= 4.0 / 3.0 * f.norm_lp(4.0) + 1e-12);
        }

        #[test]
        fn coefficients_are_linear(a in -3.0f64..3.0, s in 0.1f64..4.0) {
            let w = GridWindow::unit(2, 8).unwrap();
            let f = SampledFunction::from_fn(&w, |x| (s * x[0]).sin() + x[1]);
            let g = SampledFunction::from_fn(&w, |x| x[0] * x[1]);
            let fg = SampledFunction::new(w.clone(), f.values.iter().zip(&g.values).map(|(u, v)| a * u + v).collect()).unwrap();
            for shift in Shift::all(2) {
                let (cf, cg, cfg) = (haar_transform(&f, &shift).unwrap(), haar_transform(&g, &shift).unwrap(), haar_transform(&fg, &shift).unwrap());
                for (k, v) in &cfg.entries {
                    prop_assert!((v - (a * cf.entries[k] + cg.entries[k])).abs() < 1e-12);
                }
            }
        }
    }
}
