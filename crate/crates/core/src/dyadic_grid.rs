//! Standard and one-third shifted dyadic systems.
//!
//! A cube of the system with shift `ω` at level `k` and offset `m` is the
//! half-open box `2^{-k}([0,1)^n + m + (-1)^k ω)`. Shift entries are kept as
//! numerators over 3 so that nesting and containment are decided in integer
//! arithmetic; floats only appear when geometry is handed out.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 3;

/// Shift vector with entries in {0, 1/3, 2/3}, stored as numerators over 3.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shift(Vec<u8>);

impl Shift {
    pub fn new(thirds: Vec<u8>) -> Result<Self> {
        if thirds.is_empty() || thirds.len() > MAX_DIM {
            return Err(invalid(format!("shift dimension {} not in 1..={MAX_DIM}", thirds.len())));
        }
        if let Some(t) = thirds.iter().find(|&&t| t > 2) {
            return Err(invalid(format!("shift numerator {t} is not one of 0, 1, 2")));
        }
        Ok(Shift(thirds))
    }

    pub fn zero(dim: usize) -> Self {
        Shift(vec![0; dim])
    }

    /// All `3^dim` shifts, the standard system first.
    pub fn all(dim: usize) -> Vec<Shift> {
        let mut out = Vec::with_capacity(3usize.pow(dim as u32));
        for code in 0..3usize.pow(dim as u32) {
            let mut t = vec![0u8; dim];
            let mut c = code;
            for i in (0..dim).rev() {
                t[i] = (c % 3) as u8;
                c /= 3;
            }
            out.push(Shift(t));
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn thirds(&self) -> &[u8] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&t| t == 0)
    }
}

impl fmt::Display for Shift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match t {
                0 => f.write_str("0")?,
                1 => f.write_str("1/3")?,
                _ => f.write_str("2/3")?,
            }
        }
        Ok(())
    }
}

impl FromStr for Shift {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let thirds = s
            .split(',')
            .map(|p| match p.trim() {
                "0" => Ok(0),
                "1/3" => Ok(1),
                "2/3" => Ok(2),
                other => Err(invalid(format!("bad shift entry {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Shift::new(thirds)
    }
}

/// Exact endpoint `numer / (3 * 2^level)`.
#[derive(Clone, Copy, Debug)]
struct Endpoint {
    numer: i128,
    level: i32,
}

impl Endpoint {
    fn to_f64(self) -> f64 {
        (self.numer as f64 / 3.0) * pow2(-self.level)
    }

    fn cmp(self, other: Endpoint) -> Ordering {
        let top = self.level.max(other.level);
        let a = self.numer << (top - self.level);
        let b = other.numer << (top - other.level);
        a.cmp(&b)
    }
}

pub(crate) fn pow2(k: i32) -> f64 {
    2f64.powi(k)
}

/// Address of a cube in one of the shifted dyadic systems.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CubeId {
    pub shift: Shift,
    pub level: i32,
    pub offset: Vec<i64>,
}

/// Axis-aligned half-open box `[lo, hi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a).max(0.0)).product()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, &v)| self.lo[i] <= v && v < self.hi[i])
    }

    pub fn intersect(&self, other: &BoxRegion) -> BoxRegion {
        let lo = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect();
        BoxRegion { lo, hi }
    }

    pub fn contains_box(&self, other: &BoxRegion) -> bool {
        (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Sup-metric distance between the closures.
    pub fn distance(&self, other: &BoxRegion) -> f64 {
        (0..self.dim())
            .map(|i| (other.lo[i] - self.hi[i]).max(self.lo[i] - other.hi[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

impl CubeId {
    pub fn new(shift: Shift, level: i32, offset: Vec<i64>) -> Result<Self> {
        if offset.len() != shift.dim() {
            return Err(invalid("offset length differs from shift dimension"));
        }
        Ok(CubeId { shift, level, offset })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    fn sign(&self) -> i128 {
        if self.level.rem_euclid(2) == 0 {
            1
        } else {
            -1
        }
    }

    fn lower_end(&self, axis: usize) -> Endpoint {
        let t = self.shift.0[axis] as i128;
        Endpoint { numer: 3 * self.offset[axis] as i128 + self.sign() * t, level: self.level }
    }

    fn upper_end(&self, axis: usize) -> Endpoint {
        let lo = self.lower_end(axis);
        Endpoint { numer: lo.numer + 3, level: self.level }
    }

    pub fn side(&self) -> f64 {
        pow2(-self.level)
    }

    pub fn volume(&self) -> f64 {
        pow2(-self.level * self.dim() as i32)
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower_end(axis).to_f64()
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.upper_end(axis).to_f64()
    }

    pub fn geometry(&self) -> BoxRegion {
        let n = self.dim();
        BoxRegion {
            lo: (0..n).map(|i| self.lower(i)).collect(),
            hi: (0..n).map(|i| self.upper(i)).collect(),
        }
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.lower(i) + 0.5 * self.side()).collect()
    }

    /// Box with the same center and `factor` times the side.
    pub fn dilate(&self, factor: f64) -> BoxRegion {
        let c = self.center();
        let r = 0.5 * factor * self.side();
        BoxRegion { lo: c.iter().map(|v| v - r).collect(), hi: c.iter().map(|v| v + r).collect() }
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.geometry().contains_point(x)
    }

    /// Exact containment test, valid across different shifts.
    pub fn contains(&self, other: &CubeId) -> bool {
        (0..self.dim()).all(|i| {
            self.lower_end(i).cmp(other.lower_end(i)) != Ordering::Greater
                && other.upper_end(i).cmp(self.upper_end(i)) != Ordering::Greater
        })
    }

    /// Exact test for a nonempty intersection.
    pub fn intersects(&self, other: &CubeId) -> bool {
        (0..self.dim()).all(|i| {
            self.lower_end(i).cmp(other.upper_end(i)) == Ordering::Less
                && other.lower_end(i).cmp(self.upper_end(i)) == Ordering::Less
        })
    }

    /// The `2^n` children, ordered lexicographically by offset.
    pub fn children(&self) -> Vec<CubeId> {
        (0..1usize << self.dim()).map(|bits| self.child(bits)).collect()
    }

    /// Child selected by `bits`, bit `n-1-i` choosing the upper half along axis `i`.
    pub fn child(&self, bits: usize) -> CubeId {
        let n = self.dim();
        let s = self.sign() as i64;
        let offset = (0..n)
            .map(|i| {
                let e = ((bits >> (n - 1 - i)) & 1) as i64;
                2 * self.offset[i] + s * self.shift.0[i] as i64 + e
            })
            .collect();
        CubeId { shift: self.shift.clone(), level: self.level + 1, offset }
    }

    pub fn parent(&self) -> CubeId {
        // children of a level-(k-1) cube have offsets 2m + s*t + e with s the parent's sign
        let s = -self.sign() as i64;
        let offset = (0..self.dim())
            .map(|i| (self.offset[i] - s * self.shift.0[i] as i64).div_euclid(2))
            .collect();
        CubeId { shift: self.shift.clone(), level: self.level - 1, offset }
    }

    pub fn translate(&self, axis: usize, steps: i64) -> CubeId {
        let mut c = self.clone();
        c.offset[axis] += steps;
        c
    }
}

impl fmt::Display for CubeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:", self.shift, self.level)?;
        for (i, m) in self.offset.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{m}")?;
        }
        Ok(())
    }
}

impl FromStr for CubeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(invalid(format!("cube id {s:?} needs three ':'-separated fields")));
        }
        let shift: Shift = parts[0].parse()?;
        let level = parts[1].trim().parse::<i32>().map_err(|e| invalid(format!("bad level in {s:?}: {e}")))?;
        let offset = parts[2]
            .split(',')
            .map(|p| p.trim().parse::<i64>().map_err(|e| invalid(format!("bad offset in {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        CubeId::new(shift, level, offset)
    }
}

/// Cube of the system `shift` at `level` containing `x`.
pub fn locate(shift: &Shift, level: i32, x: &[f64]) -> CubeId {
    let s = if level.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let scale = pow2(level);
    let offset: Vec<i64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| (v * scale - s * shift.0[i] as f64 / 3.0).floor() as i64)
        .collect();
    let mut q = CubeId { shift: shift.clone(), level, offset };
    for (i, &v) in x.iter().enumerate() {
        while q.lower(i) > v {
            q.offset[i] -= 1;
        }
        while q.upper(i) <= v {
            q.offset[i] += 1;
        }
    }
    q
}

/// Sampled box domain with a range of dyadic levels.
///
/// Samples sit at the cell centers `origin + (i + 1/2) h` with `h = side / N`,
/// flattened in row-major order (first axis slowest).
#[derive(Clone, Debug, PartialEq)]
pub struct GridWindow {
    origin: Vec<f64>,
    side: f64,
    k_min: i32,
    k_max: i32,
    samples: usize,
}

impl GridWindow {
    pub fn new(origin: Vec<f64>, side: f64, k_min: i32, k_max: i32, samples: usize) -> Result<Self> {
        let dim = origin.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(invalid(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        if !(side.is_finite() && side > 0.0) || origin.iter().any(|v| !v.is_finite()) {
            return Err(invalid("window box must be finite with positive side"));
        }
        if samples < 2 || !samples.is_power_of_two() {
            return Err(invalid(format!("samples per side {samples} is not a power of two >= 2")));
        }
        if k_max - k_min < 1 {
            return Err(invalid(format!("level range [{k_min}, {k_max}] needs at least two levels")));
        }
        let h = side / samples as f64;
        if pow2(-k_max) < 2.0 * h * (1.0 - 1e-12) {
            return Err(Error::Unresolvable { cube: format!("level {k_max}"), side: pow2(-k_max), spacing: h });
        }
        Ok(GridWindow { origin, side, k_min, k_max, samples })
    }

    /// `[0,1)^dim` with levels `0 ..= log2(N) - 1`.
    pub fn unit(dim: usize, samples: usize) -> Result<Self> {
        if samples < 4 || !samples.is_power_of_two() {
            return Err(invalid(format!("samples per side {samples} is not a power of two >= 4")));
        }
        let k_max = samples.trailing_zeros() as i32 - 1;
        GridWindow::new(vec![0.0; dim], 1.0, 0, k_max, samples)
    }

    pub fn with_levels(&self, k_min: i32, k_max: i32) -> Result<Self> {
        GridWindow::new(self.origin.clone(), self.side, k_min, k_max, self.samples)
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn samples_per_side(&self) -> usize {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.samples as f64
    }

    /// Volume of one sample cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim() as i32)
    }

    pub fn levels(&self) -> (i32, i32) {
        (self.k_min, self.k_max)
    }

    pub fn k_min(&self) -> i32 {
        self.k_min
    }

    pub fn k_max(&self) -> i32 {
        self.k_max
    }

    pub fn domain(&self) -> BoxRegion {
        BoxRegion {
            lo: self.origin.clone(),
            hi: self.origin.iter().map(|o| o + self.side).collect(),
        }
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + (i as f64 + 0.5) * self.spacing()
    }

    pub fn multi_index(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.dim()).rev() {
            out[a] = idx % self.samples;
            idx /= self.samples;
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.samples + i)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut m = vec![0; self.dim()];
        self.multi_index(idx, &mut m);
        m.iter().enumerate().map(|(a, &i)| self.coord(a, i)).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Finest level whose cubes still span two samples per side.
    pub fn finest_resolvable_level(&self) -> i32 {
        (1.0 / (2.0 * self.spacing())).log2().floor() as i32
    }

    pub fn is_resolvable(&self, level: i32) -> bool {
        level <= self.finest_resolvable_level()
    }

    pub fn contains_cube(&self, q: &CubeId) -> bool {
        self.domain().contains_box(&q.geometry())
    }

    /// Sample cells are level-`c` cubes of the standard system and the
    /// domain is a union of level-`k_min` cubes.
    pub fn is_aligned(&self) -> bool {
        let h = self.spacing();
        let cell_level = -h.log2();
        if cell_level.fract() != 0.0 {
            return false;
        }
        let unit = pow2(-self.k_min);
        let whole = |v: f64| (v / unit).fract() == 0.0;
        whole(self.side) && self.origin.iter().all(|&o| whole(o))
    }

    /// Per-axis `(first, last)` sample indices whose cells meet `[lo, hi)`.
    pub(crate) fn cell_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let h = self.spacing();
        let a = ((lo - self.origin[axis]) / h).floor().max(0.0);
        let b = ((hi - self.origin[axis]) / h).ceil().min(self.samples as f64);
        if b <= a {
            return None;
        }
        Some((a as usize, b as usize - 1))
    }

    /// Length of `[lo, hi)` inside cell `i` along `axis`.
    pub(crate) fn cell_overlap(&self, axis: usize, i: usize, lo: f64, hi: f64) -> f64 {
        let h = self.spacing();
        let c0 = self.origin[axis] + i as f64 * h;
        let c1 = self.origin[axis] + (i + 1) as f64 * h;
        (hi.min(c1) - lo.max(c0)).max(0.0)
    }
}

/// Cubes with level in the window range meeting the domain, level-major then
/// lexicographic in offset.
pub fn enumerate_cubes(win: &GridWindow, shift: &Shift) -> Vec<CubeId> {
    let mut out = Vec::new();
    for k in win.k_min..=win.k_max {
        out.extend(cubes_at_level(win, shift, k, false));
    }
    out
}

/// Cubes at `level` meeting the domain, or only those inside it.
pub fn cubes_at_level(win: &GridWindow, shift: &Shift, level: i32, contained_only: bool) -> Vec<CubeId> {
    let n = win.dim();
    let dom = win.domain();
    let mut ranges = Vec::with_capacity(n);
    for i in 0..n {
        let lo = locate(shift, level, &unit_vec(n, i, dom.lo[i])).offset[i];
        let hi = locate(shift, level, &unit_vec(n, i, dom.hi[i])).offset[i];
        let mut r = Vec::new();
        for m in lo - 1..=hi + 1 {
            let mut probe = CubeId { shift: shift.clone(), level, offset: vec![0; n] };
            probe.offset[i] = m;
            let (a, b) = (probe.lower(i), probe.upper(i));
            let ok = if contained_only { a >= dom.lo[i] && b <= dom.hi[i] } else { a < dom.hi[i] && b > dom.lo[i] };
            if ok {
                r.push(m);
            }
        }
        ranges.push(r);
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    if ranges.iter().any(|r| r.is_empty()) {
        return out;
    }
    loop {
        let offset = (0..n).map(|i| ranges[i][idx[i]]).collect();
        out.push(CubeId { shift: shift.clone(), level, offset });
        let mut a = n;
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < ranges[a].len() {
                break;
            }
            idx[a] = 0;
        }
    }
}

fn unit_vec(n: usize, axis: usize, v: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[axis] = v;
    x
}

/// Window cubes of one system lying entirely inside the domain.
pub fn contained_cubes(win: &GridWindow, shift: &Shift) -> Vec<CubeId> {
    let mut out = Vec::new();
    for k in win.k_min..=win.k_max {
        out.extend(cubes_at_level(win, shift, k, true));
    }
    out
}

/// Same-level cubes forming one piece of the off-diagonal decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct WhitneyPair {
    pub q: CubeId,
    pub r: CubeId,
    /// Position of `r` among the partners of `q`, starting at 1.
    pub index: usize,
}

/// Whitney decomposition constants, in units of the side length.
pub const WHITNEY_MIN_DIST: f64 = 1.0;
pub const WHITNEY_MAX_DIST: f64 = 4.0;

/// Dyadic Whitney decomposition of the off-diagonal part of the window.
///
/// A pair of level-`k` cubes is emitted when the cubes are not adjacent but
/// their parents are (or are equal). At `k_min` parents are ignored. Levels run
/// through `k_max + 1` so that every pair of samples at sup distance at least
/// `2^{-k_max}` is covered.
pub fn whitney_pairs(win: &GridWindow) -> Vec<WhitneyPair> {
    let shift = Shift::zero(win.dim());
    let mut out = Vec::new();
    for k in win.k_min..=win.k_max + 1 {
        let cubes = cubes_at_level(win, &shift, k, true);
        for q in &cubes {
            let mut s = 0;
            for r in &cubes {
                let cheb = q.offset.iter().zip(&r.offset).map(|(a, b)| (a - b).abs()).max().unwrap_or(0);
                if cheb < 2 {
                    continue;
                }
                if k > win.k_min {
                    let (pq, pr) = (q.parent(), r.parent());
                    let pc = pq.offset.iter().zip(&pr.offset).map(|(a, b)| (a - b).abs()).max().unwrap_or(0);
                    if pc > 1 {
                        continue;
                    }
                }
                let d = q.geometry().distance(&r.geometry()) / q.side();
                if !(WHITNEY_MIN_DIST..=WHITNEY_MAX_DIST).contains(&d) {
                    continue;
                }
                s += 1;
                out.push(WhitneyPair { q: q.clone(), r: r.clone(), index: s });
            }
        }
    }
    out
}

/// The translate `Q + 2 ℓ(Q) e_j` (`axis` is zero-based), checked against the window.
pub fn far_cube(q: &CubeId, axis: usize, win: &GridWindow) -> Result<CubeId> {
    if axis >= q.dim() {
        return Err(invalid(format!("direction {axis} out of range for dimension {}", q.dim())));
    }
    let r = q.translate(axis, 2);
    if !win.contains_cube(&r) {
        return Err(Error::OutsideWindow(r.to_string()));
    }
    Ok(r)
}

/// Smallest cube from any shifted system containing the `factor`-dilate of `q`,
/// searching `max_up` levels above `q`.
pub fn shifted_cover(q: &CubeId, factor: f64, max_up: i32) -> Option<CubeId> {
    let target = q.dilate(factor);
    let n = q.dim();
    for up in 0..=max_up {
        let level = q.level - up;
        for shift in Shift::all(n) {
            let c = target.lo.iter().zip(&target.hi).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<_>>();
            let j = locate(&shift, level, &c);
            if j.geometry().contains_box(&target) {
                return Some(j);
            }
        }
    }
    None
}
