//! Dense matrices for Riesz transforms, commutators, dyadic shifts, paraproducts
//! and the operators used by the necessity and quantised-derivative experiments.
//!
//! Matrices act on sample vectors of a [`GridWindow`]. Kernel operators carry the
//! quadrature factor `h^n` in their entries, so `(Tf)(x) = Σ_y T[x,y] f(y)`
//! approximates `∫ K(x,y) f(y) dy`.

use std::fmt;
use std::str::FromStr;

use faer::{c64, Mat};
use num_complex::Complex64;

use crate::dyadic_grid::{cubes_at_level, far_cube, CubeId, GridWindow, Shift, WhitneyPair};
use crate::error::{invalid, Error, Result};
use crate::fourier::{fft_nd, signed_freq};
use crate::haar_system::{
    box_factors, cube_average, for_each_cell, haar_transform, HaarCoefficients, SampledFunction, Signature,
};
use crate::weights::Weight;

#[derive(Clone, Debug)]
pub enum Entries {
    Real(Mat<f64>),
    Complex(Mat<c64>),
}

/// A square operator on `ℂ^blocks ⊗ (samples of window)`, block index slowest.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub entries: Entries,
    pub window: GridWindow,
    pub blocks: usize,
    /// Inner product `Σ f ḡ w h^n` the operator is measured in; plain `ℓ²` when absent.
    pub ip_weight: Option<Weight>,
    pub label: String,
}

impl OperatorMatrix {
    pub fn real(window: &GridWindow, blocks: usize, m: Mat<f64>, label: impl Into<String>) -> Result<Self> {
        let d = blocks * window.len();
        if m.nrows() != d || m.ncols() != d {
            return Err(invalid(format!("matrix is {}x{}, expected {d}x{d}", m.nrows(), m.ncols())));
        }
        Ok(OperatorMatrix { entries: Entries::Real(m), window: window.clone(), blocks, ip_weight: None, label: label.into() })
    }

    pub fn complex(window: &GridWindow, blocks: usize, m: Mat<c64>, label: impl Into<String>) -> Result<Self> {
        let d = blocks * window.len();
        if m.nrows() != d || m.ncols() != d {
            return Err(invalid(format!("matrix is {}x{}, expected {d}x{d}", m.nrows(), m.ncols())));
        }
        Ok(OperatorMatrix { entries: Entries::Complex(m), window: window.clone(), blocks, ip_weight: None, label: label.into() })
    }

    pub fn zeros(window: &GridWindow, label: impl Into<String>) -> Self {
        let d = window.len();
        OperatorMatrix { entries: Entries::Real(Mat::zeros(d, d)), window: window.clone(), blocks: 1, ip_weight: None, label: label.into() }
    }

    pub fn dim(&self) -> usize {
        match &self.entries {
            Entries::Real(m) => m.nrows(),
            Entries::Complex(m) => m.nrows(),
        }
    }

    pub fn is_real(&self) -> bool {
        matches!(self.entries, Entries::Real(_))
    }

    pub fn as_real(&self) -> Option<&Mat<f64>> {
        match &self.entries {
            Entries::Real(m) => Some(m),
            Entries::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&Mat<c64>> {
        match &self.entries {
            Entries::Complex(m) => Some(m),
            Entries::Real(_) => None,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> c64 {
        match &self.entries {
            Entries::Real(m) => c64::new(m[(i, j)], 0.0),
            Entries::Complex(m) => m[(i, j)],
        }
    }

    pub fn to_complex(&self) -> Mat<c64> {
        match &self.entries {
            Entries::Real(m) => Mat::from_fn(m.nrows(), m.ncols(), |i, j| c64::new(m[(i, j)], 0.0)),
            Entries::Complex(m) => m.clone(),
        }
    }

    /// The measuring weight is attached, entries are untouched.
    pub fn with_weight(mut self, w: &Weight) -> Result<Self> {
        if w.window().len() != self.window.len() {
            return Err(Error::IncompatibleGrids("weight and operator windows differ".into()));
        }
        self.ip_weight = Some(w.clone());
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        match &self.entries {
            Entries::Real(m) => m.col_iter().all(|c| c.iter().all(|v| v.is_finite())),
            Entries::Complex(m) => m.col_iter().all(|c| c.iter().all(|v| v.re.is_finite() && v.im.is_finite())),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match &self.entries {
            Entries::Real(m) => m.norm_max(),
            Entries::Complex(m) => m.norm_max(),
        }
    }

    pub fn max_abs_diff(&self, other: &OperatorMatrix) -> Result<f64> {
        self.check_same(other)?;
        let d = self.dim();
        let mut worst: f64 = 0.0;
        match (&self.entries, &other.entries) {
            (Entries::Real(a), Entries::Real(b)) => {
                for j in 0..d {
                    for i in 0..d {
                        worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
                    }
                }
            }
            _ => {
                for j in 0..d {
                    for i in 0..d {
                        worst = worst.max((self.get(i, j) - other.get(i, j)).norm());
                    }
                }
            }
        }
        Ok(worst)
    }

    fn check_same(&self, other: &OperatorMatrix) -> Result<()> {
        if self.dim() != other.dim() || self.blocks != other.blocks {
            return Err(Error::IncompatibleGrids(format!("operator sizes {} and {} differ", self.dim(), other.dim())));
        }
        Ok(())
    }

    fn combine(&self, other: &OperatorMatrix, label: String, f: impl Fn(f64, f64) -> f64, g: impl Fn(c64, c64) -> c64) -> Result<Self> {
        self.check_same(other)?;
        let entries = match (&self.entries, &other.entries) {
            (Entries::Real(a), Entries::Real(b)) => Entries::Real(Mat::from_fn(a.nrows(), a.ncols(), |i, j| f(a[(i, j)], b[(i, j)]))),
            _ => {
                let d = self.dim();
                Entries::Complex(Mat::from_fn(d, d, |i, j| g(self.get(i, j), other.get(i, j))))
            }
        };
        Ok(OperatorMatrix { entries, window: self.window.clone(), blocks: self.blocks, ip_weight: self.ip_weight.clone(), label })
    }

    pub fn add(&self, other: &OperatorMatrix) -> Result<Self> {
        self.combine(other, format!("{}+{}", self.label, other.label), |a, b| a + b, |a, b| a + b)
    }

    pub fn sub(&self, other: &OperatorMatrix) -> Result<Self> {
        self.combine(other, format!("{}-{}", self.label, other.label), |a, b| a - b, |a, b| a - b)
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &OperatorMatrix) -> Result<Self> {
        self.check_same(other)?;
        let entries = match (&self.entries, &other.entries) {
            (Entries::Real(a), Entries::Real(b)) => Entries::Real(a * b),
            _ => Entries::Complex(self.to_complex() * other.to_complex()),
        };
        Ok(OperatorMatrix {
            entries,
            window: self.window.clone(),
            blocks: self.blocks,
            ip_weight: self.ip_weight.clone(),
            label: format!("{}*{}", self.label, other.label),
        })
    }

    /// Plain transpose (no conjugation).
    pub fn transpose(&self) -> Self {
        let entries = match &self.entries {
            Entries::Real(m) => Entries::Real(m.transpose().to_owned()),
            Entries::Complex(m) => Entries::Complex(m.transpose().to_owned()),
        };
        OperatorMatrix { entries, window: self.window.clone(), blocks: self.blocks, ip_weight: self.ip_weight.clone(), label: format!("{}^T", self.label) }
    }

    /// Adjoint with respect to the attached inner product, `W^{-1} T^* W`.
    pub fn adjoint(&self) -> Self {
        let m = self.window.len();
        let w = self.ip_weight.as_ref().map(|w| w.values().to_vec());
        let scale = |i: usize, j: usize| match &w {
            Some(w) => w[j % m] / w[i % m],
            None => 1.0,
        };
        let d = self.dim();
        let entries = match &self.entries {
            Entries::Real(a) => Entries::Real(Mat::from_fn(d, d, |i, j| a[(j, i)] * scale(i, j))),
            Entries::Complex(a) => Entries::Complex(Mat::from_fn(d, d, |i, j| a[(j, i)].conj() * scale(i, j))),
        };
        OperatorMatrix { entries, window: self.window.clone(), blocks: self.blocks, ip_weight: self.ip_weight.clone(), label: format!("{}*", self.label) }
    }

    /// `T f` for a real operator acting on one block.
    pub fn apply(&self, f: &SampledFunction) -> Result<SampledFunction> {
        let a = self.as_real().ok_or_else(|| invalid("apply needs a real operator"))?;
        if self.blocks != 1 || f.len() != self.dim() {
            return Err(Error::IncompatibleGrids("function and operator sizes differ".into()));
        }
        let d = self.dim();
        let mut out = vec![0.0; d];
        for j in 0..d {
            let fj = f.values[j];
            if fj == 0.0 {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += a[(i, j)] * fj;
            }
        }
        SampledFunction::new(self.window.clone(), out)
    }
}

/// Entrywise `Σ_{x,y} A[x,y] B[y,x]`.
pub fn trace_of_product(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<c64> {
    a.check_same(b)?;
    let d = a.dim();
    let mut t = c64::new(0.0, 0.0);
    for x in 0..d {
        for y in 0..d {
            t += a.get(x, y) * b.get(y, x);
        }
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RieszMode {
    /// Fourier multiplier on the periodized window.
    Periodic,
    /// Sampled singular kernel with zero diagonal.
    Kernel,
    /// Periodic multiplier rolled off smoothly to zero between `|ξ| = N/4` and `|ξ| = N/2`.
    Filtered,
}

impl fmt::Display for RieszMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RieszMode::Periodic => "periodic",
            RieszMode::Kernel => "kernel",
            RieszMode::Filtered => "filtered",
        })
    }
}

impl FromStr for RieszMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(RieszMode::Periodic),
            "kernel" => Ok(RieszMode::Kernel),
            "filtered" => Ok(RieszMode::Filtered),
            _ => Err(invalid(format!("unknown Riesz mode '{s}'"))),
        }
    }
}

/// `Γ((n+1)/2) / π^{(n+1)/2}` for `n = 1, 2, 3`.
pub fn riesz_constant(dim: usize) -> f64 {
    use std::f64::consts::PI;
    match dim {
        1 => 1.0 / PI,
        2 => 0.5 / PI,
        _ => 1.0 / (PI * PI),
    }
}

/// `K_j(z) = c_n z_j / |z|^{n+1}`, `axis = j - 1`.
pub fn riesz_kernel(axis: usize, z: &[f64]) -> f64 {
    let n = z.len();
    let r2: f64 = z.iter().map(|v| v * v).sum();
    if r2 == 0.0 {
        return 0.0;
    }
    riesz_constant(n) * z[axis] / r2.sqrt().powi(n as i32 + 1)
}

fn check_direction(j: usize, dim: usize) -> Result<usize> {
    if j == 0 || j > dim {
        return Err(invalid(format!("Riesz direction {j} not in 1..={dim}")));
    }
    Ok(j - 1)
}

/// Multiplier `-i ξ_j/|ξ|`, zero at the origin and where `ξ_j` sits at the Nyquist
/// frequency (its partner aliases onto itself there, so the kernel stays real).
fn riesz_symbol(axis: usize, xi: &[i64], side: usize) -> Complex64 {
    let r2: f64 = xi.iter().map(|&v| (v * v) as f64).sum();
    if r2 == 0.0 || xi[axis] == -(side as i64) / 2 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, -(xi[axis] as f64) / r2.sqrt())
}

/// Radial low-pass equal to 1 for `|ξ| ≤ N/4` and 0 for `|ξ| ≥ N/2`.
///
/// The plain multiplier jumps across the Nyquist faces of the frequency torus;
/// a commutator with a smooth symbol turns that jump into a grid-scale copy of a
/// directional Hilbert commutator. Rolling the symbol off removes the copy.
pub fn riesz_filter(xi: &[i64], side: usize) -> f64 {
    let r = xi.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt() / (side as f64 / 2.0);
    smooth_step(r, 0.5, 1.0)
}

/// Real convolution kernel `r(z)`, `z ∈ Z_N^n` row-major, of the periodic Riesz transform.
fn periodic_riesz_kernel(axis: usize, win: &GridWindow, filtered: bool) -> Vec<f64> {
    let n = win.dim();
    let ns = win.samples_per_side();
    let m = win.len();
    let mut idx = vec![0usize; n];
    let mut data: Vec<Complex64> = (0..m)
        .map(|k| {
            win.multi_index(k, &mut idx);
            let xi: Vec<i64> = idx.iter().map(|&i| signed_freq(i, ns)).collect();
            let m = riesz_symbol(axis, &xi, ns);
            if filtered {
                m * riesz_filter(&xi, ns)
            } else {
                m
            }
        })
        .collect();
    fft_nd(&mut data, ns, n, true);
    data.iter().map(|c| c.re / m as f64).collect()
}

/// Discretized `R_j`, `j` one-based.
pub fn riesz_matrix(j: usize, win: &GridWindow, mode: RieszMode) -> Result<OperatorMatrix> {
    let n = win.dim();
    let axis = check_direction(j, n)?;
    let m = win.len();
    let ns = win.samples_per_side();
    let mut xi = vec![0usize; n];
    let mut yi = vec![0usize; n];
    let mat = match mode {
        RieszMode::Periodic | RieszMode::Filtered => {
            let r = periodic_riesz_kernel(axis, win, mode == RieszMode::Filtered);
            let mut diff = vec![0usize; n];
            Mat::from_fn(m, m, |x, y| {
                win.multi_index(x, &mut xi);
                win.multi_index(y, &mut yi);
                for a in 0..n {
                    diff[a] = (xi[a] + ns - yi[a]) % ns;
                }
                r[win.flat_index(&diff)]
            })
        }
        RieszMode::Kernel => {
            let h = win.spacing();
            let hn = win.cell_volume();
            let mut z = vec![0.0; n];
            Mat::from_fn(m, m, |x, y| {
                win.multi_index(x, &mut xi);
                win.multi_index(y, &mut yi);
                for a in 0..n {
                    z[a] = (xi[a] as f64 - yi[a] as f64) * h;
                }
                riesz_kernel(axis, &z) * hn
            })
        }
    };
    OperatorMatrix::real(win, 1, mat, format!("R{j}[{mode}]"))
}

/// `M_b T - T M_b`, entrywise `(b(x) - b(y)) T[x,y]`; blocks share the multiplier.
pub fn commutator(b: &SampledFunction, t: &OperatorMatrix) -> Result<OperatorMatrix> {
    let m = b.len();
    if m != t.window.len() || t.dim() != t.blocks * m {
        return Err(Error::IncompatibleGrids(format!("symbol has {m} samples, operator acts on {}", t.window.len())));
    }
    let bv = &b.values;
    let d = t.dim();
    let entries = match &t.entries {
        Entries::Real(a) => Entries::Real(Mat::from_fn(d, d, |x, y| (bv[x % m] - bv[y % m]) * a[(x, y)])),
        Entries::Complex(a) => Entries::Complex(Mat::from_fn(d, d, |x, y| a[(x, y)] * (bv[x % m] - bv[y % m]))),
    };
    Ok(OperatorMatrix { entries, window: t.window.clone(), blocks: t.blocks, ip_weight: t.ip_weight.clone(), label: format!("[b,{}]", t.label) })
}

/// `diag(w^{1/2}) T diag(w^{-1/2})`, an operator on plain `ℓ²`.
pub fn conjugate_by_weight(t: &OperatorMatrix, w: &Weight) -> Result<OperatorMatrix> {
    let m = t.window.len();
    if w.values().len() != m {
        return Err(Error::IncompatibleGrids("weight and operator windows differ".into()));
    }
    let s: Vec<f64> = w.values().iter().map(|v| v.sqrt()).collect();
    let d = t.dim();
    let entries = match &t.entries {
        Entries::Real(a) => Entries::Real(Mat::from_fn(d, d, |x, y| a[(x, y)] * s[x % m] / s[y % m])),
        Entries::Complex(a) => Entries::Complex(Mat::from_fn(d, d, |x, y| a[(x, y)] * (s[x % m] / s[y % m]))),
    };
    Ok(OperatorMatrix { entries, window: t.window.clone(), blocks: t.blocks, ip_weight: None, label: format!("w^1/2 {} w^-1/2", t.label) })
}

/// `σ(Q)` is the child selected by `child_bits`; `sig_map[ε]` is the image signature or `None` to drop the term.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftMap {
    pub child_bits: usize,
    pub sig_map: Vec<(Signature, Option<Signature>)>,
}

impl ShiftMap {
    /// First child in lexicographic offset order, identity on signatures.
    pub fn standard(dim: usize) -> Self {
        let sig_map = Signature::cancellative(dim).into_iter().map(|s| (s.clone(), Some(s))).collect();
        ShiftMap { child_bits: 0, sig_map }
    }

    pub fn new(dim: usize, child_bits: usize, sig_map: Vec<(Signature, Option<Signature>)>) -> Result<Self> {
        if child_bits >= 1 << dim {
            return Err(invalid(format!("child index {child_bits} out of range")));
        }
        for (s, t) in &sig_map {
            if s.dim() != dim || !s.is_cancellative() || t.as_ref().is_some_and(|t| t.dim() != dim || !t.is_cancellative()) {
                return Err(invalid("signature map must act on cancellative signatures of the window dimension"));
            }
        }
        Ok(ShiftMap { child_bits, sig_map })
    }

    pub fn cube(&self, q: &CubeId) -> CubeId {
        q.child(self.child_bits)
    }

    pub fn signature(&self, s: &Signature) -> Option<&Signature> {
        self.sig_map.iter().find(|(a, _)| a == s).and_then(|(_, b)| b.as_ref())
    }
}

/// Nonzero samples of `h^ε_Q` with their values.
fn sparse_haar(win: &GridWindow, q: &CubeId, sig: &Signature) -> Vec<(usize, f64)> {
    let n = win.dim();
    let Some(fac) = box_factors(win, &q.geometry()) else {
        return Vec::new();
    };
    let amp = q.volume().sqrt().recip();
    let mid: Vec<f64> = (0..n).map(|i| q.lower(i) + 0.5 * q.side()).collect();
    let mut out = Vec::new();
    let mut mi = vec![0usize; n];
    for_each_cell(win, &fac, |flat, _| {
        win.multi_index(flat, &mut mi);
        let mut v = amp;
        for a in 0..n {
            if sig.bits()[a] == 0 && win.coord(a, mi[a]) >= mid[a] {
                v = -v;
            }
        }
        out.push((flat, v));
    });
    out
}

pub(crate) fn cube_samples(win: &GridWindow, q: &CubeId) -> Vec<usize> {
    let mut out = Vec::new();
    if let Some(fac) = box_factors(win, &q.geometry()) {
        for_each_cell(win, &fac, |flat, _| out.push(flat));
    }
    out
}

fn require_aligned(win: &GridWindow) -> Result<()> {
    if !win.is_aligned() {
        return Err(invalid("dyadic operators need a window aligned with the standard grid"));
    }
    Ok(())
}

/// Standard window cubes whose image under `sm` is still resolvable.
fn shift_cubes(win: &GridWindow, sm: &ShiftMap) -> Vec<CubeId> {
    let shift = Shift::zero(win.dim());
    let fine = win.finest_resolvable_level();
    (win.k_min()..=win.k_max())
        .flat_map(|k| cubes_at_level(win, &shift, k, true))
        .filter(|q| sm.cube(q).level <= fine)
        .collect()
}

fn check_shift_map(win: &GridWindow, sm: &ShiftMap) -> Result<()> {
    require_aligned(win)?;
    if sm.sig_map.iter().any(|(s, _)| s.dim() != win.dim()) || sm.child_bits >= 1 << win.dim() {
        return Err(invalid("shift map dimension differs from window"));
    }
    Ok(())
}

/// `Ш f = Σ ⟨f, h^ε_Q⟩ h^{σ(ε)}_{σ(Q)}` over standard window cubes with resolvable image.
pub fn dyadic_shift(win: &GridWindow, sm: &ShiftMap) -> Result<OperatorMatrix> {
    check_shift_map(win, sm)?;
    let m = win.len();
    let hn = win.cell_volume();
    let mut a = Mat::<f64>::zeros(m, m);
    for q in shift_cubes(win, sm) {
        let sq = sm.cube(&q);
        for (eps, _) in &sm.sig_map {
            let Some(img) = sm.signature(eps) else { continue };
            let src = sparse_haar(win, &q, eps);
            let dst = sparse_haar(win, &sq, img);
            for &(y, hy) in &src {
                for &(x, hx) in &dst {
                    a[(x, y)] += hx * hy * hn;
                }
            }
        }
    }
    OperatorMatrix::real(win, 1, a, "Sha")
}

/// `Ш f` computed from the Haar coefficients of `f`.
pub fn dyadic_shift_apply(f: &SampledFunction, sm: &ShiftMap) -> Result<SampledFunction> {
    let win = &f.window;
    check_shift_map(win, sm)?;
    let coeffs = haar_transform(f, &Shift::zero(win.dim()))?;
    let mut out = vec![0.0; win.len()];
    for q in shift_cubes(win, sm) {
        let sq = sm.cube(&q);
        for (eps, _) in &sm.sig_map {
            let Some(img) = sm.signature(eps) else { continue };
            let c = coeffs.get(&q, eps).unwrap_or(0.0);
            for (x, v) in sparse_haar(win, &sq, img) {
                out[x] += c * v;
            }
        }
    }
    SampledFunction::new(win.clone(), out)
}

/// `Σ_{Q,ε} ⟨u, h^ε_Q⟩ ⟨v⟩_Q h^ε_Q` over all standard window cubes.
pub fn paraproduct_apply(u: &SampledFunction, v: &SampledFunction) -> Result<SampledFunction> {
    let win = &u.window;
    require_aligned(win)?;
    v.same_grid(win)?;
    let coeffs = haar_transform(u, &Shift::zero(win.dim()))?;
    let mut out = vec![0.0; win.len()];
    for (idx, c) in &coeffs.entries {
        let avg = cube_average(v, &idx.cube)?;
        for (x, h) in sparse_haar(win, &idx.cube, &idx.sig) {
            out[x] += c * avg * h;
        }
    }
    SampledFunction::new(win.clone(), out)
}

#[derive(Clone, Debug)]
pub struct Paraproducts {
    /// `Π_b f = Σ ⟨b,h^ε_Q⟩ ⟨f⟩_Q h^ε_Q`
    pub pi: OperatorMatrix,
    /// `Π*_b f = Σ ⟨b,h^ε_Q⟩ ⟨f,h^ε_Q⟩ χ_Q/|Q|`
    pub pi_adjoint: OperatorMatrix,
    /// `Γ_b f = Σ_{ε≠η} ⟨b,h^ε_Q⟩ ⟨f,h^η_Q⟩ h^ε_Q h^η_Q`
    pub gamma: OperatorMatrix,
    /// Set in one dimension, where only one cancellative signature exists and `Γ_b = 0`.
    pub gamma_vanishes: bool,
}

fn standard_coefficients(b: &SampledFunction) -> Result<HaarCoefficients> {
    require_aligned(&b.window)?;
    haar_transform(b, &Shift::zero(b.window.dim()))
}

/// The three paraproducts of `b` over all standard window cubes.
pub fn paraproducts(b: &SampledFunction) -> Result<Paraproducts> {
    let win = &b.window;
    let coeffs = standard_coefficients(b)?;
    let m = win.len();
    let hn = win.cell_volume();
    let sigs = Signature::cancellative(win.dim());
    let shift = Shift::zero(win.dim());
    let mut pi = Mat::<f64>::zeros(m, m);
    let mut pa = Mat::<f64>::zeros(m, m);
    let mut ga = Mat::<f64>::zeros(m, m);
    for k in win.k_min()..=win.k_max() {
        for q in cubes_at_level(win, &shift, k, true) {
            let cells = cube_samples(win, &q);
            let haars: Vec<Vec<(usize, f64)>> = sigs.iter().map(|s| sparse_haar(win, &q, s)).collect();
            let bc: Vec<f64> = sigs.iter().map(|s| coeffs.get(&q, s).unwrap_or(0.0)).collect();
            // u(x) = Σ_ε b^ε h^ε(x); all h^ε_Q share the sample ordering of `cells`
            let u: Vec<f64> = (0..cells.len()).map(|i| (0..sigs.len()).map(|e| bc[e] * haars[e][i].1).sum()).collect();
            let s = hn / q.volume();
            for (i, &x) in cells.iter().enumerate() {
                for &y in &cells {
                    pi[(x, y)] += u[i] * s;
                    pa[(y, x)] += u[i] * s;
                }
            }
            for eta in 0..sigs.len() {
                for (i, &x) in cells.iter().enumerate() {
                    let ux: f64 = (0..sigs.len()).filter(|&e| e != eta).map(|e| bc[e] * haars[e][i].1).sum::<f64>() * haars[eta][i].1;
                    if ux == 0.0 {
                        continue;
                    }
                    for (jj, &y) in cells.iter().enumerate() {
                        ga[(x, y)] += ux * haars[eta][jj].1 * hn;
                    }
                }
            }
        }
    }
    Ok(Paraproducts {
        pi: OperatorMatrix::real(win, 1, pi, "Pi_b")?,
        pi_adjoint: OperatorMatrix::real(win, 1, pa, "Pi*_b")?,
        gamma: OperatorMatrix::real(win, 1, ga, "Gamma_b")?,
        gamma_vanishes: win.dim() == 1,
    })
}

/// `𝔑 f = Σ ⟨f,h^ε_Q⟩ (Σ_{ε'} ⟨b,h^{ε'}_Q⟩ h^{ε'}_Q(σQ)) h^{σ(ε)}_{σ(Q)}`.
///
/// The inner sum is `⟨b⟩_{σQ} - ⟨b⟩_Q`. For `n ≥ 2` every signature of `b`
/// contributes to it, not only the one carried by `f`.
pub fn remainder_operator(b: &SampledFunction, sm: &ShiftMap) -> Result<OperatorMatrix> {
    let win = &b.window;
    check_shift_map(win, sm)?;
    let coeffs = standard_coefficients(b)?;
    let m = win.len();
    let hn = win.cell_volume();
    let sigs = Signature::cancellative(win.dim());
    let mut a = Mat::<f64>::zeros(m, m);
    for q in shift_cubes(win, sm) {
        let sq = sm.cube(&q);
        let jump: f64 = sigs
            .iter()
            .map(|s| coeffs.get(&q, s).unwrap_or(0.0) * crate::haar_system::haar_value_on(&q, s, &sq))
            .sum();
        if jump == 0.0 {
            continue;
        }
        for (eps, _) in &sm.sig_map {
            let Some(img) = sm.signature(eps) else { continue };
            let src = sparse_haar(win, &q, eps);
            let dst = sparse_haar(win, &sq, img);
            for &(y, hy) in &src {
                for &(x, hx) in &dst {
                    a[(x, y)] += jump * hx * hy * hn;
                }
            }
        }
    }
    OperatorMatrix::real(win, 1, a, "Remainder")
}

/// `Π_{Шf} b - Ш(Π_f b)` evaluated directly.
pub fn remainder_by_definition(b: &SampledFunction, f: &SampledFunction, sm: &ShiftMap) -> Result<SampledFunction> {
    let sf = dyadic_shift_apply(f, sm)?;
    let left = paraproduct_apply(&sf, b)?;
    let right = dyadic_shift_apply(&paraproduct_apply(f, b)?, sm)?;
    let values = left.values.iter().zip(&right.values).map(|(l, r)| l - r).collect();
    SampledFunction::new(b.window.clone(), values)
}

/// How the kernel is cut off on a Whitney box before expanding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelCutoff {
    /// Sharp indicator of `Q × R`.
    Sharp,
    /// Smooth cutoff equal to one on `Q × R`, supported on the boxes dilated by [`SMOOTH_CUTOFF_DILATION`].
    Smooth,
}

/// Below 2, so the dilated boxes of a pair at distance `ℓ` stay disjoint.
pub const SMOOTH_CUTOFF_DILATION: f64 = 1.75;

#[derive(Clone, Debug)]
pub struct DecayReport {
    /// Fitted `d` in `max_{|ℓ|_∞ = r} |λ_ℓ| ≈ C (1+r)^{-d}`.
    pub exponent: f64,
    /// Shell envelope for `r = 0..=L`.
    pub envelope: Vec<f64>,
    /// Relative `L²` error of the truncated series on `Q × R`.
    pub residual: f64,
}

/// Fourier coefficients `c_ℓ`, `ℓ ∈ [-L, L]^{2n}` row-major, of the kernel on a Whitney box.
#[derive(Clone, Debug)]
pub struct KernelExpansion {
    pub dim: usize,
    pub l_max: usize,
    pub cutoff: KernelCutoff,
    pub cube_volume: f64,
    pub coeffs: Vec<c64>,
    pub report: DecayReport,
}

impl KernelExpansion {
    /// `λ_ℓ = |Q| c_ℓ`, invariant under dyadic rescaling of the pair.
    pub fn lambda(&self) -> Vec<c64> {
        self.coeffs.iter().map(|c| c * self.cube_volume).collect()
    }
}

/// Gauss-Legendre nodes and weights on `[-1/2, 1/2]`.
pub(crate) fn gauss_legendre(count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; count];
    let mut w = vec![0.0; count];
    let nf = count as f64;
    for i in 0..count.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=count {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if count == 1 { z } else { p1 };
            let pm = if count == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -0.5 * z;
        x[count - 1 - i] = 0.5 * z;
        w[i] = 0.5 * wi;
        w[count - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

/// `C^∞` transition equal to 1 for `|t| ≤ a` and 0 for `|t| ≥ b`.
fn smooth_step(t: f64, a: f64, b: f64) -> f64 {
    let t = t.abs();
    if t <= a {
        return 1.0;
    }
    if t >= b {
        return 0.0;
    }
    let s = (t - a) / (b - a);
    let f = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
    f(1.0 - s) / (f(1.0 - s) + f(s))
}

/// Contract axis `axis` of a row-major tensor with `dims` against `mat` (`rows × dims[axis]`).
fn contract_axis(data: &[c64], dims: &mut [usize], axis: usize, mat: &[Vec<c64>]) -> Vec<c64> {
    let pre: usize = dims[..axis].iter().product();
    let len = dims[axis];
    let post: usize = dims[axis + 1..].iter().product();
    let rows = mat.len();
    let mut out = vec![c64::new(0.0, 0.0); pre * rows * post];
    for a in 0..pre {
        for r in 0..rows {
            for i in 0..len {
                let coef = mat[r][i];
                let src = &data[(a * len + i) * post..(a * len + i + 1) * post];
                let dst = &mut out[(a * rows + r) * post..(a * rows + r + 1) * post];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += coef * s;
                }
            }
        }
    }
    dims[axis] = rows;
    out
}

/// Fourier coefficients of `K_j(x - y)` on `Q × R` in the rescaled variables
/// `x = c_Q + ℓ x̃`, `y = c_R + ℓ ỹ`, by tensor Gauss-Legendre quadrature.
pub fn kernel_fourier_expansion(pair: &WhitneyPair, j: usize, l_max: usize, cutoff: KernelCutoff) -> Result<KernelExpansion> {
    let (q, r) = (&pair.q, &pair.r);
    let n = q.dim();
    let axis = check_direction(j, n)?;
    if r.dim() != n || q.level != r.level {
        return Err(invalid("Whitney pair cubes must share dimension and level"));
    }
    let side = q.side();
    if q.geometry().distance(&r.geometry()) < side * (1.0 - 1e-12) {
        return Err(invalid(format!("cubes {q} and {r} are too close for an off-diagonal expansion")));
    }
    let dil = match cutoff {
        KernelCutoff::Sharp => 1.0,
        KernelCutoff::Smooth => SMOOTH_CUTOFF_DILATION,
    };
    // period of the series in units of ℓ(Q)
    let period = side * dil;
    let nodes = match (n, cutoff) {
        (1, _) => 96,
        (2, _) => 28,
        _ => 12,
    };
    let (gx, gw) = gauss_legendre(nodes);
    let cq = q.center();
    let cr = r.center();
    let total = 2 * n;
    let npts = nodes.pow(total as u32);
    let mut samples = vec![c64::new(0.0, 0.0); npts];
    let mut z = vec![0.0; n];
    let mut mi = vec![0usize; total];
    for (p, s) in samples.iter_mut().enumerate() {
        let mut rest = p;
        for a in (0..total).rev() {
            mi[a] = rest % nodes;
            rest /= nodes;
        }
        let mut weight = 1.0;
        let mut cut = 1.0;
        for a in 0..n {
            let xt = gx[mi[a]];
            let yt = gx[mi[n + a]];
            z[a] = (cq[a] + period * xt) - (cr[a] + period * yt);
            weight *= gw[mi[a]] * gw[mi[n + a]];
            if cutoff == KernelCutoff::Smooth {
                let inner = 0.5 / dil;
                cut *= smooth_step(xt, inner, 0.5) * smooth_step(yt, inner, 0.5);
            }
        }
        *s = c64::new(weight * cut * riesz_kernel(axis, &z), 0.0);
    }
    let width = 2 * l_max + 1;
    let mat: Vec<Vec<c64>> = (0..width)
        .map(|row| {
            let l = row as f64 - l_max as f64;
            gx.iter().map(|&t| c64::from_polar(1.0, -2.0 * std::f64::consts::PI * l * t)).collect()
        })
        .collect();
    let mut dims = vec![nodes; total];
    let mut data = samples;
    for a in 0..total {
        data = contract_axis(&data, &mut dims, a, &mat);
    }
    let coeffs = data;
    let vol = q.volume();
    let lambda: Vec<f64> = coeffs.iter().map(|c| c.norm() * vol).collect();
    let mut envelope = vec![0.0f64; l_max + 1];
    for (p, v) in lambda.iter().enumerate() {
        let mut rest = p;
        let mut shell = 0;
        for _ in 0..total {
            shell = shell.max((rest % width).abs_diff(l_max));
            rest /= width;
        }
        envelope[shell] = envelope[shell].max(*v);
    }
    let exponent = fit_decay(&envelope);
    let residual = reconstruction_residual(q, r, axis, l_max, dil, &coeffs);
    Ok(KernelExpansion { dim: n, l_max, cutoff, cube_volume: vol, coeffs, report: DecayReport { exponent, envelope, residual } })
}

/// Least-squares slope of `log envelope` against `log(1 + r)`, `r ≥ 1`, ignoring shells at the rounding floor.
fn fit_decay(envelope: &[f64]) -> f64 {
    let top = envelope.iter().cloned().fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = envelope
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &v)| v > 1e-13 * top)
        .map(|(r, &v)| ((1.0 + r as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::INFINITY;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    -sxy / sxx
}

/// Relative `L²(Q × R)` error of the truncated series, on a midpoint grid.
fn reconstruction_residual(q: &CubeId, r: &CubeId, axis: usize, l_max: usize, dil: f64, coeffs: &[c64]) -> f64 {
    let n = q.dim();
    let total = 2 * n;
    let per_axis = match n {
        1 => 64,
        2 => 12,
        _ => 6,
    };
    let width = 2 * l_max + 1;
    let side = q.side();
    let period = side * dil;
    // rescaled coordinates of the midpoints of the original box, in units of the period
    let pts: Vec<f64> = (0..per_axis).map(|i| ((i as f64 + 0.5) / per_axis as f64 - 0.5) / dil).collect();
    let phases: Vec<Vec<c64>> = pts
        .iter()
        .map(|&t| (0..width).map(|row| c64::from_polar(1.0, 2.0 * std::f64::consts::PI * (row as f64 - l_max as f64) * t)).collect())
        .collect();
    let cq = q.center();
    let cr = r.center();
    let (mut err, mut norm) = (0.0, 0.0);
    let npts = (per_axis as usize).pow(total as u32);
    let mut mi = vec![0usize; total];
    let mut z = vec![0.0; n];
    for p in 0..npts {
        let mut rest = p;
        for a in (0..total).rev() {
            mi[a] = rest % per_axis;
            rest /= per_axis;
        }
        for a in 0..n {
            z[a] = (cq[a] + period * pts[mi[a]]) - (cr[a] + period * pts[mi[n + a]]);
        }
        let exact = riesz_kernel(axis, &z);
        // series value: contract coefficient tensor with the phase vectors axis by axis
        let mut acc = coeffs.to_vec();
        let mut dims = vec![width; total];
        for a in 0..total {
            let row = vec![phases[mi[a]].clone()];
            acc = contract_axis(&acc, &mut dims, a, &row);
        }
        let approx = acc[0];
        err += (approx - exact).norm_sqr();
        norm += exact * exact;
    }
    (err / norm).sqrt()
}

/// Lower median of the samples of `b` inside `q`.
pub fn cube_median(b: &SampledFunction, q: &CubeId) -> Result<f64> {
    let mut vals: Vec<f64> = cube_samples(&b.window, q).into_iter().map(|i| b.values[i]).collect();
    if vals.is_empty() {
        return Err(Error::OutsideWindow(q.to_string()));
    }
    vals.sort_by(f64::total_cmp);
    Ok(vals[(vals.len() - 1) / 2])
}

#[derive(Clone, Debug)]
pub struct NecessityTest {
    /// `L_Q` with kernel `ε_Q(x) J_Q(x,y)`.
    pub operator: OperatorMatrix,
    pub far: CubeId,
    pub median: f64,
    /// `Trace(w^{1/2} [b,R_j] L_Q w^{-1/2})` from the matrices.
    pub trace: f64,
    /// `|Q|^{-2} ∫_Q ∫_Q̂ (b(x) - b(y)) ε_Q(x) dy dx`.
    pub direct: f64,
    /// `|Q|^{-1} ∫_Q |b - ⟨b⟩_Q̂|`.
    pub mean_oscillation: f64,
}

/// Test operator for the lower bound on a standard cube `q`, direction `j` (one-based).
///
/// `ε_Q = sign(b - m_b(Q̂))` on `Q` with the lower median and `+1` at ties.
/// The trace is the entrywise sum `Σ A[x,y] L[y,x]` with `A` the conjugated
/// kernel-mode commutator, restricted to the support of `L_Q`.
pub fn necessity_test_operator(b: &SampledFunction, q: &CubeId, j: usize, w: &Weight) -> Result<NecessityTest> {
    let win = &b.window;
    let n = win.dim();
    let axis = check_direction(j, n)?;
    if w.values().len() != win.len() {
        return Err(Error::IncompatibleGrids("weight and symbol windows differ".into()));
    }
    if !q.shift.is_zero() || !win.is_aligned() {
        return Err(invalid("necessity test needs a standard cube in an aligned window"));
    }
    if !win.contains_cube(q) {
        return Err(Error::OutsideWindow(q.to_string()));
    }
    let far = far_cube(q, axis, win)?;
    let median = cube_median(b, &far)?;
    let inside = cube_samples(win, q);
    let hat = cube_samples(win, &far);
    let m = win.len();
    let hn = win.cell_volume();
    let vol = q.volume();
    let eps = |x: usize| if b.values[x] >= median { 1.0 } else { -1.0 };
    let pos = |i: usize| win.point(i);
    let mut l = Mat::<f64>::zeros(m, m);
    for &x in &inside {
        let px = pos(x);
        for &y in &hat {
            let py = pos(y);
            let z: Vec<f64> = px.iter().zip(&py).map(|(a, b)| a - b).collect();
            l[(x, y)] = eps(x) / (vol * vol * riesz_kernel(axis, &z)) * hn;
        }
    }
    let sw: Vec<f64> = w.values().iter().map(|v| v.sqrt()).collect();
    let mut trace = 0.0;
    for &y in &inside {
        let py = pos(y);
        for &x in &hat {
            let px = pos(x);
            let z: Vec<f64> = px.iter().zip(&py).map(|(a, b)| a - b).collect();
            // (w^{1/2} A)[x,y] (L w^{-1/2})[y,x]
            let a = sw[x] * (b.values[x] - b.values[y]) * riesz_kernel(axis, &z) * hn;
            trace += a * l[(y, x)] / sw[x];
        }
    }
    let mut direct = 0.0;
    for &x in &inside {
        for &y in &hat {
            direct += (b.values[x] - b.values[y]) * eps(x);
        }
    }
    direct *= hn * hn / (vol * vol);
    let avg_hat = hat.iter().map(|&i| b.values[i]).sum::<f64>() / hat.len() as f64;
    let mean_oscillation = inside.iter().map(|&i| (b.values[i] - avg_hat).abs()).sum::<f64>() * hn / vol;
    let operator = OperatorMatrix::real(win, 1, l, format!("L_Q[{q}]"))?;
    Ok(NecessityTest { operator, far, median, trace, direct, mean_oscillation })
}

/// Self-adjoint matrices with `γ_j γ_k + γ_k γ_j = 2 δ_{jk}`.
#[derive(Clone, Debug)]
pub struct GammaSet {
    pub dim: usize,
    pub size: usize,
    pub matrices: Vec<Mat<c64>>,
}

impl GammaSet {
    /// `[1]` in one dimension, Pauli `σ_x, σ_y` in two, and `σ_x, σ_y, σ_z` in three.
    pub fn pauli(dim: usize) -> Result<Self> {
        let z = c64::new(0.0, 0.0);
        let one = c64::new(1.0, 0.0);
        let i = c64::new(0.0, 1.0);
        let sx = Mat::from_fn(2, 2, |a, b| if a != b { one } else { z });
        let sy = Mat::from_fn(2, 2, |a, b| match (a, b) {
            (0, 1) => -i,
            (1, 0) => i,
            _ => z,
        });
        let sz = Mat::from_fn(2, 2, |a, b| match (a, b) {
            (0, 0) => one,
            (1, 1) => -one,
            _ => z,
        });
        let matrices = match dim {
            1 => vec![Mat::from_fn(1, 1, |_, _| one)],
            2 => vec![sx, sy],
            3 => vec![sx, sy, sz],
            _ => return Err(invalid(format!("no gamma matrices for dimension {dim}"))),
        };
        let size = 1 << (dim / 2);
        Ok(GammaSet { dim, size, matrices })
    }

    /// Largest entry of `γ_jγ_k + γ_kγ_j - 2δ_{jk}`.
    pub fn anticommutation_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, ga) in self.matrices.iter().enumerate() {
            for (b, gb) in self.matrices.iter().enumerate() {
                let s = ga * gb + gb * ga;
                for r in 0..self.size {
                    for c in 0..self.size {
                        let want = if a == b && r == c { 2.0 } else { 0.0 };
                        worst = worst.max((s[(r, c)] - c64::new(want, 0.0)).norm());
                    }
                }
            }
        }
        worst
    }
}

/// `d̄f = i Σ γ_j ⊗ [D_jΔ^{-1/2}, M_f]` with multiplier-mode Riesz transforms.
///
/// `D_jΔ^{-1/2}` has symbol `ξ_j/|ξ| = i·(-iξ_j/|ξ|)`, so each block is
/// `Σ_j γ_j[a,b] (f(x) - f(y)) R_j[x,y]`, which is self-adjoint for real `f`.
pub fn quantised_derivative(f: &SampledFunction, gammas: &GammaSet, mode: RieszMode) -> Result<OperatorMatrix> {
    let win = &f.window;
    if gammas.dim != win.dim() {
        return Err(invalid(format!("gamma set for dimension {} on a {}-dimensional window", gammas.dim, win.dim())));
    }
    let m = win.len();
    let size = gammas.size;
    let comms: Vec<Mat<f64>> = (1..=win.dim())
        .map(|j| {
            let r = riesz_matrix(j, win, mode)?;
            Ok(commutator(f, &r)?.as_real().expect("real").clone())
        })
        .collect::<Result<_>>()?;
    let d = size * m;
    let mat = Mat::from_fn(d, d, |x, y| {
        let (a, xi) = (x / m, x % m);
        let (b, yi) = (y / m, y % m);
        let mut s = c64::new(0.0, 0.0);
        for (g, c) in gammas.matrices.iter().zip(&comms) {
            s += g[(a, b)] * c[(xi, yi)];
        }
        s
    });
    OperatorMatrix::complex(win, size, mat, "dbar f")
}

/// Off-diagonal block `C_1 - i C_2` of `d̄f` in two dimensions with Pauli matrices,
/// where `C_j` is the (optionally weight-conjugated) commutator `[f, R_j]`. The
/// singular values of `d̄f` are those of this block, each taken twice.
pub fn quantised_derivative_block(f: &SampledFunction, w: Option<&Weight>, mode: RieszMode) -> Result<OperatorMatrix> {
    let win = &f.window;
    if win.dim() != 2 {
        return Err(invalid("the block form is specific to two dimensions"));
    }
    let mut cs = Vec::with_capacity(2);
    for j in 1..=2 {
        let c = commutator(f, &riesz_matrix(j, win, mode)?)?;
        let c = match w {
            Some(w) => conjugate_by_weight(&c, w)?,
            None => c,
        };
        cs.push(c.as_real().expect("real").clone());
    }
    let m = win.len();
    let mat = Mat::from_fn(m, m, |x, y| c64::new(cs[0][(x, y)], -cs[1][(x, y)]));
    OperatorMatrix::complex(win, 1, mat, "dbar f block")
}
