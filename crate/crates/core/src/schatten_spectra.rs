//! Singular values, Schatten-Lorentz functionals and the NWO upper/lower bound functionals.

use faer::{c64, Mat, Side};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discrete_operators::{conjugate_by_weight, Entries, OperatorMatrix};
use crate::dyadic_grid::CubeId;
use crate::error::{invalid, Error, Result};
use crate::function_spaces::{lorentz_norm, LorentzParams};
use crate::haar_system::SampledFunction;

/// Values below this fraction of `s_1` are reported as zero.
pub const RANK_TOLERANCE: f64 = 1e-13;

/// Nonincreasing singular values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectrum {
    pub values: Vec<f64>,
    pub source_dim: usize,
    /// Number of values at or above `RANK_TOLERANCE · s_1`.
    pub numerical_rank: usize,
}

impl SingularSpectrum {
    /// Sorts, clamps tiny values to zero and counts the rank.
    pub fn from_values(mut values: Vec<f64>, source_dim: usize) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("singular values must be finite and nonnegative".into()));
        }
        if values.len() > source_dim {
            return Err(invalid("more singular values than the source dimension"));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        let cut = values.first().copied().unwrap_or(0.0) * RANK_TOLERANCE;
        let mut numerical_rank = 0;
        for v in values.iter_mut() {
            if *v > 0.0 && *v >= cut {
                numerical_rank += 1;
            } else {
                *v = 0.0;
            }
        }
        Ok(SingularSpectrum { values, source_dim, numerical_rank })
    }

    pub fn largest(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn is_symmetric(a: &Mat<f64>) -> bool {
    let n = a.nrows();
    (0..n).all(|j| (0..j).all(|i| a[(i, j)] == a[(j, i)]))
}

fn is_hermitian(a: &Mat<c64>) -> bool {
    let n = a.nrows();
    (0..n).all(|j| (0..=j).all(|i| a[(i, j)] == a[(j, i)].conj()))
}

fn numerical(e: impl std::fmt::Debug) -> Error {
    Error::Numerical(format!("{e:?}"))
}

/// Singular values of a real matrix; exactly symmetric input goes through the
/// self-adjoint eigensolver, where `s_k = |λ_k|`.
pub fn real_singular_values(a: &Mat<f64>) -> Result<Vec<f64>> {
    if a.nrows() == a.ncols() && is_symmetric(a) {
        let e = a.self_adjoint_eigenvalues(Side::Lower).map_err(numerical)?;
        return Ok(e.into_iter().map(f64::abs).collect());
    }
    a.singular_values().map_err(numerical)
}

pub fn complex_singular_values(a: &Mat<c64>) -> Result<Vec<f64>> {
    if a.nrows() == a.ncols() && is_hermitian(a) {
        let e = a.self_adjoint_eigenvalues(Side::Lower).map_err(numerical)?;
        return Ok(e.into_iter().map(f64::abs).collect());
    }
    a.singular_values().map_err(numerical)
}

/// Full spectrum; with an inner-product weight, the plain spectrum of `w^{1/2} T w^{-1/2}`.
pub fn singular_values(t: &OperatorMatrix) -> Result<SingularSpectrum> {
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("operator {} has non-finite entries", t.label)));
    }
    let conj;
    let t = match &t.ip_weight {
        Some(w) => {
            conj = conjugate_by_weight(t, w)?;
            &conj
        }
        None => t,
    };
    let values = match &t.entries {
        Entries::Real(a) => real_singular_values(a)?,
        Entries::Complex(a) => complex_singular_values(a)?,
    };
    SingularSpectrum::from_values(values, t.dim())
}

/// `(Σ s_k^q (1+k)^{q/p-1})^{1/q}`, or `sup_k s_k (1+k)^{1/p}` for `q = ∞`.
pub fn schatten_norm(s: &SingularSpectrum, p: f64, q: f64) -> Result<f64> {
    Ok(schatten_functional(s, p, q)?.value)
}

/// Functional value with exponents and, for the weak form, the index attaining the supremum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchattenValue {
    pub p: f64,
    #[serde(with = "crate::exponent_serde")]
    pub q: f64,
    pub value: f64,
    pub argmax_k: Option<usize>,
}

pub fn schatten_functional(s: &SingularSpectrum, p: f64, q: f64) -> Result<SchattenValue> {
    let v = lorentz_norm(&s.values, LorentzParams::new(p, q)?);
    Ok(SchattenValue { p, q, value: v.value, argmax_k: v.argmax_k })
}

/// Largest singular value by power iteration on `T^*T` (plain inner product after weight conjugation).
pub fn operator_norm_estimate(t: &OperatorMatrix, iterations: usize, tol: f64, seed: u64) -> Result<f64> {
    let conj;
    let t = match &t.ip_weight {
        Some(w) => {
            conj = conjugate_by_weight(t, w)?;
            &conj
        }
        None => t,
    };
    let a = t.to_complex();
    let d = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Mat::<c64>::from_fn(d, 1, |_, _| c64::new(rng.random_range(-1.0..1.0), 0.0));
    let mut est = 0.0;
    for _ in 0..iterations.max(1) {
        let nv = v.norm_l2();
        if nv == 0.0 {
            return Ok(0.0);
        }
        v = v * faer::Scale(c64::new(1.0 / nv, 0.0));
        let av = &a * &v;
        let next = av.norm_l2();
        v = a.adjoint() * &av;
        if (next - est).abs() <= tol * next {
            return Ok(next);
        }
        est = next;
    }
    Ok(est)
}

/// `sup_Q ‖e_Q‖_r |Q|^{1/2 - 1/r}`: the NWO size constant of a cube-indexed family.
pub fn nwo_size_constant(family: &[(CubeId, SampledFunction)], r: f64) -> f64 {
    family
        .iter()
        .map(|(q, e)| e.norm_lp(r) * q.volume().powf(0.5 - 1.0 / r))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerFunctional {
    pub value: f64,
    pub size_e: f64,
    pub size_f: f64,
    pub size_exponent: f64,
}

/// `(Σ_Q |⟨T e_Q, f_Q⟩|^p)^{1/p}` with NWO size constants of both families.
///
/// The pairing uses the operator's inner-product weight when one is attached.
pub fn rs_lower_functional(
    t: &OperatorMatrix,
    e: &[(CubeId, SampledFunction)],
    f: &[(CubeId, SampledFunction)],
    p: f64,
    r: f64,
) -> Result<LowerFunctional> {
    if p <= 1.0 {
        return Err(invalid(format!("lower functional needs p > 1, got {p}")));
    }
    if e.len() != f.len() || e.iter().zip(f).any(|(a, b)| a.0 != b.0) {
        return Err(invalid("families must be indexed by the same cubes"));
    }
    if t.blocks != 1 {
        return Err(invalid("lower functional acts on scalar operators"));
    }
    let m = t.window.len();
    let hn = t.window.cell_volume();
    let w: Vec<f64> = t.ip_weight.as_ref().map(|w| w.values().to_vec()).unwrap_or_else(|| vec![1.0; m]);
    let mut total = 0.0;
    for ((_, eq), (_, fq)) in e.iter().zip(f) {
        if eq.len() != m || fq.len() != m {
            return Err(Error::IncompatibleGrids("family member on a different grid".into()));
        }
        let support: Vec<usize> = (0..m).filter(|&y| eq.values[y] != 0.0).collect();
        let mut pairing = c64::new(0.0, 0.0);
        for x in 0..m {
            if fq.values[x] == 0.0 {
                continue;
            }
            let mut tx = c64::new(0.0, 0.0);
            for &y in &support {
                tx += t.get(x, y) * eq.values[y];
            }
            pairing += tx * (fq.values[x] * w[x]);
        }
        total += (pairing * hn).norm().powf(p);
    }
    Ok(LowerFunctional { value: total.powf(1.0 / p), size_e: nwo_size_constant(e, r), size_f: nwo_size_constant(f, r), size_exponent: r })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperAssembly {
    pub schatten: f64,
    pub lorentz: f64,
    /// `schatten / lorentz`, the empirical constant of the upper bound.
    pub ratio: f64,
}

/// Builds `T = Σ λ_Q ⟨·, e_Q⟩ f_Q` and compares its `S^{p,q}` norm with `‖λ‖_{ℓ^{p,q}}`.
pub fn rs_upper_assembly(terms: &[(f64, SampledFunction, SampledFunction)], p: f64, q: f64) -> Result<UpperAssembly> {
    let first = terms.first().ok_or_else(|| invalid("no terms to assemble"))?;
    let win = first.1.window.clone();
    let m = win.len();
    let hn = win.cell_volume();
    let mut a = Mat::<f64>::zeros(m, m);
    for (lambda, e, f) in terms {
        if e.len() != m || f.len() != m {
            return Err(Error::IncompatibleGrids("term on a different grid".into()));
        }
        for y in (0..m).filter(|&y| e.values[y] != 0.0) {
            let c = lambda * e.values[y] * hn;
            for x in (0..m).filter(|&x| f.values[x] != 0.0) {
                a[(x, y)] += c * f.values[x];
            }
        }
    }
    let s = singular_values(&OperatorMatrix::real(&win, 1, a, "NWO sum")?)?;
    let schatten = schatten_norm(&s, p, q)?;
    let lambdas: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let lorentz = lorentz_norm(&lambdas, LorentzParams::new(p, q)?).value;
    let ratio = if lorentz > 0.0 { schatten / lorentz } else { 0.0 };
    Ok(UpperAssembly { schatten, lorentz, ratio })
}
