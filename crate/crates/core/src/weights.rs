//! Muckenhoupt A₂ weights on a grid window.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dyadic_grid::{contained_cubes, BoxRegion, CubeId, GridWindow, Shift};
use crate::error::{invalid, Error, Result};
use crate::haar_system::{integrate_box, SampledFunction};

/// Default reverse Hölder ladder `2^{-6}, ..., 2^0`.
pub const DEFAULT_SIGMAS: [f64; 7] = [1.0 / 64.0, 1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 0.25, 0.5, 1.0];

/// Bound on the reverse Hölder ratio accepted by [`reverse_holder_index`] by default.
pub const DEFAULT_RH_BOUND: f64 = 2.0;

/// How a weight was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightSpec {
    Constant { value: f64 },
    /// `|x - center|^alpha`; the window center when `center` is absent.
    Power { alpha: f64, center: Option<Vec<f64>> },
    Tabulated,
}

impl WeightSpec {
    pub fn unit() -> Self {
        WeightSpec::Constant { value: 1.0 }
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSpec::Constant { value } if *value == 1.0 => f.write_str("constant"),
            WeightSpec::Constant { value } => write!(f, "constant:{value}"),
            WeightSpec::Power { alpha, center: None } => write!(f, "power:{alpha}"),
            WeightSpec::Power { alpha, center: Some(c) } => {
                write!(f, "power:{alpha}@")?;
                for (i, v) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                Ok(())
            }
            WeightSpec::Tabulated => f.write_str("tabulated"),
        }
    }
}

impl FromStr for WeightSpec {
    type Err = Error;

    /// `constant`, `constant:c`, `power:alpha` or `power:alpha@c1,c2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| invalid(format!("bad number {t:?} in weight {s:?}: {e}")));
        match kind {
            "constant" | "unit" => {
                let value = if rest.is_empty() { 1.0 } else { num(rest)? };
                Ok(WeightSpec::Constant { value })
            }
            "power" => {
                let (a, c) = rest.split_once('@').unwrap_or((rest, ""));
                let alpha = num(a)?;
                let center = if c.is_empty() { None } else { Some(c.split(',').map(num).collect::<Result<Vec<_>>>()?) };
                Ok(WeightSpec::Power { alpha, center })
            }
            _ => Err(invalid(format!("unknown weight kind {kind:?}"))),
        }
    }
}

/// Strictly positive weight sampled on a window.
#[derive(Clone, Debug)]
pub struct Weight {
    pub w: SampledFunction,
    pub spec: WeightSpec,
    /// Smallest distance to the center used by a power weight.
    pub clamp_radius: Option<f64>,
}

impl Weight {
    pub fn constant(win: &GridWindow, value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositiveWeight { index: 0, value });
        }
        Ok(Weight { w: SampledFunction::constant(win, value), spec: WeightSpec::Constant { value }, clamp_radius: None })
    }

    /// `max(|x - c|, h/2)^alpha`.
    pub fn power(win: &GridWindow, alpha: f64, center: Option<Vec<f64>>) -> Result<Self> {
        let n = win.dim() as f64;
        if !(alpha > -n && alpha < n) {
            return Err(invalid(format!("power weight exponent {alpha} outside (-{n}, {n})")));
        }
        let c = match &center {
            Some(c) if c.len() == win.dim() => c.clone(),
            Some(_) => return Err(invalid("weight center dimension differs from window")),
            None => win.origin().iter().map(|o| o + 0.5 * win.side()).collect(),
        };
        let r0 = 0.5 * win.spacing();
        let w = SampledFunction::from_fn(win, |x| {
            let r = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            r.max(r0).powf(alpha)
        });
        Ok(Weight { w, spec: WeightSpec::Power { alpha, center }, clamp_radius: Some(r0) })
    }

    pub fn tabulated(w: SampledFunction) -> Result<Self> {
        if let Some((i, &v)) = w.values.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v.is_finite())) {
            return Err(Error::NonPositiveWeight { index: i, value: v });
        }
        Ok(Weight { w, spec: WeightSpec::Tabulated, clamp_radius: None })
    }

    pub fn from_spec(win: &GridWindow, spec: &WeightSpec) -> Result<Self> {
        match spec {
            WeightSpec::Constant { value } => Weight::constant(win, *value),
            WeightSpec::Power { alpha, center } => Weight::power(win, *alpha, center.clone()),
            WeightSpec::Tabulated => Err(invalid("a tabulated weight needs its samples")),
        }
    }

    pub fn window(&self) -> &GridWindow {
        &self.w.window
    }

    pub fn values(&self) -> &[f64] {
        &self.w.values
    }

    /// `w^{-1}` as a tabulated weight.
    pub fn inverse(&self) -> Weight {
        Weight { w: self.w.map(|v| 1.0 / v), spec: WeightSpec::Tabulated, clamp_radius: self.clamp_radius }
    }

    pub fn is_constant(&self) -> bool {
        let v0 = self.w.values[0];
        self.w.values.iter().all(|&v| v == v0)
    }
}

/// `w(Q) = ∫_{Q ∩ window} w`.
pub fn weighted_measure(w: &Weight, q: &CubeId) -> Result<f64> {
    region_measure(w, &q.geometry()).ok_or_else(|| Error::OutsideWindow(q.to_string()))
}

fn region_measure(w: &Weight, region: &BoxRegion) -> Option<f64> {
    integrate_box(w.window(), |i| w.w.values[i], region).map(|(s, _)| s)
}

/// `avg_Q w^a` with the average taken over `Q ∩ window`.
fn power_average(w: &Weight, q: &BoxRegion, a: f64) -> Option<f64> {
    let vals = &w.w.values;
    integrate_box(w.window(), |i| vals[i].powf(a), q).map(|(s, m)| s / m)
}

fn window_cubes(win: &GridWindow) -> Vec<CubeId> {
    Shift::all(win.dim()).iter().flat_map(|s| contained_cubes(win, s)).collect()
}

/// `[w]_{A₂}` over the window cubes of every shifted system, with a maximizing cube.
pub fn a2_constant_with_cube(w: &Weight) -> (f64, Option<CubeId>) {
    let mut best = (1.0, None);
    for q in window_cubes(w.window()) {
        let g = q.geometry();
        let (Some(a), Some(b)) = (power_average(w, &g, 1.0), power_average(w, &g, -1.0)) else { continue };
        let v = a * b;
        if v > best.0 || best.1.is_none() {
            best = (v, Some(q));
        }
    }
    best
}

pub fn a2_constant(w: &Weight) -> f64 {
    a2_constant_with_cube(w).0
}

/// `sup_Q avg(w^{1+σ})^{1/(1+σ)} / avg(w)`.
pub fn reverse_holder_constant(w: &Weight, sigma: f64) -> f64 {
    let mut best: f64 = 1.0;
    for q in window_cubes(w.window()) {
        let g = q.geometry();
        let (Some(hi), Some(lo)) = (power_average(w, &g, 1.0 + sigma), power_average(w, &g, 1.0)) else { continue };
        best = best.max(hi.powf(1.0 / (1.0 + sigma)) / lo);
    }
    best
}

/// Largest candidate `σ` whose reverse Hölder constant is at most `bound`,
/// together with that constant. Falls back to the smallest candidate.
pub fn reverse_holder_index(w: &Weight, candidates: &[f64], bound: f64) -> Result<(f64, f64)> {
    if candidates.is_empty() || candidates.iter().any(|&s| s <= 0.0) || candidates.windows(2).any(|p| p[0] >= p[1]) {
        return Err(invalid("reverse Hölder candidates must be positive and ascending"));
    }
    let mut chosen = (candidates[0], reverse_holder_constant(w, candidates[0]));
    for &s in candidates {
        let c = reverse_holder_constant(w, s);
        if c <= bound {
            chosen = (s, c);
        } else {
            break;
        }
    }
    Ok(chosen)
}

/// `max_Q w(λQ) / (λ^{2n} w(Q))` over standard window cubes whose dilate stays in the window.
pub fn doubling_ratio(w: &Weight, lambda: f64) -> Result<f64> {
    if lambda < 1.0 {
        return Err(invalid("doubling factor must be at least 1"));
    }
    let win = w.window();
    let dom = win.domain();
    let n = win.dim() as i32;
    let mut best: f64 = 0.0;
    for q in contained_cubes(win, &Shift::zero(win.dim())) {
        let big = q.dilate(lambda);
        if !dom.contains_box(&big) {
            continue;
        }
        let (Some(a), Some(b)) = (region_measure(w, &big), region_measure(w, &q.geometry())) else { continue };
        best = best.max(a / (lambda.powi(2 * n) * b));
    }
    Ok(best)
}
