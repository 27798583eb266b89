//! Test symbols for the experiments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic_grid::{cubes_at_level, GridWindow, Shift};
use crate::error::{invalid, Error, Result};
use crate::haar_system::{synthesize, HaarCoefficients, HaarIndex, SampledFunction, Signature, TransformPath};

/// A symbol family member. Centers are the window center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SymbolSpec {
    Constant { value: f64 },
    /// `exp(-|x-c|² / (2 width²))`.
    Gaussian { width: f64 },
    /// `Π_i sin(2π k_i x_i)`; a single frequency applies to every axis.
    Sine { freqs: Vec<u32> },
    /// `min(|x-c|, radius)^exponent`.
    Power { exponent: f64, radius: f64 },
    /// Haar series with `|⟨b,h^ε_Q⟩| = |Q|^{1/2+decay}` and random signs on
    /// levels `k_min ..= k_min + depth`.
    HaarRandom { decay: f64, depth: i32, seed: Option<u64> },
    /// `1 + amplitude · gaussian(0.1)`.
    NearConstant { amplitude: f64 },
}

pub const DEFAULT_GAUSSIAN_WIDTH: f64 = 0.1;
pub const DEFAULT_POWER_RADIUS: f64 = 0.3;
pub const DEFAULT_HAAR_DEPTH: i32 = 3;
pub const DEFAULT_NEAR_CONSTANT: f64 = 0.01;

impl SymbolSpec {
    /// The six-member test family.
    pub fn default_family() -> Vec<SymbolSpec> {
        vec![
            SymbolSpec::Gaussian { width: DEFAULT_GAUSSIAN_WIDTH },
            SymbolSpec::Sine { freqs: vec![1, 1] },
            SymbolSpec::Sine { freqs: vec![2, 1] },
            SymbolSpec::Power { exponent: 0.6, radius: DEFAULT_POWER_RADIUS },
            SymbolSpec::HaarRandom { decay: 0.3, depth: DEFAULT_HAAR_DEPTH, seed: None },
            SymbolSpec::NearConstant { amplitude: DEFAULT_NEAR_CONSTANT },
        ]
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, SymbolSpec::Constant { .. } | SymbolSpec::NearConstant { amplitude: 0.0 })
    }

    /// Fills in an absent haar-random seed.
    pub fn with_default_seed(&self, seed: u64) -> SymbolSpec {
        match self {
            SymbolSpec::HaarRandom { decay, depth, seed: None } => SymbolSpec::HaarRandom { decay: *decay, depth: *depth, seed: Some(seed) },
            other => other.clone(),
        }
    }
}

impl fmt::Display for SymbolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolSpec::Constant { value } => write!(f, "constant:{value}"),
            SymbolSpec::Gaussian { width } => write!(f, "gaussian:{width}"),
            SymbolSpec::Sine { freqs } => {
                f.write_str("sine:")?;
                let parts: Vec<String> = freqs.iter().map(|k| k.to_string()).collect();
                f.write_str(&parts.join(","))
            }
            SymbolSpec::Power { exponent, radius } => write!(f, "power:{exponent}:{radius}"),
            SymbolSpec::HaarRandom { decay, depth, seed: None } => write!(f, "haar-random:{decay}:{depth}"),
            SymbolSpec::HaarRandom { decay, depth, seed: Some(s) } => write!(f, "haar-random:{decay}:{depth}:{s}"),
            SymbolSpec::NearConstant { amplitude } => write!(f, "near-constant:{amplitude}"),
        }
    }
}

impl FromStr for SymbolSpec {
    type Err = Error;

    /// `constant[:c]`, `gaussian[:width]`, `sine[:k1,k2,..]`, `power:exponent[:radius]`,
    /// `haar-random:decay[:depth[:seed]]`, `near-constant[:amplitude]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or("");
        let args: Vec<&str> = parts.map(str::trim).collect();
        let num = |t: &str| t.parse::<f64>().map_err(|e| invalid(format!("bad number {t:?} in symbol {s:?}: {e}")));
        let arg = |i: usize, default: Option<f64>| -> Result<f64> {
            match args.get(i) {
                Some(t) => num(t),
                None => default.ok_or_else(|| invalid(format!("symbol {s:?} needs argument {}", i + 1))),
            }
        };
        if args.len() > 3 {
            return Err(invalid(format!("too many arguments in symbol {s:?}")));
        }
        let spec = match kind {
            "constant" => SymbolSpec::Constant { value: arg(0, Some(1.0))? },
            "gaussian" => SymbolSpec::Gaussian { width: arg(0, Some(DEFAULT_GAUSSIAN_WIDTH))? },
            "sine" => {
                let freqs = match args.first() {
                    None => vec![1],
                    Some(t) => t
                        .split(',')
                        .map(|k| k.trim().parse::<u32>().map_err(|e| invalid(format!("bad frequency {k:?} in symbol {s:?}: {e}"))))
                        .collect::<Result<Vec<_>>>()?,
                };
                SymbolSpec::Sine { freqs }
            }
            "power" => SymbolSpec::Power { exponent: arg(0, None)?, radius: arg(1, Some(DEFAULT_POWER_RADIUS))? },
            "haar-random" => {
                let depth = match args.get(1) {
                    Some(t) => t.parse::<i32>().map_err(|e| invalid(format!("bad depth {t:?}: {e}")))?,
                    None => DEFAULT_HAAR_DEPTH,
                };
                let seed = match args.get(2) {
                    Some(t) => Some(t.parse::<u64>().map_err(|e| invalid(format!("bad seed {t:?}: {e}")))?),
                    None => None,
                };
                SymbolSpec::HaarRandom { decay: arg(0, None)?, depth, seed }
            }
            "near-constant" => SymbolSpec::NearConstant { amplitude: arg(0, Some(DEFAULT_NEAR_CONSTANT))? },
            _ => return Err(invalid(format!("unknown symbol kind {kind:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for SymbolSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SymbolSpec> for String {
    fn from(s: SymbolSpec) -> String {
        s.to_string()
    }
}

impl SymbolSpec {
    fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| if v.is_finite() { Ok(()) } else { Err(invalid(format!("{what} must be finite"))) };
        match self {
            SymbolSpec::Constant { value } => finite(*value, "constant value"),
            SymbolSpec::Gaussian { width } if !(*width > 0.0 && width.is_finite()) => Err(invalid("gaussian width must be positive")),
            SymbolSpec::Sine { freqs } if freqs.is_empty() => Err(invalid("sine needs at least one frequency")),
            SymbolSpec::Power { exponent, radius } => {
                finite(*exponent, "power exponent")?;
                if *exponent < 0.0 {
                    return Err(invalid("power exponent must be nonnegative so the symbol stays bounded"));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(invalid("power radius must be positive"));
                }
                Ok(())
            }
            SymbolSpec::HaarRandom { decay, depth, .. } => {
                finite(*decay, "haar-random decay")?;
                if *depth < 0 {
                    return Err(invalid("haar-random depth must be nonnegative"));
                }
                Ok(())
            }
            SymbolSpec::NearConstant { amplitude } => finite(*amplitude, "near-constant amplitude"),
            _ => Ok(()),
        }
    }
}

fn window_center(win: &GridWindow) -> Vec<f64> {
    win.origin().iter().map(|o| o + 0.5 * win.side()).collect()
}

fn gaussian(win: &GridWindow, width: f64) -> SampledFunction {
    let c = window_center(win);
    SampledFunction::from_fn(win, |x| {
        let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
        (-r2 / (2.0 * width * width)).exp()
    })
}

/// Samples the symbol on `win`. Haar-random symbols without a seed use seed 0.
pub fn symbol_library(spec: &SymbolSpec, win: &GridWindow) -> Result<SampledFunction> {
    spec.validate()?;
    let n = win.dim();
    Ok(match spec {
        SymbolSpec::Constant { value } => SampledFunction::constant(win, *value),
        SymbolSpec::Gaussian { width } => gaussian(win, *width),
        SymbolSpec::Sine { freqs } => {
            if freqs.len() != 1 && freqs.len() != n {
                return Err(invalid(format!("sine symbol has {} frequencies for dimension {n}", freqs.len())));
            }
            let k = |i: usize| freqs[if freqs.len() == 1 { 0 } else { i }] as f64;
            let tau = 2.0 * std::f64::consts::PI;
            SampledFunction::from_fn(win, |x| x.iter().enumerate().map(|(i, v)| (tau * k(i) * v).sin()).product())
        }
        SymbolSpec::Power { exponent, radius } => {
            let c = window_center(win);
            SampledFunction::from_fn(win, |x| {
                let r: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                r.min(*radius).powf(*exponent)
            })
        }
        SymbolSpec::HaarRandom { decay, depth, seed } => haar_random(win, *decay, *depth, seed.unwrap_or(0))?,
        SymbolSpec::NearConstant { amplitude } => gaussian(win, DEFAULT_GAUSSIAN_WIDTH).map(|v| 1.0 + amplitude * v),
    })
}

/// Standard-system cubes are visited coarse to fine in a fixed order, so the
/// coefficients do not depend on the window resolution.
fn haar_random(win: &GridWindow, decay: f64, depth: i32, seed: u64) -> Result<SampledFunction> {
    let n = win.dim();
    let shift = Shift::zero(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigs = Signature::cancellative(n);
    let mut entries = BTreeMap::new();
    let last = (win.k_min() + depth).min(win.k_max());
    for level in win.k_min()..=last {
        for q in cubes_at_level(win, &shift, level, true) {
            let mag = q.volume().powf(0.5 + decay);
            for sig in &sigs {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                entries.insert(HaarIndex { cube: q.clone(), sig: sig.clone() }, sign * mag);
            }
        }
    }
    let coeffs = HaarCoefficients { window: win.clone(), shift, entries, coarse: BTreeMap::new(), path: TransformPath::Pyramid };
    synthesize(&coeffs, false)
}

/// `‖∇b‖_{L²}` of the untruncated gaussian of width `s` in dimension `n`: `((n/2) π^{n/2} s^{n-2})^{1/2}`.
pub fn gaussian_gradient_l2(width: f64, dim: usize) -> f64 {
    let n = dim as f64;
    (0.5 * n * std::f64::consts::PI.powf(0.5 * n) * width.powf(n - 2.0)).sqrt()
}
