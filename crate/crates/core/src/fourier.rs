//! Tensor FFT on row-major cubic grids.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// In-place unnormalized FFT along every axis of an `n`-dimensional array with `side` points per axis.
pub(crate) fn fft_nd(data: &mut [Complex64], side: usize, dim: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(side) } else { planner.plan_fft_forward(side) };
    let mut line = vec![Complex64::new(0.0, 0.0); side];
    for axis in 0..dim {
        let stride = side.pow((dim - 1 - axis) as u32);
        let total = data.len();
        for start in 0..total {
            // visit each line once: the axis coordinate of `start` must be zero
            if (start / stride) % side != 0 {
                continue;
            }
            for (k, v) in line.iter_mut().enumerate() {
                *v = data[start + k * stride];
            }
            fft.process(&mut line);
            for (k, v) in line.iter().enumerate() {
                data[start + k * stride] = *v;
            }
        }
    }
}

/// Signed frequency of DFT index `k` on `side` points, in `[-side/2, side/2)`.
pub(crate) fn signed_freq(k: usize, side: usize) -> i64 {
    let k = k as i64;
    let s = side as i64;
    if k >= s / 2 {
        k - s
    } else {
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_2d() {
        let side = 8;
        let orig: Vec<Complex64> = (0..64).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64).cos())).collect();
        let mut d = orig.clone();
        fft_nd(&mut d, side, 2, false);
        fft_nd(&mut d, side, 2, true);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a / 64.0 - b).norm() < 1e-13);
        }
    }

    #[test]
    fn single_mode_lands_on_its_bin() {
        let side = 8;
        let mut d: Vec<Complex64> = (0..64)
            .map(|i| {
                let (a, b) = (i / 8, i % 8);
                let t = 2.0 * std::f64::consts::PI * (2.0 * a as f64 - 3.0 * b as f64) / 8.0;
                Complex64::new(t.cos(), t.sin())
            })
            .collect();
        fft_nd(&mut d, side, 2, false);
        let hot = d.iter().position(|v| v.norm() > 1.0).unwrap();
        assert_eq!((signed_freq(hot / 8, 8), signed_freq(hot % 8, 8)), (2, -3));
    }
}
