//! Fourier coefficients on the unit circle `[0, 1)`, periodic convolution,
//! Fejér means, and inversion of `1 + e_n(f)` in the coefficient algebra.
//!
//! Functions are represented by `L` uniform samples `f(j/L)`, `j = 0..L`.
//! Coefficients follow `e_n(f) = ∫₀¹ f(x) e^{−2πinx} dx`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Smallest admissible `|1 + e_n(f)|` in [`wiener_invert`].
pub const NEAR_ZERO_SYMBOL: f64 = 1e-8;

/// Fourier coefficients `c_n`, `n = n_min..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSeq {
    pub n_min: i64,
    pub n_max: i64,
    pub values: Vec<Complex64>,
}

impl CoeffSeq {
    pub fn new(n_min: i64, n_max: i64, values: Vec<Complex64>) -> Result<Self> {
        if n_max < n_min || values.len() as i64 != n_max - n_min + 1 {
            return Err(Error::InvalidArgument("coefficient range does not match the values".into()));
        }
        if values.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(Self { n_min, n_max, values })
    }

    /// Coefficient `c_n`, zero outside the stored range.
    pub fn get(&self, n: i64) -> Complex64 {
        if n < self.n_min || n > self.n_max {
            Complex64::new(0.0, 0.0)
        } else {
            self.values[(n - self.n_min) as usize]
        }
    }

    /// `c_{−n} = conj(c_n)` over the stored range.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        (self.n_min..=self.n_max).all(|n| (self.get(-n) - self.get(n).conj()).norm() <= tol)
    }
}

/// Samples `f(j/L)`, `j = 0..L`.
pub fn sample(f: impl Fn(f64) -> f64, len: usize) -> Vec<Complex64> {
    (0..len).map(|j| Complex64::new(f(j as f64 / len as f64), 0.0)).collect()
}

fn fft(values: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let plan = if inverse { planner.plan_fft_inverse(values.len()) } else { planner.plan_fft_forward(values.len()) };
    let mut buf = values.to_vec();
    plan.process(&mut buf);
    buf
}

fn bin(n: i64, len: usize) -> usize {
    n.rem_euclid(len as i64) as usize
}

/// Trapezoid approximation of `e_n(f)` from periodic samples.
pub fn fourier_coeff(samples: &[Complex64], n: i64) -> Result<Complex64> {
    let len = samples.len();
    if len == 0 || (len as i64) < 4 * n.abs() {
        return Err(Error::AliasRisk(n));
    }
    let modulus = len as i64;
    let sum: Complex64 = samples
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let k = (j as i64 * n).rem_euclid(modulus) as f64;
            f * Complex64::from_polar(1.0, -2.0 * PI * k / len as f64)
        })
        .sum();
    Ok(sum / len as f64)
}

/// All coefficients with `|n| ≤ n_max` at once.
pub fn fourier_coeffs(samples: &[Complex64], n_max: i64) -> Result<CoeffSeq> {
    let len = samples.len();
    if len == 0 || (len as i64) < 4 * n_max {
        return Err(Error::AliasRisk(n_max));
    }
    let spectrum = fft(samples, false);
    let values = (-n_max..=n_max).map(|n| spectrum[bin(n, len)] / len as f64).collect();
    CoeffSeq::new(-n_max, n_max, values)
}

/// Periodic convolution `(f∗g)(x) = ∫₀¹ f(x − y) g(y) dy`.
pub fn circ_conv(f: &[Complex64], g: &[Complex64]) -> Result<Vec<Complex64>> {
    if f.len() != g.len() || f.is_empty() {
        return Err(Error::InvalidArgument("convolution needs equal, non-empty sample counts".into()));
    }
    let len = f.len() as f64;
    let ff = fft(f, false);
    let gg = fft(g, false);
    let prod: Vec<Complex64> = ff.iter().zip(&gg).map(|(a, b)| a * b / len).collect();
    Ok(fft(&prod, true).into_iter().map(|v| v / len).collect())
}

/// `(∫₀¹ |f|^p)^{1/p}` by the periodic trapezoid rule.
pub fn lp_norm(samples: &[Complex64], p: f64) -> f64 {
    let len = samples.len() as f64;
    (samples.iter().map(|v| v.norm().powf(p)).sum::<f64>() / len).powf(1.0 / p)
}

/// Fejér mean `σ_N(x) = Σ_{|n|≤N} (1 − |n|/(N+1)) c_n e^{2πinx}` with
/// `N = max(|n_min|, |n_max|)`.
pub fn fejer_sum(coeffs: &CoeffSeq, xs: &[f64]) -> Vec<Complex64> {
    let order = coeffs.n_max.abs().max(coeffs.n_min.abs());
    let weighted: Vec<(i64, Complex64)> = (coeffs.n_min..=coeffs.n_max)
        .map(|n| (n, coeffs.get(n) * (1.0 - n.abs() as f64 / (order + 1) as f64)))
        .collect();
    xs.iter()
        .map(|&x| weighted.iter().map(|(n, c)| c * Complex64::from_polar(1.0, 2.0 * PI * *n as f64 * x)).sum())
        .collect()
}

/// Result of [`wiener_invert`].
#[derive(Debug, Clone)]
pub struct WienerInverse {
    /// Samples of `g` on the same grid as `f`.
    pub g: Vec<Complex64>,
    /// `max_{|n| ≤ n_check} |(1 + e_n(f))(1 + e_n(g)) − 1|`.
    pub residual: f64,
    pub n_check: i64,
}

/// Finds `g` with `(1 + e_n(f))(1 + e_n(g)) = 1` for every resolvable `n`.
///
/// `n_check` defaults to half the sample count.
pub fn wiener_invert(f: &[Complex64], n_check: Option<i64>) -> Result<WienerInverse> {
    let len = f.len();
    if len < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let half = (len / 2) as i64;
    let n_check = n_check.unwrap_or(half).min(half);
    let lenf = len as f64;
    let ef: Vec<Complex64> = fft(f, false).into_iter().map(|v| v / lenf).collect();
    let mut eg = vec![Complex64::new(0.0, 0.0); len];
    for (k, e) in ef.iter().enumerate() {
        let symbol = Complex64::new(1.0, 0.0) + e;
        if symbol.norm() < NEAR_ZERO_SYMBOL {
            let n = if k as i64 > half { k as i64 - len as i64 } else { k as i64 };
            return Err(Error::NearZeroSymbol(n));
        }
        eg[k] = symbol.inv() - 1.0;
    }
    let g = fft(&eg, true);
    let eg_back: Vec<Complex64> = fft(&g, false).into_iter().map(|v| v / lenf).collect();
    let residual = (-n_check..=n_check)
        .map(|n| {
            let k = bin(n, len);
            ((Complex64::new(1.0, 0.0) + ef[k]) * (Complex64::new(1.0, 0.0) + eg_back[k]) - 1.0).norm()
        })
        .fold(0.0, f64::max);
    Ok(WienerInverse { g, residual, n_check })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step(len: usize) -> Vec<Complex64> {
        (0..len)
            .map(|j| {
                let v = if 2 * j == len || j == 0 {
                    0.5
                } else if 2 * j < len {
                    1.0
                } else {
                    0.0
                };
                Complex64::new(v, 0.0)
            })
            .collect()
    }

    #[test]
    fn constant_and_single_mode() {
        let one = sample(|_| 1.0, 64);
        assert!((fourier_coeff(&one, 0).unwrap() - 1.0).norm() < 1e-15);
        for n in 1..=8 {
            assert!(fourier_coeff(&one, n).unwrap().norm() < 1e-14);
            assert!(fourier_coeff(&one, -n).unwrap().norm() < 1e-14);
        }
        let mode: Vec<Complex64> = (0..64).map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / 64.0)).collect();
        assert!((fourier_coeff(&mode, 1).unwrap() - 1.0).norm() < 1e-14);
        assert!(fourier_coeff(&mode, -1).unwrap().norm() < 1e-14);
        assert!(fourier_coeff(&mode, 2).unwrap().norm() < 1e-14);
    }

    #[test]
    fn alias_guard() {
        let f = sample(|x| x, 32);
        assert!(fourier_coeff(&f, 8).is_ok());
        assert_eq!(fourier_coeff(&f, 9), Err(Error::AliasRisk(9)));
        assert_eq!(fourier_coeff(&f, -9), Err(Error::AliasRisk(-9)));
    }

    #[test]
    fn step_function_coefficients() {
        let f = step(1 << 16);
        let all = fourier_coeffs(&f, 16).unwrap();
        for n in -16_i64..=16 {
            let exact = if n == 0 {
                Complex64::new(0.5, 0.0)
            } else {
                let num = 1.0 - if n % 2 == 0 { 1.0 } else { -1.0 };
                Complex64::new(num, 0.0) / Complex64::new(0.0, 2.0 * PI * n as f64)
            };
            assert!((fourier_coeff(&f, n).unwrap() - exact).norm() < 1e-8, "n={n}");
            assert!((all.get(n) - exact).norm() < 1e-8);
        }
        assert!(all.is_hermitian(1e-12));
    }

    fn trig_poly(c: &[(i64, Complex64)], len: usize) -> Vec<Complex64> {
        (0..len)
            .map(|j| {
                let x = j as f64 / len as f64;
                c.iter().map(|(n, a)| a * Complex64::from_polar(1.0, 2.0 * PI * *n as f64 * x)).sum()
            })
            .collect()
    }

    #[test]
    fn convolution_multiplies_coefficients() {
        let f = trig_poly(&[(0, 0.5.into()), (3, Complex64::new(0.2, -0.1)), (-8, Complex64::new(0.0, 1.0))], 64);
        let g = trig_poly(&[(3, Complex64::new(1.5, 0.5)), (-8, 2.0.into()), (5, 1.0.into())], 64);
        let h = circ_conv(&f, &g).unwrap();
        for n in -8..=8 {
            let want = fourier_coeff(&f, n).unwrap() * fourier_coeff(&g, n).unwrap();
            assert!((fourier_coeff(&h, n).unwrap() - want).norm() < 1e-10, "n={n}");
        }
        // Exact coefficient arithmetic: only n = 3 and n = −8 survive.
        assert!((fourier_coeff(&h, 3).unwrap() - Complex64::new(0.2, -0.1) * Complex64::new(1.5, 0.5)).norm() < 1e-12);
        assert!((fourier_coeff(&h, -8).unwrap() - Complex64::new(0.0, 2.0)).norm() < 1e-12);
        assert!(fourier_coeff(&h, 5).unwrap().norm() < 1e-12);

        let one = sample(|_| 1.0, 64);
        let c = circ_conv(&f, &one).unwrap();
        assert!((fourier_coeff(&c, 0).unwrap() - 0.5).norm() < 1e-12);
        assert!(fourier_coeff(&c, 3).unwrap().norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn young_inequality(f in prop::collection::vec(-5.0..5.0f64, 32), g in prop::collection::vec(-5.0..5.0f64, 32)) {
            let f: Vec<Complex64> = f.into_iter().map(Complex64::from).collect();
            let g: Vec<Complex64> = g.into_iter().map(Complex64::from).collect();
            let h = circ_conv(&f, &g).unwrap();
            for p in [1.0, 2.0] {
                prop_assert!(lp_norm(&h, p) <= lp_norm(&f, p) * lp_norm(&g, p) * (1.0 + 1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn fejer_means_of_step() {
        let xs: Vec<f64> = (0..8192).map(|j| (j as f64 + 0.5) / 8192.0).collect();
        let exact: Vec<f64> = xs.iter().map(|&x| if x < 0.5 { 1.0 } else { 0.0 }).collect();
        let f = step(1 << 14);
        let mut last = f64::INFINITY;
        for n in [16, 32, 64, 128] {
            let s = fejer_sum(&fourier_coeffs(&f, n).unwrap(), &xs);
            let err: f64 = s.iter().zip(&exact).map(|(a, b)| (a.re - b).abs()).sum::<f64>() / xs.len() as f64;
            let l1: f64 = s.iter().map(|a| a.norm()).sum::<f64>() / xs.len() as f64;
            assert!(err < last, "N={n}: {err} vs {last}");
            assert!(l1 <= 0.5 + 1e-6, "{l1}");
            assert!(s.iter().all(|v| v.im.abs() < 1e-12));
            last = err;
        }
        let ones = fourier_coeffs(&sample(|_| 1.0, 64), 8).unwrap();
        assert!(fejer_sum(&ones, &xs[..16]).iter().all(|v| (v - 1.0).norm() < 1e-13));
    }

    #[test]
    fn wiener_inverse_cases() {
        let zero = sample(|_| 0.0, 16);
        let w = wiener_invert(&zero, None).unwrap();
        assert!(w.g.iter().all(|v| v.norm() == 0.0));

        let one = sample(|_| 1.0, 16);
        let w = wiener_invert(&one, None).unwrap();
        assert!(w.g.iter().all(|v| (v + 0.5).norm() < 1e-14));

        let f = sample(|x| 0.3 * (2.0 * PI * x).cos(), 256);
        let w = wiener_invert(&f, Some(64)).unwrap();
        assert!(w.residual <= 1e-8, "{}", w.residual);
        // Direct coefficient division: e_{±1}(g) = 1/1.15 − 1, all others 0.
        let c = fourier_coeffs(&w.g, 64).unwrap();
        assert!((c.get(1) - (1.0 / 1.15 - 1.0)).norm() < 1e-12);
        assert!((c.get(-1) - (1.0 / 1.15 - 1.0)).norm() < 1e-12);
        assert!(c.get(2).norm() < 1e-12 && c.get(0).norm() < 1e-12);

        let back = wiener_invert(&w.g, None).unwrap();
        assert!(back.g.iter().zip(&f).all(|(a, b)| (a - b).norm() < 1e-7));
    }

    #[test]
    fn wiener_detects_vanishing_symbol() {
        let f = sample(|_| -1.0, 8);
        assert_eq!(wiener_invert(&f, None).unwrap_err(), Error::NearZeroSymbol(0));
    }
}
