//! Characteristic functions rebuilt from their zeros, norming constants from
//! two spectra, and admissibility checks for spectral data.
//!
//! The products are evaluated in tail-renormalized form:
//!
//! ```text
//! φ(λ) = cos λ · Π_{|n|≤N} (λ_n − λ) / (π(n+½) − λ)
//! ψ(λ) = sin λ · (λ − μ₀)/λ · Π'_{1≤|n|≤N} (μ_n − λ) / (πn − λ)
//! ```
//!
//! The free factor nearest to `λ` is always merged with the trigonometric
//! prefactor through `cos λ / (π(k+½) − λ) = (−1)^k sin d / d` and
//! `sin λ / (πk − λ) = −(−1)^k sin d / d`, so there are no removable
//! singularities left to guard.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::direct_spectra::{asymptotic_residuals, NormingData, ResidualKind, ResidualReport, SpectrumPair};
use crate::error::{Error, Result};

/// Default half-range of indices used for norming-constant products.
pub const DEFAULT_N_TAIL: i64 = 2048;

/// Default outer-quartile residual threshold for [`validate_sd`].
pub const DEFAULT_DECAY_THRESHOLD: f64 = 0.5;

fn sinc(d: f64) -> f64 {
    if d.abs() < 1e-4 {
        let d2 = d * d;
        1.0 - d2 / 6.0 * (1.0 - d2 / 20.0)
    } else {
        d.sin() / d
    }
}

fn parity(k: i64) -> f64 {
    if k.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Which characteristic function a zero sequence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductKind {
    /// Zeros `λ_n ≈ π(n + ½)`; rebuilds `φ`.
    Phi,
    /// Zeros `μ_n ≈ πn`; rebuilds `ψ`.
    Psi,
}

impl ProductKind {
    fn free_zero(self, n: i64) -> f64 {
        match self {
            ProductKind::Phi => PI * (n as f64 + 0.5),
            ProductKind::Psi => PI * n as f64,
        }
    }

    fn nearest_index(self, lambda: f64) -> i64 {
        match self {
            ProductKind::Phi => (lambda / PI - 0.5).round() as i64,
            ProductKind::Psi => (lambda / PI).round() as i64,
        }
    }
}

/// Zeros indexed `n_min..=n_max` together with the function they define.
#[derive(Debug, Clone)]
pub struct ProductEvaluator<'a> {
    kind: ProductKind,
    n_min: i64,
    zeros: &'a [f64],
}

impl<'a> ProductEvaluator<'a> {
    pub fn new(kind: ProductKind, n_min: i64, zeros: &'a [f64]) -> Result<Self> {
        if zeros.is_empty() {
            return Err(Error::InvalidArgument("no zeros supplied".into()));
        }
        if zeros.windows(2).any(|w| w[1] <= w[0]) || zeros.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidArgument("zeros must be finite and strictly increasing".into()));
        }
        let n_max = n_min + zeros.len() as i64 - 1;
        if kind == ProductKind::Psi && (n_min > 0 || n_max < 0) {
            return Err(Error::InvalidArgument("the μ-sequence must contain μ₀".into()));
        }
        Ok(Self { kind, n_min, zeros })
    }

    pub fn n_max(&self) -> i64 {
        self.n_min + self.zeros.len() as i64 - 1
    }

    fn zero(&self, n: i64) -> Option<f64> {
        (n >= self.n_min && n <= self.n_max()).then(|| self.zeros[(n - self.n_min) as usize])
    }

    /// `(zero_n − λ)/(free_n − λ)` written as `1 + r_n/(free_n − λ)`.
    fn ratio(&self, n: i64, lambda: f64) -> f64 {
        let c = self.kind.free_zero(n);
        1.0 + (self.zeros[(n - self.n_min) as usize] - c) / (c - lambda)
    }

    /// Product of the free-normalized ratios over stored indices, skipping `skip`
    /// and (for ψ) the index 0.
    fn ratios_except(&self, lambda: f64, skip: Option<i64>) -> f64 {
        let mut prod = 1.0;
        for n in self.n_min..=self.n_max() {
            if Some(n) == skip || (self.kind == ProductKind::Psi && n == 0) {
                continue;
            }
            prod *= self.ratio(n, lambda);
        }
        prod
    }

    /// The rebuilt characteristic function at real `λ`.
    pub fn eval(&self, lambda: f64) -> f64 {
        let k = self.kind.nearest_index(lambda);
        let d = lambda - self.kind.free_zero(k);
        match self.kind {
            ProductKind::Phi => match self.zero(k) {
                Some(z) => (z - lambda) * parity(k) * sinc(d) * self.ratios_except(lambda, Some(k)),
                None => lambda.cos() * self.ratios_except(lambda, None),
            },
            ProductKind::Psi => {
                let mu0 = self.zero(0).unwrap();
                if k == 0 {
                    return (lambda - mu0) * sinc(lambda) * self.ratios_except(lambda, None);
                }
                let lead = (lambda - mu0) / lambda;
                match self.zero(k) {
                    Some(z) => lead * (z - lambda) * -parity(k) * sinc(d) * self.ratios_except(lambda, Some(k)),
                    None => lead * lambda.sin() * self.ratios_except(lambda, None),
                }
            }
        }
    }

    /// Derivative of the rebuilt `φ` at its own zero `λ_k`.
    pub fn phi_dot_at_zero(&self, k: i64) -> Result<f64> {
        if self.kind != ProductKind::Phi {
            return Err(Error::InvalidArgument("phi_dot_at_zero needs the λ-sequence".into()));
        }
        let lambda = self.zero(k).ok_or_else(|| Error::InvalidArgument(format!("index {k} outside the stored range")))?;
        let d = lambda - self.kind.free_zero(k);
        Ok(-parity(k) * sinc(d) * self.ratios_except(lambda, Some(k)))
    }
}

/// `φ(λ)` from the zeros `λ_n`, `n = n_min..`.
pub fn eval_phi(zeros: &[f64], n_min: i64, lambda: f64) -> Result<f64> {
    Ok(ProductEvaluator::new(ProductKind::Phi, n_min, zeros)?.eval(lambda))
}

/// `ψ(λ)` from the zeros `μ_n`, `n = n_min..`.
pub fn eval_psi(zeros: &[f64], n_min: i64, lambda: f64) -> Result<f64> {
    Ok(ProductEvaluator::new(ProductKind::Psi, n_min, zeros)?.eval(lambda))
}

/// `φ̇(λ_k)` from the zeros `λ_n`.
pub fn phi_dot_at_zero(zeros: &[f64], n_min: i64, k: i64) -> Result<f64> {
    ProductEvaluator::new(ProductKind::Phi, n_min, zeros)?.phi_dot_at_zero(k)
}

/// `α_n = −1 / (φ̇(λ_n) ψ(λ_n))` for every stored index.
pub fn norming_from_two_spectra(sp: &SpectrumPair) -> Result<NormingData> {
    let phi = ProductEvaluator::new(ProductKind::Phi, sp.n_min, &sp.lambda)?;
    let psi = ProductEvaluator::new(ProductKind::Psi, sp.n_min, &sp.mu)?;
    let alpha: Vec<f64> = sp
        .indices()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|n| {
            let dphi = phi.phi_dot_at_zero(n)?;
            let a = -1.0 / (dphi * psi.eval(sp.lambda_at(n)));
            if a > 0.0 && a.is_finite() {
                Ok(a)
            } else {
                Err(Error::NonPositiveAlpha(n, a))
            }
        })
        .collect::<Result<_>>()?;
    NormingData::new(sp.n_min, sp.n_max, sp.lambda.clone(), alpha)
}

/// Outcome of [`validate_sd`].
#[derive(Debug, Clone, Serialize)]
pub struct SdReport {
    pub pass: bool,
    pub interlacing: bool,
    pub first_violation: Option<i64>,
    pub violations: Vec<i64>,
    pub decay_threshold: f64,
    pub decay_ok: bool,
    pub trend_ok: bool,
    pub lambda_residuals: ResidualReport,
    pub mu_residuals: ResidualReport,
}

impl SdReport {
    /// Human-readable reason for a failure.
    pub fn failure_reason(&self) -> Option<String> {
        if !self.interlacing {
            return Some(format!(
                "interlacing λ_(n−1) < μ_n < λ_n violated at n = {}",
                self.first_violation.unwrap()
            ));
        }
        if !self.decay_ok {
            return Some(format!("outer-quartile residual exceeds {}", self.decay_threshold));
        }
        if !self.trend_ok {
            return Some("residuals do not decay towards large |n|".into());
        }
        None
    }
}

fn trend_ok(r: &ResidualReport) -> bool {
    let inner = r.quartile_max[..3].iter().copied().fold(0.0, f64::max);
    r.outer_quartile_max <= inner
}

/// Checks interlacing and remainder decay of a spectrum pair.
pub fn validate_sd(sp: &SpectrumPair, decay_threshold: f64) -> SdReport {
    let mut violations = Vec::new();
    for n in sp.indices() {
        let upper = sp.mu_at(n) < sp.lambda_at(n);
        let lower = n == sp.n_min || sp.lambda_at(n - 1) < sp.mu_at(n);
        if !(upper && lower) || !sp.mu_at(n).is_finite() || !sp.lambda_at(n).is_finite() {
            violations.push(n);
        }
    }
    let lambda_residuals = asymptotic_residuals(&sp.lambda, sp.n_min, ResidualKind::Lambda);
    let mu_residuals = asymptotic_residuals(&sp.mu, sp.n_min, ResidualKind::Mu);
    let decay_ok = lambda_residuals.outer_quartile_max <= decay_threshold && mu_residuals.outer_quartile_max <= decay_threshold;
    let trend = trend_ok(&lambda_residuals) && trend_ok(&mu_residuals);
    let interlacing = violations.is_empty();
    SdReport {
        pass: interlacing && decay_ok && trend,
        interlacing,
        first_violation: violations.first().copied(),
        violations,
        decay_threshold,
        decay_ok,
        trend_ok: trend,
        lambda_residuals,
        mu_residuals,
    }
}
