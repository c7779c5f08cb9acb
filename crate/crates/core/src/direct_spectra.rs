//! Eigenvalues of the two boundary-value problems and norming constants.
//!
//! `λ_n` are the zeros of `φ(λ) = c₁(1, λ)` (condition `u₁(1) = 0`) and `μ_n`
//! the zeros of `ψ(λ) = c₂(1, λ)` (condition `u₂(1) = 0`). Both spectra are
//! enumerated so that `λ_{n−1} < μ_n < λ_n`, with `λ_n ≈ π(n + ½)` and
//! `μ_n ≈ πn` for large `|n|`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cauchy::{propagate, terminal_with_derivative};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mat2::B;
use crate::potential::{Potential, Representation};

/// Which boundary condition at `x = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// `u₂(0) = u₁(1) = 0`; eigenvalues are the zeros of `φ`.
    A1,
    /// `u₂(0) = u₂(1) = 0`; eigenvalues are the zeros of `ψ`.
    A2,
}

impl Boundary {
    /// Free eigenvalue `π(n + ½)` or `πn`.
    pub fn free_eigenvalue(self, n: i64) -> f64 {
        match self {
            Boundary::A1 => PI * (n as f64 + 0.5),
            Boundary::A2 => PI * n as f64,
        }
    }

    fn eval(self, q: &Potential, lambda: f64) -> Result<(f64, f64)> {
        let (u, du) = terminal_with_derivative(q, lambda)?;
        Ok(match self {
            Boundary::A1 => (u.a11, du.a11),
            Boundary::A2 => (u.a21, du.a21),
        })
    }
}

/// The two spectra on a common index range.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPair {
    pub n_min: i64,
    pub n_max: i64,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub p_exponent: f64,
}

impl SpectrumPair {
    pub fn new(n_min: i64, n_max: i64, lambda: Vec<f64>, mu: Vec<f64>, p_exponent: f64) -> Result<Self> {
        let len = index_len(n_min, n_max)?;
        if lambda.len() != len || mu.len() != len {
            return Err(Error::InvalidArgument(format!(
                "expected {len} eigenvalues per spectrum, got {} and {}",
                lambda.len(),
                mu.len()
            )));
        }
        Ok(Self { n_min, n_max, lambda, mu, p_exponent })
    }

    /// The free spectra `π(n + ½)`, `πn`.
    pub fn free(n_min: i64, n_max: i64) -> Self {
        let lambda = (n_min..=n_max).map(|n| Boundary::A1.free_eigenvalue(n)).collect();
        let mu = (n_min..=n_max).map(|n| Boundary::A2.free_eigenvalue(n)).collect();
        Self { n_min, n_max, lambda, mu, p_exponent: 2.0 }
    }

    pub fn lambda_at(&self, n: i64) -> f64 {
        self.lambda[(n - self.n_min) as usize]
    }

    pub fn mu_at(&self, n: i64) -> f64 {
        self.mu[(n - self.n_min) as usize]
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        self.n_min..=self.n_max
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_min == -self.n_max
    }
}

/// Eigenvalues with their norming constants `α_n = ‖c(·, λ_n)‖⁻²`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormingData {
    pub n_min: i64,
    pub n_max: i64,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl NormingData {
    pub fn new(n_min: i64, n_max: i64, lambda: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        let len = index_len(n_min, n_max)?;
        if lambda.len() != len || alpha.len() != len {
            return Err(Error::InvalidArgument(format!(
                "expected {len} eigenvalues and norming constants, got {} and {}",
                lambda.len(),
                alpha.len()
            )));
        }
        for (k, a) in alpha.iter().enumerate() {
            if !(*a > 0.0) {
                return Err(Error::NonPositiveAlpha(n_min + k as i64, *a));
            }
        }
        Ok(Self { n_min, n_max, lambda, alpha })
    }

    pub fn free(n_min: i64, n_max: i64) -> Self {
        let lambda = (n_min..=n_max).map(|n| Boundary::A1.free_eigenvalue(n)).collect();
        Self { n_min, n_max, lambda, alpha: vec![1.0; index_len(n_min, n_max).unwrap()] }
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        self.n_min..=self.n_max
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_min == -self.n_max
    }
}

fn index_len(n_min: i64, n_max: i64) -> Result<usize> {
    if n_max < n_min {
        return Err(Error::InvalidArgument(format!("empty index range [{n_min}, {n_max}]")));
    }
    Ok((n_max - n_min + 1) as usize)
}

/// Options for the root search.
#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    /// Sample points per window on the first pass.
    pub scan_points: usize,
    /// Bisection stops when the bracket is narrower than this.
    pub tol: f64,
    /// Two roots closer than this are treated as one.
    pub dedup_tol: f64,
    /// Number of times the scan may be densified and widened.
    pub max_widenings: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { scan_points: 32, tol: 1e-12, dedup_tol: 1e-9, max_widenings: 2 }
    }
}

/// Default window half-width `π/2 + min(π/2, ‖Q‖_{L¹})`.
pub fn window_half_width(q: &Potential) -> Result<f64> {
    Ok(PI / 2.0 + (PI / 2.0).min(q.lp_norm(1.0)?))
}

fn bisect_and_polish(q: &Potential, boundary: Boundary, mut a: f64, mut b: f64, mut fa: f64, tol: f64) -> Result<f64> {
    while b - a > tol {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let (fm, _) = boundary.eval(q, m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let x = 0.5 * (a + b);
    let (f, df) = boundary.eval(q, x)?;
    if df != 0.0 {
        let y = x - f / df;
        if y >= a - tol && y <= b + tol {
            let (fy, _) = boundary.eval(q, y)?;
            if fy.abs() <= f.abs() {
                return Ok(y);
            }
        }
    }
    Ok(x)
}

fn roots_in_window(q: &Potential, boundary: Boundary, lo: f64, hi: f64, points: usize, tol: f64) -> Result<Vec<f64>> {
    let xs: Vec<f64> = (0..=points).map(|k| lo + (hi - lo) * k as f64 / points as f64).collect();
    let mut fs = Vec::with_capacity(xs.len());
    for &x in &xs {
        fs.push(boundary.eval(q, x)?.0);
    }
    let mut roots = Vec::new();
    for k in 0..points {
        if fs[k] == 0.0 {
            roots.push(xs[k]);
        } else if (fs[k] > 0.0) != (fs[k + 1] > 0.0) && fs[k + 1] != 0.0 {
            roots.push(bisect_and_polish(q, boundary, xs[k], xs[k + 1], fs[k], tol)?);
        }
    }
    if fs[points] == 0.0 {
        roots.push(xs[points]);
    }
    Ok(roots)
}

/// Assigns sorted distinct roots to indices `n_min..=n_max` by choosing the
/// contiguous block closest (in least squares) to the free eigenvalues, then
/// checks that each assigned root lies in its own window.
fn enumerate_roots(roots: &[f64], boundary: Boundary, n_min: i64, n_max: i64, half_width: f64) -> std::result::Result<Vec<f64>, i64> {
    let len = (n_max - n_min + 1) as usize;
    if roots.len() < len {
        // Report the first index whose window holds no root.
        for n in n_min..=n_max {
            let c = boundary.free_eigenvalue(n);
            if !roots.iter().any(|r| (r - c).abs() <= half_width) {
                return Err(n);
            }
        }
        return Err(n_min);
    }
    let mut best = (f64::INFINITY, 0);
    for off in 0..=roots.len() - len {
        let cost: f64 = (0..len)
            .map(|k| {
                let d = roots[off + k] - boundary.free_eigenvalue(n_min + k as i64);
                d * d
            })
            .sum();
        if cost < best.0 {
            best = (cost, off);
        }
    }
    let chosen = roots[best.1..best.1 + len].to_vec();
    for (k, r) in chosen.iter().enumerate() {
        let n = n_min + k as i64;
        if (r - boundary.free_eigenvalue(n)).abs() > half_width {
            return Err(n);
        }
    }
    Ok(chosen)
}

/// Eigenvalues with indices `n_min..=n_max` for the given boundary condition.
pub fn find_eigenvalues(q: &Potential, boundary: Boundary, n_min: i64, n_max: i64) -> Result<Vec<f64>> {
    find_eigenvalues_with(q, boundary, n_min, n_max, SearchOptions::default())
}

pub fn find_eigenvalues_with(q: &Potential, boundary: Boundary, n_min: i64, n_max: i64, opts: SearchOptions) -> Result<Vec<f64>> {
    index_len(n_min, n_max)?;
    let mut half_width = window_half_width(q)?;
    let mut points = opts.scan_points;
    let mut last_failure = n_min;
    for _attempt in 0..=opts.max_widenings {
        let per_window: Vec<Vec<f64>> = (n_min..=n_max)
            .into_par_iter()
            .map(|n| {
                let c = boundary.free_eigenvalue(n);
                roots_in_window(q, boundary, c - half_width, c + half_width, points, opts.tol)
            })
            .collect::<Result<_>>()?;
        let mut all: Vec<f64> = per_window.into_iter().flatten().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut distinct: Vec<f64> = Vec::with_capacity(all.len());
        for r in all {
            match distinct.last() {
                Some(&last) if (r - last).abs() <= opts.dedup_tol => {}
                _ => distinct.push(r),
            }
        }
        match enumerate_roots(&distinct, boundary, n_min, n_max, half_width) {
            Ok(found) => {
                if let Some(k) = found.windows(2).position(|w| w[1] - w[0] <= opts.dedup_tol * 10.0) {
                    return Err(Error::DuplicateRoot(n_min + k as i64 + 1));
                }
                return Ok(found);
            }
            Err(n) => last_failure = n,
        }
        points *= 2;
        half_width *= 1.5;
    }
    Err(Error::RootNotBracketed(last_failure))
}

/// Both spectra of `q` on `n_min..=n_max`.
pub fn compute_spectra(q: &Potential, n_min: i64, n_max: i64) -> Result<SpectrumPair> {
    let lambda = find_eigenvalues(q, Boundary::A1, n_min, n_max)?;
    let mu = find_eigenvalues(q, Boundary::A2, n_min, n_max)?;
    SpectrumPair::new(n_min, n_max, lambda, mu, q.p_exponent())
}

/// Number of grid cells used to integrate `|c(·, λ)|²`.
fn quadrature_cells(lambda: f64) -> usize {
    let per_period = 32.0;
    let cells = (lambda.abs() / (2.0 * PI) * per_period).ceil() as usize;
    cells.max(1024)
}

/// `∫₀¹ |c(x, λ)|² dx` by the trapezoid rule with Euler–Maclaurin end
/// corrections on every smooth piece of the potential.
pub fn eigenfunction_norm_sq(q: &Potential, lambda: f64) -> Result<f64> {
    let breaks: Vec<f64> = match q.representation() {
        Representation::Piecewise => q.points().to_vec(),
        Representation::Sampled => vec![0.0, 1.0],
    };
    let grid = Grid::through_breakpoints(quadrature_cells(lambda), &breaks)?;
    let sol = propagate(q, lambda, &grid)?;
    let f: Vec<f64> = (0..grid.len()).map(|k| {
        let c = sol.c(k);
        c[0] * c[0] + c[1] * c[1]
    }).collect();
    let mut total = grid.integrate(&f);

    // d|c|²/dx = 2 c · c', with c' = −B(λ − Q)c evaluated with one-sided Q.
    let slope = |k: usize, qm: crate::mat2::Mat2| {
        let c = sol.c(k);
        let dc = (B * (crate::mat2::Mat2::scalar(lambda) - qm) * -1.0).mul_vec(c);
        2.0 * (c[0] * dc[0] + c[1] * dc[1])
    };
    let nodes = grid.nodes();
    let mut start = 0;
    for end in 1..grid.len() {
        let is_break = breaks.iter().any(|b| (b - nodes[end]).abs() < 1e-14);
        if !is_break {
            continue;
        }
        let h = (nodes[end] - nodes[start]) / (end - start) as f64;
        let (ql, qr) = match q.representation() {
            Representation::Piecewise => {
                let mid = q.matrix(0.5 * (nodes[start] + nodes[end]));
                (mid, mid)
            }
            Representation::Sampled => (q.matrix(nodes[start]), q.matrix(nodes[end])),
        };
        total -= h * h / 12.0 * (slope(end, qr) - slope(start, ql));
        start = end;
    }
    Ok(total)
}

/// `α_n = 1 / ∫₀¹ |c(x, λ_n)|² dx` for every supplied eigenvalue.
pub fn norming_quadrature(q: &Potential, n_min: i64, lambda: &[f64]) -> Result<NormingData> {
    let alpha: Vec<f64> = lambda.par_iter().map(|&l| eigenfunction_norm_sq(q, l).map(|s| 1.0 / s)).collect::<Result<_>>()?;
    NormingData::new(n_min, n_min + lambda.len() as i64 - 1, lambda.to_vec(), alpha)
}

/// Which asymptotic remainder to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    /// `λ_n − π(n + ½)`
    Lambda,
    /// `μ_n − πn`
    Mu,
    /// `α_n − 1`
    Alpha,
}

/// Remainder sequence and its decay diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub kind: ResidualKind,
    pub n_min: i64,
    pub residuals: Vec<f64>,
    /// `Σ |r_n|²`.
    pub sum_sq: f64,
    /// `max |r_n|` over four bands of `|n|`, innermost first.
    pub quartile_max: [f64; 4],
    /// `max |r_n|` over the outermost band.
    pub outer_quartile_max: f64,
}

pub fn asymptotic_residuals(seq: &[f64], n_min: i64, kind: ResidualKind) -> ResidualReport {
    let residuals: Vec<f64> = seq
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let n = n_min + k as i64;
            match kind {
                ResidualKind::Lambda => v - Boundary::A1.free_eigenvalue(n),
                ResidualKind::Mu => v - Boundary::A2.free_eigenvalue(n),
                ResidualKind::Alpha => v - 1.0,
            }
        })
        .collect();
    let n_abs_max = (n_min..n_min + seq.len() as i64).map(i64::abs).max().unwrap_or(0);
    let band = |n: i64| -> usize { ((n.abs() * 4) / (n_abs_max + 1)).min(3) as usize };
    let mut quartile_max = [0.0_f64; 4];
    for (k, r) in residuals.iter().enumerate() {
        let b = band(n_min + k as i64);
        quartile_max[b] = quartile_max[b].max(r.abs());
    }
    let sum_sq = residuals.iter().map(|r| r * r).sum();
    ResidualReport { kind, n_min, sum_sq, outer_quartile_max: quartile_max[3], quartile_max, residuals }
}

/// On-disk spectra / norming file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraFile {
    #[serde(default = "default_p")]
    pub p: f64,
    pub n_min: i64,
    pub n_max: i64,
    pub lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

fn default_p() -> f64 {
    2.0
}

impl SpectraFile {
    pub fn from_pair(sp: &SpectrumPair) -> Self {
        Self { p: sp.p_exponent, n_min: sp.n_min, n_max: sp.n_max, lambda: sp.lambda.clone(), mu: Some(sp.mu.clone()), alpha: None }
    }

    pub fn spectrum_pair(&self) -> Result<SpectrumPair> {
        let mu = self.mu.clone().ok_or_else(|| Error::Parse("field `mu` is required".into()))?;
        SpectrumPair::new(self.n_min, self.n_max, self.lambda.clone(), mu, self.p)
    }

    pub fn norming_data(&self) -> Result<NormingData> {
        let alpha = self.alpha.clone().ok_or_else(|| Error::Parse("field `alpha` is required".into()))?;
        NormingData::new(self.n_min, self.n_max, self.lambda.clone(), alpha)
    }
}
