//! Reconstruction of the potential from norming data.
//!
//! The spectral function
//!
//! ```text
//! H(s) = Σ_n w_n [α_n e^{−2λ_n sB} − e^{−π(2n+1)sB}]
//! ```
//!
//! (Fejér weights `w_n = 1 − |n|/(N+1)`, or `w_n = 1` for raw sums) is a
//! rotation-algebra element `a(s)I + b(s)B`. The Krein equation
//!
//! ```text
//! R̃(x, t) + H(x − t) + ∫₀ˣ R̃(x, s) H(s − t) ds = 0
//! ```
//!
//! stays inside that algebra, which is isomorphic to ℂ through `B ↦ i`, so
//! each slice is a Hermitian Toeplitz system in complex arithmetic. The
//! potential is `Q(x) = R̃(x, 0) J B`.
//!
//! The GLM equation `K + F + ∫₀ˣ K(x, s) F(s, t) ds = 0` with
//! `F(x, t) = ½[H((x−t)/2) + H((x+t)/2) J]` is solved as a cross-check, and
//! the block LDLᵀ factorization of its Nyström matrix gives the same kernel.
//!
//! Discretization: `M` cells of width `h` on `[0, 1]`, unknowns at cell
//! midpoints `t_j = (j + ½)h`, and `H` sampled at multiples of `h/4`, which
//! covers every argument the Krein and GLM systems need.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::direct_spectra::{NormingData, SpectrumPair};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mat2::{Mat2, B, I, J, ZERO};
use crate::potential::{Interpolation, Potential};
use crate::spectral_products::{norming_from_two_spectra, validate_sd, DEFAULT_DECAY_THRESHOLD};
use crate::transform_kernel::TriKernel;

/// Smallest accepted number of reconstruction cells.
pub const MIN_CELLS: usize = 16;

/// Systems whose estimated condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Asymmetry above which the recovered potential is rejected.
pub const STRUCTURE_TOL: f64 = 1e-3;

const SUBSTEPS: usize = 4;

fn to_mat(c: Complex64) -> Mat2 {
    Mat2::rotation_algebra(c.re, c.im)
}

/// Samples of `H` on `[−1, 1]` at spacing `h/4`, `h = 1/M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzSlice {
    cells: usize,
    samples: Vec<Complex64>,
    /// Means of `H` over windows of width `h` centred at multiples of `h/2`.
    averages: Vec<Complex64>,
    cesaro: bool,
    cesaro_order: i64,
}

impl ToeplitzSlice {
    /// Number of reconstruction cells `M`.
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Cell width `h = 1/M`.
    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    /// Sample spacing `h/4`.
    pub fn step(&self) -> f64 {
        self.h() / SUBSTEPS as f64
    }

    pub fn cesaro(&self) -> bool {
        self.cesaro
    }

    /// Index half-range `N` of the data behind the slice.
    pub fn cesaro_order(&self) -> i64 {
        self.cesaro_order
    }

    fn offset(&self) -> usize {
        SUBSTEPS * self.cells
    }

    /// Sample positions `s_k`.
    pub fn abscissae(&self) -> Vec<f64> {
        let off = self.offset() as f64;
        (0..self.samples.len()).map(|k| (k as f64 - off) * self.step()).collect()
    }

    /// `H(s)` as `a + ib`; exact at sample positions, linear in between.
    pub fn eval_complex(&self, s: f64) -> Complex64 {
        let u = (s / self.step() + self.offset() as f64).clamp(0.0, (self.samples.len() - 1) as f64);
        let k = u.round();
        if (u - k).abs() < 1e-6 {
            return self.samples[k as usize];
        }
        let lo = u.floor() as usize;
        let w = u - lo as f64;
        self.samples[lo] * (1.0 - w) + self.samples[lo + 1] * w
    }

    /// `H(s) = a(s)I + b(s)B`.
    pub fn eval(&self, s: f64) -> Mat2 {
        to_mat(self.eval_complex(s))
    }

    /// `H` at the multiple `q·h/4` of the sample spacing.
    fn at_quarter(&self, q: i64) -> Complex64 {
        self.samples[(q + self.offset() as i64) as usize]
    }

    /// Mean of `H` over `[(q−1)h/2, (q+1)h/2]`.
    fn mean_at_half(&self, q: i64) -> Complex64 {
        self.averages[(q + 2 * self.cells as i64) as usize]
    }

    /// Value used for the integral operator at `s = q·h/2`: the point sample or
    /// the cell mean.
    fn kernel_at_half(&self, q: i64, quad: Quadrature) -> Complex64 {
        match quad {
            Quadrature::Midpoint => self.at_quarter(2 * q),
            Quadrature::CellAverage => self.mean_at_half(q),
        }
    }

    fn kernel_eval(&self, s: f64, quad: Quadrature) -> Complex64 {
        let u = 2.0 * s / self.h();
        let q = u.round();
        if quad == Quadrature::CellAverage && (u - q).abs() < 1e-6 && q.abs() <= 2.0 * self.cells as f64 {
            return self.mean_at_half(q as i64);
        }
        self.eval_complex(s)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    /// `‖H‖_{L¹(−1, 1)}` with the operator norm, by the trapezoid rule.
    pub fn l1_norm(&self) -> f64 {
        let n = self.samples.len();
        let s: f64 = self.samples.iter().enumerate().map(|(k, c)| if k == 0 || k == n - 1 { 0.5 * c.norm() } else { c.norm() }).sum();
        s * self.step()
    }

    /// CSV rows `s,a,b` with `H(s) = aI + bB`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,a,b\n");
        for (s, c) in self.abscissae().iter().zip(&self.samples) {
            out.push_str(&format!("{},{},{}\n", s, c.re, c.im));
        }
        out
    }
}

/// Mean of `e^{−iωs}` over a window of the given width, relative to its
/// value at the centre.
fn mean_factor(omega: f64, width: f64) -> f64 {
    let d = 0.5 * omega * width;
    if d.abs() < 1e-4 {
        1.0 - d * d / 6.0
    } else {
        d.sin() / d
    }
}

/// Assembles `H` from norming data on a symmetric index range.
pub fn build_h(data: &NormingData, cells: usize, cesaro: bool) -> Result<ToeplitzSlice> {
    if !data.is_symmetric() {
        return Err(Error::InvalidArgument(format!(
            "reconstruction needs a symmetric index range, got [{}, {}]",
            data.n_min, data.n_max
        )));
    }
    if cells < MIN_CELLS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_CELLS} cells, got {cells}")));
    }
    let order = data.n_max;
    let terms: Vec<(f64, f64, f64, f64)> = data
        .indices()
        .zip(data.lambda.iter().zip(&data.alpha))
        .map(|(n, (&l, &a))| {
            let w = if cesaro { 1.0 - n.abs() as f64 / (order + 1) as f64 } else { 1.0 };
            (w, a, 2.0 * l, PI * (2 * n + 1) as f64)
        })
        .collect();
    let offset = (SUBSTEPS * cells) as i64;
    let step = 1.0 / (SUBSTEPS * cells) as f64;
    let sum = |s: f64, width: f64| {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(w, a, two_l, free) in &terms {
            let (ma, mf) = (mean_factor(two_l, width), mean_factor(free, width));
            acc += (Complex64::from_polar(a * ma, -two_l * s) - Complex64::from_polar(mf, -free * s)) * w;
        }
        acc
    };
    let samples = (-offset..=offset).into_par_iter().map(|k| sum(k as f64 * step, 0.0)).collect();
    let h = 1.0 / cells as f64;
    let half = 2 * cells as i64;
    let averages = (-half..=half).into_par_iter().map(|q| sum(q as f64 * 0.5 * h, h)).collect();
    Ok(ToeplitzSlice { cells, samples, averages, cesaro, cesaro_order: order })
}

/// The GLM kernel `F(x, t) = ½[H((x−t)/2) + H((x+t)/2) J]`.
#[derive(Debug, Clone)]
pub struct SpectralKernel {
    slice: ToeplitzSlice,
    grid: Grid,
}

/// Builds `F` on a uniform grid whose cells match those of `H`.
pub fn build_f(h: &ToeplitzSlice, grid: &Grid) -> Result<SpectralKernel> {
    let step = grid.uniform_step().ok_or_else(|| Error::InvalidGrid("F needs a uniform grid".into()))?;
    if step < 2.0 * h.step() * (1.0 - 1e-12) {
        return Err(Error::InvalidGrid("the H samples are too coarse for this grid".into()));
    }
    if grid.cells() != h.cells() {
        return Err(Error::InvalidGrid(format!("grid has {} cells but H was built for {}", grid.cells(), h.cells())));
    }
    Ok(SpectralKernel { slice: h.clone(), grid: grid.clone() })
}

impl SpectralKernel {
    pub fn slice(&self) -> &ToeplitzSlice {
        &self.slice
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cells(&self) -> usize {
        self.slice.cells
    }

    pub fn h(&self) -> f64 {
        self.slice.h()
    }

    /// `F(x, t)`.
    pub fn at(&self, x: f64, t: f64) -> Mat2 {
        (self.slice.eval(0.5 * (x - t)) + self.slice.eval(0.5 * (x + t)) * J) * 0.5
    }

    /// `F(x, t)` with both arguments given in units of `h/2`, so that the
    /// half-sums land exactly on samples.
    fn at_half_units(&self, x2: i64, t2: i64) -> Mat2 {
        (to_mat(self.slice.at_quarter(x2 - t2)) + to_mat(self.slice.at_quarter(x2 + t2)) * J) * 0.5
    }

    /// `F` at every pair of grid nodes.
    pub fn node_values(&self) -> Vec<Vec<Mat2>> {
        let n = self.grid.len() as i64;
        (0..n).map(|i| (0..n).map(|j| self.at_half_units(2 * i, 2 * j)).collect()).collect()
    }

    /// `max ‖F(x, t)ᵀ − F(t, x)‖` over grid nodes.
    pub fn max_asymmetry(&self) -> f64 {
        let v = self.node_values();
        let mut worst: f64 = 0.0;
        for (i, row) in v.iter().enumerate() {
            for (j, f) in row.iter().enumerate() {
                worst = worst.max((f.transpose() - v[j][i]).max_abs());
            }
        }
        worst
    }

    /// The Nyström matrix `I + hF(t_j, t_k)` on cell midpoints, size `2M`.
    pub fn nystrom_matrix(&self) -> DMatrix<f64> {
        let m = self.cells();
        let h = self.h();
        let mut a = DMatrix::<f64>::identity(2 * m, 2 * m);
        for j in 0..m {
            for k in 0..m {
                let f = self.at_half_units(2 * j as i64 + 1, 2 * k as i64 + 1) * h;
                a[(2 * j, 2 * k)] += f.a11;
                a[(2 * j, 2 * k + 1)] += f.a12;
                a[(2 * j + 1, 2 * k)] += f.a21;
                a[(2 * j + 1, 2 * k + 1)] += f.a22;
            }
        }
        a
    }
}

/// Plain Cholesky `A = CCᵀ`; on failure returns the first non-positive pivot.
fn cholesky_lower(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, usize> {
    let n = a.nrows();
    let mut c = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= c[(j, k)] * c[(j, k)];
        }
        if !(d > 0.0) {
            return Err(j);
        }
        let d = d.sqrt();
        c[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= c[(i, k)] * c[(j, k)];
            }
            c[(i, j)] = s / d;
        }
    }
    Ok(c)
}

/// Outcome of [`check_positivity`].
#[derive(Debug, Clone, Serialize)]
pub struct PositivityReport {
    /// Smallest eigenvalue of `I + W^{1/2} F W^{1/2}`.
    pub min_eigenvalue: f64,
    /// Every leading principal block was positive definite.
    pub leading_blocks_positive: bool,
    /// First leading block (cell index) that is not positive definite.
    pub first_failing_block: Option<usize>,
    pub pass: bool,
}

impl PositivityReport {
    /// Turns a failed check into [`Error::NotPositive`].
    pub fn certify(&self) -> Result<()> {
        match (self.pass, self.first_failing_block) {
            (true, _) => Ok(()),
            (false, Some(b)) => Err(Error::NotPositive(b)),
            (false, None) => Err(Error::NotPositive(0)),
        }
    }
}

fn positivity_of(a: &DMatrix<f64>) -> PositivityReport {
    let eig = SymmetricEigen::new(a.clone());
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let first_failing_block = cholesky_lower(a).err().map(|p| p / 2);
    let leading_blocks_positive = first_failing_block.is_none();
    PositivityReport { min_eigenvalue, leading_blocks_positive, first_failing_block, pass: leading_blocks_positive && min_eigenvalue > 0.0 }
}

/// Minimal eigenvalue of the Nyström matrix and a principal-block pass.
pub fn check_positivity(f: &SpectralKernel) -> PositivityReport {
    positivity_of(&f.nystrom_matrix())
}

/// Same check on `I + s·(A − I)` for a caller-chosen scaling of `F`.
pub fn check_positivity_scaled(f: &SpectralKernel, scale: f64) -> PositivityReport {
    let mut a = f.nystrom_matrix();
    let n = a.nrows();
    a -= DMatrix::<f64>::identity(n, n);
    a *= scale;
    a += DMatrix::<f64>::identity(n, n);
    positivity_of(&a)
}

/// Largest-magnitude eigenvalue of `hF` on the cell grid.
pub fn spectral_radius_of_f(f: &SpectralKernel) -> f64 {
    let mut a = f.nystrom_matrix();
    let n = a.nrows();
    a -= DMatrix::<f64>::identity(n, n);
    let eig = SymmetricEigen::new(a);
    eig.eigenvalues.iter().copied().fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m })
}

/// Linear solver for the Krein slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KreinMethod {
    /// Dense Cholesky per slice.
    #[default]
    Dense,
    /// Levinson recursion on the shared Toeplitz matrix.
    Levinson,
}

/// How `R̃(x, 0)` is read off the solved slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiagonalRule {
    /// Linear extrapolation from the two cells nearest `t = 0`.
    Extrapolate,
    /// The Nyström interpolant of the integral equation at `t = 0`.
    #[default]
    Nystrom,
}

/// How the integral term is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// `R̃` constant on cells, `H` integrated exactly over each cell.
    #[default]
    CellAverage,
    /// Plain midpoint rule.
    Midpoint,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KreinOptions {
    pub method: KreinMethod,
    pub diagonal: DiagonalRule,
    pub quadrature: Quadrature,
}

/// Solved Krein equation on all slices `x_i = ih`.
#[derive(Debug, Clone)]
pub struct KreinSolution {
    slice: ToeplitzSlice,
    quadrature: Quadrature,
    grid: Grid,
    /// `R̃(x_i, t_j)` for cells `j < i`, in the `a + ib` representation.
    rows: Vec<Vec<Complex64>>,
    /// `R̃(x_i, 0)` per node.
    pub diag: Vec<Mat2>,
    /// Largest residual of the discrete equations.
    pub residual_norm: f64,
}

impl KreinSolution {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `R̃(x_i, t_j)` at the midpoint of cell `j < i`.
    pub fn cell_value(&self, i: usize, j: usize) -> Mat2 {
        to_mat(self.rows[i][j])
    }

    fn eval_c(&self, i: usize, t: f64) -> Complex64 {
        let h = self.slice.h();
        let x = i as f64 * h;
        let mut acc = -self.slice.eval_complex(x - t);
        for (k, r) in self.rows[i].iter().enumerate() {
            acc -= r * self.slice.kernel_eval((k as f64 + 0.5) * h - t, self.quadrature) * h;
        }
        acc
    }

    /// `R̃(x_i, t)` for any `t ∈ [0, x_i]` by Nyström interpolation.
    pub fn eval(&self, i: usize, t: f64) -> Mat2 {
        to_mat(self.eval_c(i, t))
    }

    /// `R̃` at grid nodes `(x_i, x_j)`, `j ≤ i`.
    pub fn r_tilde(&self) -> TriKernel {
        let mut out = TriKernel::zeros(&self.grid);
        let nodes = self.grid.nodes().to_vec();
        for i in 0..nodes.len() {
            for (j, t) in nodes.iter().enumerate().take(i + 1) {
                out.set(i, j, self.eval(i, *t));
            }
        }
        out
    }

    /// `K(x, t) = ½[R̃(x, (x+t)/2) + R̃(x, (x−t)/2) J]` at `(x_i, t)`.
    pub fn k_at(&self, i: usize, t: f64) -> Mat2 {
        let x = i as f64 * self.slice.h();
        (self.eval(i, 0.5 * (x + t)) + self.eval(i, 0.5 * (x - t)) * J) * 0.5
    }

    /// The transformation kernel `K` at grid nodes.
    pub fn k_kernel(&self) -> TriKernel {
        let mut out = TriKernel::zeros(&self.grid);
        let nodes = self.grid.nodes().to_vec();
        for i in 0..nodes.len() {
            for (j, t) in nodes.iter().enumerate().take(i + 1) {
                out.set(i, j, self.k_at(i, *t));
            }
        }
        out
    }
}

/// Toeplitz symbol `c_m = δ_{m0} + h·H(mh)` for `|m| < M`.
struct Symbol {
    /// `c[m + M − 1] = c_m`.
    c: Vec<Complex64>,
    m: usize,
}

impl Symbol {
    fn new(slice: &ToeplitzSlice, quad: Quadrature) -> Self {
        let m = slice.cells;
        let h = slice.h();
        let c = (-(m as i64) + 1..m as i64)
            .map(|k| {
                let mut v = slice.kernel_at_half(2 * k, quad) * h;
                if k == 0 {
                    v += 1.0;
                }
                v
            })
            .collect();
        Self { c, m }
    }

    /// Entry `S_{jk} = c_{k−j}`.
    fn entry(&self, j: usize, k: usize) -> Complex64 {
        self.c[k + self.m - 1 - j]
    }
}

fn krein_rhs(slice: &ToeplitzSlice, i: usize) -> Vec<Complex64> {
    // −H(x_i − t_j) = −H((i − j − ½)h); in quarter steps 4(i − j) − 2.
    (0..i).map(|j| -slice.at_quarter(SUBSTEPS as i64 * (i - j) as i64 - 2)).collect()
}

fn dense_slice(sym: &Symbol, rhs: &[Complex64], i: usize) -> Result<Vec<Complex64>> {
    let n = rhs.len();
    let s = DMatrix::<Complex64>::from_fn(n, n, |j, k| sym.entry(j, k));
    let chol = nalgebra::Cholesky::new(s).ok_or(Error::SingularSystem(i))?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for k in 0..n {
        let d = l[(k, k)].re;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if (hi / lo).powi(2) > MAX_CONDITION {
        return Err(Error::SingularSystem(i));
    }
    let b = DMatrix::<Complex64>::from_column_slice(n, 1, rhs);
    Ok(chol.solve(&b).column(0).iter().copied().collect())
}

/// Backward vectors `b^{(n)}` (`T_n b = e_{n−1}`) for `n = 1..=M`.
fn levinson_backward(sym: &Symbol) -> Result<Vec<Vec<Complex64>>> {
    let c0 = sym.entry(0, 0);
    if c0.norm() == 0.0 {
        return Err(Error::SingularSystem(1));
    }
    let mut f = vec![c0.inv()];
    let mut b = vec![c0.inv()];
    let mut out = vec![b.clone()];
    for n in 1..sym.m {
        let ef: Complex64 = (0..n).map(|k| sym.entry(n, k) * f[k]).sum();
        let eb: Complex64 = (0..n).map(|k| sym.entry(0, k + 1) * b[k]).sum();
        let denom = Complex64::new(1.0, 0.0) - ef * eb;
        if denom.norm() < 1.0 / MAX_CONDITION {
            return Err(Error::SingularSystem(n + 1));
        }
        let mut nf = Vec::with_capacity(n + 1);
        let mut nb = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let fk = if k < n { f[k] } else { Complex64::new(0.0, 0.0) };
            let bk = if k > 0 { b[k - 1] } else { Complex64::new(0.0, 0.0) };
            nf.push((fk - ef * bk) / denom);
            nb.push((bk - eb * fk) / denom);
        }
        f = nf;
        b = nb;
        out.push(b.clone());
    }
    Ok(out)
}

fn levinson_slice(sym: &Symbol, backward: &[Vec<Complex64>], rhs: &[Complex64]) -> Vec<Complex64> {
    let mut x = vec![rhs[0] * backward[0][0]];
    for n in 1..rhs.len() {
        let ex: Complex64 = (0..n).map(|k| sym.entry(n, k) * x[k]).sum();
        let coef = rhs[n] - ex;
        x.push(Complex64::new(0.0, 0.0));
        for (xk, bk) in x.iter_mut().zip(&backward[n]) {
            *xk += coef * bk;
        }
    }
    x
}

/// Solves the Krein equation on every slice of the uniform `M`-cell grid.
pub fn solve_krein(slice: &ToeplitzSlice, opts: KreinOptions) -> Result<KreinSolution> {
    let m = slice.cells;
    let h = slice.h();
    let grid = Grid::uniform(m)?;
    let sym = Symbol::new(slice, opts.quadrature);
    let backward = match opts.method {
        KreinMethod::Levinson => Some(levinson_backward(&sym)?),
        KreinMethod::Dense => None,
    };
    let solved: Vec<(Vec<Complex64>, f64)> = (1..=m)
        .into_par_iter()
        .map(|i| {
            let rhs = krein_rhs(slice, i);
            let x = match &backward {
                Some(bw) => levinson_slice(&sym, bw, &rhs),
                None => dense_slice(&sym, &rhs, i)?,
            };
            let mut res: f64 = 0.0;
            for j in 0..i {
                let lhs: Complex64 = (0..i).map(|k| sym.entry(j, k) * x[k]).sum();
                res = res.max((lhs - rhs[j]).norm());
            }
            if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::SingularSystem(i));
            }
            Ok((x, res))
        })
        .collect::<Result<_>>()?;

    let mut rows = vec![Vec::new()];
    let mut residual_norm: f64 = 0.0;
    for (x, r) in solved {
        rows.push(x);
        residual_norm = residual_norm.max(r);
    }
    let diag: Vec<Mat2> = (0..=m)
        .map(|i| {
            let row = &rows[i];
            let value = if i == 0 {
                -slice.at_quarter(0)
            } else {
                match opts.diagonal {
                    DiagonalRule::Extrapolate if i >= 2 => row[0] * 1.5 - row[1] * 0.5,
                    DiagonalRule::Extrapolate => row[0],
                    DiagonalRule::Nystrom => {
                        let mut acc = -slice.at_quarter(SUBSTEPS as i64 * i as i64);
                        for (k, r) in row.iter().enumerate() {
                            acc -= r * slice.kernel_at_half(2 * k as i64 + 1, opts.quadrature) * h;
                        }
                        acc
                    }
                }
            };
            to_mat(value)
        })
        .collect();
    Ok(KreinSolution { slice: slice.clone(), quadrature: opts.quadrature, grid, rows, diag, residual_norm })
}

/// `Q(x_i) = R̃(x_i, 0) J B` as a sampled potential on the grid nodes,
/// interpolated by a natural cubic spline.
pub fn recover_potential(sol: &KreinSolution) -> Result<Potential> {
    let jb = J * B;
    let values: Vec<Mat2> = sol.diag.iter().map(|r| *r * jb).collect();
    Ok(Potential::from_matrix_samples(sol.grid.nodes().to_vec(), &values, STRUCTURE_TOL)?.with_interpolation(Interpolation::Spline))
}

/// Largest deviation of `R̃(x_i, 0) J B` from the form `[[q1, q2], [q2, −q1]]`.
pub fn structure_violation(sol: &KreinSolution) -> f64 {
    let jb = J * B;
    sol.diag
        .iter()
        .map(|r| {
            let q = *r * jb;
            (q.a12 - q.a21).abs().max((q.a11 + q.a22).abs())
        })
        .fold(0.0, f64::max)
}

/// Solves `K(x, t_j) + F(x, t_j) + h Σ_{k<cells} K(x, t_k) F(t_k, t_j) = 0`
/// for `j < cells`, with `x` given in units of `h/2`.
fn glm_cells(f: &SpectralKernel, nys: &DMatrix<f64>, x2: i64, cells: usize) -> Result<Vec<Mat2>> {
    if cells == 0 {
        return Ok(Vec::new());
    }
    let n = 2 * cells;
    let a = nys.view((0, 0), (n, n)).into_owned();
    let chol = nalgebra::Cholesky::new(a).ok_or(Error::SingularSystem(cells))?;
    // Columns of the right-hand side are the columns of −F(x, t_j)ᵀ stacked over j.
    let mut rhs = DMatrix::<f64>::zeros(n, 2);
    for j in 0..cells {
        let ft = f.at_half_units(x2, 2 * j as i64 + 1).transpose();
        rhs[(2 * j, 0)] = -ft.a11;
        rhs[(2 * j, 1)] = -ft.a12;
        rhs[(2 * j + 1, 0)] = -ft.a21;
        rhs[(2 * j + 1, 1)] = -ft.a22;
    }
    let y = chol.solve(&rhs);
    // Block j of y is K(x, t_j)ᵀ.
    Ok((0..cells).map(|j| Mat2::new(y[(2 * j, 0)], y[(2 * j + 1, 0)], y[(2 * j, 1)], y[(2 * j + 1, 1)])).collect())
}

/// GLM row at `x` over the first `cells` cells (`x` rounded to a multiple of `h/2`).
pub fn solve_glm_at(f: &SpectralKernel, x: f64, cells: usize) -> Result<Vec<Mat2>> {
    if cells > f.cells() {
        return Err(Error::InvalidArgument(format!("at most {} cells available", f.cells())));
    }
    let x2 = (2.0 * x / f.h()).round() as i64;
    glm_cells(f, &f.nystrom_matrix(), x2, cells)
}

/// Solution of the GLM equation.
#[derive(Debug, Clone)]
pub struct GlmSolution {
    /// `K(x_i, t_j)` at cell midpoints `t_j`, `j < i`.
    pub cells: Vec<Vec<Mat2>>,
    /// `K` at grid nodes by Nyström interpolation.
    pub kernel: TriKernel,
}

/// Solves the GLM equation on every slice `x_i = ih`.
pub fn solve_glm(f: &SpectralKernel) -> Result<GlmSolution> {
    let m = f.cells();
    let h = f.h();
    let nys = f.nystrom_matrix();
    let cells: Vec<Vec<Mat2>> = (0..=m).into_par_iter().map(|i| glm_cells(f, &nys, 2 * i as i64, i)).collect::<Result<_>>()?;
    let mut kernel = TriKernel::zeros(f.grid());
    for (i, row) in cells.iter().enumerate() {
        for j in 0..=i {
            let mut v = ZERO - f.at_half_units(2 * i as i64, 2 * j as i64);
            for (k, kk) in row.iter().enumerate() {
                v -= *kk * f.at_half_units(2 * k as i64 + 1, 2 * j as i64) * h;
            }
            kernel.set(i, j, v);
        }
    }
    Ok(GlmSolution { cells, kernel })
}

/// `max ‖K(x_i, t_j) + F(x_i, t_j) + h Σ_k K(x_i, t_k) F(t_k, t_j)‖` over
/// nodes `x_i` and cell midpoints `t_j < x_i`, for a kernel given pointwise.
pub fn glm_residual(f: &SpectralKernel, k: impl Fn(usize, f64) -> Mat2 + Sync) -> f64 {
    let m = f.cells();
    let h = f.h();
    (1..=m)
        .into_par_iter()
        .map(|i| {
            let row: Vec<Mat2> = (0..i).map(|j| k(i, (j as f64 + 0.5) * h)).collect();
            let mut worst: f64 = 0.0;
            for j in 0..i {
                let mut r = row[j] + f.at_half_units(2 * i as i64, 2 * j as i64 + 1);
                for (kk, kv) in row.iter().enumerate() {
                    r += *kv * f.at_half_units(2 * kk as i64 + 1, 2 * j as i64 + 1) * h;
                }
                worst = worst.max(r.norm());
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Block LDLᵀ factorization of the Nyström matrix `I + A`.
///
/// Row `i` of `L⁻¹` is `[hK⁺(t_i, t_0), …, hK⁺(t_i, t_{i−1}), I, 0, …]`.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub h: f64,
    /// `K⁺(t_i, t_j)` for `j < i`.
    pub k_plus: Vec<Vec<Mat2>>,
    /// Block pivots `D_i`.
    pub pivots: Vec<Mat2>,
    /// `max |L⁻¹(I + A)L⁻ᵀ − D|`.
    pub factor_residual: f64,
    /// `max ‖D_i − I‖`.
    pub pivot_deviation: f64,
}

impl Factorization {
    /// `K⁻(t_j, t_i) = K⁺(t_i, t_j)ᵀ`.
    pub fn k_minus(&self, j: usize, i: usize) -> Mat2 {
        self.k_plus[i][j].transpose()
    }
}

fn block(m: &DMatrix<f64>, i: usize, j: usize) -> Mat2 {
    Mat2::new(m[(2 * i, 2 * j)], m[(2 * i, 2 * j + 1)], m[(2 * i + 1, 2 * j)], m[(2 * i + 1, 2 * j + 1)])
}

pub fn discrete_factorization(f: &SpectralKernel) -> Result<Factorization> {
    let a = f.nystrom_matrix();
    let n = a.nrows();
    let m = n / 2;
    let c = cholesky_lower(&a).map_err(|p| Error::NotPositive(p / 2))?;
    let c_inv = c
        .clone()
        .solve_lower_triangular(&DMatrix::<f64>::identity(n, n))
        .ok_or(Error::SingularSystem(0))?;
    let mut cd = DMatrix::<f64>::zeros(n, n);
    for b in 0..m {
        for r in 0..2 {
            for s in 0..2 {
                cd[(2 * b + r, 2 * b + s)] = c[(2 * b + r, 2 * b + s)];
            }
        }
    }
    let l_inv = &cd * &c_inv;
    let h = f.h();
    let k_plus: Vec<Vec<Mat2>> = (0..m).map(|i| (0..i).map(|j| block(&l_inv, i, j) * (1.0 / h)).collect()).collect();
    let d = &cd * cd.transpose();
    let pivots: Vec<Mat2> = (0..m).map(|i| block(&d, i, i)).collect();
    let check = &l_inv * &a * l_inv.transpose() - &d;
    let factor_residual = check.iter().fold(0.0_f64, |w, v| w.max(v.abs()));
    let pivot_deviation = pivots.iter().fold(0.0_f64, |w, p| w.max((*p - I).max_abs()));
    Ok(Factorization { h, k_plus, pivots, factor_residual, pivot_deviation })
}

/// Options for [`reconstruct`].
#[derive(Debug, Clone, Copy)]
pub struct InverseOptions {
    pub cells: usize,
    pub cesaro: bool,
    pub krein: KreinOptions,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self { cells: 256, cesaro: true, krein: KreinOptions::default() }
    }
}

/// Diagnostics of a reconstruction, as written to the JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionReport {
    pub cells: usize,
    pub n_max: i64,
    pub cesaro: bool,
    pub positivity: PositivityReport,
    pub krein_residual: f64,
    pub structure_violation: f64,
    pub h_l1_norm: f64,
    pub x: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
}

/// Everything produced by [`reconstruct`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub potential: Potential,
    pub h: ToeplitzSlice,
    pub f: SpectralKernel,
    pub krein: KreinSolution,
    pub report: ReconstructionReport,
}

/// Norming data → `H` → positivity → Krein → `Q`.
pub fn reconstruct(data: &NormingData, opts: InverseOptions) -> Result<Reconstruction> {
    let h = build_h(data, opts.cells, opts.cesaro)?;
    let grid = Grid::uniform(opts.cells)?;
    let f = build_f(&h, &grid)?;
    let positivity = check_positivity(&f);
    positivity.certify()?;
    let krein = solve_krein(&h, opts.krein)?;
    let structure = structure_violation(&krein);
    let potential = recover_potential(&krein)?.with_p(2.0);
    let report = ReconstructionReport {
        cells: opts.cells,
        n_max: data.n_max,
        cesaro: opts.cesaro,
        positivity,
        krein_residual: krein.residual_norm,
        structure_violation: structure,
        h_l1_norm: h.l1_norm(),
        x: grid.nodes().to_vec(),
        q1: potential.q1().to_vec(),
        q2: potential.q2().to_vec(),
    };
    Ok(Reconstruction { potential, h, f, krein, report })
}

/// Two spectra → norming constants → [`reconstruct`].
pub fn reconstruct_from_spectra(sp: &SpectrumPair, opts: InverseOptions) -> Result<Reconstruction> {
    let report = validate_sd(sp, DEFAULT_DECAY_THRESHOLD);
    if let Some(reason) = report.failure_reason() {
        return Err(Error::Validation(reason));
    }
    let data = norming_from_two_spectra(sp)?;
    let mut rec = reconstruct(&data, opts)?;
    rec.potential = rec.potential.with_p(sp.p_exponent);
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_term(cells: usize, cesaro: bool) -> (NormingData, ToeplitzSlice) {
        let mut data = NormingData::free(-8, 8);
        data.alpha[8] = 1.2;
        let h = build_h(&data, cells, cesaro).unwrap();
        (data, h)
    }

    #[test]
    fn free_data_cancel_exactly() {
        let data = NormingData::free(-16, 16);
        let rec = reconstruct(&data, InverseOptions { cells: 32, ..Default::default() }).unwrap();
        assert_eq!(rec.h.max_abs(), 0.0);
        assert_eq!(rec.krein.residual_norm, 0.0);
        assert!(rec.potential.q1().iter().chain(rec.potential.q2()).all(|v| *v == 0.0));
        assert!((rec.report.positivity.min_eigenvalue - 1.0).abs() < 1e-12);
        let glm = solve_glm(&rec.f).unwrap();
        assert_eq!(glm.kernel.max_abs(), 0.0);
        let fac = discrete_factorization(&rec.f).unwrap();
        assert!(fac.k_plus.iter().flatten().all(|k| k.max_abs() == 0.0));
    }

    #[test]
    fn single_term_profile() {
        for cesaro in [true, false] {
            let (_, h) = single_term(16, cesaro);
            // The central index carries Fejér weight 1.
            for s in h.abscissae() {
                let want = crate::mat2::rotation(PI, s) * 0.2;
                assert!((h.eval(s) - want).max_abs() < 1e-14);
            }
        }
        // Fejér weight of a non-central index.
        let mut data = NormingData::free(-8, 8);
        data.alpha[10] = 1.2;
        let h = build_h(&data, 16, true).unwrap();
        let want = crate::mat2::rotation(5.0 * PI, 0.3125) * (0.2 * (1.0 - 2.0 / 9.0));
        assert!((h.eval(0.3125) - want).max_abs() < 1e-14);
    }

    #[test]
    fn h_symmetries() {
        let data = NormingData::new(-3, 3, vec![-8.0, -4.9, -1.4, 1.9, 4.6, 7.9, 11.0], vec![0.9, 1.1, 1.3, 0.8, 1.05, 0.97, 1.02]).unwrap();
        let h = build_h(&data, 16, true).unwrap();
        for s in h.abscissae() {
            let v = h.eval(s);
            assert!(v.commutator(&B).max_abs() < 1e-10);
            assert!((J * v * J - h.eval(-s)).max_abs() < 1e-10);
            assert!((v.transpose() - h.eval(-s)).max_abs() < 1e-10);
        }
        let f = build_f(&h, &Grid::uniform(16).unwrap()).unwrap();
        assert!(f.max_asymmetry() < 1e-10);
    }

    #[test]
    fn f_single_term_closed_form() {
        let (_, h) = single_term(16, false);
        let f = build_f(&h, &Grid::uniform(16).unwrap()).unwrap();
        for (x, t) in [(0.5, 0.25), (1.0, 0.0), (0.3125, 0.875)] {
            let want = (crate::mat2::rotation(PI, 0.5 * (x - t)) + crate::mat2::rotation(PI, 0.5 * (x + t)) * J) * 0.1;
            assert!((f.at(x, t) - want).max_abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_asymmetric_ranges_and_small_grids() {
        let data = NormingData::free(-3, 4);
        assert!(matches!(build_h(&data, 32, true), Err(Error::InvalidArgument(_))));
        assert!(build_h(&NormingData::free(-3, 3), 8, true).is_err());
    }

    /// Independent assembly of one Krein slice with 2×2 blocks in real arithmetic.
    fn brute_force_slice(h: &ToeplitzSlice, i: usize) -> Vec<Mat2> {
        let step = h.h();
        let n = 2 * i;
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut rhs = DMatrix::<f64>::zeros(n, 2);
        for j in 0..i {
            let tj = (j as f64 + 0.5) * step;
            for k in 0..i {
                let tk = (k as f64 + 0.5) * step;
                // Row j of Xᵀ-system: Σ_k (h H(t_k − t_j))ᵀ X_kᵀ.
                let m = h.eval(tk - tj).transpose() * step;
                for r in 0..2 {
                    for c in 0..2 {
                        a[(2 * j + r, 2 * k + c)] += m.entries()[2 * r + c];
                    }
                }
            }
            let g = h.eval(i as f64 * step - tj).transpose();
            rhs[(2 * j, 0)] = -g.a11;
            rhs[(2 * j, 1)] = -g.a12;
            rhs[(2 * j + 1, 0)] = -g.a21;
            rhs[(2 * j + 1, 1)] = -g.a22;
        }
        let y = a.lu().solve(&rhs).unwrap();
        (0..i).map(|j| Mat2::new(y[(2 * j, 0)], y[(2 * j + 1, 0)], y[(2 * j, 1)], y[(2 * j + 1, 1)])).collect()
    }

    #[test]
    fn krein_matches_brute_force_and_levinson() {
        let (_, h) = single_term(24, true);
        let mid = KreinOptions { quadrature: Quadrature::Midpoint, ..Default::default() };
        let dense = solve_krein(&h, mid).unwrap();
        let lev = solve_krein(&h, KreinOptions { method: KreinMethod::Levinson, ..mid }).unwrap();
        assert!(dense.residual_norm < 1e-12 && lev.residual_norm < 1e-12);
        for i in [1, 5, 17, 24] {
            let brute = brute_force_slice(&h, i);
            for j in 0..i {
                assert!((dense.cell_value(i, j) - brute[j]).max_abs() < 1e-12, "i={i} j={j}");
                assert!((lev.cell_value(i, j) - brute[j]).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nystrom_diagonal_rule_beats_extrapolation() {
        let (data, h) = single_term(64, true);
        let fine = build_h(&data, 512, true).unwrap();
        let reference = solve_krein(&fine, KreinOptions { method: KreinMethod::Levinson, ..Default::default() }).unwrap();
        let worst = |s: &KreinSolution| {
            s.diag.iter().enumerate().map(|(i, v)| (*v - reference.diag[8 * i]).max_abs()).fold(0.0, f64::max)
        };
        let extrap = solve_krein(&h, KreinOptions { diagonal: DiagonalRule::Extrapolate, ..Default::default() }).unwrap();
        let nys = solve_krein(&h, KreinOptions::default()).unwrap();
        assert!(worst(&nys) < 1e-5);
        assert!(worst(&nys) < worst(&extrap));
        // The interpolant reproduces the solved cell values.
        let hh = h.h();
        for j in 0..10 {
            assert!((nys.eval(10, (j as f64 + 0.5) * hh) - nys.cell_value(10, j)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn positivity_detects_indefinite_scaling() {
        let (_, h) = single_term(16, true);
        let f = build_f(&h, &Grid::uniform(16).unwrap()).unwrap();
        let ok = check_positivity(&f);
        assert!(ok.pass && ok.min_eigenvalue > 0.0);
        let nu = spectral_radius_of_f(&f);
        let bad = check_positivity_scaled(&f, -2.0 / nu);
        assert!(!bad.pass && bad.min_eigenvalue < 0.0);
        assert!(bad.first_failing_block.is_some());
        assert!(matches!(bad.certify(), Err(Error::NotPositive(_))));
    }

    #[test]
    fn factorization_matches_glm_rows() {
        let (_, h) = single_term(16, true);
        let f = build_f(&h, &Grid::uniform(16).unwrap()).unwrap();
        let fac = discrete_factorization(&f).unwrap();
        assert!(fac.factor_residual < 1e-12);
        for i in [1, 7, 15] {
            let row = solve_glm_at(&f, (i as f64 + 0.5) * f.h(), i).unwrap();
            for j in 0..i {
                assert!((fac.k_plus[i][j] - row[j]).max_abs() < 1e-10);
                assert_eq!(fac.k_minus(j, i), fac.k_plus[i][j].transpose());
            }
        }
        let again = discrete_factorization(&f).unwrap();
        assert_eq!(again.k_plus, fac.k_plus);
    }

    #[test]
    fn glm_and_krein_agree() {
        let (_, h) = single_term(64, true);
        let f = build_f(&h, &Grid::uniform(64).unwrap()).unwrap();
        let glm = solve_glm(&f).unwrap();
        let krein = solve_krein(&h, KreinOptions::default()).unwrap();
        let k = krein.k_kernel();
        let mut worst: f64 = 0.0;
        for i in 0..=64 {
            for j in 0..=i {
                worst = worst.max((glm.kernel.get(i, j) - k.get(i, j)).max_abs());
            }
        }
        assert!(worst < 1e-3, "{worst}");
        assert!(glm_residual(&f, |i, t| krein.k_at(i, t)) < 1e-3);
    }
}
