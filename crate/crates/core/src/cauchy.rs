//! The Cauchy matrix `U(x, λ)` of `B U' + Q U = λ U`, `U(0) = I`.
//!
//! We propagate `U' = −B(λI − Q)U`. Piecewise-constant potentials use the
//! exact exponential on every constant piece; sampled (piecewise-linear)
//! potentials use the fourth-order Magnus integrator with Gauss–Legendre
//! nodes. In both cases every exponent is kept at operator norm ≤ 1 (resp.
//! [`SAMPLED_STEP_NORM`]).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mat2::{mat2_exp_traceless_with_derivative, Mat2, Vec2, B, I, ZERO};
use crate::potential::{Potential, Representation};

/// Norm cap for a single exact exponential step.
pub const EXACT_STEP_NORM: f64 = 1.0;

/// Norm cap for a single Magnus step on a sampled potential.
pub const SAMPLED_STEP_NORM: f64 = 0.25;

const MAX_SUBSTEPS: f64 = 1e9;

/// `U(·, λ)` sampled on a grid.
#[derive(Debug, Clone)]
pub struct CauchySolution {
    pub lambda: f64,
    pub grid: Grid,
    /// `U` at every grid node; `u[0] = I`.
    pub u: Vec<Mat2>,
    /// Richardson estimate of the error in `U(1, λ)` (sampled potentials only).
    pub error_estimate: Option<f64>,
}

impl CauchySolution {
    /// First column `c(x_k, λ)`.
    pub fn c(&self, k: usize) -> Vec2 {
        self.u[k].col(0)
    }

    /// Second column `s(x_k, λ)`.
    pub fn s(&self, k: usize) -> Vec2 {
        self.u[k].col(1)
    }

    /// Trajectory as CSV rows `x,u11,u12,u21,u22`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,u11,u12,u21,u22\n");
        for (x, u) in self.grid.nodes().iter().zip(&self.u) {
            out.push_str(&format!("{x},{},{},{},{}\n", u.a11, u.a12, u.a21, u.a22));
        }
        out
    }
}

/// `A(x) = −λB + B Q(x)`, the generator of the flow.
fn generator(lambda: f64, q: Mat2) -> Mat2 {
    B * (-lambda) + B * q
}

/// One-step state: the propagator and, optionally, its λ-derivative.
#[derive(Clone, Copy)]
struct Flow {
    u: Mat2,
    du: Mat2,
}

impl Flow {
    fn identity() -> Self {
        Flow { u: I, du: ZERO }
    }

    fn apply(&mut self, e: Mat2, de: Mat2) {
        self.du = de * self.u + e * self.du;
        self.u = e * self.u;
    }
}

fn substeps(norm_len: f64, cap: f64, a: f64, b: f64) -> Result<usize> {
    let n = (norm_len / cap).ceil().max(1.0);
    if n > MAX_SUBSTEPS || !n.is_finite() {
        return Err(Error::StepUnderflow(a, b));
    }
    Ok(n as usize)
}

/// Advances `flow` across `[a, b]`, where `[a, b]` contains no interior point
/// of the potential's breakpoints or nodes.
fn advance_piece(q: &Potential, lambda: f64, a: f64, b: f64, refine: usize, flow: &mut Flow) -> Result<()> {
    let len = b - a;
    if len <= 0.0 {
        return Ok(());
    }
    match q.representation() {
        Representation::Piecewise => {
            let a_mat = generator(lambda, q.matrix(0.5 * (a + b)));
            let n = substeps(a_mat.norm() * len, EXACT_STEP_NORM, a, b)? * refine;
            let h = len / n as f64;
            let (e, de) = mat2_exp_traceless_with_derivative(a_mat * h, B * (-h));
            for _ in 0..n {
                flow.apply(e, de);
            }
        }
        Representation::Sampled => {
            let na = generator(lambda, q.matrix(a)).norm().max(generator(lambda, q.matrix(b)).norm());
            let n = substeps(na * len, SAMPLED_STEP_NORM, a, b)? * refine;
            let h = len / n as f64;
            let off = 3.0_f64.sqrt() / 6.0;
            let k = 3.0_f64.sqrt() / 12.0 * h * h;
            for s in 0..n {
                let x0 = a + s as f64 * h;
                let a1 = generator(lambda, q.matrix(x0 + (0.5 - off) * h));
                let a2 = generator(lambda, q.matrix(x0 + (0.5 + off) * h));
                let omega = (a1 + a2) * (0.5 * h) + a2.commutator(&a1) * k;
                let d_omega = B * (-h) + (B * -1.0).commutator(&a1) * k + a2.commutator(&(B * -1.0)) * k;
                let (e, de) = mat2_exp_traceless_with_derivative(omega, d_omega);
                flow.apply(e, de);
            }
        }
    }
    Ok(())
}

/// Advances across `[a, b]`, splitting at the potential's points.
fn advance(q: &Potential, lambda: f64, a: f64, b: f64, refine: usize, flow: &mut Flow) -> Result<()> {
    let mut left = a;
    for &p in q.points().iter().filter(|&&p| p > a && p < b) {
        advance_piece(q, lambda, left, p, refine, flow)?;
        left = p;
    }
    advance_piece(q, lambda, left, b, refine, flow)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLambda(lambda))
    }
}

/// `U(1, λ)` and `∂U(1, λ)/∂λ`.
pub fn terminal_with_derivative(q: &Potential, lambda: f64) -> Result<(Mat2, Mat2)> {
    check_lambda(lambda)?;
    let mut flow = Flow::identity();
    advance(q, lambda, 0.0, 1.0, 1, &mut flow)?;
    Ok((flow.u, flow.du))
}

/// Solves for `U(x, λ)` at every node of `grid`.
pub fn propagate(q: &Potential, lambda: f64, grid: &Grid) -> Result<CauchySolution> {
    check_lambda(lambda)?;
    let mut flow = Flow::identity();
    let mut u = Vec::with_capacity(grid.len());
    u.push(I);
    for w in grid.nodes().windows(2) {
        advance(q, lambda, w[0], w[1], 1, &mut flow)?;
        u.push(flow.u);
    }
    let error_estimate = if q.representation() == Representation::Sampled {
        let mut fine = Flow::identity();
        advance(q, lambda, 0.0, 1.0, 2, &mut fine)?;
        let (mut coarse, _) = terminal_with_derivative(q, lambda)?;
        coarse = fine.u - coarse;
        Some(coarse.max_abs() / 15.0)
    } else {
        None
    };
    Ok(CauchySolution { lambda, grid: grid.clone(), u, error_estimate })
}

/// `(φ(λ), ψ(λ)) = (c₁(1, λ), c₂(1, λ))`.
pub fn char_values(q: &Potential, lambda: f64) -> Result<(f64, f64)> {
    let (u, _) = terminal_with_derivative(q, lambda)?;
    Ok((u.a11, u.a21))
}

/// `dφ/dλ`, from the variational system propagated alongside `U`.
pub fn phi_dot(q: &Potential, lambda: f64) -> Result<f64> {
    let (_, du) = terminal_with_derivative(q, lambda)?;
    Ok(du.a11)
}

/// `dψ/dλ`.
pub fn psi_dot(q: &Potential, lambda: f64) -> Result<f64> {
    let (_, du) = terminal_with_derivative(q, lambda)?;
    Ok(du.a21)
}

/// `(φ, ψ)` over a batch of λ values, evaluated in parallel.
pub fn char_values_batch(q: &Potential, lambdas: &[f64]) -> Result<Vec<(f64, f64)>> {
    lambdas.par_iter().map(|&l| char_values(q, l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat2::rotation;
    use std::f64::consts::PI;

    /// Closed-form `c(x, λ)` for `q1 ≡ c`, `q2 ≡ 0`.
    fn constant_c(c: f64, lambda: f64, x: f64) -> Vec2 {
        let w2 = lambda * lambda - c * c;
        if w2.abs() < 1e-8 {
            // ω → 0: c₁ = cos ωx → 1, c₂ = ω sin ωx / (λ + c) → ω² x / (λ + c) = (λ − c) x.
            return [1.0 - 0.5 * w2 * x * x, (lambda - c) * x];
        }
        if w2 > 0.0 {
            let w = w2.sqrt();
            [(w * x).cos(), w * (w * x).sin() / (lambda + c)]
        } else {
            let w = (-w2).sqrt();
            [(w * x).cosh(), -w * (w * x).sinh() / (lambda + c)]
        }
    }

    fn random_piecewise(seed: u64, pieces: usize, scale: f64) -> Potential {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut bp: Vec<f64> = (0..pieces - 1).map(|_| rng.gen_range(0.0..1.0)).collect();
        bp.push(0.0);
        bp.push(1.0);
        bp.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q1 = (0..pieces).map(|_| rng.gen_range(-scale..scale)).collect();
        let q2 = (0..pieces).map(|_| rng.gen_range(-scale..scale)).collect();
        Potential::piecewise(bp, q1, q2).unwrap()
    }

    #[test]
    fn free_case_is_rotation() {
        let g = Grid::uniform(64).unwrap();
        for lambda in [-7.3, 0.0, 2.1, 40.0] {
            let sol = propagate(&Potential::zero(), lambda, &g).unwrap();
            for (x, u) in g.nodes().iter().zip(&sol.u) {
                assert!((*u - rotation(lambda, *x)).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_potential_closed_form() {
        let g = Grid::uniform(32).unwrap();
        for (c, lambda) in [(1.0, 3.0), (1.0, 0.4), (2.0, -5.5), (0.7, -0.2)] {
            let sol = propagate(&Potential::constant(c, 0.0), lambda, &g).unwrap();
            for (k, &x) in g.nodes().iter().enumerate() {
                let want = constant_c(c, lambda, x);
                let got = sol.c(k);
                assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12, "c={c} λ={lambda} x={x}");
            }
        }
    }

    #[test]
    fn char_values_special_points() {
        let (phi, psi) = char_values(&Potential::zero(), 1.3).unwrap();
        assert!((phi - 1.3_f64.cos()).abs() < 1e-14 && (psi - 1.3_f64.sin()).abs() < 1e-14);
        let q = Potential::constant(1.0, 0.0);
        let l = (1.0 + PI * PI / 4.0).sqrt();
        assert!(char_values(&q, l).unwrap().0.abs() < 1e-10);
        let (phi, psi) = char_values(&q, 1.0).unwrap();
        assert!((phi - 1.0).abs() < 1e-15 && psi.abs() < 1e-15);
    }

    #[test]
    fn unimodular_along_trajectory() {
        let g = Grid::uniform(100).unwrap();
        for seed in 0..5 {
            let q = random_piecewise(seed, 6, 3.0);
            for lambda in [-7.3, 0.0, 2.1, 50.0, -50.0] {
                let sol = propagate(&q, lambda, &g).unwrap();
                for u in &sol.u {
                    assert!((u.det() - 1.0).abs() < 1e-8);
                    assert!(u.is_finite());
                }
            }
        }
    }

    #[test]
    fn phi_dot_free_and_finite_difference() {
        assert!((phi_dot(&Potential::zero(), 0.8).unwrap() + 0.8_f64.sin()).abs() < 1e-14);
        assert!((phi_dot(&Potential::zero(), PI / 2.0).unwrap() + 1.0).abs() < 1e-14);
        for seed in 0..4 {
            let q = random_piecewise(seed, 5, 2.0);
            let h = 1e-5;
            let fd = (char_values(&q, 2.0 + h).unwrap().0 - char_values(&q, 2.0 - h).unwrap().0) / (2.0 * h);
            assert!((phi_dot(&q, 2.0).unwrap() - fd).abs() < 1e-6);
        }
        let s = Potential::sampled(vec![0.0, 0.3, 0.8, 1.0], vec![1.0, -1.0, 0.5, 2.0], vec![0.0, 0.4, 0.4, -1.0]).unwrap();
        let h = 1e-5;
        let fd = (char_values(&s, 2.0 + h).unwrap().0 - char_values(&s, 2.0 - h).unwrap().0) / (2.0 * h);
        assert!((phi_dot(&s, 2.0).unwrap() - fd).abs() < 1e-6);
    }

    #[test]
    fn refinement_of_piecewise_is_exact() {
        let q = random_piecewise(3, 4, 2.0);
        let mut coarse = Flow::identity();
        let mut fine = Flow::identity();
        advance(&q, 9.0, 0.0, 1.0, 1, &mut coarse).unwrap();
        advance(&q, 9.0, 0.0, 1.0, 2, &mut fine).unwrap();
        assert!((coarse.u.a11 - fine.u.a11).abs() < 1e-10);
    }

    #[test]
    fn sampled_integrator_is_fourth_order() {
        // Linear q1 on a single piece; compare step refinements.
        let q = Potential::sampled(vec![0.0, 1.0], vec![-1.0, 2.0], vec![0.5, -0.5]).unwrap();
        let run = |refine: usize| {
            let mut f = Flow::identity();
            advance(&q, 6.0, 0.0, 1.0, refine, &mut f).unwrap();
            f.u.a11
        };
        let (a, b, c) = (run(1), run(2), run(4));
        let ratio = (a - b).abs() / (b - c).abs();
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
        // A piecewise-linear potential that is constant must agree with the exact scheme.
        let flat = Potential::sampled(vec![0.0, 0.5, 1.0], vec![1.0; 3], vec![0.0; 3]).unwrap();
        let (p1, _) = char_values(&flat, 4.0).unwrap();
        let (p2, _) = char_values(&Potential::constant(1.0, 0.0), 4.0).unwrap();
        assert!((p1 - p2).abs() < 1e-13);
        let sol = propagate(&q, 6.0, &Grid::uniform(4).unwrap()).unwrap();
        assert!(sol.error_estimate.unwrap() < 1e-6);
    }

    #[test]
    fn rejects_non_finite_lambda() {
        assert!(matches!(char_values(&Potential::zero(), f64::NAN), Err(Error::NonFiniteLambda(_))));
    }

    #[test]
    fn csv_export_has_header() {
        let sol = propagate(&Potential::zero(), 1.0, &Grid::uniform(2).unwrap()).unwrap();
        let csv = sol.to_csv();
        assert!(csv.starts_with("x,u11,u12,u21,u22\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
