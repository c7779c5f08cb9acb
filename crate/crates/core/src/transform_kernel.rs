//! Kernels of the transformation operator `I + K` that maps the free
//! solution `c₀(x, λ) = (cos λx, sin λx)ᵗ` to `c(x, λ)`.
//!
//! The kernels are built from the successive approximations
//! `P₁(x, s) = BQ(s)`, `P_{n+1}(x, s) = ∫_s^x BQ(η) P_n(η, η − s) dη`,
//! split by parity into `P⁺ = Σ P_{2n}` and `P⁻ = Σ P_{2n−1}`, then
//! `R = P⁺ + P⁻J` and `K(x, t) = ½[R(x, (x−t)/2) + R(x, (x+t)/2) J]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mat2::{Mat2, Vec2, B, J, ZERO};
use crate::potential::Potential;

/// Default number of successive approximations.
pub const DEFAULT_N_MAX: usize = 12;

/// A 2×2-matrix kernel on the triangle `0 ≤ t ≤ x ≤ 1`, sampled at
/// `(x_i, x_j)` for `j ≤ i` on a uniform grid. Entries with `j > i` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TriKernel {
    grid: Grid,
    values: Vec<Mat2>,
}

fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl TriKernel {
    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.len();
        Self { grid: grid.clone(), values: vec![ZERO; n * (n + 1) / 2] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn get(&self, i: usize, j: usize) -> Mat2 {
        if j > i {
            ZERO
        } else {
            self.values[tri_index(i, j)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, m: Mat2) {
        assert!(j <= i, "TriKernel entries live on j <= i");
        self.values[tri_index(i, j)] = m;
    }

    pub fn row(&self, i: usize) -> &[Mat2] {
        &self.values[tri_index(i, 0)..=tri_index(i, i)]
    }

    /// Linear interpolation of row `i` at `t ∈ [0, x_i]`.
    pub fn interp_row(&self, i: usize, t: f64) -> Mat2 {
        let nodes = self.grid.nodes();
        if i == 0 {
            return self.get(0, 0);
        }
        let t = t.clamp(0.0, nodes[i]);
        let k = match nodes[..=i].binary_search_by(|p| p.partial_cmp(&t).unwrap()) {
            Ok(k) => return self.get(i, k),
            Err(k) => k - 1,
        };
        let w = (t - nodes[k]) / (nodes[k + 1] - nodes[k]);
        self.get(i, k) * (1.0 - w) + self.get(i, k + 1) * w
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.max_abs()))
    }

    /// Entrywise combination `self + other * s` on a shared grid.
    pub fn axpy(&self, other: &TriKernel, s: f64) -> TriKernel {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| *a + *b * s).collect();
        TriKernel { grid: self.grid.clone(), values }
    }

    /// Row norm `‖K(x_i, ·)‖_{L_p(0, x_i)}` by the trapezoid rule.
    pub fn row_norm(&self, i: usize, p: f64) -> f64 {
        let s: f64 = (0..=i).map(|j| self.grid.partial_weight(j, 0, i) * self.get(i, j).norm().powf(p)).sum();
        s.powf(1.0 / p)
    }

    /// Column norm `‖K(·, t_j)‖_{L_p(t_j, 1)}` by the trapezoid rule.
    pub fn col_norm(&self, j: usize, p: f64) -> f64 {
        let last = self.grid.len() - 1;
        let s: f64 = (j..=last).map(|i| self.grid.partial_weight(i, j, last) * self.get(i, j).norm().powf(p)).sum();
        s.powf(1.0 / p)
    }

    /// `‖K‖_{G_p}`: the larger of the maximal row and column `L_p` norms.
    pub fn gp_norm(&self, p: f64) -> f64 {
        let n = self.grid.len();
        let rows = (0..n).map(|i| self.row_norm(i, p)).fold(0.0, f64::max);
        let cols = (0..n).map(|j| self.col_norm(j, p)).fold(0.0, f64::max);
        rows.max(cols)
    }

    /// CSV rows `x,t,k11,k12,k21,k22` over the triangle.
    pub fn to_csv(&self) -> String {
        let nodes = self.grid.nodes();
        let mut out = String::from("x,t,k11,k12,k21,k22\n");
        for i in 0..nodes.len() {
            for j in 0..=i {
                let m = self.get(i, j);
                out.push_str(&format!("{},{},{},{},{},{}\n", nodes[i], nodes[j], m.a11, m.a12, m.a21, m.a22));
            }
        }
        out
    }
}

/// Output of [`build_p_series`].
#[derive(Debug, Clone)]
pub struct PSeries {
    pub p_plus: TriKernel,
    pub p_minus: TriKernel,
    /// `max_x ‖P_n(x, ·)‖_{L_p}` for `n = 1..=n_max`.
    pub increment_row_norms: Vec<f64>,
    /// `‖P_{n_max}‖_{G_p}`, the convergence certificate.
    pub last_increment_gp: f64,
    /// Set when an increment exceeds ten times the factorial bound.
    pub warning: Option<String>,
}

/// Smallest `n` such that the factorial tail `Σ_{m>n} r^m/(m−1)!` is below `tol`.
pub fn auto_n_max(q_norm: f64, tol: f64) -> usize {
    let mut term = q_norm; // r^1 / 0!
    let mut n = 1;
    loop {
        // Tail after n is bounded by the next term times a geometric factor once m > 2r.
        let next = term * q_norm / n as f64;
        let ratio = q_norm / (n as f64 + 1.0);
        if ratio < 0.5 && next / (1.0 - ratio) < tol {
            return n.max(2);
        }
        term = next;
        n += 1;
        if n > 200 {
            return n;
        }
    }
}

/// Successive approximations `P_n` on a uniform grid, summed by parity.
pub fn build_p_series(q: &Potential, n_max: usize, grid: &Grid) -> Result<PSeries> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let h = grid
        .uniform_step()
        .ok_or_else(|| Error::InvalidGrid("successive approximations need a uniform grid".into()))?;
    let p = q.p_exponent();
    let n = grid.len();
    let bq: Vec<Mat2> = grid.nodes().iter().map(|&x| B * q.node_matrix(x)).collect();
    let q_norm = q.lp_norm(p)?;

    let mut current = TriKernel::zeros(grid);
    for i in 0..n {
        for j in 0..=i {
            current.set(i, j, bq[j]);
        }
    }
    let mut p_plus = TriKernel::zeros(grid);
    let mut p_minus = current.clone();
    let mut norms = vec![(0..n).map(|i| current.row_norm(i, p)).fold(0.0, f64::max)];
    let mut warning = None;

    let mut factorial = 1.0; // (n-1)!
    for order in 2..=n_max {
        // Column j of P_{n+1}: cumulative trapezoid in i of BQ(η_k) P_n(η_k, η_k − s_j).
        let columns: Vec<Vec<Mat2>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut col = Vec::with_capacity(n - j);
                let mut acc = ZERO;
                let mut prev = bq[j] * current.get(j, 0);
                col.push(ZERO);
                for k in j + 1..n {
                    let f = bq[k] * current.get(k, k - j);
                    acc += (prev + f) * (0.5 * h);
                    prev = f;
                    col.push(acc);
                }
                col
            })
            .collect();
        let mut next = TriKernel::zeros(grid);
        for (j, col) in columns.into_iter().enumerate() {
            for (off, m) in col.into_iter().enumerate() {
                next.set(j + off, j, m);
            }
        }
        let target = if order % 2 == 0 { &mut p_plus } else { &mut p_minus };
        *target = target.axpy(&next, 1.0);

        factorial *= (order - 1) as f64;
        let row_max = (0..n).map(|i| next.row_norm(i, p)).fold(0.0, f64::max);
        let bound = q_norm.powi(order as i32) / factorial;
        if row_max > 10.0 * bound && warning.is_none() {
            warning = Some(format!(
                "increment {order} has norm {row_max:.3e}, above ten times the bound {bound:.3e}; quadrature is too coarse"
            ));
        }
        norms.push(row_max);
        current = next;
    }
    let last_increment_gp = current.gp_norm(p);
    Ok(PSeries { p_plus, p_minus, increment_row_norms: norms, last_increment_gp, warning })
}

/// `R = P⁺ + P⁻J` and `K(x, t) = ½[R(x, (x−t)/2) + R(x, (x+t)/2) J]`.
pub fn assemble_k(p_plus: &TriKernel, p_minus: &TriKernel) -> Result<(TriKernel, TriKernel)> {
    if p_plus.grid != p_minus.grid {
        return Err(Error::InvalidGrid("P+ and P- must share a grid".into()));
    }
    let grid = p_plus.grid.clone();
    let mut r = TriKernel::zeros(&grid);
    for (v, (a, b)) in r.values.iter_mut().zip(p_plus.values.iter().zip(&p_minus.values)) {
        *v = *a + *b * J;
    }
    let k = k_from_r(&r);
    Ok((r, k))
}

/// `K(x, t) = ½[R(x, (x−t)/2) + R(x, (x+t)/2) J]`, half arguments by
/// linear interpolation along each row.
pub fn k_from_r(r: &TriKernel) -> TriKernel {
    let grid = r.grid.clone();
    let nodes = grid.nodes().to_vec();
    let rows: Vec<Vec<Mat2>> = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            (0..=i)
                .map(|j| {
                    let (x, t) = (nodes[i], nodes[j]);
                    (r.interp_row(i, 0.5 * (x - t)) + r.interp_row(i, 0.5 * (x + t)) * J) * 0.5
                })
                .collect()
        })
        .collect();
    let mut k = TriKernel::zeros(&grid);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, m) in row.into_iter().enumerate() {
            k.set(i, j, m);
        }
    }
    k
}

/// `R(x, s) = R̃(x, x − s)`: reflects every row.
pub fn reflect_rows(r: &TriKernel) -> TriKernel {
    let mut out = TriKernel::zeros(&r.grid);
    for i in 0..r.grid.len() {
        for j in 0..=i {
            out.set(i, j, r.get(i, i - j));
        }
    }
    out
}

/// `c(x, λ) = c₀(x, λ) + ∫₀ˣ K(x, t) c₀(t, λ) dt` at every grid node.
pub fn apply_transform(k: &TriKernel, lambda: f64) -> Vec<Vec2> {
    let grid = &k.grid;
    let nodes = grid.nodes();
    let c0: Vec<Vec2> = nodes.iter().map(|&x| [(lambda * x).cos(), (lambda * x).sin()]).collect();
    (0..nodes.len())
        .map(|i| {
            let mut c = c0[i];
            for j in 0..=i {
                let w = grid.partial_weight(j, 0, i);
                if w == 0.0 {
                    continue;
                }
                let v = k.get(i, j).mul_vec(c0[j]);
                c[0] += w * v[0];
                c[1] += w * v[1];
            }
            c
        })
        .collect()
}

/// Summary of a kernel build, as exported in JSON reports.
#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    pub n_max: usize,
    pub grid_cells: usize,
    pub p: f64,
    pub q_lp_norm: f64,
    pub k_gp_norm: f64,
    pub r_gp_norm: f64,
    pub last_increment_gp_norm: f64,
    pub increment_row_norms: Vec<f64>,
    pub warning: Option<String>,
}

/// Builds `R` and `K` for `q` and summarizes their norms.
pub fn build_kernels(q: &Potential, n_max: usize, grid: &Grid) -> Result<(TriKernel, TriKernel, KernelReport)> {
    let series = build_p_series(q, n_max, grid)?;
    let (r, k) = assemble_k(&series.p_plus, &series.p_minus)?;
    let p = q.p_exponent();
    let report = KernelReport {
        n_max,
        grid_cells: grid.cells(),
        p,
        q_lp_norm: q.lp_norm(p)?,
        k_gp_norm: k.gp_norm(p),
        r_gp_norm: r.gp_norm(p),
        last_increment_gp_norm: series.last_increment_gp,
        increment_row_norms: series.increment_row_norms.clone(),
        warning: series.warning.clone(),
    };
    Ok((r, k, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cauchy::propagate;
    use std::f64::consts::PI;

    fn smooth_potential(nodes: usize) -> Potential {
        let xs: Vec<f64> = (0..=nodes).map(|i| i as f64 / nodes as f64).collect();
        let q1 = xs.iter().map(|x| (2.0 * PI * x).sin()).collect();
        Potential::sampled(xs.clone(), q1, vec![0.3; xs.len()]).unwrap()
    }

    #[test]
    fn zero_potential_gives_zero_kernels() {
        let g = Grid::uniform(16).unwrap();
        let s = build_p_series(&Potential::zero(), 6, &g).unwrap();
        assert_eq!(s.p_plus.max_abs(), 0.0);
        assert_eq!(s.p_minus.max_abs(), 0.0);
        let (r, k) = assemble_k(&s.p_plus, &s.p_minus).unwrap();
        assert_eq!(r.max_abs(), 0.0);
        assert_eq!(k.max_abs(), 0.0);
        let c = apply_transform(&k, 2.0);
        assert_eq!(c[16], [2.0_f64.cos(), 2.0_f64.sin()]);
    }

    #[test]
    fn first_approximation_is_bq() {
        let g = Grid::uniform(20).unwrap();
        let q = Potential::piecewise(vec![0.0, 0.5, 1.0], vec![1.0, -0.5], vec![0.2, 0.7]).unwrap();
        let s = build_p_series(&q, 1, &g).unwrap();
        for i in 0..g.len() {
            for j in 0..=i {
                assert_eq!(s.p_minus.get(i, j), B * q.node_matrix(g.nodes()[j]));
            }
        }
    }

    #[test]
    fn increments_obey_factorial_bound() {
        let g = Grid::uniform(128).unwrap();
        let q = Potential::piecewise(vec![0.0, 0.25, 0.5625, 1.0], vec![1.5, -2.0, 0.8], vec![0.4, 1.0, -1.2]).unwrap().with_p(2.0);
        let s = build_p_series(&q, 6, &g).unwrap();
        let norm = q.lp_norm(2.0).unwrap();
        let mut fact = 1.0;
        for (idx, v) in s.increment_row_norms.iter().enumerate() {
            let n = idx + 1;
            if n > 1 {
                fact *= (n - 1) as f64;
            }
            assert!(*v <= norm.powi(n as i32) / fact * (1.0 + 1e-12), "n={n}: {v}");
        }
        assert!(s.warning.is_none());
    }

    #[test]
    fn r_commutes_with_b() {
        let g = Grid::uniform(32).unwrap();
        let q = Potential::piecewise(vec![0.0, 0.4, 1.0], vec![2.0, -1.0], vec![0.5, 1.0]).unwrap();
        let s = build_p_series(&q, 8, &g).unwrap();
        let (r, _) = assemble_k(&s.p_plus, &s.p_minus).unwrap();
        for i in 0..g.len() {
            for j in 0..=i {
                let m = r.get(i, j);
                assert!((B * m - m * B).max_abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transmutation_matches_propagation() {
        let g = Grid::uniform(512).unwrap();
        let q = smooth_potential(512);
        let (_, k, _) = build_kernels(&q, 8, &g).unwrap();
        for lambda in [0.0, PI, -PI, 5.3] {
            let c = apply_transform(&k, lambda);
            let sol = propagate(&q, lambda, &g).unwrap();
            let err = (0..g.len())
                .map(|i| {
                    let e = sol.c(i);
                    (c[i][0] - e[0]).abs().max((c[i][1] - e[1]).abs())
                })
                .fold(0.0, f64::max);
            assert!(err < 1e-5, "λ = {lambda}: {err}");
        }
    }

    #[test]
    fn transmutation_for_constant_potential() {
        let g = Grid::uniform(512).unwrap();
        let q = Potential::constant(1.0, 0.0);
        let (_, k, _) = build_kernels(&q, 10, &g).unwrap();
        let c = apply_transform(&k, 0.0);
        let sol = propagate(&q, 0.0, &g).unwrap();
        for i in 0..g.len() {
            let e = sol.c(i);
            assert!((c[i][0] - e[0]).abs() < 1e-4 && (c[i][1] - e[1]).abs() < 1e-4);
        }
    }

    #[test]
    fn diagonal_of_r_recovers_potential() {
        // Q(x) = R(x, x) J B for continuous Q.
        let g = Grid::uniform(256).unwrap();
        let q = smooth_potential(256);
        let s = build_p_series(&q, 10, &g).unwrap();
        let (r, _) = assemble_k(&s.p_plus, &s.p_minus).unwrap();
        for i in (0..g.len()).step_by(17) {
            let x = g.nodes()[i];
            let got = r.get(i, i) * J * B;
            assert!((got - q.matrix(x)).max_abs() < 1e-3, "x = {x}");
        }
    }

    #[test]
    fn kernel_depends_continuously_on_potential() {
        let g = Grid::uniform(128).unwrap();
        let q = Potential::piecewise(vec![0.0, 0.5, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]).unwrap();
        let (_, k, _) = build_kernels(&q, 12, &g).unwrap();
        for eps in [1e-3, 1e-2, 1e-1] {
            let qt = Potential::piecewise(vec![0.0, 0.5, 1.0], vec![1.0 + eps, 0.0], vec![0.5, 0.5]).unwrap();
            let (_, kt, _) = build_kernels(&qt, 12, &g).unwrap();
            let delta = crate::potential::lp_distance(&q, &qt, 1.0).unwrap();
            let r = q.lp_norm(1.0).unwrap().max(qt.lp_norm(1.0).unwrap());
            let diff = kt.axpy(&k, -1.0).gp_norm(1.0);
            assert!(diff <= (1.0 + 2.0 * r) * (2.0 * r).exp() * delta * 1.5, "eps {eps}: {diff}");
        }
    }

    #[test]
    fn increments_decay_geometrically() {
        let g = Grid::uniform(64).unwrap();
        let q = Potential::constant(2.0, 1.0);
        let s = build_p_series(&q, 12, &g).unwrap();
        let l1 = q.lp_norm(1.0).unwrap();
        let start = l1.ceil() as usize + 1;
        for n in start..s.increment_row_norms.len() {
            assert!(s.increment_row_norms[n] < s.increment_row_norms[n - 1]);
        }
    }

    #[test]
    fn auto_truncation_is_reasonable() {
        assert!(auto_n_max(1.0, 1e-10) <= 16);
        assert!(auto_n_max(0.0, 1e-10) >= 2);
        assert!(auto_n_max(5.0, 1e-8) > auto_n_max(1.0, 1e-8));
    }

    #[test]
    fn gp_norm_of_constant_kernel() {
        let g = Grid::uniform(10).unwrap();
        let mut k = TriKernel::zeros(&g);
        for i in 0..g.len() {
            for j in 0..=i {
                k.set(i, j, B);
            }
        }
        // Row at x = 1 has L1 norm 1; every column norm is at most 1.
        assert!((k.gp_norm(1.0) - 1.0).abs() < 1e-12);
        assert!(k.to_csv().lines().count() == 1 + 11 * 12 / 2);
    }
}
