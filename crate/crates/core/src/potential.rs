//! Potentials `Q(x) = [[q1, q2], [q2, −q1]]` on `[0, 1]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat2::Mat2;

/// How the scalar fields `q1`, `q2` are represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Constant on each `[breakpoints[k], breakpoints[k+1])`.
    Piecewise,
    /// Values at nodes, linearly interpolated in between.
    Sampled,
}

/// Interpolation between the nodes of a sampled potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Natural cubic spline.
    Spline,
}

impl Interpolation {
    fn is_linear(&self) -> bool {
        *self == Interpolation::Linear
    }
}

/// A real symmetric trace-free potential on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    repr: Representation,
    points: Vec<f64>,
    q1: Vec<f64>,
    q2: Vec<f64>,
    p_exponent: f64,
    interp: Interpolation,
    /// Spline second derivatives of `q1` and `q2` at the nodes.
    curvature: Option<(Vec<f64>, Vec<f64>)>,
}

/// Second derivatives of the natural cubic spline through `(x, y)`.
fn natural_spline(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Tridiagonal system for the interior unknowns, solved by elimination.
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 1..n - 1 {
        let (hl, hr) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        let lower = hl / 6.0;
        diag[i] = (hl + hr) / 3.0;
        upper[i] = hr / 6.0;
        rhs[i] = (y[i + 1] - y[i]) / hr - (y[i] - y[i - 1]) / hl;
        if i > 1 {
            let w = lower / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
    }
    for i in (1..n - 1).rev() {
        m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
    }
    m
}

fn check_points(points: &[f64]) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::InvalidPotential("need at least two points".into()));
    }
    if points[0] != 0.0 || *points.last().unwrap() != 1.0 {
        return Err(Error::InvalidPotential("domain must be exactly [0, 1]".into()));
    }
    if points.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidPotential("breakpoints must strictly increase".into()));
    }
    Ok(())
}

fn check_values(q1: &[f64], q2: &[f64], expected: usize) -> Result<()> {
    if q1.len() != expected || q2.len() != expected {
        return Err(Error::InvalidPotential(format!(
            "expected {expected} values for q1 and q2, got {} and {}",
            q1.len(),
            q2.len()
        )));
    }
    if q1.iter().chain(q2).any(|v| !v.is_finite()) {
        return Err(Error::InvalidPotential("values must be finite".into()));
    }
    Ok(())
}

impl Potential {
    pub fn piecewise(breakpoints: Vec<f64>, q1: Vec<f64>, q2: Vec<f64>) -> Result<Self> {
        check_points(&breakpoints)?;
        check_values(&q1, &q2, breakpoints.len() - 1)?;
        Ok(Self { repr: Representation::Piecewise, points: breakpoints, q1, q2, p_exponent: 1.0, interp: Interpolation::Linear, curvature: None })
    }

    pub fn sampled(nodes: Vec<f64>, q1: Vec<f64>, q2: Vec<f64>) -> Result<Self> {
        check_points(&nodes)?;
        check_values(&q1, &q2, nodes.len())?;
        Ok(Self { repr: Representation::Sampled, points: nodes, q1, q2, p_exponent: 1.0, interp: Interpolation::Linear, curvature: None })
    }

    /// Switches a sampled potential to the given interpolation.
    pub fn with_interpolation(mut self, interp: Interpolation) -> Self {
        if self.repr == Representation::Sampled {
            self.interp = interp;
            self.curvature = match interp {
                Interpolation::Linear => None,
                Interpolation::Spline => Some((natural_spline(&self.points, &self.q1), natural_spline(&self.points, &self.q2))),
            };
        }
        self
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interp
    }

    pub fn zero() -> Self {
        Self::constant(0.0, 0.0)
    }

    pub fn constant(q1: f64, q2: f64) -> Self {
        Self::piecewise(vec![0.0, 1.0], vec![q1], vec![q2]).expect("constant potential is valid")
    }

    /// Builds a sampled potential from matrix values, rejecting any matrix that
    /// is not symmetric and trace-free to `tol` (relative to its size).
    pub fn from_matrix_samples(nodes: Vec<f64>, values: &[Mat2], tol: f64) -> Result<Self> {
        let mut q1 = Vec::with_capacity(values.len());
        let mut q2 = Vec::with_capacity(values.len());
        for (k, m) in values.iter().enumerate() {
            let scale = m.max_abs().max(1.0);
            if (m.a12 - m.a21).abs() > tol * scale {
                return Err(Error::StructureViolation(format!(
                    "sample {k} is not symmetric (a12 = {}, a21 = {})",
                    m.a12, m.a21
                )));
            }
            if m.trace().abs() > tol * scale {
                return Err(Error::StructureViolation(format!(
                    "sample {k} is not trace-free (trace = {})",
                    m.trace()
                )));
            }
            q1.push(0.5 * (m.a11 - m.a22));
            q2.push(0.5 * (m.a12 + m.a21));
        }
        Self::sampled(nodes, q1, q2)
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p_exponent = p;
        self
    }

    pub fn p_exponent(&self) -> f64 {
        self.p_exponent
    }

    pub fn representation(&self) -> Representation {
        self.repr
    }

    /// Breakpoints (piecewise) or nodes (sampled), including 0 and 1.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn q1(&self) -> &[f64] {
        &self.q1
    }

    pub fn q2(&self) -> &[f64] {
        &self.q2
    }

    pub fn is_zero(&self) -> bool {
        self.q1.iter().chain(&self.q2).all(|v| *v == 0.0)
    }

    fn segment(&self, x: f64) -> usize {
        // Index k with points[k] <= x < points[k+1], clamped to the last segment.
        let n = self.points.len() - 1;
        match self.points.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(k) => k.min(n - 1),
            Err(0) => 0,
            Err(k) => (k - 1).min(n - 1),
        }
    }

    /// `(q1(x), q2(x))`; right-continuous for piecewise potentials.
    pub fn value(&self, x: f64) -> (f64, f64) {
        let k = self.segment(x);
        match self.repr {
            Representation::Piecewise => (self.q1[k], self.q2[k]),
            Representation::Sampled => {
                let (a, b) = (self.points[k], self.points[k + 1]);
                let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
                let lin = |v: &[f64]| v[k] + t * (v[k + 1] - v[k]);
                match &self.curvature {
                    None => (lin(&self.q1), lin(&self.q2)),
                    Some((m1, m2)) => {
                        let h2 = (b - a) * (b - a) / 6.0;
                        let u = 1.0 - t;
                        let bend = |m: &[f64]| ((u * u * u - u) * m[k] + (t * t * t - t) * m[k + 1]) * h2;
                        (lin(&self.q1) + bend(m1), lin(&self.q2) + bend(m2))
                    }
                }
            }
        }
    }

    /// Value used at quadrature nodes: at an interior breakpoint of a
    /// piecewise potential the two one-sided limits are averaged.
    pub fn node_value(&self, x: f64) -> (f64, f64) {
        if self.repr == Representation::Piecewise {
            let n = self.points.len() - 1;
            for k in 1..n {
                if (self.points[k] - x).abs() <= 1e-12 {
                    return (
                        0.5 * (self.q1[k - 1] + self.q1[k]),
                        0.5 * (self.q2[k - 1] + self.q2[k]),
                    );
                }
            }
        }
        self.value(x)
    }

    pub fn matrix(&self, x: f64) -> Mat2 {
        let (a, b) = self.value(x);
        Mat2::potential(a, b)
    }

    pub fn node_matrix(&self, x: f64) -> Mat2 {
        let (a, b) = self.node_value(x);
        Mat2::potential(a, b)
    }

    /// `‖Q‖_{L_p}` with the operator norm `|Q(t)| = √(q1² + q2²)`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        lp_distance(self, &Potential::zero(), p)
    }

    /// The potential resampled at the given nodes.
    pub fn resample(&self, nodes: &[f64]) -> Result<Potential> {
        let (q1, q2) = nodes.iter().map(|&x| self.node_value(x)).unzip();
        Potential::sampled(nodes.to_vec(), q1, q2).map(|q| q.with_p(self.p_exponent))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_csv = path.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("csv")).unwrap_or(false);
        if is_csv {
            Self::from_csv(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PotentialFile = serde_json::from_str(text)?;
        file.into_potential()
    }

    /// Rows `x,q1,q2`; an optional header row is skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
        let (mut xs, mut q1, mut q2) = (Vec::new(), Vec::new(), Vec::new());
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(format!("line {}: {e}", line + 1)))?;
            if record.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 fields x,q1,q2", line + 1)));
            }
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(v) => {
                    xs.push(v[0]);
                    q1.push(v[1]);
                    q2.push(v[2]);
                }
                Err(_) if line == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("line {}: {e}", line + 1))),
            }
        }
        Self::sampled(xs, q1, q2)
    }

    pub fn to_file_format(&self) -> PotentialFile {
        let (breakpoints, nodes) = match self.repr {
            Representation::Piecewise => (Some(self.points.clone()), None),
            Representation::Sampled => (None, Some(self.points.clone())),
        };
        PotentialFile {
            kind: self.repr,
            breakpoints,
            nodes,
            q1: self.q1.clone(),
            q2: self.q2.clone(),
            p: Some(self.p_exponent),
            interpolation: self.interp,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_format()).expect("potential serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,q1,q2\n");
        for k in 0..self.q1.len() {
            out.push_str(&format!("{},{},{}\n", self.points[k], self.q1[k], self.q2[k]));
        }
        out
    }
}

/// On-disk JSON form of a potential.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialFile {
    #[serde(rename = "type")]
    pub kind: Representation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoints: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<f64>>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Only meaningful for sampled potentials.
    #[serde(default, skip_serializing_if = "Interpolation::is_linear")]
    pub interpolation: Interpolation,
}

impl PotentialFile {
    pub fn into_potential(self) -> Result<Potential> {
        let q = match self.kind {
            Representation::Piecewise => {
                let bp = self.breakpoints.ok_or_else(|| Error::Parse("field `breakpoints` is required for type piecewise".into()))?;
                Potential::piecewise(bp, self.q1, self.q2)?
            }
            Representation::Sampled => {
                let nodes = self.nodes.ok_or_else(|| Error::Parse("field `nodes` is required for type sampled".into()))?;
                Potential::sampled(nodes, self.q1, self.q2)?.with_interpolation(self.interpolation)
            }
        };
        let p = self.p.unwrap_or(1.0);
        if !(p >= 1.0) {
            return Err(Error::InvalidPotential(format!("exponent p = {p} must be at least 1")));
        }
        Ok(q.with_p(p))
    }
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// `‖Q_a − Q_b‖_{L_p}` with the pointwise operator norm.
///
/// Exact on common piecewise-constant pieces; otherwise four-point
/// Gauss–Legendre on a refinement of the union of both point sets.
pub fn lp_distance(a: &Potential, b: &Potential, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("L_p exponent must be at least 1, got {p}")));
    }
    let mut pts: Vec<f64> = a.points.iter().chain(&b.points).copied().collect();
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    let both_piecewise = a.repr == Representation::Piecewise && b.repr == Representation::Piecewise;
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (l, r) = (w[0], w[1]);
        if both_piecewise {
            let mid = 0.5 * (l + r);
            let d = (a.matrix(mid) - b.matrix(mid)).norm();
            total += (r - l) * d.powf(p);
            continue;
        }
        let sub = 4;
        let hs = (r - l) / sub as f64;
        for s in 0..sub {
            let c = l + (s as f64 + 0.5) * hs;
            for (xi, wi) in GAUSS4 {
                let x = c + 0.5 * hs * xi;
                let d = (a.matrix(x) - b.matrix(x)).norm();
                total += 0.5 * hs * wi * d.powf(p);
            }
        }
    }
    Ok(total.powf(1.0 / p))
}
