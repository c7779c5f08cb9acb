//! Real 2×2 matrices and the structural constants `B` and `J`.

use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A real 2×2 matrix stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

/// A real column vector in ℝ².
pub type Vec2 = [f64; 2];

/// `B = [[0, 1], [-1, 0]]`, the symplectic unit with `B² = -I`.
pub const B: Mat2 = Mat2::new(0.0, 1.0, -1.0, 0.0);

/// `J = diag(1, -1)`.
pub const J: Mat2 = Mat2::new(1.0, 0.0, 0.0, -1.0);

/// The identity matrix.
pub const I: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);

/// The zero matrix.
pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);

impl Mat2 {
    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self { a11, a12, a21, a22 }
    }

    pub fn scalar(s: f64) -> Self {
        Self::new(s, 0.0, 0.0, s)
    }

    /// `a·I + b·B`, the general element of the rotation algebra.
    pub fn rotation_algebra(a: f64, b: f64) -> Self {
        Self::new(a, b, -b, a)
    }

    /// The potential matrix `[[q1, q2], [q2, -q1]]`.
    pub fn potential(q1: f64, q2: f64) -> Self {
        Self::new(q1, q2, q2, -q1)
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a11, self.a21, self.a12, self.a22)
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a21 * v[0] + self.a22 * v[1],
        ]
    }

    pub fn col(&self, j: usize) -> Vec2 {
        match j {
            0 => [self.a11, self.a21],
            _ => [self.a12, self.a22],
        }
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.a11, self.a12, self.a21, self.a22]
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|v| v.is_finite())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.entries().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Operator norm induced by the Euclidean norm on ℝ².
    pub fn norm(&self) -> f64 {
        // Largest singular value from the closed form for 2×2 matrices.
        let s = self.a11 * self.a11 + self.a12 * self.a12 + self.a21 * self.a21 + self.a22 * self.a22;
        let d = self.det();
        let disc = (s * s - 4.0 * d * d).max(0.0);
        (0.5 * (s + disc.sqrt())).sqrt()
    }

    /// Matrix commutator `[self, other] = self·other − other·self`.
    pub fn commutator(&self, other: &Mat2) -> Mat2 {
        *self * *other - *other * *self
    }

    /// Decomposes a rotation-algebra element `aI + bB` into `(a, b)`,
    /// averaging out any component outside the algebra.
    pub fn rotation_parts(&self) -> (f64, f64) {
        (0.5 * (self.a11 + self.a22), 0.5 * (self.a12 - self.a21))
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a11 + o.a11, self.a12 + o.a12, self.a21 + o.a21, self.a22 + o.a22)
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, o: Mat2) {
        *self = *self + o;
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a11 - o.a11, self.a12 - o.a12, self.a21 - o.a21, self.a22 - o.a22)
    }
}

impl SubAssign for Mat2 {
    fn sub_assign(&mut self, o: Mat2) {
        *self = *self - o;
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        Mat2::new(-self.a11, -self.a12, -self.a21, -self.a22)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * o.a11 + self.a12 * o.a21,
            self.a11 * o.a12 + self.a12 * o.a22,
            self.a21 * o.a11 + self.a22 * o.a21,
            self.a21 * o.a12 + self.a22 * o.a22,
        )
    }
}

impl MulAssign for Mat2 {
    fn mul_assign(&mut self, o: Mat2) {
        *self = *self * o;
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        Mat2::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }
}

impl Mul<Mat2> for f64 {
    type Output = Mat2;
    fn mul(self, m: Mat2) -> Mat2 {
        m * self
    }
}

/// `e^{−λxB} = [[cos λx, −sin λx], [sin λx, cos λx]]`.
pub fn rotation(lambda: f64, x: f64) -> Mat2 {
    let (s, c) = (lambda * x).sin_cos();
    Mat2::new(c, -s, s, c)
}

/// `cosh √δ` and `sinh √δ / √δ` as entire functions of `δ`, plus their
/// derivatives in `δ`.
fn exp_coefficients(delta: f64) -> (f64, f64, f64, f64) {
    if delta.abs() < 1e-6 {
        // Series about δ = 0; at δ = 0 this is the linear limit I + m₀.
        let c = 1.0 + delta / 2.0 + delta * delta / 24.0;
        let s = 1.0 + delta / 6.0 + delta * delta / 120.0;
        let dc = 0.5 * s;
        let ds = 1.0 / 6.0 + delta / 60.0 + delta * delta / 1680.0;
        return (c, s, dc, ds);
    }
    let (c, s) = if delta > 0.0 {
        let r = delta.sqrt();
        (r.cosh(), r.sinh() / r)
    } else {
        let r = (-delta).sqrt();
        (r.cos(), r.sin() / r)
    };
    (c, s, 0.5 * s, (c - s) / (2.0 * delta))
}

/// Matrix exponential via the closed 2×2 formula.
///
/// Splits `m = (tr m / 2) I + m₀`; since `m₀² = −det(m₀) I` the exponential is
/// `e^{tr/2} (C I + S m₀)` with trigonometric or hyperbolic `C`, `S`.
pub fn mat2_exp(m: Mat2) -> Mat2 {
    let half_tr = 0.5 * m.trace();
    let m0 = m - Mat2::scalar(half_tr);
    let delta = -m0.det();
    let (c, s, _, _) = exp_coefficients(delta);
    (Mat2::scalar(c) + m0 * s) * half_tr.exp()
}

/// Exponential of a trace-free `m` together with its directional derivative
/// along a trace-free `dm`.
pub(crate) fn mat2_exp_traceless_with_derivative(m: Mat2, dm: Mat2) -> (Mat2, Mat2) {
    let delta = -m.det();
    let ddelta = m.a11 * dm.a11 * 2.0 + dm.a12 * m.a21 + m.a12 * dm.a21;
    let (c, s, dc, ds) = exp_coefficients(delta);
    let e = Mat2::scalar(c) + m * s;
    let de = Mat2::scalar(dc * ddelta) + m * (ds * ddelta) + dm * s;
    (e, de)
}
