//! Bivariate Gaussian primitives.
//!
//! Everything here is closed-form 2×2 algebra: symmetric matrices are stored
//! as their three free entries and determinants/inverses are written out.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative tolerance on `det / (a c)` used when validating an SPD matrix.
pub const SPD_REL_TOL: f64 = 1e-12;

/// A point (or displacement) in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub u: f64,
    pub v: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { u: 0.0, v: 0.0 };

    pub const fn new(u: f64, v: f64) -> Self {
        Vec2 { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.u * other.u + self.v * other.v
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.u, self.v]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.u + rhs.u, self.v + rhs.v)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.u - rhs.u, self.v - rhs.v)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.u * rhs, self.v * rhs)
    }
}

/// A symmetric 2×2 matrix `[[xx, xy], [xy, yy]]` with no definiteness
/// requirement. Used for raw second moments and covariance gradients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn outer(d: Vec2) -> Self {
        Sym2::new(d.u * d.u, d.u * d.v, d.v * d.v)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Smaller eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        let half_tr = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        half_tr - half_diff.hypot(self.xy)
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2::new(self.xx * s, self.xy * s, self.yy * s)
    }

    /// Partials with respect to the `(a, b, c)` encoding of a symmetric
    /// matrix, given `self` as the full-matrix gradient `∂f/∂Σ`.
    ///
    /// The off-diagonal parameter `b` appears in two matrix entries, so its
    /// partial is `2 · xy`.
    pub fn to_abc_partials(&self) -> [f64; 3] {
        [self.xx, 2.0 * self.xy, self.yy]
    }

    pub fn to_array(&self) -> [[f64; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, rhs: Sym2) -> Sym2 {
        Sym2::new(self.xx + rhs.xx, self.xy + rhs.xy, self.yy + rhs.yy)
    }
}

/// A symmetric positive-definite 2×2 matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spd2 {
    a: f64,
    b: f64,
    c: f64,
}

impl Spd2 {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let ok = a.is_finite()
            && b.is_finite()
            && c.is_finite()
            && a > 0.0
            && c > 0.0
            && a * c - b * b > SPD_REL_TOL * a * c;
        if ok {
            Ok(Spd2 { a, b, c })
        } else {
            Err(Error::NotPositiveDefinite { a, b, c })
        }
    }

    pub fn identity() -> Self {
        Spd2 { a: 1.0, b: 0.0, c: 1.0 }
    }

    /// `s · I` for `s > 0`.
    pub fn isotropic(s: f64) -> Result<Self> {
        Spd2::new(s, 0.0, s)
    }

    pub fn from_sym(m: Sym2) -> Result<Self> {
        Spd2::new(m.xx, m.xy, m.yy)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn as_sym(&self) -> Sym2 {
        Sym2::new(self.a, self.b, self.c)
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn inverse(&self) -> Spd2 {
        let det = self.det();
        Spd2 {
            a: self.c / det,
            b: -self.b / det,
            c: self.a / det,
        }
    }

    pub fn mul_vec(&self, d: Vec2) -> Vec2 {
        Vec2::new(self.a * d.u + self.b * d.v, self.b * d.u + self.c * d.v)
    }

    /// `dᵀ Σ⁻¹ d`, evaluated without forming the inverse.
    pub fn inv_quad_form(&self, d: Vec2) -> f64 {
        (self.c * d.u * d.u - 2.0 * self.b * d.u * d.v + self.a * d.v * d.v) / self.det()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.as_sym().min_eigenvalue()
    }

    pub fn to_array(&self) -> [[f64; 2]; 2] {
        self.as_sym().to_array()
    }
}

impl Add for Spd2 {
    type Output = Spd2;
    fn add(self, rhs: Spd2) -> Spd2 {
        // The sum of two SPD matrices is SPD.
        Spd2 {
            a: self.a + rhs.a,
            b: self.b + rhs.b,
            c: self.c + rhs.c,
        }
    }
}

/// A bivariate Gaussian density `N(·; mean, cov)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    pub mean: Vec2,
    pub cov: Spd2,
}

impl Gaussian2 {
    pub fn new(mean: Vec2, cov: Spd2) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "Gaussian mean must be finite, got ({}, {})",
                mean.u, mean.v
            )));
        }
        Ok(Gaussian2 { mean, cov })
    }

    pub fn log_pdf(&self, x: Vec2) -> f64 {
        log_pdf(self, x)
    }

    pub fn pdf(&self, x: Vec2) -> f64 {
        pdf(self, x)
    }
}

/// Log-density `log N(x; μ, Σ)`.
pub fn log_pdf(g: &Gaussian2, x: Vec2) -> f64 {
    let d = x - g.mean;
    -LN_2PI - 0.5 * g.cov.det().ln() - 0.5 * g.cov.inv_quad_form(d)
}

/// Density `N(x; μ, Σ)`.
pub fn pdf(g: &Gaussian2, x: Vec2) -> f64 {
    log_pdf(g, x).exp()
}

/// `∫ N(x; μ₁, Σ₁) N(x; μ₂, Σ₂) dx = N(μ₁; μ₂, Σ₁ + Σ₂)`.
///
/// Symmetric in its arguments bit-for-bit: the covariance sum commutes and the
/// quadratic form is even in the mean difference.
pub fn product_integral(g1: &Gaussian2, g2: &Gaussian2) -> f64 {
    let s = g1.cov + g2.cov;
    let d = g1.mean - g2.mean;
    (-LN_2PI - 0.5 * s.det().ln() - 0.5 * s.inv_quad_form(d)).exp()
}

/// Gradient of [`product_integral`] with respect to the first Gaussian's
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductIntegralGrad {
    /// The integral value itself.
    pub value: f64,
    /// `∂r/∂μ₁`.
    pub dmean: Vec2,
    /// `∂r/∂Σ₁` as a full symmetric matrix.
    pub dcov: Sym2,
}

/// With `S = Σ₁ + Σ₂`, `δ = μ₂ − μ₁` and `r` the integral:
/// `∂r/∂μ₁ = r S⁻¹δ` and `∂r/∂Σ₁ = ½ r (S⁻¹δδᵀS⁻¹ − S⁻¹)`.
pub fn product_integral_grad(g1: &Gaussian2, g2: &Gaussian2) -> ProductIntegralGrad {
    let r = product_integral(g1, g2);
    let s_inv = (g1.cov + g2.cov).inverse();
    let sd = s_inv.mul_vec(g2.mean - g1.mean);
    let outer = Sym2::outer(sd);
    let dcov = Sym2::new(
        0.5 * r * (outer.xx - s_inv.a()),
        0.5 * r * (outer.xy - s_inv.b()),
        0.5 * r * (outer.yy - s_inv.c()),
    );
    ProductIntegralGrad {
        value: r,
        dmean: sd * r,
        dcov,
    }
}

/// Peak value `1 / (2π √det Σ)` of a Gaussian density.
pub fn peak_density(cov: &Spd2) -> f64 {
    1.0 / (2.0 * PI * cov.det().sqrt())
}
