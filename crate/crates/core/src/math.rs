//! Scalar abstraction shared by the forward tracer and the gradient replay.
//!
//! The transport kernels are written once, generically over [`Real`]. The
//! forward pass instantiates them with `f64`; the vector-Jacobian replay
//! instantiates them with [`Dual`], a forward-mode number carrying a short
//! gradient vector (one slot per active optimization parameter).

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Maximum number of simultaneously differentiated parameters.
pub const MAX_GRAD: usize = 8;

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + std::fmt::Debug
{
    fn constant(x: f64) -> Self;
    /// Primal value, discarding any derivative payload.
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn acos(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
}

impl Real for f64 {
    fn constant(x: f64) -> Self {
        x
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn acos(self) -> Self {
        f64::acos(self)
    }
    fn max(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn min(self, other: Self) -> Self {
        f64::min(self, other)
    }
}

/// Forward-mode dual number with a fixed-capacity gradient vector.
///
/// Unused slots stay zero; the active parameter count is tracked by the
/// caller. `max`/`min` select by primal value, so derivative flow through a
/// saturated branch is cut, matching the clip semantics used elsewhere.
#[derive(Clone, Copy, Debug)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; MAX_GRAD],
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual {
            v,
            d: [0.0; MAX_GRAD],
        }
    }

    /// A variable seeded with a unit derivative in gradient slot `slot`.
    pub fn variable(v: f64, slot: usize) -> Self {
        let mut d = [0.0; MAX_GRAD];
        d[slot] = 1.0;
        Dual { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = [0.0; MAX_GRAD];
        for i in 0..MAX_GRAD {
            d[i] = dv * self.d[i];
        }
        Dual { v, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        let mut d = [0.0; MAX_GRAD];
        for i in 0..MAX_GRAD {
            d[i] = self.d[i] + rhs.d[i];
        }
        Dual {
            v: self.v + rhs.v,
            d,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        let mut d = [0.0; MAX_GRAD];
        for i in 0..MAX_GRAD {
            d[i] = self.d[i] - rhs.d[i];
        }
        Dual {
            v: self.v - rhs.v,
            d,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        let mut d = [0.0; MAX_GRAD];
        for i in 0..MAX_GRAD {
            d[i] = self.d[i] * rhs.v + self.v * rhs.d[i];
        }
        Dual {
            v: self.v * rhs.v,
            d,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.v;
        let mut d = [0.0; MAX_GRAD];
        for i in 0..MAX_GRAD {
            d[i] = (self.d[i] - self.v * inv * rhs.d[i]) * inv;
        }
        Dual {
            v: self.v * inv,
            d,
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        let mut d = [0.0; MAX_GRAD];
        for i in 0..MAX_GRAD {
            d[i] = -self.d[i];
        }
        Dual { v: -self.v, d }
    }
}

impl Real for Dual {
    fn constant(x: f64) -> Self {
        Dual::constant(x)
    }
    fn value(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let dv = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.chain(s, dv)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn abs(self) -> Self {
        let s = if self.v > 0.0 {
            1.0
        } else if self.v < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.chain(self.v.abs(), s)
    }
    fn acos(self) -> Self {
        let g = 1.0 - self.v * self.v;
        let dv = if g > 1e-300 { -1.0 / g.sqrt() } else { 0.0 };
        self.chain(self.v.acos(), dv)
    }
    fn max(self, other: Self) -> Self {
        if self.v >= other.v {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self.v <= other.v {
            self
        } else {
            other
        }
    }
}

/// 3-component vector over a generic scalar. The imaging plane is (x, z)
/// with y out of plane; canonical scenes are invariant along y.
#[derive(Clone, Copy, Debug)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Real> Vec3<S> {
    pub fn new(x: S, y: S, z: S) -> Self {
        Vec3 { x, y, z }
    }

    pub fn splat_const(x: f64, y: f64, z: f64) -> Self {
        Vec3::new(S::constant(x), S::constant(y), S::constant(z))
    }

    pub fn dot(self, o: Vec3<S>) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> S {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3<S> {
        let n = self.norm();
        Vec3::new(self.x / n, self.y / n, self.z / n)
    }

    pub fn scale(self, s: S) -> Vec3<S> {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn add(self, o: Vec3<S>) -> Vec3<S> {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Vec3<S>) -> Vec3<S> {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn neg(self) -> Vec3<S> {
        Vec3::new(-self.x, -self.y, -self.z)
    }

    pub fn cross(self, o: Vec3<S>) -> Vec3<S> {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn value(self) -> Vec3<f64> {
        Vec3::new(self.x.value(), self.y.value(), self.z.value())
    }
}

impl Vec3<f64> {
    /// Lift an f64 vector into another scalar type as a constant.
    pub fn lift<S: Real>(self) -> Vec3<S> {
        Vec3::splat_const(self.x, self.y, self.z)
    }
}

/// Orthonormal basis completion: two unit vectors perpendicular to `n`.
pub fn orthonormal_basis<S: Real>(n: Vec3<S>) -> (Vec3<S>, Vec3<S>) {
    // Pick the axis least aligned with n to avoid degeneracy.
    let helper = if n.x.value().abs() < 0.9 {
        Vec3::splat_const(1.0, 0.0, 0.0)
    } else {
        Vec3::splat_const(0.0, 1.0, 0.0)
    };
    let t = n.cross(helper).normalized();
    let b = n.cross(t);
    (t, b)
}
