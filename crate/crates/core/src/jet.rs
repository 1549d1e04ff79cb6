//! Truncated Taylor expansions in three variables.
//!
//! A [`Jet`] stores the Taylor coefficients `f^(a)(x0) / a!` of a function of
//! `(x, y, z)` through total degree four. Arithmetic on jets propagates exact
//! derivatives, so every pointwise identity can be checked without any
//! discretisation error. A jet obtained by differentiation (see
//! [`Jet::partial`]) is only valid through degree three.

use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub const ORDER: usize = 4;
pub const NCOEF: usize = 35;
const NMUL: usize = 210;

const fn build_exponents() -> [[u8; 3]; NCOEF] {
    let mut out = [[0u8; 3]; NCOEF];
    let mut n = 0;
    let mut d = 0;
    while d <= ORDER {
        let mut a = d as i32;
        while a >= 0 {
            let mut b = d as i32 - a;
            while b >= 0 {
                let c = d as i32 - a - b;
                out[n] = [a as u8, b as u8, c as u8];
                n += 1;
                b -= 1;
            }
            a -= 1;
        }
        d += 1;
    }
    out
}

const EXPONENTS: [[u8; 3]; NCOEF] = build_exponents();

const fn build_index() -> [[[u8; 5]; 5]; 5] {
    let mut idx = [[[255u8; 5]; 5]; 5];
    let mut n = 0;
    while n < NCOEF {
        let e = EXPONENTS[n];
        idx[e[0] as usize][e[1] as usize][e[2] as usize] = n as u8;
        n += 1;
    }
    idx
}

const INDEX: [[[u8; 5]; 5]; 5] = build_index();

const fn build_mul() -> [(u8, u8, u8); NMUL] {
    let mut out = [(0u8, 0u8, 0u8); NMUL];
    let mut n = 0;
    let mut i = 0;
    while i < NCOEF {
        let mut j = 0;
        while j < NCOEF {
            let a = EXPONENTS[i];
            let b = EXPONENTS[j];
            let e = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
            if (e[0] + e[1] + e[2]) as usize <= ORDER {
                out[n] = (i as u8, j as u8, INDEX[e[0] as usize][e[1] as usize][e[2] as usize]);
                n += 1;
            }
            j += 1;
        }
        i += 1;
    }
    out
}

const MUL: [(u8, u8, u8); NMUL] = build_mul();

const FACT: [f64; 5] = [1.0, 1.0, 2.0, 6.0, 24.0];

fn idx(e: [usize; 3]) -> Option<usize> {
    if e.iter().sum::<usize>() > ORDER {
        return None;
    }
    Some(INDEX[e[0]][e[1]][e[2]] as usize)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet(pub [f64; NCOEF]);

impl Default for Jet {
    fn default() -> Self {
        Jet::zero()
    }
}

impl Jet {
    pub const fn zero() -> Self {
        Jet([0.0; NCOEF])
    }

    pub fn constant(c: f64) -> Self {
        let mut j = Jet::zero();
        j.0[0] = c;
        j
    }

    /// The coordinate function `x_axis` expanded about `x0`.
    pub fn var(axis: usize, x0: f64) -> Self {
        let mut j = Jet::constant(x0);
        let mut e = [0; 3];
        e[axis] = 1;
        j.0[idx(e).unwrap()] = 1.0;
        j
    }

    /// Coordinate jets `(x, y, z)` about the point `p`.
    pub fn coords(p: [f64; 3]) -> [Jet; 3] {
        [Jet::var(0, p[0]), Jet::var(1, p[1]), Jet::var(2, p[2])]
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    pub fn coeff(&self, e: [usize; 3]) -> f64 {
        idx(e).map_or(0.0, |i| self.0[i])
    }

    /// Mixed partial derivative with multi-index `e` at the expansion point.
    pub fn deriv(&self, e: [usize; 3]) -> f64 {
        self.coeff(e) * FACT[e[0]] * FACT[e[1]] * FACT[e[2]]
    }

    /// Derivative along the listed axes, e.g. `d(&[0, 2])` is d²/dxdz.
    pub fn d(&self, axes: &[usize]) -> f64 {
        let mut e = [0; 3];
        for &a in axes {
            e[a] += 1;
        }
        self.deriv(e)
    }

    pub fn grad(&self) -> [f64; 3] {
        [self.d(&[0]), self.d(&[1]), self.d(&[2])]
    }

    pub fn hessian(&self) -> [[f64; 3]; 3] {
        let mut h = [[0.0; 3]; 3];
        for (i, row) in h.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.d(&[i, j]);
            }
        }
        h
    }

    pub fn laplacian_value(&self) -> f64 {
        self.d(&[0, 0]) + self.d(&[1, 1]) + self.d(&[2, 2])
    }

    /// Jet of the partial derivative along `axis`; valid one degree lower.
    pub fn partial(&self, axis: usize) -> Jet {
        let mut out = Jet::zero();
        for (n, e) in EXPONENTS.iter().enumerate() {
            let mut up = [e[0] as usize, e[1] as usize, e[2] as usize];
            up[axis] += 1;
            if let Some(m) = idx(up) {
                out.0[n] = up[axis] as f64 * self.0[m];
            }
        }
        out
    }

    pub fn laplacian(&self) -> Jet {
        let mut out = Jet::zero();
        for a in 0..3 {
            out += self.partial(a).partial(a);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Jet {
        let mut out = *self;
        for v in out.0.iter_mut() {
            *v *= s;
        }
        out
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Jet) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += s * b;
        }
    }

    /// `f(self)` given `f, f', f'', f''', f''''` evaluated at `self.value()`.
    pub fn compose(&self, derivs: [f64; 5]) -> Jet {
        let mut delta = *self;
        delta.0[0] = 0.0;
        let d2 = delta * delta;
        let d3 = d2 * delta;
        let d4 = d2 * d2;
        let mut out = Jet::constant(derivs[0]);
        out.axpy(derivs[1], &delta);
        out.axpy(derivs[2] / 2.0, &d2);
        out.axpy(derivs[3] / 6.0, &d3);
        out.axpy(derivs[4] / 24.0, &d4);
        out
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        self.compose([s, c, -s, -c, s])
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        self.compose([c, -s, -c, s, c])
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        self.compose([e; 5])
    }

    pub fn sqrt(&self) -> Jet {
        let v = self.value();
        let s = v.sqrt();
        self.compose([
            s,
            0.5 / s,
            -0.25 / (s * v),
            0.375 / (s * v * v),
            -0.9375 / (s * v * v * v),
        ])
    }

    pub fn recip(&self) -> Jet {
        let r = 1.0 / self.value();
        self.compose([r, -r * r, 2.0 * r.powi(3), -6.0 * r.powi(4), 24.0 * r.powi(5)])
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, rhs: Jet) -> Jet {
        self += rhs;
        self
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, rhs: Jet) {
        for (a, b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a += b;
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: Jet) -> Jet {
        self -= rhs;
        self
    }
}

impl SubAssign for Jet {
    fn sub_assign(&mut self, rhs: Jet) {
        for (a, b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a -= b;
        }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let mut out = [0.0; NCOEF];
        for &(i, j, k) in MUL.iter() {
            out[k as usize] += self.0[i as usize] * rhs.0[j as usize];
        }
        Jet(out)
    }
}

impl MulAssign for Jet {
    fn mul_assign(&mut self, rhs: Jet) {
        *self = *self * rhs;
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.0[0] += rhs;
        self
    }
}

pub type Vec3 = [f64; 3];
pub type JetVec = [Jet; 3];

pub fn dot(a: &JetVec, b: &JetVec) -> Jet {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: &JetVec, b: &JetVec) -> JetVec {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn curl(u: &JetVec) -> JetVec {
    [
        u[2].partial(1) - u[1].partial(2),
        u[0].partial(2) - u[2].partial(0),
        u[1].partial(0) - u[0].partial(1),
    ]
}

pub fn div(u: &JetVec) -> Jet {
    u[0].partial(0) + u[1].partial(1) + u[2].partial(2)
}

pub fn gradient(f: &Jet) -> JetVec {
    [f.partial(0), f.partial(1), f.partial(2)]
}

pub fn vec_laplacian(u: &JetVec) -> JetVec {
    [u[0].laplacian(), u[1].laplacian(), u[2].laplacian()]
}

pub fn values(u: &JetVec) -> Vec3 {
    [u[0].value(), u[1].value(), u[2].value()]
}

/// Jacobian `J[a][b] = d u_a / d x_b` at the expansion point.
pub fn jacobian(u: &JetVec) -> [[f64; 3]; 3] {
    [u[0].grad(), u[1].grad(), u[2].grad()]
}

pub fn v_dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn v_cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn v_norm2(a: &Vec3) -> f64 {
    v_dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sizes() {
        assert_eq!(EXPONENTS[0], [0, 0, 0]);
        assert_eq!(EXPONENTS[NCOEF - 1], [0, 0, 4]);
        assert!(MUL.iter().all(|&(_, _, k)| (k as usize) < NCOEF));
    }

    #[test]
    fn polynomial_derivatives() {
        let [x, y, z] = Jet::coords([0.3, -0.7, 1.1]);
        let f = x * x * y + z * z * z * x;
        // d/dx = 2xy + z^3
        let g = f.grad();
        assert!((g[0] - (2.0 * 0.3 * -0.7 + 1.1f64.powi(3))).abs() < 1e-14);
        assert!((f.d(&[2, 2, 0]) - 6.0 * 1.1).abs() < 1e-13);
        assert!((f.d(&[0, 0, 1]) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn transcendental_compose() {
        let [x, y, _] = Jet::coords([0.4, 0.2, 0.0]);
        let f = (x * 2.0 + y).sin();
        let arg = 1.0f64;
        assert!((f.value() - arg.sin()).abs() < 1e-15);
        assert!((f.d(&[0, 0, 0, 0]) - 16.0 * arg.sin()).abs() < 1e-12);
        assert!((f.d(&[0, 1, 1]) + 2.0 * arg.cos()).abs() < 1e-13);
        let s = (x * x + 1.0).sqrt();
        let r = s.recip() * s;
        assert!((r.value() - 1.0).abs() < 1e-15);
        assert!(r.0[1..].iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn partial_matches_deriv() {
        let [x, y, z] = Jet::coords([0.1, 0.2, 0.3]);
        let f = (x * y + z).exp();
        let fx = f.partial(0);
        assert!((fx.d(&[1, 2]) - f.d(&[0, 1, 2])).abs() < 1e-12);
    }
}
