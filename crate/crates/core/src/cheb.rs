//! Chebyshev series on the unit interval [0, 1] (variable `t = 2z - 1`).

use std::f64::consts::PI;

/// Value of `sum a_n T_n(2z - 1)` by Clenshaw recurrence.
pub fn eval(a: &[f64], z: f64) -> f64 {
    let t = 2.0 * z - 1.0;
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in a.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    match a.first() {
        Some(&a0) => a0 + t * b1 - b2,
        None => 0.0,
    }
}

/// Coefficients of d/dz of the series (chain factor 2 included).
pub fn derivative(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    if n <= 1 {
        return vec![0.0];
    }
    let mut b = vec![0.0; n + 1];
    for k in (1..n).rev() {
        b[k - 1] = b[k + 1] + 2.0 * k as f64 * a[k];
    }
    b[0] *= 0.5;
    b.truncate(n - 1);
    for v in b.iter_mut() {
        *v *= 2.0;
    }
    b
}

/// Chebyshev–Gauss–Lobatto points on [0, 1], ordered from z=1 down to z=0.
pub fn lobatto_points(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|j| 0.5 * ((PI * j as f64 / n as f64).cos() + 1.0))
        .collect()
}

/// Degree-`n` interpolant of `f` at the Lobatto points.
pub fn interpolate<F: Fn(f64) -> f64>(f: F, n: usize) -> Vec<f64> {
    let z = lobatto_points(n);
    let v: Vec<f64> = z.iter().map(|&zz| f(zz)).collect();
    let mut a = vec![0.0; n + 1];
    for (k, ak) in a.iter_mut().enumerate() {
        let mut s = 0.0;
        for (j, vj) in v.iter().enumerate() {
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            s += w * vj * (PI * (j * k) as f64 / n as f64).cos();
        }
        let c = if k == 0 || k == n { 1.0 } else { 2.0 };
        *ak = c * s / n as f64;
    }
    a
}

/// `T_n(2z - 1)` at the endpoints and their first derivatives in z.
pub fn endpoint_values(n: usize) -> (f64, f64, f64, f64) {
    let nn = (n * n) as f64;
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    // T_n(1) = 1, T_n(-1) = (-1)^n, T_n'(±1) = (±1)^(n+1) n^2; d/dz = 2 d/dt
    (1.0, sign, 2.0 * nn, -2.0 * sign * nn)
}

/// Integral of `T_n(2z - 1)` over [0, 1].
pub fn integral(n: usize) -> f64 {
    if n % 2 == 1 {
        0.0
    } else {
        0.5 * 2.0 / (1.0 - (n * n) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_and_derivative() {
        let a = interpolate(|z| (3.0 * z).sin(), 30);
        assert!((eval(&a, 0.37) - 1.11f64.sin()).abs() < 1e-14);
        let d = derivative(&a);
        assert!((eval(&d, 0.37) - 3.0 * 1.11f64.cos()).abs() < 1e-13);
        let d2 = derivative(&d);
        assert!((eval(&d2, 0.9) + 9.0 * 2.7f64.sin()).abs() < 1e-11);
    }

    #[test]
    fn endpoint_table() {
        for n in 0..8 {
            let mut a = vec![0.0; n + 1];
            a[n] = 1.0;
            let d = derivative(&a);
            let (v1, v0, d1, d0) = endpoint_values(n);
            assert!((eval(&a, 1.0) - v1).abs() < 1e-12);
            assert!((eval(&a, 0.0) - v0).abs() < 1e-12);
            assert!((eval(&d, 1.0) - d1).abs() < 1e-10);
            assert!((eval(&d, 0.0) - d0).abs() < 1e-10);
            let (x, w) = crate::quadrature::gauss_legendre_on(16, 0.0, 1.0);
            let s: f64 = x.iter().zip(&w).map(|(z, wt)| wt * eval(&a, *z)).sum();
            assert!((s - integral(n)).abs() < 1e-14);
        }
    }
}
