//! Spherical Bessel functions of the first kind.

/// `j_0(x) .. j_lmax(x)` for `x > 0` via normalised downward recurrence.
pub fn sph_bessel_j(lmax: usize, x: f64) -> Vec<f64> {
    if x == 0.0 {
        let mut v = vec![0.0; lmax + 1];
        v[0] = 1.0;
        return v;
    }
    if x < 2.0 {
        return reduced_bessel(lmax, x)
            .iter()
            .enumerate()
            .map(|(l, g)| g * x.powi(l as i32))
            .collect();
    }
    let start = lmax + x.ceil() as usize + 40;
    let mut out = vec![0.0; lmax + 1];
    let (mut jp1, mut j) = (0.0f64, 1e-200f64);
    let mut j0_raw = 0.0;
    let mut j1_raw = 0.0;
    for l in (0..=start).rev() {
        if l <= lmax {
            out[l] = j;
        }
        if l == 1 {
            j1_raw = j;
        }
        if l == 0 {
            j0_raw = j;
            break;
        }
        let jm1 = (2 * l + 1) as f64 / x * j - jp1;
        jp1 = j;
        j = jm1;
        if j.abs() > 1e200 {
            let s = 1e-200;
            j *= s;
            jp1 *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    let (s, c) = x.sin_cos();
    let j0 = s / x;
    let j1 = s / (x * x) - c / x;
    let scale = if j0.abs() > j1.abs() { j0 / j0_raw } else { j1 / j1_raw };
    for v in out.iter_mut() {
        *v *= scale;
    }
    out
}

/// `G_l(x) = j_l(x) / x^l` for `l = 0..=lmax`; smooth and even in `x`.
///
/// As a function of `w = x²`, `dG_l/dw = -G_{l+1}/2`.
pub fn reduced_bessel(lmax: usize, x: f64) -> Vec<f64> {
    if x >= 2.0 {
        return sph_bessel_j(lmax, x)
            .iter()
            .enumerate()
            .map(|(l, j)| j / x.powi(l as i32))
            .collect();
    }
    reduced_series(lmax, x)
}

fn reduced_series(lmax: usize, x: f64) -> Vec<f64> {
    let w = -0.5 * x * x;
    (0..=lmax)
        .map(|l| {
            let mut dfact = 1.0;
            for k in 1..=l {
                dfact *= (2 * k + 1) as f64;
            }
            let mut term = 1.0 / dfact;
            let mut sum = term;
            for k in 1..60 {
                term *= w / (k as f64 * (2 * l + 2 * k + 1) as f64);
                sum += term;
                if term.abs() < 1e-18 * sum.abs() {
                    break;
                }
            }
            sum
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed(l: usize, x: f64) -> f64 {
        let (s, c) = x.sin_cos();
        match l {
            0 => s / x,
            1 => s / (x * x) - c / x,
            2 => (3.0 / x.powi(3) - 1.0 / x) * s - 3.0 * c / (x * x),
            _ => unreachable!(),
        }
    }

    #[test]
    fn matches_closed_forms() {
        for &x in &[0.3, 1.0, 1.99, 2.0, 3.7, 10.0, 25.0] {
            let j = sph_bessel_j(6, x);
            for l in 0..3 {
                assert!((j[l] - closed(l, x)).abs() < 1e-13, "l={l} x={x}");
            }
        }
    }

    #[test]
    fn reduced_branches_agree() {
        for &x in &[2.0, 2.5, 3.0] {
            let a = reduced_series(5, x);
            let b = reduced_bessel(5, x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-13 * v.abs().max(1e-3));
            }
        }
        let g = reduced_bessel(1, 0.0);
        assert!((g[0] - 1.0).abs() < 1e-16);
        assert!((g[1] - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn recurrence_three_term() {
        let x = 7.3;
        let j = sph_bessel_j(10, x);
        for l in 1..10 {
            let lhs = j[l - 1] + j[l + 1];
            let rhs = (2 * l + 1) as f64 / x * j[l];
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }
}
