//! Leray projection, pressure Neumann solves, the Stokes operator with the
//! slip condition, eigenbasis truncation and the Dirichlet form.
//!
//! On the channel every field is a sum of horizontal Fourier waves, so each
//! scalar Neumann problem `(D² - |κ|²) q = f`, `q'(0) = g0`, `q'(1) = g1`
//! is solved independently per wave by a Chebyshev tau method. On the ball
//! only the toroidal sector is supported; there the projection is the
//! identity and the pressure vanishes.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cheb;
use crate::error::{Error, Result};
use crate::field::{CProfile, ChannelField, ChannelScalar, Profile, ScalarField, ToroidalField, VectorField};
use crate::geometry::{Domain, SlipLength};
use crate::jet::{jacobian, values, v_dot, JetVec, Vec3};
use crate::spectrum::{EigenBasis, ModeField};

/// Chebyshev degree of the tau solves.
pub const TAU_DEGREE: usize = 64;
const COMPAT_TOL: f64 = 1e-9;

/// Velocity in one of the supported representations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocityField {
    Channel(ChannelField),
    /// Sum of toroidal fields on the ball.
    Ball(Vec<ToroidalField>),
}

impl VectorField for VelocityField {
    fn jet(&self, x: Vec3) -> JetVec {
        match self {
            VelocityField::Channel(f) => f.jet(x),
            VelocityField::Ball(fs) => {
                let mut out = [crate::jet::Jet::zero(); 3];
                for f in fs {
                    let j = f.jet(x);
                    for a in 0..3 {
                        out[a] += j[a];
                    }
                }
                out
            }
        }
    }
}

impl VelocityField {
    /// `Σ c_k a_k` over the first `c.len()` modes of the basis.
    pub fn from_modes(basis: &EigenBasis, c: &[f64]) -> VelocityField {
        match &basis.modes.first().map(|m| &m.field) {
            Some(ModeField::Ball(_)) => VelocityField::Ball(
                basis
                    .modes
                    .iter()
                    .zip(c)
                    .filter(|(_, c)| **c != 0.0)
                    .map(|(m, c)| match &m.field {
                        ModeField::Ball(t) => ToroidalField { scale: t.scale * c, ..t.clone() },
                        ModeField::Channel(_) => unreachable!("mixed basis"),
                    })
                    .collect(),
            ),
            _ => {
                let (lx, ly) = match basis.domain.shape {
                    crate::geometry::Shape::Channel { lx, ly } => (lx, ly),
                    crate::geometry::Shape::Ball { .. } => (1.0, 1.0),
                };
                let parts: Vec<(f64, &ChannelField)> = basis
                    .modes
                    .iter()
                    .zip(c)
                    .filter_map(|(m, c)| match &m.field {
                        ModeField::Channel(f) => Some((*c, f)),
                        ModeField::Ball(_) => None,
                    })
                    .collect();
                VelocityField::Channel(ChannelField::combine(lx, ly, &parts))
            }
        }
    }

    pub fn scaled(&self, s: f64) -> VelocityField {
        match self {
            VelocityField::Channel(f) => VelocityField::Channel(f.scaled(s)),
            VelocityField::Ball(fs) => VelocityField::Ball(fs.iter().map(|f| ToroidalField { scale: f.scale * s, ..f.clone() }).collect()),
        }
    }

    /// `self + s * other`; both must share the representation.
    pub fn axpy(&self, s: f64, other: &VelocityField) -> Result<VelocityField> {
        match (self, other) {
            (VelocityField::Channel(a), VelocityField::Channel(b)) => {
                Ok(VelocityField::Channel(ChannelField::combine(a.lx, a.ly, &[(1.0, a), (s, b)])))
            }
            (VelocityField::Ball(a), VelocityField::Ball(_)) => {
                let mut v = a.clone();
                if let VelocityField::Ball(b) = other.scaled(s) {
                    v.extend(b);
                }
                Ok(VelocityField::Ball(v))
            }
            _ => Err(Error::Inconsistent("velocity fields live on different domains".into())),
        }
    }
}

/// Zero-mean pressure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PressureField {
    Channel(ChannelScalar),
    Zero,
}

impl ScalarField for PressureField {
    fn jet(&self, x: Vec3) -> crate::jet::Jet {
        match self {
            PressureField::Channel(p) => p.jet(x),
            PressureField::Zero => crate::jet::Jet::zero(),
        }
    }
}

impl PressureField {
    pub fn gradient(&self) -> Option<ChannelField> {
        match self {
            PressureField::Channel(p) => Some(p.gradient()),
            PressureField::Zero => None,
        }
    }
}

/// Chebyshev coefficients of `q` with `q'' - k2 q = f`, `q'(0) = g0`,
/// `q'(1) = g1`. For `k2 = 0` the solution has zero mean and the data must be
/// compatible, `∫f = g1 - g0`.
pub fn neumann_tau(k2: f64, f: &[f64], g0: f64, g1: f64) -> Result<Vec<f64>> {
    let n = TAU_DEGREE.max(f.len().saturating_sub(1));
    let m = n + 1;
    let mut a = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        let d2 = cheb::derivative(&cheb::derivative(&e));
        for (i, v) in d2.iter().enumerate().take(m - 2) {
            a[(i, j)] += v;
        }
        if j < m - 2 {
            a[(j, j)] -= k2;
        }
        let (_, _, d1, d0) = cheb::endpoint_values(j);
        a[(m - 2, j)] = d0;
        a[(m - 1, j)] = d1;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    for (i, v) in f.iter().enumerate().take(m - 2) {
        rhs[i] = *v;
    }
    rhs[m - 2] = g0;
    rhs[m - 1] = g1;
    if k2 == 0.0 {
        let total: f64 = f.iter().enumerate().map(|(i, v)| v * cheb::integral(i)).sum();
        let scale = 1.0 + f.iter().map(|v| v.abs()).sum::<f64>() + g0.abs() + g1.abs();
        if (total - (g1 - g0)).abs() > COMPAT_TOL * scale {
            return Err(Error::Inconsistent(format!(
                "Neumann data incompatible: ∫f = {total:.3e}, flux = {:.3e}",
                g1 - g0
            )));
        }
        // replace the highest tau row by the zero-mean condition
        let r = m - 3;
        for j in 0..m {
            a[(r, j)] = cheb::integral(j);
        }
        rhs[r] = 0.0;
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular tau system".into()))?;
    Ok(sol.iter().copied().collect())
}

fn solve_wave(k2: f64, f: &CProfile, g0: Complex64, g1: Complex64) -> Result<CProfile> {
    let re = neumann_tau(k2, &f.re.to_chebyshev(TAU_DEGREE), g0.re, g1.re)?;
    let im = if f.im.is_zero() && g0.im == 0.0 && g1.im == 0.0 {
        Vec::new()
    } else {
        neumann_tau(k2, &f.im.to_chebyshev(TAU_DEGREE), g0.im, g1.im)?
    };
    Ok(CProfile { re: Profile::chebyshev(re), im: Profile::chebyshev(im) })
}

/// Per-wave solve of `Δq = f` with `∂_z q = g0` at `z = 0`, `g1` at `z = 1`.
fn channel_neumann(f: &ChannelScalar, flux: &[(Complex64, Complex64)]) -> Result<ChannelScalar> {
    let solved: Vec<Result<CProfile>> = f
        .waves
        .par_iter()
        .zip(flux.par_iter())
        .map(|(w, (g0, g1))| {
            let k = crate::field::wavevector(f.lx, f.ly, w.wave);
            solve_wave(k[0] * k[0] + k[1] * k[1], &w.profile, *g0, *g1)
        })
        .collect();
    let mut out = ChannelScalar::new(f.lx, f.ly);
    for (w, p) in f.waves.iter().zip(solved) {
        out.push(w.wave, p?);
    }
    Ok(out)
}

fn wave_endpoint(p: &CProfile, z: f64) -> Complex64 {
    p.value(z)
}

/// `u = P∞u + ∇q` with `P∞u` solenoidal and tangent at the boundary.
pub fn helmholtz_decompose(u: &VelocityField) -> Result<(VelocityField, PressureField)> {
    match u {
        VelocityField::Ball(_) => Ok((u.clone(), PressureField::Zero)),
        VelocityField::Channel(f) => {
            let d = f.divergence();
            let flux: Vec<(Complex64, Complex64)> =
                f.waves.iter().map(|w| (wave_endpoint(&w.comps[2], 0.0), wave_endpoint(&w.comps[2], 1.0))).collect();
            let q = channel_neumann(&d, &flux)?;
            let proj = ChannelField::combine(f.lx, f.ly, &[(1.0, f), (-1.0, &q.gradient())]);
            Ok((VelocityField::Channel(proj), PressureField::Channel(q)))
        }
    }
}

/// Pressure of the Stokes operator for solenoidal `u`: `Δp = 0` with
/// `∂_ν p = (1/ζ)∇^Γ·u - 2∇^Γ·π(u)` on the boundary.
pub fn solve_pressure_neumann(u: &VelocityField, zeta: SlipLength) -> Result<PressureField> {
    match u {
        VelocityField::Ball(_) => Ok(PressureField::Zero),
        VelocityField::Channel(f) => {
            let inv = zeta.inverse();
            let mut flux = Vec::with_capacity(f.waves.len());
            for w in &f.waves {
                let k = f.kappa(w.wave);
                // surface divergence of the wave at each wall
                let sdiv = |z: f64| Complex64::new(0.0, k[0]) * w.comps[0].value(z) + Complex64::new(0.0, k[1]) * w.comps[1].value(z);
                // z = 1: ∂_ν = ∂_z; z = 0: ∂_ν = -∂_z
                flux.push((-inv * sdiv(0.0), inv * sdiv(1.0)));
            }
            let mut rhs = ChannelScalar::new(f.lx, f.ly);
            for w in &f.waves {
                rhs.push(w.wave, CProfile::zero());
            }
            Ok(PressureField::Channel(channel_neumann(&rhs, &flux)?))
        }
    }
}

/// `S u = Δu - ∇p`.
pub fn stokes_apply(u: &VelocityField, zeta: SlipLength) -> Result<VelocityField> {
    match u {
        VelocityField::Ball(fs) => Ok(VelocityField::Ball(
            fs.iter().map(|f| ToroidalField { scale: -f.k * f.k * f.scale, ..f.clone() }).collect(),
        )),
        VelocityField::Channel(f) => {
            let p = solve_pressure_neumann(u, zeta)?;
            let lap = f.laplacian();
            let out = match p.gradient() {
                Some(g) => ChannelField::combine(f.lx, f.ly, &[(1.0, &lap), (-1.0, &g)]),
                None => lap,
            };
            Ok(VelocityField::Channel(out))
        }
    }
}

/// Values of every basis mode on the basis volume grid, for projections.
pub struct Projector {
    pub weights: Vec<f64>,
    pub points: Vec<Vec3>,
    pub modes: Vec<Vec<Vec3>>,
}

impl Projector {
    pub fn new(basis: &EigenBasis) -> Self {
        let grid = basis.domain.volume_grid();
        let modes = basis
            .modes
            .par_iter()
            .map(|m| m.field.sample(&grid.points).iter().map(values).collect())
            .collect();
        Projector { weights: grid.weights, points: grid.points, modes }
    }

    /// Coefficients `∫⟨a_k, u⟩` for the first `n` modes.
    pub fn project(&self, u: &dyn VectorField, n: usize) -> Vec<f64> {
        let uv: Vec<Vec3> = u.sample(&self.points).iter().map(values).collect();
        self.project_values(&uv, n)
    }

    pub fn project_values(&self, uv: &[Vec3], n: usize) -> Vec<f64> {
        self.modes
            .iter()
            .take(n)
            .map(|m| m.iter().zip(uv).zip(&self.weights).map(|((a, u), w)| w * v_dot(a, u)).sum())
            .collect()
    }
}

/// `c_k = ∫⟨a_k, u⟩` for `k < n`.
#[allow(non_snake_case)]
pub fn project_PN(u: &dyn VectorField, basis: &EigenBasis, n: usize) -> Vec<f64> {
    Projector::new(basis).project(u, n)
}

/// `E(u, w) = ∫⟨∇u, ∇w⟩ + (1/ζ)∫_Γ⟨u, w⟩ - ∫_Γ π(u, w)` by quadrature.
pub fn dirichlet_form(u: &dyn VectorField, w: &dyn VectorField, zeta: SlipLength, domain: &Domain) -> f64 {
    let grid = domain.volume_grid();
    let ju = u.sample(&grid.points);
    let jw = w.sample(&grid.points);
    let vol: Vec<f64> = ju
        .iter()
        .zip(&jw)
        .map(|(a, b)| {
            let (ga, gb) = (jacobian(a), jacobian(b));
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += ga[i][j] * gb[i][j];
                }
            }
            s
        })
        .collect();
    let sgrid = domain.surface_grid();
    let pts = sgrid.points();
    let su = u.sample(&pts);
    let sw = w.sample(&pts);
    let mut bnd = 0.0;
    for (k, node) in sgrid.nodes.iter().enumerate() {
        let (a, b) = (values(&su[k]), values(&sw[k]));
        let (ta, tb) = (node.frame.tangent(&a), node.frame.tangent(&b));
        bnd += node.weight * (zeta.inverse() * v_dot(&a, &b) - node.curvature.bilinear(&ta, &tb));
    }
    grid.integrate(&vol) + bnd
}

/// Shared handle for dynamic fields.
pub fn arc<F: VectorField + 'static>(f: F) -> Arc<dyn VectorField> {
    Arc::new(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Term, Wave};
    use crate::jet::{curl, div};
    use crate::spectrum::{build_basis_opts, Cutoffs, Family};
    use std::f64::consts::PI;

    fn channel_u(lx: f64, ly: f64) -> ChannelField {
        let mut f = ChannelField::new(lx, ly);
        let p = Profile::analytic(vec![Term { kind: Wave::Cosh, rate: 1.1, amp: 0.5 }, Term { kind: Wave::Sin, rate: 2.3, amp: 1.0 }]);
        let q = Profile::analytic(vec![Term { kind: Wave::Cos, rate: 0.7, amp: 1.0 }]);
        f.push([1, -1], [CProfile::real(p.clone()), CProfile::times(&q, Complex64::new(0.2, 1.0)), CProfile::real(q.clone())]);
        f.push([0, 1], [CProfile::real(q.clone()), CProfile::zero(), CProfile::times(&p, Complex64::new(0.0, 0.4))]);
        f.push([0, 0], [CProfile::real(p), CProfile::zero(), CProfile::real(q)]);
        f
    }

    #[test]
    fn tau_matches_closed_form_and_difference_oracle() {
        let k: f64 = 2.0 * PI / 3.0;
        let g1 = 0.8;
        let g0 = -0.3;
        let a = neumann_tau(k * k, &[0.0], g0, g1).unwrap();
        // closed form A cosh(k s) + B sinh(k s)
        let (sh, ch) = ((k / 2.0).sinh(), (k / 2.0).cosh());
        let aa = (g1 - g0) / (2.0 * k * sh);
        let bb = (g1 + g0) / (2.0 * k * ch);
        for &z in &[0.0, 0.3, 0.77, 1.0] {
            let s = z - 0.5;
            let exact = aa * (k * s).cosh() + bb * (k * s).sinh();
            assert!((cheb::eval(&a, z) - exact).abs() < 1e-13);
        }
        // second-order finite differences with ghost nodes
        let n = 400;
        let h = 1.0 / n as f64;
        let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
        let mut r = DVector::<f64>::zeros(n + 1);
        for i in 0..=n {
            m[(i, i)] = -2.0 / (h * h) - k * k;
            if i > 0 {
                m[(i, i - 1)] += 1.0 / (h * h);
            } else {
                m[(i, 1)] += 1.0 / (h * h);
                r[i] += 2.0 * g0 / h;
            }
            if i < n {
                m[(i, i + 1)] += 1.0 / (h * h);
            } else {
                m[(i, n - 1)] += 1.0 / (h * h);
                r[i] -= 2.0 * g1 / h;
            }
        }
        let fd = m.lu().solve(&r).unwrap();
        for i in (0..=n).step_by(40) {
            assert!((fd[i] - cheb::eval(&a, i as f64 * h)).abs() < 1e-4);
        }
    }

    #[test]
    fn tau_zero_wave_rejects_incompatible_data() {
        assert!(matches!(neumann_tau(0.0, &[0.0], 0.0, 1.0), Err(Error::Inconsistent(_))));
        let q = neumann_tau(0.0, &[1.0], 0.0, 1.0).unwrap();
        assert!((cheb::eval(&q, 0.3) - (0.5 * 0.09 - 1.0 / 6.0)).abs() < 1e-13);
    }

    #[test]
    fn vertical_cosine_projection() {
        let lx = 2.0;
        let mut f = ChannelField::new(lx, 1.0);
        f.push([1, 0], [CProfile::zero(), CProfile::zero(), CProfile::real(Profile::analytic(vec![Term { kind: Wave::Cos, rate: 0.0, amp: 1.0 }]))]);
        let u = VelocityField::Channel(f);
        let (p, _) = helmholtz_decompose(&u).unwrap();
        for &x in &[[0.1, 0.2, 0.0], [0.7, 0.5, 1.0], [1.3, 0.1, 0.4]] {
            let jp = p.jet(x);
            let ju = u.jet(x);
            let (cp, cu) = (curl(&jp), curl(&ju));
            for a in 0..3 {
                assert!((cp[a].value() - cu[a].value()).abs() < 1e-10);
            }
            assert!(div(&jp).value().abs() < 1e-10);
            if x[2] == 0.0 || x[2] == 1.0 {
                assert!(jp[2].value().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal() {
        let d = Domain::channel(2.0, 1.5).unwrap().with_orders([8, 8, 40], [8, 8]);
        let u = VelocityField::Channel(channel_u(2.0, 1.5));
        let (p, q) = helmholtz_decompose(&u).unwrap();
        let (pp, _) = helmholtz_decompose(&p).unwrap();
        let grid = d.volume_grid();
        let a = p.sample(&grid.points);
        let b = pp.sample(&grid.points);
        let gq = q.gradient().unwrap().sample(&grid.points);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| {
            let (x, y) = (values(x), values(y));
            (0..3).map(|i| (x[i] - y[i]).powi(2)).sum()
        }).collect();
        assert!(grid.integrate(&diff).sqrt() < 1e-10);
        let inner: Vec<f64> = a.iter().zip(&gq).map(|(x, y)| v_dot(&values(x), &values(y))).collect();
        let norm: Vec<f64> = u.sample(&grid.points).iter().map(|j| v_dot(&values(j), &values(j))).collect();
        assert!(grid.integrate(&inner).abs() < 1e-10 * grid.integrate(&norm));
    }

    #[test]
    fn pure_gradient_projects_to_zero() {
        let mut s = ChannelScalar::new(1.0, 1.0);
        s.push([1, 1], CProfile::real(Profile::analytic(vec![Term { kind: Wave::Cosh, rate: 1.5, amp: 1.0 }])));
        s.push([0, 0], CProfile::real(Profile::chebyshev(vec![0.0, 0.3, 0.1, -0.05])));
        let u = VelocityField::Channel(s.gradient());
        let (p, _) = helmholtz_decompose(&u).unwrap();
        for &x in &[[0.1, 0.2, 0.0], [0.4, 0.9, 0.6]] {
            let v = values(&p.jet(x));
            assert!(v.iter().all(|c| c.abs() < 1e-11), "{v:?}");
        }
    }

    #[test]
    fn slip_pressure_closed_form() {
        // u_x = sin(2πx/Lx) at every height: flux (1/ζ)(2π/Lx)cos(2πx/Lx) at z = 1
        let lx = 2.0;
        let zeta = SlipLength::Finite(0.5);
        let mut f = ChannelField::new(lx, 1.0);
        let k = 2.0 * PI / lx;
        // u_z = -k (z - 1/2) cos(kx) keeps the field solenoidal
        f.push([1, 0], [
            CProfile::times(&Profile::analytic(vec![Term { kind: Wave::Cos, rate: 0.0, amp: 1.0 }]), Complex64::new(0.0, -1.0)),
            CProfile::zero(),
            CProfile::real(Profile::chebyshev(vec![0.0, -0.5 * k])),
        ]);
        assert!(f.divergence().jet([0.4, 0.1, 0.3]).value().abs() < 1e-14);
        let p = solve_pressure_neumann(&VelocityField::Channel(f), zeta).unwrap();
        for &x in &[[0.3, 0.0, 0.2], [1.1, 0.0, 0.9]] {
            let s = x[2] - 0.5;
            // outward flux k/ζ cos(kx) on both walls: p = A cosh(k s) cos(kx), A k sinh(k/2) = k/ζ
            let exact = 2.0 / (k / 2.0).sinh() * (k * s).cosh() * (k * x[0]).cos();
            assert!((p.jet(x).value() - exact).abs() < 1e-12, "{} {}", p.jet(x).value(), exact);
        }
        let (solenoidal, _) = helmholtz_decompose(&VelocityField::Channel(channel_u(1.0, 1.0))).unwrap();
        let free = solve_pressure_neumann(&solenoidal, SlipLength::Infinite).unwrap();
        assert!(free.jet([0.2, 0.3, 0.4]).value().abs() < 1e-12, "{}", free.jet([0.2, 0.3, 0.4]).value());
    }

    #[test]
    fn stokes_operator_on_modes_and_linearity() {
        let zeta = SlipLength::Finite(1.0);
        let d = Domain::channel(2.0, 2.0).unwrap().with_orders([6, 6, 40], [6, 6]);
        let b = build_basis_opts(&d, zeta, Cutoffs { kappa: 1, n: 1 }, false).unwrap();
        let grid = d.volume_grid();
        for (k, m) in b.modes.iter().enumerate().filter(|(_, m)| m.family == Family::Poloidal).take(2) {
            let mut c = vec![0.0; b.len()];
            c[k] = 1.0;
            let u = VelocityField::from_modes(&b, &c);
            let su = stokes_apply(&u, zeta).unwrap();
            let r: Vec<f64> = su.sample(&grid.points).iter().zip(u.sample(&grid.points)).map(|(s, a)| {
                let (s, a) = (values(s), values(&a));
                (0..3).map(|i| (s[i] - m.lambda * a[i]).powi(2)).sum()
            }).collect();
            assert!(grid.integrate(&r).sqrt() < 1e-8);
            let e = dirichlet_form(&u, &u, zeta, &d);
            assert!((e + m.lambda).abs() < 1e-8 * m.lambda.abs());
        }
        let c1: Vec<f64> = (0..b.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let c2: Vec<f64> = (0..b.len()).map(|i| (i as f64 * 0.91).cos()).collect();
        let u = VelocityField::from_modes(&b, &c1);
        let w = VelocityField::from_modes(&b, &c2);
        let s_sum = stokes_apply(&u.scaled(2.0).axpy(-3.0, &w).unwrap(), zeta).unwrap();
        let sum_s = stokes_apply(&u, zeta).unwrap().scaled(2.0).axpy(-3.0, &stokes_apply(&w, zeta).unwrap()).unwrap();
        let x = [0.3, 1.2, 0.8];
        let (a, bb) = (values(&s_sum.jet(x)), values(&sum_s.jet(x)));
        for i in 0..3 {
            assert!((a[i] - bb[i]).abs() < 1e-10 * (1.0 + a[i].abs()));
        }
        let e1 = dirichlet_form(&u, &w, zeta, &d);
        let e2 = dirichlet_form(&w, &u, zeta, &d);
        assert_eq!(e1, e2);
    }

    #[test]
    fn truncation_projector() {
        let d = Domain::channel(1.0, 1.0).unwrap().with_orders([6, 6, 40], [6, 6]);
        let b = build_basis_opts(&d, SlipLength::Finite(2.0), Cutoffs { kappa: 1, n: 1 }, false).unwrap();
        let mut c = vec![0.0; b.len()];
        c[3] = 1.0;
        let u = VelocityField::from_modes(&b, &c);
        let pr = Projector::new(&b);
        let full = pr.project(&u, b.len());
        for (i, v) in full.iter().enumerate() {
            assert!((v - c[i]).abs() < 1e-10);
        }
        assert!(pr.project(&u, 3).iter().all(|v| v.abs() < 1e-10));

        // Bessel and monotone Dirichlet energy of partial sums
        let zeta = SlipLength::Finite(2.0);
        let (w, _) = helmholtz_decompose(&VelocityField::Channel(channel_u(1.0, 1.0))).unwrap();
        let grid = d.volume_grid();
        let norm2 = |f: &VelocityField| -> f64 {
            let v: Vec<f64> = f.sample(&grid.points).iter().map(|j| v_dot(&values(j), &values(j))).collect();
            grid.integrate(&v)
        };
        let total = norm2(&w);
        let c = pr.project(&w, b.len());
        let (mut prev_norm, mut prev_e) = (0.0, 0.0);
        for n in [1, 5, 12, b.len()] {
            let mut cn = c.clone();
            cn[n..].iter_mut().for_each(|v| *v = 0.0);
            let pn = VelocityField::from_modes(&b, &cn);
            let nn = norm2(&pn);
            let partial: f64 = cn.iter().map(|v| v * v).sum();
            assert!((nn - partial).abs() < 1e-10 * total.max(1.0));
            assert!(nn >= prev_norm - 1e-12 && nn <= total + 1e-12);
            let e = dirichlet_form(&pn, &pn, zeta, &d);
            assert!(e >= prev_e - 1e-10);
            prev_norm = nn;
            prev_e = e;
        }
        assert!(prev_e <= dirichlet_form(&w, &w, zeta, &d) + 1e-10);
    }
}
