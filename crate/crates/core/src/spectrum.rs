//! Stokes eigenbasis with the Navier slip condition.
//!
//! Channel modes come in three families for each horizontal wavevector κ:
//!
//! * shear (κ = 0): `(g(z), 0, 0)` and `(0, g(z), 0)`;
//! * toroidal: `κ̂⊥ g(z) e^{iκ·x}` with zero pressure;
//! * poloidal: vertical velocity `w(z) e^{iκ·x}`, horizontal part
//!   `iκ w'(z)/|κ|² e^{iκ·x}`.
//!
//! On a flat wall with outward normal ν the slip condition for a tangent
//! field reads `∂_ν u_t = -u_t/ζ`. For `g(z) = cos(k(z - ½))` this gives
//! `k tan(k/2) = 1/ζ`, for `g(z) = sin(k(z - ½))` it gives
//! `k cot(k/2) = -1/ζ`; the eigenvalue is `-k² - |κ|²`. For the poloidal
//! family the conditions are `w = 0` and `w'' = ∓w'/ζ` at `z = 1` and
//! `z = 0`, and the profiles are `A cosh(|κ|s) + cos(ms)` or
//! `A sinh(|κ|s) + sin(ms)` with `s = z - ½` and `λ = -(m² + |κ|²)`.
//!
//! On the ball the toroidal fields `∇ψ × x` with `ψ = j_l(kr) Y_lm`
//! satisfy the slip condition iff `(l - 1 + R/ζ) j_l(kR) = kR j_{l+1}(kR)`,
//! with `λ = -k²`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cheb;
use crate::error::{Error, Result};
use crate::field::{wavevector, CProfile, ChannelField, ChannelScalar, Profile, ScalarField, Term, ToroidalField, VectorField, Wave};
use crate::geometry::{
    navier_residual, tangential_divergence, BoundaryField, Domain, Shape, SlipLength, TangentVector,
};
use crate::jet::{curl, div, values, vec_laplacian, v_dot, Vec3};
use crate::quadrature::{bisect, gauss_legendre_on};

pub const CODE_VERSION: &str = concat!("slipstokes-", env!("CARGO_PKG_VERSION"), "-basis1");

pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
pub const NAVIER_TOL: f64 = 1e-7;
pub const NORM_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const DRIFT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Shear,
    Toroidal,
    Poloidal,
    BallToroidal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
}

const HALF: f64 = 0.5;

fn slip_weights(zeta: SlipLength) -> (f64, f64) {
    match zeta {
        SlipLength::Infinite => (1.0, 0.0),
        SlipLength::Finite(z) => (z / (1.0 + z), 1.0 / (1.0 + z)),
    }
}

/// First `count` roots of the channel Robin relation for one parity, strictly
/// increasing and one per branch interval.
pub fn shear_mode_roots(zeta: SlipLength, parity: Parity, count: usize) -> Vec<f64> {
    let (a, b) = slip_weights(zeta);
    (0..count)
        .map(|j| {
            let j = j as f64;
            match parity {
                Parity::Even => {
                    // a k sin(k/2) - b cos(k/2) on (2πj, 2πj + π)
                    let (lo, hi) = (2.0 * PI * j, 2.0 * PI * j + PI);
                    if b == 0.0 {
                        return lo;
                    }
                    let f = |k: f64| a * k * (k * HALF).sin() - b * (k * HALF).cos();
                    bisect(f, lo, hi).expect("even branch bracket")
                }
                Parity::Odd => {
                    // a k cos(k/2) + b sin(k/2) on (2πj + π, 2πj + 2π)
                    let (lo, hi) = (2.0 * PI * j + PI, 2.0 * PI * j + 2.0 * PI);
                    if b == 0.0 {
                        return lo;
                    }
                    let f = |k: f64| a * k * (k * HALF).cos() + b * (k * HALF).sin();
                    bisect(f, lo, hi).expect("odd branch bracket")
                }
            }
        })
        .collect()
}

/// The first `count` vertical Robin roots across both parities, by increasing k.
pub fn vertical_roots(zeta: SlipLength, count: usize) -> Vec<(Parity, f64)> {
    let mut all: Vec<(Parity, f64)> = shear_mode_roots(zeta, Parity::Even, count)
        .into_iter()
        .map(|k| (Parity::Even, k))
        .chain(shear_mode_roots(zeta, Parity::Odd, count).into_iter().map(|k| (Parity::Odd, k)))
        .collect();
    all.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap().then(x.0.cmp(&y.0)));
    all.truncate(count);
    all
}

fn robin_profile(parity: Parity, k: f64) -> Profile {
    let kind = match parity {
        Parity::Even => Wave::Cos,
        Parity::Odd => Wave::Sin,
    };
    Profile::analytic(vec![Term { kind, rate: k, amp: 1.0 }])
}

/// Poloidal dispersion function (scaled to stay bounded as ζ → 0).
pub fn poloidal_dispersion(kappa: f64, zeta: SlipLength, parity: Parity, m: f64) -> f64 {
    let (a, b) = slip_weights(zeta);
    let q = m * m + kappa * kappa;
    let (s, c) = (m * HALF).sin_cos();
    match parity {
        Parity::Even => -a * q * c - b * (m * s + kappa * (kappa * HALF).tanh() * c),
        Parity::Odd => -a * q * s + b * (m * c - kappa / (kappa * HALF).tanh() * s),
    }
}

fn poloidal_profile(kappa: f64, parity: Parity, m: f64) -> Profile {
    match parity {
        Parity::Even => {
            let amp = -(m * HALF).cos() / (kappa * HALF).cosh();
            Profile::analytic(vec![
                Term { kind: Wave::Cosh, rate: kappa, amp },
                Term { kind: Wave::Cos, rate: m, amp: 1.0 },
            ])
        }
        Parity::Odd => {
            let amp = -(m * HALF).sin() / (kappa * HALF).sinh();
            Profile::analytic(vec![
                Term { kind: Wave::Sinh, rate: kappa, amp },
                Term { kind: Wave::Sin, rate: m, amp: 1.0 },
            ])
        }
    }
}

/// One poloidal vertical mode of the reduced 1-D problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoloidalRoot {
    pub parity: Parity,
    pub m: f64,
    pub lambda: f64,
    /// Eigenvalue of the discrete problem at the base resolution.
    pub discrete_lambda: f64,
    /// Relative change of the discrete eigenvalue under resolution doubling.
    pub drift: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PoloidalSolve {
    pub roots: Vec<PoloidalRoot>,
    /// Discrete eigenvalues rejected by the doubling test, with their drift.
    pub excluded: Vec<(f64, f64)>,
}

/// Eigenvalues (ascending `σ = -λ`) and parities of the weak form
/// `∫ w''v'' + 2κ² w'v' + κ⁴ wv + (1/ζ)[w'v']_walls = σ ∫ w'v' + κ² wv`
/// over polynomials vanishing at both walls, `m` basis functions.
fn poloidal_discrete(kappa: f64, zeta: SlipLength, m: usize) -> Result<Vec<(f64, Parity)>> {
    let k2 = kappa * kappa;
    let nq = m + 12;
    let (zs, ws) = gauss_legendre_on(nq, 0.0, 1.0);
    let mut v = vec![vec![0.0; nq]; m];
    let mut d1 = vec![vec![0.0; nq]; m];
    let mut d2 = vec![vec![0.0; nq]; m];
    let mut ends = vec![(0.0, 0.0); m];
    for j in 0..m {
        let mut c = vec![0.0; j + 3];
        c[j] = 1.0;
        c[j + 2] = -1.0;
        let c1 = cheb::derivative(&c);
        let c2 = cheb::derivative(&c1);
        for q in 0..nq {
            v[j][q] = cheb::eval(&c, zs[q]);
            d1[j][q] = cheb::eval(&c1, zs[q]);
            d2[j][q] = cheb::eval(&c2, zs[q]);
        }
        ends[j] = (cheb::eval(&c1, 0.0), cheb::eval(&c1, 1.0));
    }
    let inv = zeta.inverse();
    let mut kmat = DMatrix::<f64>::zeros(m, m);
    let mut mmat = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let mut kk = 0.0;
            let mut mm = 0.0;
            for q in 0..nq {
                kk += ws[q] * (d2[i][q] * d2[j][q] + 2.0 * k2 * d1[i][q] * d1[j][q] + k2 * k2 * v[i][q] * v[j][q]);
                mm += ws[q] * (d1[i][q] * d1[j][q] + k2 * v[i][q] * v[j][q]);
            }
            kk += inv * (ends[i].0 * ends[j].0 + ends[i].1 * ends[j].1);
            kmat[(i, j)] = kk;
            kmat[(j, i)] = kk;
            mmat[(i, j)] = mm;
            mmat[(j, i)] = mm;
        }
    }
    let chol = mmat
        .cholesky()
        .ok_or_else(|| Error::Numerical("poloidal mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let c = &linv * kmat * linv.transpose();
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let mut out: Vec<(f64, Parity)> = Vec::with_capacity(m);
    for idx in 0..m {
        let y = eig.eigenvectors.column(idx);
        let x = linv.transpose() * DVector::from_column_slice(y.as_slice());
        let even: f64 = x.iter().enumerate().filter(|(j, _)| j % 2 == 0).map(|(_, v)| v * v).sum();
        let odd: f64 = x.iter().enumerate().filter(|(j, _)| j % 2 == 1).map(|(_, v)| v * v).sum();
        let parity = if even >= odd { Parity::Even } else { Parity::Odd };
        out.push((eig.eigenvalues[idx], parity));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(out)
}

/// Poloidal vertical modes for `|κ| > 0`: the `count` least negative
/// eigenvalues of the reduced fourth-order problem. Eigenvalues come from a
/// symmetric polynomial Galerkin discretisation at `resolution` and at twice
/// that, are kept only if they agree to [`DRIFT_TOL`], and are then refined
/// on the exact dispersion relation.
pub fn poloidal_modes_collocation(kappa: f64, zeta: SlipLength, count: usize, resolution: usize) -> Result<PoloidalSolve> {
    if !(kappa > 0.0) {
        return Err(Error::Parameter("poloidal modes need |κ| > 0".into()));
    }
    let m = resolution.max(4 * count + 16);
    let coarse = poloidal_discrete(kappa, zeta, m)?;
    let fine = poloidal_discrete(kappa, zeta, 2 * m)?;
    let mut solve = PoloidalSolve::default();
    for parity in [Parity::Even, Parity::Odd] {
        let c: Vec<f64> = coarse.iter().filter(|e| e.1 == parity).map(|e| e.0).collect();
        let f: Vec<f64> = fine.iter().filter(|e| e.1 == parity).map(|e| e.0).collect();
        for (i, sigma) in c.iter().enumerate().take(count + 2) {
            let drift = f.get(i).map_or(f64::INFINITY, |s| ((s - sigma) / s).abs());
            if drift >= DRIFT_TOL {
                solve.excluded.push((-sigma, drift));
                continue;
            }
            let m_est = (f[i] - kappa * kappa).max(0.0).sqrt();
            let g = |mm: f64| poloidal_dispersion(kappa, zeta, parity, mm);
            let mut root = None;
            let mut delta = 1e-7 * m_est.max(1.0);
            while delta < 0.5 {
                let lo = (m_est - delta).max(1e-12);
                if let Some(r) = bisect(g, lo, m_est + delta) {
                    root = Some(r);
                    break;
                }
                delta *= 4.0;
            }
            let Some(mr) = root else {
                solve.excluded.push((-sigma, drift));
                continue;
            };
            let lambda = -(mr * mr + kappa * kappa);
            if ((lambda + sigma) / lambda).abs() >= DRIFT_TOL {
                solve.excluded.push((-sigma, drift));
                continue;
            }
            solve.roots.push(PoloidalRoot { parity, m: mr, lambda, discrete_lambda: -sigma, drift });
        }
    }
    solve.roots.sort_by(|a, b| b.lambda.partial_cmp(&a.lambda).unwrap());
    solve.roots.dedup_by(|a, b| (a.m - b.m).abs() < 1e-9 * a.m.max(1.0) && a.parity == b.parity);
    solve.roots.truncate(count);
    Ok(solve)
}

/// Robin roots `k` of the ball toroidal family of degree `l`.
pub fn ball_toroidal_roots(l: usize, zeta: SlipLength, radius: f64, count: usize) -> Result<Vec<f64>> {
    if l == 0 {
        return Err(Error::Parameter("toroidal degree must be at least 1".into()));
    }
    let c = (l as f64 - 1.0) + radius * zeta.inverse();
    let h = |x: f64| {
        let g = crate::special::reduced_bessel(l + 1, x);
        (c * g[l] - x * x * g[l + 1]) / (1.0 + c)
    };
    let mut roots = Vec::with_capacity(count);
    if c == 0.0 {
        roots.push(0.0);
    }
    let step = 0.05;
    let mut x0 = 1e-3;
    let mut f0 = h(x0);
    let limit = (count as f64 + l as f64 + 4.0) * PI + 10.0;
    while roots.len() < count {
        let x1 = x0 + step;
        if x1 > limit {
            return Err(Error::Numerical(format!("toroidal root search failed for l={l}")));
        }
        let f1 = h(x1);
        if f0 == 0.0 || f0.signum() != f1.signum() {
            let r = bisect(h, x0, x1).ok_or_else(|| Error::Numerical("toroidal bracket lost".into()))?;
            roots.push(r / radius);
        }
        x0 = x1;
        f0 = f1;
    }
    Ok(roots)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeField {
    Channel(ChannelField),
    Ball(ToroidalField),
}

impl VectorField for ModeField {
    fn jet(&self, x: Vec3) -> crate::jet::JetVec {
        match self {
            ModeField::Channel(f) => f.jet(x),
            ModeField::Ball(f) => f.jet(x),
        }
    }
}

/// One Stokes eigenpair with its pressure companion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenMode {
    pub family: Family,
    /// Horizontal wave index `(p, q)` on the channel, `(l, m)` on the ball.
    pub wave: [i32; 2],
    /// Vertical or radial mode number, starting at 1.
    pub n: usize,
    /// 0: cosine phase or x-direction shear; 1: sine phase or y-direction.
    pub phase: u8,
    pub parity: Option<Parity>,
    pub lambda: f64,
    pub field: ModeField,
    /// `None` when the pressure vanishes identically.
    pub pressure: Option<ChannelScalar>,
}

impl EigenMode {
    pub fn label(&self) -> String {
        format!("{:?}[{},{}] n={} phase={}", self.family, self.wave[0], self.wave[1], self.n, self.phase)
    }

    fn sort_key(&self) -> (Family, [i32; 2], usize, u8) {
        (self.family, self.wave, self.n, self.phase)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoffs {
    /// Channel: `max(|p|, |q|)`; ball: maximum degree `l`.
    pub kappa: u32,
    /// Number of vertical (radial) modes per family and wave.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenBasis {
    pub version: String,
    pub domain: Domain,
    pub zeta: SlipLength,
    pub cutoffs: Cutoffs,
    pub modes: Vec<EigenMode>,
    /// `max(0, max λ)`.
    pub lambda_hat: f64,
    pub excluded: Vec<String>,
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }

    /// The first `n` modes as a new basis.
    pub fn truncated(&self, n: usize) -> EigenBasis {
        let mut b = self.clone();
        b.modes.truncate(n);
        b
    }
}

/// Quadrature orders adequate for triple products of modes within the cutoffs.
pub fn suggested_orders(shape: &Shape, cutoffs: Cutoffs) -> ([usize; 3], [usize; 2]) {
    match shape {
        Shape::Channel { .. } => {
            let h = 4 * cutoffs.kappa as usize + 2;
            ([h, h, 8 * cutoffs.n + 24], [h, h])
        }
        Shape::Ball { .. } => {
            let l = cutoffs.kappa as usize;
            ([8 * cutoffs.n + 24, 2 * l + 4, 4 * l + 8], [2 * l + 4, 4 * l + 8])
        }
    }
}

fn normalise_channel(f: &ChannelField, kappa_zero: bool) -> f64 {
    let (zs, ws) = gauss_legendre_on(160, 0.0, 1.0);
    let mut s = 0.0;
    for (z, w) in zs.iter().zip(&ws) {
        for wc in &f.waves {
            for c in &wc.comps {
                let v = c.value(*z);
                s += w * if kappa_zero { v.re * v.re } else { 0.5 * v.norm_sqr() };
            }
        }
    }
    (f.lx * f.ly * s).sqrt()
}

fn channel_mode(
    lx: f64,
    ly: f64,
    family: Family,
    wave: [i32; 2],
    n: usize,
    phase: u8,
    parity: Parity,
    lambda: f64,
    comps: [CProfile; 3],
    pressure: Option<CProfile>,
) -> EigenMode {
    let mut f = ChannelField::new(lx, ly);
    f.push(wave, comps);
    let norm = normalise_channel(&f, wave == [0, 0]);
    let field = f.scaled(1.0 / norm);
    let pressure = pressure.map(|p| {
        let mut s = ChannelScalar::new(lx, ly);
        s.push(wave, p);
        s.scaled(1.0 / norm)
    });
    EigenMode { family, wave, n, phase, parity: Some(parity), lambda, field: ModeField::Channel(field), pressure }
}

fn channel_modes(lx: f64, ly: f64, zeta: SlipLength, cutoffs: Cutoffs, resolution: usize) -> Result<(Vec<EigenMode>, Vec<String>)> {
    let mut modes = Vec::new();
    let mut excluded = Vec::new();
    let roots = vertical_roots(zeta, cutoffs.n);
    let zero = CProfile::zero;
    for (i, (parity, k)) in roots.iter().enumerate() {
        let g = CProfile::real(robin_profile(*parity, *k));
        let lambda = -k * k;
        modes.push(channel_mode(lx, ly, Family::Shear, [0, 0], i + 1, 0, *parity, lambda, [g.clone(), zero(), zero()], None));
        modes.push(channel_mode(lx, ly, Family::Shear, [0, 0], i + 1, 1, *parity, lambda, [zero(), g, zero()], None));
    }
    let kc = cutoffs.kappa as i32;
    let mut waves = Vec::new();
    for p in 0..=kc {
        for q in -kc..=kc {
            if p > 0 || q > 0 {
                waves.push([p, q]);
            }
        }
    }
    let phases = [Complex64::new(1.0, 0.0), Complex64::new(0.0, -1.0)];
    let per_wave: Vec<Result<(Vec<EigenMode>, Vec<String>)>> = waves
        .par_iter()
        .map(|&wave| {
            let kv = wavevector(lx, ly, wave);
            let kk = kv[0].hypot(kv[1]);
            let mut out = Vec::new();
            let mut excl = Vec::new();
            for (i, (parity, k)) in roots.iter().enumerate() {
                let g = robin_profile(*parity, *k);
                let lambda = -k * k - kk * kk;
                for (ph, c) in phases.iter().enumerate() {
                    let comps = [
                        CProfile::times(&g, *c * (-kv[1] / kk)),
                        CProfile::times(&g, *c * (kv[0] / kk)),
                        CProfile::zero(),
                    ];
                    out.push(channel_mode(lx, ly, Family::Toroidal, wave, i + 1, ph as u8, *parity, lambda, comps, None));
                }
            }
            let pol = poloidal_modes_collocation(kk, zeta, cutoffs.n, resolution)?;
            for (lam, drift) in &pol.excluded {
                excl.push(format!("poloidal {wave:?}: discrete λ={lam:.6e} drift={drift:.2e}"));
            }
            if pol.roots.len() < cutoffs.n {
                return Err(Error::Numerical(format!("only {} converged poloidal modes for {wave:?}", pol.roots.len())));
            }
            for (i, r) in pol.roots.iter().enumerate() {
                let w = poloidal_profile(kk, r.parity, r.m);
                let dw = w.derivative();
                let d3 = dw.derivative().derivative();
                // p = [(D² - κ²)w' - λ w'] / κ²
                let p = d3.add(&dw.scale(-kk * kk - r.lambda)).scale(1.0 / (kk * kk));
                for (ph, c) in phases.iter().enumerate() {
                    let ih = Complex64::new(0.0, 1.0) * *c / (kk * kk);
                    let comps = [CProfile::times(&dw, ih * kv[0]), CProfile::times(&dw, ih * kv[1]), CProfile::times(&w, *c)];
                    out.push(channel_mode(
                        lx, ly, Family::Poloidal, wave, i + 1, ph as u8, r.parity, r.lambda, comps,
                        Some(CProfile::times(&p, *c)),
                    ));
                }
            }
            Ok((out, excl))
        })
        .collect();
    for r in per_wave {
        let (m, e) = r?;
        modes.extend(m);
        excluded.extend(e);
    }
    Ok((modes, excluded))
}

/// Toroidal eigenmodes of degree `l` on the ball, all orders `m`.
pub fn ball_toroidal_modes(l: usize, zeta: SlipLength, radius: f64, count: usize) -> Result<Vec<EigenMode>> {
    let roots = ball_toroidal_roots(l, zeta, radius, count)?;
    let norm_domain = Domain::ball(radius)?.with_orders([64, l + 3, 2 * l + 4], [l + 3, 2 * l + 4]);
    let grid = norm_domain.volume_grid();
    let mut out = Vec::new();
    for (i, k) in roots.iter().enumerate() {
        for m in -(l as i32)..=(l as i32) {
            let raw = ToroidalField { l, m, k: *k, scale: 1.0 };
            let vals: Vec<f64> = raw.sample(&grid.points).iter().map(|j| {
                let v = values(j);
                v_dot(&v, &v)
            }).collect();
            let norm = grid.integrate(&vals).sqrt();
            out.push(EigenMode {
                family: Family::BallToroidal,
                wave: [l as i32, m],
                n: i + 1,
                phase: 0,
                parity: None,
                lambda: -k * k,
                field: ModeField::Ball(ToroidalField { scale: 1.0 / norm, ..raw }),
                pressure: None,
            });
        }
    }
    Ok(out)
}

/// Diagnostics of a single mode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeDiagnostics {
    pub eigen_residual: f64,
    pub norm_defect: f64,
    pub navier_residual: f64,
    pub divergence: f64,
    pub normal_trace: f64,
    /// `⟨ψ,ν⟩ + (1/ζ)∇^Γ·u - 2∇^Γ·π(u)` with `ψ = -Δu`, relative.
    pub trace_normal: f64,
    /// `(∇×ψ)^∥ - (1/ζ)∗(λu) + 2∗π(λu)`, relative.
    pub trace_curl: f64,
    pub spectral_tail: f64,
}

impl ModeDiagnostics {
    pub fn failures(&self) -> Vec<String> {
        let mut f = Vec::new();
        let checks = [
            ("eigen_residual", self.eigen_residual, EIGEN_RESIDUAL_TOL),
            ("norm_defect", self.norm_defect, NORM_TOL),
            ("navier_residual", self.navier_residual, NAVIER_TOL),
            ("divergence", self.divergence, TRACE_TOL),
            ("normal_trace", self.normal_trace, TRACE_TOL),
            ("trace_normal", self.trace_normal, 1e-9),
            ("trace_curl", self.trace_curl, 1e-9),
        ];
        for (name, v, tol) in checks {
            if !(v <= tol) {
                f.push(format!("{name}={v:.3e} > {tol:.0e}"));
            }
        }
        f
    }

    pub fn passes(&self) -> bool {
        self.failures().is_empty()
    }
}

/// Validation grid for a mode: the domain grid for the ball, a grid sized to
/// the mode's wavenumber on the channel.
fn validation_domain(domain: &Domain, mode: &EigenMode) -> Domain {
    match domain.shape {
        Shape::Channel { .. } => {
            let nx = 4 * mode.wave[0].unsigned_abs() as usize + 4;
            let ny = 4 * mode.wave[1].unsigned_abs() as usize + 4;
            domain.clone().with_orders([nx, ny, domain.volume_order[2].max(40)], [nx, ny])
        }
        Shape::Ball { .. } => domain.clone(),
    }
}

/// Eigen-residual, orthonormality, trace and slip checks for one mode.
pub fn validate_mode(mode: &EigenMode, domain: &Domain, zeta: SlipLength) -> ModeDiagnostics {
    validate_mode_with(mode, mode.lambda, domain, zeta)
}

/// As [`validate_mode`] but testing the pair `(lambda, a)`.
pub fn validate_mode_with(mode: &EigenMode, lambda: f64, domain: &Domain, zeta: SlipLength) -> ModeDiagnostics {
    let vd = validation_domain(domain, mode);
    let grid = vd.volume_grid();
    let jets = mode.field.sample(&grid.points);
    let pjets: Option<Vec<_>> = mode.pressure.as_ref().map(|p| p.sample(&grid.points));
    let mut res = Vec::with_capacity(grid.len());
    let mut norm = Vec::with_capacity(grid.len());
    let mut divergence: f64 = 0.0;
    for (i, j) in jets.iter().enumerate() {
        let lap = vec_laplacian(j);
        let gp = pjets.as_ref().map(|p| p[i].grad()).unwrap_or([0.0; 3]);
        let u = values(j);
        let mut r2 = 0.0;
        for a in 0..3 {
            let r = lap[a].value() - gp[a] - lambda * u[a];
            r2 += r * r;
        }
        res.push(r2);
        norm.push(v_dot(&u, &u));
        divergence = divergence.max(div(j).value().abs());
    }
    let eigen_residual = grid.integrate(&res).sqrt();
    let norm_defect = (grid.integrate(&norm).sqrt() - 1.0).abs();

    let sgrid = vd.surface_grid();
    let pts = sgrid.points();
    let sj = mode.field.sample(&pts);
    let u_b = BoundaryField::new(sgrid.clone(), sj.iter().map(values).collect()).unwrap();
    let w_b = BoundaryField::new(sgrid.clone(), sj.iter().map(|j| values(&curl(j))).collect()).unwrap();
    let nav = navier_residual(&u_b, &w_b, zeta).expect("slip length validated");
    let navier = nav.field.values.iter().map(|t| t.norm()).fold(0.0, f64::max);
    let normal_trace = sgrid
        .nodes
        .iter()
        .zip(&u_b.values)
        .map(|(n, u)| n.frame.normal_part(u).abs())
        .fold(0.0, f64::max);

    // trace identities with ψ = -Δu and S(u) = λu
    let ut = u_b.map(|n, u| n.frame.tangent(u));
    let put = ut.map(|n, t| n.curvature.apply(t));
    let div_u = tangential_divergence(&ut);
    let div_pu = tangential_divergence(&put);
    let mut tn: f64 = 0.0;
    let mut tn_scale: f64 = 1.0;
    let mut tc: f64 = 0.0;
    let mut tc_scale: f64 = 1.0;
    for (k, node) in sgrid.nodes.iter().enumerate() {
        let j = &sj[k];
        let lap = vec_laplacian(j);
        let psi = [-lap[0].value(), -lap[1].value(), -lap[2].value()];
        let psi_n = node.frame.normal_part(&psi);
        let r = psi_n + zeta.inverse() * div_u.field.values[k] - 2.0 * div_pu.field.values[k];
        tn = tn.max(r.abs());
        tn_scale = tn_scale.max(psi_n.abs()).max((zeta.inverse() * div_u.field.values[k]).abs());
        let psi_j = [-lap[0], -lap[1], -lap[2]];
        let cpsi = values(&curl(&psi_j));
        let cpt = node.frame.tangent(&cpsi);
        let su = ut.values[k].scale(lambda);
        let rhs = crate::geometry::hodge_star(su)
            .scale(zeta.inverse())
            .add(&crate::geometry::hodge_star(node.curvature.apply(&su)).scale(-2.0));
        let d = TangentVector([cpt.0[0] - rhs.0[0], cpt.0[1] - rhs.0[1]]);
        tc = tc.max(d.norm());
        tc_scale = tc_scale.max(cpt.norm()).max(rhs.norm());
    }
    ModeDiagnostics {
        eigen_residual,
        norm_defect,
        navier_residual: navier,
        divergence,
        normal_trace,
        trace_normal: tn / tn_scale,
        trace_curl: tc / tc_scale,
        spectral_tail: nav.tail.max(div_u.tail).max(div_pu.tail),
    }
}

/// Gram matrix of the basis on the domain's volume grid.
pub fn gram_matrix(basis: &EigenBasis) -> DMatrix<f64> {
    let grid = basis.domain.volume_grid();
    let vals: Vec<Vec<Vec3>> = basis
        .modes
        .iter()
        .map(|m| m.field.sample(&grid.points).iter().map(values).collect())
        .collect();
    let n = basis.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..grid.len()).map(|q| grid.weights[q] * v_dot(&vals[i][q], &vals[j][q])).sum();
            g[(i, j)] = s;
            g[(j, i)] = s;
        }
    }
    g
}

/// Builds, sorts (λ nonincreasing) and validates the eigenbasis.
pub fn build_basis(domain: &Domain, zeta: SlipLength, cutoffs: Cutoffs) -> Result<EigenBasis> {
    build_basis_opts(domain, zeta, cutoffs, true)
}

pub fn build_basis_opts(domain: &Domain, zeta: SlipLength, cutoffs: Cutoffs, validate: bool) -> Result<EigenBasis> {
    if cutoffs.n == 0 {
        return Err(Error::Parameter("cutoff n must be positive".into()));
    }
    let (mut modes, excluded) = match domain.shape {
        Shape::Channel { lx, ly } => channel_modes(lx, ly, zeta, cutoffs, 4 * cutoffs.n + 24)?,
        Shape::Ball { radius } => {
            if cutoffs.kappa == 0 {
                return Err(Error::Parameter("ball cutoff needs degree ≥ 1".into()));
            }
            let mut m = Vec::new();
            for l in 1..=cutoffs.kappa as usize {
                m.extend(ball_toroidal_modes(l, zeta, radius, cutoffs.n)?);
            }
            (m, Vec::new())
        }
    };
    modes.sort_by(|a, b| b.lambda.partial_cmp(&a.lambda).unwrap().then(a.sort_key().cmp(&b.sort_key())));
    let max_lambda = modes.iter().map(|m| m.lambda).fold(f64::NEG_INFINITY, f64::max);
    let basis = EigenBasis {
        version: CODE_VERSION.to_string(),
        domain: domain.clone(),
        zeta,
        cutoffs,
        modes,
        lambda_hat: max_lambda.max(0.0),
        excluded,
    };
    if validate {
        let diags: Vec<(String, ModeDiagnostics)> = basis
            .modes
            .par_iter()
            .map(|m| (m.label(), validate_mode(m, domain, zeta)))
            .collect();
        for (label, d) in diags {
            let f = d.failures();
            if !f.is_empty() {
                return Err(Error::Validation(format!("{label}: {}", f.join(", "))));
            }
        }
    }
    Ok(basis)
}

/// Summary of a full validation pass over a basis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisReport {
    pub modes: usize,
    pub max_eigen_residual: f64,
    pub max_navier_residual: f64,
    pub max_divergence: f64,
    pub max_normal_trace: f64,
    pub max_norm_defect: f64,
    pub max_trace_normal: f64,
    pub max_trace_curl: f64,
    pub gram_defect: f64,
    pub max_lambda: f64,
    pub lambda_hat: f64,
    pub nonincreasing: bool,
    pub failures: Vec<String>,
}

pub fn basis_report(basis: &EigenBasis) -> BasisReport {
    let diags: Vec<(String, ModeDiagnostics)> = basis
        .modes
        .par_iter()
        .map(|m| (m.label(), validate_mode(m, &basis.domain, basis.zeta)))
        .collect();
    let g = gram_matrix(basis);
    let n = basis.len();
    let gram_defect = (&g - DMatrix::<f64>::identity(n, n)).amax();
    let mx = |f: &dyn Fn(&ModeDiagnostics) -> f64| diags.iter().map(|(_, d)| f(d)).fold(0.0, f64::max);
    let mut failures = Vec::new();
    for (l, d) in &diags {
        let f = d.failures();
        if !f.is_empty() {
            failures.push(format!("{l}: {}", f.join(", ")));
        }
    }
    let lam = basis.lambdas();
    BasisReport {
        modes: n,
        max_eigen_residual: mx(&|d| d.eigen_residual),
        max_navier_residual: mx(&|d| d.navier_residual),
        max_divergence: mx(&|d| d.divergence),
        max_normal_trace: mx(&|d| d.normal_trace),
        max_norm_defect: mx(&|d| d.norm_defect),
        max_trace_normal: mx(&|d| d.trace_normal),
        max_trace_curl: mx(&|d| d.trace_curl),
        gram_defect,
        max_lambda: lam.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        lambda_hat: basis.lambda_hat,
        nonincreasing: lam.windows(2).all(|w| w[0] >= w[1]),
        failures,
    }
}

/// Cache file name for a basis key.
pub fn cache_key(domain: &Domain, zeta: SlipLength, cutoffs: Cutoffs) -> String {
    let shape = match domain.shape {
        Shape::Channel { lx, ly } => format!("channel_{lx}_{ly}"),
        Shape::Ball { radius } => format!("ball_{radius}"),
    };
    let o = domain.volume_order;
    let s = domain.surface_order;
    format!(
        "{shape}_o{}x{}x{}_s{}x{}_z{zeta}_k{}_n{}_{CODE_VERSION}.json",
        o[0], o[1], o[2], s[0], s[1], cutoffs.kappa, cutoffs.n
    )
}

pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("SLIPSTOKES_CACHE").map(PathBuf::from)
}

/// Writes the basis atomically (temporary file, then rename).
pub fn save_basis(basis: &EigenBasis, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, serde_json::to_vec(basis)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_basis(path: &Path) -> Result<EigenBasis> {
    let bytes = std::fs::read(path)?;
    let b: EigenBasis = serde_json::from_slice(&bytes)?;
    if b.version != CODE_VERSION {
        return Err(Error::Inconsistent(format!("basis cache version {} != {CODE_VERSION}", b.version)));
    }
    Ok(b)
}

/// Loads the basis from the cache directory when present, else builds and
/// stores it.
pub fn cached_basis(domain: &Domain, zeta: SlipLength, cutoffs: Cutoffs) -> Result<EigenBasis> {
    match cache_dir() {
        Some(dir) => {
            let path = dir.join(cache_key(domain, zeta, cutoffs));
            if let Ok(b) = load_basis(&path) {
                if &b.domain == domain && b.zeta == zeta && b.cutoffs == cutoffs {
                    return Ok(b);
                }
            }
            let b = build_basis(domain, zeta, cutoffs)?;
            save_basis(&b, &path)?;
            Ok(b)
        }
        None => build_basis(domain, zeta, cutoffs),
    }
}

/// Eigenvalue table grouped by family, for reports.
pub fn lambda_table(basis: &EigenBasis) -> BTreeMap<String, Vec<f64>> {
    let mut t: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in &basis.modes {
        t.entry(format!("{:?}", m.family)).or_default().push(m.lambda);
    }
    t
}
