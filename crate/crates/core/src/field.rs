//! Smooth fields that can be expanded as jets at any point.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cheb;
use crate::jet::{cross, gradient, Jet, JetVec, Vec3};
use crate::special::reduced_bessel;

pub trait VectorField: Send + Sync {
    /// Jets of the Cartesian components at `x`, valid through degree three.
    fn jet(&self, x: Vec3) -> JetVec;

    fn sample(&self, points: &[Vec3]) -> Vec<JetVec> {
        points.par_iter().map(|p| self.jet(*p)).collect()
    }
}

pub trait ScalarField: Send + Sync {
    fn jet(&self, x: Vec3) -> Jet;

    fn sample(&self, points: &[Vec3]) -> Vec<Jet> {
        points.par_iter().map(|p| self.jet(*p)).collect()
    }
}

/// Vector field given by a formula in the coordinate jets.
pub struct FnField<F>(pub F);

impl<F: Fn(&JetVec) -> JetVec + Send + Sync> VectorField for FnField<F> {
    fn jet(&self, x: Vec3) -> JetVec {
        (self.0)(&Jet::coords(x))
    }
}

pub struct FnScalar<F>(pub F);

impl<F: Fn(&JetVec) -> Jet + Send + Sync> ScalarField for FnScalar<F> {
    fn jet(&self, x: Vec3) -> Jet {
        (self.0)(&Jet::coords(x))
    }
}

pub struct ZeroField;

impl VectorField for ZeroField {
    fn jet(&self, _: Vec3) -> JetVec {
        [Jet::zero(); 3]
    }
}

/// Gradient of a scalar field as a vector field (one degree less accurate).
pub struct GradientOf<S>(pub S);

impl<S: ScalarField> VectorField for GradientOf<S> {
    fn jet(&self, x: Vec3) -> JetVec {
        gradient(&self.0.jet(x))
    }
}

/// Finite linear combination of shared fields.
#[derive(Clone, Default)]
pub struct Combination {
    pub parts: Vec<(f64, Arc<dyn VectorField>)>,
}

impl Combination {
    pub fn new() -> Self {
        Combination { parts: Vec::new() }
    }

    pub fn push(&mut self, c: f64, f: Arc<dyn VectorField>) {
        self.parts.push((c, f));
    }
}

impl VectorField for Combination {
    fn jet(&self, x: Vec3) -> JetVec {
        let mut out = [Jet::zero(); 3];
        for (c, f) in &self.parts {
            if *c == 0.0 {
                continue;
            }
            let j = f.jet(x);
            for a in 0..3 {
                out[a].axpy(*c, &j[a]);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wave {
    Cos,
    Sin,
    Cosh,
    Sinh,
}

/// `amp * kind(rate * (z - 1/2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub kind: Wave,
    pub rate: f64,
    pub amp: f64,
}

impl Term {
    fn derivs(&self, z: f64, out: &mut [f64; 5]) {
        let s = z - 0.5;
        let k = self.rate;
        let a = k * s;
        let (v0, v1) = match self.kind {
            Wave::Cos => (a.cos(), -a.sin()),
            Wave::Sin => (a.sin(), a.cos()),
            Wave::Cosh => (a.cosh(), a.sinh()),
            Wave::Sinh => (a.sinh(), a.cosh()),
        };
        // second derivative flips sign for the trigonometric kinds
        let flip = matches!(self.kind, Wave::Cos | Wave::Sin);
        let mut kp = 1.0;
        for (n, o) in out.iter_mut().enumerate() {
            let base = if n % 2 == 0 { v0 } else { v1 };
            let sign = if flip && (n / 2) % 2 == 1 { -1.0 } else { 1.0 };
            *o += self.amp * kp * sign * base;
            kp *= k;
        }
    }

    fn derivative(&self) -> Term {
        let (kind, sign) = match self.kind {
            Wave::Cos => (Wave::Sin, -1.0),
            Wave::Sin => (Wave::Cos, 1.0),
            Wave::Cosh => (Wave::Sinh, 1.0),
            Wave::Sinh => (Wave::Cosh, 1.0),
        };
        Term { kind, rate: self.rate, amp: sign * self.amp * self.rate }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ProfileData {
    cheb: Vec<f64>,
    terms: Vec<Term>,
}

/// Real function of `z ∈ [0, 1]`: a Chebyshev series plus exponential terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "ProfileData", into = "ProfileData")]
pub struct Profile {
    cheb: Vec<f64>,
    terms: Vec<Term>,
    cheb_d: Vec<Vec<f64>>,
}

impl From<ProfileData> for Profile {
    fn from(d: ProfileData) -> Self {
        Profile::new(d.cheb, d.terms)
    }
}

impl From<Profile> for ProfileData {
    fn from(p: Profile) -> Self {
        ProfileData { cheb: p.cheb, terms: p.terms }
    }
}

impl Default for Profile {
    fn default() -> Self {
        Profile::zero()
    }
}

impl Profile {
    pub fn new(cheb: Vec<f64>, terms: Vec<Term>) -> Self {
        let mut cheb_d = Vec::with_capacity(4);
        let mut cur = cheb.clone();
        for _ in 0..4 {
            cur = cheb::derivative(&cur);
            cheb_d.push(cur.clone());
        }
        Profile { cheb, terms, cheb_d }
    }

    pub fn zero() -> Self {
        Profile::new(Vec::new(), Vec::new())
    }

    pub fn chebyshev(coeffs: Vec<f64>) -> Self {
        Profile::new(coeffs, Vec::new())
    }

    pub fn analytic(terms: Vec<Term>) -> Self {
        Profile::new(Vec::new(), terms)
    }

    pub fn cheb_coeffs(&self) -> &[f64] {
        &self.cheb
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.cheb.iter().all(|c| *c == 0.0) && self.terms.iter().all(|t| t.amp == 0.0)
    }

    /// Value and first four derivatives at `z`.
    pub fn derivs(&self, z: f64) -> [f64; 5] {
        let mut out = [0.0; 5];
        if !self.cheb.is_empty() {
            out[0] = cheb::eval(&self.cheb, z);
            for n in 0..4 {
                out[n + 1] = cheb::eval(&self.cheb_d[n], z);
            }
        }
        for t in &self.terms {
            t.derivs(z, &mut out);
        }
        out
    }

    pub fn value(&self, z: f64) -> f64 {
        self.derivs(z)[0]
    }

    pub fn derivative(&self) -> Profile {
        Profile::new(
            cheb::derivative(&self.cheb),
            self.terms.iter().map(|t| t.derivative()).collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Profile {
        if s == 0.0 {
            return Profile::zero();
        }
        Profile::new(
            self.cheb.iter().map(|c| c * s).collect(),
            self.terms.iter().map(|t| Term { amp: t.amp * s, ..*t }).collect(),
        )
    }

    pub fn add(&self, o: &Profile) -> Profile {
        let n = self.cheb.len().max(o.cheb.len());
        let mut c = vec![0.0; n];
        for (i, v) in self.cheb.iter().enumerate() {
            c[i] += v;
        }
        for (i, v) in o.cheb.iter().enumerate() {
            c[i] += v;
        }
        let mut terms: Vec<Term> = Vec::with_capacity(self.terms.len() + o.terms.len());
        for t in self.terms.iter().chain(&o.terms) {
            match terms.iter_mut().find(|u| u.kind == t.kind && u.rate == t.rate) {
                Some(u) => u.amp += t.amp,
                None => terms.push(*t),
            }
        }
        terms.retain(|t| t.amp != 0.0);
        while c.last() == Some(&0.0) {
            c.pop();
        }
        Profile::new(c, terms)
    }

    /// Chebyshev interpolant of degree `n` of the whole profile.
    pub fn to_chebyshev(&self, n: usize) -> Vec<f64> {
        cheb::interpolate(|z| self.value(z), n)
    }
}

/// Complex profile `re + i im`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CProfile {
    pub re: Profile,
    pub im: Profile,
}

impl CProfile {
    pub fn real(p: Profile) -> Self {
        CProfile { re: p, im: Profile::zero() }
    }

    pub fn zero() -> Self {
        CProfile::default()
    }

    /// `c * p` for a real profile `p`.
    pub fn times(p: &Profile, c: Complex64) -> Self {
        CProfile { re: p.scale(c.re), im: p.scale(c.im) }
    }

    pub fn mul(&self, c: Complex64) -> Self {
        CProfile {
            re: self.re.scale(c.re).add(&self.im.scale(-c.im)),
            im: self.im.scale(c.re).add(&self.re.scale(c.im)),
        }
    }

    pub fn add(&self, o: &CProfile) -> Self {
        CProfile { re: self.re.add(&o.re), im: self.im.add(&o.im) }
    }

    pub fn derivative(&self) -> Self {
        CProfile { re: self.re.derivative(), im: self.im.derivative() }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    fn derivs(&self, z: f64) -> [Complex64; 5] {
        let r = self.re.derivs(z);
        let i = if self.im.is_zero() { [0.0; 5] } else { self.im.derivs(z) };
        let mut out = [Complex64::new(0.0, 0.0); 5];
        for n in 0..5 {
            out[n] = Complex64::new(r[n], i[n]);
        }
        out
    }

    pub fn value(&self, z: f64) -> Complex64 {
        Complex64::new(self.re.value(z), self.im.value(z))
    }
}

/// Horizontal wavevector of integer index `(p, q)`.
pub fn wavevector(lx: f64, ly: f64, wave: [i32; 2]) -> [f64; 2] {
    let tau = 2.0 * std::f64::consts::PI;
    [tau * wave[0] as f64 / lx, tau * wave[1] as f64 / ly]
}

const FACT: [f64; 5] = [1.0, 1.0, 2.0, 6.0, 24.0];

/// Jet of `Re[ profile(z) e^{i κ·x} ]` for several profiles sharing `κ`.
fn wave_jets<const N: usize>(k: [f64; 2], profiles: [&CProfile; N], x: Vec3) -> [Jet; N] {
    let theta = k[0] * x[0] + k[1] * x[1];
    let e = Complex64::new(theta.cos(), theta.sin());
    let ikx = Complex64::new(0.0, k[0]);
    let iky = Complex64::new(0.0, k[1]);
    let mut ex = [Complex64::new(1.0, 0.0); 5];
    let mut ey = [Complex64::new(1.0, 0.0); 5];
    for n in 1..5 {
        ex[n] = ex[n - 1] * ikx;
        ey[n] = ey[n - 1] * iky;
    }
    let mut out = [Jet::zero(); N];
    for (o, p) in out.iter_mut().zip(profiles.iter()) {
        if p.is_zero() {
            continue;
        }
        let d = p.derivs(x[2]);
        for a in 0..5 {
            for b in 0..(5 - a) {
                let eab = e * ex[a] * ey[b] / (FACT[a] * FACT[b]);
                for c in 0..(5 - a - b) {
                    let v = (eab * d[c]).re / FACT[c];
                    if v != 0.0 {
                        o.0[crate_index([a, b, c])] = v;
                    }
                }
            }
        }
    }
    out
}

fn crate_index(e: [usize; 3]) -> usize {
    // position of the monomial in the jet's degree-major ordering
    let d = e[0] + e[1] + e[2];
    let before = d * (d + 1) * (d + 2) / 6;
    let r = d - e[0];
    let within = r * (r + 1) / 2 + (r - e[1]);
    before + within
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveComponent {
    pub wave: [i32; 2],
    pub comps: [CProfile; 3],
}

/// Velocity on the channel: `Σ Re[ v(z) e^{i κ·x} ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelField {
    pub lx: f64,
    pub ly: f64,
    pub waves: Vec<WaveComponent>,
}

impl ChannelField {
    pub fn new(lx: f64, ly: f64) -> Self {
        ChannelField { lx, ly, waves: Vec::new() }
    }

    pub fn push(&mut self, wave: [i32; 2], comps: [CProfile; 3]) {
        self.waves.push(WaveComponent { wave, comps });
    }

    pub fn scaled(&self, s: f64) -> Self {
        let c = Complex64::new(s, 0.0);
        ChannelField {
            lx: self.lx,
            ly: self.ly,
            waves: self
                .waves
                .iter()
                .map(|w| WaveComponent { wave: w.wave, comps: [w.comps[0].mul(c), w.comps[1].mul(c), w.comps[2].mul(c)] })
                .collect(),
        }
    }

    pub fn extend(&mut self, other: &ChannelField) {
        self.waves.extend(other.waves.iter().cloned());
    }

    pub fn kappa(&self, wave: [i32; 2]) -> [f64; 2] {
        wavevector(self.lx, self.ly, wave)
    }

    /// `Σ c_i f_i`, merging equal wave indices.
    pub fn combine(lx: f64, ly: f64, parts: &[(f64, &ChannelField)]) -> ChannelField {
        let mut out = ChannelField::new(lx, ly);
        for (c, f) in parts {
            if *c == 0.0 {
                continue;
            }
            let s = Complex64::new(*c, 0.0);
            for w in &f.waves {
                let comps = [w.comps[0].mul(s), w.comps[1].mul(s), w.comps[2].mul(s)];
                match out.waves.iter_mut().find(|o| o.wave == w.wave) {
                    Some(o) => {
                        for a in 0..3 {
                            o.comps[a] = o.comps[a].add(&comps[a]);
                        }
                    }
                    None => out.push(w.wave, comps),
                }
            }
        }
        out
    }

    /// Exact vector Laplacian.
    pub fn laplacian(&self) -> ChannelField {
        let mut out = ChannelField::new(self.lx, self.ly);
        for w in &self.waves {
            let k = self.kappa(w.wave);
            let k2 = Complex64::new(-(k[0] * k[0] + k[1] * k[1]), 0.0);
            let comps = std::array::from_fn(|a| w.comps[a].derivative().derivative().add(&w.comps[a].mul(k2)));
            out.push(w.wave, comps);
        }
        out
    }

    /// Exact curl.
    pub fn curl(&self) -> ChannelField {
        let mut out = ChannelField::new(self.lx, self.ly);
        let i = Complex64::new(0.0, 1.0);
        for w in &self.waves {
            let k = self.kappa(w.wave);
            let [u, v, q] = &w.comps;
            out.push(
                w.wave,
                [
                    q.mul(i * k[1]).add(&v.derivative().mul(Complex64::new(-1.0, 0.0))),
                    u.derivative().add(&q.mul(-i * k[0])),
                    v.mul(i * k[0]).add(&u.mul(-i * k[1])),
                ],
            );
        }
        out
    }

    /// Exact divergence as a scalar channel field.
    pub fn divergence(&self) -> ChannelScalar {
        let mut out = ChannelScalar::new(self.lx, self.ly);
        for w in &self.waves {
            let k = self.kappa(w.wave);
            let p = w.comps[0]
                .mul(Complex64::new(0.0, k[0]))
                .add(&w.comps[1].mul(Complex64::new(0.0, k[1])))
                .add(&w.comps[2].derivative());
            out.push(w.wave, p);
        }
        out
    }
}

impl VectorField for ChannelField {
    fn jet(&self, x: Vec3) -> JetVec {
        let mut out = [Jet::zero(); 3];
        for w in &self.waves {
            let k = self.kappa(w.wave);
            let j = wave_jets(k, [&w.comps[0], &w.comps[1], &w.comps[2]], x);
            for a in 0..3 {
                out[a] += j[a];
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarWave {
    pub wave: [i32; 2],
    pub profile: CProfile,
}

/// Scalar on the channel: `Σ Re[ p(z) e^{i κ·x} ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelScalar {
    pub lx: f64,
    pub ly: f64,
    pub waves: Vec<ScalarWave>,
}

impl ChannelScalar {
    pub fn new(lx: f64, ly: f64) -> Self {
        ChannelScalar { lx, ly, waves: Vec::new() }
    }

    pub fn push(&mut self, wave: [i32; 2], profile: CProfile) {
        self.waves.push(ScalarWave { wave, profile });
    }

    /// Exact gradient as a channel vector field.
    pub fn gradient(&self) -> ChannelField {
        let mut out = ChannelField::new(self.lx, self.ly);
        for w in &self.waves {
            let k = wavevector(self.lx, self.ly, w.wave);
            out.push(
                w.wave,
                [
                    w.profile.mul(Complex64::new(0.0, k[0])),
                    w.profile.mul(Complex64::new(0.0, k[1])),
                    w.profile.derivative(),
                ],
            );
        }
        out
    }

    /// Exact Laplacian.
    pub fn laplacian(&self) -> ChannelScalar {
        let mut out = ChannelScalar::new(self.lx, self.ly);
        for w in &self.waves {
            let k = wavevector(self.lx, self.ly, w.wave);
            let k2 = Complex64::new(-(k[0] * k[0] + k[1] * k[1]), 0.0);
            out.push(w.wave, w.profile.derivative().derivative().add(&w.profile.mul(k2)));
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let c = Complex64::new(s, 0.0);
        ChannelScalar {
            lx: self.lx,
            ly: self.ly,
            waves: self.waves.iter().map(|w| ScalarWave { wave: w.wave, profile: w.profile.mul(c) }).collect(),
        }
    }
}

impl ScalarField for ChannelScalar {
    fn jet(&self, x: Vec3) -> Jet {
        let mut out = Jet::zero();
        for w in &self.waves {
            let k = wavevector(self.lx, self.ly, w.wave);
            out += wave_jets(k, [&w.profile], x)[0];
        }
        out
    }
}

/// Real regular solid harmonic of degree `l` and order `m` (cosine type for
/// `m ≥ 0`, sine type for `m < 0`), unnormalised.
pub fn solid_harmonic(l: usize, m: i32, c: &JetVec) -> Jet {
    let am = m.unsigned_abs() as usize;
    assert!(am <= l);
    let (x, y, z) = (c[0], c[1], c[2]);
    let mut re = Jet::constant(1.0);
    let mut im = Jet::zero();
    for _ in 0..am {
        let nre = re * x - im * y;
        im = im * x + re * y;
        re = nre;
    }
    let r2 = x * x + y * y + z * z;
    let mut prev = Jet::constant(1.0);
    let mut cur = z * (2 * am + 1) as f64;
    let a = if l == am {
        prev
    } else {
        for ll in (am + 2)..=l {
            let next = (z * cur * (2 * ll - 1) as f64 - r2 * prev * (ll + am - 1) as f64) * (1.0 / (ll - am) as f64);
            prev = cur;
            cur = next;
        }
        cur
    };
    a * if m >= 0 { re } else { im }
}

/// Toroidal field `∇ψ × x` with `ψ = j_l(k r)/(k r)^l · H_lm(x)`, scaled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToroidalField {
    pub l: usize,
    pub m: i32,
    pub k: f64,
    pub scale: f64,
}

impl ToroidalField {
    pub fn potential(&self, c: &JetVec) -> Jet {
        let s = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
        let r = s.value().sqrt();
        let g = reduced_bessel(self.l + 4, self.k * r);
        let q = -0.5 * self.k * self.k;
        let mut d = [0.0; 5];
        let mut qn = 1.0;
        for n in 0..5 {
            d[n] = qn * g[self.l + n];
            qn *= q;
        }
        s.compose(d) * solid_harmonic(self.l, self.m, c) * self.scale
    }
}

impl VectorField for ToroidalField {
    fn jet(&self, x: Vec3) -> JetVec {
        let c = Jet::coords(x);
        let psi = self.potential(&c);
        cross(&gradient(&psi), &c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{curl, div, vec_laplacian};

    #[test]
    fn monomial_index_matches_jet_layout() {
        for (n, e) in [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [2, 0, 0], [0, 0, 4], [1, 2, 1]].iter().enumerate() {
            let mut j = Jet::zero();
            j.0[crate_index(*e)] = 1.0;
            assert!((j.coeff(*e) - 1.0).abs() < 1e-15, "case {n}");
        }
    }

    #[test]
    fn profile_terms_differentiate_exactly() {
        let p = Profile::analytic(vec![
            Term { kind: Wave::Cos, rate: 2.0, amp: 1.5 },
            Term { kind: Wave::Sinh, rate: 0.7, amp: -0.3 },
        ]);
        let z = 0.81;
        let s = z - 0.5;
        let d = p.derivs(z);
        let d4 = 1.5 * 16.0 * (2.0 * s).cos() - 0.3 * 0.7f64.powi(4) * (0.7 * s).sinh();
        assert!((d[4] - d4).abs() < 1e-13);
        let q = p.derivative().derivative().derivative();
        assert!((q.derivs(z)[1] - d4).abs() < 1e-13);
    }

    #[test]
    fn channel_wave_jet_matches_formula() {
        let mut f = ChannelField::new(2.0, 3.0);
        let prof = Profile::chebyshev(vec![0.3, -0.2, 0.1]);
        f.push([1, -2], [CProfile::times(&prof, Complex64::new(0.5, 2.0)), CProfile::zero(), CProfile::zero()]);
        let x = [0.3, 0.4, 0.6];
        let j = f.jet(x);
        let k = f.kappa([1, -2]);
        let th = k[0] * x[0] + k[1] * x[1];
        let exact = |dx: f64| (Complex64::new(0.5, 2.0) * prof.value(0.6) * Complex64::from_polar(1.0, th + k[0] * dx)).re;
        assert!((j[0].value() - exact(0.0)).abs() < 1e-14);
        let h = 1e-5;
        let fd = (exact(h) - exact(-h)) / (2.0 * h);
        assert!((j[0].d(&[0]) - fd).abs() < 1e-8);
    }

    #[test]
    fn solid_harmonics_are_harmonic() {
        let c = Jet::coords([0.3, -0.4, 0.5]);
        for l in 0..5 {
            for m in -(l as i32)..=(l as i32) {
                let h = solid_harmonic(l, m, &c);
                assert!(h.laplacian_value().abs() < 1e-12, "l={l} m={m}");
            }
        }
    }

    #[test]
    fn toroidal_field_is_solenoidal_eigenfield() {
        let t = ToroidalField { l: 2, m: 1, k: 3.1, scale: 1.0 };
        let j = t.jet([0.2, 0.1, -0.3]);
        assert!(div(&j).value().abs() < 1e-12);
        let lap = vec_laplacian(&j);
        for a in 0..3 {
            assert!((lap[a].value() + 3.1 * 3.1 * j[a].value()).abs() < 1e-11);
        }
        let w = curl(&j);
        assert!(w[0].value().is_finite());
    }
    #[test]
    fn exact_channel_operators_match_jets() {
        let mut f = ChannelField::new(2.0, 1.5);
        let p = Profile::analytic(vec![Term { kind: Wave::Cosh, rate: 1.3, amp: 0.4 }, Term { kind: Wave::Sin, rate: 2.0, amp: 1.0 }]);
        let q = Profile::chebyshev(vec![0.1, 0.5, -0.3, 0.2]);
        f.push([1, 2], [CProfile::times(&p, Complex64::new(0.3, -1.0)), CProfile::real(q.clone()), CProfile::times(&q, Complex64::new(0.0, 2.0))]);
        f.push([0, 0], [CProfile::real(q), CProfile::zero(), CProfile::zero()]);
        let x = [0.7, 0.2, 0.35];
        let j = f.jet(x);
        let c = f.curl().jet(x);
        let l = f.laplacian().jet(x);
        let cj = curl(&j);
        let lj = vec_laplacian(&j);
        for a in 0..3 {
            assert!((c[a].value() - cj[a].value()).abs() < 1e-12);
            assert!((l[a].value() - lj[a].value()).abs() < 1e-11);
        }
        assert!((f.divergence().jet(x).value() - div(&j).value()).abs() < 1e-12);
        let g = ChannelField::combine(2.0, 1.5, &[(2.0, &f), (-1.0, &f)]);
        assert!((g.jet(x)[1].value() - j[1].value()).abs() < 1e-14);
    }
}
