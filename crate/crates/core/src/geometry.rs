//! Domains, boundary frames, curvature and tangential calculus.
//!
//! Two domains are supported: a channel periodic in `x` and `y` with flat
//! walls at `z = 0` and `z = 1`, and a ball of radius `R`. Boundary frames are
//! right-handed triples `(e1, e2, ν)` with `ν` the outward unit normal. On the
//! channel the frame at `z = 1` is `(e_x, e_y, e_z)` and at `z = 0` it is
//! `(e_x, -e_y, -e_z)`. On the sphere it is `(e_θ, e_φ, e_r)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::jet::{v_cross, v_dot, Jet, Vec3};
use crate::quadrature::gauss_legendre;

/// Spectral tail above which boundary differentiation is flagged.
pub const TAIL_TOLERANCE: f64 = 1e-10;

/// Slip length `ζ ∈ (0, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SlipLength {
    Finite(f64),
    Infinite,
}

impl SlipLength {
    pub fn new(v: f64) -> Result<Self> {
        if v.is_infinite() && v > 0.0 {
            Ok(SlipLength::Infinite)
        } else if v > 0.0 && v.is_finite() {
            Ok(SlipLength::Finite(v))
        } else {
            Err(Error::Parameter(format!("slip length must be positive, got {v}")))
        }
    }

    /// `1/ζ`, exactly zero for complete slip.
    pub fn inverse(&self) -> f64 {
        match self {
            SlipLength::Finite(z) => 1.0 / z,
            SlipLength::Infinite => 0.0,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            SlipLength::Finite(z) => *z,
            SlipLength::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, SlipLength::Infinite)
    }

    fn check(&self) -> Result<()> {
        match self {
            SlipLength::Finite(z) if !(*z > 0.0) || !z.is_finite() => {
                Err(Error::Parameter(format!("slip length must be positive, got {z}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SlipLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlipLength::Finite(z) => write!(f, "{z}"),
            SlipLength::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for SlipLength {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "inf" || t == "infinity" || t == "+inf" {
            return Ok(SlipLength::Infinite);
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::Parameter(format!("cannot parse slip length '{s}'")))?;
        SlipLength::new(v)
    }
}

impl Serialize for SlipLength {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SlipLength::Finite(z) => s.serialize_f64(*z),
            SlipLength::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for SlipLength {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => SlipLength::new(v).map_err(serde::de::Error::custom),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Channel { lx: f64, ly: f64 },
    Ball { radius: f64 },
}

/// Geometry plus quadrature orders.
///
/// Channel orders are `(nx, ny, nz)` for the volume and `(nx, ny)` per wall.
/// Ball orders are `(n_r, n_θ, n_φ)` and `(n_θ, n_φ)` on the sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub shape: Shape,
    pub volume_order: [usize; 3],
    pub surface_order: [usize; 2],
}

impl Domain {
    pub fn channel(lx: f64, ly: f64) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::Parameter("channel periods must be positive".into()));
        }
        Ok(Domain {
            shape: Shape::Channel { lx, ly },
            volume_order: [16, 16, 48],
            surface_order: [16, 16],
        })
    }

    pub fn ball(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Parameter("ball radius must be positive".into()));
        }
        Ok(Domain {
            shape: Shape::Ball { radius },
            volume_order: [24, 24, 48],
            surface_order: [24, 48],
        })
    }

    pub fn with_orders(mut self, volume: [usize; 3], surface: [usize; 2]) -> Self {
        self.volume_order = volume;
        self.surface_order = surface;
        self
    }

    /// Same geometry with every quadrature order doubled.
    pub fn refined(&self) -> Self {
        let v = self.volume_order;
        let s = self.surface_order;
        self.clone()
            .with_orders([2 * v[0], 2 * v[1], 2 * v[2]], [2 * s[0], 2 * s[1]])
    }

    pub fn volume(&self) -> f64 {
        match self.shape {
            Shape::Channel { lx, ly } => lx * ly,
            Shape::Ball { radius } => 4.0 / 3.0 * PI * radius.powi(3),
        }
    }

    pub fn area(&self) -> f64 {
        match self.shape {
            Shape::Channel { lx, ly } => 2.0 * lx * ly,
            Shape::Ball { radius } => 4.0 * PI * radius * radius,
        }
    }

    pub fn label(&self) -> String {
        match self.shape {
            Shape::Channel { lx, ly } => format!("channel(lx={lx},ly={ly})"),
            Shape::Ball { radius } => format!("ball(R={radius})"),
        }
    }

    pub fn volume_grid(&self) -> VolumeGrid {
        let [n0, n1, n2] = self.volume_order;
        let mut points = Vec::with_capacity(n0 * n1 * n2);
        let mut weights = Vec::with_capacity(n0 * n1 * n2);
        match self.shape {
            Shape::Channel { lx, ly } => {
                let (zs, wz) = crate::quadrature::gauss_legendre_on(n2, 0.0, 1.0);
                let cell = lx * ly / (n0 * n1) as f64;
                for (z, w) in zs.iter().zip(&wz) {
                    for j in 0..n1 {
                        for i in 0..n0 {
                            points.push([lx * i as f64 / n0 as f64, ly * j as f64 / n1 as f64, *z]);
                            weights.push(cell * w);
                        }
                    }
                }
            }
            Shape::Ball { radius } => {
                let (rs, wr) = crate::quadrature::gauss_legendre_on(n0, 0.0, radius);
                let (ts, wt) = gauss_legendre(n1);
                let dphi = 2.0 * PI / n2 as f64;
                for (r, w_r) in rs.iter().zip(&wr) {
                    for (t, w_t) in ts.iter().zip(&wt) {
                        let st = (1.0 - t * t).sqrt();
                        for k in 0..n2 {
                            let (sp, cp) = (dphi * k as f64).sin_cos();
                            points.push([r * st * cp, r * st * sp, r * t]);
                            weights.push(w_r * r * r * w_t * dphi);
                        }
                    }
                }
            }
        }
        VolumeGrid { points, weights }
    }

    pub fn surface_grid(&self) -> Arc<SurfaceGrid> {
        Arc::new(SurfaceGrid::new(self))
    }

    /// Outward normal extended off the boundary as a jet (unit radial on the
    /// ball, constant on each channel wall).
    pub fn normal_extension(&self, x: Vec3) -> [Jet; 3] {
        match self.shape {
            Shape::Channel { .. } => {
                let s = if x[2] > 0.5 { 1.0 } else { -1.0 };
                [Jet::zero(), Jet::zero(), Jet::constant(s)]
            }
            Shape::Ball { .. } => {
                let c = Jet::coords(x);
                let inv = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt().recip();
                [c[0] * inv, c[1] * inv, c[2] * inv]
            }
        }
    }

    pub fn on_boundary(&self, x: Vec3) -> bool {
        let tol = 1e-9;
        match self.shape {
            Shape::Channel { .. } => x[2].abs() < tol || (x[2] - 1.0).abs() < tol,
            Shape::Ball { radius } => (v_dot(&x, &x).sqrt() - radius).abs() < tol * radius.max(1.0),
        }
    }

    /// Boundary frame at `x`.
    pub fn frame(&self, x: Vec3) -> Result<Frame> {
        if !self.on_boundary(x) {
            return Err(Error::Domain(format!("point {x:?} is not on the boundary")));
        }
        Ok(match self.shape {
            Shape::Channel { .. } => {
                if x[2] > 0.5 {
                    Frame { point: x, e1: [1.0, 0.0, 0.0], e2: [0.0, 1.0, 0.0], normal: [0.0, 0.0, 1.0] }
                } else {
                    Frame { point: x, e1: [1.0, 0.0, 0.0], e2: [0.0, -1.0, 0.0], normal: [0.0, 0.0, -1.0] }
                }
            }
            Shape::Ball { .. } => {
                let r = v_dot(&x, &x).sqrt();
                let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if rho < 1e-12 * r {
                    return Err(Error::Domain("spherical frame is singular at the poles".into()));
                }
                let (ct, st) = (x[2] / r, rho / r);
                let (cp, sp) = (x[0] / rho, x[1] / rho);
                Frame {
                    point: x,
                    e1: [ct * cp, ct * sp, -st],
                    e2: [-sp, cp, 0.0],
                    normal: [x[0] / r, x[1] / r, x[2] / r],
                }
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct VolumeGrid {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl VolumeGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub point: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub normal: Vec3,
}

impl Frame {
    pub fn tangent(&self, v: &Vec3) -> TangentVector {
        TangentVector([v_dot(v, &self.e1), v_dot(v, &self.e2)])
    }

    pub fn normal_part(&self, v: &Vec3) -> f64 {
        v_dot(v, &self.normal)
    }

    pub fn lift(&self, t: &TangentVector) -> Vec3 {
        let [a, b] = t.0;
        [
            a * self.e1[0] + b * self.e2[0],
            a * self.e1[1] + b * self.e2[1],
            a * self.e1[2] + b * self.e2[2],
        ]
    }

    /// Right-handedness and orthonormality defect.
    pub fn defect(&self) -> f64 {
        let c = v_cross(&self.e1, &self.e2);
        let mut d: f64 = 0.0;
        for k in 0..3 {
            d = d.max((c[k] - self.normal[k]).abs());
        }
        d.max((v_dot(&self.e1, &self.e1) - 1.0).abs())
            .max((v_dot(&self.e2, &self.e2) - 1.0).abs())
            .max(v_dot(&self.e1, &self.e2).abs())
    }
}

/// Components of a tangent vector in a frame's `(e1, e2)` basis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TangentVector(pub [f64; 2]);

impl TangentVector {
    pub fn norm(&self) -> f64 {
        self.0[0].hypot(self.0[1])
    }

    pub fn dot(&self, o: &TangentVector) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1]
    }

    pub fn add(&self, o: &TangentVector) -> TangentVector {
        TangentVector([self.0[0] + o.0[0], self.0[1] + o.0[1]])
    }

    pub fn scale(&self, s: f64) -> TangentVector {
        TangentVector([s * self.0[0], s * self.0[1]])
    }
}

/// `(v1, v2) -> (-v2, v1)`.
pub fn hodge_star(v: TangentVector) -> TangentVector {
    TangentVector([-v.0[1], v.0[0]])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondFundamentalForm {
    pub pi: [[f64; 2]; 2],
    pub mean: f64,
}

impl SecondFundamentalForm {
    pub fn apply(&self, v: &TangentVector) -> TangentVector {
        TangentVector([
            self.pi[0][0] * v.0[0] + self.pi[0][1] * v.0[1],
            self.pi[1][0] * v.0[0] + self.pi[1][1] * v.0[1],
        ])
    }

    pub fn bilinear(&self, a: &TangentVector, b: &TangentVector) -> f64 {
        a.dot(&self.apply(b))
    }
}

/// `π_ij = ⟨e_j, ∇_{e_i} ν⟩`, positive on the ball (`π = I/R`).
pub fn second_fundamental_form(d: &Domain, x: Vec3) -> Result<SecondFundamentalForm> {
    let f = d.frame(x)?;
    let nu = d.normal_extension(x);
    let jac = crate::jet::jacobian(&nu);
    let apply = |v: &Vec3| -> Vec3 {
        let mut o = [0.0; 3];
        for a in 0..3 {
            o[a] = (0..3).map(|b| jac[a][b] * v[b]).sum();
        }
        o
    };
    let de = [apply(&f.e1), apply(&f.e2)];
    let es = [f.e1, f.e2];
    let mut pi = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            pi[i][j] = v_dot(&es[j], &de[i]);
        }
    }
    let sym = 0.5 * (pi[0][1] + pi[1][0]);
    pi[0][1] = sym;
    pi[1][0] = sym;
    Ok(SecondFundamentalForm { pi, mean: pi[0][0] + pi[1][1] })
}

#[derive(Clone, Debug)]
pub struct SurfaceNode {
    pub frame: Frame,
    pub weight: f64,
    pub curvature: SecondFundamentalForm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SurfaceLayout {
    /// Index `wall * nx * ny + j * nx + i`, wall 0 at `z = 0`.
    Walls { nx: usize, ny: usize, lx: f64, ly: f64 },
    /// Index `i_θ * n_φ + i_φ`.
    Sphere { ntheta: usize, nphi: usize, radius: f64 },
}

pub struct SurfaceGrid {
    pub layout: SurfaceLayout,
    pub nodes: Vec<SurfaceNode>,
    harmonics: OnceLock<SphereHarmonics>,
}

impl fmt::Debug for SurfaceGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SurfaceGrid({:?}, {} nodes)", self.layout, self.nodes.len())
    }
}

impl SurfaceGrid {
    pub fn new(d: &Domain) -> Self {
        let [n0, n1] = d.surface_order;
        let mut nodes = Vec::new();
        let layout = match d.shape {
            Shape::Channel { lx, ly } => {
                let w = lx * ly / (n0 * n1) as f64;
                for z in [0.0, 1.0] {
                    for j in 0..n1 {
                        for i in 0..n0 {
                            let x = [lx * i as f64 / n0 as f64, ly * j as f64 / n1 as f64, z];
                            nodes.push(SurfaceNode {
                                frame: d.frame(x).unwrap(),
                                weight: w,
                                curvature: second_fundamental_form(d, x).unwrap(),
                            });
                        }
                    }
                }
                SurfaceLayout::Walls { nx: n0, ny: n1, lx, ly }
            }
            Shape::Ball { radius } => {
                let (ts, wt) = gauss_legendre(n0);
                let dphi = 2.0 * PI / n1 as f64;
                for (t, w) in ts.iter().zip(&wt) {
                    let st = (1.0 - t * t).sqrt();
                    for k in 0..n1 {
                        let (sp, cp) = (dphi * k as f64).sin_cos();
                        let x = [radius * st * cp, radius * st * sp, radius * t];
                        nodes.push(SurfaceNode {
                            frame: d.frame(x).unwrap(),
                            weight: radius * radius * w * dphi,
                            curvature: second_fundamental_form(d, x).unwrap(),
                        });
                    }
                }
                SurfaceLayout::Sphere { ntheta: n0, nphi: n1, radius }
            }
        };
        SurfaceGrid { layout, nodes, harmonics: OnceLock::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn points(&self) -> Vec<Vec3> {
        self.nodes.iter().map(|n| n.frame.point).collect()
    }

    fn harmonics(&self) -> &SphereHarmonics {
        self.harmonics.get_or_init(|| match self.layout {
            SurfaceLayout::Sphere { ntheta, nphi, radius } => SphereHarmonics::new(self, ntheta, nphi, radius),
            SurfaceLayout::Walls { .. } => unreachable!("harmonics requested on channel walls"),
        })
    }
}

/// Values sampled at every node of a surface grid.
#[derive(Clone, Debug)]
pub struct BoundaryField<T> {
    pub grid: Arc<SurfaceGrid>,
    pub values: Vec<T>,
}

impl<T: Clone> BoundaryField<T> {
    pub fn new(grid: Arc<SurfaceGrid>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Parameter(format!(
                "boundary field has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(BoundaryField { grid, values })
    }

    pub fn from_fn<F: Fn(&SurfaceNode) -> T>(grid: Arc<SurfaceGrid>, f: F) -> Self {
        let values = grid.nodes.iter().map(f).collect();
        BoundaryField { grid, values }
    }

    pub fn map<U, F: Fn(&SurfaceNode, &T) -> U>(&self, f: F) -> BoundaryField<U> {
        let values = self.grid.nodes.iter().zip(&self.values).map(|(n, v)| f(n, v)).collect();
        BoundaryField { grid: self.grid.clone(), values }
    }
}

pub type ScalarBoundary = BoundaryField<f64>;
pub type VectorBoundary = BoundaryField<Vec3>;
pub type TangentBoundary = BoundaryField<TangentVector>;

/// A spectrally differentiated boundary quantity and its relative spectral tail.
#[derive(Clone, Debug)]
pub struct Spectral<T> {
    pub field: T,
    pub tail: f64,
}

impl<T> Spectral<T> {
    pub fn resolved(&self) -> bool {
        self.tail <= TAIL_TOLERANCE
    }
}

pub fn surface_integrate(f: &ScalarBoundary) -> f64 {
    f.grid.nodes.iter().zip(&f.values).map(|(n, v)| n.weight * v).sum()
}

pub fn tangential_gradient(f: &ScalarBoundary) -> Spectral<TangentBoundary> {
    let grid = f.grid.clone();
    match grid.layout {
        SurfaceLayout::Walls { nx, ny, lx, ly } => {
            let mut out = vec![TangentVector::default(); grid.len()];
            let mut tail: f64 = 0.0;
            for wall in 0..2 {
                let off = wall * nx * ny;
                let slice = &f.values[off..off + nx * ny];
                let (dx, dy, t) = wall_derivatives(slice, nx, ny, lx, ly);
                tail = tail.max(t);
                let s = if wall == 0 { -1.0 } else { 1.0 };
                for k in 0..nx * ny {
                    out[off + k] = TangentVector([dx[k], s * dy[k]]);
                }
            }
            Spectral { field: BoundaryField { grid, values: out }, tail }
        }
        SurfaceLayout::Sphere { .. } => {
            let h = grid.harmonics();
            let (coef, tail) = h.analyse(&f.values);
            Spectral { field: BoundaryField { grid: grid.clone(), values: h.synth_gradient(&coef) }, tail }
        }
    }
}

pub fn tangential_divergence(v: &TangentBoundary) -> Spectral<ScalarBoundary> {
    let grid = v.grid.clone();
    match grid.layout {
        SurfaceLayout::Walls { nx, ny, lx, ly } => {
            let mut out = vec![0.0; grid.len()];
            let mut tail: f64 = 0.0;
            for wall in 0..2 {
                let off = wall * nx * ny;
                let s = if wall == 0 { -1.0 } else { 1.0 };
                let v1: Vec<f64> = v.values[off..off + nx * ny].iter().map(|t| t.0[0]).collect();
                let v2: Vec<f64> = v.values[off..off + nx * ny].iter().map(|t| s * t.0[1]).collect();
                let (d1, _, t1) = wall_derivatives(&v1, nx, ny, lx, ly);
                let (_, d2, t2) = wall_derivatives(&v2, nx, ny, lx, ly);
                tail = tail.max(t1).max(t2);
                for k in 0..nx * ny {
                    out[off + k] = d1[k] + d2[k];
                }
            }
            Spectral { field: BoundaryField { grid, values: out }, tail }
        }
        SurfaceLayout::Sphere { .. } => {
            let h = grid.harmonics();
            let (coef, tail) = h.weak_divergence(&v.values);
            Spectral { field: BoundaryField { grid: grid.clone(), values: h.synth(&coef) }, tail }
        }
    }
}

/// Navier residual `ω∥ + (1/ζ)∗u∥ + 2∗∇^Γ⟨u,ν⟩ − 2∗π(u∥)` at a single node,
/// given the tangential gradient of the normal trace there.
pub fn navier_residual_at(
    node: &SurfaceNode,
    u: &Vec3,
    omega: &Vec3,
    grad_normal_trace: &TangentVector,
    zeta: SlipLength,
) -> Result<TangentVector> {
    zeta.check()?;
    let f = &node.frame;
    let ut = f.tangent(u);
    let w = f.tangent(omega);
    let pu = node.curvature.apply(&ut);
    let star_u = hodge_star(ut).scale(zeta.inverse());
    let star_g = hodge_star(*grad_normal_trace).scale(2.0);
    let star_pi = hodge_star(pu).scale(-2.0);
    Ok(w.add(&star_u).add(&star_g).add(&star_pi))
}

/// Navier residual at every boundary node; the tangential gradient of
/// `⟨u,ν⟩` is taken spectrally from the samples.
pub fn navier_residual(
    u: &VectorBoundary,
    omega: &VectorBoundary,
    zeta: SlipLength,
) -> Result<Spectral<TangentBoundary>> {
    zeta.check()?;
    let trace = u.map(|n, v| n.frame.normal_part(v));
    let g = tangential_gradient(&trace);
    let mut out = Vec::with_capacity(u.values.len());
    for (k, node) in u.grid.nodes.iter().enumerate() {
        out.push(navier_residual_at(node, &u.values[k], &omega.values[k], &g.field.values[k], zeta)?);
    }
    Ok(Spectral { field: BoundaryField { grid: u.grid.clone(), values: out }, tail: g.tail })
}

fn wall_derivatives(v: &[f64], nx: usize, ny: usize, lx: f64, ly: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let mut planner = FftPlanner::<f64>::new();
    let fx = planner.plan_fft_forward(nx);
    let ix = planner.plan_fft_inverse(nx);
    let fy = planner.plan_fft_forward(ny);
    let iy = planner.plan_fft_inverse(ny);
    let mut data: Vec<Complex64> = v.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    for row in data.chunks_mut(nx) {
        fx.process(row);
    }
    transpose_apply(&mut data, nx, ny, |col| fy.process(col));
    let wave = |m: usize, n: usize| -> i64 {
        let m = m as i64;
        let n = n as i64;
        if m > n / 2 { m - n } else { m }
    };
    let mut total = 0.0;
    let mut tail = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let a = data[j * nx + i].norm_sqr();
            total += a;
            let (p, q) = (wave(i, nx).abs() as usize, wave(j, ny).abs() as usize);
            if 3 * p > nx || 3 * q > ny {
                tail += a;
            }
        }
    }
    let tail = if total > 0.0 { (tail / total).sqrt() } else { 0.0 };
    let deriv = |axis: usize| -> Vec<f64> {
        let mut d = data.clone();
        for j in 0..ny {
            for i in 0..nx {
                let k = if axis == 0 {
                    let p = wave(i, nx);
                    if nx % 2 == 0 && p.unsigned_abs() as usize * 2 == nx { 0.0 } else { 2.0 * PI * p as f64 / lx }
                } else {
                    let q = wave(j, ny);
                    if ny % 2 == 0 && q.unsigned_abs() as usize * 2 == ny { 0.0 } else { 2.0 * PI * q as f64 / ly }
                };
                d[j * nx + i] *= Complex64::new(0.0, k);
            }
        }
        transpose_apply(&mut d, nx, ny, |col| iy.process(col));
        for row in d.chunks_mut(nx) {
            ix.process(row);
        }
        let s = 1.0 / (nx * ny) as f64;
        d.iter().map(|c| c.re * s).collect()
    };
    (deriv(0), deriv(1), tail)
}

fn transpose_apply<F: Fn(&mut [Complex64])>(data: &mut [Complex64], nx: usize, ny: usize, f: F) {
    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = data[j * nx + i];
        }
        f(&mut col);
        for j in 0..ny {
            data[j * nx + i] = col[j];
        }
    }
}

/// Real spherical harmonics sampled on a Gauss–Legendre × uniform grid.
struct SphereHarmonics {
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<TangentVector>>,
    degree: Vec<usize>,
    norms: Vec<f64>,
    node_w: Vec<f64>,
    lmax: usize,
}

impl SphereHarmonics {
    fn new(grid: &SurfaceGrid, ntheta: usize, nphi: usize, radius: f64) -> Self {
        let lmax = (ntheta - 1).min((nphi - 1) / 2);
        let (ts, _) = gauss_legendre(ntheta);
        let dphi = 2.0 * PI / nphi as f64;
        let mut values = Vec::new();
        let mut grads = Vec::new();
        let mut degree = Vec::new();
        // legendre[it][l][m] and d/dθ
        let tables: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = ts.iter().map(|&t| assoc_legendre(lmax, t)).collect();
        for l in 0..=lmax {
            for m in -(l as i64)..=(l as i64) {
                let am = m.unsigned_abs() as usize;
                let mut v = Vec::with_capacity(grid.len());
                let mut g = Vec::with_capacity(grid.len());
                for (it, &t) in ts.iter().enumerate() {
                    let st = (1.0 - t * t).sqrt();
                    let (p, dp) = (tables[it].0[l][am], tables[it].1[l][am]);
                    for k in 0..nphi {
                        let phi = dphi * k as f64;
                        let (trig, dtrig) = if m >= 0 {
                            ((am as f64 * phi).cos(), -(am as f64) * (am as f64 * phi).sin())
                        } else {
                            ((am as f64 * phi).sin(), am as f64 * (am as f64 * phi).cos())
                        };
                        v.push(p * trig);
                        g.push(TangentVector([dp * trig / radius, p * dtrig / (radius * st)]));
                    }
                }
                values.push(v);
                grads.push(g);
                degree.push(l);
            }
        }
        let norms = values
            .iter()
            .map(|v| v.iter().zip(&grid.nodes).map(|(a, n)| a * a * n.weight).sum())
            .collect();
        let node_w = grid.nodes.iter().map(|n| n.weight).collect();
        SphereHarmonics { values, grads, degree, norms, node_w, lmax }
    }

    fn tail(&self, coef: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut tail = 0.0;
        for (k, c) in coef.iter().enumerate() {
            let e = c * c * self.norms[k];
            total += e;
            if 3 * self.degree[k] > 2 * self.lmax {
                tail += e;
            }
        }
        if total > 0.0 { (tail / total).sqrt() } else { 0.0 }
    }

    fn analyse(&self, f: &[f64]) -> (Vec<f64>, f64) {
        let w = &self.node_w;
        let coef: Vec<f64> = (0..self.values.len())
            .map(|k| {
                let s: f64 = self.values[k].iter().zip(f).zip(w).map(|((y, v), wt)| y * v * wt).sum();
                s / self.norms[k]
            })
            .collect();
        let t = self.tail(&coef);
        (coef, t)
    }

    fn weak_divergence(&self, v: &[TangentVector]) -> (Vec<f64>, f64) {
        let w = &self.node_w;
        let coef: Vec<f64> = (0..self.values.len())
            .map(|k| {
                let s: f64 = self.grads[k].iter().zip(v).zip(w).map(|((g, a), wt)| g.dot(a) * wt).sum();
                -s / self.norms[k]
            })
            .collect();
        let t = self.tail(&coef);
        (coef, t)
    }

    fn synth(&self, coef: &[f64]) -> Vec<f64> {
        let n = self.values[0].len();
        let mut out = vec![0.0; n];
        for (k, c) in coef.iter().enumerate() {
            for (o, y) in out.iter_mut().zip(&self.values[k]) {
                *o += c * y;
            }
        }
        out
    }

    fn synth_gradient(&self, coef: &[f64]) -> Vec<TangentVector> {
        let n = self.values[0].len();
        let mut out = vec![TangentVector::default(); n];
        for (k, c) in coef.iter().enumerate() {
            for (o, g) in out.iter_mut().zip(&self.grads[k]) {
                *o = o.add(&g.scale(*c));
            }
        }
        out
    }
}

/// Fully normalised associated Legendre functions `P̄_l^m(t)` and their
/// θ-derivatives for `0 ≤ m ≤ l ≤ lmax`, `t = cos θ` away from the poles.
pub fn assoc_legendre(lmax: usize, t: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let st = (1.0 - t * t).sqrt();
    let mut p = vec![vec![0.0; lmax + 1]; lmax + 1];
    let mut dp = vec![vec![0.0; lmax + 1]; lmax + 1];
    p[0][0] = (1.0 / (4.0 * PI)).sqrt();
    for m in 1..=lmax {
        p[m][m] = ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * st * p[m - 1][m - 1];
    }
    for m in 0..lmax {
        p[m + 1][m] = ((2 * m + 3) as f64).sqrt() * t * p[m][m];
    }
    for m in 0..=lmax {
        for l in (m + 2)..=lmax {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            p[l][m] = a * (t * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    for l in 0..=lmax {
        for m in 0..=l {
            let (lf, mf) = (l as f64, m as f64);
            let prev = if l > m {
                ((lf * lf - mf * mf) * (2.0 * lf + 1.0) / (2.0 * lf - 1.0)).sqrt() * p[l - 1][m]
            } else {
                0.0
            };
            dp[l][m] = (lf * t * p[l][m] - prev) / st;
        }
    }
    (p, dp)
}
