//! Galerkin truncation of the Navier–Stokes equations on a Stokes
//! eigenbasis: convection tensor, time integration, energy ledger, weak-form
//! residual and the strong-solution monitor.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{InequalityId, InequalityReport};
use crate::error::{Error, Result};
use crate::geometry::{Domain, Shape, SlipLength};
use crate::jet::{curl, jacobian, values, vec_laplacian, v_cross, v_dot, Vec3};
use crate::spectrum::EigenBasis;

/// Raw skew defects above this abort assembly.
pub const SKEW_ABORT: f64 = 1e-8;
/// Stiffness guard for explicit RK4: `μ |λ| dt ≤ 0.5`.
pub const STIFFNESS_GUARD: f64 = 0.5;
/// Blow-up guard on `‖c‖² / ‖c(0)‖²`.
pub const BLOWUP_FACTOR: f64 = 1e6;

/// Values, Jacobians, curls and Laplacians of every mode on a volume grid,
/// and traces on the surface grid.
pub struct ModeTables {
    pub weights: Vec<f64>,
    pub vals: Vec<Vec<Vec3>>,
    pub jacs: Vec<Vec<[[f64; 3]; 3]>>,
    pub curls: Vec<Vec<Vec3>>,
    pub laps: Vec<Vec<Vec3>>,
    pub surface_weights: Vec<f64>,
    /// Trace values on the surface grid.
    pub surface: Vec<Vec<Vec3>>,
    /// `π(a, ·)` lifted to a vector at each surface node.
    pub surface_pi: Vec<Vec<Vec3>>,
}

impl ModeTables {
    pub fn new(basis: &EigenBasis, domain: &Domain) -> Self {
        let grid = domain.volume_grid();
        type Row = (Vec<Vec3>, Vec<[[f64; 3]; 3]>, Vec<Vec3>, Vec<Vec3>);
        let rows: Vec<Row> = basis
            .modes
            .par_iter()
            .map(|m| {
                let jets: Vec<_> = grid.points.iter().map(|p| crate::field::VectorField::jet(&m.field, *p)).collect();
                (
                    jets.iter().map(values).collect(),
                    jets.iter().map(jacobian).collect(),
                    jets.iter().map(|j| values(&curl(j))).collect(),
                    jets.iter().map(|j| values(&vec_laplacian(j))).collect(),
                )
            })
            .collect();
        let sgrid = domain.surface_grid();
        let pts = sgrid.points();
        let surface: Vec<Vec<Vec3>> = basis
            .modes
            .par_iter()
            .map(|m| pts.iter().map(|p| values(&crate::field::VectorField::jet(&m.field, *p))).collect())
            .collect();
        let surface_pi = surface
            .iter()
            .map(|s| {
                sgrid
                    .nodes
                    .iter()
                    .zip(s)
                    .map(|(n, v)| n.frame.lift(&n.curvature.apply(&n.frame.tangent(v))))
                    .collect()
            })
            .collect();
        let mut t = ModeTables {
            weights: grid.weights,
            vals: Vec::new(),
            jacs: Vec::new(),
            curls: Vec::new(),
            laps: Vec::new(),
            surface_weights: sgrid.nodes.iter().map(|n| n.weight).collect(),
            surface,
            surface_pi,
        };
        for (v, j, c, l) in rows {
            t.vals.push(v);
            t.jacs.push(j);
            t.curls.push(c);
            t.laps.push(l);
        }
        t
    }

    /// Placeholder for runs that only need Gram matrices and the tensor.
    pub fn empty() -> Self {
        ModeTables { weights: Vec::new(), vals: Vec::new(), jacs: Vec::new(), curls: Vec::new(), laps: Vec::new(), surface_weights: Vec::new(), surface: Vec::new(), surface_pi: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// `Σ c_k f_k` pointwise.
    pub fn synth(table: &[Vec<Vec3>], c: &[f64]) -> Vec<Vec3> {
        let n = table.first().map_or(0, |t| t.len());
        let mut out = vec![[0.0; 3]; n];
        for (t, ck) in table.iter().zip(c) {
            if *ck == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(t) {
                for a in 0..3 {
                    o[a] += ck * v[a];
                }
            }
        }
        out
    }
}

/// Quadrature Gram matrices of the basis.
#[derive(Clone, Debug)]
pub struct Grams {
    pub mass: DMatrix<f64>,
    pub gradient: DMatrix<f64>,
    pub curl: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub boundary: DMatrix<f64>,
    pub boundary_pi: DMatrix<f64>,
}

impl Grams {
    pub fn new(t: &ModeTables) -> Self {
        let n = t.len();
        let pair = |f: &(dyn Fn(usize, usize) -> f64 + Sync)| -> DMatrix<f64> {
            let mut m = DMatrix::zeros(n, n);
            let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| (0..n).map(|j| if j >= i { f(i, j) } else { 0.0 }).collect()).collect();
            for i in 0..n {
                for j in i..n {
                    m[(i, j)] = rows[i][j];
                    m[(j, i)] = rows[i][j];
                }
            }
            m
        };
        let vol = |a: &[Vec<Vec3>], i: usize, j: usize| -> f64 {
            a[i].iter().zip(&a[j]).zip(&t.weights).map(|((x, y), w)| w * v_dot(x, y)).sum()
        };
        let mass = pair(&|i, j| vol(&t.vals, i, j));
        let curl = pair(&|i, j| vol(&t.curls, i, j));
        let laplacian = pair(&|i, j| vol(&t.laps, i, j));
        let gradient = pair(&|i, j| {
            t.jacs[i]
                .iter()
                .zip(&t.jacs[j])
                .zip(&t.weights)
                .map(|((a, b), w)| {
                    let mut s = 0.0;
                    for r in 0..3 {
                        s += v_dot(&a[r], &b[r]);
                    }
                    w * s
                })
                .sum()
        });
        let surf = |a: &[Vec<Vec3>], b: &[Vec<Vec3>], i: usize, j: usize| -> f64 {
            a[i].iter().zip(&b[j]).zip(&t.surface_weights).map(|((x, y), w)| w * v_dot(x, y)).sum()
        };
        let boundary = pair(&|i, j| surf(&t.surface, &t.surface, i, j));
        let boundary_pi = pair(&|i, j| 0.5 * (surf(&t.surface, &t.surface_pi, i, j) + surf(&t.surface_pi, &t.surface, i, j)));
        Grams { mass, gradient, curl, laplacian, boundary, boundary_pi }
    }

    pub fn quad(m: &DMatrix<f64>, c: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..c.len() {
            if c[i] == 0.0 {
                continue;
            }
            let mut r = 0.0;
            for j in 0..c.len() {
                r += m[(i, j)] * c[j];
            }
            s += c[i] * r;
        }
        s
    }

    pub fn bilinear(m: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            for j in 0..b.len() {
                s += a[i] * m[(i, j)] * b[j];
            }
        }
        s
    }
}

/// `B[k][i][j] = ∫⟨a_k, a_i·∇a_j⟩`, stored by `k` as `(i, j, value)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvectionTensor {
    pub n: usize,
    pub rows: Vec<Vec<(u32, u32, f64)>>,
    /// `max |B_kij + B_jik|` before skew-symmetrisation.
    pub raw_skew_defect: f64,
    /// Largest entry magnitude, for scale.
    pub max_entry: f64,
}

/// Structural zero test: the product `a_i·∇a_j` only carries wave indices
/// `±κ_i ± κ_j` on the channel and azimuthal orders `|m_i| ± |m_j|` on the
/// ball.
pub fn selection_allows(shape: &Shape, wk: [i32; 2], wi: [i32; 2], wj: [i32; 2]) -> bool {
    match shape {
        Shape::Channel { .. } => {
            for s1 in [-1, 1] {
                for s2 in [-1, 1] {
                    let w = [s1 * wi[0] + s2 * wj[0], s1 * wi[1] + s2 * wj[1]];
                    if w == wk || w == [-wk[0], -wk[1]] {
                        return true;
                    }
                }
            }
            false
        }
        Shape::Ball { .. } => {
            let (mk, mi, mj) = (wk[1].abs(), wi[1].abs(), wj[1].abs());
            mk == mi + mj || mk == (mi - mj).abs()
        }
    }
}

impl ConvectionTensor {
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.rows[k].iter().find(|e| e.0 as usize == i && e.1 as usize == j).map_or(0.0, |e| e.2)
    }

    /// `Σ_ij a_i b_j B_kij` for every `k`.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(i, j, v)| v * a[i as usize] * b[j as usize]).sum()).collect()
    }

    pub fn contract(&self, c: &[f64]) -> Vec<f64> {
        self.bilinear(c, c)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    /// `max |B_kij + B_jik|` of the stored tensor.
    pub fn skew_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (k, r) in self.rows.iter().enumerate() {
            for &(i, j, v) in r {
                d = d.max((v + self.get(j as usize, i as usize, k)).abs());
            }
        }
        d
    }
}

/// Assembles the tensor with the basis domain's quadrature.
pub fn assemble_convection_tensor(basis: &EigenBasis) -> Result<ConvectionTensor> {
    let t = ModeTables::new(basis, &basis.domain);
    assemble_from_tables(basis, &t)
}

pub fn assemble_from_tables(basis: &EigenBasis, t: &ModeTables) -> Result<ConvectionTensor> {
    let n = basis.len();
    let shape = basis.domain.shape;
    let waves: Vec<[i32; 2]> = basis.modes.iter().map(|m| m.wave).collect();
    // raw[k] holds (i, j, value) for allowed triples
    let per_pair: Vec<Vec<(usize, usize, usize, f64)>> = (0..n * n)
        .into_par_iter()
        .map(|ij| {
            let (i, j) = (ij / n, ij % n);
            let ks: Vec<usize> = (0..n).filter(|&k| selection_allows(&shape, waves[k], waves[i], waves[j])).collect();
            if ks.is_empty() {
                return Vec::new();
            }
            let w: Vec<Vec3> = t.vals[i]
                .iter()
                .zip(&t.jacs[j])
                .map(|(a, jac)| std::array::from_fn(|r| v_dot(&jac[r], a)))
                .collect();
            ks.into_iter()
                .map(|k| {
                    let v: f64 = t.vals[k].iter().zip(&w).zip(&t.weights).map(|((a, b), q)| q * v_dot(a, b)).sum();
                    (k, i, j, v)
                })
                .collect()
        })
        .collect();
    let mut dense = vec![0.0f64; n * n * n];
    let idx = |k: usize, i: usize, j: usize| (k * n + i) * n + j;
    for list in per_pair {
        for (k, i, j, v) in list {
            dense[idx(k, i, j)] = v;
        }
    }
    let mut raw: f64 = 0.0;
    let mut max_entry: f64 = 0.0;
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                raw = raw.max((dense[idx(k, i, j)] + dense[idx(j, i, k)]).abs());
                max_entry = max_entry.max(dense[idx(k, i, j)].abs());
            }
        }
    }
    if raw > SKEW_ABORT * max_entry.max(1.0) {
        return Err(Error::Resolution(format!("convection tensor skew defect {raw:.3e} exceeds {SKEW_ABORT:e}")));
    }
    let mut rows = vec![Vec::new(); n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let v = 0.5 * (dense[idx(k, i, j)] - dense[idx(j, i, k)]);
                if v != 0.0 {
                    rows[k].push((i as u32, j as u32, v));
                }
            }
        }
    }
    Ok(ConvectionTensor { n, rows, raw_skew_defect: raw, max_entry })
}

/// Eigenvalues, tensor and viscosity of the truncated system.
#[derive(Clone, Debug)]
pub struct GalerkinSystem {
    pub lambdas: Vec<f64>,
    pub tensor: ConvectionTensor,
    pub mu: f64,
}

impl GalerkinSystem {
    pub fn new(basis: &EigenBasis, tensor: ConvectionTensor, mu: f64) -> Self {
        GalerkinSystem { lambdas: basis.lambdas(), tensor, mu }
    }

    /// `dc_k/dt = μ λ_k c_k - Σ_ij c_i c_j B_kij`.
    pub fn rhs(&self, c: &[f64]) -> Vec<f64> {
        let nl = self.tensor.contract(c);
        c.iter().zip(&self.lambdas).zip(nl).map(|((c, l), b)| self.mu * l * c - b).collect()
    }

    pub fn nonlinear(&self, c: &[f64]) -> Vec<f64> {
        self.tensor.contract(c).into_iter().map(|v| -v).collect()
    }

    /// Second time derivative along the flow.
    pub fn second_derivative(&self, c: &[f64], cd: &[f64]) -> Vec<f64> {
        let a = self.tensor.bilinear(cd, c);
        let b = self.tensor.bilinear(c, cd);
        (0..c.len()).map(|k| self.mu * self.lambdas[k] * cd[k] - a[k] - b[k]).collect()
    }
}

/// Time stepping scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Integrator {
    /// Classical RK4; `dt` is reduced to respect the stiffness guard.
    Rk4 { dt: f64 },
    /// RK4 on the variables with the exact linear factor removed.
    IntegratingFactor { dt: f64 },
    /// Dormand–Prince 5(4) with error control.
    Adaptive { rtol: f64, atol: f64 },
}

/// Parameters of one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub mu: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    /// Trajectory output spacing; every step when absent.
    pub output_dt: Option<f64>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::Config(format!("time horizon must be positive, got {}", self.t_end)));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::Config(format!("viscosity must be nonnegative, got {}", self.mu)));
        }
        match self.integrator {
            Integrator::Rk4 { dt } | Integrator::IntegratingFactor { dt } if !(dt > 0.0) => {
                Err(Error::Config(format!("time step must be positive, got {dt}")))
            }
            Integrator::Adaptive { rtol, atol } if !(rtol > 0.0 && atol > 0.0) => {
                Err(Error::Config("tolerances must be positive".into()))
            }
            _ => match self.output_dt {
                Some(o) if !(o > 0.0) => Err(Error::Config("output spacing must be positive".into())),
                _ => Ok(()),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Blowup { t: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
    pub status: RunStatus,
    /// Step actually used by fixed-step schemes.
    pub dt: Option<f64>,
    pub steps: usize,
}

/// One ledger row per accepted step.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: f64,
    pub kinetic: f64,
    /// `d‖u‖²/dt` from the Galerkin right-hand side.
    pub kinetic_rate: f64,
    pub grad_norm: f64,
    pub boundary_l2: f64,
    pub boundary_pi: f64,
    pub identity_residual: f64,
    pub f: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub mu: f64,
    pub zeta: SlipLength,
    pub rows: Vec<LedgerRow>,
}


fn ledger_row(t: f64, c: &[f64], cd: &[f64], g: &Grams) -> LedgerRow {
    LedgerRow {
        t,
        kinetic: Grams::quad(&g.mass, c),
        kinetic_rate: 2.0 * Grams::bilinear(&g.mass, c, cd),
        grad_norm: Grams::quad(&g.gradient, c),
        boundary_l2: Grams::quad(&g.boundary, c),
        boundary_pi: Grams::quad(&g.boundary_pi, c),
        ..Default::default()
    }
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(y, x)| y + a * x).collect()
}

fn norm2(c: &[f64]) -> f64 {
    c.iter().map(|v| v * v).sum()
}

fn rk4_step(sys: &GalerkinSystem, c: &[f64], h: f64) -> Vec<f64> {
    let k1 = sys.rhs(c);
    let k2 = sys.rhs(&axpy(c, 0.5 * h, &k1));
    let k3 = sys.rhs(&axpy(c, 0.5 * h, &k2));
    let k4 = sys.rhs(&axpy(c, h, &k3));
    (0..c.len()).map(|i| c[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

fn if_rk4_step(sys: &GalerkinSystem, c: &[f64], h: f64) -> Vec<f64> {
    let e: Vec<f64> = sys.lambdas.iter().map(|l| (0.5 * h * sys.mu * l).exp()).collect();
    let mul = |a: &[f64], s: &[f64]| -> Vec<f64> { a.iter().zip(s).map(|(a, s)| a * s).collect() };
    let k1 = sys.nonlinear(c);
    let a = mul(&axpy(c, 0.5 * h, &k1), &e);
    let k2 = sys.nonlinear(&a);
    let ec = mul(c, &e);
    let b = axpy(&ec, 0.5 * h, &k2);
    let k3 = sys.nonlinear(&b);
    let d = mul(&axpy(&ec, h, &k3), &e);
    let k4 = sys.nonlinear(&d);
    (0..c.len())
        .map(|i| {
            let e2 = e[i] * e[i];
            e2 * c[i] + h / 6.0 * (e2 * k1[i] + 2.0 * e[i] * (k2[i] + k3[i]) + k4[i])
        })
        .collect()
}

const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// One Dormand–Prince attempt: (5th-order solution, error estimate).
fn dp_step(sys: &GalerkinSystem, c: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let _ = DP_C;
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    for s in 0..7 {
        let mut y = c.to_vec();
        for (r, kr) in k.iter().enumerate() {
            let a = DP_A[s][r];
            if a != 0.0 {
                for i in 0..y.len() {
                    y[i] += h * a * kr[i];
                }
            }
        }
        k.push(sys.rhs(&y));
    }
    let mut y5 = c.to_vec();
    let mut err = vec![0.0; c.len()];
    for s in 0..7 {
        for i in 0..c.len() {
            y5[i] += h * DP_B5[s] * k[s][i];
            err[i] += h * (DP_B5[s] - DP_B4[s]) * k[s][i];
        }
    }
    (y5, err)
}

/// Integrates from `c0` over `[0, T]`, logging a ledger row per accepted step.
pub fn integrate(cfg: &SimConfig, sys: &GalerkinSystem, grams: &Grams, zeta: SlipLength, c0: &[f64]) -> Result<(Trajectory, EnergyLedger)> {
    cfg.validate()?;
    if c0.len() != sys.lambdas.len() {
        return Err(Error::Parameter(format!("{} initial coefficients for {} modes", c0.len(), sys.lambdas.len())));
    }
    let mut c = c0.to_vec();
    let mut t = 0.0;
    let guard = BLOWUP_FACTOR * norm2(c0).max(f64::MIN_POSITIVE);
    let mut ledger = EnergyLedger { mu: cfg.mu, zeta, rows: vec![ledger_row(0.0, &c, &sys.rhs(&c), grams)] };
    let mut traj = Trajectory { times: vec![0.0], coeffs: vec![c.clone()], status: RunStatus::Completed, dt: None, steps: 0 };
    let mut next_out = cfg.output_dt.unwrap_or(0.0);
    let record = |t: f64, c: &[f64], traj: &mut Trajectory, next_out: &mut f64, last: bool| {
        if let Some(o) = cfg.output_dt {
            if t + 1e-12 * o >= *next_out || last {
                traj.times.push(t);
                traj.coeffs.push(c.to_vec());
                while *next_out <= t + 1e-12 * o {
                    *next_out += o;
                }
            }
        } else {
            traj.times.push(t);
            traj.coeffs.push(c.to_vec());
        }
    };
    match cfg.integrator {
        Integrator::Rk4 { dt } | Integrator::IntegratingFactor { dt } => {
            let explicit = matches!(cfg.integrator, Integrator::Rk4 { .. });
            let stiff = cfg.mu * sys.lambdas.iter().fold(0.0f64, |m, l| m.max(l.abs()));
            let mut h = dt.min(cfg.t_end);
            if explicit && stiff * h > STIFFNESS_GUARD {
                h = STIFFNESS_GUARD / stiff;
            }
            let steps = (cfg.t_end / h - 1e-9).ceil().max(1.0) as usize;
            let h = cfg.t_end / steps as f64;
            traj.dt = Some(h);
            for s in 1..=steps {
                c = if explicit { rk4_step(sys, &c, h) } else { if_rk4_step(sys, &c, h) };
                t = s as f64 * h;
                traj.steps = s;
                ledger.rows.push(ledger_row(t, &c, &sys.rhs(&c), grams));
                if !c.iter().all(|v| v.is_finite()) || norm2(&c) > guard {
                    traj.status = RunStatus::Blowup { t };
                    traj.times.push(t);
                    traj.coeffs.push(c.clone());
                    break;
                }
                record(t, &c, &mut traj, &mut next_out, s == steps);
            }
        }
        Integrator::Adaptive { rtol, atol } => {
            let mut h = (cfg.t_end / 100.0).min(cfg.output_dt.unwrap_or(f64::INFINITY));
            let mut guard_steps = 0usize;
            while t < cfg.t_end * (1.0 - 1e-14) {
                guard_steps += 1;
                if guard_steps > 10_000_000 {
                    return Err(Error::Numerical("adaptive integrator exceeded step budget".into()));
                }
                let mut step = h.min(cfg.t_end - t);
                if let Some(o) = cfg.output_dt {
                    step = step.min((next_out - t).max(1e-14 * o));
                }
                let (y, e) = dp_step(sys, &c, step);
                let err = (e.iter().zip(&c).zip(&y).map(|((e, a), b)| {
                    let sc = atol + rtol * a.abs().max(b.abs());
                    (e / sc).powi(2)
                }).sum::<f64>() / c.len() as f64).sqrt();
                if err <= 1.0 || step < 1e-14 {
                    t += step;
                    c = y;
                    traj.steps += 1;
                    ledger.rows.push(ledger_row(t, &c, &sys.rhs(&c), grams));
                    if !c.iter().all(|v| v.is_finite()) || norm2(&c) > guard {
                        traj.status = RunStatus::Blowup { t };
                        traj.times.push(t);
                        traj.coeffs.push(c.clone());
                        break;
                    }
                    let last = t >= cfg.t_end * (1.0 - 1e-14);
                    record(t, &c, &mut traj, &mut next_out, last);
                }
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = step * fac;
            }
        }
    }
    energy_identity_residual(&mut ledger);
    Ok((traj, ledger))
}

/// Running integral `∫_{t_0}^{t_k} f` over rows `(t, f)`: cubic four-point
/// rules on uniform rows (exact for cubics), trapezoid otherwise.
pub fn cumulative_integral(rows: &[(f64, f64)]) -> Vec<f64> {
    let n = rows.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    let h0 = rows[1].0 - rows[0].0;
    let uniform = n >= 4 && rows.windows(2).all(|w| ((w[1].0 - w[0].0) - h0).abs() <= 1e-9 * h0.abs());
    let f = |j: usize| rows[j].1;
    for k in 1..n {
        let h = rows[k].0 - rows[k - 1].0;
        let step = if !uniform {
            0.5 * h * (f(k) + f(k - 1))
        } else if k == 1 {
            h / 24.0 * (9.0 * f(0) + 19.0 * f(1) - 5.0 * f(2) + f(3))
        } else if k + 1 == n {
            h / 24.0 * (9.0 * f(k) + 19.0 * f(k - 1) - 5.0 * f(k - 2) + f(k - 3))
        } else {
            h / 24.0 * (-f(k - 2) + 13.0 * f(k - 1) + 13.0 * f(k) - f(k + 1))
        };
        out[k] = out[k - 1] + step;
    }
    out
}

/// Summary of the energy balance over a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyResidual {
    /// Relative residual of the pointwise balance with a finite-difference
    /// `d‖u‖²/dt`: fourth-order stencils on uniform rows, centred second order
    /// otherwise.
    pub pointwise: Vec<f64>,
    /// Same balance with the exact rate from the Galerkin right-hand side.
    pub exact: Vec<f64>,
    /// `‖u(t)‖² + 2μ∫₀ᵗ E - ‖u(0)‖²` relative to `‖u(0)‖²`.
    pub integrated: Vec<f64>,
    pub max_pointwise: f64,
    pub max_exact: f64,
    pub max_integrated: f64,
}

fn dissipation(r: &LedgerRow, mu: f64, zeta: SlipLength) -> f64 {
    2.0 * mu * (r.grad_norm + zeta.inverse() * r.boundary_l2 - r.boundary_pi)
}

fn balance(rate: f64, r: &LedgerRow, mu: f64, zeta: SlipLength) -> f64 {
    let d = dissipation(r, mu, zeta);
    let scale = rate
        .abs()
        .max(2.0 * mu * r.grad_norm)
        .max(2.0 * mu * zeta.inverse() * r.boundary_l2)
        .max(2.0 * mu * r.boundary_pi.abs())
        .max(r.kinetic)
        .max(f64::MIN_POSITIVE);
    (rate + d).abs() / scale
}

/// Fills `identity_residual` in the ledger and returns all residual series.
pub fn energy_identity_residual(ledger: &mut EnergyLedger) -> EnergyResidual {
    let (mu, zeta) = (ledger.mu, ledger.zeta);
    let rows = &ledger.rows;
    let n = rows.len();
    let uniform = n >= 5 && {
        let h = rows[1].t - rows[0].t;
        rows.windows(2).all(|w| ((w[1].t - w[0].t) - h).abs() <= 1e-9 * h)
    };
    let mut pointwise = Vec::with_capacity(n);
    for k in 0..n {
        let rate = if uniform {
            let h = rows[1].t - rows[0].t;
            let e = |j: usize| rows[j].kinetic;
            if k >= 2 && k + 2 < n {
                (e(k - 2) - 8.0 * e(k - 1) + 8.0 * e(k + 1) - e(k + 2)) / (12.0 * h)
            } else if k == 0 {
                (-25.0 * e(0) + 48.0 * e(1) - 36.0 * e(2) + 16.0 * e(3) - 3.0 * e(4)) / (12.0 * h)
            } else if k == 1 {
                (-3.0 * e(0) - 10.0 * e(1) + 18.0 * e(2) - 6.0 * e(3) + e(4)) / (12.0 * h)
            } else if k == n - 2 {
                (3.0 * e(n - 1) + 10.0 * e(n - 2) - 18.0 * e(n - 3) + 6.0 * e(n - 4) - e(n - 5)) / (12.0 * h)
            } else {
                (25.0 * e(n - 1) - 48.0 * e(n - 2) + 36.0 * e(n - 3) - 16.0 * e(n - 4) + 3.0 * e(n - 5)) / (12.0 * h)
            }
        } else if k >= 1 && k + 1 < n {
            (rows[k + 1].kinetic - rows[k - 1].kinetic) / (rows[k + 1].t - rows[k - 1].t)
        } else {
            rows[k].kinetic_rate
        };
        pointwise.push(balance(rate, &rows[k], mu, zeta));
    }
    let exact: Vec<f64> = rows.iter().map(|r| balance(r.kinetic_rate, r, mu, zeta)).collect();
    let k0 = rows.first().map_or(0.0, |r| r.kinetic).max(f64::MIN_POSITIVE);
    let diss: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, dissipation(r, mu, zeta))).collect();
    let integrated: Vec<f64> = cumulative_integral(&diss).iter().zip(rows).map(|(acc, r)| (r.kinetic + acc - rows[0].kinetic).abs() / k0).collect();
    for (r, p) in ledger.rows.iter_mut().zip(&pointwise) {
        r.identity_residual = *p;
    }
    let mx = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(*b));
    EnergyResidual {
        max_pointwise: mx(&pointwise),
        max_exact: mx(&exact),
        max_integrated: mx(&integrated),
        pointwise,
        exact,
        integrated,
    }
}

/// Test function for the weak formulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Zero,
    /// A fixed basis mode.
    Mode { index: usize },
    /// The Galerkin solution itself.
    Solution,
}

fn simpson_weights(times: &[f64]) -> Result<Vec<f64>> {
    let n = times.len();
    if n < 2 {
        return Ok(vec![0.0; n]);
    }
    let h = times[1] - times[0];
    if times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1e-300)) {
        return Err(Error::Parameter("weak-form residual needs uniformly spaced output".into()));
    }
    let m = n - 1;
    let mut w = vec![0.0; n];
    let simpson_end = if m % 2 == 0 { m } else if m >= 3 { m - 3 } else { 0 };
    let mut k = 0;
    while k + 2 <= simpson_end {
        w[k] += h / 3.0;
        w[k + 1] += 4.0 * h / 3.0;
        w[k + 2] += h / 3.0;
        k += 2;
    }
    if m % 2 == 1 {
        if m >= 3 {
            let s = simpson_end;
            w[s] += 3.0 * h / 8.0;
            w[s + 1] += 9.0 * h / 8.0;
            w[s + 2] += 9.0 * h / 8.0;
            w[s + 3] += 3.0 * h / 8.0;
        } else {
            w[0] += 0.5 * h;
            w[1] += 0.5 * h;
        }
    }
    Ok(w)
}

/// `|LHS - RHS|` of the weak formulation over the trajectory window, by
/// grid quadrature in space and Simpson's rule in time.
pub fn weak_form_residual(traj: &Trajectory, sys: &GalerkinSystem, tables: &ModeTables, zeta: SlipLength, phi: TestFunction) -> Result<f64> {
    if let TestFunction::Mode { index } = phi {
        if index >= tables.len() {
            return Err(Error::Parameter(format!("test mode {index} outside basis of {}", tables.len())));
        }
    }
    let wt = simpson_weights(&traj.times)?;
    let mu = sys.mu;
    let phi_coeffs = |c: &[f64]| -> (Vec<f64>, Vec<f64>) {
        match phi {
            TestFunction::Zero => (vec![0.0; c.len()], vec![0.0; c.len()]),
            TestFunction::Mode { index } => {
                let mut e = vec![0.0; c.len()];
                e[index] = 1.0;
                (e, vec![0.0; c.len()])
            }
            TestFunction::Solution => (c.to_vec(), sys.rhs(c)),
        }
    };
    let integrand = |c: &[f64]| -> f64 {
        let (pc, pt) = phi_coeffs(c);
        let u = ModeTables::synth(&tables.vals, c);
        let w = ModeTables::synth(&tables.curls, c);
        let ph = ModeTables::synth(&tables.vals, &pc);
        let cph = ModeTables::synth(&tables.curls, &pc);
        let dph = ModeTables::synth(&tables.vals, &pt);
        let mut vol = 0.0;
        for q in 0..tables.weights.len() {
            let uxp = v_cross(&u[q], &ph[q]);
            vol += tables.weights[q] * (v_dot(&u[q], &dph[q]) - v_dot(&w[q], &uxp) - mu * v_dot(&w[q], &cph[q]));
        }
        let us = ModeTables::synth(&tables.surface, c);
        let ps = ModeTables::synth(&tables.surface, &pc);
        let pps = ModeTables::synth(&tables.surface_pi, &pc);
        let mut b = 0.0;
        for q in 0..tables.surface_weights.len() {
            b += tables.surface_weights[q] * (-mu * zeta.inverse() * v_dot(&us[q], &ps[q]) + 2.0 * mu * v_dot(&us[q], &pps[q]));
        }
        vol + b
    };
    let pair = |c: &[f64]| -> f64 {
        let (pc, _) = phi_coeffs(c);
        let u = ModeTables::synth(&tables.vals, c);
        let p = ModeTables::synth(&tables.vals, &pc);
        u.iter().zip(&p).zip(&tables.weights).map(|((a, b), w)| w * v_dot(a, b)).sum()
    };
    let vals: Vec<f64> = traj.coeffs.par_iter().map(|c| integrand(c)).collect();
    let time_integral: f64 = vals.iter().zip(&wt).map(|(v, w)| v * w).sum();
    let start = pair(&traj.coeffs[0]);
    let end = pair(traj.coeffs.last().expect("nonempty trajectory"));
    Ok((end - start - time_integral).abs())
}

/// `F = ‖ψ‖² + ‖u‖² + ‖u_t‖²` with `ψ = -Δu`, exact on the discrete system.
pub fn strong_functional(c: &[f64], sys: &GalerkinSystem, g: &Grams) -> f64 {
    let cd = sys.rhs(c);
    Grams::quad(&g.laplacian, c) + Grams::quad(&g.mass, c) + Grams::quad(&g.mass, &cd)
}

/// `dF/dt` along the flow.
pub fn strong_functional_rate(c: &[f64], sys: &GalerkinSystem, g: &Grams) -> f64 {
    let cd = sys.rhs(c);
    let cdd = sys.second_derivative(c, &cd);
    2.0 * Grams::bilinear(&g.laplacian, c, &cd) + 2.0 * Grams::bilinear(&g.mass, c, &cd) + 2.0 * Grams::bilinear(&g.mass, &cd, &cdd)
}

/// Solution of `ρ' = M₁ρ + M₂ρ²`, `ρ(0) = ρ₀`; infinite past blow-up.
pub fn riccati_bound(rho0: f64, m1: f64, m2: f64, t: f64) -> f64 {
    if m2 == 0.0 {
        return rho0 * (m1 * t).exp();
    }
    if m1 == 0.0 {
        let d = 1.0 - m2 * rho0 * t;
        return if d > 0.0 { rho0 / d } else { f64::INFINITY };
    }
    let e = (m1 * t).exp();
    let d = m1 + m2 * rho0 * (1.0 - e);
    if d > 0.0 {
        m1 * rho0 * e / d
    } else {
        f64::INFINITY
    }
}

/// Blow-up time of the comparison equation.
pub fn riccati_blowup(rho0: f64, m1: f64, m2: f64) -> f64 {
    if m2 <= 0.0 || rho0 <= 0.0 {
        return f64::INFINITY;
    }
    if m1 == 0.0 {
        return 1.0 / (m2 * rho0);
    }
    (1.0 + m1 / (m2 * rho0)).ln() / m1
}

/// Fitted `M` with `dF/dt ≤ M(F + F²)` over sample states, at one resolution.
pub fn fit_strong_constant(states: &[Vec<f64>], sys: &GalerkinSystem, g: &Grams, resolution: [usize; 3], seed: u64) -> InequalityReport {
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut rejected = Vec::new();
    for (k, c) in states.iter().enumerate() {
        let f = strong_functional(c, sys, g);
        if f <= 0.0 {
            rejected.push(format!("state-{k}"));
            continue;
        }
        lhs.push(strong_functional_rate(c, sys, g).max(0.0));
        rhs.push(f + f * f);
    }
    let fitted = lhs.iter().zip(&rhs).map(|(l, r)| l / r).fold(0.0, f64::max);
    InequalityReport {
        inequality_id: InequalityId::StrongFunctional,
        samples: lhs.len(),
        lhs,
        rhs,
        fitted_constant: fitted,
        resolution,
        seed,
        rejected,
        ratio_decades: 0.0,
        refined_constant: None,
        stable: None,
        pass: fitted.is_finite(),
    }
}

/// `F(t)` along a trajectory against the comparison bound `ρ(t)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrongMonitor {
    pub times: Vec<f64>,
    pub f: Vec<f64>,
    pub rho: Vec<f64>,
    pub m1: f64,
    pub m2: f64,
    pub rho0: f64,
    pub blowup_time: f64,
    /// `F ≤ ρ` at every output time before the comparison blow-up.
    pub holds: bool,
}

pub fn strong_monitor(traj: &Trajectory, sys: &GalerkinSystem, g: &Grams, m1: f64, m2: f64, rho0: f64) -> StrongMonitor {
    let f: Vec<f64> = traj.coeffs.iter().map(|c| strong_functional(c, sys, g)).collect();
    let rho: Vec<f64> = traj.times.iter().map(|t| riccati_bound(rho0, m1, m2, *t)).collect();
    let tstar = riccati_blowup(rho0, m1, m2);
    let holds = traj.times.iter().zip(f.iter().zip(&rho)).filter(|(t, _)| **t < tstar).all(|(_, (f, r))| *f <= r * (1.0 + 1e-12));
    StrongMonitor { times: traj.times.clone(), f, rho, m1, m2, rho0, blowup_time: tstar, holds }
}

/// Copies the monitor into the matching ledger rows.
pub fn attach_monitor(ledger: &mut EnergyLedger, m: &StrongMonitor) {
    let mut k = 0;
    for r in ledger.rows.iter_mut() {
        while k < m.times.len() && m.times[k] < r.t - 1e-12 {
            k += 1;
        }
        if k < m.times.len() && (m.times[k] - r.t).abs() <= 1e-12 * r.t.abs().max(1.0) {
            r.f = Some(m.f[k]);
            r.rho = Some(m.rho[k]);
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = traj.coeffs.first().map_or(0, |c| c.len());
    let mut head = vec!["t".to_string()];
    head.extend((0..n).map(|k| format!("c_{k}")));
    writeln!(f, "{}", head.join(","))?;
    for (t, c) in traj.times.iter().zip(&traj.coeffs) {
        let mut row = vec![format!("{t:e}")];
        row.extend(c.iter().map(|v| format!("{v:e}")));
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_ledger_csv(path: &Path, ledger: &EnergyLedger) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,kinetic,grad_norm,boundary_l2,boundary_pi,identity_residual,F,rho")?;
    for r in &ledger.rows {
        writeln!(
            f,
            "{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
            r.t,
            r.kinetic,
            r.grad_norm,
            r.boundary_l2,
            r.boundary_pi,
            r.identity_residual,
            fmt_opt(r.f),
            fmt_opt(r.rho)
        )?;
    }
    Ok(())
}

/// Basis, tables, Gram matrices and tensor for one configuration.
pub struct Assembled {
    pub tables: ModeTables,
    pub grams: Grams,
    pub tensor: ConvectionTensor,
}

pub fn assemble(basis: &EigenBasis) -> Result<Assembled> {
    let tables = ModeTables::new(basis, &basis.domain);
    let tensor = assemble_from_tables(basis, &tables)?;
    let grams = Grams::new(&tables);
    Ok(Assembled { tables, grams, tensor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::VectorField;
    use crate::spectrum::{build_basis_opts, shear_mode_roots, suggested_orders, Cutoffs, Family, Parity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_channel(zeta: SlipLength) -> EigenBasis {
        let cut = Cutoffs { kappa: 1, n: 2 };
        let d = Domain::channel(2.0, 2.0).unwrap();
        let (v, s) = suggested_orders(&d.shape, cut);
        build_basis_opts(&d.with_orders(v, s), zeta, cut, false).unwrap()
    }

    /// Direct evaluation of one entry on an independent (refined) grid.
    fn direct_entry(b: &EigenBasis, k: usize, i: usize, j: usize) -> f64 {
        let g = b.domain.refined().volume_grid();
        g.points
            .iter()
            .zip(&g.weights)
            .map(|(p, w)| {
                let ak = values(&b.modes[k].field.jet(*p));
                let ai = values(&b.modes[i].field.jet(*p));
                let jj = jacobian(&b.modes[j].field.jet(*p));
                let conv: Vec3 = std::array::from_fn(|r| v_dot(&jj[r], &ai));
                w * v_dot(&ak, &conv)
            })
            .sum()
    }

    #[test]
    fn tensor_matches_direct_quadrature_and_selection_rule() {
        let b = small_channel(SlipLength::Finite(1.0));
        let a = assemble(&b).unwrap();
        assert!(a.tensor.raw_skew_defect < 1e-12, "{}", a.tensor.raw_skew_defect);
        assert!(a.tensor.skew_defect() == 0.0);
        let n = b.len();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked_zero = 0;
        let mut checked_nonzero = 0;
        for _ in 0..300 {
            let (k, i, j) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
            let allowed = selection_allows(&b.domain.shape, b.modes[k].wave, b.modes[i].wave, b.modes[j].wave);
            if !allowed {
                assert!(direct_entry(&b, k, i, j).abs() < 1e-12);
                assert_eq!(a.tensor.get(k, i, j), 0.0);
                checked_zero += 1;
            } else if checked_nonzero < 40 {
                let direct = 0.5 * (direct_entry(&b, k, i, j) - direct_entry(&b, j, i, k));
                assert!((direct - a.tensor.get(k, i, j)).abs() < 1e-10, "{k} {i} {j}");
                checked_nonzero += 1;
            }
        }
        assert!(checked_zero > 50 && checked_nonzero > 10);
        // flat shear modes do not interact
        let shear: Vec<usize> = (0..n).filter(|&m| b.modes[m].family == Family::Shear).collect();
        for &k in &shear {
            for &i in &shear {
                for &j in &shear {
                    assert_eq!(a.tensor.get(k, i, j), 0.0);
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                assert_eq!(a.tensor.get(k, i, k), 0.0);
            }
        }
    }

    #[test]
    fn energy_contraction_vanishes() {
        let b = small_channel(SlipLength::Finite(0.5));
        let t = assemble_convection_tensor(&b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let c: Vec<f64> = (0..b.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let e: f64 = c.iter().zip(t.contract(&c)).map(|(a, b)| a * b).sum();
            assert!(e.abs() <= 1e-10 * norm2(&c).powf(1.5));
        }
    }

    #[test]
    fn selection_rule_cases() {
        let ch = Shape::Channel { lx: 1.0, ly: 1.0 };
        assert!(selection_allows(&ch, [1, 1], [1, 0], [0, 1]));
        assert!(selection_allows(&ch, [1, -1], [1, 0], [0, 1]));
        assert!(selection_allows(&ch, [0, 0], [1, 1], [1, 1]));
        assert!(!selection_allows(&ch, [2, 0], [1, 1], [0, 0]));
        let ball = Shape::Ball { radius: 1.0 };
        assert!(selection_allows(&ball, [3, 2], [1, 1], [2, -1]));
        assert!(selection_allows(&ball, [3, 0], [1, 1], [2, -1]));
        assert!(!selection_allows(&ball, [3, 1], [1, 1], [2, 1]));
    }

    fn system(b: &EigenBasis, mu: f64) -> (GalerkinSystem, Assembled) {
        let a = assemble(b).unwrap();
        (GalerkinSystem::new(b, a.tensor.clone(), mu), a)
    }

    fn first_shear(b: &EigenBasis) -> usize {
        (0..b.len()).find(|&m| b.modes[m].family == Family::Shear && b.modes[m].parity == Some(Parity::Even)).unwrap()
    }

    #[test]
    fn single_shear_mode_decays_exponentially() {
        let zeta = SlipLength::Finite(1.0);
        let b = small_channel(zeta);
        let (sys, a) = system(&b, 0.1);
        let m = first_shear(&b);
        let root = shear_mode_roots(zeta, Parity::Even, 1)[0];
        let lambda = -root * root;
        assert!((sys.lambdas[m] - lambda).abs() < 1e-10);
        let mut c0 = vec![0.0; b.len()];
        c0[m] = 0.7;
        for integ in [Integrator::Rk4 { dt: 0.01 }, Integrator::IntegratingFactor { dt: 0.05 }, Integrator::Adaptive { rtol: 1e-10, atol: 1e-12 }] {
            let cfg = SimConfig { mu: 0.1, t_end: 5.0, integrator: integ, output_dt: Some(0.5) };
            let (tr, _) = integrate(&cfg, &sys, &a.grams, zeta, &c0).unwrap();
            assert_eq!(tr.status, RunStatus::Completed);
            assert_eq!(tr.times.len(), 11);
            for (t, c) in tr.times.iter().zip(&tr.coeffs) {
                let exact = 0.7 * (0.1 * lambda * t).exp();
                assert!((c[m] - exact).abs() < 1e-9, "{integ:?} t={t}");
                assert!(c.iter().enumerate().all(|(k, v)| k == m || *v == 0.0));
            }
            // strong functional against its closed form
            let mon = strong_monitor(&tr, &sys, &a.grams, 0.0, 0.0, 1.0);
            for (t, f) in mon.times.iter().zip(&mon.f) {
                let exact = (lambda * lambda + 1.0 + 0.01 * lambda * lambda) * 0.49 * (0.2 * lambda * t).exp();
                assert!((f - exact).abs() < 1e-8 * exact.max(1.0));
            }
        }
    }

    fn random_state(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|k| rng.gen_range(-1.0..1.0) / (1.0 + k as f64)).collect()
    }

    #[test]
    fn inviscid_run_conserves_energy() {
        let zeta = SlipLength::Finite(1.0);
        let b = small_channel(zeta);
        let (sys, a) = system(&b, 0.0);
        let c0 = random_state(b.len(), 3);
        let cfg = SimConfig { mu: 0.0, t_end: 1.0, integrator: Integrator::Rk4 { dt: 0.005 }, output_dt: None };
        let (tr, ledger) = integrate(&cfg, &sys, &a.grams, zeta, &c0).unwrap();
        let e0 = norm2(&c0);
        for c in &tr.coeffs {
            assert!((norm2(c) - e0).abs() < 1e-8 * e0);
        }
        assert!(ledger.rows.iter().all(|r| (r.kinetic - e0).abs() < 1e-8 * e0));
    }

    #[test]
    fn energy_identity_and_weak_form() {
        let zeta = SlipLength::Finite(1.0);
        let b = small_channel(zeta);
        let (sys, a) = system(&b, 0.05);
        let c0: Vec<f64> = random_state(b.len(), 9).iter().map(|v| 3.0 * v).collect();
        let cfg = SimConfig { mu: 0.05, t_end: 1.0, integrator: Integrator::Rk4 { dt: 0.005 }, output_dt: None };
        let (tr, mut ledger) = integrate(&cfg, &sys, &a.grams, zeta, &c0).unwrap();
        let r = energy_identity_residual(&mut ledger);
        assert!(r.max_exact < 1e-10, "{}", r.max_exact);
        assert!(r.max_pointwise < 1e-6, "{}", r.max_pointwise);
        assert!(r.max_integrated < 1e-6, "{}", r.max_integrated);
        // kinetic energy of an orthonormal basis
        assert!((ledger.rows[0].kinetic - norm2(&c0)).abs() < 1e-10 * norm2(&c0));
        let scale = norm2(&c0);
        for phi in [TestFunction::Zero, TestFunction::Mode { index: 0 }, TestFunction::Mode { index: b.len() - 1 }, TestFunction::Solution] {
            let w = weak_form_residual(&tr, &sys, &a.tables, zeta, phi).unwrap();
            assert!(w < 1e-8 * scale, "{phi:?} {w}");
        }
        assert!(weak_form_residual(&tr, &sys, &a.tables, zeta, TestFunction::Mode { index: b.len() }).is_err());
    }

    #[test]
    fn riccati_closed_forms() {
        assert!((riccati_bound(2.0, 0.3, 0.0, 1.5) - 2.0 * 0.45f64.exp()).abs() < 1e-14);
        // integrate the comparison equation numerically
        let (rho0, m1, m2) = (0.5, 0.4, 0.2);
        let tstar = riccati_blowup(rho0, m1, m2);
        assert!((tstar - (1.0 + 0.4 / 0.1f64).ln() / 0.4).abs() < 1e-14);
        let f = |r: f64| m1 * r + m2 * r * r;
        let (mut r, mut t, h) = (rho0, 0.0, 1e-4);
        while t < 0.8 * tstar {
            let k1 = f(r);
            let k2 = f(r + 0.5 * h * k1);
            let k3 = f(r + 0.5 * h * k2);
            let k4 = f(r + h * k3);
            r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        assert!((r - riccati_bound(rho0, m1, m2, t)).abs() < 1e-8 * r);
        assert!(riccati_bound(rho0, m1, m2, 1.01 * tstar).is_infinite());
        assert!((riccati_blowup(1.0, 0.0, 0.5) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn config_and_blowup_guards() {
        let zeta = SlipLength::Infinite;
        let b = small_channel(zeta);
        let (sys, a) = system(&b, 0.1);
        let c0 = random_state(b.len(), 1);
        let bad = SimConfig { mu: 0.1, t_end: 0.0, integrator: Integrator::Rk4 { dt: 0.1 }, output_dt: None };
        assert!(integrate(&bad, &sys, &a.grams, zeta, &c0).unwrap_err().is_config());
        let bad = SimConfig { t_end: 1.0, integrator: Integrator::Rk4 { dt: -1.0 }, ..bad };
        assert!(integrate(&bad, &sys, &a.grams, zeta, &c0).unwrap_err().is_config());
        // anti-dissipative linear part trips the guard
        let grow = GalerkinSystem { lambdas: vec![20.0; b.len()], tensor: sys.tensor.clone(), mu: 1.0 };
        let cfg = SimConfig { mu: 1.0, t_end: 2.0, integrator: Integrator::IntegratingFactor { dt: 0.01 }, output_dt: None };
        let (tr, _) = integrate(&cfg, &grow, &a.grams, zeta, &c0).unwrap();
        assert!(matches!(tr.status, RunStatus::Blowup { t } if t < 1.0));
        // stiffness guard shrinks the explicit step
        let cfg = SimConfig { mu: 0.1, t_end: 0.1, integrator: Integrator::Rk4 { dt: 1.0 }, output_dt: None };
        let (tr, _) = integrate(&cfg, &sys, &a.grams, zeta, &c0).unwrap();
        let lmax = sys.lambdas.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        assert!(0.1 * lmax * tr.dt.unwrap() <= STIFFNESS_GUARD + 1e-12);
    }

    #[test]
    fn csv_output_is_reproducible() {
        let zeta = SlipLength::Finite(2.0);
        let b = small_channel(zeta);
        let (sys, a) = system(&b, 0.1);
        let c0 = random_state(b.len(), 4);
        let cfg = SimConfig { mu: 0.1, t_end: 0.2, integrator: Integrator::Rk4 { dt: 0.01 }, output_dt: Some(0.05) };
        let dir = tempfile::tempdir().unwrap();
        let mut out = Vec::new();
        for k in 0..2 {
            let (tr, mut ledger) = integrate(&cfg, &sys, &a.grams, zeta, &c0).unwrap();
            let mon = strong_monitor(&tr, &sys, &a.grams, 1.0, 1.0, 1.0);
            attach_monitor(&mut ledger, &mon);
            let p = dir.path().join(format!("traj{k}.csv"));
            let q = dir.path().join(format!("ledger{k}.csv"));
            write_trajectory_csv(&p, &tr).unwrap();
            write_ledger_csv(&q, &ledger).unwrap();
            out.push((std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap()));
        }
        assert_eq!(out[0], out[1]);
        let text = String::from_utf8(out[0].0.clone()).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("t,c_0,"));
        let ledger = String::from_utf8(out[0].1.clone()).unwrap();
        assert!(ledger.starts_with("t,kinetic,grad_norm,boundary_l2,boundary_pi,identity_residual,F,rho"));
        let row: Vec<f64> = text.lines().nth(2).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert!((row[0] - 0.05).abs() < 1e-12);
    }
}
