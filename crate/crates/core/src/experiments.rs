//! Scripted campaigns: no-slip, complete-slip and inviscid limits, spectrum
//! reports and the identity suite, with CSV output and a JSON summary.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{eigen_samples, general_samples, monitor_inequalities, run_identity_suite, truncation_energies, FitContext, InequalityId, InequalityReport, IdentitySuiteReport};
use crate::error::{Error, Result};
use crate::field::{FnField, VectorField};
use crate::galerkin::{
    assemble, attach_monitor, energy_identity_residual, fit_strong_constant, integrate, strong_monitor, write_ledger_csv, write_trajectory_csv, Assembled, EnergyLedger, EnergyResidual,
    GalerkinSystem, Integrator, ModeTables, SimConfig, StrongMonitor, Trajectory,
};
use crate::geometry::{Domain, Shape, SlipLength};
use crate::helmholtz::{dirichlet_form, Projector};
use crate::jet::{jacobian, values, v_dot, Jet, JetVec, Vec3};
use crate::spectrum::{basis_report, build_basis_opts, cache_dir, cache_key, load_basis, save_basis, shear_mode_roots, suggested_orders, BasisReport, Cutoffs, EigenBasis, Family, Parity};

/// Campaign kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignKind {
    NoslipLimit,
    CompleteSlipLimit,
    InviscidLimit,
    SpectrumReport,
    IdentitySuite,
}

impl CampaignKind {
    pub fn name(&self) -> &'static str {
        match self {
            CampaignKind::NoslipLimit => "noslip_limit",
            CampaignKind::CompleteSlipLimit => "complete_slip_limit",
            CampaignKind::InviscidLimit => "inviscid_limit",
            CampaignKind::SpectrumReport => "spectrum_report",
            CampaignKind::IdentitySuite => "identity_suite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| Error::Config(format!("unknown campaign '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Channel,
    Ball,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    Rk4,
    IntegratingFactor,
    Adaptive,
}

/// Campaign and run parameters. Read from a key-value (TOML) file; every
/// key is optional and falls back to the campaign default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub campaign: CampaignKind,
    pub domain: DomainKind,
    pub lx: f64,
    pub ly: f64,
    pub radius: f64,
    /// Slip length of single-ζ campaigns and runs.
    pub zeta: SlipLength,
    /// Slip-length sweep.
    pub zetas: Vec<SlipLength>,
    pub mu: f64,
    /// Viscosity sweep.
    pub mus: Vec<f64>,
    pub cutoff_kappa: u32,
    pub cutoff_n: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub integrator: IntegratorKind,
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
    pub output_dt: f64,
    pub seed: u64,
    /// General samples per domain in the identity suite.
    pub samples: usize,
    /// Eigen-combination samples in the identity suite.
    pub eigen_samples: usize,
    /// Initial data: `smooth`, `mode:<k>` or `random`.
    pub initial: String,
    pub out: Option<PathBuf>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            campaign: CampaignKind::IdentitySuite,
            domain: DomainKind::Channel,
            lx: 2.0,
            ly: 2.0,
            radius: 1.0,
            zeta: SlipLength::Finite(1.0),
            zetas: Vec::new(),
            mu: 0.1,
            mus: Vec::new(),
            cutoff_kappa: 1,
            cutoff_n: 3,
            t_end: 1.0,
            integrator: IntegratorKind::Rk4,
            dt: 0.01,
            rtol: 1e-9,
            atol: 1e-12,
            output_dt: 0.05,
            seed: 42,
            samples: 100,
            eigen_samples: 20,
            initial: "smooth".into(),
            out: None,
        }
    }
}

fn inf() -> SlipLength {
    SlipLength::Infinite
}

fn fin(z: f64) -> SlipLength {
    SlipLength::Finite(z)
}

impl CampaignConfig {
    /// Defaults of one campaign kind.
    pub fn defaults(kind: CampaignKind) -> Self {
        let base = CampaignConfig { campaign: kind, ..Default::default() };
        match kind {
            CampaignKind::NoslipLimit => CampaignConfig { zetas: vec![fin(1e-1), fin(1e-2), fin(1e-3), fin(1e-4)], mu: 0.1, t_end: 1.0, ..base },
            CampaignKind::CompleteSlipLimit => CampaignConfig { zetas: vec![fin(1.0), fin(10.0), fin(100.0), fin(1000.0), inf()], mu: 0.1, t_end: 1.0, ..base },
            CampaignKind::InviscidLimit => CampaignConfig { mus: vec![1e-1, 1e-2, 1e-3], zeta: fin(1.0), t_end: 1.0, ..base },
            CampaignKind::SpectrumReport => CampaignConfig { zetas: vec![fin(0.1), fin(1.0), fin(10.0), inf()], cutoff_kappa: 2, cutoff_n: 4, ..base },
            CampaignKind::IdentitySuite => base,
        }
    }

    /// Parses a TOML key-value file over the defaults of its `campaign` key
    /// (or of `fallback` when the key is absent).
    pub fn from_toml_str(text: &str, fallback: CampaignKind) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        let kind = match table.get("campaign") {
            Some(toml::Value::String(s)) => CampaignKind::parse(s)?,
            Some(_) => return Err(Error::Config("campaign must be a string".into())),
            None => fallback,
        };
        let mut merged = toml::Table::try_from(CampaignConfig::defaults(kind)).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in table {
            merged.insert(k, v);
        }
        merged.try_into().map_err(|e: toml::de::Error| Error::Config(format!("config error: {e}")))
    }

    pub fn from_file(path: &Path, fallback: CampaignKind) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, fallback)
    }

    pub fn cutoffs(&self) -> Cutoffs {
        Cutoffs { kappa: self.cutoff_kappa, n: self.cutoff_n }
    }

    pub fn base_domain(&self) -> Result<Domain> {
        match self.domain {
            DomainKind::Channel => Domain::channel(self.lx, self.ly),
            DomainKind::Ball => Domain::ball(self.radius),
        }
        .map_err(|e| Error::Config(e.to_string()))
    }

    /// Domain with quadrature orders suited to the cutoffs.
    pub fn basis_domain(&self) -> Result<Domain> {
        let d = self.base_domain()?;
        let (v, s) = suggested_orders(&d.shape, self.cutoffs());
        Ok(d.with_orders(v, s))
    }

    pub fn sim_config(&self, mu: f64) -> SimConfig {
        let integrator = match self.integrator {
            IntegratorKind::Rk4 => Integrator::Rk4 { dt: self.dt },
            IntegratorKind::IntegratingFactor => Integrator::IntegratingFactor { dt: self.dt },
            IntegratorKind::Adaptive => Integrator::Adaptive { rtol: self.rtol, atol: self.atol },
        };
        SimConfig { mu, t_end: self.t_end, integrator, output_dt: Some(self.output_dt) }
    }

    /// Checks the parameters the campaign kind depends on.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.base_domain()?;
        if self.cutoff_n == 0 {
            return cfg("cutoff_n must be positive".into());
        }
        if self.domain == DomainKind::Ball && self.cutoff_kappa == 0 {
            return cfg("ball cutoff_kappa (maximum degree) must be at least 1".into());
        }
        let needs_run = matches!(self.campaign, CampaignKind::NoslipLimit | CampaignKind::CompleteSlipLimit | CampaignKind::InviscidLimit);
        if needs_run {
            self.sim_config(self.mu).validate()?;
            if !(self.output_dt > 0.0) {
                return cfg("output_dt must be positive".into());
            }
        }
        let finite: Vec<f64> = self.zetas.iter().filter_map(|z| if let SlipLength::Finite(v) = z { Some(*v) } else { None }).collect();
        match self.campaign {
            CampaignKind::NoslipLimit => {
                if self.zetas.is_empty() {
                    return cfg("zetas sweep is empty".into());
                }
                if self.zetas.contains(&SlipLength::Infinite) {
                    return cfg("the no-slip campaign needs finite slip lengths; zeta = inf is excluded".into());
                }
                if !(self.mu > 0.0) {
                    return cfg("the no-slip campaign needs mu > 0".into());
                }
                if finite.windows(2).any(|w| w[1] >= w[0]) {
                    return cfg("zetas must be strictly decreasing".into());
                }
            }
            CampaignKind::CompleteSlipLimit => {
                if self.zetas.is_empty() {
                    return cfg("zetas sweep is empty".into());
                }
                if let Some(p) = self.zetas.iter().position(|z| *z == SlipLength::Infinite) {
                    if p + 1 != self.zetas.len() {
                        return cfg("zeta = inf may only close the sweep".into());
                    }
                }
                if finite.is_empty() {
                    return cfg("the complete-slip campaign needs finite slip lengths".into());
                }
                if finite.windows(2).any(|w| w[1] <= w[0]) {
                    return cfg("zetas must be strictly increasing".into());
                }
            }
            CampaignKind::InviscidLimit => {
                if self.mus.is_empty() {
                    return cfg("mus sweep is empty".into());
                }
                if self.mus.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
                    return cfg("mus must be positive".into());
                }
                if self.mus.windows(2).any(|w| w[1] >= w[0]) {
                    return cfg("mus must be strictly decreasing".into());
                }
            }
            CampaignKind::SpectrumReport => {
                if self.zetas.is_empty() {
                    return cfg("zetas sweep is empty".into());
                }
            }
            CampaignKind::IdentitySuite => {
                if self.samples == 0 {
                    return cfg("samples must be positive".into());
                }
            }
        }
        parse_initial(&self.initial)?;
        Ok(())
    }
}

/// Initial-data choices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialData {
    /// Fixed smooth solenoidal field, normalised to `‖u₀‖² = 1`.
    Smooth,
    Mode(usize),
    Random,
}

pub fn parse_initial(s: &str) -> Result<InitialData> {
    match s {
        "smooth" => Ok(InitialData::Smooth),
        "random" => Ok(InitialData::Random),
        _ => s
            .strip_prefix("mode:")
            .and_then(|k| k.parse().ok())
            .map(InitialData::Mode)
            .ok_or_else(|| Error::Config(format!("unknown initial data '{s}' (smooth, random, mode:<k>)"))),
    }
}

/// Exact steady Euler solution used as the inviscid reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EulerReference {
    /// `(U(z), 0, 0)` with `U(z) = amplitude · cos(π z)`, constant pressure.
    ChannelShear { amplitude: f64 },
    /// `Ω × x` with `Ω = rate · e_z`, pressure `½|Ω × x|²`.
    RigidRotation { rate: f64 },
}

impl EulerReference {
    pub fn for_domain(d: &Domain) -> Self {
        match d.shape {
            Shape::Channel { .. } => EulerReference::ChannelShear { amplitude: 1.0 },
            Shape::Ball { .. } => EulerReference::RigidRotation { rate: 1.0 },
        }
    }

    pub fn field(&self) -> Arc<dyn VectorField> {
        match *self {
            EulerReference::ChannelShear { amplitude } => Arc::new(FnField(move |c: &JetVec| {
                [(c[2] * std::f64::consts::PI).cos() * amplitude, Jet::constant(0.0), Jet::constant(0.0)]
            })),
            EulerReference::RigidRotation { rate } => Arc::new(FnField(move |c: &JetVec| [c[1] * (-rate), c[0] * rate, Jet::constant(0.0)])),
        }
    }

    pub fn pressure(&self, x: Vec3) -> f64 {
        match *self {
            EulerReference::ChannelShear { .. } => 0.0,
            EulerReference::RigidRotation { rate } => 0.5 * rate * rate * (x[0] * x[0] + x[1] * x[1]),
        }
    }

    /// `max |u·∇u + ∇p|` over the volume grid of `d`.
    pub fn steady_residual(&self, d: &Domain) -> f64 {
        let f = self.field();
        let h = 1e-6;
        d.volume_grid()
            .points
            .iter()
            .map(|x| {
                let j = f.jet(*x);
                let u = values(&j);
                let jac = jacobian(&j);
                let mut r = 0.0f64;
                for a in 0..3 {
                    let mut xp = *x;
                    let mut xm = *x;
                    xp[a] += h;
                    xm[a] -= h;
                    let dp = (self.pressure(xp) - self.pressure(xm)) / (2.0 * h);
                    r = r.max((v_dot(&jac[a], &u) + dp).abs());
                }
                r
            })
            .fold(0.0, f64::max)
    }
}

/// The fixed smooth field used as initial data, before normalisation.
fn smooth_field(d: &Domain) -> Arc<dyn VectorField> {
    match d.shape {
        Shape::Channel { lx, ly } => {
            let (kx, ky) = (2.0 * std::f64::consts::PI / lx, 2.0 * std::f64::consts::PI / ly);
            // shear plus the horizontal curl of φ = sin(kx x) cos(ky y) cos(π z / 2)
            Arc::new(FnField(move |c: &JetVec| {
                let sx = (c[0] * kx).sin();
                let cx = (c[0] * kx).cos();
                let sy = (c[1] * ky).sin();
                let cy = (c[1] * ky).cos();
                let h = (c[2] * (0.5 * std::f64::consts::PI)).cos();
                let shear = (c[2] * std::f64::consts::PI).cos() + 0.5;
                let phi_y = sx * sy * h * (-ky);
                let phi_x = cx * cy * h * kx;
                [shear + phi_y * 0.3, phi_x * (-0.3), Jet::constant(0.0)]
            }))
        }
        Shape::Ball { .. } => Arc::new(FnField(|c: &JetVec| {
            // rigid rotation plus x × ∇(xz)
            let (x, y, z) = (c[0], c[1], c[2]);
            [y * (-1.0) + x * y * 0.5, x + (z * z - x * x) * 0.5, y * z * (-0.5)]
        })),
    }
}

fn l2_norm2(f: &dyn VectorField, d: &Domain) -> f64 {
    let g = d.refined().volume_grid();
    f.sample(&g.points).iter().zip(&g.weights).map(|(j, w)| w * v_dot(&values(j), &values(j))).sum()
}

/// Initial coefficients and the L² norm squared of the continuous field
/// they project (`None` for coefficient-space data).
pub fn initial_coefficients(init: InitialData, basis: &EigenBasis, projector: &Projector, seed: u64) -> Result<(Vec<f64>, Option<f64>)> {
    let n = basis.len();
    match init {
        InitialData::Smooth => {
            let f = smooth_field(&basis.domain);
            let norm2 = l2_norm2(f.as_ref(), &basis.domain);
            let c: Vec<f64> = projector.project(f.as_ref(), n).iter().map(|v| v / norm2.sqrt()).collect();
            Ok((c, Some(1.0)))
        }
        InitialData::Mode(k) => {
            if k >= n {
                return Err(Error::Config(format!("mode {k} outside basis of {n} modes")));
            }
            let mut c = vec![0.0; n];
            c[k] = 1.0;
            Ok((c, None))
        }
        InitialData::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c: Vec<f64> = (0..n).map(|k| rng.gen_range(-1.0..1.0) / (1.0 + k as f64)).collect();
            let s = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            c.iter_mut().for_each(|v| *v /= s);
            Ok((c, None))
        }
    }
}

/// Builds a basis, through the `SLIPSTOKES_CACHE` directory when set.
pub fn obtain_basis(domain: &Domain, zeta: SlipLength, cutoffs: Cutoffs, validate: bool) -> Result<EigenBasis> {
    if let Some(dir) = cache_dir() {
        let path = dir.join(cache_key(domain, zeta, cutoffs));
        if let Ok(b) = load_basis(&path) {
            if &b.domain == domain && b.zeta == zeta && b.cutoffs == cutoffs {
                return Ok(b);
            }
        }
        let b = build_basis_opts(domain, zeta, cutoffs, validate)?;
        save_basis(&b, &path)?;
        return Ok(b);
    }
    build_basis_opts(domain, zeta, cutoffs, validate)
}

/// Everything produced by one simulation.
pub struct RunOutput {
    pub basis: EigenBasis,
    pub assembled: Assembled,
    pub system: GalerkinSystem,
    pub initial: Vec<f64>,
    pub initial_norm2: Option<f64>,
    pub trajectory: Trajectory,
    pub ledger: EnergyLedger,
    pub energy: EnergyResidual,
    pub monitor: StrongMonitor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub zeta: SlipLength,
    pub mu: f64,
    pub modes: usize,
    pub steps: usize,
    pub dt: Option<f64>,
    pub status: crate::galerkin::RunStatus,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub energy_pointwise_residual: f64,
    pub energy_exact_residual: f64,
    pub energy_integrated_residual: f64,
    pub tensor_skew_defect: f64,
    pub strong_constant: f64,
    pub strong_blowup_time: f64,
    pub strong_bound_holds: bool,
}

impl RunOutput {
    pub fn summary(&self) -> RunSummary {
        let kin = |r: Option<&crate::galerkin::LedgerRow>| r.map_or(0.0, |r| r.kinetic);
        RunSummary {
            zeta: self.basis.zeta,
            mu: self.system.mu,
            modes: self.basis.len(),
            steps: self.trajectory.steps,
            dt: self.trajectory.dt,
            status: self.trajectory.status,
            initial_energy: kin(self.ledger.rows.first()),
            final_energy: kin(self.ledger.rows.last()),
            energy_pointwise_residual: self.energy.max_pointwise,
            energy_exact_residual: self.energy.max_exact,
            energy_integrated_residual: self.energy.max_integrated,
            tensor_skew_defect: self.assembled.tensor.raw_skew_defect,
            strong_constant: self.monitor.m1,
            strong_blowup_time: self.monitor.blowup_time,
            strong_bound_holds: self.monitor.holds,
        }
    }

    /// `∫₀ᵀ ∫_Γ |u|²` from the ledger (four-point rule in time on uniform rows).
    pub fn boundary_time_integral(&self) -> f64 {
        time_integral(&self.ledger.rows.iter().map(|r| (r.t, r.boundary_l2)).collect::<Vec<_>>())
    }

    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_trajectory_csv(&dir.join("trajectory.csv"), &self.trajectory)?;
        write_ledger_csv(&dir.join("ledger.csv"), &self.ledger)?;
        Ok(())
    }
}

/// `∫ f dt` over rows `(t, f)`.
pub fn time_integral(rows: &[(f64, f64)]) -> f64 {
    crate::galerkin::cumulative_integral(rows).last().copied().unwrap_or(0.0)
}

/// Runs one simulation from a basis: assembly, integration, energy ledger and
/// strong monitor (constant fitted over seeded eigen-combination states and
/// the trajectory itself, `ρ(0) = F(0)`).
pub fn simulate(basis: EigenBasis, sim: &SimConfig, init: InitialData, seed: u64) -> Result<RunOutput> {
    let assembled = assemble(&basis)?;
    let projector = Projector::new(&basis);
    simulate_with(basis, assembled, &projector, sim, init, seed)
}

pub fn simulate_with(basis: EigenBasis, assembled: Assembled, projector: &Projector, sim: &SimConfig, init: InitialData, seed: u64) -> Result<RunOutput> {
    let (c0, norm2) = initial_coefficients(init, &basis, projector, seed)?;
    simulate_from(basis, assembled, sim, c0, norm2, seed)
}

pub fn simulate_from(basis: EigenBasis, assembled: Assembled, sim: &SimConfig, c0: Vec<f64>, norm2: Option<f64>, seed: u64) -> Result<RunOutput> {
    let system = GalerkinSystem::new(&basis, assembled.tensor.clone(), sim.mu);
    let (trajectory, mut ledger) = integrate(sim, &system, &assembled.grams, basis.zeta, &c0)?;
    let energy = energy_identity_residual(&mut ledger);
    let mut states = sample_states(basis.len(), 16, seed);
    states.extend(trajectory.coeffs.iter().cloned());
    let fit = fit_strong_constant(&states, &system, &assembled.grams, basis.domain.volume_order, seed);
    let f0 = crate::galerkin::strong_functional(&c0, &system, &assembled.grams);
    let monitor = strong_monitor(&trajectory, &system, &assembled.grams, fit.fitted_constant, fit.fitted_constant, f0);
    attach_monitor(&mut ledger, &monitor);
    Ok(RunOutput { basis, assembled, system, initial: c0, initial_norm2: norm2, trajectory, ledger, energy, monitor })
}

/// Seeded coefficient vectors with algebraically decaying spectra.
pub fn sample_states(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..count)
        .map(|i| {
            let amp = 10f64.powf(-1.0 + 2.0 * i as f64 / count.max(1) as f64);
            (0..n).map(|k| amp * rng.gen_range(-1.0..1.0) / (1.0 + k as f64).powi(2)).collect()
        })
        .collect()
}

/// Campaign summary written as `summary.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignReport {
    pub campaign: String,
    pub params: Value,
    pub metrics: Value,
    pub pass: bool,
}

fn zeta_tag(z: SlipLength) -> String {
    match z {
        SlipLength::Finite(v) => format!("{v:e}"),
        SlipLength::Infinite => "inf".into(),
    }
}

fn run_dir(out: &Option<PathBuf>, idx: usize, tag: &str) -> Option<PathBuf> {
    out.as_ref().map(|o| o.join(format!("run_{idx:02}_{tag}")))
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{}", r.join(","))?;
    }
    Ok(())
}

fn e(v: f64) -> String {
    format!("{v:e}")
}

/// Least-squares slope and R² of `log y` against `log x`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some((slope, intercept, r2))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoslipPoint {
    pub zeta: f64,
    pub boundary_integral: f64,
    pub bound: f64,
    pub within_bound: bool,
    pub projected_energy: f64,
    pub run: RunSummary,
}

/// ζ ↓ 0 at fixed μ, u₀ and T: `∫₀ᵀ∫_Γ|u_ζ|² ≤ (ζ/2μ)‖u₀‖²`, decreasing to 0.
pub fn run_noslip_limit(cfg: &CampaignConfig) -> Result<CampaignReport> {
    check_kind(cfg, CampaignKind::NoslipLimit)?;
    cfg.validate()?;
    let d = cfg.basis_domain()?;
    let init = parse_initial(&cfg.initial)?;
    let sim = cfg.sim_config(cfg.mu);
    let runs: Vec<Result<RunOutput>> = cfg
        .zetas
        .par_iter()
        .map(|z| {
            let b = obtain_basis(&d, *z, cfg.cutoffs(), false)?;
            simulate(b, &sim, init, cfg.seed)
        })
        .collect();
    let mut points = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        let r = r?;
        let zeta = match r.basis.zeta {
            SlipLength::Finite(v) => v,
            SlipLength::Infinite => unreachable!("validated"),
        };
        let u0 = r.initial_norm2.unwrap_or_else(|| r.initial.iter().map(|v| v * v).sum());
        let bi = r.boundary_time_integral();
        let bound = zeta / (2.0 * cfg.mu) * u0;
        if let Some(dir) = run_dir(&cfg.out, i, &format!("zeta_{}", zeta_tag(r.basis.zeta))) {
            r.write_csvs(&dir)?;
        }
        points.push(NoslipPoint {
            zeta,
            boundary_integral: bi,
            bound,
            within_bound: bi <= bound * (1.0 + 1e-3),
            projected_energy: r.initial.iter().map(|v| v * v).sum(),
            run: r.summary(),
        });
    }
    let decreasing = points.windows(2).all(|w| w[1].boundary_integral < w[0].boundary_integral);
    let rows: Vec<Vec<String>> = points.iter().map(|p| vec![e(p.zeta), e(p.boundary_integral), e(p.bound), p.within_bound.to_string()]).collect();
    let pass = points.iter().all(|p| p.within_bound && p.run.status == crate::galerkin::RunStatus::Completed) && decreasing;
    finish(cfg, "zeta,boundary_integral,bound,within_bound", rows, json!({ "points": points, "decreasing": decreasing }), pass)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InviscidPoint {
    pub mu: f64,
    /// `sup_t ‖u^μ(t) - P_N u_E‖`.
    pub sup_error: f64,
    /// `∫₀ᵀ ‖∇(u^μ - P_N u_E)‖²`.
    pub gradient_error: f64,
    pub run: RunSummary,
}

/// μ ↓ 0 with initial data the projected Euler reference.
pub fn run_inviscid_limit(cfg: &CampaignConfig) -> Result<CampaignReport> {
    check_kind(cfg, CampaignKind::InviscidLimit)?;
    cfg.validate()?;
    let d = cfg.basis_domain()?;
    let basis = obtain_basis(&d, cfg.zeta, cfg.cutoffs(), false)?;
    let reference = EulerReference::for_domain(&d);
    let projector = Projector::new(&basis);
    let rf = reference.field();
    let c_ref = projector.project(rf.as_ref(), basis.len());
    let ref_norm2 = l2_norm2(rf.as_ref(), &d);
    let projected_norm2: f64 = c_ref.iter().map(|v| v * v).sum();
    let assembled = assemble(&basis)?;
    let residual_of_reference = assembled.tensor.contract(&c_ref).iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut mus = cfg.mus.clone();
    mus.push(0.0);
    let runs: Vec<Result<RunOutput>> = mus
        .par_iter()
        .map(|mu| {
            let sim = SimConfig { mu: *mu, ..cfg.sim_config(*mu) };
            let a = Assembled { tables: ModeTables::empty(), grams: assembled.grams.clone(), tensor: assembled.tensor.clone() };
            simulate_from(basis.clone(), a, &sim, c_ref.clone(), Some(ref_norm2), cfg.seed)
        })
        .collect();
    let mut points = Vec::new();
    let mut baseline = None;
    for (i, r) in runs.into_iter().enumerate() {
        let r = r?;
        let diffs: Vec<Vec<f64>> = r.trajectory.coeffs.iter().map(|c| c.iter().zip(&c_ref).map(|(a, b)| a - b).collect()).collect();
        let sup = diffs.iter().map(|d| d.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let grad_rows: Vec<(f64, f64)> = r.trajectory.times.iter().zip(&diffs).map(|(t, d)| (*t, crate::galerkin::Grams::quad(&r.assembled.grams.gradient, d))).collect();
        let gradient_error = time_integral(&grad_rows);
        if let Some(dir) = run_dir(&cfg.out, i, &format!("mu_{}", e(mus[i]))) {
            r.write_csvs(&dir)?;
        }
        let p = InviscidPoint { mu: mus[i], sup_error: sup, gradient_error, run: r.summary() };
        if mus[i] == 0.0 {
            baseline = Some(p);
        } else {
            points.push(p);
        }
    }
    let baseline = baseline.expect("zero-viscosity baseline");
    let monotone = points.windows(2).all(|w| w[1].sup_error < w[0].sup_error);
    let mx: Vec<f64> = points.iter().map(|p| p.mu).collect();
    let my: Vec<f64> = points.iter().map(|p| p.sup_error).collect();
    let fit = fit_power_law(&mx, &my);
    let (alpha, r2) = fit.map_or((f64::NAN, f64::NAN), |f| (f.0, f.2));
    let alpha_ok = alpha >= 0.45;
    let rows: Vec<Vec<String>> = points.iter().chain(std::iter::once(&baseline)).map(|p| vec![e(p.mu), e(p.sup_error), e(p.gradient_error)]).collect();
    let pass = monotone && alpha_ok && points.iter().all(|p| p.run.status == crate::galerkin::RunStatus::Completed);
    let metrics = json!({
        "reference": reference,
        "reference_norm2": ref_norm2,
        "projected_reference_norm2": projected_norm2,
        "projection_error_norm": (ref_norm2 - projected_norm2).max(0.0).sqrt(),
        "reference_convection_residual": residual_of_reference,
        "points": points,
        "zero_viscosity": baseline,
        "monotone": monotone,
        "alpha": alpha,
        "alpha_r2": r2,
        "alpha_threshold": 0.45,
        "mu_range": [mx.iter().cloned().fold(f64::INFINITY, f64::min), mx.iter().cloned().fold(0.0, f64::max)],
        "rate_note": "the theorem statement prints an O(mu) bound on the unsquared norm; its proof bounds the squared norm by C mu, i.e. rate 1/2; the measured exponent is reported",
    });
    finish(cfg, "mu,sup_error,gradient_error", rows, metrics, pass)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompleteSlipPoint {
    pub zeta: SlipLength,
    /// `‖u_ζ - u_∞‖_{L²([0,T]×Ω)}`.
    pub distance: f64,
    /// `max_k |λ_k(ζ) - λ_k(∞)|`.
    pub eigenvalue_gap: f64,
    pub run: RunSummary,
}

/// ζ ↑ ∞ with the exact complete-slip run as reference.
pub fn run_complete_slip_limit(cfg: &CampaignConfig) -> Result<CampaignReport> {
    check_kind(cfg, CampaignKind::CompleteSlipLimit)?;
    cfg.validate()?;
    let d = cfg.basis_domain()?;
    let init = parse_initial(&cfg.initial)?;
    let sim = cfg.sim_config(cfg.mu);
    let mut zetas = cfg.zetas.clone();
    if zetas.last() != Some(&SlipLength::Infinite) {
        zetas.push(SlipLength::Infinite);
    }
    let runs: Vec<Result<(RunOutput, Projector)>> = zetas
        .par_iter()
        .map(|z| {
            let b = obtain_basis(&d, *z, cfg.cutoffs(), false)?;
            let p = Projector::new(&b);
            let a = assemble(&b)?;
            Ok((simulate_with(b, a, &p, &sim, init, cfg.seed)?, p))
        })
        .collect();
    let runs: Vec<(RunOutput, Projector)> = runs.into_iter().collect::<Result<_>>()?;
    let (reference, rp) = runs.last().expect("nonempty");
    let physical = |r: &RunOutput, p: &Projector| -> Vec<Vec<Vec3>> { r.trajectory.coeffs.iter().map(|c| ModeTables::synth(&p.modes, c)).collect() };
    let ref_vals = physical(reference, rp);
    let ref_lambda: BTreeMap<String, f64> = reference.basis.modes.iter().map(|m| (m.label(), m.lambda)).collect();
    let mut points = Vec::new();
    let mut per_mode: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, (r, p)) in runs.iter().enumerate() {
        if let Some(dir) = run_dir(&cfg.out, i, &format!("zeta_{}", zeta_tag(r.basis.zeta))) {
            r.write_csvs(&dir)?;
        }
        if r.trajectory.times.len() != reference.trajectory.times.len() {
            return Err(Error::Inconsistent("sweep runs have different output times".into()));
        }
        let vals = physical(r, p);
        let rows: Vec<(f64, f64)> = r
            .trajectory
            .times
            .iter()
            .zip(vals.iter().zip(&ref_vals))
            .map(|(t, (a, b))| {
                let s: f64 = a.iter().zip(b).zip(&p.weights).map(|((x, y), w)| w * v_dot(&sub(x, y), &sub(x, y))).sum();
                (*t, s)
            })
            .collect();
        let mut gap = 0.0f64;
        for m in &r.basis.modes {
            if let Some(l) = ref_lambda.get(&m.label()) {
                gap = gap.max((m.lambda - l).abs());
                per_mode.entry(m.label()).or_default().push(m.lambda);
            }
        }
        if i + 1 < runs.len() {
            points.push(CompleteSlipPoint { zeta: r.basis.zeta, distance: time_integral(&rows).max(0.0).sqrt(), eigenvalue_gap: gap, run: r.summary() });
        }
    }
    let decreasing = points.windows(2).all(|w| w[1].distance < w[0].distance);
    // each eigenvalue approaches its complete-slip value monotonically
    let mode_monotone = per_mode.values().all(|v| {
        let last = *v.last().unwrap();
        v.windows(2).all(|w| (w[1] - last).abs() <= (w[0] - last).abs() + 1e-12)
    });
    let first_even: Vec<f64> = zetas.iter().map(|z| shear_mode_roots(*z, Parity::Even, 1)[0]).collect();
    let rows: Vec<Vec<String>> = points.iter().map(|p| vec![zeta_tag(p.zeta), e(p.distance), e(p.eigenvalue_gap)]).collect();
    let pass = decreasing && mode_monotone && runs.iter().all(|(r, _)| r.trajectory.status == crate::galerkin::RunStatus::Completed);
    let metrics = json!({
        "points": points,
        "decreasing": decreasing,
        "eigenvalues_monotone": mode_monotone,
        "first_even_shear_roots": first_even,
        "reference": reference.summary(),
    });
    finish(cfg, "zeta,distance,eigenvalue_gap", rows, metrics, pass)
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub zeta: SlipLength,
    pub report: BasisReport,
    /// Sign criterion `max λ ≤ 1e-10` where it is guaranteed.
    pub sign_required: bool,
    pub sign_ok: bool,
    /// `E(a₀, a₀)` by quadrature and `-λ₀`.
    pub top_dirichlet_form: f64,
    pub top_lambda: f64,
    pub first_even_shear_root: Option<f64>,
}

/// Tolerance for the sign criterion.
pub const SIGN_TOL: f64 = 1e-10;

/// Whether the spectrum must be nonpositive: always on the channel, and on
/// the ball when `ζ ≤ R`.
pub fn sign_criterion_applies(d: &Domain, zeta: SlipLength) -> bool {
    match (d.shape, zeta) {
        (Shape::Channel { .. }, _) => true,
        (Shape::Ball { radius }, SlipLength::Finite(z)) => z <= radius,
        (Shape::Ball { .. }, SlipLength::Infinite) => false,
    }
}

pub fn spectrum_point(basis: &EigenBasis) -> SpectrumPoint {
    let report = basis_report(basis);
    let sign_required = sign_criterion_applies(&basis.domain, basis.zeta);
    let top = &basis.modes[0];
    let e_top = dirichlet_form(&top.field, &top.field, basis.zeta, &basis.domain);
    let consistent = (e_top + top.lambda).abs() <= 1e-8 * top.lambda.abs().max(1.0);
    let sign_ok = if sign_required { report.max_lambda <= SIGN_TOL } else { basis.lambda_hat >= 0.0 && consistent };
    SpectrumPoint {
        zeta: basis.zeta,
        sign_required,
        sign_ok,
        top_dirichlet_form: e_top,
        top_lambda: top.lambda,
        first_even_shear_root: matches!(basis.domain.shape, Shape::Channel { .. }).then(|| shear_mode_roots(basis.zeta, Parity::Even, 1)[0]),
        report,
    }
}

/// Validation and sign criterion over a ζ sweep.
pub fn run_spectrum_report(cfg: &CampaignConfig) -> Result<CampaignReport> {
    check_kind(cfg, CampaignKind::SpectrumReport)?;
    cfg.validate()?;
    let d = cfg.basis_domain()?;
    let bases: Vec<EigenBasis> = cfg.zetas.iter().map(|z| obtain_basis(&d, *z, cfg.cutoffs(), false)).collect::<Result<_>>()?;
    let points: Vec<SpectrumPoint> = bases.iter().map(spectrum_point).collect();
    let mut rows = Vec::new();
    for b in &bases {
        for (k, m) in b.modes.iter().enumerate() {
            rows.push(vec![zeta_tag(b.zeta), k.to_string(), format!("{:?}", m.family), m.wave[0].to_string(), m.wave[1].to_string(), m.n.to_string(), m.phase.to_string(), e(m.lambda)]);
        }
    }
    let pass = points.iter().all(|p| p.report.failures.is_empty() && p.report.gram_defect <= 1e-9 && p.report.nonincreasing && p.sign_ok);
    finish(cfg, "zeta,index,family,wave_0,wave_1,n,phase,lambda", rows, json!({ "points": points }), pass)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityCampaignMetrics {
    pub general: IdentitySuiteReport,
    pub eigen: IdentitySuiteReport,
    pub inequalities: Vec<InequalityReport>,
    pub strong_functional: InequalityReport,
    /// Same fit with `μ = 0`, where only convection drives `F`.
    pub strong_functional_inviscid: InequalityReport,
    pub truncation_monotone: Option<bool>,
}

/// Quadrature orders of the general-sample suite.
pub fn identity_domain(d: &Domain) -> Domain {
    match d.shape {
        Shape::Channel { .. } => d.clone().with_orders([16, 16, 48], [16, 16]),
        Shape::Ball { .. } => d.clone().with_orders([12, 12, 24], [12, 24]),
    }
}

/// Identity suite on general and eigen-combination samples, inequality
/// monitors and the strong-functional constant.
pub fn run_identity_campaign(cfg: &CampaignConfig) -> Result<CampaignReport> {
    check_kind(cfg, CampaignKind::IdentitySuite)?;
    cfg.validate()?;
    let base = cfg.base_domain()?;
    let gd = identity_domain(&base);
    let general = general_samples(&gd, cfg.samples, cfg.seed);
    let general_report = run_identity_suite(&general, cfg.seed);
    let bd = cfg.basis_domain()?;
    let basis = obtain_basis(&bd, cfg.zeta, cfg.cutoffs(), false)?;
    let eigen = eigen_samples(&basis, cfg.eigen_samples.max(1), cfg.seed);
    let eigen_report = run_identity_suite(&eigen, cfg.seed);
    let truncation = basis.len() / 2;
    let ctx = FitContext { zeta: cfg.zeta, basis: Some(&basis), truncation, seed: cfg.seed };
    let mut pool = eigen.clone();
    pool.extend(general.iter().filter(|s| s.velocity.is_some()).take(10).cloned());
    let inequalities = monitor_inequalities(&InequalityId::ALL, &pool, &bd, &ctx);
    let strong = strong_fit_with_refinement(&basis, cfg.mu, cfg.seed)?;
    let strong_inviscid = strong_fit_with_refinement(&basis, 0.0, cfg.seed)?;
    let truncation_monotone = match bd.shape {
        Shape::Channel { .. } => Some(eigen.iter().filter_map(|s| s.coefficients.as_ref()).all(|c| truncation_energies(&basis.lambdas(), c).1)),
        Shape::Ball { .. } => None,
    };
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (set, r) in [("general", &general_report), ("eigen", &eigen_report)] {
        for i in &r.identities {
            rows.push(vec![set.into(), i.identity.clone(), i.samples.to_string(), e(i.max_residual), e(i.coarse_max_residual), i.decays.to_string(), i.pass.to_string()]);
        }
    }
    if let Some(out) = &cfg.out {
        let mut named: Vec<(String, &InequalityReport)> = inequalities.iter().map(|r| (r.inequality_id.name(), r)).collect();
        named.push((strong.inequality_id.name(), &strong));
        named.push((format!("{}_inviscid", strong.inequality_id.name()), &strong_inviscid));
        let irows: Vec<Vec<String>> = named
            .into_iter()
            .map(|(name, r)| vec![name, r.samples.to_string(), e(r.fitted_constant), r.refined_constant.map(e).unwrap_or_default(), e(r.ratio_decades), r.pass.to_string()])
            .collect();
        write_csv(&out.join("inequalities.csv"), "inequality,samples,constant,refined_constant,ratio_decades,pass", &irows)?;
    }
    let pass = general_report.pass && eigen_report.pass && inequalities.iter().all(|r| r.pass) && strong.pass && strong_inviscid.pass && truncation_monotone.unwrap_or(true);
    let metrics = IdentityCampaignMetrics {
        general: general_report,
        eigen: eigen_report,
        inequalities,
        strong_functional: strong,
        strong_functional_inviscid: strong_inviscid,
        truncation_monotone,
    };
    finish(cfg, "set,identity,samples,max_residual,coarse_max_residual,decays,pass", rows, serde_json::to_value(metrics)?, pass)
}

/// `M` in `dF/dt ≤ M(F + F²)` fitted on seeded states with assembly at the
/// basis resolution and at doubled orders.
pub fn strong_fit_with_refinement(basis: &EigenBasis, mu: f64, seed: u64) -> Result<InequalityReport> {
    let states = sample_states(basis.len(), 40, seed);
    let fit_at = |d: &Domain| -> Result<InequalityReport> {
        let t = ModeTables::new(basis, d);
        let tensor = crate::galerkin::assemble_from_tables(basis, &t)?;
        let g = crate::galerkin::Grams::new(&t);
        let sys = GalerkinSystem::new(basis, tensor, mu);
        Ok(fit_strong_constant(&states, &sys, &g, d.volume_order, seed))
    };
    let mut r = fit_at(&basis.domain)?;
    let fine = fit_at(&basis.domain.refined())?;
    let scale = r.fitted_constant.abs().max(fine.fitted_constant.abs());
    let st = scale < 1e-12 || (r.fitted_constant - fine.fitted_constant).abs() <= crate::analysis::STABILITY_TOL * scale;
    r.ratio_decades = {
        let ratios: Vec<f64> = r.rhs.iter().zip(&states).map(|(rhs, c)| rhs / c.iter().map(|v| v * v).sum::<f64>()).collect();
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        if lo > 0.0 { (hi / lo).log10() } else { 0.0 }
    };
    r.refined_constant = Some(fine.fitted_constant);
    r.stable = Some(st);
    r.pass = r.fitted_constant.is_finite() && st && r.samples > 0;
    Ok(r)
}

fn check_kind(cfg: &CampaignConfig, k: CampaignKind) -> Result<()> {
    if cfg.campaign != k {
        return Err(Error::Config(format!("config is for {}, not {}", cfg.campaign.name(), k.name())));
    }
    Ok(())
}

fn finish(cfg: &CampaignConfig, header: &str, rows: Vec<Vec<String>>, metrics: Value, pass: bool) -> Result<CampaignReport> {
    let report = CampaignReport { campaign: cfg.campaign.name().into(), params: serde_json::to_value(cfg)?, metrics, pass };
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out)?;
        write_csv(&out.join(format!("{}.csv", cfg.campaign.name())), header, &rows)?;
        std::fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(report)
}

/// Dispatches on `cfg.campaign`.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport> {
    match cfg.campaign {
        CampaignKind::NoslipLimit => run_noslip_limit(cfg),
        CampaignKind::CompleteSlipLimit => run_complete_slip_limit(cfg),
        CampaignKind::InviscidLimit => run_inviscid_limit(cfg),
        CampaignKind::SpectrumReport => run_spectrum_report(cfg),
        CampaignKind::IdentitySuite => run_identity_campaign(cfg),
    }
}

/// Single simulation from a config; writes CSVs and `summary.json` to `out`.
pub fn run_single(cfg: &CampaignConfig) -> Result<(RunOutput, Value)> {
    let sim = cfg.sim_config(cfg.mu);
    sim.validate()?;
    if !(cfg.output_dt > 0.0) {
        return Err(Error::Config("output_dt must be positive".into()));
    }
    let init = parse_initial(&cfg.initial)?;
    let d = cfg.basis_domain()?;
    let basis = obtain_basis(&d, cfg.zeta, cfg.cutoffs(), false)?;
    let r = simulate(basis, &sim, init, cfg.seed)?;
    let summary = json!({
        "params": cfg,
        "run": r.summary(),
        "boundary_time_integral": r.boundary_time_integral(),
        "weak_form_residual_solution": crate::galerkin::weak_form_residual(&r.trajectory, &r.system, &r.assembled.tables, r.basis.zeta, crate::galerkin::TestFunction::Solution).ok(),
    });
    if let Some(out) = &cfg.out {
        r.write_csvs(out)?;
        std::fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    }
    Ok((r, summary))
}

/// First even shear eigenvalue `-k²` for a slip length.
pub fn first_even_shear_lambda(zeta: SlipLength) -> f64 {
    let k = shear_mode_roots(zeta, Parity::Even, 1)[0];
    -k * k
}

/// Index of the first even shear mode of a channel basis.
pub fn first_even_shear_index(basis: &EigenBasis) -> Option<usize> {
    basis.modes.iter().position(|m| m.family == Family::Shear && m.parity == Some(Parity::Even) && m.phase == 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_and_validation() {
        let c = CampaignConfig::from_toml_str("campaign = \"noslip_limit\"\nzetas = [0.5, 0.05]\nmu = 1\nT = 0.5\n", CampaignKind::IdentitySuite).unwrap();
        assert_eq!(c.campaign, CampaignKind::NoslipLimit);
        assert_eq!(c.zetas, vec![fin(0.5), fin(0.05)]);
        assert_eq!(c.mu, 1.0);
        assert_eq!(c.t_end, 0.5);
        assert!(c.validate().is_ok());
        let c = CampaignConfig::from_toml_str("zeta = \"inf\"", CampaignKind::SpectrumReport).unwrap();
        assert_eq!(c.zeta, inf());
        assert_eq!(c.zetas.len(), 4);
        let bad = |t: &str| CampaignConfig::from_toml_str(t, CampaignKind::NoslipLimit).and_then(|c| c.validate());
        assert!(bad("typo = 1").unwrap_err().is_config());
        assert!(bad("zetas = []").unwrap_err().is_config());
        assert!(bad("zetas = [0.1, \"inf\"]").unwrap_err().is_config());
        assert!(bad("zetas = [0.01, 0.1]").unwrap_err().is_config());
        assert!(bad("zetas = [-0.1]").unwrap_err().is_config());
        assert!(bad("T = 0").unwrap_err().is_config());
        assert!(bad("campaign = \"nope\"").unwrap_err().is_config());
        assert!(bad("initial = \"wave\"").unwrap_err().is_config());
        let inv = |t: &str| CampaignConfig::from_toml_str(t, CampaignKind::InviscidLimit).and_then(|c| c.validate());
        assert!(inv("mus = []").unwrap_err().is_config());
        assert!(inv("mus = [0.1, 0.0]").unwrap_err().is_config());
        let cs = |t: &str| CampaignConfig::from_toml_str(t, CampaignKind::CompleteSlipLimit).and_then(|c| c.validate());
        assert!(cs("zetas = [\"inf\", 1.0]").unwrap_err().is_config());
        assert!(cs("zetas = [1.0, 10.0]").is_ok());
        assert_eq!(parse_initial("mode:3").unwrap(), InitialData::Mode(3));
    }

    #[test]
    fn euler_references_are_steady_and_tangent() {
        for d in [Domain::channel(2.0, 1.0).unwrap().with_orders([6, 6, 12], [6, 6]), Domain::ball(1.5).unwrap().with_orders([6, 6, 12], [6, 12])] {
            let r = EulerReference::for_domain(&d);
            assert!(r.steady_residual(&d) < 1e-8);
            let f = r.field();
            for n in &d.surface_grid().nodes {
                let u = values(&f.jet(n.frame.point));
                assert!(v_dot(&u, &n.frame.normal).abs() < 1e-14);
            }
            for x in d.volume_grid().points.iter().take(50) {
                assert!(crate::jet::div(&f.jet(*x)).value().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn power_law_and_time_quadrature() {
        let x = [0.1, 0.01, 0.001];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.sqrt()).collect();
        let (a, c, r2) = fit_power_law(&x, &y).unwrap();
        assert!((a - 0.5).abs() < 1e-12 && (c - 3f64.ln()).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!(fit_power_law(&[0.1], &[1.0]).is_none());
        let rows: Vec<(f64, f64)> = (0..=40).map(|k| (k as f64 * 0.05, (k as f64 * 0.05).powi(3))).collect();
        assert!((time_integral(&rows) - 4.0).abs() < 1e-12);
        let rows: Vec<(f64, f64)> = (0..=100).map(|k| (k as f64 * 0.01, (k as f64 * 0.01).exp())).collect();
        assert!((time_integral(&rows) - (1f64.exp() - 1.0)).abs() < 1e-8);
    }

    #[test]
    fn sign_criterion_scope() {
        let b = Domain::ball(2.0).unwrap();
        assert!(sign_criterion_applies(&b, fin(2.0)));
        assert!(!sign_criterion_applies(&b, fin(4.0)));
        assert!(!sign_criterion_applies(&b, inf()));
        assert!(sign_criterion_applies(&Domain::channel(1.0, 1.0).unwrap(), inf()));
    }

    fn small(kind: CampaignKind) -> CampaignConfig {
        CampaignConfig { cutoff_kappa: 1, cutoff_n: 1, t_end: 0.2, output_dt: 0.05, dt: 0.01, ..CampaignConfig::defaults(kind) }
    }

    #[test]
    fn noslip_campaign_is_bounded_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut outs = Vec::new();
        for k in 0..2 {
            let cfg = CampaignConfig { zetas: vec![fin(0.1), fin(0.01)], out: Some(dir.path().join(format!("r{k}"))), ..small(CampaignKind::NoslipLimit) };
            let r = run_campaign(&cfg).unwrap();
            assert!(r.pass, "{}", r.metrics);
            let read = |p: &str| std::fs::read(cfg.out.as_ref().unwrap().join(p)).unwrap();
            outs.push((read("noslip_limit.csv"), read("run_00_zeta_1e-1/trajectory.csv"), read("run_01_zeta_1e-2/ledger.csv")));
            let s: CampaignReport = serde_json::from_slice(&read("summary.json")).unwrap();
            assert_eq!(s.campaign, "noslip_limit");
        }
        assert_eq!(outs[0], outs[1]);
        let cfg = CampaignConfig { zetas: vec![fin(0.1), inf()], ..small(CampaignKind::NoslipLimit) };
        assert!(run_campaign(&cfg).unwrap_err().is_config());
    }

    #[test]
    fn smooth_initial_data_obeys_bessel() {
        let cfg = small(CampaignKind::NoslipLimit);
        let b = obtain_basis(&cfg.basis_domain().unwrap(), fin(1.0), cfg.cutoffs(), false).unwrap();
        let p = Projector::new(&b);
        let (c, n2) = initial_coefficients(InitialData::Smooth, &b, &p, 1).unwrap();
        assert_eq!(n2, Some(1.0));
        let e: f64 = c.iter().map(|v| v * v).sum();
        assert!(e > 0.1 && e <= 1.0 + 1e-12);
        assert!(initial_coefficients(InitialData::Mode(b.len()), &b, &p, 1).unwrap_err().is_config());
    }

    #[test]
    fn single_mode_run_matches_exponential() {
        let cfg = CampaignConfig { t_end: 5.0, output_dt: 0.25, mu: 0.2, zeta: fin(1.0), ..small(CampaignKind::NoslipLimit) };
        let d = cfg.basis_domain().unwrap();
        let b = obtain_basis(&d, cfg.zeta, cfg.cutoffs(), false).unwrap();
        let k = first_even_shear_index(&b).unwrap();
        let cfg = CampaignConfig { initial: format!("mode:{k}"), ..cfg };
        let (r, _) = run_single(&cfg).unwrap();
        let lambda = first_even_shear_lambda(fin(1.0));
        for (t, c) in r.trajectory.times.iter().zip(&r.trajectory.coeffs) {
            assert!((c[k] - (0.2 * lambda * t).exp()).abs() < 1e-9);
        }
        assert!(r.monitor.holds);
        let bad = CampaignConfig { t_end: -1.0, ..cfg };
        assert!(run_single(&bad).err().unwrap().is_config());
    }
}
