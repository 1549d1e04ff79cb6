//! `slipstokes` command-line front end.
//!
//! Exit codes: 0 pass, 1 fail, 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use slipstokes::experiments::{obtain_basis, run_campaign, run_single, CampaignConfig, CampaignKind, CampaignReport, DomainKind, IntegratorKind};
use slipstokes::spectrum::{basis_report, load_basis, save_basis};
use slipstokes::{Error, SlipLength};

#[derive(Parser)]
#[command(name = "slipstokes", version, about = "Spectral Galerkin Navier-Stokes with Navier slip walls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or inspect eigenbases.
    #[command(subcommand)]
    Basis(BasisCommand),
    /// Run one simulation; writes trajectory.csv, ledger.csv and summary.json to --out.
    Run(Common),
    /// Run a campaign: noslip_limit, complete_slip_limit, inviscid_limit, spectrum_report, identity_suite.
    Campaign {
        kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Identity suite, inequality monitors and strong-functional fit.
    Verify(Common),
    /// Summarise campaign summary.json files (or directories holding one).
    Report { paths: Vec<PathBuf> },
}

#[derive(Subcommand)]
enum BasisCommand {
    /// Build and validate a basis; saved to --out, else to $SLIPSTOKES_CACHE.
    Build(Common),
    /// Print the eigenvalue table of a saved basis, nonincreasing.
    Inspect { path: PathBuf },
}

/// Shared flags. Flags override values from --config; unset values fall back
/// to the defaults listed here.
#[derive(Args, Clone, Default)]
struct Common {
    /// Key-value (TOML) config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// channel | ball [default: channel]
    #[arg(long)]
    domain: Option<String>,
    /// Slip length, a positive number or "inf" [default: 1]
    #[arg(long)]
    zeta: Option<String>,
    /// Comma-separated slip-length sweep [default: per campaign]
    #[arg(long)]
    zetas: Option<String>,
    /// Viscosity [default: 0.1]
    #[arg(long)]
    mu: Option<f64>,
    /// Comma-separated viscosity sweep [default: 0.1,0.01,0.001 for inviscid_limit]
    #[arg(long)]
    mus: Option<String>,
    /// Channel max(|p|,|q|) or ball maximum degree [default: 1; 2 for spectrum_report]
    #[arg(long = "cutoff-kappa")]
    cutoff_kappa: Option<u32>,
    /// Vertical or radial modes per family [default: 3; 4 for spectrum_report]
    #[arg(long = "cutoff-n")]
    cutoff_n: Option<usize>,
    /// Time horizon [default: 1]
    #[arg(long = "T")]
    t_end: Option<f64>,
    /// Fixed time step [default: 0.01]
    #[arg(long)]
    dt: Option<f64>,
    /// Relative tolerance; selects the adaptive integrator [default: 1e-9]
    #[arg(long)]
    rtol: Option<f64>,
    /// rk4 | integrating_factor | adaptive [default: rk4]
    #[arg(long)]
    integrator: Option<String>,
    /// Output spacing of trajectories [default: 0.05]
    #[arg(long = "output-dt")]
    output_dt: Option<f64>,
    /// smooth | random | mode:<k> [default: smooth]
    #[arg(long)]
    initial: Option<String>,
    /// General samples in the identity suite [default: 100]
    #[arg(long)]
    samples: Option<usize>,
    /// Random seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory (file for `basis build`)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_err(m: impl Into<String>) -> Error {
    Error::Config(m.into())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',').map(|v| v.trim().parse::<T>().map_err(|_| config_err(format!("cannot parse {what} '{v}'")))).collect()
}

impl Common {
    fn resolve(&self, kind: CampaignKind) -> Result<CampaignConfig, Error> {
        self.resolve_as(kind, true)
    }

    /// `strict` rejects a config file written for another campaign.
    fn resolve_as(&self, kind: CampaignKind, strict: bool) -> Result<CampaignConfig, Error> {
        let mut c = match &self.config {
            Some(p) => CampaignConfig::from_file(p, kind)?,
            None => CampaignConfig::defaults(kind),
        };
        if strict && c.campaign != kind {
            return Err(config_err(format!("config file is for {}, command needs {}", c.campaign.name(), kind.name())));
        }
        if let Some(d) = &self.domain {
            c.domain = match d.as_str() {
                "channel" => DomainKind::Channel,
                "ball" => DomainKind::Ball,
                _ => return Err(config_err(format!("unknown domain '{d}'"))),
            };
        }
        if let Some(z) = &self.zeta {
            c.zeta = z.parse::<SlipLength>().map_err(|e| config_err(e.to_string()))?;
        }
        if let Some(z) = &self.zetas {
            c.zetas = s_zetas(z)?;
        }
        if let Some(v) = self.mu {
            c.mu = v;
        }
        if let Some(v) = &self.mus {
            c.mus = parse_list(v, "viscosity")?;
        }
        if let Some(v) = self.cutoff_kappa {
            c.cutoff_kappa = v;
        }
        if let Some(v) = self.cutoff_n {
            c.cutoff_n = v;
        }
        if let Some(v) = self.t_end {
            c.t_end = v;
        }
        if let Some(v) = self.dt {
            c.dt = v;
        }
        if let Some(v) = self.rtol {
            c.rtol = v;
            c.integrator = IntegratorKind::Adaptive;
        }
        if let Some(v) = &self.integrator {
            c.integrator = serde_json::from_value(Value::String(v.clone())).map_err(|_| config_err(format!("unknown integrator '{v}'")))?;
        }
        if let Some(v) = self.output_dt {
            c.output_dt = v;
        }
        if let Some(v) = &self.initial {
            c.initial = v.clone();
        }
        if let Some(v) = self.samples {
            c.samples = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.out = Some(v.clone());
        }
        Ok(c)
    }
}

fn s_zetas(s: &str) -> Result<Vec<SlipLength>, Error> {
    s.split(',').map(|v| v.trim().parse::<SlipLength>().map_err(|e| config_err(e.to_string()))).collect()
}

fn set_jobs(j: Option<usize>) -> Result<(), Error> {
    if let Some(n) = j {
        if n == 0 {
            return Err(config_err("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| config_err(e.to_string()))?;
    }
    Ok(())
}

fn print(v: Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
}

fn verdict(pass: bool) -> ExitCode {
    ExitCode::from(if pass { 0 } else { 1 })
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Basis(BasisCommand::Build(common)) => {
            set_jobs(common.jobs)?;
            let c = common.resolve(CampaignKind::SpectrumReport)?;
            c.validate()?;
            let d = c.basis_domain()?;
            let basis = obtain_basis(&d, c.zeta, c.cutoffs(), true)?;
            if let Some(p) = &c.out {
                save_basis(&basis, p)?;
            }
            let report = basis_report(&basis);
            let pass = report.failures.is_empty() && report.gram_defect <= 1e-9;
            print(json!({ "domain": d.label(), "zeta": basis.zeta, "report": report }));
            Ok(verdict(pass))
        }
        Command::Basis(BasisCommand::Inspect { path }) => {
            let b = load_basis(&path).map_err(|e| config_err(format!("cannot load {}: {e}", path.display())))?;
            println!("# {} zeta={} modes={} lambda_hat={:e}", b.domain.label(), b.zeta, b.len(), b.lambda_hat);
            println!("{:>5}  {:<36} {:>24}", "index", "mode", "lambda");
            let mut rows: Vec<(usize, String, f64)> = b.modes.iter().enumerate().map(|(k, m)| (k, m.label(), m.lambda)).collect();
            rows.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            for (k, l, v) in rows {
                println!("{k:>5}  {l:<36} {v:>24.16e}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(common) => {
            set_jobs(common.jobs)?;
            let c = common.resolve_as(CampaignKind::NoslipLimit, false)?;
            let (r, summary) = run_single(&c)?;
            print(summary);
            Ok(verdict(r.trajectory.status == slipstokes::galerkin::RunStatus::Completed))
        }
        Command::Campaign { kind, common } => {
            set_jobs(common.jobs)?;
            let k = CampaignKind::parse(&kind)?;
            let c = common.resolve(k)?;
            let r = run_campaign(&c)?;
            print(json!(r));
            Ok(verdict(r.pass))
        }
        Command::Verify(common) => {
            set_jobs(common.jobs)?;
            let c = common.resolve(CampaignKind::IdentitySuite)?;
            let r = run_campaign(&c)?;
            print(json!(r));
            Ok(verdict(r.pass))
        }
        Command::Report { paths } => {
            if paths.is_empty() {
                return Err(config_err("report needs at least one summary path"));
            }
            let mut all = true;
            let mut rows = Vec::new();
            for p in paths {
                let file = if p.is_dir() { p.join("summary.json") } else { p };
                let text = std::fs::read(&file).map_err(|e| config_err(format!("cannot read {}: {e}", file.display())))?;
                let r: CampaignReport = serde_json::from_slice(&text).map_err(|e| config_err(format!("{}: {e}", file.display())))?;
                all &= r.pass;
                rows.push(json!({ "file": file.display().to_string(), "campaign": r.campaign, "pass": r.pass }));
            }
            print(json!({ "reports": rows, "pass": all }));
            Ok(verdict(all))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
