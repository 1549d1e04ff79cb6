//! Acceptance criteria 1-11, one PASS/FAIL line each.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slipstokes::analysis::{eigen_samples, general_samples, monitor_inequalities, run_identity_suite, FitContext, InequalityId};
use slipstokes::experiments::{
    first_even_shear_index, identity_domain, run_campaign, simulate_from, strong_fit_with_refinement, CampaignConfig, CampaignKind, DomainKind, InitialData,
};
use slipstokes::galerkin::{assemble, Integrator, SimConfig};
use slipstokes::helmholtz::{dirichlet_form, Projector, VelocityField};
use slipstokes::spectrum::{basis_report, build_basis_opts, shear_mode_roots, suggested_orders, Cutoffs, EigenBasis, Parity};
use slipstokes::{Domain, SlipLength};

type Outcome = (bool, String);

/// Independent root of `k sin(k/2) = (1/ζ) cos(k/2)` on `(0, π)` by bisection.
fn even_shear_oracle(zeta: f64) -> f64 {
    let f = |k: f64| zeta * k * (k / 2.0).sin() - (k / 2.0).cos();
    let (mut lo, mut hi) = (0.0, PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn channel_basis(zeta: SlipLength, cut: Cutoffs, validate: bool) -> EigenBasis {
    let d = Domain::channel(2.0, 2.0).unwrap();
    let (v, s) = suggested_orders(&d.shape, cut);
    build_basis_opts(&d.with_orders(v, s), zeta, cut, validate).unwrap()
}

fn ball_basis(radius: f64, zeta: SlipLength, cut: Cutoffs) -> EigenBasis {
    let d = Domain::ball(radius).unwrap();
    let (v, s) = suggested_orders(&d.shape, cut);
    build_basis_opts(&d.with_orders(v, s), zeta, cut, false).unwrap()
}

fn criterion_1() -> Outcome {
    let cut = Cutoffs { kappa: 2, n: 4 };
    let mut ok = true;
    let mut notes = Vec::new();
    for z in [SlipLength::Finite(0.1), SlipLength::Finite(1.0), SlipLength::Finite(10.0), SlipLength::Infinite] {
        let b = channel_basis(z, cut, false);
        let r = basis_report(&b);
        let pass = r.max_eigen_residual <= 1e-8 && r.max_navier_residual <= 1e-7 && r.gram_defect <= 1e-9 && r.failures.is_empty();
        ok &= pass;
        notes.push(format!("zeta={z}: {} modes, eig {:.1e}, navier {:.1e}, gram {:.1e}", b.len(), r.max_eigen_residual, r.max_navier_residual, r.gram_defect));
    }
    let oracle = even_shear_oracle(1.0);
    let root = shear_mode_roots(SlipLength::Finite(1.0), Parity::Even, 1)[0];
    let root_ok = (root - oracle).abs() <= 1e-6 && (oracle - 1.3065).abs() < 1e-4;
    ok &= root_ok;
    notes.push(format!("first even shear root {root:.10} vs oracle {oracle:.10}"));
    (ok, notes.join("; "))
}

fn criterion_2() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let cut = Cutoffs { kappa: 2, n: 4 };
    for z in [SlipLength::Finite(0.1), SlipLength::Finite(1.0), SlipLength::Finite(10.0), SlipLength::Infinite] {
        let b = channel_basis(z, cut, false);
        let m = b.lambdas().into_iter().fold(f64::NEG_INFINITY, f64::max);
        ok &= m <= 1e-10;
        notes.push(format!("channel zeta={z}: max lambda {m:.3e}"));
    }
    let radius = 1.0;
    let bcut = Cutoffs { kappa: 3, n: 2 };
    for z in [0.25, 0.5, 1.0] {
        let b = ball_basis(radius, SlipLength::Finite(z * radius), bcut);
        let m = b.lambdas().into_iter().fold(f64::NEG_INFINITY, f64::max);
        ok &= m <= 1e-10;
        notes.push(format!("ball zeta={z}R: max lambda {m:.3e}"));
    }
    let b = ball_basis(radius, SlipLength::Finite(2.0 * radius), bcut);
    let top = &b.modes[0];
    let e = dirichlet_form(&top.field, &top.field, b.zeta, &b.domain);
    let consistent = b.lambda_hat >= 0.0 && (e + top.lambda).abs() <= 1e-8 * top.lambda.abs().max(1.0) && (b.lambda_hat == 0.0 || e < 0.0);
    ok &= consistent;
    notes.push(format!("ball zeta=2R: lambda_hat {:.6e}, E(a0,a0) {:.6e}", b.lambda_hat, e));
    (ok, notes.join("; "))
}

fn criterion_3() -> Outcome {
    let zetas = [f64::INFINITY, 1e4, 1e3, 1e2, 10.0, 1.0, 0.1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let lambdas: Vec<f64> = zetas
        .iter()
        .map(|z| {
            let k = shear_mode_roots(SlipLength::new(*z).unwrap(), Parity::Even, 1)[0];
            -k * k
        })
        .collect();
    let monotone = lambdas.windows(2).all(|w| w[1] < w[0]);
    let start = lambdas[0];
    let end = *lambdas.last().unwrap();
    // the basis carries the same eigenvalue
    let b = channel_basis(SlipLength::Finite(1e-6), Cutoffs { kappa: 0, n: 2 }, false);
    let k = first_even_shear_index(&b).unwrap();
    let basis_ok = (b.modes[k].lambda - end).abs() < 1e-12;
    let ok = monotone && start == 0.0 && (end + PI * PI).abs() <= 1e-3 && basis_ok;
    (ok, format!("lambda(inf)={start:e}, lambda(1e-6)={end:.8} (-pi^2={:.8}), monotone={monotone}", -PI * PI))
}

fn criterion_4() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for d in [Domain::channel(2.0, 2.0).unwrap(), Domain::ball(1.0).unwrap()] {
        let gd = identity_domain(&d);
        let samples = general_samples(&gd, 100, 2024);
        let r = run_identity_suite(&samples, 2024);
        ok &= r.pass && r.samples == 100;
        let worst = r.identities.iter().map(|i| i.max_residual).fold(0.0, f64::max);
        let failing: Vec<&str> = r.identities.iter().filter(|i| !i.pass).map(|i| i.identity.as_str()).collect();
        notes.push(format!("{}: {} identities, worst residual {worst:.2e}, failing {failing:?}", r.domain, r.identities.len()));
    }
    (ok, notes.join("; "))
}

fn criterion_5() -> Outcome {
    let b = channel_basis(SlipLength::Finite(1.0), Cutoffs { kappa: 1, n: 3 }, false);
    let a = assemble(&b).unwrap();
    let t = &a.tensor;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let c: Vec<f64> = (0..b.len()).map(|_| rng.gen_range(-1.0..1.0) * 10f64.powf(rng.gen_range(-2.0..2.0))).collect();
        let n3 = c.iter().map(|v| v * v).sum::<f64>().powf(1.5);
        let e: f64 = c.iter().zip(t.contract(&c)).map(|(x, y)| x * y).sum();
        worst = worst.max(e.abs() / n3);
    }
    let ok = b.len() <= 64 && t.raw_skew_defect <= 1e-10 && t.skew_defect() <= 1e-10 && worst <= 1e-10;
    (ok, format!("{} modes, raw skew defect {:.2e}, energy contraction {:.2e}·|c|^3", b.len(), t.raw_skew_defect, worst))
}

fn criterion_6() -> Outcome {
    let cfg = CampaignConfig { domain: DomainKind::Channel, zeta: SlipLength::Finite(1.0), cutoff_kappa: 1, cutoff_n: 3, ..Default::default() };
    let b = channel_basis(cfg.zeta, cfg.cutoffs(), false);
    let p = Projector::new(&b);
    let (c0, _) = slipstokes::experiments::initial_coefficients(InitialData::Smooth, &b, &p, 1).unwrap();
    let c0: Vec<f64> = c0.iter().map(|v| 2.0 * v).collect();
    let a = assemble(&b).unwrap();
    let sim = SimConfig { mu: 0.05, t_end: 2.0, integrator: Integrator::Rk4 { dt: 0.005 }, output_dt: Some(0.1) };
    let modes = b.len();
    let r = simulate_from(b.clone(), a, &sim, c0.clone(), None, 1).unwrap();
    let pw = r.energy.max_pointwise;
    let a0 = assemble(&b).unwrap();
    let sim0 = SimConfig { mu: 0.0, ..sim };
    let r0 = simulate_from(b, a0, &sim0, c0, None, 1).unwrap();
    let e0 = r0.ledger.rows[0].kinetic;
    let drift = r0.ledger.rows.iter().map(|row| (row.kinetic - e0).abs() / e0).fold(0.0, f64::max);
    let ok = pw <= 1e-6 && drift <= 1e-8;
    (ok, format!("{modes} modes, pointwise residual {pw:.2e}, integrated {:.2e}, mu=0 drift {drift:.2e}", r.energy.max_integrated))
}

fn criterion_7() -> Outcome {
    let zeta = SlipLength::Finite(1.0);
    let b = channel_basis(zeta, Cutoffs { kappa: 1, n: 3 }, false);
    let k = first_even_shear_index(&b).unwrap();
    let root = even_shear_oracle(1.0);
    let lambda = -root * root;
    let mu = 0.1;
    let mut c0 = vec![0.0; b.len()];
    c0[k] = 0.8;
    let a = assemble(&b).unwrap();
    let sim = SimConfig { mu, t_end: 5.0, integrator: Integrator::Rk4 { dt: 0.01 }, output_dt: Some(0.1) };
    let r = simulate_from(b, a, &sim, c0, None, 1).unwrap();
    let err = r.trajectory.times.iter().zip(&r.trajectory.coeffs).map(|(t, c)| (c[k] - 0.8 * (mu * lambda * t).exp()).abs()).fold(0.0, f64::max);
    let leak = r.trajectory.coeffs.iter().flat_map(|c| c.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, v)| v.abs())).fold(0.0, f64::max);
    (err <= 1e-9 && leak == 0.0, format!("max |c0 - c0(0)exp(mu lambda0 t)| = {err:.2e} over [0,5], other modes {leak:e}"))
}

fn criterion_8() -> Outcome {
    let cfg = CampaignConfig::defaults(CampaignKind::NoslipLimit);
    let r = run_campaign(&cfg).unwrap();
    let pts = r.metrics["points"].as_array().unwrap();
    let mut ok = r.pass && pts.len() == 4;
    let mut prev = f64::INFINITY;
    let mut notes = Vec::new();
    for p in pts {
        let z = p["zeta"].as_f64().unwrap();
        let bi = p["boundary_integral"].as_f64().unwrap();
        let bound = z / (2.0 * 0.1) * 1.0;
        ok &= bi <= bound * 1.001 && bi < prev;
        prev = bi;
        notes.push(format!("zeta={z:e}: {bi:.3e} <= {bound:.3e}"));
    }
    (ok, notes.join("; "))
}

fn criterion_9() -> Outcome {
    let cfg = CampaignConfig::defaults(CampaignKind::InviscidLimit);
    let r = run_campaign(&cfg).unwrap();
    let m = &r.metrics;
    let errs: Vec<f64> = m["points"].as_array().unwrap().iter().map(|p| p["sup_error"].as_f64().unwrap()).collect();
    let alpha = m["alpha"].as_f64().unwrap_or(f64::NAN);
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    let ok = r.pass && monotone && alpha >= 0.45;
    (
        ok,
        format!(
            "sup errors {:?}, alpha {alpha:.3} (R^2 {:.4}); printed rate mu^1 vs proof rate mu^(1/2): measured, not assumed; mu=0 error {:.1e}",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>(),
            m["alpha_r2"].as_f64().unwrap_or(f64::NAN),
            m["zero_viscosity"]["sup_error"].as_f64().unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_10() -> Outcome {
    let zeta = SlipLength::Finite(1.0);
    let b = channel_basis(zeta, Cutoffs { kappa: 1, n: 3 }, false);
    let mut samples = eigen_samples(&b, 20, 11);
    let gd = identity_domain(&b.domain);
    samples.extend(general_samples(&gd, 10, 11).into_iter().filter(|s| s.velocity.is_some()));
    let ctx = FitContext { zeta, basis: Some(&b), truncation: b.len() / 2, seed: 11 };
    let reps = monitor_inequalities(&InequalityId::ALL, &samples, &b.domain, &ctx);
    let mut ok = reps.iter().all(|r| r.pass && r.fitted_constant.is_finite());
    let strong = strong_fit_with_refinement(&b, 0.0, 11).unwrap();
    ok &= strong.pass;
    // E(P_N u, P_N u) by quadrature of the truncated field, nondecreasing in N
    let mut mono = true;
    for s in samples.iter().filter(|s| s.coefficients.is_some()).take(3) {
        let c = s.coefficients.as_ref().unwrap();
        let mut prev = f64::NEG_INFINITY;
        for n in (1..=b.len()).step_by(6).chain([b.len()]) {
            let mut cn = c.clone();
            cn[n..].iter_mut().for_each(|v| *v = 0.0);
            let u = VelocityField::from_modes(&b, &cn);
            let e = dirichlet_form(&u, &u, zeta, &b.domain);
            mono &= e >= prev - 1e-12 * e.abs().max(1.0);
            prev = e;
        }
    }
    ok &= mono;
    let consts: Vec<String> = reps.iter().map(|r| format!("{}={:.3}/{:.3}", r.inequality_id.name(), r.fitted_constant, r.refined_constant.unwrap_or(f64::NAN))).collect();
    (ok, format!("{}; strong_functional={:.3e}/{:.3e}; truncation monotone={mono}", consts.join(" "), strong.fitted_constant, strong.refined_constant.unwrap_or(f64::NAN)))
}

fn csv_files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    let small = |k: CampaignKind| CampaignConfig { cutoff_kappa: 1, cutoff_n: 2, t_end: 0.3, samples: 4, eigen_samples: 4, seed: 99, ..CampaignConfig::defaults(k) };
    for k in [CampaignKind::NoslipLimit, CampaignKind::CompleteSlipLimit, CampaignKind::InviscidLimit, CampaignKind::SpectrumReport, CampaignKind::IdentitySuite] {
        let mut sets = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{}_{rep}", k.name()));
            run_campaign(&CampaignConfig { out: Some(out.clone()), ..small(k) }).unwrap();
            sets.push(csv_files(&out));
        }
        let same = !sets[0].is_empty() && sets[0] == sets[1];
        ok &= same;
        notes.push(format!("{}: {} csv files identical={same}", k.name(), sets[0].len()));
    }
    (ok, notes.join("; "))
}

fn main() {
    let criteria: [(usize, &str, Duration, fn() -> Outcome); 11] = [
        (1, "eigenbasis correctness", Duration::from_secs(60), criterion_1),
        (2, "spectral sign criterion", Duration::from_secs(60), criterion_2),
        (3, "no-slip/free-slip interpolation", Duration::from_secs(10), criterion_3),
        (4, "identity suite", Duration::from_secs(300), criterion_4),
        (5, "convection tensor", Duration::from_secs(60), criterion_5),
        (6, "energy identity", Duration::from_secs(300), criterion_6),
        (7, "single-mode oracle", Duration::from_secs(10), criterion_7),
        (8, "no-slip limit", Duration::from_secs(600), criterion_8),
        (9, "inviscid limit", Duration::from_secs(600), criterion_9),
        (10, "inequality monitors", Duration::from_secs(300), criterion_10),
        (11, "determinism", Duration::from_secs(600), criterion_11),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, budget, f) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let (ok, detail) = f();
        let el = t0.elapsed();
        let within = el <= budget;
        let pass = ok && within;
        failed += usize::from(!pass);
        println!(
            "criterion {n:>2} ({name}): {} [{:.1}s of {}s] {detail}",
            if pass { "PASS" } else { "FAIL" },
            el.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
