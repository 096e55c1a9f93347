//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs the fast criteria; the long EXACT
//! runs (6, 7, 11) need `-- --include-ignored`. Criterion numbers given as
//! arguments restrict the run, e.g. `-- --include-ignored 6`.

use std::f64::consts::PI;
use std::io::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use qbath::chain::{analytic_flat_chain, discretize, star_to_chain_sites, Discretization};
use qbath::harness::{
    self, convergence_study, fock_truncation_check, ledger_csv, preset_fig3, preset_fig4, preset_fig6, ControlConfig,
    DurationPolicy, Fig3Duration, Mode, Profile,
};
use qbath::linalg::{CMat, C64};
use qbath::master::{ame_rhs, integrate, mme_rhs, DensityMatrix, MasterOptions, Mme};
use qbath::metrics::{effect_integral, loglog_slope, relative_error};
use qbath::system::{lamb_shift, BathSpec, DrivenSystem, LevelSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Criterion {
    id: u32,
    name: &'static str,
    slow: bool,
    check: fn() -> Outcome,
}

const DESK_OMEGA: f64 = 8.0 * PI;

fn c1_mme_decay() -> Outcome {
    let gamma = 1e-2;
    let bath = BathSpec::flat(10.0 * DESK_OMEGA).unwrap();
    let sys = LevelSystem::qubit(DESK_OMEGA, bath.coupling_for_rate(gamma, DESK_OMEGA)).unwrap();
    let model = DrivenSystem::undriven(sys);
    let gen = Mme::new(&model, &bath, &MasterOptions::default()).unwrap();
    let rho0 = DensityMatrix::level(2, 1).unwrap();
    let r = integrate(&gen, &rho0, 0.0, 10.0, 1e-3, 1).unwrap();
    let err = r.times.iter().zip(&r.populations[1]).map(|(t, p)| (p - (-gamma * t).exp()).abs()).fold(0.0, f64::max);
    outcome(err < 1e-10, format!("max |p_e - exp(-γt)| = {err:.2e} over {} samples (tol 1e-10)", r.times.len()))
}

fn random_density(rng: &mut ChaCha8Rng, dim: usize) -> CMat {
    let a = DMatrix::from_fn(dim, dim, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    rho / tr
}

fn c2_ame_equals_mme() -> Outcome {
    let omega = DESK_OMEGA;
    let bath = BathSpec::flat(10.0 * omega).unwrap();
    let g = bath.coupling_for_rate(1e-3, omega);
    let g2 = bath.coupling_for_rate(1e-3, omega / 2.0);
    let models = [
        DrivenSystem::undriven(LevelSystem::qubit(omega, g).unwrap()),
        DrivenSystem::undriven(LevelSystem::v_system(omega, omega / 2.0, g, g2).unwrap()),
    ];
    let opts = MasterOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_super = 0.0f64;
    let mut worst_probe = 0.0f64;
    for model in &models {
        let dim = model.system.dim();
        let t = 0.37;
        // full superoperator difference, column by column on |i⟩⟨j|
        let mut diff = DMatrix::<C64>::zeros(dim * dim, dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                let mut e = CMat::zeros(dim, dim);
                e[(i, j)] = C64::new(1.0, 0.0);
                let d = mme_rhs(t, &e, model, &bath, &opts).unwrap() - ame_rhs(t, &e, model, &bath, &opts).unwrap();
                for (k, z) in d.iter().enumerate() {
                    diff[(k, i * dim + j)] = *z;
                }
            }
        }
        let op_norm = diff.singular_values().max();
        worst_super = worst_super.max(op_norm);
        for _ in 0..20 {
            let rho = random_density(&mut rng, dim);
            let d = mme_rhs(t, &rho, model, &bath, &opts).unwrap() - ame_rhs(t, &rho, model, &bath, &opts).unwrap();
            worst_probe = worst_probe.max(d.norm() / rho.norm());
        }
    }
    outcome(
        worst_super < 1e-12 && worst_probe < 1e-12,
        format!("superoperator norm {worst_super:.2e}, worst random probe {worst_probe:.2e} (tol 1e-12)"),
    )
}

/// Exact Stieltjes recurrence of the uniform measure on [0, 1]:
/// returns `(a_k, b_k)` for `k = 0..n` with `b_0 = 0`.
fn rational_recurrence(n: usize) -> Vec<(BigRational, BigRational)> {
    let moment = |m: usize| BigRational::new(BigInt::one(), BigInt::from(m + 1));
    let moments: Vec<BigRational> = (0..2 * n + 2).map(moment).collect();
    let inner = |p: &[BigRational], q: &[BigRational], shift: usize| {
        let mut acc = BigRational::zero();
        for (i, a) in p.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in q.iter().enumerate() {
                acc += a * b * &moments[i + j + shift];
            }
        }
        acc
    };
    let mut prev: Vec<BigRational> = Vec::new();
    let mut cur = vec![BigRational::one()];
    let mut prev_norm = BigRational::zero();
    let mut out = Vec::new();
    for k in 0..n {
        let norm = inner(&cur, &cur, 0);
        let a = inner(&cur, &cur, 1) / &norm;
        let b = if k == 0 { BigRational::zero() } else { &norm / &prev_norm };
        let mut next = vec![BigRational::zero(); cur.len() + 1];
        for (i, c) in cur.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= &a * c;
        }
        for (i, c) in prev.iter().enumerate() {
            next[i] -= &b * c;
        }
        out.push((a, b));
        prev = std::mem::replace(&mut cur, next);
        prev_norm = norm;
    }
    out
}

fn c3_chain_mapping() -> Outcome {
    let cutoff = 80.0 * PI;
    let n_max = 50;
    // the analytic formula, checked exactly against rational arithmetic
    let exact = rational_recurrence(n_max + 1);
    let mut formula_ok = true;
    for (k, (a, b)) in exact.iter().enumerate() {
        let kk = BigInt::from(k);
        let want_b = if k == 0 {
            BigRational::zero()
        } else {
            BigRational::new(&kk * &kk, BigInt::from(4) * (BigInt::from(4) * &kk * &kk - BigInt::one()))
        };
        formula_ok &= *a == BigRational::new(BigInt::one(), BigInt::from(2)) && *b == want_b;
    }
    let bath = BathSpec::flat(cutoff).unwrap();
    let star = discretize(&bath, 1.0, 2000, Discretization::GaussLegendre).unwrap();
    let chain = star_to_chain_sites(&star, n_max + 1).unwrap();
    let mut worst = 0.0f64;
    for n in 0..=n_max {
        let (a, b) = analytic_flat_chain(n, cutoff);
        worst = worst.max((chain.onsite[n] - a).abs() / a);
        if n > 0 {
            worst = worst.max((chain.hopping[n - 1] - b).abs() / b);
        }
    }
    outcome(
        formula_ok && worst < 1e-9,
        format!("rational oracle agrees with formula: {formula_ok}; Lanczos max relative deviation {worst:.2e} for n <= {n_max} (tol 1e-9)"),
    )
}

fn c4_convergence() -> Outcome {
    let mut cfg = preset_fig3(Profile::Desk, &[0.125], Fig3Duration::InverseRabi).unwrap();
    cfg.solver.chain_len = Some(32);
    cfg.solver.steps_per_period = 100.0;
    cfg.solver.svd_cutoff = 1e-14;
    let r = convergence_study(&cfg, 4, 20).unwrap();
    outcome(
        (r.slope - 2.0).abs() <= 0.1 && r.residual < 0.05,
        format!(
            "slope {:.4} residual {:.2e} over {} halvings, differences {:?} (tol 2.0 ± 0.1, residual < 0.05)",
            r.slope,
            r.residual,
            r.dts.len() - 1,
            r.differences.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>()
        ),
    )
}

fn c5_fock() -> Outcome {
    let mut cfg = preset_fig3(Profile::Desk, &[0.125], Fig3Duration::InverseRabi).unwrap();
    cfg.duration = DurationPolicy::Fixed { duration: 0.5 };
    let r = fock_truncation_check(&cfg).unwrap();
    outcome(
        r.max_top_fock < 1e-6 && r.shift < 1e-6,
        format!("top Fock occupancy {:.2e}, d=3→4 population shift {:.2e} (tol 1e-6 each)", r.max_top_fock, r.shift),
    )
}

fn c6_fig3_point() -> Outcome {
    let cfg = preset_fig3(Profile::Desk, &[0.125], Fig3Duration::InverseRabi).unwrap();
    let (res, _) = harness::run(&cfg).unwrap();
    let r = &res.reports[0];
    let eps = r.mme.as_ref().and_then(|m| m.epsilon.value()).unwrap_or(f64::NAN);
    let eps_ame = r.ame.as_ref().and_then(|m| m.epsilon.value()).unwrap_or(f64::NAN);
    let tail = r.meta.max_tail_occupation.unwrap_or(f64::NAN);
    let disc = r.meta.discarded_weight.unwrap_or(f64::NAN);
    outcome(
        eps <= 0.03 && tail < 1e-6 && disc < 1e-6,
        format!(
            "MME ε {eps:.4e} (tol 0.03), AME ε {eps_ame:.4e}, Δ0 {:.4e}, chain end occupation {tail:.2e} (tol 1e-6), discarded {disc:.2e}, M {}, χ {}",
            r.delta0.unwrap_or(f64::NAN),
            r.meta.chain_len.unwrap_or(0),
            r.meta.max_bond_dim.unwrap_or(0)
        ),
    )
}

fn c7_strong_drive() -> Outcome {
    let mut cfg = preset_fig4(Profile::Desk, 1.0 / 8.0, 1, 0).unwrap();
    cfg.axis_values = vec![DESK_OMEGA / 4.0];
    let (res, _) = harness::run(&cfg).unwrap();
    let r = &res.reports[0];
    let d0 = r.delta0.unwrap_or(f64::NAN);
    let ratio = |m: Mode| r.me(m).map_or(f64::NAN, |x| x.delta1 / d0);
    let (mme, ame) = (ratio(Mode::Mme), ratio(Mode::Ame));
    outcome(
        (0.3..=3.0).contains(&mme),
        format!(
            "Δ1/Δ0 = {mme:.3} for MME (tol [0.3, 3]), {ame:.3} for AME; Ω_rms {:.4}, Δ0 {d0:.4e}, flags {:?}",
            r.meta.rabi_rms, r.flags
        ),
    )
}

fn c8_lamb_shift() -> Outcome {
    let omega = DESK_OMEGA;
    let bath = BathSpec::flat(10.0 * omega).unwrap();
    let gamma = 1e-3;
    let ratio = lamb_shift(gamma, omega, &bath).unwrap() / gamma;
    let expected = 9f64.ln() / (2.0 * PI);
    outcome(
        (0.34..=0.36).contains(&ratio) && (ratio - expected).abs() < 1e-14,
        format!("Δ/γ = {ratio:.6} (ln 9 / 2π = {expected:.6}; tol [0.34, 0.36])"),
    )
}

fn c9_metrics() -> Outcome {
    let grid: Vec<f64> = (0..=500).map(|i| i as f64 * 0.013).collect();
    let t = grid[grid.len() - 1];
    let delta = 0.0371;
    let a: Vec<f64> = grid.iter().map(|x| (x * 1.7).sin()).collect();
    let b: Vec<f64> = a.iter().map(|v| v + delta).collect();
    let offset_err = (effect_integral(&a, &b, &grid).unwrap() - delta * t).abs();
    let mut scale_err = 0.0f64;
    for (d1, d0) in [(0.3, 0.25), (1.7e-4, 2.2e-4), (5.0, 5.0)] {
        let base = relative_error(d1, d0).value().unwrap();
        for s in [1e-6, 0.37, 3.0, 1e5] {
            let e = relative_error(d1 * s, d0 * s).value().unwrap();
            scale_err = scale_err.max((e - base).abs() / base.max(1e-300));
        }
    }
    let xs = [0.5, 1.0, 2.0, 4.0, 8.0];
    let mut slope_err = 0.0f64;
    for p in [-1.0, 1.0, 2.0, 2.5] {
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.3 * x.powf(p)).collect();
        slope_err = slope_err.max((loglog_slope(&xs, &ys).unwrap().slope - p).abs());
    }
    outcome(
        offset_err < 1e-14 && scale_err < 1e-14 && slope_err < 1e-12,
        format!(
            "constant offset error {offset_err:.1e} (tol 1e-14), ε scaling drift {scale_err:.1e}, slope error {slope_err:.1e} (tol 1e-12)"
        ),
    )
}

fn c10_determinism() -> Outcome {
    let cfg = preset_fig4(Profile::Smoke, 1.0 / 8.0, 2, 11).unwrap();
    let ledger = || {
        let (res, series) = harness::run(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        harness::emit(&res, &series, dir.path(), &[harness::OutputFormat::Csv]).unwrap();
        (ledger_csv(&res), std::fs::read(dir.path().join("ledger.csv")).unwrap())
    };
    let (a, fa) = ledger();
    let (b, fb) = ledger();
    let rows = a.lines().count() - 1;
    outcome(
        a == b && fa == fb && rows > 0,
        format!("{rows} ledger rows; byte-identical in memory: {}, on disk: {}", a == b, fa == fb),
    )
}

fn c11_inverse_frequency() -> Outcome {
    let mut cfg = preset_fig6(Profile::Desk, false, 3).unwrap();
    cfg.duration = DurationPolicy::Fixed { duration: 2.0 };
    cfg.modes = vec![Mode::H, Mode::Mme, Mode::Exact];
    if let ControlConfig::Switching { segments, .. } = &mut cfg.drives[0].control {
        *segments = 4;
    }
    let (res, _) = harness::run(&cfg).unwrap();
    let omegas: Vec<f64> = res.reports.iter().map(|r| r.axis_value.unwrap()).collect();
    let eps: Vec<f64> =
        res.reports.iter().map(|r| r.mme.as_ref().and_then(|m| m.epsilon.value()).unwrap_or(f64::NAN)).collect();
    match loglog_slope(&omegas, &eps) {
        Ok(fit) => outcome(
            (fit.slope + 1.0).abs() <= 0.3,
            format!("ε {eps:?} at ω {omegas:?}: slope {:.3} residual {:.3} (tol -1.0 ± 0.3)", fit.slope, fit.residual),
        ),
        Err(e) => outcome(false, format!("ε {eps:?}: {e}")),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let slow = args.iter().any(|a| a == "--include-ignored" || a == "--ignored")
        || std::env::var_os("QBATH_ACCEPT_SLOW").is_some();
    let only: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, name: "analytic decay oracle (MME)", slow: false, check: c1_mme_decay },
        Criterion { id: 2, name: "AME reduces to MME for constant H", slow: false, check: c2_ame_equals_mme },
        Criterion { id: 3, name: "chain mapping against analytic coefficients", slow: false, check: c3_chain_mapping },
        Criterion { id: 4, name: "second-order time-step convergence", slow: false, check: c4_convergence },
        Criterion { id: 5, name: "Fock truncation d=3", slow: false, check: c5_fock },
        Criterion { id: 6, name: "constant resonant drive Ω=ω/8 point", slow: true, check: c6_fig3_point },
        Criterion { id: 7, name: "strong random drive order of magnitude", slow: true, check: c7_strong_drive },
        Criterion { id: 8, name: "Lamb shift ratio", slow: false, check: c8_lamb_shift },
        Criterion { id: 9, name: "metric suite", slow: false, check: c9_metrics },
        Criterion { id: 10, name: "deterministic ledgers", slow: false, check: c10_determinism },
        Criterion { id: 11, name: "1/ω trend of ε for a switching protocol", slow: true, check: c11_inverse_frequency },
    ];
    let (mut passed, mut failed, mut skipped) = (0, 0, 0);
    for c in &criteria {
        if !only.is_empty() && !only.contains(&c.id) {
            continue;
        }
        if c.slow && !slow {
            println!("criterion {:>2} SKIP {} (slow; pass --include-ignored)", c.id, c.name);
            skipped += 1;
            continue;
        }
        let start = Instant::now();
        let o = match std::panic::catch_unwind(c.check) {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                outcome(false, format!("panicked: {msg}"))
            }
        };
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag} {}: {} [{:.1}s]", c.id, c.name, o.detail, start.elapsed().as_secs_f64());
        let _ = std::io::stdout().flush();
        if o.pass {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    println!("acceptance: {passed} passed, {failed} failed, {skipped} skipped");
    if failed > 0 {
        std::process::exit(1);
    }
}
