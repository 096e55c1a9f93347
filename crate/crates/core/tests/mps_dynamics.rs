//! MPS evolution against dense Schrödinger and decay oracles.

use std::f64::consts::PI;

use nalgebra::DVector;
use qbath::chain::{analytic_flat_coefficients, chain_for, light_cone_length};
use qbath::linalg::{CMat, C64, I, ONE, ZERO};
use qbath::metrics::loglog_slope;
use qbath::mps::{
    evolve, fock_occupancy_check, heun_step, init_state, reduced_system_density, ChainModel, EvolveOptions,
    MpsState, StepOperators, Stepper, TruncationPolicy,
};
use qbath::system::{damping_rate, BathSpec, DriveSpec, DrivenSystem, LevelSystem};

fn exact_policy() -> TruncationPolicy {
    TruncationPolicy { chi_max: 256, svd_cutoff: 0.0, abort_weight: 1.0 }
}

/// Independent dense RK4 solve of `i dψ/dt = H(t) ψ`.
fn dense_evolve(model: &ChainModel<'_>, psi0: &[C64], t1: f64, steps: usize) -> Vec<C64> {
    let h = t1 / steps as f64;
    let mut psi = DVector::from_vec(psi0.to_vec());
    let f = |t: f64, v: &DVector<C64>| -> DVector<C64> { (model.dense_hamiltonian(t).unwrap() * v) * (-I) };
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = f(t, &psi);
        let k2 = f(t + h / 2.0, &(&psi + &k1 * C64::new(h / 2.0, 0.0)));
        let k3 = f(t + h / 2.0, &(&psi + &k2 * C64::new(h / 2.0, 0.0)));
        let k4 = f(t + h, &(&psi + &k3 * C64::new(h, 0.0)));
        psi += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0);
    }
    psi.iter().copied().collect()
}

fn distance(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

fn driven_qubit(omega: f64, rabi: f64) -> DrivenSystem {
    let sys = LevelSystem::qubit(omega, 1.0).unwrap();
    DrivenSystem::new(sys, vec![DriveSpec::constant(0, omega, rabi)], None).unwrap()
}

fn heun_run(model: &ChainModel<'_>, t1: f64, dt: f64, fold: bool) -> MpsState {
    let mut s = init_state(&[ZERO, ONE], model.chain_len(), model.d).unwrap();
    let mut opts = EvolveOptions::new(dt);
    opts.policy = exact_policy();
    opts.fold = fold;
    opts.record_every = 1_000_000;
    evolve(&mut s, model, 0.0, t1, &opts).unwrap();
    s
}

#[test]
fn heun_is_second_order_against_dense_solve() {
    let sys = driven_qubit(2.0 * PI, 1.5);
    let chain = analytic_flat_coefficients(1, 20.0, 0.8).unwrap();
    let model = ChainModel::new(&sys, chain, 3).unwrap();
    let t1 = 0.5;
    let mut psi0 = vec![ZERO; 6];
    psi0[3] = ONE;
    let reference = dense_evolve(&model, &psi0, t1, 40_000);
    let mut dts = Vec::new();
    let mut errs = Vec::new();
    for k in 0..5 {
        let dt = 0.01 / f64::powi(2.0, k);
        let s = heun_run(&model, t1, dt, true);
        dts.push(dt);
        errs.push(distance(&s.to_dense(), &reference));
    }
    let fit = loglog_slope(&dts, &errs).unwrap();
    assert!((fit.slope - 2.0).abs() < 0.1, "slope {fit:?}, errors {errs:?}");
}

#[test]
fn folded_and_unfolded_steps_agree() {
    let sys = driven_qubit(2.0 * PI, 1.0);
    let chain = analytic_flat_coefficients(5, 20.0, 0.5).unwrap();
    let model = ChainModel::new(&sys, chain, 3).unwrap();
    let a = heun_run(&model, 0.3, 0.002, true).to_dense();
    let b = heun_run(&model, 0.3, 0.002, false).to_dense();
    assert!(distance(&a, &b) < 1e-10, "{}", distance(&a, &b));
    // the unfolded loop is a sequence of heun_step calls
    let mut s = init_state(&[ZERO, ONE], 5, 3).unwrap();
    let ops = StepOperators::new(&model, 0.002).unwrap();
    for k in 0..150 {
        heun_step(&mut s, &model, k as f64 * 0.002, &ops, &exact_policy()).unwrap();
    }
    assert!(distance(&s.to_dense(), &b) < 1e-10);
}

#[test]
fn small_chain_matches_dense_evolution() {
    let sys = driven_qubit(2.0 * PI, 2.0);
    let chain = analytic_flat_coefficients(4, 20.0, 1.0).unwrap();
    let model = ChainModel::new(&sys, chain, 3).unwrap();
    let t1 = 0.2;
    let mut psi0 = vec![ZERO; 2 * 81];
    psi0[81] = ONE;
    let reference = dense_evolve(&model, &psi0, t1, 8000);
    let s = heun_run(&model, t1, 0.0005, true);
    let err_fine = distance(&s.to_dense(), &reference);
    let s = heun_run(&model, t1, 0.001, true);
    let err_coarse = distance(&s.to_dense(), &reference);
    assert!(err_fine < 1e-3, "{err_fine}");
    assert!((err_coarse / err_fine - 4.0).abs() < 0.4, "{err_coarse} {err_fine}");
}

#[test]
fn midpoint_and_heun_steppers_agree() {
    let sys = driven_qubit(2.0 * PI, 1.0);
    let chain = analytic_flat_coefficients(6, 20.0, 0.7).unwrap();
    let model = ChainModel::new(&sys, chain, 3).unwrap();
    let run = |stepper: Stepper, dt: f64| {
        let mut s = init_state(&[ZERO, ONE], 6, 3).unwrap();
        let mut opts = EvolveOptions::new(dt);
        opts.stepper = stepper;
        opts.policy = exact_policy();
        evolve(&mut s, &model, 0.0, 0.4, &opts).unwrap().populations[1].clone()
    };
    let heun = run(Stepper::Heun, 0.002);
    let heun_half = run(Stepper::Heun, 0.001);
    let mid = run(Stepper::Midpoint, 0.002);
    let mid_half = run(Stepper::Midpoint, 0.001);
    let est_h = heun.iter().step_by(1).zip(heun_half.iter().step_by(2)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let est_m = mid.iter().zip(mid_half.iter().step_by(2)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let gap = heun_half.iter().zip(&mid_half).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    // each half-step run is within a third of the coarse-fine gap of the limit
    assert!(gap <= (est_h + est_m) / 3.0 * 1.5 + 1e-12, "gap {gap}, estimates {est_h} {est_m}");
}

#[test]
fn decoupled_chain_reproduces_system_evolution() {
    let omega = 2.0 * PI;
    let sys = driven_qubit(omega, 1.2);
    let chain = analytic_flat_coefficients(8, 10.0 * omega, 0.0).unwrap();
    let model = ChainModel::new(&sys, chain, 3).unwrap();
    let mut s = init_state(&[ZERO, ONE], 8, 3).unwrap();
    let mut opts = EvolveOptions::new(1e-4);
    opts.record_every = 100;
    let out = evolve(&mut s, &model, 0.0, 0.5, &opts).unwrap();
    // dense system-only solve with the identical polynomial propagator
    let mut psi = DVector::from_vec(vec![ZERO, ONE]);
    let dt = 1e-4;
    let mut pops = vec![1.0];
    for k in 0..5000 {
        let t = k as f64 * dt;
        let a1: CMat = sys.hamiltonian(t).unwrap() * (-I);
        let a2: CMat = sys.hamiltonian(t + dt).unwrap() * (-I);
        let (p1, p2) = qbath::mps::heun_factors(&a1, &a2, dt);
        psi = &p2 * (&p1 * psi);
        let n = psi.norm();
        psi /= C64::new(n, 0.0);
        if (k + 1) % 100 == 0 {
            pops.push(psi[1].norm_sqr());
        }
    }
    let max = out.populations[1].iter().zip(&pops).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max < 1e-8, "{max}");
    assert!(out.discarded_weight < 1e-12);
    assert!(fock_occupancy_check(&s) < 1e-30);
}

#[test]
fn undriven_decay_settles_to_golden_rule_rate() {
    let omega = 2.0 * PI;
    let cutoff = 10.0 * omega;
    let bath = BathSpec::flat(cutoff).unwrap();
    let gamma = 0.05;
    let g = bath.coupling_for_rate(gamma, omega);
    assert!((damping_rate(g, &bath, omega).unwrap() - gamma).abs() < 1e-12);
    let sys = DrivenSystem::undriven(LevelSystem::qubit(omega, g).unwrap());
    let t1 = 2.0;
    let m = light_cone_length(cutoff, t1, 1.5);
    let chain = chain_for(&bath, 1.0, m).unwrap();
    // at this coupling the second Fock level reaches ~2e-6, so keep one more
    let model = ChainModel::new(&sys, chain, 4).unwrap();
    let mut s = init_state(&[ZERO, ONE], m, 4).unwrap();
    let mut opts = EvolveOptions::new(1.0 / 2000.0);
    opts.record_every = 20;
    opts.policy.svd_cutoff = 1e-7;
    let out = evolve(&mut s, &model, 0.0, t1, &opts).unwrap();
    assert!(out.flags.is_empty(), "{:?} top fock {:e}", out.flags, out.max_top_fock);
    // past the initial non-Markovian slip the log-population falls at rate γ
    let late: Vec<(f64, f64)> =
        out.times.iter().zip(&out.populations[1]).filter(|(t, _)| **t >= t1 / 2.0).map(|(t, p)| (*t, p.ln())).collect();
    let n = late.len() as f64;
    let (mt, ml) = (late.iter().map(|x| x.0).sum::<f64>() / n, late.iter().map(|x| x.1).sum::<f64>() / n);
    let rate = -late.iter().map(|(t, l)| (t - mt) * (l - ml)).sum::<f64>() / late.iter().map(|(t, _)| (t - mt).powi(2)).sum::<f64>();
    assert!((rate / gamma - 1.0).abs() < 0.02, "rate {rate}");
    assert!(out.max_tail_occupation < 1e-6, "{}", out.max_tail_occupation);
    assert!(out.discarded_weight < 1e-6);
    let rho = reduced_system_density(&s).unwrap();
    let decayed = 1.0 - (-gamma * t1).exp();
    assert!((rho.population(1) - (-gamma * t1).exp()).abs() < 0.05 * decayed);
    assert!((rho.population(0) - decayed).abs() < 0.05 * decayed);
    assert!(fock_occupancy_check(&s) < 1e-6);
}
