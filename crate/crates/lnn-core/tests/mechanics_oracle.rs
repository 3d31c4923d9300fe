//! Independent oracles for the analytic dynamics.
//!
//! The acceleration oracle below never touches `mass_matrix` or
//! `coriolis_gravity`. It differentiates the scalar Lagrangian
//! L(q, qd) = T - V by central differences and solves the Euler-Lagrange
//! equation numerically:
//!
//! ```text
//! d/dt (dL/dqd) - dL/dq = B u
//! (dp/dqd) qdd = B u + dL/dq - (dp/dq) qd,   p = dL/dqd
//! ```
//!
//! Agreement here means the closed-form M, C, G of every system are mutually
//! consistent with its energies, which is the whole content of the dynamics.

use lnn_core::mechanics::{
    forward_dynamics_gt, kinetic_energy, potential_energy, rollout, total_energy, State,
    SystemKind, SystemSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lagrangian(spec: &SystemSpec, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
    let s = State::new(q.clone(), qd.clone());
    kinetic_energy(spec, &s).unwrap() - potential_energy(spec, q).unwrap()
}

/// p_i = dL/dqd_i by central differences.
fn momentum_fd(spec: &SystemSpec, q: &DVector<f64>, qd: &DVector<f64>, h: f64) -> DVector<f64> {
    let n = qd.len();
    DVector::from_fn(n, |i, _| {
        let mut qp = qd.clone();
        let mut qm = qd.clone();
        qp[i] += h;
        qm[i] -= h;
        (lagrangian(spec, q, &qp) - lagrangian(spec, q, &qm)) / (2.0 * h)
    })
}

fn accel_oracle(
    spec: &SystemSpec,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    let n = q.len();
    // Nested second differences: h near 1e-4 balances roundoff in the inner
    // difference against truncation of the outer one.
    let h = 1e-4;

    // dp/dqd (the mass matrix) and dp/dq, both by differencing p itself.
    let mut dp_dqd = DMatrix::zeros(n, n);
    let mut dp_dq = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut vp = qd.clone();
        let mut vm = qd.clone();
        vp[j] += h;
        vm[j] -= h;
        let col = (momentum_fd(spec, q, &vp, h) - momentum_fd(spec, q, &vm, h)) / (2.0 * h);
        dp_dqd.set_column(j, &col);

        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[j] += h;
        qm[j] -= h;
        let col = (momentum_fd(spec, &qp, qd, h) - momentum_fd(spec, &qm, qd, h)) / (2.0 * h);
        dp_dq.set_column(j, &col);
    }

    let dl_dq = DVector::from_fn(n, |i, _| {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += h;
        qm[i] -= h;
        (lagrangian(spec, &qp, qd) - lagrangian(spec, &qm, qd)) / (2.0 * h)
    });

    let rhs = &spec.b * u + dl_dq - dp_dq * qd;
    dp_dqd.lu().solve(&rhs).expect("oracle mass matrix singular")
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> (DVector<f64>, DVector<f64>) {
    let q = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let qd = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    (q, qd)
}

#[test]
fn forward_dynamics_matches_euler_lagrange_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for kind in [
        SystemKind::Pendulum,
        SystemKind::DoublePendulum,
        SystemKind::CartPole,
        SystemKind::PlanarTorso,
    ] {
        let spec = SystemSpec::standard(kind);
        let n = spec.dof();
        let m = spec.actuators();
        for case in 0..25 {
            let (q, qd) = random_state(&mut rng, n);
            let u = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
            let got = forward_dynamics_gt(&spec, &q, &qd, &u).unwrap();
            let want = accel_oracle(&spec, &q, &qd, &u);
            for i in 0..n {
                let scale = want[i].abs().max(1.0);
                assert!(
                    (got[i] - want[i]).abs() <= 2e-4 * scale,
                    "{kind:?} case {case}: qdd[{i}] = {} vs oracle {}",
                    got[i],
                    want[i]
                );
            }
        }
    }
}

#[test]
fn nonstandard_parameters_also_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let specs = [
        SystemSpec::pendulum(0.7, 1.8, 3.71),
        SystemSpec::double_pendulum(1.3, 0.6, 0.9, 1.4, 9.81),
        SystemSpec::cart_pole(2.5, 0.3, 0.8, 9.81),
        SystemSpec::planar_torso(3.0, 0.9, 9.81),
    ];
    for spec in &specs {
        let n = spec.dof();
        let m = spec.actuators();
        for _ in 0..10 {
            let (q, qd) = random_state(&mut rng, n);
            let u = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
            let got = forward_dynamics_gt(spec, &q, &qd, &u).unwrap();
            let want = accel_oracle(spec, &q, &qd, &u);
            for i in 0..n {
                let scale = want[i].abs().max(1.0);
                assert!(
                    (got[i] - want[i]).abs() <= 2e-4 * scale,
                    "{:?}: qdd[{i}] = {} vs oracle {}",
                    spec.kind,
                    got[i],
                    want[i]
                );
            }
        }
    }
}

#[test]
fn unforced_energy_drift_shrinks_with_dt() {
    // Semi-implicit Euler is first-order; over a fixed horizon the energy
    // drift must fall roughly linearly with dt.
    for kind in [SystemKind::Pendulum, SystemKind::DoublePendulum, SystemKind::CartPole] {
        let spec = SystemSpec::standard(kind);
        let n = spec.dof();
        // All coordinates displaced so no system starts at an equilibrium.
        let q = DVector::from_element(n, 1.0);
        let s0 = State::new(q, DVector::zeros(n));
        let e0 = total_energy(&spec, &s0).unwrap();
        let horizon = 1.0_f64;
        let mut drifts = Vec::new();
        for dt in [1e-2_f64, 1e-3] {
            let steps = (horizon / dt).round() as usize;
            let zeros = vec![DVector::zeros(spec.actuators()); steps];
            let traj = rollout(&spec, &s0, &zeros, dt).unwrap();
            let e1 = total_energy(&spec, traj.states.last().unwrap()).unwrap();
            drifts.push((e1 - e0).abs());
        }
        assert!(
            drifts[1] < drifts[0] * 0.3,
            "{kind:?}: drift {drifts:?} did not shrink with dt"
        );
        let bound = 0.01 * e0.abs().max(1.0);
        assert!(
            drifts[1] < bound,
            "{kind:?}: drift at dt=1e-3 is {} with E0 = {e0}",
            drifts[1]
        );
    }
}

#[test]
fn actuation_power_balance() {
    // dE/dt = qd' B u along exact dynamics; check with a small-step rollout.
    let spec = SystemSpec::standard(SystemKind::CartPole);
    let s0 = State::from_slices(&[0.0, 0.5], &[0.2, -0.1]);
    let dt = 1e-5;
    let u = DVector::from_element(1, 2.0);
    let traj = rollout(&spec, &s0, &[u.clone()], dt).unwrap();
    let e0 = total_energy(&spec, &traj.states[0]).unwrap();
    let e1 = total_energy(&spec, &traj.states[1]).unwrap();
    let de_dt = (e1 - e0) / dt;
    let power = traj.states[0].qd.dot(&(&spec.b * &u));
    assert!(
        (de_dt - power).abs() < 1e-2,
        "dE/dt = {de_dt} vs qd'Bu = {power}"
    );
}

#[test]
fn mass_matrix_is_spd_over_state_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for kind in [
        SystemKind::Pendulum,
        SystemKind::DoublePendulum,
        SystemKind::CartPole,
        SystemKind::PlanarTorso,
    ] {
        let spec = SystemSpec::standard(kind);
        let n = spec.dof();
        for _ in 0..50 {
            let (q, _) = random_state(&mut rng, n);
            let m = lnn_core::mechanics::mass_matrix(&spec, &q).unwrap();
            // Symmetry is exact by construction.
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(m[(i, j)], m[(j, i)]);
                }
            }
            assert!(
                nalgebra::Cholesky::new(m).is_some(),
                "{kind:?}: M not positive definite at q = {q:?}"
            );
        }
    }
}
