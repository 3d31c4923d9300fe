//! Analytic rigid-body ground truth.
//!
//! Four desk-scale systems with exact mass matrix, Coriolis and gravity
//! terms, actuation map, energies, and forward dynamics, in the standard
//! manipulator form
//!
//! ```text
//! M(q) qdd + C(q, qd) qd + G(q) = B u
//! ```
//!
//! Conventions, fixed here and relied on by every oracle value in the test
//! suite: angles are measured from the downward vertical, gravity defaults to
//! 9.81 m/s^2, and potential energy is zero at the lowest configuration.
//! Everything in this module is a pure function of its value inputs; there is
//! no RNG and no shared state, so unrestricted parallel use is safe.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

/// Generalized coordinates and velocities of a mechanical system.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl State {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Self {
        assert_eq!(q.len(), qd.len(), "q and qd must have equal length");
        State { q, qd }
    }

    pub fn from_slices(q: &[f64], qd: &[f64]) -> Self {
        Self::new(DVector::from_row_slice(q), DVector::from_row_slice(qd))
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    /// Stacked (q, qd) vector, the planner's and the baseline model's view.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.dof();
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&self.q);
        out.rows_mut(n, n).copy_from(&self.qd);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite()) && self.qd.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    Pendulum,
    DoublePendulum,
    CartPole,
    PlanarTorso,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Pendulum => "pendulum",
            SystemKind::DoublePendulum => "double_pendulum",
            SystemKind::CartPole => "cart_pole",
            SystemKind::PlanarTorso => "planar_torso",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(SystemKind::Pendulum),
            "double_pendulum" => Ok(SystemKind::DoublePendulum),
            "cart_pole" => Ok(SystemKind::CartPole),
            "planar_torso" => Ok(SystemKind::PlanarTorso),
            other => Err(CoreError::Config(format!("unknown system kind '{other}'"))),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            SystemKind::Pendulum => 0,
            SystemKind::DoublePendulum => 1,
            SystemKind::CartPole => 2,
            SystemKind::PlanarTorso => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(SystemKind::Pendulum),
            1 => Ok(SystemKind::DoublePendulum),
            2 => Ok(SystemKind::CartPole),
            3 => Ok(SystemKind::PlanarTorso),
            t => Err(CoreError::Format(format!("unknown system tag {t}"))),
        }
    }
}

/// Physical description of one system plus its actuation map.
///
/// - Pendulum: point mass `m1` on a massless rod `l1`, torque-actuated
///   (n = 1, m = 1).
/// - Double pendulum: point masses at the rod ends, relative joint angles,
///   both joints torque-actuated (n = 2, m = 2).
/// - Cart-pole: cart `m1` on a line, pole bob `m2` at `l1`, force on the
///   cart only (n = 2, m = 1); q = (cart position, pole angle).
/// - Planar torso: planar rigid body, q = (x, z, pitch), fully actuated by a
///   body wrench (n = 3, m = 3). This is the reduced pose/twist convention;
///   the spatial 12-dim case is exercised by dimension-generic shape tests
///   only.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub kind: SystemKind,
    /// Masses in kg: pendulum (m1); double pendulum (m1, m2); cart-pole
    /// (cart, bob); planar torso (m1 = total mass, m2 = pitch inertia).
    pub m1: f64,
    pub m2: f64,
    /// Lengths in m where applicable.
    pub l1: f64,
    pub l2: f64,
    pub gravity: f64,
    /// Actuation matrix, n x m, full column rank.
    pub b: DMatrix<f64>,
    /// Per-actuator excitation bound used by dataset generation.
    pub u_max: DVector<f64>,
}

impl SystemSpec {
    pub fn pendulum(m: f64, l: f64, gravity: f64) -> Self {
        SystemSpec {
            kind: SystemKind::Pendulum,
            m1: m,
            m2: 0.0,
            l1: l,
            l2: 0.0,
            gravity,
            b: DMatrix::identity(1, 1),
            u_max: DVector::from_element(1, 3.0),
        }
    }

    pub fn double_pendulum(m1: f64, m2: f64, l1: f64, l2: f64, gravity: f64) -> Self {
        SystemSpec {
            kind: SystemKind::DoublePendulum,
            m1,
            m2,
            l1,
            l2,
            gravity,
            b: DMatrix::identity(2, 2),
            u_max: DVector::from_element(2, 3.0),
        }
    }

    pub fn cart_pole(m_cart: f64, m_bob: f64, l: f64, gravity: f64) -> Self {
        SystemSpec {
            kind: SystemKind::CartPole,
            m1: m_cart,
            m2: m_bob,
            l1: l,
            l2: 0.0,
            gravity,
            b: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            u_max: DVector::from_element(1, 10.0),
        }
    }

    pub fn planar_torso(mass: f64, pitch_inertia: f64, gravity: f64) -> Self {
        SystemSpec {
            kind: SystemKind::PlanarTorso,
            m1: mass,
            m2: pitch_inertia,
            l1: 0.0,
            l2: 0.0,
            gravity,
            b: DMatrix::identity(3, 3),
            u_max: DVector::from_row_slice(&[5.0, 20.0, 5.0]),
        }
    }

    /// Unit-parameter preset for a kind, g = 9.81.
    pub fn standard(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Pendulum => Self::pendulum(1.0, 1.0, 9.81),
            SystemKind::DoublePendulum => Self::double_pendulum(1.0, 1.0, 1.0, 1.0, 9.81),
            SystemKind::CartPole => Self::cart_pole(1.0, 0.5, 1.0, 9.81),
            SystemKind::PlanarTorso => Self::planar_torso(2.0, 0.4, 9.81),
        }
    }

    /// Degrees of freedom n.
    pub fn dof(&self) -> usize {
        match self.kind {
            SystemKind::Pendulum => 1,
            SystemKind::DoublePendulum | SystemKind::CartPole => 2,
            SystemKind::PlanarTorso => 3,
        }
    }

    /// Actuator count m.
    pub fn actuators(&self) -> usize {
        self.b.ncols()
    }

    fn check_dims(&self, q: &DVector<f64>, qd: Option<&DVector<f64>>, u: Option<&DVector<f64>>) -> Result<()> {
        let n = self.dof();
        if q.len() != n {
            return Err(CoreError::Shape {
                what: "q",
                expected: n,
                got: q.len(),
            });
        }
        if let Some(qd) = qd {
            if qd.len() != n {
                return Err(CoreError::Shape {
                    what: "qd",
                    expected: n,
                    got: qd.len(),
                });
            }
        }
        if let Some(u) = u {
            if u.len() != self.actuators() {
                return Err(CoreError::Shape {
                    what: "u",
                    expected: self.actuators(),
                    got: u.len(),
                });
            }
        }
        Ok(())
    }
}

/// Symmetric positive-definite mass matrix M(q).
pub fn mass_matrix(spec: &SystemSpec, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    spec.check_dims(q, None, None)?;
    Ok(match spec.kind {
        SystemKind::Pendulum => DMatrix::from_element(1, 1, spec.m1 * spec.l1 * spec.l1),
        SystemKind::DoublePendulum => {
            let (m1, m2, l1, l2) = (spec.m1, spec.m2, spec.l1, spec.l2);
            let c2 = q[1].cos();
            let m11 = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * c2);
            let m12 = m2 * (l2 * l2 + l1 * l2 * c2);
            let m22 = m2 * l2 * l2;
            DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22])
        }
        SystemKind::CartPole => {
            let (mc, mp, l) = (spec.m1, spec.m2, spec.l1);
            let c = q[1].cos();
            DMatrix::from_row_slice(2, 2, &[mc + mp, mp * l * c, mp * l * c, mp * l * l])
        }
        SystemKind::PlanarTorso => {
            DMatrix::from_diagonal(&DVector::from_row_slice(&[spec.m1, spec.m1, spec.m2]))
        }
    })
}

/// Velocity-product term C(q, qd) qd and gravity bias G(q).
pub fn coriolis_gravity(
    spec: &SystemSpec,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    spec.check_dims(q, Some(qd), None)?;
    let g = spec.gravity;
    Ok(match spec.kind {
        SystemKind::Pendulum => {
            let cqd = DVector::zeros(1);
            let grav = DVector::from_element(1, spec.m1 * g * spec.l1 * q[0].sin());
            (cqd, grav)
        }
        SystemKind::DoublePendulum => {
            let (m1, m2, l1, l2) = (spec.m1, spec.m2, spec.l1, spec.l2);
            let (s1, s2) = (q[0].sin(), q[1].sin());
            let s12 = (q[0] + q[1]).sin();
            let h = m2 * l1 * l2 * s2;
            let cqd = DVector::from_row_slice(&[
                -h * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]),
                h * qd[0] * qd[0],
            ]);
            let grav = DVector::from_row_slice(&[
                (m1 * l1 + m2 * l1) * g * s1 + m2 * l2 * g * s12,
                m2 * l2 * g * s12,
            ]);
            (cqd, grav)
        }
        SystemKind::CartPole => {
            let (mp, l) = (spec.m2, spec.l1);
            let s = q[1].sin();
            let cqd = DVector::from_row_slice(&[-mp * l * s * qd[1] * qd[1], 0.0]);
            let grav = DVector::from_row_slice(&[0.0, mp * g * l * s]);
            (cqd, grav)
        }
        SystemKind::PlanarTorso => {
            let cqd = DVector::zeros(3);
            let grav = DVector::from_row_slice(&[0.0, spec.m1 * g, 0.0]);
            (cqd, grav)
        }
    })
}

/// Potential energy with the zero at the lowest configuration.
pub fn potential_energy(spec: &SystemSpec, q: &DVector<f64>) -> Result<f64> {
    spec.check_dims(q, None, None)?;
    let g = spec.gravity;
    Ok(match spec.kind {
        SystemKind::Pendulum => spec.m1 * g * spec.l1 * (1.0 - q[0].cos()),
        SystemKind::DoublePendulum => {
            let (m1, m2, l1, l2) = (spec.m1, spec.m2, spec.l1, spec.l2);
            let h1 = l1 * (1.0 - q[0].cos());
            let h2 = l1 * (1.0 - q[0].cos()) + l2 * (1.0 - (q[0] + q[1]).cos());
            m1 * g * h1 + m2 * g * h2
        }
        SystemKind::CartPole => spec.m2 * g * spec.l1 * (1.0 - q[1].cos()),
        // z measured from the reference height; "lowest point" is z = 0.
        SystemKind::PlanarTorso => spec.m1 * g * q[1],
    })
}

/// Kinetic energy 0.5 qd' M qd.
pub fn kinetic_energy(spec: &SystemSpec, state: &State) -> Result<f64> {
    let m = mass_matrix(spec, &state.q)?;
    Ok(0.5 * state.qd.dot(&(&m * &state.qd)))
}

/// Total mechanical energy in joules.
pub fn total_energy(spec: &SystemSpec, state: &State) -> Result<f64> {
    Ok(kinetic_energy(spec, state)? + potential_energy(spec, &state.q)?)
}

/// Ground-truth forward dynamics: qdd = M^{-1} (B u - C qd - G), computed by
/// a linear solve (Cholesky), never an explicit inverse.
pub fn forward_dynamics_gt(
    spec: &SystemSpec,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    spec.check_dims(q, Some(qd), Some(u))?;
    let m = mass_matrix(spec, q)?;
    let (cqd, grav) = coriolis_gravity(spec, q, qd)?;
    let rhs = &spec.b * u - cqd - grav;
    let chol = nalgebra::Cholesky::new(m)
        .ok_or_else(|| CoreError::Numerical("mass matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// The integrator's two-line update: velocity first with the current
/// acceleration, then position with the new velocity. Shared by the analytic
/// simulator and every learned model so predictions and ground truth use the
/// same discretization.
pub fn semi_implicit_update(state: &State, qdd: &DVector<f64>, dt: f64) -> State {
    let qd_next = &state.qd + qdd * dt;
    let q_next = &state.q + &qd_next * dt;
    State::new(q_next, qd_next)
}

/// One simulation step of the ground-truth system.
pub fn step_semi_implicit(
    spec: &SystemSpec,
    state: &State,
    u: &DVector<f64>,
    dt: f64,
) -> Result<State> {
    if dt <= 0.0 {
        return Err(CoreError::Config(format!("dt must be positive, got {dt}")));
    }
    let qdd = forward_dynamics_gt(spec, &state.q, &state.qd, u)?;
    Ok(semi_implicit_update(state, &qdd, dt))
}

/// Fixed-step trajectory with the acceleration actually used at each step.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// k controls produce k+1 states.
    pub states: Vec<State>,
    pub controls: Vec<DVector<f64>>,
    /// Acceleration applied at step k (the inverse-dynamics training label).
    pub accels: Vec<DVector<f64>>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Timestamp of state k; timestamps are k * dt by construction.
    pub fn timestamp(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Roll the ground-truth system under a control sequence.
pub fn rollout(
    spec: &SystemSpec,
    state0: &State,
    controls: &[DVector<f64>],
    dt: f64,
) -> Result<Trajectory> {
    if dt <= 0.0 {
        return Err(CoreError::Config(format!("dt must be positive, got {dt}")));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    let mut accels = Vec::with_capacity(controls.len());
    states.push(state0.clone());
    let mut s = state0.clone();
    for u in controls {
        let qdd = forward_dynamics_gt(spec, &s.q, &s.qd, u)?;
        s = semi_implicit_update(&s, &qdd, dt);
        accels.push(qdd);
        states.push(s.clone());
    }
    Ok(Trajectory {
        states,
        controls: controls.to_vec(),
        accels,
        dt,
    })
}

/// Reduced "torso" coordinate of the full state: the pose (and its rate)
/// that survives the center-of-mass reduction.
///
/// - Pendulum: the angle itself (the system already is a CoM pendulum).
/// - Double pendulum: polar angle of the assembly CoM about the base pivot,
///   measured from the downward vertical.
/// - Cart-pole: horizontal CoM position.
/// - Planar torso: identity (the state already is the CoM pose).
pub fn com_projection(spec: &SystemSpec, state: &State) -> Result<(DVector<f64>, DVector<f64>)> {
    spec.check_dims(&state.q, Some(&state.qd), None)?;
    let (q, qd) = (&state.q, &state.qd);
    Ok(match spec.kind {
        SystemKind::Pendulum => (q.clone(), qd.clone()),
        SystemKind::DoublePendulum => {
            let (m1, m2, l1, l2) = (spec.m1, spec.m2, spec.l1, spec.l2);
            let mt = m1 + m2;
            let (s1, c1) = q[0].sin_cos();
            let (s12, c12) = (q[0] + q[1]).sin_cos();
            // Link-end positions, x right, z up, pivot at the origin.
            let cx = (m1 * l1 * s1 + m2 * (l1 * s1 + l2 * s12)) / mt;
            let cz = (-m1 * l1 * c1 + m2 * (-l1 * c1 - l2 * c12)) / mt;
            let cxd = (m1 * l1 * c1 * qd[0]
                + m2 * (l1 * c1 * qd[0] + l2 * c12 * (qd[0] + qd[1])))
                / mt;
            let czd = (m1 * l1 * s1 * qd[0]
                + m2 * (l1 * s1 * qd[0] + l2 * s12 * (qd[0] + qd[1])))
                / mt;
            // phi = atan2(cx, -cz): zero hanging down, pi upright.
            let r2 = cx * cx + cz * cz;
            let phi = cx.atan2(-cz);
            let phid = (-cz * cxd + cx * czd) / r2;
            (
                DVector::from_element(1, phi),
                DVector::from_element(1, phid),
            )
        }
        SystemKind::CartPole => {
            let (mc, mp, l) = (spec.m1, spec.m2, spec.l1);
            let mt = mc + mp;
            let x = q[0] + mp * l * q[1].sin() / mt;
            let xd = qd[0] + mp * l * q[1].cos() * qd[1] / mt;
            (DVector::from_element(1, x), DVector::from_element(1, xd))
        }
        SystemKind::PlanarTorso => (q.clone(), qd.clone()),
    })
}

/// Dimension of the reduced coordinate produced by [`com_projection`].
pub fn com_dim(spec: &SystemSpec) -> usize {
    match spec.kind {
        SystemKind::Pendulum | SystemKind::DoublePendulum | SystemKind::CartPole => 1,
        SystemKind::PlanarTorso => 3,
    }
}
