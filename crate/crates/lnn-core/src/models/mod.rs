//! Learned dynamics models.
//!
//! Five variants share the kernels in [`el`]: the forward LNN (Cholesky
//! path), the diagonalized LNN (eigendecomposition path), the
//! inverse-dynamics-trained LNN (same structure, torque-supervised, always
//! evaluated through the forward path), the reduced center-of-mass LNN, and
//! the structure-agnostic baseline network that regresses the next state
//! directly.
//!
//! All inference is read-only on parameters; models are `Sync` and the
//! planner queries them from parallel rollouts without locking.

pub mod checkpoint;
pub mod eig;
pub mod el;

use nalgebra::{DMatrix, DVector};

use crate::diff::{Activation, Mlp, PlainAlg};
use crate::error::{CoreError, Result};
use crate::mechanics::{semi_implicit_update, State};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind};
pub use eig::eig_sym;
pub use el::LnnRef;

/// Lagrangian dynamics model: M(q) = Y(q)Y(q)' + eps I from `y_net`,
/// potential V from `v_net`, external force F from `f_net`, and a fixed
/// (not learned) actuation matrix B.
#[derive(Clone, Debug)]
pub struct LnnModel {
    pub y_net: Mlp,
    pub v_net: Mlp,
    pub f_net: Mlp,
    pub epsilon: f64,
    pub n: usize,
    pub b: DMatrix<f64>,
    pub softplus_diag: bool,
}

fn sizes_with_hidden(in_dim: usize, hidden: &[usize], out_dim: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(hidden.len() + 2);
    v.push(in_dim);
    v.extend_from_slice(hidden);
    v.push(out_dim);
    v
}

impl LnnModel {
    /// Fresh model with independently seeded sub-networks.
    pub fn init(
        n: usize,
        b: DMatrix<f64>,
        hidden: &[usize],
        activation: Activation,
        epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(CoreError::InvalidArchitecture("n must be positive".into()));
        }
        if b.nrows() != n {
            return Err(CoreError::Shape {
                what: "B rows",
                expected: n,
                got: b.nrows(),
            });
        }
        if epsilon <= 0.0 {
            return Err(CoreError::Config(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(LnnModel {
            y_net: Mlp::init(&sizes_with_hidden(n, hidden, el::tri_len(n)), activation, seed)?,
            v_net: Mlp::init(&sizes_with_hidden(n, hidden, 1), activation, seed ^ 0x9e3779b97f4a7c15)?,
            f_net: Mlp::init(
                &sizes_with_hidden(2 * n, hidden, n),
                activation,
                seed ^ 0x6a09e667f3bcc909,
            )?,
            epsilon,
            n,
            b,
            softplus_diag: true,
        })
    }

    /// All-zero networks: Y = softplus(0) on the diagonal (or 0 with the
    /// reparameterization off), V = 0, F = 0. Test scaffolding.
    pub fn zeros(n: usize, b: DMatrix<f64>, hidden: &[usize], activation: Activation) -> Result<Self> {
        Ok(LnnModel {
            y_net: Mlp::zeros(&sizes_with_hidden(n, hidden, el::tri_len(n)), activation)?,
            v_net: Mlp::zeros(&sizes_with_hidden(n, hidden, 1), activation)?,
            f_net: Mlp::zeros(&sizes_with_hidden(2 * n, hidden, n), activation)?,
            epsilon: 1e-6,
            n,
            b,
            softplus_diag: true,
        })
    }

    pub fn actuators(&self) -> usize {
        self.b.ncols()
    }

    /// Plain-`f64` kernel view.
    pub fn plain_ref(&self) -> LnnRef<'_, f64> {
        LnnRef {
            y_net: self.y_net.as_net_ref(),
            v_net: self.v_net.as_net_ref(),
            f_net: self.f_net.as_net_ref(),
            epsilon: self.epsilon,
            n: self.n,
            softplus_diag: self.softplus_diag,
        }
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.n {
            return Err(CoreError::Shape {
                what: "q",
                expected: self.n,
                got: q.len(),
            });
        }
        Ok(())
    }

    fn check_u(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.actuators() {
            return Err(CoreError::Shape {
                what: "u",
                expected: self.actuators(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// M(q) = Y(q)Y(q)' + eps I.
    pub fn assemble_mass(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_q(q)?;
        let mut alg = PlainAlg;
        let lnn = self.plain_ref();
        let (y, _) = el::y_and_grads(&mut alg, &lnn, q.as_slice());
        let m = el::mass_from_y(&mut alg, &y, self.n, self.epsilon);
        Ok(DMatrix::from_row_slice(self.n, self.n, &m))
    }

    /// L(q, qd) = 0.5 qd' M qd - V.
    pub fn lagrangian(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<f64> {
        self.check_q(q)?;
        self.check_q(qd)?;
        let mut alg = PlainAlg;
        let lnn = self.plain_ref();
        Ok(el::lagrangian_kernel(&mut alg, &lnn, q.as_slice(), qd.as_slice()))
    }

    /// Forward dynamics through the Cholesky solve.
    pub fn forward_dynamics_lnn(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_q(q)?;
        self.check_q(qd)?;
        self.check_u(u)?;
        let mut alg = PlainAlg;
        let lnn = self.plain_ref();
        let tau = &self.b * u;
        let qdd = el::forward_kernel(
            &mut alg,
            &lnn,
            q.as_slice(),
            qd.as_slice(),
            Some(tau.as_slice()),
        )?;
        Ok(DVector::from_vec(qdd))
    }

    /// Forward dynamics through eigendecomposition: qdd = P diag(1/lambda) P' rhs
    /// with eigenvalues floored at eps before inversion. Mathematically equal
    /// to [`Self::forward_dynamics_lnn`].
    pub fn forward_dynamics_diag(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_q(q)?;
        self.check_q(qd)?;
        self.check_u(u)?;
        let mut alg = PlainAlg;
        let lnn = self.plain_ref();
        let parts = el::el_parts(&mut alg, &lnn, q.as_slice(), qd.as_slice());
        let tau = &self.b * u;
        let rhs = DVector::from_fn(self.n, |i, _| {
            parts.dl_dq[i] - parts.mixed[i] + parts.force[i] + tau[i]
        });
        let mass = DMatrix::from_row_slice(self.n, self.n, &parts.mass);
        let (p, lambda) = eig_sym(&mass)?;
        let pt_rhs = p.transpose() * rhs;
        let scaled = DVector::from_fn(self.n, |i, _| pt_rhs[i] / lambda[i].max(self.epsilon));
        Ok(&p * scaled)
    }

    /// Generalized force Bu required for qdd; never factorizes or solves.
    pub fn inverse_dynamics_lnn(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_q(q)?;
        self.check_q(qd)?;
        self.check_q(qdd)?;
        let mut alg = PlainAlg;
        let lnn = self.plain_ref();
        let tau = el::inverse_kernel(&mut alg, &lnn, q.as_slice(), qd.as_slice(), qdd.as_slice());
        Ok(DVector::from_vec(tau))
    }
}

/// LNN over the reduced CoM coordinate; no actuation matrix, forces enter
/// only through the learned F.
#[derive(Clone, Debug)]
pub struct ComLnnModel {
    pub y_net: Mlp,
    pub v_net: Mlp,
    pub f_net: Mlp,
    pub epsilon: f64,
    pub n: usize,
    pub softplus_diag: bool,
}

impl ComLnnModel {
    pub fn init(n: usize, hidden: &[usize], activation: Activation, epsilon: f64, seed: u64) -> Result<Self> {
        let full = LnnModel::init(n, DMatrix::identity(n, n), hidden, activation, epsilon, seed)?;
        Ok(ComLnnModel {
            y_net: full.y_net,
            v_net: full.v_net,
            f_net: full.f_net,
            epsilon,
            n,
            softplus_diag: true,
        })
    }

    pub fn zeros(n: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        let full = LnnModel::zeros(n, DMatrix::identity(n, n), hidden, activation)?;
        Ok(ComLnnModel {
            y_net: full.y_net,
            v_net: full.v_net,
            f_net: full.f_net,
            epsilon: 1e-6,
            n,
            softplus_diag: true,
        })
    }

    pub fn plain_ref(&self) -> LnnRef<'_, f64> {
        LnnRef {
            y_net: self.y_net.as_net_ref(),
            v_net: self.v_net.as_net_ref(),
            f_net: self.f_net.as_net_ref(),
            epsilon: self.epsilon,
            n: self.n,
            softplus_diag: self.softplus_diag,
        }
    }

    /// Reduced-coordinate forward dynamics; same solve as the full model
    /// with no Bu term.
    pub fn com_forward_dynamics(&self, x: &DVector<f64>, xd: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n || xd.len() != self.n {
            return Err(CoreError::Shape {
                what: "reduced state",
                expected: self.n,
                got: x.len().max(xd.len()),
            });
        }
        let mut alg = PlainAlg;
        let lnn = self.plain_ref();
        let xdd = el::forward_kernel(&mut alg, &lnn, x.as_slice(), xd.as_slice(), None)?;
        Ok(DVector::from_vec(xdd))
    }
}

/// Structure-agnostic baseline: one network from (q, qd, u) straight to
/// (q_next, qd_next), no integrator.
#[derive(Clone, Debug)]
pub struct BnnModel {
    pub net: Mlp,
    pub n: usize,
    pub m: usize,
}

impl BnnModel {
    pub fn init(n: usize, m: usize, hidden: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        Ok(BnnModel {
            net: Mlp::init(&sizes_with_hidden(2 * n + m, hidden, 2 * n), activation, seed)?,
            n,
            m,
        })
    }

    pub fn predict_next(&self, state: &State, u: &DVector<f64>) -> Result<State> {
        if state.dof() != self.n {
            return Err(CoreError::Shape {
                what: "state dof",
                expected: self.n,
                got: state.dof(),
            });
        }
        if u.len() != self.m {
            return Err(CoreError::Shape {
                what: "u",
                expected: self.m,
                got: u.len(),
            });
        }
        let mut x = Vec::with_capacity(2 * self.n + self.m);
        x.extend_from_slice(state.q.as_slice());
        x.extend_from_slice(state.qd.as_slice());
        x.extend_from_slice(u.as_slice());
        let out = self.net.eval(&x)?;
        Ok(State::from_slices(&out[..self.n], &out[self.n..]))
    }
}

/// Observation-to-configuration map; identity at desk scale where the
/// observation already is (q, qd).
#[derive(Clone, Debug)]
pub struct StateEstimator {
    pub net: Option<Mlp>,
    pub n: usize,
}

impl StateEstimator {
    pub fn identity(n: usize) -> Self {
        StateEstimator { net: None, n }
    }

    pub fn learned(net: Mlp) -> Self {
        let n = net.out_dim();
        StateEstimator { net: Some(net), n }
    }
}

/// q from an observation vector. The identity estimator returns the leading
/// q-slice of an observation laid out as (q, qd).
pub fn estimate_state(est: &StateEstimator, o: &DVector<f64>) -> Result<DVector<f64>> {
    match &est.net {
        None => {
            if o.len() < est.n {
                return Err(CoreError::Shape {
                    what: "observation",
                    expected: est.n,
                    got: o.len(),
                });
            }
            Ok(o.rows(0, est.n).into_owned())
        }
        Some(net) => {
            let out = net.eval(o.as_slice())?;
            Ok(DVector::from_vec(out))
        }
    }
}

/// Which acceleration path an LNN uses at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LnnPath {
    Cholesky,
    Diagonalized,
}

/// One-step predictor interface shared by the planner and the rollout
/// experiments. Implementations are read-only and `Sync`.
pub trait DynamicsModel: Sync {
    fn dof(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn predict_next(&self, state: &State, u: &DVector<f64>, dt: f64) -> Result<State>;
}

/// The analytic simulator wearing the model interface.
pub struct GtDynamics {
    pub spec: crate::mechanics::SystemSpec,
}

impl DynamicsModel for GtDynamics {
    fn dof(&self) -> usize {
        self.spec.dof()
    }

    fn action_dim(&self) -> usize {
        self.spec.actuators()
    }

    fn predict_next(&self, state: &State, u: &DVector<f64>, dt: f64) -> Result<State> {
        crate::mechanics::step_semi_implicit(&self.spec, state, u, dt)
    }
}

/// LNN with a selectable forward path.
pub struct LnnDynamics {
    pub model: LnnModel,
    pub path: LnnPath,
}

impl DynamicsModel for LnnDynamics {
    fn dof(&self) -> usize {
        self.model.n
    }

    fn action_dim(&self) -> usize {
        self.model.actuators()
    }

    fn predict_next(&self, state: &State, u: &DVector<f64>, dt: f64) -> Result<State> {
        let qdd = match self.path {
            LnnPath::Cholesky => self.model.forward_dynamics_lnn(&state.q, &state.qd, u)?,
            LnnPath::Diagonalized => self.model.forward_dynamics_diag(&state.q, &state.qd, u)?,
        };
        Ok(semi_implicit_update(state, &qdd, dt))
    }
}

/// Baseline wrapped in the common interface; ignores dt (the step is baked
/// into the regression target).
pub struct BnnDynamics {
    pub model: BnnModel,
}

impl DynamicsModel for BnnDynamics {
    fn dof(&self) -> usize {
        self.model.n
    }

    fn action_dim(&self) -> usize {
        self.model.m
    }

    fn predict_next(&self, state: &State, u: &DVector<f64>, _dt: f64) -> Result<State> {
        self.model.predict_next(state, u)
    }
}

/// Reduced CoM model in the common interface; the action is unused because
/// the reduced dynamics absorb forces into F.
pub struct ComDynamics {
    pub model: ComLnnModel,
}

impl DynamicsModel for ComDynamics {
    fn dof(&self) -> usize {
        self.model.n
    }

    fn action_dim(&self) -> usize {
        0
    }

    fn predict_next(&self, state: &State, _u: &DVector<f64>, dt: f64) -> Result<State> {
        let xdd = self.model.com_forward_dynamics(&state.q, &state.qd)?;
        Ok(semi_implicit_update(state, &xdd, dt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Inverse of softplus: raw bias value b with softplus(b) = x.
    pub(crate) fn softplus_inv(x: f64) -> f64 {
        (x.exp() - 1.0).ln()
    }

    /// Zero nets with the y-net bias set so Y(q) = I for all q.
    pub(crate) fn identity_y_model(n: usize, b: DMatrix<f64>) -> LnnModel {
        let mut model = LnnModel::zeros(n, b, &[4], Activation::Tanh).unwrap();
        let bias = model.y_net.final_bias_mut();
        for i in 0..n {
            bias[el::tri_index(i, i)] = softplus_inv(1.0);
        }
        model
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn zero_y_net_gives_scaled_identity_mass() {
        let mut model = LnnModel::zeros(2, DMatrix::identity(2, 2), &[4], Activation::Tanh).unwrap();
        model.softplus_diag = false;
        model.epsilon = 1e-6;
        let m = model.assemble_mass(&dv(&[0.3, -0.8])).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1e-6 } else { 0.0 };
                assert_eq!(m[(i, j)], want);
            }
        }
    }

    #[test]
    fn identity_y_gives_identity_plus_epsilon() {
        let model = identity_y_model(3, DMatrix::identity(3, 3));
        let m = model.assemble_mass(&dv(&[0.1, 0.2, 0.3])).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 + 1e-6 } else { 0.0 };
                assert_relative_eq!(m[(i, j)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn lagrangian_conventions() {
        let model = identity_y_model(2, DMatrix::identity(2, 2));
        // qd = 0: L = -V = 0 for the zero v_net.
        assert_eq!(model.lagrangian(&dv(&[0.4, 0.1]), &dv(&[0.0, 0.0])).unwrap(), 0.0);
        // M = (1+eps) I, qd = (1,0): L = 0.5 (1+eps).
        let l = model.lagrangian(&dv(&[0.4, 0.1]), &dv(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(l, 0.5 * (1.0 + 1e-6), epsilon = 1e-12);
        // Scaling qd by 2 scales L by 4 when V = 0.
        let l2 = model.lagrangian(&dv(&[0.4, 0.1]), &dv(&[2.0, 0.0])).unwrap();
        assert_relative_eq!(l2, 4.0 * l, epsilon = 1e-12);
    }

    #[test]
    fn constant_mass_forward_dynamics() {
        let model = identity_y_model(2, DMatrix::identity(2, 2));
        // Constant M, V = F = 0: all q-derivatives vanish, so qdd = 0 at u = 0.
        let qdd = model
            .forward_dynamics_lnn(&dv(&[0.3, -0.5]), &dv(&[1.2, 0.4]), &dv(&[0.0, 0.0]))
            .unwrap();
        assert!(qdd.amax() <= 1e-12, "qdd = {qdd:?}");
        // u = tau: qdd = tau / (1 + eps).
        let qdd = model
            .forward_dynamics_lnn(&dv(&[0.3, -0.5]), &dv(&[1.2, 0.4]), &dv(&[2.0, -1.0]))
            .unwrap();
        assert_relative_eq!(qdd[0], 2.0 / (1.0 + 1e-6), epsilon = 1e-10);
        assert_relative_eq!(qdd[1], -1.0 / (1.0 + 1e-6), epsilon = 1e-10);
    }

    #[test]
    fn inverse_dynamics_statics_and_identity_mass() {
        let model = identity_y_model(2, DMatrix::identity(2, 2));
        let tau = model
            .inverse_dynamics_lnn(&dv(&[0.3, -0.5]), &dv(&[0.0, 0.0]), &dv(&[1.0, -2.0]))
            .unwrap();
        assert_relative_eq!(tau[0], 1.0 + 1e-6, epsilon = 1e-12);
        assert_relative_eq!(tau[1], -(2.0 + 2e-6), epsilon = 1e-12);
    }

    #[test]
    fn com_model_zero_nets_drift() {
        let model = ComLnnModel::zeros(1, &[4], Activation::Tanh).unwrap();
        let xdd = model.com_forward_dynamics(&dv(&[0.4]), &dv(&[0.9])).unwrap();
        assert!(xdd.amax() <= 1e-12);
        let dyn_model = ComDynamics { model };
        let s = State::from_slices(&[0.4], &[0.9]);
        let next = dyn_model.predict_next(&s, &dv(&[]), 0.1).unwrap();
        assert_relative_eq!(next.qd[0], 0.9, epsilon = 1e-12);
        assert_relative_eq!(next.q[0], 0.4 + 0.09, epsilon = 1e-12);
    }

    #[test]
    fn bnn_untrained_output_is_finite_and_shaped() {
        let model = BnnModel::init(2, 1, &[8], Activation::Tanh, 3).unwrap();
        let s = State::from_slices(&[0.1, 0.2], &[0.3, 0.4]);
        let next = model.predict_next(&s, &dv(&[0.5])).unwrap();
        assert_eq!(next.dof(), 2);
        assert!(next.is_finite());
    }

    #[test]
    fn gt_dynamics_matches_mechanics_step() {
        let spec = crate::mechanics::SystemSpec::standard(crate::mechanics::SystemKind::Pendulum);
        let model = GtDynamics { spec: spec.clone() };
        let s = State::from_slices(&[0.7], &[-0.2]);
        let u = dv(&[0.5]);
        let a = model.predict_next(&s, &u, 0.02).unwrap();
        let b = crate::mechanics::step_semi_implicit(&spec, &s, &u, 0.02).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimator_identity_returns_leading_slice() {
        let est = StateEstimator::identity(2);
        let q = estimate_state(&est, &dv(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(q.as_slice(), &[1.0, 2.0]);
        assert!(estimate_state(&est, &dv(&[1.0])).is_err());
    }

    #[test]
    fn wide_actuation_matrix_shape() {
        // Tall identity-over-zeros B as used at full scale: 18 x 12.
        let n = 18;
        let m = 12;
        let mut b = DMatrix::zeros(n, m);
        for i in 0..m {
            b[(n - m + i, i)] = 1.0;
        }
        let model = identity_y_model(n, b);
        let q = DVector::zeros(n);
        let qd = DVector::zeros(n);
        let u = DVector::from_element(m, 1.0);
        let qdd = model.forward_dynamics_lnn(&q, &qd, &u).unwrap();
        assert_eq!(qdd.len(), n);
        // Unactuated leading block stays at rest under constant M.
        for i in 0..n - m {
            assert!(qdd[i].abs() <= 1e-9);
        }
    }
}
