//! Sampling-based receding-horizon planner.
//!
//! Each replan draws `n_samples` Gaussian perturbations around a nominal
//! action sequence, scores the perturbed sequences with discounted rollouts
//! through a [`DynamicsModel`], and blends the perturbations with
//! exponential weights `exp((R_i - R_max) / temperature)`. The first action
//! of the blend is executed and the rest warm-starts the next replan.
//!
//! Every random draw is keyed by `(seed, replan_index, sample_index)`, so a
//! run is a pure function of its configuration: two runs with the same seed
//! produce bit-identical action sequences.

use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::mechanics::{self, State, SystemSpec};
use crate::models::DynamicsModel;
use crate::training::ValueModel;

/// Knobs for one planning run. `dt` is both the model rollout step and the
/// simulation step, so the planner's imagined trajectory and the executed
/// one stay on the same time grid.
#[derive(Clone, Debug)]
pub struct PlanConfig {
    /// Lookahead steps per replan.
    pub horizon: usize,
    /// Discount on future rewards, in (0, 1).
    pub gamma: f64,
    /// Perturbed sequences scored per replan.
    pub n_samples: usize,
    /// Std-dev of the Gaussian action noise. Zero is allowed and makes the
    /// plan return the nominal sequence untouched.
    pub sigma: f64,
    /// Softness of the exponential weighting. Small values approach argmax.
    pub temperature: f64,
    /// Step length in seconds.
    pub dt: f64,
    /// Per-actuator bound applied to scored and emitted actions, if set.
    pub u_max: Option<DVector<f64>>,
    pub seed: u64,
}

impl PlanConfig {
    pub fn new(horizon: usize, dt: f64) -> Self {
        PlanConfig {
            horizon,
            gamma: 0.99,
            n_samples: 128,
            sigma: 1.0,
            temperature: 0.1,
            dt,
            u_max: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(CoreError::Config("horizon must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CoreError::Config(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.n_samples == 0 {
            return Err(CoreError::Config("n_samples must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(CoreError::Config(format!(
                "sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(CoreError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.dt > 0.0) {
            return Err(CoreError::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if let Some(um) = &self.u_max {
            if um.iter().any(|&v| !(v > 0.0)) {
                return Err(CoreError::Config(
                    "u_max entries must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-step reward. Bounded above so exponential weighting cannot overflow.
#[derive(Clone, Debug)]
pub enum RewardFn {
    /// Fixed reward each step; used for calibration and tests.
    Constant(f64),
    /// Smooth swing-up shaping on one joint angle: a bump that peaks when
    /// the wrapped angle error and the joint speeds vanish, minus a small
    /// effort penalty.
    SwingUp {
        angle_index: usize,
        target_angle: f64,
        w_angle: f64,
        w_vel: f64,
        w_effort: f64,
    },
}

impl RewardFn {
    /// Swing-up shaping for the first joint. The bump is deliberately wide
    /// (`w_angle` well below 1): a narrow bump is flat almost everywhere
    /// away from the target and gives sampled rollouts nothing to rank by.
    pub fn swing_up(target_angle: f64) -> Self {
        RewardFn::SwingUp {
            angle_index: 0,
            target_angle,
            w_angle: 0.2,
            w_vel: 0.02,
            w_effort: 1e-3,
        }
    }

    pub fn eval(&self, state: &State, u: &DVector<f64>) -> f64 {
        match self {
            RewardFn::Constant(c) => *c,
            RewardFn::SwingUp {
                angle_index,
                target_angle,
                w_angle,
                w_vel,
                w_effort,
            } => {
                let err = wrap_angle(state.q[*angle_index] - target_angle);
                let cost = w_angle * err * err + w_vel * state.qd.norm_squared();
                (-cost).exp() - w_effort * u.norm_squared()
            }
        }
    }
}

/// Wraps an angle difference into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    a.sin().atan2(a.cos())
}

/// One replan's outcome.
#[derive(Clone, Debug)]
pub struct PlanResult {
    /// Blended action sequence, `horizon` entries.
    pub actions: Vec<DVector<f64>>,
    /// Discounted return of [`PlanResult::actions`] under the model.
    pub expected_return: f64,
    /// Raw return of every scored sample, in sample order.
    pub per_sample_returns: Vec<f64>,
    pub wall_clock_s: f64,
}

/// Discounted return of an action sequence rolled out through the model:
/// sum of gamma^k r(s_k, a_k) plus gamma^H V(s_H) when a terminal value is
/// supplied. A rollout that leaves the finite floats, or a model error,
/// scores negative infinity rather than failing the whole replan.
pub fn score_trajectory(
    model: &dyn DynamicsModel,
    value: Option<&ValueModel>,
    reward: &RewardFn,
    state0: &State,
    actions: &[DVector<f64>],
    gamma: f64,
    dt: f64,
) -> f64 {
    let mut state = state0.clone();
    let mut total = 0.0;
    let mut disc = 1.0;
    for u in actions {
        total += disc * reward.eval(&state, u);
        state = match model.predict_next(&state, u, dt) {
            Ok(s) if s.is_finite() => s,
            _ => return f64::NEG_INFINITY,
        };
        disc *= gamma;
    }
    if let Some(v) = value {
        match v.eval(&state.stacked()) {
            Ok(x) if x.is_finite() => total += disc * x,
            _ => return f64::NEG_INFINITY,
        }
    }
    if total.is_finite() {
        total
    } else {
        f64::NEG_INFINITY
    }
}

/// splitmix64 finalizer over the three stream coordinates. Distinct
/// (seed, replan, sample) triples get well-separated RNG streams.
fn noise_stream_seed(seed: u64, replan: u64, sample: u64) -> u64 {
    let mut x = seed
        ^ replan.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ sample.wrapping_mul(0xd1b5_4a32_d192_ed03);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

/// The Gaussian perturbation for one sample: `horizon` vectors of width
/// `m`, already scaled by sigma.
fn sample_noise(config: &PlanConfig, replan: u64, sample: u64, m: usize) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_stream_seed(config.seed, replan, sample));
    (0..config.horizon)
        .map(|_| {
            DVector::from_iterator(
                m,
                (0..m).map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * config.sigma
                }),
            )
        })
        .collect()
}

fn clamp_action(mut u: DVector<f64>, u_max: Option<&DVector<f64>>) -> DVector<f64> {
    if let Some(um) = u_max {
        for (v, &b) in u.iter_mut().zip(um.iter()) {
            *v = v.clamp(-b, b);
        }
    }
    u
}

/// One replan: sample, score, blend.
///
/// The blend is `nominal + sum_i w_i noise_i / sum_i w_i` with
/// `w_i = exp((R_i - R_max) / temperature)`, clamped to `u_max` afterwards.
/// Diverged samples get zero weight; if every sample diverges the replan
/// fails with [`CoreError::Planning`]. With `sigma = 0` the blend is the
/// nominal sequence, bit for bit.
pub fn mppi_plan(
    model: &dyn DynamicsModel,
    value: Option<&ValueModel>,
    reward: &RewardFn,
    state0: &State,
    nominal: &[DVector<f64>],
    config: &PlanConfig,
    replan_index: u64,
) -> Result<PlanResult> {
    config.validate()?;
    let m = model.action_dim();
    if nominal.len() != config.horizon {
        return Err(CoreError::Shape {
            what: "nominal sequence length",
            expected: config.horizon,
            got: nominal.len(),
        });
    }
    if let Some(bad) = nominal.iter().find(|a| a.len() != m) {
        return Err(CoreError::Shape {
            what: "nominal action width",
            expected: m,
            got: bad.len(),
        });
    }
    if state0.q.len() != model.dof() {
        return Err(CoreError::Shape {
            what: "planner state dof",
            expected: model.dof(),
            got: state0.q.len(),
        });
    }
    if let Some(um) = &config.u_max {
        if um.len() != m {
            return Err(CoreError::Shape {
                what: "u_max width",
                expected: m,
                got: um.len(),
            });
        }
    }

    let start = Instant::now();
    let mut noises = Vec::with_capacity(config.n_samples);
    let mut returns = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let noise = sample_noise(config, replan_index, i as u64, m);
        let candidate: Vec<DVector<f64>> = nominal
            .iter()
            .zip(&noise)
            .map(|(a, e)| clamp_action(a + e, config.u_max.as_ref()))
            .collect();
        returns.push(score_trajectory(
            model,
            value,
            reward,
            state0,
            &candidate,
            config.gamma,
            config.dt,
        ));
        noises.push(noise);
    }

    let best = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return Err(CoreError::Planning(format!(
            "all {} sampled trajectories diverged at replan {replan_index}",
            config.n_samples
        )));
    }
    let weights: Vec<f64> = returns
        .iter()
        .map(|&r| {
            if r.is_finite() {
                ((r - best) / config.temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let wsum: f64 = weights.iter().sum();

    let mut actions = nominal.to_vec();
    for (noise, &w) in noises.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        let scale = w / wsum;
        for (a, e) in actions.iter_mut().zip(noise) {
            a.axpy(scale, e, 1.0);
        }
    }
    let actions: Vec<DVector<f64>> = actions
        .into_iter()
        .map(|a| clamp_action(a, config.u_max.as_ref()))
        .collect();

    let expected_return = score_trajectory(
        model,
        value,
        reward,
        state0,
        &actions,
        config.gamma,
        config.dt,
    );
    Ok(PlanResult {
        actions,
        expected_return,
        per_sample_returns: returns,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Moves the tail of the previous plan forward one step, repeating the last
/// action to fill the freed slot.
pub fn shift_nominal(nominal: &mut [DVector<f64>], planned: &[DVector<f64>]) {
    let h = nominal.len();
    debug_assert_eq!(h, planned.len());
    for k in 0..h - 1 {
        nominal[k] = planned[k + 1].clone();
    }
    nominal[h - 1] = planned[h - 1].clone();
}

/// A closed-loop episode.
#[derive(Clone, Debug)]
pub struct RunResult {
    /// Visited states, `steps + 1` entries starting at the initial state.
    pub states: Vec<State>,
    /// Executed (clamped) actions.
    pub actions: Vec<DVector<f64>>,
    /// Realized per-step rewards.
    pub rewards: Vec<f64>,
    /// Realized discounted return under the run's gamma.
    pub discounted_return: f64,
    /// Wall-clock seconds of each replan.
    pub replan_seconds: Vec<f64>,
}

/// Plans with the model, executes on the analytic system. Each step replans
/// from the true state, applies the first blended action clamped to the
/// system's actuator bounds, and warm-starts the next replan with the
/// shifted remainder.
pub fn receding_horizon_run(
    model: &dyn DynamicsModel,
    value: Option<&ValueModel>,
    reward: &RewardFn,
    spec: &SystemSpec,
    state0: &State,
    steps: usize,
    config: &PlanConfig,
) -> Result<RunResult> {
    config.validate()?;
    let m = spec.actuators();
    if model.action_dim() != m {
        return Err(CoreError::Shape {
            what: "model action width",
            expected: m,
            got: model.action_dim(),
        });
    }
    if model.dof() != spec.dof() {
        return Err(CoreError::Shape {
            what: "model dof",
            expected: spec.dof(),
            got: model.dof(),
        });
    }

    let mut nominal = vec![DVector::zeros(m); config.horizon];
    let mut states = Vec::with_capacity(steps + 1);
    let mut actions = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    let mut replan_seconds = Vec::with_capacity(steps);
    let mut discounted_return = 0.0;
    let mut disc = 1.0;

    let mut state = state0.clone();
    states.push(state.clone());
    for step in 0..steps {
        let plan = mppi_plan(model, value, reward, &state, &nominal, config, step as u64)?;
        replan_seconds.push(plan.wall_clock_s);
        let a = clamp_action(plan.actions[0].clone(), Some(&spec.u_max));
        let r = reward.eval(&state, &a);
        discounted_return += disc * r;
        disc *= config.gamma;
        state = mechanics::step_semi_implicit(spec, &state, &a, config.dt)?;
        if !state.is_finite() {
            return Err(CoreError::Planning(format!(
                "simulated state diverged at step {step}"
            )));
        }
        shift_nominal(&mut nominal, &plan.actions);
        states.push(state.clone());
        actions.push(a);
        rewards.push(r);
    }

    Ok(RunResult {
        states,
        actions,
        rewards,
        discounted_return,
        replan_seconds,
    })
}
