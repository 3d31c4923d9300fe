//! The four benchmark experiments.
//!
//! Each takes a parsed [`HarnessConfig`] plus its hash and an output
//! directory, trains whatever it needs from scratch, and returns a
//! [`BenchReport`] (also written to disk). Row semantics:
//!
//! - `sample_efficiency`: x = transition budget, value = final validation
//!   loss (next-state MSE; reduced-space MSE for LNN_COM).
//! - `prediction_error`: x = open-loop horizon k, value = median over
//!   held-out segments of the k-step RMSE (see [`open_loop_median_rmse`]
//!   for why the median).
//! - `inference_frequency`: x = replan index after warmup, value = seconds
//!   per replan.
//! - `planner_eval`: x = step index, value = wrapped angle error to the
//!   target; returns and hit times land in `extras`.

use std::path::Path;
use std::time::Instant;

use lnn_core::mechanics::{State, SystemKind, SystemSpec};
use lnn_core::models::{
    Checkpoint, ComDynamics, DynamicsModel, GtDynamics, LnnDynamics, LnnPath, ModelKind,
};
use lnn_core::models::BnnDynamics;
use lnn_core::planner::{mppi_plan, receding_horizon_run, wrap_angle, RewardFn};
use lnn_core::training::{
    com_dataset, generate_dataset, train_model, LossCurve, TransitionDataset,
};
use nalgebra::DVector;

use crate::config::{parse_model_kind, HarnessConfig};
use crate::report::BenchReport;
use crate::HarnessError;

pub const EXPERIMENTS: &[&str] = &[
    "sample_efficiency",
    "prediction_error",
    "inference_frequency",
    "planner_eval",
];

/// Keeps per-run streams apart without correlated low bits.
fn derived_seed(base: u64, salt: u64) -> u64 {
    let mut x = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x
}

/// First `budget` transitions of a dataset. Truncation can only shorten the
/// final trajectory, so span recovery still works on the result.
fn prefix_dataset(full: &TransitionDataset, budget: usize) -> Result<TransitionDataset, HarnessError> {
    if budget == 0 || budget > full.count() {
        return Err(HarnessError::Config(format!(
            "budget {budget} outside the generated dataset of {} transitions",
            full.count()
        )));
    }
    let mut sub = full.clone();
    sub.records.truncate(budget);
    Ok(sub)
}

/// Wraps a trained checkpoint in the planner/rollout interface.
pub fn dynamics_for(ckpt: Checkpoint) -> Result<Box<dyn DynamicsModel>, HarnessError> {
    Ok(match ckpt {
        Checkpoint::Lnn { kind, model } => {
            let path = if kind == ModelKind::LnnDiag {
                LnnPath::Diagonalized
            } else {
                LnnPath::Cholesky
            };
            Box::new(LnnDynamics { model, path })
        }
        Checkpoint::Com(model) => Box::new(ComDynamics { model }),
        Checkpoint::Bnn(model) => Box::new(BnnDynamics { model }),
        other => {
            return Err(HarnessError::Config(format!(
                "{} checkpoints do not define dynamics",
                other.kind().name()
            )))
        }
    })
}

/// Trains one model kind on the right view of the dataset (reduced for
/// LNN_COM, full otherwise).
fn train_kind(
    config: &HarnessConfig,
    spec: &SystemSpec,
    dataset: &TransitionDataset,
    kind: ModelKind,
    seed: u64,
) -> Result<(Checkpoint, LossCurve), HarnessError> {
    let tc = config.train_config(kind, seed)?;
    let data;
    let view = if kind == ModelKind::LnnCom {
        data = com_dataset(dataset, spec)?;
        &data
    } else {
        dataset
    };
    Ok(train_model(view, &tc)?)
}

fn write_curve(dir: &Path, name: &str, curve: &LossCurve) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.csv")), curve.to_csv_string())?;
    Ok(())
}

/// Validation loss as a function of how many transitions the model saw.
pub fn run_sample_efficiency(
    config: &HarnessConfig,
    config_hash: &str,
    out_dir: &Path,
) -> Result<BenchReport, HarnessError> {
    let spec = config.system_spec()?;
    let mut report = BenchReport::new("sample_efficiency", config_hash);
    let budgets = &config.experiment.budgets;
    let max_budget = *budgets
        .iter()
        .max()
        .ok_or_else(|| HarnessError::Config("experiment.budgets is empty".into()))?;
    let steps = config.data.steps;
    let trajectories = max_budget.div_ceil(steps);

    for &seed in &config.experiment.seeds {
        let full = generate_dataset(
            &spec,
            trajectories,
            steps,
            config.data.dt,
            derived_seed(config.data.seed, seed),
        )?;
        for &budget in budgets {
            let sub = prefix_dataset(&full, budget)?;
            for name in &config.experiment.models {
                let kind = parse_model_kind(name)?;
                let started = Instant::now();
                let (_, curve) = train_kind(config, &spec, &sub, kind, seed)?;
                let val = curve.final_val_loss().ok_or_else(|| {
                    HarnessError::Config("sample_efficiency needs train.epochs >= 1".into())
                })?;
                report.push(name, seed, budget as f64, val);
                write_curve(
                    &out_dir.join("curves"),
                    &format!("{name}_s{seed}_b{budget}"),
                    &curve,
                )?;
                report.extras.insert(
                    format!("train_seconds_{name}_s{seed}_b{budget}"),
                    started.elapsed().as_secs_f64(),
                );
            }
        }
    }
    report.save(out_dir)?;
    Ok(report)
}

/// Error a diverged open-loop rollout contributes, instead of poisoning
/// aggregates with NaN.
const DIVERGED_SEGMENT_RMSE: f64 = 1e3;

/// Per-segment k-step open-loop errors: every `stride`-th window of length
/// k in the dataset is replayed through the model with the recorded
/// controls, and the RMSE over the 2n state lanes at exactly step k is
/// collected.
pub fn open_loop_segment_errors(
    model: &dyn DynamicsModel,
    dataset: &TransitionDataset,
    k: usize,
    stride: usize,
) -> Result<Vec<f64>, HarnessError> {
    if k == 0 {
        return Err(HarnessError::Config("horizon k must be at least 1".into()));
    }
    let stride = stride.max(1);
    let mut errors = Vec::new();
    for span in dataset.trajectory_spans() {
        let len = span.len();
        if len < k {
            continue;
        }
        let mut start = 0;
        while start + k <= len {
            let first = &dataset.records[span.start + start];
            let mut state = State::new(first.q.clone(), first.qd.clone());
            let mut ok = true;
            for j in 0..k {
                let rec = &dataset.records[span.start + start + j];
                state = match model.predict_next(&state, &rec.u, dataset.dt) {
                    Ok(s) if s.is_finite() => s,
                    _ => {
                        ok = false;
                        break;
                    }
                };
            }
            if ok {
                let target = &dataset.records[span.start + start + k - 1];
                let mut sq = 0.0;
                for i in 0..dataset.n {
                    sq += (state.q[i] - target.q_next[i]).powi(2);
                    sq += (state.qd[i] - target.qd_next[i]).powi(2);
                }
                errors.push((sq / (2.0 * dataset.n as f64)).sqrt());
            } else {
                errors.push(DIVERGED_SEGMENT_RMSE);
            }
            start += stride;
        }
    }
    if errors.is_empty() {
        return Err(HarnessError::Config(format!(
            "no evaluation segments of length {k} available"
        )));
    }
    Ok(errors)
}

/// Median of the per-segment errors. Long-horizon errors on these systems
/// are heavy-tailed: segments passing near an unstable equilibrium are
/// intrinsically unpredictable (the true dynamics diverge there under
/// infinitesimal perturbation), so the mean measures the tail share rather
/// than model quality. The median tracks the typical segment.
pub fn open_loop_median_rmse(
    model: &dyn DynamicsModel,
    dataset: &TransitionDataset,
    k: usize,
    stride: usize,
) -> Result<f64, HarnessError> {
    let mut errors = open_loop_segment_errors(model, dataset, k, stride)?;
    errors.sort_by(f64::total_cmp);
    let n = errors.len();
    Ok(if n % 2 == 1 {
        errors[n / 2]
    } else {
        0.5 * (errors[n / 2 - 1] + errors[n / 2])
    })
}

/// Pooled RMSE over all segments and lanes; tail-sensitive by construction.
pub fn open_loop_rmse(
    model: &dyn DynamicsModel,
    dataset: &TransitionDataset,
    k: usize,
    stride: usize,
) -> Result<f64, HarnessError> {
    let errors = open_loop_segment_errors(model, dataset, k, stride)?;
    let mean_sq = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
    Ok(mean_sq.sqrt())
}

/// Open-loop prediction error (median segment RMSE) at several horizons on
/// held-out trajectories.
pub fn run_prediction_error(
    config: &HarnessConfig,
    config_hash: &str,
    out_dir: &Path,
) -> Result<BenchReport, HarnessError> {
    let spec = config.system_spec()?;
    let mut report = BenchReport::new("prediction_error", config_hash);
    if config.experiment.horizons.is_empty() {
        return Err(HarnessError::Config("experiment.horizons is empty".into()));
    }

    for &seed in &config.experiment.seeds {
        let train_ds = generate_dataset(
            &spec,
            config.data.trajectories,
            config.data.steps,
            config.data.dt,
            derived_seed(config.data.seed, seed),
        )?;
        // Held-out rollouts come from a disjoint seed stream entirely.
        let eval_trajectories = (config.data.trajectories / 5).clamp(4, 20);
        let eval_ds = generate_dataset(
            &spec,
            eval_trajectories,
            config.data.steps,
            config.data.dt,
            derived_seed(config.data.seed ^ 0x00ff_00ff_00ff_00ff, seed),
        )?;
        let eval_com = com_dataset(&eval_ds, &spec)?;

        for name in &config.experiment.models {
            let kind = parse_model_kind(name)?;
            let (ckpt, curve) = train_kind(config, &spec, &train_ds, kind, seed)?;
            write_curve(&out_dir.join("curves"), &format!("{name}_s{seed}"), &curve)?;
            let dynamics = dynamics_for(ckpt)?;
            let eval_view = if kind == ModelKind::LnnCom {
                &eval_com
            } else {
                &eval_ds
            };
            for &k in &config.experiment.horizons {
                let rmse = open_loop_median_rmse(dynamics.as_ref(), eval_view, k, 7)?;
                report.push(name, seed, k as f64, rmse);
            }
        }
    }
    report.save(out_dir)?;
    Ok(report)
}

/// Wall-clock per replan for every model kind under one planner setting.
pub fn run_inference_frequency(
    config: &HarnessConfig,
    config_hash: &str,
    out_dir: &Path,
) -> Result<BenchReport, HarnessError> {
    let spec = config.system_spec()?;
    let mut report = BenchReport::new("inference_frequency", config_hash);
    let seed = *config.experiment.seeds.first().unwrap_or(&0);
    let replans = config.experiment.replans;
    let warmup = config.experiment.warmup;
    if replans == 0 {
        return Err(HarnessError::Config("experiment.replans must be positive".into()));
    }

    let train_ds = generate_dataset(
        &spec,
        config.data.trajectories,
        config.data.steps,
        config.data.dt,
        derived_seed(config.data.seed, seed),
    )?;
    let com_ds = com_dataset(&train_ds, &spec)?;
    let reward = swing_up_reward(spec.kind);
    let target = match &reward {
        RewardFn::SwingUp { target_angle, .. } => *target_angle,
        RewardFn::Constant(_) => 0.0,
    };
    let com_reward = RewardFn::swing_up(target);

    for name in &config.experiment.models {
        let kind = parse_model_kind(name)?;
        let (ckpt, _) = train_kind(config, &spec, &train_ds, kind, seed)?;
        let dynamics = dynamics_for(ckpt)?;
        let reduced = kind == ModelKind::LnnCom;

        // Plan from states drawn off real trajectories so the timing sees
        // representative inputs, not just the rest state.
        let source = if reduced { &com_ds } else { &train_ds };
        let stride = (source.count() / 16).max(1);
        let states: Vec<State> = source
            .records
            .iter()
            .step_by(stride)
            .take(16)
            .map(|r| State::new(r.q.clone(), r.qd.clone()))
            .collect();

        let m = dynamics.action_dim();
        let mut pc = config.plan_config(if reduced {
            None
        } else {
            Some(spec.u_max.clone())
        });
        pc.seed = derived_seed(pc.seed, seed);
        let nominal = vec![DVector::zeros(m); pc.horizon];
        let r = if reduced { &com_reward } else { &reward };

        for i in 0..(warmup + replans) {
            let state = &states[i % states.len()];
            let plan = mppi_plan(dynamics.as_ref(), None, r, state, &nominal, &pc, i as u64)
                .map_err(|e| HarnessError::Runtime(format!("{name} replan {i}: {e}")))?;
            if i >= warmup {
                report.push(name, seed, (i - warmup) as f64, plan.wall_clock_s);
            }
        }
    }

    let stats = report.model_stats();
    for (model, q) in &stats {
        report
            .extras
            .insert(format!("median_replan_s_{model}"), q.median);
    }
    if let (Some(diag), Some(fd)) = (stats.get("LNN_DIAG"), stats.get("LNN_FD")) {
        report
            .extras
            .insert("diag_over_fd_median".into(), diag.median / fd.median);
    }
    report.save(out_dir)?;
    Ok(report)
}

/// Swing-up reward for the system's unstable equilibrium.
pub fn swing_up_reward(kind: SystemKind) -> RewardFn {
    match kind {
        SystemKind::Pendulum | SystemKind::DoublePendulum => {
            RewardFn::swing_up(std::f64::consts::PI)
        }
        SystemKind::CartPole => {
            let mut r = RewardFn::swing_up(std::f64::consts::PI);
            if let RewardFn::SwingUp { angle_index, .. } = &mut r {
                *angle_index = 1;
            }
            r
        }
        // The torso regulates pitch to level.
        SystemKind::PlanarTorso => RewardFn::swing_up(0.0),
    }
}

fn angle_index_of(reward: &RewardFn) -> usize {
    match reward {
        RewardFn::SwingUp { angle_index, .. } => *angle_index,
        RewardFn::Constant(_) => 0,
    }
}

fn target_of(reward: &RewardFn) -> f64 {
    match reward {
        RewardFn::SwingUp { target_angle, .. } => *target_angle,
        RewardFn::Constant(_) => 0.0,
    }
}

fn write_trajectory(dir: &Path, name: &str, run: &lnn_core::planner::RunResult) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let n = run.states[0].q.len();
    let m = run.actions.first().map_or(0, |a| a.len());
    let mut out = String::from("step");
    for i in 0..n {
        out.push_str(&format!(",q{i}"));
    }
    for i in 0..n {
        out.push_str(&format!(",qd{i}"));
    }
    for i in 0..m {
        out.push_str(&format!(",u{i}"));
    }
    out.push_str(",reward\n");
    for (step, a) in run.actions.iter().enumerate() {
        let s = &run.states[step];
        out.push_str(&format!("{step}"));
        for i in 0..n {
            out.push_str(&format!(",{}", s.q[i]));
        }
        for i in 0..n {
            out.push_str(&format!(",{}", s.qd[i]));
        }
        for i in 0..m {
            out.push_str(&format!(",{}", a[i]));
        }
        out.push_str(&format!(",{}\n", run.rewards[step]));
    }
    std::fs::write(dir.join(format!("{name}.csv")), out)?;
    Ok(())
}

/// Closed-loop swing-up: the analytic reference first, then every requested
/// learned model, all under the same planner configuration.
pub fn run_planner_eval(
    config: &HarnessConfig,
    config_hash: &str,
    out_dir: &Path,
) -> Result<BenchReport, HarnessError> {
    let spec = config.system_spec()?;
    let mut report = BenchReport::new("planner_eval", config_hash);
    let reward = swing_up_reward(spec.kind);
    let angle_index = angle_index_of(&reward);
    let target = target_of(&reward);
    let state0 = State::new(
        DVector::zeros(spec.dof()),
        DVector::zeros(spec.dof()),
    );

    for &seed in &config.experiment.seeds {
        let mut pc = config.plan_config(Some(spec.u_max.clone()));
        pc.seed = derived_seed(pc.seed, seed);
        let steps = config.plan.steps;

        let run_one = |model: &dyn DynamicsModel,
                           name: &str,
                           report: &mut BenchReport|
         -> Result<(), HarnessError> {
            let run = receding_horizon_run(model, None, &reward, &spec, &state0, steps, &pc)?;
            let errs: Vec<f64> = run
                .states
                .iter()
                .map(|s| wrap_angle(s.q[angle_index] - target).abs())
                .collect();
            for (step, e) in errs.iter().enumerate() {
                report.push(name, seed, step as f64, *e);
            }
            let first_hit = errs
                .iter()
                .position(|&e| e <= 0.2)
                .map_or(-1.0, |p| p as f64);
            report
                .extras
                .insert(format!("return_{name}_s{seed}"), run.discounted_return);
            report
                .extras
                .insert(format!("final_err_{name}_s{seed}"), *errs.last().unwrap());
            report
                .extras
                .insert(format!("first_hit_{name}_s{seed}"), first_hit);
            write_trajectory(&out_dir.join("trajectories"), &format!("{name}_s{seed}"), &run)?;
            Ok(())
        };

        let gt = GtDynamics { spec: spec.clone() };
        run_one(&gt, "GT", &mut report)?;

        let train_ds = generate_dataset(
            &spec,
            config.data.trajectories,
            config.data.steps,
            config.data.dt,
            derived_seed(config.data.seed, seed),
        )?;
        for name in &config.experiment.models {
            let kind = parse_model_kind(name)?;
            if kind == ModelKind::LnnCom {
                // The reduced model has no actuators; it cannot close the loop.
                continue;
            }
            let (ckpt, _) = train_kind(config, &spec, &train_ds, kind, seed)?;
            let dynamics = dynamics_for(ckpt)?;
            run_one(dynamics.as_ref(), name, &mut report)?;
        }

        for name in report
            .extras
            .keys()
            .filter(|k| k.starts_with("return_") && !k.starts_with("return_GT"))
            .cloned()
            .collect::<Vec<_>>()
        {
            let gt_key = format!("return_GT_s{seed}");
            if name.ends_with(&format!("_s{seed}")) {
                if let (Some(&r), Some(&r_gt)) =
                    (report.extras.get(&name), report.extras.get(&gt_key))
                {
                    report
                        .extras
                        .insert(format!("{name}_over_gt"), r / r_gt);
                }
            }
        }
    }
    report.save(out_dir)?;
    Ok(report)
}

/// Dispatch by experiment name.
pub fn run_experiment(
    name: &str,
    config: &HarnessConfig,
    config_hash: &str,
    out_dir: &Path,
) -> Result<BenchReport, HarnessError> {
    match name {
        "sample_efficiency" => run_sample_efficiency(config, config_hash, out_dir),
        "prediction_error" => run_prediction_error(config, config_hash, out_dir),
        "inference_frequency" => run_inference_frequency(config, config_hash, out_dir),
        "planner_eval" => run_planner_eval(config, config_hash, out_dir),
        other => Err(HarnessError::Config(format!(
            "unknown experiment {other:?} (expected one of {})",
            EXPERIMENTS.join(", ")
        ))),
    }
}
