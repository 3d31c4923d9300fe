//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 bad invocation or configuration, 3 runtime
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lnn_core::mechanics::{State, SystemKind, SystemSpec};
use lnn_core::models::{load_checkpoint, save_checkpoint, ModelKind};
use lnn_core::planner::{receding_horizon_run, wrap_angle};
use lnn_core::training::{
    com_dataset, generate_dataset, load_dataset, save_dataset, train_model,
};
use lnn_harness::config::{hash_bytes, parse_model_kind, HarnessConfig};
use lnn_harness::experiments::{
    dynamics_for, open_loop_median_rmse, open_loop_rmse, run_experiment, swing_up_reward,
    EXPERIMENTS,
};
use lnn_harness::HarnessError;
use nalgebra::DVector;

#[derive(Parser)]
#[command(
    name = "lnn-harness",
    about = "Dataset generation, training, evaluation and planning benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate excitation trajectories and write an LDS1 dataset.
    GenData(GenDataArgs),
    /// Train a model on a dataset and write an LNN1 checkpoint.
    Train(TrainArgs),
    /// Open-loop k-step error (median and pooled segment RMSE) of a
    /// checkpoint on a dataset.
    EvalRollout(EvalRolloutArgs),
    /// Closed-loop receding-horizon control of the analytic system.
    Plan(PlanArgs),
    /// Run one benchmark experiment end to end.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// pendulum | double_pendulum | cart_pole | planar_torso
    #[arg(long, default_value = "pendulum")]
    system: String,
    #[arg(long, default_value_t = 100)]
    trajectories: usize,
    /// Steps per trajectory.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0.02)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Input LDS1 dataset.
    #[arg(long)]
    data: PathBuf,
    /// LNN_FD | LNN_DIAG | LNN_ID | LNN_COM | BNN
    #[arg(long, default_value = "LNN_FD")]
    model: String,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    step_size: f64,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "32,32", value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Optional loss-curve CSV path.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct EvalRolloutArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Evaluation LDS1 dataset.
    #[arg(long)]
    data: PathBuf,
    /// Horizons to evaluate, comma separated.
    #[arg(long, default_value = "1,5,10,20,50", value_delimiter = ',')]
    horizons: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    stride: usize,
    /// Optional CSV output (k,median_rmse,pooled_rmse); printed to stdout
    /// as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    /// System to control.
    #[arg(long, default_value = "pendulum")]
    system: String,
    /// Checkpoint to plan with; omit to plan with the analytic model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 60)]
    horizon: usize,
    #[arg(long, default_value_t = 256)]
    n_samples: usize,
    #[arg(long, default_value_t = 2.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0.02)]
    temperature: f64,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 0.02)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional trajectory CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// sample_efficiency | prediction_error | inference_frequency | planner_eval
    experiment: String,
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for reports and artifacts.
    #[arg(long, default_value = "bench_out")]
    out: PathBuf,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::EvalRollout(args) => eval_rollout(args),
        Command::Plan(args) => plan(args),
        Command::Bench(args) => bench(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<(), HarnessError> {
    let kind = SystemKind::parse(&args.system)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let spec = SystemSpec::standard(kind);
    let dataset = generate_dataset(&spec, args.trajectories, args.steps, args.dt, args.seed)?;
    save_dataset(&args.out, &dataset)?;
    println!(
        "wrote {} transitions ({} trajectories of {} steps, dt={}) to {}",
        dataset.count(),
        args.trajectories,
        args.steps,
        args.dt,
        args.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), HarnessError> {
    let kind = parse_model_kind(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    let mut tc = lnn_core::training::TrainConfig::new(kind);
    tc.epochs = args.epochs;
    tc.batch_size = args.batch_size;
    tc.adam.step_size = args.step_size;
    tc.hidden = args.hidden.clone();
    tc.seed = args.seed;
    tc.validate().map_err(|e| HarnessError::Config(e.to_string()))?;

    let view;
    let data = if kind == ModelKind::LnnCom {
        let spec = SystemSpec::standard(dataset.kind);
        view = com_dataset(&dataset, &spec)?;
        &view
    } else {
        &dataset
    };
    let (ckpt, curve) = train_model(data, &tc)?;
    save_checkpoint(&args.out, &ckpt)?;
    if let Some(curve_path) = &args.curve {
        std::fs::write(curve_path, curve.to_csv_string())?;
    }
    match curve.final_val_loss() {
        Some(val) => println!(
            "trained {} for {} epochs; final val loss {val:.6e}; checkpoint {}",
            args.model,
            args.epochs,
            args.out.display()
        ),
        None => println!(
            "wrote untrained {} checkpoint to {}",
            args.model,
            args.out.display()
        ),
    }
    Ok(())
}

fn eval_rollout(args: EvalRolloutArgs) -> Result<(), HarnessError> {
    let ckpt = load_checkpoint(&args.model)?;
    let kind = ckpt.kind();
    let dataset = load_dataset(&args.data)?;
    let view;
    let data = if kind == ModelKind::LnnCom {
        let spec = SystemSpec::standard(dataset.kind);
        view = com_dataset(&dataset, &spec)?;
        &view
    } else {
        &dataset
    };
    let dynamics = dynamics_for(ckpt)?;
    let mut csv = String::from("k,median_rmse,pooled_rmse\n");
    for &k in &args.horizons {
        let median = open_loop_median_rmse(dynamics.as_ref(), data, k, args.stride)?;
        let pooled = open_loop_rmse(dynamics.as_ref(), data, k, args.stride)?;
        println!("k={k}: median_rmse={median:.6e} pooled_rmse={pooled:.6e}");
        csv.push_str(&format!("{k},{median},{pooled}\n"));
    }
    if let Some(out) = &args.out {
        std::fs::write(out, csv)?;
    }
    Ok(())
}

fn plan(args: PlanArgs) -> Result<(), HarnessError> {
    let kind = SystemKind::parse(&args.system)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let spec = SystemSpec::standard(kind);
    let reward = swing_up_reward(kind);

    let mut pc = lnn_core::planner::PlanConfig::new(args.horizon, args.dt);
    pc.n_samples = args.n_samples;
    pc.sigma = args.sigma;
    pc.temperature = args.temperature;
    pc.gamma = args.gamma;
    pc.seed = args.seed;
    pc.u_max = Some(spec.u_max.clone());

    let state0 = State::new(DVector::zeros(spec.dof()), DVector::zeros(spec.dof()));
    let run = match &args.model {
        None => {
            let gt = lnn_core::models::GtDynamics { spec: spec.clone() };
            receding_horizon_run(&gt, None, &reward, &spec, &state0, args.steps, &pc)?
        }
        Some(path) => {
            let dynamics = dynamics_for(load_checkpoint(path)?)?;
            receding_horizon_run(dynamics.as_ref(), None, &reward, &spec, &state0, args.steps, &pc)?
        }
    };

    let angle_index = match &reward {
        lnn_core::planner::RewardFn::SwingUp { angle_index, .. } => *angle_index,
        _ => 0,
    };
    let target = match &reward {
        lnn_core::planner::RewardFn::SwingUp { target_angle, .. } => *target_angle,
        _ => 0.0,
    };
    let final_state = run.states.last().unwrap();
    let final_err = wrap_angle(final_state.q[angle_index] - target).abs();
    let median = {
        let mut t = run.replan_seconds.clone();
        t.sort_by(f64::total_cmp);
        t[t.len() / 2]
    };
    println!(
        "return={:.4} final_angle_err={final_err:.4} median_replan_s={median:.6}",
        run.discounted_return
    );

    if let Some(out) = &args.out {
        let mut csv = String::from("step,angle_err,reward\n");
        for (step, r) in run.rewards.iter().enumerate() {
            let e = wrap_angle(run.states[step].q[angle_index] - target).abs();
            csv.push_str(&format!("{step},{e},{r}\n"));
        }
        std::fs::write(out, csv)?;
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), HarnessError> {
    if !EXPERIMENTS.contains(&args.experiment.as_str()) {
        return Err(HarnessError::Config(format!(
            "unknown experiment {:?} (expected one of {})",
            args.experiment,
            EXPERIMENTS.join(", ")
        )));
    }
    let (mut config, hash) = match &args.config {
        Some(path) => HarnessConfig::load(path)?,
        None => (HarnessConfig::default(), hash_bytes(b"builtin-defaults")),
    };
    if let Some(seed) = args.seed {
        config.experiment.seeds = vec![seed];
    }
    let report = run_experiment(&args.experiment, &config, &hash, &args.out)?;
    println!(
        "{}: {} rows -> {}",
        report.experiment,
        report.rows.len(),
        args.out.display()
    );
    for (key, value) in &report.extras {
        println!("  {key} = {value}");
    }
    Ok(())
}
