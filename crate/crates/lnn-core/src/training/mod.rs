//! Supervised training for every model variant.
//!
//! Training records each batch's arithmetic on the tape, so gradients flow
//! through the entire forward-dynamics pipeline including the Cholesky
//! solve. The same record-level loss kernels run in plain mode for
//! validation.

pub mod dataset;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{
    adam_step, grad_params, Activation, AdamParams, AdamState, Algebra, Mlp, PlainAlg, Tape,
    TapeAlg, TapeMlp,
};
use crate::error::{CoreError, Result};
use crate::mechanics::SystemSpec;
use crate::models::{el, BnnModel, Checkpoint, ComLnnModel, LnnModel, LnnRef, ModelKind};

pub use dataset::{
    com_dataset, compute_stats, denormalize, generate_dataset, load_dataset, normalize,
    save_dataset, NormStats, TransitionDataset, TransitionRecord,
};

/// Everything that fixes a training run. The seed covers initialization,
/// the train/validation split, and batch shuffling.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamParams,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epsilon: f64,
}

impl TrainConfig {
    pub fn new(kind: ModelKind) -> Self {
        TrainConfig {
            kind,
            epochs: 60,
            batch_size: 256,
            seed: 0,
            adam: AdamParams::default(),
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            epsilon: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be positive".into()));
        }
        if self.hidden.is_empty() {
            return Err(CoreError::Config(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.epsilon <= 0.0 {
            return Err(CoreError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub samples_seen: u64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Per-epoch training record; `samples_seen` is the x-axis of the
/// sample-efficiency experiment and is strictly increasing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub epochs: Vec<EpochStats>,
}

impl LossCurve {
    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_loss)
    }

    /// CSV with the documented columns.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,samples_seen,train_loss,val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.samples_seen, e.train_loss, e.val_loss
            ));
        }
        out
    }

    /// Same rows with both losses divided by their first-epoch values.
    pub fn to_normalized_csv_string(&self) -> String {
        let mut out = String::from("epoch,samples_seen,train_loss_norm,val_loss_norm\n");
        if let Some(first) = self.epochs.first() {
            let t0 = if first.train_loss != 0.0 { first.train_loss } else { 1.0 };
            let v0 = if first.val_loss != 0.0 { first.val_loss } else { 1.0 };
            for e in &self.epochs {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    e.epoch,
                    e.samples_seen,
                    e.train_loss / t0,
                    e.val_loss / v0
                ));
            }
        }
        out
    }
}

/// Terminal-value network for the planner: q-layout input, scalar output.
#[derive(Clone, Debug)]
pub struct ValueModel {
    pub net: Mlp,
}

impl ValueModel {
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.net.eval(x.as_slice())?[0])
    }
}

/// Squared error of one FD-path next-state prediction, summed over the 2n
/// state lanes. Generic so training records it on the tape and validation
/// runs it plain.
fn fd_record_sqerr<A: Algebra>(
    alg: &mut A,
    lnn: &LnnRef<'_, A::S>,
    q: &[A::S],
    qd: &[A::S],
    tau: Option<&[A::S]>,
    q_next: &[A::S],
    qd_next: &[A::S],
    dt: f64,
) -> Result<A::S> {
    let qdd = el::forward_kernel(alg, lnn, q, qd, tau)?;
    let dtk = alg.konst(dt);
    let mut sum = alg.zero();
    for i in 0..lnn.n {
        let vd = alg.mul_add(qdd[i], dtk, qd[i]);
        let vq = alg.mul_add(vd, dtk, q[i]);
        let ed = alg.sub(vd, qd_next[i]);
        let eq = alg.sub(vq, q_next[i]);
        let ed2 = alg.square(ed);
        let eq2 = alg.square(eq);
        sum = alg.add(sum, ed2);
        sum = alg.add(sum, eq2);
    }
    Ok(sum)
}

/// Squared torque error of one inverse-dynamics prediction, summed over the
/// n generalized-force lanes. No factorization or solve on this path.
fn id_record_sqerr<A: Algebra>(
    alg: &mut A,
    lnn: &LnnRef<'_, A::S>,
    q: &[A::S],
    qd: &[A::S],
    qdd: &[A::S],
    tau_target: &[A::S],
) -> A::S {
    let tau = el::inverse_kernel(alg, lnn, q, qd, qdd);
    let mut sum = alg.zero();
    for i in 0..lnn.n {
        let e = alg.sub(tau[i], tau_target[i]);
        let e2 = alg.square(e);
        sum = alg.add(sum, e2);
    }
    sum
}

fn consts<A: Algebra>(alg: &mut A, v: &DVector<f64>) -> Vec<A::S> {
    v.iter().map(|&x| alg.konst(x)).collect()
}

/// Mean squared next-state error of the FD path over a batch, averaged over
/// records and the 2n state dimensions.
pub fn loss_fd_next_state(
    model: &LnnModel,
    records: &[&TransitionRecord],
    dt: f64,
) -> Result<f64> {
    if records.is_empty() {
        return Err(CoreError::Config("empty batch".into()));
    }
    let mut alg = PlainAlg;
    let lnn = model.plain_ref();
    let mut sum = 0.0;
    for r in records {
        let tau = &model.b * &r.u;
        sum += fd_record_sqerr(
            &mut alg,
            &lnn,
            r.q.as_slice(),
            r.qd.as_slice(),
            Some(tau.as_slice()),
            r.q_next.as_slice(),
            r.qd_next.as_slice(),
            dt,
        )?;
    }
    Ok(sum / (records.len() * 2 * model.n) as f64)
}

/// Mean squared generalized-force error over a batch, averaged over records
/// and the n force dimensions.
pub fn loss_id_torque(model: &LnnModel, records: &[&TransitionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(CoreError::Config("empty batch".into()));
    }
    let mut alg = PlainAlg;
    let lnn = model.plain_ref();
    let mut sum = 0.0;
    for r in records {
        let tau_target = &model.b * &r.u;
        sum += id_record_sqerr(
            &mut alg,
            &lnn,
            r.q.as_slice(),
            r.qd.as_slice(),
            r.qdd.as_slice(),
            tau_target.as_slice(),
        );
    }
    Ok(sum / (records.len() * model.n) as f64)
}

/// Reduced-space next-state MSE for the CoM model.
pub fn loss_com(model: &ComLnnModel, records: &[&TransitionRecord], dt: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(CoreError::Config("empty batch".into()));
    }
    let mut alg = PlainAlg;
    let lnn = model.plain_ref();
    let mut sum = 0.0;
    for r in records {
        if r.q.len() != model.n {
            return Err(CoreError::Shape {
                what: "reduced record",
                expected: model.n,
                got: r.q.len(),
            });
        }
        sum += fd_record_sqerr(
            &mut alg,
            &lnn,
            r.q.as_slice(),
            r.qd.as_slice(),
            None,
            r.q_next.as_slice(),
            r.qd_next.as_slice(),
            dt,
        )?;
    }
    Ok(sum / (records.len() * 2 * model.n) as f64)
}

/// Next-state MSE of the baseline network over a batch.
pub fn loss_bnn(model: &BnnModel, records: &[&TransitionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(CoreError::Config("empty batch".into()));
    }
    let mut sum = 0.0;
    for r in records {
        let mut x = Vec::with_capacity(2 * model.n + model.m);
        x.extend_from_slice(r.q.as_slice());
        x.extend_from_slice(r.qd.as_slice());
        x.extend_from_slice(r.u.as_slice());
        let out = model.net.eval(&x)?;
        for i in 0..model.n {
            let eq = out[i] - r.q_next[i];
            let ed = out[model.n + i] - r.qd_next[i];
            sum += eq * eq + ed * ed;
        }
    }
    Ok(sum / (records.len() * 2 * model.n) as f64)
}

/// MSE of the constant mean-predictor on the next-state target: the
/// "explains nothing" baseline a trained model must beat.
pub fn variance_baseline(dataset: &TransitionDataset) -> f64 {
    let n = dataset.n;
    let count = dataset.count().max(1) as f64;
    let mut mean = DVector::zeros(2 * n);
    for r in &dataset.records {
        for i in 0..n {
            mean[i] += r.q_next[i];
            mean[n + i] += r.qd_next[i];
        }
    }
    mean /= count;
    let mut sq = 0.0;
    for r in &dataset.records {
        for i in 0..n {
            sq += (r.q_next[i] - mean[i]).powi(2);
            sq += (r.qd_next[i] - mean[n + i]).powi(2);
        }
    }
    sq / (count * 2.0 * n as f64)
}

/// Train/validation record indices, split by trajectory so no trajectory
/// leaks into both sides. A single-trajectory dataset degenerates to a
/// sequential 90/10 record split, the best leakage control available.
pub fn split_indices(dataset: &TransitionDataset, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let spans = dataset.trajectory_spans();
    if spans.len() == 1 {
        let cut = (dataset.count() * 9) / 10;
        let all: Vec<usize> = (0..dataset.count()).collect();
        let (train, val) = all.split_at(cut.max(1).min(dataset.count()));
        return (train.to_vec(), val.to_vec());
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5b17);
    order.shuffle(&mut rng);
    let n_val = ((spans.len() as f64 * 0.1).round() as usize).clamp(1, spans.len() - 1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (rank, &si) in order.iter().enumerate() {
        let target = if rank < n_val { &mut val } else { &mut train };
        target.extend(spans[si].clone());
    }
    (train, val)
}

/// Identity-over-zeros actuation matrix lookup for the dataset's system.
fn system_b(dataset: &TransitionDataset) -> Result<nalgebra::DMatrix<f64>> {
    let spec = SystemSpec::standard(dataset.kind);
    if spec.dof() != dataset.n || spec.actuators() != dataset.m {
        return Err(CoreError::Config(format!(
            "dataset dims ({}, {}) do not match system {}",
            dataset.n,
            dataset.m,
            dataset.kind.name()
        )));
    }
    Ok(spec.b)
}

enum Trainee {
    Lnn(LnnModel),
    Com(ComLnnModel),
    Bnn(BnnModel),
}

impl Trainee {
    fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        match self {
            Trainee::Lnn(m) => vec![&mut m.y_net, &mut m.v_net, &mut m.f_net],
            Trainee::Com(m) => vec![&mut m.y_net, &mut m.v_net, &mut m.f_net],
            Trainee::Bnn(m) => vec![&mut m.net],
        }
    }

    fn nets(&self) -> Vec<&Mlp> {
        match self {
            Trainee::Lnn(m) => vec![&m.y_net, &m.v_net, &m.f_net],
            Trainee::Com(m) => vec![&m.y_net, &m.v_net, &m.f_net],
            Trainee::Bnn(m) => vec![&m.net],
        }
    }

    fn into_checkpoint(self, kind: ModelKind) -> Checkpoint {
        match self {
            Trainee::Lnn(model) => Checkpoint::Lnn { kind, model },
            Trainee::Com(model) => Checkpoint::Com(model),
            Trainee::Bnn(model) => Checkpoint::Bnn(model),
        }
    }
}

/// Batch loss on the tape: mean over records and output lanes.
fn traced_batch_loss(
    trainee: &Trainee,
    kind: ModelKind,
    records: &[&TransitionRecord],
    dt: f64,
    tape: &mut Tape,
    traced: &[TapeMlp],
) -> Result<crate::diff::Var> {
    let mut total = tape.constant(0.0);
    let lanes;
    match (trainee, kind) {
        (Trainee::Lnn(model), ModelKind::LnnFd | ModelKind::LnnDiag | ModelKind::LnnId) => {
            lanes = if kind == ModelKind::LnnId { model.n } else { 2 * model.n };
            for r in records {
                let tau = &model.b * &r.u;
                let mut alg = TapeAlg { tape };
                let lnn = LnnRef {
                    y_net: traced[0].as_net_ref(),
                    v_net: traced[1].as_net_ref(),
                    f_net: traced[2].as_net_ref(),
                    epsilon: model.epsilon,
                    n: model.n,
                    softplus_diag: model.softplus_diag,
                };
                let q = consts(&mut alg, &r.q);
                let qd = consts(&mut alg, &r.qd);
                let sq = if kind == ModelKind::LnnId {
                    let qdd = consts(&mut alg, &r.qdd);
                    let tau_t = consts(&mut alg, &tau);
                    id_record_sqerr(&mut alg, &lnn, &q, &qd, &qdd, &tau_t)
                } else {
                    let tau_c = consts(&mut alg, &tau);
                    let qn = consts(&mut alg, &r.q_next);
                    let qdn = consts(&mut alg, &r.qd_next);
                    fd_record_sqerr(&mut alg, &lnn, &q, &qd, Some(&tau_c), &qn, &qdn, dt)?
                };
                total = tape.add(total, sq);
            }
        }
        (Trainee::Com(model), ModelKind::LnnCom) => {
            lanes = 2 * model.n;
            for r in records {
                let mut alg = TapeAlg { tape };
                let lnn = LnnRef {
                    y_net: traced[0].as_net_ref(),
                    v_net: traced[1].as_net_ref(),
                    f_net: traced[2].as_net_ref(),
                    epsilon: model.epsilon,
                    n: model.n,
                    softplus_diag: model.softplus_diag,
                };
                let q = consts(&mut alg, &r.q);
                let qd = consts(&mut alg, &r.qd);
                let qn = consts(&mut alg, &r.q_next);
                let qdn = consts(&mut alg, &r.qd_next);
                let sq = fd_record_sqerr(&mut alg, &lnn, &q, &qd, None, &qn, &qdn, dt)?;
                total = tape.add(total, sq);
            }
        }
        (Trainee::Bnn(model), ModelKind::Bnn) => {
            lanes = 2 * model.n;
            for r in records {
                let mut alg = TapeAlg { tape };
                let mut x = consts(&mut alg, &r.q);
                x.extend(consts(&mut alg, &r.qd));
                x.extend(consts(&mut alg, &r.u));
                let out = crate::diff::net::eval(&mut alg, &traced[0].as_net_ref(), &x);
                let qn = consts(&mut alg, &r.q_next);
                let qdn = consts(&mut alg, &r.qd_next);
                let mut sq = alg.zero();
                for i in 0..model.n {
                    let eq = alg.sub(out[i], qn[i]);
                    let ed = alg.sub(out[model.n + i], qdn[i]);
                    let eq2 = alg.square(eq);
                    let ed2 = alg.square(ed);
                    sq = alg.add(sq, eq2);
                    sq = alg.add(sq, ed2);
                }
                total = tape.add(total, sq);
            }
        }
        _ => {
            return Err(CoreError::Config(
                "model kind does not match trainee structure".into(),
            ))
        }
    }
    let scale = tape.constant(1.0 / (records.len() * lanes) as f64);
    Ok(tape.mul(total, scale))
}

/// Plain-mode validation loss for the kind's evaluation metric. The
/// ID-trained model is validated on the FD next-state error: it is used as
/// a forward model at inference, and the shared metric keeps the curves of
/// all variants comparable.
fn validation_loss(
    trainee: &Trainee,
    kind: ModelKind,
    records: &[&TransitionRecord],
    dt: f64,
) -> Result<f64> {
    match (trainee, kind) {
        (Trainee::Lnn(model), _) => loss_fd_next_state(model, records, dt),
        (Trainee::Com(model), _) => loss_com(model, records, dt),
        (Trainee::Bnn(model), _) => loss_bnn(model, records),
    }
}

fn train_loss_plain(
    trainee: &Trainee,
    kind: ModelKind,
    records: &[&TransitionRecord],
    dt: f64,
) -> Result<f64> {
    match (trainee, kind) {
        (Trainee::Lnn(model), ModelKind::LnnId) => loss_id_torque(model, records),
        _ => validation_loss(trainee, kind, records, dt),
    }
}

/// Supervised training: shuffled mini-batches, trajectory-level 90/10
/// split, Adam, deterministic per seed. Divergence (non-finite loss)
/// aborts with a diagnostic.
pub fn train_model(
    dataset: &TransitionDataset,
    config: &TrainConfig,
) -> Result<(Checkpoint, LossCurve)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(CoreError::Config("dataset is empty".into()));
    }

    let mut trainee = match config.kind {
        ModelKind::LnnFd | ModelKind::LnnDiag | ModelKind::LnnId => Trainee::Lnn(LnnModel::init(
            dataset.n,
            system_b(dataset)?,
            &config.hidden,
            config.activation,
            config.epsilon,
            config.seed,
        )?),
        ModelKind::LnnCom => {
            if dataset.m != 0 {
                return Err(CoreError::Config(
                    "LNN_COM trains on a reduced dataset (m = 0); project it first".into(),
                ));
            }
            Trainee::Com(ComLnnModel::init(
                dataset.n,
                &config.hidden,
                config.activation,
                config.epsilon,
                config.seed,
            )?)
        }
        ModelKind::Bnn => Trainee::Bnn(BnnModel::init(
            dataset.n,
            dataset.m,
            &config.hidden,
            config.activation,
            config.seed,
        )?),
        other => {
            return Err(CoreError::Config(format!(
                "train_model does not build {} models",
                other.name()
            )))
        }
    };

    let (train_idx, val_idx) = split_indices(dataset, config.seed);
    let val_records: Vec<&TransitionRecord> = val_idx.iter().map(|&i| &dataset.records[i]).collect();

    let mut adam_states: Vec<AdamState> = trainee
        .nets()
        .iter()
        .map(|net| AdamState::new(net.n_params(), config.adam))
        .collect();

    let mut curve = LossCurve::default();
    let mut samples_seen = 0u64;
    let dt = dataset.dt;

    for epoch in 0..config.epochs {
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ 0xe90c);
        order.shuffle(&mut rng);

        let mut epoch_records = 0usize;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TransitionRecord> = chunk.iter().map(|&i| &dataset.records[i]).collect();
            let mut tape = Tape::new();
            let traced: Vec<TapeMlp> = trainee
                .nets()
                .iter()
                .map(|net| TapeMlp::bind(&mut tape, net))
                .collect();
            let loss = traced_batch_loss(&trainee, config.kind, &batch, dt, &mut tape, &traced)?;
            let loss_val = tape.value(loss);
            if !loss_val.is_finite() {
                return Err(CoreError::Numerical(format!(
                    "training diverged: non-finite loss {loss_val} at epoch {epoch}, batch {batch_no}"
                )));
            }
            epoch_records += batch.len();

            let traced_refs: Vec<&TapeMlp> = traced.iter().collect();
            let grads = grad_params(&tape, loss, &traced_refs)?;
            for ((net, state), grad) in trainee
                .nets_mut()
                .into_iter()
                .zip(adam_states.iter_mut())
                .zip(grads.iter())
            {
                let params = net.params();
                let (next, next_state) = adam_step(&params, grad, state)?;
                *state = next_state;
                net.set_params(&next)?;
            }
        }

        samples_seen += epoch_records as u64;
        // Reported train loss: post-update plain pass over the records the
        // epoch actually visited, in their original order.
        let train_records: Vec<&TransitionRecord> =
            train_idx.iter().map(|&i| &dataset.records[i]).collect();
        let train_loss = train_loss_plain(&trainee, config.kind, &train_records, dt)?;
        let val_loss = if val_records.is_empty() {
            train_loss
        } else {
            validation_loss(&trainee, config.kind, &val_records, dt)?
        };
        if !val_loss.is_finite() {
            return Err(CoreError::Numerical(format!(
                "training diverged: non-finite validation loss at epoch {epoch}"
            )));
        }
        curve.epochs.push(EpochStats {
            epoch,
            samples_seen,
            train_loss,
            val_loss,
        });
    }

    Ok((trainee.into_checkpoint(config.kind), curve))
}

/// Fit the terminal value network by plain MSE regression on
/// (state, discounted return) pairs; returns the model and its held-out MSE.
pub fn fit_value(
    inputs: &[DVector<f64>],
    targets: &[f64],
    config: &TrainConfig,
) -> Result<(ValueModel, f64)> {
    config.validate()?;
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(CoreError::Config(format!(
            "fit_value needs matching nonempty inputs/targets, got {}/{}",
            inputs.len(),
            targets.len()
        )));
    }
    let in_dim = inputs[0].len();
    let mut sizes = vec![in_dim];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(1);
    let mut net = Mlp::init(&sizes, config.activation, config.seed)?;
    let mut state = AdamState::new(net.n_params(), config.adam);

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xf17_5a1e);
    order.shuffle(&mut rng);
    let n_val = if inputs.len() >= 2 { (inputs.len() / 10).max(1) } else { 0 };
    let (val_split, train_split) = order.split_at(n_val);
    let train_idx: &[usize] = if train_split.is_empty() { &order } else { train_split };
    let val_idx: &[usize] = if val_split.is_empty() { train_idx } else { val_split };

    for epoch in 0..config.epochs {
        let mut shuffled = train_idx.to_vec();
        let mut erng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ 0x7a1e);
        shuffled.shuffle(&mut erng);
        for chunk in shuffled.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let traced = TapeMlp::bind(&mut tape, &net);
            let mut total = tape.constant(0.0);
            for &i in chunk {
                let xs: Vec<_> = inputs[i].iter().map(|&v| tape.constant(v)).collect();
                let out = crate::diff::eval_traced(&mut tape, &traced, &xs)[0];
                let t = tape.constant(targets[i]);
                let e = tape.sub(out, t);
                let e2 = tape.square(e);
                total = tape.add(total, e2);
            }
            let scale = tape.constant(1.0 / chunk.len() as f64);
            let loss = tape.mul(total, scale);
            if !tape.value(loss).is_finite() {
                return Err(CoreError::Numerical(format!(
                    "value fit diverged at epoch {epoch}"
                )));
            }
            let grads = grad_params(&tape, loss, &[&traced])?;
            let (next, next_state) = adam_step(&net.params(), &grads[0], &state)?;
            state = next_state;
            net.set_params(&next)?;
        }
    }

    let mut heldout = 0.0;
    for &i in val_idx {
        let out = net.eval(inputs[i].as_slice())?[0];
        heldout += (out - targets[i]).powi(2);
    }
    heldout /= val_idx.len() as f64;
    Ok((ValueModel { net }, heldout))
}
