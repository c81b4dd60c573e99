//! Synchronous gradient-sharing training.
//!
//! One engine drives both single-region training and the federated variant:
//! every round, each client draws one mini-batch from its own shard, computes
//! the loss gradient at the current global parameters, and the server applies
//! the count-weighted mean of the client gradients with the scheduled
//! learning rate. Single-region training is the engine run with one client
//! holding the whole region shard, so the one-client federated run is
//! bit-identical to it by construction — a property the tests still verify
//! end to end.
//!
//! Normalization running statistics are not part of the gradient update; the
//! server adopts the count-weighted mean of the clients' post-batch
//! statistics each round so eval-mode behavior tracks training.

use crate::dataset::RegionDataset;
use crate::net::{pack_labels, pack_observations, unpack_estimate, NetState};
use crate::pilot;
use crate::rng;
use crate::tensor::{cross_entropy_loss, mse_loss, Mode, SgdSchedule, Tensor4};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error("training diverged at round {round}: loss {loss}")]
    Diverged { round: usize, loss: f64 },
    #[error("round {round} aborted: client {client} missing its gradient")]
    RoundAborted { round: usize, client: usize },
}

/// Training targets: packed regression labels or class indices.
#[derive(Debug, Clone)]
pub enum Targets {
    Regression(Tensor4),
    Classes(Vec<usize>),
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Regression(t) => t.batch,
            Targets::Classes(c) => c.len(),
        }
    }

    fn gather(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(t) => Targets::Regression(t.gather_batch(idx)),
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
        }
    }
}

/// One client's shard plus its private batch stream.
pub struct ClientState {
    pub region_id: usize,
    pub inputs: Tensor4,
    pub targets: Targets,
    /// Count weight in the server average (one per user here).
    pub weight: usize,
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl ClientState {
    pub fn new(
        region_id: usize,
        inputs: Tensor4,
        targets: Targets,
        weight: usize,
        rng: ChaCha8Rng,
    ) -> Self {
        let n = inputs.batch;
        Self {
            region_id,
            inputs,
            targets,
            weight,
            order: (0..n).collect(),
            pos: n, // force shuffle on first draw
            epoch: usize::MAX,
            rng,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.inputs.batch
    }

    fn next_batch(&mut self, batch: usize) -> Vec<usize> {
        if self.pos + batch > self.order.len() {
            // new local epoch: reshuffle, drop the remainder
            for i in (1..self.order.len()).rev() {
                let j = self.rng.gen_range(0..=i);
                self.order.swap(i, j);
            }
            self.pos = 0;
            self.epoch = self.epoch.wrapping_add(1);
        }
        let idx = self.order[self.pos..self.pos + batch].to_vec();
        self.pos += batch;
        idx
    }
}

/// Gradient + statistics contribution of one client for one round.
pub struct GradContribution {
    pub grads: Vec<f64>,
    pub state: Vec<f64>,
    pub weight: usize,
    pub loss: f64,
}

/// Compute one client's local gradient at the given global model without
/// mutating it. Returns the contribution and leaves the global network
/// untouched (it is cloned internally).
pub fn local_gradient(
    global: &NetState,
    inputs: &Tensor4,
    targets: &Targets,
    weight: usize,
) -> GradContribution {
    let mut worker = global.clone();
    worker.zero_grad();
    let out = worker.forward(inputs, Mode::Train);
    let (loss, grad) = match targets {
        Targets::Regression(t) => mse_loss(&out, t),
        Targets::Classes(c) => cross_entropy_loss(&out, c),
    };
    worker.backward(&grad);
    GradContribution {
        grads: worker.grads_flat(),
        state: worker.state_flat(),
        weight,
        loss,
    }
}

/// Apply one synchronous round: θ ← θ − lr·(Σ gradients)/(Σ weights), with
/// running statistics replaced by the weight-averaged client statistics.
/// A missing contribution aborts the round and leaves the model unchanged.
pub fn aggregate(
    net: &mut NetState,
    contributions: Vec<Option<GradContribution>>,
    lr: f64,
    round: usize,
) -> Result<f64, TrainError> {
    if let Some(missing) = contributions.iter().position(|c| c.is_none()) {
        return Err(TrainError::RoundAborted {
            round,
            client: missing,
        });
    }
    let contributions: Vec<GradContribution> = contributions.into_iter().flatten().collect();
    let total_weight: usize = contributions.iter().map(|c| c.weight).sum();
    if total_weight == 0 {
        return Err(TrainError::Invalid("zero total client weight".into()));
    }
    let n_params = contributions[0].grads.len();
    let mut grad_sum = vec![0.0; n_params];
    let mut state_sum = vec![0.0; contributions[0].state.len()];
    let mut loss_mean = 0.0;
    for c in &contributions {
        if c.grads.len() != n_params {
            return Err(TrainError::Invalid("gradient shape mismatch".into()));
        }
        for (acc, g) in grad_sum.iter_mut().zip(c.grads.iter()) {
            *acc += g;
        }
        let w = c.weight as f64;
        for (acc, s) in state_sum.iter_mut().zip(c.state.iter()) {
            *acc += w * s;
        }
        loss_mean += w * c.loss;
    }
    let tw = total_weight as f64;
    let mut params = net.params_flat();
    for (p, g) in params.iter_mut().zip(grad_sum.iter()) {
        *p -= lr * g / tw;
    }
    net.set_params_flat(&params);
    for s in state_sum.iter_mut() {
        *s /= tw;
    }
    net.set_state_flat(&state_sum);
    Ok(loss_mean / tw)
}

/// Held-out evaluation data.
pub struct EvalSet {
    pub inputs: Tensor4,
    pub targets: Targets,
}

/// Mean per-sample normalized squared error of a regression net on a set.
pub fn eval_nmse(net: &mut NetState, inputs: &Tensor4, labels: &Tensor4) -> f64 {
    let mut total = 0.0;
    let n = inputs.batch;
    let chunk = 256;
    let mut done = 0;
    while done < n {
        let idx: Vec<usize> = (done..(done + chunk).min(n)).collect();
        let out = net.forward(&inputs.gather_batch(&idx), Mode::Eval);
        for (bi, &i) in idx.iter().enumerate() {
            let est = DVector::from_column_slice(&unpack_estimate(out.item(bi)));
            let truth = DVector::from_column_slice(&unpack_estimate(labels.item(i)));
            total += pilot::nmse(&est, &truth).unwrap_or(f64::INFINITY);
        }
        done += idx.len();
    }
    total / n as f64
}

/// Classification error rate (1 − accuracy) on a set.
pub fn eval_error_rate(net: &mut NetState, inputs: &Tensor4, labels: &[usize]) -> f64 {
    let n = inputs.batch;
    let chunk = 256;
    let mut wrong = 0usize;
    let mut done = 0;
    while done < n {
        let idx: Vec<usize> = (done..(done + chunk).min(n)).collect();
        let out = net.forward(&inputs.gather_batch(&idx), Mode::Eval);
        for (bi, &i) in idx.iter().enumerate() {
            let row = out.item(bi);
            let pred = argmax_lowest_tie(row);
            if pred != labels[i] {
                wrong += 1;
            }
        }
        done += idx.len();
    }
    wrong as f64 / n as f64
}

/// Deterministic argmax: ties resolve to the lowest index.
pub fn argmax_lowest_tie(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn eval_metric(net: &mut NetState, eval: &EvalSet) -> f64 {
    match &eval.targets {
        Targets::Regression(t) => eval_nmse(net, &eval.inputs, t),
        Targets::Classes(c) => eval_error_rate(net, &eval.inputs, c),
    }
}

/// Per-epoch progress record.
#[derive(Debug, Clone)]
pub struct RoundReport {
    /// Server round index at the end of this epoch.
    pub round: usize,
    pub epoch: usize,
    /// Mean training loss of this epoch, per region (sorted by region id).
    pub region_losses: Vec<(usize, f64)>,
    /// Validation metric (NMSE or error rate) after this epoch.
    pub val_metric: f64,
    pub learning_rate: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Best-validation checkpoint.
    pub net: NetState,
    pub reports: Vec<RoundReport>,
    pub best_val_metric: f64,
    pub best_epoch: usize,
}

/// Training knobs shared by all runs.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub schedule: SgdSchedule,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch,
            schedule: SgdSchedule::standard(),
            seed,
        }
    }
}

/// Run synchronous rounds until every epoch is exhausted; checkpoints at the
/// best validation metric (the initial parameters count as epoch 0).
pub fn run_training(
    net: &mut NetState,
    clients: &mut [ClientState],
    cfg: &TrainConfig,
    val: &EvalSet,
) -> Result<TrainOutcome, TrainError> {
    if clients.is_empty() {
        return Err(TrainError::Invalid("no clients".into()));
    }
    if cfg.batch < 2 {
        return Err(TrainError::Invalid(
            "batch must be at least 2 for batch normalization".into(),
        ));
    }
    let rounds_per_epoch = clients
        .iter()
        .map(|c| c.n_samples() / cfg.batch)
        .min()
        .unwrap();
    if rounds_per_epoch == 0 {
        return Err(TrainError::Invalid(
            "smallest client shard holds fewer samples than one batch".into(),
        ));
    }

    let mut best = net.clone();
    let mut best_metric = eval_metric(net, val);
    let mut best_epoch = 0usize;
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut round = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at_epoch(epoch);
        let mut loss_by_region: Vec<(usize, f64, usize)> = Vec::new();
        for _ in 0..rounds_per_epoch {
            let contributions: Vec<Option<GradContribution>> = clients
                .iter_mut()
                .map(|c| {
                    let idx = c.next_batch(cfg.batch);
                    let x = c.inputs.gather_batch(&idx);
                    let t = c.targets.gather(&idx);
                    Some(local_gradient(net, &x, &t, c.weight))
                })
                .collect();
            // record per-region losses before they move into aggregate
            for (c, contrib) in clients.iter().zip(contributions.iter()) {
                let loss = contrib.as_ref().unwrap().loss;
                if !loss.is_finite() {
                    return Err(TrainError::Diverged { round, loss });
                }
                match loss_by_region.iter_mut().find(|e| e.0 == c.region_id) {
                    Some(e) => {
                        e.1 += loss;
                        e.2 += 1;
                    }
                    None => loss_by_region.push((c.region_id, loss, 1)),
                }
            }
            aggregate(net, contributions, lr, round)?;
            round += 1;
        }
        let val_metric = eval_metric(net, val);
        if val_metric < best_metric {
            best_metric = val_metric;
            best = net.clone();
            best_epoch = epoch + 1;
        }
        loss_by_region.sort_by_key(|e| e.0);
        reports.push(RoundReport {
            round,
            epoch,
            region_losses: loss_by_region
                .into_iter()
                .map(|(r, s, n)| (r, s / n as f64))
                .collect(),
            val_metric,
            learning_rate: lr,
        });
    }

    Ok(TrainOutcome {
        net: best,
        reports,
        best_val_metric: best_metric,
        best_epoch,
    })
}

/// Pack dataset rows into network inputs and regression targets.
pub fn regression_data(ds: &RegionDataset, idx: &[usize]) -> (Tensor4, Tensor4) {
    let obs: Vec<Vec<num_complex::Complex64>> =
        idx.iter().map(|&i| ds.samples[i].observation.clone()).collect();
    let labels: Vec<Vec<num_complex::Complex64>> =
        idx.iter().map(|&i| ds.samples[i].label.clone()).collect();
    (pack_observations(&obs), pack_labels(&labels))
}

/// Pack dataset rows into network inputs and region-id targets.
pub fn classification_data(ds: &RegionDataset, idx: &[usize]) -> (Tensor4, Vec<usize>) {
    let obs: Vec<Vec<num_complex::Complex64>> =
        idx.iter().map(|&i| ds.samples[i].observation.clone()).collect();
    let labels = idx.iter().map(|&i| ds.samples[i].region_id as usize).collect();
    (pack_observations(&obs), labels)
}

/// Single-region training: the whole shard behaves as one client.
pub fn train_sr(
    net: &mut NetState,
    train: (Tensor4, Tensor4),
    val: (Tensor4, Tensor4),
    region_id: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let mut clients = vec![ClientState::new(
        region_id,
        train.0,
        Targets::Regression(train.1),
        1,
        rng::stream(cfg.seed, 0xc1, 0, 0),
    )];
    let eval = EvalSet {
        inputs: val.0,
        targets: Targets::Regression(val.1),
    };
    run_training(net, &mut clients, cfg, &eval)
}

/// Federated training over per-user shards of the full dataset. Users are
/// enumerated in (region, user) order; each contributes one gradient per
/// round with unit weight.
pub fn train_fl(
    net: &mut NetState,
    ds: &RegionDataset,
    train_idx: &[usize],
    val: (Tensor4, Tensor4),
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let mut clients = Vec::new();
    let mut client_no = 0u64;
    for (t, &k_t) in ds.scenario.users_per_region.iter().enumerate() {
        for k in 0..k_t {
            let shard = ds.user_shard(t, k);
            let idx: Vec<usize> = train_idx
                .iter()
                .copied()
                .filter(|i| shard.contains(i))
                .collect();
            if idx.is_empty() {
                return Err(TrainError::Invalid(format!(
                    "user ({t},{k}) has no training samples"
                )));
            }
            let (x, y) = regression_data(ds, &idx);
            clients.push(ClientState::new(
                t,
                x,
                Targets::Regression(y),
                1,
                rng::stream(cfg.seed, 0xc1, client_no, 0),
            ));
            client_no += 1;
        }
    }
    let eval = EvalSet {
        inputs: val.0,
        targets: Targets::Regression(val.1),
    };
    run_training(net, &mut clients, cfg, &eval)
}
