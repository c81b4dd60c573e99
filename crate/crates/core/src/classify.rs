//! Region classification and routed estimation: train the classifier on
//! labeled pilot observations, then send each test observation to the
//! single-region estimator the classifier picks. Misroutes flow through to
//! the wrong estimator; only the explicit oracle mode may consult the true
//! region id.

use crate::dataset::RegionDataset;
use crate::fed::{
    argmax_lowest_tie, classification_data, run_training, ClientState, EvalSet, Targets,
    TrainConfig, TrainError, TrainOutcome,
};
use crate::net::{pack_observations, unpack_estimate, NetState};
use crate::rng;
use crate::tensor::{Mode, Tensor4};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("no estimator for predicted region {0}")]
    MissingModel(usize),
    #[error("observation length {got} does not match the classifier input {want}")]
    BadObservation { got: usize, want: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Train the region classifier with cross-entropy on (observation,
/// region-id) pairs. Rejects single-class training sets.
pub fn train_rc(
    ds: &RegionDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    net: &mut NetState,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, RouteError> {
    let (x, labels) = classification_data(ds, train_idx);
    let first = labels.first().copied();
    if labels.iter().all(|&l| Some(l) == first) {
        return Err(RouteError::Train(TrainError::Invalid(
            "training labels contain a single class".into(),
        )));
    }
    let (vx, vlabels) = classification_data(ds, val_idx);
    let mut clients = vec![ClientState::new(
        0,
        x,
        Targets::Classes(labels),
        1,
        rng::stream(cfg.seed, 0xc1, 0, 0),
    )];
    let eval = EvalSet {
        inputs: vx,
        targets: Targets::Classes(vlabels),
    };
    Ok(run_training(net, &mut clients, cfg, &eval)?)
}

/// Classify one observation: predicted region plus raw logits. Ties resolve
/// to the lowest region index.
pub fn classify(rc: &mut NetState, observation: &[Complex64]) -> Result<(usize, Vec<f64>), RouteError> {
    let want = rc.spec.input.1;
    if observation.len() != want {
        return Err(RouteError::BadObservation {
            got: observation.len(),
            want,
        });
    }
    let x = pack_observations(&[observation.to_vec()]);
    let out = rc.forward(&x, Mode::Eval);
    let logits = out.item(0).to_vec();
    Ok((argmax_lowest_tie(&logits), logits))
}

/// Classify a batch of observations.
pub fn classify_batch(rc: &mut NetState, observations: &Tensor4) -> Vec<usize> {
    let out = rc.forward(observations, Mode::Eval);
    (0..out.batch).map(|b| argmax_lowest_tie(out.item(b))).collect()
}

/// Confusion bookkeeping of the classifier over a labeled set.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingReport {
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub per_region: Vec<f64>,
}

pub fn routing_report(rc: &mut NetState, ds: &RegionDataset, idx: &[usize]) -> RoutingReport {
    let t = ds.scenario.n_regions();
    let (x, labels) = classification_data(ds, idx);
    let preds = classify_batch(rc, &x);
    let mut confusion = vec![vec![0usize; t]; t];
    for (&truth, &pred) in labels.iter().zip(preds.iter()) {
        confusion[truth][pred.min(t - 1)] += 1;
    }
    let total: usize = idx.len();
    let trace: usize = (0..t).map(|i| confusion[i][i]).sum();
    let per_region = (0..t)
        .map(|i| {
            let row: usize = confusion[i].iter().sum();
            if row == 0 {
                f64::NAN
            } else {
                confusion[i][i] as f64 / row as f64
            }
        })
        .collect();
    RoutingReport {
        confusion,
        accuracy: trace as f64 / total as f64,
        per_region,
    }
}

/// Estimate one channel through the classifier-selected single-region model.
/// With a single model the routing is the identity and the classifier is not
/// consulted.
pub fn route_and_estimate(
    rc: &mut NetState,
    sr_models: &mut [NetState],
    observation: &[Complex64],
) -> Result<Vec<Complex64>, RouteError> {
    let region = if sr_models.len() == 1 {
        0
    } else {
        classify(rc, observation)?.0
    };
    let model = sr_models
        .get_mut(region)
        .ok_or(RouteError::MissingModel(region))?;
    let x = pack_observations(&[observation.to_vec()]);
    let out = model.forward(&x, Mode::Eval);
    Ok(unpack_estimate(out.item(0)))
}

/// Oracle-routing ablation: select the estimator by the true region id.
pub fn oracle_estimate(
    sr_models: &mut [NetState],
    true_region: usize,
    observation: &[Complex64],
) -> Result<Vec<Complex64>, RouteError> {
    let model = sr_models
        .get_mut(true_region)
        .ok_or(RouteError::MissingModel(true_region))?;
    let x = pack_observations(&[observation.to_vec()]);
    let out = model.forward(&x, Mode::Eval);
    Ok(unpack_estimate(out.item(0)))
}
