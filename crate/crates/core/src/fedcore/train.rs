//! Local SGD, weighted federated averaging and evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{ClientDataset, Sample};
use super::model::{ModelParams, Objective};
use super::FedError;
use crate::domain::DeviceId;
use crate::seed::mix64;

/// Mean gradient over `batch` (indices into `samples`), summed in ascending
/// index order so the result does not depend on how the batch was drawn.
fn batch_gradient(
    obj: &dyn Objective,
    w: &[f64],
    samples: &[Sample],
    batch: &mut [usize],
    grad: &mut [f64],
) {
    batch.sort_unstable();
    grad.iter_mut().for_each(|g| *g = 0.0);
    for &i in batch.iter() {
        obj.accumulate_gradient(w, &samples[i], grad);
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
}

/// `E` epochs of minibatch SGD with batch size `B` on one client's shard.
///
/// The shard is reshuffled at the start of every epoch from
/// `shuffle_seed` and the epoch index; the last batch of an epoch may be
/// short.
pub fn client_update(
    obj: &dyn Objective,
    w: &ModelParams,
    data: &ClientDataset,
    batch_size: u32,
    epochs: u32,
    eta: f64,
    shuffle_seed: u64,
) -> Result<ModelParams, FedError> {
    if data.is_empty() {
        return Err(FedError::EmptyDataset(data.owner));
    }
    if batch_size == 0 || epochs == 0 || !(eta >= 0.0) || !eta.is_finite() {
        return Err(FedError::InvalidArgument(format!(
            "client_update needs B >= 1, E >= 1 and a finite eta >= 0 (got B={batch_size}, E={epochs}, eta={eta})"
        )));
    }
    if w.dimension() != obj.dim() {
        return Err(FedError::DimensionMismatch {
            expected: obj.dim(),
            found: w.dimension(),
        });
    }
    let samples = data.samples();
    let mut weights = w.weights.clone();
    let mut grad = vec![0.0; weights.len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(shuffle_seed ^ mix64(epoch as u64)));
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size as usize) {
            let mut batch = chunk.to_vec();
            batch_gradient(obj, &weights, samples, &mut batch, &mut grad);
            for (wi, gi) in weights.iter_mut().zip(&grad) {
                *wi -= eta * gi;
            }
        }
    }
    Ok(ModelParams::from(weights))
}

/// One full-batch gradient step on `samples` (the centralized reference).
pub fn full_batch_step(
    obj: &dyn Objective,
    w: &ModelParams,
    samples: &[Sample],
    eta: f64,
) -> ModelParams {
    let mut grad = vec![0.0; w.dimension()];
    let mut batch: Vec<usize> = (0..samples.len()).collect();
    batch_gradient(obj, &w.weights, samples, &mut batch, &mut grad);
    ModelParams::from(
        w.weights
            .iter()
            .zip(&grad)
            .map(|(wi, gi)| wi - eta * gi)
            .collect::<Vec<_>>(),
    )
}

/// Average of client models weighted by sample count, accumulated in
/// ascending device-id order.
pub fn aggregate(
    updates: &BTreeMap<DeviceId, ModelParams>,
    counts: &BTreeMap<DeviceId, usize>,
) -> Result<ModelParams, FedError> {
    let dim = updates
        .values()
        .next()
        .ok_or(FedError::EmptyUpdates)?
        .dimension();
    let mut total = 0usize;
    for (id, w) in updates {
        if w.dimension() != dim {
            return Err(FedError::DimensionMismatch {
                expected: dim,
                found: w.dimension(),
            });
        }
        match counts.get(id) {
            Some(&n) if n > 0 => total += n,
            _ => return Err(FedError::MissingCount(*id)),
        }
    }
    let n = total as f64;
    let mut out = vec![0.0; dim];
    for (id, w) in updates {
        let coef = counts[id] as f64 / n;
        for (o, wi) in out.iter_mut().zip(&w.weights) {
            *o += coef * wi;
        }
    }
    Ok(ModelParams::from(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean cross-entropy.
    pub loss: f64,
    /// Percentage of correct predictions, in [0, 100].
    pub accuracy: f64,
}

pub fn evaluate(
    obj: &dyn Objective,
    w: &ModelParams,
    test: &[Sample],
) -> Result<Evaluation, FedError> {
    if test.is_empty() {
        return Err(FedError::InvalidArgument("evaluation set is empty".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in test {
        loss += obj.loss(&w.weights, s);
        if obj.predict(&w.weights, &s.features) == s.label {
            correct += 1;
        }
    }
    Ok(Evaluation {
        loss: loss / test.len() as f64,
        accuracy: 100.0 * correct as f64 / test.len() as f64,
    })
}
