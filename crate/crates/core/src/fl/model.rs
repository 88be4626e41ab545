//! Multinomial logistic regression trained with minibatch SGD.

use rand::seq::index;
use rand::Rng;

use super::{Dataset, FlError};
use crate::ids::WorkerId;
use crate::seed::{self, tag};

/// Weights (`n_classes x n_features`, row-major) and per-class bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    n_classes: usize,
    n_features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ModelState {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        Self {
            n_classes,
            n_features,
            weights: vec![0.0; n_classes * n_features],
            bias: vec![0.0; n_classes],
        }
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random(n_classes: usize, n_features: usize, scale: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[tag::INIT]);
        let mut m = Self::zeros(n_classes, n_features);
        for p in m.weights.iter_mut().chain(m.bias.iter_mut()) {
            *p = rng.random_range(-scale..=scale);
        }
        m
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn same_shape(&self, other: &ModelState) -> bool {
        self.n_classes == other.n_classes && self.n_features == other.n_features
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelState, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += scale * b;
        }
    }

    pub fn applied(&self, delta: &ModelState) -> ModelState {
        let mut m = self.clone();
        m.add_scaled(delta, 1.0);
        m
    }

    pub fn difference(&self, base: &ModelState) -> ModelState {
        let mut d = self.clone();
        d.add_scaled(base, -1.0);
        d
    }

    pub fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weights[c * self.n_features..(c + 1) * self.n_features];
            *o = self.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Argmax class; ties resolve to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut logits = vec![0.0; self.n_classes];
        self.logits_into(x, &mut logits);
        argmax(&logits)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Mean softmax cross-entropy over `rows` and its gradient.
pub fn loss_and_grad(model: &ModelState, data: &Dataset, rows: &[usize]) -> (f64, ModelState) {
    let mut grad = ModelState::zeros(model.n_classes, model.n_features);
    let mut p = vec![0.0; model.n_classes];
    let mut loss = 0.0;
    let scale = 1.0 / rows.len().max(1) as f64;
    for &i in rows {
        let x = data.row(i);
        let y = data.labels()[i];
        model.logits_into(x, &mut p);
        softmax_in_place(&mut p);
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        p[y] -= 1.0;
        for (c, &g) in p.iter().enumerate() {
            let g = g * scale;
            grad.bias[c] += g;
            let row = &mut grad.weights[c * model.n_features..(c + 1) * model.n_features];
            for (w, v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
    }
    (loss * scale, grad)
}

/// Fraction of argmax-correct predictions.
pub fn evaluate(model: &ModelState, test: &Dataset) -> Result<f64, FlError> {
    if test.is_empty() {
        return Err(FlError::EmptyDataset);
    }
    let mut logits = vec![0.0; model.n_classes];
    let correct = (0..test.len())
        .filter(|&i| {
            model.logits_into(test.row(i), &mut logits);
            argmax(&logits) == test.labels()[i]
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdParams {
    pub batch_size: usize,
    pub n_batches: usize,
    pub lr: f64,
    /// Simulated milliseconds per example of local data covered.
    pub compute_rate: f64,
    /// Share of the shard the worker trains on (below 1 for lazy workers).
    pub coverage: f64,
}

/// What a worker uploads after a round of local training.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    pub worker_id: WorkerId,
    pub delta: ModelState,
    pub claimed_elapsed: f64,
    pub claimed_data_size: usize,
}

/// Runs `n_batches` SGD steps from `model` on the worker's shard.
///
/// Minibatches are drawn without replacement from the first
/// `ceil(coverage * |shard|)` examples. The simulated clock charges
/// `compute_rate` per example of that covered pool, while the claimed data size
/// is always the full shard, so an under-training worker reports an elapsed
/// time short of what its data size implies.
pub fn local_sgd(
    worker_id: WorkerId,
    model: &ModelState,
    shard: &Dataset,
    params: &SgdParams,
    seed: u64,
) -> Result<LocalUpdate, FlError> {
    if shard.is_empty() {
        return Err(FlError::EmptyShard);
    }
    if shard.n_features() != model.n_features || shard.n_classes() > model.n_classes {
        return Err(FlError::ShapeMismatch(format!(
            "shard {}x{} vs model {}x{}",
            shard.n_classes(),
            shard.n_features(),
            model.n_classes,
            model.n_features
        )));
    }
    let pool = ((params.coverage.clamp(0.0, 1.0) * shard.len() as f64).ceil() as usize)
        .clamp(1, shard.len());
    let batch = params.batch_size.clamp(1, pool);
    let mut rng = seed::rng(seed, &[tag::SGD, worker_id.0 as u64]);
    let mut current = model.clone();
    for _ in 0..params.n_batches {
        let rows = index::sample(&mut rng, pool, batch).into_vec();
        let (_, grad) = loss_and_grad(&current, shard, &rows);
        current.add_scaled(&grad, -params.lr);
    }
    Ok(LocalUpdate {
        worker_id,
        delta: current.difference(model),
        claimed_elapsed: params.compute_rate * pool as f64,
        claimed_data_size: shard.len(),
    })
}

/// `global + mean(deltas)`. Deltas are summed in worker-id order so the result
/// does not depend on the order of `accepted`.
pub fn aggregate(global: &ModelState, accepted: &[LocalUpdate]) -> Result<ModelState, FlError> {
    if accepted.is_empty() {
        return Err(FlError::EmptyAccepted);
    }
    if let Some(u) = accepted.iter().find(|u| !u.delta.same_shape(global)) {
        return Err(FlError::ShapeMismatch(format!(
            "update from {} does not match the global model",
            u.worker_id
        )));
    }
    let mut ordered: Vec<&LocalUpdate> = accepted.iter().collect();
    ordered.sort_by_key(|u| u.worker_id);
    let mut sum = ModelState::zeros(global.n_classes, global.n_features);
    for u in ordered {
        sum.add_scaled(&u.delta, 1.0);
    }
    let mut next = global.clone();
    next.add_scaled(&sum, 1.0 / accepted.len() as f64);
    if !next.is_finite() {
        return Err(FlError::ShapeMismatch(
            "aggregate produced non-finite parameters".into(),
        ));
    }
    Ok(next)
}
