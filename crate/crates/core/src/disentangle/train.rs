//! Training loop: instance sampling, swap pairings, RMSprop with momentum.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad, DisentangleModel, LossBreakdown, Params, TrainingBatch, DEFAULT_INSTANCE_SIZE};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::set::FeatureSet;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Decay of the running squared-gradient average.
    pub smoothing: f64,
    pub eps: f64,
    pub seed: u64,
    /// Faces per training instance.
    pub instance_size: usize,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            lr: 1e-3,
            momentum: 0.9,
            smoothing: 0.99,
            eps: 1e-8,
            seed: 42,
            instance_size: DEFAULT_INSTANCE_SIZE,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.instance_size == 0 {
            return Err(Error::Parameter("batch size and instance size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Parameter(format!(
                "invalid optimizer settings lr={} momentum={} smoothing={}",
                self.lr, self.momentum, self.smoothing
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Parameter("eps must be positive".into()));
        }
        Ok(())
    }
}

/// RMSprop with heavy-ball momentum:
///
/// ```text
/// v   <- a v + (1 - a) g^2
/// buf <- m buf + g / (sqrt(v) + eps)
/// p   <- p - lr buf
/// ```
#[derive(Debug, Clone)]
pub struct RmsProp {
    lr: f64,
    momentum: f64,
    smoothing: f64,
    eps: f64,
    square_avg: Params,
    velocity: Params,
}

impl RmsProp {
    pub fn new(config: &TrainConfig, model: &DisentangleModel) -> Self {
        Self {
            lr: config.lr,
            momentum: config.momentum,
            smoothing: config.smoothing,
            eps: config.eps,
            square_avg: Params::zeros(model.dims()),
            velocity: Params::zeros(model.dims()),
        }
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        let (a, m, lr, eps) = (self.smoothing, self.momentum, self.lr, self.eps);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.square_avg.tensors_mut())
            .zip(self.velocity.tensors_mut());
        for ((((_, p), (_, g)), (_, v)), (_, buf)) in tensors {
            ndarray::Zip::from(p).and(g).and(v).and(buf).for_each(|p, &g, v, buf| {
                *v = a * *v + (1.0 - a) * g * g;
                *buf = m * *buf + g / (v.sqrt() + eps);
                *p -= lr * *buf;
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    /// Batch-mean losses evaluated before the update of this step.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean over steps of each epoch.
    pub epoch_losses: Vec<LossBreakdown>,
    pub steps: Vec<StepRecord>,
    /// Sorted dataset identities; position is the classifier index.
    pub classes: Vec<i64>,
}

/// Uniform random derangement of `0..n` (identity when `n == 1`).
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    if n < 2 {
        return perm;
    }
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Draws one instance of `size` rows per pool, without replacement when the
/// pool is large enough and with replacement otherwise. Each instance carries
/// its class index as identity.
pub fn sample_instances<R: Rng + ?Sized>(
    pools: &[(usize, ArrayView2<'_, f64>)],
    size: usize,
    rng: &mut R,
) -> Result<Vec<FeatureSet>> {
    pools
        .iter()
        .map(|(class, rows)| {
            let n = rows.nrows();
            let picks: Vec<usize> = if n >= size {
                rand::seq::index::sample(rng, n, size).into_vec()
            } else {
                (0..size).map(|_| rng.gen_range(0..n)).collect()
            };
            FeatureSet::new(rows.select(Axis(0), &picks), *class as i64, format!("class-{class}"))
        })
        .collect()
}

/// Pools every element of each identity and maps identities to class indices.
fn identity_pools(dataset: &[FeatureSet]) -> Result<(Vec<i64>, Vec<Array2<f64>>)> {
    let mut grouped: BTreeMap<i64, Vec<ArrayView2<'_, f64>>> = BTreeMap::new();
    for set in dataset {
        grouped.entry(set.identity()).or_default().push(set.features());
    }
    let mut classes = Vec::with_capacity(grouped.len());
    let mut pools = Vec::with_capacity(grouped.len());
    for (id, parts) in grouped {
        classes.push(id);
        pools.push(concatenate(Axis(0), &parts).map_err(|e| Error::Dimension(e.to_string()))?);
    }
    Ok((classes, pools))
}

/// Trains every parameter of `model` in place and returns the loss trace.
pub fn train(
    model: &mut DisentangleModel,
    dataset: &[FeatureSet],
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("empty training dataset".into()));
    }
    if let Some(bad) = dataset.iter().find(|s| s.dim() != model.dims().d) {
        return Err(Error::Dimension(format!(
            "set {:?} has dimension {}, model expects {}",
            bad.source_id(),
            bad.dim(),
            model.dims().d
        )));
    }
    let (classes, pools) = identity_pools(dataset)?;
    if classes.len() > model.dims().classes {
        return Err(Error::Dimension(format!(
            "dataset has {} identities but the classifier has {} outputs",
            classes.len(),
            model.dims().classes
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = RmsProp::new(config, model);
    let mut report = TrainReport {
        classes,
        ..TrainReport::default()
    };
    let mut order: Vec<usize> = (0..pools.len()).collect();
    let mut step = 0;

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = LossBreakdown::default();
        let mut epoch_steps = 0;
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|max| step >= max) {
                break;
            }
            let batch_pools: Vec<(usize, ArrayView2<'_, f64>)> = chunk.iter().map(|&c| (c, pools[c].view())).collect();
            let instances = sample_instances(&batch_pools, config.instance_size, &mut rng)?;
            let batch = TrainingBatch::new(instances)?;
            let pairings: Vec<Vec<usize>> = batch.instances.iter().map(|s| derangement(s.len(), &mut rng)).collect();
            let (loss, g) = grad::total_loss_and_grad(model, &batch, &pairings, exec)?;
            if let Some(term) = loss.first_non_finite() {
                return Err(Error::Diverged { step, term });
            }
            optimizer.step(model.params_mut(), &g);
            if !model.params().all_finite() {
                return Err(Error::Diverged {
                    step,
                    term: "parameters",
                });
            }
            report.steps.push(StepRecord { epoch, step, loss });
            epoch_sum.ce += loss.ce;
            epoch_sum.img += loss.img;
            epoch_sum.set += loss.set;
            epoch_steps += 1;
            step += 1;
        }
        if epoch_steps == 0 {
            break 'epochs;
        }
        let m = epoch_steps as f64;
        report.epoch_losses.push(LossBreakdown {
            ce: epoch_sum.ce / m,
            img: epoch_sum.img / m,
            set: epoch_sum.set / m,
        });
    }
    Ok(report)
}
