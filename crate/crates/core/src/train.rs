//! Mini-batch training with Adam and epoch-level early stopping.

use serde::{Deserialize, Serialize};

use crate::cde::SolverConfig;
use crate::data::{epoch_batches, Dataset};
use crate::error::{Error, Result};
use crate::hawkes::EventTerm;
use crate::heads::LossWeights;
use crate::model::{self, LossValues, ModelConfig, ModelParams};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

fn default_weight_decay() -> f64 {
    1e-5
}

fn default_patience() -> usize {
    5
}

fn default_substeps() -> usize {
    8
}

fn default_workers() -> usize {
    1
}

/// Training hyperparameters. The event-type count comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Maximum number of epochs.
    pub max_iter: usize,
    /// Early-stopping patience `δ`, in epochs.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// `α1`, weight of the negative log-likelihood.
    pub likelihood_weight: f64,
    /// `α2`, weight of the squared inter-arrival error.
    pub time_weight: f64,
    pub dim_z: usize,
    pub dim_h: usize,
    pub layers: usize,
    pub hidden: usize,
    #[serde(default = "default_substeps")]
    pub substeps_per_segment: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub event_term: EventTerm,
    /// Threads used for per-sequence gradients. Results do not depend on it.
    #[serde(default = "default_workers", skip_serializing)]
    pub workers: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.likelihood_weight > 0.0) || !(self.time_weight > 0.0) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        SolverConfig::new(self.substeps_per_segment)?;
        Ok(())
    }

    pub fn model_config(&self, num_types: usize) -> ModelConfig {
        ModelConfig {
            num_types,
            dim_z: self.dim_z,
            dim_h: self.dim_h,
            layers: self.layers,
            hidden: self.hidden,
            event_term: self.event_term,
        }
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        SolverConfig::new(self.substeps_per_segment)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            likelihood: self.likelihood_weight,
            time: self.time_weight,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Stops once the monitored value has failed to improve on its best for
/// `patience` consecutive checks.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    bad_checks: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            bad_checks: 0,
        }
    }

    /// Records one check; returns true when training should stop.
    pub fn observe(&mut self, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.bad_checks = 0;
        } else {
            self.bad_checks += 1;
        }
        self.bad_checks >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn bad_checks(&self) -> usize {
        self.bad_checks
    }
}

/// One row of the training curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss per sequence.
    pub loss: f64,
    pub neg_log_prob: f64,
    pub type_loss: f64,
    pub time_loss: f64,
    /// Training log-likelihood divided by the number of events.
    pub log_likelihood_per_event: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str =
        "epoch,loss,neg_log_prob,type_loss,time_loss,log_likelihood_per_event";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.loss,
            self.neg_log_prob,
            self.type_loss,
            self.time_loss,
            self.log_likelihood_per_event
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    MaxIter,
    EarlyStopped { epoch: usize },
    /// Parameters are the last finite ones, from before the failing update.
    NonFinite { epoch: usize, detail: String },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub curve: Vec<EpochRecord>,
    pub stop: StopReason,
    /// Largest tape seen, times the number of workers, plus parameters and
    /// optimizer moments.
    pub peak_memory_bytes: usize,
}

/// Maps `f` over `items` on up to `workers` threads, keeping input order.
pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Trains a fresh model on `data`.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let params = ModelParams::init(config.model_config(data.num_types), config.seed)?;
    train_from(data, config, params)
}

/// Continues training from `params`.
pub fn train_from(data: &Dataset, config: &TrainConfig, mut params: ModelParams) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if params.config.num_types != data.num_types {
        return Err(Error::Data(format!(
            "model has {} event types, training data has {}",
            params.config.num_types, data.num_types
        )));
    }
    let solver = config.solver()?;
    let weights = config.loss_weights();
    let mut adam = Adam::new(config.adam(), params.tensors());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut curve = Vec::new();
    let param_bytes = params.num_scalars() * 8 * 3;
    let mut peak_tape = 0usize;
    let events = data.num_events() as f64;

    for epoch in 0..config.max_iter {
        let mut sums = LossValues::default();
        for idx in epoch_batches(data.len(), config.batch_size, config.seed, epoch as u64)? {
            let results = par_map(&idx, config.workers, |&i| {
                model::loss_and_gradients(&params, &data.sequences[i], &solver, weights)
                    .map_err(|e| e.context(format!("sequence {i}")))
            });
            let mut grads: Vec<Tensor> = params.tensors().iter().map(Tensor::zeros_like).collect();
            let mut batch_sums = LossValues::default();
            for r in results {
                let (values, g, bytes) = match r {
                    Ok(v) => v,
                    Err(Error::NonFinite(detail)) => {
                        return Ok(non_finite(params, curve, epoch, detail, peak_tape, param_bytes, config));
                    }
                    Err(e) => return Err(e),
                };
                peak_tape = peak_tape.max(bytes);
                batch_sums.add(&values);
                for (acc, g) in grads.iter_mut().zip(&g) {
                    acc.add_scaled(g, 1.0)?;
                }
            }
            let inv = 1.0 / idx.len() as f64;
            for g in &mut grads {
                *g = g.map(|v| v * inv);
            }
            if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
                let detail = format!("in the gradient of {}", params.names()[bad]);
                return Ok(non_finite(params, curve, epoch, detail, peak_tape, param_bytes, config));
            }
            let previous = params.clone();
            adam.step(params.tensors_mut(), &grads)?;
            if !params.is_finite() {
                return Ok(non_finite(
                    previous,
                    curve,
                    epoch,
                    "in the parameters after an update".into(),
                    peak_tape,
                    param_bytes,
                    config,
                ));
            }
            sums.add(&batch_sums);
        }
        let n = data.len() as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: sums.total / n,
            neg_log_prob: sums.neg_log_prob / n,
            type_loss: sums.type_loss / n,
            time_loss: sums.time_loss / n,
            log_likelihood_per_event: -sums.neg_log_prob / events,
        };
        curve.push(record);
        if stopper.observe(record.loss) {
            return Ok(TrainOutcome {
                params,
                curve,
                stop: StopReason::EarlyStopped { epoch: epoch + 1 },
                peak_memory_bytes: peak_tape * config.workers + param_bytes,
            });
        }
    }
    Ok(TrainOutcome {
        params,
        curve,
        stop: StopReason::MaxIter,
        peak_memory_bytes: peak_tape * config.workers + param_bytes,
    })
}

fn non_finite(
    params: ModelParams,
    curve: Vec<EpochRecord>,
    epoch: usize,
    detail: String,
    peak_tape: usize,
    param_bytes: usize,
    config: &TrainConfig,
) -> TrainOutcome {
    TrainOutcome {
        params,
        curve,
        stop: StopReason::NonFinite {
            epoch: epoch + 1,
            detail,
        },
        peak_memory_bytes: peak_tape * config.workers + param_bytes,
    }
}
