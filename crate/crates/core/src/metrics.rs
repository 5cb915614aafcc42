//! Evaluation: log-likelihood, next-event prediction quality, and the
//! exact-vs-sampled integration comparison.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cde::{self, SolverConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::heads;
use crate::model::{self, ModelParams};
use crate::rng;
use crate::train::{self, par_map, TrainConfig};

/// Next-event predictions at positions `j = 2..=N` of every sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    /// True types, 1-based.
    pub labels: Vec<usize>,
    pub predicted: Vec<usize>,
    pub tau_true: Vec<f64>,
    pub tau_predicted: Vec<f64>,
}

impl Predictions {
    fn extend(&mut self, other: Predictions) {
        self.labels.extend(other.labels);
        self.predicted.extend(other.predicted);
        self.tau_true.extend(other.tau_true);
        self.tau_predicted.extend(other.tau_predicted);
    }

    pub fn accuracy(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let hits = self.labels.iter().zip(&self.predicted).filter(|(a, b)| a == b).count();
        hits as f64 / self.labels.len() as f64
    }

    pub fn rmse(&self) -> f64 {
        if self.tau_true.is_empty() {
            return 0.0;
        }
        let sq: f64 = self
            .tau_true
            .iter()
            .zip(&self.tau_predicted)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (sq / self.tau_true.len() as f64).sqrt()
    }

    /// Classes that occur among the labels, ascending.
    pub fn classes_in_labels(&self) -> Vec<usize> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Classes with at least one correct prediction.
    pub fn classes_hit(&self) -> Vec<usize> {
        self.labels
            .iter()
            .zip(&self.predicted)
            .filter(|(a, b)| a == b)
            .map(|(a, _)| *a)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Unweighted mean of per-class F1 over the classes present in the labels.
    pub fn macro_f1(&self) -> f64 {
        let classes = self.classes_in_labels();
        if classes.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for &c in &classes {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (&y, &p) in self.labels.iter().zip(&self.predicted) {
                match (y == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            total += 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        }
        total / classes.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequences: usize,
    pub events: usize,
    pub log_likelihood: f64,
    pub log_likelihood_per_event: f64,
    pub accuracy: f64,
    pub rmse: f64,
    pub macro_f1: f64,
    pub classes_in_test: usize,
    pub classes_hit: usize,
    pub wall_clock_seconds: f64,
    pub peak_memory_bytes: usize,
}

impl MetricsReport {
    pub fn from_parts(
        log_likelihood: f64,
        sequences: usize,
        events: usize,
        predictions: &Predictions,
        wall_clock_seconds: f64,
        peak_memory_bytes: usize,
    ) -> Self {
        MetricsReport {
            sequences,
            events,
            log_likelihood,
            log_likelihood_per_event: log_likelihood / events.max(1) as f64,
            accuracy: predictions.accuracy(),
            rmse: predictions.rmse(),
            macro_f1: predictions.macro_f1(),
            classes_in_test: predictions.classes_in_labels().len(),
            classes_hit: predictions.classes_hit().len(),
            wall_clock_seconds,
            peak_memory_bytes,
        }
    }

    /// Every numeric field by name, in declaration order.
    pub fn named_values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("sequences", self.sequences as f64),
            ("events", self.events as f64),
            ("log_likelihood", self.log_likelihood),
            ("log_likelihood_per_event", self.log_likelihood_per_event),
            ("accuracy", self.accuracy),
            ("rmse", self.rmse),
            ("macro_f1", self.macro_f1),
            ("classes_in_test", self.classes_in_test as f64),
            ("classes_hit", self.classes_hit as f64),
            ("wall_clock_seconds", self.wall_clock_seconds),
            ("peak_memory_bytes", self.peak_memory_bytes as f64),
        ]
    }

    pub fn to_csv(&self) -> String {
        let v = self.named_values();
        let header: Vec<&str> = v.iter().map(|(n, _)| *n).collect();
        let row: Vec<String> = v.iter().map(|(_, x)| x.to_string()).collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

/// Per-sequence read-out shared by [`evaluate`] and [`ablate_integration`].
struct SequenceResult {
    log_prob: f64,
    event_log_term: f64,
    grid: Vec<(f64, f64)>,
    tape_bytes: usize,
    predictions: Predictions,
}

fn check_types(params: &ModelParams, data: &Dataset) -> Result<()> {
    if params.config.num_types != data.num_types {
        return Err(Error::Data(format!(
            "model has {} event types but the dataset has {}",
            params.config.num_types, data.num_types
        )));
    }
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    Ok(())
}

fn run_all(params: &ModelParams, data: &Dataset, solver: &SolverConfig, workers: usize) -> Result<Vec<SequenceResult>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    par_map(&idx, workers, |&i| {
        let seq = &data.sequences[i];
        let ev = model::evaluate_sequence(params, seq, solver).map_err(|e| e.context(format!("sequence {i}")))?;
        let mut p = Predictions::default();
        let events = seq.events();
        for j in 1..events.len() {
            let h = &ev.knot_states[j - 1];
            p.labels.push(events[j].k);
            p.predicted.push(heads::predict_type(h, params.type_weight()).1);
            p.tau_true.push(events[j].t - events[j - 1].t);
            p.tau_predicted.push(heads::predict_time(h, params.time_weight(), events[j - 1].t).0);
        }
        Ok(SequenceResult {
            log_prob: ev.log_prob,
            event_log_term: ev.event_log_term,
            grid: ev.intensity_grid,
            tape_bytes: ev.tape_bytes,
            predictions: p,
        })
    })
    .into_iter()
    .collect()
}

/// Evaluates `params` on `data` with exact integration of the non-event term.
pub fn evaluate(params: &ModelParams, data: &Dataset, solver: &SolverConfig, workers: usize) -> Result<MetricsReport> {
    check_types(params, data)?;
    let start = Instant::now();
    let results = run_all(params, data, solver, workers)?;
    let mut preds = Predictions::default();
    let mut ll = 0.0;
    let mut peak_tape = 0;
    for r in results {
        ll += r.log_prob;
        peak_tape = peak_tape.max(r.tape_bytes);
        preds.extend(r.predictions);
    }
    Ok(MetricsReport::from_parts(
        ll,
        data.len(),
        data.num_events(),
        &preds,
        start.elapsed().as_secs_f64(),
        peak_tape * workers.max(1) + params.num_scalars() * 8,
    ))
}

/// Log-likelihood under exact integration and under Monte Carlo estimation
/// of the non-event term, for the same model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub n_samples: usize,
    pub events: usize,
    pub ode_log_likelihood: f64,
    pub mc_log_likelihood: f64,
    /// `ode - mc`.
    pub gap: f64,
    /// `|ode - mc| / |ode|`.
    pub relative_gap: f64,
    pub ode_log_likelihood_per_event: f64,
    pub mc_log_likelihood_per_event: f64,
    /// Sum of the exact non-event integrals.
    pub ode_integral: f64,
    pub mc_integral: f64,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        format!(
            "n_samples,events,ode_log_likelihood,mc_log_likelihood,gap,relative_gap,ode_log_likelihood_per_event,mc_log_likelihood_per_event,ode_integral,mc_integral\n{},{},{},{},{},{},{},{},{},{}\n",
            self.n_samples,
            self.events,
            self.ode_log_likelihood,
            self.mc_log_likelihood,
            self.gap,
            self.relative_gap,
            self.ode_log_likelihood_per_event,
            self.mc_log_likelihood_per_event,
            self.ode_integral,
            self.mc_integral
        )
    }
}

/// Sequence `i` draws its samples from the stream `(seed, i)`.
pub fn ablate_integration(
    params: &ModelParams,
    data: &Dataset,
    solver: &SolverConfig,
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<AblationReport> {
    check_types(params, data)?;
    let results = run_all(params, data, solver, workers)?;
    let (mut ode, mut mc, mut ode_int, mut mc_int) = (0.0, 0.0, 0.0, 0.0);
    for (i, r) in results.iter().enumerate() {
        let est = cde::mc_nonevent(&r.grid, n_samples, rng::derive_seed(seed, i as u64))?;
        ode += r.log_prob;
        mc += r.event_log_term - est;
        ode_int += r.event_log_term - r.log_prob;
        mc_int += est;
    }
    let events = data.num_events();
    Ok(AblationReport {
        n_samples,
        events,
        ode_log_likelihood: ode,
        mc_log_likelihood: mc,
        gap: ode - mc,
        relative_gap: if ode == mc { 0.0 } else { (ode - mc).abs() / ode.abs() },
        ode_log_likelihood_per_event: ode / events as f64,
        mc_log_likelihood_per_event: mc / events as f64,
        ode_integral: ode_int,
        mc_integral: mc_int,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seeds: Vec<u64>,
    pub trials: Vec<MetricsReport>,
    pub summary: Vec<MetricSummary>,
}

pub fn summarize(trials: &[MetricsReport]) -> Vec<MetricSummary> {
    let Some(first) = trials.first() else {
        return Vec::new();
    };
    let n = trials.len() as f64;
    first
        .named_values()
        .iter()
        .enumerate()
        .map(|(f, (name, _))| {
            let xs: Vec<f64> = trials.iter().map(|t| t.named_values()[f].1).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let std = if trials.len() < 2 {
                0.0
            } else {
                (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            MetricSummary {
                name: name.to_string(),
                mean,
                std,
            }
        })
        .collect()
}

/// Trains and evaluates with seeds `config.seed .. config.seed + n_trials`.
pub fn repeat_trials(train_data: &Dataset, test_data: &Dataset, config: &TrainConfig, n_trials: usize) -> Result<TrialSummary> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n_trials as u64).map(|i| config.seed.wrapping_add(i)).collect();
    repeat_with_seeds(train_data, test_data, config, &seeds)
}

pub fn repeat_with_seeds(train_data: &Dataset, test_data: &Dataset, config: &TrainConfig, seeds: &[u64]) -> Result<TrialSummary> {
    let mut trials = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let c = TrainConfig {
            seed,
            ..config.clone()
        };
        let run = || -> Result<MetricsReport> {
            let out = train::train(train_data, &c)?;
            if let train::StopReason::NonFinite { detail, .. } = &out.stop {
                return Err(Error::NonFinite(detail.clone()));
            }
            evaluate(&out.params, test_data, &c.solver()?, c.workers)
        };
        trials.push(run().map_err(|e| e.context(format!("trial {i} (seed {seed})")))?);
    }
    Ok(TrialSummary {
        seeds: seeds.to_vec(),
        summary: summarize(&trials),
        trials,
    })
}
