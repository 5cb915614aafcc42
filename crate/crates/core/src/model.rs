//! Model parameters and the per-sequence forward pass.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::cde::{self, SolverConfig, StagePoint, Trajectory, VectorField};
use crate::data::EventSequence;
use crate::embedding;
use crate::error::{Error, Result};
use crate::heads::{self, LossTerms, LossWeights};
use crate::hawkes::EventTerm;
use crate::path::GraphPath;
use crate::rng;
use crate::tensor::Tensor;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of event types `K`.
    pub num_types: usize,
    /// Embedding width; must be even.
    pub dim_z: usize,
    pub dim_h: usize,
    /// Number of fully connected layers `M` in the vector field.
    pub layers: usize,
    /// Width of the vector field's hidden layers.
    pub hidden: usize,
    #[serde(default)]
    pub event_term: EventTerm,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_types == 0 {
            return Err(Error::Config("num_types must be at least 1".into()));
        }
        if self.dim_z < 2 || !self.dim_z.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "dim_z must be a positive even number, got {}",
                self.dim_z
            )));
        }
        if self.dim_h == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config("dim_h, layers and hidden must be positive".into()));
        }
        Ok(())
    }

    /// Path channels: the embedding plus the time channel.
    pub fn channels(&self) -> usize {
        self.dim_z + 1
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (k, dz, dh) = (self.num_types, self.dim_z, self.dim_h);
        let mut s = vec![
            ("embedding".to_string(), vec![k, dz]),
            ("init.weight".to_string(), vec![dh, dz + 1]),
            ("init.bias".to_string(), vec![dh]),
        ];
        for m in 0..self.layers {
            let fan_in = if m == 0 { dh } else { self.hidden };
            let out = if m + 1 == self.layers {
                dh * self.channels()
            } else {
                self.hidden
            };
            s.push((format!("field.{m}.weight"), vec![out, fan_in]));
            s.push((format!("field.{m}.bias"), vec![out]));
        }
        s.push(("intensity.weight".to_string(), vec![k, dh]));
        s.push(("intensity.log_beta".to_string(), vec![k]));
        s.push(("type.weight".to_string(), vec![k, dh]));
        s.push(("time.weight".to_string(), vec![1, dh]));
        s
    }
}

/// Every trainable tensor, in a fixed order given by [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

const EMBEDDING: usize = 0;
const INIT_W: usize = 1;
const INIT_B: usize = 2;
const FIELD: usize = 3;

impl ModelParams {
    /// Gaussian initialisation: embedding std `1/sqrt(dim_z)`, weights std
    /// `1/sqrt(fan_in)` with the last field layer scaled by 0.1, zero biases
    /// and `β_k = 1`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, 0x1417);
        let shapes = config.shapes();
        let last_field = FIELD + 2 * (config.layers - 1);
        let mut tensors = Vec::with_capacity(shapes.len());
        for (i, (name, shape)) in shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let std = if name.ends_with("bias") || name.ends_with("log_beta") {
                0.0
            } else if i == EMBEDDING {
                1.0 / (config.dim_z as f64).sqrt()
            } else {
                let s = 1.0 / (shape[1] as f64).sqrt();
                if i == last_field {
                    0.1 * s
                } else {
                    s
                }
            };
            let data = if std == 0.0 {
                vec![0.0; n]
            } else {
                let dist = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| dist.sample(&mut r)).collect()
            };
            tensors.push(Tensor::new(shape.clone(), data)?);
        }
        Ok(ModelParams {
            config,
            names: shapes.into_iter().map(|(n, _)| n).collect(),
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors; names and shapes must match the config.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if shapes.len() != named.len() {
            return Err(Error::Data(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                named.len()
            )));
        }
        for ((name, shape), (n, t)) in shapes.iter().zip(&named) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::Data(format!(
                    "tensor {n} {:?} does not match expected {name} {:?}",
                    t.shape(),
                    shape
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(ModelParams {
            config,
            names,
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    fn tail(&self, back: usize) -> &Tensor {
        &self.tensors[self.tensors.len() - back]
    }

    pub fn embedding(&self) -> &Tensor {
        &self.tensors[EMBEDDING]
    }

    pub fn intensity_weight(&self) -> &Tensor {
        self.tail(4)
    }

    pub fn log_beta(&self) -> &Tensor {
        self.tail(3)
    }

    pub fn type_weight(&self) -> &Tensor {
        self.tail(2)
    }

    pub fn time_weight(&self) -> &Tensor {
        self.tail(1)
    }

    /// Flat view of every scalar, in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut i = index;
        for t in &mut self.tensors {
            if i < t.len() {
                t.data_mut()[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("flat index {index} out of range");
    }

    /// Records the parameters on `graph` as gradient-carrying leaves.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        let vars: Vec<Var> = self.tensors.iter().map(|t| graph.param(t.clone())).collect();
        let c = &self.config;
        let layers = (0..c.layers)
            .map(|m| (vars[FIELD + 2 * m], vars[FIELD + 2 * m + 1]))
            .collect();
        let n = vars.len();
        BoundParams {
            embedding: vars[EMBEDDING],
            init_weight: vars[INIT_W],
            init_bias: vars[INIT_B],
            field: VectorField {
                layers,
                dim_h: c.dim_h,
                channels: c.channels(),
            },
            intensity_weight: vars[n - 4],
            log_beta: vars[n - 3],
            type_weight: vars[n - 2],
            time_weight: vars[n - 1],
            event_term: c.event_term,
            all: vars,
        }
    }
}

/// Parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub embedding: Var,
    pub init_weight: Var,
    pub init_bias: Var,
    pub field: VectorField,
    pub intensity_weight: Var,
    pub log_beta: Var,
    pub type_weight: Var,
    pub time_weight: Var,
    pub event_term: EventTerm,
    /// Same order as [`ModelParams::tensors`].
    pub all: Vec<Var>,
}

/// Everything the forward pass produces for one sequence.
#[derive(Clone, Debug)]
pub struct SequenceForward {
    pub trajectory: Trajectory,
    /// Intensity entering the event term of the log-probability, per event.
    pub event_intensities: Vec<Var>,
    pub log_prob: Var,
    pub losses: LossTerms,
}

/// Embeds `seq`, solves the CDE and assembles the losses.
pub fn forward(
    g: &mut Graph,
    p: &BoundParams,
    seq: &EventSequence,
    solver: &SolverConfig,
    weights: LossWeights,
) -> Result<SequenceForward> {
    if seq.is_empty() {
        return Err(Error::Data("cannot run the model on an empty sequence".into()));
    }
    let embedded = embedding::embed_sequence_on(g, p.embedding, seq)?;
    let path = GraphPath::build(g, &embedded)?;
    let initial = cde::init_state(g, p.init_weight, p.init_bias, path.knots[0])?;
    let (w, lb) = (p.intensity_weight, p.log_beta);
    let mut lam = |g: &mut Graph, h: Var, _at: StagePoint| -> Result<Var> {
        Ok(heads::intensity(g, h, w, lb)?.1)
    };
    let trajectory = cde::integrate(g, &path, initial, &p.field, &mut lam, solver)?;

    let mut event_intensities = Vec::with_capacity(seq.len());
    for (h, e) in trajectory.knot_states.iter().zip(seq.events()) {
        let (per, total) = heads::intensity(g, *h, w, lb)?;
        event_intensities.push(match p.event_term {
            EventTerm::Total => total,
            EventTerm::Marked => g.pick(per, e.type_index())?,
        });
    }
    let log_prob = heads::sequence_log_prob_on(g, &event_intensities, trajectory.integral())?;
    let types: Vec<usize> = seq.events().iter().map(|e| e.k).collect();
    let times: Vec<f64> = seq.times().collect();
    let losses = heads::losses(
        g,
        &trajectory.knot_states,
        &types,
        &times,
        log_prob,
        p.type_weight,
        p.time_weight,
        weights,
    )?;
    Ok(SequenceForward {
        trajectory,
        event_intensities,
        log_prob,
        losses,
    })
}

/// Scalar loss values for one sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub neg_log_prob: f64,
    pub type_loss: f64,
    pub time_loss: f64,
}

impl LossValues {
    pub fn add(&mut self, other: &LossValues) {
        self.total += other.total;
        self.neg_log_prob += other.neg_log_prob;
        self.type_loss += other.type_loss;
        self.time_loss += other.time_loss;
    }

    fn read(g: &Graph, t: &LossTerms) -> Self {
        LossValues {
            total: g.scalar(t.total),
            neg_log_prob: g.scalar(t.neg_log_prob),
            type_loss: g.scalar(t.type_loss),
            time_loss: g.scalar(t.time_loss),
        }
    }
}

/// Loss values and gradients for one sequence, with the gradients aligned to
/// [`ModelParams::tensors`].
pub fn loss_and_gradients(
    params: &ModelParams,
    seq: &EventSequence,
    solver: &SolverConfig,
    weights: LossWeights,
) -> Result<(LossValues, Vec<Tensor>, usize)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let fwd = forward(&mut g, &bound, seq, solver, weights)?;
    let values = LossValues::read(&g, &fwd.losses);
    if !values.total.is_finite() {
        return Err(Error::NonFinite(format!("in the loss ({values:?})")));
    }
    let grads = g.backward(fwd.losses.total)?;
    let bytes = g.value_bytes();
    Ok((
        values,
        bound.all.iter().map(|v| grads.wrt(&g, *v)).collect(),
        bytes,
    ))
}

/// Forward-only loss values.
pub fn loss_values(
    params: &ModelParams,
    seq: &EventSequence,
    solver: &SolverConfig,
    weights: LossWeights,
) -> Result<LossValues> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let fwd = forward(&mut g, &bound, seq, solver, weights)?;
    Ok(LossValues::read(&g, &fwd.losses))
}

/// Read-out of a solved sequence, detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceEval {
    pub log_prob: f64,
    /// Exact-integration non-event term `a(t_N)`.
    pub integral: f64,
    pub event_log_term: f64,
    pub knot_states: Vec<Vec<f64>>,
    /// `(t, λ*(t))` at every substep boundary.
    pub intensity_grid: Vec<(f64, f64)>,
    /// Bytes held by tape values at the end of the solve.
    pub tape_bytes: usize,
}

pub fn evaluate_sequence(params: &ModelParams, seq: &EventSequence, solver: &SolverConfig) -> Result<SequenceEval> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let fwd = forward(
        &mut g,
        &bound,
        seq,
        solver,
        LossWeights {
            likelihood: 1.0,
            time: 1.0,
        },
    )?;
    let integral = g.scalar(fwd.trajectory.integral());
    let log_prob = g.scalar(fwd.log_prob);
    let (w, lb) = (params.intensity_weight(), params.log_beta());
    let intensity_grid = fwd
        .trajectory
        .dense
        .iter()
        .map(|(t, h)| (*t, heads::intensity_values(g.value(*h).data(), w, lb).iter().sum()))
        .collect();
    Ok(SequenceEval {
        log_prob,
        integral,
        event_log_term: log_prob + integral,
        knot_states: fwd
            .trajectory
            .knot_states
            .iter()
            .map(|h| g.value(*h).data().to_vec())
            .collect(),
        intensity_grid,
        tape_bytes: g.value_bytes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Event;

    fn small_config() -> ModelConfig {
        ModelConfig {
            num_types: 3,
            dim_z: 4,
            dim_h: 5,
            layers: 3,
            hidden: 6,
            event_term: EventTerm::Total,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.dim_z = 5;
        assert!(ModelParams::init(c, 0).is_err());
        let mut c = small_config();
        c.layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn layout_and_determinism() {
        let p = ModelParams::init(small_config(), 4).unwrap();
        assert_eq!(p.names()[0], "embedding");
        assert_eq!(p.names().last().unwrap(), "time.weight");
        assert_eq!(p.tensors()[FIELD + 4].shape(), &[5 * 5, 6]);
        assert_eq!(p.log_beta().data(), &[0.0; 3]);
        assert_eq!(p, ModelParams::init(small_config(), 4).unwrap());
        assert_ne!(p, ModelParams::init(small_config(), 5).unwrap());
        let named: Vec<(String, Tensor)> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect();
        assert_eq!(ModelParams::from_named(small_config(), named).unwrap(), p);
    }

    #[test]
    fn single_event_has_zero_integral() {
        let p = ModelParams::init(small_config(), 1).unwrap();
        let seq = EventSequence::new(vec![Event::new(2, 0.7)]).unwrap();
        let ev = evaluate_sequence(&p, &seq, &SolverConfig::default()).unwrap();
        assert_eq!(ev.integral, 0.0);
        assert_eq!(ev.knot_states.len(), 1);
        let (vals, grads, _) = loss_and_gradients(&p, &seq, &SolverConfig::default(), LossWeights { likelihood: 1.0, time: 1.0 }).unwrap();
        assert_eq!(vals.type_loss, 0.0);
        assert_eq!(grads.len(), p.tensors().len());
    }

    #[test]
    fn integral_is_nondecreasing_along_the_grid() {
        let p = ModelParams::init(small_config(), 2).unwrap();
        let seq = EventSequence::new(vec![
            Event::new(1, 0.1),
            Event::new(3, 0.9),
            Event::new(2, 1.0),
            Event::new(1, 2.4),
        ])
        .unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let fwd = forward(&mut g, &b, &seq, &SolverConfig::default(), LossWeights { likelihood: 1.0, time: 1.0 }).unwrap();
        let a: Vec<f64> = fwd.trajectory.knot_integrals.iter().map(|v| g.scalar(*v)).collect();
        assert!(a.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(a[0], 0.0);
    }
}
