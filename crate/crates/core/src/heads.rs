//! Intensity, log-probability, the next-type and next-time heads, and the
//! three training losses.

use crate::autodiff::{self, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-type intensities `β_k · ln(1 + exp(w_k·h / β_k))` and their sum.
/// `log_beta` holds `ln β_k`.
pub fn intensity(g: &mut Graph, h: Var, w_intensity: Var, log_beta: Var) -> Result<(Var, Var)> {
    let proj = g.linear(w_intensity, h, None)?;
    let per_type = g.softplus_beta(proj, log_beta)?;
    let total = g.sum(per_type);
    Ok((per_type, total))
}

/// Tape-free [`intensity`]; returns the per-type values.
pub fn intensity_values(h: &[f64], w_intensity: &Tensor, log_beta: &Tensor) -> Vec<f64> {
    (0..w_intensity.rows())
        .map(|k| {
            let x: f64 = w_intensity.row(k).iter().zip(h).map(|(a, b)| a * b).sum();
            autodiff::softplus_beta(x, log_beta.data()[k].exp())
        })
        .collect()
}

/// `Σ_j log λ(t_j) − a(t_N)`.
pub fn sequence_log_prob(event_intensities: &[f64], accumulated: f64) -> Result<f64> {
    if let Some(l) = event_intensities.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::Data(format!("event intensity must be positive, got {l}")));
    }
    Ok(event_intensities.iter().map(|l| l.ln()).sum::<f64>() - accumulated)
}

/// [`sequence_log_prob`] on the tape; each entry of `event_intensities` is a scalar.
pub fn sequence_log_prob_on(g: &mut Graph, event_intensities: &[Var], accumulated: Var) -> Result<Var> {
    let mut total = g.constant_scalar(0.0);
    for l in event_intensities {
        let lg = g.log(*l);
        total = g.add(total, lg)?;
    }
    g.sub(total, accumulated)
}

/// Softmax probabilities over types and the argmax, 1-based, ties to the
/// smallest type.
pub fn predict_type(h: &[f64], w_type: &Tensor) -> (Vec<f64>, usize) {
    let logits: Vec<f64> = (0..w_type.rows())
        .map(|k| w_type.row(k).iter().zip(h).map(|(a, b)| a * b).sum())
        .collect();
    let p = autodiff::softmax(&logits);
    let mut best = 0;
    for (k, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = k;
        }
    }
    (p, best + 1)
}

/// Predicted inter-arrival `τ̂ = w·h` and the reported next time
/// `t_j + max(τ̂, 0)`.
pub fn predict_time(h: &[f64], w_time: &Tensor, previous_time: f64) -> (f64, f64) {
    let tau: f64 = w_time.data().iter().zip(h).map(|(a, b)| a * b).sum();
    (tau, previous_time + tau.max(0.0))
}

/// Loss weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub likelihood: f64,
    pub time: f64,
}

/// The three loss terms and their weighted total, all scalars on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub neg_log_prob: Var,
    pub type_loss: Var,
    pub time_loss: Var,
    pub total: Var,
}

/// Builds the losses from the knot states `h(t_1..t_N)`.
///
/// Next-event terms run over `j = 2..=N`, predicting event `j` from
/// `h(t_{j-1})`; the prediction made after the last event has no target.
#[allow(clippy::too_many_arguments)]
pub fn losses(
    g: &mut Graph,
    knot_states: &[Var],
    types: &[usize],
    times: &[f64],
    log_prob: Var,
    w_type: Var,
    w_time: Var,
    weights: LossWeights,
) -> Result<LossTerms> {
    if knot_states.len() != types.len() || types.len() != times.len() {
        return Err(Error::shape(
            "losses",
            format!(
                "{} states for {} types and {} times",
                knot_states.len(),
                types.len(),
                times.len()
            ),
        ));
    }
    let mut type_loss = g.constant_scalar(0.0);
    let mut time_loss = g.constant_scalar(0.0);
    for j in 1..types.len() {
        let h = knot_states[j - 1];
        let logits = g.matvec(w_type, h)?;
        let logp = g.log_softmax(logits);
        let lk = g.pick(logp, types[j] - 1)?;
        type_loss = g.sub(type_loss, lk)?;

        let pred = g.matvec(w_time, h)?;
        let target = g.constant(Tensor::vector(vec![times[j] - times[j - 1]]));
        let err = g.sub(target, pred)?;
        let sq = g.square(err);
        let sq = g.sum(sq);
        time_loss = g.add(time_loss, sq)?;
    }
    let neg_log_prob = g.scale(log_prob, -1.0);
    let weighted = g.scale(log_prob, -weights.likelihood);
    let t1 = g.add(weighted, type_loss)?;
    let total = g.axpy(t1, weights.time, time_loss)?;
    Ok(LossTerms {
        neg_log_prob,
        type_loss,
        time_loss,
        total,
    })
}
