//! Discrete event representations: a trainable type embedding plus a fixed
//! sinusoidal encoding of the timestamp.

use crate::autodiff::{Graph, Var};
use crate::data::EventSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sinusoidal time encoding of length `dim`.
///
/// Entry `u` (0-based) is `sin(t / 10000^(u/dim))` for even `u` and
/// `cos(t / 10000^((u-1)/dim))` for odd `u`.
pub fn positional_encoding(t: f64, dim: usize) -> Vec<f64> {
    let d = dim as f64;
    (0..dim)
        .map(|u| {
            if u % 2 == 0 {
                (t / 10000f64.powf(u as f64 / d)).sin()
            } else {
                (t / 10000f64.powf((u - 1) as f64 / d)).cos()
            }
        })
        .collect()
}

fn check_types(seq: &EventSequence, table: &Tensor) -> Result<()> {
    let k = table.rows();
    if let Some(e) = seq.events().iter().find(|e| e.k == 0 || e.k > k) {
        return Err(Error::Data(format!(
            "event type {} outside the embedding table's {k} rows",
            e.k
        )));
    }
    Ok(())
}

/// `z_j = E_e(k_j) + E_p(t_j)` for every event, without a tape.
pub fn embed_sequence(seq: &EventSequence, table: &Tensor) -> Result<Vec<(Vec<f64>, f64)>> {
    check_types(seq, table)?;
    let dim = table.cols();
    Ok(seq
        .events()
        .iter()
        .map(|e| {
            let z = table
                .row(e.type_index())
                .iter()
                .zip(positional_encoding(e.t, dim))
                .map(|(a, b)| a + b)
                .collect();
            (z, e.t)
        })
        .collect())
}

/// Same as [`embed_sequence`], recorded on `graph` so the table receives gradients.
pub fn embed_sequence_on(graph: &mut Graph, table: Var, seq: &EventSequence) -> Result<Vec<(Var, f64)>> {
    let t = graph.value(table);
    check_types(seq, t)?;
    let dim = t.cols();
    seq.events()
        .iter()
        .map(|e| {
            let row = graph.row(table, e.type_index())?;
            let pe = graph.constant(Tensor::vector(positional_encoding(e.t, dim)));
            Ok((graph.add(row, pe)?, e.t))
        })
        .collect()
}
