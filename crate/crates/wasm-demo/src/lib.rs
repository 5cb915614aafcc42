//! Browser bindings for the demo page in `www/`.
//!
//! Each export returns a JSON string; the plain functions underneath are
//! what the native tests call.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use hpcde::cde::{mc_nonevent, SolverConfig};
use hpcde::data::{Event, EventSequence};
use hpcde::embedding::{embed_sequence, positional_encoding};
use hpcde::hawkes::{EventTerm, ExpHawkesParams};
use hpcde::model::{evaluate_sequence, ModelConfig, ModelParams};
use hpcde::path::ControlPath;
use hpcde::rng;

#[derive(Serialize)]
pub struct Simulation {
    pub events: Vec<Event>,
    /// `(t, λ_1(t), ..., λ_K(t))` on a uniform grid plus both sides of every event.
    pub curve: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub compensator: f64,
}

/// One self-exciting exponential Hawkes sequence with its intensity curve.
pub fn simulate(mu: &[f64], alpha: f64, beta: f64, horizon: f64, seed: u64) -> hpcde::Result<Simulation> {
    let p = ExpHawkesParams::self_exciting(mu.to_vec(), alpha, beta, horizon);
    p.validate()?;
    let events = p.simulate(&mut rng::seeded(seed));
    let mut times: Vec<(f64, bool)> = (0..=400).map(|i| (horizon * i as f64 / 400.0, false)).collect();
    for e in &events {
        times.push((e.t, false));
        times.push((e.t, true));
    }
    times.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let curve = times
        .iter()
        .map(|&(t, inclusive)| {
            let mut row = vec![t];
            row.extend(p.intensity(&events, t, inclusive));
            row
        })
        .collect();
    let seq = EventSequence::new(events.clone())?;
    Ok(Simulation {
        log_likelihood: p.log_likelihood(&seq)?,
        compensator: p.compensator(&events, 0.0, horizon),
        events,
        curve,
    })
}

#[derive(Serialize)]
pub struct PathView {
    pub knot_times: Vec<f64>,
    /// `channels[c]` holds `(t, Z_c(t))` samples.
    pub channels: Vec<Vec<(f64, f64)>>,
    /// Positional encoding of each knot time.
    pub encodings: Vec<Vec<f64>>,
}

fn demo_model(num_types: usize, dim_z: usize, seed: u64) -> hpcde::Result<ModelParams> {
    ModelParams::init(
        ModelConfig {
            num_types,
            dim_z,
            dim_h: 8,
            layers: 3,
            hidden: 16,
            event_term: EventTerm::Total,
        },
        seed,
    )
}

/// The control path through `(types[i], times[i])` with a random embedding table.
pub fn control_path(types: &[usize], times: &[f64], dim_z: usize, seed: u64) -> hpcde::Result<PathView> {
    if types.len() != times.len() {
        return Err(hpcde::Error::Data(format!(
            "{} types for {} times",
            types.len(),
            times.len()
        )));
    }
    let events = types.iter().zip(times).map(|(&k, &t)| Event::new(k, t)).collect();
    let seq = EventSequence::new(events)?;
    let k = types.iter().copied().max().unwrap_or(1);
    let params = demo_model(k, dim_z, seed)?;
    let path = ControlPath::build(&embed_sequence(&seq, params.embedding())?)?;
    let (t0, t1) = (times[0], times[times.len() - 1]);
    let mut grid: Vec<f64> = (0..=200).map(|i| t0 + (t1 - t0) * i as f64 / 200.0).collect();
    grid.extend_from_slice(times);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut channels = vec![Vec::with_capacity(grid.len()); path.channels()];
    for &t in &grid {
        for (c, v) in path.evaluate(t)?.into_iter().enumerate() {
            channels[c].push((t, v));
        }
    }
    Ok(PathView {
        knot_times: times.to_vec(),
        channels,
        encodings: times.iter().map(|&t| positional_encoding(t, dim_z)).collect(),
    })
}

#[derive(Serialize)]
pub struct Convergence {
    pub ode_integral: f64,
    /// `(samples, [estimate per repeat])`.
    pub estimates: Vec<(usize, Vec<f64>)>,
    pub intensity: Vec<(f64, f64)>,
}

/// Exact non-event integral of an untrained model against Monte Carlo
/// estimates at increasing sample counts.
pub fn mc_convergence(model_seed: u64, data_seed: u64, substeps: usize, repeats: usize) -> hpcde::Result<Convergence> {
    let p = ExpHawkesParams::self_exciting(vec![0.2, 0.2], 0.6, 1.0, 22.0);
    let mut r = rng::seeded(data_seed);
    let events = loop {
        let ev = p.simulate(&mut r);
        if ev.len() >= 2 {
            break ev;
        }
    };
    let seq = EventSequence::new(events)?;
    let params = demo_model(2, 8, model_seed)?;
    let ev = evaluate_sequence(&params, &seq, &SolverConfig::new(substeps)?)?;
    let mut estimates = Vec::new();
    for n in [10, 30, 100, 300, 1000, 3000, 10_000] {
        let runs = (0..repeats as u64)
            .map(|i| mc_nonevent(&ev.intensity_grid, n, rng::derive_seed(data_seed, i)))
            .collect::<hpcde::Result<Vec<_>>>()?;
        estimates.push((n, runs));
    }
    Ok(Convergence {
        ode_integral: ev.integral,
        estimates,
        intensity: ev.intensity_grid,
    })
}

fn to_js<T: Serialize>(r: hpcde::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = simulateHawkes)]
pub fn simulate_hawkes(mu: Vec<f64>, alpha: f64, beta: f64, horizon: f64, seed: u32) -> Result<String, JsError> {
    to_js(simulate(&mu, alpha, beta, horizon, seed as u64))
}

#[wasm_bindgen(js_name = controlPath)]
pub fn control_path_js(types: Vec<u32>, times: Vec<f64>, dim_z: u32, seed: u32) -> Result<String, JsError> {
    let types: Vec<usize> = types.into_iter().map(|k| k as usize).collect();
    to_js(control_path(&types, &times, dim_z as usize, seed as u64))
}

#[wasm_bindgen(js_name = mcConvergence)]
pub fn mc_convergence_js(model_seed: u32, data_seed: u32, substeps: u32, repeats: u32) -> Result<String, JsError> {
    to_js(mc_convergence(model_seed as u64, data_seed as u64, substeps as usize, repeats as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intensity_jumps_by_alpha_at_each_event() {
        let s = simulate(&[0.3], 0.5, 1.0, 20.0, 4).unwrap();
        assert!(!s.events.is_empty());
        let e = s.events[0].t;
        let at: Vec<&Vec<f64>> = s.curve.iter().filter(|r| r[0] == e).collect();
        assert_eq!(at.len(), 2);
        assert!((at[1][1] - at[0][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn path_passes_through_knots() {
        let v = control_path(&[1, 2, 1], &[0.0, 1.0, 2.5], 4, 0).unwrap();
        assert_eq!(v.channels.len(), 5);
        let time_channel = &v.channels[4];
        assert!(time_channel.iter().all(|(t, z)| (t - z).abs() < 1e-12));
        assert_eq!(v.encodings[0], vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn mc_estimates_approach_the_ode_value() {
        let c = mc_convergence(1, 2, 8, 5).unwrap();
        let spread = |runs: &Vec<f64>| runs.iter().map(|x| (x - c.ode_integral).abs()).sum::<f64>() / runs.len() as f64;
        let first = spread(&c.estimates[0].1);
        let last = spread(&c.estimates.last().unwrap().1);
        assert!(last < first);
        assert!(last / c.ode_integral < 0.02);
    }
}
