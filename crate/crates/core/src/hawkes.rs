//! Multivariate Hawkes process with exponential kernels.
//!
//! The type-`k` intensity is
//!
//! ```text
//! λ_k(t) = μ_k + Σ_{t_j < t} α[k][k_j] · exp(-β[k][k_j] (t - t_j))
//! ```
//!
//! Simulation uses Ogata thinning. The compensator has a closed form, which
//! makes this process the ground-truth oracle for the learned model's
//! integrator and likelihood.

use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::data::{Event, EventSequence};
use crate::error::{Error, Result};
use crate::rng;

/// Which intensity enters the per-event log term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EventTerm {
    /// `log λ*(t_j)`, the total intensity over all types.
    #[default]
    Total,
    /// `log λ*_{k_j}(t_j)`, the intensity of the observed type.
    Marked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpHawkesParams {
    pub mu: Vec<f64>,
    /// `alpha[k][src]`: jump in the type-`k` intensity after a type-`src` event.
    pub alpha: Vec<Vec<f64>>,
    pub beta_decay: Vec<Vec<f64>>,
    pub horizon: f64,
}

impl ExpHawkesParams {
    /// Self-exciting only: diagonal `alpha`, uniform decay.
    pub fn self_exciting(mu: Vec<f64>, alpha: f64, beta: f64, horizon: f64) -> Self {
        let k = mu.len();
        let mut a = vec![vec![0.0; k]; k];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = alpha;
        }
        ExpHawkesParams {
            mu,
            alpha: a,
            beta_decay: vec![vec![beta; k]; k],
            horizon,
        }
    }

    pub fn num_types(&self) -> usize {
        self.mu.len()
    }

    /// Spectral radius of the branching matrix `alpha / beta`.
    pub fn spectral_radius(&self) -> f64 {
        let k = self.num_types();
        let m = nalgebra::DMatrix::from_fn(k, k, |i, j| self.alpha[i][j] / self.beta_decay[i][j]);
        m.complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_types();
        if k == 0 {
            return Err(Error::Config("at least one event type is required".into()));
        }
        let square = |m: &Vec<Vec<f64>>| m.len() == k && m.iter().all(|r| r.len() == k);
        if !square(&self.alpha) || !square(&self.beta_decay) {
            return Err(Error::Config(format!("alpha and beta must be {k}x{k}")));
        }
        if self.mu.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(Error::Config("base intensities must be finite and >= 0".into()));
        }
        if self.alpha.iter().flatten().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::Config("excitation magnitudes must be finite and >= 0".into()));
        }
        if self.beta_decay.iter().flatten().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::Config("decay rates must be finite and > 0".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let rho = self.spectral_radius();
        if rho >= 1.0 {
            return Err(Error::Config(format!(
                "process is not stationary: spectral radius of alpha/beta is {rho:.4} (must be < 1)"
            )));
        }
        Ok(())
    }

    /// Expected events per type over the horizon for the stationary process,
    /// `(I - alpha/beta)^-1 mu * T`. Ignores edge effects at `t = 0`.
    pub fn stationary_counts(&self) -> Vec<f64> {
        let k = self.num_types();
        let g = nalgebra::DMatrix::from_fn(k, k, |i, j| {
            f64::from(u8::from(i == j)) - self.alpha[i][j] / self.beta_decay[i][j]
        });
        let mu = nalgebra::DVector::from_vec(self.mu.clone());
        let rates = g.lu().solve(&mu).expect("stationary system is invertible");
        rates.iter().map(|r| r * self.horizon).collect()
    }

    /// Per-type intensities at `t`, counting events strictly before `t`, or
    /// also those at `t` when `inclusive`.
    pub fn intensity(&self, events: &[Event], t: f64, inclusive: bool) -> Vec<f64> {
        let mut lam = self.mu.clone();
        for e in events {
            if e.t > t || (e.t == t && !inclusive) {
                break;
            }
            let src = e.type_index();
            for (k, l) in lam.iter_mut().enumerate() {
                *l += self.alpha[k][src] * (-self.beta_decay[k][src] * (t - e.t)).exp();
            }
        }
        lam
    }

    pub fn total_intensity(&self, events: &[Event], t: f64, inclusive: bool) -> f64 {
        self.intensity(events, t, inclusive).iter().sum()
    }

    /// Closed-form `∫_from^to λ*(t) dt` summed over types.
    pub fn compensator(&self, events: &[Event], from: f64, to: f64) -> f64 {
        let mut total = self.mu.iter().sum::<f64>() * (to - from);
        for e in events {
            if e.t >= to {
                break;
            }
            let src = e.type_index();
            let start = from.max(e.t);
            for k in 0..self.num_types() {
                let (a, b) = (self.alpha[k][src], self.beta_decay[k][src]);
                total += a / b * ((-b * (start - e.t)).exp() - (-b * (to - e.t)).exp());
            }
        }
        total
    }

    fn check_window(&self, seq: &EventSequence) -> Result<()> {
        if let Some(e) = seq.events().iter().find(|e| e.t < 0.0 || e.t > self.horizon) {
            return Err(Error::Data(format!(
                "event at t = {} lies outside [0, {}]",
                e.t, self.horizon
            )));
        }
        if seq.max_type() > self.num_types() {
            return Err(Error::Data(format!(
                "event type {} exceeds K = {}",
                seq.max_type(),
                self.num_types()
            )));
        }
        Ok(())
    }

    /// Exact log-likelihood on `[0, T]`:
    /// `Σ_j log λ*_{k_j}(t_j⁻) − Λ(T)`.
    pub fn log_likelihood(&self, seq: &EventSequence) -> Result<f64> {
        self.check_window(seq)?;
        let ev = seq.events();
        let events: f64 = ev
            .iter()
            .map(|e| self.intensity(ev, e.t, false)[e.type_index()].ln())
            .sum();
        Ok(events - self.compensator(ev, 0.0, self.horizon))
    }

    /// Log-likelihood restricted to `[t_1, t_N]` with the chosen event term:
    /// the quantity the neural model estimates.
    pub fn window_log_likelihood(&self, seq: &EventSequence, term: EventTerm) -> Result<f64> {
        self.check_window(seq)?;
        let ev = seq.events();
        let (Some(first), Some(last)) = (seq.first_time(), seq.last_time()) else {
            return Ok(0.0);
        };
        let events: f64 = ev
            .iter()
            .map(|e| {
                let lam = self.intensity(ev, e.t, false);
                match term {
                    EventTerm::Total => lam.iter().sum::<f64>().ln(),
                    EventTerm::Marked => lam[e.type_index()].ln(),
                }
            })
            .sum();
        Ok(events - self.compensator(ev, first, last))
    }

    /// One sequence on `[0, T]` by Ogata thinning.
    pub fn simulate(&self, rng: &mut rng::Rng) -> Vec<Event> {
        let k = self.num_types();
        // excitation[k][src] decays together with its own rate
        let mut excitation = vec![vec![0.0; k]; k];
        let mut events = Vec::new();
        let mut t = 0.0;
        let intensities = |exc: &Vec<Vec<f64>>| -> Vec<f64> {
            (0..k).map(|i| self.mu[i] + exc[i].iter().sum::<f64>()).collect()
        };
        let mut upper: f64 = intensities(&excitation).iter().sum();
        loop {
            if upper <= 0.0 {
                break;
            }
            let wait = Exp::new(upper).expect("positive rate").sample(rng);
            let next = t + wait;
            if next > self.horizon {
                break;
            }
            for i in 0..k {
                for s in 0..k {
                    excitation[i][s] *= (-self.beta_decay[i][s] * wait).exp();
                }
            }
            t = next;
            let lam = intensities(&excitation);
            let total: f64 = lam.iter().sum();
            let u: f64 = rng.random::<f64>() * upper;
            if u < total {
                let mut pick = u;
                let mut kind = k - 1;
                for (i, l) in lam.iter().enumerate() {
                    if pick < *l {
                        kind = i;
                        break;
                    }
                    pick -= l;
                }
                events.push(Event::new(kind + 1, t));
                for (i, row) in excitation.iter_mut().enumerate() {
                    row[kind] += self.alpha[i][kind];
                }
                upper = intensities(&excitation).iter().sum();
            } else {
                // intensity only decays between events
                upper = total;
            }
        }
        events
    }
}

/// Draws `n_sequences` independent sequences; sequence `i` uses its own
/// stream derived from `seed`, so output does not depend on evaluation order.
pub fn generate_hawkes(params: &ExpHawkesParams, n_sequences: usize, seed: u64) -> Result<Vec<EventSequence>> {
    params.validate()?;
    (0..n_sequences)
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            EventSequence::new(params.simulate(&mut r))
        })
        .collect()
}

/// Sidecar written next to generated datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub params: ExpHawkesParams,
    pub seed: u64,
    pub n_sequences: usize,
    pub dropped_empty: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Adaptive Simpson quadrature, used as an independent integration oracle.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    /// Quadrature of the intensity piece by piece between events, where it is smooth.
    fn quadrature_compensator(p: &ExpHawkesParams, ev: &[Event], from: f64, to: f64) -> f64 {
        let mut cuts = vec![from];
        cuts.extend(ev.iter().map(|e| e.t).filter(|&t| t > from && t < to));
        cuts.push(to);
        cuts.windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                // the event at the left cut is part of the history inside the piece
                let hist: Vec<Event> = ev.iter().copied().filter(|e| e.t < mid).collect();
                adaptive_simpson(&|t| p.total_intensity(&hist, t, true), w[0], w[1], 1e-13)
            })
            .sum()
    }

    #[test]
    fn empty_sequence_is_pure_survival() {
        let p = ExpHawkesParams::self_exciting(vec![0.3; 3], 0.2, 1.0, 7.0);
        let ll = p.log_likelihood(&EventSequence::new(vec![]).unwrap()).unwrap();
        assert_relative_eq!(ll, -0.3 * 3.0 * 7.0, epsilon = 1e-12);
    }

    #[test]
    fn two_event_closed_form_matches_hand_formula_and_quadrature() {
        let p = ExpHawkesParams::self_exciting(vec![0.5], 0.8, 1.0, 3.0);
        let seq = EventSequence::new(vec![Event::new(1, 1.0), Event::new(1, 2.0)]).unwrap();
        let e1 = (-1f64).exp();
        let e2 = (-2f64).exp();
        let hand = 0.5f64.ln() + (0.5 + 0.8 * e1).ln() - (1.5 + 0.8 * (1.0 - e2) + 0.8 * (1.0 - e1));
        let ll = p.log_likelihood(&seq).unwrap();
        assert_relative_eq!(ll, hand, epsilon = 1e-14);
        let quad = quadrature_compensator(&p, seq.events(), 0.0, 3.0);
        let closed = p.compensator(seq.events(), 0.0, 3.0);
        assert!((quad - closed).abs() < 1e-10, "{quad} vs {closed}");
    }

    #[test]
    fn compensator_agrees_with_quadrature_on_random_sequences() {
        let p = ExpHawkesParams {
            mu: vec![0.3, 0.1, 0.2],
            alpha: vec![vec![0.4, 0.1, 0.0], vec![0.2, 0.3, 0.1], vec![0.0, 0.5, 0.2]],
            beta_decay: vec![vec![1.0, 2.0, 1.0], vec![0.7, 1.5, 3.0], vec![1.0, 1.2, 0.9]],
            horizon: 15.0,
        };
        let seqs = generate_hawkes(&p, 20, 11).unwrap();
        for s in seqs.iter().filter(|s| s.len() >= 2) {
            let closed = p.compensator(s.events(), 0.0, p.horizon);
            let quad = quadrature_compensator(&p, s.events(), 0.0, p.horizon);
            assert!(((closed - quad) / closed).abs() < 1e-8, "{closed} vs {quad}");
            let (a, b) = (s.first_time().unwrap(), s.last_time().unwrap());
            let closed = p.compensator(s.events(), a, b);
            let quad = quadrature_compensator(&p, s.events(), a, b);
            assert!(((closed - quad) / closed).abs() < 1e-8, "{closed} vs {quad}");
        }
    }

    #[test]
    fn zero_base_rate_gives_empty_sequences() {
        let p = ExpHawkesParams::self_exciting(vec![0.0], 0.5, 1.0, 10.0);
        let seqs = generate_hawkes(&p, 50, 1).unwrap();
        assert!(seqs.iter().all(EventSequence::is_empty));
    }

    #[test]
    fn non_stationary_parameters_are_refused() {
        let p = ExpHawkesParams::self_exciting(vec![0.2, 0.2], 1.0, 1.0, 10.0);
        let err = generate_hawkes(&p, 1, 0).unwrap_err().to_string();
        assert!(err.contains("stationary"), "{err}");
        let p = ExpHawkesParams::self_exciting(vec![0.2], 0.99, 1.0, 10.0);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn events_outside_horizon_are_rejected() {
        let p = ExpHawkesParams::self_exciting(vec![0.5], 0.5, 1.0, 3.0);
        let seq = EventSequence::new(vec![Event::new(1, 4.0)]).unwrap();
        assert!(p.log_likelihood(&seq).is_err());
    }

    #[test]
    fn generation_is_reproducible() {
        let p = ExpHawkesParams::self_exciting(vec![0.2, 0.2], 0.6, 1.0, 50.0);
        assert_eq!(generate_hawkes(&p, 5, 7).unwrap(), generate_hawkes(&p, 5, 7).unwrap());
        assert_ne!(generate_hawkes(&p, 5, 7).unwrap(), generate_hawkes(&p, 5, 8).unwrap());
    }

    #[test]
    fn stationary_counts_of_self_exciting_process() {
        let p = ExpHawkesParams::self_exciting(vec![0.2, 0.2], 0.6, 1.0, 50.0);
        for c in p.stationary_counts() {
            assert_relative_eq!(c, 0.2 * 50.0 / 0.4, epsilon = 1e-10);
        }
    }
}
