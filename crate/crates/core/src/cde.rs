//! Neural CDE dynamics and the augmented-state RK4 integrator.
//!
//! The hidden state follows `dh/dt = f(h) · dZ/dt` while an accumulator
//! follows `da/dt = λ*(t)`, so that after the solve `a(t_N)` holds the
//! integral of the intensity over `[t_1, t_N]`. Each inter-knot segment is
//! split into a fixed number of RK4 substeps; steps never cross a knot,
//! where `dZ/dt` jumps. Every operation is recorded on the tape, so
//! gradients are those of the discrete solver.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::path::GraphPath;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub substeps_per_segment: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            substeps_per_segment: 8,
        }
    }
}

impl SolverConfig {
    pub fn new(substeps_per_segment: usize) -> Result<Self> {
        if substeps_per_segment == 0 {
            return Err(Error::Config("substeps_per_segment must be at least 1".into()));
        }
        Ok(SolverConfig {
            substeps_per_segment,
        })
    }
}

/// `f(h) = tanh(L_M(elu(... elu(L_1 h))))`, reshaped to `[dim_h, channels]`.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub layers: Vec<(Var, Var)>,
    pub dim_h: usize,
    pub channels: usize,
}

impl VectorField {
    pub fn apply(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let mut x = h;
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let y = g.linear(*w, x, Some(*b))?;
            x = if i == last { g.tanh(y) } else { g.elu(y) };
        }
        g.reshape(x, vec![self.dim_h, self.channels])
    }

    /// `f(h) · slope`.
    pub fn drive(&self, g: &mut Graph, h: Var, slope: Var) -> Result<Var> {
        let m = self.apply(g, h)?;
        g.matvec(m, slope)
    }
}

/// Hidden state plus the running intensity integral.
#[derive(Clone, Copy, Debug)]
pub struct AugmentedState {
    pub h: Var,
    pub a: Var,
}

/// `h(t_1) = π(z(t_1))` (a single affine layer) and `a(t_1) = 0`.
pub fn init_state(g: &mut Graph, pi_weight: Var, pi_bias: Var, z1: Var) -> Result<AugmentedState> {
    let h = g.linear(pi_weight, z1, Some(pi_bias))?;
    let a = g.constant_scalar(0.0);
    Ok(AugmentedState { h, a })
}

/// Where an intensity evaluation happens: the stage time and the segment
/// (`j` covers `[t_j, t_{j+1}]`, 0-based).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StagePoint {
    pub t: f64,
    pub segment: usize,
}

/// Total intensity `λ*(t)` as a function of the current hidden state.
pub trait Intensity {
    fn total(&mut self, g: &mut Graph, h: Var, at: StagePoint) -> Result<Var>;
}

impl<F> Intensity for F
where
    F: FnMut(&mut Graph, Var, StagePoint) -> Result<Var>,
{
    fn total(&mut self, g: &mut Graph, h: Var, at: StagePoint) -> Result<Var> {
        self(g, h, at)
    }
}

/// Solver output.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// `h(t_j)` for every knot.
    pub knot_states: Vec<Var>,
    /// `a(t_j)` for every knot; the last entry is the non-event integral.
    pub knot_integrals: Vec<Var>,
    /// `(t, h(t))` at every substep boundary, in time order.
    pub dense: Vec<(f64, Var)>,
}

impl Trajectory {
    pub fn integral(&self) -> Var {
        *self.knot_integrals.last().expect("at least one knot")
    }
}

/// Advances the augmented state over `[t0, t1]` in `steps` RK4 steps with a
/// constant path slope.
#[allow(clippy::too_many_arguments)]
pub fn rk4_segment(
    g: &mut Graph,
    field: &VectorField,
    intensity: &mut dyn Intensity,
    mut state: AugmentedState,
    t0: f64,
    t1: f64,
    steps: usize,
    slope: Var,
    segment: usize,
    mut dense: Option<&mut Vec<(f64, Var)>>,
) -> Result<AugmentedState> {
    let dt = (t1 - t0) / steps as f64;
    for i in 0..steps {
        let t = t0 + dt * i as f64;
        let mid = StagePoint {
            t: t + 0.5 * dt,
            segment,
        };
        let end = StagePoint {
            t: if i + 1 == steps { t1 } else { t + dt },
            segment,
        };
        let h = state.h;
        let k1 = field.drive(g, h, slope)?;
        let l1 = intensity.total(g, h, StagePoint { t, segment })?;
        let h2 = g.axpy(h, 0.5 * dt, k1)?;
        let k2 = field.drive(g, h2, slope)?;
        let l2 = intensity.total(g, h2, mid)?;
        let h3 = g.axpy(h, 0.5 * dt, k2)?;
        let k3 = field.drive(g, h3, slope)?;
        let l3 = intensity.total(g, h3, mid)?;
        let h4 = g.axpy(h, dt, k3)?;
        let k4 = field.drive(g, h4, slope)?;
        let l4 = intensity.total(g, h4, end)?;

        let k23 = g.add(k2, k3)?;
        let k14 = g.add(k1, k4)?;
        let ksum = g.axpy(k14, 2.0, k23)?;
        let l23 = g.add(l2, l3)?;
        let l14 = g.add(l1, l4)?;
        let lsum = g.axpy(l14, 2.0, l23)?;
        state = AugmentedState {
            h: g.axpy(h, dt / 6.0, ksum)?,
            a: g.axpy(state.a, dt / 6.0, lsum)?,
        };
        if let Some(d) = dense.as_deref_mut() {
            d.push((end.t, state.h));
        }
    }
    Ok(state)
}

/// Solves the augmented system across every segment of `path`.
pub fn integrate(
    g: &mut Graph,
    path: &GraphPath,
    initial: AugmentedState,
    field: &VectorField,
    intensity: &mut dyn Intensity,
    solver: &SolverConfig,
) -> Result<Trajectory> {
    if path.num_knots() == 0 {
        return Err(Error::Data("cannot integrate over an empty path".into()));
    }
    let mut traj = Trajectory {
        knot_states: vec![initial.h],
        knot_integrals: vec![initial.a],
        dense: vec![(path.times[0], initial.h)],
    };
    let mut state = initial;
    for j in 0..path.num_knots() - 1 {
        state = rk4_segment(
            g,
            field,
            intensity,
            state,
            path.times[j],
            path.times[j + 1],
            solver.substeps_per_segment,
            path.slopes[j],
            j,
            Some(&mut traj.dense),
        )?;
        if !g.value(state.h).is_finite() || !g.value(state.a).is_finite() {
            return Err(Error::NonFinite(format!(
                "in the CDE solve on segment {j} ([{}, {}])",
                path.times[j],
                path.times[j + 1]
            )));
        }
        traj.knot_states.push(state.h);
        traj.knot_integrals.push(state.a);
    }
    Ok(traj)
}

/// Monte Carlo estimate of `∫ λ*` over the span of `grid`.
///
/// `grid` holds `(t, λ*(t))` at the solver's substep boundaries. Each uniform
/// sample takes the intensity at the nearest grid time.
pub fn mc_nonevent(grid: &[(f64, f64)], n_samples: usize, seed: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    let (Some(first), Some(last)) = (grid.first(), grid.last()) else {
        return Ok(0.0);
    };
    let (start, end) = (first.0, last.0);
    if end <= start {
        return Ok(0.0);
    }
    let mut r = rng::seeded(seed);
    let mut total = 0.0;
    for _ in 0..n_samples {
        let u = start + (end - start) * r.random::<f64>();
        total += nearest(grid, u);
    }
    Ok((end - start) * total / n_samples as f64)
}

fn nearest(grid: &[(f64, f64)], u: f64) -> f64 {
    let i = grid.partition_point(|p| p.0 < u);
    if i == 0 {
        return grid[0].1;
    }
    if i == grid.len() {
        return grid[grid.len() - 1].1;
    }
    let (a, b) = (grid[i - 1], grid[i]);
    if u - a.0 <= b.0 - u {
        a.1
    } else {
        b.1
    }
}

/// A zero vector field: `f ≡ 0` for every `h`.
pub fn zero_field(g: &mut Graph, dim_h: usize, channels: usize) -> VectorField {
    let w = g.constant(Tensor::zeros(&[dim_h * channels, dim_h]));
    let b = g.constant(Tensor::zeros(&[dim_h * channels]));
    VectorField {
        layers: vec![(w, b)],
        dim_h,
        channels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::ControlPath;
    use approx::assert_relative_eq;

    fn flat_path(g: &mut Graph, times: &[f64]) -> GraphPath {
        let emb: Vec<(Vec<f64>, f64)> = times.iter().map(|&t| (vec![0.0], t)).collect();
        ControlPath::build(&emb).unwrap().to_graph(g)
    }

    fn random_field(g: &mut Graph, dim_h: usize, channels: usize, hidden: usize, seed: u64) -> VectorField {
        use rand_distr::{Distribution, Normal};
        let mut r = rng::seeded(seed);
        let n = Normal::new(0.0, 0.5).unwrap();
        let mut mk = |rows: usize, cols: usize| {
            Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| n.sample(&mut r)).collect()).unwrap()
        };
        let dims = [dim_h, hidden, hidden, dim_h * channels];
        let layers = dims
            .windows(2)
            .map(|d| {
                let w = mk(d[1], d[0]);
                let b = mk(d[1], 1).reshaped(vec![d[1]]).unwrap();
                (g.constant(w), g.constant(b))
            })
            .collect();
        VectorField {
            layers,
            dim_h,
            channels,
        }
    }

    #[test]
    fn polynomial_intensity_is_integrated_exactly() {
        let mut g = Graph::new();
        let path = flat_path(&mut g, &[0.0, 2.0]);
        let field = zero_field(&mut g, 2, 2);
        let h0 = g.constant(Tensor::zeros(&[2]));
        let a0 = g.constant_scalar(0.0);
        let mut lam = |g: &mut Graph, _h: Var, at: StagePoint| Ok(g.constant_scalar(at.t));
        let traj = integrate(
            &mut g,
            &path,
            AugmentedState { h: h0, a: a0 },
            &field,
            &mut lam,
            &SolverConfig::new(1).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(g.scalar(traj.integral()), 2.0, epsilon = 1e-15);
        // cubic: ∫_0^2 t^3 = 4, still exact for RK4
        let mut cubic = |g: &mut Graph, _h: Var, at: StagePoint| Ok(g.constant_scalar(at.t.powi(3)));
        let traj = integrate(
            &mut g,
            &path,
            AugmentedState { h: h0, a: a0 },
            &field,
            &mut cubic,
            &SolverConfig::new(1).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(g.scalar(traj.integral()), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_field_keeps_hidden_state_constant() {
        let mut g = Graph::new();
        let path = flat_path(&mut g, &[0.0, 0.3, 1.1, 2.0]);
        let field = zero_field(&mut g, 3, 2);
        let h0 = g.constant(Tensor::vector(vec![0.2, -0.4, 1.0]));
        let a0 = g.constant_scalar(0.0);
        let mut lam = |g: &mut Graph, _h: Var, _at: StagePoint| Ok(g.constant_scalar(1.0));
        let traj = integrate(&mut g, &path, AugmentedState { h: h0, a: a0 }, &field, &mut lam, &SolverConfig::default()).unwrap();
        for h in &traj.knot_states {
            assert_eq!(g.value(*h), g.value(h0));
        }
        assert_relative_eq!(g.scalar(traj.integral()), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn init_state_with_zero_map_is_zero() {
        let mut g = Graph::new();
        let w = g.param(Tensor::zeros(&[4, 3]));
        let b = g.param(Tensor::zeros(&[4]));
        let z = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let s = init_state(&mut g, w, b, z).unwrap();
        assert_eq!(g.value(s.h).data(), &[0.0; 4]);
        assert_eq!(g.scalar(s.a), 0.0);
        let s2 = init_state(&mut g, w, b, z).unwrap();
        assert_eq!(g.value(s.h), g.value(s2.h));
        let bad = g.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(init_state(&mut g, w, b, bad).is_err());
    }

    #[test]
    fn splitting_a_segment_on_the_substep_grid_changes_nothing() {
        let mut g = Graph::new();
        let (dim_h, channels) = (4, 3);
        let field = random_field(&mut g, dim_h, channels, 6, 5);
        let slope = g.constant(Tensor::vector(vec![0.5, -1.0, 1.0]));
        let h0 = g.constant(Tensor::vector(vec![0.1, 0.2, -0.3, 0.4]));
        let a0 = g.constant_scalar(0.0);
        let w = g.constant(Tensor::vector(vec![1.0, -0.5, 0.25, 0.3]));
        let mut lam = |g: &mut Graph, h: Var, _at: StagePoint| {
            let lb = g.constant(Tensor::vector(vec![0.0]));
            let x = g.dot(w, h)?;
            let x = g.reshape(x, vec![1])?;
            let s = g.softplus_beta(x, lb)?;
            Ok(g.sum(s))
        };
        let init = AugmentedState { h: h0, a: a0 };
        let whole = rk4_segment(&mut g, &field, &mut lam, init, 0.0, 1.0, 8, slope, 0, None).unwrap();
        let half = rk4_segment(&mut g, &field, &mut lam, init, 0.0, 0.5, 4, slope, 0, None).unwrap();
        let split = rk4_segment(&mut g, &field, &mut lam, half, 0.5, 1.0, 4, slope, 0, None).unwrap();
        for (a, b) in g.value(whole.h).data().iter().zip(g.value(split.h).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((g.scalar(whole.a) - g.scalar(split.a)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_state_aborts_with_segment_index() {
        let mut g = Graph::new();
        let path = flat_path(&mut g, &[0.0, 1.0, 2.0]);
        let field = zero_field(&mut g, 1, 2);
        let h0 = g.constant(Tensor::zeros(&[1]));
        let a0 = g.constant_scalar(0.0);
        let mut lam = |g: &mut Graph, _h: Var, at: StagePoint| {
            Ok(g.constant_scalar(if at.segment == 1 { f64::NAN } else { 1.0 }))
        };
        let err = integrate(&mut g, &path, AugmentedState { h: h0, a: a0 }, &field, &mut lam, &SolverConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("segment 1"), "{err}");
    }

    #[test]
    fn mc_of_constant_intensity_is_exact() {
        let grid: Vec<(f64, f64)> = (0..=16).map(|i| (0.5 + i as f64 * 0.25, 0.75)).collect();
        for n in [1, 7, 1000] {
            let est = mc_nonevent(&grid, n, 3).unwrap();
            assert_relative_eq!(est, 0.75 * 4.0, max_relative = 1e-12);
        }
        assert_eq!(mc_nonevent(&grid, 50, 9).unwrap(), mc_nonevent(&grid, 50, 9).unwrap());
        assert!(mc_nonevent(&grid, 0, 9).is_err());
    }
}
