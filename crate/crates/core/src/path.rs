//! Piecewise-linear control paths through embedded events.
//!
//! Knot `j` carries `[z_j, t_j]`: the embedding channels followed by one
//! time channel. Between knots the path is affine, so its derivative is
//! constant on each segment. At an interior knot the derivative of the
//! segment to the right is returned.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Data("a control path needs at least one knot".into()));
    }
    for (j, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::Data(format!(
                "knot times must increase: t[{}] = {} then t[{}] = {}",
                j,
                w[0],
                j + 1,
                w[1]
            )));
        }
    }
    Ok(())
}

/// Path with plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

impl ControlPath {
    /// Builds the path from `(z_j, t_j)` pairs, appending the time channel.
    pub fn build(embedded: &[(Vec<f64>, f64)]) -> Result<Self> {
        let times: Vec<f64> = embedded.iter().map(|(_, t)| *t).collect();
        check_times(&times)?;
        let dim = embedded[0].0.len();
        if let Some((z, _)) = embedded.iter().find(|(z, _)| z.len() != dim) {
            return Err(Error::shape(
                "build_path",
                format!("knot of length {} in a path of dimension {dim}", z.len()),
            ));
        }
        let values: Vec<Vec<f64>> = embedded
            .iter()
            .map(|(z, t)| {
                let mut v = z.clone();
                v.push(*t);
                v
            })
            .collect();
        let slopes = values
            .windows(2)
            .zip(times.windows(2))
            .map(|(v, t)| {
                let dt = t[1] - t[0];
                v[0].iter().zip(&v[1]).map(|(a, b)| (b - a) / dt).collect()
            })
            .collect();
        Ok(ControlPath {
            times,
            values,
            slopes,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn knot_values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn num_knots(&self) -> usize {
        self.times.len()
    }

    /// Number of channels, including the time channel.
    pub fn channels(&self) -> usize {
        self.values[0].len()
    }

    fn segment_of(&self, t: f64) -> Result<usize> {
        let (first, last) = (self.times[0], self.times[self.times.len() - 1]);
        if !(t >= first && t <= last) {
            return Err(Error::Data(format!(
                "time {t} outside the path span [{first}, {last}]"
            )));
        }
        // index of the last knot <= t, capped so t_N maps to the final segment
        let idx = self.times.partition_point(|&k| k <= t).saturating_sub(1);
        Ok(idx.min(self.slopes.len().saturating_sub(1)))
    }

    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        let j = self.segment_of(t)?;
        if self.slopes.is_empty() {
            return Ok(self.values[0].clone());
        }
        if t == self.times[j + 1] {
            return Ok(self.values[j + 1].clone());
        }
        let s = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
        Ok(self.values[j]
            .iter()
            .zip(&self.values[j + 1])
            .map(|(a, b)| (1.0 - s) * a + s * b)
            .collect())
    }

    /// `dZ/dt`, right-continuous at interior knots.
    pub fn derivative(&self, t: f64) -> Result<Vec<f64>> {
        let j = self.segment_of(t)?;
        if self.slopes.is_empty() {
            return Ok(vec![0.0; self.channels()]);
        }
        Ok(self.slopes[j].clone())
    }

    /// Copies the path onto `graph` as constants.
    pub fn to_graph(&self, graph: &mut Graph) -> GraphPath {
        GraphPath {
            times: self.times.clone(),
            knots: self
                .values
                .iter()
                .map(|v| graph.constant(Tensor::vector(v.clone())))
                .collect(),
            slopes: self
                .slopes
                .iter()
                .map(|v| graph.constant(Tensor::vector(v.clone())))
                .collect(),
        }
    }
}

/// Path whose knots and slopes live on a tape, so gradients reach the embeddings.
#[derive(Clone, Debug)]
pub struct GraphPath {
    pub times: Vec<f64>,
    pub knots: Vec<Var>,
    pub slopes: Vec<Var>,
}

impl GraphPath {
    pub fn build(graph: &mut Graph, embedded: &[(Var, f64)]) -> Result<Self> {
        let times: Vec<f64> = embedded.iter().map(|(_, t)| *t).collect();
        check_times(&times)?;
        let knots = embedded
            .iter()
            .map(|(z, t)| {
                let tc = graph.constant(Tensor::vector(vec![*t]));
                graph.concat(&[*z, tc])
            })
            .collect::<Result<Vec<_>>>()?;
        let slopes = knots
            .windows(2)
            .zip(times.windows(2))
            .map(|(k, t)| {
                let d = graph.sub(k[1], k[0])?;
                Ok(graph.scale(d, 1.0 / (t[1] - t[0])))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GraphPath {
            times,
            knots,
            slopes,
        })
    }

    pub fn num_knots(&self) -> usize {
        self.times.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn midpoint_of_a_single_segment() {
        let p = ControlPath::build(&[(vec![0.0, 0.0], 0.0), (vec![2.0, 4.0], 1.0)]).unwrap();
        assert_eq!(p.evaluate(0.5).unwrap(), vec![1.0, 2.0, 0.5]);
        assert_eq!(p.derivative(0.5).unwrap(), vec![2.0, 4.0, 1.0]);
    }

    #[test]
    fn constant_knots_have_only_time_slope() {
        let c = vec![0.7, -1.2, 3.0];
        let p = ControlPath::build(&[(c.clone(), 0.0), (c.clone(), 0.4), (c.clone(), 2.5)]).unwrap();
        for t in [0.0, 0.1, 0.4, 1.0, 2.5] {
            assert_eq!(p.derivative(t).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn derivative_is_right_continuous_at_knots() {
        let p = ControlPath::build(&[(vec![0.0], 0.0), (vec![1.0], 1.0), (vec![-1.0], 2.0)]).unwrap();
        assert_eq!(p.derivative(0.5).unwrap(), vec![1.0, 1.0]);
        assert_eq!(p.derivative(1.5).unwrap(), vec![-2.0, 1.0]);
        assert_eq!(p.derivative(1.0).unwrap(), vec![-2.0, 1.0]);
        // the final knot belongs to the last segment
        assert_eq!(p.derivative(2.0).unwrap(), vec![-2.0, 1.0]);
    }

    #[test]
    fn out_of_span_and_bad_knots_are_errors() {
        let p = ControlPath::build(&[(vec![0.0], 0.0), (vec![1.0], 1.0)]).unwrap();
        assert!(p.derivative(1.5).is_err());
        assert!(p.evaluate(-0.1).is_err());
        assert!(ControlPath::build(&[(vec![0.0], 1.0), (vec![1.0], 1.0)]).is_err());
        assert!(ControlPath::build(&[(vec![0.0], 0.0), (vec![1.0, 2.0], 1.0)]).is_err());
    }

    #[test]
    fn single_knot_path_is_a_point() {
        let p = ControlPath::build(&[(vec![0.5, 0.5], 3.0)]).unwrap();
        assert_eq!(p.evaluate(3.0).unwrap(), vec![0.5, 0.5, 3.0]);
        assert_eq!(p.derivative(3.0).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn graph_path_matches_plain_path() {
        let emb = vec![(vec![0.1, 0.2], 0.5), (vec![0.4, -0.3], 1.5), (vec![1.0, 0.0], 1.75)];
        let plain = ControlPath::build(&emb).unwrap();
        let mut g = Graph::new();
        let vars: Vec<(Var, f64)> = emb
            .iter()
            .map(|(z, t)| (g.param(Tensor::vector(z.clone())), *t))
            .collect();
        let gp = GraphPath::build(&mut g, &vars).unwrap();
        for (j, s) in gp.slopes.iter().enumerate() {
            let expected = plain.derivative(plain.times()[j]).unwrap();
            for (a, b) in g.value(*s).data().iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
            // time channel slope is exactly one
            assert_eq!(*g.value(*s).data().last().unwrap(), 1.0);
        }
    }

    fn knots_strategy() -> impl Strategy<Value = Vec<(Vec<f64>, f64)>> {
        proptest::collection::vec((proptest::collection::vec(-5f64..5.0, 3), 0.01f64..2.0), 2..10).prop_map(
            |raw| {
                let mut t = 0.0;
                raw.into_iter()
                    .map(|(z, gap)| {
                        t += gap;
                        (z, t)
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn reproduces_knot_values(knots in knots_strategy()) {
            let p = ControlPath::build(&knots).unwrap();
            for (j, (z, t)) in knots.iter().enumerate() {
                let v = p.evaluate(*t).unwrap();
                let err = v.iter().zip(&p.knot_values()[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                prop_assert!(err <= 1e-12);
                prop_assert_eq!(&v[..z.len()], &z[..]);
            }
        }

        #[test]
        fn affine_between_knots(knots in knots_strategy(), s in 0f64..=1.0) {
            let p = ControlPath::build(&knots).unwrap();
            for j in 0..knots.len() - 1 {
                let (t0, t1) = (p.times()[j], p.times()[j + 1]);
                let v = p.evaluate((1.0 - s) * t0 + s * t1).unwrap();
                for c in 0..p.channels() {
                    let expected = (1.0 - s) * p.knot_values()[j][c] + s * p.knot_values()[j + 1][c];
                    prop_assert!((v[c] - expected).abs() <= 1e-12 * (1.0 + expected.abs()) * 10.0);
                }
            }
        }
    }
}
