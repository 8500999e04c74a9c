//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// A scalar function of several tensors with an analytic gradient.
pub trait Differentiable<S: Scalar> {
    fn value(&self, inputs: &[Tensor<S>]) -> Result<f64>;

    /// One gradient buffer per input, same length as the input.
    fn gradient(&self, inputs: &[Tensor<S>]) -> Result<Vec<Vec<S>>>;
}

/// Adapts a graph-building closure into a [`Differentiable`]. The closure
/// receives one leaf per input and returns a scalar node.
pub struct GraphFn<F>(pub F);

impl<S, F> Differentiable<S> for GraphFn<F>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[Var]) -> Result<Var>,
{
    fn value(&self, inputs: &[Tensor<S>]) -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = (self.0)(&mut g, &vars)?;
        Ok(g.value(out).item().to_f64_lossless())
    }

    fn gradient(&self, inputs: &[Tensor<S>]) -> Result<Vec<Vec<S>>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_requires_grad(true))).collect();
        let out = (self.0)(&mut g, &vars)?;
        g.backward(out)?;
        Ok(vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| vec![S::zero(); t.len()]))
            .collect())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor so near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Checks at most this many coordinates per input (sampled by `seed`).
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl GradCheckConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self { step: 1e-5, tolerance, floor: 1e-3, max_coords_per_input: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradFailure {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub pass: bool,
    pub failures: Vec<GradFailure>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn grad_check<S, F>(f: &F, inputs: &[Tensor<S>], config: &GradCheckConfig) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Differentiable<S> + ?Sized,
{
    let analytic = f.gradient(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work: Vec<Tensor<S>> = inputs.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, checked: 0, pass: true, failures: Vec::new() };
    let h = config.step;

    for (which, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match config.max_coords_per_input {
            Some(cap) if cap < input.len() => {
                let mut picked = sample(&mut rng, input.len(), cap).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..input.len()).collect(),
        };
        for idx in coords {
            let original = input.data()[idx];
            let base = original.to_f64_lossless();
            work[which].data_mut()[idx] = S::from_f64_lossy(base + h);
            let plus = f.value(&work)?;
            work[which].data_mut()[idx] = S::from_f64_lossy(base - h);
            let minus = f.value(&work)?;
            work[which].data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[which][idx].to_f64_lossless();
            let err = relative_error(a, numeric, config.floor);
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(err);
            if err >= config.tolerance || !err.is_finite() {
                report.pass = false;
                report.failures.push(GradFailure { input: which, index: idx, analytic: a, numeric, rel_err: err });
            }
        }
    }
    Ok(report)
}
