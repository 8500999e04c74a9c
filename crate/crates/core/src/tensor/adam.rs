use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hyper-parameters of [`Adam`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<S>>,
    second_moment: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    /// Zero moments shaped after `params`.
    pub fn new(config: AdamConfig, params: &[Tensor<S>]) -> Self {
        let zeros: Vec<Vec<S>> = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
        Self { config, step_count: 0, first_moment: zeros.clone(), second_moment: zeros }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<S>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<S>] {
        &self.second_moment
    }

    /// Applies one update using the gradient stored on each parameter.
    pub fn step(&mut self, params: &mut [Tensor<S>]) -> Result<()> {
        let grads: Vec<Vec<S>> = params
            .iter()
            .map(|p| p.grad().map(<[S]>::to_vec).ok_or(Error::EmptyInput("parameter gradient")))
            .collect::<Result<_>>()?;
        self.step_with(params, &grads)
    }

    pub fn step_with(&mut self, params: &mut [Tensor<S>], grads: &[Vec<S>]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, {} tracked",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first_moment[i].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("parameter {} has {} elements, gradient {}", i, p.len(), g.len()),
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.config;
        let b1 = S::from_f64_lossy(c.beta1);
        let b2 = S::from_f64_lossy(c.beta2);
        let one = S::one();
        let correction1 = S::from_f64_lossy(1.0 - c.beta1.powi(t));
        let correction2 = S::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = S::from_f64_lossy(c.learning_rate);
        let eps = S::from_f64_lossy(c.epsilon);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (((theta, &grad), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * grad;
                *v = b2 * *v + (one - b2) * grad * grad;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::from_f64(vec![1], &[v]).unwrap()]
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut params = vec![
            Tensor::<f64>::from_f64(vec![3], &[0.5, -1.0, 2.0]).unwrap(),
            Tensor::<f64>::from_f64(vec![1], &[7.0]).unwrap(),
        ];
        let before = params.clone();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        for _ in 0..3 {
            adam.step_with(&mut params, &[vec![0.0; 3], vec![0.0]]).unwrap();
        }
        assert_eq!(params, before);
        assert!(adam.first_moment().iter().flatten().all(|&v| v == 0.0));
        assert!(adam.second_moment().iter().flatten().all(|&v| v == 0.0));
        assert_eq!(adam.step_count(), 3);
    }

    /// Scalar reference recursion written out by hand.
    fn reference_steps(grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut theta) = (0.0, 0.0, 0.0);
        let mut out = Vec::new();
        for (t, &g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            theta -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            out.push(theta);
        }
        out
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = scalar_param(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step_with(&mut params, &[vec![1.0]]).unwrap();
        let delta = params[0].data()[0];
        assert!((delta + 3e-4).abs() < 1e-7);
        assert_eq!(delta, reference_steps(&[1.0], 3e-4)[0]);
    }

    #[test]
    fn two_unit_steps_stay_near_learning_rate() {
        let mut params = scalar_param(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let reference = reference_steps(&[1.0, 1.0], 3e-4);
        let mut prev = 0.0;
        for r in reference {
            adam.step_with(&mut params, &[vec![1.0]]).unwrap();
            let now = params[0].data()[0];
            assert!(((prev - now) - 3e-4).abs() < 0.01 * 3e-4);
            assert!((now - r).abs() < 1e-15);
            prev = now;
        }
    }

    #[test]
    fn step_reads_stored_gradients() {
        let mut params = scalar_param(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &params);
        assert!(adam.step(&mut params).is_err());
        params[0].set_grad(vec![-2.0]).unwrap();
        adam.step(&mut params).unwrap();
        assert!(params[0].data()[0] > 1.0);
    }

    #[test]
    fn rejects_shape_mismatch_and_nan() {
        let mut params = scalar_param(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &params);
        assert!(adam.step_with(&mut params, &[vec![1.0, 2.0]]).is_err());
        assert!(matches!(
            adam.step_with(&mut params, &[vec![f64::NAN]]),
            Err(Error::NonFinite { .. })
        ));
        assert_eq!(adam.step_count(), 0);
    }
}
