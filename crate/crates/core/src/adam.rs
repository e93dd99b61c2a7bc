//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamState {
    /// State for `params` with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &[Tensor], learning_rate: f32) -> Self {
        Self::with_betas(params, learning_rate, 0.9, 0.999, 1e-8).expect("default Adam constants")
    }

    pub fn with_betas(
        params: &[Tensor],
        learning_rate: f32,
        beta1: f32,
        beta2: f32,
        epsilon: f32,
    ) -> Result<Self> {
        let open_unit = |b: f32| b > 0.0 && b < 1.0;
        if !open_unit(beta1) || !open_unit(beta2) || epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "Adam needs 0 < β1, β2 < 1 and ε > 0 (got {beta1}, {beta2}, {epsilon})"
            )));
        }
        Ok(AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f32] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f32] {
        &self.second[index]
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, state for {}",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.numel() != self.first[i].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("parameter {i} is {}, gradient is {}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let correct1 = 1.0 - (self.beta1 as f64).powi(t);
        let correct2 = 1.0 - (self.beta2 as f64).powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        let lr = self.learning_rate as f64;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let shape = p.shape();
            let mut values = std::mem::replace(p, Tensor::scalar(0.0)).into_vec();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((x, &gi), mi), vi) in values.iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi as f64 / correct1;
                let v_hat = *vi as f64 / correct2;
                *x -= (lr * m_hat / (v_hat.sqrt() + self.epsilon as f64)) as f32;
            }
            *p = Tensor::new(shape, values)?;
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn zero_gradient_leaves_everything_at_rest() {
        let shape = Shape::new(1, 1, 2, 2);
        let start = Tensor::from_fn(shape, |i| i as f32);
        let mut params = vec![start.clone()];
        let mut state = AdamState::new(&params, 0.01);
        adam_step(&mut params, &[Tensor::zeros(shape)], &mut state).unwrap();
        assert!(params[0].bit_eq(&start));
        assert!(state.first_moment(0).iter().all(|&m| m == 0.0));
        assert!(state.second_moment(0).iter().all(|&v| v == 0.0));
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let shape = Shape::new(1, 1, 1, 4);
        let grad = Tensor::new(shape, vec![1e-3, -2.0, 50.0, -7e4]).unwrap();
        let mut params = vec![Tensor::zeros(shape)];
        let mut state = AdamState::new(&params, 0.05);
        state.step(&mut params, &[grad.clone()]).unwrap();
        for (x, g) in params[0].data().iter().zip(grad.data()) {
            assert!((x.abs() - 0.05).abs() < 1e-4, "{x}");
            assert_eq!(x.signum(), -g.signum());
        }
    }

    #[test]
    fn rejects_bad_constants_and_shapes() {
        let p = vec![Tensor::zeros(Shape::new(1, 1, 1, 2))];
        assert!(AdamState::with_betas(&p, 0.1, 1.0, 0.999, 1e-8).is_err());
        assert!(AdamState::with_betas(&p, 0.1, 0.9, 0.999, 0.0).is_err());
        let mut params = p.clone();
        let mut state = AdamState::new(&p, 0.1);
        let bad = Tensor::zeros(Shape::new(1, 1, 1, 3));
        assert!(state.step(&mut params, &[bad]).is_err());
    }
}
