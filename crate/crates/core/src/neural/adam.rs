use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named parameter block and its gradient, as handed to the optimizer.
pub struct ParamBlock<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Bias-corrected Adam moments, one buffer per parameter block.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Applies one update. Moment buffers are allocated on the first call and
    /// the block layout must stay the same afterwards. Nothing is modified if
    /// any gradient entry is non-finite.
    pub fn step(&mut self, mut blocks: Vec<ParamBlock<'_>>) -> Result<()> {
        for block in &blocks {
            if block.values.len() != block.grad.len() {
                return Err(Error::shape(
                    format!("gradient for {}", block.name),
                    block.values.len(),
                    block.grad.len(),
                ));
            }
            if let Some(pos) = block.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::TrainingAbort(format!(
                    "non-finite gradient in parameter block '{}' at index {pos}",
                    block.name
                )));
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = blocks.iter().map(|b| vec![0.0; b.values.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != blocks.len()
            || self.first_moment.iter().zip(&blocks).any(|(m, b)| m.len() != b.values.len())
        {
            return Err(Error::Contract("parameter block layout changed between Adam steps".into()));
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for ((block, m), v) in blocks
            .iter_mut()
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..block.values.len() {
                let g = block.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                block.values[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(state: &mut AdamState, params: &mut Vec<f64>, grad: &[f64]) -> Result<()> {
        state.step(vec![ParamBlock {
            name: "p".into(),
            values: params.as_mut_slice(),
            grad,
        }])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut state = AdamState::new(AdamConfig::default());
        let mut p = vec![0.3, -1.2];
        for _ in 0..10 {
            run(&mut state, &mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m1 = 0.1, v1 = 0.001; bias correction gives m_hat = v_hat = 1.
        let mut state = AdamState::new(AdamConfig::default());
        let mut p = vec![2.0];
        run(&mut state, &mut p, &[1.0]).unwrap();
        let expected = 2.0 - 1e-4 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let mut state = AdamState::new(AdamConfig::with_learning_rate(1e-3));
        let mut p = vec![0.0, 0.0];
        let mut last = p.clone();
        for _ in 0..2000 {
            last.clone_from(&p);
            run(&mut state, &mut p, &[3.0, -0.5]).unwrap();
        }
        assert!(((last[0] - p[0]) - 1e-3).abs() < 1e-8);
        assert!(((p[1] - last[1]) - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut state = AdamState::new(AdamConfig::default());
        let mut a = vec![1.0];
        let mut b = vec![1.0, 2.0];
        let err = state
            .step(vec![
                ParamBlock { name: "ok".into(), values: &mut a, grad: &[0.5] },
                ParamBlock { name: "decoder.weight".into(), values: &mut b, grad: &[0.1, f64::NAN] },
            ])
            .unwrap_err();
        assert!(err.to_string().contains("decoder.weight"));
        assert_eq!(a, vec![1.0]);
        assert_eq!(state.step_count, 0);
    }
}
