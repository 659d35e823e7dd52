//! ADADELTA per-coordinate step sizes.

use nalgebra::DVector;

use crate::error::{Result, SarError};

/// Decay constants of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdadeltaConfig {
    /// Small constant `alpha` in both the numerator and denominator.
    pub alpha: f64,
    /// Decay `upsilon` of the running averages.
    pub upsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-6,
            upsilon: 0.95,
        }
    }
}

/// Running averages of squared gradients and squared steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub e_grad2: DVector<f64>,
    pub e_dx2: DVector<f64>,
    pub config: AdadeltaConfig,
}

impl AdadeltaState {
    pub fn new(len: usize, config: AdadeltaConfig) -> Self {
        Self {
            e_grad2: DVector::zeros(len),
            e_dx2: DVector::zeros(len),
            config,
        }
    }

    /// Updates the accumulators with `grad` and returns the ascent step.
    pub fn step(&mut self, grad: &DVector<f64>) -> Result<DVector<f64>> {
        if grad.len() != self.e_grad2.len() {
            return Err(SarError::mismatch("optimizer gradient", self.e_grad2.len(), grad.len()));
        }
        let AdadeltaConfig { alpha, upsilon } = self.config;
        let mut step = DVector::zeros(grad.len());
        for i in 0..grad.len() {
            let g = grad[i];
            self.e_grad2[i] = upsilon * self.e_grad2[i] + (1.0 - upsilon) * g * g;
            let rate = ((self.e_dx2[i] + alpha) / (self.e_grad2[i] + alpha)).sqrt();
            let delta = rate * g;
            self.e_dx2[i] = upsilon * self.e_dx2[i] + (1.0 - upsilon) * delta * delta;
            step[i] = delta;
        }
        Ok(step)
    }
}

/// Functional form of [`AdadeltaState::step`].
pub fn adadelta_step(state: &AdadeltaState, grad: &DVector<f64>) -> Result<(DVector<f64>, AdadeltaState)> {
    let mut next = state.clone();
    let step = next.step(grad)?;
    Ok((step, next))
}
