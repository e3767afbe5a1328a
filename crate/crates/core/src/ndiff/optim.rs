use super::{Gradients, Network};

/// RMSprop with a running mean of squared gradients per parameter block.
///
/// ```text
/// mean_sq = decay * mean_sq + (1 - decay) * g^2
/// param  -= learning_rate * g / (sqrt(mean_sq) + epsilon)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    mean_sq: Vec<Vec<f64>>,
}

impl Default for RmspropState {
    fn default() -> Self {
        Self::new(1e-3, 0.9, 1e-8)
    }
}

impl RmspropState {
    pub fn new(learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            decay,
            epsilon,
            mean_sq: Vec::new(),
        }
    }

    pub fn mean_squares(&self) -> &[Vec<f64>] {
        &self.mean_sq
    }

    /// Updates `params[i]` from `grads[i]` for each block.
    pub fn step_blocks(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) {
        if self.mean_sq.len() != params.len() {
            self.mean_sq = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((param, grad), mean_sq) in params.iter_mut().zip(grads).zip(&mut self.mean_sq) {
            for ((p, &g), m) in param.iter_mut().zip(grad).zip(mean_sq.iter_mut()) {
                *m = self.decay * *m + (1.0 - self.decay) * g * g;
                *p -= self.learning_rate * g / (m.sqrt() + self.epsilon);
            }
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        let mut params: Vec<&mut [f64]> = net.parameters_mut().map(|t| t.data_mut()).collect();
        self.step_blocks(&mut params, &grads.blocks);
    }
}
