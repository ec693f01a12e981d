use crate::error::{shape_err, Result, TceError};

/// One trainable tensor handed to the optimizer, with its learning rate.
pub struct Param<'a> {
    pub value: &'a mut [f64],
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected Adam. Moment buffers are allocated on the first step and
/// must keep the same shapes afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut [Param<'_>], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.value.len() != g.len() {
                return Err(shape_err!(
                    "tensor {i}: {} values but {} gradient entries",
                    p.value.len(),
                    g.len()
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TceError::Numeric(format!("non-finite gradient in tensor {i}")));
            }
        }
        if self.step_count == 0 {
            self.first_moment = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len()
            || self
                .first_moment
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.value.len())
        {
            return Err(shape_err!("parameter shapes changed between optimizer steps"));
        }

        self.step_count += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let lr = p.lr;
            for (((w, &gi), mi), vi) in p.value.iter_mut().zip(g.iter()).zip(m).zip(v) {
                let gi = gi + weight_decay * *w;
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
