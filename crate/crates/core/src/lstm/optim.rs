use super::LstmParams;

/// RMSprop without momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    /// Running mean of squared gradients, one buffer per parameter tensor.
    pub accum: Vec<Vec<f64>>,
    pub rho: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl RmspropState {
    pub const DEFAULT_RHO: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-7;

    pub fn new(learning_rate: f64) -> Self {
        RmspropState {
            accum: Vec::new(),
            rho: Self::DEFAULT_RHO,
            epsilon: Self::DEFAULT_EPSILON,
            learning_rate,
        }
    }

    /// Elementwise `a <- rho a + (1 - rho) g^2`, `p <- p - lr g / (sqrt(a) + eps)`.
    pub fn step_slices(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count");
        if self.accum.is_empty() {
            self.accum = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        let (rho, eps, lr) = (self.rho, self.epsilon, self.learning_rate);
        for ((p, g), a) in params.into_iter().zip(grads).zip(self.accum.iter_mut()) {
            assert_eq!(p.len(), g.len(), "parameter/gradient shape");
            assert_eq!(p.len(), a.len(), "optimizer state shape");
            for ((pv, &gv), av) in p.iter_mut().zip(g).zip(a.iter_mut()) {
                *av = rho * *av + (1.0 - rho) * gv * gv;
                *pv -= lr * gv / (av.sqrt() + eps);
            }
        }
    }
}

pub fn rmsprop_step(params: &mut LstmParams, grads: &LstmParams, state: &mut RmspropState) {
    state.step_slices(params.slices_mut(), grads.slices());
}

/// Rescales `grads` so that their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut LstmParams, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
