//! First-order optimizers over flat parameter vectors.

/// RMSprop with a running mean of squared gradients (`rho`, Keras defaults).
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub lr: f32,
    pub rho: f32,
    pub eps: f32,
    mean_sq: Vec<f32>,
}

impl RmsProp {
    pub fn new(len: usize, lr: f32) -> Self {
        RmsProp {
            lr,
            rho: 0.9,
            eps: 1e-7,
            mean_sq: vec![0.0; len],
        }
    }

    /// Descends `params` along `grads`, restricted to `range`.
    pub fn step_range(&mut self, params: &mut [f32], grads: &[f32], range: std::ops::Range<usize>) {
        for i in range {
            let g = grads[i];
            let m = &mut self.mean_sq[i];
            *m = self.rho * *m + (1.0 - self.rho) * g * g;
            params[i] -= self.lr * g / (m.sqrt() + self.eps);
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.step_range(params, grads, 0..params.len());
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(len: usize, lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

/// Nesterov accelerated gradient in the look-ahead parameterisation.
///
/// The iterate held by the caller is the look-ahead point `z + mu*v`, so the
/// gradient passed to [`Nesterov::step`] is always evaluated at the point
/// whose loss was just measured:
///
/// ```text
/// v'   = mu*v - lr*g
/// z'   = z - mu*v + (1 + mu)*v'
/// ```
#[derive(Clone, Debug)]
pub struct Nesterov {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Nesterov {
    pub fn new(len: usize, lr: f64, momentum: f64) -> Self {
        Nesterov {
            lr,
            momentum,
            velocity: vec![0.0; len],
        }
    }

    pub fn step(&mut self, z: &mut [f64], grad: &[f64]) {
        let mu = self.momentum;
        for ((zi, g), v) in z.iter_mut().zip(grad).zip(self.velocity.iter_mut()) {
            let prev = *v;
            *v = mu * prev - self.lr * g;
            *zi += -mu * prev + (1.0 + mu) * *v;
        }
    }

    pub fn reset(&mut self) {
        self.velocity.fill(0.0);
    }
}
