//! Adam with a warm-up / exponential-decay learning-rate schedule.

use super::model::MetricModel;
use super::scalar::Scalar;

/// `lr(t) = base · min(t / warmup_steps, 1) · decay_rate^(max(t − warmup_steps, 0) / decay_steps)`
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: u64,
    pub decay_rate: f64,
    pub decay_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 1e-3,
            warmup_steps: 500,
            decay_rate: 0.5,
            decay_steps: 5000,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, t: u64) -> f64 {
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            (t as f64 / self.warmup_steps as f64).min(1.0)
        };
        let after = t.saturating_sub(self.warmup_steps) as f64;
        let decay = if self.decay_steps == 0 {
            1.0
        } else {
            self.decay_rate.powf(after / self.decay_steps as f64)
        };
        self.base * warm * decay
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update of a parameter array at step `t >= 1`.
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i].as_f64();
        let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * g * g;
        m[i] = T::of(mi);
        v[i] = T::of(vi);
        let step = lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
        if step != 0.0 {
            param[i] = T::of(param[i].as_f64() - step);
        }
    }
}

/// Optimizer step counter and moment estimates, one array per parameter
/// array of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    pub schedule: LrSchedule,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &MetricModel<T>, schedule: LrSchedule) -> Self {
        let zeros: Vec<Vec<T>> = model
            .param_arrays()
            .iter()
            .map(|(_, _, a)| vec![T::zero(); a.len()])
            .collect();
        Self {
            config: AdamConfig::default(),
            schedule,
            state: AdamState {
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
        }
    }

    pub fn with_state(mut self, state: AdamState<T>) -> Self {
        self.state = state;
        self
    }

    /// Advance the step counter and update every parameter.
    pub fn step(&mut self, model: &mut MetricModel<T>, grads: &MetricModel<T>) {
        self.state.step += 1;
        let t = self.state.step;
        let lr = self.schedule.lr(t);
        let grad_arrays: Vec<&Vec<T>> = grads.param_arrays().into_iter().map(|x| x.2).collect();
        for (i, p) in model.param_arrays_mut().into_iter().enumerate() {
            adam_update(
                p,
                grad_arrays[i],
                &mut self.state.m[i],
                &mut self.state.v[i],
                t,
                lr,
                &self.config,
            );
        }
    }
}
