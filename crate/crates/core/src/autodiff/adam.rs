//! Adam with bias correction and decoupled weight decay.

use crate::dense::Mat;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied as `p -= lr * weight_decay * p` before the moment
    /// update, never mixed into the gradient.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

struct Slot<S> {
    m: Mat<S>,
    v: Mat<S>,
}

/// One optimizer instance drives a fixed set of parameter slots; callers
/// address slots by the index they registered them under.
pub struct Adam<S> {
    cfg: AdamConfig,
    t: u64,
    slots: Vec<Slot<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        let slots = shapes
            .iter()
            .map(|&(r, c)| Slot {
                m: Mat::zeros(r, c),
                v: Mat::zeros(r, c),
            })
            .collect();
        Adam { cfg, t: 0, slots }
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// Advance the shared step counter. Call once per optimization step,
    /// before updating the step's slots.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, slot: usize, param: &mut Mat<S>, grad: &Mat<S>) {
        assert!(self.t > 0, "begin_step before update");
        let s = &mut self.slots[slot];
        assert_eq!(param.shape(), s.m.shape(), "slot shape");
        assert_eq!(param.shape(), grad.shape(), "grad shape");
        let b1 = S::of(self.cfg.beta1);
        let b2 = S::of(self.cfg.beta2);
        let lr = S::of(self.cfg.lr);
        let eps = S::of(self.cfg.eps);
        let one = S::one();
        let bc1 = one - S::of(self.cfg.beta1.powi(self.t as i32));
        let bc2 = one - S::of(self.cfg.beta2.powi(self.t as i32));
        let wd = S::of(self.cfg.weight_decay);
        for i in 0..param.data().len() {
            let g = grad.data()[i];
            let p = &mut param.data_mut()[i];
            if wd != S::zero() {
                *p = *p - lr * wd * *p;
            }
            let m = &mut s.m.data_mut()[i];
            let v = &mut s.v.data_mut()[i];
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
