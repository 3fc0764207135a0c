//! Optimizers. State vectors are indexed by parameter visitation order, so
//! an optimizer must stay paired with the network it was created for.

use super::{Param, Sequential};
use crate::nn::Layer;
use ndarray::ArrayD;

/// SGD with classical momentum and decoupled weight decay.
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<ArrayD<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut Sequential) {
        let mut idx = 0;
        let lr = self.lr;
        let momentum = self.momentum;
        let weight_decay = self.weight_decay;
        let velocity = &mut self.velocity;
        net.visit_params(&mut |p: &mut Param| {
            if velocity.len() == idx {
                velocity.push(ArrayD::zeros(p.value.raw_dim()));
            }
            if p.trainable {
                let v = &mut velocity[idx];
                v.zip_mut_with(&p.grad, |vi, gi| *vi = momentum * *vi + gi);
                if weight_decay > 0.0 {
                    p.value.mapv_inplace(|w| w * (1.0 - lr * weight_decay));
                }
                p.value.zip_mut_with(v, |w, vi| *w -= lr * vi);
            }
            idx += 1;
        });
    }
}

/// Adam with bias correction; the GAN pair trains with (0.5, 0.999) betas.
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut Sequential) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        net.visit_params(&mut |p: &mut Param| {
            if m.len() == idx {
                m.push(ArrayD::zeros(p.value.raw_dim()));
                v.push(ArrayD::zeros(p.value.raw_dim()));
            }
            if p.trainable {
                let mi = &mut m[idx];
                let vi = &mut v[idx];
                mi.zip_mut_with(&p.grad, |a, g| *a = b1 * *a + (1.0 - b1) * g);
                vi.zip_mut_with(&p.grad, |a, g| *a = b2 * *a + (1.0 - b2) * g * g);
                let mslice = mi.as_slice().unwrap();
                let vslice = vi.as_slice().unwrap();
                let wslice = p.value.as_slice_mut().unwrap();
                for i in 0..wslice.len() {
                    let mhat = mslice[i] / bc1;
                    let vhat = vslice[i] / bc2;
                    wslice[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
            idx += 1;
        });
    }
}
