use serde::{Deserialize, Serialize};

use super::conv::Conv2d;

/// Gradient buffers for one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

impl ConvGrad {
    pub fn zeros_like(conv: &Conv2d) -> Self {
        ConvGrad {
            w: vec![0.0; conv.weight.len()],
            b: vec![0.0; conv.bias.len()],
        }
    }
}

pub fn zero_grads<'a>(convs: impl IntoIterator<Item = &'a Conv2d>) -> Vec<ConvGrad> {
    convs.into_iter().map(ConvGrad::zeros_like).collect()
}

/// `acc += other`, element-wise over matching layouts.
pub fn accumulate(acc: &mut [ConvGrad], other: &[ConvGrad]) {
    for (a, o) in acc.iter_mut().zip(other) {
        for (x, y) in a.w.iter_mut().zip(&o.w) {
            *x += y;
        }
        for (x, y) in a.b.iter_mut().zip(&o.b) {
            *x += y;
        }
    }
}

pub fn scale(grads: &mut [ConvGrad], factor: f32) {
    for g in grads {
        g.w.iter_mut().chain(g.b.iter_mut()).for_each(|v| *v *= factor);
    }
}

/// Step-decay learning-rate schedule: `lr · gamma^(step / decay_every)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_every: usize,
    pub decay_gamma: f64,
}

impl Schedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        let decays = if self.decay_every == 0 {
            0
        } else {
            step / self.decay_every
        };
        self.learning_rate * self.decay_gamma.powi(decays as i32)
    }
}

/// Adam over a list of convolutions.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<ConvGrad>,
    v: Vec<ConvGrad>,
    /// Element-wise gradient clip applied before the moment update.
    clip: f32,
}

impl Adam {
    pub fn new<'a>(convs: impl IntoIterator<Item = &'a Conv2d> + Clone) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zero_grads(convs.clone()),
            v: zero_grads(convs),
            clip: 10.0,
        }
    }

    pub fn step<'a>(&mut self, convs: impl IntoIterator<Item = &'a mut Conv2d>, grads: &[ConvGrad], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = self.eps as f32;
        let clip = self.clip;
        let update = |p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.clamp(-clip, clip);
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps);
            }
        };
        for (((conv, g), m), v) in convs.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            update(&mut conv.weight, &g.w, &mut m.w, &mut v.w);
            update(&mut conv.bias, &g.b, &mut m.b, &mut v.b);
        }
    }
}
