//! Backbone with one 1×1 prediction head per output scale.

use rand::Rng;

use super::backbone::{Backbone, BackboneCache, BackboneConfig};
use super::conv::{Conv2d, ConvCache};
use super::optim::ConvGrad;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadedNet {
    pub backbone: Backbone,
    pub heads: Vec<Conv2d>,
}

pub struct NetCache {
    backbone: BackboneCache,
    heads: Vec<ConvCache>,
}

impl HeadedNet {
    /// `head_channels[s]` outputs at scale `s`; `bias_init(s, channel)` seeds
    /// the head biases (e.g. a low prior for objectness).
    pub fn new<R: Rng + ?Sized>(
        config: BackboneConfig,
        head_channels: &[usize],
        bias_init: impl Fn(usize, usize) -> f32,
        rng: &mut R,
    ) -> Result<Self> {
        let backbone = Backbone::new(config, rng)?;
        let neck = backbone.config.neck_width;
        let heads = head_channels
            .iter()
            .enumerate()
            .map(|(s, &c)| {
                let mut h = Conv2d::new_head(neck, c, rng);
                for (k, b) in h.bias.iter_mut().enumerate() {
                    *b = bias_init(s, k);
                }
                h
            })
            .collect();
        Ok(HeadedNet { backbone, heads })
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> + Clone {
        self.backbone.convs.iter().chain(self.heads.iter())
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv2d> {
        self.backbone.convs.iter_mut().chain(self.heads.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(Conv2d::param_count).sum()
    }

    /// Backbone features per scale.
    pub fn features(&self, x: &Tensor) -> Vec<Tensor> {
        self.backbone.forward(x).0
    }

    /// Raw head outputs for precomputed features.
    pub fn heads_on(&self, features: &[Tensor]) -> Vec<Tensor> {
        self.heads.iter().zip(features).map(|(h, f)| h.forward(f).0).collect()
    }

    pub fn forward(&self, x: &Tensor) -> (Vec<Tensor>, NetCache) {
        let (feats, bcache) = self.backbone.forward(x);
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut caches = Vec::with_capacity(self.heads.len());
        for (h, f) in self.heads.iter().zip(&feats) {
            let (o, c) = h.forward(f);
            outs.push(o);
            caches.push(c);
        }
        (
            outs,
            NetCache {
                backbone: bcache,
                heads: caches,
            },
        )
    }

    /// Gradients laid out like `convs()`.
    pub fn backward(&self, cache: &NetCache, head_grads: &[Tensor]) -> Vec<ConvGrad> {
        let mut grads: Vec<ConvGrad> = self.convs().map(ConvGrad::zeros_like).collect();
        let nb = self.backbone.convs.len();
        let (bgrads, hgrads) = grads.split_at_mut(nb);
        let mut feat_grads = Vec::with_capacity(self.heads.len());
        for (((h, c), g), hg) in self.heads.iter().zip(&cache.heads).zip(head_grads).zip(hgrads.iter_mut()) {
            let fg = h.backward(c, g, &mut hg.w, &mut hg.b, true).expect("input gradient requested");
            feat_grads.push(fg);
        }
        self.backbone.backward(&cache.backbone, &feat_grads, bgrads);
        grads
    }
}
