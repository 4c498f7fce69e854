//! Strided convolutional encoder with top-down feature merging.
//!
//! Stage `s` halves the resolution, so its output stride is `2^(s+1)`. The
//! neck starts from the deepest stage and walks back up to the finest
//! requested stride, adding a 1×1 lateral projection of each stage to the
//! upsampled coarser map and smoothing with a 3×3 convolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{Conv2d, ConvCache};
use super::optim::ConvGrad;
use super::tensor::{leaky_relu_backward, leaky_relu_inplace, upsample_backward, upsample_to, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    /// Channel width of each stride-2 stage.
    pub widths: Vec<usize>,
    /// Stride-1 3×3 convolutions following each downsampling convolution.
    pub extra_convs: usize,
    pub neck_width: usize,
    /// Output strides, each a power of two reached by some stage.
    pub out_strides: Vec<usize>,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.widths.is_empty() || self.neck_width == 0 {
            return Err(Error::invalid("backbone needs input channels, stages and a neck width"));
        }
        if self.out_strides.is_empty() {
            return Err(Error::invalid("backbone needs at least one output stride"));
        }
        for &s in &self.out_strides {
            match self.level_of(s) {
                Some(_) => {}
                None => return Err(Error::invalid(format!("output stride {s} not produced by any stage"))),
            }
        }
        Ok(())
    }

    pub fn max_stride(&self) -> usize {
        1 << self.widths.len()
    }

    /// Stage index producing a given stride.
    pub fn level_of(&self, stride: usize) -> Option<usize> {
        if !stride.is_power_of_two() || stride < 2 {
            return None;
        }
        let level = stride.trailing_zeros() as usize - 1;
        (level < self.widths.len()).then_some(level)
    }

    fn min_level(&self) -> usize {
        self.out_strides.iter().filter_map(|&s| self.level_of(s)).min().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub convs: Vec<Conv2d>,
    stages: Vec<Vec<usize>>,
    /// Lateral 1×1 projection per level from `min_level` to the deepest.
    laterals: Vec<usize>,
    /// 3×3 smoothing per merged level (all but the deepest).
    smooth: Vec<usize>,
}

pub struct BackboneCache {
    stage_caches: Vec<Vec<(ConvCache, Tensor)>>,
    lateral_caches: Vec<ConvCache>,
    smooth_caches: Vec<(ConvCache, Tensor)>,
    /// Neck outputs per level (post-activation), `min_level..=deepest`.
    neck: Vec<Tensor>,
    stage_shapes: Vec<(usize, usize)>,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut stages = Vec::new();
        let mut in_c = config.in_channels;
        for &w in &config.widths {
            let mut idx = vec![convs.len()];
            convs.push(Conv2d::new(in_c, w, 3, 2, rng));
            for _ in 0..config.extra_convs {
                idx.push(convs.len());
                convs.push(Conv2d::new(w, w, 3, 1, rng));
            }
            stages.push(idx);
            in_c = w;
        }
        let min_level = config.min_level();
        let deepest = config.widths.len() - 1;
        let mut laterals = Vec::new();
        for level in min_level..=deepest {
            laterals.push(convs.len());
            convs.push(Conv2d::new(config.widths[level], config.neck_width, 1, 1, rng));
        }
        let mut smooth = Vec::new();
        for _ in min_level..deepest {
            smooth.push(convs.len());
            convs.push(Conv2d::new(config.neck_width, config.neck_width, 3, 1, rng));
        }
        Ok(Backbone {
            config,
            convs,
            stages,
            laterals,
            smooth,
        })
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2d::param_count).sum()
    }

    fn min_level(&self) -> usize {
        self.config.min_level()
    }

    /// Features at each configured output stride, in `out_strides` order.
    pub fn forward(&self, x: &Tensor) -> (Vec<Tensor>, BackboneCache) {
        let mut stage_caches = Vec::with_capacity(self.stages.len());
        let mut stage_shapes = Vec::new();
        let mut feats: Vec<Tensor> = Vec::new();
        let mut cur = x.clone();
        for stage in &self.stages {
            let mut caches = Vec::new();
            for &ci in stage {
                let (mut y, c) = self.convs[ci].forward(&cur);
                leaky_relu_inplace(&mut y);
                caches.push((c, y.clone()));
                cur = y;
            }
            stage_shapes.push((cur.h, cur.w));
            feats.push(cur.clone());
            stage_caches.push(caches);
        }
        let min_level = self.min_level();
        let deepest = self.stages.len() - 1;
        let mut lateral_caches = vec![None; deepest - min_level + 1];
        let mut smooth_caches = vec![None; deepest - min_level];
        let mut neck: Vec<Option<Tensor>> = vec![None; deepest - min_level + 1];

        let (mut top, lc) = self.convs[self.laterals[deepest - min_level]].forward(&feats[deepest]);
        leaky_relu_inplace(&mut top);
        lateral_caches[deepest - min_level] = Some(lc);
        neck[deepest - min_level] = Some(top);
        for level in (min_level..deepest).rev() {
            let k = level - min_level;
            let coarse = neck[k + 1].as_ref().expect("coarser level computed");
            let f = &feats[level];
            let mut merged = upsample_to(coarse, f.h, f.w);
            let (lat, lc) = self.convs[self.laterals[k]].forward(f);
            merged.add_assign(&lat);
            let (mut p, sc) = self.convs[self.smooth[k]].forward(&merged);
            leaky_relu_inplace(&mut p);
            lateral_caches[k] = Some(lc);
            smooth_caches[k] = Some((sc, p.clone()));
            neck[k] = Some(p);
        }
        let neck: Vec<Tensor> = neck.into_iter().map(|t| t.expect("all levels computed")).collect();
        let outs = self
            .config
            .out_strides
            .iter()
            .map(|&s| neck[self.config.level_of(s).expect("validated stride") - min_level].clone())
            .collect();
        (
            outs,
            BackboneCache {
                stage_caches,
                lateral_caches: lateral_caches.into_iter().map(|c| c.expect("lateral")).collect(),
                smooth_caches: smooth_caches.into_iter().map(|c| c.expect("smooth")).collect(),
                neck,
                stage_shapes,
            },
        )
    }

    /// Backpropagates output-feature gradients (same order as `forward`'s
    /// outputs) into `grads`, laid out like `self.convs`.
    pub fn backward(&self, cache: &BackboneCache, out_grads: &[Tensor], grads: &mut [ConvGrad]) {
        let min_level = self.min_level();
        let deepest = self.stages.len() - 1;
        let mut neck_grads: Vec<Option<Tensor>> = vec![None; deepest - min_level + 1];
        for (&s, g) in self.config.out_strides.iter().zip(out_grads) {
            let k = self.config.level_of(s).expect("validated stride") - min_level;
            match &mut neck_grads[k] {
                Some(acc) => acc.add_assign(g),
                slot => *slot = Some(g.clone()),
            }
        }
        let mut stage_grads: Vec<Option<Tensor>> = vec![None; self.stages.len()];
        let add_stage_grad = |level: usize, g: Tensor, sg: &mut Vec<Option<Tensor>>| match &mut sg[level] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        };

        for level in min_level..deepest {
            let k = level - min_level;
            let Some(mut g) = neck_grads[k].take() else {
                continue;
            };
            let (sc, out) = &cache.smooth_caches[k];
            leaky_relu_backward(out, &mut g);
            let ci = self.smooth[k];
            let (gw, gb) = split(&mut grads[ci]);
            let dmerged = self.convs[ci].backward(sc, &g, gw, gb, true).expect("input grad");
            let li = self.laterals[k];
            let (gw, gb) = split(&mut grads[li]);
            let df = self.convs[li]
                .backward(&cache.lateral_caches[k], &dmerged, gw, gb, true)
                .expect("input grad");
            add_stage_grad(level, df, &mut stage_grads);
            let coarse = &cache.neck[k + 1];
            let dcoarse = upsample_backward(&dmerged, coarse.h, coarse.w);
            match &mut neck_grads[k + 1] {
                Some(acc) => acc.add_assign(&dcoarse),
                slot => *slot = Some(dcoarse),
            }
        }
        let k = deepest - min_level;
        if let Some(mut g) = neck_grads[k].take() {
            leaky_relu_backward(&cache.neck[k], &mut g);
            let li = self.laterals[k];
            let (gw, gb) = split(&mut grads[li]);
            let df = self.convs[li]
                .backward(&cache.lateral_caches[k], &g, gw, gb, true)
                .expect("input grad");
            add_stage_grad(deepest, df, &mut stage_grads);
        }

        let mut carry: Option<Tensor> = None;
        for level in (0..self.stages.len()).rev() {
            let mut g = match (stage_grads[level].take(), carry.take()) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(&b);
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => continue,
            };
            debug_assert_eq!((g.h, g.w), cache.stage_shapes[level]);
            let stage = &self.stages[level];
            for (pos, &ci) in stage.iter().enumerate().rev() {
                let (cc, out) = &cache.stage_caches[level][pos];
                leaky_relu_backward(out, &mut g);
                let need_input = !(level == 0 && pos == 0);
                let (gw, gb) = split(&mut grads[ci]);
                match self.convs[ci].backward(cc, &g, gw, gb, need_input) {
                    Some(dx) => g = dx,
                    None => break,
                }
            }
            if level > 0 {
                carry = Some(g);
            }
        }
    }
}

fn split(g: &mut ConvGrad) -> (&mut [f32], &mut [f32]) {
    (&mut g.w, &mut g.b)
}
