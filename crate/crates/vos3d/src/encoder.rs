//! Channel-separated 3D ResNet encoder producing a 4-level feature pyramid.
//!
//! Bottleneck blocks follow the reduced-interaction design: the inner 3x3x3
//! convolution is depthwise, and all cross-channel mixing happens in the
//! surrounding 1x1x1 convolutions. With `channel_separated = false` the inner
//! convolution is a dense 3x3x3, which serves as the ablation baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::{Conv3d, Feat};
use crate::nn::norm::{BatchNorm3d, BnCache};
use crate::nn::ops::{self, MaxPool2d};
use crate::nn::param::{join_key, Param, ParamSet};
use crate::types::{FeaturePyramid, LevelMeta, PyramidLevel, VideoTensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Blocks per stage; [3, 8, 36, 3] is the 152-layer variant.
    pub stage_depths: Vec<usize>,
    /// Channel width after the stem; stage widths scale from it.
    pub base_width: usize,
    /// Temporal stride applied by the first block of each stage.
    pub temporal_strides: Vec<usize>,
    /// Temporal stride of the stem convolution.
    pub stem_temporal_stride: usize,
    pub channel_separated: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            stage_depths: vec![3, 8, 36, 3],
            base_width: 64,
            temporal_strides: vec![1, 2, 2, 2],
            stem_temporal_stride: 1,
            channel_separated: true,
        }
    }
}

impl EncoderConfig {
    /// A four-stage, single-block, narrow encoder for tests and demos.
    pub fn tiny(base_width: usize) -> Self {
        EncoderConfig {
            stage_depths: vec![1, 1, 1, 1],
            base_width,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_depths.len() != 4 {
            return Err(Error::config(format!(
                "stage_depths must have 4 entries, got {}",
                self.stage_depths.len()
            )));
        }
        if self.stage_depths.iter().any(|&d| d == 0) {
            return Err(Error::config("stage_depths entries must be >= 1"));
        }
        if self.temporal_strides.len() != 4 {
            return Err(Error::config(format!(
                "temporal_strides must have 4 entries, got {}",
                self.temporal_strides.len()
            )));
        }
        if self.temporal_strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(Error::config("temporal_strides entries must be 1 or 2"));
        }
        if self.stem_temporal_stride != 1 && self.stem_temporal_stride != 2 {
            return Err(Error::config("stem_temporal_stride must be 1 or 2"));
        }
        if self.base_width == 0 {
            return Err(Error::config("base_width must be >= 1"));
        }
        Ok(())
    }

    /// Output channels of each pyramid level.
    pub fn level_channels(&self) -> [usize; 4] {
        let mut ch = [0; 4];
        for (i, c) in ch.iter_mut().enumerate() {
            *c = 4 * (self.base_width << i);
        }
        ch
    }

    /// Cumulative temporal stride of each pyramid level.
    pub fn level_temporal_strides(&self) -> [usize; 4] {
        let mut cum = self.stem_temporal_stride;
        let mut out = [0; 4];
        for i in 0..4 {
            cum *= self.temporal_strides[i];
            out[i] = cum;
        }
        out
    }

    pub fn level_metas(&self) -> [LevelMeta; 4] {
        let ch = self.level_channels();
        let ts = self.level_temporal_strides();
        let mut metas = [LevelMeta { spatial_stride: 0, temporal_stride: 0, channels: 0 }; 4];
        for i in 0..4 {
            metas[i] = LevelMeta {
                spatial_stride: 4 << i,
                temporal_stride: ts[i],
                channels: ch[i],
            };
        }
        metas
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BottleneckSpec {
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub spatial_stride: usize,
    pub temporal_stride: usize,
    pub channel_separated: bool,
}

impl BottleneckSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mid_channels > self.out_channels {
            return Err(Error::config("mid_channels must not exceed out_channels"));
        }
        if !matches!(self.spatial_stride, 1 | 2) || !matches!(self.temporal_stride, 1 | 2) {
            return Err(Error::config("bottleneck strides must be 1 or 2"));
        }
        Ok(())
    }
}

/// Residual bottleneck: 1x1x1 reduce, (depthwise) 3x3x3, 1x1x1 expand.
pub struct Bottleneck {
    pub spec: BottleneckSpec,
    conv1: Conv3d,
    bn1: BatchNorm3d,
    conv2: Conv3d,
    bn2: BatchNorm3d,
    conv3: Conv3d,
    bn3: BatchNorm3d,
    proj: Option<(Conv3d, BatchNorm3d)>,
}

pub struct BottleneckCache {
    x: Feat,
    r1: Feat,
    r2: Feat,
    bn1: BnCache,
    bn2: BnCache,
    bn3: BnCache,
    proj: Option<BnCache>,
    y: Feat,
}

impl Bottleneck {
    pub fn new(spec: BottleneckSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let stride = (spec.temporal_stride, spec.spatial_stride, spec.spatial_stride);
        let conv1 = Conv3d::new_pointwise(spec.in_channels, spec.mid_channels, (1, 1, 1), false, rng);
        let conv2 = if spec.channel_separated {
            Conv3d::new_depthwise(spec.mid_channels, (3, 3, 3), stride, (1, 1, 1), rng)
        } else {
            Conv3d::new_dense(
                spec.mid_channels,
                spec.mid_channels,
                (3, 3, 3),
                stride,
                (1, 1, 1),
                false,
                rng,
            )
        };
        let conv3 = Conv3d::new_pointwise(spec.mid_channels, spec.out_channels, (1, 1, 1), false, rng);
        let needs_proj =
            spec.in_channels != spec.out_channels || spec.spatial_stride != 1 || spec.temporal_stride != 1;
        let proj = needs_proj.then(|| {
            (
                Conv3d::new_pointwise(spec.in_channels, spec.out_channels, stride, false, rng),
                BatchNorm3d::new(spec.out_channels),
            )
        });
        Ok(Bottleneck {
            spec,
            conv1,
            bn1: BatchNorm3d::new(spec.mid_channels),
            conv2,
            bn2: BatchNorm3d::new(spec.mid_channels),
            conv3,
            bn3: BatchNorm3d::new(spec.out_channels),
            proj,
        })
    }

    pub fn forward_eval(&self, x: &Feat) -> Result<Feat> {
        self.conv1.check_input(x)?;
        let r1 = ops::relu(&self.bn1.forward_eval(&self.conv1.forward(x)));
        let r2 = ops::relu(&self.bn2.forward_eval(&self.conv2.forward(&r1)));
        let v3 = self.bn3.forward_eval(&self.conv3.forward(&r2));
        let res = match &self.proj {
            Some((conv, bn)) => bn.forward_eval(&conv.forward(x)),
            None => x.clone(),
        };
        Ok(ops::relu(&(v3 + res)))
    }

    pub fn forward_train(&mut self, x: &Feat) -> Result<(Feat, BottleneckCache)> {
        self.conv1.check_input(x)?;
        let (v1, bn1) = self.bn1.forward_train(&self.conv1.forward(x));
        let r1 = ops::relu(&v1);
        let (v2, bn2) = self.bn2.forward_train(&self.conv2.forward(&r1));
        let r2 = ops::relu(&v2);
        let (v3, bn3) = self.bn3.forward_train(&self.conv3.forward(&r2));
        let (res, proj_cache) = match &mut self.proj {
            Some((conv, bn)) => {
                let (p, c) = bn.forward_train(&conv.forward(x));
                (p, Some(c))
            }
            None => (x.clone(), None),
        };
        let y = ops::relu(&(v3 + res));
        let cache = BottleneckCache {
            x: x.clone(),
            r1,
            r2,
            bn1,
            bn2,
            bn3,
            proj: proj_cache,
            y: y.clone(),
        };
        Ok((y, cache))
    }

    pub fn backward(&mut self, cache: &BottleneckCache, gout: &Feat) -> Feat {
        let gsum = ops::relu_backward(&cache.y, gout);
        // main branch
        let gv3 = self.bn3.backward(&cache.bn3, &gsum);
        let gr2 = self.conv3.backward(&cache.r2, &gv3);
        let gv2 = self.bn2.backward(&cache.bn2, &ops::relu_backward(&cache.r2, &gr2));
        let gr1 = self.conv2.backward(&cache.r1, &gv2);
        let gv1 = self.bn1.backward(&cache.bn1, &ops::relu_backward(&cache.r1, &gr1));
        let gx_main = self.conv1.backward(&cache.x, &gv1);
        // residual branch
        let gx_res = match (&mut self.proj, &cache.proj) {
            (Some((conv, bn)), Some(c)) => {
                let g = bn.backward(c, &gsum);
                conv.backward(&cache.x, &g)
            }
            _ => gsum,
        };
        gx_main + gx_res
    }
}

impl ParamSet for Bottleneck {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.conv1.visit(&join_key(prefix, "conv1"), f);
        self.bn1.visit(&join_key(prefix, "bn1"), f);
        self.conv2.visit(&join_key(prefix, "conv2"), f);
        self.bn2.visit(&join_key(prefix, "bn2"), f);
        self.conv3.visit(&join_key(prefix, "conv3"), f);
        self.bn3.visit(&join_key(prefix, "bn3"), f);
        if let Some((conv, bn)) = &self.proj {
            conv.visit(&join_key(prefix, "proj_conv"), f);
            bn.visit(&join_key(prefix, "proj_bn"), f);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.conv1.visit_mut(&join_key(prefix, "conv1"), f);
        self.bn1.visit_mut(&join_key(prefix, "bn1"), f);
        self.conv2.visit_mut(&join_key(prefix, "conv2"), f);
        self.bn2.visit_mut(&join_key(prefix, "bn2"), f);
        self.conv3.visit_mut(&join_key(prefix, "conv3"), f);
        self.bn3.visit_mut(&join_key(prefix, "bn3"), f);
        if let Some((conv, bn)) = &mut self.proj {
            conv.visit_mut(&join_key(prefix, "proj_conv"), f);
            bn.visit_mut(&join_key(prefix, "proj_bn"), f);
        }
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ndarray::ArrayD<f64>)) {
        self.bn1.visit_buffers(&join_key(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join_key(prefix, "bn2"), f);
        self.bn3.visit_buffers(&join_key(prefix, "bn3"), f);
        if let Some((_, bn)) = &self.proj {
            bn.visit_buffers(&join_key(prefix, "proj_bn"), f);
        }
    }
    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a mut ndarray::ArrayD<f64>),
    ) {
        self.bn1.visit_buffers_mut(&join_key(prefix, "bn1"), f);
        self.bn2.visit_buffers_mut(&join_key(prefix, "bn2"), f);
        self.bn3.visit_buffers_mut(&join_key(prefix, "bn3"), f);
        if let Some((_, bn)) = &mut self.proj {
            bn.visit_buffers_mut(&join_key(prefix, "proj_bn"), f);
        }
    }
}

/// Forward pass of a single bottleneck with frozen statistics.
pub fn csn_bottleneck_forward(block: &Bottleneck, x: &Feat) -> Result<Feat> {
    block.forward_eval(x)
}

pub struct Encoder {
    pub config: EncoderConfig,
    stem_conv: Conv3d,
    stem_bn: BatchNorm3d,
    pool: MaxPool2d,
    stages: Vec<Vec<Bottleneck>>,
}

pub struct EncoderCache {
    clip: Feat,
    stem_out: Feat,
    stem_bn: BnCache,
    pool_idx: ndarray::Array4<usize>,
    pool_in_dims: (usize, usize, usize, usize),
    blocks: Vec<Vec<BottleneckCache>>,
}

/// Build the channel-separated encoder described by `config`.
pub fn build_encoder(config: &EncoderConfig, rng: &mut impl Rng) -> Result<Encoder> {
    config.validate()?;
    let stem_conv = Conv3d::new_dense(
        3,
        config.base_width,
        (3, 7, 7),
        (config.stem_temporal_stride, 2, 2),
        (1, 3, 3),
        false,
        rng,
    );
    let stem_bn = BatchNorm3d::new(config.base_width);
    let pool = MaxPool2d { kernel: (3, 3), stride: (2, 2), padding: (1, 1) };
    let mut stages = Vec::with_capacity(4);
    let mut in_ch = config.base_width;
    for stage in 0..4 {
        let mid = config.base_width << stage;
        let out = 4 * mid;
        let spatial = if stage == 0 { 1 } else { 2 };
        let mut blocks = Vec::with_capacity(config.stage_depths[stage]);
        for b in 0..config.stage_depths[stage] {
            let first = b == 0;
            let spec = BottleneckSpec {
                in_channels: if first { in_ch } else { out },
                mid_channels: mid,
                out_channels: out,
                spatial_stride: if first { spatial } else { 1 },
                temporal_stride: if first { config.temporal_strides[stage] } else { 1 },
                channel_separated: config.channel_separated,
            };
            blocks.push(Bottleneck::new(spec, rng)?);
        }
        stages.push(blocks);
        in_ch = out;
    }
    Ok(Encoder { config: config.clone(), stem_conv, stem_bn, pool, stages })
}

impl Encoder {
    pub fn level_metas(&self) -> [LevelMeta; 4] {
        self.config.level_metas()
    }

    fn stem_eval(&self, clip: &Feat) -> Feat {
        let y = ops::relu(&self.stem_bn.forward_eval(&self.stem_conv.forward(clip)));
        self.pool.forward_eval(&y)
    }

    pub fn forward_eval(&self, clip: &Feat) -> Result<Vec<Feat>> {
        if clip.dim().0 == 0 || clip.dim().1 == 0 || clip.dim().2 == 0 {
            return Err(Error::invalid("empty clip"));
        }
        let mut x = self.stem_eval(clip);
        let mut levels = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                x = block.forward_eval(&x)?;
            }
            levels.push(x.clone());
        }
        Ok(levels)
    }

    pub fn forward_train(&mut self, clip: &Feat) -> Result<(Vec<Feat>, EncoderCache)> {
        let conv_out = self.stem_conv.forward(clip);
        let (bn_out, stem_bn) = self.stem_bn.forward_train(&conv_out);
        let stem_out = ops::relu(&bn_out);
        let pool_in_dims = stem_out.dim();
        let (mut x, pool_idx) = self.pool.forward_train(&stem_out);
        let mut levels = Vec::with_capacity(4);
        let mut blocks = Vec::with_capacity(4);
        for stage in &mut self.stages {
            let mut caches = Vec::with_capacity(stage.len());
            for block in stage.iter_mut() {
                let (y, c) = block.forward_train(&x)?;
                x = y;
                caches.push(c);
            }
            levels.push(x.clone());
            blocks.push(caches);
        }
        let cache = EncoderCache {
            clip: clip.clone(),
            stem_out,
            stem_bn,
            pool_idx,
            pool_in_dims,
            blocks,
        };
        Ok((levels, cache))
    }

    /// Backpropagate per-level gradients through the stages and the stem.
    pub fn backward(&mut self, cache: &EncoderCache, glevels: [Feat; 4]) -> Feat {
        let [g0, g1, g2, g3] = glevels;
        let mut pending = vec![g0, g1, g2, g3];
        let mut g = pending.pop().unwrap();
        for stage_idx in (0..4).rev() {
            let stage = &mut self.stages[stage_idx];
            let caches = &cache.blocks[stage_idx];
            for (block, c) in stage.iter_mut().rev().zip(caches.iter().rev()) {
                g = block.backward(c, &g);
            }
            if stage_idx > 0 {
                g = g + pending.pop().unwrap();
            }
        }
        let g_stem = self.pool.backward(&cache.pool_idx, &g, cache.pool_in_dims);
        let g_bn = ops::relu_backward(&cache.stem_out, &g_stem);
        let g_conv = self.stem_bn.backward(&cache.stem_bn, &g_bn);
        self.stem_conv.backward(&cache.clip, &g_conv)
    }
}

impl ParamSet for Encoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.stem_conv.visit(&join_key(prefix, "stem.conv"), f);
        self.stem_bn.visit(&join_key(prefix, "stem.bn"), f);
        for (i, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                block.visit(&join_key(prefix, &format!("stage{}.block{b}", i + 1)), f);
            }
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.stem_conv.visit_mut(&join_key(prefix, "stem.conv"), f);
        self.stem_bn.visit_mut(&join_key(prefix, "stem.bn"), f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_mut(&join_key(prefix, &format!("stage{}.block{b}", i + 1)), f);
            }
        }
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ndarray::ArrayD<f64>)) {
        self.stem_bn.visit_buffers(&join_key(prefix, "stem.bn"), f);
        for (i, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                block.visit_buffers(&join_key(prefix, &format!("stage{}.block{b}", i + 1)), f);
            }
        }
    }
    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a mut ndarray::ArrayD<f64>),
    ) {
        self.stem_bn.visit_buffers_mut(&join_key(prefix, "stem.bn"), f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_buffers_mut(&join_key(prefix, &format!("stage{}.block{b}", i + 1)), f);
            }
        }
    }
}

/// Run the encoder and package the stage outputs as a feature pyramid.
pub fn encode(encoder: &Encoder, clip: &VideoTensor) -> Result<FeaturePyramid> {
    let levels = encoder.forward_eval(clip.data())?;
    let metas = encoder.level_metas();
    let pyramid_levels: Vec<PyramidLevel> = levels
        .into_iter()
        .zip(metas.iter())
        .map(|(data, &meta)| PyramidLevel { data, meta })
        .collect();
    FeaturePyramid::new(pyramid_levels, clip.dims())
}

pub use crate::nn::param::count_parameters;
