//! Encoder-decoder assembly: clips in, per-frame foreground logits out.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{build_decoder, BridgeKind, Decoder, DecoderCache, DecoderConfig, LayerSpec, RefineKind};
use crate::encoder::{build_encoder, Encoder, EncoderCache, EncoderConfig};
use crate::error::Result;
use crate::nn::conv::Feat;
use crate::nn::param::{join_key, Param, ParamSet};
use crate::types::{FeaturePyramid, PyramidLevel, VideoTensor};

/// Channel normalization constants; they travel with every checkpoint so
/// inference is self-describing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        // the convention of the video classification checkpoints this
        // encoder family is usually initialized from
        Normalization {
            mean: [0.43216, 0.394666, 0.37645],
            std: [0.22803, 0.22145, 0.216989],
        }
    }
}

pub struct SegmentationModel {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub normalization: Normalization,
}

pub struct ModelCache {
    encoder: EncoderCache,
    decoder: DecoderCache,
}

/// Build encoder and decoder from their configs with a shared rng.
pub fn build_model(
    encoder_cfg: &EncoderConfig,
    decoder_cfg: &DecoderConfig,
    normalization: Normalization,
    rng: &mut impl Rng,
) -> Result<SegmentationModel> {
    let encoder = build_encoder(encoder_cfg, rng)?;
    let metas = encoder.level_metas();
    let decoder = build_decoder(decoder_cfg, &metas, rng)?;
    Ok(SegmentationModel { encoder, decoder, normalization })
}

impl SegmentationModel {
    /// A small model for tests, demos and fixtures.
    pub fn tiny(width: usize, rng: &mut impl Rng) -> Result<Self> {
        build_model(
            &EncoderConfig::tiny(width),
            &DecoderConfig::tiny(width),
            Normalization::default(),
            rng,
        )
    }

    /// Inference forward pass: (T, H, W) logits at clip resolution.
    pub fn forward_logits(&self, clip: &VideoTensor) -> Result<Array3<f64>> {
        let pyramid = crate::encoder::encode(&self.encoder, clip)?;
        self.decoder.forward_eval(&pyramid)
    }

    pub fn forward_train(&mut self, clip: &VideoTensor) -> Result<(Array3<f64>, ModelCache)> {
        let (levels, enc_cache) = self.encoder.forward_train(clip.data())?;
        let metas = self.encoder.level_metas();
        let pyramid_levels: Vec<PyramidLevel> = levels
            .into_iter()
            .zip(metas.iter())
            .map(|(data, &meta)| PyramidLevel { data, meta })
            .collect();
        let pyramid = FeaturePyramid::new(pyramid_levels, clip.dims())?;
        let (logits, dec_cache) = self.decoder.forward_train(&pyramid)?;
        Ok((logits, ModelCache { encoder: enc_cache, decoder: dec_cache }))
    }

    /// Backpropagate a logit gradient; accumulates into parameter grads.
    pub fn backward(&mut self, cache: &ModelCache, glogits: &Array3<f64>) -> Feat {
        let glevels = self.decoder.backward(&cache.decoder, glogits);
        self.encoder.backward(&cache.encoder, glevels)
    }

    /// The main-path layer chain for receptive-field composition.
    pub fn receptive_field_chain(&self) -> Vec<LayerSpec> {
        let cfg = &self.encoder.config;
        let mut chain = Vec::new();
        chain.push(LayerSpec::conv((3, 7, 7), (cfg.stem_temporal_stride, 2, 2)));
        chain.push(LayerSpec::conv((1, 3, 3), (1, 2, 2)));
        for stage in 0..4 {
            let spatial = if stage == 0 { 1 } else { 2 };
            for block in 0..cfg.stage_depths[stage] {
                let stride = if block == 0 {
                    (cfg.temporal_strides[stage], spatial, spatial)
                } else {
                    (1, 1, 1)
                };
                chain.push(LayerSpec::conv((3, 3, 3), stride));
            }
        }
        let dcfg = &self.decoder.config;
        match dcfg.bridge {
            BridgeKind::Gc3d => {
                let k = dcfg.gc3d_kernel;
                chain.push(LayerSpec::conv((1, k, 1), (1, 1, 1)));
                chain.push(LayerSpec::conv((1, 1, k), (1, 1, 1)));
            }
            BridgeKind::C3d => chain.push(LayerSpec::conv((3, 3, 3), (1, 1, 1))),
        }
        let metas = self.encoder.level_metas();
        for step in 0..3 {
            let skip_level = 2 - step;
            let t_ratio = metas[skip_level + 1].temporal_stride / metas[skip_level].temporal_stride;
            chain.push(LayerSpec::conv((3, 3, 3), (1, 1, 1)));
            chain.push(LayerSpec::conv((3, 3, 3), (1, 1, 1)));
            chain.push(LayerSpec::upsample((t_ratio, 2, 2)));
            if matches!(dcfg.refine, RefineKind::Rf3d) {
                chain.push(LayerSpec::conv((3, 3, 3), (1, 1, 1)));
                chain.push(LayerSpec::conv((3, 3, 3), (1, 1, 1)));
            }
        }
        chain.push(LayerSpec::conv((3, 3, 3), (1, 1, 1)));
        chain.push(LayerSpec::upsample((
            metas[0].temporal_stride,
            dcfg.final_upsample_factor,
            dcfg.final_upsample_factor,
        )));
        chain
    }
}

impl ParamSet for SegmentationModel {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.encoder.visit(&join_key(prefix, "encoder"), f);
        self.decoder.visit(&join_key(prefix, "decoder"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.encoder.visit_mut(&join_key(prefix, "encoder"), f);
        self.decoder.visit_mut(&join_key(prefix, "decoder"), f);
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ndarray::ArrayD<f64>)) {
        self.encoder.visit_buffers(&join_key(prefix, "encoder"), f);
        self.decoder.visit_buffers(&join_key(prefix, "decoder"), f);
    }
    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a mut ndarray::ArrayD<f64>),
    ) {
        self.encoder.visit_buffers_mut(&join_key(prefix, "encoder"), f);
        self.decoder.visit_buffers_mut(&join_key(prefix, "decoder"), f);
    }
}
