//! Decoder: a bridge module on the deepest pyramid level followed by three
//! refinement steps and a single-channel head.
//!
//! The global-convolution bridge (GC3D) factorizes a k x k spatial kernel
//! into two summed branches of row and column convolutions with unit temporal
//! extent. The refinement module (RF3D) applies paired 3x3x3 convolutions
//! around trilinear upsampling and addition of the matching encoder feature.

use ndarray::{concatenate, s, Array3, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::{Conv3d, Feat};
use crate::nn::norm::{BatchNorm3d, BnCache};
use crate::nn::ops;
use crate::nn::param::{join_key, Param, ParamSet};
use crate::types::FeaturePyramid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeKind {
    Gc3d,
    C3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineKind {
    Rf3d,
    Upsample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GC3DConfig {
    /// Spatial kernel size; must be odd. Temporal extent is fixed at 1.
    pub k: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl GC3DConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k % 2 == 0 || self.k == 0 {
            return Err(Error::config(format!("gc3d kernel must be odd, got {}", self.k)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("gc3d channel counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub bridge: BridgeKind,
    pub refine: RefineKind,
    /// Widths of the bridge output and the three refinement outputs.
    pub channels: Vec<usize>,
    pub gc3d_kernel: usize,
    pub final_upsample_factor: usize,
    /// 1 emits sigmoid logits; 2 emits a foreground/background pair whose
    /// softmax equals the sigmoid of the logit difference.
    pub head_channels: usize,
    /// Optional residual of two spatial convolutions after each GC3D branch
    /// merge, mirroring the boundary-refinement block of the 2D design.
    pub gc3d_boundary_residual: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            bridge: BridgeKind::Gc3d,
            refine: RefineKind::Rf3d,
            channels: vec![256, 128, 64, 32],
            gc3d_kernel: 7,
            final_upsample_factor: 4,
            head_channels: 1,
            gc3d_boundary_residual: false,
        }
    }
}

impl DecoderConfig {
    pub fn tiny(width: usize) -> Self {
        DecoderConfig {
            channels: vec![width * 4, width * 2, width, width],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != 4 {
            return Err(Error::config(format!(
                "decoder needs 4 channel widths (bridge + 3 refinements), got {}",
                self.channels.len()
            )));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("decoder channel widths must be positive"));
        }
        if self.gc3d_kernel % 2 == 0 || self.gc3d_kernel == 0 {
            return Err(Error::config("gc3d_kernel must be odd"));
        }
        if self.final_upsample_factor == 0 {
            return Err(Error::config("final_upsample_factor must be positive"));
        }
        if !matches!(self.head_channels, 1 | 2) {
            return Err(Error::config("head_channels must be 1 or 2"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- GC3D ----

/// Two summed branches of factorized row/column convolutions. The convs carry
/// no bias and no normalization, so the parameter count is exactly
/// `2k(c_in*c_out + c_out^2)`, i.e. `4k*c_in*c_out` when widths match.
pub struct Gc3d {
    pub cfg: GC3DConfig,
    row_a: Conv3d,
    col_a: Conv3d,
    col_b: Conv3d,
    row_b: Conv3d,
    boundary: Option<BoundaryResidual>,
}

pub struct BoundaryResidual {
    conv1: Conv3d,
    conv2: Conv3d,
}

pub struct Gc3dCache {
    x: Feat,
    mid_a: Feat,
    mid_b: Feat,
    boundary: Option<(Feat, Feat)>,
}

impl Gc3d {
    pub fn new(cfg: GC3DConfig, boundary_residual: bool, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.k;
        let pad = (k - 1) / 2;
        let mid = cfg.out_channels;
        fn row(ci: usize, co: usize, k: usize, pad: usize, rng: &mut impl Rng) -> Conv3d {
            Conv3d::new_dense(ci, co, (1, k, 1), (1, 1, 1), (0, pad, 0), false, rng)
        }
        fn col(ci: usize, co: usize, k: usize, pad: usize, rng: &mut impl Rng) -> Conv3d {
            Conv3d::new_dense(ci, co, (1, 1, k), (1, 1, 1), (0, 0, pad), false, rng)
        }
        let boundary = boundary_residual.then(|| BoundaryResidual {
            conv1: Conv3d::new_dense(
                mid,
                mid,
                (1, 3, 3),
                (1, 1, 1),
                (0, 1, 1),
                false,
                rng,
            ),
            conv2: Conv3d::new_dense(
                mid,
                mid,
                (1, 3, 3),
                (1, 1, 1),
                (0, 1, 1),
                false,
                rng,
            ),
        });
        Ok(Gc3d {
            cfg,
            row_a: row(cfg.in_channels, mid, k, pad, rng),
            col_a: col(mid, cfg.out_channels, k, pad, rng),
            col_b: col(cfg.in_channels, mid, k, pad, rng),
            row_b: row(mid, cfg.out_channels, k, pad, rng),
            boundary,
        })
    }

    pub fn forward(&self, x: &Feat) -> Result<Feat> {
        self.row_a.check_input(x)?;
        let a = self.col_a.forward(&self.row_a.forward(x));
        let b = self.row_b.forward(&self.col_b.forward(x));
        let mut y = a + b;
        if let Some(br) = &self.boundary {
            y = &y + &br.conv2.forward(&ops::relu(&br.conv1.forward(&y)));
        }
        Ok(y)
    }

    pub fn forward_train(&self, x: &Feat) -> Result<(Feat, Gc3dCache)> {
        self.row_a.check_input(x)?;
        let mid_a = self.row_a.forward(x);
        let a = self.col_a.forward(&mid_a);
        let mid_b = self.col_b.forward(x);
        let b = self.row_b.forward(&mid_b);
        let mut y = a + b;
        let boundary = if let Some(br) = &self.boundary {
            let pre = y.clone();
            let r = ops::relu(&br.conv1.forward(&pre));
            y = &y + &br.conv2.forward(&r);
            Some((pre, r))
        } else {
            None
        };
        Ok((y, Gc3dCache { x: x.clone(), mid_a, mid_b, boundary }))
    }

    pub fn backward(&mut self, cache: &Gc3dCache, gout: &Feat) -> Feat {
        let g = match (&mut self.boundary, &cache.boundary) {
            (Some(br), Some((pre, r))) => {
                let g_branch = br.conv2.backward(r, gout);
                let g_relu = ops::relu_backward(r, &g_branch);
                gout + &br.conv1.backward(pre, &g_relu)
            }
            _ => gout.clone(),
        };
        let g_mid_a = self.col_a.backward(&cache.mid_a, &g);
        let gx_a = self.row_a.backward(&cache.x, &g_mid_a);
        let g_mid_b = self.row_b.backward(&cache.mid_b, &g);
        let gx_b = self.col_b.backward(&cache.x, &g_mid_b);
        gx_a + gx_b
    }
}

impl ParamSet for Gc3d {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.row_a.visit(&join_key(prefix, "row_a"), f);
        self.col_a.visit(&join_key(prefix, "col_a"), f);
        self.col_b.visit(&join_key(prefix, "col_b"), f);
        self.row_b.visit(&join_key(prefix, "row_b"), f);
        if let Some(br) = &self.boundary {
            br.conv1.visit(&join_key(prefix, "boundary.conv1"), f);
            br.conv2.visit(&join_key(prefix, "boundary.conv2"), f);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.row_a.visit_mut(&join_key(prefix, "row_a"), f);
        self.col_a.visit_mut(&join_key(prefix, "col_a"), f);
        self.col_b.visit_mut(&join_key(prefix, "col_b"), f);
        self.row_b.visit_mut(&join_key(prefix, "row_b"), f);
        if let Some(br) = &mut self.boundary {
            br.conv1.visit_mut(&join_key(prefix, "boundary.conv1"), f);
            br.conv2.visit_mut(&join_key(prefix, "boundary.conv2"), f);
        }
    }
}

/// Forward pass through a global-convolution module.
pub fn gc3d_forward(gc: &Gc3d, x: &Feat) -> Result<Feat> {
    gc.forward(x)
}

// ------------------------------------------------------------- bridges ----

/// Plain 3x3x3 convolution baseline for the bridge position.
pub struct C3dBridge {
    pub conv: Conv3d,
}

impl C3dBridge {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        C3dBridge {
            conv: Conv3d::new_dense(
                in_channels,
                out_channels,
                (3, 3, 3),
                (1, 1, 1),
                (1, 1, 1),
                false,
                rng,
            ),
        }
    }
}

pub enum Bridge {
    Gc3d(Gc3d),
    C3d(C3dBridge),
}

pub enum BridgeCache {
    Gc3d(Gc3dCache),
    C3d(Feat),
}

impl Bridge {
    fn forward_eval(&self, x: &Feat) -> Result<Feat> {
        match self {
            Bridge::Gc3d(gc) => gc.forward(x),
            Bridge::C3d(c) => {
                c.conv.check_input(x)?;
                Ok(c.conv.forward(x))
            }
        }
    }

    fn forward_train(&self, x: &Feat) -> Result<(Feat, BridgeCache)> {
        match self {
            Bridge::Gc3d(gc) => {
                let (y, cache) = gc.forward_train(x)?;
                Ok((y, BridgeCache::Gc3d(cache)))
            }
            Bridge::C3d(c) => {
                c.conv.check_input(x)?;
                Ok((c.conv.forward(x), BridgeCache::C3d(x.clone())))
            }
        }
    }

    fn backward(&mut self, cache: &BridgeCache, gout: &Feat) -> Feat {
        match (self, cache) {
            (Bridge::Gc3d(gc), BridgeCache::Gc3d(c)) => gc.backward(c, gout),
            (Bridge::C3d(cb), BridgeCache::C3d(x)) => cb.conv.backward(x, gout),
            _ => unreachable!("bridge cache kind mismatch"),
        }
    }
}

impl ParamSet for Bridge {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        match self {
            Bridge::Gc3d(gc) => gc.visit(prefix, f),
            Bridge::C3d(c) => c.conv.visit(&join_key(prefix, "conv"), f),
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        match self {
            Bridge::Gc3d(gc) => gc.visit_mut(prefix, f),
            Bridge::C3d(c) => c.conv.visit_mut(&join_key(prefix, "conv"), f),
        }
    }
}

/// Apply the configured bridge variant to the deepest pyramid level.
pub fn bridge_forward(bridge: &Bridge, x: &Feat) -> Result<Feat> {
    bridge.forward_eval(x)
}

// ---------------------------------------------------------- conv pairs ----

/// Two 3x3x3 convolutions with normalization, an inner activation and an
/// additive skip around the pair. Widths may differ; the skip is then a
/// 1x1x1 projection.
pub struct ConvPair {
    conv1: Conv3d,
    bn1: BatchNorm3d,
    conv2: Conv3d,
    bn2: BatchNorm3d,
    proj: Option<Conv3d>,
    residual: bool,
}

pub struct ConvPairCache {
    x: Feat,
    r1: Feat,
    bn1: BnCache,
    bn2: BnCache,
}

impl ConvPair {
    fn new(in_ch: usize, out_ch: usize, residual: bool, rng: &mut impl Rng) -> Self {
        ConvPair {
            conv1: Conv3d::new_dense(in_ch, out_ch, (3, 3, 3), (1, 1, 1), (1, 1, 1), false, rng),
            bn1: BatchNorm3d::new(out_ch),
            conv2: Conv3d::new_dense(out_ch, out_ch, (3, 3, 3), (1, 1, 1), (1, 1, 1), false, rng),
            bn2: BatchNorm3d::new(out_ch),
            proj: (residual && in_ch != out_ch)
                .then(|| Conv3d::new_pointwise(in_ch, out_ch, (1, 1, 1), false, rng)),
            residual,
        }
    }

    fn skip_eval(&self, x: &Feat) -> Option<Feat> {
        if !self.residual {
            return None;
        }
        Some(match &self.proj {
            Some(p) => p.forward(x),
            None => x.clone(),
        })
    }

    fn forward_eval(&self, x: &Feat) -> Result<Feat> {
        self.conv1.check_input(x)?;
        let r1 = ops::relu(&self.bn1.forward_eval(&self.conv1.forward(x)));
        let mut y = self.bn2.forward_eval(&self.conv2.forward(&r1));
        if let Some(skip) = self.skip_eval(x) {
            y = y + skip;
        } else {
            y = ops::relu(&y);
        }
        Ok(y)
    }

    fn forward_train(&mut self, x: &Feat) -> Result<(Feat, ConvPairCache)> {
        self.conv1.check_input(x)?;
        let (v1, bn1) = self.bn1.forward_train(&self.conv1.forward(x));
        let r1 = ops::relu(&v1);
        let (v2, bn2) = self.bn2.forward_train(&self.conv2.forward(&r1));
        let y = if self.residual {
            match &self.proj {
                Some(p) => v2 + p.forward(x),
                None => v2 + x,
            }
        } else {
            ops::relu(&v2)
        };
        Ok((y, ConvPairCache { x: x.clone(), r1, bn1, bn2 }))
    }

    fn backward(&mut self, cache: &ConvPairCache, gout: &Feat) -> Feat {
        let g_v2 = if self.residual {
            gout.clone()
        } else {
            // non-residual pairs end in relu; recompute its output mask
            let y = {
                let v2 = self.bn2.forward_eval_like_train(&cache.bn2);
                ops::relu(&v2)
            };
            ops::relu_backward(&y, gout)
        };
        let g_bn2 = self.bn2.backward(&cache.bn2, &g_v2);
        let g_r1 = self.conv2.backward(&cache.r1, &g_bn2);
        let g_v1 = self.bn1.backward(&cache.bn1, &ops::relu_backward(&cache.r1, &g_r1));
        let mut gx = self.conv1.backward(&cache.x, &g_v1);
        if self.residual {
            match &mut self.proj {
                Some(p) => gx = gx + p.backward(&cache.x, &g_v2),
                None => gx = gx + &g_v2,
            }
        }
        gx
    }
}

impl BatchNorm3d {
    /// Reconstruct the train-mode output from a cache: `gamma * x_hat + beta`.
    fn forward_eval_like_train(&self, cache: &BnCache) -> Feat {
        let c = self.channels;
        let g = self.gamma.value.as_slice().unwrap();
        let b = self.beta.value.as_slice().unwrap();
        let mut y = cache.x_hat.clone();
        for row in y.as_slice_mut().unwrap().chunks_exact_mut(c) {
            for i in 0..c {
                row[i] = row[i] * g[i] + b[i];
            }
        }
        y
    }
}

impl ParamSet for ConvPair {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.conv1.visit(&join_key(prefix, "conv1"), f);
        self.bn1.visit(&join_key(prefix, "bn1"), f);
        self.conv2.visit(&join_key(prefix, "conv2"), f);
        self.bn2.visit(&join_key(prefix, "bn2"), f);
        if let Some(p) = &self.proj {
            p.visit(&join_key(prefix, "proj"), f);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.conv1.visit_mut(&join_key(prefix, "conv1"), f);
        self.bn1.visit_mut(&join_key(prefix, "bn1"), f);
        self.conv2.visit_mut(&join_key(prefix, "conv2"), f);
        self.bn2.visit_mut(&join_key(prefix, "bn2"), f);
        if let Some(p) = &mut self.proj {
            p.visit_mut(&join_key(prefix, "proj"), f);
        }
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ndarray::ArrayD<f64>)) {
        self.bn1.visit_buffers(&join_key(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join_key(prefix, "bn2"), f);
    }
    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a mut ndarray::ArrayD<f64>),
    ) {
        self.bn1.visit_buffers_mut(&join_key(prefix, "bn1"), f);
        self.bn2.visit_buffers_mut(&join_key(prefix, "bn2"), f);
    }
}

// ----------------------------------------------------------------- RF3D ----

/// Refinement step: conv pair, trilinear upsampling to the skip's grid,
/// addition of the adapted encoder feature, then a second conv pair.
pub struct Rf3d {
    pair1: ConvPair,
    adapt: Conv3d,
    pair2: ConvPair,
    /// Nominal (temporal, spatial) upsample ratios between the two levels.
    pub t_ratio: usize,
    pub s_ratio: usize,
}

pub struct Rf3dCache {
    pair1: ConvPairCache,
    pair2: ConvPairCache,
    skip: Feat,
    r1_dims: (usize, usize, usize, usize),
    up_dims: (usize, usize, usize, usize),
}

impl Rf3d {
    pub fn new(
        in_ch: usize,
        skip_ch: usize,
        out_ch: usize,
        t_ratio: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Rf3d {
            pair1: ConvPair::new(in_ch, out_ch, true, rng),
            adapt: Conv3d::new_pointwise(skip_ch, out_ch, (1, 1, 1), false, rng),
            pair2: ConvPair::new(out_ch, out_ch, true, rng),
            t_ratio,
            s_ratio: 2,
        }
    }

    fn check_ratio(&self, x: &Feat, skip: &Feat) -> Result<()> {
        let (xt, xh, xw, _) = x.dim();
        let (st, sh, sw, _) = skip.dim();
        let ok = |coarse: usize, fine: usize, ratio: usize| fine.div_ceil(ratio) == coarse;
        if !ok(xt, st, self.t_ratio) || !ok(xh, sh, self.s_ratio) || !ok(xw, sw, self.s_ratio) {
            return Err(Error::shape(format!(
                "non-integer upsample ratio: {:?} -> {:?} with ratios ({}, {}, {})",
                (xt, xh, xw),
                (st, sh, sw),
                self.t_ratio,
                self.s_ratio,
                self.s_ratio
            )));
        }
        Ok(())
    }

    pub fn forward_eval(&self, x: &Feat, skip: &Feat) -> Result<Feat> {
        self.check_ratio(x, skip)?;
        let r1 = self.pair1.forward_eval(x)?;
        let up = ops::upsample_trilinear(&r1, (self.t_ratio, self.s_ratio, self.s_ratio));
        let (st, sh, sw, _) = skip.dim();
        let up = ops::crop_to(&up, (st, sh, sw));
        let merged = up + self.adapt.forward(skip);
        self.pair2.forward_eval(&merged)
    }

    pub fn forward_train(&mut self, x: &Feat, skip: &Feat) -> Result<(Feat, Rf3dCache)> {
        self.check_ratio(x, skip)?;
        let (r1, pair1) = self.pair1.forward_train(x)?;
        let r1_dims = r1.dim();
        let up_full = ops::upsample_trilinear(&r1, (self.t_ratio, self.s_ratio, self.s_ratio));
        let up_dims = up_full.dim();
        let (st, sh, sw, _) = skip.dim();
        let up = ops::crop_to(&up_full, (st, sh, sw));
        let merged = up + self.adapt.forward(skip);
        let (y, pair2) = self.pair2.forward_train(&merged)?;
        Ok((y, Rf3dCache { pair1, pair2, skip: skip.clone(), r1_dims, up_dims }))
    }

    pub fn backward(&mut self, cache: &Rf3dCache, gout: &Feat) -> (Feat, Feat) {
        let g_merged = self.pair2.backward(&cache.pair2, gout);
        let g_skip = self.adapt.backward(&cache.skip, &g_merged);
        let g_up_full = ops::crop_backward(&g_merged, cache.up_dims);
        let g_r1 = ops::upsample_trilinear_backward(
            &g_up_full,
            cache.r1_dims,
            (self.t_ratio, self.s_ratio, self.s_ratio),
        );
        let g_x = self.pair1.backward(&cache.pair1, &g_r1);
        (g_x, g_skip)
    }
}

impl ParamSet for Rf3d {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.pair1.visit(&join_key(prefix, "pair1"), f);
        self.adapt.visit(&join_key(prefix, "adapt"), f);
        self.pair2.visit(&join_key(prefix, "pair2"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.pair1.visit_mut(&join_key(prefix, "pair1"), f);
        self.adapt.visit_mut(&join_key(prefix, "adapt"), f);
        self.pair2.visit_mut(&join_key(prefix, "pair2"), f);
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ndarray::ArrayD<f64>)) {
        self.pair1.visit_buffers(&join_key(prefix, "pair1"), f);
        self.pair2.visit_buffers(&join_key(prefix, "pair2"), f);
    }
    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a mut ndarray::ArrayD<f64>),
    ) {
        self.pair1.visit_buffers_mut(&join_key(prefix, "pair1"), f);
        self.pair2.visit_buffers_mut(&join_key(prefix, "pair2"), f);
    }
}

/// Forward pass of a refinement step with frozen statistics.
pub fn rf3d_forward(rf: &Rf3d, x: &Feat, skip: &Feat) -> Result<Feat> {
    rf.forward_eval(x, skip)
}

// ------------------------------------------------- upsampling baseline ----

/// Ablation baseline: two 3x3x3 convolutions, trilinear upsampling, then
/// concatenation with the encoder feature at the finer scale.
pub struct UpsampleRefine {
    pair: ConvPair,
    pub t_ratio: usize,
    pub s_ratio: usize,
    pub out_channels: usize,
}

pub struct UpsampleRefineCache {
    pair: ConvPairCache,
    conv_dims: (usize, usize, usize, usize),
    up_dims: (usize, usize, usize, usize),
    split: usize,
}

impl UpsampleRefine {
    pub fn new(in_ch: usize, skip_ch: usize, width: usize, t_ratio: usize, rng: &mut impl Rng) -> Self {
        UpsampleRefine {
            pair: ConvPair::new(in_ch, width, false, rng),
            t_ratio,
            s_ratio: 2,
            out_channels: width + skip_ch,
        }
    }

    pub fn forward_eval(&self, x: &Feat, skip: &Feat) -> Result<Feat> {
        let y = self.pair.forward_eval(x)?;
        let up = ops::upsample_trilinear(&y, (self.t_ratio, self.s_ratio, self.s_ratio));
        let (st, sh, sw, _) = skip.dim();
        let up = ops::crop_to(&up, (st, sh, sw));
        let cat = concatenate(Axis(3), &[up.view(), skip.view()]).unwrap();
        Ok(cat.as_standard_layout().into_owned())
    }

    pub fn forward_train(&mut self, x: &Feat, skip: &Feat) -> Result<(Feat, UpsampleRefineCache)> {
        let (y, pair) = self.pair.forward_train(x)?;
        let conv_dims = y.dim();
        let up_full = ops::upsample_trilinear(&y, (self.t_ratio, self.s_ratio, self.s_ratio));
        let up_dims = up_full.dim();
        let (st, sh, sw, _) = skip.dim();
        let up = ops::crop_to(&up_full, (st, sh, sw));
        let split = up.dim().3;
        let cat = concatenate(Axis(3), &[up.view(), skip.view()]).unwrap();
        let out = cat.as_standard_layout().into_owned();
        Ok((out, UpsampleRefineCache { pair, conv_dims, up_dims, split }))
    }

    pub fn backward(&mut self, cache: &UpsampleRefineCache, gout: &Feat) -> (Feat, Feat) {
        let g_up = gout.slice(s![.., .., .., ..cache.split]).to_owned();
        let g_skip = gout.slice(s![.., .., .., cache.split..]).to_owned();
        let g_full = ops::crop_backward(&g_up, cache.up_dims);
        let g_conv = ops::upsample_trilinear_backward(
            &g_full,
            cache.conv_dims,
            (self.t_ratio, self.s_ratio, self.s_ratio),
        );
        let g_x = self.pair.backward(&cache.pair, &g_conv);
        (g_x, g_skip)
    }
}

impl ParamSet for UpsampleRefine {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.pair.visit(&join_key(prefix, "pair"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.pair.visit_mut(&join_key(prefix, "pair"), f);
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ndarray::ArrayD<f64>)) {
        self.pair.visit_buffers(&join_key(prefix, "pair"), f);
    }
    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a mut ndarray::ArrayD<f64>),
    ) {
        self.pair.visit_buffers_mut(&join_key(prefix, "pair"), f);
    }
}

pub enum Refine {
    Rf3d(Rf3d),
    Upsample(UpsampleRefine),
}

pub enum RefineCache {
    Rf3d(Rf3dCache),
    Upsample(UpsampleRefineCache),
}

impl Refine {
    pub fn out_channels(&self, configured: usize) -> usize {
        match self {
            Refine::Rf3d(_) => configured,
            Refine::Upsample(u) => u.out_channels,
        }
    }

    fn forward_eval(&self, x: &Feat, skip: &Feat) -> Result<Feat> {
        match self {
            Refine::Rf3d(r) => r.forward_eval(x, skip),
            Refine::Upsample(u) => u.forward_eval(x, skip),
        }
    }

    fn forward_train(&mut self, x: &Feat, skip: &Feat) -> Result<(Feat, RefineCache)> {
        match self {
            Refine::Rf3d(r) => {
                let (y, c) = r.forward_train(x, skip)?;
                Ok((y, RefineCache::Rf3d(c)))
            }
            Refine::Upsample(u) => {
                let (y, c) = u.forward_train(x, skip)?;
                Ok((y, RefineCache::Upsample(c)))
            }
        }
    }

    fn backward(&mut self, cache: &RefineCache, gout: &Feat) -> (Feat, Feat) {
        match (self, cache) {
            (Refine::Rf3d(r), RefineCache::Rf3d(c)) => r.backward(c, gout),
            (Refine::Upsample(u), RefineCache::Upsample(c)) => u.backward(c, gout),
            _ => unreachable!("refine cache kind mismatch"),
        }
    }
}

impl ParamSet for Refine {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        match self {
            Refine::Rf3d(r) => r.visit(prefix, f),
            Refine::Upsample(u) => u.visit(prefix, f),
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        match self {
            Refine::Rf3d(r) => r.visit_mut(prefix, f),
            Refine::Upsample(u) => u.visit_mut(prefix, f),
        }
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ndarray::ArrayD<f64>)) {
        match self {
            Refine::Rf3d(r) => r.visit_buffers(prefix, f),
            Refine::Upsample(u) => u.visit_buffers(prefix, f),
        }
    }
    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a mut ndarray::ArrayD<f64>),
    ) {
        match self {
            Refine::Rf3d(r) => r.visit_buffers_mut(prefix, f),
            Refine::Upsample(u) => u.visit_buffers_mut(prefix, f),
        }
    }
}

// --------------------------------------------------------------- decoder ----

pub struct Decoder {
    pub config: DecoderConfig,
    bridge: Bridge,
    refines: Vec<Refine>,
    head: Conv3d,
    /// Temporal stride of the finest pyramid level, applied by the final
    /// upsampling together with the configured spatial factor.
    pub final_t_factor: usize,
}

pub struct DecoderCache {
    bridge: BridgeCache,
    refines: Vec<RefineCache>,
    head_in: Feat,
    head_dims: (usize, usize, usize, usize),
    up_dims: (usize, usize, usize, usize),
}

/// Build a decoder matched to the given pyramid level metadata.
pub fn build_decoder(
    config: &DecoderConfig,
    metas: &[crate::types::LevelMeta; 4],
    rng: &mut impl Rng,
) -> Result<Decoder> {
    config.validate()?;
    if config.final_upsample_factor != metas[0].spatial_stride {
        return Err(Error::config(format!(
            "final_upsample_factor {} does not match the finest level stride {}",
            config.final_upsample_factor, metas[0].spatial_stride
        )));
    }
    let widths = &config.channels;
    let bridge = match config.bridge {
        BridgeKind::Gc3d => Bridge::Gc3d(Gc3d::new(
            GC3DConfig {
                k: config.gc3d_kernel,
                in_channels: metas[3].channels,
                out_channels: widths[0],
            },
            config.gc3d_boundary_residual,
            rng,
        )?),
        BridgeKind::C3d => Bridge::C3d(C3dBridge::new(metas[3].channels, widths[0], rng)),
    };
    let mut refines = Vec::with_capacity(3);
    let mut in_ch = widths[0];
    for step in 0..3 {
        let skip_level = 2 - step;
        let skip_ch = metas[skip_level].channels;
        let t_ratio = metas[skip_level + 1].temporal_stride / metas[skip_level].temporal_stride;
        let refine = match config.refine {
            RefineKind::Rf3d => {
                Refine::Rf3d(Rf3d::new(in_ch, skip_ch, widths[step + 1], t_ratio, rng))
            }
            RefineKind::Upsample => Refine::Upsample(UpsampleRefine::new(
                in_ch,
                skip_ch,
                widths[step + 1],
                t_ratio,
                rng,
            )),
        };
        in_ch = refine.out_channels(widths[step + 1]);
        refines.push(refine);
    }
    let head = Conv3d::new_dense(
        in_ch,
        config.head_channels,
        (3, 3, 3),
        (1, 1, 1),
        (1, 1, 1),
        true,
        rng,
    );
    Ok(Decoder {
        config: config.clone(),
        bridge,
        refines,
        head,
        final_t_factor: metas[0].temporal_stride,
    })
}

impl Decoder {
    fn head_logits(&self, head_out: Feat) -> Feat {
        // a two-channel softmax head reduces to the logit difference
        if self.config.head_channels == 2 {
            let fg = head_out.slice(s![.., .., .., 1..2]).to_owned();
            let bg = head_out.slice(s![.., .., .., 0..1]).to_owned();
            fg - bg
        } else {
            head_out
        }
    }

    pub fn forward_eval(&self, pyramid: &FeaturePyramid) -> Result<Array3<f64>> {
        let mut x = self.bridge.forward_eval(&pyramid.level(3).data)?;
        for (step, refine) in self.refines.iter().enumerate() {
            let skip = &pyramid.level(2 - step).data;
            x = refine.forward_eval(&x, skip)?;
        }
        let logits = self.head_logits(self.head.forward(&x));
        let f = self.config.final_upsample_factor;
        let up = ops::upsample_trilinear(&logits, (self.final_t_factor, f, f));
        let out = ops::crop_to(&up, pyramid.clip_dims);
        Ok(out.index_axis(Axis(3), 0).to_owned())
    }

    pub fn forward_train(&mut self, pyramid: &FeaturePyramid) -> Result<(Array3<f64>, DecoderCache)> {
        let (mut x, bridge_cache) = self.bridge.forward_train(&pyramid.level(3).data)?;
        let mut refine_caches = Vec::with_capacity(3);
        for (step, refine) in self.refines.iter_mut().enumerate() {
            let skip = &pyramid.level(2 - step).data;
            let (y, c) = refine.forward_train(&x, skip)?;
            refine_caches.push(c);
            x = y;
        }
        let head_in = x;
        let head_out = self.head.forward(&head_in);
        let head_dims = head_out.dim();
        let logits = self.head_logits(head_out);
        let f = self.config.final_upsample_factor;
        let up = ops::upsample_trilinear(&logits, (self.final_t_factor, f, f));
        let up_dims = up.dim();
        let out = ops::crop_to(&up, pyramid.clip_dims);
        let cache = DecoderCache {
            bridge: bridge_cache,
            refines: refine_caches,
            head_in,
            head_dims,
            up_dims,
        };
        Ok((out.index_axis(Axis(3), 0).to_owned(), cache))
    }

    /// Returns per-level gradients (finest first) for the encoder.
    pub fn backward(&mut self, cache: &DecoderCache, glogits: &Array3<f64>) -> [Feat; 4] {
        let (t, h, w) = glogits.dim();
        let g4 = glogits.view().into_shape_with_order((t, h, w, 1)).unwrap().to_owned();
        let g_up = ops::crop_backward(&g4, cache.up_dims);
        let f = self.config.final_upsample_factor;
        let logits_dims = (cache.head_dims.0, cache.head_dims.1, cache.head_dims.2, 1);
        let g_logits = ops::upsample_trilinear_backward(&g_up, logits_dims, (self.final_t_factor, f, f));
        let g_head_out = if self.config.head_channels == 2 {
            let (ht, hh, hw, _) = cache.head_dims;
            let mut g = Array4::<f64>::zeros((ht, hh, hw, 2));
            g.slice_mut(s![.., .., .., 1..2]).assign(&g_logits);
            let neg = g_logits.mapv(|v| -v);
            g.slice_mut(s![.., .., .., 0..1]).assign(&neg);
            g
        } else {
            g_logits
        };
        let mut g = self.head.backward(&cache.head_in, &g_head_out);
        let mut glevels: [Option<Feat>; 4] = [None, None, None, None];
        for step in (0..3).rev() {
            let (gx, gskip) = self.refines[step].backward(&cache.refines[step], &g);
            glevels[2 - step] = Some(gskip);
            g = gx;
        }
        let g_bridge_in = self.bridge.backward(&cache.bridge, &g);
        glevels[3] = Some(g_bridge_in);
        let [a, b, c, d] = glevels;
        [a.unwrap(), b.unwrap(), c.unwrap(), d.unwrap()]
    }
}

impl ParamSet for Decoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.bridge.visit(&join_key(prefix, "bridge"), f);
        for (i, r) in self.refines.iter().enumerate() {
            r.visit(&join_key(prefix, &format!("refine{i}")), f);
        }
        self.head.visit(&join_key(prefix, "head"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.bridge.visit_mut(&join_key(prefix, "bridge"), f);
        for (i, r) in self.refines.iter_mut().enumerate() {
            r.visit_mut(&join_key(prefix, &format!("refine{i}")), f);
        }
        self.head.visit_mut(&join_key(prefix, "head"), f);
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ndarray::ArrayD<f64>)) {
        for (i, r) in self.refines.iter().enumerate() {
            r.visit_buffers(&join_key(prefix, &format!("refine{i}")), f);
        }
    }
    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a mut ndarray::ArrayD<f64>),
    ) {
        for (i, r) in self.refines.iter_mut().enumerate() {
            r.visit_buffers_mut(&join_key(prefix, &format!("refine{i}")), f);
        }
    }
}

/// Refine a feature pyramid into per-frame foreground logits.
pub fn decode(decoder: &Decoder, pyramid: &FeaturePyramid) -> Result<Array3<f64>> {
    decoder.forward_eval(pyramid)
}

// ------------------------------------------- receptive field analytics ----

/// One entry of a layer chain for receptive-field composition.
#[derive(Debug, Clone, Copy)]
pub struct LayerSpec {
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub upsample: (usize, usize, usize),
}

impl LayerSpec {
    pub fn conv(kernel: (usize, usize, usize), stride: (usize, usize, usize)) -> Self {
        LayerSpec { kernel, stride, upsample: (1, 1, 1) }
    }

    pub fn upsample(factor: (usize, usize, usize)) -> Self {
        LayerSpec { kernel: (1, 1, 1), stride: (1, 1, 1), upsample: factor }
    }
}

/// Compose the receptive-field extent of one output element over a chain of
/// layers applied input-to-output. Linear interpolation counts as a two-tap
/// kernel over the pre-upsampling grid.
pub fn effective_receptive_field(chain: &[LayerSpec]) -> (f64, f64, f64) {
    let mut rf = [1.0_f64; 3];
    let mut jump = [1.0_f64; 3];
    for spec in chain {
        let k = [spec.kernel.0, spec.kernel.1, spec.kernel.2];
        let s = [spec.stride.0, spec.stride.1, spec.stride.2];
        let u = [spec.upsample.0, spec.upsample.1, spec.upsample.2];
        for a in 0..3 {
            rf[a] += (k[a] as f64 - 1.0) * jump[a];
            jump[a] *= s[a] as f64;
            if u[a] > 1 {
                rf[a] += jump[a];
                jump[a] /= u[a] as f64;
            }
        }
    }
    (rf[0], rf[1], rf[2])
}
