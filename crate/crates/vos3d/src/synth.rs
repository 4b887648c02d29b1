//! Synthetic training clips from static images: a chain of small random
//! affine and piecewise warps applied cumulatively, so consecutive frames
//! mimic video motion. The same chain warps the image (bilinear, edge
//! replication) and the union foreground mask (nearest neighbor, zero fill).

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MaskSequence, VideoTensor};

/// Per-step transform ranges, all symmetric around the identity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TransformSpec {
    /// Rotation half-range in degrees.
    pub rotation_deg: f64,
    /// Translation half-range as a fraction of the image side.
    pub translation_frac: f64,
    /// Multiplicative scale range (lo, hi) containing 1.
    pub scale_range: (f64, f64),
    /// Shear half-range in degrees.
    pub shear_deg: f64,
    /// Control points per axis of the piecewise warp grid; 0 disables it.
    pub piecewise_grid: usize,
    /// Control-point jitter as a fraction of the grid cell size.
    pub piecewise_jitter_frac: f64,
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec {
            rotation_deg: 10.0,
            translation_frac: 0.05,
            scale_range: (0.95, 1.05),
            shear_deg: 5.0,
            piecewise_grid: 4,
            piecewise_jitter_frac: 0.02,
        }
    }
}

impl TransformSpec {
    /// All ranges collapsed to the identity.
    pub fn identity() -> Self {
        TransformSpec {
            rotation_deg: 0.0,
            translation_frac: 0.0,
            scale_range: (1.0, 1.0),
            shear_deg: 0.0,
            piecewise_grid: 0,
            piecewise_jitter_frac: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation_deg < 0.0 || self.translation_frac < 0.0 || self.shear_deg < 0.0 {
            return Err(Error::config("transform ranges must be non-negative"));
        }
        let (lo, hi) = self.scale_range;
        if !(lo <= 1.0 && 1.0 <= hi) || lo <= 0.0 {
            return Err(Error::config("scale range must straddle 1"));
        }
        if self.piecewise_grid == 1 {
            return Err(Error::config("piecewise grid needs at least 2 points per axis"));
        }
        if self.piecewise_jitter_frac < 0.0 || self.piecewise_jitter_frac >= 0.5 {
            return Err(Error::config("piecewise jitter must lie in [0, 0.5) of a cell"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub clip_length: usize,
    pub per_step: TransformSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { clip_length: 8, per_step: TransformSpec::default() }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_length == 0 {
            return Err(Error::config("clip length must be >= 1"));
        }
        self.per_step.validate()
    }
}

/// Row-major 3x3 matrix acting on homogeneous (x, y, 1) points.
pub type Mat3 = [[f64; 3]; 3];

pub fn mat_identity() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

pub fn mat_apply(m: &Mat3, x: f64, y: f64) -> (f64, f64) {
    (
        m[0][0] * x + m[0][1] * y + m[0][2],
        m[1][0] * x + m[1][1] * y + m[1][2],
    )
}

fn translate(tx: f64, ty: f64) -> Mat3 {
    [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]
}

fn rotate(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn shear_x(k: f64) -> Mat3 {
    [[1.0, k, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn scale(s: f64) -> Mat3 {
    [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, 1.0]]
}

/// Displacement field defined on a coarse control grid, bilinearly
/// interpolated between control points.
#[derive(Debug, Clone)]
pub struct JitterGrid {
    grid: usize,
    disp: Array3<f64>, // (grid, grid, 2) -> (dx, dy)
    width: f64,
    height: f64,
}

impl JitterGrid {
    fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let g = self.grid;
        let gx = (x / self.width * (g - 1) as f64).clamp(0.0, (g - 1) as f64);
        let gy = (y / self.height * (g - 1) as f64).clamp(0.0, (g - 1) as f64);
        let x0 = gx.floor() as usize;
        let y0 = gy.floor() as usize;
        let x1 = (x0 + 1).min(g - 1);
        let y1 = (y0 + 1).min(g - 1);
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let d00 = self.disp[[y0, x0, k]];
            let d01 = self.disp[[y0, x1, k]];
            let d10 = self.disp[[y1, x0, k]];
            let d11 = self.disp[[y1, x1, k]];
            let top = d00 + fx * (d01 - d00);
            let bot = d10 + fx * (d11 - d10);
            *o = top + fy * (bot - top);
        }
        (out[0], out[1])
    }
}

/// One sampled motion step, stored as a backward map (output to source).
#[derive(Debug, Clone)]
pub struct FrameStep {
    affine_inv: Mat3,
    jitter: Option<JitterGrid>,
}

impl FrameStep {
    pub fn identity() -> Self {
        FrameStep { affine_inv: mat_identity(), jitter: None }
    }

    /// A pure translation by (dx, dy) pixels.
    pub fn translation(dx: f64, dy: f64) -> Self {
        FrameStep { affine_inv: translate(-dx, -dy), jitter: None }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let (sx, sy) = mat_apply(&self.affine_inv, x, y);
        match &self.jitter {
            Some(j) => {
                let (dx, dy) = j.sample(sx, sy);
                (sx + dx, sy + dy)
            }
            None => (sx, sy),
        }
    }

    fn sample(spec: &TransformSpec, width: usize, height: usize, rng: &mut impl Rng) -> Self {
        let deg = std::f64::consts::PI / 180.0;
        let range = |r: &mut dyn rand::RngCore, half: f64| {
            if half == 0.0 {
                0.0
            } else {
                rand::Rng::gen_range(&mut *r, -half..half)
            }
        };
        let theta = range(rng, spec.rotation_deg * deg);
        let phi = range(rng, spec.shear_deg * deg).tan();
        let (lo, hi) = spec.scale_range;
        let s = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let tx = range(rng, spec.translation_frac * width as f64);
        let ty = range(rng, spec.translation_frac * height as f64);
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        // forward: center, scale, shear, rotate, translate, uncenter;
        // the inverse composes the inverted factors in reverse order
        let inv = mat_mul(
            &translate(cx, cy),
            &mat_mul(
                &scale(1.0 / s),
                &mat_mul(
                    &shear_x(-phi),
                    &mat_mul(&rotate(-theta), &mat_mul(&translate(-tx, -ty), &translate(-cx, -cy))),
                ),
            ),
        );
        let jitter = (spec.piecewise_grid >= 2 && spec.piecewise_jitter_frac > 0.0).then(|| {
            let g = spec.piecewise_grid;
            let cell_w = (width as f64 - 1.0) / (g - 1) as f64;
            let cell_h = (height as f64 - 1.0) / (g - 1) as f64;
            let disp = Array3::from_shape_fn((g, g, 2), |(_, _, k)| {
                let cell = if k == 0 { cell_w } else { cell_h };
                let half = spec.piecewise_jitter_frac * cell;
                rng.gen_range(-half..half)
            });
            JitterGrid {
                grid: g,
                disp,
                width: (width as f64 - 1.0).max(1.0),
                height: (height as f64 - 1.0).max(1.0),
            }
        });
        FrameStep { affine_inv: inv, jitter }
    }
}

/// Backward map from a frame of the clip to the source image: the step maps
/// of all preceding motion steps applied innermost-last-step-first.
#[derive(Debug, Clone, Default)]
pub struct ComposedTransform {
    steps: Vec<FrameStep>,
}

impl ComposedTransform {
    pub fn identity() -> Self {
        ComposedTransform { steps: Vec::new() }
    }

    pub fn then(&self, step: FrameStep) -> Self {
        let mut steps = self.steps.clone();
        steps.push(step);
        ComposedTransform { steps }
    }

    pub fn is_identity(&self) -> bool {
        self.steps.is_empty()
    }

    /// Source-image coordinates for output pixel center (x, y).
    pub fn source_of(&self, x: f64, y: f64) -> (f64, f64) {
        let mut p = (x, y);
        for step in self.steps.iter().rev() {
            p = step.map(p.0, p.1);
        }
        p
    }
}

/// Sample the cumulative transform chain for one clip. Entry 0 is the
/// identity; entry i composes i motion steps.
pub fn sample_transform_chain(
    cfg: &SynthConfig,
    width: usize,
    height: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ComposedTransform>> {
    cfg.validate()?;
    let mut chain = Vec::with_capacity(cfg.clip_length);
    let mut current = ComposedTransform::identity();
    chain.push(current.clone());
    for _ in 1..cfg.clip_length {
        current = current.then(FrameStep::sample(&cfg.per_step, width, height, rng));
        chain.push(current.clone());
    }
    Ok(chain)
}

/// Elementwise OR of instance masks into a single foreground mask.
pub fn union_instance_masks(instances: &[Array2<u8>]) -> Result<Array2<u8>> {
    let first = instances
        .first()
        .ok_or_else(|| Error::invalid("at least one instance mask required"))?;
    let dims = first.dim();
    let mut out = Array2::<u8>::zeros(dims);
    for m in instances {
        if m.dim() != dims {
            return Err(Error::invalid(format!(
                "instance mask shape {:?} differs from {:?}",
                m.dim(),
                dims
            )));
        }
        out.zip_mut_with(m, |o, &v| *o |= u8::from(v != 0));
    }
    Ok(out)
}

/// Bilinear sample with edge replication.
fn warp_image_frame(image: &Array3<f64>, tf: &ComposedTransform) -> Array3<f64> {
    let (h, w, c) = image.dim();
    if tf.is_identity() {
        return image.clone();
    }
    Array3::from_shape_fn((h, w, c), |(i, j, ch)| {
        let (sx, sy) = tf.source_of(j as f64, i as f64);
        let x = sx.clamp(0.0, (w - 1) as f64);
        let y = sy.clamp(0.0, (h - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = image[[y0, x0, ch]] + fx * (image[[y0, x1, ch]] - image[[y0, x0, ch]]);
        let bot = image[[y1, x0, ch]] + fx * (image[[y1, x1, ch]] - image[[y1, x0, ch]]);
        top + fy * (bot - top)
    })
}

/// Nearest-neighbor sample; out-of-bounds source positions become background.
fn warp_mask_frame(mask: &Array2<u8>, tf: &ComposedTransform) -> Array2<u8> {
    let (h, w) = mask.dim();
    if tf.is_identity() {
        return mask.clone();
    }
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (sx, sy) = tf.source_of(j as f64, i as f64);
        let x = sx.round();
        let y = sy.round();
        if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
            return 0;
        }
        mask[[y as usize, x as usize]]
    })
}

/// Warp an image and its foreground mask through a transform chain.
pub fn warp_clip(
    image: &Array3<f64>,
    mask: &Array2<u8>,
    chain: &[ComposedTransform],
) -> Result<(VideoTensor, MaskSequence)> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::invalid("image must have 3 channels"));
    }
    if mask.dim() != (h, w) {
        return Err(Error::invalid("image and mask sizes differ"));
    }
    let t = chain.len();
    let mut frames = Array4::<f64>::zeros((t, h, w, 3));
    let mut masks = Array3::<u8>::zeros((t, h, w));
    for (i, tf) in chain.iter().enumerate() {
        frames
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&warp_image_frame(image, tf));
        masks
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&warp_mask_frame(mask, tf));
    }
    Ok((VideoTensor::new(frames)?, MaskSequence::new(masks)?))
}

/// Synthesize one training clip from a static image and its instance masks.
pub fn synthesize_clip(
    image: &Array3<f64>,
    instance_masks: &[Array2<u8>],
    cfg: &SynthConfig,
    rng: &mut impl Rng,
) -> Result<(VideoTensor, MaskSequence)> {
    let mask = union_instance_masks(instance_masks)?;
    if mask.dim() != (image.dim().0, image.dim().1) {
        return Err(Error::invalid("image and mask sizes differ"));
    }
    if mask.iter().all(|&v| v == 0) {
        log::warn!("synthesizing an all-background clip: union mask is empty");
    }
    let chain = sample_transform_chain(cfg, image.dim().1, image.dim().0, rng)?;
    warp_clip(image, &mask, &chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn test_image(h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((h, w, 3), |(i, j, c)| (i * 17 + j * 3 + c * 31) as f64 % 255.0)
    }

    fn square_mask(h: usize, w: usize, top: usize, left: usize, size: usize) -> Array2<u8> {
        Array2::from_shape_fn((h, w), |(i, j)| {
            u8::from(i >= top && i < top + size && j >= left && j < left + size)
        })
    }

    fn mask_area(m: &Array2<u8>) -> usize {
        m.iter().map(|&v| v as usize).sum()
    }

    fn centroid(m: &Array2<u8>) -> (f64, f64) {
        let mut si = 0.0;
        let mut sj = 0.0;
        let mut n = 0.0;
        for ((i, j), &v) in m.indexed_iter() {
            if v != 0 {
                si += i as f64;
                sj += j as f64;
                n += 1.0;
            }
        }
        (si / n, sj / n)
    }

    #[test]
    fn union_of_single_mask_is_identity() {
        let m = square_mask(8, 8, 2, 2, 3);
        assert_eq!(union_instance_masks(&[m.clone()]).unwrap(), m);
    }

    #[test]
    fn union_of_disjoint_masks_adds_areas() {
        let a = square_mask(10, 10, 0, 0, 3); // area 9... use sizes for 10 and 15
        let a = {
            let mut m = a;
            m.fill(0);
            for j in 0..10 {
                m[[0, j]] = 1;
            }
            m
        };
        let b = square_mask(10, 10, 5, 5, 4); // 16 px
        let mut b = b;
        b[[5, 5]] = 0; // 15 px
        assert_eq!(mask_area(&a), 10);
        assert_eq!(mask_area(&b), 15);
        let u = union_instance_masks(&[a, b]).unwrap();
        assert_eq!(mask_area(&u), 25);
    }

    #[test]
    fn union_of_overlapping_masks_is_idempotent() {
        let m = square_mask(8, 8, 1, 1, 4);
        let u = union_instance_masks(&[m.clone(), m.clone()]).unwrap();
        assert_eq!(u, m);
    }

    #[test]
    fn union_rejects_shape_mismatch() {
        let a = square_mask(8, 8, 0, 0, 2);
        let b = square_mask(9, 8, 0, 0, 2);
        assert!(matches!(
            union_instance_masks(&[a, b]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_ranges_give_identity_chain() {
        let cfg = SynthConfig { clip_length: 6, per_step: TransformSpec::identity() };
        let chain = sample_transform_chain(&cfg, 32, 32, &mut rng(1)).unwrap();
        assert_eq!(chain.len(), 6);
        for tf in &chain {
            for &(x, y) in &[(0.0, 0.0), (13.0, 7.0), (31.0, 31.0)] {
                let (sx, sy) = tf.source_of(x, y);
                assert!((sx - x).abs() < 1e-12 && (sy - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translations_compose_linearly() {
        let mut chain = vec![ComposedTransform::identity()];
        for i in 1..5 {
            chain.push(chain[i - 1].then(FrameStep::translation(2.0, 0.0)));
        }
        for (i, tf) in chain.iter().enumerate() {
            let (sx, sy) = tf.source_of(10.0, 10.0);
            assert_eq!(sx, 10.0 - 2.0 * i as f64, "frame {i}");
            assert_eq!(sy, 10.0);
        }
    }

    #[test]
    fn chain_is_deterministic_for_a_seed() {
        let cfg = SynthConfig::default();
        let a = sample_transform_chain(&cfg, 24, 24, &mut rng(9)).unwrap();
        let b = sample_transform_chain(&cfg, 24, 24, &mut rng(9)).unwrap();
        for (ta, tb) in a.iter().zip(b.iter()) {
            for &(x, y) in &[(3.0, 4.0), (20.0, 11.0)] {
                assert_eq!(ta.source_of(x, y), tb.source_of(x, y));
            }
        }
    }

    #[test]
    fn identity_chain_copies_image_and_mask() {
        let img = test_image(16, 16);
        let mask = square_mask(16, 16, 4, 4, 6);
        let cfg = SynthConfig { clip_length: 4, per_step: TransformSpec::identity() };
        let (clip, masks) = synthesize_clip(&img, &[mask.clone()], &cfg, &mut rng(2)).unwrap();
        assert_eq!(clip.dims(), (4, 16, 16));
        for t in 0..4 {
            assert_eq!(masks.frame(t).to_owned(), mask);
            for i in 0..16 {
                for j in 0..16 {
                    assert_eq!(clip.data()[[t, i, j, 0]], img[[i, j, 0]]);
                }
            }
        }
    }

    #[test]
    fn integer_translation_moves_centroid_exactly() {
        let img = test_image(32, 32);
        let mask = square_mask(32, 32, 10, 8, 6);
        let mut chain = vec![ComposedTransform::identity()];
        for i in 1..4 {
            chain.push(chain[i - 1].then(FrameStep::translation(2.0, 0.0)));
        }
        let (_, masks) = warp_clip(&img, &mask, &chain).unwrap();
        let (ci0, cj0) = centroid(&masks.frame(0).to_owned());
        for t in 1..4 {
            let (ci, cj) = centroid(&masks.frame(t).to_owned());
            assert_eq!(ci, ci0, "row centroid must not move");
            assert_eq!(cj, cj0 + 2.0 * t as f64, "col centroid at frame {t}");
        }
    }

    #[test]
    fn warped_masks_stay_binary() {
        let img = test_image(24, 24);
        let mask = square_mask(24, 24, 6, 6, 9);
        let cfg = SynthConfig::default();
        let (_, masks) = synthesize_clip(&img, &[mask], &cfg, &mut rng(3)).unwrap();
        assert!(masks.data().iter().all(|&v| v <= 1));
    }

    #[test]
    fn joint_warp_equals_mask_only_warp() {
        let img = test_image(24, 24);
        let mask = square_mask(24, 24, 5, 7, 8);
        let cfg = SynthConfig::default();
        let chain = sample_transform_chain(&cfg, 24, 24, &mut rng(4)).unwrap();
        let (_, joint) = warp_clip(&img, &mask, &chain).unwrap();
        for (t, tf) in chain.iter().enumerate() {
            let alone = warp_mask_frame(&mask, tf);
            assert_eq!(joint.frame(t).to_owned(), alone);
        }
    }

    #[test]
    fn foreground_area_changes_smoothly() {
        let img = test_image(48, 48);
        let mask = square_mask(48, 48, 14, 14, 20);
        let cfg = SynthConfig {
            clip_length: 8,
            per_step: TransformSpec {
                rotation_deg: 3.0,
                translation_frac: 0.02,
                scale_range: (0.98, 1.02),
                shear_deg: 2.0,
                piecewise_grid: 4,
                piecewise_jitter_frac: 0.02,
            },
        };
        let (_, masks) = synthesize_clip(&img, &[mask], &cfg, &mut rng(5)).unwrap();
        let areas: Vec<f64> = (0..8)
            .map(|t| mask_area(&masks.frame(t).to_owned()) as f64)
            .collect();
        for w in areas.windows(2) {
            // sanity bound: small per-step motion keeps area within 15%
            assert!(
                (w[1] - w[0]).abs() / w[0] < 0.15,
                "area jumped from {} to {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn synthesis_is_reproducible() {
        let img = test_image(20, 20);
        let mask = square_mask(20, 20, 4, 4, 8);
        let cfg = SynthConfig::default();
        let (ca, ma) = synthesize_clip(&img, &[mask.clone()], &cfg, &mut rng(6)).unwrap();
        let (cb, mb) = synthesize_clip(&img, &[mask], &cfg, &mut rng(6)).unwrap();
        assert_eq!(ca.data(), cb.data());
        assert_eq!(ma.data(), mb.data());
    }

    #[test]
    fn empty_union_mask_is_legal() {
        let img = test_image(16, 16);
        let empty = Array2::<u8>::zeros((16, 16));
        let cfg = SynthConfig { clip_length: 3, per_step: TransformSpec::identity() };
        let (_, masks) = synthesize_clip(&img, &[empty], &cfg, &mut rng(7)).unwrap();
        assert!(masks.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn transform_spec_validation() {
        let bad = TransformSpec { scale_range: (1.1, 1.2), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TransformSpec { piecewise_jitter_frac: 0.6, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TransformSpec { piecewise_grid: 1, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
