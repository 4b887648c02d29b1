//! Domain data types shared across the toolkit, plus clip padding and
//! normalization utilities.
//!
//! All dense arrays use the canonical (T, H, W[, C]) layout at API
//! boundaries: frames outermost, channels innermost.

use ndarray::{s, Array3, Array4, Axis};

use crate::error::{Error, Result};

/// A video clip as a dense (T, H, W, 3) float tensor.
///
/// Holds either raw 8-bit intensities in `[0, 255]` (as loaded from disk) or
/// channel-normalized values (after [`normalize_clip`]); both are finite
/// floats, which is all the invariant requires.
#[derive(Debug, Clone)]
pub struct VideoTensor {
    data: Array4<f64>,
    pub frame_rate: Option<f64>,
}

impl VideoTensor {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        let (t, h, w, c) = data.dim();
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::invalid("clip must have at least one frame and one pixel"));
        }
        if c != 3 {
            return Err(Error::invalid(format!("clip must have 3 channels, got {c}")));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("clip contains non-finite values"));
        }
        Ok(VideoTensor { data, frame_rate: None })
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let (t, h, w, _) = self.data.dim();
        (t, h, w)
    }

    /// The sub-clip `[start, start+len)`, without any padding.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<VideoTensor> {
        if start + len > self.frames() || len == 0 {
            return Err(Error::invalid(format!(
                "frame slice {start}..{} out of range for clip of length {}",
                start + len,
                self.frames()
            )));
        }
        let data = self.data.slice(s![start..start + len, .., .., ..]).to_owned();
        Ok(VideoTensor { data, frame_rate: self.frame_rate })
    }
}

/// Binary foreground masks for a clip, (T, H, W) with values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    data: Array3<u8>,
}

impl MaskSequence {
    pub fn new(data: Array3<u8>) -> Result<Self> {
        if !data.iter().all(|&v| v <= 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(MaskSequence { data })
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn frame(&self, t: usize) -> ndarray::ArrayView2<'_, u8> {
        self.data.index_axis(Axis(0), t)
    }

    pub fn matches_clip(&self, clip: &VideoTensor) -> bool {
        self.data.dim() == clip.dims()
    }
}

/// Per-frame, per-pixel foreground probabilities in [0, 1], together with the
/// number of windows that contributed to each frame during merging.
#[derive(Debug, Clone)]
pub struct ProbabilityMaps {
    data: Array3<f64>,
    coverage_counts: Vec<u32>,
}

impl ProbabilityMaps {
    pub fn new(data: Array3<f64>, coverage_counts: Vec<u32>) -> Result<Self> {
        if data.dim().0 != coverage_counts.len() {
            return Err(Error::invalid("coverage count per frame required"));
        }
        if !data.iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        if coverage_counts.iter().any(|&c| c == 0) {
            return Err(Error::invalid("every frame needs coverage >= 1"));
        }
        Ok(ProbabilityMaps { data, coverage_counts })
    }

    /// Probabilities from a single model pass: one covering window per frame.
    pub fn from_single_window(data: Array3<f64>) -> Result<Self> {
        let t = data.dim().0;
        Self::new(data, vec![1; t])
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn coverage_counts(&self) -> &[u32] {
        &self.coverage_counts
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }
}

/// Stride and size metadata for one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelMeta {
    pub spatial_stride: usize,
    pub temporal_stride: usize,
    pub channels: usize,
}

/// One multi-scale feature map produced by the encoder.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub data: Array4<f64>,
    pub meta: LevelMeta,
}

/// The encoder's four multi-scale feature maps, finest (stride 4) first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: Vec<PyramidLevel>,
    /// Dimensions of the clip the pyramid was computed from.
    pub clip_dims: (usize, usize, usize),
}

impl FeaturePyramid {
    pub fn new(levels: Vec<PyramidLevel>, clip_dims: (usize, usize, usize)) -> Result<Self> {
        if levels.len() != 4 {
            return Err(Error::shape(format!("pyramid needs 4 levels, got {}", levels.len())));
        }
        let (t, h, w) = clip_dims;
        let mut prev_stride = 0;
        for (i, level) in levels.iter().enumerate() {
            let m = level.meta;
            if m.spatial_stride <= prev_stride {
                return Err(Error::shape("spatial strides must be strictly increasing"));
            }
            prev_stride = m.spatial_stride;
            let (lt, lh, lw, lc) = level.data.dim();
            let expect_h = h.div_ceil(m.spatial_stride);
            let expect_w = w.div_ceil(m.spatial_stride);
            let expect_t = t.div_ceil(m.temporal_stride);
            if (lt, lh, lw) != (expect_t, expect_h, expect_w) {
                return Err(Error::shape(format!(
                    "level {i}: got {:?}, expected ({expect_t}, {expect_h}, {expect_w}) for strides {:?}",
                    (lt, lh, lw),
                    (m.temporal_stride, m.spatial_stride)
                )));
            }
            if lc != m.channels {
                return Err(Error::shape(format!("level {i}: channel metadata mismatch")));
            }
        }
        if levels.last().unwrap().meta.spatial_stride != 32 {
            return Err(Error::shape("deepest level must sit at spatial stride 32"));
        }
        Ok(FeaturePyramid { levels, clip_dims })
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &PyramidLevel {
        &self.levels[i]
    }
}

/// Extend a clip to `target` frames by repeating its last frame.
pub fn pad_clip_to_length(clip: &VideoTensor, target: usize) -> Result<VideoTensor> {
    let t = clip.frames();
    if target < t {
        return Err(Error::invalid(format!(
            "target length {target} shorter than clip length {t}"
        )));
    }
    if target == t {
        return Ok(clip.clone());
    }
    let (_, h, w, c) = clip.data().dim();
    let mut data = Array4::<f64>::zeros((target, h, w, c));
    data.slice_mut(s![..t, .., .., ..]).assign(clip.data());
    let last = clip.data().index_axis(Axis(0), t - 1).to_owned();
    for i in t..target {
        data.index_axis_mut(Axis(0), i).assign(&last);
    }
    let mut out = VideoTensor::new(data)?;
    out.frame_rate = clip.frame_rate;
    Ok(out)
}

/// Map raw 8-bit intensities to normalized values:
/// `out = (in/255 - mean_c) / std_c` per channel.
pub fn normalize_clip(clip: &VideoTensor, mean: [f64; 3], std: [f64; 3]) -> Result<VideoTensor> {
    if std.iter().any(|&s| s <= 0.0) {
        return Err(Error::invalid("std components must be positive"));
    }
    let mut data = clip.data().clone();
    for (ci, mut lane) in data.axis_iter_mut(Axis(3)).enumerate() {
        let m = mean[ci];
        let s = std[ci];
        lane.mapv_inplace(|v| (v / 255.0 - m) / s);
    }
    let mut out = VideoTensor::new(data)?;
    out.frame_rate = clip.frame_rate;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_clip(t: usize, h: usize, w: usize) -> VideoTensor {
        let data = Array4::from_shape_fn((t, h, w, 3), |(a, b, c, d)| {
            (a * 1000 + b * 100 + c * 10 + d) as f64
        });
        VideoTensor::new(data).unwrap()
    }

    #[test]
    fn pad_is_identity_at_current_length() {
        let clip = ramp_clip(8, 4, 4);
        let padded = pad_clip_to_length(&clip, 8).unwrap();
        assert_eq!(padded.data(), clip.data());
    }

    #[test]
    fn pad_single_frame_clip() {
        let clip = ramp_clip(1, 3, 3);
        let padded = pad_clip_to_length(&clip, 8).unwrap();
        assert_eq!(padded.frames(), 8);
        for i in 0..8 {
            assert_eq!(
                padded.data().index_axis(Axis(0), i),
                clip.data().index_axis(Axis(0), 0)
            );
        }
    }

    #[test]
    fn pad_repeats_last_frame() {
        // five distinct frames padded to eight: [f0..f4, f4, f4, f4]
        let clip = ramp_clip(5, 2, 2);
        let padded = pad_clip_to_length(&clip, 8).unwrap();
        for i in 0..8 {
            let expect = i.min(4);
            assert_eq!(
                padded.data().index_axis(Axis(0), i),
                clip.data().index_axis(Axis(0), expect),
                "frame {i} should copy source frame {expect}"
            );
        }
    }

    #[test]
    fn pad_rejects_short_target() {
        let clip = ramp_clip(5, 2, 2);
        assert!(matches!(
            pad_clip_to_length(&clip, 4),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn normalize_basics() {
        let mut data = Array4::<f64>::zeros((1, 1, 2, 3));
        data[[0, 0, 1, 0]] = 255.0;
        let clip = VideoTensor::new(data).unwrap();
        let normed = normalize_clip(&clip, [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(normed.data()[[0, 0, 0, 0]], 0.0);
        assert_eq!(normed.data()[[0, 0, 1, 0]], 1.0);
    }

    #[test]
    fn normalize_midgray() {
        let data = Array4::<f64>::from_elem((1, 1, 1, 3), 128.0);
        let clip = VideoTensor::new(data).unwrap();
        let normed = normalize_clip(&clip, [0.5; 3], [0.25; 3]).unwrap();
        let expect = (128.0 / 255.0 - 0.5) / 0.25;
        assert!((normed.data()[[0, 0, 0, 0]] - expect).abs() < 1e-12);
        assert!((expect - 0.00784).abs() < 1e-4);
    }

    #[test]
    fn normalize_rejects_zero_std() {
        let clip = ramp_clip(1, 1, 1);
        assert!(matches!(
            normalize_clip(&clip, [0.0; 3], [1.0, 0.0, 1.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn normalize_roundtrip_within_tolerance() {
        let clip = ramp_clip(2, 3, 3);
        let mean = [0.4, 0.5, 0.6];
        let std = [0.2, 0.25, 0.3];
        let normed = normalize_clip(&clip, mean, std).unwrap();
        // algebraic inverse
        let mut rec = normed.data().clone();
        for (ci, mut lane) in rec.axis_iter_mut(Axis(3)).enumerate() {
            lane.mapv_inplace(|v| (v * std[ci] + mean[ci]) * 255.0);
        }
        for (a, b) in rec.iter().zip(clip.data().iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn video_tensor_invariants() {
        assert!(VideoTensor::new(Array4::zeros((0, 2, 2, 3))).is_err());
        assert!(VideoTensor::new(Array4::zeros((1, 2, 2, 4))).is_err());
        let mut bad = Array4::<f64>::zeros((1, 1, 1, 3));
        bad[[0, 0, 0, 0]] = f64::NAN;
        assert!(VideoTensor::new(bad).is_err());
    }

    #[test]
    fn probability_maps_invariants() {
        assert!(ProbabilityMaps::new(Array3::from_elem((2, 2, 2), 0.5), vec![1, 1]).is_ok());
        assert!(ProbabilityMaps::new(Array3::from_elem((2, 2, 2), 1.5), vec![1, 1]).is_err());
        assert!(ProbabilityMaps::new(Array3::from_elem((2, 2, 2), 0.5), vec![1, 0]).is_err());
    }

    #[test]
    fn mask_sequence_invariants() {
        assert!(MaskSequence::new(Array3::from_elem((1, 2, 2), 1u8)).is_ok());
        assert!(MaskSequence::new(Array3::from_elem((1, 2, 2), 2u8)).is_err());
    }
}
