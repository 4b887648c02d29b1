//! Clip-windowed inference over arbitrary-length videos and the training
//! clip sampler.
//!
//! Videos are split into windows of `clip_len` frames overlapping by
//! `overlap`; per-window probabilities are averaged on overlapping frames.
//! Setting `overlap = clip_len - 1` gives the dense (online) mode.

use ndarray::{s, Array3};
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SegmentationModel;
use crate::nn::ops::sigmoid;
use crate::types::{pad_clip_to_length, MaskSequence, ProbabilityMaps, VideoTensor};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct ClipScheduleConfig {
    /// Window length T_c.
    pub clip_length: usize,
    /// Overlap T_o between consecutive windows.
    pub overlap: usize,
}

impl Default for ClipScheduleConfig {
    fn default() -> Self {
        ClipScheduleConfig { clip_length: 8, overlap: 3 }
    }
}

impl ClipScheduleConfig {
    pub fn new(clip_length: usize, overlap: usize) -> Result<Self> {
        let cfg = ClipScheduleConfig { clip_length, overlap };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dense(clip_length: usize) -> Result<Self> {
        Self::new(clip_length, clip_length.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_length == 0 {
            return Err(Error::config("clip length must be positive"));
        }
        if self.overlap >= self.clip_length {
            return Err(Error::config("overlap must be < clip length"));
        }
        Ok(())
    }
}

/// One inference window: `length` frames starting at `start`, the last
/// `pad_count` of which are repeats of the final video frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPlan {
    pub start: usize,
    pub length: usize,
    pub pad_count: usize,
}

impl WindowPlan {
    /// Number of real (unpadded) frames in this window.
    pub fn real_len(&self) -> usize {
        self.length - self.pad_count
    }
}

/// Window starts form an arithmetic sequence with step `T_c - T_o`; the last
/// window always covers the final frame and is padded if it overruns.
pub fn plan_windows(video_len: usize, cfg: &ClipScheduleConfig) -> Result<Vec<WindowPlan>> {
    cfg.validate()?;
    if video_len == 0 {
        return Err(Error::invalid("video length must be >= 1"));
    }
    let step = cfg.clip_length - cfg.overlap;
    let mut plans = Vec::new();
    let mut start = 0;
    loop {
        let end = start + cfg.clip_length;
        let pad = end.saturating_sub(video_len);
        plans.push(WindowPlan { start, length: cfg.clip_length, pad_count: pad });
        if end >= video_len {
            break;
        }
        start += step;
    }
    Ok(plans)
}

/// Mask availability delay in the near-online regime: `T_c - T_o - 1`.
pub fn worst_case_latency(cfg: &ClipScheduleConfig) -> usize {
    cfg.clip_length - cfg.overlap - 1
}

/// Average per-window probabilities into a full-video map. Padded positions
/// do not contribute; each frame records how many windows covered it.
pub fn merge_window_probabilities(
    plans: &[WindowPlan],
    window_probs: &[ProbabilityMaps],
) -> Result<ProbabilityMaps> {
    if plans.len() != window_probs.len() {
        return Err(Error::invalid(format!(
            "{} plans but {} probability blocks",
            plans.len(),
            window_probs.len()
        )));
    }
    if plans.is_empty() {
        return Err(Error::invalid("cannot merge zero windows"));
    }
    let video_len = plans
        .iter()
        .map(|p| p.start + p.real_len())
        .max()
        .unwrap();
    let (_, h, w) = window_probs[0].data().dim();
    let mut acc = Array3::<f64>::zeros((video_len, h, w));
    let mut counts = vec![0u32; video_len];
    for (plan, probs) in plans.iter().zip(window_probs) {
        let dims = probs.data().dim();
        if dims.0 != plan.length {
            return Err(Error::invalid(format!(
                "window at {} has {} probability frames, expected {}",
                plan.start, dims.0, plan.length
            )));
        }
        if (dims.1, dims.2) != (h, w) {
            return Err(Error::invalid("window probability maps disagree on frame size"));
        }
        for offset in 0..plan.real_len() {
            let f = plan.start + offset;
            let mut dst = acc.slice_mut(s![f, .., ..]);
            dst += &probs.data().slice(s![offset, .., ..]);
            counts[f] += 1;
        }
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::invalid("window plans leave uncovered frames"));
    }
    for f in 0..video_len {
        let mut dst = acc.slice_mut(s![f, .., ..]);
        dst /= counts[f] as f64;
    }
    ProbabilityMaps::new(acc, counts)
}

/// Frame indices for one training clip sampled from a video of length `len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSampleSpec {
    pub start: usize,
    pub video_len: usize,
    pub max_span: usize,
    pub indices: Vec<usize>,
}

/// Draw a training clip: a random start frame, then `clip_len - 1` distinct
/// frames from the following `max_span` frames, sorted. When the remaining
/// range is too short, the last index is repeated.
pub fn sample_training_clip(
    video_len: usize,
    clip_len: usize,
    max_span: usize,
    rng: &mut impl Rng,
) -> Result<TrainingSampleSpec> {
    if clip_len == 0 {
        return Err(Error::config("clip length must be >= 1"));
    }
    if video_len == 0 {
        return Err(Error::invalid("video length must be >= 1"));
    }
    if max_span == 0 {
        return Err(Error::config("max span must be >= 1"));
    }
    let start = rng.gen_range(0..video_len);
    let hi = (start + max_span - 1).min(video_len - 1); // inclusive
    let avail = hi.saturating_sub(start); // frames in (start, hi]
    let need = clip_len - 1;
    let mut rest: Vec<usize> = if avail <= need {
        (start + 1..=hi).collect()
    } else {
        let mut picks: Vec<usize> = index_sample(rng, avail, need)
            .into_iter()
            .map(|i| start + 1 + i)
            .collect();
        picks.sort_unstable();
        picks
    };
    let mut indices = Vec::with_capacity(clip_len);
    indices.push(start);
    indices.append(&mut rest);
    while indices.len() < clip_len {
        let last = *indices.last().unwrap();
        indices.push(last);
    }
    Ok(TrainingSampleSpec { start, video_len, max_span, indices })
}

/// Threshold probabilities with a strict `>` rule.
pub fn binarize(probs: &ProbabilityMaps, threshold: f64) -> Result<MaskSequence> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold must lie strictly inside (0, 1), got {threshold}"
        )));
    }
    let data = probs.data().mapv(|p| u8::from(p > threshold));
    MaskSequence::new(data)
}

/// Per-window logits for a clip already padded to the window length.
fn window_probabilities(model: &SegmentationModel, clip: &VideoTensor) -> Result<Array3<f64>> {
    let logits = model.forward_logits(clip)?;
    Ok(logits.mapv(sigmoid))
}

/// Run windowed inference over a full normalized video.
///
/// Windows are evaluated independently (in parallel) and merged in plan
/// order, so results do not depend on evaluation order.
pub fn segment_video(
    model: &SegmentationModel,
    frames: &VideoTensor,
    cfg: &ClipScheduleConfig,
    threshold: f64,
) -> Result<(ProbabilityMaps, MaskSequence)> {
    let video_len = frames.frames();
    let plans = plan_windows(video_len, cfg)?;
    let window_probs: Vec<ProbabilityMaps> = plans
        .par_iter()
        .map(|plan| -> Result<ProbabilityMaps> {
            let real = frames.slice_frames(plan.start, plan.real_len())?;
            let clip = pad_clip_to_length(&real, plan.length)?;
            let probs = window_probabilities(model, &clip)?;
            ProbabilityMaps::from_single_window(probs)
        })
        .collect::<Result<Vec<_>>>()?;
    let merged = merge_window_probabilities(&plans, &window_probs)?;
    let masks = binarize(&merged, threshold)?;
    Ok((merged, masks))
}
