//! Parameter and runtime measurement harness for a built model.

use std::time::Instant;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SegmentationModel;
use crate::nn::param::count_parameters;
use crate::types::{normalize_clip, VideoTensor};

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub parameter_count: usize,
    pub seconds_per_frame: f64,
    /// (frames, height, width) of the benchmark clip.
    pub clip_shape: (usize, usize, usize),
    pub device: String,
    pub warmup_iters: usize,
    pub measured_iters: usize,
}

impl BenchReport {
    pub fn render(&self) -> String {
        format!(
            "params: {:.1}e6\nclip: {}x{}x{}\ndevice: {}\nwarmup/measured: {}/{}\nseconds per frame: {:.4}\n",
            self.parameter_count as f64 / 1e6,
            self.clip_shape.0,
            self.clip_shape.1,
            self.clip_shape.2,
            self.device,
            self.warmup_iters,
            self.measured_iters,
            self.seconds_per_frame
        )
    }
}

fn available_memory_bytes() -> u64 {
    if let Ok(info) = std::fs::read_to_string("/proc/meminfo") {
        for line in info.lines() {
            if let Some(rest) = line.strip_prefix("MemAvailable:") {
                if let Some(kb) = rest.split_whitespace().next().and_then(|v| v.parse::<u64>().ok()) {
                    return kb * 1024;
                }
            }
        }
    }
    8 << 30
}

/// Rough peak-activation estimate for one forward pass, in bytes.
fn estimate_forward_bytes(model: &SegmentationModel, frames: usize, h: usize, w: usize) -> u64 {
    let width = model.encoder.config.base_width as u64;
    let t = frames as u64;
    // stem output at stride 2 dominates, plus the stride-4 stage-1 tensor at
    // 4x the width and im2col scratch; a handful of live copies of each
    let stem = t * (h as u64 / 2).max(1) * (w as u64 / 2).max(1) * width * 8;
    let stage1 = t * (h as u64 / 4).max(1) * (w as u64 / 4).max(1) * width * 4 * 8;
    (stem + stage1) * 4
}

/// Median wall-clock seconds per frame for end-to-end forward passes on a
/// random clip of the given shape.
pub fn bench_runtime(
    model: &SegmentationModel,
    resolution: (usize, usize),
    frames: usize,
    warmup_iters: usize,
    measured_iters: usize,
    seed: u64,
) -> Result<BenchReport> {
    if frames == 0 || resolution.0 == 0 || resolution.1 == 0 {
        return Err(Error::invalid("benchmark shape must be positive"));
    }
    if warmup_iters < 3 || measured_iters < 10 {
        return Err(Error::config(
            "benchmark needs at least 3 warm-up and 10 measured iterations",
        ));
    }
    let (h, w) = resolution;
    let estimate = estimate_forward_bytes(model, frames, h, w);
    let available = available_memory_bytes();
    if estimate > available / 2 {
        return Err(Error::ResourceLimit(format!(
            "a {frames}x{h}x{w} forward pass needs roughly {} MiB of the {} MiB available; \
             try a smaller resolution or fewer frames",
            estimate >> 20,
            available >> 20
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let raw = VideoTensor::new(Array4::from_shape_fn((frames, h, w, 3), |_| {
        rng.gen_range(0.0..255.0)
    }))?;
    let clip = normalize_clip(&raw, model.normalization.mean, model.normalization.std)?;
    for _ in 0..warmup_iters {
        let _ = model.forward_logits(&clip)?;
    }
    let mut times: Vec<f64> = Vec::with_capacity(measured_iters);
    for _ in 0..measured_iters {
        let t0 = Instant::now();
        let _ = model.forward_logits(&clip)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    Ok(BenchReport {
        parameter_count: count_parameters(model),
        seconds_per_frame: median / frames as f64,
        clip_shape: (frames, h, w),
        device: format!("cpu/{} threads", rayon::current_num_threads()),
        warmup_iters,
        measured_iters,
    })
}
