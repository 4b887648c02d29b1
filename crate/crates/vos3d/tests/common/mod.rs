//! Procedural fixtures shared by the integration suites: synthetic scenes,
//! overfit clips, and tiny on-disk datasets in the supported layouts.

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use vos3d::io;
use vos3d::metrics::region_jaccard;
use vos3d::model::SegmentationModel;
use vos3d::nn::ops::sigmoid;
use vos3d::pipeline::binarize;
use vos3d::synth::{synthesize_clip, SynthConfig, TransformSpec};
use vos3d::types::{normalize_clip, MaskSequence, ProbabilityMaps, VideoTensor};

pub fn disk_scene(side: usize, cx: f64, cy: f64, r: f64) -> (Array3<f64>, Array2<u8>) {
    let image = Array3::from_shape_fn((side, side, 3), |(i, j, c)| {
        let inside = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2) <= r * r;
        if inside {
            [220.0, 60.0, 40.0][c]
        } else {
            20.0 + (i as f64 + j as f64) * 40.0 / (2.0 * side as f64)
        }
    });
    let mask = Array2::from_shape_fn((side, side), |(i, j)| {
        u8::from((i as f64 - cy).powi(2) + (j as f64 - cx).powi(2) <= r * r)
    });
    (image, mask)
}

pub fn box_scene(
    side: usize,
    top: usize,
    left: usize,
    hh: usize,
    ww: usize,
) -> (Array3<f64>, Array2<u8>) {
    let image = Array3::from_shape_fn((side, side, 3), |(i, j, c)| {
        let inside = i >= top && i < top + hh && j >= left && j < left + ww;
        if inside {
            [40.0, 200.0, 220.0][c]
        } else {
            190.0 - (i as f64) * 60.0 / side as f64 + (c as f64) * 5.0
        }
    });
    let mask = Array2::from_shape_fn((side, side), |(i, j)| {
        u8::from(i >= top && i < top + hh && j >= left && j < left + ww)
    });
    (image, mask)
}

/// Gentle per-step motion that keeps objects in frame over 8 steps.
pub fn gentle_motion() -> TransformSpec {
    TransformSpec {
        rotation_deg: 1.0,
        translation_frac: 0.01,
        scale_range: (0.995, 1.005),
        shear_deg: 0.5,
        piecewise_grid: 0,
        piecewise_jitter_frac: 0.0,
    }
}

/// Two fixed synthetic training clips (a disk and a rectangle).
pub fn make_overfit_clips(side: usize, clip_len: usize) -> Vec<(VideoTensor, MaskSequence)> {
    let synth = SynthConfig { clip_length: clip_len, per_step: gentle_motion() };
    let s = side as f64;
    let (ia, ma) = disk_scene(side, 0.5 * s, 0.45 * s, 0.3 * s);
    let (ib, mb) = box_scene(side, side / 5, side / 3, side / 2, side / 3);
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let a = synthesize_clip(&ia, &[ma], &synth, &mut rng).unwrap();
    let b = synthesize_clip(&ib, &[mb], &synth, &mut rng).unwrap();
    vec![a, b]
}

/// Mean region overlap of thresholded predictions over the given clips.
pub fn mean_train_j(clips: &[(VideoTensor, MaskSequence)], model: &SegmentationModel) -> f64 {
    let mut total = 0.0;
    for (raw, gt) in clips {
        let clip = normalize_clip(raw, model.normalization.mean, model.normalization.std).unwrap();
        let logits = model.forward_logits(&clip).unwrap();
        let probs = ProbabilityMaps::from_single_window(logits.mapv(sigmoid)).unwrap();
        let masks = binarize(&probs, 0.5).unwrap();
        let (t, _, _) = masks.dims();
        let mut j = 0.0;
        for f in 0..t {
            j += region_jaccard(&masks.frame(f), &gt.frame(f)).unwrap();
        }
        total += j / t as f64;
    }
    total / clips.len() as f64
}

/// Write an image-instances layout with two samples (one multi-instance).
pub fn write_image_instances_fixture(root: &Path) {
    let side = 48;
    let (img_a, mask_a) = disk_scene(side, 22.0, 24.0, 13.0);
    let (img_b, mask_b) = box_scene(side, 8, 10, 22, 14);
    // second instance for sample b, disjoint from the first
    let extra = Array2::from_shape_fn((side, side), |(i, j)| {
        u8::from(i >= 34 && i < 44 && j >= 30 && j < 44)
    });
    for (name, img, masks) in [
        ("sample_a", &img_a, vec![mask_a]),
        ("sample_b", &img_b, vec![mask_b, extra]),
    ] {
        let dir = root.join(name);
        fs::create_dir_all(dir.join("masks")).unwrap();
        io::save_image_rgb(&dir.join("image.png"), img).unwrap();
        for (k, m) in masks.iter().enumerate() {
            io::save_mask(&dir.join("masks").join(format!("{k:02}.png")), &m.view()).unwrap();
        }
    }
}

/// Write a DAVIS-style layout: two densely annotated 48x48 sequences with
/// simple translating objects.
pub fn write_video_fixture(root: &Path, frames_per_seq: usize) {
    let side = 48usize;
    let specs: [(&str, bool); 2] = [("seq_disk", true), ("seq_box", false)];
    for (si, (name, is_disk)) in specs.iter().enumerate() {
        let img_dir = root.join("JPEGImages").join(name);
        let ann_dir = root.join("Annotations").join(name);
        fs::create_dir_all(&img_dir).unwrap();
        fs::create_dir_all(&ann_dir).unwrap();
        for t in 0..frames_per_seq {
            let shift = t as f64 * 1.5;
            let (img, mask) = if *is_disk {
                disk_scene(side, 14.0 + shift, 24.0, 9.0)
            } else {
                box_scene(side, 6 + t, 8 + t, 18, 16)
            };
            let _ = si;
            io::save_image_rgb(&img_dir.join(format!("{t:05}.png")), &img).unwrap();
            io::save_mask(&ann_dir.join(format!("{t:05}.png")), &mask.view()).unwrap();
        }
    }
    let sets = root.join("ImageSets");
    fs::create_dir_all(&sets).unwrap();
    fs::write(sets.join("val.txt"), "seq_disk\nseq_box\n").unwrap();
}

/// Run configuration for the end-to-end fixture pipeline.
pub fn e2e_config(data_root: &Path) -> String {
    format!(
        r#"[model.encoder]
stage_depths = [1, 1, 1, 1]
base_width = 4

[model.decoder]
channels = [16, 8, 4, 4]

[schedule]
clip_length = 4
overlap = 1

[train]
initial_lr = 1e-3
decay_gamma = 0.9
epochs = 2
iterations_per_epoch = 6
batch_size = 2
clip_length = 4
seed = 2024

[synth]
clip_length = 4

[synth.per_step]
rotation_deg = 1.0
translation_frac = 0.01
scale_range = [0.995, 1.005]
shear_deg = 0.5
piecewise_grid = 0
piecewise_jitter_frac = 0.0

[data]
root = "{}"
layout = "image-instances"
"#,
        data_root.display()
    )
}
