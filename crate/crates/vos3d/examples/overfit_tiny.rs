//! Overfit a tiny model on two synthetic clips: the full forward/backward/
//! optimizer loop at desk scale, reporting the loss curve and the final
//! region overlap on the training clips.
//!
//! ```bash
//! cargo run --release -p vos3d --example overfit_tiny
//! ```

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use vos3d::metrics::region_jaccard;
use vos3d::model::SegmentationModel;
use vos3d::pipeline::binarize;
use vos3d::synth::{synthesize_clip, SynthConfig, TransformSpec};
use vos3d::train::{train_stage, TrainConfig, TrainDataset};
use vos3d::types::{normalize_clip, MaskSequence, ProbabilityMaps, VideoTensor};

fn disk_image(side: usize, cx: f64, cy: f64, r: f64) -> (Array3<f64>, Array2<u8>) {
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

fn box_image(side: usize, top: usize, left: usize, hh: usize, ww: usize) -> (Array3<f64>, Array2<u8>) {
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

fn make_clips(side: usize, clip_len: usize) -> Vec<(VideoTensor, MaskSequence)> {
    let synth = SynthConfig {
        clip_length: clip_len,
        per_step: TransformSpec {
            rotation_deg: 1.0,
            translation_frac: 0.01,
            scale_range: (0.995, 1.005),
            shear_deg: 0.5,
            piecewise_grid: 0,
            piecewise_jitter_frac: 0.0,
        },
    };
    let s = side as f64;
    let (ia, ma) = disk_image(side, 0.5 * s, 0.45 * s, 0.3 * s);
    let (ib, mb) = box_image(side, side / 5, side / 3, side / 2, side / 3);
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let a = synthesize_clip(&ia, &[ma], &synth, &mut rng).unwrap();
    let b = synthesize_clip(&ib, &[mb], &synth, &mut rng).unwrap();
    vec![a, b]
}

fn train_j(clips: &[(VideoTensor, MaskSequence)], model: &SegmentationModel) -> f64 {
    let mut total = 0.0;
    for (raw, gt) in clips {
        let clip = normalize_clip(raw, model.normalization.mean, model.normalization.std).unwrap();
        let logits = model.forward_logits(&clip).unwrap();
        let probs =
            ProbabilityMaps::from_single_window(logits.mapv(vos3d::nn::ops::sigmoid)).unwrap();
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

fn main() {
    let start = std::time::Instant::now();
    let clips = make_clips(96, 8);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut model = SegmentationModel::tiny(8, &mut rng).unwrap();
    println!("initial J on training clips: {:.3}", train_j(&clips, &model));
    let cfg = TrainConfig {
        initial_lr: 2e-3,
        decay_gamma: 0.8,
        epochs: 10,
        iterations_per_epoch: 20,
        batch_size: 2,
        clip_length: 8,
        seed: 5,
        ..Default::default()
    };
    let dataset = TrainDataset::Clips(clips.clone());
    let outcome = train_stage(&mut model, &dataset, &cfg, None).unwrap();
    for (e, loss) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {e:2}: mean loss {loss:.5}");
    }
    println!("final J on training clips: {:.3}", train_j(&clips, &model));
    println!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
}
