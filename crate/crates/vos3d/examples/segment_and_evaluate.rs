//! Windowed inference over a procedural video followed by the full metric
//! suite: region J, boundary F, saliency F-measure and MAE.
//!
//! The model here is untrained, so the interesting part is the machinery:
//! window planning, probability merging, coverage counts and the report.
//!
//! ```bash
//! cargo run --release -p vos3d --example segment_and_evaluate
//! ```

use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use vos3d::metrics::{evaluate_davis, EvalOptions, SequenceGroundTruth, SequencePrediction};
use vos3d::model::SegmentationModel;
use vos3d::pipeline::{segment_video, ClipScheduleConfig};
use vos3d::types::{normalize_clip, VideoTensor};

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let model = SegmentationModel::tiny(4, &mut rng).unwrap();

    // a 20-frame video of a square sliding to the right
    let (len, side) = (20usize, 64usize);
    let mut raw = Array4::<f64>::zeros((len, side, side, 3));
    let mut gt_frames: Vec<Option<Array2<u8>>> = Vec::new();
    for t in 0..len {
        let left = 8 + t;
        for i in 0..side {
            for j in 0..side {
                let inside = (20..44).contains(&i) && (left..left + 20).contains(&j);
                for c in 0..3 {
                    raw[[t, i, j, c]] = if inside { 210.0 } else { 35.0 + c as f64 * 10.0 };
                }
            }
        }
        gt_frames.push(Some(Array2::from_shape_fn((side, side), |(i, j)| {
            u8::from((20..44).contains(&i) && (left..left + 20).contains(&j))
        })));
    }
    let video = VideoTensor::new(raw).unwrap();
    let clip = normalize_clip(&video, model.normalization.mean, model.normalization.std).unwrap();

    let schedule = ClipScheduleConfig { clip_length: 8, overlap: 3 };
    let (probs, masks) = segment_video(&model, &clip, &schedule, 0.5).unwrap();
    println!(
        "segmented {} frames; coverage counts {:?}",
        probs.frames(),
        probs.coverage_counts()
    );

    let preds = vec![SequencePrediction {
        name: "slider".into(),
        masks: (0..len).map(|t| masks.frame(t).to_owned()).collect(),
        probabilities: None,
    }];
    let gts = vec![SequenceGroundTruth { name: "slider".into(), masks: gt_frames }];
    let report = evaluate_davis(&preds, &gts, &EvalOptions::default()).unwrap();
    print!("{}", report.render_table());
}
