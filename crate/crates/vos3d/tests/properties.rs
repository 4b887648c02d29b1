//! Randomized invariants over shapes, schedules and metrics.

use ndarray::{Array2, Array3, Array4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use vos3d::encoder::{build_encoder, encode, EncoderConfig};
use vos3d::metrics::{region_jaccard, saliency_f_measure};
use vos3d::model::SegmentationModel;
use vos3d::pipeline::{
    merge_window_probabilities, plan_windows, segment_video, ClipScheduleConfig,
};
use vos3d::types::{ProbabilityMaps, VideoTensor};

fn random_clip(t: usize, h: usize, w: usize, seed: u64) -> VideoTensor {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    VideoTensor::new(Array4::from_shape_fn((t, h, w, 3), |_| r.gen_range(-1.0..1.0))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Every pyramid level measures exactly ceil(dim / stride), whatever the
    /// input size.
    #[test]
    fn pyramid_dims_are_ceil_divisions(
        t in 1usize..10,
        h in 8usize..90,
        w in 8usize..90,
        seed in 0u64..1000,
    ) {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let enc = build_encoder(&EncoderConfig::tiny(2), &mut r).unwrap();
        let clip = random_clip(t, h, w, seed);
        let pyr = encode(&enc, &clip).unwrap();
        for level in pyr.levels() {
            let (lt, lh, lw, _) = level.data.dim();
            prop_assert_eq!(lh, h.div_ceil(level.meta.spatial_stride));
            prop_assert_eq!(lw, w.div_ceil(level.meta.spatial_stride));
            prop_assert_eq!(lt, t.div_ceil(level.meta.temporal_stride));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    /// Windowed inference returns the input shape with probabilities in
    /// range, for arbitrary clip dimensions.
    #[test]
    fn segment_video_shape_invariance(
        t in 4usize..12,
        h in 32usize..64,
        w in 32usize..64,
        seed in 0u64..1000,
    ) {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let model = SegmentationModel::tiny(2, &mut r).unwrap();
        let clip = random_clip(t, h, w, seed ^ 0xbeef);
        let cfg = ClipScheduleConfig::default();
        let (probs, masks) = segment_video(&model, &clip, &cfg, 0.5).unwrap();
        prop_assert_eq!(probs.data().dim(), (t, h, w));
        prop_assert_eq!(masks.dims(), (t, h, w));
        prop_assert!(probs.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Window plans cover every frame at least once with the declared step.
    #[test]
    fn window_plans_cover_every_frame(
        clip_length in 1usize..12,
        overlap_frac in 0.0f64..1.0,
        len in 1usize..80,
    ) {
        let overlap = ((clip_length as f64 - 1.0) * overlap_frac) as usize;
        let cfg = ClipScheduleConfig { clip_length, overlap };
        let plans = plan_windows(len, &cfg).unwrap();
        let mut covered = vec![0usize; len];
        for p in &plans {
            prop_assert_eq!(p.length, clip_length);
            for f in p.start..p.start + p.real_len() {
                covered[f] += 1;
            }
        }
        prop_assert!(covered.iter().all(|&c| c >= 1));
    }

    /// Merging identical constant blocks reproduces the constant.
    #[test]
    fn merge_of_identical_blocks_is_identity(
        clip_length in 1usize..8,
        len in 1usize..30,
        value in 0.0f64..1.0,
    ) {
        let cfg = ClipScheduleConfig { clip_length, overlap: clip_length / 2 };
        let plans = plan_windows(len, &cfg).unwrap();
        let blocks: Vec<ProbabilityMaps> = plans
            .iter()
            .map(|_| {
                ProbabilityMaps::from_single_window(Array3::from_elem((clip_length, 2, 2), value))
                    .unwrap()
            })
            .collect();
        let merged = merge_window_probabilities(&plans, &blocks).unwrap();
        prop_assert!(merged.data().iter().all(|&v| (v - value).abs() < 1e-14));
    }

    /// Metric outputs stay in [0, 1] and region overlap is symmetric.
    #[test]
    fn metric_ranges_and_symmetry(bits_a in prop::collection::vec(any::<bool>(), 36),
                                  bits_b in prop::collection::vec(any::<bool>(), 36)) {
        let a = Array2::from_shape_fn((6, 6), |(i, j)| u8::from(bits_a[i * 6 + j]));
        let b = Array2::from_shape_fn((6, 6), |(i, j)| u8::from(bits_b[i * 6 + j]));
        let j_ab = region_jaccard(&a.view(), &b.view()).unwrap();
        let j_ba = region_jaccard(&b.view(), &a.view()).unwrap();
        prop_assert_eq!(j_ab, j_ba);
        prop_assert!((0.0..=1.0).contains(&j_ab));
        let f = saliency_f_measure(&a.view(), &b.view()).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }
}

/// The empirical footprint of one input perturbation, measured at full
/// output resolution, stays inside the analytic receptive-field extent
/// composed over the model's layer chain. An underestimating composition
/// (e.g. one that ignored upsampling scale) would fail this.
#[test]
fn end_to_end_jacobian_extent_is_bounded_by_analytic_rf() {
    use vos3d::decoder::effective_receptive_field;
    use vos3d::probe;

    let mut r = ChaCha20Rng::seed_from_u64(99);
    let model = SegmentationModel::tiny(2, &mut r).unwrap();
    let (dt, dh, dw) = effective_receptive_field(&model.receptive_field_chain());
    let clip = random_clip(6, 40, 40, 1);
    let center = (3, 20, 20);
    let fp = probe::output_footprint(
        &mut |x| {
            let v = VideoTensor::new(x.clone()).unwrap();
            let logits = model.forward_logits(&v).unwrap();
            let (t, h, w) = logits.dim();
            logits.into_shape_with_order((t, h, w, 1)).unwrap()
        },
        clip.data(),
        center,
    );
    assert!(!fp.is_empty(), "perturbation must reach the output");
    let (et, eh, ew) = probe::footprint_extent(&fp);
    assert!(
        et as f64 <= dt && eh as f64 <= dh && ew as f64 <= dw,
        "empirical extent ({et}, {eh}, {ew}) exceeds analytic ({dt}, {dh}, {dw})"
    );
}
