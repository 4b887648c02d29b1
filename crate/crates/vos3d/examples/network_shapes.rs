//! Build encoders and inspect the feature pyramid: level shapes, strides and
//! parameter counts for the default 152-layer channel-separated network and
//! a dense (non-separated) variant.
//!
//! ```bash
//! cargo run --release -p vos3d --example network_shapes
//! ```

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use vos3d::encoder::{build_encoder, count_parameters, encode, EncoderConfig};
use vos3d::types::VideoTensor;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(0);

    println!("backbone parameter counts:");
    let default_cfg = EncoderConfig::default();
    let encoder = build_encoder(&default_cfg, &mut rng).unwrap();
    println!(
        "  channel-separated 152-layer: {:.1}e6",
        count_parameters(&encoder) as f64 / 1e6
    );
    let dense_cfg = EncoderConfig { channel_separated: false, ..EncoderConfig::default() };
    let dense = build_encoder(&dense_cfg, &mut rng).unwrap();
    println!(
        "  dense 3x3x3 152-layer:       {:.1}e6",
        count_parameters(&dense) as f64 / 1e6
    );

    // run a small clip through a narrow encoder to see the pyramid
    let tiny = build_encoder(&EncoderConfig::tiny(8), &mut rng).unwrap();
    let clip = VideoTensor::new(Array4::from_shape_fn((8, 224, 224, 3), |_| {
        rng.gen_range(0.0..1.0)
    }))
    .unwrap();
    let pyramid = encode(&tiny, &clip).unwrap();
    println!("\npyramid for an 8x224x224 clip (tiny encoder):");
    for (i, level) in pyramid.levels().iter().enumerate() {
        let (t, h, w, c) = level.data.dim();
        println!(
            "  level {i}: {t}x{h}x{w}x{c}  (spatial stride {}, temporal stride {})",
            level.meta.spatial_stride, level.meta.temporal_stride
        );
    }
}
