//! Measure parameter counts and per-frame forward runtime at a few
//! resolutions for a narrow model.
//!
//! ```bash
//! cargo run --release -p vos3d --example benchmark
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use vos3d::bench::bench_runtime;
use vos3d::model::SegmentationModel;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let model = SegmentationModel::tiny(4, &mut rng).unwrap();
    for (h, w) in [(64, 64), (128, 128), (240, 427)] {
        match bench_runtime(&model, (h, w), 8, 3, 10, 0) {
            Ok(report) => println!(
                "{h}x{w}: {:.4} s/frame ({:.1}e6 params, {})",
                report.seconds_per_frame,
                report.parameter_count as f64 / 1e6,
                report.device
            ),
            Err(e) => println!("{h}x{w}: skipped ({e})"),
        }
    }
}
