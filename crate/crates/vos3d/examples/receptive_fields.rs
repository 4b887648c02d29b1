//! Compare analytic receptive fields against empirical Jacobian probes for
//! the two bridge variants: the factorized global convolution sees 1 x k x k,
//! a plain 3x3x3 convolution sees 3 x 3 x 3.
//!
//! ```bash
//! cargo run --release -p vos3d --example receptive_fields
//! ```

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use vos3d::decoder::{effective_receptive_field, Gc3d, GC3DConfig, LayerSpec};
use vos3d::nn::conv::Conv3d;
use vos3d::probe;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let x = Array4::from_shape_fn((5, 16, 16, 2), |_| rng.gen_range(-1.0..1.0));
    let center = (2, 8, 8);

    let gc = Gc3d::new(GC3DConfig { k: 7, in_channels: 2, out_channels: 2 }, false, &mut rng)
        .unwrap();
    let fp = probe::output_footprint(&mut |x| gc.forward(x).unwrap(), &x, center);
    let erf = effective_receptive_field(&[
        LayerSpec::conv((1, 7, 1), (1, 1, 1)),
        LayerSpec::conv((1, 1, 7), (1, 1, 1)),
    ]);
    println!(
        "global convolution (k=7): analytic {:?}, empirical {:?}",
        erf,
        probe::footprint_extent(&fp)
    );

    let c3d = Conv3d::new_dense(2, 2, (3, 3, 3), (1, 1, 1), (1, 1, 1), false, &mut rng);
    let fp = probe::output_footprint(&mut |x| c3d.forward(x), &x, center);
    let erf = effective_receptive_field(&[LayerSpec::conv((3, 3, 3), (1, 1, 1))]);
    println!(
        "plain 3x3x3 convolution:  analytic {:?}, empirical {:?}",
        erf,
        probe::footprint_extent(&fp)
    );

    let two = [
        LayerSpec::conv((3, 3, 3), (1, 1, 1)),
        LayerSpec::conv((3, 3, 3), (1, 1, 1)),
    ];
    println!("two stacked 3x3x3 convs:  analytic {:?}", effective_receptive_field(&two));

    // parameter economics of the factorization
    let k = 7;
    let c = 256;
    println!(
        "\nfactorized vs dense 1x{k}x{k} at {c} channels: {} vs {} weights (ratio {:.3})",
        4 * k * c * c,
        k * k * c * c,
        (4 * k) as f64 / (k * k) as f64
    );
}
