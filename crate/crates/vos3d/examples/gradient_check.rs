//! Verify analytic gradients of the decoder blocks against central
//! differences in double precision.
//!
//! ```bash
//! cargo run --release -p vos3d --example gradient_check
//! ```

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use vos3d::decoder::{Gc3d, GC3DConfig, Rf3d};
use vos3d::nn::conv::{Conv3d, Feat};
use vos3d::train::finite_difference_gradcheck;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(0);

    let conv = std::cell::RefCell::new(Conv3d::new_pointwise(3, 4, (1, 1, 1), true, &mut rng));
    let x = Array4::from_shape_fn((2, 4, 4, 3), |_| rng.gen_range(-1.0..1.0)).into_dyn();
    let err = finite_difference_gradcheck(
        &mut |x| conv.borrow().forward(&as4(x)).into_dyn(),
        &mut |x, u| conv.borrow_mut().backward(&as4(x), &as4(u)).into_dyn(),
        &x,
        1e-2,
        1,
    );
    println!("1x1x1 conv (linear):    max relative error {err:.3e}");

    let gc = std::cell::RefCell::new(
        Gc3d::new(GC3DConfig { k: 7, in_channels: 4, out_channels: 4 }, false, &mut rng).unwrap(),
    );
    let x = Array4::from_shape_fn((2, 6, 6, 4), |_| rng.gen_range(-1.0..1.0)).into_dyn();
    let err = finite_difference_gradcheck(
        &mut |x| gc.borrow().forward(&as4(x)).unwrap().into_dyn(),
        &mut |x, u| {
            let mut m = gc.borrow_mut();
            let (_, cache) = m.forward_train(&as4(x)).unwrap();
            m.backward(&cache, &as4(u)).into_dyn()
        },
        &x,
        1e-5,
        2,
    );
    println!("global convolution:     max relative error {err:.3e}");

    let rf = std::cell::RefCell::new(Rf3d::new(4, 3, 4, 2, &mut rng));
    let skip = Array4::from_shape_fn((2, 8, 8, 3), |_| rng.gen_range(-1.0..1.0));
    let x = Array4::from_shape_fn((1, 4, 4, 4), |_| rng.gen_range(-1.0..1.0)).into_dyn();
    let err = finite_difference_gradcheck(
        &mut |x| rf.borrow_mut().forward_train(&as4(x), &skip).unwrap().0.into_dyn(),
        &mut |x, u| {
            let mut m = rf.borrow_mut();
            let (_, cache) = m.forward_train(&as4(x), &skip).unwrap();
            m.backward(&cache, &as4(u)).0.into_dyn()
        },
        &x,
        1e-5,
        3,
    );
    println!("refinement module:      max relative error {err:.3e}");
}

fn as4(x: &ndarray::ArrayD<f64>) -> Feat {
    x.clone().into_dimensionality().unwrap()
}
