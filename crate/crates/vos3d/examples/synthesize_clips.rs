//! Turn a static image with instance masks into a short training clip by
//! chaining random affine and piecewise warps, and write the frames to disk.
//!
//! ```bash
//! cargo run -p vos3d --example synthesize_clips
//! ```

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use vos3d::io;
use vos3d::synth::{synthesize_clip, union_instance_masks, SynthConfig};

fn main() {
    let side = 96usize;
    // a scene with two object instances on a gradient background
    let image = Array3::from_shape_fn((side, side, 3), |(i, j, c)| {
        let disk = (i as f64 - 30.0).powi(2) + (j as f64 - 34.0).powi(2) <= 18.0 * 18.0;
        let block = (58..82).contains(&i) && (50..86).contains(&j);
        if disk {
            [230.0, 80.0, 50.0][c]
        } else if block {
            [60.0, 190.0, 230.0][c]
        } else {
            30.0 + (i + j) as f64
        }
    });
    let disk = Array2::from_shape_fn((side, side), |(i, j)| {
        u8::from((i as f64 - 30.0).powi(2) + (j as f64 - 34.0).powi(2) <= 18.0 * 18.0)
    });
    let block = Array2::from_shape_fn((side, side), |(i, j)| {
        u8::from((58..82).contains(&i) && (50..86).contains(&j))
    });

    let union = union_instance_masks(&[disk.clone(), block.clone()]).unwrap();
    println!(
        "instance areas: {} + {} -> union {}",
        disk.iter().map(|&v| v as usize).sum::<usize>(),
        block.iter().map(|&v| v as usize).sum::<usize>(),
        union.iter().map(|&v| v as usize).sum::<usize>()
    );

    let cfg = SynthConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let (clip, masks) = synthesize_clip(&image, &[disk, block], &cfg, &mut rng).unwrap();

    let out = std::path::Path::new("target/synth_preview");
    std::fs::create_dir_all(out.join("frames")).unwrap();
    for t in 0..clip.frames() {
        let frame = clip.data().index_axis(ndarray::Axis(0), t).to_owned();
        io::save_image_rgb(&out.join("frames").join(format!("{t:05}.png")), &frame).unwrap();
    }
    io::save_mask_sequence(&out.join("masks"), &masks).unwrap();
    println!("wrote {} frames to {}", clip.frames(), out.display());
    for t in 0..masks.dims().0 {
        let area: usize = masks.frame(t).iter().map(|&v| v as usize).sum();
        println!("  frame {t}: foreground area {area}");
    }
}
