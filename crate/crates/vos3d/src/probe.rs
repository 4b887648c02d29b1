//! Empirical receptive-field probes based on finite differences.
//!
//! Dependence is detected by perturbing one tensor position and diffing the
//! two forward passes. Positions outside the true support come out bitwise
//! identical, so the probes recover exact Jacobian sparsity structure.

use std::collections::BTreeSet;

use ndarray::Axis;

use crate::nn::conv::Feat;

pub type Pos = (usize, usize, usize);

const DETECT: f64 = 1e-14;

/// Output positions (summed over channels) that react to a perturbation of
/// the input at `input_pos` (applied to every channel there).
pub fn output_footprint(f: &mut dyn FnMut(&Feat) -> Feat, x: &Feat, input_pos: Pos) -> BTreeSet<Pos> {
    let eps = 1e-3;
    let (t, h, w) = input_pos;
    let mut xp = x.clone();
    let mut xm = x.clone();
    for c in 0..x.dim().3 {
        xp[[t, h, w, c]] += eps;
        xm[[t, h, w, c]] -= eps;
    }
    let yp = f(&xp);
    let ym = f(&xm);
    collect_diff(&yp, &ym)
}

/// Input positions that the output at `output_pos` depends on. Runs one
/// forward pair per input position, so keep tensors small.
pub fn input_footprint(f: &mut dyn FnMut(&Feat) -> Feat, x: &Feat, output_pos: Pos) -> BTreeSet<Pos> {
    let eps = 1e-3;
    let (ot, oh, ow) = output_pos;
    let base = f(x);
    let co = base.dim().3;
    let mut set = BTreeSet::new();
    let (t, h, w, c) = x.dim();
    for ti in 0..t {
        for hi in 0..h {
            for wi in 0..w {
                let mut xp = x.clone();
                let mut xm = x.clone();
                for ci in 0..c {
                    xp[[ti, hi, wi, ci]] += eps;
                    xm[[ti, hi, wi, ci]] -= eps;
                }
                let yp = f(&xp);
                let ym = f(&xm);
                let moved = (0..co)
                    .any(|ci| (yp[[ot, oh, ow, ci]] - ym[[ot, oh, ow, ci]]).abs() > DETECT);
                if moved {
                    set.insert((ti, hi, wi));
                }
            }
        }
    }
    set
}

fn collect_diff(a: &Feat, b: &Feat) -> BTreeSet<Pos> {
    let mut set = BTreeSet::new();
    let (t, h, w, _) = a.dim();
    for ti in 0..t {
        let at = a.index_axis(Axis(0), ti);
        let bt = b.index_axis(Axis(0), ti);
        for hi in 0..h {
            for wi in 0..w {
                let ar = at.index_axis(Axis(0), hi);
                let br = bt.index_axis(Axis(0), hi);
                let moved = ar
                    .index_axis(Axis(0), wi)
                    .iter()
                    .zip(br.index_axis(Axis(0), wi).iter())
                    .any(|(x, y)| (x - y).abs() > DETECT);
                if moved {
                    set.insert((ti, hi, wi));
                }
            }
        }
    }
    set
}

/// The axis-aligned box `center ± radius` clipped to `dims`.
pub fn clipped_box(center: Pos, radius: (usize, usize, usize), dims: Pos) -> BTreeSet<Pos> {
    let lo = |c: usize, r: usize| c.saturating_sub(r);
    let hi = |c: usize, r: usize, n: usize| (c + r).min(n - 1);
    let mut set = BTreeSet::new();
    for t in lo(center.0, radius.0)..=hi(center.0, radius.0, dims.0) {
        for h in lo(center.1, radius.1)..=hi(center.1, radius.1, dims.1) {
            for w in lo(center.2, radius.2)..=hi(center.2, radius.2, dims.2) {
                set.insert((t, h, w));
            }
        }
    }
    set
}

/// Extents (dt, dh, dw) of the bounding box of a footprint.
pub fn footprint_extent(set: &BTreeSet<Pos>) -> (usize, usize, usize) {
    if set.is_empty() {
        return (0, 0, 0);
    }
    let min = |f: fn(&Pos) -> usize| set.iter().map(f).min().unwrap();
    let max = |f: fn(&Pos) -> usize| set.iter().map(f).max().unwrap();
    (
        max(|p| p.0) - min(|p| p.0) + 1,
        max(|p| p.1) - min(|p| p.1) + 1,
        max(|p| p.2) - min(|p| p.2) + 1,
    )
}
