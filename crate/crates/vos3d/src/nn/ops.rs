//! Activation, pooling, interpolation and cropping primitives.

use ndarray::parallel::prelude::*;
use ndarray::{s, Array4, Axis};

use super::conv::Feat;

pub fn relu(x: &Feat) -> Feat {
    x.mapv(|v| v.max(0.0))
}

/// Gradient of relu given the forward *output* and the output gradient.
pub fn relu_backward(y: &Feat, gout: &Feat) -> Feat {
    let mut gx = gout.clone();
    gx.zip_mut_with(y, |g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Spatial max pooling with a temporal extent of one frame.
pub struct MaxPool2d {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl MaxPool2d {
    pub fn out_dims(&self, t: usize, h: usize, w: usize) -> (usize, usize, usize) {
        let f = |n: usize, k: usize, s: usize, p: usize| (n + 2 * p - k) / s + 1;
        (
            t,
            f(h, self.kernel.0, self.stride.0, self.padding.0),
            f(w, self.kernel.1, self.stride.1, self.padding.1),
        )
    }

    pub fn forward_eval(&self, x: &Feat) -> Feat {
        self.run(x).0
    }

    pub fn forward_train(&self, x: &Feat) -> (Feat, Array4<usize>) {
        let (y, idx) = self.run(x);
        (y, idx)
    }

    fn run(&self, x: &Feat) -> (Feat, Array4<usize>) {
        let (t, h, w, c) = x.dim();
        let (to, ho, wo) = self.out_dims(t, h, w);
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let xs = x.as_slice().unwrap();
        let mut out = Array4::<f64>::zeros((to, ho, wo, c));
        let mut idx = Array4::<usize>::zeros((to, ho, wo, c));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(idx.axis_iter_mut(Axis(0)).into_par_iter())
            .enumerate()
            .for_each(|(ti, (mut out_t, mut idx_t))| {
                let os = out_t.as_slice_mut().unwrap();
                let is = idx_t.as_slice_mut().unwrap();
                for h_o in 0..ho {
                    for w_o in 0..wo {
                        let dst = (h_o * wo + w_o) * c;
                        let orow = &mut os[dst..dst + c];
                        let irow = &mut is[dst..dst + c];
                        orow.fill(f64::NEG_INFINITY);
                        for dh in 0..kh {
                            let hh = (h_o * sh + dh) as isize - ph as isize;
                            if hh < 0 || hh >= h as isize {
                                continue;
                            }
                            for dw in 0..kw {
                                let ww = (w_o * sw + dw) as isize - pw as isize;
                                if ww < 0 || ww >= w as isize {
                                    continue;
                                }
                                let src = ((ti * h + hh as usize) * w + ww as usize) * c;
                                let xrow = &xs[src..src + c];
                                for i in 0..c {
                                    if xrow[i] > orow[i] {
                                        orow[i] = xrow[i];
                                        irow[i] = src + i;
                                    }
                                }
                            }
                        }
                    }
                }
            });
        (out, idx)
    }

    pub fn backward(&self, idx: &Array4<usize>, gout: &Feat, in_dims: (usize, usize, usize, usize)) -> Feat {
        let mut gx = Array4::<f64>::zeros(in_dims);
        let gxs = gx.as_slice_mut().unwrap();
        for (&i, &g) in idx.iter().zip(gout.iter()) {
            gxs[i] += g;
        }
        gx
    }
}

/// Per-axis interpolation taps for half-pixel-center linear resampling.
fn axis_taps(n_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    let n_out = n_in * factor;
    let f = factor as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) / f - 0.5;
            if src <= 0.0 {
                (0, 0, 0.0)
            } else if src >= (n_in - 1) as f64 {
                (n_in - 1, n_in - 1, 0.0)
            } else {
                let i0 = src.floor() as usize;
                (i0, i0 + 1, src - i0 as f64)
            }
        })
        .collect()
}

fn invert_taps(taps: &[(usize, usize, f64)], n_in: usize) -> Vec<Vec<(usize, f64)>> {
    let mut inv = vec![Vec::new(); n_in];
    for (o, &(i0, i1, wgt)) in taps.iter().enumerate() {
        if i0 == i1 {
            inv[i0].push((o, 1.0));
        } else {
            inv[i0].push((o, 1.0 - wgt));
            inv[i1].push((o, wgt));
        }
    }
    inv
}

fn lerp_into(a: &[f64], b: &[f64], wgt: f64, out: &mut [f64]) {
    for i in 0..out.len() {
        out[i] = a[i] + wgt * (b[i] - a[i]);
    }
}

/// Trilinear upsampling by integer factors with half-pixel source centers.
/// Interpolation is computed as nested linear blends, so constant inputs are
/// reproduced exactly.
pub fn upsample_trilinear(x: &Feat, factor: (usize, usize, usize)) -> Feat {
    let (t, h, w, c) = x.dim();
    let (ft, fh, fw) = factor;
    assert!(ft >= 1 && fh >= 1 && fw >= 1);
    let (to, ho, wo) = (t * ft, h * fh, w * fw);
    let taps_t = axis_taps(t, ft);
    let taps_h = axis_taps(h, fh);
    let taps_w = axis_taps(w, fw);
    let xs = x.as_slice().unwrap();
    let mut out = Array4::<f64>::zeros((to, ho, wo, c));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(t_o, mut out_t)| {
            let (t0, t1, wt) = taps_t[t_o];
            let os = out_t.as_slice_mut().unwrap();
            let mut l00 = vec![0.0; c];
            let mut l01 = vec![0.0; c];
            let mut l10 = vec![0.0; c];
            let mut l11 = vec![0.0; c];
            let mut m0 = vec![0.0; c];
            let mut m1 = vec![0.0; c];
            for h_o in 0..ho {
                let (h0, h1, wh) = taps_h[h_o];
                for w_o in 0..wo {
                    let (w0, w1, ww) = taps_w[w_o];
                    let at = |tt: usize, hh: usize, wk: usize| {
                        let p = ((tt * h + hh) * w + wk) * c;
                        &xs[p..p + c]
                    };
                    lerp_into(at(t0, h0, w0), at(t0, h0, w1), ww, &mut l00);
                    lerp_into(at(t0, h1, w0), at(t0, h1, w1), ww, &mut l01);
                    lerp_into(at(t1, h0, w0), at(t1, h0, w1), ww, &mut l10);
                    lerp_into(at(t1, h1, w0), at(t1, h1, w1), ww, &mut l11);
                    lerp_into(&l00, &l01, wh, &mut m0);
                    lerp_into(&l10, &l11, wh, &mut m1);
                    let dst = (h_o * wo + w_o) * c;
                    lerp_into(&m0, &m1, wt, &mut os[dst..dst + c]);
                }
            }
        });
    out
}

pub fn upsample_trilinear_backward(
    gout: &Feat,
    in_dims: (usize, usize, usize, usize),
    factor: (usize, usize, usize),
) -> Feat {
    let (t, h, w, c) = in_dims;
    let (ft, fh, fw) = factor;
    let (_to, ho, wo) = (t * ft, h * fh, w * fw);
    let inv_t = invert_taps(&axis_taps(t, ft), t);
    let inv_h = invert_taps(&axis_taps(h, fh), h);
    let inv_w = invert_taps(&axis_taps(w, fw), w);
    let gos = gout.as_slice().unwrap();
    let mut gx = Array4::<f64>::zeros(in_dims);
    gx.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(t_i, mut gx_t)| {
            let gs = gx_t.as_slice_mut().unwrap();
            for &(t_o, wt) in &inv_t[t_i] {
                for h_i in 0..h {
                    for &(h_o, wh) in &inv_h[h_i] {
                        for w_i in 0..w {
                            let dst = (h_i * w + w_i) * c;
                            for &(w_o, ww) in &inv_w[w_i] {
                                let coeff = wt * wh * ww;
                                if coeff == 0.0 {
                                    continue;
                                }
                                let src = ((t_o * ho + h_o) * wo + w_o) * c;
                                let grow = &gos[src..src + c];
                                let gxr = &mut gs[dst..dst + c];
                                for i in 0..c {
                                    gxr[i] += coeff * grow[i];
                                }
                            }
                        }
                    }
                }
            }
        });
    gx
}

pub fn crop_to(x: &Feat, dims: (usize, usize, usize)) -> Feat {
    let (t, h, w) = dims;
    x.slice(s![..t, ..h, ..w, ..]).to_owned()
}

pub fn crop_backward(gout: &Feat, orig_dims: (usize, usize, usize, usize)) -> Feat {
    let (t, h, w, _c) = gout.dim();
    let mut gx = Array4::<f64>::zeros(orig_dims);
    gx.slice_mut(s![..t, ..h, ..w, ..]).assign(gout);
    gx
}

/// Elementwise sum of two equally shaped features.
pub fn add(a: &Feat, b: &Feat) -> Feat {
    a + b
}
