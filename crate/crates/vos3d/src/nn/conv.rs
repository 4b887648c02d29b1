//! 3D convolution with dense, depthwise and pointwise kernels.
//!
//! Feature tensors are `(T, H, W, C)` with C innermost, so channel slices are
//! contiguous. Dense kernels are lowered to matrix products over patch blocks;
//! depthwise kernels run as direct tap loops vectorized over channels.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{s, Array2, Array4, Axis};
use rand::Rng;

use super::init;
use super::param::{join_key, Param, ParamSet};
use crate::error::{Error, Result};

/// A feature map or clip tensor: (time, rows, cols, channels).
pub type Feat = Array4<f64>;

// Patch blocks are capped around this many scalars to bound im2col memory.
const BLOCK_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
}

impl ConvGeometry {
    pub fn out_dims(&self, t: usize, h: usize, w: usize) -> (usize, usize, usize) {
        let f = |n: usize, k: usize, s: usize, p: usize| (n + 2 * p - k) / s + 1;
        (
            f(t, self.kernel.0, self.stride.0, self.padding.0),
            f(h, self.kernel.1, self.stride.1, self.padding.1),
            f(w, self.kernel.2, self.stride.2, self.padding.2),
        )
    }

    fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.kernel.2
    }
}

pub struct Conv3d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeometry,
    pub depthwise: bool,
    /// Dense layout (kt, kh, kw, cin, cout); depthwise layout (kt, kh, kw, c).
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Conv3d {
    pub fn new_dense(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1 * kernel.2;
        let shape = [kernel.0, kernel.1, kernel.2, in_channels, out_channels];
        Conv3d {
            in_channels,
            out_channels,
            geom: ConvGeometry { kernel, stride, padding },
            depthwise: false,
            weight: Param::new(init::kaiming_uniform(&shape, fan_in, rng)),
            bias: bias.then(|| Param::new(init::zeros(&[out_channels]))),
        }
    }

    pub fn new_depthwise(
        channels: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: (usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = kernel.0 * kernel.1 * kernel.2;
        let shape = [kernel.0, kernel.1, kernel.2, channels];
        Conv3d {
            in_channels: channels,
            out_channels: channels,
            geom: ConvGeometry { kernel, stride, padding },
            depthwise: true,
            weight: Param::new(init::kaiming_uniform(&shape, fan_in, rng)),
            bias: None,
        }
    }

    pub fn new_pointwise(
        in_channels: usize,
        out_channels: usize,
        stride: (usize, usize, usize),
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self::new_dense(in_channels, out_channels, (1, 1, 1), stride, (0, 0, 0), bias, rng)
    }

    pub fn check_input(&self, x: &Feat) -> Result<()> {
        let c = x.dim().3;
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Feat) -> Feat {
        debug_assert_eq!(x.dim().3, self.in_channels);
        if self.depthwise {
            self.forward_depthwise(x)
        } else if self.geom.kernel == (1, 1, 1) && self.geom.padding == (0, 0, 0) {
            self.forward_pointwise(x)
        } else {
            self.forward_dense(x)
        }
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    /// `x` must be the tensor the matching forward pass consumed.
    pub fn backward(&mut self, x: &Feat, gout: &Feat) -> Feat {
        if self.depthwise {
            self.backward_depthwise(x, gout)
        } else if self.geom.kernel == (1, 1, 1) && self.geom.padding == (0, 0, 0) {
            self.backward_pointwise(x, gout)
        } else {
            self.backward_dense(x, gout)
        }
    }

    fn weight2d(&self) -> ndarray::ArrayView2<'_, f64> {
        let cols = self.geom.taps() * self.in_channels;
        self.weight
            .value
            .view()
            .into_shape_with_order((cols, self.out_channels))
            .unwrap()
    }

    // ---- dense path ----

    fn forward_dense(&self, x: &Feat) -> Feat {
        let (t, h, w, ci) = x.dim();
        let (to, ho, wo) = self.geom.out_dims(t, h, w);
        let co = self.out_channels;
        let cols = self.geom.taps() * ci;
        let w2 = self.weight2d();
        let bias = self.bias.as_ref().map(|b| b.value.view());
        let xs = x.as_slice().unwrap();
        let mut out = Array4::<f64>::zeros((to, ho, wo, co));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(t_o, out_t)| {
                let rows = ho * wo;
                let block = (BLOCK_BUDGET / cols.max(1)).clamp(1, rows.max(1));
                let mut patches = Array2::<f64>::zeros((block, cols));
                let mut y = Array2::<f64>::zeros((block, co));
                let mut out2 = out_t.into_shape_with_order((rows, co)).unwrap();
                let mut r0 = 0;
                while r0 < rows {
                    let n = block.min(rows - r0);
                    self.fill_patches(&mut patches, xs, (t, h, w, ci), wo, t_o, r0, n);
                    {
                        let mut yn = y.slice_mut(s![..n, ..]);
                        general_mat_mul(1.0, &patches.slice(s![..n, ..]), &w2, 0.0, &mut yn);
                        if let Some(b) = &bias {
                            yn += b;
                        }
                    }
                    out2.slice_mut(s![r0..r0 + n, ..]).assign(&y.slice(s![..n, ..]));
                    r0 += n;
                }
            });
        out
    }

    fn backward_dense(&mut self, x: &Feat, gout: &Feat) -> Feat {
        let (t, h, w, ci) = x.dim();
        let (to, ho, wo) = self.geom.out_dims(t, h, w);
        let co = self.out_channels;
        let cols = self.geom.taps() * ci;
        let mut gx = Array4::<f64>::zeros((t, h, w, ci));
        {
            let xs = x.as_slice().unwrap();
            let geom = self.geom;
            if self.weight.grad.is_none() {
                self.weight.grad = Some(ndarray::ArrayD::zeros(self.weight.value.raw_dim()));
            }
            let Param { value, grad } = &mut self.weight;
            let w2 = value.view().into_shape_with_order((cols, co)).unwrap();
            let gw = grad.as_mut().unwrap();
            let mut gw2 = gw.view_mut().into_shape_with_order((cols, co)).unwrap();
            let rows = ho * wo;
            let block = (BLOCK_BUDGET / cols.max(1)).clamp(1, rows.max(1));
            let mut patches = Array2::<f64>::zeros((block, cols));
            let mut gcols = Array2::<f64>::zeros((block, cols));
            let gxs = gx.as_slice_mut().unwrap();
            for t_o in 0..to {
                let go_t = gout.index_axis(Axis(0), t_o);
                let go2 = go_t.into_shape_with_order((rows, co)).unwrap();
                let mut r0 = 0;
                while r0 < rows {
                    let n = block.min(rows - r0);
                    fill_patches_impl(geom, &mut patches, xs, (t, h, w, ci), wo, t_o, r0, n);
                    let go_n = go2.slice(s![r0..r0 + n, ..]);
                    general_mat_mul(1.0, &patches.slice(s![..n, ..]).t(), &go_n, 1.0, &mut gw2);
                    {
                        let mut gc = gcols.slice_mut(s![..n, ..]);
                        general_mat_mul(1.0, &go_n, &w2.t(), 0.0, &mut gc);
                    }
                    scatter_patches_impl(geom, &gcols, gxs, (t, h, w, ci), wo, t_o, r0, n);
                    r0 += n;
                }
            }
        }
        if let Some(b) = self.bias.as_mut() {
            let gsum = gout
                .view()
                .into_shape_with_order((to * ho * wo, co))
                .unwrap()
                .sum_axis(Axis(0));
            let gb = b.grad_mut();
            let mut gb1 = gb.view_mut().into_shape_with_order(co).unwrap();
            gb1 += &gsum;
        }
        gx
    }

    #[allow(clippy::too_many_arguments)]
    fn fill_patches(
        &self,
        patches: &mut Array2<f64>,
        xs: &[f64],
        in_dims: (usize, usize, usize, usize),
        wo: usize,
        t_o: usize,
        r0: usize,
        n: usize,
    ) {
        fill_patches_impl(self.geom, patches, xs, in_dims, wo, t_o, r0, n);
    }

    // ---- pointwise path ----

    fn subsample(&self, x: &Feat) -> Feat {
        let (st, sh, sw) = self.geom.stride;
        x.slice(s![..;st, ..;sh, ..;sw, ..]).to_owned()
    }

    fn forward_pointwise(&self, x: &Feat) -> Feat {
        let strided = self.geom.stride != (1, 1, 1);
        let xv;
        let xr = if strided {
            xv = self.subsample(x);
            &xv
        } else {
            x
        };
        let (to, ho, wo, ci) = xr.dim();
        let co = self.out_channels;
        let x2 = xr.view().into_shape_with_order((to * ho * wo, ci)).unwrap();
        let w2 = self.weight2d();
        let mut out = Array4::<f64>::zeros((to, ho, wo, co));
        {
            let mut out2 = out
                .view_mut()
                .into_shape_with_order((to * ho * wo, co))
                .unwrap();
            general_mat_mul(1.0, &x2, &w2, 0.0, &mut out2);
            if let Some(b) = &self.bias {
                let b1 = b.value.view().into_shape_with_order(co).unwrap();
                out2 += &b1;
            }
        }
        out
    }

    fn backward_pointwise(&mut self, x: &Feat, gout: &Feat) -> Feat {
        let strided = self.geom.stride != (1, 1, 1);
        let xv;
        let xr = if strided {
            xv = self.subsample(x);
            &xv
        } else {
            x
        };
        let (to, ho, wo, ci) = xr.dim();
        let co = self.out_channels;
        let rows = to * ho * wo;
        let x2 = xr.view().into_shape_with_order((rows, ci)).unwrap();
        let go2 = gout.view().into_shape_with_order((rows, co)).unwrap();
        {
            let gw = self.weight.grad_mut();
            let mut gw2 = gw.view_mut().into_shape_with_order((ci, co)).unwrap();
            general_mat_mul(1.0, &x2.t(), &go2, 1.0, &mut gw2);
        }
        if let Some(b) = self.bias.as_mut() {
            let gsum = go2.sum_axis(Axis(0));
            let gb = b.grad_mut();
            let mut gb1 = gb.view_mut().into_shape_with_order(co).unwrap();
            gb1 += &gsum;
        }
        let w2 = self.weight2d();
        let mut gsub = Array2::<f64>::zeros((rows, ci));
        general_mat_mul(1.0, &go2, &w2.t(), 0.0, &mut gsub);
        if !strided {
            let (t, h, w, _) = x.dim();
            return gsub.into_shape_with_order((t, h, w, ci)).unwrap();
        }
        let (t, h, w, _) = x.dim();
        let (st, sh, sw) = self.geom.stride;
        let gsub4 = gsub.into_shape_with_order((to, ho, wo, ci)).unwrap();
        let mut gx = Array4::<f64>::zeros((t, h, w, ci));
        gx.slice_mut(s![..;st, ..;sh, ..;sw, ..]).assign(&gsub4);
        gx
    }

    // ---- depthwise path ----

    fn forward_depthwise(&self, x: &Feat) -> Feat {
        let (t, h, w, c) = x.dim();
        let (to, ho, wo) = self.geom.out_dims(t, h, w);
        let geom = self.geom;
        let (kt, kh, kw) = geom.kernel;
        let (st, sh, sw) = geom.stride;
        let (pt, ph, pw) = geom.padding;
        let ws = self.weight.value.as_slice().unwrap();
        let xs = x.as_slice().unwrap();
        let mut out = Array4::<f64>::zeros((to, ho, wo, c));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(t_o, mut out_t)| {
                let os = out_t.as_slice_mut().unwrap();
                for dt in 0..kt {
                    let tt = t_o as isize * st as isize + dt as isize - pt as isize;
                    if tt < 0 || tt >= t as isize {
                        continue;
                    }
                    let tt = tt as usize;
                    for dh in 0..kh {
                        let (h_lo, h_hi) = valid_range(ho, h, sh, dh, ph);
                        if h_lo > h_hi {
                            continue;
                        }
                        for dw in 0..kw {
                            let (w_lo, w_hi) = valid_range(wo, w, sw, dw, pw);
                            if w_lo > w_hi {
                                continue;
                            }
                            let tap = (dt * kh + dh) * kw + dw;
                            let wt = &ws[tap * c..tap * c + c];
                            for h_o in h_lo..=h_hi {
                                let hh = h_o * sh + dh - ph;
                                for w_o in w_lo..=w_hi {
                                    let ww = w_o * sw + dw - pw;
                                    let src = ((tt * h + hh) * w + ww) * c;
                                    let dst = (h_o * wo + w_o) * c;
                                    let xrow = &xs[src..src + c];
                                    let orow = &mut os[dst..dst + c];
                                    for i in 0..c {
                                        orow[i] += xrow[i] * wt[i];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        out
    }

    fn backward_depthwise(&mut self, x: &Feat, gout: &Feat) -> Feat {
        let (t, h, w, c) = x.dim();
        let (to, ho, wo) = self.geom.out_dims(t, h, w);
        let geom = self.geom;
        let (kt, kh, kw) = geom.kernel;
        let (st, sh, sw) = geom.stride;
        let (pt, ph, pw) = geom.padding;
        let xs = x.as_slice().unwrap();
        let gos = gout.as_slice().unwrap();

        // weight grads: taps are independent rows, safe to run in parallel
        {
            let gw = self.weight.grad_mut();
            let mut gw2 = gw
                .view_mut()
                .into_shape_with_order((kt * kh * kw, c))
                .unwrap();
            gw2.axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(tap, mut grow)| {
                    let dw = tap % kw;
                    let dh = (tap / kw) % kh;
                    let dt = tap / (kw * kh);
                    let acc = grow.as_slice_mut().unwrap();
                    for t_o in 0..to {
                        let tt = t_o as isize * st as isize + dt as isize - pt as isize;
                        if tt < 0 || tt >= t as isize {
                            continue;
                        }
                        let tt = tt as usize;
                        let (h_lo, h_hi) = valid_range(ho, h, sh, dh, ph);
                        if h_lo > h_hi {
                            continue;
                        }
                        let (w_lo, w_hi) = valid_range(wo, w, sw, dw, pw);
                        if w_lo > w_hi {
                            continue;
                        }
                        for h_o in h_lo..=h_hi {
                            let hh = h_o * sh + dh - ph;
                            for w_o in w_lo..=w_hi {
                                let ww = w_o * sw + dw - pw;
                                let src = ((tt * h + hh) * w + ww) * c;
                                let dst = ((t_o * ho + h_o) * wo + w_o) * c;
                                let xrow = &xs[src..src + c];
                                let grow_ = &gos[dst..dst + c];
                                for i in 0..c {
                                    acc[i] += grow_[i] * xrow[i];
                                }
                            }
                        }
                    }
                });
        }

        // input grads: each worker owns one input time slice
        let ws = self.weight.value.as_slice().unwrap();
        let mut gx = Array4::<f64>::zeros((t, h, w, c));
        gx.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(t_i, mut gx_t)| {
                let gxs = gx_t.as_slice_mut().unwrap();
                for dt in 0..kt {
                    // output slice that read input slice t_i through tap dt
                    let num = t_i as isize + pt as isize - dt as isize;
                    if num < 0 || num % st as isize != 0 {
                        continue;
                    }
                    let t_o = (num / st as isize) as usize;
                    if t_o >= to {
                        continue;
                    }
                    for dh in 0..kh {
                        let (h_lo, h_hi) = valid_range(ho, h, sh, dh, ph);
                        if h_lo > h_hi {
                            continue;
                        }
                        for dw in 0..kw {
                            let (w_lo, w_hi) = valid_range(wo, w, sw, dw, pw);
                            if w_lo > w_hi {
                                continue;
                            }
                            let tap = (dt * kh + dh) * kw + dw;
                            let wt = &ws[tap * c..tap * c + c];
                            for h_o in h_lo..=h_hi {
                                let hh = h_o * sh + dh - ph;
                                for w_o in w_lo..=w_hi {
                                    let ww = w_o * sw + dw - pw;
                                    let src = (hh * w + ww) * c;
                                    let dst = ((t_o * ho + h_o) * wo + w_o) * c;
                                    let grow = &gos[dst..dst + c];
                                    let gxrow = &mut gxs[src..src + c];
                                    for i in 0..c {
                                        gxrow[i] += grow[i] * wt[i];
                                    }
                                }
                            }
                        }
                    }
                }
            });
        gx
    }
}

/// Inclusive output range along one spatial axis for which
/// `o * stride + tap - pad` lands inside `[0, n_in)`.
fn valid_range(n_out: usize, n_in: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    let num = n_in as isize - 1 + pad as isize - tap as isize;
    if num < 0 {
        return (1, 0);
    }
    let hi = ((num as usize) / stride).min(n_out.saturating_sub(1));
    (lo, hi)
}

#[allow(clippy::too_many_arguments)]
fn fill_patches_impl(
    geom: ConvGeometry,
    patches: &mut Array2<f64>,
    xs: &[f64],
    in_dims: (usize, usize, usize, usize),
    wo: usize,
    t_o: usize,
    r0: usize,
    n: usize,
) {
    let (t, h, w, ci) = in_dims;
    let (kt, kh, kw) = geom.kernel;
    let (st, sh, sw) = geom.stride;
    let (pt, ph, pw) = geom.padding;
    let cols = kt * kh * kw * ci;
    let ps = patches.as_slice_mut().unwrap();
    for r in 0..n {
        let pos = r0 + r;
        let h_o = pos / wo;
        let w_o = pos % wo;
        let row = &mut ps[r * cols..(r + 1) * cols];
        let mut col = 0;
        for dt in 0..kt {
            let tt = t_o as isize * st as isize + dt as isize - pt as isize;
            let t_ok = tt >= 0 && tt < t as isize;
            for dh in 0..kh {
                let hh = h_o as isize * sh as isize + dh as isize - ph as isize;
                let h_ok = hh >= 0 && hh < h as isize;
                for dw in 0..kw {
                    let ww = w_o as isize * sw as isize + dw as isize - pw as isize;
                    let seg = &mut row[col..col + ci];
                    if t_ok && h_ok && ww >= 0 && ww < w as isize {
                        let src = ((tt as usize * h + hh as usize) * w + ww as usize) * ci;
                        seg.copy_from_slice(&xs[src..src + ci]);
                    } else {
                        seg.fill(0.0);
                    }
                    col += ci;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn scatter_patches_impl(
    geom: ConvGeometry,
    gcols: &Array2<f64>,
    gxs: &mut [f64],
    in_dims: (usize, usize, usize, usize),
    wo: usize,
    t_o: usize,
    r0: usize,
    n: usize,
) {
    let (t, h, w, ci) = in_dims;
    let (kt, kh, kw) = geom.kernel;
    let (st, sh, sw) = geom.stride;
    let (pt, ph, pw) = geom.padding;
    let cols = kt * kh * kw * ci;
    let gs = gcols.as_slice().unwrap();
    for r in 0..n {
        let pos = r0 + r;
        let h_o = pos / wo;
        let w_o = pos % wo;
        let row = &gs[r * cols..(r + 1) * cols];
        let mut col = 0;
        for dt in 0..kt {
            let tt = t_o as isize * st as isize + dt as isize - pt as isize;
            let t_ok = tt >= 0 && tt < t as isize;
            for dh in 0..kh {
                let hh = h_o as isize * sh as isize + dh as isize - ph as isize;
                let h_ok = hh >= 0 && hh < h as isize;
                for dw in 0..kw {
                    let ww = w_o as isize * sw as isize + dw as isize - pw as isize;
                    if t_ok && h_ok && ww >= 0 && ww < w as isize {
                        let dst = ((tt as usize * h + hh as usize) * w + ww as usize) * ci;
                        let seg = &row[col..col + ci];
                        let gxr = &mut gxs[dst..dst + ci];
                        for i in 0..ci {
                            gxr[i] += seg[i];
                        }
                    }
                    col += ci;
                }
            }
        }
    }
}

impl ParamSet for Conv3d {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        f(join_key(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join_key(prefix, "bias"), b);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        f(join_key(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(join_key(prefix, "bias"), b);
        }
    }
}

/// Reference convolution used by tests: direct seven-deep loop, no lowering.
#[cfg(test)]
pub fn conv3d_naive(x: &Feat, conv: &Conv3d) -> Feat {
    let (t, h, w, ci) = x.dim();
    let (to, ho, wo) = conv.geom.out_dims(t, h, w);
    let co = conv.out_channels;
    let (kt, kh, kw) = conv.geom.kernel;
    let (st, sh, sw) = conv.geom.stride;
    let (pt, ph, pw) = conv.geom.padding;
    let mut out = Array4::<f64>::zeros((to, ho, wo, co));
    for t_o in 0..to {
        for h_o in 0..ho {
            for w_o in 0..wo {
                for c_o in 0..co {
                    let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[[c_o]]);
                    for dt in 0..kt {
                        for dh in 0..kh {
                            for dw in 0..kw {
                                let tt = (t_o * st + dt) as isize - pt as isize;
                                let hh = (h_o * sh + dh) as isize - ph as isize;
                                let ww = (w_o * sw + dw) as isize - pw as isize;
                                if tt < 0 || hh < 0 || ww < 0 {
                                    continue;
                                }
                                let (tt, hh, ww) = (tt as usize, hh as usize, ww as usize);
                                if tt >= t || hh >= h || ww >= w {
                                    continue;
                                }
                                if conv.depthwise {
                                    if c_o < ci {
                                        acc += x[[tt, hh, ww, c_o]]
                                            * conv.weight.value[[dt, dh, dw, c_o]];
                                    }
                                } else {
                                    for c_i in 0..ci {
                                        acc += x[[tt, hh, ww, c_i]]
                                            * conv.weight.value[[dt, dh, dw, c_i, c_o]];
                                    }
                                }
                            }
                        }
                    }
                    out[[t_o, h_o, w_o, c_o]] = acc;
                }
            }
        }
    }
    out
}
