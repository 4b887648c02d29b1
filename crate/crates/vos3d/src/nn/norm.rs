//! Per-channel statistics normalization with frozen statistics.
//!
//! The layer normalizes with its stored running statistics in both training
//! and inference, the usual regime when effective batch sizes are one clip.
//! With random initialization the statistics are (0, 1), so the layer starts
//! as a learnable affine; statistics loaded from a checkpoint are honored
//! as-is and never updated by training.

use ndarray::{Array1, ArrayD};
use rayon::prelude::*;

use super::conv::Feat;
use super::init;
use super::param::{join_key, Param, ParamSet};

pub struct BatchNorm3d {
    pub channels: usize,
    pub eps: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: ArrayD<f64>,
    pub running_var: ArrayD<f64>,
}

pub struct BnCache {
    pub x_hat: Feat,
    pub inv_std: Array1<f64>,
}

impl BatchNorm3d {
    pub fn new(channels: usize) -> Self {
        BatchNorm3d {
            channels,
            eps: 1e-5,
            gamma: Param::new(init::ones(&[channels])),
            beta: Param::new(init::zeros(&[channels])),
            running_mean: init::zeros(&[channels]),
            running_var: init::ones(&[channels]),
        }
    }

    fn inv_std(&self) -> Vec<f64> {
        self.running_var
            .as_slice()
            .unwrap()
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect()
    }

    fn normalize(&self, x: &Feat) -> (Feat, Feat, Vec<f64>) {
        let c = self.channels;
        let g = self.gamma.value.as_slice().unwrap();
        let b = self.beta.value.as_slice().unwrap();
        let rm = self.running_mean.as_slice().unwrap();
        let inv_std = self.inv_std();
        let mut x_hat = x.clone();
        let mut y = x.clone();
        {
            let xh = x_hat.as_slice_mut().unwrap();
            let ys = y.as_slice_mut().unwrap();
            xh.par_chunks_exact_mut(c)
                .zip(ys.par_chunks_exact_mut(c))
                .for_each(|(hrow, yrow)| {
                    for i in 0..c {
                        let v = (hrow[i] - rm[i]) * inv_std[i];
                        hrow[i] = v;
                        yrow[i] = g[i] * v + b[i];
                    }
                });
        }
        (y, x_hat, inv_std)
    }

    pub fn forward_eval(&self, x: &Feat) -> Feat {
        let c = self.channels;
        let g = self.gamma.value.as_slice().unwrap();
        let b = self.beta.value.as_slice().unwrap();
        let rm = self.running_mean.as_slice().unwrap();
        let inv_std = self.inv_std();
        let scale: Vec<f64> = (0..c).map(|i| g[i] * inv_std[i]).collect();
        let shift: Vec<f64> = (0..c).map(|i| b[i] - rm[i] * scale[i]).collect();
        let mut y = x.clone();
        y.as_slice_mut()
            .unwrap()
            .par_chunks_exact_mut(c)
            .for_each(|row| {
                for i in 0..c {
                    row[i] = row[i] * scale[i] + shift[i];
                }
            });
        y
    }

    pub fn forward_train(&mut self, x: &Feat) -> (Feat, BnCache) {
        let (y, x_hat, inv_std) = self.normalize(x);
        (y, BnCache { x_hat, inv_std: Array1::from_vec(inv_std) })
    }

    pub fn backward(&mut self, cache: &BnCache, gout: &Feat) -> Feat {
        let c = self.channels;
        let gos = gout.as_slice().unwrap();
        let xh = cache.x_hat.as_slice().unwrap();
        let mut s1 = vec![0.0; c];
        let mut s2 = vec![0.0; c];
        for (grow, hrow) in gos.chunks_exact(c).zip(xh.chunks_exact(c)) {
            for i in 0..c {
                s1[i] += grow[i];
                s2[i] += grow[i] * hrow[i];
            }
        }
        {
            let gg = self.gamma.grad_mut().as_slice_mut().unwrap();
            for i in 0..c {
                gg[i] += s2[i];
            }
        }
        {
            let gb = self.beta.grad_mut().as_slice_mut().unwrap();
            for i in 0..c {
                gb[i] += s1[i];
            }
        }
        let g = self.gamma.value.as_slice().unwrap();
        let inv_std = cache.inv_std.as_slice().unwrap();
        let scale: Vec<f64> = (0..c).map(|i| g[i] * inv_std[i]).collect();
        let mut gx = gout.clone();
        gx.as_slice_mut()
            .unwrap()
            .par_chunks_exact_mut(c)
            .for_each(|row| {
                for i in 0..c {
                    row[i] *= scale[i];
                }
            });
        gx
    }
}

impl ParamSet for BatchNorm3d {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        f(join_key(prefix, "gamma"), &self.gamma);
        f(join_key(prefix, "beta"), &self.beta);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        f(join_key(prefix, "gamma"), &mut self.gamma);
        f(join_key(prefix, "beta"), &mut self.beta);
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<f64>)) {
        f(join_key(prefix, "running_mean"), &self.running_mean);
        f(join_key(prefix, "running_var"), &self.running_var);
    }
    fn visit_buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a mut ArrayD<f64>),
    ) {
        f(join_key(prefix, "running_mean"), &mut self.running_mean);
        f(join_key(prefix, "running_var"), &mut self.running_var);
    }
}
