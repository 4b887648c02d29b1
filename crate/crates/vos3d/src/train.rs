//! Loss, learning-rate schedule, the two-stage training driver, and a
//! finite-difference gradient checker.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{config_hash, save_checkpoint, CheckpointManifest, TrainingSnapshot, MANIFEST_VERSION};
use crate::model::SegmentationModel;
use crate::nn::ops::sigmoid;
use crate::nn::param::{named_params_mut, zero_grads, ParamSet};
use crate::pipeline::sample_training_clip;
use crate::synth::{synthesize_clip, SynthConfig};
use crate::types::{normalize_clip, MaskSequence, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainStage {
    Images,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Per-pixel binary cross-entropy on sigmoid logits.
    #[serde(rename = "binary-cross-entropy")]
    Bce,
    /// Two-class softmax cross-entropy; with the pair head this equals
    /// binary cross-entropy on the logit difference.
    #[serde(rename = "two-class-cross-entropy")]
    TwoClassCe,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub decay_gamma: f64,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    /// Training clip length T_c.
    pub clip_length: usize,
    /// Maximum temporal span S of a sampled clip.
    pub max_span: usize,
    pub stage: TrainStage,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-5,
            decay_gamma: 0.95,
            epochs: 20,
            iterations_per_epoch: 100,
            batch_size: 2,
            clip_length: 8,
            max_span: 32,
            stage: TrainStage::Images,
            loss: LossKind::Bce,
            seed: 1234,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_lr <= 0.0 {
            return Err(Error::config("initial_lr must be positive"));
        }
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return Err(Error::config("decay_gamma must lie in (0, 1]"));
        }
        if self.epochs == 0 || self.iterations_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs, iterations and batch size must be >= 1"));
        }
        if self.clip_length == 0 || self.max_span == 0 {
            return Err(Error::config("clip_length and max_span must be >= 1"));
        }
        Ok(())
    }
}

/// Exponential schedule: `initial_lr * gamma^epoch`.
pub fn lr_at_epoch(initial_lr: f64, gamma: f64, epoch: usize) -> f64 {
    initial_lr * gamma.powi(epoch as i32)
}

/// Mean per-pixel binary cross-entropy between sigmoid logits and a binary
/// mask, in the overflow-free log-sum-exp form.
pub fn pixel_cross_entropy(logits: &Array3<f64>, gt: &MaskSequence) -> Result<f64> {
    Ok(pixel_cross_entropy_with_grad(logits, gt)?.0)
}

/// Loss along with its gradient with respect to the logits.
pub fn pixel_cross_entropy_with_grad(
    logits: &Array3<f64>,
    gt: &MaskSequence,
) -> Result<(f64, Array3<f64>)> {
    if logits.dim() != gt.dims() {
        return Err(Error::shape(format!(
            "logits {:?} vs ground truth {:?}",
            logits.dim(),
            gt.dims()
        )));
    }
    let n = logits.len() as f64;
    let mut sum = 0.0;
    let mut grad = logits.clone();
    for (g, &t) in grad.iter_mut().zip(gt.data().iter()) {
        let z = *g;
        if !z.is_finite() {
            return Err(Error::NonFinite("logits contain non-finite values".into()));
        }
        let y = f64::from(t);
        sum += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        *g = (sigmoid(z) - y) / n;
    }
    Ok((sum / n, grad))
}

/// Adaptive-moment optimizer with bias correction. State is keyed by the
/// parameter path, so it survives across calls in a fixed iteration order.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    state: HashMap<String, (ArrayD<f64>, ArrayD<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, state: HashMap::new() }
    }
}

impl Adam {
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut impl ParamSet, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in named_params_mut(model) {
            let Some(g) = p.grad.as_ref() else { continue };
            let (m, v) = self
                .state
                .entry(name)
                .or_insert_with(|| (ArrayD::zeros(g.raw_dim()), ArrayD::zeros(g.raw_dim())));
            let ms = m.as_slice_mut().unwrap();
            let vs = v.as_slice_mut().unwrap();
            let gs = g.as_slice().unwrap();
            let ps = p.value.as_slice_mut().unwrap();
            for i in 0..gs.len() {
                ms[i] = self.beta1 * ms[i] + (1.0 - self.beta1) * gs[i];
                vs[i] = self.beta2 * vs[i] + (1.0 - self.beta2) * gs[i] * gs[i];
                let mhat = ms[i] / bc1;
                let vhat = vs[i] / bc2;
                ps[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// A static image with its instance masks, the unit of the image stage.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub image: Array3<f64>,
    pub instance_masks: Vec<Array2<u8>>,
}

/// A video sequence with dense ground truth, the unit of the video stage.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub frames: VideoTensor,
    pub gt: MaskSequence,
}

pub enum TrainDataset {
    /// Clips are synthesized on the fly from static images.
    Images { samples: Vec<ImageSample>, synth: SynthConfig },
    /// Clips are sampled from video sequences with the span-limited sampler.
    Video(Vec<VideoSample>),
    /// Pre-assembled raw clips, trained on as-is.
    Clips(Vec<(VideoTensor, MaskSequence)>),
}

impl TrainDataset {
    fn is_empty(&self) -> bool {
        match self {
            TrainDataset::Images { samples, .. } => samples.is_empty(),
            TrainDataset::Video(v) => v.is_empty(),
            TrainDataset::Clips(c) => c.is_empty(),
        }
    }
}

fn draw_clip(
    dataset: &TrainDataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha20Rng,
) -> Result<(VideoTensor, MaskSequence)> {
    match dataset {
        TrainDataset::Images { samples, synth } => {
            let sample = &samples[rng.gen_range(0..samples.len())];
            let synth = SynthConfig { clip_length: cfg.clip_length, ..synth.clone() };
            synthesize_clip(&sample.image, &sample.instance_masks, &synth, rng)
        }
        TrainDataset::Video(videos) => {
            let video = &videos[rng.gen_range(0..videos.len())];
            let len = video.frames.frames();
            let spec = sample_training_clip(len, cfg.clip_length, cfg.max_span, rng)?;
            let (_, h, w, _) = video.frames.data().dim();
            let mut clip = Array4::<f64>::zeros((cfg.clip_length, h, w, 3));
            let mut gt = Array3::<u8>::zeros((cfg.clip_length, h, w));
            for (i, &f) in spec.indices.iter().enumerate() {
                clip.index_axis_mut(ndarray::Axis(0), i)
                    .assign(&video.frames.data().index_axis(ndarray::Axis(0), f));
                gt.index_axis_mut(ndarray::Axis(0), i)
                    .assign(&video.gt.data().index_axis(ndarray::Axis(0), f));
            }
            Ok((VideoTensor::new(clip)?, MaskSequence::new(gt)?))
        }
        TrainDataset::Clips(clips) => {
            let (clip, gt) = &clips[rng.gen_range(0..clips.len())];
            Ok((clip.clone(), gt.clone()))
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub manifest: CheckpointManifest,
    pub epoch_losses: Vec<f64>,
}

/// Run one training stage. Checkpoints are written per epoch under
/// `out_dir` when given; the returned manifest describes the final state.
pub fn train_stage(
    model: &mut SegmentationModel,
    dataset: &TrainDataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if matches!(cfg.loss, LossKind::TwoClassCe) && model.decoder.config.head_channels != 2 {
        return Err(Error::config(
            "two-class-cross-entropy requires head_channels = 2",
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::default();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut last_lr = cfg.initial_lr;
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg.initial_lr, cfg.decay_gamma, epoch);
        last_lr = lr;
        let mut epoch_sum = 0.0;
        for iter in 0..cfg.iterations_per_epoch {
            zero_grads(model);
            let mut batch_loss = 0.0;
            for _ in 0..cfg.batch_size {
                let (raw, gt) = draw_clip(dataset, cfg, &mut rng)?;
                let clip = normalize_clip(&raw, model.normalization.mean, model.normalization.std)?;
                let (logits, cache) = model.forward_train(&clip)?;
                let (loss, mut glogits) = pixel_cross_entropy_with_grad(&logits, &gt)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss became non-finite at epoch {epoch}, iteration {iter}"
                    )));
                }
                batch_loss += loss;
                let scale = 1.0 / cfg.batch_size as f64;
                glogits.mapv_inplace(|v| v * scale);
                model.backward(&cache, &glogits);
            }
            batch_loss /= cfg.batch_size as f64;
            adam.step(model, lr);
            epoch_sum += batch_loss;
        }
        let mean_loss = epoch_sum / cfg.iterations_per_epoch as f64;
        epoch_losses.push(mean_loss);
        log::info!("epoch {epoch}: mean loss {mean_loss:.6}, lr {lr:.3e}");
        if let Some(dir) = out_dir {
            let manifest = manifest_for(model, epoch, mean_loss, lr);
            save_checkpoint(&dir.join(format!("epoch_{epoch:03}")), model, &manifest)?;
        }
    }
    let manifest = manifest_for(
        model,
        cfg.epochs - 1,
        *epoch_losses.last().unwrap(),
        last_lr,
    );
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("final"), model, &manifest)?;
    }
    Ok(TrainOutcome { manifest, epoch_losses })
}

fn manifest_for(model: &SegmentationModel, epoch: usize, mean_loss: f64, lr: f64) -> CheckpointManifest {
    CheckpointManifest {
        format_version: MANIFEST_VERSION,
        encoder: model.encoder.config.clone(),
        decoder: model.decoder.config.clone(),
        normalization: model.normalization,
        epoch,
        config_hash: config_hash(&model.encoder.config, &model.decoder.config),
        metrics: Some(TrainingSnapshot { epoch, mean_loss, learning_rate: lr }),
        optimizer_state: None,
    }
}

/// Compare an analytic backward pass against central differences through a
/// random output projection; returns the worst relative error over all
/// input components.
///
/// `forward` must be a deterministic function of its input; `backward`
/// receives the input and the projection weights and must return the
/// gradient of `sum(forward(x) * weights)` with respect to `x`.
pub fn finite_difference_gradcheck(
    forward: &mut dyn FnMut(&ArrayD<f64>) -> ArrayD<f64>,
    backward: &mut dyn FnMut(&ArrayD<f64>, &ArrayD<f64>) -> ArrayD<f64>,
    input: &ArrayD<f64>,
    eps: f64,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let y0 = forward(input);
    let proj = ArrayD::from_shape_fn(y0.raw_dim(), |_| rng.gen_range(-1.0..1.0));
    let analytic = backward(input, &proj);
    assert_eq!(analytic.shape(), input.shape(), "backward returned a misshapen gradient");
    let floor = 1e-6 * analytic.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
    let mut worst = 0.0_f64;
    let mut x = input.clone();
    for idx in 0..input.len() {
        let orig = x.as_slice().unwrap()[idx];
        x.as_slice_mut().unwrap()[idx] = orig + eps;
        let sp = (&forward(&x) * &proj).sum();
        x.as_slice_mut().unwrap()[idx] = orig - eps;
        let sm = (&forward(&x) * &proj).sum();
        x.as_slice_mut().unwrap()[idx] = orig;
        let numeric = (sp - sm) / (2.0 * eps);
        let ana = analytic.as_slice().unwrap()[idx];
        let denom = ana.abs().max(numeric.abs()).max(floor);
        if denom > 0.0 {
            worst = worst.max((ana - numeric).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{Gc3d, GC3DConfig, Rf3d};
    use crate::io::load_checkpoint;
    use crate::nn::conv::{Conv3d, Feat};
    use crate::synth::TransformSpec;
    use ndarray::{Array3, Array4, IxDyn};

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn random_logits(dims: (usize, usize, usize), r: &mut impl Rng) -> Array3<f64> {
        Array3::from_shape_fn(dims, |_| r.gen_range(-2.0..2.0))
    }

    fn random_gt(dims: (usize, usize, usize), r: &mut impl Rng) -> MaskSequence {
        MaskSequence::new(Array3::from_shape_fn(dims, |_| u8::from(r.gen_bool(0.5)))).unwrap()
    }

    #[test]
    fn bce_at_zero_logits_is_ln_two() {
        let logits = Array3::<f64>::zeros((2, 3, 3));
        let mut r = rng(1);
        let gt = random_gt((2, 3, 3), &mut r);
        let loss = pixel_cross_entropy(&logits, &gt).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let mut logits = Array3::<f64>::zeros((1, 1, 2));
        logits[[0, 0, 0]] = 20.0;
        logits[[0, 0, 1]] = 20.0;
        let mut gt = Array3::<u8>::zeros((1, 1, 2));
        gt[[0, 0, 0]] = 1;
        let gt = MaskSequence::new(gt).unwrap();
        let loss = pixel_cross_entropy(&logits, &gt).unwrap();
        // confident-correct pixel contributes ~2e-9; confident-wrong ~20
        let expect = ((-20.0f64).exp().ln_1p() + 20.0 + (-20.0f64).exp().ln_1p()) / 2.0;
        assert!((loss - expect).abs() < 1e-12);
        assert!(loss.is_finite());
        let per_pixel_correct = (-20.0f64).exp().ln_1p();
        assert!(per_pixel_correct < 3e-9 && per_pixel_correct > 1e-9);
    }

    #[test]
    fn bce_is_permutation_invariant() {
        let mut r = rng(2);
        let logits = random_logits((1, 4, 4), &mut r);
        let gt = random_gt((1, 4, 4), &mut r);
        let base = pixel_cross_entropy(&logits, &gt).unwrap();
        // transpose both: same multiset of (logit, label) pairs
        let lt = logits.clone().permuted_axes([0, 2, 1]).as_standard_layout().to_owned();
        let gtt = MaskSequence::new(
            gt.data().clone().permuted_axes([0, 2, 1]).as_standard_layout().to_owned(),
        )
        .unwrap();
        let perm = pixel_cross_entropy(&lt, &gtt).unwrap();
        assert!((base - perm).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_shape_mismatch_and_nan() {
        let logits = Array3::<f64>::zeros((1, 2, 2));
        let gt = MaskSequence::new(Array3::<u8>::zeros((1, 2, 3))).unwrap();
        assert!(matches!(pixel_cross_entropy(&logits, &gt), Err(Error::Shape(_))));
        let mut bad = Array3::<f64>::zeros((1, 2, 2));
        bad[[0, 0, 0]] = f64::NAN;
        let gt = MaskSequence::new(Array3::<u8>::zeros((1, 2, 2))).unwrap();
        assert!(matches!(pixel_cross_entropy(&bad, &gt), Err(Error::NonFinite(_))));
    }

    #[test]
    fn bce_is_nonnegative_and_vanishes_on_confident_match() {
        let mut gt = Array3::<u8>::zeros((1, 2, 2));
        gt[[0, 0, 0]] = 1;
        gt[[0, 1, 1]] = 1;
        let logits = gt.mapv(|v| if v != 0 { 45.0 } else { -45.0 });
        let gt = MaskSequence::new(gt).unwrap();
        let loss = pixel_cross_entropy(&logits, &gt).unwrap();
        assert!(loss >= 0.0);
        assert!(loss < 1e-15);
    }

    #[test]
    fn lr_schedule_values() {
        assert_eq!(lr_at_epoch(1e-5, 0.95, 0), 1e-5);
        assert_eq!(lr_at_epoch(1e-5, 1.0, 17), 1e-5);
        assert!((lr_at_epoch(1e-5, 0.5, 3) - 1.25e-6).abs() < 1e-18);
    }

    #[test]
    fn gradcheck_linear_op_is_machine_precision() {
        let mut r = rng(3);
        let conv = Conv3d::new_pointwise(3, 4, (1, 1, 1), true, &mut r);
        let conv = std::cell::RefCell::new(conv);
        let x = Array4::from_shape_fn((2, 3, 3, 3), |_| r.gen_range(-1.0..1.0));
        let xd = x.clone().into_dyn();
        let err = finite_difference_gradcheck(
            &mut |x| {
                let x4: Feat = x.clone().into_dimensionality().unwrap();
                conv.borrow().forward(&x4).into_dyn()
            },
            &mut |x, u| {
                let x4: Feat = x.clone().into_dimensionality().unwrap();
                let u4: Feat = u.clone().into_dimensionality().unwrap();
                conv.borrow_mut().backward(&x4, &u4).into_dyn()
            },
            &xd,
            // central differences are exact for linear maps, so a large
            // step just minimizes cancellation noise
            1e-2,
            42,
        );
        assert!(err < 1e-10, "linear op gradcheck error {err}");
    }

    #[test]
    fn gradcheck_gc3d() {
        let mut r = rng(4);
        let gc = Gc3d::new(GC3DConfig { k: 7, in_channels: 4, out_channels: 4 }, false, &mut r)
            .unwrap();
        let gc = std::cell::RefCell::new(gc);
        let x = Array4::from_shape_fn((2, 6, 6, 4), |_| r.gen_range(-1.0..1.0)).into_dyn();
        let err = finite_difference_gradcheck(
            &mut |x| {
                let x4: Feat = x.clone().into_dimensionality().unwrap();
                gc.borrow().forward(&x4).unwrap().into_dyn()
            },
            &mut |x, u| {
                let x4: Feat = x.clone().into_dimensionality().unwrap();
                let u4: Feat = u.clone().into_dimensionality().unwrap();
                let mut m = gc.borrow_mut();
                let (_, cache) = m.forward_train(&x4).unwrap();
                m.backward(&cache, &u4).into_dyn()
            },
            &x,
            1e-5,
            43,
        );
        assert!(err <= 1e-4, "gc3d gradcheck error {err}");
    }

    #[test]
    fn gradcheck_rf3d() {
        let mut r = rng(5);
        let rf = Rf3d::new(4, 3, 4, 2, &mut r);
        let rf = std::cell::RefCell::new(rf);
        let mut skip_rng = rng(6);
        let skip = Array4::from_shape_fn((2, 8, 8, 3), |_| skip_rng.gen_range(-1.0..1.0));
        let x = Array4::from_shape_fn((1, 4, 4, 4), |_| skip_rng.gen_range(-1.0..1.0)).into_dyn();
        let err = finite_difference_gradcheck(
            &mut |x| {
                let x4: Feat = x.clone().into_dimensionality().unwrap();
                let mut m = rf.borrow_mut();
                m.forward_train(&x4, &skip).unwrap().0.into_dyn()
            },
            &mut |x, u| {
                let x4: Feat = x.clone().into_dimensionality().unwrap();
                let u4: Feat = u.clone().into_dimensionality().unwrap();
                let mut m = rf.borrow_mut();
                let (_, cache) = m.forward_train(&x4, &skip).unwrap();
                m.backward(&cache, &u4).0.into_dyn()
            },
            &x,
            1e-5,
            44,
        );
        assert!(err <= 1e-4, "rf3d gradcheck error {err}");
    }

    #[test]
    fn gradcheck_whole_model_on_tiny_input() {
        let mut r = rng(7);
        let model = SegmentationModel::tiny(2, &mut r).unwrap();
        let model = std::cell::RefCell::new(model);
        let x = Array4::from_shape_fn((2, 16, 16, 3), |_| r.gen_range(-1.0..1.0)).into_dyn();
        let err = finite_difference_gradcheck(
            &mut |x| {
                let clip = VideoTensor::new(x.clone().into_dimensionality().unwrap()).unwrap();
                let mut m = model.borrow_mut();
                m.forward_train(&clip).unwrap().0.into_dyn()
            },
            &mut |x, u| {
                let clip = VideoTensor::new(x.clone().into_dimensionality().unwrap()).unwrap();
                let u3: Array3<f64> = u.clone().into_dimensionality().unwrap();
                let mut m = model.borrow_mut();
                let (_, cache) = m.forward_train(&clip).unwrap();
                m.backward(&cache, &u3).into_dyn()
            },
            &x,
            1e-5,
            45,
        );
        // the deep composition crosses relu kinks, where central
        // differences pick up O(eps) error on isolated components
        assert!(err <= 5e-4, "model gradcheck error {err}");
    }

    fn fixed_batch(seed: u64) -> (VideoTensor, MaskSequence) {
        let mut r = rng(seed);
        let clip =
            VideoTensor::new(Array4::from_shape_fn((4, 32, 32, 3), |_| r.gen_range(0.0..255.0)))
                .unwrap();
        let mut gt = Array3::<u8>::zeros((4, 32, 32));
        for t in 0..4 {
            for i in 8..24 {
                for j in 8..24 {
                    gt[[t, i, j]] = 1;
                }
            }
        }
        (clip, MaskSequence::new(gt).unwrap())
    }

    #[test]
    fn single_adam_step_descends_on_fixed_batch() {
        let mut failures = 0;
        for seed in 0..20 {
            let mut r = rng(1000 + seed);
            let mut model = SegmentationModel::tiny(2, &mut r).unwrap();
            let (raw, gt) = fixed_batch(seed);
            let clip =
                normalize_clip(&raw, model.normalization.mean, model.normalization.std).unwrap();
            let loss_of = |m: &mut SegmentationModel| {
                let (logits, _) = m.forward_train(&clip).unwrap();
                pixel_cross_entropy(&logits, &gt).unwrap()
            };
            zero_grads(&mut model);
            let (logits, cache) = model.forward_train(&clip).unwrap();
            let (before, glogits) = pixel_cross_entropy_with_grad(&logits, &gt).unwrap();
            model.backward(&cache, &glogits);
            let mut adam = Adam::default();
            adam.step(&mut model, 1e-5);
            let after = loss_of(&mut model);
            if after >= before {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures} of 20 seeds failed to descend");
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_forward_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng(8);
        let mut model = SegmentationModel::tiny(2, &mut r).unwrap();
        // run one training step so running stats are non-trivial
        let (raw, gt) = fixed_batch(3);
        let clip = normalize_clip(&raw, model.normalization.mean, model.normalization.std).unwrap();
        zero_grads(&mut model);
        let (logits, cache) = model.forward_train(&clip).unwrap();
        let (_, glogits) = pixel_cross_entropy_with_grad(&logits, &gt).unwrap();
        model.backward(&cache, &glogits);
        Adam::default().step(&mut model, 1e-4);

        let manifest = manifest_for(&model, 0, 0.5, 1e-4);
        save_checkpoint(dir.path(), &model, &manifest).unwrap();
        let (loaded, manifest2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(manifest, manifest2);
        let a = model.forward_logits(&clip).unwrap();
        let b = loaded.forward_logits(&clip).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn video_stage_handles_single_frame_sequences() {
        let mut r = rng(9);
        let mut model = SegmentationModel::tiny(2, &mut r).unwrap();
        let frames =
            VideoTensor::new(Array4::from_shape_fn((1, 32, 32, 3), |_| r.gen_range(0.0..255.0)))
                .unwrap();
        let gt = MaskSequence::new(Array3::from_elem((1, 32, 32), 1u8)).unwrap();
        let dataset = TrainDataset::Video(vec![VideoSample { frames, gt }]);
        let cfg = TrainConfig {
            epochs: 1,
            iterations_per_epoch: 2,
            batch_size: 1,
            clip_length: 4,
            ..Default::default()
        };
        let outcome = train_stage(&mut model, &dataset, &cfg, None).unwrap();
        assert_eq!(outcome.epoch_losses.len(), 1);
        assert!(outcome.epoch_losses[0].is_finite());
    }

    #[test]
    fn image_stage_runs_and_uses_schedule() {
        let mut r = rng(10);
        let mut model = SegmentationModel::tiny(2, &mut r).unwrap();
        let image = Array3::from_shape_fn((32, 32, 3), |(i, j, _)| ((i + j) % 255) as f64);
        let mut mask = Array2::<u8>::zeros((32, 32));
        for i in 10..22 {
            for j in 10..22 {
                mask[[i, j]] = 1;
            }
        }
        let dataset = TrainDataset::Images {
            samples: vec![ImageSample { image, instance_masks: vec![mask] }],
            synth: SynthConfig { per_step: TransformSpec::identity(), ..Default::default() },
        };
        let cfg = TrainConfig {
            epochs: 2,
            iterations_per_epoch: 2,
            batch_size: 1,
            clip_length: 4,
            initial_lr: 1e-4,
            decay_gamma: 0.5,
            ..Default::default()
        };
        let outcome = train_stage(&mut model, &dataset, &cfg, None).unwrap();
        assert_eq!(outcome.epoch_losses.len(), 2);
        let snap = outcome.manifest.metrics.unwrap();
        assert_eq!(snap.learning_rate, lr_at_epoch(1e-4, 0.5, 1));
    }

    #[test]
    fn train_aborts_on_non_finite_loss() {
        let mut r = rng(11);
        let mut model = SegmentationModel::tiny(2, &mut r).unwrap();
        for (_, p) in named_params_mut(&mut model) {
            p.value.fill(f64::NAN);
        }
        let (clip, gt) = fixed_batch(5);
        let dataset = TrainDataset::Clips(vec![(clip, gt)]);
        let cfg = TrainConfig {
            epochs: 1,
            iterations_per_epoch: 1,
            batch_size: 1,
            clip_length: 4,
            ..Default::default()
        };
        let err = train_stage(&mut model, &dataset, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_) | Error::InvalidArgument(_)));
    }

    #[test]
    fn gradcheck_shapes_are_enforced() {
        let x = ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // identity op with correct backward
        let err = finite_difference_gradcheck(
            &mut |x| x.clone(),
            &mut |_, u| u.clone(),
            &x,
            1e-2,
            7,
        );
        assert!(err < 1e-12);
    }
}

#[cfg(test)]
mod two_class_tests {
    use super::*;
    use crate::decoder::DecoderConfig;
    use crate::encoder::EncoderConfig;
    use crate::model::{build_model, Normalization};
    use ndarray::{Array3, Array4};

    #[test]
    fn two_class_head_trains_with_matching_loss() {
        let mut r = ChaCha20Rng::seed_from_u64(21);
        let enc = EncoderConfig::tiny(2);
        let dec = DecoderConfig { head_channels: 2, ..DecoderConfig::tiny(2) };
        let mut model = build_model(&enc, &dec, Normalization::default(), &mut r).unwrap();
        let clip = VideoTensor::new(Array4::from_shape_fn((4, 32, 32, 3), |_| {
            r.gen_range(0.0..255.0)
        }))
        .unwrap();
        let gt = MaskSequence::new(Array3::from_elem((4, 32, 32), 1u8)).unwrap();
        let dataset = TrainDataset::Clips(vec![(clip, gt)]);
        let cfg = TrainConfig {
            epochs: 1,
            iterations_per_epoch: 2,
            batch_size: 1,
            clip_length: 4,
            loss: LossKind::TwoClassCe,
            ..Default::default()
        };
        let outcome = train_stage(&mut model, &dataset, &cfg, None).unwrap();
        assert!(outcome.epoch_losses[0].is_finite());

        // the pairing is validated: a single-channel head rejects this loss
        let mut single = crate::model::SegmentationModel::tiny(2, &mut r).unwrap();
        let clip = VideoTensor::new(Array4::from_shape_fn((4, 32, 32, 3), |_| {
            r.gen_range(0.0..255.0)
        }))
        .unwrap();
        let gt = MaskSequence::new(Array3::from_elem((4, 32, 32), 0u8)).unwrap();
        let err = train_stage(
            &mut single,
            &TrainDataset::Clips(vec![(clip, gt)]),
            &cfg,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
