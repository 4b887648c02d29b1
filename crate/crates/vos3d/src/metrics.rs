//! Evaluation measures: region overlap (J), boundary accuracy (F), per-pixel
//! saliency F-measure, and mean absolute error, with the dataset-level
//! averaging used by the standard video segmentation protocols.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel tolerance for matching predicted and ground-truth contours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryMatchConfig {
    pub tolerance_radius: usize,
}

impl BoundaryMatchConfig {
    pub fn with_radius(tolerance_radius: usize) -> Result<Self> {
        if tolerance_radius == 0 {
            return Err(Error::config("boundary tolerance radius must be >= 1"));
        }
        Ok(BoundaryMatchConfig { tolerance_radius })
    }

    /// Benchmark convention: 0.8% of the image diagonal, rounded up.
    pub fn for_image(h: usize, w: usize) -> Self {
        let diag = ((h * h + w * w) as f64).sqrt();
        let r = (0.008 * diag).ceil() as usize;
        BoundaryMatchConfig { tolerance_radius: r.max(1) }
    }
}

fn check_shapes(pred: &ArrayView2<u8>, gt: &ArrayView2<u8>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::invalid(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    Ok(())
}

/// Intersection over union of two binary masks; 1.0 when both are empty.
pub fn region_jaccard(pred: &ArrayView2<u8>, gt: &ArrayView2<u8>) -> Result<f64> {
    check_shapes(pred, gt)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let p = p != 0;
        let g = g != 0;
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// One-pixel contour: foreground pixels with a background 4-neighbor.
/// Positions outside the image count as background.
fn contour(mask: &ArrayView2<u8>) -> Vec<(usize, usize)> {
    let (h, w) = mask.dim();
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if mask[[i, j]] == 0 {
                continue;
            }
            let edge = i == 0
                || j == 0
                || i == h - 1
                || j == w - 1
                || mask[[i - 1, j]] == 0
                || mask[[i + 1, j]] == 0
                || mask[[i, j - 1]] == 0
                || mask[[i, j + 1]] == 0;
            if edge {
                out.push((i, j));
            }
        }
    }
    out
}

/// Disk dilation of a contour point set.
fn dilate(points: &[(usize, usize)], radius: usize, dims: (usize, usize)) -> BTreeSet<(usize, usize)> {
    let r = radius as isize;
    let mut offsets = Vec::new();
    for di in -r..=r {
        for dj in -r..=r {
            if di * di + dj * dj <= r * r {
                offsets.push((di, dj));
            }
        }
    }
    let (h, w) = (dims.0 as isize, dims.1 as isize);
    let mut set = BTreeSet::new();
    for &(i, j) in points {
        for &(di, dj) in &offsets {
            let ii = i as isize + di;
            let jj = j as isize + dj;
            if ii >= 0 && jj >= 0 && ii < h && jj < w {
                set.insert((ii as usize, jj as usize));
            }
        }
    }
    set
}

/// Harmonic mean of boundary precision and recall under a distance tolerance.
pub fn boundary_f_measure(
    pred: &ArrayView2<u8>,
    gt: &ArrayView2<u8>,
    cfg: &BoundaryMatchConfig,
) -> Result<f64> {
    check_shapes(pred, gt)?;
    let pc = contour(pred);
    let gc = contour(gt);
    match (pc.is_empty(), gc.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let dims = pred.dim();
    let gt_zone = dilate(&gc, cfg.tolerance_radius, dims);
    let pred_zone = dilate(&pc, cfg.tolerance_radius, dims);
    let matched_p = pc.iter().filter(|p| gt_zone.contains(p)).count();
    let matched_g = gc.iter().filter(|p| pred_zone.contains(p)).count();
    let precision = matched_p as f64 / pc.len() as f64;
    let recall = matched_g as f64 / gc.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Per-pixel precision/recall F-measure with an optional beta^2 weighting.
pub fn saliency_f_measure_beta(
    pred: &ArrayView2<u8>,
    gt: &ArrayView2<u8>,
    beta_squared: f64,
) -> Result<f64> {
    check_shapes(pred, gt)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fne = 0usize;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let p = p != 0;
        let g = g != 0;
        tp += usize::from(p && g);
        fp += usize::from(p && !g);
        fne += usize::from(!p && g);
    }
    if tp + fp == 0 && tp + fne == 0 {
        return Ok(1.0); // both masks empty
    }
    if tp + fp == 0 || tp + fne == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fne) as f64;
    let denom = beta_squared * precision + recall;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + beta_squared) * precision * recall / denom)
}

/// Pure harmonic mean of per-pixel precision and recall.
pub fn saliency_f_measure(pred: &ArrayView2<u8>, gt: &ArrayView2<u8>) -> Result<f64> {
    saliency_f_measure_beta(pred, gt, 1.0)
}

/// Mean absolute per-pixel error; `pred` may hold probabilities in [0, 1].
pub fn mean_absolute_error(pred: &ArrayView2<f64>, gt: &ArrayView2<u8>) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::invalid(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    if !pred.iter().all(|&v| (0.0..=1.0).contains(&v)) {
        return Err(Error::invalid("predictions must lie in [0, 1]"));
    }
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(gt.iter())
        .map(|(&p, &g)| (p - f64::from(g != 0)).abs())
        .sum();
    Ok(sum / n)
}

/// Predicted masks for one sequence, with optional raw probabilities.
#[derive(Debug, Clone)]
pub struct SequencePrediction {
    pub name: String,
    pub masks: Vec<Array2<u8>>,
    /// Raw probabilities per frame, used for MAE when present and requested.
    pub probabilities: Option<Vec<Array2<f64>>>,
}

/// Ground truth for one sequence; frames without annotation are `None`.
#[derive(Debug, Clone)]
pub struct SequenceGroundTruth {
    pub name: String,
    pub masks: Vec<Option<Array2<u8>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SequenceScores {
    pub name: String,
    pub frames_scored: usize,
    pub jaccard: f64,
    pub boundary_f: f64,
    pub f_measure: f64,
    pub mae: f64,
}

/// Dataset-level report. `jf` is always the exact arithmetic mean of
/// `j_mean` and `f_mean`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub protocol: String,
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf: f64,
    pub f_measure: f64,
    pub mae: f64,
    pub per_sequence: Vec<SequenceScores>,
}

impl EvalReport {
    fn from_sequences(protocol: &str, per_sequence: Vec<SequenceScores>) -> Self {
        let n = per_sequence.len() as f64;
        let j_mean = per_sequence.iter().map(|s| s.jaccard).sum::<f64>() / n;
        let f_mean = per_sequence.iter().map(|s| s.boundary_f).sum::<f64>() / n;
        let f_measure = per_sequence.iter().map(|s| s.f_measure).sum::<f64>() / n;
        let mae = per_sequence.iter().map(|s| s.mae).sum::<f64>() / n;
        EvalReport {
            protocol: protocol.to_string(),
            j_mean,
            f_mean,
            jf: (j_mean + f_mean) / 2.0,
            f_measure,
            mae,
            per_sequence,
        }
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<20} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "sequence", "J", "F", "F-meas", "MAE", "frames"
        ));
        for s in &self.per_sequence {
            out.push_str(&format!(
                "{:<20} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8}\n",
                s.name, s.jaccard, s.boundary_f, s.f_measure, s.mae, s.frames_scored
            ));
        }
        out.push_str(&format!(
            "{:<20} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            "mean", self.j_mean, self.f_mean, self.f_measure, self.mae
        ));
        out.push_str(&format!("J&F: {:.4}\n", self.jf));
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Skip the first and last annotated frame of every sequence.
    pub exclude_first_last: bool,
    /// Weighting of precision in the saliency F-measure.
    pub beta_squared: f64,
    /// Use raw probabilities (when present) for MAE instead of binary masks.
    pub probabilistic_mae: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { exclude_first_last: false, beta_squared: 1.0, probabilistic_mae: false }
    }
}

fn pair_sequences<'a>(
    preds: &'a [SequencePrediction],
    gts: &'a [SequenceGroundTruth],
) -> Result<Vec<(&'a SequencePrediction, &'a SequenceGroundTruth)>> {
    let missing: Vec<&str> = gts
        .iter()
        .filter(|g| !preds.iter().any(|p| p.name == g.name))
        .map(|g| g.name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "missing predictions for sequences: {}",
            missing.join(", ")
        )));
    }
    let mut pairs = Vec::new();
    for gt in gts {
        let pred = preds.iter().find(|p| p.name == gt.name).unwrap();
        pairs.push((pred, gt));
    }
    Ok(pairs)
}

fn score_sequence(
    pred: &SequencePrediction,
    gt: &SequenceGroundTruth,
    opts: &EvalOptions,
    require_dense: bool,
) -> Result<SequenceScores> {
    if pred.masks.len() != gt.masks.len() {
        return Err(Error::data(format!(
            "sequence {}: {} predicted frames but {} ground-truth frames",
            pred.name,
            pred.masks.len(),
            gt.masks.len()
        )));
    }
    if require_dense && gt.masks.iter().any(|m| m.is_none()) {
        return Err(Error::data(format!(
            "sequence {}: dense ground truth required",
            pred.name
        )));
    }
    let mut annotated: Vec<usize> = gt
        .masks
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.as_ref().map(|_| i))
        .collect();
    if opts.exclude_first_last && annotated.len() > 2 {
        annotated = annotated[1..annotated.len() - 1].to_vec();
    }
    if annotated.is_empty() {
        return Err(Error::data(format!(
            "sequence {}: no annotated frames to score",
            pred.name
        )));
    }
    let mut j = 0.0;
    let mut f = 0.0;
    let mut fm = 0.0;
    let mut mae = 0.0;
    for &i in &annotated {
        let gm = gt.masks[i].as_ref().unwrap();
        let pm = &pred.masks[i];
        let bcfg = BoundaryMatchConfig::for_image(gm.dim().0, gm.dim().1);
        j += region_jaccard(&pm.view(), &gm.view())?;
        f += boundary_f_measure(&pm.view(), &gm.view(), &bcfg)?;
        fm += saliency_f_measure_beta(&pm.view(), &gm.view(), opts.beta_squared)?;
        let prob_frame;
        let prob_view = if opts.probabilistic_mae {
            match &pred.probabilities {
                Some(pr) => pr[i].view(),
                None => {
                    prob_frame = pm.mapv(f64::from);
                    prob_frame.view()
                }
            }
        } else {
            prob_frame = pm.mapv(f64::from);
            prob_frame.view()
        };
        mae += mean_absolute_error(&prob_view, &gm.view())?;
    }
    let n = annotated.len() as f64;
    Ok(SequenceScores {
        name: pred.name.clone(),
        frames_scored: annotated.len(),
        jaccard: j / n,
        boundary_f: f / n,
        f_measure: fm / n,
        mae: mae / n,
    })
}

/// Dense-annotation protocol: per-sequence frame means, then the dataset
/// mean over sequences, with J&F as the mean of the two.
pub fn evaluate_davis(
    preds: &[SequencePrediction],
    gts: &[SequenceGroundTruth],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if gts.is_empty() {
        return Err(Error::data("no ground-truth sequences"));
    }
    let pairs = pair_sequences(preds, gts)?;
    let scores: Vec<SequenceScores> = pairs
        .par_iter()
        .map(|(p, g)| score_sequence(p, g, opts, true))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_sequences("davis", scores))
}

/// Sparse-annotation protocol: only annotated frames are scored.
pub fn evaluate_saliency(
    preds: &[SequencePrediction],
    gts: &[SequenceGroundTruth],
    annotated_frames_only: bool,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if gts.is_empty() {
        return Err(Error::data("no ground-truth sequences"));
    }
    if !annotated_frames_only {
        return evaluate_davis(preds, gts, opts).map(|mut r| {
            r.protocol = "saliency".to_string();
            r
        });
    }
    let pairs = pair_sequences(preds, gts)?;
    let scores: Vec<SequenceScores> = pairs
        .par_iter()
        .map(|(p, g)| score_sequence(p, g, opts, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_sequences("saliency", scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn sq(h: usize, w: usize, top: usize, left: usize, size: usize) -> Array2<u8> {
        Array2::from_shape_fn((h, w), |(i, j)| {
            u8::from(i >= top && i < top + size && j >= left && j < left + size)
        })
    }

    fn random_mask(h: usize, w: usize, r: &mut impl Rng) -> Array2<u8> {
        Array2::from_shape_fn((h, w), |_| u8::from(r.gen_bool(0.5)))
    }

    #[test]
    fn jaccard_basics() {
        let a = sq(8, 8, 1, 1, 4);
        assert_eq!(region_jaccard(&a.view(), &a.view()).unwrap(), 1.0);
        let b = sq(8, 8, 5, 5, 2);
        assert_eq!(region_jaccard(&a.view(), &b.view()).unwrap(), 0.0);
        // 4x4 grid: top half vs left half -> intersection 4, union 12
        let top = Array2::from_shape_fn((4, 4), |(i, _)| u8::from(i < 2));
        let left = Array2::from_shape_fn((4, 4), |(_, j)| u8::from(j < 2));
        let j = region_jaccard(&top.view(), &left.view()).unwrap();
        assert!((j - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn jaccard_both_empty_is_one() {
        let e = Array2::<u8>::zeros((5, 5));
        assert_eq!(region_jaccard(&e.view(), &e.view()).unwrap(), 1.0);
    }

    #[test]
    fn jaccard_is_symmetric() {
        let mut r = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = random_mask(8, 8, &mut r);
            let b = random_mask(8, 8, &mut r);
            assert_eq!(
                region_jaccard(&a.view(), &b.view()).unwrap(),
                region_jaccard(&b.view(), &a.view()).unwrap()
            );
        }
    }

    #[test]
    fn boundary_f_identical_masks() {
        let m = sq(16, 16, 4, 4, 6);
        let cfg = BoundaryMatchConfig::for_image(16, 16);
        assert_eq!(boundary_f_measure(&m.view(), &m.view(), &cfg).unwrap(), 1.0);
    }

    #[test]
    fn boundary_f_one_pixel_shift_within_tolerance() {
        let a = sq(20, 20, 5, 5, 8);
        let b = sq(20, 20, 5, 6, 8);
        let cfg = BoundaryMatchConfig::with_radius(1).unwrap();
        assert_eq!(boundary_f_measure(&a.view(), &b.view(), &cfg).unwrap(), 1.0);
    }

    #[test]
    fn boundary_f_far_contours_score_zero() {
        let a = sq(32, 32, 1, 1, 4);
        let b = sq(32, 32, 20, 20, 4);
        let cfg = BoundaryMatchConfig::with_radius(2).unwrap();
        assert_eq!(boundary_f_measure(&a.view(), &b.view(), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn boundary_f_empty_mask_conventions() {
        let e = Array2::<u8>::zeros((8, 8));
        let m = sq(8, 8, 2, 2, 3);
        let cfg = BoundaryMatchConfig::with_radius(1).unwrap();
        assert_eq!(boundary_f_measure(&e.view(), &e.view(), &cfg).unwrap(), 1.0);
        assert_eq!(boundary_f_measure(&e.view(), &m.view(), &cfg).unwrap(), 0.0);
        assert_eq!(boundary_f_measure(&m.view(), &e.view(), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn boundary_tolerance_default_scales_with_diagonal() {
        assert_eq!(BoundaryMatchConfig::for_image(8, 8).tolerance_radius, 1);
        let big = BoundaryMatchConfig::for_image(480, 854);
        assert_eq!(big.tolerance_radius, (0.008f64 * (480.0f64 * 480.0 + 854.0 * 854.0).sqrt()).ceil() as usize);
        assert!(BoundaryMatchConfig::with_radius(0).is_err());
    }

    #[test]
    fn saliency_f_basics() {
        let m = sq(8, 8, 2, 2, 4);
        assert_eq!(saliency_f_measure(&m.view(), &m.view()).unwrap(), 1.0);
        // predict everything, half the pixels are foreground: P=0.5, R=1
        let all = Array2::<u8>::ones((4, 4));
        let half = Array2::from_shape_fn((4, 4), |(i, _)| u8::from(i < 2));
        let f = saliency_f_measure(&all.view(), &half.view()).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        let other = sq(8, 8, 6, 6, 2);
        assert_eq!(saliency_f_measure(&m.view(), &other.view()).unwrap(), 0.0);
    }

    #[test]
    fn saliency_f_empty_conventions() {
        let e = Array2::<u8>::zeros((4, 4));
        let m = sq(4, 4, 0, 0, 2);
        assert_eq!(saliency_f_measure(&e.view(), &e.view()).unwrap(), 1.0);
        assert_eq!(saliency_f_measure(&e.view(), &m.view()).unwrap(), 0.0);
        assert_eq!(saliency_f_measure(&m.view(), &e.view()).unwrap(), 0.0);
    }

    #[test]
    fn flipping_false_positive_never_decreases_precision() {
        let mut r = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..100 {
            let mut pred = random_mask(8, 8, &mut r);
            let gt = random_mask(8, 8, &mut r);
            let fp: Vec<(usize, usize)> = pred
                .indexed_iter()
                .filter(|(idx, &v)| v != 0 && gt[*idx] == 0)
                .map(|(idx, _)| idx)
                .collect();
            if fp.is_empty() {
                continue;
            }
            let precision = |p: &Array2<u8>| -> f64 {
                let tp: usize = p
                    .indexed_iter()
                    .filter(|(idx, &v)| v != 0 && gt[*idx] != 0)
                    .count();
                let pp: usize = p.iter().filter(|&&v| v != 0).count();
                if pp == 0 {
                    1.0
                } else {
                    tp as f64 / pp as f64
                }
            };
            let before = precision(&pred);
            let pick = fp[r.gen_range(0..fp.len())];
            pred[pick] = 0;
            assert!(precision(&pred) >= before);
        }
    }

    #[test]
    fn metric_oracle_equivalence_on_random_masks() {
        let mut r = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_mask(8, 8, &mut r);
            let b = random_mask(8, 8, &mut r);
            // naive loop oracles
            let (mut inter, mut union, mut tp, mut fp, mut fne) = (0, 0, 0, 0, 0);
            let mut abs = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    let p = a[[i, j]] != 0;
                    let g = b[[i, j]] != 0;
                    if p && g { inter += 1; tp += 1; }
                    if p || g { union += 1; }
                    if p && !g { fp += 1; }
                    if !p && g { fne += 1; }
                    abs += (f64::from(a[[i, j]]) - f64::from(b[[i, j]])).abs();
                }
            }
            let oracle_j = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            let oracle_f = if tp + fp == 0 && tp + fne == 0 {
                1.0
            } else if tp + fp == 0 || tp + fne == 0 {
                0.0
            } else {
                let p = tp as f64 / (tp + fp) as f64;
                let rc = tp as f64 / (tp + fne) as f64;
                if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) }
            };
            let oracle_mae = abs / 64.0;
            assert!((region_jaccard(&a.view(), &b.view()).unwrap() - oracle_j).abs() <= 1e-12);
            assert!((saliency_f_measure(&a.view(), &b.view()).unwrap() - oracle_f).abs() <= 1e-12);
            let af = a.mapv(f64::from);
            assert!((mean_absolute_error(&af.view(), &b.view()).unwrap() - oracle_mae).abs() <= 1e-12);
        }
    }

    #[test]
    fn mae_basics() {
        let m = sq(4, 4, 0, 0, 2).mapv(f64::from);
        let gt = sq(4, 4, 0, 0, 2);
        assert_eq!(mean_absolute_error(&m.view(), &gt.view()).unwrap(), 0.0);
        let ones = Array2::<f64>::ones((4, 4));
        let zeros = Array2::<u8>::zeros((4, 4));
        assert_eq!(mean_absolute_error(&ones.view(), &zeros.view()).unwrap(), 1.0);
        let quarter = Array2::<f64>::from_elem((4, 4), 0.25);
        assert_eq!(mean_absolute_error(&quarter.view(), &zeros.view()).unwrap(), 0.25);
    }

    fn seq_pred(name: &str, masks: Vec<Array2<u8>>) -> SequencePrediction {
        SequencePrediction { name: name.into(), masks, probabilities: None }
    }

    fn seq_gt(name: &str, masks: Vec<Option<Array2<u8>>>) -> SequenceGroundTruth {
        SequenceGroundTruth { name: name.into(), masks }
    }

    #[test]
    fn davis_perfect_sequence_scores_one() {
        let m = sq(16, 16, 4, 4, 6);
        let preds = vec![seq_pred("a", vec![m.clone(), m.clone()])];
        let gts = vec![seq_gt("a", vec![Some(m.clone()), Some(m)])];
        let rep = evaluate_davis(&preds, &gts, &EvalOptions::default()).unwrap();
        assert_eq!(rep.j_mean, 1.0);
        assert_eq!(rep.f_mean, 1.0);
        assert_eq!(rep.jf, 1.0);
    }

    #[test]
    fn davis_averages_over_sequences_not_frames() {
        // sequence a: J = 0.4 per frame; sequence b (many frames): J = 0.8
        let full = Array2::<u8>::ones((1, 10));
        let p4 = Array2::from_shape_fn((1, 10), |(_, j)| u8::from(j < 4));
        let p8 = Array2::from_shape_fn((1, 10), |(_, j)| u8::from(j < 8));
        let preds = vec![
            seq_pred("a", vec![p4.clone()]),
            seq_pred("b", vec![p8.clone(), p8.clone(), p8.clone()]),
        ];
        let gts = vec![
            seq_gt("a", vec![Some(full.clone())]),
            seq_gt("b", vec![Some(full.clone()), Some(full.clone()), Some(full)]),
        ];
        let rep = evaluate_davis(&preds, &gts, &EvalOptions::default()).unwrap();
        assert!((rep.j_mean - 0.6).abs() < 1e-12, "sequence-level mean expected");
        assert_eq!(rep.jf, (rep.j_mean + rep.f_mean) / 2.0);
    }

    #[test]
    fn davis_reports_missing_sequences() {
        let m = sq(8, 8, 2, 2, 3);
        let preds = vec![seq_pred("a", vec![m.clone()])];
        let gts = vec![
            seq_gt("a", vec![Some(m.clone())]),
            seq_gt("missing_one", vec![Some(m)]),
        ];
        let err = evaluate_davis(&preds, &gts, &EvalOptions::default()).unwrap_err();
        assert!(err.to_string().contains("missing_one"));
    }

    #[test]
    fn saliency_scores_only_annotated_frames() {
        let m = sq(16, 16, 2, 2, 5);
        let mut gt_masks: Vec<Option<Array2<u8>>> = vec![None; 40];
        gt_masks[0] = Some(m.clone());
        gt_masks[20] = Some(m.clone());
        let preds = vec![seq_pred("s", vec![m.clone(); 40])];
        let gts = vec![seq_gt("s", gt_masks)];
        let rep = evaluate_saliency(&preds, &gts, true, &EvalOptions::default()).unwrap();
        assert_eq!(rep.per_sequence[0].frames_scored, 2);
        assert_eq!(rep.f_measure, 1.0);
        assert_eq!(rep.mae, 0.0);
    }

    #[test]
    fn saliency_errors_without_annotations() {
        let m = sq(8, 8, 1, 1, 3);
        let preds = vec![seq_pred("s", vec![m; 5])];
        let gts = vec![seq_gt("s", vec![None; 5])];
        assert!(evaluate_saliency(&preds, &gts, true, &EvalOptions::default()).is_err());
    }

    #[test]
    fn dense_saliency_equals_davis_frame_set() {
        let m = sq(12, 12, 3, 3, 4);
        let preds = vec![seq_pred("s", vec![m.clone(), m.clone()])];
        let gts = vec![seq_gt("s", vec![Some(m.clone()), Some(m)])];
        let a = evaluate_davis(&preds, &gts, &EvalOptions::default()).unwrap();
        let b = evaluate_saliency(&preds, &gts, true, &EvalOptions::default()).unwrap();
        assert_eq!(a.per_sequence[0].frames_scored, b.per_sequence[0].frames_scored);
        assert_eq!(a.f_measure, b.f_measure);
    }

    #[test]
    fn report_values_stay_in_unit_interval() {
        let mut r = ChaCha20Rng::seed_from_u64(4);
        let pm = random_mask(8, 8, &mut r);
        let gm = random_mask(8, 8, &mut r);
        let preds = vec![seq_pred("x", vec![pm])];
        let gts = vec![seq_gt("x", vec![Some(gm)])];
        let rep = evaluate_davis(&preds, &gts, &EvalOptions::default()).unwrap();
        for v in [rep.j_mean, rep.f_mean, rep.jf, rep.f_measure, rep.mae] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
