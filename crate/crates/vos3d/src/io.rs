//! Disk formats: frame directories, mask images, float array files,
//! dataset layouts and the checkpoint directory format.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3, Array4, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{build_model, Normalization, SegmentationModel};
use crate::nn::param::{named_buffers, named_buffers_mut, named_params, named_params_mut};
use crate::types::{MaskSequence, VideoTensor};

// ----------------------------------------------------------- image files ----

pub fn load_image_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = ImageReader::open(path)?.decode()?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::<f64>::zeros((h as usize, w as usize, 3));
    for (x, y, Rgb(px)) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = f64::from(px[c]);
        }
    }
    Ok(out)
}

pub fn save_image_rgb(path: &Path, image: &Array3<f64>) -> Result<()> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::invalid("expected a 3-channel image"));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for k in 0..3 {
            px.0[k] = image[[y as usize, x as usize, k]].clamp(0.0, 255.0).round() as u8;
        }
    }
    img.save(path)?;
    Ok(())
}

/// Read a binary mask image; any intensity >= 128 counts as foreground.
pub fn load_mask(path: &Path) -> Result<Array2<u8>> {
    let img = ImageReader::open(path)?.decode()?.to_luma8();
    let (w, h) = img.dimensions();
    let mut out = Array2::<u8>::zeros((h as usize, w as usize));
    for (x, y, Luma([v])) in img.enumerate_pixels() {
        out[[y as usize, x as usize]] = u8::from(*v >= 128);
    }
    Ok(out)
}

/// Write a binary mask as an 8-bit image with foreground 255.
pub fn save_mask(path: &Path, mask: &ndarray::ArrayView2<u8>) -> Result<()> {
    let (h, w) = mask.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        px.0[0] = if mask[[y as usize, x as usize]] != 0 { 255 } else { 0 };
    }
    img.save(path)?;
    Ok(())
}

/// Numbered image files of a directory, sorted by their numeric stem.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::data(format!("unreadable file name in {}", dir.display())))?;
        let num: u64 = stem.parse().map_err(|_| {
            Error::data(format!("frame name {stem:?} in {} is not numeric", dir.display()))
        })?;
        frames.push((num, path));
    }
    if frames.is_empty() {
        return Err(Error::data(format!("no frames found in {}", dir.display())));
    }
    frames.sort_by_key(|(n, _)| *n);
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

/// Load an entire frame directory as a raw 8-bit clip.
pub fn load_frame_dir(dir: &Path) -> Result<VideoTensor> {
    let paths = list_frames(dir)?;
    load_frames(&paths)
}

pub fn load_frames(paths: &[PathBuf]) -> Result<VideoTensor> {
    if paths.is_empty() {
        return Err(Error::invalid("no frame paths given"));
    }
    let first = load_image_rgb(&paths[0])?;
    let (h, w, _) = first.dim();
    let mut data = Array4::<f64>::zeros((paths.len(), h, w, 3));
    data.index_axis_mut(ndarray::Axis(0), 0).assign(&first);
    for (i, p) in paths.iter().enumerate().skip(1) {
        let img = load_image_rgb(p)?;
        if img.dim() != (h, w, 3) {
            return Err(Error::data(format!(
                "frame {} has size {:?}, expected {:?}",
                p.display(),
                img.dim(),
                (h, w, 3)
            )));
        }
        data.index_axis_mut(ndarray::Axis(0), i).assign(&img);
    }
    VideoTensor::new(data)
}

pub fn save_mask_sequence(dir: &Path, masks: &MaskSequence) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (t, _, _) = masks.dims();
    for i in 0..t {
        save_mask(&dir.join(format!("{i:05}.png")), &masks.frame(i))?;
    }
    Ok(())
}

// ------------------------------------------------------- float array files ----

/// Write a (H, W) float array as a standard binary array file (v1 format,
/// little-endian f32, C order).
pub fn write_npy_f32(path: &Path, data: &ndarray::ArrayView2<f64>) -> Result<()> {
    let (h, w) = data.dim();
    let header_dict = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': ({h}, {w}), }}");
    let mut header = header_dict.into_bytes();
    let base = 6 + 2 + 2; // magic + version + header length field
    let pad = (64 - (base + header.len() + 1) % 64) % 64;
    header.extend(std::iter::repeat_n(b' ', pad));
    header.push(b'\n');
    let mut f = fs::File::create(path)?;
    f.write_all(b"\x93NUMPY\x01\x00")?;
    f.write_all(&(header.len() as u16).to_le_bytes())?;
    f.write_all(&header)?;
    let mut buf = Vec::with_capacity(h * w * 4);
    for &v in data.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

/// Read a (H, W) little-endian f32 array file written by [`write_npy_f32`].
pub fn read_npy_f32(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(Error::data(format!("{} is not an array file", path.display())));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = std::str::from_utf8(&bytes[10..10 + header_len])
        .map_err(|_| Error::data("array header is not utf-8"))?;
    if !header.contains("'<f4'") || header.contains("True") {
        return Err(Error::data("unsupported array encoding"));
    }
    let shape_part = header
        .split("'shape':")
        .nth(1)
        .and_then(|s| s.split('(').nth(1))
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::data("array header lacks a shape"))?;
    let dims: Vec<usize> = shape_part
        .split(',')
        .filter_map(|t| t.trim().parse().ok())
        .collect();
    if dims.len() != 2 {
        return Err(Error::data("expected a 2-d array file"));
    }
    let (h, w) = (dims[0], dims[1]);
    let data = &bytes[10 + header_len..];
    if data.len() != h * w * 4 {
        return Err(Error::data("array payload length mismatch"));
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        out[[i / w, i % w]] = f64::from(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(out)
}

// -------------------------------------------------------- dataset layouts ----

#[derive(Debug, Clone)]
pub struct VideoSequenceRef {
    pub name: String,
    pub frames: Vec<PathBuf>,
    /// One entry per frame; `None` where the layout has no annotation.
    pub annotations: Vec<Option<PathBuf>>,
}

fn frame_stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Read a DAVIS-style layout: `JPEGImages/<seq>/` frames paired with
/// `Annotations/<seq>/` masks by file stem. With `allow_sparse`, missing
/// annotation frames are permitted.
pub fn read_video_layout(root: &Path, split: Option<&str>, allow_sparse: bool) -> Result<Vec<VideoSequenceRef>> {
    let images_root = root.join("JPEGImages");
    let ann_root = root.join("Annotations");
    if !images_root.is_dir() {
        return Err(Error::data(format!(
            "{} has no JPEGImages directory",
            root.display()
        )));
    }
    let names: Vec<String> = match split {
        Some(split) => {
            let list = root.join("ImageSets").join(format!("{split}.txt"));
            let text = fs::read_to_string(&list).map_err(|e| {
                Error::data(format!("cannot read split list {}: {e}", list.display()))
            })?;
            text.lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect()
        }
        None => {
            let mut names: Vec<String> = fs::read_dir(&images_root)?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .filter_map(|e| e.file_name().to_str().map(String::from))
                .collect();
            names.sort();
            names
        }
    };
    if names.is_empty() {
        return Err(Error::data("dataset has no sequences"));
    }
    let mut sequences = Vec::with_capacity(names.len());
    for name in names {
        let frames = list_frames(&images_root.join(&name))?;
        let ann_dir = ann_root.join(&name);
        let mut ann_by_stem: HashMap<String, PathBuf> = HashMap::new();
        if ann_dir.is_dir() {
            for p in list_frames(&ann_dir).unwrap_or_default() {
                ann_by_stem.insert(frame_stem(&p), p);
            }
        }
        let annotations: Vec<Option<PathBuf>> = frames
            .iter()
            .map(|f| ann_by_stem.get(&frame_stem(f)).cloned())
            .collect();
        if !allow_sparse && annotations.iter().any(|a| a.is_none()) {
            return Err(Error::data(format!(
                "sequence {name} is missing annotations; use the sparse layout to permit this"
            )));
        }
        sequences.push(VideoSequenceRef { name, frames, annotations });
    }
    Ok(sequences)
}

#[derive(Debug, Clone)]
pub struct ImageInstanceSample {
    pub name: String,
    pub image: PathBuf,
    pub instance_masks: Vec<PathBuf>,
}

/// Read an image-instances layout: `<root>/<sample>/image.png` plus
/// `<root>/<sample>/masks/*.png`, one file per object instance.
pub fn read_image_instances_layout(root: &Path) -> Result<Vec<ImageInstanceSample>> {
    let mut names: Vec<String> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(String::from))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::data(format!("{} has no samples", root.display())));
    }
    let mut samples = Vec::with_capacity(names.len());
    for name in names {
        let dir = root.join(&name);
        let image = ["image.png", "image.jpg"]
            .iter()
            .map(|f| dir.join(f))
            .find(|p| p.is_file())
            .ok_or_else(|| Error::data(format!("sample {name} has no image file")))?;
        let masks_dir = dir.join("masks");
        let mut instance_masks: Vec<PathBuf> = fs::read_dir(&masks_dir)
            .map_err(|_| Error::data(format!("sample {name} has no masks directory")))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
            .collect();
        instance_masks.sort();
        if instance_masks.is_empty() {
            return Err(Error::data(format!("sample {name} has no instance masks")));
        }
        samples.push(ImageInstanceSample { name, image, instance_masks });
    }
    Ok(samples)
}

// ------------------------------------------------------------ checkpoints ----

const WEIGHTS_MAGIC: &[u8; 8] = b"VOS3DWTS";
const WEIGHTS_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainingSnapshot {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
}

/// The text record sitting next to the weights archive.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub normalization: Normalization,
    pub epoch: usize,
    pub config_hash: u64,
    pub metrics: Option<TrainingSnapshot>,
    pub optimizer_state: Option<String>,
}

/// Stable hash of the architecture configs, checked when loading weights.
pub fn config_hash(encoder: &EncoderConfig, decoder: &DecoderConfig) -> u64 {
    let text = format!(
        "{}|{}",
        serde_json::to_string(encoder).unwrap(),
        serde_json::to_string(decoder).unwrap()
    );
    // FNV-1a
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Serialize named tensors into the weights archive format.
pub fn write_tensor_archive(path: &Path, entries: &[(String, &ArrayD<f64>)]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(WEIGHTS_MAGIC)?;
    f.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    f.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        f.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        f.write_all(name_bytes)?;
        let shape = tensor.shape();
        f.write_all(&[shape.len() as u8])?;
        for &d in shape {
            f.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(tensor.len() * 8);
        for &v in tensor.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_tensor_archive(path: &Path) -> Result<Vec<(String, ArrayD<f64>)>> {
    let mut f = fs::File::open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > bytes.len() {
            return Err(Error::data(format!("{} is truncated", path.display())));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };
    if take(&mut at, 8)? != WEIGHTS_MAGIC {
        return Err(Error::data(format!("{} is not a weights archive", path.display())));
    }
    let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return Err(Error::data(format!("unsupported weights version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut at, name_len)?)
            .map_err(|_| Error::data("weights entry name is not utf-8"))?
            .to_string();
        let ndim = take(&mut at, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(&mut at, n * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, ArrayD::from_shape_vec(ndarray::IxDyn(&shape), data).unwrap()));
    }
    Ok(out)
}

/// Checkpoint directory: `manifest.json` plus `weights.bin` (and optionally
/// an optimizer state archive). Files are written to temp names and renamed.
pub fn save_checkpoint(dir: &Path, model: &SegmentationModel, manifest: &CheckpointManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries: Vec<(String, &ArrayD<f64>)> = named_params(model)
        .into_iter()
        .map(|(n, p)| (n, &p.value))
        .collect();
    entries.extend(named_buffers(model));
    let tmp = dir.join("weights.bin.tmp");
    write_tensor_archive(&tmp, &entries)?;
    fs::rename(&tmp, dir.join("weights.bin"))?;
    let tmp = dir.join("manifest.json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(manifest).unwrap())?;
    fs::rename(&tmp, dir.join("manifest.json"))?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("malformed manifest {}: {e}", path.display())))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint format version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(SegmentationModel, CheckpointManifest)> {
    let manifest = load_manifest(dir)?;
    let expect_hash = config_hash(&manifest.encoder, &manifest.decoder);
    if manifest.config_hash != expect_hash {
        return Err(Error::data(
            "checkpoint config hash does not match its architecture section",
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let mut model = build_model(&manifest.encoder, &manifest.decoder, manifest.normalization, &mut rng)?;
    let tensors = read_tensor_archive(&dir.join("weights.bin"))?;
    let mut by_name: HashMap<String, ArrayD<f64>> = tensors.into_iter().collect();
    for (name, p) in named_params_mut(&mut model) {
        let t = by_name
            .remove(&name)
            .ok_or_else(|| Error::data(format!("checkpoint is missing tensor {name}")))?;
        if t.shape() != p.value.shape() {
            return Err(Error::data(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    for (name, b) in named_buffers_mut(&mut model) {
        let t = by_name
            .remove(&name)
            .ok_or_else(|| Error::data(format!("checkpoint is missing buffer {name}")))?;
        if t.shape() != b.shape() {
            return Err(Error::data(format!("buffer {name} has the wrong shape")));
        }
        *b = t;
    }
    if !by_name.is_empty() {
        let extra: Vec<String> = by_name.keys().take(3).cloned().collect();
        return Err(Error::data(format!(
            "checkpoint holds tensors unknown to this architecture: {}",
            extra.join(", ")
        )));
    }
    Ok((model, manifest))
}


// ---------------------------------------------------------------- resizing ----

/// Bilinear resize of an (H, W, C) image to `(out_h, out_w)`.
pub fn resize_image(image: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, c) = image.dim();
    if (h, w) == (out_h, out_w) {
        return image.clone();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Array3::from_shape_fn((out_h, out_w, c), |(i, j, ch)| {
        let y = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let x = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = y - y0 as f64;
        let fx = x - x0 as f64;
        let top = image[[y0, x0, ch]] + fx * (image[[y0, x1, ch]] - image[[y0, x0, ch]]);
        let bot = image[[y1, x0, ch]] + fx * (image[[y1, x1, ch]] - image[[y1, x0, ch]]);
        top + fy * (bot - top)
    })
}

/// Nearest-neighbor resize for masks.
pub fn resize_mask(mask: &Array2<u8>, out_h: usize, out_w: usize) -> Array2<u8> {
    let (h, w) = mask.dim();
    if (h, w) == (out_h, out_w) {
        return mask.clone();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        let y = (((i as f64 + 0.5) * sy - 0.5).round()).clamp(0.0, (h - 1) as f64) as usize;
        let x = (((j as f64 + 0.5) * sx - 0.5).round()).clamp(0.0, (w - 1) as f64) as usize;
        mask[[y, x]]
    })
}

#[cfg(test)]
mod layout_tests {
    use super::*;
    use ndarray::Array2;

    fn stage_video_layout(root: &Path, drop_annotation: bool) {
        let img = Array3::<f64>::from_elem((6, 6, 3), 128.0);
        let mask = Array2::<u8>::ones((6, 6));
        for t in 0..3 {
            let img_dir = root.join("JPEGImages/walk");
            let ann_dir = root.join("Annotations/walk");
            fs::create_dir_all(&img_dir).unwrap();
            fs::create_dir_all(&ann_dir).unwrap();
            save_image_rgb(&img_dir.join(format!("{t:05}.png")), &img).unwrap();
            if !(drop_annotation && t == 1) {
                save_mask(&ann_dir.join(format!("{t:05}.png")), &mask.view()).unwrap();
            }
        }
    }

    #[test]
    fn video_layout_pairs_frames_and_annotations() {
        let dir = tempfile::tempdir().unwrap();
        stage_video_layout(dir.path(), false);
        let seqs = read_video_layout(dir.path(), None, false).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].name, "walk");
        assert_eq!(seqs[0].frames.len(), 3);
        assert!(seqs[0].annotations.iter().all(|a| a.is_some()));
    }

    #[test]
    fn dense_layout_rejects_missing_annotations_sparse_allows() {
        let dir = tempfile::tempdir().unwrap();
        stage_video_layout(dir.path(), true);
        assert!(read_video_layout(dir.path(), None, false).is_err());
        let seqs = read_video_layout(dir.path(), None, true).unwrap();
        let present: Vec<bool> = seqs[0].annotations.iter().map(|a| a.is_some()).collect();
        assert_eq!(present, vec![true, false, true]);
    }

    #[test]
    fn split_lists_select_sequences() {
        let dir = tempfile::tempdir().unwrap();
        stage_video_layout(dir.path(), false);
        let sets = dir.path().join("ImageSets");
        fs::create_dir_all(&sets).unwrap();
        fs::write(sets.join("val.txt"), "walk\n").unwrap();
        let seqs = read_video_layout(dir.path(), Some("val"), false).unwrap();
        assert_eq!(seqs.len(), 1);
        assert!(read_video_layout(dir.path(), Some("train"), false).is_err());
    }

    #[test]
    fn image_instances_layout_lists_samples_and_masks() {
        let dir = tempfile::tempdir().unwrap();
        let sample = dir.path().join("chair");
        fs::create_dir_all(sample.join("masks")).unwrap();
        save_image_rgb(&sample.join("image.png"), &Array3::from_elem((5, 5, 3), 10.0)).unwrap();
        save_mask(&sample.join("masks/00.png"), &Array2::<u8>::ones((5, 5)).view()).unwrap();
        save_mask(&sample.join("masks/01.png"), &Array2::<u8>::zeros((5, 5)).view()).unwrap();
        let samples = read_image_instances_layout(dir.path()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].instance_masks.len(), 2);
        // a sample without masks is rejected
        let bare = dir.path().join("empty");
        fs::create_dir_all(&bare).unwrap();
        save_image_rgb(&bare.join("image.png"), &Array3::from_elem((5, 5, 3), 10.0)).unwrap();
        assert!(read_image_instances_layout(dir.path()).is_err());
    }
}
