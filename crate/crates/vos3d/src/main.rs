use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use vos3d::bench::bench_runtime;
use vos3d::config::{parse_config, serialize_config, LayoutKind, RunConfig};
use vos3d::io;
use vos3d::metrics::{
    evaluate_davis, evaluate_saliency, EvalOptions, SequenceGroundTruth, SequencePrediction,
};
use vos3d::model::build_model;
use vos3d::pipeline::{segment_video, ClipScheduleConfig};
use vos3d::synth::{synthesize_clip, SynthConfig};
use vos3d::train::{train_stage, ImageSample, TrainDataset, TrainStage, VideoSample};
use vos3d::types::{normalize_clip, VideoTensor};

#[derive(Parser)]
#[command(name = "vos3d", version, about = "Salient object segmentation in videos with 3D convolutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Images,
    Video,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Davis,
    Saliency,
}

#[derive(Subcommand)]
enum Command {
    /// Train one stage (images or video) from a run configuration
    Train(TrainArgs),
    /// Segment frame directories with a trained checkpoint
    Infer(InferArgs),
    /// Score predicted masks against ground truth
    Eval(EvalArgs),
    /// Measure parameter count and forward runtime
    Bench(BenchArgs),
    /// Preview synthetic clip generation from a static image
    SynthPreview(SynthPreviewArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    stage: Option<StageArg>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root (with JPEGImages/) or a single directory of frames
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    clip_length: usize,
    #[arg(long, default_value_t = 3)]
    overlap: usize,
    /// Online mode: overlap = clip length - 1
    #[arg(long)]
    dense: bool,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write per-frame probabilities as float array files
    #[arg(long)]
    save_probs: bool,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    protocol: ProtocolArg,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Path of the machine-readable report
    #[arg(long)]
    out: PathBuf,
    /// Probability maps directory (enables probabilistic MAE)
    #[arg(long)]
    probs: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    beta_squared: f64,
    #[arg(long)]
    exclude_first_last: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// WIDTHxHEIGHT, e.g. 854x480
    #[arg(long, default_value = "854x480")]
    resolution: String,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Optional JSON report path
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthPreviewArgs {
    #[arg(long)]
    image: PathBuf,
    /// Directory of per-instance binary masks
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn check_device() -> anyhow::Result<()> {
    if let Ok(device) = std::env::var("VOS3D_DEVICE") {
        if device != "cpu" {
            bail!("device {device:?} is not available; this build runs on cpu only");
        }
    }
    Ok(())
}

fn run() -> anyhow::Result<()> {
    check_device()?;
    match Cli::parse().command {
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::SynthPreview(args) => cmd_synth_preview(args),
    }
}

fn load_image_dataset(cfg: &RunConfig, root: &Path) -> anyhow::Result<TrainDataset> {
    if cfg.data.layout != LayoutKind::ImageInstances {
        bail!("the images stage needs data.layout = \"image-instances\"");
    }
    let mut samples = Vec::new();
    for sample in io::read_image_instances_layout(root)? {
        let mut image = io::load_image_rgb(&sample.image)?;
        let mut masks = sample
            .instance_masks
            .iter()
            .map(|p| io::load_mask(p))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some((h, w)) = cfg.data.resize {
            image = io::resize_image(&image, h, w);
            masks = masks.iter().map(|m| io::resize_mask(m, h, w)).collect();
        }
        samples.push(ImageSample { image, instance_masks: masks });
    }
    Ok(TrainDataset::Images { samples, synth: cfg.synth.clone() })
}

fn load_video_dataset(cfg: &RunConfig, root: &Path) -> anyhow::Result<TrainDataset> {
    if cfg.data.layout == LayoutKind::ImageInstances {
        bail!("the video stage needs data.layout = \"davis\"");
    }
    let sequences = io::read_video_layout(root, cfg.data.split.as_deref(), false)?;
    let mut videos = Vec::new();
    for seq in sequences {
        let mut frames = io::load_frames(&seq.frames)?;
        let mut gt_frames: Vec<ndarray::Array2<u8>> = seq
            .annotations
            .iter()
            .map(|a| io::load_mask(a.as_ref().expect("dense layout")))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some((h, w)) = cfg.data.resize {
            let resized: Vec<ndarray::Array3<f64>> = (0..frames.frames())
                .map(|t| {
                    io::resize_image(
                        &frames.data().index_axis(ndarray::Axis(0), t).to_owned(),
                        h,
                        w,
                    )
                })
                .collect();
            let mut data = ndarray::Array4::<f64>::zeros((resized.len(), h, w, 3));
            for (t, f) in resized.iter().enumerate() {
                data.index_axis_mut(ndarray::Axis(0), t).assign(f);
            }
            frames = VideoTensor::new(data)?;
            gt_frames = gt_frames.iter().map(|m| io::resize_mask(m, h, w)).collect();
        }
        let (t, h, w) = frames.dims();
        let mut gt = ndarray::Array3::<u8>::zeros((t, h, w));
        for (i, m) in gt_frames.iter().enumerate() {
            anyhow::ensure!(
                m.dim() == (h, w),
                "sequence {}: annotation size {:?} differs from frames {:?}",
                seq.name,
                m.dim(),
                (h, w)
            );
            gt.index_axis_mut(ndarray::Axis(0), i).assign(m);
        }
        videos.push(VideoSample { frames, gt: vos3d::types::MaskSequence::new(gt)? });
    }
    Ok(TrainDataset::Video(videos))
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = parse_config(&args.config)?;
    if let Some(stage) = args.stage {
        cfg.train.stage = match stage {
            StageArg::Images => TrainStage::Images,
            StageArg::Video => TrainStage::Video,
        };
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    let root = cfg
        .data
        .root
        .clone()
        .context("data.root is required for training")?;
    let dataset = match cfg.train.stage {
        TrainStage::Images => load_image_dataset(&cfg, &root)?,
        TrainStage::Video => load_video_dataset(&cfg, &root)?,
    };
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("config.toml"), serialize_config(&cfg))?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.train.seed);
    let mut model = build_model(
        &cfg.model.encoder,
        &cfg.model.decoder,
        cfg.model.normalization,
        &mut rng,
    )?;
    let outcome = train_stage(&mut model, &dataset, &cfg.train, Some(&args.out))?;
    println!(
        "trained {} epochs, final mean loss {:.6}",
        outcome.epoch_losses.len(),
        outcome.epoch_losses.last().unwrap()
    );
    println!("checkpoint: {}", args.out.join("final").display());
    Ok(())
}

fn cmd_infer(args: InferArgs) -> anyhow::Result<()> {
    let (model, manifest) = io::load_checkpoint(&args.checkpoint)?;
    let overlap = if args.dense { args.clip_length.saturating_sub(1) } else { args.overlap };
    let schedule = ClipScheduleConfig { clip_length: args.clip_length, overlap };
    schedule.validate()?;
    let sequences: Vec<(String, Vec<PathBuf>)> = if args.input.join("JPEGImages").is_dir() {
        io::read_video_layout(&args.input, args.split.as_deref(), true)?
            .into_iter()
            .map(|s| (s.name, s.frames))
            .collect()
    } else {
        let name = args
            .input
            .file_name()
            .and_then(|n| n.to_str())
            .context("input directory has no usable name")?
            .to_string();
        vec![(name, io::list_frames(&args.input)?)]
    };
    fs::create_dir_all(&args.out)?;
    let resolved = format!(
        "checkpoint = {:?}\nclip_length = {}\noverlap = {}\nthreshold = {}\n",
        args.checkpoint.display(),
        schedule.clip_length,
        schedule.overlap,
        args.threshold
    );
    fs::write(args.out.join("infer.toml"), resolved)?;
    for (name, frame_paths) in sequences {
        let raw = io::load_frames(&frame_paths)?;
        let clip = normalize_clip(&raw, manifest.normalization.mean, manifest.normalization.std)?;
        let (probs, masks) = segment_video(&model, &clip, &schedule, args.threshold)?;
        io::save_mask_sequence(&args.out.join(&name), &masks)?;
        if args.save_probs {
            let probs_dir = args.out.join("probs").join(&name);
            fs::create_dir_all(&probs_dir)?;
            for t in 0..probs.frames() {
                let frame = probs.data().index_axis(ndarray::Axis(0), t).to_owned();
                io::write_npy_f32(&probs_dir.join(format!("{t:05}.npy")), &frame.view())?;
            }
        }
        println!("{name}: {} frames segmented", masks.dims().0);
    }
    Ok(())
}

/// Mask directories under `root`, either DAVIS-style (`Annotations/<seq>`)
/// or a flat `<root>/<seq>` layout.
fn mask_root(root: &Path) -> PathBuf {
    let ann = root.join("Annotations");
    if ann.is_dir() {
        ann
    } else {
        root.to_path_buf()
    }
}

fn sequence_dirs(root: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).with_context(|| format!("cannot read {}", root.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            out.push((name, path));
        }
    }
    out.sort();
    anyhow::ensure!(!out.is_empty(), "{} holds no sequence directories", root.display());
    Ok(out)
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let gt_root = mask_root(&args.gt);
    let pred_root = mask_root(&args.pred);
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for (name, gt_dir) in sequence_dirs(&gt_root)? {
        let pred_dir = pred_root.join(&name);
        if !pred_dir.is_dir() {
            // recorded as missing; the metrics layer reports all names
            gts.push(SequenceGroundTruth { name, masks: vec![] });
            continue;
        }
        let pred_frames = io::list_frames(&pred_dir)?;
        let gt_by_stem: BTreeMap<String, PathBuf> = io::list_frames(&gt_dir)?
            .into_iter()
            .map(|p| (p.file_stem().unwrap().to_string_lossy().to_string(), p))
            .collect();
        let mut masks = Vec::with_capacity(pred_frames.len());
        let mut gt_masks = Vec::with_capacity(pred_frames.len());
        let mut probabilities = args.probs.as_ref().map(|_| Vec::new());
        for p in &pred_frames {
            let stem = p.file_stem().unwrap().to_string_lossy().to_string();
            masks.push(io::load_mask(p)?);
            gt_masks.push(match gt_by_stem.get(&stem) {
                Some(gp) => Some(io::load_mask(gp)?),
                None => None,
            });
            if let (Some(store), Some(probs_root)) = (probabilities.as_mut(), args.probs.as_ref()) {
                let npy = probs_root.join(&name).join(format!("{stem}.npy"));
                store.push(io::read_npy_f32(&npy)?);
            }
        }
        preds.push(SequencePrediction { name: name.clone(), masks, probabilities });
        gts.push(SequenceGroundTruth { name, masks: gt_masks });
    }
    let opts = EvalOptions {
        exclude_first_last: args.exclude_first_last,
        beta_squared: args.beta_squared,
        probabilistic_mae: args.probs.is_some(),
    };
    let report = match args.protocol {
        ProtocolArg::Davis => evaluate_davis(&preds, &gts, &opts)?,
        ProtocolArg::Saliency => evaluate_saliency(&preds, &gts, true, &opts)?,
    };
    print!("{}", report.render_table());
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!("report written to {}", args.out.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<()> {
    let (model, _) = io::load_checkpoint(&args.checkpoint)?;
    let (w, h) = args
        .resolution
        .split_once('x')
        .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
        .context("resolution must look like 854x480 (WIDTHxHEIGHT)")?;
    let report = bench_runtime(
        &model,
        (h, w),
        args.frames,
        args.warmup,
        args.iters,
        args.seed.unwrap_or(0),
    )?;
    print!("{}", report.render());
    if let Some(out) = args.out {
        fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn cmd_synth_preview(args: SynthPreviewArgs) -> anyhow::Result<()> {
    let image = io::load_image_rgb(&args.image)?;
    let mut mask_paths: Vec<PathBuf> = fs::read_dir(&args.masks)
        .with_context(|| format!("cannot read {}", args.masks.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    mask_paths.sort();
    anyhow::ensure!(!mask_paths.is_empty(), "no instance masks in {}", args.masks.display());
    let instance_masks = mask_paths
        .iter()
        .map(|p| io::load_mask(p))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = SynthConfig { clip_length: args.frames, ..Default::default() };
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed.unwrap_or(0));
    let (clip, masks) = synthesize_clip(&image, &instance_masks, &cfg, &mut rng)?;
    let frames_dir = args.out.join("frames");
    fs::create_dir_all(&frames_dir)?;
    for t in 0..clip.frames() {
        let frame = clip.data().index_axis(ndarray::Axis(0), t).to_owned();
        io::save_image_rgb(&frames_dir.join(format!("{t:05}.png")), &frame)?;
    }
    io::save_mask_sequence(&args.out.join("masks"), &masks)?;
    println!(
        "wrote {} synthetic frames and masks to {}",
        clip.frames(),
        args.out.display()
    );
    Ok(())
}
