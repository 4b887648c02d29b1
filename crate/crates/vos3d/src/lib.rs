//! Salient object segmentation in videos with a fully 3D encoder-decoder
//! network: channel-separated encoder, global-convolution and refinement
//! decoder blocks, clip-windowed inference, synthetic clip training, and the
//! standard segmentation metric suite.
//!
//! The runnable examples under `examples/` walk through each capability;
//! `examples/overfit_tiny.rs` shows the whole training loop end to end.

pub mod bench;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod probe;
pub mod synth;
pub mod train;
pub mod types;

pub use decoder::{decode, DecoderConfig};
pub use encoder::{build_encoder, encode, EncoderConfig};
pub use error::{Error, Result};
pub use metrics::{evaluate_davis, evaluate_saliency, EvalReport};
pub use model::{build_model, SegmentationModel};
pub use nn::count_parameters;
pub use pipeline::{binarize, plan_windows, segment_video, ClipScheduleConfig};
pub use synth::{synthesize_clip, SynthConfig};
pub use train::{train_stage, TrainConfig};
pub use types::{FeaturePyramid, MaskSequence, ProbabilityMaps, VideoTensor};
