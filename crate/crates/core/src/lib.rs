//! Temporal Laplacian pyramids and video spectrograms for long fixed-camera
//! frame sequences.

pub mod builder;
pub mod error;
pub mod frame;
pub mod fsutil;
pub mod kernels;
pub mod pyramid;
pub mod reconstruct;
pub mod schedule;
pub mod spectrogram;
pub mod store;
pub mod synth;
pub mod time;

pub use builder::{build_level, build_pyramid, build_sharded, plan_shards, BuildOptions, PyramidSink, ShardPlan};
pub use error::{Error, Result};
pub use frame::{Frame, FrameSequence, FrameSource, SequenceKind, Shape};
pub use kernels::{kernel_for_stride, subsample, temporal_blur, upsample_blur, Kernel};
pub use pyramid::{LaplacianEncoding, LevelReader, Pyramid, PyramidManifest};
pub use reconstruct::{reconstruct, smooth_upsample, DetailMask};
pub use schedule::{schedule_for, LevelSchedule};
pub use spectrogram::{compute_spectrogram, SpectrogramGrid, SpectrogramOptions};
pub use store::{read_pyramid, write_pyramid, Store, StoreLayout};
pub use synth::{generate, oracle_pyramid, timelapse_subsample, SceneSpec};
pub use time::{MissingRuns, Period, TimeGrid};
