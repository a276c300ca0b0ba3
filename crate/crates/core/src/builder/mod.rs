//! Pyramid construction.
//!
//! Each level blurs its source in time, subsamples to form the next Gaussian
//! level, then subtracts the blurred upsampling of that Gaussian level from
//! the source to form the Laplacian level (at the source's frame rate):
//!
//! ```text
//! G[i+1] = subsample(blur(G[i]))
//! L[i+1] = G[i] - blur(upsample(G[i+1]))
//! ```
//!
//! The cascade is streamed: every level consumes the previous level's
//! Gaussian frames as they are produced, so a full pyramid is built in one
//! pass over the input with bounded memory.

mod shard;
mod stage;

pub use shard::{
    build_sharded, build_sharded_source, build_sharded_with, concat_grids, parse_worklist, plan_shards, sharded_grids,
    Shard, ShardPlan, ShardedGrids, WorkItem, DAYS_PER_YEAR,
};
pub(crate) use shard::with_workers;

use crate::error::{Error, Result};
use crate::frame::{fill_missing, FrameSequence, FrameSource, SequenceKind};
use crate::kernels::kernel_for_stride;
use crate::pyramid::{Checksums, LaplacianEncoding, Pyramid, PyramidManifest, DEFAULT_CHUNK_SIZE};
use crate::schedule::LevelSchedule;
use crate::time::TimeGrid;
use stage::LevelStage;

/// Receives pyramid frames as they are produced. Within one level and kind,
/// slots arrive in increasing order.
pub trait PyramidSink {
    fn gaussian(&mut self, level: usize, slot: usize, frame: &[f32]) -> Result<()>;
    fn laplacian(&mut self, level: usize, slot: usize, frame: &[f32]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Round Gaussian frames to 8-bit values before they feed the next level
    /// and the Laplacian residual, so that 8-bit Gaussian storage still
    /// reconstructs exactly.
    pub quantize_gaussian: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub frames_in: usize,
    /// Largest number of frames held at once by each level's stage.
    pub peak_resident: Vec<usize>,
}

/// Grids of levels `0..=strides.len()` for a level-0 grid.
pub fn level_grids(grid: &TimeGrid, strides: &[u8]) -> Result<Vec<TimeGrid>> {
    let mut grids = vec![grid.clone()];
    for &s in strides {
        let phase = kernel_for_stride(s as u32)?.phase();
        let next = grids.last().unwrap().subsampled(s as usize, phase)?;
        grids.push(next);
    }
    Ok(grids)
}

fn push_cascade(
    stages: &mut [LevelStage],
    level: usize,
    frame: &[f32],
    sink: &mut dyn PyramidSink,
) -> Result<()> {
    let Some((stage, rest)) = stages.split_first_mut() else {
        return Ok(());
    };
    let produced = stage.push(frame, |slot, lap| sink.laplacian(level + 1, slot, lap))?;
    for k in produced {
        let g = stage.gauss_frame(k);
        sink.gaussian(level + 1, k, g)?;
        push_cascade(rest, level + 1, g, sink)?;
    }
    Ok(())
}

/// Streams `source` (on `grid`) through the cascade for `strides`, emitting
/// Gaussian levels `first_level+1..` and Laplacian levels `first_level+1..`.
/// Missing slots of `grid` are read as black frames.
pub fn stream_pyramid(
    source: &dyn FrameSource,
    grid: &TimeGrid,
    strides: &[u8],
    first_level: usize,
    options: &BuildOptions,
    sink: &mut dyn PyramidSink,
) -> Result<BuildStats> {
    let n = grid.count;
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    if source.len() != n {
        return Err(Error::GridMismatch(format!(
            "source has {} frames but grid has {n} slots",
            source.len()
        )));
    }
    let shape = source.shape();
    let counts = {
        let mut c = vec![n];
        for &s in strides {
            c.push(c.last().unwrap().div_ceil(s as usize));
        }
        c
    };
    let mut stages = strides
        .iter()
        .zip(&counts)
        .map(|(&s, &len)| LevelStage::new(s, len, shape.len(), options.quantize_gaussian))
        .collect::<Result<Vec<_>>>()?;
    let filled = fill_missing(source, &grid.missing);
    let mut buf = vec![0.0f32; shape.len()];
    for slot in 0..n {
        filled.read_frame(slot, &mut buf)?;
        push_cascade(&mut stages, first_level, &buf, sink)?;
    }
    debug_assert!(stages.iter().all(|s| s.is_complete()));
    Ok(BuildStats {
        frames_in: n,
        peak_resident: stages.iter().map(|s| s.peak_resident()).collect(),
    })
}

/// Collects streamed levels into memory.
pub struct MemorySink {
    first_level: usize,
    frame_len: usize,
    gaussian: Vec<Vec<f32>>,
    laplacian: Vec<Vec<f32>>,
}

impl MemorySink {
    pub fn new(first_level: usize, levels: usize, frame_len: usize) -> Self {
        MemorySink {
            first_level,
            frame_len,
            gaussian: vec![Vec::new(); levels],
            laplacian: vec![Vec::new(); levels],
        }
    }

    fn push(
        store: &mut [Vec<f32>],
        first: usize,
        len: usize,
        level: usize,
        slot: usize,
        frame: &[f32],
    ) -> Result<()> {
        let data = store
            .get_mut(level - first - 1)
            .ok_or_else(|| Error::InvalidArgument(format!("unexpected level {level}")))?;
        debug_assert_eq!(data.len(), slot * len);
        data.extend_from_slice(frame);
        Ok(())
    }

    /// Gaussian and Laplacian data per level, in level order.
    pub fn into_parts(self) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
        (self.gaussian, self.laplacian)
    }
}

impl PyramidSink for MemorySink {
    fn gaussian(&mut self, level: usize, slot: usize, frame: &[f32]) -> Result<()> {
        Self::push(&mut self.gaussian, self.first_level, self.frame_len, level, slot, frame)
    }

    fn laplacian(&mut self, level: usize, slot: usize, frame: &[f32]) -> Result<()> {
        Self::push(&mut self.laplacian, self.first_level, self.frame_len, level, slot, frame)
    }
}

/// One level: `(gaussian, laplacian)` where the Laplacian shares the
/// source's grid.
pub fn build_level(source: &FrameSequence, stride: u8) -> Result<(FrameSequence, FrameSequence)> {
    if source.is_empty() {
        return Err(Error::EmptySequence);
    }
    let shape = source.shape();
    let mut sink = MemorySink::new(0, 1, shape.len());
    stream_pyramid(source, &source.grid, &[stride], 0, &BuildOptions::default(), &mut sink)?;
    let (mut g, mut l) = sink.into_parts();
    let grids = level_grids(&source.grid, &[stride])?;
    let gaussian = FrameSequence::new(grids[1].clone(), SequenceKind::Gaussian, shape, g.remove(0))?;
    let laplacian =
        FrameSequence::new(source.grid.clone(), SequenceKind::Laplacian, shape, l.remove(0))?;
    Ok((gaussian, laplacian))
}

pub fn build_pyramid(input: &FrameSequence, schedule: &LevelSchedule) -> Result<Pyramid> {
    build_pyramid_with(input, schedule, &BuildOptions::default()).map(|(p, _)| p)
}

pub fn build_pyramid_with(
    input: &FrameSequence,
    schedule: &LevelSchedule,
    options: &BuildOptions,
) -> Result<(Pyramid, BuildStats)> {
    if input.grid.period != schedule.base_period {
        return Err(Error::GridMismatch(format!(
            "input period {} differs from schedule base period {}",
            input.grid.period, schedule.base_period
        )));
    }
    if input.is_empty() {
        return Err(Error::EmptySequence);
    }
    let shape = input.shape();
    let depth = schedule.depth();
    let grids = level_grids(&input.grid, &schedule.strides)?;
    let mut sink = MemorySink::new(0, depth, shape.len());
    let stats = if depth > 0 {
        stream_pyramid(input, &input.grid, &schedule.strides, 0, options, &mut sink)?
    } else {
        BuildStats {
            frames_in: input.len(),
            peak_resident: Vec::new(),
        }
    };
    let (g, l) = sink.into_parts();
    let gaussian = g
        .into_iter()
        .zip(&grids[1..])
        .map(|(d, grid)| FrameSequence::new(grid.clone(), SequenceKind::Gaussian, shape, d))
        .collect::<Result<Vec<_>>>()?;
    let laplacian = l
        .into_iter()
        .zip(&grids[..depth])
        .map(|(d, grid)| FrameSequence::new(grid.clone(), SequenceKind::Laplacian, shape, d))
        .collect::<Result<Vec<_>>>()?;
    let manifest = PyramidManifest {
        schedule: schedule.clone(),
        shape,
        laplacian: grids[..depth].to_vec(),
        gaussian: grids,
        laplacian_encoding: LaplacianEncoding::F32,
        chunk_size: DEFAULT_CHUNK_SIZE,
        input_stored: false,
        checksums: Checksums {
            gaussian: vec![None; depth + 1],
            laplacian: vec![None; depth],
        },
        shards: None,
    };
    Ok((
        Pyramid {
            manifest,
            gaussian,
            laplacian,
        },
        stats,
    ))
}
